use std::collections::HashSet;

use super::*;
use crate::gaussian::floats_per_gaussian;
use crate::hierarchy::validate;
use crate::synthetic::{orbit_views, point_cloud, procedural_scene};

fn toy(seed: u64, views: usize, init_iterations: u64) -> (Initialized, Dataset, Dataset, TrainConfig) {
    let scene = procedural_scene(seed, 3000);
    let cams = orbit_views([0.0; 3], 6.0, views, [32, 32], seed);
    let all = Dataset::render_from(&scene.all(), cams).unwrap();
    let (train, test) = all.split(8);
    let cfg = TrainConfig {
        seed,
        init_iterations,
        skybox_points: 64,
        densify_interval: 1_000_000,
        // The default (diagonal / 64)³ suits fine trained scenes; these
        // coarse initial Gaussians need a larger cut to form SPTs.
        size_threshold: Some(0.03),
        ..TrainConfig::default()
    };
    let pts = point_cloud(&scene.gaussians, 3, 0.02, seed);
    let init = initialize(&pts, &train, &cfg).unwrap();
    assert!(!init.hspt.spts.is_empty());
    (init, train, test, cfg)
}

fn trainer(seed: u64) -> Trainer {
    let (init, train, _, cfg) = toy(seed, 24, 0);
    Trainer::new(init, train, cfg, None).unwrap()
}

#[test]
fn full_miss_streams_every_prefix() {
    let mut t = trainer(1);
    let cam = t.views().cameras[3].clone();
    let set = cut_hspt(t.hspt(), t.hierarchy(), &cam, true);
    let per = 4 * floats_per_gaussian(t.store().sh_degree()) as u64;
    let want: u64 = set.per_spt.iter().map(|s| s.prefix_len as u64 * per).sum();
    let m = t.step_on(3).unwrap();
    assert_eq!(m.cache_hits, 0);
    assert_eq!(m.cache_misses, set.per_spt.len());
    assert_eq!(m.bytes_streamed, want);
    assert_eq!(m.gaussians_loaded_from_store, set.per_spt.iter().map(|s| s.prefix_len).sum::<usize>());
    assert_eq!(m.gaussians_rendered, set.len());
    assert_eq!(m.iteration, 1);
}

#[test]
fn warm_cache_loads_nothing() {
    let mut t = trainer(2);
    t.step_on(5).unwrap();
    let m = t.step_on(5).unwrap();
    assert_eq!(m.gaussians_loaded_from_store, 0);
    assert_eq!(m.bytes_streamed, 0);
    assert_eq!(m.cache_misses, 0);
    assert!(m.cache_hits > 0);
}

#[test]
fn nearby_views_hit_the_cache() {
    let mut t = trainer(3);
    let graph_next = {
        let c = &t.views().cameras;
        let p = c[0].position_vec();
        (1..c.len())
            .min_by(|&a, &b| (c[a].position_vec() - p).norm().total_cmp(&(c[b].position_vec() - p).norm()))
            .unwrap()
    };
    t.step_on(0).unwrap();
    let m = t.step_on(graph_next).unwrap();
    assert!(m.cache_hits > 0, "{m:?}");
}

#[test]
fn only_gathered_nodes_change() {
    let mut t = trainer(4);
    for v in [0, 1, 7] {
        t.step_on(v).unwrap();
    }
    let before = t.snapshot().unwrap();
    let opt_before = t.optimizer().clone();
    let cam = t.views().cameras[9].clone();
    // Expected gathered set: non-SPT cut nodes, cached selections for SPTs
    // the cache accepts, fresh selections otherwise.
    let set = cut_hspt(t.hspt(), t.hierarchy(), &cam, true);
    let mut gathered: HashSet<NodeId> = set
        .nodes
        .iter()
        .zip(&set.sources)
        .filter(|(_, s)| **s != Source::Spt)
        .map(|(n, _)| *n)
        .collect();
    let mut hits = 0;
    for sel in &set.per_spt {
        let spt = &t.hspt().spts[sel.spt_id as usize];
        match t
            .cache()
            .peek(sel.spt_id)
            .filter(|e| t.cache().config().accepts(e.cached_distance, sel.d_root))
        {
            Some(e) => {
                hits += 1;
                gathered.extend(cut_spt(spt, e.cached_distance).selected);
            }
            None => gathered.extend(sel.positions.iter().map(|&p| spt.records[p as usize].node)),
        }
    }
    let m = t.step_on(9).unwrap();
    assert_eq!(m.cache_hits, hits);
    assert_eq!(m.gaussians_rendered, gathered.len());
    let after = t.snapshot().unwrap();
    let opt = t.optimizer();
    let mut changed = 0;
    for n in 0..after.len() as NodeId {
        let same = after[n as usize] == before[n as usize]
            && opt.first_moment(n) == opt_before.first_moment(n)
            && opt.second_moment(n) == opt_before.second_moment(n)
            && opt.steps(n) == opt_before.steps(n);
        if gathered.contains(&n) {
            assert_eq!(opt.steps(n), opt_before.steps(n) + 1);
            changed += !same as usize;
        } else {
            assert!(same, "node {n} changed outside the gathered set");
        }
    }
    assert!(changed > 0);
}

#[test]
fn no_cache_writes_through() {
    let (init, train, _, mut cfg) = toy(5, 24, 0);
    cfg.use_cache = false;
    let mut t = Trainer::new(init, train, cfg, None).unwrap();
    let a = t.step_on(2).unwrap();
    let b = t.step_on(2).unwrap();
    assert!(t.cache().is_empty());
    assert_eq!(a.cache_hits + b.cache_hits, 0);
    assert_eq!(a.bytes_streamed, b.bytes_streamed);
    assert_eq!(a.bytes_written, a.bytes_streamed);
}

#[test]
fn flush_preserves_snapshot() {
    let mut t = trainer(6);
    for _ in 0..10 {
        t.step().unwrap();
    }
    let before = t.snapshot().unwrap();
    assert!(!t.cache().is_empty());
    t.flush_cache().unwrap();
    assert_eq!(t.snapshot().unwrap(), before);
}

#[test]
fn seeded_runs_are_bit_identical() {
    let run = || {
        let (init, train, _, mut cfg) = toy(7, 24, 20);
        cfg.total_iterations = 40;
        cfg.densify_interval = 15;
        cfg.cache.flush_interval = 25;
        let mut t = Trainer::new(init, train, cfg, None).unwrap();
        let mut out = JsonLines::new(Vec::new());
        t.run(|_, m| out.write(m)).unwrap();
        (out.into_inner(), t.snapshot().unwrap())
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(String::from_utf8(a.clone()).unwrap().lines().count(), 40);
    assert_eq!(a, b);
    assert_eq!(sa, sb);
}

#[test]
fn densify_without_work_is_a_no_op() {
    let (init, train, _, mut cfg) = toy(8, 16, 0);
    cfg.spawns_per_densify = Some(0);
    cfg.dead_opacity_threshold = 0.0;
    let mut t = Trainer::new(init, train, cfg, None).unwrap();
    let nodes = t.hierarchy().live_count();
    let m = t.densify().unwrap();
    assert_eq!((m.spawned, m.respawned), (0, 0));
    assert_eq!(t.hierarchy().live_count(), nodes);
    let first = t.hspt().clone();
    t.densify().unwrap();
    assert_eq!(t.hspt(), &first);
}

#[test]
fn one_dead_leaf_is_respawned() {
    let (mut init, train, _, mut cfg) = toy(9, 16, 0);
    cfg.spawns_per_densify = Some(0);
    let victim = init.hierarchy.subtree_leaves(init.hierarchy.scene_root())[10];
    init.hierarchy.node_mut(victim).opacity = 0.001;
    let mut t = Trainer::new(init, train, cfg, None).unwrap();
    let nodes = t.hierarchy().live_count();
    let m = t.densify().unwrap();
    assert_eq!(m.respawned, 1);
    assert_eq!(t.hierarchy().live_count(), nodes);
    assert!(t.optimizer().first_moment(victim).iter().all(|&x| x == 0.0));
}

#[test]
fn repeated_densify_keeps_structure_valid() {
    let (init, train, _, mut cfg) = toy(10, 16, 0);
    cfg.spawns_per_densify = Some(20);
    cfg.dead_opacity_threshold = 0.05;
    let mut t = Trainer::new(init, train, cfg, None).unwrap();
    let mut spawned = 0;
    for round in 0..50 {
        for _ in 0..3 {
            t.step().unwrap();
        }
        let before = t.hierarchy().live_count();
        let m = t.densify().unwrap();
        assert_eq!(m.structural_violations, 0, "round {round}");
        assert_eq!(t.hierarchy().live_count(), before + 2 * m.spawned);
        assert_eq!(validate(t.hierarchy(), &t.hspt().lod).structural_violations(), 0);
        assert_eq!(t.optimizer().len(), t.hierarchy().len());
        // Every live node has exactly one HSPT role.
        let roles = t.hspt().node_roles(t.hierarchy());
        for n in 0..t.hierarchy().len() as NodeId {
            assert_eq!(t.hierarchy().is_free(n), roles[n as usize] == NodeRole::Free);
        }
        spawned += m.spawned;
    }
    assert_eq!(spawned, 50 * 20);
}

#[test]
fn single_view_loss_decreases_by_window() {
    let scene = procedural_scene(11, 1200);
    let cam = orbit_views([0.0; 3], 5.0, 1, [32, 32], 11);
    let d = Dataset::render_from(&scene.all(), cam).unwrap();
    let cfg = TrainConfig {
        seed: 11,
        init_iterations: 0,
        skybox_points: 32,
        densify_interval: 1_000_000,
        ..TrainConfig::default()
    };
    let init = initialize(&point_cloud(&scene.gaussians, 2, 0.02, 11), &d, &cfg).unwrap();
    let mut t = Trainer::new(init, d, cfg, None).unwrap();
    let losses: Vec<f64> = (0..400).map(|_| t.step_on(0).unwrap().loss).collect();
    let windows: Vec<f64> = losses.chunks(100).map(|w| w.iter().sum::<f64>() / 100.0).collect();
    for w in windows.windows(2) {
        assert!(w[1] <= w[0], "{windows:?}");
    }
}

#[test]
fn zero_iteration_checkpoint_equals_initialization() {
    let (init, train, _, cfg) = toy(12, 16, 0);
    let expected = SceneStore::encode(&init.hierarchy, &init.hspt).unwrap();
    let t = Trainer::new(init, train.clone(), cfg.clone(), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.save_checkpoint(dir.path()).unwrap();
    assert_eq!(std::fs::read(dir.path().join(SCENE_FILE)).unwrap(), expected);
    let r = Trainer::resume(dir.path(), train, cfg, None).unwrap();
    assert_eq!(r.iteration(), 0);
    assert_eq!(r.optimizer(), t.optimizer());
}

#[test]
fn checkpoint_resume_keeps_state() {
    let (init, train, _, cfg) = toy(13, 16, 0);
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("work.glod");
    let mut t = Trainer::new(init, train.clone(), cfg.clone(), Some(store)).unwrap();
    for _ in 0..12 {
        t.step().unwrap();
    }
    let ckpt = dir.path().join("ckpt");
    t.save_checkpoint(&ckpt).unwrap();
    let r = Trainer::resume(&ckpt, train, cfg, None).unwrap();
    assert_eq!(r.iteration(), 12);
    assert_eq!(r.current_view(), t.current_view());
    assert_eq!(r.optimizer(), t.optimizer());
    assert_eq!(r.snapshot().unwrap(), t.snapshot().unwrap());
}

#[test]
fn rejects_mismatched_optimizer() {
    let (mut init, train, _, cfg) = toy(14, 16, 0);
    init.optimizer = OptimizerState::new(3, 1);
    assert!(Trainer::new(init, train, cfg, None).is_err());
}

#[test]
fn training_improves_held_out_quality() {
    let (init, train, test, mut cfg) = toy(15, 24, 0);
    cfg.total_iterations = 300;
    let mut t = Trainer::new(init, train, cfg, None).unwrap();
    let before = t.evaluate(&test).unwrap();
    t.run(|_, _| Ok(())).unwrap();
    let after = t.evaluate(&test).unwrap();
    assert!(after.psnr > before.psnr + 1.0, "{before:?} -> {after:?}");
}
