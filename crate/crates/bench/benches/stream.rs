use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use glod_bench::scene;
use glod_core::stream::{StreamConfig, Streamer};
use glod_core::synthetic::looping_path;
use glod_core::SceneStore;

fn gather_path(c: &mut Criterion) {
    let (h, hspt) = scene(100_000, 3);
    let store = SceneStore::in_memory(&h, &hspt).expect("scene encodes");
    let cams = looping_path([0.0; 3], 40.0, 10.0, 32, [320, 240]);
    let mut g = c.benchmark_group("gather_path");
    g.sample_size(10);
    for (label, use_cache) in [("cache", true), ("no_cache", false)] {
        let cfg = StreamConfig {
            use_cache,
            ..StreamConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(label), &cfg, |b, cfg| {
            b.iter(|| {
                let mut s = Streamer::new(&store, *cfg).expect("store is valid");
                cams.iter().map(|cam| s.gather(cam).expect("gather").1.rendered).sum::<usize>()
            })
        });
    }
    g.finish();
}

fn prefix_load(c: &mut Criterion) {
    let (h, hspt) = scene(100_000, 4);
    let store = SceneStore::in_memory(&h, &hspt).expect("scene encodes");
    let (id, len) = hspt
        .spts
        .iter()
        .enumerate()
        .map(|(i, s)| (i as u32, s.records.len()))
        .max_by_key(|x| x.1)
        .expect("scene has SPTs");
    c.bench_function("store/load_largest_prefix", |b| {
        b.iter(|| store.load_spt_prefix(id, len).expect("load").len())
    });
}

criterion_group!(benches, gather_path, prefix_load);
criterion_main!(benches);
