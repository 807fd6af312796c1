use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use glod_cli::BenchReport;
use glod_core::hspt::cut_hspt;
use glod_core::protocol::{read_message, CameraPose, Message, ResidentSet, ServeScene};
use glod_core::store::read_ply;
use glod_core::synthetic::looping_path;
use glod_core::train::{initialize, Dataset, TrainConfig};
use glod_core::{Camera, SceneStore};

fn glod(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_glod"));
    c.args(args.iter().map(|a| a.as_ref()));
    c.env_remove("GLOD_THREADS");
    c
}

fn ok(mut c: Command) -> Output {
    let out = c.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn synth(dir: &Path, gaussians: usize, views: usize, res: u32) -> PathBuf {
    let out = dir.join("synth");
    ok(glod(&[
        &"synth",
        &"--out",
        &out,
        &"--gaussians",
        &gaussians.to_string(),
        &"--views",
        &views.to_string(),
        &"--resolution",
        &res.to_string(),
    ]));
    out
}

const TINY_PLY: &str =
    "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0.5\n";

#[test]
fn build_tiny_ply_and_rebuild_identically() {
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("tiny.ply");
    std::fs::write(&ply, TINY_PLY).unwrap();
    let a = dir.path().join("a.glod");
    let out = ok(glod(&[&"build", &ply, &"-o", &a]));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["gaussian_count"], 3);
    let store = SceneStore::open(&a).unwrap();
    let h = store.read_hierarchy().unwrap();
    assert_eq!(h.leaf_count(), 3);
    assert!(h.skybox_root().is_none());

    let b = dir.path().join("b.glod");
    ok(glod(&[&"build", &a, &"-o", &b]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn malformed_ply_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("bad.ply");
    std::fs::write(
        &ply,
        "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty wat y\nend_header\n",
    )
    .unwrap();
    let out = glod(&[&"build", &ply, &"-o", &dir.path().join("x.glod")]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5"), "{err}");
}

#[test]
fn missing_inputs_fail() {
    let out = glod(&[&"render", &"/nonexistent.glod", &"/nonexistent.json"]).output().unwrap();
    assert!(!out.status.success());
    let out = glod(&[&"render"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "clap usage errors exit with 2");
}

#[test]
fn render_two_poses() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path(), 600, 2, 16);
    let path = dir.path().join("two.json");
    let cams = looping_path([0.0; 3], 4.0, 1.0, 2, [40, 30]);
    std::fs::write(&path, serde_json::to_string(&cams).unwrap()).unwrap();
    let out_dir = dir.path().join("frames");
    let mut c = glod(&[&"render", &s.join("truth.glod"), &path, &"--out", &out_dir, &"--format", &"json"]);
    c.env("GLOD_THREADS", "2");
    let out = ok(c);
    let report: BenchReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.frames.len(), 2);
    assert_eq!(report.configs.len(), 1);
    assert_eq!(report.configs[0].config.threads, 2);
    assert_eq!(report.recompute(), report.configs);
    for i in 0..2 {
        assert!(out_dir.join(format!("frame_{i:04}.png")).exists());
    }
    let saved: BenchReport = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(saved, report);
}

#[test]
fn bad_thread_count_is_rejected() {
    let mut c = glod(&[&"bench", &"--synthetic", &"100", &"--frames", &"1"]);
    c.env("GLOD_THREADS", "zero");
    assert!(!c.output().unwrap().status.success());
}

#[test]
fn cache_reduces_streamed_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path(), 3000, 2, 16);
    let path = dir.path().join("loop.json");
    let cams = looping_path([0.0; 3], 2.5, 0.5, 40, [32, 24]);
    std::fs::write(&path, serde_json::to_string(&cams).unwrap()).unwrap();
    let bytes = |extra: &[&dyn AsRef<std::ffi::OsStr>]| {
        let mut args: Vec<&dyn AsRef<std::ffi::OsStr>> = vec![&"render", &"--format", &"json"];
        let scene = s.join("truth.glod");
        args.push(&scene);
        args.push(&path);
        args.extend_from_slice(extra);
        let out = ok(glod(&args));
        let r: BenchReport = serde_json::from_slice(&out.stdout).unwrap();
        r.configs[0].bytes_streamed
    };
    let with = bytes(&[]);
    let without = bytes(&[&"--no-cache"]);
    assert!(without > with, "{without} <= {with}");
}

#[test]
fn bench_report_keeps_raw_samples() {
    let out = ok(glod(&[
        &"bench",
        &"--synthetic",
        &"20000",
        &"--frames",
        &"3",
        &"--repeat",
        &"2",
        &"--configs",
        &"full,no-cache,bfs",
        &"--resolution",
        &"32",
        &"24",
        &"--format",
        &"json",
    ]));
    let r: BenchReport = serde_json::from_slice(&out.stdout).unwrap();
    let labels: Vec<_> = r.configs.iter().map(|c| c.config.label.as_str()).collect();
    assert_eq!(labels, ["full", "no-cache", "bfs"]);
    assert_eq!(r.frames.len(), 3 * 3 * 2);
    assert_eq!(r.recompute(), r.configs);
    assert!(r.configs[2].bfs_ms.is_some() && r.configs[0].bfs_ms.is_none());
    assert!(!r.configs[1].config.stream.use_cache);

    let table = ok(glod(&[
        &"bench",
        &"--synthetic",
        &"2000",
        &"--frames",
        &"2",
        &"--configs",
        &"full",
        &"--no-render",
    ]));
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.starts_with("config") && text.contains("# full: scene=city-block"), "{text}");
}

fn train_cmd(s: &Path, out: &Path, cfg: &Path, iters: u64) -> Command {
    glod(&[
        &"train",
        &s.join("points.ply"),
        &s.join("views"),
        &"--out",
        &out,
        &"--config",
        &cfg,
        &"--iterations",
        &iters.to_string(),
    ])
}

#[test]
fn train_zero_iterations_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path(), 600, 10, 24);
    let cfg_path = dir.path().join("cfg.json");
    let cfg = TrainConfig {
        init_iterations: 5,
        skybox_points: 16,
        size_threshold: Some(0.03),
        densify_interval: 4,
        ..TrainConfig::default()
    };
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();

    // Zero iterations: the final checkpoint is the initialization.
    let zero = dir.path().join("zero");
    ok(train_cmd(&s, &zero, &cfg_path, 0));
    let (train, _) = Dataset::load_dir(s.join("views")).unwrap().split(8);
    let init = initialize(&read_ply(s.join("points.ply")).unwrap(), &train, &cfg).unwrap();
    let want = SceneStore::encode(&init.hierarchy, &init.hspt).unwrap();
    assert_eq!(std::fs::read(zero.join("final/scene.glod")).unwrap(), want);
    assert_eq!(std::fs::read_to_string(zero.join("metrics.jsonl")).unwrap(), "");

    let runs: Vec<String> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("run{i}"));
            ok(train_cmd(&s, &out, &cfg_path, 9));
            std::fs::read_to_string(out.join("metrics.jsonl")).unwrap()
        })
        .collect();
    assert_eq!(runs[0].lines().count(), 9);
    assert!(runs[0].contains("\"densify\""));
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn train_rejects_mismatched_views() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path(), 300, 3, 16);
    let cam = Camera::look_at([0.0, -5.0, 1.0], [0.0; 3], [0.0, 0.0, 1.0], 1.0, [20, 16]);
    std::fs::write(s.join("views/view_0003.json"), serde_json::to_string(&cam).unwrap()).unwrap();
    glod_core::render::Image::new(20, 16).save_png(s.join("views/view_0003.png")).unwrap();
    let out = train_cmd(&s, &dir.path().join("t"), &s.join("missing.json"), 0).output().unwrap();
    assert!(!out.status.success());
    let out = glod(&[&"train", &s.join("points.ply"), &s.join("views"), &"--out", &dir.path().join("t")])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("invalid dataset"), "{err}");
}

#[test]
fn serve_session_replays_to_the_cut() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path(), 3000, 2, 16);
    let scene_path = s.join("truth.glod");
    let mut child = glod(&[&"serve", &scene_path, &"--port", &"0", &"--max-sessions", &"1", &"--no-timing"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    err.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("{line}")).to_string();

    let scene = ServeScene::open(&scene_path).unwrap();
    let mut c = TcpStream::connect(addr).unwrap();
    let mut client = ResidentSet::default();
    client.apply(&read_message(&mut c).unwrap().unwrap()).unwrap();
    for cam in looping_path([0.0; 3], 3.0, 0.8, 12, [48, 32]) {
        let pose = CameraPose::from_camera(&cam);
        c.write_all(&Message::CameraPose(pose).encode()).unwrap();
        loop {
            let m = read_message(&mut c).unwrap().unwrap();
            client.apply(&m).unwrap();
            if matches!(m, Message::Stats(_)) {
                break;
            }
        }
        let want = cut_hspt(&scene.hspt, &scene.hierarchy, &pose.to_camera(), true);
        assert_eq!(client.visible(&pose).len(), want.len());
        assert_eq!(client.last_stats.unwrap().rendered as usize, want.len());
    }
    drop(c);
    assert!(child.wait().unwrap().success());
    let mut rest = String::new();
    std::io::Read::read_to_string(&mut err, &mut rest).unwrap();
    assert!(rest.contains("12 poses received, 12 answered"), "{rest}");
}
