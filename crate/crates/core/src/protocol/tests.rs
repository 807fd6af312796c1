use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::camera::Camera;
use crate::error::Error;
use crate::gaussian::GaussianAttributes;
use crate::hierarchy::build_hierarchy;
use crate::hspt::{build_hspt, cut_hspt, default_size_threshold, Source};
use crate::lod::LodConfig;
use crate::store::SceneStore;
use crate::synthetic::{looping_path, random_leaves};

fn scene(seed: u64) -> ServeScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut leaves = random_leaves(&mut rng, 4000, 10.0);
    for g in &mut leaves {
        *g = g.clone().with_sh_degree(1);
        g.sh_rest[2] = 0.1;
    }
    let h = build_hierarchy(leaves).unwrap();
    let hspt = build_hspt(&h, default_size_threshold(&h) * 8.0, 16, &LodConfig::default()).unwrap();
    assert!(hspt.spts.len() > 10);
    ServeScene::new(SceneStore::in_memory(&h, &hspt).unwrap()).unwrap()
}

fn pose(eye: [f64; 3]) -> CameraPose {
    CameraPose::from_camera(&Camera::look_at(eye, [0.0; 3], [0.0, 0.0, 1.0], 1.2, [64, 48]))
}

fn sample_attrs(n: usize) -> WireAttributes {
    let gs: Vec<GaussianAttributes> = (0..n)
        .map(|i| GaussianAttributes::isotropic([i as f32, 1.0, 2.0], 0.5, 0.25, [0.1, 0.2, 0.3]).with_sh_degree(1))
        .collect();
    WireAttributes::from_gaussians(&gs)
}

#[test]
fn frames_round_trip_with_exact_lengths() {
    let msgs = [
        Message::CameraPose(pose([1.0, 2.0, 3.0])),
        Message::SptLoad {
            spt_id: 7,
            center: [1.0, -2.0, 0.5],
            keys: vec![9.0, 4.0, 1.5],
            attrs: sample_attrs(3),
        },
        Message::SptEvict(42),
        Message::UpperSet(sample_attrs(2)),
        Message::UpperSet(WireAttributes::default()),
        Message::Stats(Stats {
            rendered: 10,
            loaded: 3,
            bytes: 1 << 40,
            cut_ms: 1.25,
        }),
        Message::Error {
            code: ERR_MALFORMED,
            message: "bad".into(),
        },
    ];
    let mut stream = Vec::new();
    for m in &msgs {
        let bytes = m.encode();
        assert_eq!(bytes.len(), m.frame_len(), "{m:?}");
        let len = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
        assert_eq!(len, bytes.len() - FRAME_HEADER_BYTES);
        stream.extend(bytes);
    }
    assert_eq!(msgs[0].frame_len(), 5 + 44);
    assert_eq!(msgs[5].frame_len(), 5 + 20);
    assert_eq!(msgs[1].frame_len(), 5 + 8 + 12 + 3 * 4 + 3 * 92);
    assert_eq!(decode_stream(&stream).unwrap(), msgs);
}

#[test]
fn pose_layout_is_little_endian() {
    let p = CameraPose {
        position: [1.0, 0.0, 0.0],
        orientation: [1.0, 0.0, 0.0, 0.0],
        focal: [50.0, 50.0],
        resolution: [640, 480],
    };
    let b = Message::CameraPose(p).encode();
    assert_eq!(b[0], MSG_CAMERA_POSE);
    assert_eq!(&b[1..5], &44u32.to_le_bytes());
    assert_eq!(&b[5..9], &1.0f32.to_le_bytes());
    assert_eq!(&b[41..45], &640u32.to_le_bytes());
    assert_eq!(&b[45..49], &480u32.to_le_bytes());
}

#[test]
fn malformed_frames_are_rejected() {
    let good = Message::SptEvict(3).encode();
    assert!(matches!(read_message(&mut &good[..3]), Err(Error::Protocol(_))));
    assert!(matches!(read_message(&mut &good[..good.len() - 1]), Err(Error::Protocol(_))));
    let mut long = good.clone();
    long[1] = 5;
    long.push(0);
    assert!(matches!(read_message(&mut &long[..]), Err(Error::Protocol(_))));
    let mut unknown = good.clone();
    unknown[0] = 9;
    assert!(matches!(read_message(&mut &unknown[..]), Err(Error::Protocol(_))));
    let huge = [MSG_UPPER_SET, 0xff, 0xff, 0xff, 0xff];
    assert!(matches!(read_message(&mut &huge[..]), Err(Error::Protocol(_))));
    // UpperSet whose count disagrees with its payload.
    let mut upper = Message::UpperSet(sample_attrs(2)).encode();
    upper[5] = 3;
    assert!(matches!(read_message(&mut &upper[..]), Err(Error::Protocol(_))));
    let mut nan = Message::CameraPose(pose([1.0, 2.0, 3.0])).encode();
    nan[5..9].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(read_message(&mut &nan[..]), Err(Error::Protocol(_))));
    assert!(read_message(&mut &[][..]).unwrap().is_none());
}

/// Client state after each pose matches an independently computed cut.
fn check_replay(scene: &ServeScene, client: &ResidentSet, p: &CameraPose) {
    let cam = p.to_camera();
    let set = cut_hspt(&scene.hspt, &scene.hierarchy, &cam, true);
    let upper: Vec<GaussianAttributes> = set
        .nodes
        .iter()
        .zip(&set.sources)
        .filter(|(_, s)| **s != Source::Spt)
        .map(|(&n, _)| scene.hierarchy.node(n).clone())
        .collect();
    assert_eq!(client.upper, WireAttributes::from_gaussians(&upper));
    let want: Vec<_> = set.per_spt.iter().filter(|s| s.prefix_len > 0).collect();
    assert_eq!(
        client.spts.keys().copied().collect::<Vec<_>>(),
        want.iter().map(|s| s.spt_id).collect::<Vec<_>>()
    );
    for sel in want {
        let r = &client.spts[&sel.spt_id];
        assert_eq!(r.keys.len(), sel.prefix_len);
        let block = scene.store.load_spt_prefix(sel.spt_id, sel.prefix_len).unwrap();
        let gs: Vec<_> = (0..block.len()).map(|i| block.gaussian(i)).collect();
        assert_eq!(r.attrs, WireAttributes::from_gaussians(&gs));
    }
    // The client's own selection reproduces the cut exactly.
    let mut want_nodes: Vec<GaussianAttributes> = upper;
    for sel in &set.per_spt {
        let block = scene.store.load_spt_prefix(sel.spt_id, sel.prefix_len).unwrap();
        want_nodes.extend(sel.positions.iter().map(|&i| block.gaussian(i as usize)));
    }
    let vis = client.visible(p);
    assert_eq!(vis, WireAttributes::from_gaussians(&want_nodes));
    assert_eq!(vis.len(), set.len());
}

#[test]
fn replay_reconstructs_every_cut() {
    let scene = scene(1);
    let mut session = ServeSession::new(&scene, false).unwrap();
    let mut client = ResidentSet::default();
    client.apply(&hello()).unwrap();
    assert_eq!(client.protocol_version, Some(PROTOCOL_VERSION));
    let mut stats_sum = 0u64;
    let mut loads = 0;
    for cam in looping_path([0.0; 3], 9.0, 2.0, 40, [64, 48]) {
        let p = CameraPose::from_camera(&cam);
        let msgs = session.handle_pose(&p).unwrap();
        let Some(Message::Stats(s)) = msgs.last() else { panic!("no stats") };
        let sent: u64 = msgs[..msgs.len() - 1].iter().map(|m| m.encode().len() as u64).sum();
        assert_eq!(s.bytes, sent);
        stats_sum += s.rendered as u64;
        for m in &msgs {
            loads += matches!(m, Message::SptLoad { .. }) as usize;
            client.apply(m).unwrap();
        }
        check_replay(&scene, &client, &p);
    }
    assert!(loads > 0);
    assert_eq!(client.hud.rendered, stats_sum);
    assert_eq!(client.hud.poses, 40);
    assert_eq!(client.warnings, 0);
}

#[test]
fn repeated_pose_sends_only_stats() {
    let scene = scene(2);
    let mut session = ServeSession::new(&scene, true).unwrap();
    let p = pose([6.0, 5.0, 2.0]);
    let first = session.handle_pose(&p).unwrap();
    assert!(first.len() > 1);
    let second = session.handle_pose(&p).unwrap();
    assert_eq!(second.len(), 1);
    let Message::Stats(s) = second[0] else { panic!() };
    assert_eq!((s.loaded, s.bytes), (0, 0));
}

#[test]
fn far_pose_gets_coarse_upper_set_only() {
    let scene = scene(3);
    let mut session = ServeSession::new(&scene, false).unwrap();
    let msgs = session.handle_pose(&pose([5000.0, 0.0, 0.0])).unwrap();
    assert_eq!(msgs.len(), 2);
    let Message::UpperSet(a) = &msgs[0] else { panic!("{:?}", msgs[0]) };
    assert!(!a.is_empty() && a.len() <= 2);
    assert!(session.resident().is_empty());
}

#[test]
fn unknown_evict_is_tolerated() {
    let mut client = ResidentSet::default();
    client.apply(&Message::SptEvict(99)).unwrap();
    assert_eq!(client.warnings, 1);
    assert!(client.visible(&pose([1.0, 0.0, 0.0])).is_empty());
    assert!(client.apply(&Message::CameraPose(pose([1.0, 0.0, 0.0]))).is_err());
}

fn read_until_stats(s: &mut TcpStream) -> Vec<Message> {
    let mut out = Vec::new();
    loop {
        let m = read_message(s).unwrap().expect("server closed early");
        let done = matches!(m, Message::Stats(st) if st.cut_ms >= 0.0);
        out.push(m);
        if done {
            return out;
        }
    }
}

#[test]
fn tcp_session_converges_to_latest_pose() {
    let scene = scene(4);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::scope(|s| {
        let server = s.spawn(|| {
            let (stream, _) = listener.accept().unwrap();
            serve_connection(stream, &scene, true).unwrap()
        });
        let mut c = TcpStream::connect(addr).unwrap();
        let mut client = ResidentSet::default();
        client.apply(&read_message(&mut c).unwrap().unwrap()).unwrap();
        assert_eq!(client.protocol_version, Some(PROTOCOL_VERSION));

        let path = looping_path([0.0; 3], 9.0, 2.0, 60, [64, 48]);
        let poses: Vec<_> = path.iter().map(CameraPose::from_camera).collect();
        let mut burst = Vec::new();
        for p in &poses {
            burst.extend(Message::CameraPose(*p).encode());
        }
        c.write_all(&burst).unwrap();
        c.shutdown(std::net::Shutdown::Write).unwrap();
        let mut rest = Vec::new();
        c.read_to_end(&mut rest).unwrap();
        for m in decode_stream(&rest).unwrap() {
            client.apply(&m).unwrap();
        }
        let summary = server.join().unwrap();
        assert_eq!(summary.poses_received, 60);
        assert!(summary.poses_answered >= 1 && summary.poses_answered <= 60);
        assert_eq!(client.hud.poses, summary.poses_answered);
        check_replay(&scene, &client, poses.last().unwrap());
    });
}

#[test]
fn tcp_malformed_frame_closes_with_error() {
    let scene = scene(5);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::scope(|s| {
        let server = s.spawn(|| {
            let (stream, _) = listener.accept().unwrap();
            serve_connection(stream, &scene, false)
        });
        let mut c = TcpStream::connect(addr).unwrap();
        read_message(&mut c).unwrap().unwrap();
        write_message(&mut c, &Message::CameraPose(pose([7.0, 1.0, 1.0]))).unwrap();
        read_until_stats(&mut c);
        c.write_all(&[MSG_CAMERA_POSE, 3, 0, 0, 0, 1, 2, 3]).unwrap();
        let m = read_message(&mut c).unwrap().unwrap();
        assert!(matches!(m, Message::Error { code: ERR_MALFORMED, .. }), "{m:?}");
        assert!(server.join().unwrap().is_err());
        assert!(read_message(&mut c).map(|m| m.is_none()).unwrap_or(true));
    });
}

#[test]
fn server_cache_changes_reads_not_messages() {
    let mut scene = scene(6);
    let path = looping_path([0.0; 3], 9.0, 2.0, 80, [64, 48]);
    let mut run = |cache: Option<crate::cache::CacheConfig>| {
        scene.cache = cache;
        scene.store.reset_counters();
        let mut session = ServeSession::new(&scene, false).unwrap();
        let msgs: Vec<Message> = path
            .iter()
            .flat_map(|c| session.handle_pose(&CameraPose::from_camera(c)).unwrap())
            .collect();
        (msgs, scene.store.bytes_read())
    };
    let (plain, plain_bytes) = run(None);
    let (cached, cached_bytes) = run(Some(Default::default()));
    assert_eq!(plain, cached);
    assert!(cached_bytes < plain_bytes, "{cached_bytes} vs {plain_bytes}");
}
