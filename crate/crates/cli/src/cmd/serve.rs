use std::net::TcpListener;
use std::path::PathBuf;

use anyhow::{Context, Result};
use glod_core::protocol::{serve as serve_on, ServeScene};
use glod_core::CacheConfig;

#[derive(Clone, Debug)]
pub struct ServeArgs {
    pub scene: PathBuf,
    pub bind: String,
    pub port: u16,
    /// Server-side SPT cache; `None` reads every load from the store.
    pub cache: Option<CacheConfig>,
    pub cull: bool,
    pub timing: bool,
    pub max_sessions: Option<usize>,
}

/// Serves until `max_sessions` sessions were accepted, or forever. The
/// bound address is announced on stderr as `listening on ADDR`.
pub fn serve(a: &ServeArgs) -> Result<()> {
    let mut scene = ServeScene::open(&a.scene).with_context(|| format!("opening scene {}", a.scene.display()))?;
    if let Some(c) = a.cache {
        c.validate()?;
    }
    scene.cache = a.cache;
    scene.cull = a.cull;
    let listener = TcpListener::bind((a.bind.as_str(), a.port)).with_context(|| format!("binding {}:{}", a.bind, a.port))?;
    eprintln!("listening on {}", listener.local_addr()?);
    serve_on(listener, &scene, a.timing, a.max_sessions, &|peer, r| {
        let who = peer.map_or("?".to_string(), |p| p.to_string());
        match r {
            Ok(s) => eprintln!("session {who} closed: {} poses received, {} answered", s.poses_received, s.poses_answered),
            Err(e) => eprintln!("session {who} failed: {e}"),
        }
    })?;
    Ok(())
}
