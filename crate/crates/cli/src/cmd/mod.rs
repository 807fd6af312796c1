mod bench;
mod build;
mod render;
mod serve;
mod synth;
mod train;

use std::path::Path;

use anyhow::{Context, Result};
use glod_core::Camera;

pub use bench::{bench, BenchArgs};
pub use build::{build, BuildArgs};
pub use render::{render, RenderArgs};
pub use serve::{serve, ServeArgs};
pub use synth::{synth, SynthArgs};
pub use train::{train, TrainArgs, TrainSummary};

/// Camera path file: a JSON array of camera records.
pub fn read_camera_path(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading camera path {}", path.display()))?;
    let cams: Vec<Camera> = serde_json::from_str(&text).with_context(|| format!("parsing camera path {}", path.display()))?;
    for (i, c) in cams.iter().enumerate() {
        c.validate().with_context(|| format!("camera {i} in {}", path.display()))?;
    }
    Ok(cams)
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// True if the file starts with the PLY magic line.
pub fn is_ply(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut head = [0u8; 4];
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let n = f.read(&mut head)?;
    Ok(n >= 3 && &head[..3] == b"ply" && (n == 3 || head[3] == b'\n' || head[3] == b'\r'))
}
