use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Counters and loss of one training step. All counters are exact.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub iteration: u64,
    pub view: usize,
    pub loss: f64,
    pub l1: f64,
    pub ssim: f64,
    pub psnr: f64,
    /// Gaussians handed to the renderer.
    pub gaussians_rendered: usize,
    /// SPT records read from the store on cache misses.
    pub gaussians_loaded_from_store: usize,
    pub cache_hits: usize,
    pub cache_misses: usize,
    /// Store bytes read during the step.
    pub bytes_streamed: u64,
    /// Store bytes written during the step (evictions, flushes).
    pub bytes_written: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub densify: Option<DensifyMetrics>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DensifyMetrics {
    pub spawned: usize,
    pub respawned: usize,
    /// Dead leaves that could not be moved.
    pub respawn_skipped: usize,
    pub leaves: usize,
    pub nodes: usize,
    pub spts: usize,
    pub structural_violations: usize,
    pub monotonicity_violations: usize,
}

/// JSON-lines sink, one record per call.
pub struct JsonLines<W: Write> {
    out: W,
}

impl<W: Write> JsonLines<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
