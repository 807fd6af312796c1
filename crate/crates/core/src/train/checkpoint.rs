//! Optimizer sidecar: `GLOA`, u32 version, u64 iteration, u32 node slots,
//! u32 width, then per-slot u32 step counts, first moments and second
//! moments as little-endian `f32`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::adam::OptimizerState;

pub const OPTIMIZER_MAGIC: [u8; 4] = *b"GLOA";
pub const OPTIMIZER_VERSION: u32 = 1;

pub const SCENE_FILE: &str = "scene.glod";
pub const OPTIMIZER_FILE: &str = "optimizer.gloa";
pub const STATE_FILE: &str = "state.json";

/// Loop position stored next to the scene and optimizer files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointState {
    pub iteration: u64,
    pub current_view: usize,
    pub extent: f64,
}

pub fn encode_optimizer(opt: &OptimizerState, iteration: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + opt.steps.len() * 4 + (opt.m.len() + opt.v.len()) * 4);
    out.extend_from_slice(&OPTIMIZER_MAGIC);
    out.extend_from_slice(&OPTIMIZER_VERSION.to_le_bytes());
    out.extend_from_slice(&iteration.to_le_bytes());
    out.extend_from_slice(&(opt.len() as u32).to_le_bytes());
    out.extend_from_slice(&(opt.width() as u32).to_le_bytes());
    for s in &opt.steps {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for x in opt.m.iter().chain(&opt.v) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn corrupt(offset: usize, reason: impl Into<String>) -> Error {
    Error::corrupt(offset as u64, reason)
}

pub fn decode_optimizer(b: &[u8]) -> Result<(OptimizerState, u64)> {
    if b.len() < 24 {
        return Err(corrupt(b.len(), "optimizer file shorter than its header"));
    }
    if b[..4] != OPTIMIZER_MAGIC {
        return Err(corrupt(0, "bad optimizer magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
    if u32_at(4) != OPTIMIZER_VERSION {
        return Err(corrupt(4, format!("unsupported optimizer version {}", u32_at(4))));
    }
    let iteration = u64::from_le_bytes(b[8..16].try_into().unwrap());
    let n = u32_at(16) as usize;
    let w = u32_at(20) as usize;
    let want = n
        .checked_mul(w)
        .and_then(|nw| nw.checked_mul(8))
        .and_then(|x| x.checked_add(24 + 4 * n))
        .ok_or_else(|| corrupt(16, "optimizer dimensions overflow"))?;
    if b.len() != want {
        return Err(corrupt(b.len().min(want), format!("expected {want} bytes, found {}", b.len())));
    }
    let steps = (0..n).map(|i| u32_at(24 + 4 * i)).collect();
    let base = 24 + 4 * n;
    let f = |i: usize| f32::from_le_bytes(b[base + 4 * i..base + 4 * i + 4].try_into().unwrap());
    let m = (0..n * w).map(f).collect();
    let v = (n * w..2 * n * w).map(f).collect();
    Ok((OptimizerState::from_parts(w, m, v, steps)?, iteration))
}

pub fn write_optimizer(path: impl AsRef<Path>, opt: &OptimizerState, iteration: u64) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_optimizer(opt, iteration)).map_err(|e| Error::io(path, e))
}

pub fn read_optimizer(path: impl AsRef<Path>) -> Result<(OptimizerState, u64)> {
    let path = path.as_ref();
    decode_optimizer(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let mut opt = OptimizerState::new(3, 1);
        opt.m[5] = 0.25;
        opt.v[40] = 2.0;
        opt.steps[2] = 9;
        let bytes = encode_optimizer(&opt, 77);
        assert_eq!(bytes.len(), 24 + 12 + 3 * 23 * 8);
        let (back, it) = decode_optimizer(&bytes).unwrap();
        assert_eq!((back, it), (opt, 77));

        assert!(decode_optimizer(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_optimizer(&bad).is_err());
        let mut neg = bytes;
        let at = 24 + 12 + 3 * 23 * 4;
        neg[at..at + 4].copy_from_slice(&(-1.0f32).to_le_bytes());
        assert!(decode_optimizer(&neg).is_err());
    }
}
