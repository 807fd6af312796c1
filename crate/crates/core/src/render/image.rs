use std::path::Path;

use crate::error::{Error, Result};

/// Linear RGB image, row-major, three `f32` per pixel, unclamped.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

const RAW_MAGIC: [u8; 4] = *b"GLRF";

fn srgb_encode(v: f32) -> u8 {
    let v = v.clamp(0.0, 1.0);
    let s = if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    };
    (s * 255.0).round() as u8
}

fn srgb_decode(b: u8) -> f32 {
    let s = b as f32 / 255.0;
    if s <= 0.040_45 {
        s / 12.92
    } else {
        ((s + 0.055) / 1.055).powf(2.4)
    }
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_f64(width: usize, height: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), width * height * 3);
        Self {
            width,
            height,
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_size(other));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn mse(&self, other: &Image) -> f64 {
        assert!(self.same_size(other));
        self.data.iter().zip(&other.data).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Peak signal-to-noise ratio for a peak value of 1.
    pub fn psnr(&self, other: &Image) -> f64 {
        -10.0 * self.mse(other).log10()
    }

    /// 8-bit sRGB PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| srgb_encode(v)).collect();
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer size matches");
        img.save(path.as_ref())?;
        Ok(())
    }

    /// Reads a PNG and converts it from sRGB to linear.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_rgb8();
        Ok(Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&b| srgb_decode(b)).collect(),
        })
    }

    /// `GLRF`, u32 width, u32 height, then little-endian `f32` RGB.
    pub fn to_raw(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 4);
        out.extend_from_slice(&RAW_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_raw(b: &[u8]) -> Result<Self> {
        if b.len() < 12 || b[..4] != RAW_MAGIC {
            return Err(Error::corrupt(0, "not a raw image dump"));
        }
        let w = u32::from_le_bytes(b[4..8].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        if b.len() != 12 + w * h * 12 {
            return Err(Error::corrupt(12, "raw image length does not match its size"));
        }
        Ok(Self {
            width: w,
            height: h,
            data: b[12..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        })
    }

    pub fn save_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_raw()).map_err(|e| Error::io(path, e))
    }

    pub fn load_raw(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_raw(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
