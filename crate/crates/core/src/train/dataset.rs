//! Posed training images.
//!
//! On disk a dataset is a directory holding, per view, `<name>.json` with a
//! [`Camera`] record and `<name>.png` (8-bit sRGB) or `<name>.glrf` (raw
//! linear `f32`). Views are ordered by file name.

use std::path::Path;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::render::{render, Image};
use crate::GaussianAttributes;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
}

impl Dataset {
    /// Pairs cameras with images; every image must match its camera's
    /// resolution and all views must share one size.
    pub fn new(cameras: Vec<Camera>, images: Vec<Image>) -> Result<Self> {
        if cameras.len() != images.len() {
            return Err(Error::InvalidDataset(format!("{} cameras but {} images", cameras.len(), images.len())));
        }
        for (i, (c, img)) in cameras.iter().zip(&images).enumerate() {
            c.validate().map_err(|e| Error::InvalidDataset(format!("view {i}: {e}")))?;
            if (img.width, img.height) != (c.width(), c.height()) {
                return Err(Error::InvalidDataset(format!(
                    "view {i}: image is {}x{} but the camera is {}x{}",
                    img.width,
                    img.height,
                    c.width(),
                    c.height()
                )));
            }
            if (img.width, img.height) != (images[0].width, images[0].height) {
                return Err(Error::InvalidDataset(format!(
                    "view {i}: image is {}x{}, view 0 is {}x{}",
                    img.width, img.height, images[0].width, images[0].height
                )));
            }
        }
        Ok(Self { cameras, images })
    }

    /// Ground-truth renders of `gs` from every camera.
    pub fn render_from(gs: &[GaussianAttributes], cameras: Vec<Camera>) -> Result<Self> {
        let images = cameras.iter().map(|c| render(gs, c)).collect::<Result<_>>()?;
        Self::new(cameras, images)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// Subset in the order of `ids`.
    pub fn subset(&self, ids: &[usize]) -> Self {
        Self {
            cameras: ids.iter().map(|&i| self.cameras[i].clone()).collect(),
            images: ids.iter().map(|&i| self.images[i].clone()).collect(),
        }
    }

    /// Every `every`-th view (starting at 0) held out for evaluation.
    /// Returns `(train, held_out)`; `every = 0` holds out nothing.
    pub fn split(&self, every: usize) -> (Self, Self) {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..self.len()).partition(|i| every > 0 && i % every == 0);
        (self.subset(&train), self.subset(&test))
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut poses: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        poses.sort();
        if poses.is_empty() {
            return Err(Error::InvalidDataset(format!("no *.json poses in {}", dir.display())));
        }
        let mut cameras = Vec::with_capacity(poses.len());
        let mut images = Vec::with_capacity(poses.len());
        for pose in poses {
            let text = std::fs::read_to_string(&pose).map_err(|e| Error::io(&pose, e))?;
            let cam: Camera = serde_json::from_str(&text).map_err(|e| Error::InvalidDataset(format!("{}: {e}", pose.display())))?;
            let raw = pose.with_extension("glrf");
            let png = pose.with_extension("png");
            let img = if raw.exists() {
                Image::load_raw(&raw)?
            } else if png.exists() {
                Image::load_png(&png)?
            } else {
                return Err(Error::InvalidDataset(format!("no image for {}", pose.display())));
            };
            cameras.push(cam);
            images.push(img);
        }
        Self::new(cameras, images)
    }

    /// Writes `view_NNNN.json` and an image per view; `raw` keeps exact
    /// linear values instead of 8-bit PNG.
    pub fn save_dir(&self, dir: impl AsRef<Path>, raw: bool) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, (c, img)) in self.cameras.iter().zip(&self.images).enumerate() {
            let base = dir.join(format!("view_{i:04}"));
            let json = base.with_extension("json");
            std::fs::write(&json, serde_json::to_string_pretty(c)?).map_err(|e| Error::io(&json, e))?;
            if raw {
                img.save_raw(base.with_extension("glrf"))?;
            } else {
                img.save_png(base.with_extension("png"))?;
            }
        }
        Ok(())
    }
}
