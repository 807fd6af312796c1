//! Out-of-core level-of-detail engine for 3D Gaussian scenes.
//!
//! The crate is organised bottom-up:
//!
//! - [`gaussian`], [`camera`], [`frustum`] and [`lod`] hold the math and
//!   domain types shared by everything else.
//! - [`hierarchy`] builds and mutates binary Gaussian hierarchies.
//! - [`spt`] flattens subtrees into sequential point trees, and [`hspt`]
//!   combines both into the two-stage view cut.
//! - [`store`] is the on-disk scene format with demand-paged prefix reads,
//!   [`cache`] the distance-ratio LRU write-back cache in front of it.
//! - [`render`] is a deterministic CPU splatter with an analytic backward
//!   pass, and [`train`] drives the full training loop.
//! - [`scheduler`] samples spatially coherent training views.
//! - [`protocol`] is the streaming wire format and server-side session
//!   logic used by the viewer endpoint; [`stream`] is the per-frame
//!   cut/gather loop shared by rendering and benchmarks.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod cache;
pub mod camera;
pub mod error;
pub mod frustum;
pub mod gaussian;
pub mod hierarchy;
pub mod hspt;
pub mod lod;
pub mod protocol;
pub mod render;
pub mod scheduler;
pub mod spt;
pub mod store;
pub mod stream;
pub mod synthetic;
pub mod train;

pub use cache::{CacheConfig, CacheEntry, SptCache};
pub use camera::Camera;
pub use error::{Error, Result};
pub use frustum::{sphere_intersects_frustum, Frustum, Plane};
pub use gaussian::{covariance_from, GaussianAttributes};
pub use hierarchy::{CutSet, Hierarchy, NodeId, NONE};
pub use hspt::{Hspt, RenderSet, Source};
pub use lod::{min_distance, LodConfig, LodMetric};
pub use spt::{Spt, SptCut, SptRecord};
pub use store::{AttributeBlock, MemoryReport, SceneStore};
pub use stream::{FrameStats, StreamConfig, Streamer};
pub use train::{TrainConfig, Trainer};
