//! Budget-controlled compaction of pixel-aligned 3D Gaussian splatting scenes.
//!
//! Given per-pixel Gaussians for `N` input views, the crate splits a global
//! primitive budget `K` across views by spectral detail, ranks primitives by
//! heuristic importance, and keeps exactly `K`. A CPU splatting renderer and
//! PSNR/SSIM metrics measure what the compaction costs.

pub mod allocator;
pub mod camera;
pub mod compactor;
pub mod error;
pub mod gaussian;
pub mod grid;
pub mod importance;
pub mod io;
pub mod quality;
pub mod renderer;
pub mod scene;
pub mod schedule;

pub use allocator::{make_allocation_plan, AllocationPlan, Budget};
pub use camera::Camera;
pub use compactor::{compact_scene, CompactionConfig, CompactionMode, CompactionReport, ScoreStrategy};
pub use error::{Error, Result};
pub use gaussian::{GaussianPrimitive, GaussianSet};
pub use grid::{BinaryMap, Grid, ImageView, NormalMap, ScalarMap};
pub use scene::{Scene, SceneView};
