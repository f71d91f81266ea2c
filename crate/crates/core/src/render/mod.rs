//! Differentiable volume rendering of RGB-D frames from a signed distance
//! map, and the reconstruction losses built on it.

pub mod camera;
pub mod loss;
pub mod map;
pub mod ray;
pub mod scene;
pub mod voxel;

pub use camera::{CameraIntrinsics, RgbdFrame};
pub use loss::{frame_loss, reconstruction_loss, FrameLoss, LossBreakdown, LossContext, LossWeights};
pub use map::{MapGradient, MapModel, MapQuery, MapSample, Stencil};
pub use ray::{pixel_ray, render_image, render_pixel, sample_depths, sample_weight, PixelRender, RenderSettings};
pub use scene::{AnalyticScene, Primitive, Shape};
pub use voxel::VoxelMap;
