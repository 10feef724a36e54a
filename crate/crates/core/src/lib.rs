//! Neural texture splatting on the CPU.
//!
//! Gaussian primitives carry local RGBA textures stored as rank-one
//! tri-plane factors. The factors come either from per-splat parameters or
//! from a global tri-plane neural field queried at each splat's center.
//! The crate provides a deterministic ray-marched renderer, hand-written
//! reverse-mode gradients, an Adam training loop, image metrics, file
//! formats and a command-line driver.

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments
)]

pub mod autodiff;
pub mod camera;
pub mod cli;
pub mod error;
pub mod geom;
pub mod image;
pub mod metrics;
pub mod neuralfield;
pub mod optim;
pub mod render;
pub mod scene;
pub mod scene_io;
pub mod texfield;

pub use camera::{Camera, RigidTransform, View};
pub use error::{Error, Result};
pub use geom::GaussianPrimitive;
pub use image::Image;
pub use render::{render_image, RenderConfig};
pub use scene::{ModelConfig, Scene};
pub use scene_io::Dataset;
