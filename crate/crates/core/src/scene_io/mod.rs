//! Persistence and interchange: checkpoints, datasets, images and
//! procedural scenes.

mod checkpoint;
mod dataset;
mod image_io;
mod synthetic;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, save_checkpoint, scene_from_bytes, MAGIC, VERSION};
pub use dataset::{load_dataset, save_dataset, Dataset};
pub use image_io::{ppm_bytes, quantize, quantized_bytes, read_image, write_image, ImageFormat};
pub use synthetic::{
    checker_reference, gradcheck_scene, make_synthetic_scene, make_synthetic_scene_by_name, quad_checker,
    randomize_textures, swing_x, SyntheticScene, SyntheticSpec, CHECKER_DARK, CHECKER_LIGHT, QUAD_CELLS,
    QUAD_HALF_SIDE, SWING_AMPLITUDE, SWING_FRAMES,
};
