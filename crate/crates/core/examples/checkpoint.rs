//! Saves a neural-textured scene to a checkpoint and reloads it.

use ntsplat::scene_io::{load_checkpoint, make_synthetic_scene, save_checkpoint, SyntheticSpec};
use ntsplat::{render_image, RenderConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let syn = make_synthetic_scene(SyntheticSpec::TwoSpheres, 0)?;
    let mut scene = syn.scene.clone();
    scene.install_textures(syn.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;

    let dir = std::env::temp_dir().join("ntsplat_checkpoint_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("scene.ntsc");
    save_checkpoint(&scene, &path)?;
    let size = std::fs::metadata(&path)?.len();
    let back = load_checkpoint(&path)?;

    let cam = &syn.dataset.train[0].camera;
    let a = render_image(&scene, cam, &RenderConfig::default())?.image;
    let b = render_image(&back, cam, &RenderConfig::default())?.image;
    println!("{} splats, {size} bytes at {}", back.len(), path.display());
    println!("renders identical after reload: {}", a == b);
    Ok(())
}
