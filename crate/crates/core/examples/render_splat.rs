//! Renders one textured splat and writes it next to the untextured version.
//!
//! ```text
//! cargo run --example render_splat -- /tmp/splat
//! ```

use ntsplat::geom::Vec3;
use ntsplat::scene_io::{randomize_textures, write_image, ImageFormat};
use ntsplat::texfield::TextureMode;
use ntsplat::{render_image, Camera, GaussianPrimitive, ModelConfig, RenderConfig, Scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "render_splat_out".into());
    std::fs::create_dir_all(&out)?;

    let mut splat = GaussianPrimitive::isotropic(Vec3::zeros(), 0.4, 0.9, [0.8, 0.6, 0.3]);
    splat.log_scale.z -= 2.0;
    let mut scene = Scene::new(vec![splat], [0.05, 0.05, 0.1]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    scene.install_textures(ModelConfig::direct(TextureMode::Triplane3d, 8), &mut rng)?;

    let camera = Camera::look_at(Vec3::new(0.4, 0.3, 2.5), Vec3::zeros(), Vec3::y(), 96, 96, 0.9)?;
    let plain = render_image(&scene, &camera, &RenderConfig::default())?;
    randomize_textures(&mut scene, 0.6, &mut rng);
    let textured = render_image(&scene, &camera, &RenderConfig::default())?;

    for (name, img) in [("plain", &plain.image), ("textured", &textured.image)] {
        let path = std::path::Path::new(&out).join(format!("{name}.png"));
        write_image(img, &path, ImageFormat::Png)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
