//! Decodes per-splat textures from a randomly initialized neural field and
//! shows how they depend on view direction and time.

use ntsplat::geom::Vec3;
use ntsplat::neuralfield::{decode_texture, FieldConfig};
use ntsplat::scene_io::randomize_textures;
use ntsplat::texfield::{texture_l1_norm, TextureMode};
use ntsplat::{GaussianPrimitive, ModelConfig, Scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ntsplat::Result<()> {
    let field = FieldConfig {
        time_dependent: true,
        ..FieldConfig::desk(6)
    };
    let mut scene = Scene::new(
        vec![GaussianPrimitive::isotropic(Vec3::zeros(), 0.3, 0.8, [0.5; 3])],
        [0.0; 3],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    scene.install_textures(ModelConfig::neural(TextureMode::Triplane3d, field), &mut rng)?;
    let fresh = decode_texture(scene.field.as_ref().unwrap(), &Vec3::zeros(), &Vec3::z(), Some(0.0), 6)?;
    println!("fresh field: texture L1 = {:.3e}", texture_l1_norm(&fresh));

    randomize_textures(&mut scene, 0.5, &mut rng);
    let field = scene.field.as_ref().unwrap();
    let center = Vec3::new(0.1, -0.2, 0.3);
    for (label, dir, time) in [
        ("front, t=0", Vec3::z(), Some(0.0)),
        ("side,  t=0", Vec3::x(), Some(0.0)),
        ("front, t=1", Vec3::z(), Some(1.0)),
    ] {
        let tex = decode_texture(field, &center, &dir, time, 6)?;
        println!("{label}: texture L1 = {:.4}", texture_l1_norm(&tex));
    }
    Ok(())
}
