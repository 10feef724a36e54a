//! Compares analytic gradients to central differences on a small scene
//! covering every parameter class.

use ntsplat::autodiff::{finite_difference_check, sample_coordinates};
use ntsplat::optim::LossConfig;
use ntsplat::scene_io::gradcheck_scene;
use ntsplat::RenderConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ntsplat::Result<()> {
    let (scene, view) = gradcheck_scene(7)?;
    let coords = sample_coordinates(&scene.parameters(), 240, &mut ChaCha8Rng::seed_from_u64(7));
    let report = finite_difference_check(
        &scene,
        &view,
        &coords,
        1e-5,
        1e-4,
        &LossConfig::default(),
        &RenderConfig::default(),
    )?;
    println!("{}", report.table());
    println!(
        "{}",
        if report.passed {
            "all classes within tolerance"
        } else {
            "gradient check FAILED"
        }
    );
    Ok(())
}
