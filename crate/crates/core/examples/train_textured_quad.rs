//! Fits one splat to a checkerboard quad with and without a texture.

use ntsplat::metrics::evaluate;
use ntsplat::optim::{train, LearningRates, TrainConfig};
use ntsplat::scene_io::{make_synthetic_scene, SyntheticSpec};
use ntsplat::{ModelConfig, RenderConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ntsplat::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let quad = make_synthetic_scene(SyntheticSpec::TexturedQuad, 0)?;
    let config = TrainConfig {
        iterations,
        lr: LearningRates::desk(),
        ..TrainConfig::default()
    };
    for (label, model) in [
        ("untextured", ModelConfig::disabled()),
        ("textured", quad.model.clone()),
    ] {
        let mut scene = quad.scene.clone();
        scene.install_textures(model, &mut ChaCha8Rng::seed_from_u64(0))?;
        let (trained, _) = train(scene, &quad.dataset, &config)?;
        let report = evaluate(&trained, &quad.dataset.train, &RenderConfig::default())?;
        println!(
            "{label:>10}: PSNR {:.2} dB  SSIM {:.4}",
            report.mean_psnr, report.mean_ssim
        );
    }
    Ok(())
}
