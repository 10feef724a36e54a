//! Trains every ablation variant briefly on the two-sphere scene and prints
//! held-out PSNR.

use ntsplat::cli::{ablation_model, ABLATION_VARIANTS};
use ntsplat::metrics::evaluate;
use ntsplat::optim::{train, LearningRates, TrainConfig};
use ntsplat::scene_io::{make_synthetic_scene, SyntheticSpec};
use ntsplat::RenderConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ntsplat::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let syn = make_synthetic_scene(SyntheticSpec::TwoSpheres, 0)?;
    let config = TrainConfig {
        iterations,
        lr: LearningRates::desk(),
        ..TrainConfig::default()
    };
    println!("| variant | held-out PSNR |\n|---|---|");
    for variant in ABLATION_VARIANTS {
        let mut scene = syn.scene.clone();
        scene.install_textures(ablation_model(&syn.model, variant)?, &mut ChaCha8Rng::seed_from_u64(0))?;
        let (trained, _) = train(scene, &syn.dataset, &config)?;
        let psnr = evaluate(&trained, &syn.dataset.test, &RenderConfig::default())?.mean_psnr;
        println!("| {variant} | {psnr:.2} |");
    }
    Ok(())
}
