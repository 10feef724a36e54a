//! PSNR and SSIM of progressively noisier copies of a gradient image.

use ntsplat::metrics::{psnr, ssim};
use ntsplat::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ntsplat::Result<()> {
    let (w, h) = (48, 32);
    let mut clean = Image::new(w, h);
    for r in 0..h {
        for c in 0..w {
            clean.set_pixel(r, c, [c as f64 / w as f64, r as f64 / h as f64, 0.5]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for sigma in [0.0, 0.01, 0.05, 0.1, 0.2] {
        let data = clean
            .data
            .iter()
            .map(|v| (v + sigma * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0))
            .collect();
        let noisy = Image::from_data(w, h, data)?;
        println!(
            "noise {sigma:<5} PSNR {:>7.2} dB  SSIM {:.4}",
            psnr(&clean, &noisy)?,
            ssim(&clean, &noisy)?
        );
    }
    Ok(())
}
