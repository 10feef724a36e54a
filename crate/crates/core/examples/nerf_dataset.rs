//! Writes a synthetic scene as a `transforms_*.json` dataset and reads it
//! back.
//!
//! ```text
//! cargo run --example nerf_dataset -- dynamic_swing /tmp/swing
//! ```

use ntsplat::scene_io::{load_dataset, make_synthetic_scene_by_name, save_dataset, ImageFormat};

fn main() -> ntsplat::Result<()> {
    let mut args = std::env::args().skip(1);
    let spec = args.next().unwrap_or_else(|| "two_spheres".into());
    let dir = args
        .next()
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("ntsplat_{spec}")));

    let syn = make_synthetic_scene_by_name(&spec, 0)?;
    save_dataset(&syn.dataset, &dir, ImageFormat::Png)?;
    let data = load_dataset(&dir)?;
    println!("{} -> {}", spec, dir.display());
    println!(
        "{} train / {} test views, background {:?}",
        data.train.len(),
        data.test.len(),
        data.background
    );
    for view in data.all_views() {
        let c = &view.camera;
        let eye = c.eye();
        println!(
            "  {:<10} {}x{}  f={:.2}  eye=({:.2}, {:.2}, {:.2}){}",
            view.name,
            c.width,
            c.height,
            c.fx,
            eye.x,
            eye.y,
            eye.z,
            c.time.map(|t| format!("  t={t:.2}")).unwrap_or_default()
        );
    }
    Ok(())
}
