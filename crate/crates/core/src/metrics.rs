//! Image quality metrics: PSNR, windowed SSIM and the D-SSIM loss term
//! with its exact gradient.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5). Near the border the
//! window is truncated to the image and renormalized, so every pixel has
//! a score and images smaller than the window are still valid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::View;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::render::{render_image, RenderConfig};
use crate::scene::Scene;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const PSNR_CAP: f64 = 100.0;

/// `10·log10(1/MSE)` over values clamped to `[0, 1]`, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let n = a.data.len().max(1) as f64;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = x.clamp(0.0, 1.0) - y.clamp(0.0, 1.0);
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Normalized 1-D window taps `(source index, weight)` for each position.
struct Taps(Vec<Vec<(usize, f64)>>);

impl Taps {
    fn new(len: usize) -> Self {
        let half = (SSIM_WINDOW / 2) as isize;
        Taps(
            (0..len as isize)
                .map(|p| {
                    let mut taps: Vec<(usize, f64)> = (p - half..=p + half)
                        .filter(|q| *q >= 0 && *q < len as isize)
                        .map(|q| {
                            let d = (q - p) as f64;
                            (q as usize, (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
                        })
                        .collect();
                    let z: f64 = taps.iter().map(|t| t.1).sum();
                    taps.iter_mut().for_each(|t| t.1 /= z);
                    taps
                })
                .collect(),
        )
    }
}

struct Blur {
    width: usize,
    height: usize,
    tx: Taps,
    ty: Taps,
}

impl Blur {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            tx: Taps::new(width),
            ty: Taps::new(height),
        }
    }

    /// Windowed weighted mean at every pixel.
    fn apply(&self, src: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                tmp[r * w + c] = self.tx.0[c].iter().map(|&(q, k)| k * src[r * w + q]).sum();
            }
        }
        let mut out = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                out[r * w + c] = self.ty.0[r].iter().map(|&(q, k)| k * tmp[q * w + c]).sum();
            }
        }
        out
    }

    /// Transpose of [`Blur::apply`].
    fn apply_transpose(&self, src: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for r in 0..h {
            for &(q, k) in &self.ty.0[r] {
                for c in 0..w {
                    tmp[q * w + c] += k * src[r * w + c];
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                let g = tmp[r * w + c];
                for &(q, k) in &self.tx.0[c] {
                    out[r * w + q] += k * g;
                }
            }
        }
        out
    }
}

struct ChannelStats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    e_xx: Vec<f64>,
    e_yy: Vec<f64>,
    e_xy: Vec<f64>,
}

fn channel_stats(blur: &Blur, x: &[f64], y: &[f64]) -> ChannelStats {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    ChannelStats {
        mu_x: blur.apply(x),
        mu_y: blur.apply(y),
        e_xx: blur.apply(&xx),
        e_yy: blur.apply(&yy),
        e_xy: blur.apply(&xy),
    }
}

fn ssim_terms(s: &ChannelStats, p: usize) -> (f64, f64, f64, f64) {
    let (mx, my) = (s.mu_x[p], s.mu_y[p]);
    let a1 = 2.0 * mx * my + SSIM_C1;
    let a2 = 2.0 * (s.e_xy[p] - mx * my) + SSIM_C2;
    let b1 = mx * mx + my * my + SSIM_C1;
    let b2 = (s.e_xx[p] - mx * mx) + (s.e_yy[p] - my * my) + SSIM_C2;
    (a1, a2, b1, b2)
}

/// Mean SSIM, computed per channel and averaged over the three channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let blur = Blur::new(a.width, a.height);
    let n = a.pixel_count();
    if n == 0 {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for c in 0..3 {
        let stats = channel_stats(&blur, &a.channel(c), &b.channel(c));
        total += (0..n)
            .map(|p| {
                let (a1, a2, b1, b2) = ssim_terms(&stats, p);
                a1 * a2 / (b1 * b2)
            })
            .sum::<f64>()
            / n as f64;
    }
    Ok(total / 3.0)
}

/// `(1 − SSIM) / 2`.
pub fn dssim(a: &Image, b: &Image) -> Result<f64> {
    Ok((1.0 - ssim(a, b)?) / 2.0)
}

/// D-SSIM and its gradient with respect to `a` (interleaved like
/// `a.data`), through the windowed means, variances and covariance.
pub fn dssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    a.check_same_shape(b)?;
    let blur = Blur::new(a.width, a.height);
    let n = a.pixel_count();
    let mut grad = vec![0.0; a.data.len()];
    if n == 0 {
        return Ok((0.0, grad));
    }
    let scale = -1.0 / (2.0 * 3.0 * n as f64);
    let mut total = 0.0;
    for c in 0..3 {
        let x = a.channel(c);
        let y = b.channel(c);
        let stats = channel_stats(&blur, &x, &y);
        let mut c_mu = vec![0.0; n];
        let mut c_xx = vec![0.0; n];
        let mut c_xy = vec![0.0; n];
        let mut sum = 0.0;
        for p in 0..n {
            let (a1, a2, b1, b2) = ssim_terms(&stats, p);
            let (mx, my) = (stats.mu_x[p], stats.mu_y[p]);
            let s = a1 * a2 / (b1 * b2);
            sum += s;
            // Partials of S with Exx and Exy held fixed for dμx.
            c_mu[p] = scale * (2.0 * my * (a2 - a1) / (b1 * b2) - 2.0 * mx * s * (b2 - b1) / (b1 * b2));
            c_xx[p] = scale * (-s / b2);
            c_xy[p] = scale * (2.0 * a1 / (b1 * b2));
        }
        total += sum / n as f64;
        let g_mu = blur.apply_transpose(&c_mu);
        let g_xx = blur.apply_transpose(&c_xx);
        let g_xy = blur.apply_transpose(&c_xy);
        for p in 0..n {
            grad[3 * p + c] = g_mu[p] + 2.0 * x[p] * g_xx[p] + y[p] * g_xy[p];
        }
    }
    Ok(((1.0 - total / 3.0) / 2.0, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricReport {
    pub fn from_views(views: Vec<ViewMetrics>) -> Self {
        let n = views.len().max(1) as f64;
        let mean_psnr = views.iter().map(|v| v.psnr).sum::<f64>() / n;
        let mean_ssim = views.iter().map(|v| v.ssim).sum::<f64>() / n;
        Self {
            views,
            mean_psnr,
            mean_ssim,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Malformed(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Renders every view and scores the clamped render against its target.
pub fn evaluate(scene: &Scene, views: &[View], config: &RenderConfig) -> Result<MetricReport> {
    evaluate_with(scene, views, config, false)
}

/// Like [`evaluate`]; with `quantize` the render is first rounded to the
/// 8-bit values an exported image would hold.
pub fn evaluate_with(scene: &Scene, views: &[View], config: &RenderConfig, quantize: bool) -> Result<MetricReport> {
    let mut out = Vec::with_capacity(views.len());
    for v in views {
        let mut img = render_image(scene, &v.camera, config)?.image.clamped();
        if quantize {
            img.data
                .iter_mut()
                .for_each(|x| *x = crate::scene_io::quantize(*x) as f64 / 255.0);
        }
        out.push(ViewMetrics {
            name: v.name.clone(),
            psnr: psnr(&img, &v.target)?,
            ssim: ssim(&img, &v.target.clamped())?,
        });
    }
    Ok(MetricReport::from_views(out))
}
