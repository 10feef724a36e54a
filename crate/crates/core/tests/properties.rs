#![allow(clippy::needless_range_loop)]

mod common;

use ntsplat::geom::{covariance, kernel_eval, world_to_local, GaussianPrimitive, Vec3};
use ntsplat::metrics::{dssim, psnr, ssim};
use ntsplat::render::{composite, trace_pixel, RenderConfig, SplatResponse};
use ntsplat::scene::Scene;
use ntsplat::texfield::{cp_plane_query, materialize_plane};
use ntsplat::Image;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{bilinear, oracle_composite, random_camera, random_image, random_primitives};

fn image_pair(seed: u64, w: usize, h: usize) -> (Image, Image) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (random_image(&mut rng, w, h), random_image(&mut rng, w, h))
}

fn quaternion() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-1.0..1.0f64).prop_filter("non-zero", |q| q.iter().map(|v| v * v).sum::<f64>() > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ssim_is_symmetric_and_dssim_bounded(seed in any::<u64>(), w in 1usize..20, h in 1usize..20) {
        let (a, b) = image_pair(seed, w, h);
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let d = dssim(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d), "{d}");
    }

    #[test]
    fn psnr_falls_as_noise_grows(seed in any::<u64>(), small in 0.001..0.05f64, factor in 1.5..4.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Image::filled(8, 8, [0.5; 3]);
        let signs: Vec<f64> = (0..base.data.len()).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let noisy = |amp: f64| {
            let data = base.data.iter().zip(&signs).map(|(v, s)| v + s * amp).collect();
            Image::from_data(8, 8, data).unwrap()
        };
        let near = psnr(&base, &noisy(small)).unwrap();
        let far = psnr(&base, &noisy(small * factor)).unwrap();
        prop_assert!(far < near, "{near} vs {far}");
        prop_assert!((psnr(&noisy(small), &base).unwrap() - near).abs() < 1e-12);
    }

    #[test]
    fn covariance_is_exactly_symmetric_and_positive(q in quaternion(), s in prop::array::uniform3(-3.0..1.0f64)) {
        let cov = covariance(q, Vec3::from(s)).unwrap();
        prop_assert_eq!(cov, cov.transpose());
        prop_assert!(cov.determinant() > 0.0);
        prop_assert!(cov.diagonal().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn kernel_matches_mahalanobis_form(
        q in quaternion(),
        s in prop::array::uniform3(-1.5..0.5f64),
        x in prop::array::uniform3(-1.0..1.0f64),
    ) {
        let mut p = GaussianPrimitive::isotropic(Vec3::new(0.1, -0.2, 0.3), 1.0, 0.5, [0.5; 3]);
        p.rotation = q;
        p.log_scale = Vec3::from(s);
        let point = Vec3::from(x);
        let got = kernel_eval(&world_to_local(&point, &p));
        let d = point - p.center;
        let sigma_inv = covariance(q, p.log_scale).unwrap().try_inverse().unwrap();
        let want = (-0.5 * d.dot(&(sigma_inv * d))).exp();
        prop_assert!((got - want).abs() <= 1e-10 * want.max(1e-300) + 1e-14, "{got} vs {want}");
    }

    #[test]
    fn cp_query_equals_bilinear_sample_of_materialized_plane(
        seed in any::<u64>(),
        tau in 2usize..9,
        channels in 1usize..4,
        fu in 0.0..1.0f64,
        fv in 0.0..1.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v0: Vec<f64> = (0..tau * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v1: Vec<f64> = (0..tau * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (u, v) = (fu * (tau - 1) as f64, fv * (tau - 1) as f64);
        let plane = materialize_plane(&v0, &v1, channels);
        let want = bilinear(&plane, tau, channels, u, v);
        let got = cp_plane_query(&v0, &v1, u, v, channels);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn compositing_weights_sum_to_at_most_one(seed in any::<u64>(), count in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = Scene::new(random_primitives(&mut rng, count, 0), [0.3, 0.3, 0.3]);
        let cam = random_camera(&mut rng, 6, 5);
        for (row, col) in [(0, 0), (2, 3), (4, 5)] {
            let trace = trace_pixel(&scene, &cam, &RenderConfig::default(), row, col).unwrap();
            let total: f64 = trace.weights.iter().sum();
            let final_t = *trace.transmittance.last().unwrap();
            prop_assert!(trace.weights.iter().all(|w| *w >= 0.0));
            prop_assert!(total <= 1.0 + 1e-12);
            prop_assert!((total + final_t - 1.0).abs() < 1e-12, "{total} + {final_t}");
            prop_assert!(trace.transmittance.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn composite_agrees_with_oracle(
        alphas in prop::collection::vec(0.0..0.99f64, 0..30),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let responses: Vec<SplatResponse> = alphas
            .iter()
            .enumerate()
            .map(|(i, &a)| SplatResponse {
                t_star: i as f64,
                base_color: [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
                tex_color: [rng.gen_range(-0.2..0.2), 0.0, 0.0],
                base_weight: a,
                tex_alpha: 0.0,
                effective_alpha: a,
            })
            .collect();
        let bg = [0.1, 0.2, 0.3];
        let got = composite(&responses, bg).unwrap();
        let (want, t) = oracle_composite(&responses, bg);
        prop_assert!((got.transmittance - t).abs() < 1e-15);
        for ch in 0..3 {
            prop_assert!((got.color[ch] - want[ch]).abs() < 1e-12);
        }
    }
}
