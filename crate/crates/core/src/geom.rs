//! Gaussian primitive parameterization, covariance construction, local
//! frames, kernel evaluation and ray/Gaussian contribution points.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Contribution points closer than this along the ray are pinned here.
pub const T_NEAR: f64 = 0.01;

/// Covariances whose condition number exceeds this are skipped.
pub const MAX_CONDITION: f64 = 1e12;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Anisotropic 3D Gaussian with unconstrained storage: log-scales,
/// opacity logit, and a raw quaternion normalized on use.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub center: Vec3,
    /// `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    /// `(degree + 1)^2` RGB coefficient triples.
    pub sh: Vec<[f64; 3]>,
}

impl GaussianPrimitive {
    /// Isotropic splat with a constant (degree-0) base color.
    pub fn isotropic(center: Vec3, sigma: f64, opacity: f64, color: [f64; 3]) -> Self {
        Self {
            center,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vec3::repeat(sigma.ln()),
            opacity_logit: logit(opacity),
            sh: vec![dc_from_color(color)],
        }
    }

    /// Raises or lowers the SH degree, keeping the shared coefficients.
    pub fn with_sh_degree(mut self, degree: usize) -> Self {
        self.sh.resize((degree + 1) * (degree + 1), [0.0; 3]);
        self
    }

    pub fn sh_degree(&self) -> usize {
        sh_degree_for(self.sh.len())
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_matrix(self.rotation)
    }

    /// `S⁻¹ Rᵀ`: maps world offsets from the center into the σ-normalized
    /// local frame.
    pub fn to_local_matrix(&self) -> Mat3 {
        to_local_matrix(&self.rotation_matrix(), &self.log_scale)
    }

    pub fn normalize_rotation(&mut self) {
        let n = quat_norm(self.rotation);
        if n > 0.0 && n.is_finite() {
            for c in &mut self.rotation {
                *c /= n;
            }
        } else {
            self.rotation = [1.0, 0.0, 0.0, 0.0];
        }
    }

    pub fn is_degenerate(&self) -> bool {
        condition_number(&self.log_scale) > MAX_CONDITION
    }

    pub fn is_finite(&self) -> bool {
        self.center.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh.iter().flatten().all(|v| v.is_finite())
    }

    /// Index of the axis with the smallest scale (first on ties).
    pub fn flattest_axis(&self) -> usize {
        let s = &self.log_scale;
        let mut best = 0;
        for a in 1..3 {
            if s[a] < s[best] {
                best = a;
            }
        }
        best
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// SH coefficient that produces `color` for every view direction.
pub fn dc_from_color(color: [f64; 3]) -> [f64; 3] {
    color.map(|c| (c - 0.5) / SH_C0)
}

pub fn sh_degree_for(coefficients: usize) -> usize {
    match coefficients {
        0 | 1 => 0,
        2..=4 => 1,
        5..=9 => 2,
        _ => 3,
    }
}

fn quat_norm(q: [f64; 4]) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Rotation matrix of `q / |q|`.
pub fn quat_to_matrix(q: [f64; 4]) -> Mat3 {
    let n = quat_norm(q);
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Adjoint of [`quat_to_matrix`] with respect to the raw (unnormalized)
/// quaternion.
pub fn quat_to_matrix_backward(q: [f64; 4], d_r: &Mat3) -> [f64; 4] {
    let n = quat_norm(q);
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let g = |r: usize, c: usize| d_r[(r, c)];
    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let dn = [dw, dx, dy, dz];
    let qn = [w, x, y, z];
    let dot: f64 = (0..4).map(|i| dn[i] * qn[i]).sum();
    [
        (dn[0] - qn[0] * dot) / n,
        (dn[1] - qn[1] * dot) / n,
        (dn[2] - qn[2] * dot) / n,
        (dn[3] - qn[3] * dot) / n,
    ]
}

pub(crate) fn to_local_matrix(rotation: &Mat3, log_scale: &Vec3) -> Mat3 {
    let mut a = rotation.transpose();
    for i in 0..3 {
        let inv = (-log_scale[i]).exp();
        for j in 0..3 {
            a[(i, j)] *= inv;
        }
    }
    a
}

fn condition_number(log_scale: &Vec3) -> f64 {
    let hi = log_scale.max();
    let lo = log_scale.min();
    (2.0 * (hi - lo)).exp()
}

/// `Σ = R S Sᵀ Rᵀ`, built entry-wise so that `Σ == Σᵀ` exactly.
pub fn covariance(rotation: [f64; 4], log_scale: Vec3) -> Result<Mat3> {
    if rotation.iter().any(|v| !v.is_finite()) || log_scale.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "covariance requires finite rotation and log-scale".into(),
        ));
    }
    if quat_norm(rotation) == 0.0 {
        return Err(Error::InvalidParameter("zero quaternion".into()));
    }
    let r = quat_to_matrix(rotation);
    let s2 = log_scale.map(|l| (2.0 * l).exp());
    let mut cov = Mat3::zeros();
    for i in 0..3 {
        for j in i..3 {
            let v: f64 = (0..3).map(|k| r[(i, k)] * s2[k] * r[(j, k)]).sum();
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// `S⁻¹ Rᵀ (x − μ)`.
pub fn world_to_local(point: &Vec3, primitive: &GaussianPrimitive) -> Vec3 {
    primitive.to_local_matrix() * (point - primitive.center)
}

/// Unnormalized Gaussian kernel `exp(−½‖x‖²)` of a local-frame point.
#[inline]
pub fn kernel_eval(local_point: &Vec3) -> f64 {
    (-0.5 * local_point.norm_squared()).exp()
}

/// Camera ray for one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    /// `(row, col)`.
    pub pixel: (usize, usize),
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vec3, direction: Vec3, pixel: (usize, usize)) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
            pixel,
        }
    }
}

/// Point of maximal Gaussian response along a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContributionPoint {
    pub t_star: f64,
    pub point: Vec3,
    pub local: Vec3,
    pub response: f64,
    /// `t*` fell below the near bound and was pinned to it.
    pub near_clamped: bool,
}

/// `t* = dᵀΣ⁻¹(μ−o) / dᵀΣ⁻¹d` clamped to `[T_NEAR, ∞)`; returns `None` for
/// degenerate covariances.
pub fn ray_contribution_point(ray: &Ray, primitive: &GaussianPrimitive) -> Option<ContributionPoint> {
    if primitive.is_degenerate() {
        return None;
    }
    let a = primitive.to_local_matrix();
    let o_l = a * (ray.origin - primitive.center);
    let d_l = a * ray.direction;
    Some(contribution_in_local(ray, &o_l, &d_l, T_NEAR))
}

pub(crate) fn contribution_in_local(ray: &Ray, o_l: &Vec3, d_l: &Vec3, t_near: f64) -> ContributionPoint {
    let t_free = -o_l.dot(d_l) / d_l.norm_squared();
    let near_clamped = !(t_free >= t_near);
    let t_star = if near_clamped { t_near } else { t_free };
    let local = o_l + d_l * t_star;
    ContributionPoint {
        t_star,
        point: ray.origin + ray.direction * t_star,
        local,
        response: kernel_eval(&local),
        near_clamped,
    }
}

/// Adjoint of the local contribution point `o_l + t*(o_l, d_l)·d_l` with
/// respect to `(o_l, d_l)`. A clamped `t*` is constant.
pub(crate) fn contribution_backward(o_l: &Vec3, d_l: &Vec3, cp: &ContributionPoint, d_local: &Vec3) -> (Vec3, Vec3) {
    let mut d_o = *d_local;
    let mut d_d = d_local * cp.t_star;
    if !cp.near_clamped {
        let d_t = d_local.dot(d_l);
        let b = d_l.norm_squared();
        let a = o_l.dot(d_l);
        let d_a = -d_t / b;
        let d_b = d_t * a / (b * b);
        d_o += d_l * d_a;
        d_d += o_l * d_a + d_l * (2.0 * d_b);
    }
    (d_o, d_d)
}

/// Real SH basis values for `dir` up to `degree` (≤ 3).
pub fn sh_basis(degree: usize, dir: &Vec3) -> [f64; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; 16];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
        if degree >= 3 {
            b[9] = SH_C3[0] * y * (3.0 * xx - yy);
            b[10] = SH_C3[1] * x * y * z;
            b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = SH_C3[5] * z * (xx - yy);
            b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Gradients of [`sh_basis`] entries with respect to the direction
/// components (treated as free variables).
pub fn sh_basis_grad(degree: usize, dir: &Vec3) -> [[f64; 3]; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut g = [[0.0; 3]; 16];
    if degree >= 1 {
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let c = SH_C2;
        g[4] = [c[0] * y, c[0] * x, 0.0];
        g[5] = [0.0, c[1] * z, c[1] * y];
        g[6] = [-2.0 * c[2] * x, -2.0 * c[2] * y, 4.0 * c[2] * z];
        g[7] = [c[3] * z, 0.0, c[3] * x];
        g[8] = [2.0 * c[4] * x, -2.0 * c[4] * y, 0.0];
        if degree >= 3 {
            let c = SH_C3;
            let (xx, yy, zz) = (x * x, y * y, z * z);
            g[9] = [c[0] * 6.0 * x * y, c[0] * (3.0 * xx - 3.0 * yy), 0.0];
            g[10] = [c[1] * y * z, c[1] * x * z, c[1] * x * y];
            g[11] = [
                c[2] * (-2.0 * x * y),
                c[2] * (4.0 * zz - xx - 3.0 * yy),
                c[2] * 8.0 * y * z,
            ];
            g[12] = [
                c[3] * (-6.0 * x * z),
                c[3] * (-6.0 * y * z),
                c[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
            ];
            g[13] = [
                c[4] * (4.0 * zz - 3.0 * xx - yy),
                c[4] * (-2.0 * x * y),
                c[4] * 8.0 * x * z,
            ];
            g[14] = [c[5] * 2.0 * x * z, c[5] * (-2.0 * y * z), c[5] * (xx - yy)];
            g[15] = [c[6] * (3.0 * xx - 3.0 * yy), c[6] * (-6.0 * x * y), 0.0];
        }
    }
    g
}

/// `0.5 + Σ coeff·basis(dir)` per channel, before the clamp at zero.
pub fn eval_sh_raw(sh: &[[f64; 3]], dir: &Vec3) -> [f64; 3] {
    let degree = sh_degree_for(sh.len());
    let basis = sh_basis(degree, dir);
    let mut out = [0.5; 3];
    for (k, coeff) in sh.iter().enumerate() {
        for c in 0..3 {
            out[c] += coeff[c] * basis[k];
        }
    }
    out
}

/// Base color `max(0, 0.5 + SH(dir))` as seen from `eye`.
pub fn base_color(primitive: &GaussianPrimitive, eye: &Vec3) -> [f64; 3] {
    let dir = view_direction(&primitive.center, eye);
    eval_sh_raw(&primitive.sh, &dir).map(|v| v.max(0.0))
}

/// Unit direction from `eye` toward `center`.
pub fn view_direction(center: &Vec3, eye: &Vec3) -> Vec3 {
    let v = center - eye;
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        Vec3::new(0.0, 0.0, 1.0)
    }
}

/// Adjoint of `v / ‖v‖` given the normalized output `dir` and `‖v‖`.
pub(crate) fn normalize_backward(dir: &Vec3, norm: f64, d_dir: &Vec3) -> Vec3 {
    if norm > 0.0 {
        (d_dir - dir * dir.dot(d_dir)) / norm
    } else {
        Vec3::zeros()
    }
}
