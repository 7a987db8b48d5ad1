//! Deployment geometry, large-scale fading and spatial covariances.
//!
//! APs sit on a stripe running around the top edge of a rectangular room,
//! equally spaced in arc length starting at the corner `(0, 0)`. Each AP is
//! a half-wavelength ULA whose axis follows the wall it is mounted on.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::config::{AntennaMode, SystemConfig};
use crate::error::{Error, Result};
use crate::linalg::{cr, CMat};

/// Distances below this are clamped before evaluating the path-loss model.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// Laplace deviations are integrated over `±TRUNCATION_SPREADS · spread`.
pub const TRUNCATION_SPREADS: f64 = 5.0;

const QUAD_TOL: f64 = 1e-8;
const QUAD_MAX_DEPTH: u32 = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub ap_positions: Vec<[f64; 3]>,
    /// Unit vector along the wall (array axis) at each AP, horizontal plane.
    pub ap_axes: Vec<[f64; 2]>,
    /// Unit vector pointing into the room at each AP.
    pub ap_normals: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 3]>,
}

impl Layout {
    pub fn distance(&self, user: usize, ap: usize) -> f64 {
        let u = self.user_positions[user];
        let a = self.ap_positions[ap];
        ((u[0] - a[0]).powi(2) + (u[1] - a[1]).powi(2) + (u[2] - a[2]).powi(2)).sqrt()
    }

    /// Azimuth of the AP→user line measured from the array broadside.
    pub fn nominal_angle(&self, user: usize, ap: usize) -> f64 {
        let u = self.user_positions[user];
        let a = self.ap_positions[ap];
        let dx = u[0] - a[0];
        let dy = u[1] - a[1];
        let t = self.ap_axes[ap];
        let n = self.ap_normals[ap];
        (dx * t[0] + dy * t[1]).atan2(dx * n[0] + dy * n[1])
    }
}

/// Point at arc length `s` along the room perimeter, with wall axis and
/// inward normal. Walks (0,0) → (x,0) → (x,y) → (0,y) → (0,0).
fn perimeter_point(s: f64, x: f64, y: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
    if s < x {
        ([s, 0.0], [1.0, 0.0], [0.0, 1.0])
    } else if s < x + y {
        ([x, s - x], [0.0, 1.0], [-1.0, 0.0])
    } else if s < 2.0 * x + y {
        ([x - (s - x - y), y], [-1.0, 0.0], [0.0, -1.0])
    } else {
        ([0.0, y - (s - 2.0 * x - y)], [0.0, -1.0], [1.0, 0.0])
    }
}

pub fn place_layout<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Layout {
    let perimeter = 2.0 * (cfg.room_x + cfg.room_y);
    let spacing = perimeter / cfg.l as f64;
    let mut ap_positions = Vec::with_capacity(cfg.l);
    let mut ap_axes = Vec::with_capacity(cfg.l);
    let mut ap_normals = Vec::with_capacity(cfg.l);
    for i in 0..cfg.l {
        let (p, axis, normal) = perimeter_point(i as f64 * spacing, cfg.room_x, cfg.room_y);
        ap_positions.push([p[0], p[1], cfg.stripe_height]);
        ap_axes.push(axis);
        ap_normals.push(normal);
    }
    let user_positions = (0..cfg.k)
        .map(|_| {
            let ux: f64 = rng.random::<f64>() * cfg.room_x;
            let uy: f64 = rng.random::<f64>() * cfg.room_y;
            [ux, uy, cfg.user_height]
        })
        .collect();
    Layout { ap_positions, ap_axes, ap_normals, user_positions }
}

/// Large-scale gain in dB for distance `d` metres.
pub fn large_scale_gain_db(d: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("distance must be positive, got {d}")));
    }
    Ok(-30.5 - 36.7 * d.log10())
}

/// Linear large-scale gain for distance `d` metres.
pub fn large_scale_gain(d: f64) -> Result<f64> {
    Ok(10f64.powf(large_scale_gain_db(d)? / 10.0))
}

#[derive(Debug, Clone)]
pub struct CovarianceSet {
    k: usize,
    l: usize,
    n: usize,
    r: Vec<CMat>,
    pub beta: DMatrix<f64>,
}

impl CovarianceSet {
    /// Assemble from a row-major `K×L` list of `N×N` matrices; β is derived
    /// as `tr(R)/N`.
    pub fn from_matrices(k: usize, l: usize, r: Vec<CMat>) -> Result<Self> {
        if r.len() != k * l || r.is_empty() {
            return Err(Error::Dimension(format!("expected {} covariance matrices, got {}", k * l, r.len())));
        }
        let n = r[0].nrows();
        if r.iter().any(|m| m.nrows() != n || m.ncols() != n) {
            return Err(Error::Dimension("covariance matrices must all be N×N".into()));
        }
        let beta = DMatrix::from_fn(k, l, |i, j| crate::linalg::trace_re(&r[i * l + j]) / n as f64);
        Ok(Self { k, l, n, r, beta })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self, user: usize, ap: usize) -> &CMat {
        &self.r[user * self.l + ap]
    }

    pub fn beta(&self, user: usize, ap: usize) -> f64 {
        self.beta[(user, ap)]
    }
}

fn laplace_pdf(delta: f64, spread: f64) -> f64 {
    (-SQRT_2 * delta.abs() / spread).exp() / (SQRT_2 * spread)
}

fn simpson<F: Fn(f64) -> Complex64>(
    f: &F,
    a: f64,
    fa: Complex64,
    b: f64,
    fb: Complex64,
) -> (f64, Complex64, Complex64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson<F: Fn(f64) -> Complex64>(
    f: &F,
    a: f64,
    fa: Complex64,
    b: f64,
    fb: Complex64,
    m: f64,
    fm: Complex64,
    whole: Complex64,
    tol: f64,
    depth: u32,
) -> Option<Complex64> {
    let (lm, flm, left) = simpson(f, a, fa, m, fm);
    let (rm, frm, right) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if delta.norm() <= 15.0 * tol {
        return Some(left + right + delta / 15.0);
    }
    if depth == 0 {
        return None;
    }
    let l = adaptive_simpson(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)?;
    let r = adaptive_simpson(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)?;
    Some(l + r)
}

/// Adaptive Simpson quadrature of a complex integrand on `[a, b]`.
pub fn integrate<F: Fn(f64) -> Complex64>(f: F, a: f64, b: f64, tol: f64) -> Option<Complex64> {
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(&f, a, fa, b, fb);
    adaptive_simpson(&f, a, fa, b, fb, m, fm, whole, tol, QUAD_MAX_DEPTH)
}

/// Normalized local-scattering correlation matrix of an `n`-element
/// half-wavelength ULA, nominal angle `theta` (rad), Laplace angular spread
/// `spread` (rad). The Laplace density is truncated to ±5 spreads and
/// renormalized so the diagonal is exactly one. Returns `None` if the
/// quadrature fails to converge.
pub fn local_scattering_correlation(n: usize, theta: f64, spread: f64) -> Option<CMat> {
    let mut first_col = vec![cr(1.0); n];
    if spread == 0.0 {
        for (d, entry) in first_col.iter_mut().enumerate().skip(1) {
            *entry = Complex64::from_polar(1.0, PI * d as f64 * theta.sin());
        }
    } else {
        let lim = TRUNCATION_SPREADS * spread;
        let mass = 1.0 - (-SQRT_2 * TRUNCATION_SPREADS).exp();
        for (d, entry) in first_col.iter_mut().enumerate().skip(1) {
            let f =
                |delta: f64| Complex64::from_polar(laplace_pdf(delta, spread), PI * d as f64 * (theta + delta).sin());
            // kink at the origin
            let lower = integrate(f, -lim, 0.0, QUAD_TOL)?;
            let upper = integrate(f, 0.0, lim, QUAD_TOL)?;
            *entry = (lower + upper) / mass;
        }
    }
    Some(CMat::from_fn(n, n, |row, col| if row >= col { first_col[row - col] } else { first_col[col - row].conj() }))
}

pub fn build_covariances(cfg: &SystemConfig, layout: &Layout) -> Result<CovarianceSet> {
    let spread = cfg.angle_spread_deg.to_radians();
    let mut r = Vec::with_capacity(cfg.k * cfg.l);
    for user in 0..cfg.k {
        for ap in 0..cfg.l {
            let d = layout.distance(user, ap).max(MIN_DISTANCE_M);
            let beta = large_scale_gain(d)?;
            let m = match cfg.antenna_mode {
                AntennaMode::Uncorrelated => CMat::identity(cfg.n, cfg.n).scale(beta),
                AntennaMode::Correlated => {
                    let theta = layout.nominal_angle(user, ap);
                    local_scattering_correlation(cfg.n, theta, spread)
                        .ok_or(Error::Quadrature { user, ap })?
                        .scale(beta)
                }
            };
            r.push(m);
        }
    }
    CovarianceSet::from_matrices(cfg.k, cfg.l, r)
}
