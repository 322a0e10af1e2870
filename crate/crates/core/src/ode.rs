//! Fixed-step classical Runge–Kutta for linear, time-dependent matrix
//! systems, with a step-doubling error estimate.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::NUDGE;
use crate::linalg::CMatrix;

/// A tuple of matrix blocks and scalar accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeState {
    pub mats: Vec<CMatrix>,
    pub scalars: Vec<Complex64>,
}

impl OdeState {
    pub fn new(mats: Vec<CMatrix>, scalars: Vec<Complex64>) -> Self {
        Self { mats, scalars }
    }

    fn zeros_like(&self) -> Self {
        Self {
            mats: self
                .mats
                .iter()
                .map(|m| CMatrix::zeros(m.nrows(), m.ncols()))
                .collect(),
            scalars: vec![Complex64::new(0.0, 0.0); self.scalars.len()],
        }
    }

    /// `self + a * other`.
    fn add_scaled(&self, a: f64, other: &Self) -> Self {
        Self {
            mats: self
                .mats
                .iter()
                .zip(&other.mats)
                .map(|(x, y)| x + y * Complex64::new(a, 0.0))
                .collect(),
            scalars: self
                .scalars
                .iter()
                .zip(&other.scalars)
                .map(|(x, y)| x + y * a)
                .collect(),
        }
    }

    fn accumulate(&mut self, a: f64, other: &Self) {
        for (x, y) in self.mats.iter_mut().zip(&other.mats) {
            *x += y * Complex64::new(a, 0.0);
        }
        for (x, y) in self.scalars.iter_mut().zip(&other.scalars) {
            *x += y * a;
        }
    }

    /// Largest entrywise modulus over matrix blocks.
    pub fn max_abs(&self) -> f64 {
        self.mats
            .iter()
            .flat_map(|m| m.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Largest entrywise difference over matrix blocks.
    fn max_diff(&self, other: &Self) -> f64 {
        self.mats
            .iter()
            .zip(&other.mats)
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }
}

/// What to do when the local error estimate exceeds the tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorPolicy {
    pub tolerance: f64,
    pub enforce: bool,
}

impl Default for ErrorPolicy {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            enforce: true,
        }
    }
}

impl ErrorPolicy {
    pub fn lenient() -> Self {
        Self {
            tolerance: 1e-6,
            enforce: false,
        }
    }
}

fn rk4<F>(f: &F, a: f64, b: f64, eps: f64, y: &OdeState) -> OdeState
where
    F: Fn(f64, &OdeState) -> OdeState,
{
    let h = b - a;
    let mid = 0.5 * (a + b);
    let k1 = f(a + eps, y);
    let k2 = f(mid, &y.add_scaled(0.5 * h, &k1));
    let k3 = f(mid, &y.add_scaled(0.5 * h, &k2));
    let k4 = f(b - eps, &y.add_scaled(h, &k3));
    let mut out = y.clone();
    out.accumulate(h / 6.0, &k1);
    out.accumulate(h / 3.0, &k2);
    out.accumulate(h / 3.0, &k3);
    out.accumulate(h / 6.0, &k4);
    out
}

/// Summary of one integration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeReport {
    /// Largest relative local error estimate over all cells.
    pub max_error: f64,
    /// Time at which the largest estimate occurred.
    pub worst_time: f64,
}

/// Integrates `y' = f(t, y)` over `cells` cells of width `step`, starting
/// at `t = 0`. `observe(k, y)` is called at every grid point `t_k`,
/// including `k = 0`.
///
/// Every cell is integrated once with a full step and once with two half
/// steps; the half-step result is kept and `|full - half| / 15` serves as
/// the local error estimate. Rate evaluations at cell ends are pulled
/// inside the cell so that kinks on grid points are seen one-sidedly.
pub fn integrate<F, O>(
    f: F,
    y0: OdeState,
    step: f64,
    cells: usize,
    policy: ErrorPolicy,
    mut observe: O,
) -> Result<OdeReport>
where
    F: Fn(f64, &OdeState) -> OdeState,
    O: FnMut(usize, &OdeState),
{
    let eps = NUDGE * step;
    let mut y = y0;
    observe(0, &y);
    let mut report = OdeReport {
        max_error: 0.0,
        worst_time: 0.0,
    };
    for k in 0..cells {
        let a = k as f64 * step;
        let b = (k + 1) as f64 * step;
        let m = 0.5 * (a + b);
        let full = rk4(&f, a, b, eps, &y);
        let half = rk4(&f, a, m, eps, &y);
        let half = rk4(&f, m, b, eps, &half);
        let scale = 1.0f64.max(half.max_abs());
        let err = full.max_diff(&half) / 15.0 / scale;
        if !err.is_finite() {
            return Err(Error::Numerical(format!("integration diverged near t = {b}")));
        }
        if err > report.max_error {
            report.max_error = err;
            report.worst_time = b;
        }
        if policy.enforce && err > policy.tolerance {
            // Local error of the classical scheme scales like h^5.
            let required = 0.9 * step * (policy.tolerance / err).powf(0.2);
            return Err(Error::Refinement {
                step,
                estimate: err,
                required,
            });
        }
        y = half;
        observe(k + 1, &y);
    }
    Ok(report)
}

/// Zero state with the same block shapes as `like`.
pub fn zeros_like(like: &OdeState) -> OdeState {
    like.zeros_like()
}
