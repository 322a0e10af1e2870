//! Uniform time grids and the cell-wise quadrature used on them.
//!
//! Distribution kinks (deterministic atoms, uniform endpoints) are expected
//! to sit on grid points. Evaluations that must see a one-sided limit at a
//! grid point are nudged by `NUDGE * step` into the cell.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative offset used for one-sided evaluation at grid points.
pub const NUDGE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    step: f64,
    len: usize,
}

impl TimeGrid {
    /// Grid `0, h, 2h, …` whose last point is at least `horizon - h/2`.
    pub fn new(step: f64, horizon: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::Domain(format!("grid step must be positive, got {step}")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Domain(format!("grid horizon must be positive, got {horizon}")));
        }
        let cells = (horizon / step - 0.5).ceil().max(1.0);
        if cells > 1e7 {
            return Err(Error::Domain(format!(
                "grid with step {step} and horizon {horizon} needs {cells} cells"
            )));
        }
        Ok(Self {
            step,
            len: cells as usize + 1,
        })
    }

    pub fn with_points(step: f64, len: usize) -> Result<Self> {
        if !(step > 0.0) || len < 2 {
            return Err(Error::Domain("grid needs a positive step and two points".into()));
        }
        Ok(Self { step, len })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn horizon(&self) -> f64 {
        self.point(self.len - 1)
    }

    pub fn point(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(move |k| self.point(k))
    }

    /// Right-continuous evaluation point for grid index `k`.
    pub fn right(&self, k: usize) -> f64 {
        self.point(k) + NUDGE * self.step
    }

    /// Left-limit evaluation point for grid index `k`.
    pub fn left(&self, k: usize) -> f64 {
        self.point(k) - NUDGE * self.step
    }

    /// Index of `t` if it is a grid point (to within 1e-9 relative).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.step).round();
        if k < 0.0 || k as usize >= self.len {
            return None;
        }
        if (k * self.step - t).abs() <= 1e-9 * self.step.max(t.abs()) {
            Some(k as usize)
        } else {
            None
        }
    }

    pub fn require_index(&self, t: f64) -> Result<usize> {
        self.index_of(t).ok_or_else(|| {
            Error::Config(format!(
                "time {t} is not a point of the grid (step {}, horizon {})",
                self.step,
                self.horizon()
            ))
        })
    }

    /// True when `x` is (numerically) a multiple of the step.
    pub fn aligned(&self, x: f64) -> bool {
        let k = (x / self.step).round();
        (k * self.step - x).abs() <= 1e-9 * self.step.max(x.abs())
    }
}

// Three-point Gauss–Legendre nodes and weights on [0, 1].
const GL_NODES: [f64; 3] = [
    0.5 - 0.387_298_334_620_741_7,
    0.5,
    0.5 + 0.387_298_334_620_741_7,
];
const GL_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

/// ∫_0^end f(u) du with three-point Gauss–Legendre on each cell of width
/// `step`. Nodes never touch cell boundaries, so kinks and jumps located on
/// multiples of `step` do not degrade the rule.
pub fn gauss_cells<F: FnMut(f64) -> f64>(mut f: F, step: f64, end: f64) -> f64 {
    let mut total = 0.0;
    let mut a = 0.0;
    let mut k = 0usize;
    while a < end - 1e-12 * step {
        let b = ((k + 1) as f64 * step).min(end);
        let w = b - a;
        let mut cell = 0.0;
        for (x, wt) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            cell += wt * f(a + x * w);
        }
        total += cell * w;
        k += 1;
        a = k as f64 * step;
    }
    total
}

pub fn gauss_cells_c<F: FnMut(f64) -> Complex64>(mut f: F, step: f64, end: f64) -> Complex64 {
    let mut total = Complex64::new(0.0, 0.0);
    let mut a = 0.0;
    let mut k = 0usize;
    while a < end - 1e-12 * step {
        let b = ((k + 1) as f64 * step).min(end);
        let w = b - a;
        let mut cell = Complex64::new(0.0, 0.0);
        for (x, wt) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            cell += f(a + x * w) * *wt;
        }
        total += cell * w;
        k += 1;
        a = k as f64 * step;
    }
    total
}
