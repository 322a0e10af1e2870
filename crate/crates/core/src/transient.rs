//! Transient transforms of the queue without catastrophes: the joint PGF/LST
//! of queue sizes, served counts and accumulated/served resources, and the
//! moment equations obtained by differentiating it.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{TimeGrid, NUDGE};
use crate::linalg::{expm, max_abs_c, to_complex, CMatrix, RMatrix};
use crate::model::StateModel;
use crate::ode::{integrate, ErrorPolicy, OdeReport, OdeState};

/// Tolerance used for the integral-equation spot check.
pub const INTEGRAL_CHECK_TOL: f64 = 1e-6;

fn one() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

/// Arguments `(z1, z2, s1, s2)` of the joint transform.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformPoint {
    /// Marks for customers still in service, per type.
    pub z1: Vec<Complex64>,
    /// Marks for served customers, per type.
    pub z2: Vec<Complex64>,
    /// Transform variables of the accumulated resource, per component.
    pub s1: Vec<Complex64>,
    /// Transform variables of the served resource, per component.
    pub s2: Vec<Complex64>,
}

impl TransformPoint {
    /// `z = 1`, `s = 0`.
    pub fn normalization(types: usize, resources: usize) -> Self {
        Self {
            z1: vec![one(); types],
            z2: vec![one(); types],
            s1: vec![Complex64::new(0.0, 0.0); resources],
            s2: vec![Complex64::new(0.0, 0.0); resources],
        }
    }

    /// Queue-size marks only; served marks at 1 and resources at 0.
    pub fn queue(z1: Vec<Complex64>, resources: usize) -> Self {
        let types = z1.len();
        Self {
            z1,
            ..Self::normalization(types, resources)
        }
    }

    /// Same marks with a real scalar `z` for every in-service type.
    pub fn queue_real(z: f64, types: usize, resources: usize) -> Self {
        Self::queue(vec![Complex64::new(z, 0.0); types], resources)
    }

    pub fn validate(&self, types: usize, resources: usize) -> Result<()> {
        if self.z1.len() != types || self.z2.len() != types {
            return Err(Error::Domain(format!("transform point needs {types} z entries")));
        }
        if self.s1.len() != resources || self.s2.len() != resources {
            return Err(Error::Domain(format!("transform point needs {resources} s entries")));
        }
        for z in self.z1.iter().chain(&self.z2) {
            if !(z.norm() <= 1.0 + 1e-12) {
                return Err(Error::Domain(format!("|z| must not exceed 1, got {z}")));
            }
        }
        for s in self.s1.iter().chain(&self.s2) {
            if !(s.re >= 0.0) {
                return Err(Error::Domain(format!("Re(s) must be nonnegative, got {s}")));
            }
        }
        Ok(())
    }
}

/// `t ↦ D_0 + S̃(z1, z2, s1, s2, t)` for one environment state.
#[derive(Debug, Clone)]
pub struct RateFunction {
    d0: CMatrix,
    marks: Vec<CMatrix>,
    served: Vec<Complex64>,
    present: Vec<Complex64>,
    service: Vec<crate::distributions::DistributionLaw>,
    breakpoints: Vec<f64>,
}

impl RateFunction {
    pub fn new(state: &StateModel, point: &TransformPoint) -> Result<Self> {
        point.validate(state.types(), state.resources())?;
        Ok(Self::new_unchecked(state, point))
    }

    /// Skips the `|z| <= 1` check; used for finite differences around 1.
    pub(crate) fn new_unchecked(state: &StateModel, point: &TransformPoint) -> Self {
        let served = (0..state.types())
            .map(|r| point.z2[r] * lst_vector(&state.departure_resources()[r], &point.s2))
            .collect();
        let present = (0..state.types())
            .map(|r| point.z1[r] * lst_vector(&state.arrival_resources()[r], &point.s1))
            .collect();
        let mut breakpoints: Vec<f64> = state.service().iter().flat_map(|b| b.breakpoints()).collect();
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        Self {
            d0: to_complex(state.map().d0()),
            marks: state.map().marks().iter().map(to_complex).collect(),
            served,
            present,
            service: state.service().to_vec(),
            breakpoints,
        }
    }

    pub fn order(&self) -> usize {
        self.d0.nrows()
    }

    /// `S̃(t) = Σ_r D_r [z2r G̃_r(s2) B_r(t) + z1r C̃_r(s1) (1 - B_r(t))]`.
    pub fn marks_part(&self, t: f64) -> CMatrix {
        let m = self.order();
        let mut out = CMatrix::zeros(m, m);
        for (r, d) in self.marks.iter().enumerate() {
            let b = self.service[r].cdf(t);
            let w = self.served[r] * b + self.present[r] * (1.0 - b);
            out += d * w;
        }
        out
    }

    pub fn eval(&self, t: f64) -> CMatrix {
        &self.d0 + self.marks_part(t)
    }

    /// `∫_0^t [D_0 + S̃(u)] du` in closed form.
    pub fn integral(&self, t: f64) -> CMatrix {
        let mut out = &self.d0 * Complex64::new(t, 0.0);
        for (r, d) in self.marks.iter().enumerate() {
            let surv = self.service[r].integrated_survival(t);
            let w = self.served[r] * (t - surv) + self.present[r] * surv;
            out += d * w;
        }
        out
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }
}

fn lst_vector(law: &crate::distributions::ResourceVectorLaw, s: &[Complex64]) -> Complex64 {
    law.marginals()
        .iter()
        .zip(s)
        .map(|(m, &sj)| m.lst_unchecked(sj))
        .product()
}

/// `D_0(i) + S̃_i(z1, z2, s1, s2, t)`.
pub fn rate_matrix(state: &StateModel, point: &TransformPoint, t: f64) -> Result<CMatrix> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
    }
    Ok(RateFunction::new(state, point)?.eval(t))
}

/// The matrix transform `Ã(t)` on a grid; row index is the initial phase.
#[derive(Debug, Clone)]
pub struct TransientSolution {
    pub grid: TimeGrid,
    pub a: Vec<CMatrix>,
    pub report: OdeReport,
    /// `(t, max entrywise deviation)` between the ODE solution and the
    /// integral-equation form at three spot times.
    pub integral_check: Vec<(f64, f64)>,
}

impl TransientSolution {
    /// `π Ã(t_n) e`.
    pub fn contract(&self, pi: &[f64], n: usize) -> Complex64 {
        crate::linalg::contract(pi, &self.a[n])
    }
}

fn matrix_ode(rate: &RateFunction, grid: &TimeGrid, policy: ErrorPolicy) -> Result<(Vec<CMatrix>, OdeReport)> {
    let m = rate.order();
    let mut out = Vec::with_capacity(grid.len());
    let report = integrate(
        |t, y| OdeState::new(vec![rate.eval(t) * &y.mats[0]], vec![]),
        OdeState::new(vec![CMatrix::identity(m, m)], vec![]),
        grid.step(),
        grid.len() - 1,
        policy,
        |_, y| out.push(y.mats[0].clone()),
    )?;
    Ok((out, report))
}

/// Solves `dÃ/dt = [D_0 + S̃(t)] Ã`, `Ã(0) = I`, and checks the result
/// against the integral form at three grid times.
pub fn solve_pgf(
    state: &StateModel,
    point: &TransformPoint,
    grid: &TimeGrid,
    policy: ErrorPolicy,
) -> Result<TransientSolution> {
    let rate = RateFunction::new(state, point)?;
    solve_with_rate(&rate, grid, policy)
}

pub(crate) fn solve_with_rate(rate: &RateFunction, grid: &TimeGrid, policy: ErrorPolicy) -> Result<TransientSolution> {
    let (a, report) = matrix_ode(rate, grid, policy)?;
    let last = grid.len() - 1;
    let spots = [last / 3, (2 * last) / 3, last];
    let mut integral_check = Vec::new();
    for &n in &spots {
        if n == 0 {
            continue;
        }
        let dev = max_abs_c(&(integral_form(rate, grid, &a, n) - &a[n]));
        integral_check.push((grid.point(n), dev));
        if policy.enforce && dev > INTEGRAL_CHECK_TOL {
            return Err(Error::Numerical(format!(
                "integral-equation check failed at t = {}: deviation {dev:.3e}",
                grid.point(n)
            )));
        }
    }
    Ok(TransientSolution {
        grid: *grid,
        a,
        report,
        integral_check,
    })
}

/// Right-hand side of `Ã(t) = e^{D_0 t} + ∫_0^t e^{D_0 u} S̃(t-u) Ã(t-u) du`
/// at grid index `n`, by composite Simpson rules on the pieces between
/// kinks of `S̃(t - ·)`.
pub fn integral_form(rate: &RateFunction, grid: &TimeGrid, a: &[CMatrix], n: usize) -> CMatrix {
    let h = grid.step();
    let t = grid.point(n);
    let step_exp = expm(&(&rate.d0 * Complex64::new(h, 0.0)));
    let m = rate.order();
    let mut powers = Vec::with_capacity(n + 1);
    let mut e = CMatrix::identity(m, m);
    for _ in 0..=n {
        powers.push(e.clone());
        e = &e * &step_exp;
    }
    let mut cuts = vec![0usize, n];
    for &b in rate.breakpoints() {
        if b > 0.0 && b < t {
            if let Some(k) = grid.index_of(t - b) {
                cuts.push(k);
            }
        }
    }
    cuts.sort_unstable();
    cuts.dedup();
    let eps = NUDGE * h;
    let mut total = CMatrix::zeros(m, m);
    for seg in cuts.windows(2) {
        let (ka, kb) = (seg[0], seg[1]);
        let f = |k: usize| {
            let arg = t - grid.point(k);
            let arg = if k == ka {
                arg - eps
            } else if k == kb {
                arg + eps
            } else {
                arg
            };
            &powers[k] * rate.marks_part(arg.max(0.0)) * &a[n - k]
        };
        total += composite(&f, ka, kb, h);
    }
    total + &powers[n]
}

fn composite<F: Fn(usize) -> CMatrix>(f: &F, ka: usize, kb: usize, h: f64) -> CMatrix {
    let cells = kb - ka;
    let c = |x: f64| Complex64::new(x, 0.0);
    match cells {
        0 => f(ka) * c(0.0),
        1 => (f(ka) + f(kb)) * c(0.5 * h),
        _ => {
            let (simpson_end, tail) = if cells % 2 == 0 { (kb, false) } else { (kb - 3, true) };
            let mut acc = f(ka) * c(0.0);
            if simpson_end > ka {
                acc += f(ka) + f(simpson_end);
                for k in ka + 1..simpson_end {
                    acc += f(k) * c(if (k - ka) % 2 == 1 { 4.0 } else { 2.0 });
                }
                acc *= c(h / 3.0);
            }
            if tail {
                let s = simpson_end;
                let part = (f(s) + f(s + 1) * c(3.0) + f(s + 2) * c(3.0) + f(s + 3)) * c(3.0 * h / 8.0);
                acc += part;
            }
            acc
        }
    }
}

/// Largest entrywise gap at the grid horizon between the ODE solution and
/// `exp(∫_0^t [D_0 + S̃(u)] du)`, which is exact only when the rate matrices
/// commute.
pub fn magnus_deviation(rate: &RateFunction, sol: &TransientSolution) -> f64 {
    let n = sol.grid.len() - 1;
    let naive = expm(&rate.integral(sol.grid.point(n)));
    max_abs_c(&(naive - &sol.a[n]))
}

/// First and second factorial-moment matrices for one customer type.
#[derive(Debug, Clone)]
pub struct MomentCurves {
    pub grid: TimeGrid,
    pub m1: Vec<RMatrix>,
    pub m2: Vec<RMatrix>,
    pub report: OdeReport,
}

fn check_type(state: &StateModel, r: usize) -> Result<()> {
    if r >= state.types() {
        return Err(Error::Domain(format!(
            "customer type {r} out of range (model has {})",
            state.types()
        )));
    }
    Ok(())
}

/// Solves the coupled moment system at `z = 1`, `s = 0`:
/// `A0' = D A0`, `M1' = D M1 + w D_r (1 - B_r) A0`, `M2' = D M2 + 2 D_r (1 - B_r) M1`.
fn moment_system(
    state: &StateModel,
    r: usize,
    weight: f64,
    grid: &TimeGrid,
    policy: ErrorPolicy,
) -> Result<MomentCurves> {
    check_type(state, r)?;
    let m = state.map().order();
    let d = to_complex(&state.map().generator());
    let dr = to_complex(state.map().mark(r));
    let service = state.service()[r].clone();
    let mut m1 = Vec::with_capacity(grid.len());
    let mut m2 = Vec::with_capacity(grid.len());
    let report = integrate(
        |t, y| {
            let surv = Complex64::new(1.0 - service.cdf(t), 0.0);
            let a0 = &y.mats[0];
            let x1 = &y.mats[1];
            let x2 = &y.mats[2];
            OdeState::new(
                vec![
                    &d * a0,
                    &d * x1 + &dr * a0 * (surv * weight),
                    &d * x2 + &dr * x1 * (surv * 2.0),
                ],
                vec![],
            )
        },
        OdeState::new(
            vec![CMatrix::identity(m, m), CMatrix::zeros(m, m), CMatrix::zeros(m, m)],
            vec![],
        ),
        grid.step(),
        grid.len() - 1,
        policy,
        |_, y| {
            m1.push(y.mats[1].map(|v| v.re));
            m2.push(y.mats[2].map(|v| v.re));
        },
    )?;
    Ok(MomentCurves {
        grid: *grid,
        m1,
        m2,
        report,
    })
}

/// First and second factorial moments of the type-`r` queue size.
pub fn moment_curves(state: &StateModel, r: usize, grid: &TimeGrid, policy: ErrorPolicy) -> Result<MomentCurves> {
    moment_system(state, r, 1.0, grid, policy)
}

/// `M1[r](t) = ∂Ã/∂z_1r` at the normalization point.
pub fn mean_in_system(state: &StateModel, r: usize, grid: &TimeGrid, policy: ErrorPolicy) -> Result<Vec<RMatrix>> {
    Ok(moment_curves(state, r, grid, policy)?.m1)
}

/// `M2[r](t) = ∂²Ã/∂z_1r²` at the normalization point.
pub fn second_factorial_moment(
    state: &StateModel,
    r: usize,
    grid: &TimeGrid,
    policy: ErrorPolicy,
) -> Result<Vec<RMatrix>> {
    Ok(moment_curves(state, r, grid, policy)?.m2)
}

/// Mean accumulated type-`r` resource in component `c`: `-∂Ã/∂s_1c`
/// restricted to type `r`.
pub fn resource_mean(
    state: &StateModel,
    r: usize,
    c: usize,
    grid: &TimeGrid,
    policy: ErrorPolicy,
) -> Result<Vec<RMatrix>> {
    check_type(state, r)?;
    if c >= state.resources() {
        return Err(Error::Domain(format!(
            "resource component {c} out of range (model has {})",
            state.resources()
        )));
    }
    let mean = state.arrival_resources()[r].marginals()[c].mean();
    Ok(moment_system(state, r, mean, grid, policy)?.m1)
}

/// Central finite differences of `Ã` in `z_1r` around 1: returns
/// `(first, second)` derivative estimates on the grid. Evaluation points
/// just outside the unit disk are allowed here on purpose.
pub fn finite_difference_moments(
    state: &StateModel,
    r: usize,
    grid: &TimeGrid,
    delta_first: f64,
    delta_second: f64,
) -> Result<(Vec<RMatrix>, Vec<RMatrix>)> {
    check_type(state, r)?;
    let solve_at = |dz: f64| -> Result<Vec<CMatrix>> {
        let mut point = TransformPoint::normalization(state.types(), state.resources());
        point.z1[r] = Complex64::new(1.0 + dz, 0.0);
        let rate = RateFunction::new_unchecked(state, &point);
        Ok(matrix_ode(&rate, grid, ErrorPolicy::lenient())?.0)
    };
    let plus1 = solve_at(delta_first)?;
    let minus1 = solve_at(-delta_first)?;
    let plus2 = solve_at(delta_second)?;
    let minus2 = solve_at(-delta_second)?;
    let centre = solve_at(0.0)?;
    let first = plus1
        .iter()
        .zip(&minus1)
        .map(|(p, m)| (p - m).map(|v| v.re / (2.0 * delta_first)))
        .collect();
    let second = (0..grid.len())
        .map(|n| {
            (&plus2[n] - &centre[n] * Complex64::new(2.0, 0.0) + &minus2[n])
                .map(|v| v.re / (delta_second * delta_second))
        })
        .collect();
    Ok((first, second))
}
