//! Transforms of the model with catastrophes: the no-catastrophe solutions
//! of each environment state composed with the Markov renewal structure of
//! the environment.

use num_complex::Complex64;

use crate::environment::RenewalSolution;
use crate::error::{Error, Result};
use crate::grid::{gauss_cells, TimeGrid};
use crate::linalg::CMatrix;
use crate::model::{Model, StateModel};
use crate::ode::{integrate, ErrorPolicy, OdeState};
use crate::transient::{RateFunction, TransformPoint};

/// Survival level at which improper integrals are first truncated.
pub const TAIL_EPS: f64 = 1e-8;
/// Allowed truncation bound relative to the value it accompanies.
pub const TRUNCATION_REL: f64 = 1e-6;

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub(crate) fn check_grid(renewal: &RenewalSolution, grid: &TimeGrid) -> Result<()> {
    if renewal.grid != *grid {
        return Err(Error::Config(format!(
            "renewal grid (step {}, {} points) does not match the analysis grid (step {}, {} points)",
            renewal.grid.step(),
            renewal.grid.len(),
            grid.step(),
            grid.len()
        )));
    }
    Ok(())
}

/// `out[n] = Σ_k masses[k] g[n - k]` for complex `g`.
pub(crate) fn convolve_masses(g: &[Complex64], masses: &[f64]) -> Vec<Complex64> {
    let nz: Vec<(usize, f64)> = masses
        .iter()
        .enumerate()
        .filter(|(_, &m)| m != 0.0)
        .map(|(k, &m)| (k, m))
        .collect();
    (0..g.len())
        .map(|n| {
            nz.iter()
                .take_while(|(k, _)| *k <= n)
                .map(|&(k, m)| g[n - k] * m)
                .sum()
        })
        .collect()
}

/// Number of grid cells covering `[0, t]`.
pub(crate) fn cells_for(step: f64, t: f64) -> usize {
    ((t / step) - 1e-9).ceil().max(1.0) as usize
}

/// `π_j Ã_j(t) e` on the grid, for the no-catastrophe model of one state,
/// together with `∫_0^T (1 - F_j(u)) π_j Ã_j(u) e du` when `survival` is
/// given.
pub(crate) struct StatePgf {
    pub values: Vec<Complex64>,
    pub integral: Complex64,
    pub end_value: Complex64,
    pub max_error: f64,
}

pub(crate) fn state_pgf(
    state: &StateModel,
    point: &TransformPoint,
    step: f64,
    record: usize,
    cells: usize,
    survival: Option<&dyn Fn(f64) -> f64>,
    policy: ErrorPolicy,
) -> Result<StatePgf> {
    let rate = RateFunction::new(state, point)?;
    let m = rate.order();
    let pi = state.pi().to_vec();
    let mut values = Vec::with_capacity(record);
    let mut integral = c(0.0);
    let mut end_value = c(0.0);
    let pi_dot = |a: &CMatrix| -> Complex64 { (0..m).map(|i| a[(i, 0)] * pi[i]).sum() };
    let report = integrate(
        |t, y| {
            let a = rate.eval(t) * &y.mats[0];
            let w = survival.map_or(0.0, |s| s(t));
            OdeState::new(vec![a], vec![pi_dot(&y.mats[0]) * w])
        },
        OdeState::new(vec![CMatrix::from_element(m, 1, c(1.0))], vec![c(0.0)]),
        step,
        cells.max(record.saturating_sub(1)),
        policy,
        |k, y| {
            if k < record {
                values.push(pi_dot(&y.mats[0]));
            }
            integral = y.scalars[0];
            end_value = pi_dot(&y.mats[0]);
        },
    )?;
    Ok(StatePgf {
        values,
        integral,
        end_value,
        max_error: report.max_error,
    })
}

/// Transient and stationary transforms of the model with catastrophes.
#[derive(Debug, Clone)]
pub struct CatastropheSolution {
    pub grid: TimeGrid,
    /// `P̃̃_j(t_n)`: no-catastrophe transform started empty in state `j`.
    pub no_catastrophe: Vec<Vec<Complex64>>,
    /// `g_j(t_n)`: first-cycle term of state `j`.
    pub first_cycle: Vec<Vec<Complex64>>,
    /// `P̃_i(t_n)` for each initial state `i`.
    pub per_state: Vec<Vec<Complex64>>,
    /// `Σ_i p⁰_i P̃_i(t_n)`.
    pub transient: Vec<Complex64>,
    pub stationary: Complex64,
    pub truncation_bound: f64,
    pub max_ode_error: f64,
}

/// `P̃_i(t) = g_i(t) + Σ_j ∫ g_j(t-u) dH_ij(u)` with
/// `g_j = (1 - F_j) P̃̃_j + (F_j - Σ_k Q_jk)`, the second term being the
/// probability that the first cycle is in its repair period (empty system).
pub fn transient_with_catastrophes(
    model: &Model,
    renewal: &RenewalSolution,
    grid: &TimeGrid,
    point: &TransformPoint,
    policy: ErrorPolicy,
) -> Result<(Vec<Vec<Complex64>>, Vec<Vec<Complex64>>, Vec<Vec<Complex64>>, f64)> {
    check_grid(renewal, grid)?;
    let d = model.environment().states();
    let n = grid.len();
    let mut nocat = Vec::with_capacity(d);
    let mut first = Vec::with_capacity(d);
    let mut max_err = 0.0f64;
    for j in 0..d {
        let sp = state_pgf(model.state(j), point, grid.step(), n, n - 1, None, policy)?;
        max_err = max_err.max(sp.max_error);
        let g: Vec<Complex64> = (0..n)
            .map(|k| {
                let f = renewal.f[j][k];
                let q: f64 = (0..d).map(|l| renewal.q_kernel[j][l][k]).sum();
                sp.values[k] * (1.0 - f) + (f - q).max(0.0)
            })
            .collect();
        nocat.push(sp.values);
        first.push(g);
    }
    let per_state = compose(renewal, &first);
    Ok((nocat, first, per_state, max_err))
}

/// `g_i + Σ_j ΔH_ij ⊛ g_j` for every initial state `i`.
pub(crate) fn compose(renewal: &RenewalSolution, first: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let d = first.len();
    (0..d)
        .map(|i| {
            let mut out = first[i].clone();
            for j in 0..d {
                let part = convolve_masses(&first[j], &renewal.h_masses(i, j));
                for (o, p) in out.iter_mut().zip(part) {
                    *o += p;
                }
            }
            out
        })
        .collect()
}

/// Residual of the unsolved renewal equation
/// `P̃_i(t) = g_i(t) + Σ_j ∫ P̃_j(t-u) dQ_ij(u)` at grid index `n`,
/// maximized over initial states.
pub fn integral_equation_residual(renewal: &RenewalSolution, sol: &CatastropheSolution, n: usize) -> f64 {
    let d = sol.per_state.len();
    let mut worst = 0.0f64;
    for i in 0..d {
        let mut rhs = sol.first_cycle[i][n];
        for j in 0..d {
            let q = &renewal.q_kernel[i][j];
            for k in 0..=n {
                let mass = if k == 0 { q[0] } else { q[k] - q[k - 1] };
                if mass != 0.0 {
                    rhs += sol.per_state[j][n - k] * mass.max(0.0);
                }
            }
        }
        worst = worst.max((rhs - sol.per_state[i][n]).norm());
    }
    worst
}

/// `Σ_j (ρ_j / Σ ρ η̄) [∫_0^∞ (1 - F_j(u)) P̃̃_j(u) du + r_j]`, where `r_j`
/// is the mean repair following a sojourn in `j`. For the absorbing
/// environment the limit `lim P̃̃(t)` is returned.
///
/// Returns `(value, truncation bound, max ODE error)`.
pub fn stationary_with_catastrophes(
    model: &Model,
    point: &TransformPoint,
    step: f64,
    policy: ErrorPolicy,
) -> Result<(Complex64, f64, f64)> {
    let env = model.environment();
    if env.is_absorbing() {
        return absorbing_limit(model.state(0), point, step, policy);
    }
    let d = env.states();
    let eta = env.cycle_means();
    let (rho, _) = crate::environment::stationary_weights(&env.embedded_chain(), &eta)?;
    let norm: f64 = rho.iter().zip(&eta).map(|(r, e)| r * e).sum();
    let mut eps = TAIL_EPS;
    loop {
        let mut value = c(0.0);
        let mut bound = 0.0;
        let mut max_err = 0.0f64;
        for j in 0..d {
            let w = rho[j] / norm;
            if w == 0.0 {
                continue;
            }
            let t_end = env.sojourn_tail_point(j, eps);
            let cells = cells_for(step, t_end);
            let surv = |t: f64| env.sojourn_survival(j, t);
            let sp = state_pgf(model.state(j), point, step, 0, cells, Some(&surv), policy)?;
            max_err = max_err.max(sp.max_error);
            value += (sp.integral + env.repair_after(j)) * w;
            let horizon = cells as f64 * step;
            bound += w * (env.sojourn_mean(j) - env.sojourn_integrated_survival(j, horizon)).max(0.0);
        }
        if bound <= TRUNCATION_REL * value.norm() + 1e-14 {
            return Ok((value, bound, max_err));
        }
        if eps < 1e-15 {
            return Err(Error::Horizon(format!(
                "truncation bound {bound:.3e} exceeds {TRUNCATION_REL:e} of the stationary value {:.6e}",
                value.norm()
            )));
        }
        eps *= 1e-2;
    }
}

/// `lim_{t→∞} π Ã(t) e` for a state that is never left.
fn absorbing_limit(
    state: &StateModel,
    point: &TransformPoint,
    step: f64,
    policy: ErrorPolicy,
) -> Result<(Complex64, f64, f64)> {
    let served_trivial = point.z2.iter().all(|z| *z == c(1.0)) && point.s2.iter().all(|s| s.norm() == 0.0);
    if !served_trivial {
        return Err(Error::Unsupported(
            "served-customer marks have no stationary limit without catastrophes".into(),
        ));
    }
    let lambda: f64 = state.rates().iter().sum();
    // Distance of the transform from its limit is at most
    // Σ λ_r |1 - z_r C̃_r| ∫_T^∞ (1 - B_r).
    let mut eps = 1e-10;
    loop {
        let t_end = state.service_tail_point(eps);
        let bound: f64 = state
            .service()
            .iter()
            .zip(state.rates())
            .map(|(b, l)| 2.0 * l * (b.mean() - b.integrated_survival(t_end)).max(0.0))
            .sum();
        if bound <= 1e-12 || eps < 1e-15 || lambda == 0.0 {
            let cells = cells_for(step, t_end.max(step));
            let sp = state_pgf(state, point, step, 0, cells, None, policy)?;
            return Ok((sp.end_value, bound, sp.max_error));
        }
        eps *= 1e-2;
    }
}

/// Transient composition, stationary value and their diagnostics.
pub fn analyze(
    model: &Model,
    renewal: &RenewalSolution,
    grid: &TimeGrid,
    point: &TransformPoint,
    policy: ErrorPolicy,
) -> Result<CatastropheSolution> {
    let (no_catastrophe, first_cycle, per_state, err1) =
        transient_with_catastrophes(model, renewal, grid, point, policy)?;
    let p0 = model.environment().initial();
    let transient = (0..grid.len())
        .map(|n| per_state.iter().zip(p0).map(|(v, p)| v[n] * *p).sum())
        .collect();
    let (stationary, truncation_bound, err2) = stationary_with_catastrophes(model, point, grid.step(), policy)?;
    Ok(CatastropheSolution {
        grid: *grid,
        no_catastrophe,
        first_cycle,
        per_state,
        transient,
        stationary,
        truncation_bound,
        max_ode_error: err1.max(err2),
    })
}

/// Step no larger than `step` that divides it and resolves `e^{-σt}`.
fn transform_step(step: f64, rate: f64) -> f64 {
    let target = 0.02 / rate.max(1e-12);
    if target >= step {
        step
    } else {
        step / (step / target).ceil()
    }
}

/// `∫_0^∞ e^{-σt} π Ã(t) e dt` for each `σ` (all with `Re σ > 0`), by
/// integrating the transform and the exponentially weighted accumulators
/// together.
pub fn laplace_no_catastrophe(
    state: &StateModel,
    point: &TransformPoint,
    sigmas: &[Complex64],
    step: f64,
    policy: ErrorPolicy,
) -> Result<Vec<Complex64>> {
    if sigmas.iter().any(|s| !(s.re > 0.0)) {
        return Err(Error::Domain("Laplace arguments need a positive real part".into()));
    }
    let min_re = sigmas.iter().map(|s| s.re).fold(f64::INFINITY, f64::min);
    let max_abs = sigmas.iter().map(|s| s.norm()).fold(0.0, f64::max);
    let h = transform_step(step, max_abs);
    // |tail| <= e^{-Re σ T} / Re σ.
    let t_end = ((1.0 / (1e-13 * min_re)).ln() / min_re).max(h);
    let rate = RateFunction::new(state, point)?;
    let m = rate.order();
    let pi = state.pi().to_vec();
    let mut out = vec![c(0.0); sigmas.len()];
    integrate(
        |t, y| {
            let p: Complex64 = (0..m).map(|i| y.mats[0][(i, 0)] * pi[i]).sum();
            OdeState::new(
                vec![rate.eval(t) * &y.mats[0]],
                sigmas.iter().map(|s| (-s * t).exp() * p).collect(),
            )
        },
        OdeState::new(vec![CMatrix::from_element(m, 1, c(1.0))], vec![c(0.0); sigmas.len()]),
        h,
        cells_for(h, t_end),
        policy,
        |_, y| out.copy_from_slice(&y.scalars),
    )?;
    Ok(out)
}

/// Laplace transform in `t` of the transient transform for an environment
/// whose sojourns are all exponential (rates `v_i`):
/// `P̃(s, i) = G_i(s) + Σ_j Ĥ_ij(s) G_j(s)` with `Ĥ = (I - Q̂)^{-1} Q̂` the
/// Laplace–Stieltjes transform of the renewal matrix and
/// `G_j(s) = L[P̃̃_j](s + v_j) + L[F_j - Σ_k Q_jk](s)`.
pub fn exponential_environment_lt(
    model: &Model,
    point: &TransformPoint,
    s: Complex64,
    step: f64,
    policy: ErrorPolicy,
) -> Result<Vec<Complex64>> {
    if !(s.re > 0.0) {
        return Err(Error::Domain(format!("Laplace argument needs Re(s) > 0, got {s}")));
    }
    let env = model.environment();
    let d = env.states();
    let mut rates = Vec::with_capacity(d);
    for i in 0..d {
        let mut v = None;
        for e in env.kernel()[i].iter().filter(|e| e.weight > 0.0) {
            match e.law {
                crate::distributions::DistributionLaw::Exponential { rate } => {
                    if v.is_some_and(|x: f64| (x - rate).abs() > 1e-12 * rate) {
                        return Err(Error::Unsupported(format!(
                            "state {i} has sojourn rates depending on the next state"
                        )));
                    }
                    v = Some(rate);
                }
                _ => {
                    return Err(Error::Unsupported(format!(
                        "state {i} has a non-exponential sojourn law"
                    )))
                }
            }
        }
        rates.push(v.unwrap_or(0.0));
    }
    let mut g = Vec::with_capacity(d);
    for j in 0..d {
        let lt = laplace_no_catastrophe(model.state(j), point, &[s + rates[j]], step, policy)?[0];
        let mut repair = c(0.0);
        for (k, e) in env.kernel()[j].iter().enumerate() {
            if e.weight > 0.0 {
                let t_hat = e.law.lst(s)?;
                let u_hat = env.repair()[k].lst(s)?;
                repair += t_hat * (c(1.0) - u_hat) * e.weight / s;
            }
        }
        g.push(lt + repair);
    }
    let mut q_hat = CMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let e = &env.kernel()[i][j];
            if e.weight > 0.0 {
                q_hat[(i, j)] = e.law.lst(s)? * env.repair()[j].lst(s)? * e.weight;
            }
        }
    }
    let inv = (CMatrix::identity(d, d) - &q_hat)
        .try_inverse()
        .ok_or_else(|| Error::Numerical(format!("I - Q̂(s) is singular at s = {s}")))?;
    let h_hat = inv * q_hat;
    Ok((0..d)
        .map(|i| g[i] + (0..d).map(|j| h_hat[(i, j)] * g[j]).sum::<Complex64>())
        .collect())
}

/// Single-state model hit by catastrophes at rate `ν` with no repair.
#[derive(Debug, Clone)]
pub struct PoissonCatastrophe {
    pub nu: f64,
    /// `ν L[P̃̃](ν)`.
    pub stationary: Complex64,
    state: StateModel,
    point: TransformPoint,
    step: f64,
}

impl PoissonCatastrophe {
    /// `L[P̃](s) = L[P̃̃](s + ν) (1 + ν / s)`.
    pub fn lt(&self, s: f64) -> Result<Complex64> {
        if !(s > 0.0) {
            return Err(Error::Domain(format!("Laplace argument must be positive, got {s}")));
        }
        let v = laplace_no_catastrophe(&self.state, &self.point, &[c(s + self.nu)], self.step, ErrorPolicy::default())?[0];
        Ok(v * (1.0 + self.nu / s))
    }
}

pub fn poisson_catastrophe(
    state: &StateModel,
    point: &TransformPoint,
    nu: f64,
    step: f64,
    policy: ErrorPolicy,
) -> Result<PoissonCatastrophe> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::Domain(format!("catastrophe rate must be positive, got {nu}")));
    }
    let lt = laplace_no_catastrophe(state, point, &[c(nu)], step, policy)?[0];
    Ok(PoissonCatastrophe {
        nu,
        stationary: lt * nu,
        state: state.clone(),
        point: point.clone(),
        step,
    })
}

/// Time-domain route to `L[P̃](s)` under Poisson catastrophes: with the
/// exact renewal density `ν`,
/// `P̃(t) = e^{-νt} P̃̃(t) + ν ∫_0^t e^{-νv} P̃̃(v) dv`,
/// and every integral is carried as an extra ODE component.
pub fn laplace_with_poisson_catastrophes(
    state: &StateModel,
    point: &TransformPoint,
    nu: f64,
    s_values: &[f64],
    step: f64,
    policy: ErrorPolicy,
) -> Result<Vec<Complex64>> {
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("catastrophe rate must be positive, got {nu}")));
    }
    if s_values.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Domain("Laplace arguments must be positive".into()));
    }
    let s_min = s_values.iter().copied().fold(f64::INFINITY, f64::min);
    let s_max = s_values.iter().copied().fold(nu, f64::max);
    let h = transform_step(step, s_max + nu);
    let t_end = ((1.0 / (1e-13 * s_min)).ln() / s_min).max(h);
    let rate = RateFunction::new(state, point)?;
    let m = rate.order();
    let pi = state.pi().to_vec();
    let mut out = vec![c(0.0); s_values.len()];
    integrate(
        |t, y| {
            let p: Complex64 = (0..m).map(|i| y.mats[0][(i, 0)] * pi[i]).sum();
            let decay = (-nu * t).exp();
            let with_cat = p * decay + y.scalars[0] * nu;
            let mut scal = vec![p * decay];
            scal.extend(s_values.iter().map(|s| with_cat * (-s * t).exp()));
            OdeState::new(vec![rate.eval(t) * &y.mats[0]], scal)
        },
        OdeState::new(
            vec![CMatrix::from_element(m, 1, c(1.0))],
            vec![c(0.0); s_values.len() + 1],
        ),
        h,
        cells_for(h, t_end),
        policy,
        |_, y| out.copy_from_slice(&y.scalars[1..]),
    )?;
    Ok(out)
}

/// Poisson probabilities `P(N = n)` for `n = 0..=cutoff` at mean `a`.
pub fn poisson_pmf(a: f64, cutoff: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(cutoff + 1);
    let mut p = (-a).exp();
    for n in 0..=cutoff {
        out.push(p);
        p *= a / (n as f64 + 1.0);
    }
    out
}

fn require_poisson(model: &Model) -> Result<()> {
    for (i, s) in model.states().iter().enumerate() {
        if !s.is_poisson() {
            return Err(Error::Unsupported(format!(
                "explicit count distributions need Poisson input; state {i} has a general MAP"
            )));
        }
    }
    Ok(())
}

/// Per-type Poisson means in state `j` after an age `u` in the cycle:
/// in service `a_jr(u) = α_jr ∫_0^u (1 - B_jr)`, served `α_jr u - a_jr(u)`.
pub(crate) fn poisson_means(state: &StateModel, u: f64) -> (Vec<f64>, Vec<f64>) {
    let present: Vec<f64> = state
        .rates()
        .iter()
        .zip(state.service())
        .map(|(a, b)| a * b.integrated_survival(u))
        .collect();
    let served = state
        .rates()
        .iter()
        .zip(&present)
        .map(|(a, p)| (a * u - p).max(0.0))
        .collect();
    (present, served)
}

fn pmf(a: f64, n: usize) -> f64 {
    if a == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (n as f64 * a.ln() - a - (1..=n).map(|k| (k as f64).ln()).sum::<f64>()).exp()
}

/// `lim P(N = n, M = m)` weighted by resource transforms, for per-state
/// Poisson input:
/// `Σ_j (ρ_j/Σρη̄) [∫ (1 - F_j(u)) Π_r p(n_r; a_jr) C̃^{n_r} p(m_r; b_jr) G̃^{m_r} du + 1{n=m=0} r_j]`.
/// When `served` is `None` the served counts are summed out.
pub fn stationary_counts(
    model: &Model,
    n: &[usize],
    served: Option<&[usize]>,
    s1: &[f64],
    s2: &[f64],
    step: f64,
) -> Result<f64> {
    require_poisson(model)?;
    let k = model.types();
    if n.len() != k || served.is_some_and(|m| m.len() != k) {
        return Err(Error::Domain(format!("count vectors need {k} entries")));
    }
    if s1.len() != model.resources() || s2.len() != model.resources() || s1.iter().chain(s2).any(|s| !(*s >= 0.0)) {
        return Err(Error::Domain("resource transform arguments must be nonnegative and match the resource dimension".into()));
    }
    let env = model.environment();
    let term = |state: &StateModel, u: f64| -> Result<f64> {
        let (present, done) = poisson_means(state, u);
        let mut v = 1.0;
        for r in 0..k {
            let cs: f64 = state.arrival_resources()[r]
                .lst(&s1.iter().map(|&x| c(x)).collect::<Vec<_>>())?
                .re;
            v *= pmf(present[r], n[r]) * cs.powi(n[r] as i32);
            if let Some(m) = served {
                let gs: f64 = state.departure_resources()[r]
                    .lst(&s2.iter().map(|&x| c(x)).collect::<Vec<_>>())?
                    .re;
                v *= pmf(done[r], m[r]) * gs.powi(m[r] as i32);
            }
        }
        Ok(v)
    };
    let empty = n.iter().all(|&x| x == 0) && served.is_none_or(|m| m.iter().all(|&x| x == 0));
    if env.is_absorbing() {
        if served.is_some_and(|m| m.iter().any(|&x| x > 0)) || s2.iter().any(|&s| s > 0.0) {
            return Err(Error::Unsupported("served counts have no limit without catastrophes".into()));
        }
        let state = model.state(0);
        let t = state.service_tail_point(1e-14);
        let mut v = 1.0;
        for r in 0..k {
            let a = state.rates()[r] * state.service()[r].integrated_survival(t.max(0.0) + 1.0);
            let cs = state.arrival_resources()[r].lst(&s1.iter().map(|&x| c(x)).collect::<Vec<_>>())?.re;
            v *= pmf(a, n[r]) * cs.powi(n[r] as i32);
        }
        return Ok(v);
    }
    let eta = env.cycle_means();
    let (rho, _) = crate::environment::stationary_weights(&env.embedded_chain(), &eta)?;
    let norm: f64 = rho.iter().zip(&eta).map(|(r, e)| r * e).sum();
    let mut total = 0.0;
    for j in 0..env.states() {
        let w = rho[j] / norm;
        let state = model.state(j);
        let t_end = cells_for(step, env.sojourn_tail_point(j, 1e-14)) as f64 * step;
        let mut err = None;
        let integral = gauss_cells(
            |u| match term(state, u) {
                Ok(v) => env.sojourn_survival(j, u) * v,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            },
            step,
            t_end,
        );
        if let Some(e) = err {
            return Err(e);
        }
        total += w * integral;
        if empty {
            total += w * env.repair_after(j);
        }
    }
    Ok(total)
}

/// Stationary joint distribution of in-service counts for per-state
/// Poisson input, on the box `n_r <= cutoff`, flattened with type 0 the
/// slowest index.
pub fn stationary_count_distribution(model: &Model, cutoff: usize, step: f64) -> Result<Vec<f64>> {
    require_poisson(model)?;
    let k = model.types();
    let size = (cutoff + 1).pow(k as u32);
    let env = model.environment();
    let mut out = vec![0.0; size];
    let add_product = |out: &mut [f64], pmfs: &[Vec<f64>], weight: f64| {
        for (idx, slot) in out.iter_mut().enumerate() {
            let mut rest = idx;
            let mut v = weight;
            for r in (0..k).rev() {
                v *= pmfs[r][rest % (cutoff + 1)];
                rest /= cutoff + 1;
            }
            *slot += v;
        }
    };
    if env.is_absorbing() {
        let state = model.state(0);
        let pmfs: Vec<Vec<f64>> = (0..k)
            .map(|r| poisson_pmf(state.rates()[r] * state.service()[r].mean(), cutoff))
            .collect();
        add_product(&mut out, &pmfs, 1.0);
        return Ok(out);
    }
    let eta = env.cycle_means();
    let (rho, _) = crate::environment::stationary_weights(&env.embedded_chain(), &eta)?;
    let norm: f64 = rho.iter().zip(&eta).map(|(r, e)| r * e).sum();
    const NODES: [f64; 3] = [0.5 - 0.387_298_334_620_741_7, 0.5, 0.5 + 0.387_298_334_620_741_7];
    const WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
    for j in 0..env.states() {
        let w = rho[j] / norm;
        let state = model.state(j);
        let cells = cells_for(step, env.sojourn_tail_point(j, 1e-14));
        for cell in 0..cells {
            let a = cell as f64 * step;
            for (x, wt) in NODES.iter().zip(WEIGHTS) {
                let u = a + x * step;
                let weight = w * wt * step * env.sojourn_survival(j, u);
                if weight == 0.0 {
                    continue;
                }
                let (present, _) = poisson_means(state, u);
                let pmfs: Vec<Vec<f64>> = present.iter().map(|&m| poisson_pmf(m, cutoff)).collect();
                add_product(&mut out, &pmfs, weight);
            }
        }
        out[0] += w * env.repair_after(j);
    }
    Ok(out)
}

/// Upper bound on `∫ (1 - F) P̃̃` beyond the truncation point, for a
/// survival function with known mean and integrated survival.
pub fn survival_tail(mean: f64, integrated: f64) -> f64 {
    (mean - integrated).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{DistributionLaw, ResourceVectorLaw, SubDistribution};
    use crate::environment::SemiMarkovEnvironment;
    use crate::map_core::{superpose, SingleMap};

    fn res() -> ResourceVectorLaw {
        ResourceVectorLaw::new(vec![DistributionLaw::exponential(1.0).unwrap()]).unwrap()
    }

    fn poisson_state(lambda: f64, b: DistributionLaw) -> StateModel {
        StateModel::new(
            superpose(&[SingleMap::poisson(lambda).unwrap()]).unwrap(),
            vec![b],
            vec![res()],
            vec![res()],
        )
        .unwrap()
    }

    fn single_env(sojourn: DistributionLaw, repair: DistributionLaw) -> SemiMarkovEnvironment {
        SemiMarkovEnvironment::new(
            vec!["a".into()],
            vec![vec![SubDistribution::new(1.0, sojourn).unwrap()]],
            vec![repair],
            vec![1.0],
        )
        .unwrap()
    }

    fn two_state(same: bool) -> Model {
        let law = DistributionLaw::erlang(2, 1.0).unwrap();
        let env = SemiMarkovEnvironment::new(
            vec!["a".into(), "b".into()],
            vec![
                vec![
                    SubDistribution::new(0.4, law.clone()).unwrap(),
                    SubDistribution::new(0.6, law.clone()).unwrap(),
                ],
                vec![
                    SubDistribution::new(0.6, law.clone()).unwrap(),
                    SubDistribution::new(0.4, law.clone()).unwrap(),
                ],
            ],
            vec![DistributionLaw::exponential(4.0).unwrap(); 2],
            vec![0.5, 0.5],
        )
        .unwrap();
        let b2 = if same {
            DistributionLaw::exponential(1.0).unwrap()
        } else {
            DistributionLaw::deterministic(0.5).unwrap()
        };
        Model::new(
            env,
            vec![
                poisson_state(2.0, DistributionLaw::exponential(1.0).unwrap()),
                poisson_state(if same { 2.0 } else { 1.0 }, b2),
            ],
        )
        .unwrap()
    }

    #[test]
    fn normalization_is_exact() {
        let model = two_state(false);
        let grid = TimeGrid::new(0.01, 4.0).unwrap();
        let renewal = RenewalSolution::compute(model.environment(), &grid).unwrap();
        let sol = analyze(&model, &renewal, &grid, &TransformPoint::normalization(1, 1), ErrorPolicy::default()).unwrap();
        for v in sol.per_state.iter().flatten() {
            assert!((v - c(1.0)).norm() < 1e-9, "{v}");
        }
        assert!((sol.stationary - c(1.0)).norm() < 1e-6);
    }

    #[test]
    fn renewal_equation_residual_small() {
        let model = two_state(false);
        let grid = TimeGrid::new(0.01, 4.0).unwrap();
        let renewal = RenewalSolution::compute(model.environment(), &grid).unwrap();
        let p = TransformPoint::queue_real(0.3, 1, 1);
        let sol = analyze(&model, &renewal, &grid, &p, ErrorPolicy::default()).unwrap();
        for n in [37, 120, 250, 399] {
            assert!(integral_equation_residual(&renewal, &sol, n) < 1e-5);
        }
    }

    #[test]
    fn absorbing_environment_reduces_to_no_catastrophe() {
        let model = Model::new(
            SemiMarkovEnvironment::absorbing(),
            vec![poisson_state(2.0, DistributionLaw::exponential(1.0).unwrap())],
        )
        .unwrap();
        let grid = TimeGrid::new(0.01, 2.0).unwrap();
        let renewal = RenewalSolution::compute(model.environment(), &grid).unwrap();
        let p = TransformPoint::queue_real(0.0, 1, 1);
        let sol = analyze(&model, &renewal, &grid, &p, ErrorPolicy::default()).unwrap();
        for (a, b) in sol.transient.iter().zip(&sol.no_catastrophe[0]) {
            assert_eq!(a, b);
        }
        let want = (-2.0f64).exp();
        assert!((sol.stationary.re - want).abs() < 1e-9);
    }

    #[test]
    fn deterministic_cycle_stationary_value() {
        let tau = 2.0;
        let model = Model::new(
            single_env(DistributionLaw::deterministic(tau).unwrap(), DistributionLaw::deterministic(0.0).unwrap()),
            vec![poisson_state(2.0, DistributionLaw::exponential(1.0).unwrap())],
        )
        .unwrap();
        let p = TransformPoint::queue_real(0.4, 1, 1);
        let (v, _, _) = stationary_with_catastrophes(&model, &p, 0.01, ErrorPolicy::default()).unwrap();
        let want = gauss_cells(|u| (-2.0 * 0.6 * (1.0 - (-u).exp())).exp(), 0.001, tau) / tau;
        assert!((v.re - want).abs() < 1e-9);
        let n0 = stationary_counts(&model, &[0], None, &[0.0], &[0.0], 0.01).unwrap();
        let want = gauss_cells(|u| (-2.0 * (1.0 - (-u).exp())).exp(), 0.001, tau) / tau;
        assert!((n0 - want).abs() < 1e-9);
    }

    #[test]
    fn symmetric_environment_collapses() {
        let model = two_state(true);
        let single = Model::new(
            single_env(DistributionLaw::erlang(2, 1.0).unwrap(), DistributionLaw::exponential(4.0).unwrap()),
            vec![poisson_state(2.0, DistributionLaw::exponential(1.0).unwrap())],
        )
        .unwrap();
        let p = TransformPoint::queue_real(0.5, 1, 1);
        let a = stationary_with_catastrophes(&model, &p, 0.01, ErrorPolicy::default()).unwrap().0;
        let b = stationary_with_catastrophes(&single, &p, 0.01, ErrorPolicy::default()).unwrap().0;
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn poisson_catastrophe_identity_and_limits() {
        let st = poisson_state(2.0, DistributionLaw::exponential(1.0).unwrap());
        let p = TransformPoint::queue_real(0.0, 1, 1);
        let pc = poisson_catastrophe(&st, &p, 1.0, 0.01, ErrorPolicy::default()).unwrap();
        let want = gauss_cells(|x| (-x).exp() * (-2.0 * (1.0 - (-x).exp())).exp(), 0.001, 60.0);
        assert!((pc.stationary.re - want).abs() < 1e-8);
        let lhs = laplace_with_poisson_catastrophes(&st, &p, 1.0, &[0.5, 1.0, 2.0], 0.01, ErrorPolicy::default()).unwrap();
        for (s, l) in [0.5, 1.0, 2.0].iter().zip(lhs) {
            let rhs = pc.lt(*s).unwrap() * *s;
            assert!((l * *s - rhs).norm() < 1e-8);
        }
        let one = poisson_catastrophe(&st, &TransformPoint::normalization(1, 1), 1.0, 0.01, ErrorPolicy::default()).unwrap();
        assert!((one.stationary - c(1.0)).norm() < 1e-9);
        let fast = poisson_catastrophe(&st, &p, 2e4, 0.01, ErrorPolicy::default()).unwrap();
        assert!((fast.stationary - c(1.0)).norm() < 1e-3);
        assert!(poisson_catastrophe(&st, &p, 0.0, 0.01, ErrorPolicy::default()).is_err());
    }

    #[test]
    fn exponential_corollary_matches_poisson_identity() {
        let nu = 0.7;
        let model = Model::new(
            single_env(DistributionLaw::exponential(nu).unwrap(), DistributionLaw::deterministic(0.0).unwrap()),
            vec![poisson_state(2.0, DistributionLaw::exponential(1.0).unwrap())],
        )
        .unwrap();
        let p = TransformPoint::queue_real(0.2, 1, 1);
        let pc = poisson_catastrophe(model.state(0), &p, nu, 0.01, ErrorPolicy::default()).unwrap();
        for s in [0.5, 1.0, 2.0] {
            let v = exponential_environment_lt(&model, &p, c(s), 0.01, ErrorPolicy::default()).unwrap()[0];
            assert!((v - pc.lt(s).unwrap()).norm() < 1e-9);
        }
        let norm = exponential_environment_lt(&model, &TransformPoint::normalization(1, 1), c(1e-3), 0.01, ErrorPolicy::default()).unwrap();
        assert!((norm[0] * 1e-3 - c(1.0)).norm() < 1e-4);
    }

    #[test]
    fn vanishing_catastrophe_rate() {
        let model = Model::new(
            single_env(DistributionLaw::exponential(1e-8).unwrap(), DistributionLaw::exponential(1.0).unwrap()),
            vec![poisson_state(2.0, DistributionLaw::exponential(1.0).unwrap())],
        )
        .unwrap();
        let p = TransformPoint::queue_real(0.5, 1, 1);
        let s = c(1.0);
        let v = exponential_environment_lt(&model, &p, s, 0.01, ErrorPolicy::default()).unwrap()[0];
        let plain = laplace_no_catastrophe(model.state(0), &p, &[s], 0.01, ErrorPolicy::default()).unwrap()[0];
        assert!((v - plain).norm() < 1e-4);
    }

    #[test]
    fn count_distribution_normalizes() {
        let model = two_state(false);
        let dist = stationary_count_distribution(&model, 30, 0.01).unwrap();
        let total: f64 = dist.iter().sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
        let p3 = stationary_counts(&model, &[3], None, &[0.0], &[0.0], 0.01).unwrap();
        assert!((p3 - dist[3]).abs() < 1e-12);
    }

    #[test]
    fn silent_type_has_no_mass_above_zero() {
        let model = Model::new(
            single_env(DistributionLaw::exponential(1.0).unwrap(), DistributionLaw::deterministic(0.0).unwrap()),
            vec![poisson_state(2.0, DistributionLaw::exponential(1.0).unwrap()).clone()],
        )
        .unwrap();
        let silent = model.scale_arrivals(0.0);
        assert!(silent.is_err() || stationary_counts(&silent.unwrap(), &[1], None, &[0.0], &[0.0], 0.01).unwrap() == 0.0);
    }

    #[test]
    fn grid_mismatch_is_a_config_error() {
        let model = two_state(true);
        let grid = TimeGrid::new(0.01, 2.0).unwrap();
        let other = TimeGrid::new(0.02, 2.0).unwrap();
        let renewal = RenewalSolution::compute(model.environment(), &other).unwrap();
        let err = analyze(&model, &renewal, &grid, &TransformPoint::normalization(1, 1), ErrorPolicy::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn heavier_load_lowers_empty_transform() {
        let model = two_state(false);
        let grid = TimeGrid::new(0.02, 3.0).unwrap();
        let renewal = RenewalSolution::compute(model.environment(), &grid).unwrap();
        let p = TransformPoint::queue_real(0.3, 1, 1);
        let mut prev: Option<Vec<Complex64>> = None;
        for f in [0.5, 1.0, 2.0] {
            let m = model.scale_arrivals(f).unwrap();
            let sol = analyze(&m, &renewal, &grid, &p, ErrorPolicy::default()).unwrap();
            if let Some(prev) = &prev {
                for (a, b) in sol.transient.iter().zip(prev) {
                    assert!(a.re <= b.re + 1e-12);
                }
            }
            prev = Some(sol.transient);
        }
    }
}
