//! Performance measures: queue-length means and variances per type,
//! accumulated resource means, destroyed customers and stationary queue
//! sizes, plus the explicit count distributions of the Poisson case.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::catastrophe::{self, cells_for, poisson_pmf};
use crate::distributions::discrete_stieltjes;
use crate::environment::{stationary_weights, RenewalSolution, SemiMarkovEnvironment};
use crate::error::{Error, Result};
use crate::grid::{gauss_cells, TimeGrid};
use crate::linalg::{to_complex, CMatrix};
use crate::model::{Model, StateModel};
use crate::ode::{integrate, ErrorPolicy, OdeState};
use crate::transient::TransformPoint;

/// Inputs of one analytic run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisConfig {
    pub grid_step: f64,
    pub horizon: f64,
    pub t_points: Vec<f64>,
    pub z_points: Vec<f64>,
    pub cutoff: usize,
    pub tolerance: f64,
    pub enforce_tolerance: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            grid_step: 0.01,
            horizon: 5.0,
            t_points: vec![1.0, 2.0, 3.0],
            z_points: vec![0.0, 0.5],
            cutoff: 30,
            tolerance: 1e-6,
            enforce_tolerance: true,
        }
    }
}

impl AnalysisConfig {
    pub fn policy(&self) -> ErrorPolicy {
        ErrorPolicy {
            tolerance: self.tolerance,
            enforce: self.enforce_tolerance,
        }
    }

    /// Grid long enough for the horizon and every requested time.
    pub fn grid(&self) -> Result<TimeGrid> {
        let end = self.t_points.iter().copied().fold(self.horizon, f64::max);
        let grid = TimeGrid::new(self.grid_step, end)?;
        for &t in &self.t_points {
            grid.require_index(t)?;
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSummary {
    /// Values at the requested times.
    pub at: Vec<f64>,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceSummary {
    pub component: usize,
    pub at: Vec<f64>,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeMetrics {
    pub customer_type: usize,
    /// `ω_1r`.
    pub mean: CurveSummary,
    /// `Var_1r`.
    pub variance: CurveSummary,
    /// `δ_r` per resource component.
    pub resource_mean: Vec<ResourceSummary>,
    /// `L_qr` from the closed double integral.
    pub l_q: f64,
    /// Destroyed type-`r` customers per unit time.
    pub l_los: f64,
    /// Destroyed type-`r` customers per environment cycle.
    pub l_los_per_cycle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Totals {
    pub l_q: f64,
    pub l_los: f64,
    pub l_los_per_cycle: f64,
    /// `δ` per resource component, summed over types.
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PgfSummary {
    pub z: f64,
    pub at: Vec<f64>,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationBound {
    pub quantity: String,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub max_ode_error: f64,
    /// Largest `|P̃ - 1|` at the normalization point over the grid.
    pub normalization_transient: f64,
    /// `|P̃(∞) - 1|` at the normalization point.
    pub normalization_stationary: f64,
    /// Residual of the unsolved renewal equation at spot times.
    pub renewal_residual: f64,
    /// `max_r |L_qr - lim ω_1r|` between the two code paths.
    pub l_q_path_gap: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoissonCase {
    pub cutoff: usize,
    /// Joint stationary law on `n_r <= cutoff`, type 0 the slowest index.
    pub stationary: Vec<f64>,
    pub stationary_total: f64,
    /// Joint law at each requested time.
    pub transient: Vec<Vec<f64>>,
    /// `ω_1r` limits from the product form.
    pub mean_limit: Vec<f64>,
    pub l_los: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub types: usize,
    pub resources: usize,
    pub grid_step: f64,
    pub horizon: f64,
    pub t_points: Vec<f64>,
    pub per_type: Vec<TypeMetrics>,
    pub totals: Totals,
    pub pgf: Vec<PgfSummary>,
    pub truncation: Vec<TruncationBound>,
    pub diagnostics: Diagnostics,
    pub poisson: Option<PoissonCase>,
    #[serde(skip)]
    pub curves: Vec<Curve>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `(file name, contents)` for every full-grid curve.
    pub fn curve_csvs(&self) -> Vec<(String, String)> {
        self.curves
            .iter()
            .map(|c| {
                let mut out = String::from("t,value\n");
                for (n, v) in c.values.iter().enumerate() {
                    let _ = writeln!(out, "{},{}", n as f64 * self.grid_step, v);
                }
                (format!("{}.csv", c.name), out)
            })
            .collect()
    }

    /// Flat `(key, value)` list shared with the simulator estimates.
    pub fn metric_values(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for tm in &self.per_type {
            let r = tm.customer_type;
            for (t, v) in self.t_points.iter().zip(&tm.mean.at) {
                out.push((format!("queue_mean.type{r}@t={t}"), *v));
            }
            for (t, v) in self.t_points.iter().zip(&tm.variance.at) {
                out.push((format!("queue_var.type{r}@t={t}"), *v));
            }
            for rs in &tm.resource_mean {
                for (t, v) in self.t_points.iter().zip(&rs.at) {
                    out.push((format!("resource_mean.type{r}.comp{}@t={t}", rs.component), *v));
                }
            }
            out.push((format!("L_q.type{r}"), tm.l_q));
            out.push((format!("queue_var.type{r}"), tm.variance.limit));
            out.push((format!("L_los.type{r}"), tm.l_los));
            for rs in &tm.resource_mean {
                out.push((format!("delta.type{r}.comp{}", rs.component), rs.limit));
            }
        }
        for p in &self.pgf {
            for (t, v) in self.t_points.iter().zip(&p.at) {
                out.push((format!("pgf.z={}@t={t}", p.z), *v));
            }
            out.push((format!("pgf.z={}", p.z), p.limit));
        }
        out
    }
}

/// Absolutely continuous density and atoms of the working sojourn in `i`.
fn sojourn_parts(env: &SemiMarkovEnvironment, i: usize) -> (impl Fn(f64) -> f64 + '_, Vec<(f64, f64)>) {
    let atoms = env.kernel()[i]
        .iter()
        .filter(|e| e.weight > 0.0)
        .filter_map(|e| e.law.atom().map(|(x, m)| (x, m * e.weight)))
        .collect();
    let pdf = move |t: f64| {
        env.kernel()[i]
            .iter()
            .filter(|e| e.weight > 0.0)
            .map(|e| e.weight * e.law.pdf(t))
            .sum()
    };
    (pdf, atoms)
}

struct Weighting<'a> {
    survival: &'a dyn Fn(f64) -> f64,
    pdf: &'a dyn Fn(f64) -> f64,
    atoms: Vec<(usize, f64)>,
}

/// Phase-contracted moment curves of one state, `φ1_r = π v1_r` and
/// `φ2_r = π v2_r` with
/// `v1' = D v1 + (1 - B_r) D_r e`, `v2' = D v2 + 2 (1 - B_r) D_r v1`.
struct StateMoments {
    phi1: Vec<Vec<f64>>,
    phi2: Vec<Vec<f64>>,
    /// `∫ (1 - F) φ1`, `∫ (1 - F) φ2` and `∫ φ1 dF` per type.
    surv1: Vec<f64>,
    surv2: Vec<f64>,
    loss: Vec<f64>,
    end1: Vec<f64>,
    end2: Vec<f64>,
    sup2: Vec<f64>,
    max_error: f64,
}

fn state_moments(
    state: &StateModel,
    step: f64,
    record: usize,
    cells: usize,
    weighting: Option<&Weighting>,
    policy: ErrorPolicy,
) -> Result<StateMoments> {
    let k = state.types();
    let m = state.map().order();
    let d = to_complex(&state.map().generator());
    let marks: Vec<CMatrix> = state.map().marks().iter().map(to_complex).collect();
    let e = CMatrix::from_element(m, 1, Complex64::new(1.0, 0.0));
    let dre: Vec<CMatrix> = marks.iter().map(|dr| dr * &e).collect();
    let pi = state.pi().to_vec();
    let dot = |v: &CMatrix| -> f64 { (0..m).map(|i| v[(i, 0)].re * pi[i]).sum() };
    let service = state.service();

    let mut out = StateMoments {
        phi1: vec![Vec::with_capacity(record); k],
        phi2: vec![Vec::with_capacity(record); k],
        surv1: vec![0.0; k],
        surv2: vec![0.0; k],
        loss: vec![0.0; k],
        end1: vec![0.0; k],
        end2: vec![0.0; k],
        sup2: vec![0.0; k],
        max_error: 0.0,
    };
    let mut atom_loss = vec![0.0; k];
    let report = integrate(
        |t, y| {
            let (w, p) = weighting.map_or((0.0, 0.0), |wt| ((wt.survival)(t), (wt.pdf)(t)));
            let mut mats = Vec::with_capacity(2 * k);
            let mut scalars = Vec::with_capacity(3 * k);
            for r in 0..k {
                let sb = Complex64::new(service[r].survival(t), 0.0);
                let v1 = &y.mats[2 * r];
                let v2 = &y.mats[2 * r + 1];
                mats.push(&d * v1 + &dre[r] * sb);
                mats.push(&d * v2 + &marks[r] * v1 * (sb * 2.0));
                let f1 = Complex64::new(dot(v1), 0.0);
                scalars.push(f1 * w);
                scalars.push(Complex64::new(dot(v2) * w, 0.0));
                scalars.push(f1 * p);
            }
            OdeState::new(mats, scalars)
        },
        OdeState::new(vec![CMatrix::zeros(m, 1); 2 * k], vec![Complex64::new(0.0, 0.0); 3 * k]),
        step,
        cells.max(record.saturating_sub(1)),
        policy,
        |n, y| {
            for r in 0..k {
                let f1 = dot(&y.mats[2 * r]);
                let f2 = dot(&y.mats[2 * r + 1]);
                if n < record {
                    out.phi1[r].push(f1);
                    out.phi2[r].push(f2);
                }
                out.sup2[r] = out.sup2[r].max(f2.abs());
                out.end1[r] = f1;
                out.end2[r] = f2;
                out.surv1[r] = y.scalars[3 * r].re;
                out.surv2[r] = y.scalars[3 * r + 1].re;
                out.loss[r] = y.scalars[3 * r + 2].re;
                if let Some(wt) = weighting {
                    for &(idx, mass) in &wt.atoms {
                        if idx == n {
                            atom_loss[r] += mass * f1;
                        }
                    }
                }
            }
        },
    )?;
    for r in 0..k {
        out.loss[r] += atom_loss[r];
    }
    out.max_error = report.max_error;
    Ok(out)
}

/// `Σ_i p⁰_i [x_i(n) + Σ_j ΔH_ij ⊛ x_j](n)` with `x_j = (1 - F_j) y_j`.
fn compose_overall(renewal: &RenewalSolution, p0: &[f64], mixed: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<f64> {
    let d = y.len();
    let len = y[0].len();
    let first: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..len).map(|n| (1.0 - renewal.f[j][n]) * y[j][n]).collect())
        .collect();
    let mut out: Vec<f64> = (0..len).map(|n| (0..d).map(|i| p0[i] * first[i][n]).sum()).collect();
    for j in 0..d {
        for (o, v) in out.iter_mut().zip(discrete_stieltjes(&first[j], &mixed[j])) {
            *o += v;
        }
    }
    out
}

/// `Σ_i p⁰_i ΔH_ij` for every `j`.
fn mixed_masses(renewal: &RenewalSolution, p0: &[f64]) -> Vec<Vec<f64>> {
    let d = p0.len();
    (0..d)
        .map(|j| {
            let mut acc = vec![0.0; renewal.grid.len()];
            for (i, &p) in p0.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (a, m) in acc.iter_mut().zip(renewal.h_masses(i, j)) {
                    *a += p * m;
                }
            }
            acc
        })
        .collect()
}

/// Stationary weights `ρ_j / Σ ρ η̄` and the embedded-chain `ρ`.
fn time_weights(env: &SemiMarkovEnvironment) -> Result<(Vec<f64>, Vec<f64>)> {
    let eta = env.cycle_means();
    let (rho, _) = stationary_weights(&env.embedded_chain(), &eta)?;
    let norm: f64 = rho.iter().zip(&eta).map(|(r, e)| r * e).sum();
    Ok((rho.iter().map(|r| r / norm).collect(), rho))
}

/// Truncation point of state `j` for the improper time integrals.
fn state_horizon(env: &SemiMarkovEnvironment, j: usize, step: f64) -> f64 {
    let mean = env.sojourn_mean(j);
    let mut eps = catastrophe::TAIL_EPS;
    loop {
        let t = cells_for(step, env.sojourn_tail_point(j, eps)) as f64 * step;
        if mean - env.sojourn_integrated_survival(j, t) <= 1e-10 * mean || eps < 1e-15 {
            return t;
        }
        eps *= 1e-2;
    }
}

/// `L_qr = Σ_j w_j λ_jr ∫_0^∞ (1 - F_j(u)) ∫_0^u (1 - B_jr(x)) dx du`.
pub fn steady_queue(model: &Model, step: f64) -> Result<Vec<f64>> {
    let env = model.environment();
    let k = model.types();
    if env.is_absorbing() {
        let s = model.state(0);
        return Ok((0..k).map(|r| s.rates()[r] * s.service()[r].mean()).collect());
    }
    let (w, _) = time_weights(env)?;
    let mut out = vec![0.0; k];
    for j in 0..env.states() {
        let t_end = state_horizon(env, j, step);
        let s = model.state(j);
        for r in 0..k {
            if s.rates()[r] == 0.0 {
                continue;
            }
            let b = &s.service()[r];
            out[r] += w[j]
                * s.rates()[r]
                * gauss_cells(|u| env.sojourn_survival(j, u) * b.integrated_survival(u), step, t_end);
        }
    }
    Ok(out)
}

/// Runs the whole analytic pipeline for `model`.
pub fn analyze(model: &Model, config: &AnalysisConfig) -> Result<MetricsReport> {
    if config.cutoff == 0 {
        return Err(Error::invalid("invalid-parameter", "analysis.cutoff", "cutoff must be positive"));
    }
    for &z in &config.z_points {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::invalid(
                "invalid-parameter",
                "analysis.z_points",
                format!("z points must lie in [0, 1], got {z}"),
            ));
        }
    }
    let grid = config.grid()?;
    let step = grid.step();
    for b in model.breakpoints() {
        if !grid.aligned(b) {
            return Err(Error::Config(format!(
                "distribution kink at {b} is not a multiple of the grid step {step}"
            )));
        }
    }
    let policy = config.policy();
    let env = model.environment();
    let d = env.states();
    let k = model.types();
    let kres = model.resources();
    let n = grid.len();
    let renewal = RenewalSolution::compute(env, &grid)?;
    let mut warnings = renewal.warnings.clone();
    let p0 = env.initial().to_vec();
    let t_idx: Vec<usize> = config.t_points.iter().map(|&t| grid.require_index(t)).collect::<Result<_>>()?;

    // Per-state moment curves and accumulators.
    let absorbing = env.is_absorbing();
    let horizons: Vec<f64> = (0..d)
        .map(|j| {
            if absorbing {
                model.state(j).service_tail_point(1e-13).max(step)
            } else {
                state_horizon(env, j, step)
            }
        })
        .collect();
    let moments: Vec<StateMoments> = (0..d)
        .into_par_iter()
        .map(|j| {
            let cells = cells_for(step, horizons[j]);
            if absorbing {
                return state_moments(model.state(j), step, n, cells, None, policy);
            }
            let (pdf, atoms) = sojourn_parts(env, j);
            let mut atom_idx = Vec::new();
            for (x, mass) in atoms {
                let idx = (x / step).round() as usize;
                if !grid.aligned(x) {
                    return Err(Error::Config(format!("sojourn atom at {x} is not on the grid")));
                }
                atom_idx.push((idx, mass));
            }
            let surv = |t: f64| env.sojourn_survival(j, t);
            let wt = Weighting {
                survival: &surv,
                pdf: &pdf,
                atoms: atom_idx,
            };
            state_moments(model.state(j), step, n, cells, Some(&wt), policy)
        })
        .collect::<Result<_>>()?;
    let mut max_error = moments.iter().map(|m| m.max_error).fold(0.0, f64::max);

    let mixed = mixed_masses(&renewal, &p0);
    let (w, rho) = if absorbing {
        (vec![1.0], vec![1.0])
    } else {
        time_weights(env)?
    };
    let rho_total: f64 = rho.iter().sum();
    let closed = steady_queue(model, step)?;

    let mut curves = Vec::new();
    let mut per_type = Vec::with_capacity(k);
    let mut truncation = Vec::new();
    let mut l_q_gap = 0.0f64;
    for r in 0..k {
        let y1: Vec<Vec<f64>> = moments.iter().map(|m| m.phi1[r].clone()).collect();
        let y2: Vec<Vec<f64>> = moments.iter().map(|m| m.phi2[r].clone()).collect();
        let mean = compose_overall(&renewal, &p0, &mixed, &y1);
        let fact2 = compose_overall(&renewal, &p0, &mixed, &y2);
        let var: Vec<f64> = mean.iter().zip(&fact2).map(|(m1, m2)| m2 + m1 - m1 * m1).collect();

        let (mean_lim, fact2_lim, l_los, l_los_cycle) = if absorbing {
            (moments[0].end1[r], moments[0].end2[r], 0.0, 0.0)
        } else {
            let mut bound1 = 0.0;
            let mut bound2 = 0.0;
            let mut bound_los = 0.0;
            for j in 0..d {
                let s = model.state(j);
                let tail = (env.sojourn_mean(j) - env.sojourn_integrated_survival(j, horizons[j])).max(0.0);
                let cap = s.rates()[r] * s.service()[r].mean();
                bound1 += w[j] * cap * tail;
                bound2 += w[j] * moments[j].sup2[r] * tail;
                bound_los += w[j] * cap * env.sojourn_survival(j, horizons[j]);
            }
            truncation.push(TruncationBound {
                quantity: format!("queue_mean.type{r}"),
                bound: bound1,
            });
            truncation.push(TruncationBound {
                quantity: format!("queue_factorial2.type{r}"),
                bound: bound2,
            });
            truncation.push(TruncationBound {
                quantity: format!("L_los.type{r}"),
                bound: bound_los,
            });
            let m1: f64 = (0..d).map(|j| w[j] * moments[j].surv1[r]).sum();
            let m2: f64 = (0..d).map(|j| w[j] * moments[j].surv2[r]).sum();
            let los: f64 = (0..d).map(|j| w[j] * moments[j].loss[r]).sum();
            let los_cycle: f64 = (0..d).map(|j| rho[j] / rho_total * moments[j].loss[r]).sum();
            for (value, bound, name) in [(m1, bound1, "queue mean"), (m2, bound2, "second factorial moment")] {
                if bound > catastrophe::TRUNCATION_REL * value.abs() + 1e-14 {
                    return Err(Error::Horizon(format!(
                        "truncation bound {bound:.3e} of the stationary {name} of type {r} exceeds {:e} of its value {value:.6e}",
                        catastrophe::TRUNCATION_REL
                    )));
                }
            }
            (m1, m2, los, los_cycle)
        };
        let var_lim = fact2_lim + mean_lim - mean_lim * mean_lim;
        if let Some(bad) = var.iter().copied().chain([var_lim]).find(|v| *v < -1e-8) {
            return Err(Error::Numerical(format!(
                "variance of type {r} came out negative ({bad:.3e}); moment curves are inconsistent"
            )));
        }
        l_q_gap = l_q_gap.max((closed[r] - mean_lim).abs());

        let mut resource_mean = Vec::with_capacity(kres);
        for c in 0..kres {
            let cbar: Vec<f64> = (0..d)
                .map(|j| model.state(j).arrival_resources()[r].marginals()[c].mean())
                .collect();
            let yc: Vec<Vec<f64>> = (0..d)
                .map(|j| moments[j].phi1[r].iter().map(|v| v * cbar[j]).collect())
                .collect();
            let curve = compose_overall(&renewal, &p0, &mixed, &yc);
            let limit = if absorbing {
                cbar[0] * moments[0].end1[r]
            } else {
                (0..d).map(|j| w[j] * cbar[j] * moments[j].surv1[r]).sum()
            };
            resource_mean.push(ResourceSummary {
                component: c,
                at: t_idx.iter().map(|&i| curve[i]).collect(),
                limit,
            });
            curves.push(Curve {
                name: format!("resource_mean_type{r}_comp{c}"),
                values: curve,
            });
        }
        per_type.push(TypeMetrics {
            customer_type: r,
            mean: CurveSummary {
                at: t_idx.iter().map(|&i| mean[i]).collect(),
                limit: mean_lim,
            },
            variance: CurveSummary {
                at: t_idx.iter().map(|&i| var[i].max(0.0)).collect(),
                limit: var_lim.max(0.0),
            },
            resource_mean,
            l_q: closed[r],
            l_los,
            l_los_per_cycle: l_los_cycle,
        });
        curves.push(Curve {
            name: format!("queue_mean_type{r}"),
            values: mean,
        });
        curves.push(Curve {
            name: format!("queue_var_type{r}"),
            values: var.iter().map(|v| v.max(0.0)).collect(),
        });
    }

    let totals = Totals {
        l_q: per_type.iter().map(|t| t.l_q).sum(),
        l_los: per_type.iter().map(|t| t.l_los).sum(),
        l_los_per_cycle: per_type.iter().map(|t| t.l_los_per_cycle).sum(),
        delta: (0..kres)
            .map(|c| per_type.iter().map(|t| t.resource_mean[c].limit).sum())
            .collect(),
    };

    // Transform values at the requested z, plus the normalization check.
    let mut points: Vec<TransformPoint> = config.z_points.iter().map(|&z| TransformPoint::queue_real(z, k, kres)).collect();
    points.push(TransformPoint::normalization(k, kres));
    let sols: Vec<catastrophe::CatastropheSolution> = points
        .par_iter()
        .map(|p| catastrophe::analyze(model, &renewal, &grid, p, policy))
        .collect::<Result<_>>()?;
    let norm_sol = sols.last().expect("normalization point");
    let normalization_transient = norm_sol.transient.iter().map(|v| (v - 1.0).norm()).fold(0.0, f64::max);
    let normalization_stationary = (norm_sol.stationary - 1.0).norm();
    let spots: Vec<usize> = [0.2, 0.45, 0.7, 0.85, 1.0]
        .iter()
        .map(|f| ((n - 1) as f64 * f).round() as usize)
        .collect();
    let renewal_residual = sols
        .iter()
        .flat_map(|s| spots.iter().map(|&i| catastrophe::integral_equation_residual(&renewal, s, i)))
        .fold(0.0, f64::max);
    let mut pgf = Vec::with_capacity(config.z_points.len());
    for (z, sol) in config.z_points.iter().zip(&sols) {
        max_error = max_error.max(sol.max_ode_error);
        truncation.push(TruncationBound {
            quantity: format!("pgf.z={z}"),
            bound: sol.truncation_bound,
        });
        pgf.push(PgfSummary {
            z: *z,
            at: t_idx.iter().map(|&i| sol.transient[i].re).collect(),
            limit: sol.stationary.re,
        });
        curves.push(Curve {
            name: format!("pgf_z{z}"),
            values: sol.transient.iter().map(|v| v.re).collect(),
        });
    }
    if l_q_gap > 1e-8 {
        let msg = format!("stationary mean paths differ by {l_q_gap:.3e}");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let poisson = if model.states().iter().all(|s| s.is_poisson()) {
        Some(poisson_special_case(model, &renewal, &config.t_points, config.cutoff)?)
    } else {
        None
    };

    Ok(MetricsReport {
        types: k,
        resources: kres,
        grid_step: step,
        horizon: grid.horizon(),
        t_points: config.t_points.clone(),
        per_type,
        totals,
        pgf,
        truncation,
        diagnostics: Diagnostics {
            max_ode_error: max_error,
            normalization_transient,
            normalization_stationary,
            renewal_residual,
            l_q_path_gap: l_q_gap,
            warnings,
        },
        poisson,
        curves,
    })
}

fn product(pmfs: &[Vec<f64>], cutoff: usize) -> Vec<f64> {
    let k = pmfs.len();
    let size = (cutoff + 1).pow(k as u32);
    (0..size)
        .map(|idx| {
            let mut rest = idx;
            let mut v = 1.0;
            for r in (0..k).rev() {
                v *= pmfs[r][rest % (cutoff + 1)];
                rest /= cutoff + 1;
            }
            v
        })
        .collect()
}

/// Joint law of in-service counts at grid index `m` for per-state Poisson
/// input: `Σ_i p⁰_i [g_i(n, t) + Σ_j ∫ g_j(n, t-u) dH_ij(u)]`, with
/// `g_j(n, t) = (1 - F_j(t)) Π_r p(n_r; a_jr(t)) + 1{n=0} (F_j(t) - Σ_k Q_jk(t))`.
pub fn poisson_transient_distribution(
    model: &Model,
    renewal: &RenewalSolution,
    m: usize,
    cutoff: usize,
) -> Result<Vec<f64>> {
    if model.states().iter().any(|s| !s.is_poisson()) {
        return Err(Error::Unsupported("explicit count distributions need Poisson input".into()));
    }
    let env = model.environment();
    let d = env.states();
    let grid = renewal.grid;
    if m >= grid.len() {
        return Err(Error::Domain(format!("grid index {m} beyond the horizon")));
    }
    let k = model.types();
    let g = |j: usize, l: usize| -> Vec<f64> {
        let s = model.state(j);
        let t = grid.point(l);
        let pmfs: Vec<Vec<f64>> = (0..k)
            .map(|r| poisson_pmf(s.rates()[r] * s.service()[r].integrated_survival(t), cutoff))
            .collect();
        let surv = 1.0 - renewal.f[j][l];
        let mut out: Vec<f64> = product(&pmfs, cutoff).into_iter().map(|v| v * surv).collect();
        let q: f64 = (0..d).map(|x| renewal.q_kernel[j][x][l]).sum();
        out[0] += (renewal.f[j][l] - q).max(0.0);
        out
    };
    let p0 = env.initial();
    let mixed = mixed_masses(renewal, p0);
    let mut out = vec![0.0; (cutoff + 1).pow(k as u32)];
    for (i, &p) in p0.iter().enumerate() {
        if p > 0.0 {
            for (o, v) in out.iter_mut().zip(g(i, m)) {
                *o += p * v;
            }
        }
    }
    for (j, masses) in mixed.iter().enumerate() {
        for (kk, &mass) in masses.iter().enumerate().take(m + 1) {
            if mass != 0.0 {
                for (o, v) in out.iter_mut().zip(g(j, m - kk)) {
                    *o += mass * v;
                }
            }
        }
    }
    Ok(out)
}

/// Explicit count distributions and product-form measures when every state
/// has Poisson input, with `a_jr(t) = α_jr ∫_0^t (1 - B_jr)`.
pub fn poisson_special_case(
    model: &Model,
    renewal: &RenewalSolution,
    t_points: &[f64],
    cutoff: usize,
) -> Result<PoissonCase> {
    let step = renewal.grid.step();
    let stationary = catastrophe::stationary_count_distribution(model, cutoff, step)?;
    let transient = t_points
        .iter()
        .map(|&t| {
            let m = renewal.grid.require_index(t)?;
            poisson_transient_distribution(model, renewal, m, cutoff)
        })
        .collect::<Result<Vec<_>>>()?;
    let env = model.environment();
    let k = model.types();
    let mean_limit = steady_queue(model, step)?;
    let l_los = if env.is_absorbing() {
        vec![0.0; k]
    } else {
        let (w, _) = time_weights(env)?;
        let mut out = vec![0.0; k];
        for j in 0..env.states() {
            let s = model.state(j);
            let t_end = state_horizon(env, j, step);
            let (pdf, atoms) = sojourn_parts(env, j);
            for r in 0..k {
                let a = |u: f64| s.rates()[r] * s.service()[r].integrated_survival(u);
                let mut v = gauss_cells(|u| pdf(u) * a(u), step, t_end);
                v += atoms.iter().map(|&(x, mass)| mass * a(x)).sum::<f64>();
                out[r] += w[j] * v;
            }
        }
        out
    };
    Ok(PoissonCase {
        cutoff,
        stationary_total: stationary.iter().sum(),
        stationary,
        transient,
        mean_limit,
        l_los,
    })
}
