//! Semi-Markov environment with repair periods and its Markov renewal
//! structure on a uniform grid.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::distributions::{convolve_sub, discrete_stieltjes, DistributionLaw, SubDistribution};
use crate::error::{Diagnostic, Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{communicating_classes, stationary_of_generator, RMatrix};
use crate::map_core::CONDITION_CAP;

/// Row sums of the kernel at infinity must be one within this tolerance.
pub const KERNEL_ROW_TOL: f64 = 1e-10;
/// Iteration cap for the implicit part of the discrete renewal equation.
pub const RENEWAL_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiMarkovEnvironment {
    names: Vec<String>,
    kernel: Vec<Vec<SubDistribution>>,
    repair: Vec<DistributionLaw>,
    initial: Vec<f64>,
}

impl SemiMarkovEnvironment {
    pub fn new(
        names: Vec<String>,
        kernel: Vec<Vec<SubDistribution>>,
        repair: Vec<DistributionLaw>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let d = kernel.len();
        let mut diags = Vec::new();
        if d == 0 {
            return Err(Error::invalid("dimension", "kernel", "environment needs at least one state"));
        }
        if names.len() != d {
            diags.push(Diagnostic::new(
                "dimension",
                "states",
                format!("{} state names for a {d}-state kernel", names.len()),
            ));
        }
        for (i, row) in kernel.iter().enumerate() {
            if row.len() != d {
                diags.push(Diagnostic::new(
                    "dimension",
                    format!("kernel[{i}]"),
                    format!("expected {d} entries, got {}", row.len()),
                ));
                continue;
            }
            let total: f64 = row.iter().map(|e| e.weight).sum();
            let absorbing = d == 1 && total == 0.0;
            if !absorbing && (total - 1.0).abs() > KERNEL_ROW_TOL {
                diags.push(Diagnostic::new(
                    "kernel-row-sum",
                    format!("kernel[{i}]"),
                    format!("weights sum to {total}, expected 1"),
                ));
            }
        }
        if repair.len() != d {
            diags.push(Diagnostic::new(
                "dimension",
                "repair",
                format!("expected {d} repair laws, got {}", repair.len()),
            ));
        }
        if initial.len() != d {
            diags.push(Diagnostic::new(
                "dimension",
                "initial",
                format!("expected {d} probabilities, got {}", initial.len()),
            ));
        } else {
            for (i, &p) in initial.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    diags.push(Diagnostic::new(
                        "probability-range",
                        format!("initial[{i}]"),
                        format!("probability {p} outside [0, 1]"),
                    ));
                }
            }
            let total: f64 = initial.iter().sum();
            if (total - 1.0).abs() > 1e-10 {
                diags.push(Diagnostic::new(
                    "initial-sum",
                    "initial",
                    format!("initial distribution sums to {total}"),
                ));
            }
        }
        if !diags.is_empty() {
            return Err(Error::Invalid(diags));
        }
        let env = Self {
            names,
            kernel,
            repair,
            initial,
        };
        if !env.is_absorbing() {
            env.check_irreducible()?;
        }
        Ok(env)
    }

    /// Single state that is never left: no catastrophes at all.
    pub fn absorbing() -> Self {
        Self {
            names: vec!["s0".into()],
            kernel: vec![vec![SubDistribution {
                weight: 0.0,
                law: DistributionLaw::Deterministic { value: 0.0 },
            }]],
            repair: vec![DistributionLaw::Deterministic { value: 0.0 }],
            initial: vec![1.0],
        }
    }

    fn check_irreducible(&self) -> Result<()> {
        let p = self.embedded_chain();
        let classes = communicating_classes(&p);
        if classes.len() > 1 {
            let listed = classes
                .iter()
                .map(|c| format!("{c:?}"))
                .collect::<Vec<_>>()
                .join(", ");
            return Err(Error::invalid(
                "environment-reducible",
                "kernel",
                format!("embedded chain is reducible; communicating classes: {listed}"),
            ));
        }
        Ok(())
    }

    pub fn states(&self) -> usize {
        self.kernel.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kernel(&self) -> &[Vec<SubDistribution>] {
        &self.kernel
    }

    pub fn repair(&self) -> &[DistributionLaw] {
        &self.repair
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// True for the one-state environment that never transitions.
    pub fn is_absorbing(&self) -> bool {
        self.states() == 1 && self.kernel[0][0].weight == 0.0
    }

    /// `P = [T_ij(∞)]`, equal to `Q(∞)` because repair laws are proper.
    pub fn embedded_chain(&self) -> RMatrix {
        let d = self.states();
        RMatrix::from_fn(d, d, |i, j| self.kernel[i][j].weight)
    }

    /// `F_i(t) = Σ_j T_ij(t)`.
    pub fn sojourn_cdf(&self, i: usize, t: f64) -> f64 {
        self.kernel[i].iter().map(|e| e.cdf(t)).sum()
    }

    pub fn sojourn_survival(&self, i: usize, t: f64) -> f64 {
        if self.is_absorbing() {
            return 1.0;
        }
        self.kernel[i]
            .iter()
            .filter(|e| e.weight > 0.0)
            .map(|e| e.weight * e.law.survival(t))
            .sum()
    }

    /// `∫_0^t (1 - F_i(u)) du`.
    pub fn sojourn_integrated_survival(&self, i: usize, t: f64) -> f64 {
        if self.is_absorbing() {
            return t.max(0.0);
        }
        self.kernel[i]
            .iter()
            .filter(|e| e.weight > 0.0)
            .map(|e| e.weight * e.law.integrated_survival(t))
            .sum()
    }

    /// Mean working sojourn in state `i`.
    pub fn sojourn_mean(&self, i: usize) -> f64 {
        if self.is_absorbing() {
            return f64::INFINITY;
        }
        self.kernel[i]
            .iter()
            .filter(|e| e.weight > 0.0)
            .map(|e| e.weight * e.law.mean())
            .sum()
    }

    /// Mean repair time that follows a sojourn in `i`.
    pub fn repair_after(&self, i: usize) -> f64 {
        self.kernel[i]
            .iter()
            .zip(&self.repair)
            .map(|(e, u)| e.weight * u.mean())
            .sum()
    }

    /// Mean cycle length `η̄_i`: sojourn in `i` plus the following repair.
    pub fn cycle_means(&self) -> Vec<f64> {
        (0..self.states())
            .map(|i| self.sojourn_mean(i) + self.repair_after(i))
            .collect()
    }

    /// Time beyond which every sojourn survival is below `eps`.
    pub fn sojourn_tail_point(&self, i: usize, eps: f64) -> f64 {
        self.kernel[i]
            .iter()
            .filter(|e| e.weight > 0.0)
            .map(|e| e.law.tail_point(eps))
            .fold(0.0, f64::max)
    }

    /// Points where some `F_i` or `Q_ij` may have a kink.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = Vec::new();
        for row in &self.kernel {
            for (e, u) in row.iter().zip(&self.repair) {
                if e.weight == 0.0 {
                    continue;
                }
                for a in e.law.breakpoints() {
                    pts.push(a);
                    for b in u.breakpoints() {
                        pts.push(a + b);
                    }
                }
            }
        }
        pts
    }
}

/// `ρ` with `ρP = ρ` and the weights `q_i ∝ η̄_i ρ_i`.
pub fn stationary_weights(p: &RMatrix, eta_bar: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = p.nrows();
    if d == 1 {
        return Ok((vec![1.0], vec![1.0]));
    }
    let classes = communicating_classes(p);
    if classes.len() > 1 {
        return Err(Error::invalid(
            "environment-reducible",
            "kernel",
            format!("embedded chain is reducible; communicating classes: {classes:?}"),
        ));
    }
    let mut g = p.clone();
    for i in 0..d {
        g[(i, i)] -= 1.0;
    }
    let rho = stationary_of_generator(&g, CONDITION_CAP)?;
    let total: f64 = rho.iter().zip(eta_bar).map(|(r, e)| r * e).sum();
    let q = rho.iter().zip(eta_bar).map(|(r, e)| r * e / total).collect();
    Ok((rho, q))
}

/// Gridded kernel, sojourn DFs and renewal matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenewalSolution {
    pub grid: TimeGrid,
    /// `q_kernel[i][j][n] = Q_ij(t_n)`.
    pub q_kernel: Vec<Vec<Vec<f64>>>,
    /// `f[i][n] = F_i(t_n)` (working sojourn only).
    pub f: Vec<Vec<f64>>,
    /// `h[i][j][n] = H_ij(t_n)`, expected entries into `j` by `t_n` from `i`.
    pub h: Vec<Vec<Vec<f64>>>,
    pub eta_bar: Vec<f64>,
    pub rho: Vec<f64>,
    pub q: Vec<f64>,
    pub warnings: Vec<String>,
}

/// `Q_ij = T_ij * U_j` on the grid.
pub fn build_kernel(env: &SemiMarkovEnvironment, grid: &TimeGrid) -> Result<Vec<Vec<Vec<f64>>>> {
    let d = env.states();
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        let mut row = Vec::with_capacity(d);
        for j in 0..d {
            row.push(convolve_sub(&env.kernel()[i][j], &env.repair()[j], grid)?);
        }
        out.push(row);
    }
    Ok(out)
}

/// Gridded `F_i` plus cycle means; warns when the tail is not resolved.
pub fn sojourn_df(env: &SemiMarkovEnvironment, grid: &TimeGrid) -> (Vec<Vec<f64>>, Vec<f64>, Vec<String>) {
    let d = env.states();
    let mut warnings = Vec::new();
    let f: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..grid.len()).map(|k| env.sojourn_cdf(i, grid.right(k))).collect())
        .collect();
    if !env.is_absorbing() {
        for (i, fi) in f.iter().enumerate() {
            let surv = 1.0 - fi[grid.len() - 1];
            if surv > 1e-3 {
                let msg = format!(
                    "sojourn survival of state {i} is {surv:.3e} at the grid horizon {}",
                    grid.horizon()
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    (f, env.cycle_means(), warnings)
}

/// Solves `H = Q + Q * H` on the grid.
///
/// `H_ij(t)` counts entries into `j` during `(0, t]`, the initial state not
/// included. The Stieltjes masses of `Q` are placed at the right end of each
/// cell, which keeps the scheme exact for lattice kernels and first order
/// otherwise.
pub fn renewal_matrix(q_kernel: &[Vec<Vec<f64>>], grid: &TimeGrid) -> Result<Vec<Vec<Vec<f64>>>> {
    let d = q_kernel.len();
    let n = grid.len();
    // dq[m] is the d×d mass matrix of cell m, row-major.
    let dq: Vec<Vec<f64>> = (0..n)
        .map(|m| {
            let mut mat = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    let cur = q_kernel[i][j][m];
                    let prev = if m == 0 { 0.0 } else { q_kernel[i][j][m - 1] };
                    mat[i * d + j] = (cur - prev).max(0.0);
                }
            }
            mat
        })
        .collect();
    let active: Vec<usize> = (1..n).filter(|&m| dq[m].iter().any(|&x| x != 0.0)).collect();
    let dq0 = &dq[0];
    let implicit = dq0.iter().any(|&x| x != 0.0);

    let mut h: Vec<Vec<f64>> = Vec::with_capacity(n);
    for step in 0..n {
        let mut rhs = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                rhs[i * d + j] = q_kernel[i][j][step];
            }
        }
        for &m in active.iter().take_while(|&&m| m <= step) {
            let hm = &h[step - m];
            let qm = &dq[m];
            for i in 0..d {
                for k in 0..d {
                    let a = qm[i * d + k];
                    if a == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        rhs[i * d + j] += a * hm[k * d + j];
                    }
                }
            }
        }
        let cur = if implicit {
            let mut x = rhs.clone();
            let mut converged = false;
            for _ in 0..RENEWAL_MAX_ITER {
                let mut next = rhs.clone();
                for i in 0..d {
                    for k in 0..d {
                        let a = dq0[i * d + k];
                        for j in 0..d {
                            next[i * d + j] += a * x[k * d + j];
                        }
                    }
                }
                let diff = next
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                x = next;
                if diff <= 1e-14 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Numerical(format!(
                    "renewal iteration did not converge in {RENEWAL_MAX_ITER} steps at t = {}",
                    grid.point(step)
                )));
            }
            x
        } else {
            rhs
        };
        h.push(cur);
    }
    Ok((0..d)
        .map(|i| (0..d).map(|j| h.iter().map(|m| m[i * d + j]).collect()).collect())
        .collect())
}

impl RenewalSolution {
    pub fn compute(env: &SemiMarkovEnvironment, grid: &TimeGrid) -> Result<Self> {
        let q_kernel = build_kernel(env, grid)?;
        let (f, eta_bar, mut warnings) = sojourn_df(env, grid);
        if !env.is_absorbing() {
            let longest = eta_bar.iter().fold(0.0f64, |m, &e| m.max(e));
            if grid.horizon() < 5.0 * longest {
                let msg = format!(
                    "grid horizon {} is shorter than five mean cycles ({longest})",
                    grid.horizon()
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        let h = renewal_matrix(&q_kernel, grid)?;
        let (rho, q) = if env.is_absorbing() {
            (vec![1.0], vec![1.0])
        } else {
            stationary_weights(&env.embedded_chain(), &eta_bar)?
        };
        Ok(Self {
            grid: *grid,
            q_kernel,
            f,
            h,
            eta_bar,
            rho,
            q,
            warnings,
        })
    }

    pub fn states(&self) -> usize {
        self.f.len()
    }

    /// Renewal masses `ΔH_ij(n)` with `ΔH(0) = H(0)`.
    pub fn h_masses(&self, i: usize, j: usize) -> Vec<f64> {
        let h = &self.h[i][j];
        (0..h.len())
            .map(|n| if n == 0 { h[0] } else { h[n] - h[n - 1] })
            .collect()
    }

    /// `out[n] = Σ_k ΔH_ij(k) g(n - k)`.
    pub fn convolve_dh(&self, i: usize, j: usize, g: &[f64]) -> Vec<f64> {
        discrete_stieltjes(g, &self.h_masses(i, j))
    }

    /// CSV with columns `t` and then every `H_ij` in row-major order.
    pub fn h_csv(&self) -> String {
        gridded_csv(&self.grid, &self.h, "H")
    }

    /// CSV with columns `t` and then every `Q_ij` in row-major order.
    pub fn q_csv(&self) -> String {
        gridded_csv(&self.grid, &self.q_kernel, "Q")
    }
}

fn gridded_csv(grid: &TimeGrid, values: &[Vec<Vec<f64>>], name: &str) -> String {
    let d = values.len();
    let mut out = String::from("t");
    for i in 0..d {
        for j in 0..d {
            let _ = write!(out, ",{name}_{i}_{j}");
        }
    }
    out.push('\n');
    for n in 0..grid.len() {
        let _ = write!(out, "{}", grid.point(n));
        for row in values {
            for v in row {
                let _ = write!(out, ",{}", v[n]);
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(rate: f64) -> DistributionLaw {
        DistributionLaw::exponential(rate).unwrap()
    }

    fn det(v: f64) -> DistributionLaw {
        DistributionLaw::deterministic(v).unwrap()
    }

    fn sub(w: f64, law: DistributionLaw) -> SubDistribution {
        SubDistribution::new(w, law).unwrap()
    }

    fn single(sojourn: DistributionLaw, repair: DistributionLaw) -> SemiMarkovEnvironment {
        SemiMarkovEnvironment::new(
            vec!["a".into()],
            vec![vec![sub(1.0, sojourn)]],
            vec![repair],
            vec![1.0],
        )
        .unwrap()
    }

    fn cyclic(len: f64) -> SemiMarkovEnvironment {
        SemiMarkovEnvironment::new(
            vec!["a".into(), "b".into()],
            vec![
                vec![sub(0.0, det(len)), sub(1.0, det(len))],
                vec![sub(1.0, det(len)), sub(0.0, det(len))],
            ],
            vec![det(0.0), det(0.0)],
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn kernel_with_zero_repair_is_t() {
        let env = single(exp(1.5), det(0.0));
        let grid = TimeGrid::new(0.01, 3.0).unwrap();
        let q = build_kernel(&env, &grid).unwrap();
        for n in 0..grid.len() {
            assert!((q[0][0][n] - exp(1.5).cdf(grid.right(n))).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_hypoexponential() {
        let env = single(exp(1.0), exp(2.0));
        let grid = TimeGrid::new(0.001, 2.0).unwrap();
        let q = build_kernel(&env, &grid).unwrap();
        let t = 1.0f64;
        let want = 1.0 + ((-2.0 * t).exp() - 2.0 * (-t).exp());
        assert!((q[0][0][grid.index_of(t).unwrap()] - want).abs() < 1e-3);
    }

    #[test]
    fn zero_weight_entry_gives_zero_kernel() {
        let env = cyclic(1.0);
        let grid = TimeGrid::new(0.1, 3.0).unwrap();
        let q = build_kernel(&env, &grid).unwrap();
        assert!(q[0][0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sojourn_examples() {
        let env = single(exp(2.0), det(0.0));
        let grid = TimeGrid::new(0.01, 20.0).unwrap();
        let (f, eta, _) = sojourn_df(&env, &grid);
        assert!(f[0][0] < 1e-6);
        assert!((eta[0] - 0.5).abs() < 1e-4);
        let k = grid.index_of(1.0).unwrap();
        assert!((f[0][k] - (1.0 - (-2.0f64).exp())).abs() < 1e-6);
        let sym = SemiMarkovEnvironment::new(
            vec!["a".into(), "b".into()],
            vec![
                vec![sub(0.5, exp(1.0)), sub(0.5, exp(1.0))],
                vec![sub(0.5, exp(1.0)), sub(0.5, exp(1.0))],
            ],
            vec![det(0.2), det(0.2)],
            vec![0.5, 0.5],
        )
        .unwrap();
        let (_, eta, _) = sojourn_df(&sym, &grid);
        assert_eq!(eta[0], eta[1]);
    }

    #[test]
    fn renewal_before_first_mass_equals_kernel() {
        let env = single(det(1.0), det(0.5));
        let grid = TimeGrid::new(0.05, 3.0).unwrap();
        let sol = RenewalSolution::compute(&env, &grid).unwrap();
        let k = grid.index_of(1.45).unwrap();
        for n in 0..=k {
            assert_eq!(sol.h[0][0][n], 0.0);
        }
        assert_eq!(sol.h[0][0][grid.index_of(1.5).unwrap()], 1.0);
        assert_eq!(sol.h[0][0][grid.index_of(3.0).unwrap()], 2.0);
    }

    #[test]
    fn poisson_renewal_function() {
        let env = single(exp(1.0), det(0.0));
        let grid = TimeGrid::new(0.01, 5.0).unwrap();
        let sol = RenewalSolution::compute(&env, &grid).unwrap();
        let h5 = sol.h[0][0][grid.index_of(5.0).unwrap()];
        assert!((h5 - 5.0).abs() / 5.0 < 0.02, "H(5) = {h5}");
        assert!((h5 - 5.0).abs() / 5.0 <= 2.0 * 0.01, "H(5) = {h5}");
    }

    #[test]
    fn renewal_converges_first_order() {
        let env = single(exp(1.0), det(0.0));
        let errs: Vec<f64> = [0.04, 0.02, 0.01]
            .iter()
            .map(|&h| {
                let grid = TimeGrid::new(h, 5.0).unwrap();
                let sol = RenewalSolution::compute(&env, &grid).unwrap();
                (sol.h[0][0][grid.index_of(5.0).unwrap()] - 5.0).abs()
            })
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 0.9, "{errs:?}");
        }
    }

    #[test]
    fn cyclic_deterministic_steps() {
        let env = cyclic(1.0);
        let grid = TimeGrid::new(0.1, 6.5).unwrap();
        let sol = RenewalSolution::compute(&env, &grid).unwrap();
        for n in 0..grid.len() {
            let t = grid.point(n);
            let want = (t / 2.0 + 1e-9).floor();
            assert_eq!(sol.h[0][0][n], want, "t = {t}");
            let want = ((t + 1.0) / 2.0 + 1e-9).floor();
            assert_eq!(sol.h[0][1][n], want, "t = {t}");
        }
    }

    #[test]
    fn h_is_nondecreasing_and_rows_substochastic() {
        let env = SemiMarkovEnvironment::new(
            vec!["a".into(), "b".into()],
            vec![
                vec![sub(0.3, exp(1.0)), sub(0.7, DistributionLaw::erlang(2, 3.0).unwrap())],
                vec![sub(1.0, DistributionLaw::uniform(0.5, 1.5).unwrap()), sub(0.0, exp(1.0))],
            ],
            vec![exp(4.0), det(0.25)],
            vec![1.0, 0.0],
        )
        .unwrap();
        let grid = TimeGrid::new(0.05, 10.0).unwrap();
        let sol = RenewalSolution::compute(&env, &grid).unwrap();
        for i in 0..2 {
            for n in 0..grid.len() {
                let row: f64 = (0..2).map(|j| sol.q_kernel[i][j][n]).sum();
                assert!(row <= 1.0 + 1e-12);
            }
            for j in 0..2 {
                assert!(sol.h[i][j].windows(2).all(|w| w[1] >= w[0]));
            }
        }
        let csv = sol.h_csv();
        assert!(csv.starts_with("t,H_0_0,H_0_1,H_1_0,H_1_1\n"));
    }

    #[test]
    fn weights_examples() {
        let (_, q) = stationary_weights(&RMatrix::from_element(1, 1, 1.0), &[2.0]).unwrap();
        assert_eq!(q, vec![1.0]);
        let p = RMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let (_, q) = stationary_weights(&p, &[1.0, 1.0]).unwrap();
        assert!((q[0] - 0.5).abs() < 1e-12);
        let p = RMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let (rho, q) = stationary_weights(&p, &[1.0, 3.0]).unwrap();
        assert!((rho[0] - 0.5).abs() < 1e-12);
        assert!((q[0] - 0.25).abs() < 1e-12 && (q[1] - 0.75).abs() < 1e-12);
        let p = RMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            stationary_weights(&p, &[1.0, 1.0]),
            Err(Error::Invalid(ref d)) if d[0].code == "environment-reducible"
        ));
    }

    #[test]
    fn improper_and_reducible_kernels_rejected() {
        let err = SemiMarkovEnvironment::new(
            vec!["a".into(), "b".into()],
            vec![
                vec![sub(0.5, exp(1.0)), sub(0.4, exp(1.0))],
                vec![sub(1.0, exp(1.0)), sub(0.0, exp(1.0))],
            ],
            vec![det(0.0), det(0.0)],
            vec![1.0, 0.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Invalid(ref d) if d[0].code == "kernel-row-sum" && d[0].path == "kernel[0]"));
        let err = SemiMarkovEnvironment::new(
            vec!["a".into(), "b".into()],
            vec![
                vec![sub(1.0, exp(1.0)), sub(0.0, exp(1.0))],
                vec![sub(0.0, exp(1.0)), sub(1.0, exp(1.0))],
            ],
            vec![det(0.0), det(0.0)],
            vec![1.0, 0.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Invalid(ref d) if d[0].code == "environment-reducible"));
    }
}
