//! Univariate laws used for service times, resource components, repair
//! times and semi-Markov kernel entries.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DistributionLaw {
    Exponential { rate: f64 },
    Erlang { shape: u32, rate: f64 },
    Deterministic { value: f64 },
    Uniform { a: f64, b: f64 },
    HyperExponential { weights: Vec<f64>, rates: Vec<f64> },
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(
            "invalid-parameter",
            "",
            format!("{name} must be positive and finite, got {x}"),
        ))
    }
}

impl DistributionLaw {
    pub fn exponential(rate: f64) -> Result<Self> {
        positive("rate", rate)?;
        Ok(Self::Exponential { rate })
    }

    pub fn erlang(shape: u32, rate: f64) -> Result<Self> {
        if shape == 0 {
            return Err(Error::invalid("invalid-parameter", "", "Erlang shape must be at least 1"));
        }
        positive("rate", rate)?;
        Ok(Self::Erlang { shape, rate })
    }

    pub fn deterministic(value: f64) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::invalid(
                "invalid-parameter",
                "",
                format!("deterministic value must be finite and nonnegative, got {value}"),
            ));
        }
        Ok(Self::Deterministic { value })
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        if !(a >= 0.0) || !b.is_finite() || !(b > a) {
            return Err(Error::invalid(
                "invalid-parameter",
                "",
                format!("uniform bounds need 0 <= a < b, got ({a}, {b})"),
            ));
        }
        Ok(Self::Uniform { a, b })
    }

    pub fn hyperexponential(weights: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != rates.len() {
            return Err(Error::invalid(
                "param-count",
                "",
                "hyperexponential needs matching nonempty weight and rate lists",
            ));
        }
        for &r in &rates {
            positive("rate", r)?;
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::invalid("invalid-parameter", "", "weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(
                "invalid-parameter",
                "",
                format!("weights must sum to 1, got {total}"),
            ));
        }
        Ok(Self::HyperExponential { weights, rates })
    }

    /// Build from the `{family, params}` encoding of the model file.
    pub fn from_family(family: &str, params: &[f64]) -> Result<Self> {
        let expect = |n: usize| -> Result<()> {
            if params.len() == n {
                Ok(())
            } else {
                Err(Error::invalid(
                    "param-count",
                    "params",
                    format!("family '{family}' takes {n} parameters, got {}", params.len()),
                ))
            }
        };
        let at_params = |e: Error| e.at("params");
        match family {
            "exponential" => {
                expect(1)?;
                Self::exponential(params[0]).map_err(at_params)
            }
            "erlang" => {
                expect(2)?;
                let k = params[0];
                if !(k >= 1.0) || k.fract() != 0.0 || k > u32::MAX as f64 {
                    return Err(Error::invalid(
                        "invalid-parameter",
                        "params[0]",
                        format!("Erlang shape must be a positive integer, got {k}"),
                    ));
                }
                Self::erlang(k as u32, params[1]).map_err(|e| e.at("params[1]"))
            }
            "deterministic" => {
                expect(1)?;
                Self::deterministic(params[0]).map_err(at_params)
            }
            "uniform" => {
                expect(2)?;
                Self::uniform(params[0], params[1]).map_err(at_params)
            }
            "hyperexponential" => {
                if params.is_empty() || params.len() % 2 != 0 {
                    return Err(Error::invalid(
                        "param-count",
                        "params",
                        "hyperexponential takes (weight, rate) pairs",
                    ));
                }
                let weights = params.iter().step_by(2).copied().collect();
                let rates = params.iter().skip(1).step_by(2).copied().collect();
                Self::hyperexponential(weights, rates).map_err(at_params)
            }
            other => Err(Error::invalid(
                "unknown-family",
                "family",
                format!("unknown distribution family '{other}'"),
            )),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::Exponential { .. } => "exponential",
            Self::Erlang { .. } => "erlang",
            Self::Deterministic { .. } => "deterministic",
            Self::Uniform { .. } => "uniform",
            Self::HyperExponential { .. } => "hyperexponential",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Self::Exponential { rate } => vec![*rate],
            Self::Erlang { shape, rate } => vec![*shape as f64, *rate],
            Self::Deterministic { value } => vec![*value],
            Self::Uniform { a, b } => vec![*a, *b],
            Self::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .flat_map(|(&w, &r)| [w, r])
                .collect(),
        }
    }

    /// `P(X <= t)`.
    pub fn cdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential { rate } => -(-rate * t).exp_m1(),
            Self::Erlang { shape, rate } => 1.0 - erlang_survival(*shape, *rate, t),
            Self::Deterministic { value } => {
                if t >= *value {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Uniform { a, b } => ((t - a) / (b - a)).clamp(0.0, 1.0),
            Self::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| -w * (-r * t).exp_m1())
                .sum(),
        }
    }

    /// `P(X < t)`; differs from `cdf` only at atoms.
    pub fn cdf_left(&self, t: f64) -> f64 {
        match self {
            Self::Deterministic { value } => {
                if t > *value {
                    1.0
                } else {
                    0.0
                }
            }
            _ => self.cdf(t),
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        match self {
            Self::Exponential { rate } => {
                if t < 0.0 {
                    1.0
                } else {
                    (-rate * t).exp()
                }
            }
            Self::Erlang { shape, rate } => {
                if t < 0.0 {
                    1.0
                } else {
                    erlang_survival(*shape, *rate, t)
                }
            }
            Self::HyperExponential { weights, rates } => {
                if t < 0.0 {
                    1.0
                } else {
                    weights.iter().zip(rates).map(|(w, r)| w * (-r * t).exp()).sum()
                }
            }
            _ => 1.0 - self.cdf(t),
        }
    }

    /// Density of the absolutely continuous part.
    pub fn pdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential { rate } => rate * (-rate * t).exp(),
            Self::Erlang { shape, rate } => {
                let k = *shape as i32;
                let log = (k as f64) * rate.ln() + (k - 1) as f64 * t.max(1e-300).ln()
                    - rate * t
                    - ln_factorial(k as u32 - 1);
                if k == 1 {
                    rate * (-rate * t).exp()
                } else if t == 0.0 {
                    0.0
                } else {
                    log.exp()
                }
            }
            Self::Deterministic { .. } => 0.0,
            Self::Uniform { a, b } => {
                if t >= *a && t < *b {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            Self::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| w * r * (-r * t).exp())
                .sum(),
        }
    }

    /// Point mass `(location, mass)`, if any.
    pub fn atom(&self) -> Option<(f64, f64)> {
        match self {
            Self::Deterministic { value } => Some((*value, 1.0)),
            _ => None,
        }
    }

    /// Points where the CDF is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::Deterministic { value } => vec![*value],
            Self::Uniform { a, b } => vec![*a, *b],
            _ => Vec::new(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Erlang { shape, rate } => *shape as f64 / rate,
            Self::Deterministic { value } => *value,
            Self::Uniform { a, b } => 0.5 * (a + b),
            Self::HyperExponential { weights, rates } => {
                weights.iter().zip(rates).map(|(w, r)| w / r).sum()
            }
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 2.0 / (rate * rate),
            Self::Erlang { shape, rate } => {
                let k = *shape as f64;
                k * (k + 1.0) / (rate * rate)
            }
            Self::Deterministic { value } => value * value,
            Self::Uniform { a, b } => (a * a + a * b + b * b) / 3.0,
            Self::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| 2.0 * w / (r * r))
                .sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        (self.second_moment() - m * m).max(0.0)
    }

    /// `∫_0^t (1 - F(u)) du`.
    pub fn integrated_survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential { rate } => -(-rate * t).exp_m1() / rate,
            Self::Erlang { shape, rate } => {
                // Σ_{n<k} P(Erlang(n+1) <= t) / λ
                let x = rate * t;
                let mut term = (-x).exp();
                let mut cum = 0.0;
                let mut total = 0.0;
                for n in 0..*shape {
                    cum += term;
                    total += (1.0 - cum).max(0.0);
                    term *= x / (n as f64 + 1.0);
                }
                total / rate
            }
            Self::Deterministic { value } => t.min(*value),
            Self::Uniform { a, b } => {
                if t <= *a {
                    t
                } else if t >= *b {
                    0.5 * (a + b)
                } else {
                    let w = b - a;
                    a + (w * w - (b - t) * (b - t)) / (2.0 * w)
                }
            }
            Self::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| -w * (-r * t).exp_m1() / r)
                .sum(),
        }
    }

    /// Laplace–Stieltjes transform `E[e^{-sX}]` for `Re(s) >= 0`.
    pub fn lst(&self, s: Complex64) -> Result<Complex64> {
        if s.re < 0.0 || !s.re.is_finite() || !s.im.is_finite() {
            return Err(Error::Domain(format!("LST argument needs Re(s) >= 0, got {s}")));
        }
        Ok(self.lst_unchecked(s))
    }

    pub(crate) fn lst_unchecked(&self, s: Complex64) -> Complex64 {
        let one = Complex64::new(1.0, 0.0);
        match self {
            Self::Exponential { rate } => one * *rate / (s + rate),
            Self::Erlang { shape, rate } => (one * *rate / (s + rate)).powu(*shape),
            Self::Deterministic { value } => (-s * value).exp(),
            Self::Uniform { a, b } => (-s * a).exp() * one_minus_exp_over(s * (b - a)),
            Self::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| one * (w * r) / (s + r))
                .sum(),
        }
    }

    /// Smallest `t` with survival at most `eps` (support end for bounded laws).
    pub fn tail_point(&self, eps: f64) -> f64 {
        match self {
            Self::Exponential { rate } => (1.0 / eps).ln().max(0.0) / rate,
            Self::Deterministic { value } => *value,
            Self::Uniform { b, .. } => *b,
            _ => {
                let mut hi = self.mean().max(1e-12);
                while self.survival(hi) > eps {
                    hi *= 2.0;
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.survival(mid) > eps {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Exponential { rate } => Exp::new(*rate).expect("validated rate").sample(rng),
            Self::Erlang { shape, rate } => {
                let e = Exp::new(*rate).expect("validated rate");
                (0..*shape).map(|_| e.sample(rng)).sum()
            }
            Self::Deterministic { value } => *value,
            Self::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
            Self::HyperExponential { weights, rates } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = rates.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                Exp::new(rates[pick]).expect("validated rate").sample(rng)
            }
        }
    }
}

fn ln_factorial(n: u32) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

fn erlang_survival(shape: u32, rate: f64, t: f64) -> f64 {
    let x = rate * t;
    let mut term = (-x).exp();
    let mut sum = 0.0;
    for n in 0..shape {
        sum += term;
        term *= x / (n as f64 + 1.0);
    }
    sum.min(1.0)
}

/// `(1 - e^{-x}) / x` with a series near zero.
fn one_minus_exp_over(x: Complex64) -> Complex64 {
    if x.norm() < 1e-3 {
        let one = Complex64::new(1.0, 0.0);
        one - x / 2.0 + x * x / 6.0 - x * x * x / 24.0 + x * x * x * x / 120.0
    } else {
        (Complex64::new(1.0, 0.0) - (-x).exp()) / x
    }
}

/// Independent marginals of a `k`-dimensional resource vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceVectorLaw {
    marginals: Vec<DistributionLaw>,
}

impl ResourceVectorLaw {
    pub fn new(marginals: Vec<DistributionLaw>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::invalid(
                "resource-dimension",
                "",
                "a resource vector needs at least one component",
            ));
        }
        Ok(Self { marginals })
    }

    pub fn marginals(&self) -> &[DistributionLaw] {
        &self.marginals
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn means(&self) -> Vec<f64> {
        self.marginals.iter().map(|m| m.mean()).collect()
    }

    /// Joint LST; factorizes over the independent components.
    pub fn lst(&self, s: &[Complex64]) -> Result<Complex64> {
        if s.len() != self.dim() {
            return Err(Error::Domain(format!(
                "resource LST needs {} arguments, got {}",
                self.dim(),
                s.len()
            )));
        }
        self.marginals
            .iter()
            .zip(s)
            .try_fold(Complex64::new(1.0, 0.0), |acc, (law, &sj)| Ok(acc * law.lst(sj)?))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.marginals.iter().map(|m| m.sample(rng)).collect()
    }
}

/// A defective distribution `weight * F(t)`, e.g. a kernel entry `T_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubDistribution {
    pub weight: f64,
    pub law: DistributionLaw,
}

impl SubDistribution {
    pub fn new(weight: f64, law: DistributionLaw) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::invalid(
                "weight-range",
                "weight",
                format!("kernel weight must lie in [0, 1], got {weight}"),
            ));
        }
        Ok(Self { weight, law })
    }

    pub fn cdf(&self, t: f64) -> f64 {
        self.weight * self.law.cdf(t)
    }

    /// Gridded values `weight * F(t_n)` (right-continuous at grid points).
    pub fn on_grid(&self, grid: &TimeGrid) -> Vec<f64> {
        (0..grid.len())
            .map(|k| self.weight * self.law.cdf(grid.right(k)))
            .collect()
    }
}

/// Discretized Stieltjes convolution `(a * b)(t_n) = ∫ a(t_n - u) db(u)`.
///
/// The mass of `b` on each cell `(t_{k-1}, t_k]` is placed at `t_k` and the
/// atom at zero at `t_0`, so atoms on grid points are reproduced exactly and
/// the result is a nondecreasing lower approximation for continuous laws.
pub fn convolve_sub(a: &SubDistribution, b: &DistributionLaw, grid: &TimeGrid) -> Result<Vec<f64>> {
    if grid.len() < 2 {
        return Err(Error::Domain("convolution needs a nonempty grid".into()));
    }
    let n = grid.len();
    if a.weight == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let a_grid = a.on_grid(grid);
    let b_cdf: Vec<f64> = (0..n).map(|k| b.cdf(grid.right(k))).collect();
    let masses: Vec<f64> = (0..n)
        .map(|k| if k == 0 { b_cdf[0] } else { (b_cdf[k] - b_cdf[k - 1]).max(0.0) })
        .collect();
    Ok(discrete_stieltjes(&a_grid, &masses))
}

/// `out[n] = Σ_{k<=n} f[n-k] * masses[k]`.
pub(crate) fn discrete_stieltjes(f: &[f64], masses: &[f64]) -> Vec<f64> {
    let n = f.len();
    let nonzero: Vec<(usize, f64)> = masses
        .iter()
        .enumerate()
        .filter(|(_, &m)| m != 0.0)
        .map(|(k, &m)| (k, m))
        .collect();
    (0..n)
        .map(|i| {
            nonzero
                .iter()
                .take_while(|(k, _)| *k <= i)
                .map(|(k, m)| f[i - k] * m)
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_families() -> Vec<DistributionLaw> {
        vec![
            DistributionLaw::exponential(2.0).unwrap(),
            DistributionLaw::erlang(3, 2.5).unwrap(),
            DistributionLaw::deterministic(1.5).unwrap(),
            DistributionLaw::uniform(0.5, 1.5).unwrap(),
            DistributionLaw::hyperexponential(vec![0.3, 0.7], vec![0.5, 4.0]).unwrap(),
        ]
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(DistributionLaw::exponential(2.0).unwrap().cdf(0.0), 0.0);
        assert_eq!(DistributionLaw::deterministic(1.5).unwrap().cdf(2.0), 1.0);
        let erl = DistributionLaw::erlang(2, 3.0).unwrap();
        let want = 1.0 - (-3.0f64).exp() * (1.0 + 3.0);
        assert!((erl.cdf(1.0) - want).abs() < 1e-15);
        for law in all_families() {
            assert_eq!(law.cdf(-0.1), 0.0);
            assert!((law.cdf(1e4) - 1.0).abs() < 1e-12);
            let mut prev = 0.0;
            for k in 0..400 {
                let c = law.cdf(k as f64 * 0.01);
                assert!(c >= prev - 1e-15);
                prev = c;
            }
        }
    }

    #[test]
    fn lst_examples() {
        let e = DistributionLaw::exponential(1.0).unwrap();
        assert!((e.lst(Complex64::new(1.0, 0.0)).unwrap().re - 0.5).abs() < 1e-15);
        let d = DistributionLaw::deterministic(1.0).unwrap();
        let v = d.lst(Complex64::new(2f64.ln(), 0.0)).unwrap();
        assert!((v.re - 0.5).abs() < 1e-15);
        for law in all_families() {
            let at0 = law.lst(Complex64::new(0.0, 0.0)).unwrap();
            assert!((at0 - 1.0).norm() < 1e-14, "{law:?}");
            assert!(law.lst(Complex64::new(0.3, -2.0)).unwrap().norm() <= 1.0 + 1e-14);
            // Nonincreasing and convex on a grid.
            let vals: Vec<f64> = (0..50)
                .map(|k| law.lst(Complex64::new(0.1 * k as f64, 0.0)).unwrap().re)
                .collect();
            for w in vals.windows(3) {
                assert!(w[1] <= w[0] + 1e-15);
                assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-12);
            }
        }
        assert!(e.lst(Complex64::new(-0.1, 0.0)).is_err());
    }

    #[test]
    fn lst_agrees_with_gridded_density() {
        for law in all_families() {
            for &s in &[0.5, 1.0, 2.0] {
                let end = law.tail_point(1e-14);
                let mut numeric =
                    crate::grid::gauss_cells(|u| (-s * u).exp() * law.pdf(u), 1e-3, end);
                if let Some((x, m)) = law.atom() {
                    numeric += m * (-s * x).exp();
                }
                let exact = law.lst(Complex64::new(s, 0.0)).unwrap().re;
                assert!((numeric - exact).abs() < 1e-4, "{law:?} s={s}");
            }
        }
    }

    #[test]
    fn integrated_survival_examples() {
        let e = DistributionLaw::exponential(2.0).unwrap();
        assert_eq!(e.integrated_survival(0.0), 0.0);
        assert!((e.integrated_survival(20.0) - 0.5).abs() < 1e-8);
        let d = DistributionLaw::deterministic(1.5).unwrap();
        assert_eq!(d.integrated_survival(3.0), 1.5);
        for law in all_families() {
            let t = 40.0 * law.mean();
            assert!((law.integrated_survival(t) - law.mean()).abs() < 1e-6, "{law:?}");
            // Closed form against quadrature of the survival function.
            let q = crate::grid::gauss_cells(|u| law.survival(u), 0.01, 2.0);
            assert!((q - law.integrated_survival(2.0)).abs() < 1e-10, "{law:?}");
        }
    }

    #[test]
    fn sampling_is_reproducible_and_unbiased() {
        let d = DistributionLaw::deterministic(1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(d.sample(&mut rng), 1.5);

        let e = DistributionLaw::exponential(2.0).unwrap();
        let a: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(7);
            (0..5).map(|_| e.sample(&mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(7);
            (0..5).map(|_| e.sample(&mut r)).collect()
        };
        assert_eq!(a, b);

        let u = DistributionLaw::uniform(1.0, 3.0).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let mean = (0..n).map(|_| u.sample(&mut r)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.01);
    }

    #[test]
    fn sample_means_within_three_sigma() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        for law in all_families() {
            let n = 1_000_000usize;
            let mean = (0..n).map(|_| law.sample(&mut r)).sum::<f64>() / n as f64;
            let se = (law.variance() / n as f64).sqrt();
            assert!((mean - law.mean()).abs() <= 3.0 * se + 1e-12, "{law:?}");
        }
    }

    #[test]
    fn kolmogorov_smirnov_per_family() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000usize;
        // 1% critical value of the one-sample KS statistic.
        let crit = 1.628 / (n as f64).sqrt();
        for law in all_families() {
            if law.atom().is_some() {
                continue;
            }
            let mut xs: Vec<f64> = (0..n).map(|_| law.sample(&mut r)).collect();
            xs.sort_by(f64::total_cmp);
            let d = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let f = law.cdf(x);
                    (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
                })
                .fold(0.0, f64::max);
            assert!(d < crit, "{law:?}: D = {d}");
        }
    }

    #[test]
    fn convolution_examples() {
        let grid = TimeGrid::new(0.01, 4.0).unwrap();
        let a = SubDistribution::new(0.7, DistributionLaw::erlang(2, 1.5).unwrap()).unwrap();
        let id = convolve_sub(&a, &DistributionLaw::deterministic(0.0).unwrap(), &grid).unwrap();
        for (k, v) in id.iter().enumerate() {
            assert!((v - a.cdf(grid.right(k))).abs() < 1e-15);
        }
        let exp1 = DistributionLaw::exponential(1.0).unwrap();
        let a = SubDistribution::new(1.0, exp1.clone()).unwrap();
        let c = convolve_sub(&a, &exp1, &grid).unwrap();
        let k = grid.index_of(2.0).unwrap();
        let want = 1.0 - (-2.0f64).exp() * 3.0;
        assert!((c[k] - want).abs() < 2.0 * grid.step());
        assert!(c.windows(2).all(|w| w[1] >= w[0]));
        let zero = SubDistribution::new(0.0, exp1.clone()).unwrap();
        assert!(convolve_sub(&zero, &exp1, &grid).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn convolution_converges_first_order() {
        let exp1 = DistributionLaw::exponential(1.0).unwrap();
        let a = SubDistribution::new(1.0, exp1.clone()).unwrap();
        let want = 1.0 - (-2.0f64).exp() * 3.0;
        let errs: Vec<f64> = [0.04, 0.02, 0.01]
            .iter()
            .map(|&h| {
                let g = TimeGrid::new(h, 2.0).unwrap();
                let c = convolve_sub(&a, &exp1, &g).unwrap();
                (c[g.index_of(2.0).unwrap()] - want).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 0.9, "observed order {order}");
        }
    }

    #[test]
    fn family_round_trip() {
        for law in all_families() {
            let back = DistributionLaw::from_family(law.family(), &law.params()).unwrap();
            assert_eq!(back, law);
        }
        assert!(matches!(
            DistributionLaw::from_family("weibull", &[1.0]),
            Err(Error::Invalid(ref d)) if d[0].code == "unknown-family"
        ));
        assert!(matches!(
            DistributionLaw::from_family("exponential", &[-1.0]),
            Err(Error::Invalid(ref d)) if d[0].code == "invalid-parameter" && d[0].path == "params"
        ));
    }
}
