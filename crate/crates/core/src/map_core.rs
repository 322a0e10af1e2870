//! Markov arrival processes: construction, superposition, stationary phase
//! law, arrival rates, the matrix generating function `D(z)` and the
//! counting-process PGF `exp(D(z) t)`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, RMatrix};

/// Absolute tolerance on generator row sums, scaled by the row magnitude.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Largest accepted superposed phase space.
pub const DEFAULT_PHASE_CAP: usize = 4096;
/// Stationary solves with a larger 1-norm condition estimate are rejected.
pub const CONDITION_CAP: f64 = 1e12;

const Z_SLACK: f64 = 1e-12;

/// A single-type MAP `{D0, D1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleMap {
    d0: RMatrix,
    d1: RMatrix,
}

impl SingleMap {
    pub fn new(d0: RMatrix, d1: RMatrix) -> Result<Self> {
        validate_map(&d0, std::slice::from_ref(&d1), "d0", "d1")?;
        Ok(Self { d0, d1 })
    }

    /// Poisson stream of rate `rate` (a 1×1 MAP).
    pub fn poisson(rate: f64) -> Result<Self> {
        Self::new(
            RMatrix::from_element(1, 1, -rate),
            RMatrix::from_element(1, 1, rate),
        )
    }

    pub fn d0(&self) -> &RMatrix {
        &self.d0
    }

    pub fn d1(&self) -> &RMatrix {
        &self.d1
    }

    pub fn dim(&self) -> usize {
        self.d0.nrows()
    }
}

/// The superposed, type-marked MAP `{D0, D1, …, DK}` of order `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedMap {
    d0: RMatrix,
    marks: Vec<RMatrix>,
}

impl MarkedMap {
    pub fn new(d0: RMatrix, marks: Vec<RMatrix>) -> Result<Self> {
        if marks.is_empty() {
            return Err(Error::invalid(
                "type-count",
                "marks",
                "a marked MAP needs at least one customer type",
            ));
        }
        validate_map(&d0, &marks, "d0", "marks")?;
        Ok(Self { d0, marks })
    }

    pub fn d0(&self) -> &RMatrix {
        &self.d0
    }

    pub fn marks(&self) -> &[RMatrix] {
        &self.marks
    }

    pub fn mark(&self, r: usize) -> &RMatrix {
        &self.marks[r]
    }

    /// Phase count `m`.
    pub fn order(&self) -> usize {
        self.d0.nrows()
    }

    /// Customer-type count `K`.
    pub fn types(&self) -> usize {
        self.marks.len()
    }

    /// Phase generator `D = D0 + Σ D_r`.
    pub fn generator(&self) -> RMatrix {
        self.marks.iter().fold(self.d0.clone(), |acc, d| acc + d)
    }

    /// True when every mark is zero (a stream with no arrivals).
    pub fn is_silent(&self) -> bool {
        self.marks.iter().all(|d| d.iter().all(|&x| x == 0.0))
    }
}

fn validate_map(d0: &RMatrix, marks: &[RMatrix], d0_name: &str, marks_name: &str) -> Result<()> {
    let m = d0.nrows();
    let mut diags = Vec::new();
    if m == 0 || d0.ncols() != m {
        return Err(Error::invalid(
            "dimension",
            d0_name,
            format!("expected a nonempty square matrix, got {}x{}", d0.nrows(), d0.ncols()),
        ));
    }
    for (r, d) in marks.iter().enumerate() {
        if d.shape() != (m, m) {
            return Err(Error::invalid(
                "dimension",
                mark_path(marks_name, marks.len(), r),
                format!("expected {m}x{m}, got {}x{}", d.nrows(), d.ncols()),
            ));
        }
    }
    let mut generator = d0.clone();
    for d in marks {
        generator += d;
    }
    // A 1×1 all-zero MAP is the degenerate stream without arrivals.
    let silent_scalar = m == 1 && d0[(0, 0)] == 0.0 && marks.iter().all(|d| d[(0, 0)] == 0.0);

    for i in 0..m {
        for j in 0..m {
            let x = d0[(i, j)];
            if !x.is_finite() {
                diags.push(crate::error::Diagnostic::new(
                    "non-finite",
                    format!("{d0_name}[{i}][{j}]"),
                    "entry is not finite",
                ));
            } else if i == j && x >= 0.0 && !silent_scalar {
                diags.push(crate::error::Diagnostic::new(
                    "map-diagonal",
                    format!("{d0_name}[{i}][{i}]"),
                    format!("diagonal entry must be strictly negative, got {x}"),
                ));
            } else if i != j && x < 0.0 {
                diags.push(crate::error::Diagnostic::new(
                    "map-negative",
                    format!("{d0_name}[{i}][{j}]"),
                    format!("off-diagonal entry must be nonnegative, got {x}"),
                ));
            }
        }
    }
    for (r, d) in marks.iter().enumerate() {
        for i in 0..m {
            for j in 0..m {
                let x = d[(i, j)];
                if !x.is_finite() || x < 0.0 {
                    diags.push(crate::error::Diagnostic::new(
                        "map-negative",
                        format!("{}[{i}][{j}]", mark_path(marks_name, marks.len(), r)),
                        format!("mark entries must be finite and nonnegative, got {x}"),
                    ));
                }
            }
        }
    }
    if !diags.is_empty() {
        return Err(Error::Invalid(diags));
    }
    for i in 0..m {
        let row = generator.row(i);
        let sum: f64 = row.iter().sum();
        let scale: f64 = row.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
        if sum.abs() > ROW_SUM_TOL * scale {
            diags.push(crate::error::Diagnostic::new(
                "map-row-sum",
                format!("{d0_name}[{i}]"),
                format!("row {i} of D0 + ΣD_r sums to {sum:e}, expected 0"),
            ));
        }
    }
    if !diags.is_empty() {
        return Err(Error::Invalid(diags));
    }
    if m > 1 {
        let classes = linalg::communicating_classes(&generator);
        if classes.len() > 1 {
            return Err(Error::invalid(
                "map-reducible",
                d0_name,
                format!("phase generator is reducible; communicating classes {classes:?}"),
            ));
        }
    }
    if !silent_scalar {
        // Irreducible D with a nonzero mark implies a nonsingular D0, but the
        // generator may also be irreducible with every mark zero.
        let det = d0.clone().lu().determinant();
        let scale = d0.iter().map(|x| x.abs()).fold(0.0, f64::max).powi(m as i32);
        if det.abs() <= 1e-14 * scale {
            return Err(Error::invalid(
                "map-singular",
                d0_name,
                "D0 must be nonsingular",
            ));
        }
    }
    Ok(())
}

fn mark_path(name: &str, count: usize, r: usize) -> String {
    if name == "d1" && count == 1 {
        name.to_string()
    } else {
        format!("{name}[{r}]")
    }
}

/// Superpose independent single-type MAPs into a marked MAP:
/// `D0 = ⊕ D0_r`, `D_r = I ⊗ … ⊗ D1_r ⊗ … ⊗ I`.
pub fn superpose(components: &[SingleMap]) -> Result<MarkedMap> {
    superpose_capped(components, DEFAULT_PHASE_CAP)
}

pub fn superpose_capped(components: &[SingleMap], cap: usize) -> Result<MarkedMap> {
    if components.is_empty() {
        return Err(Error::invalid(
            "type-count",
            "components",
            "need at least one MAP component",
        ));
    }
    let mut order: usize = 1;
    for c in components {
        order = order.saturating_mul(c.dim());
    }
    if order > cap {
        return Err(Error::invalid(
            "phase-cap",
            "components",
            format!("superposed phase space has {order} phases, cap is {cap}"),
        ));
    }
    let mut d0 = components[0].d0.clone();
    for c in &components[1..] {
        d0 = linalg::kron_sum(&d0, &c.d0);
    }
    let marks = (0..components.len())
        .map(|r| {
            components
                .iter()
                .enumerate()
                .fold(RMatrix::identity(1, 1), |acc, (q, c)| {
                    let factor = if q == r {
                        c.d1.clone()
                    } else {
                        RMatrix::identity(c.dim(), c.dim())
                    };
                    linalg::kron(&acc, &factor)
                })
        })
        .collect();
    MarkedMap::new(d0, marks)
}

/// Stationary law `π` of the phase process.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryVector {
    pi: Vec<f64>,
}

impl StationaryVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.pi
    }
}

pub fn stationary_vector(map: &MarkedMap) -> Result<StationaryVector> {
    let pi = linalg::stationary_of_generator(&map.generator(), CONDITION_CAP)?;
    Ok(StationaryVector { pi })
}

/// Per-type stationary arrival rates `λ_r = π D_r e`.
pub fn arrival_rates(map: &MarkedMap, pi: &StationaryVector) -> Vec<f64> {
    map.marks
        .iter()
        .map(|d| linalg::contract_real(&pi.pi, d))
        .collect()
}

fn check_z(map: &MarkedMap, z: &[Complex64]) -> Result<()> {
    if z.len() != map.types() {
        return Err(Error::Domain(format!(
            "expected {} transform arguments, got {}",
            map.types(),
            z.len()
        )));
    }
    for (r, zr) in z.iter().enumerate() {
        if !(zr.norm() <= 1.0 + Z_SLACK) {
            return Err(Error::Domain(format!("|z[{r}]| = {} exceeds 1", zr.norm())));
        }
    }
    Ok(())
}

/// `D(z) = D0 + Σ z_r D_r`.
pub fn generator_pgf(map: &MarkedMap, z: &[Complex64]) -> Result<CMatrix> {
    check_z(map, z)?;
    Ok(generator_pgf_unchecked(map, z))
}

pub(crate) fn generator_pgf_unchecked(map: &MarkedMap, z: &[Complex64]) -> CMatrix {
    let mut out = linalg::to_complex(&map.d0);
    for (d, &zr) in map.marks.iter().zip(z) {
        out += d.map(|x| zr * x);
    }
    out
}

/// Counting-process PGF `P(z, t) = exp(D(z) t)`.
pub fn counting_pgf(map: &MarkedMap, z: &[Complex64], t: f64) -> Result<CMatrix> {
    check_z(map, z)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be finite and nonnegative, got {t}")));
    }
    let dz = generator_pgf_unchecked(map, z);
    Ok(linalg::expm(&dz.map(|x| x * t)))
}

/// Per-type retention probabilities `p_r(x)` for Bernoulli thinning.
#[derive(Clone)]
pub struct ThinningProfile {
    probs: Vec<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for ThinningProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ThinningProfile")
            .field("types", &self.probs.len())
            .finish()
    }
}

impl ThinningProfile {
    pub fn new(probs: Vec<Arc<dyn Fn(f64) -> f64 + Send + Sync>>) -> Self {
        Self { probs }
    }

    pub fn constant(values: &[f64]) -> Self {
        Self {
            probs: values
                .iter()
                .map(|&p| Arc::new(move |_x: f64| p) as Arc<dyn Fn(f64) -> f64 + Send + Sync>)
                .collect(),
        }
    }

    pub fn eval(&self, r: usize, x: f64) -> f64 {
        (self.probs[r])(x)
    }

    pub fn types(&self) -> usize {
        self.probs.len()
    }
}

/// Rate-matrix PGF of the thinned process:
/// `D_T(z, x) = D0 + Σ D_r [1 - p_r(x) + z_r p_r(x)]`.
pub fn thin(map: &MarkedMap, profile: &ThinningProfile, z: &[Complex64], x: f64) -> Result<CMatrix> {
    check_z(map, z)?;
    if profile.types() != map.types() {
        return Err(Error::Domain(format!(
            "thinning profile has {} types, MAP has {}",
            profile.types(),
            map.types()
        )));
    }
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("thinning time must be nonnegative, got {x}")));
    }
    let mut out = linalg::to_complex(&map.d0);
    for (r, d) in map.marks.iter().enumerate() {
        let p = profile.eval(r, x);
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("p_{r}({x}) = {p} lies outside [0, 1]")));
        }
        let w = Complex64::new(1.0 - p, 0.0) + z[r] * p;
        out += d.map(|v| w * v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_c;

    fn one() -> Complex64 {
        Complex64::new(1.0, 0.0)
    }

    fn map2(a: f64, b: f64, l1: f64, l2: f64) -> SingleMap {
        SingleMap::new(
            RMatrix::from_row_slice(2, 2, &[-(a + l1), a, b, -(b + l2)]),
            RMatrix::from_row_slice(2, 2, &[l1, 0.0, 0.0, l2]),
        )
        .unwrap()
    }

    #[test]
    fn single_poisson_component() {
        let m = superpose(&[SingleMap::poisson(2.0).unwrap()]).unwrap();
        assert_eq!(m.order(), 1);
        assert_eq!(m.d0()[(0, 0)], -2.0);
        assert_eq!(m.mark(0)[(0, 0)], 2.0);
    }

    #[test]
    fn two_poisson_components_add() {
        let m = superpose(&[SingleMap::poisson(1.0).unwrap(), SingleMap::poisson(3.0).unwrap()]).unwrap();
        assert_eq!(m.order(), 1);
        assert_eq!(m.d0()[(0, 0)], -4.0);
        assert_eq!(m.mark(0)[(0, 0)], 1.0);
        assert_eq!(m.mark(1)[(0, 0)], 3.0);
    }

    #[test]
    fn superposed_2x2_maps_match_direct_kronecker() {
        let a = map2(0.5, 0.7, 1.0, 4.0);
        let b = SingleMap::new(
            RMatrix::from_row_slice(2, 2, &[-3.0, 1.0, 0.2, -0.5]),
            RMatrix::from_row_slice(2, 2, &[1.5, 0.5, 0.1, 0.2]),
        )
        .unwrap();
        let m = superpose(&[a.clone(), b.clone()]).unwrap();
        // Entry-by-entry oracle over the 16 positions, phase index (i, k).
        for i in 0..2 {
            for k in 0..2 {
                for j in 0..2 {
                    for l in 0..2 {
                        let row = 2 * i + k;
                        let col = 2 * j + l;
                        let delta = |x: usize, y: usize| if x == y { 1.0 } else { 0.0 };
                        let d0 = a.d0()[(i, j)] * delta(k, l) + delta(i, j) * b.d0()[(k, l)];
                        let d1 = a.d1()[(i, j)] * delta(k, l);
                        let d2 = delta(i, j) * b.d1()[(k, l)];
                        assert!((m.d0()[(row, col)] - d0).abs() < 1e-15);
                        assert!((m.mark(0)[(row, col)] - d1).abs() < 1e-15);
                        assert!((m.mark(1)[(row, col)] - d2).abs() < 1e-15);
                    }
                }
            }
        }
        for row in m.generator().row_iter() {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_components_are_named() {
        let err = SingleMap::new(
            RMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -1.0]),
            RMatrix::from_row_slice(2, 2, &[0.4, 0.0, 0.0, 1.0]),
        )
        .unwrap_err();
        match err {
            Error::Invalid(d) => {
                assert_eq!(d[0].code, "map-row-sum");
                assert_eq!(d[0].path, "d0[0]");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = SingleMap::new(
            RMatrix::from_row_slice(1, 1, &[-1.0]),
            RMatrix::from_row_slice(1, 1, &[-1.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Invalid(ref d) if d[0].code == "map-negative"));
    }

    #[test]
    fn phase_cap_enforced() {
        let c = map2(1.0, 1.0, 1.0, 1.0);
        let err = superpose_capped(&[c.clone(), c.clone(), c], 4).unwrap_err();
        assert!(matches!(err, Error::Invalid(ref d) if d[0].code == "phase-cap"));
    }

    #[test]
    fn stationary_examples() {
        let m = superpose(&[SingleMap::poisson(2.0).unwrap()]).unwrap();
        assert_eq!(stationary_vector(&m).unwrap().as_slice(), &[1.0]);

        let sym = MarkedMap::new(
            RMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -2.0]),
            vec![RMatrix::identity(2, 2)],
        )
        .unwrap();
        let pi = stationary_vector(&sym).unwrap();
        assert!((pi.as_slice()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn superposed_stationary_is_kronecker_of_components() {
        let a = map2(0.5, 0.7, 1.0, 4.0);
        let b = map2(2.0, 0.3, 0.1, 0.9);
        let pa = stationary_vector(&superpose(&[a.clone()]).unwrap()).unwrap();
        let pb = stationary_vector(&superpose(&[b.clone()]).unwrap()).unwrap();
        let p = stationary_vector(&superpose(&[a, b]).unwrap()).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                let want = pa.as_slice()[i] * pb.as_slice()[k];
                assert!((p.as_slice()[2 * i + k] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn arrival_rate_examples() {
        let m = superpose(&[SingleMap::poisson(2.0).unwrap()]).unwrap();
        let pi = stationary_vector(&m).unwrap();
        assert_eq!(arrival_rates(&m, &pi), vec![2.0]);

        // MMPP with rates (1, 5) and symmetric switching: π = (½, ½).
        let mmpp = superpose(&[map2(0.5, 0.5, 1.0, 5.0)]).unwrap();
        let pi = stationary_vector(&mmpp).unwrap();
        assert!((arrival_rates(&mmpp, &pi)[0] - 3.0).abs() < 1e-12);

        let zero_mark = MarkedMap::new(
            RMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
            vec![RMatrix::zeros(2, 2)],
        );
        // Irreducible D with D0 = D is singular.
        assert!(zero_mark.is_err());
        let silent = MarkedMap::new(RMatrix::zeros(1, 1), vec![RMatrix::zeros(1, 1)]).unwrap();
        let pi = stationary_vector(&silent).unwrap();
        assert_eq!(arrival_rates(&silent, &pi), vec![0.0]);
    }

    #[test]
    fn generator_pgf_points() {
        let a = map2(0.5, 0.7, 1.0, 4.0);
        let b = map2(2.0, 0.3, 0.1, 0.9);
        let m = superpose(&[a, b]).unwrap();
        let at_one = generator_pgf(&m, &[one(), one()]).unwrap();
        assert!(max_abs_c(&(at_one - linalg::to_complex(&m.generator()))) < 1e-15);
        let zero = Complex64::new(0.0, 0.0);
        let at_zero = generator_pgf(&m, &[zero, zero]).unwrap();
        assert!(max_abs_c(&(at_zero - linalg::to_complex(m.d0()))) < 1e-15);
        let half = Complex64::new(0.5, 0.0);
        let got = generator_pgf(&m, &[half, one()]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = m.d0()[(i, j)] + 0.5 * m.mark(0)[(i, j)] + m.mark(1)[(i, j)];
                assert!((got[(i, j)].re - want).abs() < 1e-15);
            }
        }
        assert!(generator_pgf(&m, &[Complex64::new(1.1, 0.0), one()]).is_err());
    }

    #[test]
    fn counting_pgf_basics() {
        let m = superpose(&[map2(0.5, 0.7, 1.0, 4.0)]).unwrap();
        let p0 = counting_pgf(&m, &[Complex64::new(0.3, 0.2)], 0.0).unwrap();
        assert!(max_abs_c(&(p0 - CMatrix::identity(2, 2))) < 1e-15);
        let p = counting_pgf(&m, &[one()], 2.5).unwrap();
        for row in p.row_iter() {
            assert!((row.iter().sum::<Complex64>() - one()).norm() < 1e-9);
        }
        let poisson = superpose(&[SingleMap::poisson(2.0).unwrap()]).unwrap();
        let v = counting_pgf(&poisson, &[Complex64::new(0.5, 0.0)], 1.0).unwrap()[(0, 0)];
        assert!((v.re - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn thinning_examples() {
        let poisson = superpose(&[SingleMap::poisson(2.0).unwrap()]).unwrap();
        let zero = Complex64::new(0.0, 0.0);
        let v = thin(&poisson, &ThinningProfile::constant(&[0.25]), &[zero], 1.0).unwrap();
        assert!((v[(0, 0)].re + 0.5).abs() < 1e-15);

        let m = superpose(&[map2(0.5, 0.7, 1.0, 4.0), map2(2.0, 0.3, 0.1, 0.9)]).unwrap();
        let z = [Complex64::new(0.3, 0.1), Complex64::new(-0.2, 0.5)];
        let full = thin(&m, &ThinningProfile::constant(&[1.0, 1.0]), &z, 0.7).unwrap();
        assert!(max_abs_c(&(full - generator_pgf(&m, &z).unwrap())) < 1e-15);
        let profile = ThinningProfile::new(vec![
            Arc::new(|x: f64| (-x).exp()),
            Arc::new(|x: f64| 1.0 / (1.0 + x)),
        ]);
        let at_one = thin(&m, &profile, &[one(), one()], 3.0).unwrap();
        assert!(max_abs_c(&(at_one - linalg::to_complex(&m.generator()))) < 1e-15);
        let bad = ThinningProfile::constant(&[1.5, 0.0]);
        assert!(thin(&m, &bad, &z, 0.0).is_err());
    }
}
