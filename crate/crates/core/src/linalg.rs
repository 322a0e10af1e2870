//! Small dense matrix helpers: Kronecker algebra, the matrix exponential and
//! the stationary-vector solve shared by the MAP and environment code.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type RMatrix = DMatrix<f64>;
pub type CMatrix = DMatrix<Complex64>;

pub fn to_complex(m: &RMatrix) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn kron(a: &RMatrix, b: &RMatrix) -> RMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = RMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// `A ⊕ B = A ⊗ I + I ⊗ B` for square `A`, `B`.
pub fn kron_sum(a: &RMatrix, b: &RMatrix) -> RMatrix {
    let ia = RMatrix::identity(a.nrows(), a.nrows());
    let ib = RMatrix::identity(b.nrows(), b.nrows());
    kron(a, &ib) + kron(&ia, b)
}

pub fn norm1_c(m: &CMatrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn norm1(m: &RMatrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs_c(m: &CMatrix) -> f64 {
    m.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// Row vector times matrix times the all-ones column.
pub fn contract(pi: &[f64], m: &CMatrix) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, &p) in pi.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let row: Complex64 = m.row(i).iter().sum();
        acc += row * p;
    }
    acc
}

pub fn contract_real(pi: &[f64], m: &RMatrix) -> f64 {
    pi.iter()
        .enumerate()
        .map(|(i, &p)| p * m.row(i).iter().sum::<f64>())
        .sum()
}

// Padé coefficients b_0..b_m for degrees 3, 5, 7, 9, 13 and the matching
// 1-norm thresholds (Higham 2005, Table 2.3).
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152;

fn scale(m: &CMatrix, c: f64) -> CMatrix {
    m.map(|x| x * c)
}

/// Matrix exponential by scaling and squaring with a diagonal Padé core.
pub fn expm(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return CMatrix::zeros(0, 0);
    }
    if n == 1 {
        return CMatrix::from_element(1, 1, a[(0, 0)].exp());
    }
    let ident = CMatrix::identity(n, n);
    let norm = norm1_c(a);
    let a2 = a * a;

    for &(deg, theta) in THETA.iter() {
        if norm <= theta {
            let coeffs: &[f64] = match deg {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            // Even/odd split over powers of A^2.
            let mut powers = vec![ident.clone(), a2.clone()];
            while powers.len() * 2 <= deg {
                let next = powers.last().unwrap() * &a2;
                powers.push(next);
            }
            let mut u = CMatrix::zeros(n, n);
            let mut v = CMatrix::zeros(n, n);
            for (k, p) in powers.iter().enumerate() {
                v += scale(p, coeffs[2 * k]);
                if 2 * k + 1 < coeffs.len() {
                    u += scale(p, coeffs[2 * k + 1]);
                }
            }
            let u = a * u;
            return pade_solve(&u, &v);
        }
    }

    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let sc = 0.5f64.powi(squarings);
    let a1 = scale(a, sc);
    let a2 = &a1 * &a1;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let u_inner = scale(&a6, b[13]) + scale(&a4, b[11]) + scale(&a2, b[9]);
    let u = &a1
        * (&a6 * u_inner
            + scale(&a6, b[7])
            + scale(&a4, b[5])
            + scale(&a2, b[3])
            + scale(&ident, b[1]));
    let v_inner = scale(&a6, b[12]) + scale(&a4, b[10]) + scale(&a2, b[8]);
    let v = &a6 * v_inner
        + scale(&a6, b[6])
        + scale(&a4, b[4])
        + scale(&a2, b[2])
        + scale(&ident, b[0]);
    let mut r = pade_solve(&u, &v);
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

fn pade_solve(u: &CMatrix, v: &CMatrix) -> CMatrix {
    let p = v + u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular for norms below theta")
}

/// Solve `x G = 0`, `x e = 1` for a generator-like matrix `G`
/// (zero row sums) by replacing one balance equation with the
/// normalization row. Rejects 1-norm condition estimates above `cond_cap`.
pub fn stationary_of_generator(g: &RMatrix, cond_cap: f64) -> Result<Vec<f64>> {
    let m = g.nrows();
    if m == 1 {
        return Ok(vec![1.0]);
    }
    // Transposed system: G^T x^T = 0 with the last equation replaced.
    let mut a = g.transpose();
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::zeros(m);
    rhs[m - 1] = 1.0;
    let lu = a.clone().lu();
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular stationary system".into()))?;
    let cond = norm1(&a) * norm1(&inv);
    if !cond.is_finite() || cond > cond_cap {
        return Err(Error::Numerical(format!(
            "stationary system ill-conditioned (condition estimate {cond:.3e} > {cond_cap:.1e})"
        )));
    }
    let x = inv * rhs;
    Ok(x.iter().map(|&v| if v.abs() < 1e-300 { 0.0 } else { v }).collect())
}

/// Strongly connected components of the directed graph with an edge
/// `i -> j` whenever `i != j` and `adj[(i, j)] > 0`.
pub fn communicating_classes(adj: &RMatrix) -> Vec<Vec<usize>> {
    let n = adj.nrows();
    let mut g = petgraph::graph::DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && adj[(i, j)] > 0.0 {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut classes: Vec<Vec<usize>> = petgraph::algo::tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.into_iter().map(|ix| ix.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    classes.sort();
    classes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    // Taylor series after scaling the norm below 1/2, then squaring back.
    fn taylor_expm(a: &CMatrix) -> CMatrix {
        let n = a.nrows();
        let norm = norm1_c(a);
        let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let a1 = a.map(|x| x * 0.5f64.powi(s));
        let mut term = CMatrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..40 {
            term = &term * &a1 / c(k as f64);
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn kron_sum_of_scalars_adds() {
        let a = RMatrix::from_element(1, 1, -1.0);
        let b = RMatrix::from_element(1, 1, -3.0);
        assert_eq!(kron_sum(&a, &b)[(0, 0)], -4.0);
    }

    #[test]
    fn kron_entries() {
        let a = RMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = RMatrix::from_row_slice(2, 2, &[0.0, 5.0, 6.0, 7.0]);
        let k = kron(&a, &b);
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..2 {
                    for q in 0..2 {
                        assert_eq!(k[(2 * i + p, 2 * j + q)], a[(i, j)] * b[(p, q)]);
                    }
                }
            }
        }
    }

    #[test]
    fn expm_matches_taylor_across_degrees() {
        let base = CMatrix::from_row_slice(
            3,
            3,
            &[c(-2.0), c(1.5), c(0.5), c(0.3), c(-1.0), c(0.7), c(1.0), c(2.0), c(-3.0)],
        );
        for &scale_by in &[1e-3, 0.05, 0.2, 0.6, 1.0, 5.0, 30.0] {
            let a = base.map(|x| x * scale_by);
            let got = expm(&a);
            let want = taylor_expm(&a);
            let rel = max_abs_c(&(&got - &want)) / max_abs_c(&want);
            assert!(rel < 1e-12, "scale {scale_by}: rel err {rel:e}");
        }
    }

    #[test]
    fn expm_complex_entries() {
        let a = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(-1.0, 0.3),
                Complex64::new(0.5, -0.2),
                Complex64::new(0.1, 0.0),
                Complex64::new(-0.4, 1.0),
            ],
        );
        let got = expm(&a.map(|x| x * 4.0));
        let want = taylor_expm(&a.map(|x| x * 4.0));
        assert!(max_abs_c(&(&got - &want)) < 1e-12);
    }

    #[test]
    fn stationary_two_state() {
        let g = RMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 3.0, -3.0]);
        let pi = stationary_of_generator(&g, 1e12).unwrap();
        assert!((pi[0] - 0.75).abs() < 1e-14);
        assert!((pi[1] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn reducible_generator_is_rejected() {
        let g = RMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        assert!(stationary_of_generator(&g, 1e12).is_err());
    }

    #[test]
    fn classes_found() {
        let adj = RMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(communicating_classes(&adj), vec![vec![0, 1], vec![2]]);
    }
}
