//! Quadrature rules on the reference interval `[0, 1]` and on the reference
//! triangle with vertices `(0,0), (1,0), (0,1)`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Highest exactness degree [`triangle_rule`] accepts.
pub const MAX_TRIANGLE_DEGREE: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule<P> {
    pub nodes: Vec<P>,
    pub weights: Vec<f64>,
    pub exactness_degree: usize,
}

pub type IntervalRule = QuadratureRule<f64>;
pub type TriangleRule = QuadratureRule<[f64; 2]>;

impl<P: Copy> QuadratureRule<P> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (P, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

impl IntervalRule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }

    /// The same rule on `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> IntervalRule {
        let len = b - a;
        QuadratureRule {
            nodes: self.nodes.iter().map(|s| a + len * s).collect(),
            weights: self.weights.iter().map(|w| w * len).collect(),
            exactness_degree: self.exactness_degree,
        }
    }
}

impl TriangleRule {
    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.iter().map(|(p, w)| w * f(p[0], p[1])).sum()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative on `[-1, 1]`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for j in 1..n {
        let p2 = ((2 * j + 1) as f64 * x * p1 - j as f64 * p0) / (j + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    // P_n' from the standard identity; valid away from x = +-1
    let dp = if (x * x - 1.0).abs() > 1e-300 {
        n as f64 * (x * p1 - p0) / (x * x - 1.0)
    } else {
        x.powi(n as i32 + 1) * (n * (n + 1)) as f64 / 2.0
    };
    (p1, dp)
}

/// Eigenvalues of a symmetric tridiagonal (Jacobi) matrix, ascending, with
/// the squared first components of the eigenvectors.
fn golub_welsch(diag: &[f64], off: &[f64]) -> Vec<(f64, f64)> {
    let m = diag.len();
    let mut j = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        j[(i, i)] = diag[i];
        if i + 1 < m {
            j[(i, i + 1)] = off[i];
            j[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut out: Vec<(f64, f64)> = (0..m)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn newton_polish(mut x: f64, f: impl Fn(f64) -> (f64, f64)) -> f64 {
    for _ in 0..8 {
        let (v, dv) = f(x);
        if dv == 0.0 {
            break;
        }
        let dx = v / dv;
        x -= dx;
        if dx.abs() < 1e-16 {
            break;
        }
    }
    x
}

/// `m`-point Gauss-Legendre rule on `[0, 1]`, exact to degree `2m - 1`.
pub fn gauss_legendre(m: usize) -> Result<IntervalRule> {
    if m == 0 {
        return Err(Error::InvalidArgument("Gauss-Legendre rule needs m >= 1".into()));
    }
    let off: Vec<f64> = (1..m).map(|j| j as f64 / ((4 * j * j - 1) as f64).sqrt()).collect();
    let eig = golub_welsch(&vec![0.0; m], &off);
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for (x0, _) in eig {
        let x = newton_polish(x0, |x| legendre(m, x));
        let (_, dp) = legendre(m, x);
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    // enforce exact symmetry about the midpoint
    for i in 0..m / 2 {
        let j = m - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    Ok(QuadratureRule {
        nodes: nodes.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        weights: weights.iter().map(|w| 0.5 * w).collect(),
        exactness_degree: 2 * m - 1,
    })
}

/// `m`-point left Gauss-Radau rule on `[0, 1]`: first node is exactly 0,
/// the right endpoint is excluded, exact to degree `2m - 2`.
pub fn gauss_radau_left(m: usize) -> Result<IntervalRule> {
    if m == 0 {
        return Err(Error::InvalidArgument("Gauss-Radau rule needs m >= 1".into()));
    }
    let mut nodes = vec![-1.0];
    let mut weights = vec![2.0 / (m * m) as f64];
    if m > 1 {
        // free nodes: Gauss-Jacobi(0, 1) nodes, roots of (P_{m-1} + P_m)/(1 + x)
        let n = m - 1;
        let diag: Vec<f64> = (0..n).map(|j| 1.0 / ((2 * j + 1) * (2 * j + 3)) as f64).collect();
        let off: Vec<f64> = (1..n)
            .map(|j| ((j * (j + 1)) as f64).sqrt() / (2 * j + 1) as f64)
            .collect();
        for (x0, _) in golub_welsch(&diag, &off) {
            let x = newton_polish(x0, |x| {
                let (a, da) = legendre(m - 1, x);
                let (b, db) = legendre(m, x);
                (a + b, da + db)
            });
            let (p, _) = legendre(m - 1, x);
            nodes.push(x);
            weights.push((1.0 - x) / ((m * m) as f64 * p * p));
        }
    }
    let mut rule = QuadratureRule {
        nodes: nodes.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        weights: weights.iter().map(|w| 0.5 * w).collect(),
        exactness_degree: 2 * m - 2,
    };
    rule.nodes[0] = 0.0;
    Ok(rule)
}

/// Rule on the reference triangle exact to at least `degree`.
///
/// Degrees 0-2 use the classical symmetric centroid and three-point rules;
/// higher degrees use a collapsed (conical product) Gauss rule, whose
/// weights are all positive.
pub fn triangle_rule(degree: usize) -> Result<TriangleRule> {
    match degree {
        0 | 1 => Ok(QuadratureRule {
            nodes: vec![[1.0 / 3.0, 1.0 / 3.0]],
            weights: vec![0.5],
            exactness_degree: 1,
        }),
        2 => Ok(QuadratureRule {
            nodes: vec![[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]],
            weights: vec![1.0 / 6.0; 3],
            exactness_degree: 2,
        }),
        d if d <= MAX_TRIANGLE_DEGREE => {
            // x = a, y = b (1 - a), dA = (1 - a) da db
            let ga = gauss_legendre((d + 3) / 2)?;
            let gb = gauss_legendre((d + 2) / 2)?;
            let mut nodes = Vec::with_capacity(ga.len() * gb.len());
            let mut weights = Vec::with_capacity(ga.len() * gb.len());
            for (a, wa) in ga.iter() {
                for (b, wb) in gb.iter() {
                    nodes.push([a, b * (1.0 - a)]);
                    weights.push(wa * wb * (1.0 - a));
                }
            }
            let exactness_degree = (2 * ga.len() - 2).min(2 * gb.len() - 1);
            Ok(QuadratureRule { nodes, weights, exactness_degree })
        }
        d => Err(Error::UnsupportedDegree { requested: d, max: MAX_TRIANGLE_DEGREE }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|i| i as f64).product()
    }

    /// Solves the moment equations sum w_i s_i^j = 1/(j+1) for the weights
    /// given nodes, by Gaussian elimination on the (square) Vandermonde system.
    fn moment_weights(nodes: &[f64]) -> Vec<f64> {
        let m = nodes.len();
        let mut a = DMatrix::<f64>::zeros(m, m);
        let mut b = nalgebra::DVector::<f64>::zeros(m);
        for j in 0..m {
            for (i, s) in nodes.iter().enumerate() {
                a[(j, i)] = s.powi(j as i32);
            }
            b[j] = 1.0 / (j + 1) as f64;
        }
        a.lu().solve(&b).unwrap().iter().copied().collect()
    }

    #[test]
    fn radau_small_rules() {
        let r = gauss_radau_left(1).unwrap();
        assert_eq!(r.nodes, vec![0.0]);
        assert_abs_diff_eq!(r.weights[0], 1.0, epsilon = 1e-15);

        let r = gauss_radau_left(2).unwrap();
        assert_abs_diff_eq!(r.nodes[1], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights[1], 0.75, epsilon = 1e-15);
        // moment-equation oracle: with s1 = 0, the j = 2 moment pins s2
        let w = moment_weights(&r.nodes);
        assert_abs_diff_eq!(w[0], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(w[0] * 0.0 + w[1] * r.nodes[1].powi(2), 1.0 / 3.0, epsilon = 1e-14);

        let r = gauss_radau_left(3).unwrap();
        let s6 = 6f64.sqrt();
        let nodes = [0.0, (6.0 - s6) / 10.0, (6.0 + s6) / 10.0];
        let weights = [1.0 / 9.0, (16.0 + s6) / 36.0, (16.0 - s6) / 36.0];
        for i in 0..3 {
            assert_abs_diff_eq!(r.nodes[i], nodes[i], epsilon = 1e-15);
            assert_abs_diff_eq!(r.weights[i], weights[i], epsilon = 1e-15);
        }
        let w = moment_weights(&nodes);
        for j in 3..5 {
            let q: f64 = (0..3).map(|i| w[i] * nodes[i].powi(j)).sum();
            assert_abs_diff_eq!(q, 1.0 / (j + 1) as f64, epsilon = 1e-14);
        }
        assert!(gauss_radau_left(0).is_err());
    }

    #[test]
    fn radau_exactness_and_witness() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in 1..=6 {
            let r = gauss_radau_left(m).unwrap();
            assert_eq!(r.nodes[0], 0.0);
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]) && *r.nodes.last().unwrap() < 1.0);
            assert!(r.weights.iter().all(|&w| w > 0.0));
            assert_abs_diff_eq!(r.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            let deg = 2 * m - 2;
            for _ in 0..1000 {
                let c: Vec<f64> = (0..=deg).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let exact: f64 = c.iter().enumerate().map(|(j, cj)| cj / (j + 1) as f64).sum();
                let q = r.integrate(|t| c.iter().rev().fold(0.0, |acc, cj| acc * t + cj));
                assert!((q - exact).abs() <= 1e-12 * exact.abs().max(1.0));
            }
            // t prod_{i>0} (t - s_i)^2 has degree 2m-1, vanishes at every node
            // and has a positive integral
            let witness = |t: f64| t * r.nodes[1..].iter().map(|s| (t - s).powi(2)).product::<f64>();
            assert_eq!(r.integrate(witness), 0.0);
            let exact = gauss_legendre(m + 1).unwrap().integrate(witness);
            assert!(exact > 0.0, "m={m}");
        }
    }

    #[test]
    fn legendre_rules() {
        let r = gauss_legendre(1).unwrap();
        assert_eq!(r.nodes, vec![0.5]);
        assert_eq!(r.weights, vec![1.0]);
        let r = gauss_legendre(2).unwrap();
        let d = 1.0 / 3f64.sqrt();
        assert_abs_diff_eq!(r.nodes[0], (1.0 - d) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.nodes[1], (1.0 + d) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights[0], 0.5, epsilon = 1e-15);
        let w = moment_weights(&r.nodes);
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(r.integrate(|t| t.powi(3)), 0.25, epsilon = 1e-15);
        for m in 1..=12 {
            let r = gauss_legendre(m).unwrap();
            for j in 0..=(2 * m - 1) {
                assert_abs_diff_eq!(r.integrate(|t| t.powi(j as i32)), 1.0 / (j + 1) as f64, epsilon = 1e-13);
            }
            for i in 0..m {
                assert_abs_diff_eq!(r.nodes[i] + r.nodes[m - 1 - i], 1.0, epsilon = 1e-15);
                assert_eq!(r.weights[i], r.weights[m - 1 - i]);
            }
        }
        assert!(gauss_legendre(0).is_err());
    }

    #[test]
    fn mapped_rule_scales() {
        let r = gauss_radau_left(3).unwrap().mapped(1.0, 3.0);
        assert_abs_diff_eq!(r.weights.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        // integral of t^4 over [1,3]
        assert_abs_diff_eq!(r.integrate(|t| t.powi(4)), (243.0 - 1.0) / 5.0, epsilon = 1e-11);
        assert_eq!(r.nodes[0], 1.0);
    }

    #[test]
    fn triangle_rules_integrate_monomials() {
        let r = triangle_rule(1).unwrap();
        assert_eq!(r.nodes, vec![[1.0 / 3.0, 1.0 / 3.0]]);
        assert_eq!(r.weights, vec![0.5]);
        assert_abs_diff_eq!(r.integrate(|x, _| x), 1.0 / 6.0, epsilon = 1e-15);
        for degree in 0..=MAX_TRIANGLE_DEGREE {
            let r = triangle_rule(degree).unwrap();
            assert!(r.exactness_degree >= degree);
            assert!(r.weights.iter().all(|&w| w > 0.0));
            assert_abs_diff_eq!(r.weights.iter().sum::<f64>(), 0.5, epsilon = 1e-14);
            for a in 0..=degree {
                for b in 0..=(degree - a) {
                    let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                    let q = r.integrate(|x, y| x.powi(a as i32) * y.powi(b as i32));
                    assert!((q - exact).abs() <= 1e-12 * exact, "deg {degree}: x^{a} y^{b}");
                }
            }
        }
        let r = triangle_rule(5).unwrap();
        assert_abs_diff_eq!(r.integrate(|x, y| x * x * y.powi(3)), 2.0 * 6.0 / 5040.0, epsilon = 1e-16);
        assert!(matches!(
            triangle_rule(MAX_TRIANGLE_DEGREE + 1),
            Err(Error::UnsupportedDegree { .. })
        ));
    }
}
