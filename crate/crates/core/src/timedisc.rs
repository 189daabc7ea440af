//! Temporal machinery on a slab partition of `[0, T]`.
//!
//! Slab-local polynomials are stored by their values at the left
//! Gauss-Radau nodes of the slab (Lagrange representation). Slab indices
//! are 0-based.

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, gauss_radau_left};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    breaks: Vec<f64>,
    degree: usize,
}

impl TimeGrid {
    pub fn new(breaks: Vec<f64>, degree: usize) -> Result<Self> {
        if breaks.len() < 2 {
            return Err(Error::InvalidArgument("time grid needs at least one slab".into()));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("time break points must be strictly increasing".into()));
        }
        Ok(TimeGrid { breaks, degree })
    }

    /// `num_slabs` equal slabs covering `[0, t_end]`.
    pub fn uniform(t_end: f64, num_slabs: usize, degree: usize) -> Result<Self> {
        if num_slabs == 0 || !(t_end > 0.0) {
            return Err(Error::InvalidArgument("uniform time grid needs T > 0 and N >= 1".into()));
        }
        let breaks = (0..=num_slabs)
            .map(|n| t_end * n as f64 / num_slabs as f64)
            .collect();
        TimeGrid::new(breaks, degree)
    }

    /// Uniform grid with step `tau`; `t_end / tau` must be an integer up to
    /// rounding.
    pub fn with_step(t_end: f64, tau: f64, degree: usize) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument("time step must be positive".into()));
        }
        let n = (t_end / tau).round();
        if n < 1.0 || ((n * tau - t_end) / t_end).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "time step {tau} does not divide the interval [0, {t_end}]"
            )));
        }
        TimeGrid::uniform(t_end, n as usize, degree)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn num_slabs(&self) -> usize {
        self.breaks.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    pub fn step(&self, n: usize) -> f64 {
        self.breaks[n + 1] - self.breaks[n]
    }

    pub fn max_step(&self) -> f64 {
        (0..self.num_slabs()).map(|n| self.step(n)).fold(0.0, f64::max)
    }

    /// `max tau_n / tau_{n-1}` over consecutive slabs (1 for a single slab).
    pub fn step_ratio(&self) -> f64 {
        (1..self.num_slabs())
            .map(|n| self.step(n) / self.step(n - 1))
            .fold(1.0, f64::max)
    }

    /// Slab containing `t`; `t_n` itself belongs to slab `n - 1` (left limit).
    pub fn slab_of(&self, t: f64) -> usize {
        let n = self.num_slabs();
        (0..n).find(|&s| t <= self.breaks[s + 1]).unwrap_or(n - 1)
    }
}

/// Lagrange basis at the Radau nodes of one slab.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabBasis {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `derivative[i][j] = l_j'(s_i)`.
    pub derivative: Vec<Vec<f64>>,
    /// `l_j(t_{n-1})`.
    pub left: Vec<f64>,
    /// `l_j(t_n^-)`.
    pub right: Vec<f64>,
}

impl SlabBasis {
    pub fn new(start: f64, end: f64, degree: usize) -> Result<Self> {
        if !(end > start) {
            return Err(Error::InvalidArgument("slab must have positive length".into()));
        }
        let rule = gauss_radau_left(degree + 1)?.mapped(start, end);
        let mut basis = SlabBasis {
            index: 0,
            start,
            end,
            nodes: rule.nodes,
            weights: rule.weights,
            derivative: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
        };
        basis.derivative = basis.nodes.iter().map(|&s| basis.derivatives(s)).collect();
        basis.left = basis.values(start);
        basis.right = basis.values(end);
        Ok(basis)
    }

    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.end - self.start
    }

    /// `[l_0(t), ..., l_ell(t)]`.
    pub fn values(&self, t: f64) -> Vec<f64> {
        let s = &self.nodes;
        (0..s.len())
            .map(|j| {
                s.iter()
                    .enumerate()
                    .filter(|&(m, _)| m != j)
                    .map(|(_, &sm)| (t - sm) / (s[j] - sm))
                    .product()
            })
            .collect()
    }

    /// `[l_0'(t), ..., l_ell'(t)]`.
    pub fn derivatives(&self, t: f64) -> Vec<f64> {
        let s = &self.nodes;
        let n = s.len();
        (0..n)
            .map(|j| {
                (0..n)
                    .filter(|&m| m != j)
                    .map(|m| {
                        let rest: f64 = (0..n)
                            .filter(|&q| q != j && q != m)
                            .map(|q| (t - s[q]) / (s[j] - s[q]))
                            .product();
                        rest / (s[j] - s[m])
                    })
                    .sum()
            })
            .collect()
    }

    /// Evaluates the scalar polynomial with the given nodal values at `t`.
    pub fn eval(&self, nodal: &[f64], t: f64) -> f64 {
        self.values(t).iter().zip(nodal).map(|(l, v)| l * v).sum()
    }

    /// Radau quadrature of `f` over the slab.
    pub fn quadrature(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&s, w)| w * f(s)).sum()
    }

    /// Temporal coupling `G = diag(w) D + e e^T`, i.e.
    /// `G[i][j] = int l_j' l_i + l_j(t_{n-1}) l_i(t_{n-1})`.
    pub fn coupling_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| self.weights[i] * self.derivative[i][j] + self.left[i] * self.left[j])
                    .collect()
            })
            .collect()
    }
}

/// Maximum of `sum_j |l_j(t)|` over `samples + 1` equispaced points of the slab.
pub fn lebesgue_constant(basis: &SlabBasis, samples: usize) -> f64 {
    (0..=samples)
        .map(|i| {
            let t = basis.start + basis.step() * i as f64 / samples as f64;
            basis.values(t).iter().map(|v| v.abs()).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

pub fn slab_basis(grid: &TimeGrid, n: usize) -> Result<SlabBasis> {
    if n >= grid.num_slabs() {
        return Err(Error::InvalidArgument(format!(
            "slab index {n} out of range (grid has {} slabs)",
            grid.num_slabs()
        )));
    }
    let mut basis = SlabBasis::new(grid.breaks[n], grid.breaks[n + 1], grid.degree)?;
    basis.index = n;
    Ok(basis)
}

/// Nodal values of the Radau interpolant `I_tau^R v`.
pub fn radau_interpolate(basis: &SlabBasis, v: impl Fn(f64) -> f64) -> Vec<f64> {
    basis.nodes.iter().map(|&s| v(s)).collect()
}

/// Nodal values of `P_tau v`: matches `v(t_n)` at the right endpoint and is
/// `L2(I_n)`-orthogonal to `P_{ell-1}` (integrals by `ell + 4`-point
/// Gauss-Legendre).
pub fn ptau_project(basis: &SlabBasis, v: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = basis.len();
    let gl = gauss_legendre(n + 3)
        .expect("positive point count")
        .mapped(basis.start, basis.end);
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    let mut b = nalgebra::DVector::<f64>::zeros(n);
    a.row_mut(0).copy_from_slice(&basis.right);
    b[0] = v(basis.end);
    for m in 1..n {
        // test against ((t - t_{n-1}) / tau)^(m-1)
        for (t, w) in gl.iter() {
            let q = ((t - basis.start) / basis.step()).powi(m as i32 - 1);
            let l = basis.values(t);
            for j in 0..n {
                a[(m, j)] += w * l[j] * q;
            }
            b[m] += w * v(t) * q;
        }
    }
    a.lu()
        .solve(&b)
        .expect("P_tau system is nonsingular")
        .iter()
        .copied()
        .collect()
}

/// Weights `c[i][j] = l_j^{prev}(s_i^{target})` that carry a polynomial on
/// `prev` over to the nodal basis of `target` by global continuation.
pub fn extension_weights(prev: &SlabBasis, target: &SlabBasis) -> Vec<Vec<f64>> {
    target.nodes.iter().map(|&s| prev.values(s)).collect()
}

/// Continues the polynomial with nodal values `prev_nodal` on `prev` to the
/// slab `target` and returns its nodal values there.
pub fn tilde_extend(prev: &SlabBasis, prev_nodal: &[f64], target: &SlabBasis) -> Vec<f64> {
    target.nodes.iter().map(|&s| prev.eval(prev_nodal, s)).collect()
}

/// Linear combination `sum_j c[j] v[j]` of equally sized vectors.
pub fn combine(coeffs: &[f64], vectors: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; vectors.first().map_or(0, Vec::len)];
    for (c, v) in coeffs.iter().zip(vectors) {
        if *c != 0.0 {
            for (o, x) in out.iter_mut().zip(v) {
                *o += c * x;
            }
        }
    }
    out
}
