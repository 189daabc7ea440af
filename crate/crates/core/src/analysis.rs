//! Error quantities of a computed trajectory against an exact solution, and
//! empirical convergence rates.
//!
//! The squared velocity error is
//! `|e|^2_{Linf(L2)} + nu sum_n int_{I_n} |e|^2_A + sum_n sum_F Q^R(gamma_F int_F |[e]|^2)`,
//! with the sup in time taken over a fixed sampling set, the `A`-norm time
//! integral by Gauss-Legendre and the jump term by the Radau rule with the
//! `gamma_F` values stored in the trajectory.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{divergence_norm_sq, facet_points, facet_side, FacetTab, VolumeTab};
use crate::error::{Error, Result};
use crate::manufactured::ExactSolution;
use crate::mesh::Point;
use crate::quadrature::gauss_legendre;
use crate::solver::{Problem, Trajectory};
use crate::spaces::{combine_jets, Mat2, Vec2};
use crate::timedisc::combine;

/// Error contributions of one slab.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlabErrors {
    /// Largest sampled `|e(t)|_{L2}^2` on the slab.
    pub linf_l2_sq: f64,
    /// `nu int_{I_n} |e|_A^2`.
    pub a_norm_sq: f64,
    /// `sum_F Q^R(gamma_F int_F |[e]|^2)`.
    pub gamma_jump_sq: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub linf_l2_velocity: f64,
    pub a_norm_sq_weighted: f64,
    pub gamma_jump_sq: f64,
    pub err_u: f64,
    pub pressure_l2_final: f64,
    pub max_divergence: f64,
    pub slabs: Vec<SlabErrors>,
}

impl ErrorReport {
    /// `err_u^2` rebuilt from the per-slab contributions.
    pub fn err_u_sq_from_slabs(&self) -> f64 {
        let linf = self.slabs.iter().map(|s| s.linf_l2_sq).fold(0.0, f64::max);
        linf + self.slabs.iter().map(|s| s.a_norm_sq + s.gamma_jump_sq).sum::<f64>()
    }
}

/// Time sampling of the sup-norm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sampling {
    /// Equispaced interior points per slab, in addition to the Radau nodes
    /// and both slab endpoints. `None` means `ell + 3`.
    pub interior_points: Option<usize>,
}

fn vsub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn vnorm_sq(a: Vec2) -> f64 {
    a[0] * a[0] + a[1] * a[1]
}

fn msub_norm_sq(a: &Mat2, b: &Mat2) -> f64 {
    (0..2).flat_map(|i| (0..2).map(move |j| (a[i][j] - b[i][j]).powi(2))).sum()
}

/// Spatial error integrals of several coefficient vectors at their times.
struct SpatialErrors<'a> {
    problem: &'a Problem,
    exact: &'a dyn ExactSolution,
    volume: VolumeTab,
    facets: FacetTab,
}

impl<'a> SpatialErrors<'a> {
    fn new(problem: &'a Problem, exact: &'a dyn ExactSolution) -> Self {
        let v = &problem.spaces.velocity;
        let k = v.degree();
        SpatialErrors { problem, exact, volume: VolumeTab::new(v, 2 * k + 4), facets: FacetTab::new(v, k + 4) }
    }

    /// `|u(t_s) - u_h^s|_{L2}^2` for each sample `(t_s, u_h^s)`.
    fn l2_sq(&self, samples: &[(f64, Vec<f64>)]) -> Vec<f64> {
        let v = &self.problem.spaces.velocity;
        let per_element: Vec<Vec<f64>> = (0..v.mesh().num_elements())
            .into_par_iter()
            .map(|e| {
                let map = v.element_map(e);
                let jets = v.element_jets(e, &self.volume.jets);
                let xs: Vec<Point> = self.volume.rule.nodes.iter().map(|&x| map.to_physical(x)).collect();
                samples
                    .iter()
                    .map(|(t, u)| {
                        jets.iter()
                            .zip(&xs)
                            .zip(&self.volume.rule.weights)
                            .map(|((row, &x), w)| {
                                let uh = combine_jets(row, v.element_dofs(e), u).value;
                                w * map.det * vnorm_sq(vsub(self.exact.velocity_in(e, x, *t), uh))
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect();
        sum_columns(&per_element, samples.len())
    }

    /// `|e(t_s)|_A^2 = |grad_h e|^2 + sum_F sigma/h_F |[e]|^2` per sample.
    fn a_norm_sq(&self, samples: &[(f64, Vec<f64>)]) -> Vec<f64> {
        let v = &self.problem.spaces.velocity;
        let mesh = v.mesh();
        let sigma = self.problem.operators.sigma;
        let volume: Vec<Vec<f64>> = (0..mesh.num_elements())
            .into_par_iter()
            .map(|e| {
                let map = v.element_map(e);
                let jets = v.element_jets(e, &self.volume.jets);
                let xs: Vec<Point> = self.volume.rule.nodes.iter().map(|&x| map.to_physical(x)).collect();
                samples
                    .iter()
                    .map(|(t, u)| {
                        jets.iter()
                            .zip(&xs)
                            .zip(&self.volume.rule.weights)
                            .map(|((row, &x), w)| {
                                let gh = combine_jets(row, v.element_dofs(e), u).gradient;
                                w * map.det * msub_norm_sq(&self.exact.gradient_in(e, x, *t), &gh)
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let facets: Vec<Vec<f64>> = (0..mesh.num_facets())
            .into_par_iter()
            .map(|f| {
                let jumps = self.jump_sq(f, samples);
                let facet = &mesh.facets()[f];
                jumps.into_iter().map(|j| sigma / facet.diameter * j).collect()
            })
            .collect();
        let a = sum_columns(&volume, samples.len());
        let b = sum_columns(&facets, samples.len());
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    }

    /// `int_F |[e(t_s)]|^2` per sample; on boundary facets the jump is the
    /// trace.
    fn jump_sq(&self, f: usize, samples: &[(f64, Vec<f64>)]) -> Vec<f64> {
        let v = &self.problem.spaces.velocity;
        let mesh = v.mesh();
        let facet = &mesh.facets()[f];
        let pts = facet_points(mesh, facet, &self.facets.rule);
        let plus = facet_side(v, &self.facets, facet, 0);
        let minus = facet.minus().map(|_| facet_side(v, &self.facets, facet, 1));
        samples
            .iter()
            .map(|(t, u)| {
                facet.diameter
                    * pts
                        .iter()
                        .enumerate()
                        .zip(&self.facets.rule.weights)
                        .map(|((r, &x), w)| {
                            let mut j =
                                vsub(self.exact.velocity_in(facet.plus(), x, *t), combine_jets(&plus.jets[r], plus.dofs, u).value);
                            if let (Some(m), Some(side)) = (facet.minus(), &minus) {
                                let em = vsub(self.exact.velocity_in(m, x, *t), combine_jets(&side.jets[r], side.dofs, u).value);
                                j = vsub(j, em);
                            }
                            w * vnorm_sq(j)
                        })
                        .sum::<f64>()
            })
            .collect()
    }

    /// `sum_F gamma_F int_F |[e]|^2` over interior facets per sample.
    fn gamma_jump_sq(&self, samples: &[(f64, Vec<f64>)], gammas: &[&[f64]]) -> Vec<f64> {
        let mesh = self.problem.spaces.mesh();
        let per_facet: Vec<Vec<f64>> = (0..mesh.num_facets())
            .into_par_iter()
            .map(|f| {
                if !mesh.facets()[f].is_interior() {
                    return vec![0.0; samples.len()];
                }
                self.jump_sq(f, samples).into_iter().zip(gammas).map(|(j, g)| g[f] * j).collect()
            })
            .collect();
        sum_columns(&per_facet, samples.len())
    }
}

fn sum_columns(rows: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for row in rows {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// Velocity error components of `traj` against `exact`.
pub fn error_energy(problem: &Problem, traj: &Trajectory, exact: &dyn ExactSolution) -> ErrorReport {
    error_energy_with(problem, traj, exact, Sampling::default())
}

pub fn error_energy_with(problem: &Problem, traj: &Trajectory, exact: &dyn ExactSolution, sampling: Sampling) -> ErrorReport {
    let spatial = SpatialErrors::new(problem, exact);
    let nu = problem.nu();
    let mut slabs = Vec::with_capacity(traj.slabs.len());
    for slab in &traj.slabs {
        let b = &slab.basis;
        let ell = b.degree();
        let at = |t: f64| (t, combine(&b.values(t), &slab.velocity));
        // sup-norm samples
        let interior = sampling.interior_points.unwrap_or(ell + 3);
        let mut times: Vec<f64> = b.nodes.clone();
        times.push(b.end);
        times.extend((1..=interior).map(|j| b.start + b.step() * j as f64 / (interior + 1) as f64));
        let samples: Vec<(f64, Vec<f64>)> = times.iter().map(|&t| at(t)).collect();
        let linf_l2_sq = spatial.l2_sq(&samples).into_iter().fold(0.0, f64::max);
        // A-norm in time by Gauss-Legendre
        let gl = gauss_legendre(ell + 3).expect("positive point count");
        let samples: Vec<(f64, Vec<f64>)> = gl.nodes.iter().map(|&s| at(b.start + s * b.step())).collect();
        let a = spatial.a_norm_sq(&samples);
        let a_norm_sq = nu * b.step() * gl.weights.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>();
        // jump term by the Radau rule
        let samples: Vec<(f64, Vec<f64>)> = b.nodes.iter().zip(&slab.velocity).map(|(&t, u)| (t, u.clone())).collect();
        let gammas: Vec<&[f64]> = slab.gamma.iter().map(|g| g.as_slice()).collect();
        let g = spatial.gamma_jump_sq(&samples, &gammas);
        let gamma_jump_sq = b.weights.iter().zip(&g).map(|(w, v)| w * v).sum();
        slabs.push(SlabErrors { linf_l2_sq, a_norm_sq, gamma_jump_sq });
    }
    let linf_sq = slabs.iter().map(|s| s.linf_l2_sq).fold(0.0, f64::max);
    let a_norm_sq_weighted: f64 = slabs.iter().map(|s| s.a_norm_sq).sum();
    let gamma_jump_sq: f64 = slabs.iter().map(|s| s.gamma_jump_sq).sum();
    ErrorReport {
        linf_l2_velocity: linf_sq.sqrt(),
        a_norm_sq_weighted,
        gamma_jump_sq,
        err_u: (linf_sq + a_norm_sq_weighted + gamma_jump_sq).sqrt(),
        pressure_l2_final: error_pressure_final(problem, traj, exact),
        max_divergence: divergence_norm(problem, traj),
        slabs,
    }
}

/// `L2` distance at `T^-` between the mean-free discrete and exact pressures.
pub fn error_pressure_final(problem: &Problem, traj: &Trajectory, exact: &dyn ExactSolution) -> f64 {
    let q = &problem.spaces.pressure;
    let mesh = q.mesh();
    let t = traj.grid.final_time();
    let ph = traj.final_pressure();
    let rule = crate::quadrature::triangle_rule(2 * q.degree() + 4).expect("supported degree");
    let tab: Vec<Vec<f64>> = rule.nodes.iter().map(|&x| q.basis(x)).collect();
    // (int p_h, int p, int p_h^2, int p^2, int p_h p, area) per element
    let parts: Vec<[f64; 6]> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let map = crate::spaces::ElementMap::new(mesh.element_vertices(e));
            let c = &ph[q.element_range(e)];
            let mut acc = [0.0; 6];
            for ((row, &xr), w) in tab.iter().zip(&rule.nodes).zip(&rule.weights) {
                let wd = w * map.det;
                let a: f64 = row.iter().zip(c).map(|(b, c)| b * c).sum();
                let p = exact.pressure_in(e, map.to_physical(xr), t);
                acc[0] += wd * a;
                acc[1] += wd * p;
                acc[2] += wd * a * a;
                acc[3] += wd * p * p;
                acc[4] += wd * a * p;
                acc[5] += wd;
            }
            acc
        })
        .collect();
    let mut s = [0.0; 6];
    for p in &parts {
        for (a, b) in s.iter_mut().zip(p) {
            *a += b;
        }
    }
    let (mh, me) = (s[0] / s[5], s[1] / s[5]);
    // assemble |(p_h - mh) - (p - me)|^2 elementwise to avoid cancellation
    let total: f64 = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let map = crate::spaces::ElementMap::new(mesh.element_vertices(e));
            let c = &ph[q.element_range(e)];
            tab.iter()
                .zip(&rule.nodes)
                .zip(&rule.weights)
                .map(|((row, &xr), w)| {
                    let a: f64 = row.iter().zip(c).map(|(b, c)| b * c).sum();
                    let p = exact.pressure_in(e, map.to_physical(xr), t);
                    w * map.det * ((a - mh) - (p - me)).powi(2)
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    total.max(0.0).sqrt()
}

/// Empirical rates `log(e_i / e_{i+1}) / log(s_i / s_{i+1})`.
pub fn convergence_rates(errors: &[f64], sizes: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != sizes.len() {
        return Err(Error::DimensionMismatch(format!("{} errors for {} sizes", errors.len(), sizes.len())));
    }
    if errors.len() < 2 {
        return Err(Error::InvalidArgument("at least two levels are needed for a rate".into()));
    }
    if let Some(e) = errors.iter().chain(sizes).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("errors and sizes must be positive, got {e}")));
    }
    if sizes.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("sizes must be strictly decreasing".into()));
    }
    Ok(errors
        .windows(2)
        .zip(sizes.windows(2))
        .map(|(e, s)| (e[0] / e[1]).ln() / (s[0] / s[1]).ln())
        .collect())
}

/// Largest `|div u_h(s_i)|_{L2}` over all slabs and Radau nodes.
pub fn divergence_norm(problem: &Problem, traj: &Trajectory) -> f64 {
    traj.slabs
        .iter()
        .flat_map(|s| s.velocity.iter())
        .map(|u| divergence_norm_sq(&problem.spaces, u).max(0.0).sqrt())
        .fold(0.0, f64::max)
}

/// Largest `|u_h(s_i)|_{L2}` over all slabs and Radau nodes.
pub fn max_velocity_norm(problem: &Problem, traj: &Trajectory) -> f64 {
    traj.slabs
        .iter()
        .flat_map(|s| s.velocity.iter())
        .map(|u| problem.operators.mass.bilinear(u, u).max(0.0).sqrt())
        .fold(0.0, f64::max)
}

/// Sampled `Linf(0,T; L2)` distance of two trajectories on the same grid and
/// spaces.
pub fn trajectory_distance(problem: &Problem, a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.slabs.len() != b.slabs.len() {
        return Err(Error::DimensionMismatch("trajectories have different slab counts".into()));
    }
    let mut worst: f64 = 0.0;
    for (sa, sb) in a.slabs.iter().zip(&b.slabs) {
        let basis = &sa.basis;
        let ell = basis.degree();
        let mut times = basis.nodes.clone();
        times.push(basis.end);
        times.extend((1..=ell + 3).map(|j| basis.start + basis.step() * j as f64 / (ell + 4) as f64));
        for t in times {
            let l = basis.values(t);
            let d: Vec<f64> = combine(&l, &sa.velocity).iter().zip(combine(&l, &sb.velocity)).map(|(x, y)| x - y).collect();
            worst = worst.max(problem.operators.mass.bilinear(&d, &d).max(0.0).sqrt());
        }
    }
    Ok(worst)
}

/// A computed trajectory viewed as a space-time field, for comparisons that
/// expect an exact solution.
pub struct DiscreteField<'a> {
    problem: &'a Problem,
    traj: &'a Trajectory,
}

impl<'a> DiscreteField<'a> {
    pub fn new(problem: &'a Problem, traj: &'a Trajectory) -> Self {
        DiscreteField { problem, traj }
    }

    fn locate(&self, x: Point) -> usize {
        let mesh = self.problem.spaces.mesh();
        (0..mesh.num_elements())
            .map(|e| {
                let r = self.problem.spaces.velocity.element_map(e).to_reference(x);
                let outside = (-r[0]).max(-r[1]).max(r[0] + r[1] - 1.0);
                (e, outside)
            })
            .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
            .0
    }

    fn jet(&self, e: usize, x: Point, t: f64) -> crate::spaces::VectorJet {
        let v = &self.problem.spaces.velocity;
        let xr = v.element_map(e).to_reference(x);
        v.evaluate(&self.traj.velocity_at(t), e, xr).expect("element and coefficients are consistent")
    }
}

impl ExactSolution for DiscreteField<'_> {
    fn velocity(&self, x: Point, t: f64) -> Vec2 {
        self.velocity_in(self.locate(x), x, t)
    }

    fn gradient(&self, x: Point, t: f64) -> Mat2 {
        self.gradient_in(self.locate(x), x, t)
    }

    fn pressure(&self, x: Point, t: f64) -> f64 {
        self.pressure_in(self.locate(x), x, t)
    }

    fn velocity_in(&self, e: usize, x: Point, t: f64) -> Vec2 {
        self.jet(e, x, t).value
    }

    fn gradient_in(&self, e: usize, x: Point, t: f64) -> Mat2 {
        self.jet(e, x, t).gradient
    }

    fn pressure_in(&self, e: usize, x: Point, t: f64) -> f64 {
        let q = &self.problem.spaces.pressure;
        let xr = self.problem.spaces.velocity.element_map(e).to_reference(x);
        let n = self.traj.grid.slab_of(t).min(self.traj.slabs.len() - 1);
        let p = if t >= self.traj.grid.final_time() {
            self.traj.final_pressure()
        } else {
            self.traj.pressure_in_slab(n, t)
        };
        q.evaluate(&p, e, xr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::default_penalty;
    use crate::manufactured::manufactured_case;
    use crate::mesh::Mesh;
    use crate::solver::{run, SlabSolution, SolverConfig};
    use crate::timedisc::{slab_basis, TimeGrid};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn problem(case: &str, n: usize, k: usize, tau: f64, nu: f64) -> Problem {
        let mesh = Arc::new(Mesh::structured(n).unwrap());
        let grid = TimeGrid::with_step(1.0, tau, k).unwrap();
        let data = Arc::new(manufactured_case(case, nu).unwrap());
        Problem::new(mesh, k, grid, nu, default_penalty(k), data).unwrap()
    }

    fn zero_trajectory(p: &Problem) -> Trajectory {
        let nv = p.spaces.velocity.dim();
        let nq = p.spaces.pressure.dim();
        let nf = p.spaces.mesh().num_facets();
        let slabs = (0..p.grid.num_slabs())
            .map(|n| {
                let basis = slab_basis(&p.grid, n).unwrap();
                let m = basis.len();
                SlabSolution {
                    basis,
                    velocity: vec![vec![0.0; nv]; m],
                    pressure: vec![vec![0.0; nq]; m],
                    gamma: vec![vec![1.0; nf]; m],
                    fixed_point_iterations: 1,
                    linear_iterations: 0,
                    end_velocity: vec![0.0; nv],
                    fixed_point_update: 0.0,
                }
            })
            .collect();
        Trajectory {
            grid: p.grid.clone(),
            scheme: crate::solver::Scheme::FullyImplicit,
            initial: vec![0.0; nv],
            slabs,
        }
    }

    #[test]
    fn rates_examples() {
        assert_relative_eq!(convergence_rates(&[0.4, 0.1], &[0.2, 0.1]).unwrap()[0], 2.0, epsilon = 1e-14);
        assert_eq!(convergence_rates(&[1.0, 1.0], &[0.3, 0.1]).unwrap(), vec![0.0]);
        let sizes = [0.5, 0.25, 0.125, 0.0625];
        let errors: Vec<f64> = sizes.iter().map(|s: &f64| 3.0 * s.powf(1.5)).collect();
        for r in convergence_rates(&errors, &sizes).unwrap() {
            assert!((r - 1.5).abs() < 1e-12);
        }
        assert!(convergence_rates(&[1.0, 0.0], &[0.2, 0.1]).is_err());
        assert!(convergence_rates(&[1.0, 0.5], &[0.1, 0.2]).is_err());
        assert!(convergence_rates(&[1.0], &[0.1]).is_err());
    }

    #[test]
    fn zero_trajectory_against_sol2() {
        // |(y, x) cos(2 pi t)|_{L2}^2 = 2/3 cos^2(2 pi t), maximal at t = 0, 1/2, 1
        let p = problem("sol2", 4, 1, 0.25, 1.0);
        let traj = zero_trajectory(&p);
        let exact = manufactured_case("sol2", 1.0).unwrap();
        let r = error_energy(&p, &traj, &exact);
        assert_relative_eq!(r.linf_l2_velocity, (2.0f64 / 3.0).sqrt(), max_relative = 1e-12);
        assert_eq!(divergence_norm(&p, &traj), 0.0);
        assert_relative_eq!(r.err_u * r.err_u, r.err_u_sq_from_slabs(), max_relative = 1e-12);
    }

    #[test]
    fn trajectory_against_itself() {
        // one slab: a field that is discontinuous in time has no single
        // value at the slab breaks
        let p = problem("sol1", 3, 2, 1.0, 1.0);
        let traj = run(&p, &SolverConfig::default()).unwrap();
        let field = DiscreteField::new(&p, &traj);
        let r = error_energy(&p, &traj, &field);
        assert!(r.linf_l2_velocity <= 1e-12, "{r:?}");
        assert!(r.a_norm_sq_weighted.sqrt() <= 1e-12 && r.gamma_jump_sq.sqrt() <= 1e-12, "{r:?}");
        assert!(r.pressure_l2_final <= 1e-12);
    }

    #[test]
    fn pressure_error_ignores_constants() {
        let p = problem("sol1", 3, 1, 0.5, 1.0);
        let traj = run(&p, &SolverConfig::default()).unwrap();
        let exact = manufactured_case("sol1", 1.0).unwrap();
        struct Shifted<'a>(&'a dyn ExactSolution);
        impl ExactSolution for Shifted<'_> {
            fn velocity(&self, x: Point, t: f64) -> Vec2 {
                self.0.velocity(x, t)
            }
            fn gradient(&self, x: Point, t: f64) -> Mat2 {
                self.0.gradient(x, t)
            }
            fn pressure(&self, x: Point, t: f64) -> f64 {
                self.0.pressure(x, t) + 3.5
            }
        }
        let a = error_pressure_final(&p, &traj, &exact);
        let b = error_pressure_final(&p, &traj, &Shifted(&exact));
        assert!(a > 0.0);
        assert_relative_eq!(a, b, max_relative = 1e-10);
    }

    #[test]
    fn divergence_of_a_non_solenoidal_vector() {
        // u_h supported on one interior dof of element 0; oracle integrates
        // the divergence of the pointwise-evaluated field by finite differences
        let p = problem("zero", 2, 1, 0.5, 1.0);
        let nv = p.spaces.velocity.dim();
        let mut traj = zero_trajectory(&p);
        let d = p.spaces.velocity.element_dofs(0)[0].index;
        traj.slabs[0].velocity[0][d] = 1.0;
        let got = divergence_norm(&p, &traj);
        let u = &traj.slabs[0].velocity[0];
        let v = &p.spaces.velocity;
        let rule = crate::quadrature::triangle_rule(6).unwrap();
        let mut oracle = 0.0;
        for e in 0..p.spaces.mesh().num_elements() {
            let map = v.element_map(e);
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let xp = map.to_physical(*x);
                let hstep = 1e-6;
                let val = |dx: f64, dy: f64| {
                    let q = map.to_reference([xp[0] + dx, xp[1] + dy]);
                    v.evaluate(u, e, q).unwrap().value
                };
                let div = (val(hstep, 0.0)[0] - val(-hstep, 0.0)[0] + val(0.0, hstep)[1] - val(0.0, -hstep)[1]) / (2.0 * hstep);
                oracle += w * map.det * div * div;
            }
        }
        assert_eq!(u.len(), nv);
        assert!(got > 0.0);
        assert_relative_eq!(got, oracle.sqrt(), max_relative = 1e-6);
    }

    #[test]
    fn gamma_term_ignores_continuous_additions() {
        let p = problem("sol1", 3, 1, 0.5, 1.0);
        let traj = run(&p, &SolverConfig::default()).unwrap();
        let exact = manufactured_case("sol1", 1.0).unwrap();
        // add the RT interpolant of a linear (hence continuous, in-space)
        // field to both the trajectory and the exact solution
        let add = |x: Point| [x[1] + 0.5, 2.0 * x[0]];
        let shift = p.spaces.velocity.interpolate(add);
        let mut shifted = traj.clone();
        for s in &mut shifted.slabs {
            for u in &mut s.velocity {
                for (a, b) in u.iter_mut().zip(&shift) {
                    *a += b;
                }
            }
        }
        struct Plus<'a>(&'a dyn ExactSolution, fn(Point) -> Vec2);
        impl ExactSolution for Plus<'_> {
            fn velocity(&self, x: Point, t: f64) -> Vec2 {
                let (a, b) = (self.0.velocity(x, t), (self.1)(x));
                [a[0] + b[0], a[1] + b[1]]
            }
            fn gradient(&self, x: Point, t: f64) -> Mat2 {
                let g = self.0.gradient(x, t);
                [[g[0][0], g[0][1] + 1.0], [g[1][0] + 2.0, g[1][1]]]
            }
            fn pressure(&self, x: Point, t: f64) -> f64 {
                self.0.pressure(x, t)
            }
        }
        let a = error_energy(&p, &traj, &exact);
        let b = error_energy(&p, &shifted, &Plus(&exact, add));
        assert_relative_eq!(a.gamma_jump_sq, b.gamma_jump_sq, max_relative = 1e-9);
        assert_relative_eq!(a.err_u, b.err_u, max_relative = 1e-9);
    }

    #[test]
    fn sampling_refinement_changes_little() {
        let p = problem("sol1", 4, 1, 1.0 / 6.0, 1.0);
        let traj = run(&p, &SolverConfig::default()).unwrap();
        let exact = manufactured_case("sol1", 1.0).unwrap();
        let a = error_energy(&p, &traj, &exact).linf_l2_velocity;
        let b = error_energy_with(&p, &traj, &exact, Sampling { interior_points: Some(2 * (1 + 3) + 1) })
            .linf_l2_velocity;
        assert!(((a - b) / a).abs() < 0.01, "{a} vs {b}");
    }
}
