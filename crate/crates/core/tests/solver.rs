use std::sync::Arc;

use nsdg::analysis::{error_energy, max_velocity_norm};
use nsdg::assembly::{assemble_convection, default_penalty, DEFAULT_SAFEGUARD};
use nsdg::manufactured::{manufactured_case, ManufacturedCase, ProblemData};
use nsdg::mesh::{Mesh, Point};
use nsdg::spaces::Vec2;
use nsdg::solver::{run, Problem, Scheme, SolverConfig};
use nsdg::timedisc::TimeGrid;

fn problem(n: usize, k: usize, grid: TimeGrid, nu: f64, data: Arc<dyn ProblemData>) -> Problem {
    let mesh = Arc::new(Mesh::structured(n).unwrap());
    Problem::new(mesh, k, grid, nu, default_penalty(k), data).unwrap()
}

fn config(scheme: Scheme) -> SolverConfig {
    SolverConfig { scheme, ..SolverConfig::default() }
}

fn m_norm(p: &Problem, u: &[f64]) -> f64 {
    p.operators.mass.bilinear(u, u).sqrt()
}

/// Exact data with the forcing replaced after `switch`.
struct Perturbed {
    base: ManufacturedCase,
    switch: f64,
}

impl ProblemData for Perturbed {
    fn forcing(&self, x: Point, t: f64) -> Vec2 {
        let f = self.base.forcing(x, t);
        if t > self.switch {
            [f[0] + 50.0 * x[1], f[1] - 20.0 * x[0] * x[0]]
        } else {
            f
        }
    }

    fn boundary(&self, x: Point, t: f64) -> Vec2 {
        self.base.boundary(x, t)
    }

    fn initial(&self, x: Point) -> Vec2 {
        self.base.initial(x)
    }
}

/// sol1 initial data with no forcing.
struct Decay(ManufacturedCase);

impl ProblemData for Decay {
    fn forcing(&self, _: Point, _: f64) -> Vec2 {
        [0.0, 0.0]
    }

    fn boundary(&self, _: Point, _: f64) -> Vec2 {
        [0.0, 0.0]
    }

    fn initial(&self, x: Point) -> Vec2 {
        self.0.initial(x)
    }
}

#[test]
fn large_steps_stay_bounded() {
    let case = Arc::new(manufactured_case("sol1", 1.0).unwrap());
    for scheme in [Scheme::FullyImplicit, Scheme::SemiImplicit] {
        let fine = problem(4, 1, TimeGrid::with_step(1.0, 1.0 / 8.0, 1).unwrap(), 1.0, case.clone());
        let coarse = problem(4, 1, TimeGrid::with_step(1.0, 1.0, 1).unwrap(), 1.0, case.clone());
        let a = max_velocity_norm(&fine, &run(&fine, &config(scheme)).unwrap());
        let b = max_velocity_norm(&coarse, &run(&coarse, &config(scheme)).unwrap());
        assert!(a.is_finite() && b.is_finite());
        assert!(b <= 2.0 * a, "{scheme:?}: {b} vs {a}");
    }
}

#[test]
fn later_forcing_does_not_change_the_past() {
    let base = manufactured_case("sol1", 0.1).unwrap();
    let grid = TimeGrid::with_step(1.0, 0.25, 1).unwrap();
    for scheme in [Scheme::FullyImplicit, Scheme::SemiImplicit] {
        let a = problem(4, 1, grid.clone(), 0.1, Arc::new(base.clone()));
        let b = problem(4, 1, grid.clone(), 0.1, Arc::new(Perturbed { base: base.clone(), switch: 0.5 }));
        let ta = run(&a, &config(scheme)).unwrap();
        let tb = run(&b, &config(scheme)).unwrap();
        for n in 0..2 {
            for (u, v) in ta.slabs[n].velocity.iter().zip(&tb.slabs[n].velocity) {
                assert_eq!(u, v, "{scheme:?} slab {n}");
            }
        }
        let diff: Vec<f64> = ta.final_velocity().iter().zip(tb.final_velocity()).map(|(x, y)| x - y).collect();
        assert!(m_norm(&a, &diff) > 1e-3);
    }
}

#[test]
fn piecewise_constant_semi_implicit_transports_with_previous_slab() {
    let case = Arc::new(manufactured_case("sol1", 0.01).unwrap());
    let p = problem(4, 1, TimeGrid::with_step(1.0, 0.25, 0).unwrap(), 0.01, case);
    let traj = run(&p, &config(Scheme::SemiImplicit)).unwrap();
    for n in 1..traj.slabs.len() {
        let prev = &traj.slabs[n - 1].velocity[0];
        let expect = assemble_convection(&p.spaces, 0, prev, DEFAULT_SAFEGUARD).unwrap().gamma;
        for (g, e) in traj.slabs[n].gamma[0].iter().zip(&expect) {
            assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
        assert_eq!(traj.slabs[n].fixed_point_iterations, 1);
    }
}

#[test]
fn unforced_flow_loses_energy() {
    let case = manufactured_case("sol1", 0.5).unwrap();
    let grid = TimeGrid::with_step(1.0, 0.2, 1).unwrap();
    for scheme in [Scheme::FullyImplicit, Scheme::SemiImplicit] {
        let p = problem(4, 2, grid.clone(), 0.5, Arc::new(Decay(case.clone())));
        let traj = run(&p, &config(scheme)).unwrap();
        let mut last = m_norm(&p, &traj.initial);
        for s in &traj.slabs {
            let now = m_norm(&p, &s.end_velocity);
            assert!(now <= last * (1.0 + 1e-10), "{scheme:?}: {now} > {last}");
            last = now;
        }
        assert!(last < m_norm(&p, &traj.initial));
    }
}

#[test]
fn paired_refinement_reduces_error() {
    let case = manufactured_case("sol1", 1.0).unwrap();
    let errs: Vec<f64> = [(8, 1.0 / 6.0), (16, 1.0 / 12.0)]
        .iter()
        .map(|&(n, tau)| {
            let p = problem(n, 1, TimeGrid::with_step(1.0, tau, 1).unwrap(), 1.0, Arc::new(case.clone()));
            let traj = run(&p, &config(Scheme::FullyImplicit)).unwrap();
            error_energy(&p, &traj, &case).err_u
        })
        .collect();
    assert!(errs[0] / errs[1] >= 1.7, "{errs:?}");
}

#[test]
fn scheme_mismatch_is_rejected() {
    let case = Arc::new(manufactured_case("zero", 1.0).unwrap());
    let p = problem(2, 1, TimeGrid::with_step(1.0, 0.5, 1).unwrap(), 1.0, case);
    assert!(nsdg::solver::run_semi_implicit(&p, &config(Scheme::FullyImplicit)).is_err());
    assert!(nsdg::solver::run_fully_implicit(&p, &config(Scheme::SemiImplicit)).is_err());
}
