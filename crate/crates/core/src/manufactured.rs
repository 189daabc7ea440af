//! Exact solutions with closed-form forcing, and a finite-difference oracle
//! that checks the forcing against the velocity and pressure evaluators.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::Point;
use crate::spaces::{Mat2, Vec2};

/// Source, boundary and initial data of a Navier-Stokes problem on the unit
/// square.
pub trait ProblemData: Sync + Send {
    fn forcing(&self, x: Point, t: f64) -> Vec2;
    /// Dirichlet velocity data.
    fn boundary(&self, x: Point, t: f64) -> Vec2;
    fn initial(&self, x: Point) -> Vec2;
}

/// Exact velocity/pressure pair.
pub trait ExactSolution: Sync + Send {
    fn velocity(&self, x: Point, t: f64) -> Vec2;
    /// `grad[i][j] = d u_i / d x_j`.
    fn gradient(&self, x: Point, t: f64) -> Mat2;
    fn pressure(&self, x: Point, t: f64) -> f64;

    /// Evaluation restricted to element `e`; only piecewise fields need to
    /// override these.
    fn velocity_in(&self, _e: usize, x: Point, t: f64) -> Vec2 {
        self.velocity(x, t)
    }

    fn gradient_in(&self, _e: usize, x: Point, t: f64) -> Mat2 {
        self.gradient(x, t)
    }

    fn pressure_in(&self, _e: usize, x: Point, t: f64) -> f64 {
        self.pressure(x, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    Sol1,
    Sol2,
    Sol3,
    Zero,
}

impl CaseKind {
    pub fn name(self) -> &'static str {
        match self {
            CaseKind::Sol1 => "sol1",
            CaseKind::Sol2 => "sol2",
            CaseKind::Sol3 => "sol3",
            CaseKind::Zero => "zero",
        }
    }
}

impl std::str::FromStr for CaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sol1" => Ok(CaseKind::Sol1),
            "sol2" => Ok(CaseKind::Sol2),
            "sol3" => Ok(CaseKind::Sol3),
            "zero" => Ok(CaseKind::Zero),
            _ => Err(Error::UnknownCase(s.to_string())),
        }
    }
}

type GradientField = Arc<dyn Fn(Point, f64) -> Vec2 + Send + Sync>;

/// One of the manufactured cases at a given viscosity.
#[derive(Clone)]
pub struct ManufacturedCase {
    kind: CaseKind,
    nu: f64,
    extra_gradient: Option<GradientField>,
}

impl fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManufacturedCase")
            .field("kind", &self.kind)
            .field("nu", &self.nu)
            .field("extra_gradient", &self.extra_gradient.is_some())
            .finish()
    }
}

pub fn manufactured_case(name: &str, nu: f64) -> Result<ManufacturedCase> {
    if !(nu > 0.0) {
        return Err(Error::InvalidArgument(format!("viscosity must be positive, got {nu}")));
    }
    Ok(ManufacturedCase { kind: name.parse()?, nu, extra_gradient: None })
}

/// `cos^2(pi z)` and `cos(pi z) sin(pi z)` with two derivatives each.
fn a_fn(z: f64) -> [f64; 3] {
    let c = (PI * z).cos();
    [c * c, -PI * (2.0 * PI * z).sin(), -2.0 * PI * PI * (2.0 * PI * z).cos()]
}

fn b_fn(z: f64) -> [f64; 3] {
    let s2 = (2.0 * PI * z).sin();
    [0.5 * s2, PI * (2.0 * PI * z).cos(), -2.0 * PI * PI * s2]
}

impl ManufacturedCase {
    pub fn kind(&self) -> CaseKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Adds `grad phi` to the forcing. The velocity is unchanged and the
    /// pressure shifts by `phi`; only the forcing is modified here.
    pub fn with_gradient_forcing(mut self, grad_phi: impl Fn(Point, f64) -> Vec2 + Send + Sync + 'static) -> Self {
        self.extra_gradient = Some(Arc::new(grad_phi));
        self
    }

    /// Whether `u.n = 0` on the boundary of the unit square.
    pub fn homogeneous_normal_flux(&self) -> bool {
        matches!(self.kind, CaseKind::Sol1 | CaseKind::Zero)
    }

    /// Temporal amplitude of the velocity and its derivative.
    fn amplitude(&self, t: f64) -> (f64, f64) {
        match self.kind {
            CaseKind::Sol1 => (t.cos(), -t.sin()),
            CaseKind::Sol2 => ((2.0 * PI * t).cos(), -2.0 * PI * (2.0 * PI * t).sin()),
            CaseKind::Sol3 => (t, 1.0),
            CaseKind::Zero => (0.0, 0.0),
        }
    }

    /// Spatial profile of the velocity: value, gradient and Laplacian.
    fn profile(&self, x: Point) -> (Vec2, Mat2, Vec2) {
        match self.kind {
            CaseKind::Sol1 => {
                let (xx, yy) = (x[0] - 0.5, x[1] - 0.5);
                let (ax, bx, ay, by) = (a_fn(xx), b_fn(xx), a_fn(yy), b_fn(yy));
                let value = [-0.5 * ax[0] * by[0], 0.5 * ay[0] * bx[0]];
                let gradient = [
                    [-0.5 * ax[1] * by[0], -0.5 * ax[0] * by[1]],
                    [0.5 * ay[0] * bx[1], 0.5 * ay[1] * bx[0]],
                ];
                let lap = [
                    -0.5 * (ax[2] * by[0] + ax[0] * by[2]),
                    0.5 * (ay[2] * bx[0] + ay[0] * bx[2]),
                ];
                (value, gradient, lap)
            }
            CaseKind::Sol2 | CaseKind::Sol3 => ([x[1], x[0]], [[0.0, 1.0], [1.0, 0.0]], [0.0, 0.0]),
            CaseKind::Zero => ([0.0; 2], [[0.0; 2]; 2], [0.0; 2]),
        }
    }

    fn pressure_amplitude(&self, t: f64) -> f64 {
        match self.kind {
            CaseKind::Sol1 => t.cos(),
            CaseKind::Sol2 | CaseKind::Sol3 => (2.0 * PI * t).cos(),
            CaseKind::Zero => 0.0,
        }
    }

    pub fn pressure_gradient(&self, x: Point, t: f64) -> Vec2 {
        let a = self.pressure_amplitude(t);
        [a * PI * (PI * (x[0] - 0.5)).cos(), -a * PI * (PI * (x[1] - 0.5)).cos()]
    }

    pub fn time_derivative(&self, x: Point, t: f64) -> Vec2 {
        let (_, da) = self.amplitude(t);
        let (v, _, _) = self.profile(x);
        [da * v[0], da * v[1]]
    }

    pub fn laplacian(&self, x: Point, t: f64) -> Vec2 {
        let (a, _) = self.amplitude(t);
        let (_, _, l) = self.profile(x);
        [a * l[0], a * l[1]]
    }

    /// `(grad u) u`.
    pub fn convection(&self, x: Point, t: f64) -> Vec2 {
        let u = self.velocity(x, t);
        let g = self.gradient(x, t);
        [g[0][0] * u[0] + g[0][1] * u[1], g[1][0] * u[0] + g[1][1] * u[1]]
    }
}

impl ExactSolution for ManufacturedCase {
    fn velocity(&self, x: Point, t: f64) -> Vec2 {
        let (a, _) = self.amplitude(t);
        let (v, _, _) = self.profile(x);
        [a * v[0], a * v[1]]
    }

    fn gradient(&self, x: Point, t: f64) -> Mat2 {
        let (a, _) = self.amplitude(t);
        let (_, g, _) = self.profile(x);
        g.map(|row| row.map(|v| a * v))
    }

    fn pressure(&self, x: Point, t: f64) -> f64 {
        self.pressure_amplitude(t) * ((PI * (x[0] - 0.5)).sin() - (PI * (x[1] - 0.5)).sin())
    }
}

impl ProblemData for ManufacturedCase {
    /// `dt u - nu lap u + (grad u) u + grad p` (plus any added gradient).
    fn forcing(&self, x: Point, t: f64) -> Vec2 {
        let dt = self.time_derivative(x, t);
        let lap = self.laplacian(x, t);
        let conv = self.convection(x, t);
        let gp = self.pressure_gradient(x, t);
        let extra = self.extra_gradient.as_ref().map_or([0.0; 2], |g| g(x, t));
        [
            dt[0] - self.nu * lap[0] + conv[0] + gp[0] + extra[0],
            dt[1] - self.nu * lap[1] + conv[1] + gp[1] + extra[1],
        ]
    }

    fn boundary(&self, x: Point, t: f64) -> Vec2 {
        self.velocity(x, t)
    }

    fn initial(&self, x: Point) -> Vec2 {
        self.velocity(x, 0.0)
    }
}

/// Forcing of `case` recomputed from its velocity and pressure by centered
/// finite differences: step `1e-5` for first derivatives, a fourth-order
/// five-point Laplacian with step `1e-3` (a `1e-5` step would be dominated
/// by rounding at this order).
pub fn finite_difference_forcing(case: &(impl ExactSolution + ?Sized), nu: f64, x: Point, t: f64) -> Vec2 {
    let h = 1e-5;
    let hl = 1e-3;
    let u = |p: Point, s: f64| case.velocity(p, s);
    let shift = |d: usize, by: f64| {
        let mut p = x;
        p[d] += by;
        p
    };
    let mut out = [0.0; 2];
    let u0 = u(x, t);
    for i in 0..2 {
        let dt = (u(x, t + h)[i] - u(x, t - h)[i]) / (2.0 * h);
        let mut lap = 0.0;
        let mut conv = 0.0;
        for d in 0..2 {
            let f = |m: f64| u(shift(d, m * hl), t)[i];
            lap += (-f(2.0) + 16.0 * f(1.0) - 30.0 * f(0.0) + 16.0 * f(-1.0) - f(-2.0)) / (12.0 * hl * hl);
            let du = (u(shift(d, h), t)[i] - u(shift(d, -h), t)[i]) / (2.0 * h);
            conv += du * u0[d];
        }
        let dp = (case.pressure(shift(i, h), t) - case.pressure(shift(i, -h), t)) / (2.0 * h);
        out[i] = dt - nu * lap + conv + dp;
    }
    out
}

/// Maximum over `samples` random points of `|f - f_fd|` for the given
/// forcing evaluator.
pub fn verify_forcing_with(
    case: &(impl ExactSolution + ?Sized),
    nu: f64,
    forcing: &dyn Fn(Point, f64) -> Vec2,
    samples: usize,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let t = rng.gen_range(0.0..1.0);
        let f = forcing(x, t);
        let g = finite_difference_forcing(case, nu, x, t);
        worst = worst.max((f[0] - g[0]).abs()).max((f[1] - g[1]).abs());
    }
    Ok(worst)
}

/// Checks the closed-form forcing of `case` against the oracle.
pub fn verify_forcing(case: &ManufacturedCase, samples: usize) -> Result<f64> {
    verify_forcing_with(case, case.nu, &|x, t| case.forcing(x, t), samples)
}
