//! Spatial operators and the per-slab space-time system.
//!
//! Spatial forms:
//! - mass `(u, v)`;
//! - interior-penalty diffusion over all facets, boundary facets using the
//!   full trace: `(grad u, grad v) - ({grad u} n, [v]) - ([u], {grad v} n)
//!   + sigma/h_F ([u], [v])`;
//! - divergence coupling `-(div u, q)`;
//! - convection `((grad u) w, v) - ((w.n)[u], {v}) + 1/2 (gamma [u], [v])`
//!   over interior facets.
//!
//! A slab couples the `ell + 1` Radau nodes through `G = diag(w) D + e e^T`.

use std::sync::{Arc, OnceLock};

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, CsrMatrix};
use crate::mesh::{Facet, Mesh, Point};
use crate::quadrature::{gauss_legendre, triangle_rule, IntervalRule, TriangleRule};
use crate::spaces::{
    combine_jets, ref_facet_point, LocalDof, PressureSpace, Vec2, VectorJet, VelocitySpace,
};
use crate::timedisc::SlabBasis;

/// Default safeguard constant inside `gamma_F`.
pub const DEFAULT_SAFEGUARD: f64 = 1e-8;

/// Default interior-penalty parameter `10 k^2`.
pub fn default_penalty(k: usize) -> f64 {
    10.0 * (k * k) as f64
}

/// Velocity/pressure pair on one mesh.
#[derive(Debug, Clone)]
pub struct DiscreteSpaces {
    pub velocity: VelocitySpace,
    pub pressure: PressureSpace,
    convection: OnceLock<Arc<ConvectionCache>>,
}

impl DiscreteSpaces {
    pub fn new(mesh: Arc<Mesh>, k: usize) -> Result<Self> {
        Ok(DiscreteSpaces {
            velocity: VelocitySpace::new(mesh.clone(), k)?,
            pressure: PressureSpace::new(mesh, k)?,
            convection: OnceLock::new(),
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.velocity.mesh()
    }

    pub fn degree(&self) -> usize {
        self.velocity.degree()
    }

    /// Spatial degree of the load-vector rule. Higher than the mass rule so
    /// that gradient forcing is annihilated by discretely solenoidal test
    /// functions up to rounding, not quadrature error.
    pub fn load_degree(&self) -> usize {
        2 * self.degree() + 8
    }
}

/// Reference tabulation of a volume rule.
pub(crate) struct VolumeTab {
    pub(crate) rule: TriangleRule,
    pub(crate) jets: Vec<Vec<VectorJet>>,
}

impl VolumeTab {
    pub(crate) fn new(space: &VelocitySpace, degree: usize) -> Self {
        let rule = triangle_rule(degree).expect("supported degree");
        let jets = space.reference().tabulate(&rule.nodes);
        VolumeTab { rule, jets }
    }
}

/// Reference tabulation of a Gauss rule on each local facet.
pub(crate) struct FacetTab {
    pub(crate) rule: IntervalRule,
    pub(crate) jets: [Vec<Vec<VectorJet>>; 3],
}

impl FacetTab {
    pub(crate) fn new(space: &VelocitySpace, points: usize) -> Self {
        let rule = gauss_legendre(points).expect("positive point count");
        let jets = [0, 1, 2].map(|i| {
            let pts: Vec<Point> = rule.nodes.iter().map(|&s| ref_facet_point(i, s)).collect();
            space.reference().tabulate(&pts)
        });
        FacetTab { rule, jets }
    }
}

/// Physical basis jets of one side of a facet, at the facet points ordered
/// from the lower to the higher global vertex.
pub(crate) struct FacetSide<'a> {
    pub(crate) dofs: &'a [LocalDof],
    pub(crate) jets: Vec<Vec<VectorJet>>,
}

pub(crate) fn facet_side<'a>(space: &'a VelocitySpace, tab: &FacetTab, facet: &Facet, side: usize) -> FacetSide<'a> {
    let e = facet.elements[side];
    let i = facet.local_index[side];
    let tri = space.mesh().triangles()[e];
    let forward = tri[(i + 1) % 3] == facet.vertices[0];
    let m = tab.rule.len();
    let ordered: Vec<Vec<VectorJet>> = (0..m)
        .map(|r| tab.jets[i][if forward { r } else { m - 1 - r }].clone())
        .collect();
    FacetSide { dofs: space.element_dofs(e), jets: space.element_jets(e, &ordered) }
}

pub(crate) fn facet_points(mesh: &Mesh, facet: &Facet, rule: &IntervalRule) -> Vec<Point> {
    let (a, b) = (mesh.vertices()[facet.vertices[0]], mesh.vertices()[facet.vertices[1]]);
    rule.nodes
        .iter()
        .map(|&s| [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])])
        .collect()
}

fn vdot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn mat_vec(m: &[[f64; 2]; 2], v: Vec2) -> Vec2 {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn frob(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

type Triplets = Vec<(usize, usize, f64)>;

fn push_local(out: &mut Triplets, rows: &[LocalDof], cols: &[LocalDof], local: &[f64]) {
    let nc = cols.len();
    for (a, ra) in rows.iter().enumerate() {
        for (b, cb) in cols.iter().enumerate() {
            out.push((ra.index, cb.index, local[a * nc + b]));
        }
    }
}

/// Jump/average data of the basis functions on both sides of a facet.
#[derive(Debug)]
struct FacetTraces {
    dofs: Vec<LocalDof>,
    /// `[point][basis]` jump `[phi]`.
    jump: Vec<Vec<Vec2>>,
    /// `[point][basis]` average `{phi}`.
    avg: Vec<Vec<Vec2>>,
    /// `[point][basis]` `{grad phi} n`.
    avg_flux: Vec<Vec<Vec2>>,
    weights: Vec<f64>,
}

fn facet_traces(space: &VelocitySpace, tab: &FacetTab, facet: &Facet) -> FacetTraces {
    let sides: Vec<FacetSide> = if facet.boundary {
        vec![facet_side(space, tab, facet, 0)]
    } else {
        vec![facet_side(space, tab, facet, 0), facet_side(space, tab, facet, 1)]
    };
    let avg_w = if facet.boundary { 1.0 } else { 0.5 };
    let n = facet.normal;
    let m = tab.rule.len();
    let mut dofs = Vec::new();
    for s in &sides {
        dofs.extend_from_slice(s.dofs);
    }
    let mut jump = vec![Vec::with_capacity(dofs.len()); m];
    let mut avg = vec![Vec::with_capacity(dofs.len()); m];
    let mut avg_flux = vec![Vec::with_capacity(dofs.len()); m];
    for (si, s) in sides.iter().enumerate() {
        let js = if si == 0 { 1.0 } else { -1.0 };
        for r in 0..m {
            for jet in &s.jets[r] {
                jump[r].push(jet.value.map(|v| js * v));
                avg[r].push(jet.value.map(|v| avg_w * v));
                let g = mat_vec(&jet.gradient, n);
                avg_flux[r].push(g.map(|v| avg_w * v));
            }
        }
    }
    let weights = tab.rule.weights.iter().map(|w| w * facet.diameter).collect();
    FacetTraces { dofs, jump, avg, avg_flux, weights }
}

/// Spatial operators shared by every slab.
#[derive(Debug, Clone)]
pub struct SpatialOperators {
    pub nu: f64,
    pub sigma: f64,
    /// Velocity mass matrix `M`.
    pub mass: CsrMatrix,
    /// Interior-penalty diffusion `A` (without the factor `nu`).
    pub diffusion: CsrMatrix,
    /// Divergence coupling `B` (`N_Q x N_V`), entries `-(div phi, q)`.
    pub divergence: CsrMatrix,
    /// Pressure mean functional.
    pub mean: Vec<f64>,
}

/// Assembles `M`, `A` and `B` on the given spaces.
pub fn assemble_spatial(spaces: &DiscreteSpaces, nu: f64, sigma: f64) -> Result<SpatialOperators> {
    if !(sigma > 0.0) || !(nu > 0.0) {
        return Err(Error::InvalidArgument(format!("need nu > 0 and sigma > 0, got nu={nu}, sigma={sigma}")));
    }
    let v = &spaces.velocity;
    let q = &spaces.pressure;
    let mesh = v.mesh();
    let k = v.degree();
    let nv = v.dim();
    let nq = q.dim();
    let ne = mesh.num_elements();
    let nl = v.local_dim();
    let vol = VolumeTab::new(v, 2 * k + 2);
    let ptab: Vec<Vec<f64>> = vol.rule.nodes.iter().map(|&x| q.basis(x)).collect();
    let np = q.local_dim();

    let elem: Vec<(Triplets, Triplets, Triplets)> = (0..ne)
        .into_par_iter()
        .map(|e| {
            let jets = v.element_jets(e, &vol.jets);
            let det = v.element_map(e).det;
            let mut m = vec![0.0; nl * nl];
            let mut a = vec![0.0; nl * nl];
            let mut b = vec![0.0; np * nl];
            for (r, w) in vol.rule.weights.iter().enumerate() {
                let w = w * det;
                let row = &jets[r];
                for i in 0..nl {
                    for j in 0..nl {
                        m[i * nl + j] += w * vdot(row[i].value, row[j].value);
                        a[i * nl + j] += w * frob(&row[i].gradient, &row[j].gradient);
                    }
                }
                for (pm, pv) in ptab[r].iter().enumerate() {
                    for j in 0..nl {
                        b[pm * nl + j] -= w * pv * row[j].divergence();
                    }
                }
            }
            let dofs = v.element_dofs(e);
            let (mut tm, mut ta, mut tb) = (Vec::new(), Vec::new(), Vec::new());
            push_local(&mut tm, dofs, dofs, &m);
            push_local(&mut ta, dofs, dofs, &a);
            let prow: Vec<LocalDof> = q.element_range(e).map(|index| LocalDof { index, sign: 1.0 }).collect();
            push_local(&mut tb, &prow, dofs, &b);
            (tm, ta, tb)
        })
        .collect();

    let ftab = FacetTab::new(v, k + 2);
    let facet_trips: Vec<Triplets> = mesh
        .facets()
        .par_iter()
        .map(|facet| {
            let tr = facet_traces(v, &ftab, facet);
            let nd = tr.dofs.len();
            let pen = sigma / facet.diameter;
            let mut local = vec![0.0; nd * nd];
            for (r, w) in tr.weights.iter().enumerate() {
                for i in 0..nd {
                    for j in 0..nd {
                        // row i tests, column j is the trial function
                        local[i * nd + j] += w
                            * (-vdot(tr.avg_flux[r][j], tr.jump[r][i]) - vdot(tr.jump[r][j], tr.avg_flux[r][i])
                                + pen * vdot(tr.jump[r][j], tr.jump[r][i]));
                    }
                }
            }
            let mut t = Vec::new();
            push_local(&mut t, &tr.dofs, &tr.dofs, &local);
            t
        })
        .collect();

    let mut tm = Vec::new();
    let mut ta = Vec::new();
    let mut tb = Vec::new();
    for (m, a, b) in elem {
        tm.extend(m);
        ta.extend(a);
        tb.extend(b);
    }
    for t in facet_trips {
        ta.extend(t);
    }
    Ok(SpatialOperators {
        nu,
        sigma,
        mass: CsrMatrix::from_triplets(nv, nv, &tm),
        diffusion: CsrMatrix::from_triplets(nv, nv, &ta),
        divergence: CsrMatrix::from_triplets(nq, nv, &tb),
        mean: q.mean_functional().to_vec(),
    })
}

/// `int f . phi_a` for every velocity basis function.
pub fn load_vector(spaces: &DiscreteSpaces, f: &(dyn Fn(Point) -> Vec2 + Sync)) -> Vec<f64> {
    let v = &spaces.velocity;
    let vol = VolumeTab::new(v, spaces.load_degree());
    let parts: Vec<Vec<(usize, f64)>> = (0..v.mesh().num_elements())
        .into_par_iter()
        .map(|e| {
            let map = v.element_map(e);
            let jets = v.element_jets(e, &vol.jets);
            let mut local = vec![0.0; v.local_dim()];
            for ((x, w), row) in vol.rule.iter().zip(&jets) {
                let fx = f(map.to_physical(x));
                for (l, jet) in local.iter_mut().zip(row) {
                    *l += w * map.det * vdot(fx, jet.value);
                }
            }
            v.element_dofs(e).iter().map(|d| d.index).zip(local).collect()
        })
        .collect();
    let mut out = vec![0.0; v.dim()];
    for part in parts {
        for (i, val) in part {
            out[i] += val;
        }
    }
    out
}

/// Weak boundary terms of the interior-penalty form for Dirichlet data `g`:
/// `sum_F -(g, grad phi n) + sigma/h_F (g, phi)` (without `nu`).
pub fn boundary_vector(spaces: &DiscreteSpaces, sigma: f64, g: &(dyn Fn(Point) -> Vec2 + Sync)) -> Vec<f64> {
    let v = &spaces.velocity;
    let mesh = v.mesh();
    let ftab = FacetTab::new(v, v.degree() + 4);
    let mut out = vec![0.0; v.dim()];
    for facet in mesh.facets().iter().filter(|f| f.boundary) {
        let side = facet_side(v, &ftab, facet, 0);
        let pts = facet_points(mesh, facet, &ftab.rule);
        let pen = sigma / facet.diameter;
        for (r, (x, w)) in pts.iter().zip(&ftab.rule.weights).enumerate() {
            let gx = g(*x);
            let w = w * facet.diameter;
            for (d, jet) in side.dofs.iter().zip(&side.jets[r]) {
                let flux = mat_vec(&jet.gradient, facet.normal);
                out[d.index] += w * (-vdot(gx, flux) + pen * vdot(gx, jet.value));
            }
        }
    }
    out
}

/// Convection operator linearized at one velocity field.
#[derive(Debug, Clone)]
pub struct ConvectionSnapshot {
    pub node: usize,
    pub w: Vec<f64>,
    /// Volume plus interior upwind part, `C_bar + C_hat`.
    pub transport: CsrMatrix,
    /// Penalty part `C_tilde`.
    pub penalty: CsrMatrix,
    /// `gamma_F` per facet (boundary entries are unused and set to `c_S`).
    pub gamma: Vec<f64>,
}

impl ConvectionSnapshot {
    /// `y += alpha C x`.
    pub fn mul_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        self.transport.mul_add(alpha, x, y);
        self.penalty.mul_add(alpha, x, y);
    }

    pub fn bilinear(&self, y: &[f64], x: &[f64]) -> f64 {
        self.transport.bilinear(y, x) + self.penalty.bilinear(y, x)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.transport.iter().chain(self.penalty.iter())
    }
}

/// Physical basis tabulations and sparsity of the convection form, shared
/// by every assembly on the same spaces.
#[derive(Debug)]
struct ConvectionCache {
    vol_weights: Vec<f64>,
    /// `[element][point][basis]`.
    vol_jets: Vec<Vec<Vec<VectorJet>>>,
    /// Value positions of the element blocks in `transport`.
    vol_pos: Vec<Vec<usize>>,
    facets: Vec<FacetCache>,
    transport: CsrMatrix,
    penalty: CsrMatrix,
}

#[derive(Debug)]
struct FacetCache {
    /// Plus-side jets on the rule that evaluates `|w.n|_inf`.
    gamma_jets: Vec<Vec<VectorJet>>,
    plus_dofs: Vec<LocalDof>,
    /// Plus-side jets and two-sided traces on the transport rule; interior
    /// facets only.
    plus_jets: Vec<Vec<VectorJet>>,
    traces: Option<FacetTraces>,
    transport_pos: Vec<usize>,
    penalty_pos: Vec<usize>,
}

impl ConvectionCache {
    fn new(v: &VelocitySpace) -> Self {
        let mesh = v.mesh();
        let k = v.degree();
        let nv = v.dim();
        let vol = VolumeTab::new(v, 3 * k + 2);
        let vol_jets: Vec<Vec<Vec<VectorJet>>> =
            (0..mesh.num_elements()).into_par_iter().map(|e| v.element_jets(e, &vol.jets)).collect();
        let ftab = FacetTab::new(v, (3 * k + 2) / 2 + 1);
        let gtab = FacetTab::new(v, 2 * k + 3);
        let mut facets: Vec<FacetCache> = mesh
            .facets()
            .par_iter()
            .map(|facet| {
                let gside = facet_side(v, &gtab, facet, 0);
                let (plus_jets, traces) = if facet.boundary {
                    (Vec::new(), None)
                } else {
                    (facet_side(v, &ftab, facet, 0).jets, Some(facet_traces(v, &ftab, facet)))
                };
                FacetCache {
                    gamma_jets: gside.jets,
                    plus_dofs: gside.dofs.to_vec(),
                    plus_jets,
                    traces,
                    transport_pos: Vec::new(),
                    penalty_pos: Vec::new(),
                }
            })
            .collect();
        let block = |rows: &[LocalDof], out: &mut Triplets| {
            for a in rows {
                for b in rows {
                    out.push((a.index, b.index, 0.0));
                }
            }
        };
        let mut tt = Vec::new();
        let mut tp = Vec::new();
        for e in 0..mesh.num_elements() {
            block(v.element_dofs(e), &mut tt);
        }
        for f in &facets {
            if let Some(tr) = &f.traces {
                block(&tr.dofs, &mut tt);
                block(&tr.dofs, &mut tp);
            }
        }
        let transport = CsrMatrix::from_triplets(nv, nv, &tt);
        let penalty = CsrMatrix::from_triplets(nv, nv, &tp);
        let positions = |m: &CsrMatrix, dofs: &[LocalDof]| -> Vec<usize> {
            let mut out = Vec::with_capacity(dofs.len() * dofs.len());
            for a in dofs {
                for b in dofs {
                    out.push(m.position(a.index, b.index).expect("entry in pattern"));
                }
            }
            out
        };
        let vol_pos = (0..mesh.num_elements()).map(|e| positions(&transport, v.element_dofs(e))).collect();
        for f in &mut facets {
            if let Some(tr) = &f.traces {
                f.transport_pos = positions(&transport, &tr.dofs);
                f.penalty_pos = positions(&penalty, &tr.dofs);
            }
        }
        ConvectionCache { vol_weights: vol.rule.weights, vol_jets, vol_pos, facets, transport, penalty }
    }
}

/// Assembles `C(w)` for the velocity coefficient vector `w`.
pub fn assemble_convection(spaces: &DiscreteSpaces, node: usize, w: &[f64], c_s: f64) -> Result<ConvectionSnapshot> {
    let v = &spaces.velocity;
    if w.len() != v.dim() {
        return Err(Error::DimensionMismatch(format!("w has length {}, expected {}", w.len(), v.dim())));
    }
    if !(c_s > 0.0) {
        return Err(Error::InvalidArgument(format!("safeguard constant must be positive, got {c_s}")));
    }
    let cache = spaces.convection.get_or_init(|| Arc::new(ConvectionCache::new(v)));
    let mesh = v.mesh();
    let nl = v.local_dim();

    let volume: Vec<Vec<f64>> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let jets = &cache.vol_jets[e];
            let dofs = v.element_dofs(e);
            let det = v.element_map(e).det;
            let mut local = vec![0.0; nl * nl];
            for (r, wq) in cache.vol_weights.iter().enumerate() {
                let wr = wq * det;
                let row = &jets[r];
                let wx = combine_jets(row, dofs, w).value;
                let conv: Vec<Vec2> = row.iter().map(|jet| mat_vec(&jet.gradient, wx)).collect();
                for i in 0..nl {
                    let vi = row[i].value;
                    for j in 0..nl {
                        local[i * nl + j] += wr * vdot(conv[j], vi);
                    }
                }
            }
            local
        })
        .collect();

    let facets: Vec<(f64, Vec<f64>, Vec<f64>)> = mesh
        .facets()
        .par_iter()
        .zip(&cache.facets)
        .map(|(facet, fc)| {
            let wn_max = fc.gamma_jets.iter().fold(0.0f64, |acc, row| {
                acc.max(vdot(combine_jets(row, &fc.plus_dofs, w).value, facet.normal).abs())
            });
            let gamma = c_s.max(wn_max);
            let Some(tr) = &fc.traces else {
                return (c_s, Vec::new(), Vec::new());
            };
            let nd = tr.dofs.len();
            let mut up = vec![0.0; nd * nd];
            let mut pen = vec![0.0; nd * nd];
            for (r, wt) in tr.weights.iter().enumerate() {
                let wn = vdot(combine_jets(&fc.plus_jets[r], &fc.plus_dofs, w).value, facet.normal);
                for i in 0..nd {
                    let (ai, ji) = (tr.avg[r][i], tr.jump[r][i]);
                    for j in 0..nd {
                        let jj = tr.jump[r][j];
                        up[i * nd + j] -= wt * wn * vdot(jj, ai);
                        pen[i * nd + j] += 0.5 * wt * gamma * vdot(jj, ji);
                    }
                }
            }
            (gamma, up, pen)
        })
        .collect();

    let mut transport = vec![0.0; cache.transport.nnz()];
    let mut penalty = vec![0.0; cache.penalty.nnz()];
    for (local, pos) in volume.iter().zip(&cache.vol_pos) {
        for (v, &p) in local.iter().zip(pos) {
            transport[p] += v;
        }
    }
    let mut gamma = Vec::with_capacity(facets.len());
    for ((g, up, pen), fc) in facets.iter().zip(&cache.facets) {
        gamma.push(*g);
        for (v, &p) in up.iter().zip(&fc.transport_pos) {
            transport[p] += v;
        }
        for (v, &p) in pen.iter().zip(&fc.penalty_pos) {
            penalty[p] += v;
        }
    }
    Ok(ConvectionSnapshot {
        node,
        w: w.to_vec(),
        transport: cache.transport.with_values(transport),
        penalty: cache.penalty.with_values(penalty),
        gamma,
    })
}

/// Elementwise `L2` norm of `div u_h`, squared, by quadrature.
pub fn divergence_norm_sq(spaces: &DiscreteSpaces, u: &[f64]) -> f64 {
    let v = &spaces.velocity;
    let vol = VolumeTab::new(v, 2 * v.degree());
    (0..v.mesh().num_elements())
        .map(|e| {
            let jets = v.element_jets(e, &vol.jets);
            let det = v.element_map(e).det;
            jets.iter()
                .zip(&vol.rule.weights)
                .map(|(row, w)| w * det * combine_jets(row, v.element_dofs(e), u).divergence().powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// `sum_F gamma_F int_F |[u]|^2` over interior facets.
pub fn gamma_jump_sq(spaces: &DiscreteSpaces, gamma: &[f64], jump: &dyn Fn(usize, Point) -> Vec2) -> f64 {
    let v = &spaces.velocity;
    let mesh = v.mesh();
    let rule = gauss_legendre(v.degree() + 4).expect("positive point count");
    mesh.facets()
        .iter()
        .enumerate()
        .filter(|(_, f)| f.is_interior())
        .map(|(fi, f)| {
            let pts = facet_points(mesh, f, &rule);
            gamma[fi]
                * f.diameter
                * pts.iter()
                    .zip(&rule.weights)
                    .map(|(x, w)| {
                        let j = jump(fi, *x);
                        w * vdot(j, j)
                    })
                    .sum::<f64>()
        })
        .sum()
}

/// Layout of the slab unknowns: node-major blocks `[u_i, p_i, mu_i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlabLayout {
    pub nodes: usize,
    pub nv: usize,
    pub nq: usize,
}

impl SlabLayout {
    pub fn block(&self) -> usize {
        self.nv + self.nq + 1
    }

    pub fn len(&self) -> usize {
        self.nodes * self.block()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn velocity(&self, i: usize) -> std::ops::Range<usize> {
        let o = i * self.block();
        o..o + self.nv
    }

    pub fn pressure(&self, i: usize) -> std::ops::Range<usize> {
        let o = i * self.block() + self.nv;
        o..o + self.nq
    }

    pub fn multiplier(&self, i: usize) -> usize {
        i * self.block() + self.nv + self.nq
    }
}

/// Data entering the right-hand side of one slab.
pub struct SlabData<'a> {
    /// Load vectors `(f(s_i), phi)` per node.
    pub loads: &'a [Vec<f64>],
    /// Weak Dirichlet terms per node (without `nu`).
    pub boundary_terms: &'a [Vec<f64>],
    /// Strongly imposed normal moments per node, aligned with
    /// [`VelocitySpace::boundary_dofs`].
    pub boundary_values: &'a [Vec<f64>],
    /// `u_h(t_{n-1}^-)`.
    pub prev_end: &'a [f64],
}

/// One slab's linear system. Rows of velocity node `i` read
/// `sum_j G_ij M u_j + w_i (nu A + C_i) u_i + w_i B^T p_i`, divergence rows
/// `w_i (B u_i + m mu_i)` and mean rows `w_i m^T p_i`. Boundary normal dofs
/// are replaced by identity rows; the matrix is applied matrix-free.
pub struct SlabSystem<'a> {
    pub slab: usize,
    pub layout: SlabLayout,
    pub operators: &'a SpatialOperators,
    pub coupling: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub convection: Vec<ConvectionSnapshot>,
    pub constrained: &'a [usize],
    pub rhs: Vec<f64>,
    /// Initial vector with the boundary values in place.
    pub lift: Vec<f64>,
}

/// Builds the system of slab `basis.index`.
pub fn build_slab_system<'a>(
    spaces: &'a DiscreteSpaces,
    operators: &'a SpatialOperators,
    basis: &SlabBasis,
    convection: Vec<ConvectionSnapshot>,
    data: &SlabData<'_>,
) -> Result<SlabSystem<'a>> {
    let nodes = basis.len();
    let nv = spaces.velocity.dim();
    let nq = spaces.pressure.dim();
    let constrained = spaces.velocity.boundary_dofs();
    if convection.len() != nodes
        || data.loads.len() != nodes
        || data.boundary_terms.len() != nodes
        || data.boundary_values.len() != nodes
    {
        return Err(Error::DimensionMismatch(format!(
            "slab with {nodes} nodes received {} snapshots, {} loads, {} boundary terms, {} boundary value sets",
            convection.len(),
            data.loads.len(),
            data.boundary_terms.len(),
            data.boundary_values.len()
        )));
    }
    if operators.mass.nrows() != nv || data.prev_end.len() != nv {
        return Err(Error::DimensionMismatch("operators or previous state do not match the spaces".into()));
    }
    if let Some(c) = convection.iter().find(|c| c.transport.nrows() != nv) {
        return Err(Error::DimensionMismatch(format!("convection snapshot {} has the wrong size", c.node)));
    }
    let layout = SlabLayout { nodes, nv, nq };
    let mut system = SlabSystem {
        slab: basis.index,
        layout,
        operators,
        coupling: basis.coupling_matrix(),
        weights: basis.weights.clone(),
        convection,
        constrained,
        rhs: vec![0.0; layout.len()],
        lift: vec![0.0; layout.len()],
    };
    let prev = operators.mass.mul_vec(data.prev_end);
    for i in 0..nodes {
        let w = basis.weights[i];
        let r = &mut system.rhs[layout.velocity(i)];
        for (a, ((f, bc), p)) in r.iter_mut().zip(data.loads[i].iter().zip(&data.boundary_terms[i]).zip(&prev)) {
            *a = w * (f + operators.nu * bc) + basis.left[i] * p;
        }
        let lift = &mut system.lift[layout.velocity(i)];
        for (&d, &g) in constrained.iter().zip(&data.boundary_values[i]) {
            lift[d] = g;
        }
    }
    let mut kx = vec![0.0; layout.len()];
    system.apply_unconstrained(&system.lift, &mut kx);
    for (r, k) in system.rhs.iter_mut().zip(&kx) {
        *r -= k;
    }
    for i in 0..nodes {
        let o = layout.velocity(i).start;
        for &d in constrained {
            system.rhs[o + d] = system.lift[o + d];
        }
    }
    Ok(system)
}

impl SlabSystem<'_> {
    /// Full operator without boundary elimination.
    pub fn apply_unconstrained(&self, x: &[f64], y: &mut [f64]) {
        let l = self.layout;
        let ops = self.operators;
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..l.nodes {
            let w = self.weights[i];
            let (vi, pi, mi) = (l.velocity(i), l.pressure(i), l.multiplier(i));
            let mut yu = vec![0.0; l.nv];
            for j in 0..l.nodes {
                let g = self.coupling[i][j];
                if g != 0.0 {
                    ops.mass.mul_add(g, &x[l.velocity(j)], &mut yu);
                }
            }
            let xu = &x[vi.clone()];
            ops.diffusion.mul_add(w * ops.nu, xu, &mut yu);
            self.convection[i].mul_add(w, xu, &mut yu);
            ops.divergence.mul_add_transpose(w, &x[pi.clone()], &mut yu);
            y[vi].copy_from_slice(&yu);
            let mut yp = vec![0.0; l.nq];
            ops.divergence.mul_add(w, xu, &mut yp);
            let mu = x[mi];
            for (a, m) in yp.iter_mut().zip(&ops.mean) {
                *a += w * m * mu;
            }
            y[pi.clone()].copy_from_slice(&yp);
            y[mi] = w * dot(&ops.mean, &x[pi]);
        }
    }

    /// Operator with identity rows on the boundary normal dofs.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let l = self.layout;
        let mut xm = x.to_vec();
        for i in 0..l.nodes {
            let o = l.velocity(i).start;
            for &d in self.constrained {
                xm[o + d] = 0.0;
            }
        }
        self.apply_unconstrained(&xm, y);
        for i in 0..l.nodes {
            let o = l.velocity(i).start;
            for &d in self.constrained {
                y[o + d] = x[o + d];
            }
        }
    }

    /// Explicit matrix, optionally with the boundary elimination applied.
    pub fn to_csr(&self, constrained: bool) -> CsrMatrix {
        let l = self.layout;
        let ops = self.operators;
        let mut fixed = vec![false; l.nv];
        if constrained {
            for &d in self.constrained {
                fixed[d] = true;
            }
        }
        let mut t: Triplets = Vec::new();
        let push = |r: usize, c: usize, rv: usize, cv: Option<usize>, v: f64, t: &mut Triplets| {
            if fixed[rv] || cv.is_some_and(|c| fixed[c]) {
                return;
            }
            t.push((r, c, v));
        };
        for i in 0..l.nodes {
            let w = self.weights[i];
            let (vi, pi, mi) = (l.velocity(i).start, l.pressure(i).start, l.multiplier(i));
            for j in 0..l.nodes {
                let g = self.coupling[i][j];
                let vj = l.velocity(j).start;
                for (r, c, v) in ops.mass.iter() {
                    push(vi + r, vj + c, r, Some(c), g * v, &mut t);
                }
            }
            for (r, c, v) in ops.diffusion.iter() {
                push(vi + r, vi + c, r, Some(c), w * ops.nu * v, &mut t);
            }
            for (r, c, v) in self.convection[i].iter() {
                push(vi + r, vi + c, r, Some(c), w * v, &mut t);
            }
            for (r, c, v) in ops.divergence.iter() {
                push(vi + c, pi + r, c, None, w * v, &mut t);
                if !fixed[c] {
                    t.push((pi + r, vi + c, w * v));
                }
            }
            for (r, m) in ops.mean.iter().enumerate() {
                t.push((pi + r, mi, w * m));
                t.push((mi, pi + r, w * m));
            }
            if constrained {
                for &d in self.constrained {
                    t.push((vi + d, vi + d, 1.0));
                }
            }
        }
        CsrMatrix::from_triplets(l.len(), l.len(), &t)
    }

    /// `|b - K x| / |b|`.
    pub fn relative_residual(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y);
        let r: f64 = y.iter().zip(&self.rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let b = crate::linalg::norm(&self.rhs);
        if b == 0.0 {
            r
        } else {
            r / b
        }
    }
}

/// Warns when `w` is visibly non-solenoidal.
pub fn check_solenoidal(spaces: &DiscreteSpaces, w: &[f64]) {
    let div = divergence_norm_sq(spaces, w).sqrt();
    let mass = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if div > 1e-10 * mass.max(1.0) {
        warn!("convection field has divergence norm {div:e}");
    }
}
