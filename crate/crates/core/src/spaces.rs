//! Discrete velocity / pressure pair `RT_k x P_k` on a triangulation.
//!
//! The reference RT_k element spans `P_k^2 + x P~_k`. Its degrees of freedom
//! are normal moments against the Lagrange basis of `P_k` at the `k+1`
//! Gauss-Legendre points of each facet, plus interior moments against
//! `P_{k-1}^2`. Since the Gauss points are symmetric, reversing a facet maps
//! moment `q` to moment `k - q`, so adjacent elements agree on the facet
//! parameterization by running it from the lower to the higher global vertex.
//!
//! Global numbering: facet dofs first (`(k+1)` per facet), then interior
//! dofs element by element.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::quadrature::{gauss_legendre, triangle_rule, IntervalRule};

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

/// Quadrature for dof moments of general fields. The commuting property of
/// the interpolant holds only up to the error of these rules.
const MOMENT_POINTS: usize = 10;
const MOMENT_DEGREE: usize = 18;

/// Reference triangle vertices.
pub const REF_VERTICES: [Point; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// Local facet `i` of the reference triangle runs from vertex `i+1` to `i+2`.
pub fn ref_facet_point(i: usize, s: f64) -> Point {
    let (a, b) = (REF_VERTICES[(i + 1) % 3], REF_VERTICES[(i + 2) % 3]);
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

/// Outward unit normal and length of reference facet `i`.
pub fn ref_facet_normal(i: usize) -> (Vec2, f64) {
    let (a, b) = (REF_VERTICES[(i + 1) % 3], REF_VERTICES[(i + 2) % 3]);
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    ([(b[1] - a[1]) / len, -(b[0] - a[0]) / len], len)
}

fn monomials(degree: usize) -> Vec<(i32, i32)> {
    let mut out = Vec::new();
    for total in 0..=degree as i32 {
        for b in 0..=total {
            out.push((total - b, b));
        }
    }
    out
}

fn monomial(x: Point, (a, b): (i32, i32)) -> (f64, Vec2) {
    let p = |e: i32, v: f64| if e == 0 { 1.0 } else { v.powi(e) };
    let val = p(a, x[0]) * p(b, x[1]);
    let dx = if a == 0 { 0.0 } else { a as f64 * p(a - 1, x[0]) * p(b, x[1]) };
    let dy = if b == 0 { 0.0 } else { b as f64 * p(a, x[0]) * p(b - 1, x[1]) };
    (val, [dx, dy])
}

/// Lagrange polynomial `q` through `nodes`, evaluated at `s`.
fn lagrange(nodes: &[f64], q: usize, s: f64) -> f64 {
    nodes
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != q)
        .map(|(_, &sm)| (s - sm) / (nodes[q] - sm))
        .product()
}

/// Value and gradient (`grad[i][j] = d v_i / d x_j`) of a vector field.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VectorJet {
    pub value: Vec2,
    pub gradient: Mat2,
}

impl VectorJet {
    pub fn divergence(&self) -> f64 {
        self.gradient[0][0] + self.gradient[1][1]
    }
}

/// Nodal RT_k basis on the reference triangle.
#[derive(Debug, Clone)]
pub struct RtReference {
    k: usize,
    /// Span functions: `(component or None for the x P~_k part, monomial)`.
    span: Vec<(Option<usize>, (i32, i32))>,
    /// `basis_j = sum_m coeffs[(m, j)] span_m`.
    coeffs: DMatrix<f64>,
    facet_nodes: Vec<f64>,
}

impl RtReference {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("RT_k needs k >= 1".into()));
        }
        let mut span = Vec::new();
        for c in 0..2 {
            for m in monomials(k) {
                span.push((Some(c), m));
            }
        }
        for b in 0..=k as i32 {
            span.push((None, (k as i32 - b, b)));
        }
        let facet_nodes = gauss_legendre(k + 1)?.nodes;
        let mut reference = RtReference {
            k,
            span,
            coeffs: DMatrix::identity(0, 0),
            facet_nodes,
        };
        let n = reference.span.len();
        let mut vandermonde = DMatrix::<f64>::zeros(n, n);
        for m in 0..n {
            let dofs = reference.dofs_of(|x| reference.span_jet(m, x).value);
            for (i, d) in dofs.iter().enumerate() {
                vandermonde[(i, m)] = *d;
            }
        }
        reference.coeffs = vandermonde
            .try_inverse()
            .ok_or_else(|| Error::Geometry("singular RT_k Vandermonde matrix".into()))?;
        Ok(reference)
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    /// `(k+1)(k+3)`.
    pub fn dim(&self) -> usize {
        self.span.len()
    }

    pub fn facet_dofs(&self) -> usize {
        self.k + 1
    }

    pub fn interior_dofs(&self) -> usize {
        self.k * (self.k + 1)
    }

    pub fn facet_nodes(&self) -> &[f64] {
        &self.facet_nodes
    }

    fn span_jet(&self, m: usize, x: Point) -> VectorJet {
        let (comp, mono) = self.span[m];
        let (v, g) = monomial(x, mono);
        match comp {
            Some(c) => {
                let mut jet = VectorJet::default();
                jet.value[c] = v;
                jet.gradient[c] = g;
                jet
            }
            None => VectorJet {
                value: [x[0] * v, x[1] * v],
                gradient: [
                    [v + x[0] * g[0], x[0] * g[1]],
                    [x[1] * g[0], v + x[1] * g[1]],
                ],
            },
        }
    }

    /// Applies the local dof functionals to a reference vector field.
    pub fn dofs_of(&self, field: impl Fn(Point) -> Vec2) -> Vec<f64> {
        let k = self.k;
        let gl = gauss_legendre(MOMENT_POINTS).expect("positive point count");
        let mut dofs = Vec::with_capacity(self.dim());
        for i in 0..3 {
            let (n, len) = ref_facet_normal(i);
            for q in 0..=k {
                let moment: f64 = gl
                    .iter()
                    .map(|(s, w)| {
                        let v = field(ref_facet_point(i, s));
                        w * (v[0] * n[0] + v[1] * n[1]) * lagrange(&self.facet_nodes, q, s)
                    })
                    .sum();
                dofs.push(len * moment);
            }
        }
        let rule = triangle_rule(MOMENT_DEGREE).expect("supported degree");
        for c in 0..2 {
            for mono in monomials(k - 1) {
                let moment: f64 = rule
                    .iter()
                    .map(|(x, w)| w * field(x)[c] * monomial(x, mono).0)
                    .sum();
                dofs.push(moment);
            }
        }
        dofs
    }

    /// Values and gradients of all reference basis functions at `x`.
    pub fn eval(&self, x: Point) -> Vec<VectorJet> {
        let span: Vec<VectorJet> = (0..self.dim()).map(|m| self.span_jet(m, x)).collect();
        (0..self.dim())
            .map(|j| {
                let mut jet = VectorJet::default();
                for (m, s) in span.iter().enumerate() {
                    let c = self.coeffs[(m, j)];
                    if c != 0.0 {
                        for a in 0..2 {
                            jet.value[a] += c * s.value[a];
                            for b in 0..2 {
                                jet.gradient[a][b] += c * s.gradient[a][b];
                            }
                        }
                    }
                }
                jet
            })
            .collect()
    }

    pub fn tabulate(&self, points: &[Point]) -> Vec<Vec<VectorJet>> {
        points.iter().map(|&x| self.eval(x)).collect()
    }
}

/// Affine map `x = origin + J x_hat` of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementMap {
    pub origin: Point,
    pub jacobian: Mat2,
    pub inverse: Mat2,
    pub det: f64,
}

impl ElementMap {
    pub fn new(v: [Point; 3]) -> Self {
        let jacobian = [[v[1][0] - v[0][0], v[2][0] - v[0][0]], [v[1][1] - v[0][1], v[2][1] - v[0][1]]];
        let det = jacobian[0][0] * jacobian[1][1] - jacobian[0][1] * jacobian[1][0];
        let inverse = [
            [jacobian[1][1] / det, -jacobian[0][1] / det],
            [-jacobian[1][0] / det, jacobian[0][0] / det],
        ];
        ElementMap { origin: v[0], jacobian, inverse, det }
    }

    pub fn to_physical(&self, x: Point) -> Point {
        let j = &self.jacobian;
        [
            self.origin[0] + j[0][0] * x[0] + j[0][1] * x[1],
            self.origin[1] + j[1][0] * x[0] + j[1][1] * x[1],
        ]
    }

    pub fn to_reference(&self, x: Point) -> Point {
        let (dx, dy) = (x[0] - self.origin[0], x[1] - self.origin[1]);
        let i = &self.inverse;
        [i[0][0] * dx + i[0][1] * dy, i[1][0] * dx + i[1][1] * dy]
    }

    /// Contravariant Piola transform of a reference jet.
    pub fn piola(&self, r: &VectorJet) -> VectorJet {
        let (j, inv, d) = (&self.jacobian, &self.inverse, self.det);
        let value = [
            (j[0][0] * r.value[0] + j[0][1] * r.value[1]) / d,
            (j[1][0] * r.value[0] + j[1][1] * r.value[1]) / d,
        ];
        let mut jg = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                jg[a][b] = (j[a][0] * r.gradient[0][b] + j[a][1] * r.gradient[1][b]) / d;
            }
        }
        let mut gradient = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                gradient[a][b] = jg[a][0] * inv[0][b] + jg[a][1] * inv[1][b];
            }
        }
        VectorJet { value, gradient }
    }

    /// Inverse Piola pull-back `d J^{-1} v` of a physical vector.
    pub fn pull_back(&self, v: Vec2) -> Vec2 {
        let (i, d) = (&self.inverse, self.det);
        [d * (i[0][0] * v[0] + i[0][1] * v[1]), d * (i[1][0] * v[0] + i[1][1] * v[1])]
    }
}

/// Global dof `index` contributing `sign` times a local basis function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalDof {
    pub index: usize,
    pub sign: f64,
}

#[derive(Debug, Clone)]
pub struct VelocitySpace {
    mesh: Arc<Mesh>,
    reference: RtReference,
    maps: Vec<ElementMap>,
    element_dofs: Vec<Vec<LocalDof>>,
    boundary_dofs: Vec<usize>,
    dim: usize,
}

impl VelocitySpace {
    pub fn new(mesh: Arc<Mesh>, k: usize) -> Result<Self> {
        if !(1..=2).contains(&k) {
            return Err(Error::InvalidArgument(format!("RT_k supports k in {{1, 2}}, got {k}")));
        }
        let reference = RtReference::new(k)?;
        let nf = k + 1;
        let ni = k * (k + 1);
        let facet_block = nf * mesh.num_facets();
        let maps = (0..mesh.num_elements())
            .map(|e| ElementMap::new(mesh.element_vertices(e)))
            .collect();
        let element_dofs = (0..mesh.num_elements())
            .map(|e| {
                let tri = mesh.triangles()[e];
                let facets = mesh.element_facets(e);
                let signs = mesh.element_signs(e);
                let mut dofs = Vec::with_capacity(reference.dim());
                for i in 0..3 {
                    let forward = tri[(i + 1) % 3] < tri[(i + 2) % 3];
                    for q in 0..nf {
                        let qg = if forward { q } else { k - q };
                        dofs.push(LocalDof { index: facets[i] * nf + qg, sign: signs[i] });
                    }
                }
                for j in 0..ni {
                    dofs.push(LocalDof { index: facet_block + e * ni + j, sign: 1.0 });
                }
                dofs
            })
            .collect();
        let boundary_dofs = mesh
            .facets()
            .iter()
            .enumerate()
            .filter(|(_, f)| f.boundary)
            .flat_map(|(fi, _)| (0..nf).map(move |q| fi * nf + q))
            .collect();
        Ok(VelocitySpace {
            dim: facet_block + ni * mesh.num_elements(),
            mesh,
            reference,
            maps,
            element_dofs,
            boundary_dofs,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.reference.k
    }

    pub fn reference(&self) -> &RtReference {
        &self.reference
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn local_dim(&self) -> usize {
        self.reference.dim()
    }

    pub fn element_map(&self, e: usize) -> &ElementMap {
        &self.maps[e]
    }

    pub fn element_dofs(&self, e: usize) -> &[LocalDof] {
        &self.element_dofs[e]
    }

    /// Facet dofs on boundary facets (strongly constrained normal moments).
    pub fn boundary_dofs(&self) -> &[usize] {
        &self.boundary_dofs
    }

    /// Global dofs of facet `f`, ordered from the lower to the higher vertex.
    pub fn facet_dof_range(&self, f: usize) -> std::ops::Range<usize> {
        let nf = self.reference.facet_dofs();
        f * nf..(f + 1) * nf
    }

    /// Physical basis jets of element `e` at reference points, signs applied.
    pub fn element_jets(&self, e: usize, tab: &[Vec<VectorJet>]) -> Vec<Vec<VectorJet>> {
        let map = &self.maps[e];
        let dofs = &self.element_dofs[e];
        tab.iter()
            .map(|row| {
                row.iter()
                    .zip(dofs)
                    .map(|(r, d)| {
                        let mut p = map.piola(r);
                        if d.sign < 0.0 {
                            p.value = p.value.map(|v| -v);
                            p.gradient = p.gradient.map(|g| g.map(|v| -v));
                        }
                        p
                    })
                    .collect()
            })
            .collect()
    }

    /// Jet of the function with global coefficients `coeffs` on element `e`
    /// at a reference point.
    pub fn evaluate(&self, coeffs: &[f64], e: usize, x_ref: Point) -> Result<VectorJet> {
        if e >= self.mesh.num_elements() {
            return Err(Error::InvalidArgument(format!("element index {e} out of range")));
        }
        if coeffs.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "velocity coefficients have length {}, expected {}",
                coeffs.len(),
                self.dim
            )));
        }
        let jets = self.element_jets(e, &[self.reference.eval(x_ref)]);
        Ok(combine_jets(&jets[0], self.element_dofs(e), coeffs))
    }

    /// Normal moments `int_F (v . n_F) L_q ds` of a field on facet `f`.
    pub fn facet_moments(&self, f: usize, field: impl Fn(Point) -> Vec2) -> Vec<f64> {
        let facet = &self.mesh.facets()[f];
        let (a, b) = (self.mesh.vertices()[facet.vertices[0]], self.mesh.vertices()[facet.vertices[1]]);
        let gl = gauss_legendre(MOMENT_POINTS).expect("positive point count");
        let nodes = self.reference.facet_nodes();
        (0..nodes.len())
            .map(|q| {
                facet.diameter
                    * gl
                        .iter()
                        .map(|(s, w)| {
                            let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                            let v = field(x);
                            w * (v[0] * facet.normal[0] + v[1] * facet.normal[1]) * lagrange(nodes, q, s)
                        })
                        .sum::<f64>()
            })
            .collect()
    }

    /// Coefficients of the RT interpolant of `field`.
    pub fn interpolate(&self, field: impl Fn(Point) -> Vec2) -> Vec<f64> {
        let mut coeffs = vec![0.0; self.dim];
        for f in 0..self.mesh.num_facets() {
            let moments = self.facet_moments(f, &field);
            coeffs[self.facet_dof_range(f)].copy_from_slice(&moments);
        }
        let nf3 = 3 * self.reference.facet_dofs();
        for e in 0..self.mesh.num_elements() {
            let map = &self.maps[e];
            let local = self.reference.dofs_of(|x| map.pull_back(field(map.to_physical(x))));
            for (d, v) in self.element_dofs[e].iter().zip(&local).skip(nf3) {
                coeffs[d.index] = *v;
            }
        }
        coeffs
    }

    /// Normal-moment values of `g` on the boundary facets, aligned with
    /// [`Self::boundary_dofs`].
    pub fn boundary_values(&self, g: impl Fn(Point) -> Vec2) -> Vec<f64> {
        self.mesh
            .facets()
            .iter()
            .enumerate()
            .filter(|(_, f)| f.boundary)
            .flat_map(|(fi, _)| self.facet_moments(fi, &g))
            .collect()
    }

    /// Copy of the space in which interior facet `f` uses the opposite
    /// normal. Coefficients of the same function change sign on that facet.
    pub fn with_flipped_facet(&self, f: usize) -> VelocitySpace {
        let mut space = self.clone();
        let range = self.facet_dof_range(f);
        for dofs in &mut space.element_dofs {
            for d in dofs.iter_mut() {
                if range.contains(&d.index) {
                    d.sign = -d.sign;
                }
            }
        }
        space
    }
}

/// `sum_a c[dof_a] jet_a`.
pub fn combine_jets(jets: &[VectorJet], dofs: &[LocalDof], coeffs: &[f64]) -> VectorJet {
    let mut out = VectorJet::default();
    for (jet, d) in jets.iter().zip(dofs) {
        let c = coeffs[d.index];
        if c == 0.0 {
            continue;
        }
        for a in 0..2 {
            out.value[a] += c * jet.value[a];
            for b in 0..2 {
                out.gradient[a][b] += c * jet.gradient[a][b];
            }
        }
    }
    out
}

/// Discontinuous `P_k` with an elementwise monomial basis in reference
/// coordinates.
#[derive(Debug, Clone)]
pub struct PressureSpace {
    mesh: Arc<Mesh>,
    k: usize,
    monomials: Vec<(i32, i32)>,
    mean: Vec<f64>,
}

impl PressureSpace {
    pub fn new(mesh: Arc<Mesh>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("pressure degree must be >= 1".into()));
        }
        let monomials = monomials(k);
        let fact = |n: i32| (1..=n).map(f64::from).product::<f64>();
        let mut mean = Vec::with_capacity(mesh.num_elements() * monomials.len());
        for e in 0..mesh.num_elements() {
            let det = 2.0 * mesh.area(e);
            for &(a, b) in &monomials {
                mean.push(det * fact(a) * fact(b) / fact(a + b + 2));
            }
        }
        Ok(PressureSpace { mesh, k, monomials, mean })
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn local_dim(&self) -> usize {
        self.monomials.len()
    }

    pub fn dim(&self) -> usize {
        self.local_dim() * self.mesh.num_elements()
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    /// Vector `m` with `m . q = int_Omega q_h`.
    pub fn mean_functional(&self) -> &[f64] {
        &self.mean
    }

    pub fn element_range(&self, e: usize) -> std::ops::Range<usize> {
        e * self.local_dim()..(e + 1) * self.local_dim()
    }

    /// Local basis values at a reference point.
    pub fn basis(&self, x_ref: Point) -> Vec<f64> {
        self.monomials.iter().map(|&m| monomial(x_ref, m).0).collect()
    }

    pub fn evaluate(&self, coeffs: &[f64], e: usize, x_ref: Point) -> f64 {
        self.basis(x_ref)
            .iter()
            .zip(&coeffs[self.element_range(e)])
            .map(|(b, c)| b * c)
            .sum()
    }

    /// Elementwise L2 projection of a scalar field.
    pub fn project(&self, field: impl Fn(Point) -> f64) -> Vec<f64> {
        let rule = triangle_rule(2 * self.k + 4).expect("supported degree");
        let n = self.local_dim();
        let mut mass = DMatrix::<f64>::zeros(n, n);
        let tab: Vec<Vec<f64>> = rule.nodes.iter().map(|&x| self.basis(x)).collect();
        for (row, w) in tab.iter().zip(&rule.weights) {
            for a in 0..n {
                for b in 0..n {
                    mass[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        let lu = mass.lu();
        let mut out = Vec::with_capacity(self.dim());
        for e in 0..self.mesh.num_elements() {
            let map = ElementMap::new(self.mesh.element_vertices(e));
            let mut rhs = nalgebra::DVector::<f64>::zeros(n);
            for ((x, w), row) in rule.iter().zip(&tab) {
                let v = field(map.to_physical(x));
                for a in 0..n {
                    rhs[a] += w * v * row[a];
                }
            }
            out.extend(lu.solve(&rhs).expect("reference mass matrix is SPD").iter());
        }
        out
    }
}

/// Gauss rule used on facets for integrands of degree `degree`.
pub fn facet_rule(degree: usize) -> IntervalRule {
    gauss_legendre(degree / 2 + 1).expect("positive point count")
}
