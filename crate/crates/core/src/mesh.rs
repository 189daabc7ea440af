//! Conforming triangular meshes of polygonal domains.
//!
//! Triangles are stored counter-clockwise. Local facet `i` of a triangle is
//! the edge opposite its local vertex `i`, i.e. it joins local vertices
//! `i+1` and `i+2` (mod 3). Every facet keeps its vertices sorted by global
//! index and its unit normal points out of the adjacent element with the
//! lower index (`K_+`); on the boundary that is the outward normal of the
//! domain.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Relative area threshold below which a triangle is rejected as degenerate.
const DEGENERATE_AREA_RATIO: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    /// Global vertex indices, sorted ascending.
    pub vertices: [usize; 2],
    /// `elements[0]` is `K_+`; `elements[1]` is `K_-` for interior facets.
    pub elements: [usize; 2],
    /// Local facet index of this facet inside each adjacent element.
    pub local_index: [usize; 2],
    pub normal: Point,
    pub diameter: f64,
    pub boundary: bool,
}

impl Facet {
    pub fn is_interior(&self) -> bool {
        !self.boundary
    }

    pub fn plus(&self) -> usize {
        self.elements[0]
    }

    /// `K_-`, absent on boundary facets.
    pub fn minus(&self) -> Option<usize> {
        (!self.boundary).then_some(self.elements[1])
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    facets: Vec<Facet>,
    element_facets: Vec<[usize; 3]>,
    /// +1 when the facet normal is the outward normal of the element.
    element_signs: Vec<[f64; 3]>,
    areas: Vec<f64>,
    diameters: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeshDump {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
}

/// Geometric summary of a mesh.
#[derive(Debug, Clone)]
pub struct MeshMetrics {
    pub h: f64,
    pub element_diameters: Vec<f64>,
    pub element_areas: Vec<f64>,
    pub facet_diameters: Vec<f64>,
    pub facet_normals: Vec<Point>,
    /// max over elements of `h_K / (2 r_K)` with `r_K` the inradius.
    pub shape_regularity: f64,
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Mesh {
    /// Builds a mesh from raw vertex and triangle lists. Clockwise triangles
    /// are re-oriented. Fails on degenerate triangles, out-of-range indices
    /// or non-conforming facet topology.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::InvalidArgument("mesh has no triangles".into()));
        }
        let mut tris = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&v) = tri.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::Geometry(format!(
                    "triangle {t} references vertex {v} but only {} vertices exist",
                    vertices.len()
                )));
            }
            let [a, b, c] = *tri;
            let area = signed_area(vertices[a], vertices[b], vertices[c]);
            let hk = dist(vertices[a], vertices[b])
                .max(dist(vertices[b], vertices[c]))
                .max(dist(vertices[c], vertices[a]));
            if area.abs() < DEGENERATE_AREA_RATIO * hk * hk || hk == 0.0 {
                return Err(Error::Geometry(format!("triangle {t} is degenerate")));
            }
            tris.push(if area > 0.0 { [a, b, c] } else { [a, c, b] });
        }

        let mut facet_of: HashMap<[usize; 2], usize> = HashMap::new();
        let mut facets: Vec<Facet> = Vec::new();
        let mut element_facets = vec![[0usize; 3]; tris.len()];
        for (t, tri) in tris.iter().enumerate() {
            for i in 0..3 {
                let a = tri[(i + 1) % 3];
                let b = tri[(i + 2) % 3];
                let key = [a.min(b), a.max(b)];
                match facet_of.get(&key) {
                    Some(&f) => {
                        let facet = &mut facets[f];
                        if !facet.boundary {
                            return Err(Error::Geometry(format!(
                                "facet {key:?} is shared by more than two triangles"
                            )));
                        }
                        facet.boundary = false;
                        facet.elements[1] = t;
                        facet.local_index[1] = i;
                        element_facets[t][i] = f;
                    }
                    None => {
                        let (pa, pb) = (vertices[a], vertices[b]);
                        let len = dist(pa, pb);
                        // outward normal of a counter-clockwise triangle
                        let normal = [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len];
                        facet_of.insert(key, facets.len());
                        element_facets[t][i] = facets.len();
                        facets.push(Facet {
                            vertices: key,
                            elements: [t, t],
                            local_index: [i, i],
                            normal,
                            diameter: len,
                            boundary: true,
                        });
                    }
                }
            }
        }

        let mut element_signs = vec![[1.0; 3]; tris.len()];
        for facet in &facets {
            if !facet.boundary {
                let [_, minus] = facet.elements;
                element_signs[minus][facet.local_index[1]] = -1.0;
            }
        }

        let areas = tris
            .iter()
            .map(|t| signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]))
            .collect();
        let diameters = tris
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|v| vertices[v]);
                dist(a, b).max(dist(b, c)).max(dist(c, a))
            })
            .collect();

        let mesh = Mesh {
            vertices,
            triangles: tris,
            facets,
            element_facets,
            element_signs,
            areas,
            diameters,
        };
        mesh.check_conformity()?;
        Ok(mesh)
    }

    /// A boundary edge whose interior contains another vertex would be a
    /// hanging node.
    fn check_conformity(&self) -> Result<()> {
        let boundary: Vec<&Facet> = self.facets.iter().filter(|f| f.boundary).collect();
        let mut on_boundary = vec![0usize; self.vertices.len()];
        for f in &boundary {
            on_boundary[f.vertices[0]] += 1;
            on_boundary[f.vertices[1]] += 1;
        }
        // each boundary vertex of a simply or multiply connected polygon
        // closes its boundary loops: even degree
        if let Some(v) = on_boundary.iter().position(|&c| c % 2 == 1) {
            return Err(Error::Geometry(format!(
                "vertex {v} has a hanging boundary edge (non-conforming mesh)"
            )));
        }
        for f in &boundary {
            let (a, b) = (self.vertices[f.vertices[0]], self.vertices[f.vertices[1]]);
            for (v, p) in self.vertices.iter().enumerate() {
                if v == f.vertices[0] || v == f.vertices[1] || on_boundary[v] == 0 {
                    continue;
                }
                let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                let dot = (p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]);
                let len2 = f.diameter * f.diameter;
                if cross.abs() <= 1e-12 * len2 && dot > 1e-12 * len2 && dot < len2 * (1.0 - 1e-12) {
                    return Err(Error::Geometry(format!(
                        "vertex {v} hangs on facet {:?}",
                        f.vertices
                    )));
                }
            }
        }
        Ok(())
    }

    /// Uniform `n x n` grid of the unit square, each cell cut along its
    /// (0,0)-(1,1) diagonal.
    pub fn structured(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "structured mesh needs n >= 1".into(),
            ));
        }
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Mesh::new(vertices, triangles)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn num_boundary_facets(&self) -> usize {
        self.facets.iter().filter(|f| f.boundary).count()
    }

    /// Global facet indices of the three local facets of element `k`.
    pub fn element_facets(&self, k: usize) -> [usize; 3] {
        self.element_facets[k]
    }

    /// Orientation signs of the local facets of element `k` relative to the
    /// global facet normals.
    pub fn element_signs(&self, k: usize) -> [f64; 3] {
        self.element_signs[k]
    }

    pub fn element_vertices(&self, k: usize) -> [Point; 3] {
        self.triangles[k].map(|v| self.vertices[v])
    }

    pub fn area(&self, k: usize) -> f64 {
        self.areas[k]
    }

    pub fn element_diameter(&self, k: usize) -> f64 {
        self.diameters[k]
    }

    /// Global meshsize `h = max h_K`.
    pub fn h(&self) -> f64 {
        self.diameters.iter().cloned().fold(0.0, f64::max)
    }

    pub fn metrics(&self) -> MeshMetrics {
        let shape_regularity = (0..self.num_elements())
            .map(|k| {
                let [a, b, c] = self.element_vertices(k);
                let perimeter = dist(a, b) + dist(b, c) + dist(c, a);
                let inradius = 2.0 * self.areas[k] / perimeter;
                self.diameters[k] / (2.0 * inradius)
            })
            .fold(0.0, f64::max);
        MeshMetrics {
            h: self.h(),
            element_diameters: self.diameters.clone(),
            element_areas: self.areas.clone(),
            facet_diameters: self.facets.iter().map(|f| f.diameter).collect(),
            facet_normals: self.facets.iter().map(|f| f.normal).collect(),
            shape_regularity,
        }
    }

    /// JSON dump of vertices and triangles.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&MeshDump {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
        })
        .expect("mesh dump serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dump: MeshDump =
            serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
        Mesh::new(dump.vertices, dump.triangles)
    }

    /// Parses Triangle's `.node` / `.ele` text formats. The index base (0 or 1)
    /// is taken from the first vertex index of the `.node` file.
    pub fn from_triangle(node_text: &str, ele_text: &str) -> Result<Self> {
        let mut node_lines = data_lines(node_text);
        let (hline, header) = node_lines
            .next()
            .ok_or(Error::Parse { line: 0, message: "empty .node file".into() })?;
        let npoints = parse_field::<usize>(&header, 0, hline, ".node header point count")?;
        let dim = parse_field::<usize>(&header, 1, hline, ".node header dimension")?;
        if dim != 2 {
            return Err(Error::Parse { line: hline, message: format!("expected dimension 2, got {dim}") });
        }
        let mut base = None;
        let mut vertices = vec![[f64::NAN; 2]; npoints];
        let mut seen = vec![false; npoints];
        for (line, fields) in node_lines.by_ref().take(npoints) {
            let id = parse_field::<usize>(&fields, 0, line, "vertex index")?;
            let b = *base.get_or_insert(if id == 0 { 0 } else { 1 });
            let slot = id
                .checked_sub(b)
                .filter(|&s| s < npoints)
                .ok_or_else(|| Error::Parse { line, message: format!("vertex index {id} out of range") })?;
            let x = parse_field::<f64>(&fields, 1, line, "x coordinate")?;
            let y = parse_field::<f64>(&fields, 2, line, "y coordinate")?;
            vertices[slot] = [x, y];
            seen[slot] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Parse {
                line: 0,
                message: format!(".node file lists fewer than {npoints} vertices (slot {missing} missing)"),
            });
        }
        let base = base.unwrap_or(1);

        let mut ele_lines = data_lines(ele_text);
        let (hline, header) = ele_lines
            .next()
            .ok_or(Error::Parse { line: 0, message: "empty .ele file".into() })?;
        let ntri = parse_field::<usize>(&header, 0, hline, ".ele header triangle count")?;
        let per = parse_field::<usize>(&header, 1, hline, ".ele header nodes per triangle")?;
        if per != 3 && per != 6 {
            return Err(Error::Parse { line: hline, message: format!("unsupported nodes per triangle {per}") });
        }
        let mut triangles = Vec::with_capacity(ntri);
        let mut lines_of = Vec::with_capacity(ntri);
        for (line, fields) in ele_lines.take(ntri) {
            let mut tri = [0usize; 3];
            for (c, slot) in tri.iter_mut().enumerate() {
                let v = parse_field::<usize>(&fields, c + 1, line, "triangle vertex")?;
                *slot = v
                    .checked_sub(base)
                    .filter(|&s| s < npoints)
                    .ok_or_else(|| Error::Parse {
                        line,
                        message: format!("vertex index {v} out of range (mesh has {npoints} vertices)"),
                    })?;
            }
            triangles.push(tri);
            lines_of.push(line);
        }
        if triangles.len() != ntri {
            return Err(Error::Parse {
                line: 0,
                message: format!(".ele file lists {} of {ntri} triangles", triangles.len()),
            });
        }
        for (t, tri) in triangles.iter().enumerate() {
            let [a, b, c] = tri.map(|v| vertices[v]);
            let hk = dist(a, b).max(dist(b, c)).max(dist(c, a));
            if signed_area(a, b, c).abs() < DEGENERATE_AREA_RATIO * hk * hk {
                return Err(Error::Parse {
                    line: lines_of[t],
                    message: format!("triangle {t} is degenerate (zero area)"),
                });
            }
        }
        Mesh::new(vertices, triangles)
    }
}

/// Non-empty, non-comment lines split into whitespace fields, with 1-based
/// line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let content = raw.split('#').next().unwrap_or("");
        let fields: Vec<&str> = content.split_whitespace().collect();
        (!fields.is_empty()).then_some((i + 1, fields))
    })
}

fn parse_field<T: std::str::FromStr>(fields: &[&str], i: usize, line: usize, what: &str) -> Result<T> {
    fields
        .get(i)
        .ok_or_else(|| Error::Parse { line, message: format!("missing {what}") })?
        .parse()
        .map_err(|_| Error::Parse { line, message: format!("malformed {what}: {:?}", fields[i]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn structured_counts() {
        let m = Mesh::structured(1).unwrap();
        assert_eq!((m.num_vertices(), m.num_elements(), m.num_facets()), (4, 2, 5));
        assert_eq!(m.num_boundary_facets(), 4);

        let m = Mesh::structured(2).unwrap();
        assert_eq!((m.num_vertices(), m.num_elements(), m.num_facets()), (9, 8, 16));
        assert_eq!(m.num_boundary_facets(), 8);
        // Euler: V - E + T = 1
        assert_eq!(9 + 8 - 16, 1);
        assert!(m.metrics().element_diameters.iter().all(|&h| (h - 2f64.sqrt() / 2.0).abs() < 1e-15));

        assert_abs_diff_eq!(Mesh::structured(4).unwrap().h(), 2f64.sqrt() / 4.0, epsilon = 1e-15);
        assert!(matches!(Mesh::structured(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn unit_right_triangle_metrics() {
        let m = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        assert_abs_diff_eq!(m.area(0), 0.5);
        assert_abs_diff_eq!(m.element_diameter(0), 2f64.sqrt());
        let hyp = m.facets().iter().find(|f| f.vertices == [1, 2]).unwrap();
        assert_abs_diff_eq!(hyp.diameter, 2f64.sqrt());
        assert_abs_diff_eq!(hyp.normal[0], 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(hyp.normal[1], 1.0 / 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn facet_partition_and_normals() {
        for n in [1, 3, 5] {
            let m = Mesh::structured(n).unwrap();
            let interior = m.facets().iter().filter(|f| f.is_interior()).count();
            let boundary = m.num_boundary_facets();
            assert_eq!(3 * m.num_elements(), 2 * interior + boundary);
            let total: f64 = (0..m.num_elements()).map(|k| m.area(k)).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
            for (fi, f) in m.facets().iter().enumerate() {
                // K_+ is the lower element index
                if let Some(minus) = f.minus() {
                    assert!(f.plus() < minus);
                    assert_eq!(m.element_signs(minus)[f.local_index[1]], -1.0);
                    assert_eq!(m.element_facets(minus)[f.local_index[1]], fi);
                }
                // normal points away from the centroid of K_+
                let c = centroid(&m, f.plus());
                let mid = midpoint(&m, f);
                let d = (mid[0] - c[0]) * f.normal[0] + (mid[1] - c[1]) * f.normal[1];
                assert!(d > 0.0);
                if let Some(minus) = f.minus() {
                    let c = centroid(&m, minus);
                    let d = (mid[0] - c[0]) * f.normal[0] + (mid[1] - c[1]) * f.normal[1];
                    assert!(d < 0.0);
                }
            }
        }
    }

    fn centroid(m: &Mesh, k: usize) -> Point {
        let v = m.element_vertices(k);
        [(v[0][0] + v[1][0] + v[2][0]) / 3.0, (v[0][1] + v[1][1] + v[2][1]) / 3.0]
    }

    fn midpoint(m: &Mesh, f: &Facet) -> Point {
        let (a, b) = (m.vertices()[f.vertices[0]], m.vertices()[f.vertices[1]]);
        [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
    }

    const NODE: &str = "# unit square\n4 2 0 1\n1 0.0 0.0 1\n2 1.0 0.0 1\n3 0.0 1.0 1\n4 1.0 1.0 1\n";

    #[test]
    fn triangle_format_matches_structured() {
        let ele = "2 3 0\n1 1 2 4\n2 1 4 3\n";
        let m = Mesh::from_triangle(NODE, ele).unwrap();
        let s = Mesh::structured(1).unwrap();
        assert_eq!(m.vertices(), s.vertices());
        assert_eq!(m.triangles(), s.triangles());
        let mut a: Vec<_> = m.facets().iter().map(|f| f.vertices).collect();
        let mut b: Vec<_> = s.facets().iter().map(|f| f.vertices).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn triangle_format_zero_based_and_reorientation() {
        let node = "4 2 0 0\n0 0 0\n1 1 0\n2 1 1\n3 0 1\n";
        // second triangle is clockwise
        let ele = "2 3 0\n0 0 1 2\n1 0 3 2\n";
        let m = Mesh::from_triangle(node, ele).unwrap();
        assert_eq!(m.triangles()[1], [0, 2, 3]);
        assert!(m.area(1) > 0.0);
    }

    #[test]
    fn triangle_format_errors() {
        let err = Mesh::from_triangle(NODE, "1 3 0\n1 1 2 99\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = Mesh::from_triangle("four 2 0 0\n", "1 3 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let node = "3 2 0 0\n1 0 0\n2 1 0\n3 2 0\n";
        let err = Mesh::from_triangle(node, "1 3 0\n# c\n1 1 2 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn hanging_vertex_rejected() {
        // big triangle next to two small ones sharing a split edge
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [1.0, 1.0]];
        let triangles = vec![[0, 1, 2], [1, 4, 3], [3, 4, 2]];
        assert!(Mesh::new(vertices, triangles).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let m = Mesh::structured(3).unwrap();
        let back = Mesh::from_json(&m.to_json()).unwrap();
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.num_facets(), m.num_facets());
    }
}
