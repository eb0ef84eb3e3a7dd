//! Triangulated template meshes, their topology, and barycentric points.
//!
//! Shapes are represented throughout the crate as flat coordinate vectors in
//! vertex-major order: `x = [v0.x, v0.y, v0.z, v1.x, ...]`, of length
//! `3 * num_vertices`. Per-vertex linear operators are expanded with
//! [`crate::sparse::SparseMatrix::expand_per_vertex`] to act on such vectors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DVector, Point3, Vector3};

use crate::error::{Error, Result};

/// Relative tolerance under which a facet counts as zero-area: a facet is
/// degenerate when its area is below this fraction of its squared longest
/// edge (a well-shaped triangle has area ~0.43 of that).
const DEGENERATE_AREA_REL: f64 = 1e-12;

/// Absolute tolerance for the barycentric coordinate sum.
const BARY_SUM_TOL: f64 = 1e-9;

/// A triangulated surface: the deformable template in its reference shape.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    facets: Vec<[usize; 3]>,
    name: String,
}

impl TriMesh {
    /// Validates and builds a mesh. Facets must reference three distinct
    /// in-range vertices and must not be degenerate in the reference shape.
    pub fn new(
        vertices: Vec<Point3<f64>>,
        facets: Vec<[usize; 3]>,
        name: impl Into<String>,
    ) -> Result<Self> {
        if vertices.is_empty() || facets.is_empty() {
            return Err(Error::InvalidMesh(
                "mesh must have at least one vertex and one facet".into(),
            ));
        }
        for p in &vertices {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
            }
        }
        for (fi, f) in facets.iter().enumerate() {
            for &v in f {
                if v >= vertices.len() {
                    return Err(Error::InvalidMesh(format!(
                        "facet {fi} references vertex {v}, but mesh has {} vertices",
                        vertices.len()
                    )));
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!(
                    "facet {fi} references a vertex twice"
                )));
            }
        }
        let mesh = TriMesh {
            vertices,
            facets,
            name: name.into(),
        };
        for fi in 0..mesh.num_facets() {
            if mesh.is_facet_degenerate(fi) {
                return Err(Error::DegenerateFacet { facet: fi });
            }
        }
        Ok(mesh)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn facets(&self) -> &[[usize; 3]] {
        &self.facets
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Area of facet `f` in the reference shape.
    pub fn facet_area(&self, f: usize) -> f64 {
        let [i, j, k] = self.facets[f];
        let a = self.vertices[i];
        let b = self.vertices[j];
        let c = self.vertices[k];
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    fn is_facet_degenerate(&self, f: usize) -> bool {
        let [i, j, k] = self.facets[f];
        let a = self.vertices[i];
        let b = self.vertices[j];
        let c = self.vertices[k];
        let longest_sq = (b - a)
            .norm_squared()
            .max((c - b).norm_squared())
            .max((a - c).norm_squared());
        self.facet_area(f) <= DEGENERATE_AREA_REL * longest_sq
    }

    /// Reference vertex positions as a vertex-major coordinate vector.
    pub fn reference_coords(&self) -> DVector<f64> {
        coords_from_points(&self.vertices)
    }

    /// Length of the diagonal of the reference axis-aligned bounding box.
    pub fn bbox_diagonal(&self) -> f64 {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for p in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (hi - lo).norm()
    }

    /// Reads a mesh from a Wavefront OBJ file restricted to triangle
    /// geometry: only `v x y z` and `f i j k` records (1-based, plain
    /// indices) plus comments and blank lines are accepted.
    pub fn load_obj(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "mesh".to_string());
        let reader = BufReader::new(File::open(path)?);
        Self::parse_obj(reader, name)
    }

    /// Parses OBJ text from any reader; `name` labels the resulting mesh.
    pub fn parse_obj<R: BufRead>(reader: R, name: impl Into<String>) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut facets = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let record = fields.next().unwrap();
            let rest: Vec<&str> = fields.collect();
            match record {
                "v" => {
                    if rest.len() != 3 {
                        return Err(obj_err(line_no, "vertex record must have three coordinates"));
                    }
                    let mut c = [0.0f64; 3];
                    for (k, s) in rest.iter().enumerate() {
                        c[k] = s
                            .parse()
                            .map_err(|_| obj_err(line_no, format!("bad coordinate '{s}'")))?;
                    }
                    vertices.push(Point3::new(c[0], c[1], c[2]));
                }
                "f" => {
                    if rest.len() != 3 {
                        return Err(obj_err(line_no, "only triangular facets are supported"));
                    }
                    let mut f = [0usize; 3];
                    for (k, s) in rest.iter().enumerate() {
                        let i: usize = s.parse().map_err(|_| {
                            obj_err(line_no, format!("bad facet index '{s}' (plain 1-based indices only)"))
                        })?;
                        if i == 0 {
                            return Err(obj_err(line_no, "facet indices are 1-based"));
                        }
                        f[k] = i - 1;
                    }
                    facets.push(f);
                }
                other => {
                    return Err(obj_err(
                        line_no,
                        format!("unsupported OBJ record '{other}'"),
                    ));
                }
            }
        }
        TriMesh::new(vertices, facets, name)
    }

    /// Writes the mesh with vertex positions taken from `coords` (pass
    /// [`TriMesh::reference_coords`] to write the reference shape).
    pub fn write_obj(&self, path: impl AsRef<Path>, coords: &DVector<f64>) -> Result<()> {
        assert_eq!(coords.len(), 3 * self.num_vertices(), "coordinate vector size");
        let mut w = BufWriter::new(File::create(path)?);
        for i in 0..self.num_vertices() {
            let v = vertex3(coords, i);
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for f in &self.facets {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        Ok(())
    }
}

fn obj_err(line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        line,
        detail: detail.into(),
    }
}

/// An undirected mesh edge with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
}

impl Edge {
    fn new(i: usize, j: usize) -> Self {
        Edge {
            a: i.min(j),
            b: i.max(j),
        }
    }
}

/// Two facets sharing an interior edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FacetPair {
    /// The lower facet index of the pair.
    pub f0: usize,
    /// The higher facet index of the pair.
    pub f1: usize,
    /// Index of the shared edge in [`Topology::edges`].
    pub edge: usize,
}

/// Edge and adjacency structure derived from a [`TriMesh`].
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    /// All edges in lexicographic order of their (low, high) vertex pair.
    pub edges: Vec<Edge>,
    /// Facets adjacent to each edge (one or two), parallel to `edges`.
    pub edge_facets: Vec<Vec<usize>>,
    /// Indices into `edges` of the edges shared by exactly two facets.
    pub interior_edges: Vec<usize>,
    /// Facet pairs sharing an edge, sorted by `(f0, f1)`.
    pub facet_pairs: Vec<FacetPair>,
    /// Reference edge lengths, parallel to `edges`.
    pub ref_edge_lengths: Vec<f64>,
}

impl Topology {
    /// Mean edge length of the reference shape.
    pub fn mean_ref_edge_length(&self) -> f64 {
        self.ref_edge_lengths.iter().sum::<f64>() / self.ref_edge_lengths.len() as f64
    }

    /// Mean edge length of the shape given by `coords`.
    pub fn mean_edge_length(&self, coords: &DVector<f64>) -> f64 {
        let total: f64 = self
            .edges
            .iter()
            .map(|e| (vertex3(coords, e.a) - vertex3(coords, e.b)).norm())
            .sum();
        total / self.edges.len() as f64
    }
}

/// Extracts edges, interior edges and facet pairs from a mesh, verifying it
/// is an orientable manifold with boundary (every edge borders one or two
/// facets, with opposite winding on shared edges).
pub fn build_topology(mesh: &TriMesh) -> Result<Topology> {
    for fi in 0..mesh.num_facets() {
        if mesh.is_facet_degenerate(fi) {
            return Err(Error::DegenerateFacet { facet: fi });
        }
    }

    // Map each undirected edge to the facets that use it, tracking the
    // direction each facet traverses it to verify consistent orientation.
    let mut map: BTreeMap<Edge, Vec<(usize, bool)>> = BTreeMap::new();
    for (fi, f) in mesh.facets().iter().enumerate() {
        for k in 0..3 {
            let (i, j) = (f[k], f[(k + 1) % 3]);
            let edge = Edge::new(i, j);
            map.entry(edge).or_default().push((fi, i < j));
        }
    }

    let mut edges = Vec::with_capacity(map.len());
    let mut edge_facets = Vec::with_capacity(map.len());
    let mut interior_edges = Vec::new();
    let mut facet_pairs = Vec::new();
    let mut ref_edge_lengths = Vec::with_capacity(map.len());
    for (idx, (edge, users)) in map.into_iter().enumerate() {
        if users.len() > 2 {
            return Err(Error::NonManifold {
                a: edge.a,
                b: edge.b,
                count: users.len(),
            });
        }
        if users.len() == 2 {
            if users[0].1 == users[1].1 {
                return Err(Error::InvalidMesh(format!(
                    "facets {} and {} traverse edge {}-{} in the same direction (inconsistent winding)",
                    users[0].0, users[1].0, edge.a, edge.b
                )));
            }
            interior_edges.push(idx);
            let (f0, f1) = (users[0].0.min(users[1].0), users[0].0.max(users[1].0));
            facet_pairs.push(FacetPair { f0, f1, edge: idx });
        }
        ref_edge_lengths
            .push((mesh.vertices()[edge.a] - mesh.vertices()[edge.b]).norm());
        edge_facets.push(users.into_iter().map(|(f, _)| f).collect());
        edges.push(edge);
    }
    facet_pairs.sort_by_key(|p| (p.f0, p.f1));

    Ok(Topology {
        edges,
        edge_facets,
        interior_edges,
        facet_pairs,
        ref_edge_lengths,
    })
}

/// A surface point expressed in barycentric coordinates of one facet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaryPoint {
    pub facet: usize,
    pub b: [f64; 3],
}

impl BaryPoint {
    /// Validates that the coordinates are finite and sum to 1.
    pub fn new(facet: usize, b: [f64; 3]) -> Result<Self> {
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBarycentric {
                b,
                detail: "non-finite coordinate".into(),
            });
        }
        let sum: f64 = b.iter().sum();
        if (sum - 1.0).abs() > BARY_SUM_TOL {
            return Err(Error::InvalidBarycentric {
                b,
                detail: format!("coordinates sum to {sum}, expected 1"),
            });
        }
        Ok(BaryPoint { facet, b })
    }
}

/// Evaluates the 3D position of a barycentric surface point on the shape
/// given by `coords`.
pub fn bary_to_world(
    mesh: &TriMesh,
    point: &BaryPoint,
    coords: &DVector<f64>,
) -> Result<Vector3<f64>> {
    if point.facet >= mesh.num_facets() {
        return Err(Error::FacetOutOfRange {
            facet: point.facet,
            count: mesh.num_facets(),
        });
    }
    let f = mesh.facets()[point.facet];
    let mut p = Vector3::zeros();
    for k in 0..3 {
        p += point.b[k] * vertex3(coords, f[k]);
    }
    Ok(p)
}

/// Extracts vertex `i` from a vertex-major coordinate vector.
pub fn vertex3(coords: &DVector<f64>, i: usize) -> Vector3<f64> {
    Vector3::new(coords[3 * i], coords[3 * i + 1], coords[3 * i + 2])
}

/// Overwrites vertex `i` of a vertex-major coordinate vector.
pub fn set_vertex3(coords: &mut DVector<f64>, i: usize, v: Vector3<f64>) {
    coords[3 * i] = v.x;
    coords[3 * i + 1] = v.y;
    coords[3 * i + 2] = v.z;
}

/// Packs points into a vertex-major coordinate vector.
pub fn coords_from_points(points: &[Point3<f64>]) -> DVector<f64> {
    let mut x = DVector::zeros(3 * points.len());
    for (i, p) in points.iter().enumerate() {
        set_vertex3(&mut x, i, p.coords);
    }
    x
}

/// Unpacks a vertex-major coordinate vector into points.
pub fn points_from_coords(coords: &DVector<f64>) -> Vec<Point3<f64>> {
    assert_eq!(coords.len() % 3, 0);
    (0..coords.len() / 3)
        .map(|i| Point3::from(vertex3(coords, i)))
        .collect()
}
