//! Deformation regularizer built from local affine relationships.
//!
//! Every pair of adjacent facets (planar template) or face-sharing
//! tetrahedra (non-planar template) yields one row of weights that vanishes
//! on the reference shape and on every affine transform of it. Stacking the
//! rows gives a per-vertex operator `A'` whose residual `|A' x|` measures
//! non-affine deformation only: it is exactly invariant to rigid motions and
//! scalings, and in particular does not oppose the depth scaling that a
//! single-view reconstruction cannot observe.
//!
//! For non-planar templates the facet-pair construction degenerates, so each
//! facet is thickened with two virtual vertices offset along its normal,
//! tetrahedra are formed, weight rows are computed over real and virtual
//! vertices jointly, and the virtual columns are eliminated by least squares,
//! leaving an operator over the real vertices alone.

use nalgebra::{DMatrix, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::mesh::{build_topology, Topology, TriMesh};
use crate::sparse::SparseMatrix;

/// A configuration is degenerate when the second-smallest singular value of
/// its homogeneous point matrix falls below this fraction of the largest:
/// the weight row is then not unique.
const DEGENERATE_SV_REL: f64 = 1e-8;

/// A template counts as planar when no vertex deviates from the best-fit
/// plane by more than this fraction of the bounding-box diagonal.
pub const PLANARITY_REL_TOL: f64 = 1e-6;

/// Relative eigenvalue cutoff under which the virtual-vertex Gram matrix is
/// treated as rank deficient and inverted by pseudo-inverse.
const GRAM_EIG_REL_TOL: f64 = 1e-10;

/// Default normal offset scale for virtual vertices; at 1.0 the offset
/// length is the square root of twice the facet area, roughly the mean edge
/// length of a well-shaped triangle.
pub const DEFAULT_SIGMA: f64 = 1.0;

/// How the regularizer was constructed.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizerMode {
    /// Facet-pair weights, valid for planar reference shapes.
    Planar,
    /// Tetrahedron-pair weights over virtual vertices with offset scale
    /// `sigma`, then eliminated back to the real vertices.
    NonPlanar { sigma: f64 },
}

/// The assembled regularization operator.
#[derive(Debug, Clone)]
pub struct Regularizer {
    a_prime: SparseMatrix,
    a_full: SparseMatrix,
    mode: RegularizerMode,
}

impl Regularizer {
    /// Per-vertex operator: one scalar weight per (row, vertex).
    pub fn a_prime(&self) -> &SparseMatrix {
        &self.a_prime
    }

    /// The same operator expanded to act on vertex-major coordinate vectors
    /// (each row applied to x, y and z independently).
    pub fn a_full(&self) -> &SparseMatrix {
        &self.a_full
    }

    pub fn mode(&self) -> RegularizerMode {
        self.mode
    }

    pub fn nrows(&self) -> usize {
        self.a_prime.nrows()
    }

    pub fn num_vertices(&self) -> usize {
        self.a_prime.ncols()
    }
}

/// Maximum deviation of the vertices from their best-fit plane.
pub fn planarity_deviation(mesh: &TriMesh) -> f64 {
    let n = mesh.num_vertices() as f64;
    let centroid = mesh
        .vertices()
        .iter()
        .fold(Vector3::zeros(), |s, p| s + p.coords)
        / n;
    let mut cov = nalgebra::Matrix3::zeros();
    for p in mesh.vertices() {
        let d = p.coords - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut min_idx = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    let normal = eig.eigenvectors.column(min_idx);
    mesh.vertices()
        .iter()
        .map(|p| (p.coords - centroid).dot(&normal).abs())
        .fold(0.0, f64::max)
}

/// Weights over a point set whose homogeneous combinations vanish: unit-norm
/// `w` with both the weighted point sum and the plain weight sum zero, i.e.
/// the null vector of the 4 x k matrix of homogeneous points `[x, y, z, 1]`.
///
/// The points are centered and scaled first (the constraint set is unchanged
/// but the conditioning improves), the matrix is padded with zero rows to
/// square so the SVD exposes the full right basis, and the right singular
/// vector of the smallest singular value is taken. The sign is fixed by
/// making the first nonzero weight positive so rows are reproducible.
fn affine_null_weights(points: &[Vector3<f64>]) -> Result<Vec<f64>> {
    let k = points.len();
    let centroid = points.iter().fold(Vector3::zeros(), |s, p| s + p) / k as f64;
    let spread = points
        .iter()
        .map(|p| (p - centroid).norm())
        .fold(0.0, f64::max);
    let scale = if spread > 0.0 { spread } else { 1.0 };

    let mut b = DMatrix::zeros(k, k);
    for (j, p) in points.iter().enumerate() {
        let q = (p - centroid) / scale;
        b[(0, j)] = q.x;
        b[(1, j)] = q.y;
        b[(2, j)] = q.z;
        b[(3, j)] = 1.0;
    }
    let svd = crate::linalg::svd(b)?;
    let sigma = &svd.singular_values; // descending
    let s_max = sigma[0];
    if !(s_max > 0.0) || sigma[k - 2] < DEGENERATE_SV_REL * s_max {
        return Err(Error::DegenerateConfiguration(
            "weight row is not unique (points nearly collinear or coincident)".into(),
        ));
    }

    let v_t = svd.v_t.as_ref().expect("V^T was requested");
    let mut w: Vec<f64> = v_t.row(k - 1).iter().copied().collect();
    let w_max = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(first) = w.iter().find(|v| v.abs() > 1e-12 * w_max) {
        if *first < 0.0 {
            for v in &mut w {
                *v = -*v;
            }
        }
    }
    Ok(w)
}

/// Weight row for two facets sharing an edge; `points` ordered as
/// `[apex of first facet, shared edge low, shared edge high, apex of second
/// facet]`.
pub fn facet_pair_weights(points: &[Vector3<f64>; 4]) -> Result<[f64; 4]> {
    let w = affine_null_weights(points)?;
    Ok([w[0], w[1], w[2], w[3]])
}

/// Weight row for two tetrahedra sharing a triangular face; `points` ordered
/// as the three shared-face vertices followed by the two apexes.
pub fn tet_pair_weights(points: &[Vector3<f64>; 5]) -> Result<[f64; 5]> {
    let w = affine_null_weights(points)?;
    Ok([w[0], w[1], w[2], w[3], w[4]])
}

/// Builds the facet-pair regularizer of a planar template. One row per pair
/// of adjacent facets, in [`Topology::facet_pairs`] order.
pub fn build_planar(mesh: &TriMesh, topo: &Topology) -> Result<Regularizer> {
    let deviation = planarity_deviation(mesh);
    let tolerance = PLANARITY_REL_TOL * mesh.bbox_diagonal();
    if deviation > tolerance {
        return Err(Error::NotPlanar {
            deviation,
            tolerance,
        });
    }

    let verts = mesh.vertices();
    let mut triplets = Vec::with_capacity(4 * topo.facet_pairs.len());
    for (r, pair) in topo.facet_pairs.iter().enumerate() {
        let edge = topo.edges[pair.edge];
        let opp0 = opposite_vertex(mesh.facets()[pair.f0], edge.a, edge.b);
        let opp1 = opposite_vertex(mesh.facets()[pair.f1], edge.a, edge.b);
        let ids = [opp0, edge.a, edge.b, opp1];
        let pts = ids.map(|i| verts[i].coords);
        let w = facet_pair_weights(&pts).map_err(|e| match e {
            Error::DegenerateConfiguration(msg) => Error::DegenerateConfiguration(format!(
                "facet pair {} (facets {} and {}): {msg}",
                r, pair.f0, pair.f1
            )),
            other => other,
        })?;
        for (k, &vi) in ids.iter().enumerate() {
            triplets.push((r, vi, w[k]));
        }
    }
    let a_prime =
        SparseMatrix::from_triplets(topo.facet_pairs.len(), mesh.num_vertices(), &triplets);
    let a_full = a_prime.expand_per_vertex();
    Ok(Regularizer {
        a_prime,
        a_full,
        mode: RegularizerMode::Planar,
    })
}

fn opposite_vertex(facet: [usize; 3], a: usize, b: usize) -> usize {
    *facet
        .iter()
        .find(|&&v| v != a && v != b)
        .expect("facet must have a vertex off the edge")
}

/// The template thickened with two virtual vertices per facet.
#[derive(Debug, Clone)]
pub struct VirtualAugmentation {
    pub sigma: f64,
    /// Number of real vertices; virtual indices start here.
    pub n_real: usize,
    /// Positions of all vertices: real ones first, then per facet its top
    /// (along the normal) and bottom virtual vertex.
    pub points: Vec<Vector3<f64>>,
    /// All tetrahedra (two per facet, two per interior edge), each with
    /// positive signed volume in the reference shape.
    pub tetrahedra: Vec<[usize; 4]>,
}

impl VirtualAugmentation {
    /// Index of the virtual vertex above facet `f`.
    pub fn top(&self, f: usize) -> usize {
        self.n_real + 2 * f
    }

    /// Index of the virtual vertex below facet `f`.
    pub fn bottom(&self, f: usize) -> usize {
        self.n_real + 2 * f + 1
    }
}

/// Creates the virtual vertices of a non-planar template: for each facet,
/// the centroid offset by `sigma * n / sqrt(|n|)` along +/- the facet normal
/// `n` (cross product of the edge vectors), so the offset length is
/// `sigma * sqrt(2 * area)`, about one mean edge length at `sigma = 1`.
pub fn add_virtual_vertices(
    mesh: &TriMesh,
    topo: &Topology,
    sigma: f64,
) -> Result<VirtualAugmentation> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::ParamOutOfRange {
            name: "sigma",
            value: sigma,
            detail: "virtual-vertex offset scale must be positive and finite".into(),
        });
    }
    let n_real = mesh.num_vertices();
    let verts = mesh.vertices();
    let mut points: Vec<Vector3<f64>> = verts.iter().map(|p| p.coords).collect();
    for (f, &[i, j, k]) in mesh.facets().iter().enumerate() {
        let n = (verts[j] - verts[i]).cross(&(verts[k] - verts[i]));
        let len = n.norm();
        if len <= 0.0 {
            return Err(Error::DegenerateFacet { facet: f });
        }
        let centroid = (verts[i].coords + verts[j].coords + verts[k].coords) / 3.0;
        let offset = sigma * n / len.sqrt();
        points.push(centroid + offset);
        points.push(centroid - offset);
    }

    let mut tetrahedra = Vec::with_capacity(2 * mesh.num_facets() + 2 * topo.facet_pairs.len());
    let top = |f: usize| n_real + 2 * f;
    let bottom = |f: usize| n_real + 2 * f + 1;
    for (f, &[i, j, k]) in mesh.facets().iter().enumerate() {
        // Base wound so the apex side makes the signed volume positive.
        tetrahedra.push([i, j, k, top(f)]);
        tetrahedra.push([i, k, j, bottom(f)]);
    }
    for pair in &topo.facet_pairs {
        let edge = topo.edges[pair.edge];
        for (va, vb) in [
            (top(pair.f0), top(pair.f1)),
            (bottom(pair.f0), bottom(pair.f1)),
        ] {
            let mut tet = [edge.a, edge.b, va, vb];
            if signed_volume(&points, tet) < 0.0 {
                tet.swap(0, 1);
            }
            tetrahedra.push(tet);
        }
    }
    for &tet in &tetrahedra {
        if signed_volume(&points, tet) <= 0.0 {
            return Err(Error::DegenerateConfiguration(format!(
                "tetrahedron {tet:?} has non-positive volume in the reference shape"
            )));
        }
    }

    Ok(VirtualAugmentation {
        sigma,
        n_real,
        points,
        tetrahedra,
    })
}

fn signed_volume(points: &[Vector3<f64>], tet: [usize; 4]) -> f64 {
    let [a, b, c, d] = tet.map(|i| points[i]);
    (b - a).cross(&(c - a)).dot(&(d - a)) / 6.0
}

/// Two tetrahedra sharing a triangular face: the five distinct vertices
/// spanned, ordered as the shared face followed by the two apexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TetPair {
    pub shared_face: [usize; 3],
    pub vertices: [usize; 5],
}

/// Enumerates all face-sharing tetrahedron pairs of the thickened template,
/// in deterministic order:
///
/// * per facet, the top and bottom tetrahedra sharing the facet itself;
/// * per facet pair, on each side (top then bottom), the facet tetrahedron
///   of each owner against the edge tetrahedron spanning both sides.
pub fn enumerate_tet_pairs(mesh: &TriMesh, topo: &Topology) -> Vec<TetPair> {
    let n_real = mesh.num_vertices();
    let side_of = |f: usize, side: usize| n_real + 2 * f + side;
    let mut pairs = Vec::with_capacity(mesh.num_facets() + 4 * topo.facet_pairs.len());
    for (f, &[i, j, k]) in mesh.facets().iter().enumerate() {
        pairs.push(TetPair {
            shared_face: [i, j, k],
            vertices: [i, j, k, side_of(f, 0), side_of(f, 1)],
        });
    }
    for pair in &topo.facet_pairs {
        let edge = topo.edges[pair.edge];
        let opp0 = opposite_vertex(mesh.facets()[pair.f0], edge.a, edge.b);
        let opp1 = opposite_vertex(mesh.facets()[pair.f1], edge.a, edge.b);
        for side in 0..2 {
            let s0 = side_of(pair.f0, side);
            let s1 = side_of(pair.f1, side);
            // The edge tetrahedron (edge + both side vertices) shares face
            // (edge, s0) with the first owner's facet tetrahedron and face
            // (edge, s1) with the second owner's.
            pairs.push(TetPair {
                shared_face: [edge.a, edge.b, s0],
                vertices: [edge.a, edge.b, s0, opp0, s1],
            });
            pairs.push(TetPair {
                shared_face: [edge.a, edge.b, s1],
                vertices: [edge.a, edge.b, s1, opp1, s0],
            });
        }
    }
    pairs
}

/// Builds the regularizer of a non-planar template: tetrahedron-pair weight
/// rows over real and virtual vertices, with the virtual columns eliminated
/// by their least-squares value so the operator acts on real vertices only.
pub fn build_nonplanar(mesh: &TriMesh, topo: &Topology, sigma: f64) -> Result<Regularizer> {
    let aug = add_virtual_vertices(mesh, topo, sigma)?;
    let pairs = enumerate_tet_pairs(mesh, topo);
    let n_real = mesh.num_vertices();
    let n_virt = 2 * mesh.num_facets();

    let mut real_triplets = Vec::new();
    let mut virt_triplets = Vec::new();
    for (r, pair) in pairs.iter().enumerate() {
        let pts = pair.vertices.map(|i| aug.points[i]);
        let w = tet_pair_weights(&pts).map_err(|e| match e {
            Error::DegenerateConfiguration(msg) => Error::DegenerateConfiguration(format!(
                "tetrahedron pair {r} (shared face {:?}): {msg}",
                pair.shared_face
            )),
            other => other,
        })?;
        for (k, &vi) in pair.vertices.iter().enumerate() {
            if vi < n_real {
                real_triplets.push((r, vi, w[k]));
            } else {
                virt_triplets.push((r, vi - n_real, w[k]));
            }
        }
    }
    let a_hat = SparseMatrix::from_triplets(pairs.len(), n_real, &real_triplets);
    let a_tilde = SparseMatrix::from_triplets(pairs.len(), n_virt, &virt_triplets);

    // Gram matrix of the virtual columns and their coupling to the real
    // columns, accumulated row-wise (each row touches at most two virtual
    // vertices).
    let mut gram = DMatrix::zeros(n_virt, n_virt);
    let mut coupling = DMatrix::zeros(n_virt, n_real);
    for r in 0..a_tilde.nrows() {
        let ventries: Vec<(usize, f64)> = a_tilde.row_entries(r).collect();
        for &(c1, v1) in &ventries {
            for &(c2, v2) in &ventries {
                gram[(c1, c2)] += v1 * v2;
            }
            for (c2, v2) in a_hat.row_entries(r) {
                coupling[(c1, c2)] += v1 * v2;
            }
        }
    }

    // Least-squares value of the virtual coordinates given the real ones.
    let solved = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&coupling),
        None => {
            log::warn!(
                "virtual-vertex Gram matrix is not positive definite; \
                 falling back to a pseudo-inverse"
            );
            pseudo_solve(gram, &coupling)?
        }
    };

    let a_prime_dense = a_hat.to_dense() - a_tilde.mul_dense(&solved);
    let a_prime = SparseMatrix::from_dense(&a_prime_dense, 0.0);
    let a_full = a_prime.expand_per_vertex();
    Ok(Regularizer {
        a_prime,
        a_full,
        mode: RegularizerMode::NonPlanar { sigma },
    })
}

/// Solves `gram * x = rhs` through an eigendecomposition pseudo-inverse,
/// zeroing directions below a relative eigenvalue cutoff.
fn pseudo_solve(gram: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = crate::linalg::symmetric_eigen(gram)?;
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
    if !(max > 0.0) {
        return Err(Error::VirtualGramSingular);
    }
    let cutoff = GRAM_EIG_REL_TOL * max;
    let vt_rhs = eig.eigenvectors.transpose() * rhs;
    let mut scaled = vt_rhs;
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        let lambda = eig.eigenvalues[i];
        let inv = if lambda > cutoff { 1.0 / lambda } else { 0.0 };
        row *= inv;
    }
    Ok(&eig.eigenvectors * scaled)
}

/// Builds a planar regularizer when the template is planar within tolerance,
/// a non-planar one otherwise.
pub fn build_auto(mesh: &TriMesh, topo: &Topology, sigma: f64) -> Result<Regularizer> {
    let deviation = planarity_deviation(mesh);
    if deviation <= PLANARITY_REL_TOL * mesh.bbox_diagonal() {
        build_planar(mesh, topo)
    } else {
        build_nonplanar(mesh, topo, sigma)
    }
}

/// Convenience: topology plus auto-mode regularizer in one call.
pub fn build_for_mesh(mesh: &TriMesh, sigma: f64) -> Result<(Topology, Regularizer)> {
    let topo = build_topology(mesh)?;
    let reg = build_auto(mesh, &topo, sigma)?;
    Ok((topo, reg))
}

/// Singular values of the per-vertex operator, descending, divided by the
/// largest one. The head of the curve describes the stiffness profile of
/// the operator; trailing zeros count its kernel dimension.
pub fn normalized_spectrum(reg: &Regularizer) -> Result<Vec<f64>> {
    let sv = crate::linalg::singular_values(reg.a_prime().to_dense())?;
    let max = sv[0];
    if max <= 0.0 {
        return Ok(vec![0.0; sv.len()]);
    }
    Ok(sv.iter().map(|s| s / max).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::coords_from_points;
    use approx::assert_relative_eq;
    use nalgebra::{DVector, Point3, Rotation3};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn two_tris() -> TriMesh {
        TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [1, 3, 2]],
            "square",
        )
        .unwrap()
    }

    fn grid(rows: usize, cols: usize) -> TriMesh {
        let mut vertices = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                vertices.push(Point3::new(c as f64, r as f64, 0.0));
            }
        }
        let at = |r: usize, c: usize| r * cols + c;
        let mut facets = Vec::new();
        for r in 0..rows - 1 {
            for c in 0..cols - 1 {
                facets.push([at(r, c), at(r, c + 1), at(r + 1, c)]);
                facets.push([at(r, c + 1), at(r + 1, c + 1), at(r + 1, c)]);
            }
        }
        TriMesh::new(vertices, facets, "grid").unwrap()
    }

    /// A non-planar tent: two facets folded along the shared edge.
    fn tent() -> TriMesh {
        TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.5),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(1.0, 1.0, 0.7),
            ],
            vec![[0, 1, 2], [1, 3, 2]],
            "tent",
        )
        .unwrap()
    }

    /// A 3x3 grid with varied heights: clearly non-planar with enough
    /// vertices that non-affine deformations have a nonzero residual.
    fn bumpy() -> TriMesh {
        let z = [0.3, -0.1, 0.2, 0.0, 0.4, -0.2, 0.1, 0.25, -0.3];
        let mut vertices = Vec::new();
        for r in 0..3 {
            for c in 0..3 {
                vertices.push(Point3::new(c as f64, r as f64, z[r * 3 + c]));
            }
        }
        let at = |r: usize, c: usize| r * 3 + c;
        let mut facets = Vec::new();
        for r in 0..2 {
            for c in 0..2 {
                facets.push([at(r, c), at(r, c + 1), at(r + 1, c)]);
                facets.push([at(r, c + 1), at(r + 1, c + 1), at(r + 1, c)]);
            }
        }
        TriMesh::new(vertices, facets, "bumpy").unwrap()
    }

    #[test]
    fn unit_square_pair_weights() {
        let pts = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
        ];
        let w = facet_pair_weights(&pts).unwrap();
        let expect = [0.5, -0.5, -0.5, 0.5];
        for (a, b) in w.iter().zip(expect) {
            assert_relative_eq!(a, &b, epsilon = 1e-12);
        }
    }

    #[test]
    fn weights_match_oracle_on_random_planar_pairs() {
        let mut rng = StdRng::seed_from_u64(7);
        for trial in 0..50 {
            // Random non-collinear points in a random plane. Half the trials
            // sit far from the origin, where the centering step matters and
            // the oracle (which does not center) loses a little accuracy.
            let (offset, tol) = if trial % 2 == 0 {
                (Vector3::zeros(), 1e-12)
            } else {
                (
                    Vector3::new(
                        rng.random_range(-500.0..500.0),
                        rng.random_range(-500.0..500.0),
                        rng.random_range(200.0..900.0),
                    ),
                    1e-9,
                )
            };
            let e1 = Vector3::new(1.0, rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let e2 = Vector3::new(rng.random_range(-0.5..0.5), 1.0, rng.random_range(-0.5..0.5));
            let sample = |rng: &mut StdRng| -> Vector3<f64> {
                offset
                    + e1 * rng.random_range(-1.0..1.0f64)
                    + e2 * rng.random_range(-1.0..1.0f64)
            };
            let pts = [
                sample(&mut rng),
                sample(&mut rng),
                sample(&mut rng),
                sample(&mut rng),
            ];
            let ours = match facet_pair_weights(&pts) {
                Ok(w) => w,
                Err(_) => continue, // skip the rare degenerate draw
            };
            let raw: Vec<[f64; 3]> = pts.iter().map(|p| [p.x, p.y, p.z]).collect();
            let reference = lapmesh_oracles::nullspace_weights(&raw).unwrap();
            for (a, b) in ours.iter().zip(&reference) {
                assert_relative_eq!(a, b, epsilon = tol);
            }
        }
    }

    #[test]
    fn weights_match_oracle_on_random_tet_pairs() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..50 {
            let pts: [Vector3<f64>; 5] = std::array::from_fn(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            });
            let ours = tet_pair_weights(&pts).unwrap();
            let raw: Vec<[f64; 3]> = pts.iter().map(|p| [p.x, p.y, p.z]).collect();
            let reference = lapmesh_oracles::nullspace_weights(&raw).unwrap();
            for (a, b) in ours.iter().zip(&reference) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
            // The defining identities hold directly.
            let mut sums = [0.0f64; 4];
            for (wi, p) in ours.iter().zip(&pts) {
                sums[0] += wi * p.x;
                sums[1] += wi * p.y;
                sums[2] += wi * p.z;
                sums[3] += wi;
            }
            for s in sums {
                assert!(s.abs() < 1e-12, "{sums:?}");
            }
            let norm: f64 = ours.iter().map(|v| v * v).sum();
            assert_relative_eq!(norm, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn collinear_points_rejected() {
        let pts = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(3.0, 0.0, 0.0),
        ];
        assert!(matches!(
            facet_pair_weights(&pts),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn planar_regularizer_annihilates_affine_transforms() {
        let mesh = grid(5, 6);
        let topo = build_topology(&mesh).unwrap();
        let reg = build_planar(&mesh, &topo).unwrap();
        assert_eq!(reg.nrows(), topo.facet_pairs.len());

        let x = mesh.reference_coords();
        assert!(reg.a_full().matvec(&x).norm() < 1e-10 * x.norm().max(1.0));

        // Arbitrary affine map of the reference is still annihilated.
        let lin = nalgebra::Matrix3::new(1.2, 0.3, -0.1, 0.0, 0.8, 0.5, 0.2, -0.4, 1.1);
        let t = Vector3::new(5.0, -3.0, 40.0);
        let pts: Vec<Point3<f64>> = mesh
            .vertices()
            .iter()
            .map(|p| Point3::from(lin * p.coords + t))
            .collect();
        let xa = coords_from_points(&pts);
        assert!(reg.a_full().matvec(&xa).norm() < 1e-9 * xa.norm());
    }

    #[test]
    fn planar_residual_invariant_to_rigid_motion() {
        let mesh = grid(4, 4);
        let topo = build_topology(&mesh).unwrap();
        let reg = build_planar(&mesh, &topo).unwrap();

        // A non-affine deformation with a nonzero residual.
        let mut pts: Vec<Point3<f64>> = mesh.vertices().to_vec();
        for p in &mut pts {
            p.z += 0.2 * (p.x * 1.3).sin() + 0.1 * p.y * p.y;
        }
        let x = coords_from_points(&pts);
        let base = reg.a_full().matvec(&x).norm();
        assert!(base > 1e-3);

        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), 0.7)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), -0.3);
        let t = Vector3::new(12.0, -7.0, 3.0);
        let moved: Vec<Point3<f64>> = pts.iter().map(|p| Point3::from(rot * p.coords + t)).collect();
        let xm = coords_from_points(&moved);
        assert_relative_eq!(reg.a_full().matvec(&xm).norm(), base, max_relative = 1e-9);

        // Scaling scales the residual linearly.
        let xs = 2.5 * &x;
        assert_relative_eq!(reg.a_full().matvec(&xs).norm(), 2.5 * base, max_relative = 1e-9);
    }

    #[test]
    fn planar_rejects_non_planar_template() {
        let mesh = tent();
        let topo = build_topology(&mesh).unwrap();
        assert!(matches!(
            build_planar(&mesh, &topo),
            Err(Error::NotPlanar { .. })
        ));
    }

    #[test]
    fn virtual_vertices_sit_on_normals() {
        let mesh = TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
            "tri",
        )
        .unwrap();
        let topo = build_topology(&mesh).unwrap();
        let aug = add_virtual_vertices(&mesh, &topo, 1.0).unwrap();
        assert_eq!(aug.points.len(), 3 + 2);
        assert_eq!(aug.tetrahedra.len(), 2);
        let centroid = Vector3::new(1.0 / 3.0, 1.0 / 3.0, 0.0);
        // Unit right triangle: area 1/2, so the offset length is 1 and the
        // normal is +z for this winding.
        assert_relative_eq!(
            aug.points[aug.top(0)],
            centroid + Vector3::new(0.0, 0.0, 1.0),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            aug.points[aug.bottom(0)],
            centroid - Vector3::new(0.0, 0.0, 1.0),
            epsilon = 1e-12
        );
        // Offset length scales linearly with sigma.
        let aug2 = add_virtual_vertices(&mesh, &topo, 0.25).unwrap();
        assert_relative_eq!(
            (aug2.points[aug2.top(0)] - centroid).norm(),
            0.25,
            epsilon = 1e-12
        );
        assert!(add_virtual_vertices(&mesh, &topo, 0.0).is_err());
        assert!(add_virtual_vertices(&mesh, &topo, f64::NAN).is_err());
    }

    #[test]
    fn tetrahedra_are_positively_oriented() {
        let mesh = tent();
        let topo = build_topology(&mesh).unwrap();
        let aug = add_virtual_vertices(&mesh, &topo, 1.0).unwrap();
        assert_eq!(aug.tetrahedra.len(), 2 * 2 + 2);
        for &tet in &aug.tetrahedra {
            assert!(signed_volume(&aug.points, tet) > 0.0);
        }
    }

    #[test]
    fn tet_pair_counts() {
        let tri = TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
            "tri",
        )
        .unwrap();
        let topo = build_topology(&tri).unwrap();
        assert_eq!(enumerate_tet_pairs(&tri, &topo).len(), 1);

        let mesh = two_tris();
        let topo = build_topology(&mesh).unwrap();
        let pairs = enumerate_tet_pairs(&mesh, &topo);
        assert_eq!(pairs.len(), 6);
        // Every pair spans five distinct vertices.
        for p in &pairs {
            let mut v = p.vertices.to_vec();
            v.sort_unstable();
            v.dedup();
            assert_eq!(v.len(), 5);
        }

        let g = grid(3, 3);
        let gt = build_topology(&g).unwrap();
        assert_eq!(
            enumerate_tet_pairs(&g, &gt).len(),
            g.num_facets() + 4 * gt.facet_pairs.len()
        );
    }

    #[test]
    fn nonplanar_regularizer_annihilates_affine_transforms() {
        let mesh = bumpy();
        let topo = build_topology(&mesh).unwrap();
        let reg = build_nonplanar(&mesh, &topo, 1.0).unwrap();
        assert_eq!(
            reg.nrows(),
            mesh.num_facets() + 4 * topo.facet_pairs.len()
        );
        assert_eq!(reg.num_vertices(), 9);

        let x = mesh.reference_coords();
        assert!(reg.a_full().matvec(&x).norm() < 1e-9 * x.norm().max(1.0));

        // Any affine map of the reference is annihilated too.
        let lin = nalgebra::Matrix3::new(1.1, 0.2, -0.3, 0.1, 0.9, 0.4, -0.2, 0.3, 1.2);
        let t = Vector3::new(3.0, -8.0, 25.0);
        let pts: Vec<Point3<f64>> = mesh
            .vertices()
            .iter()
            .map(|p| Point3::from(lin * p.coords + t))
            .collect();
        let xa = coords_from_points(&pts);
        assert!(reg.a_full().matvec(&xa).norm() < 1e-9 * xa.norm());

        // The per-vertex kernel contains each reference coordinate and the
        // constant vector (dimension at least four).
        let n = mesh.num_vertices();
        for k in 0..3 {
            let v = DVector::from_fn(n, |i, _| mesh.vertices()[i][k]);
            assert!(reg.a_prime().matvec(&v).norm() < 1e-9);
        }
        let ones = DVector::from_element(n, 1.0);
        assert!(reg.a_prime().matvec(&ones).norm() < 1e-9);
    }

    #[test]
    fn nonplanar_residual_invariant_to_rigid_motion() {
        let mesh = bumpy();
        let topo = build_topology(&mesh).unwrap();
        let reg = build_nonplanar(&mesh, &topo, 1.0).unwrap();

        let mut pts: Vec<Point3<f64>> = mesh.vertices().to_vec();
        pts[4].z += 0.5; // push the middle vertex: non-affine
        let x = coords_from_points(&pts);
        let base = reg.a_full().matvec(&x).norm();
        assert!(base > 1e-4);

        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), 1.1)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), 0.4);
        let t = Vector3::new(-4.0, 2.0, 9.0);
        let moved: Vec<Point3<f64>> = pts.iter().map(|p| Point3::from(rot * p.coords + t)).collect();
        assert_relative_eq!(
            reg.a_full().matvec(&coords_from_points(&moved)).norm(),
            base,
            max_relative = 1e-9
        );

        // Scaling scales the residual linearly.
        let xs = 1.75 * &x;
        assert_relative_eq!(
            reg.a_full().matvec(&xs).norm(),
            1.75 * base,
            max_relative = 1e-9
        );
    }

    #[test]
    fn elimination_matches_explicit_least_squares() {
        // The eliminated operator applied to the real coordinates must give
        // the same residual norm as minimizing the full union system over
        // the virtual coordinates with the real ones held fixed, which the
        // oracle does through an explicit KKT solve.
        let mesh = bumpy();
        let topo = build_topology(&mesh).unwrap();
        let reg = build_nonplanar(&mesh, &topo, 0.8).unwrap();

        // Rebuild the union matrix over real+virtual coordinates.
        let aug = add_virtual_vertices(&mesh, &topo, 0.8).unwrap();
        let pairs = enumerate_tet_pairs(&mesh, &topo);
        let n_total = aug.points.len();
        let mut triplets = Vec::new();
        for (r, pair) in pairs.iter().enumerate() {
            let pts = pair.vertices.map(|i| aug.points[i]);
            let w = tet_pair_weights(&pts).unwrap();
            for (k, &vi) in pair.vertices.iter().enumerate() {
                triplets.push((r, vi, w[k]));
            }
        }
        let union = SparseMatrix::from_triplets(pairs.len(), n_total, &triplets).to_dense();

        // Deform the real vertices, then let the oracle place the virtual
        // ones by minimizing the union residual with the real ones fixed.
        let mut real: Vec<f64> = Vec::new();
        for p in mesh.vertices() {
            real.push(p.x + 0.3 * p.y);
            real.push(p.y * 0.9);
            real.push(p.z + 0.25 * p.x * p.x);
        }
        // Oracle works on one coordinate at a time: the union operator is
        // per-vertex, so solve it per coordinate.
        let n_real = mesh.num_vertices();
        for coord in 0..3 {
            let fixed: Vec<usize> = (0..n_real).collect();
            let values =
                DVector::from_iterator(n_real, (0..n_real).map(|i| real[3 * i + coord]));
            let full = lapmesh_oracles::kkt_constrained_lsq(&union, &fixed, &values).unwrap();
            let oracle_residual = (&union * &full).norm();

            let ours = reg
                .a_prime()
                .matvec(&values)
                .norm();
            assert_relative_eq!(ours, oracle_residual, epsilon = 1e-10, max_relative = 1e-8);
        }
    }

    #[test]
    fn auto_mode_picks_by_planarity() {
        let flat = grid(3, 4);
        let topo = build_topology(&flat).unwrap();
        assert_eq!(
            build_auto(&flat, &topo, 1.0).unwrap().mode(),
            RegularizerMode::Planar
        );
        let bent = tent();
        let topo = build_topology(&bent).unwrap();
        assert_eq!(
            build_auto(&bent, &topo, 1.0).unwrap().mode(),
            RegularizerMode::NonPlanar { sigma: 1.0 }
        );
    }
}
