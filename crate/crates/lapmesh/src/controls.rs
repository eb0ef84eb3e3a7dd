//! Control-vertex parameterization of the shape.
//!
//! The full coordinate vector is linear in a small set of control vertices:
//! given controls `c`, the remaining (interior) vertices take the values
//! minimizing the regularizer residual, which is itself a linear map. The
//! resulting basis matrix `P` (with `x = P c`) both shrinks the unknown
//! count and acts as a strong implicit regularizer, since interior vertices
//! can only move in the least-bending way compatible with the controls.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::regularizer::Regularizer;

/// Minimum number of control vertices: the regularizer kernel contains the
/// affine shapes, so fewer than four controls cannot pin one down.
pub const MIN_CONTROLS: usize = 4;

/// Relative eigenvalue threshold below which the interior block of the
/// regularizer counts as rank deficient.
const INTERIOR_EIG_REL_TOL: f64 = 1e-10;

/// How control vertices are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ControlStrategy {
    /// Farthest-point sampling over the reference shape: spreads controls
    /// evenly, deterministically.
    Regular,
    /// Uniform sample without replacement, seeded.
    Random,
    /// Every vertex is a control (the count argument is ignored).
    All,
}

/// Selects `count` control vertex indices, returned sorted ascending.
pub fn select_controls(
    mesh: &TriMesh,
    strategy: ControlStrategy,
    count: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = mesh.num_vertices();
    if strategy == ControlStrategy::All {
        return Ok((0..n).collect());
    }
    if count < MIN_CONTROLS || count > n {
        return Err(Error::CountOutOfRange {
            count,
            min: MIN_CONTROLS,
            max: n,
        });
    }
    let mut picked = match strategy {
        ControlStrategy::Regular => farthest_point_sample(mesh, count),
        ControlStrategy::Random => {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            all.truncate(count);
            all
        }
        ControlStrategy::All => unreachable!(),
    };
    picked.sort_unstable();
    Ok(picked)
}

/// Farthest-point sampling: start at the vertex nearest the centroid, then
/// repeatedly add the vertex farthest from the selected set. Ties break
/// toward the lowest index so the result is deterministic.
fn farthest_point_sample(mesh: &TriMesh, count: usize) -> Vec<usize> {
    let verts = mesh.vertices();
    let n = verts.len();
    let centroid = verts
        .iter()
        .fold(nalgebra::Vector3::zeros(), |s, p| s + p.coords)
        / n as f64;
    let mut start = 0;
    let mut best = f64::INFINITY;
    for (i, p) in verts.iter().enumerate() {
        let d = (p.coords - centroid).norm_squared();
        if d < best {
            best = d;
            start = i;
        }
    }

    let mut selected = vec![start];
    let mut min_dist: Vec<f64> = verts
        .iter()
        .map(|p| (p - verts[start]).norm_squared())
        .collect();
    while selected.len() < count {
        let mut far = 0;
        let mut far_d = -1.0;
        for (i, &d) in min_dist.iter().enumerate() {
            if d > far_d {
                far_d = d;
                far = i;
            }
        }
        selected.push(far);
        for (i, d) in min_dist.iter_mut().enumerate() {
            *d = d.min((verts[i] - verts[far]).norm_squared());
        }
    }
    selected
}

/// The linear basis mapping control coordinates to the full shape.
#[derive(Debug, Clone)]
pub struct ControlBasis {
    indices: Vec<usize>,
    /// Per-vertex basis: `num_vertices x num_controls`.
    p_vertex: DMatrix<f64>,
    /// Expanded basis on vertex-major coordinate vectors:
    /// `3 num_vertices x 3 num_controls`.
    p: DMatrix<f64>,
}

impl ControlBasis {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn num_controls(&self) -> usize {
        self.indices.len()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn p_vertex(&self) -> &DMatrix<f64> {
        &self.p_vertex
    }

    /// Reads the control coordinates out of a full coordinate vector.
    pub fn extract_controls(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut c = DVector::zeros(3 * self.indices.len());
        for (j, &vi) in self.indices.iter().enumerate() {
            for k in 0..3 {
                c[3 * j + k] = x[3 * vi + k];
            }
        }
        c
    }

    /// Expands control coordinates to the full shape, `x = P c`.
    pub fn apply(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.p * c
    }
}

/// Builds the control basis for the given regularizer and control indices:
/// identity rows at the controls, and at interior vertices the coefficients
/// of the regularizer-minimizing interior solution.
pub fn build_p(reg: &Regularizer, indices: &[usize]) -> Result<ControlBasis> {
    let n = reg.num_vertices();
    let n_c = indices.len();
    if n_c < MIN_CONTROLS || n_c > n {
        return Err(Error::CountOutOfRange {
            count: n_c,
            min: MIN_CONTROLS,
            max: n,
        });
    }
    let mut is_control = vec![false; n];
    for &i in indices {
        if i >= n {
            return Err(Error::ParamOutOfRange {
                name: "control index",
                value: i as f64,
                detail: format!("mesh has {n} vertices"),
            });
        }
        if std::mem::replace(&mut is_control[i], true) {
            return Err(Error::ParamOutOfRange {
                name: "control index",
                value: i as f64,
                detail: "duplicate control vertex".into(),
            });
        }
    }
    let interior: Vec<usize> = (0..n).filter(|&i| !is_control[i]).collect();

    // Identity case: every vertex is a control.
    if interior.is_empty() {
        let p_vertex = DMatrix::identity(n, n);
        let p = DMatrix::identity(3 * n, 3 * n);
        return Ok(ControlBasis {
            indices: indices.to_vec(),
            p_vertex,
            p,
        });
    }

    let a = reg.a_prime().to_dense();
    let a_c = a.select_columns(indices.iter());
    let a_i = a.select_columns(interior.iter());

    // Interior Gram matrix must be well conditioned for the interior to be
    // determined by the controls.
    let gram = a_i.transpose() * &a_i;
    let eig = crate::linalg::symmetric_eigen(gram)?;
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
    let lambda_min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if !(lambda_max > 0.0) || lambda_min < INTERIOR_EIG_REL_TOL * lambda_max {
        return Err(Error::RankDeficientInterior);
    }

    // X = -G^{-1} A_i^T A_c through the eigendecomposition (G is SPD here).
    let rhs = eig.eigenvectors.transpose() * (a_i.transpose() * &a_c);
    let mut scaled = rhs;
    for (r, mut row) in scaled.row_iter_mut().enumerate() {
        row /= -eig.eigenvalues[r];
    }
    let x = &eig.eigenvectors * scaled;

    let mut p_vertex = DMatrix::zeros(n, n_c);
    for (j, &vi) in indices.iter().enumerate() {
        p_vertex[(vi, j)] = 1.0;
    }
    for (r, &vi) in interior.iter().enumerate() {
        for j in 0..n_c {
            p_vertex[(vi, j)] = x[(r, j)];
        }
    }

    let mut p = DMatrix::zeros(3 * n, 3 * n_c);
    for r in 0..n {
        for j in 0..n_c {
            let v = p_vertex[(r, j)];
            if v != 0.0 {
                for k in 0..3 {
                    p[(3 * r + k, 3 * j + k)] = v;
                }
            }
        }
    }

    Ok(ControlBasis {
        indices: indices.to_vec(),
        p_vertex,
        p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_topology, coords_from_points};
    use crate::regularizer::build_planar;
    use approx::assert_relative_eq;
    use nalgebra::{Point3, Vector3};

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

    #[test]
    fn selection_is_deterministic_sorted_unique() {
        let mesh = grid(5, 6);
        for strategy in [ControlStrategy::Regular, ControlStrategy::Random] {
            let a = select_controls(&mesh, strategy, 8, 42).unwrap();
            let b = select_controls(&mesh, strategy, 8, 42).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 8);
            for w in a.windows(2) {
                assert!(w[0] < w[1], "not sorted/unique: {a:?}");
            }
            assert!(a.iter().all(|&i| i < mesh.num_vertices()));
        }
        // Different seeds give different random picks.
        let a = select_controls(&mesh, ControlStrategy::Random, 8, 1).unwrap();
        let b = select_controls(&mesh, ControlStrategy::Random, 8, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn all_matches_regular_with_full_count() {
        let mesh = grid(4, 4);
        let n = mesh.num_vertices();
        let all = select_controls(&mesh, ControlStrategy::All, 0, 0).unwrap();
        let reg = select_controls(&mesh, ControlStrategy::Regular, n, 0).unwrap();
        assert_eq!(all, reg);
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn count_bounds_enforced() {
        let mesh = grid(3, 3);
        assert!(matches!(
            select_controls(&mesh, ControlStrategy::Regular, 3, 0),
            Err(Error::CountOutOfRange { .. })
        ));
        assert!(matches!(
            select_controls(&mesh, ControlStrategy::Random, 10, 0),
            Err(Error::CountOutOfRange { .. })
        ));
    }

    #[test]
    fn farthest_point_covers_extremes() {
        let mesh = grid(5, 5);
        let picked = select_controls(&mesh, ControlStrategy::Regular, 5, 0).unwrap();
        // The four corners are the extreme points of the grid; farthest-point
        // sampling must reach all of them within the first five picks.
        for corner in [0usize, 4, 20, 24] {
            assert!(picked.contains(&corner), "{picked:?}");
        }
    }

    #[test]
    fn basis_reproduces_controls_exactly() {
        let mesh = grid(5, 6);
        let topo = build_topology(&mesh).unwrap();
        let reg = build_planar(&mesh, &topo).unwrap();
        let idx = select_controls(&mesh, ControlStrategy::Regular, 7, 0).unwrap();
        let basis = build_p(&reg, &idx).unwrap();
        assert_eq!(basis.p().ncols(), 21);
        assert_eq!(basis.p().nrows(), 3 * mesh.num_vertices());

        let c = DVector::from_fn(21, |i, _| (i as f64 * 0.37).sin());
        let x = basis.apply(&c);
        let back = basis.extract_controls(&x);
        assert_relative_eq!(back, c, epsilon = 1e-14);
    }

    #[test]
    fn interior_matches_kkt_oracle() {
        let mesh = grid(4, 5);
        let topo = build_topology(&mesh).unwrap();
        let reg = build_planar(&mesh, &topo).unwrap();
        let idx = vec![0, 3, 9, 13, 16, 19];
        let basis = build_p(&reg, &idx).unwrap();

        let a_dense = reg.a_prime().to_dense();
        // Per-coordinate: the basis interior must equal the constrained
        // least-squares solution of the full system.
        let values = DVector::from_vec(vec![0.3, -1.2, 2.0, 0.7, -0.4, 1.5]);
        let oracle = lapmesh_oracles::kkt_constrained_lsq(&a_dense, &idx, &values).unwrap();
        let ours = basis.p_vertex() * &values;
        assert_relative_eq!(ours, oracle, epsilon = 1e-9);
    }

    #[test]
    fn affine_shapes_are_reproduced_exactly() {
        // An affine map of the reference lies in the regularizer kernel, so
        // expanding its control values must reproduce it at every vertex.
        let mesh = grid(5, 5);
        let topo = build_topology(&mesh).unwrap();
        let reg = build_planar(&mesh, &topo).unwrap();
        let idx = select_controls(&mesh, ControlStrategy::Regular, 6, 0).unwrap();
        let basis = build_p(&reg, &idx).unwrap();

        let lin = nalgebra::Matrix3::new(0.9, 0.4, 0.0, -0.2, 1.1, 0.0, 0.3, -0.5, 1.0);
        let t = Vector3::new(2.0, -1.0, 7.0);
        let pts: Vec<Point3<f64>> = mesh
            .vertices()
            .iter()
            .map(|p| Point3::from(lin * p.coords + t))
            .collect();
        let x_affine = coords_from_points(&pts);
        let c = basis.extract_controls(&x_affine);
        let x = basis.apply(&c);
        assert_relative_eq!(x, x_affine, epsilon = 1e-8);
    }

    #[test]
    fn collinear_controls_are_rank_deficient() {
        let mesh = grid(3, 4);
        let topo = build_topology(&mesh).unwrap();
        let reg = build_planar(&mesh, &topo).unwrap();
        // The first row of the grid: four collinear vertices. An affine
        // function can vanish on the whole line, so the interior is not
        // determined.
        assert!(matches!(
            build_p(&reg, &[0, 1, 2, 3]),
            Err(Error::RankDeficientInterior)
        ));
        // A spread-out choice works.
        assert!(build_p(&reg, &[0, 3, 8, 11]).is_ok());
    }

    #[test]
    fn build_p_validates_indices() {
        let mesh = grid(3, 4);
        let topo = build_topology(&mesh).unwrap();
        let reg = build_planar(&mesh, &topo).unwrap();
        assert!(build_p(&reg, &[0, 1, 2]).is_err()); // too few
        assert!(build_p(&reg, &[0, 1, 2, 99]).is_err()); // out of range
        assert!(build_p(&reg, &[0, 1, 2, 2]).is_err()); // duplicate
    }

    #[test]
    fn all_controls_give_identity_basis() {
        let mesh = grid(3, 3);
        let topo = build_topology(&mesh).unwrap();
        let reg = build_planar(&mesh, &topo).unwrap();
        let idx: Vec<usize> = (0..mesh.num_vertices()).collect();
        let basis = build_p(&reg, &idx).unwrap();
        assert_eq!(basis.p(), &DMatrix::identity(27, 27));
    }
}
