//! Closed-form initial shape from the regularized projection system.
//!
//! Stacking the projection rows `M P` over the weighted regularizer rows
//! `w_r A P` gives a homogeneous least-squares problem in the control
//! coordinates whose minimizer over unit vectors is the right singular
//! vector of the smallest singular value. Because projections are invariant
//! to scaling toward the camera and the regularizer to affine maps, the
//! overall scale is unobservable; it is fixed by matching the mean edge
//! length of the reference shape, and the sign by requiring positive mean
//! depth.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controls::ControlBasis;
use crate::error::{Error, Result};
use crate::mesh::Topology;
use crate::regularizer::Regularizer;
use crate::sparse::SparseMatrix;

/// Default regularization weight; reconstructions are stable for weights
/// within roughly an order of magnitude of 1.
pub const DEFAULT_WR: f64 = 1.0;

/// Column count up to which the stacked matrix is decomposed by dense SVD.
const DENSE_SVD_MAX_COLS: usize = 300;

/// How the smallest singular vector is extracted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EigenMethod {
    /// Dense SVD for small control counts, normal-matrix eigendecomposition
    /// beyond that.
    Auto,
    DenseSvd,
    NormalEigen,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearSolveConfig {
    pub w_r: f64,
    pub method: EigenMethod,
    /// Also return the full singular spectrum of the stacked matrix.
    pub with_spectrum: bool,
}

impl Default for LinearSolveConfig {
    fn default() -> Self {
        LinearSolveConfig {
            w_r: DEFAULT_WR,
            method: EigenMethod::Auto,
            with_spectrum: false,
        }
    }
}

/// Result of the linear solve, after sign and scale fixing.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    /// Control coordinates.
    pub c: DVector<f64>,
    /// Full coordinates, `x = P c`.
    pub x: DVector<f64>,
    /// Smallest singular value of the stacked matrix: the residual norm at
    /// the unit-norm minimizer.
    pub objective: f64,
    /// Singular values (descending) of the stacked matrix, if requested.
    pub spectrum: Option<Vec<f64>>,
}

/// Builds the stacked dense system `[M P; w_r A P]` over control coordinates.
pub fn build_stacked(
    m: &SparseMatrix,
    reg: &Regularizer,
    basis: &ControlBasis,
    w_r: f64,
) -> DMatrix<f64> {
    let mp = m.mul_dense(basis.p());
    let ap = reg.a_full().mul_dense(basis.p());
    let mut s = DMatrix::zeros(mp.nrows() + ap.nrows(), mp.ncols());
    s.view_mut((0, 0), mp.shape()).copy_from(&mp);
    s.view_mut((mp.nrows(), 0), ap.shape())
        .copy_from(&(w_r * ap));
    s
}

/// Smallest right singular vector of a dense matrix, with the singular value
/// and optionally the full spectrum (descending).
fn smallest_right_singular(
    stacked: DMatrix<f64>,
    method: EigenMethod,
    with_spectrum: bool,
) -> Result<(DVector<f64>, f64, Option<Vec<f64>>)> {
    let cols = stacked.ncols();
    let use_svd = match method {
        EigenMethod::DenseSvd => true,
        EigenMethod::NormalEigen => false,
        EigenMethod::Auto => cols <= DENSE_SVD_MAX_COLS,
    };
    if use_svd {
        // Pad with zero rows if the system is wider than tall so the thin
        // SVD still exposes every right singular vector.
        let padded = if stacked.nrows() < cols {
            let mut p = DMatrix::zeros(cols, cols);
            p.view_mut((0, 0), stacked.shape()).copy_from(&stacked);
            p
        } else {
            stacked
        };
        let svd = crate::linalg::svd(padded)?;
        let v_t = svd.v_t.as_ref().expect("V^T was requested");
        let c = v_t.row(cols - 1).transpose();
        let sigma_min = svd.singular_values[cols - 1];
        let spectrum =
            with_spectrum.then(|| svd.singular_values.iter().copied().collect::<Vec<f64>>());
        Ok((c, sigma_min, spectrum))
    } else {
        let gram = stacked.transpose() * &stacked;
        let eig = crate::linalg::symmetric_eigen(gram)?;
        let mut order: Vec<usize> = (0..cols).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let c = eig.eigenvectors.column(order[0]).into_owned();
        let sigma_min = eig.eigenvalues[order[0]].max(0.0).sqrt();
        let spectrum = with_spectrum.then(|| {
            order
                .iter()
                .rev()
                .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
                .collect::<Vec<f64>>()
        });
        Ok((c, sigma_min, spectrum))
    }
}

/// Solves for the initial shape: the unit-norm minimizer of
/// `|M P c|^2 + w_r^2 |A P c|^2`, then flips the sign so the mean depth is
/// positive and rescales so the mean edge length matches the reference.
pub fn solve_initial(
    m: &SparseMatrix,
    reg: &Regularizer,
    basis: &ControlBasis,
    topo: &Topology,
    cfg: &LinearSolveConfig,
) -> Result<LinearSolution> {
    if !(cfg.w_r > 0.0 && cfg.w_r.is_finite()) {
        return Err(Error::ParamOutOfRange {
            name: "w_r",
            value: cfg.w_r,
            detail: "regularization weight must be positive and finite".into(),
        });
    }
    if m.nrows() < 3 * basis.num_controls() {
        log::warn!(
            "only {} projection rows for {} control coordinates; \
             the data term is underdetermined",
            m.nrows(),
            3 * basis.num_controls()
        );
    }

    let stacked = build_stacked(m, reg, basis, cfg.w_r);
    let (c_unit, sigma_min, spectrum) =
        smallest_right_singular(stacked, cfg.method, cfg.with_spectrum)?;

    let x_unit = basis.apply(&c_unit);
    let n = x_unit.len() / 3;
    let mean_depth = (0..n).map(|i| x_unit[3 * i + 2]).sum::<f64>() / n as f64;
    let sign = if mean_depth > 0.0 {
        1.0
    } else if mean_depth < 0.0 {
        -1.0
    } else {
        return Err(Error::AllBehindCamera);
    };

    let current_edge = topo.mean_edge_length(&x_unit);
    if !(current_edge > 0.0) {
        return Err(Error::DegenerateInput(
            "linear solution collapsed to a point".into(),
        ));
    }
    let scale = sign * topo.mean_ref_edge_length() / current_edge;
    Ok(LinearSolution {
        c: scale * c_unit,
        x: scale * x_unit,
        objective: sigma_min,
        spectrum,
    })
}

/// One row of the conditioning sweep.
#[derive(Debug, Clone, Serialize)]
pub struct ConditioningEntry {
    pub w_r: f64,
    /// Ratio of largest to smallest singular value of the stacked matrix.
    pub condition: f64,
    /// Full spectrum, descending.
    pub spectrum: Vec<f64>,
}

/// Computes the condition number and spectrum of the stacked matrix for each
/// regularization weight in `grid` (weights may include 0 to show the
/// unregularized limit).
pub fn conditioning_report(
    m: &SparseMatrix,
    reg: &Regularizer,
    basis: &ControlBasis,
    grid: &[f64],
) -> Result<Vec<ConditioningEntry>> {
    if grid.is_empty() {
        return Err(Error::DegenerateInput("empty w_r grid".into()));
    }
    let mut entries = Vec::with_capacity(grid.len());
    for &w_r in grid {
        if !(w_r >= 0.0 && w_r.is_finite()) {
            return Err(Error::ParamOutOfRange {
                name: "w_r",
                value: w_r,
                detail: "sweep weights must be non-negative and finite".into(),
            });
        }
        let stacked = build_stacked(m, reg, basis, w_r);
        let sv = crate::linalg::singular_values(stacked)?;
        let spectrum: Vec<f64> = sv.iter().copied().collect();
        let sigma_max = spectrum[0];
        let sigma_min = *spectrum.last().expect("nonempty spectrum");
        let condition = if sigma_min > 0.0 {
            sigma_max / sigma_min
        } else {
            f64::INFINITY
        };
        entries.push(ConditioningEntry {
            w_r,
            condition,
            spectrum,
        });
    }
    Ok(entries)
}
