//! Independent reference implementations used to cross-check the main crate
//! in tests. Nothing here is called from production code paths; the point is
//! that these routines reach the same answers through different algorithms
//! (full SVD instead of Gram eigendecomposition, an explicit KKT system
//! instead of variable elimination, finite differences instead of analytic
//! derivatives), so agreement is meaningful.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleError {
    /// The configuration admits more than one independent solution.
    Degenerate,
    /// A linear system that should be solvable was singular.
    Singular,
}

impl std::fmt::Display for OracleError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OracleError::Degenerate => write!(f, "degenerate point configuration"),
            OracleError::Singular => write!(f, "singular KKT system"),
        }
    }
}

impl std::error::Error for OracleError {}

/// Unit-norm weights `w` over `k` points such that both the weighted point
/// sum and the plain weight sum vanish, i.e. the null vector of the 4 x k
/// matrix whose columns are the homogeneous points `[x, y, z, 1]`.
///
/// Computed from a full SVD of the matrix padded to square, taking the right
/// singular vector of the smallest singular value. The configuration is
/// rejected as degenerate when the second-smallest singular value is below
/// `1e-8` times the largest (the null space then has dimension two or more).
/// The sign is fixed by making the first nonzero weight positive.
pub fn nullspace_weights(points: &[[f64; 3]]) -> Result<Vec<f64>, OracleError> {
    let k = points.len();
    assert!(k >= 4, "need at least four points");
    // Pad with zero rows to k x k so the SVD exposes all k right singular
    // vectors (a thin SVD of the 4 x k matrix would not span the null space).
    let mut b = DMatrix::zeros(k.max(4), k);
    for (j, p) in points.iter().enumerate() {
        b[(0, j)] = p[0];
        b[(1, j)] = p[1];
        b[(2, j)] = p[2];
        b[(3, j)] = 1.0;
    }
    let svd = b.svd(false, true);
    let sigma = &svd.singular_values; // sorted descending
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    if sigma[0] <= 0.0 || sigma[k - 2] < 1e-8 * sigma[0] {
        return Err(OracleError::Degenerate);
    }
    let mut w: Vec<f64> = v_t.row(k - 1).iter().copied().collect();
    let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(first) = w.iter().find(|v| v.abs() > 1e-12 * scale) {
        if *first < 0.0 {
            for v in &mut w {
                *v = -*v;
            }
        }
    }
    Ok(w)
}

/// Solves `min |A x|^2` subject to `x[fixed[i]] = values[i]` through the
/// explicit KKT system
///
/// ```text
/// [ 2 A^T A   C^T ] [ x  ]   [ 0 ]
/// [ C         0   ] [ nu ] = [ c ]
/// ```
///
/// where `C` selects the fixed entries. No variables are eliminated; the
/// full system is solved by LU with full pivoting.
pub fn kkt_constrained_lsq(
    a: &DMatrix<f64>,
    fixed: &[usize],
    values: &DVector<f64>,
) -> Result<DVector<f64>, OracleError> {
    let n = a.ncols();
    let m = fixed.len();
    assert_eq!(values.len(), m, "one value per fixed index");
    let mut kkt = DMatrix::zeros(n + m, n + m);
    let ata = a.transpose() * a;
    kkt.view_mut((0, 0), (n, n)).copy_from(&(2.0 * ata));
    for (r, &i) in fixed.iter().enumerate() {
        assert!(i < n, "fixed index out of range");
        kkt[(n + r, i)] = 1.0;
        kkt[(i, n + r)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(n, m).copy_from(values);
    let lu = kkt.full_piv_lu();
    if !lu.is_invertible() {
        return Err(OracleError::Singular);
    }
    let sol = lu.solve(&rhs).ok_or(OracleError::Singular)?;
    Ok(sol.rows(0, n).into_owned())
}

/// Central-difference gradient of a scalar function.
pub fn finite_difference_gradient<F>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian of a vector function.
pub fn finite_difference_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut xp = x.clone();
    let rows = f(x).len();
    let mut jac = DMatrix::zeros(rows, x.len());
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        jac.set_column(i, &((fp - fm) / (2.0 * h)));
    }
    jac
}
