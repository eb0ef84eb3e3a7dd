//! Thin wrappers over nalgebra decompositions with explicit convergence
//! settings: machine-epsilon tolerance and a finite iteration cap, so a
//! pathological matrix surfaces as an error instead of a spin.

use nalgebra::{DMatrix, Dyn, SymmetricEigen, SVD};

use crate::error::{Error, Result};

fn iter_cap(n: usize) -> usize {
    1_000 + 100 * n
}

/// Symmetric eigendecomposition; fails with [`Error::EigenFailure`] instead
/// of spinning when the QL iteration does not converge.
pub fn symmetric_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, Dyn>> {
    let n = m.nrows();
    SymmetricEigen::try_new(m, f64::EPSILON, iter_cap(n)).ok_or(Error::EigenFailure)
}

/// Singular value decomposition with `U` and `V^T`, singular values sorted
/// in descending order.
pub fn svd(m: DMatrix<f64>) -> Result<SVD<f64, Dyn, Dyn>> {
    let n = m.nrows().max(m.ncols());
    let mut svd = m
        .try_svd(true, true, f64::EPSILON, iter_cap(n))
        .ok_or(Error::EigenFailure)?;
    svd.sort_by_singular_values();
    Ok(svd)
}

/// Singular values only, sorted in descending order.
pub fn singular_values(m: DMatrix<f64>) -> Result<nalgebra::DVector<f64>> {
    let n = m.nrows().max(m.ncols());
    let mut sv = m
        .try_svd(false, false, f64::EPSILON, iter_cap(n))
        .ok_or(Error::EigenFailure)?
        .singular_values;
    sv.as_mut_slice()
        .sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));
    Ok(sv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigen_of_known_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let eig = symmetric_eigen(m).unwrap();
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        assert_relative_eq!(vals[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(vals[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn svd_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 5.0, 0.0, 0.0]);
        let sv = singular_values(m.clone()).unwrap();
        assert_relative_eq!(sv[0], 5.0, epsilon = 1e-12);
        assert_relative_eq!(sv[1], 1.0, epsilon = 1e-12);
        let full = svd(m).unwrap();
        assert!(full.u.is_some() && full.v_t.is_some());
        assert!(full.singular_values[0] >= full.singular_values[1]);
    }
}
