use nalgebra::DMatrix;

use super::MathError;

/// SPD solves refuse matrices whose eigenvalue ratio exceeds this.
pub const CONDITION_LIMIT: f64 = 1e14;

const SYMMETRY_TOL: f64 = 1e-12;

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() / scale
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Ratio of extreme eigenvalues; infinite when the matrix is not positive definite.
pub fn condition_spd(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return if m[(0, 0)] > 0.0 { 1.0 } else { f64::INFINITY };
    }
    let ev = symmetrize(m).symmetric_eigenvalues();
    let lo = ev.min();
    if lo <= 0.0 {
        return f64::INFINITY;
    }
    ev.max() / lo
}

/// Solve `M X = B` for symmetric positive-definite `M`.
pub fn solve_spd(m: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, MathError> {
    if !m.is_square() {
        return Err(MathError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if b.nrows() != m.nrows() {
        return Err(MathError::Dimension(format!(
            "right-hand side has {} rows, matrix is {}x{}",
            b.nrows(),
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(MathError::NonFinite("solve_spd input"));
    }
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(MathError::NotSymmetric { asymmetry: asym });
    }
    let cond = condition_spd(m);
    if !(cond <= CONDITION_LIMIT) {
        return Err(MathError::Singular { cond });
    }
    let chol = symmetrize(m).cholesky().ok_or(MathError::Singular { cond })?;
    Ok(chol.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn identity_and_scalar() {
        let b = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 3.0, 4.0, 5.0, -6.0]);
        assert_eq!(solve_spd(&DMatrix::identity(2, 2), &b).unwrap(), b);
        let x = solve_spd(&DMatrix::from_element(1, 1, 4.0), &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(x[(0, 0)], 0.25);
    }

    #[test]
    fn two_by_two_closed_form() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let x = solve_spd(&m, &DMatrix::from_row_slice(2, 1, &[1.0, 1.0])).unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(x[(1, 0)], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_indefinite_singular_and_asymmetric() {
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let b = DMatrix::from_element(2, 1, 1.0);
        assert!(matches!(solve_spd(&indef, &b), Err(MathError::Singular { .. })));
        let near = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-16]);
        assert!(matches!(solve_spd(&near, &b), Err(MathError::Singular { .. })));
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(solve_spd(&asym, &b), Err(MathError::NotSymmetric { .. })));
        assert!(solve_spd(&DMatrix::zeros(1, 1), &DMatrix::from_element(1, 1, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn solve_then_multiply_recovers_rhs(
            entries in proptest::collection::vec(-1.0f64..1.0, 16),
            rhs in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            let l = DMatrix::from_row_slice(4, 4, &entries);
            let m = &l * l.transpose() + DMatrix::identity(4, 4) * 0.5;
            let b = DMatrix::from_row_slice(4, 2, &rhs);
            let x = solve_spd(&m, &b).unwrap();
            let r = &m * &x - &b;
            prop_assert!(r.norm() <= 1e-9 * b.norm().max(1e-300));
        }
    }
}
