//! Matrix exponential by scaling and squaring around a diagonal Padé core
//! (Higham 2005, Algorithm 2.3).

use nalgebra::DMatrix;

use super::MathError;

const THETA: [(usize, f64); 4] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068),
];
const THETA_13: f64 = 5.371_920_351_148_152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const B9: [f64; 10] =
    [17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0, 2162160.0, 110880.0, 3960.0, 90.0, 1.0];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Beyond this the result overflows for any matrix with a positive eigenvalue.
const MAX_NORM: f64 = 700.0;

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `e^{A t}` for a square matrix `A`.
pub fn mat_exp(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>, MathError> {
    if !a.is_square() {
        return Err(MathError::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    if !t.is_finite() {
        return Err(MathError::NonFinite("time"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(MathError::NonFinite("matrix entry"));
    }
    let n = a.nrows();
    if n == 1 {
        let v = (a[(0, 0)] * t).exp();
        if !v.is_finite() {
            return Err(MathError::Overflow { norm: (a[(0, 0)] * t).abs() });
        }
        return Ok(DMatrix::from_element(1, 1, v));
    }
    let at = a * t;
    let norm = one_norm(&at);
    if norm == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    if norm > MAX_NORM {
        return Err(MathError::Overflow { norm });
    }

    for &(m, theta) in THETA.iter() {
        if norm <= theta {
            let coeffs: &[f64] = match m {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            return finish(pade_low(&at, coeffs), norm);
        }
    }

    let s = if norm > THETA_13 { (norm / THETA_13).log2().ceil() as i32 } else { 0 };
    let scaled = &at * 2f64.powi(-s);
    let mut r = pade_13(&scaled)?;
    for _ in 0..s {
        r = &r * &r;
    }
    finish(Ok(r), norm)
}

fn finish(r: Result<DMatrix<f64>, MathError>, norm: f64) -> Result<DMatrix<f64>, MathError> {
    let r = r?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(MathError::Overflow { norm });
    }
    Ok(r)
}

// Solve (V - U) X = (V + U) for the [m/m] approximant.
fn pade_solve(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<DMatrix<f64>, MathError> {
    let p = &v + &u;
    let q = &v - &u;
    q.lu().solve(&p).ok_or(MathError::Singular { cond: f64::INFINITY })
}

fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> Result<DMatrix<f64>, MathError> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let mut even = id.clone();
    let mut u_acc = &id * b[1];
    let mut v_acc = &id * b[0];
    let mut k = 2;
    while k < b.len() {
        even = &even * &a2;
        v_acc += &even * b[k];
        u_acc += &even * b[k + 1];
        k += 2;
    }
    let u = a * u_acc;
    pade_solve(u, v_acc)
}

fn pade_13(a: &DMatrix<f64>) -> Result<DMatrix<f64>, MathError> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let b = &B13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    pade_solve(u, v)
}

/// `∫₀ʰ e^{A s} ds`, read off the upper-right block of the exponential of
/// the augmented matrix `[[A, I], [0, 0]]`.
pub fn mat_exp_integral(a: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>, MathError> {
    if !a.is_square() {
        return Err(MathError::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    let n = a.nrows();
    if a.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::identity(n, n) * h);
    }
    let mut aug = DMatrix::<f64>::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    let e = mat_exp(&aug, h)?;
    Ok(e.view((0, n), (n, n)).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Independent reference: Taylor series on a scaled matrix, then squaring.
    fn taylor_exp(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
        let n = a.nrows();
        let at = a * t;
        let s = 8;
        let x = &at / 2f64.powi(s);
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &x / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn zero_matrix_gives_identity() {
        for n in 1..5 {
            let e = mat_exp(&DMatrix::zeros(n, n), 1.0).unwrap();
            assert_eq!(e, DMatrix::identity(n, n));
        }
    }

    #[test]
    fn nilpotent_truncates() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = mat_exp(&a, 1.0).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert_relative_eq!(e, want, epsilon = 1e-15);
    }

    #[test]
    fn scalar_case() {
        let e = mat_exp(&DMatrix::from_element(1, 1, 0.1), 2.0).unwrap();
        // e^{0.2} via its series
        let series: f64 = (0..25).map(|k| 0.2f64.powi(k) / (1..=k).map(|j| j as f64).product::<f64>()).sum();
        assert_relative_eq!(e[(0, 0)], series, max_relative = 1e-15);
        assert_relative_eq!(e[(0, 0)], 1.221_402_758_160_17, max_relative = 1e-14);
    }

    #[test]
    fn rotation_generator() {
        let th = 2.5;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let e = mat_exp(&a, th).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        assert_relative_eq!(e, want, epsilon = 1e-14);
    }

    #[test]
    fn all_pade_orders_match_taylor() {
        let base = DMatrix::from_row_slice(3, 3, &[0.3, -0.2, 0.1, 0.05, -0.4, 0.2, 0.1, 0.3, 0.2]);
        for &scale in &[1e-3, 0.05, 0.3, 1.0, 3.0, 12.0, 40.0] {
            let e = mat_exp(&base, scale).unwrap();
            let r = taylor_exp(&base, scale);
            let rel = (&e - &r).norm() / r.norm();
            assert!(rel < 1e-12, "scale {scale}: rel err {rel:e}");
        }
    }

    #[test]
    fn rejects_non_square_and_overflow() {
        assert!(matches!(mat_exp(&DMatrix::zeros(2, 3), 1.0), Err(MathError::NotSquare { .. })));
        let a = DMatrix::from_row_slice(2, 2, &[500.0, 1.0, 0.0, 500.0]);
        assert!(matches!(mat_exp(&a, 10.0), Err(MathError::Overflow { .. })));
        assert!(mat_exp(&DMatrix::from_element(1, 1, 1e3), 1.0).is_err());
    }

    #[test]
    fn exp_integral_matches_quadrature() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, 0.0, 0.2]);
        let h = 0.7;
        let phi = mat_exp_integral(&a, h).unwrap();
        // composite Simpson in s
        let m = 2000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for k in 0..=m {
            let s = h * k as f64 / m as f64;
            let w = if k == 0 || k == m {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += mat_exp(&a, s).unwrap() * w;
        }
        acc *= h / (3.0 * m as f64);
        assert_relative_eq!(phi, acc, epsilon = 1e-12);
    }
}
