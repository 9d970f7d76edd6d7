// Scaling and squaring with diagonal Pade approximants, after Higham (2005),
// "The Scaling and Squaring Method for the Matrix Exponential Revisited".

use crate::{Error, Matrix, Result};

const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152;

const B3: [f64; 4] = [120., 60., 12., 1.];
const B5: [f64; 6] = [30240., 15120., 3360., 420., 30., 1.];
const B7: [f64; 8] = [17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.];
const B9: [f64; 10] = [
    17643225600.,
    8821612800.,
    2075673600.,
    302702400.,
    30270240.,
    2162160.,
    110880.,
    3960.,
    90.,
    1.,
];
const B13: [f64; 14] = [
    64764752532480000.,
    32382376266240000.,
    7771770303897600.,
    1187353796428800.,
    129060195264000.,
    10559470521600.,
    670442572800.,
    33522128640.,
    1323241920.,
    40840800.,
    960960.,
    16380.,
    182.,
    1.,
];

fn one_norm(a: &Matrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Pade numerator/denominator pieces for orders up to 9 (odd/even split).
fn low_order(a: &Matrix, b: &[f64]) -> (Matrix, Matrix) {
    let n = a.nrows();
    let a2 = a * a;
    let mut odd = Matrix::identity(n, n) * b[1];
    let mut even = Matrix::identity(n, n) * b[0];
    let mut power = Matrix::identity(n, n);
    for k in 1..b.len() / 2 {
        power = &power * &a2;
        odd += &power * b[2 * k + 1];
        even += &power * b[2 * k];
    }
    (a * odd, even)
}

fn pade13(a: &Matrix) -> (Matrix, Matrix) {
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let b = &B13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    (u, v)
}

/// `exp(a)` to roughly unit-roundoff backward error.
pub(crate) fn expm(a: &Matrix) -> Result<Matrix> {
    if a.nrows() != a.ncols() {
        return Err(Error::Expm("matrix is not square".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Expm("matrix has non-finite entries".into()));
    }
    let norm = one_norm(a);
    let (u, v, squarings) = match THETA.iter().find(|(_, theta)| norm <= *theta) {
        Some((3, _)) => tuple(low_order(a, &B3)),
        Some((5, _)) => tuple(low_order(a, &B5)),
        Some((7, _)) => tuple(low_order(a, &B7)),
        Some(_) => tuple(low_order(a, &B9)),
        None => {
            let s = (norm / THETA_13).log2().ceil().max(0.0) as i32;
            let scaled = a * (-s as f64).exp2();
            let (u, v) = pade13(&scaled);
            (u, v, s as u32)
        }
    };
    let denominator = &v - &u;
    let numerator = &v + &u;
    let mut r = denominator
        .lu()
        .solve(&numerator)
        .ok_or_else(|| Error::Expm("Pade denominator is singular".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Expm("result has non-finite entries".into()));
    }
    Ok(r)
}

fn tuple((u, v): (Matrix, Matrix)) -> (Matrix, Matrix, u32) {
    (u, v, 0)
}

/// `a^n` by binary powering; `a^0 = I`.
pub(crate) fn matrix_power(a: &Matrix, mut n: u64) -> Matrix {
    let mut result: Option<Matrix> = None;
    let mut base = a.clone();
    while n > 0 {
        if n & 1 == 1 {
            result = Some(match result {
                Some(r) => &r * &base,
                None => base.clone(),
            });
        }
        n >>= 1;
        if n > 0 {
            base = &base * &base;
        }
    }
    result.unwrap_or_else(|| Matrix::identity(a.nrows(), a.ncols()))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Taylor series with many terms, for matrices of small norm.
    fn taylor(a: &Matrix) -> Matrix {
        let n = a.nrows();
        let mut term = Matrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..60 {
            term = &term * a / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn matches_taylor_for_every_pade_order() {
        let base = Matrix::from_fn(5, 5, |i, j| {
            ((i * 7 + j * 3) % 5) as f64 - 2.0 + if i == j { -1.0 } else { 0.0 }
        });
        for scale in [1e-3, 1e-2, 0.1, 0.3, 0.5, 1.0] {
            let a = &base * scale;
            let diff = (expm(&a).unwrap() - taylor(&a)).abs().max();
            assert!(diff < 1e-13, "scale {scale}: {diff}");
        }
    }

    #[test]
    fn scalar_and_diagonal_cases() {
        let a = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-30.0, 0.0, 2.0]));
        let e = expm(&a).unwrap();
        assert!(((e[(0, 0)] - (-30.0f64).exp()) / (-30.0f64).exp()).abs() < 1e-12);
        assert!((e[(1, 1)] - 1.0).abs() < 1e-15);
        assert!((e[(2, 2)] - 2.0f64.exp()).abs() < 1e-13);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn rotation_generator() {
        let t = 10.0;
        let a = Matrix::from_row_slice(2, 2, &[0.0, t, -t, 0.0]);
        let e = expm(&a).unwrap();
        assert!((e[(0, 0)] - t.cos()).abs() < 1e-13);
        assert!((e[(0, 1)] - t.sin()).abs() < 1e-13);
    }

    #[test]
    fn rejects_non_finite() {
        let a = Matrix::from_element(2, 2, f64::NAN);
        assert!(expm(&a).is_err());
    }

    #[test]
    fn powers() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert_eq!(matrix_power(&a, 0), Matrix::identity(2, 2));
        assert_eq!(
            matrix_power(&a, 13),
            Matrix::from_row_slice(2, 2, &[1.0, 13.0, 0.0, 1.0])
        );
    }
}
