//! Small dense linear algebra: Gaussian elimination with partial pivoting
//! for the modest systems that appear in oracle checks, spline fitting, and
//! field-table construction. Not intended for large problems.

use num_complex::Complex64;

use crate::{Error, Result};

/// Solves the square complex system `A x = b` in place of a copy of `A`.
/// `a` is row-major `n x n`.
pub fn solve_complex(a: &[Complex64], b: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = b.len();
    if a.len() != n * n {
        return Err(Error::ShapeMismatch(format!(
            "dense solve expects {n}x{n} matrix, got {} entries",
            a.len()
        )));
    }
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let (pivot, piv_mag) = (col..n)
            .map(|r| (r, m[r * n + col].norm()))
            .max_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        if piv_mag == 0.0 {
            return Err(Error::InvalidArgument("dense solve: singular matrix".into()));
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            x.swap(col, pivot);
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / d;
            if f == Complex64::default() {
                continue;
            }
            for k in col..n {
                let v = m[col * n + k];
                m[r * n + k] -= f * v;
            }
            let v = x[col];
            x[r] -= f * v;
        }
    }
    for col in (0..n).rev() {
        let mut v = x[col];
        for k in col + 1..n {
            v -= m[col * n + k] * x[k];
        }
        x[col] = v / m[col * n + col];
    }
    Ok(x)
}

/// Solves the square real system `A x = b`.
pub fn solve_real(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let ac: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let bc: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    Ok(solve_complex(&ac, &bc)?.into_iter().map(|v| v.re).collect())
}

/// Dense row-major matrix-vector product for an `m x n` complex matrix.
pub fn matvec(a: &[Complex64], x: &[Complex64], m: usize, n: usize) -> Vec<Complex64> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(x.len(), n);
    (0..m)
        .map(|r| {
            let row = &a[r * n..(r + 1) * n];
            row.iter().zip(x).map(|(p, q)| p * q).sum()
        })
        .collect()
}

/// Dense conjugate-transpose product `A' y` for an `m x n` complex matrix.
pub fn matvec_adjoint(a: &[Complex64], y: &[Complex64], m: usize, n: usize) -> Vec<Complex64> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(y.len(), m);
    let mut out = vec![Complex64::default(); n];
    for r in 0..m {
        let row = &a[r * n..(r + 1) * n];
        let v = y[r];
        for (o, p) in out.iter_mut().zip(row) {
            *o += p.conj() * v;
        }
    }
    out
}

/// Least-squares solve of an overdetermined real system via the normal
/// equations; `a` is row-major `m x n` with `m >= n`.
pub fn lstsq_real(a: &[f64], b: &[f64], m: usize, n: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), m);
    let mut ata = vec![0.0; n * n];
    let mut atb = vec![0.0; n];
    for r in 0..m {
        let row = &a[r * n..(r + 1) * n];
        for i in 0..n {
            atb[i] += row[i] * b[r];
            for j in 0..n {
                ata[i * n + j] += row[i] * row[j];
            }
        }
    }
    solve_real(&ata, &atb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_solve_roundtrip() {
        let n = 6;
        let mut a = vec![Complex64::default(); n * n];
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for v in a.iter_mut() {
            *v = Complex64::new(next(), next());
        }
        for i in 0..n {
            a[i * n + i] += Complex64::new(4.0, 0.0); // diagonally dominant
        }
        let x_true: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
        let b = matvec(&a, &x_true, n, n);
        let x = solve_complex(&a, &b).unwrap();
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).norm() < 1e-10);
        }
    }

    #[test]
    fn singular_matrix_rejected() {
        let a = vec![Complex64::default(); 4];
        let b = vec![Complex64::new(1.0, 0.0); 2];
        assert!(solve_complex(&a, &b).is_err());
    }

    #[test]
    fn lstsq_fits_exact_system() {
        // Overdetermined but consistent: y = 2 + 3 t.
        let ts = [0.0, 1.0, 2.0, 3.0];
        let mut a = Vec::new();
        let mut b = Vec::new();
        for &t in &ts {
            a.extend_from_slice(&[1.0, t]);
            b.push(2.0 + 3.0 * t);
        }
        let c = lstsq_real(&a, &b, 4, 2).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-12 && (c[1] - 3.0).abs() < 1e-12);
    }
}
