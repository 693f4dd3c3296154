//! Matrix-free Krylov solvers with Jacobi preconditioning.
//!
//! Reductions run sequentially in index order so repeated solves are bitwise
//! reproducible. Entries whose preconditioner diagonal is zero are treated as
//! inactive and stay at zero.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    // ⟨a, b⟩ = Σ conj(a) b
    a.iter().zip(b).fold(Complex64::new(0.0, 0.0), |s, (x, y)| s + x.conj() * y)
}

fn cnorm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Preconditioned conjugate gradients for an SPD operator.
///
/// `x` holds the initial guess on entry and the solution on success.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let inv: Vec<f64> = diag.iter().map(|&d| if d != 0.0 { 1.0 / d } else { 0.0 }).collect();
    for (xi, &w) in x.iter_mut().zip(&inv) {
        if w == 0.0 {
            *xi = 0.0;
        }
    }
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats::default());
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = (0..n).map(|i| if inv[i] != 0.0 { b[i] - ax[i] } else { 0.0 }).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, w)| a * w).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / bnorm;
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        if res <= tol {
            return Ok(SolveStats { iterations: it, residual: res });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::numerical("conjugate gradient lost positive definiteness", res));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = dot(&r, &r).sqrt() / bnorm;
        for i in 0..n {
            z[i] = r[i] * inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if res <= tol {
        return Ok(SolveStats { iterations: max_iter, residual: res });
    }
    Err(Error::numerical(format!("conjugate gradient did not converge in {max_iter} iterations"), res))
}

/// Right-preconditioned BiCGSTAB for general complex systems.
pub fn bicgstab(
    mut apply: impl FnMut(&[Complex64], &mut [Complex64]),
    diag: &[Complex64],
    b: &[Complex64],
    x: &mut [Complex64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let zero = Complex64::new(0.0, 0.0);
    let inv: Vec<Complex64> = diag.iter().map(|&d| if d != zero { 1.0 / d } else { zero }).collect();
    for (xi, &w) in x.iter_mut().zip(&inv) {
        if w == zero {
            *xi = zero;
        }
    }
    let bnorm = cnorm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = zero);
        return Ok(SolveStats::default());
    }
    let mut tmp = vec![zero; n];
    apply(x, &mut tmp);
    let mut r: Vec<Complex64> = (0..n).map(|i| if inv[i] != zero { b[i] - tmp[i] } else { zero }).collect();
    let mut res = cnorm(&r) / bnorm;
    if res <= tol {
        return Ok(SolveStats { iterations: 0, residual: res });
    }
    let r_hat = r.clone();
    let mut rho = Complex64::new(1.0, 0.0);
    let mut alpha = Complex64::new(1.0, 0.0);
    let mut omega = Complex64::new(1.0, 0.0);
    let mut v = vec![zero; n];
    let mut p = vec![zero; n];
    let mut y = vec![zero; n];
    let mut s = vec![zero; n];
    let mut zz = vec![zero; n];
    let mut t = vec![zero; n];
    for it in 1..=max_iter {
        let rho_new = cdot(&r_hat, &r);
        if rho_new.norm() == 0.0 || omega.norm() == 0.0 {
            return Err(Error::numerical("BiCGSTAB breakdown", res));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = inv[i] * p[i];
        }
        apply(&y, &mut v);
        let denom = cdot(&r_hat, &v);
        if denom.norm() == 0.0 {
            return Err(Error::numerical("BiCGSTAB breakdown", res));
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let snorm = cnorm(&s) / bnorm;
        if snorm <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(SolveStats { iterations: it, residual: snorm });
        }
        for i in 0..n {
            zz[i] = inv[i] * s[i];
        }
        apply(&zz, &mut t);
        let tt = cdot(&t, &t);
        omega = if tt.norm() == 0.0 { zero } else { cdot(&t, &s) / tt };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zz[i];
            r[i] = s[i] - omega * t[i];
        }
        res = cnorm(&r) / bnorm;
        if !res.is_finite() {
            return Err(Error::numerical("BiCGSTAB produced non-finite residual", res));
        }
        if res <= tol {
            return Ok(SolveStats { iterations: it, residual: res });
        }
    }
    Err(Error::numerical(format!("BiCGSTAB did not converge in {max_iter} iterations"), res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplacian_1d(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0 + 0.1 * i as f64
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn cg_matches_direct_solve() {
        let n = 40;
        let m = laplacian_1d(n);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let diag: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
        let mut x = vec![0.0; n];
        let st = conjugate_gradient(
            |u, out| {
                let r = &m * DVector::from_column_slice(u);
                out.copy_from_slice(r.as_slice());
            },
            &diag,
            &b,
            &mut x,
            1e-12,
            500,
        )
        .unwrap();
        let exact = m.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        let err = (DVector::from_column_slice(&x) - &exact).amax();
        assert!(err < 1e-9, "err {err}, {st:?}");
    }

    #[test]
    fn cg_reports_non_convergence() {
        let m = laplacian_1d(50);
        let b = vec![1.0; 50];
        let diag = vec![1.0; 50];
        let mut x = vec![0.0; 50];
        let err = conjugate_gradient(
            |u, out| out.copy_from_slice((&m * DVector::from_column_slice(u)).as_slice()),
            &diag,
            &b,
            &mut x,
            1e-14,
            3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NumericalFailure { residual, .. } if residual > 0.0));
    }

    #[test]
    fn bicgstab_non_hermitian() {
        let n = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(4.0, 0.5)
            } else if i.abs_diff(j) == 1 {
                Complex64::new(-1.0, 0.3 * (i as f64 - j as f64))
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let b: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let diag: Vec<Complex64> = (0..n).map(|i| m[(i, i)]).collect();
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        bicgstab(
            |u, out| out.copy_from_slice((&m * DVector::from_column_slice(u)).as_slice()),
            &diag,
            &b,
            &mut x,
            1e-12,
            200,
        )
        .unwrap();
        let exact = m.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        assert!((DVector::from_column_slice(&x) - exact).camax() < 1e-9);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let mut x = vec![1.0; 4];
        let st = conjugate_gradient(|u, o| o.copy_from_slice(u), &[1.0; 4], &[0.0; 4], &mut x, 1e-10, 10).unwrap();
        assert_eq!(st.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
