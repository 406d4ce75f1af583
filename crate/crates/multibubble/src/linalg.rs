//! Dense linear algebra for small symmetric systems.
//!
//! Two independent routes to the lowest eigenpair are kept on purpose:
//! a cyclic Jacobi sweep (dense, all pairs) and a shifted power iteration
//! polished by Rayleigh-quotient inverse iteration. Agreement between
//! them is one of the toolkit's cross-checks, so neither may call into
//! the other.

use crate::error::{Error, Result};
use crate::vect::{dot, matvec, norm};

/// All eigenvalues (ascending) and matching orthonormal eigenvectors of a
/// symmetric matrix, by cyclic Jacobi rotations.
///
/// Eigenvectors are returned as rows of the second output.
pub fn sym_eigen(m: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    assert_eq!(m.len(), n * n);
    let mut a = m.to_vec();
    // v accumulates rotations; starts as identity.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += a[i * n + j] * a[i * n + j];
            }
        }
        s.sqrt()
    };
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);

    let mut sweeps = 0;
    while off(&a) > 1e-15 * scale {
        sweeps += 1;
        if sweeps > 60 {
            return Err(Error::numerical("Jacobi iteration did not converge"));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[i * n + p];
                    let aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[p * n + j];
                    let aqj = a[q * n + j];
                    a[p * n + j] = c * apj - s * aqj;
                    a[q * n + j] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].partial_cmp(&a[j * n + j]).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let eigvecs: Vec<Vec<f64>> = order
        .iter()
        .map(|&j| (0..n).map(|i| v[i * n + j]).collect())
        .collect();
    Ok((eigvals, eigvecs))
}

/// Lowest eigenpair by shifted power iteration on c*I - M (c larger than
/// any eigenvalue by Gershgorin), refined with Rayleigh-quotient inverse
/// iteration. Independent of `sym_eigen`.
pub fn lowest_eig_iterative(m: &[f64], n: usize) -> Result<(f64, Vec<f64>)> {
    assert_eq!(m.len(), n * n);
    if n == 1 {
        return Ok((m[0], vec![1.0]));
    }
    let c = (0..n)
        .map(|i| (0..n).map(|j| m[i * n + j].abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
        + 1.0;

    // Power iteration on the shifted matrix; its dominant eigenvector is
    // the lowest eigenvector of M.
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.3 * ((i * 7 + 3) % 11) as f64 / 11.0)
        .collect();
    let nrm = norm(&x);
    x.iter_mut().for_each(|v| *v /= nrm);
    let mut lambda = 0.0;
    for _ in 0..5000 {
        let mut y = matvec(m, &x, n);
        for i in 0..n {
            y[i] = c * x[i] - y[i];
        }
        let ny = norm(&y);
        if ny == 0.0 {
            return Err(Error::numerical("power iteration hit a null vector"));
        }
        y.iter_mut().for_each(|v| *v /= ny);
        let delta: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).abs().min((a + b).abs()))
            .sum();
        x = y;
        lambda = dot(&x, &matvec(m, &x, n));
        if delta < 1e-13 {
            break;
        }
    }

    // Rayleigh-quotient inverse iteration to polish. Near convergence the
    // shifted system is almost singular; LU with partial pivoting still
    // delivers a usable direction.
    for _ in 0..8 {
        let mut shifted = m.to_vec();
        for i in 0..n {
            shifted[i * n + i] -= lambda;
        }
        let sol = match lu_solve(&shifted, &x, n) {
            Ok(s) => s,
            Err(_) => break, // exactly singular: lambda is already exact
        };
        let ns = norm(&sol);
        if !ns.is_finite() || ns == 0.0 {
            break;
        }
        for i in 0..n {
            x[i] = sol[i] / ns;
        }
        let new_lambda = dot(&x, &matvec(m, &x, n));
        let step = (new_lambda - lambda).abs();
        lambda = new_lambda;
        if step < 1e-15 * (1.0 + lambda.abs()) {
            break;
        }
    }
    Ok((lambda, x))
}

/// Solve A x = b by LU with partial pivoting. A is row-major n x n.
pub fn lu_solve(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    let mut lu = a.to_vec();
    let mut x = b.to_vec();
    let mut piv: Vec<usize> = (0..n).collect();

    for k in 0..n {
        let mut p = k;
        let mut max = lu[piv[k] * n + k].abs();
        for i in (k + 1)..n {
            let v = lu[piv[i] * n + k].abs();
            if v > max {
                max = v;
                p = i;
            }
        }
        if max < 1e-300 {
            return Err(Error::numerical("singular matrix in LU factorization"));
        }
        piv.swap(k, p);
        let pk = piv[k];
        for i in (k + 1)..n {
            let pi = piv[i];
            let l = lu[pi * n + k] / lu[pk * n + k];
            lu[pi * n + k] = l;
            for j in (k + 1)..n {
                lu[pi * n + j] -= l * lu[pk * n + j];
            }
        }
    }

    // Forward and back substitution in pivot order.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = x[piv[i]];
        for j in 0..i {
            s -= lu[piv[i] * n + j] * y[j];
        }
        y[i] = s;
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for j in (i + 1)..n {
            s -= lu[piv[i] * n + j] * x[j];
        }
        x[i] = s / lu[piv[i] * n + i];
    }
    Ok(x)
}
