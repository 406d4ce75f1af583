//! Interaction matrix of a family of interior points.
//!
//! For points x_1..x_n inside the domain,
//!
//! ```text
//! m_ii = phi(x_i)          (Robin function)
//! m_ij = -G(x_i, x_j)      (i != j)
//! ```
//!
//! Its lowest eigenvalue rho and the associated Perron vector Lambda
//! drive everything downstream: the sign of rho decides which blow-up
//! regime a configuration is in, and Lambda carries the relative peak
//! heights. The off-diagonal entries of M are negative and the Green
//! function couples every pair, so a large shift of -M is a positive
//! irreducible matrix and Perron-Frobenius makes the lowest eigenvalue
//! simple with a positive eigenvector whenever the arithmetic can see
//! the gap.

use crate::error::{Error, Result};
use crate::greens::GreenEvaluator;
use crate::linalg::sym_eigen;
use crate::vect::{dist, dot, matvec};

/// Points tied to a domain, validated once.
pub struct Configuration<'a> {
    domain: &'a dyn GreenEvaluator,
    points: Vec<Vec<f64>>,
}

/// Lowest eigenpair of the interaction matrix.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Lowest eigenvalue.
    pub rho: f64,
    /// Perron vector, scaled so the first component is 1.
    pub vector: Vec<f64>,
    /// Distance to the second-lowest eigenvalue.
    pub gap: f64,
    /// Full spectrum, ascending.
    pub eigenvalues: Vec<f64>,
}

impl<'a> Configuration<'a> {
    pub fn new(domain: &'a dyn GreenEvaluator, points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::config("need at least one point"));
        }
        let dim = domain.dim();
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::config(format!(
                    "point {i} has dimension {}, domain has {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("point {i} is not finite")));
            }
        }
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if dist(&points[i], &points[j]) == 0.0 {
                    return Err(Error::config(format!("points {i} and {j} coincide")));
                }
            }
        }
        Ok(Configuration { domain, points })
    }

    pub fn domain(&self) -> &dyn GreenEvaluator {
        self.domain
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Assemble M (row-major). Each off-diagonal pair is evaluated once
    /// and mirrored, so the result is symmetric to the last bit.
    pub fn interaction_matrix(&self) -> Result<Vec<f64>> {
        let n = self.n();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = self.domain.robin(&self.points[i])?;
            for j in (i + 1)..n {
                let g = self.domain.green(&self.points[i], &self.points[j])?;
                m[i * n + j] = -g;
                m[j * n + i] = -g;
            }
        }
        Ok(m)
    }

    /// Assemble the coordinate-l derivative companion of M. Row k holds
    /// derivatives with respect to the l-th coordinate of x_k:
    ///
    /// ```text
    /// row k:  diag   d_l phi(x_k)
    ///         j != k -2 d_l^x G(x_k, x_j)
    /// ```
    ///
    /// The factor 2 absorbs the symmetric appearance of x_k in both
    /// slots of G, so for the quadratic form
    ///
    /// ```text
    /// d <kappa, M kappa> / d (x_k)_l = kappa_k (Mtilde^l kappa)_k
    /// ```
    ///
    /// holds without any extra factor. The matrix is not symmetric.
    pub fn interaction_matrix_deriv(&self, l: usize) -> Result<Vec<f64>> {
        let n = self.n();
        if l >= self.dim() {
            return Err(Error::config(format!(
                "coordinate index {l} out of range for dimension {}",
                self.dim()
            )));
        }
        let mut m = vec![0.0; n * n];
        for k in 0..n {
            m[k * n + k] = self.domain.grad_robin(&self.points[k])?[l];
            for j in 0..n {
                if j == k {
                    continue;
                }
                let g = self.domain.grad_x_green(&self.points[k], &self.points[j])?;
                m[k * n + j] = -2.0 * g[l];
            }
        }
        Ok(m)
    }

    pub fn lowest_eig(&self) -> Result<Spectrum> {
        let m = self.interaction_matrix()?;
        perron_lowest(&m, self.n())
    }

    /// Gradient of rho = lambda_min(M) with respect to the points, as a
    /// n x dim table. First-order perturbation theory gives
    ///
    /// ```text
    /// d rho / d (x_k)_l = Lambda_k (Mtilde^l Lambda)_k / <Lambda, Lambda>
    /// ```
    ///
    /// valid while the lowest eigenvalue stays simple.
    pub fn grad_rho(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.n();
        let spec = self.lowest_eig()?;
        let weight = dot(&spec.vector, &spec.vector);
        let mut grad = vec![vec![0.0; self.dim()]; n];
        for l in 0..self.dim() {
            let mt = self.interaction_matrix_deriv(l)?;
            let mv = matvec(&mt, &spec.vector, n);
            for k in 0..n {
                grad[k][l] = spec.vector[k] * mv[k] / weight;
            }
        }
        Ok(grad)
    }
}

/// Lowest eigenpair of a symmetric matrix, with the Perron checks this
/// toolkit relies on: the eigenvalue must be simple relative to the
/// matrix scale, and the eigenvector must have a consistent sign. The
/// vector is rescaled so its first component is 1.
pub fn perron_lowest(m: &[f64], n: usize) -> Result<Spectrum> {
    let (vals, vecs) = sym_eigen(m, n)?;
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let gap = if n > 1 {
        vals[1] - vals[0]
    } else {
        f64::INFINITY
    };
    if gap <= 1e-10 * scale {
        return Err(Error::numerical(format!(
            "lowest eigenvalue is degenerate (gap {gap:.3e}, scale {scale:.3e})"
        )));
    }
    let v = &vecs[0];
    if v[0] == 0.0 {
        return Err(Error::numerical(
            "Perron vector has a vanishing first component",
        ));
    }
    let vector: Vec<f64> = v.iter().map(|x| x / v[0]).collect();
    if vector.iter().any(|&x| x <= 0.0) {
        return Err(Error::numerical(
            "lowest eigenvector changes sign; matrix is not of interaction type",
        ));
    }
    Ok(Spectrum {
        rho: vals[0],
        vector,
        gap,
        eigenvalues: vals,
    })
}

/// Split lambda into its component along the Perron direction and the
/// orthogonal remainder: lambda = t * perron + rest, <rest, perron> = 0.
pub fn decompose_lambda(lambda: &[f64], perron: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(lambda.len(), perron.len());
    let t = dot(lambda, perron) / dot(perron, perron);
    let rest = lambda
        .iter()
        .zip(perron)
        .map(|(a, b)| a - t * b)
        .collect();
    (t, rest)
}
