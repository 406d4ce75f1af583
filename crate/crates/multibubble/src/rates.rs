//! Blow-up speed prediction from the reduced energy.
//!
//! At leading order the energy of a multibubble configuration is a
//! finite-dimensional function of the bubble heights kappa > 0 and the
//! concentration points x:
//!
//! ```text
//! F(kappa, x) = 1/2 <kappa, M(x) kappa>
//!             + d_N (N-2)/4 sum_i V(x_i) kappa_i^{4/(N-2)}
//! ```
//!
//! with M the interaction matrix and d_N the potential-term constant.
//! Concentration requires the lowest eigenvalue rho of M to be
//! nonnegative, and the speeds obey
//!
//! ```text
//! N >= 5: mu_i = eps^{1/(N-4)} kappa_i^{2/(N-2)},  kappa stationary in F
//! N = 4:  mu   = exp(-kappa_0 / eps)
//! ```
//!
//! where kappa_0 is the unique zero of the strictly decreasing map
//! kappa -> lambda_min(M - kappa diag(|V(x_i)|) / (8 pi^2)). In the
//! borderline case rho = 0 only one-sided bounds survive; the
//! prediction then carries the eigenvector direction and the bound as
//! metadata.

use std::cell::Cell;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greens::GreenEvaluator;
use crate::interaction::{perron_lowest, Configuration};
use crate::linalg::{lu_solve, sym_eigen};
use crate::profiles::constants;
use crate::vect::{dot, matvec, norm};

/// Relative threshold on |rho| below which a configuration counts as
/// degenerate. Scaled by the largest eigenvalue magnitude of M.
const DEGENERACY_REL_TOL: f64 = 1e-8;

/// Positivity floor for the height iteration.
const KAPPA_FLOOR: f64 = 1e-12;

/// Zero-order potential V. The theory requires V < 0 at every
/// concentration point; evaluation is unrestricted but the energy
/// operations reject configurations where V is not strictly negative.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Potential {
    /// Spatially constant potential.
    Const { value: f64 },
    /// Sum of monomials coeff * prod_l x_l^powers[l].
    Polynomial { terms: Vec<Monomial> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    /// One exponent per coordinate.
    pub powers: Vec<u32>,
}

impl Potential {
    pub fn constant(value: f64) -> Self {
        Potential::Const { value }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Potential::Const { value } => {
                if !value.is_finite() {
                    return Err(Error::config("potential value is not finite"));
                }
            }
            Potential::Polynomial { terms } => {
                for (i, t) in terms.iter().enumerate() {
                    if !t.coeff.is_finite() {
                        return Err(Error::config(format!(
                            "potential term {i} has a non-finite coefficient"
                        )));
                    }
                    if t.powers.len() != dim {
                        return Err(Error::config(format!(
                            "potential term {i} has {} exponents, need {dim}",
                            t.powers.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Potential::Const { value } => *value,
            Potential::Polynomial { terms } => terms
                .iter()
                .map(|t| {
                    t.coeff
                        * x.iter()
                            .zip(&t.powers)
                            .map(|(xi, p)| xi.powi(*p as i32))
                            .product::<f64>()
                })
                .sum(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Potential::Const { .. } => vec![0.0; x.len()],
            Potential::Polynomial { terms } => {
                let mut g = vec![0.0; x.len()];
                for t in terms {
                    for j in 0..x.len() {
                        let pj = t.powers[j];
                        if pj == 0 {
                            continue;
                        }
                        let mut v = t.coeff * pj as f64 * x[j].powi(pj as i32 - 1);
                        for (l, (xl, p)) in x.iter().zip(&t.powers).enumerate() {
                            if l != j {
                                v *= xl.powi(*p as i32);
                            }
                        }
                        g[j] += v;
                    }
                }
                g
            }
        }
    }
}

/// Predicted blow-up law for a fixed configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RatePrediction {
    pub dim: usize,
    pub regime: RateRegime,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "law")]
pub enum RateRegime {
    /// N >= 5, rho > 0: mu_i = eps^{1/(N-4)} kappa_i^{2/(N-2)}.
    PowerLaw {
        /// Selected stationary heights (lowest energy, then
        /// lexicographic, among the roots found).
        kappa: Vec<f64>,
        /// Largest residual of the stationarity system at `kappa`.
        residual: f64,
        /// Whether multi-start found a single root.
        unique: bool,
        /// All distinct roots found, in selection order.
        roots: Vec<Vec<f64>>,
    },
    /// N = 4: mu = exp(-kappa_0 / eps), direction lambda_0.
    LogLaw { kappa0: f64, lambda0: Vec<f64> },
    /// |rho| below the degeneracy tolerance: only the eigenvector
    /// direction and an upper bound survive; no pointwise law.
    Degenerate {
        rho_residual: f64,
        lambda0: Vec<f64>,
        /// Human-readable form of the surviving bound.
        bound: String,
    },
}

/// One sample of the leading-order speed law.
#[derive(Debug, Clone, Serialize)]
pub struct MuSample {
    pub eps: f64,
    pub mu: Vec<f64>,
}

/// Result of the stationary-configuration search.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalPoint {
    /// Heights at the critical point (N >= 5), or eigen-direction
    /// weights normalized to first component 1 (N = 4).
    pub kappa: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub value: f64,
    pub grad_norm: f64,
    /// N = 4 only: eigenvalue root at the returned points.
    pub kappa0: Option<f64>,
    pub inertia: Inertia,
    pub iterations: usize,
}

/// Sign counts of the Hessian spectrum at a critical point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Inertia {
    pub neg: usize,
    pub zero: usize,
    pub pos: usize,
}

/// The reduced energy over a fixed domain and potential.
pub struct ReducedEnergy<'a> {
    domain: &'a dyn GreenEvaluator,
    potential: Potential,
}

impl<'a> ReducedEnergy<'a> {
    pub fn new(domain: &'a dyn GreenEvaluator, potential: Potential) -> Result<Self> {
        potential.validate(domain.dim())?;
        Ok(ReducedEnergy { domain, potential })
    }

    pub fn domain(&self) -> &dyn GreenEvaluator {
        self.domain
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Interaction matrix and potential values, with the sign check.
    fn assemble(&self, points: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let config = Configuration::new(self.domain, points.to_vec())?;
        let m = config.interaction_matrix()?;
        let v = self.potential_values(points)?;
        Ok((m, v))
    }

    fn potential_values(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let vi = self.potential.value(p);
            if !(vi < 0.0) {
                return Err(Error::config(format!(
                    "potential is {vi} at point {i}; the theory needs V < 0"
                )));
            }
            v.push(vi);
        }
        Ok(v)
    }

    fn check_kappa(kappa: &[f64], n: usize) -> Result<()> {
        if kappa.len() != n {
            return Err(Error::config(format!(
                "got {} heights for {n} points",
                kappa.len()
            )));
        }
        if kappa.iter().any(|&k| !(k > 0.0) || !k.is_finite()) {
            return Err(Error::config("heights must be positive and finite"));
        }
        Ok(())
    }

    fn d_n(&self) -> Result<f64> {
        if self.dim() == 4 {
            return Err(Error::not_defined(
                "the dimension-4 energy involves the eigenvalue root kappa_0; \
                 use predict or the log-law form",
            ));
        }
        Ok(constants(self.dim())?.d_n)
    }

    /// F(kappa, x).
    pub fn value(&self, kappa: &[f64], points: &[Vec<f64>]) -> Result<f64> {
        Self::check_kappa(kappa, points.len())?;
        let d_n = self.d_n()?;
        let (m, v) = self.assemble(points)?;
        Ok(self.value_inner(kappa, &m, &v, d_n))
    }

    fn value_inner(&self, kappa: &[f64], m: &[f64], v: &[f64], d_n: f64) -> f64 {
        let n = kappa.len();
        let nf = self.dim() as f64;
        let beta = 4.0 / (nf - 2.0);
        let mk = matvec(m, kappa, n);
        let quad = 0.5 * dot(kappa, &mk);
        let pot: f64 = (0..n).map(|i| v[i] * kappa[i].powf(beta)).sum();
        quad + d_n * (nf - 2.0) / 4.0 * pot
    }

    /// Both gradient blocks of F: with respect to the heights and with
    /// respect to the points, computed by exact differentiation.
    ///
    /// ```text
    /// dF/dkappa_k  = (M kappa)_k + d_N V(x_k) kappa_k^{(6-N)/(N-2)}
    /// dF/d(x_k)_l  = 1/2 kappa_k (Mtilde^l kappa)_k
    ///              + d_N (N-2)/4 d_l V(x_k) kappa_k^{4/(N-2)}
    /// ```
    pub fn grad(&self, kappa: &[f64], points: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        Self::check_kappa(kappa, points.len())?;
        let d_n = self.d_n()?;
        let n = points.len();
        let nf = self.dim() as f64;
        let beta = 4.0 / (nf - 2.0);
        let config = Configuration::new(self.domain, points.to_vec())?;
        let m = config.interaction_matrix()?;
        let v = self.potential_values(points)?;

        let mk = matvec(&m, kappa, n);
        let mut gk = vec![0.0; n];
        for k in 0..n {
            gk[k] = mk[k] + d_n * v[k] * kappa[k].powf(beta - 1.0);
        }

        let mut gx = vec![vec![0.0; self.dim()]; n];
        for l in 0..self.dim() {
            let mt = config.interaction_matrix_deriv(l)?;
            let mtk = matvec(&mt, kappa, n);
            for k in 0..n {
                let dv = self.potential.gradient(&points[k])[l];
                gx[k][l] = 0.5 * kappa[k] * mtk[k]
                    + d_n * (nf - 2.0) / 4.0 * dv * kappa[k].powf(beta);
            }
        }
        Ok((gk, gx))
    }

    /// Classify the configuration and compute its speed law.
    pub fn predict(&self, points: &[Vec<f64>]) -> Result<RatePrediction> {
        let (m, v) = self.assemble(points)?;
        let n = points.len();
        let dim = self.dim();
        let spec = perron_lowest(&m, n)?;
        let scale = spec
            .eigenvalues
            .iter()
            .fold(f64::MIN_POSITIVE, |a, &e| a.max(e.abs()));
        let tol = DEGENERACY_REL_TOL * scale;

        if spec.rho < -tol {
            return Err(Error::infeasible(format!(
                "lowest interaction eigenvalue {:.3e} is negative; \
                 no concentration can occur at this configuration",
                spec.rho
            )));
        }
        if spec.rho.abs() <= tol {
            let bound = if dim >= 5 {
                format!("eps * mu^-(N-4) = O(mu^2), N = {dim}")
            } else {
                "eps * ln(1/mu) = O(mu^2)".to_string()
            };
            return Ok(RatePrediction {
                dim,
                regime: RateRegime::Degenerate {
                    rho_residual: spec.rho,
                    lambda0: spec.vector,
                    bound,
                },
            });
        }

        if dim == 4 {
            let weights: Vec<f64> = v.iter().map(|vi| vi.abs() / (8.0 * PI * PI)).collect();
            let kappa0 = eigen_shift_root(&m, &weights, n)?;
            let shifted = shift_matrix(&m, &weights, n, kappa0);
            let spec0 = perron_lowest(&shifted, n)?;
            return Ok(RatePrediction {
                dim,
                regime: RateRegime::LogLaw {
                    kappa0,
                    lambda0: spec0.vector,
                },
            });
        }

        let d_n = constants(dim)?.d_n;
        let (roots, residual) = stationary_heights(&m, &v, n, dim, d_n)?;
        if dim >= 6 && roots.len() > 1 {
            return Err(Error::numerical(format!(
                "found {} distinct stationary heights in dimension {dim}; \
                 the system is strictly convex there and admits one",
                roots.len()
            )));
        }
        let unique = roots.len() == 1;
        let mut sorted = roots;
        sorted.sort_by(|a, b| {
            let fa = self.value_inner(a, &m, &v, d_n);
            let fb = self.value_inner(b, &m, &v, d_n);
            fa.partial_cmp(&fb)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| {
                    for (x, y) in a.iter().zip(b) {
                        match x.partial_cmp(y) {
                            Some(std::cmp::Ordering::Equal) | None => continue,
                            Some(o) => return o,
                        }
                    }
                    std::cmp::Ordering::Equal
                })
        });
        Ok(RatePrediction {
            dim,
            regime: RateRegime::PowerLaw {
                kappa: sorted[0].clone(),
                residual,
                unique,
                roots: sorted,
            },
        })
    }

    /// Search for a stationary configuration of the energy starting
    /// from `x_init`, moving heights and points jointly (N >= 5) or
    /// the eigen-direction weights and points with the root kappa_0
    /// refreshed once per step (N = 4).
    pub fn critical_config_search(&self, x_init: &[Vec<f64>]) -> Result<CriticalPoint> {
        if self.dim() == 4 {
            self.search_log_law(x_init)
        } else {
            self.search_power_law(x_init)
        }
    }

    fn search_power_law(&self, x_init: &[Vec<f64>]) -> Result<CriticalPoint> {
        let n = x_init.len();
        let dim = self.dim();
        let d_n = self.d_n()?;
        let (m0, v0) = self.assemble(x_init)?;

        // Height seed: the stationary heights at the starting points
        // when they exist, otherwise the decoupled one-bubble formula.
        let kappa0 = match self.predict(x_init) {
            Ok(RatePrediction {
                regime: RateRegime::PowerLaw { kappa, .. },
                ..
            }) => kappa,
            _ => (0..n)
                .map(|i| seed_height(m0[i * n + i], v0[i].abs(), d_n, dim))
                .collect(),
        };

        let mut z0 = kappa0;
        for p in x_init {
            z0.extend_from_slice(p);
        }

        let scale = self.domain.length_scale();
        let objective = |z: &[f64]| -> Option<f64> {
            let (kappa, pts) = split_heights(z, n, dim);
            if kappa.iter().any(|&k| k <= 0.0) || too_close(&pts, scale) {
                return None;
            }
            let (m, v) = self.assemble(&pts).ok()?;
            Some(self.value_inner(&kappa, &m, &v, d_n))
        };
        let refresh = |z: &[f64]| -> Option<(f64, Vec<f64>)> {
            let (kappa, pts) = split_heights(z, n, dim);
            if kappa.iter().any(|&k| k <= 0.0) || too_close(&pts, scale) {
                return None;
            }
            let f = self.value(&kappa, &pts).ok()?;
            let (gk, gx) = self.grad(&kappa, &pts).ok()?;
            let mut g = gk;
            for row in gx {
                g.extend_from_slice(&row);
            }
            Some((f, g))
        };

        let out = bfgs_descent(z0, refresh, objective, 1e-8, 1000)?;
        let (kappa, pts) = split_heights(&out.z, n, dim);
        let inertia = hessian_inertia(&out.z, |z| {
            let (kappa, pts) = split_heights(z, n, dim);
            let (gk, gx) = self.grad(&kappa, &pts).ok()?;
            let mut g = gk;
            for row in gx {
                g.extend_from_slice(&row);
            }
            Some(g)
        })?;
        Ok(CriticalPoint {
            kappa,
            points: pts,
            value: out.f,
            grad_norm: out.grad_norm,
            kappa0: None,
            inertia,
            iterations: out.iterations,
        })
    }

    fn search_log_law(&self, x_init: &[Vec<f64>]) -> Result<CriticalPoint> {
        let n = x_init.len();
        let dim = self.dim();
        let lambda_init = match self.predict(x_init) {
            Ok(RatePrediction {
                regime: RateRegime::LogLaw { lambda0, .. },
                ..
            }) => lambda0,
            _ => vec![1.0; n],
        };

        // Unknowns: lambda_2..lambda_n (gauge lambda_1 = 1), then the
        // points. kappa_0 is re-solved at the start of every step and
        // held fixed through its line search.
        let mut z0: Vec<f64> = lambda_init[1..].to_vec();
        for p in x_init {
            z0.extend_from_slice(p);
        }

        let scale = self.domain.length_scale();
        let kappa0_cell = Cell::new(f64::NAN);

        let eval_fixed = |z: &[f64], kappa0: f64| -> Option<f64> {
            let (lambda, pts) = split_weights(z, n, dim);
            if too_close(&pts, scale) {
                return None;
            }
            let (m, v) = self.assemble(&pts).ok()?;
            let weights: Vec<f64> = v.iter().map(|vi| vi.abs() / (8.0 * PI * PI)).collect();
            let shifted = shift_matrix(&m, &weights, n, kappa0);
            let sl = matvec(&shifted, &lambda, n);
            Some(0.5 * dot(&lambda, &sl))
        };
        let objective = |z: &[f64]| eval_fixed(z, kappa0_cell.get());

        let grad_fixed = |z: &[f64], kappa0: f64| -> Option<Vec<f64>> {
            let (lambda, pts) = split_weights(z, n, dim);
            if too_close(&pts, scale) {
                return None;
            }
            let config = Configuration::new(self.domain, pts.clone()).ok()?;
            let m = config.interaction_matrix().ok()?;
            let v = self.potential_values(&pts).ok()?;
            let weights: Vec<f64> = v.iter().map(|vi| vi.abs() / (8.0 * PI * PI)).collect();
            let shifted = shift_matrix(&m, &weights, n, kappa0);
            let sl = matvec(&shifted, &lambda, n);
            let mut g: Vec<f64> = sl[1..].to_vec();
            for l in 0..dim {
                let mt = config.interaction_matrix_deriv(l).ok()?;
                let mtl = matvec(&mt, &lambda, n);
                for k in 0..n {
                    let dv = self.potential.gradient(&pts[k])[l];
                    g.push(
                        0.5 * lambda[k] * mtl[k]
                            + kappa0 / 2.0 * dv / (8.0 * PI * PI) * lambda[k] * lambda[k],
                    );
                }
            }
            Some(g)
        };

        let refresh = |z: &[f64]| -> Option<(f64, Vec<f64>)> {
            let (_, pts) = split_weights(z, n, dim);
            if too_close(&pts, scale) {
                return None;
            }
            let (m, v) = self.assemble(&pts).ok()?;
            let weights: Vec<f64> = v.iter().map(|vi| vi.abs() / (8.0 * PI * PI)).collect();
            let kappa0 = eigen_shift_root(&m, &weights, n).ok()?;
            kappa0_cell.set(kappa0);
            let f = eval_fixed(z, kappa0)?;
            let g = grad_fixed(z, kappa0)?;
            Some((f, g))
        };

        let out = bfgs_descent(z0, refresh, objective, 1e-8, 1000)?;
        let (lambda, pts) = split_weights(&out.z, n, dim);
        let kappa0 = kappa0_cell.get();
        // Inertia of the gradient field that was driven to zero, with
        // the root refreshed at every probe.
        let inertia = hessian_inertia(&out.z, |z| {
            let (_, pts) = split_weights(z, n, dim);
            let (m, v) = self.assemble(&pts).ok()?;
            let weights: Vec<f64> = v.iter().map(|vi| vi.abs() / (8.0 * PI * PI)).collect();
            let k0 = eigen_shift_root(&m, &weights, n).ok()?;
            grad_fixed(z, k0)
        })?;
        Ok(CriticalPoint {
            kappa: lambda,
            points: pts,
            value: out.f,
            grad_norm: out.grad_norm,
            kappa0: Some(kappa0),
            inertia,
            iterations: out.iterations,
        })
    }
}

/// Leading-order speeds at a given eps. Degenerate predictions carry
/// no law, only bounds, and are rejected here.
pub fn mu_law(pred: &RatePrediction, eps: f64) -> Result<MuSample> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::config("eps must be positive and finite"));
    }
    let mu = match &pred.regime {
        RateRegime::PowerLaw { kappa, .. } => {
            let nf = pred.dim as f64;
            let e = 1.0 / (nf - 4.0);
            kappa
                .iter()
                .map(|k| eps.powf(e) * k.powf(2.0 / (nf - 2.0)))
                .collect()
        }
        RateRegime::LogLaw { kappa0, lambda0 } => {
            vec![(-kappa0 / eps).exp(); lambda0.len()]
        }
        RateRegime::Degenerate { bound, .. } => {
            return Err(Error::not_defined(format!(
                "no pointwise law in the degenerate regime; only {bound}"
            )));
        }
    };
    Ok(MuSample { eps, mu })
}

/// Lowest eigenvalue of M - kappa * diag(weights). Strictly
/// decreasing in kappa whenever the weights are positive.
pub fn shifted_lowest(m: &[f64], weights: &[f64], n: usize, kappa: f64) -> Result<f64> {
    let shifted = shift_matrix(m, weights, n, kappa);
    let (eigs, _) = sym_eigen(&shifted, n)?;
    Ok(eigs[0])
}

fn shift_matrix(m: &[f64], weights: &[f64], n: usize, kappa: f64) -> Vec<f64> {
    let mut s = m.to_vec();
    for i in 0..n {
        s[i * n + i] -= kappa * weights[i];
    }
    s
}

/// Unique zero of kappa -> lambda_min(M - kappa diag(weights)),
/// assuming lambda_min(M) > 0. Bracketing plus bisection; the map is
/// strictly decreasing so the root is simple.
fn eigen_shift_root(m: &[f64], weights: &[f64], n: usize) -> Result<f64> {
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::config("shift weights must be positive"));
    }
    let f0 = shifted_lowest(m, weights, n, 0.0)?;
    if !(f0 > 0.0) {
        return Err(Error::infeasible(format!(
            "lowest eigenvalue {f0:.3e} at kappa = 0 is not positive; no root"
        )));
    }
    let mut hi = 1.0;
    let mut f_hi = shifted_lowest(m, weights, n, hi)?;
    let mut grow = 0;
    while f_hi > 0.0 {
        hi *= 2.0;
        f_hi = shifted_lowest(m, weights, n, hi)?;
        grow += 1;
        if grow > 200 {
            return Err(Error::numerical("eigenvalue root bracket did not close"));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = shifted_lowest(m, weights, n, mid)?;
        if f_mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One-bubble height scale from the diagonal entry alone; used to
/// seed the coupled iteration.
fn seed_height(m_ii: f64, v_abs: f64, d_n: f64, dim: usize) -> f64 {
    let nf = dim as f64;
    (d_n * v_abs / m_ii).powf((nf - 2.0) / (2.0 * (nf - 4.0)))
}

/// All distinct solutions of (M kappa)_i = -d_N V(x_i) kappa_i^{-q},
/// q = (N-6)/(N-2), found by damped Newton from eight log-spaced
/// scalings of the one-bubble seed. The branches are independent and
/// run concurrently; the merge order is fixed by the seed index, so
/// the result is deterministic.
fn stationary_heights(
    m: &[f64],
    v: &[f64],
    n: usize,
    dim: usize,
    d_n: f64,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let nf = dim as f64;
    let q = (nf - 6.0) / (nf - 2.0);
    let base: Vec<f64> = (0..n)
        .map(|i| seed_height(m[i * n + i], v[i].abs(), d_n, dim))
        .collect();

    let results: Vec<Option<(Vec<f64>, f64)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|j| {
                let base = &base;
                s.spawn(move || {
                    let scale = 10f64.powf(-1.5 + 3.0 * j as f64 / 7.0);
                    let seed: Vec<f64> = base.iter().map(|b| scale * b).collect();
                    newton_heights(m, v, n, q, d_n, seed)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let mut roots: Vec<Vec<f64>> = Vec::new();
    let mut worst = 0.0f64;
    for (kappa, res) in results.into_iter().flatten() {
        if res > 1e-10 {
            continue;
        }
        let known = roots.iter().any(|r| {
            r.iter()
                .zip(&kappa)
                .all(|(a, b)| (a - b).abs() <= 1e-8 * (1.0 + a.abs()))
        });
        if !known {
            roots.push(kappa);
            worst = worst.max(res);
        }
    }
    if roots.is_empty() {
        return Err(Error::numerical(
            "height iteration did not converge from any start",
        ));
    }
    Ok((roots, worst))
}

/// Damped Newton iteration on g(kappa) = M kappa - d_N |V| kappa^{-q}
/// with backtracking and the positivity floor. Returns the root and
/// the final residual, or None if the iteration stalls.
fn newton_heights(
    m: &[f64],
    v: &[f64],
    n: usize,
    q: f64,
    d_n: f64,
    mut kappa: Vec<f64>,
) -> Option<(Vec<f64>, f64)> {
    let residual = |kappa: &[f64]| -> Vec<f64> {
        let mk = matvec(m, kappa, n);
        (0..n)
            .map(|i| mk[i] - d_n * v[i].abs() * kappa[i].powf(-q))
            .collect()
    };
    let res_norm = |g: &[f64]| g.iter().fold(0.0f64, |a, &x| a.max(x.abs()));

    let mut g = residual(&kappa);
    for _ in 0..200 {
        let gn = res_norm(&g);
        if gn <= 1e-13 {
            return Some((kappa, gn));
        }
        let mut jac = m.to_vec();
        for i in 0..n {
            jac[i * n + i] += q * d_n * v[i].abs() * kappa[i].powf(-q - 1.0);
        }
        let delta = lu_solve(&jac, &g, n).ok()?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = kappa
                .iter()
                .zip(&delta)
                .map(|(k, d)| (k - t * d).max(KAPPA_FLOOR))
                .collect();
            let gt = residual(&trial);
            if res_norm(&gt) < gn {
                kappa = trial;
                g = gt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    let gn = res_norm(&g);
    if gn <= 1e-13 {
        Some((kappa, gn))
    } else {
        None
    }
}

fn split_heights(z: &[f64], n: usize, dim: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let kappa = z[..n].to_vec();
    let pts = z[n..].chunks(dim).map(|c| c.to_vec()).collect();
    (kappa, pts)
}

fn split_weights(z: &[f64], n: usize, dim: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut lambda = Vec::with_capacity(n);
    lambda.push(1.0);
    lambda.extend_from_slice(&z[..n - 1]);
    let pts = z[n - 1..].chunks(dim).map(|c| c.to_vec()).collect();
    (lambda, pts)
}

fn too_close(pts: &[Vec<f64>], scale: f64) -> bool {
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let d: f64 = pts[i]
                .iter()
                .zip(&pts[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if d < 1e-8 * scale {
                return true;
            }
        }
    }
    false
}

struct DescentOutcome {
    z: Vec<f64>,
    f: f64,
    grad_norm: f64,
    iterations: usize,
}

/// BFGS descent with backtracking line search. `refresh` evaluates
/// value and gradient at an accepted iterate (and may update internal
/// state, like the N = 4 eigenvalue root); `objective` evaluates trial
/// points cheaply at the current state. `None` from either marks the
/// point infeasible.
fn bfgs_descent(
    z0: Vec<f64>,
    mut refresh: impl FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
    mut objective: impl FnMut(&[f64]) -> Option<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DescentOutcome> {
    let d = z0.len();
    let mut z = z0;
    let (mut f, mut g) = refresh(&z).ok_or_else(|| {
        Error::config("search start is not an admissible configuration")
    })?;

    let gamma = 1.0 / norm(&g).max(1.0);
    let mut h: Vec<f64> = (0..d * d)
        .map(|idx| if idx % (d + 1) == 0 { gamma } else { 0.0 })
        .collect();

    for iter in 0..max_iter {
        let gn = norm(&g);
        if gn <= tol {
            return Ok(DescentOutcome {
                z,
                f,
                grad_norm: gn,
                iterations: iter,
            });
        }

        let mut p = matvec(&h, &g, d);
        for x in &mut p {
            *x = -*x;
        }
        let mut slope = dot(&p, &g);
        if slope >= 0.0 {
            // Curvature information went bad; restart from scaled
            // steepest descent.
            for (idx, x) in h.iter_mut().enumerate() {
                *x = if idx % (d + 1) == 0 { gamma } else { 0.0 };
            }
            p = g.iter().map(|x| -gamma * x).collect();
            slope = dot(&p, &g);
        }

        let mut t = 1.0;
        let mut step: Option<(Vec<f64>, f64, Vec<f64>)> = None;
        let mut any_feasible = false;
        for _ in 0..60 {
            let trial: Vec<f64> = z.iter().zip(&p).map(|(a, b)| a + t * b).collect();
            if let Some(ft) = objective(&trial) {
                any_feasible = true;
                if ft <= f + 1e-4 * t * slope {
                    if let Some((fr, gr)) = refresh(&trial) {
                        step = Some((trial, fr, gr));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let Some((z_new, f_new, g_new)) = step else {
            if !any_feasible {
                return Err(Error::numerical(format!(
                    "search left the admissible set at iteration {iter} \
                     (collision or boundary exit); gradient norm {gn:.3e}"
                )));
            }
            return Err(Error::numerical(format!(
                "line search stalled at iteration {iter} with gradient norm {gn:.3e}"
            )));
        };

        let s: Vec<f64> = z_new.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            // h <- (I - s y^T / sy) h (I - y s^T / sy) + s s^T / sy
            let hy = matvec(&h, &y, d);
            let yhy = dot(&y, &hy);
            let c = (sy + yhy) / (sy * sy);
            for i in 0..d {
                for j in 0..d {
                    h[i * d + j] += c * s[i] * s[j]
                        - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        z = z_new;
        f = f_new;
        g = g_new;
    }
    Err(Error::numerical(format!(
        "no critical point within {max_iter} iterations; gradient norm {:.3e}",
        norm(&g)
    )))
}

/// Inertia of the symmetrized finite-difference Jacobian of a
/// gradient field at a point.
fn hessian_inertia(
    z: &[f64],
    mut grad: impl FnMut(&[f64]) -> Option<Vec<f64>>,
) -> Result<Inertia> {
    let d = z.len();
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        let hstep = 1e-5 * (1.0 + z[i].abs());
        let mut zp = z.to_vec();
        zp[i] += hstep;
        let mut zm = z.to_vec();
        zm[i] -= hstep;
        let gp = grad(&zp)
            .ok_or_else(|| Error::numerical("curvature probe left the admissible set"))?;
        let gm = grad(&zm)
            .ok_or_else(|| Error::numerical("curvature probe left the admissible set"))?;
        for j in 0..d {
            a[j * d + i] = (gp[j] - gm[j]) / (2.0 * hstep);
        }
    }
    let mut sym = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            sym[i * d + j] = 0.5 * (a[i * d + j] + a[j * d + i]);
        }
    }
    let (eigs, _) = sym_eigen(&sym, d)?;
    let emax = eigs.iter().fold(0.0f64, |acc, &e| acc.max(e.abs()));
    let zero_tol = 1e-6 * emax.max(f64::MIN_POSITIVE);
    let mut inertia = Inertia {
        neg: 0,
        zero: 0,
        pos: 0,
    };
    for e in eigs {
        if e < -zero_tol {
            inertia.neg += 1;
        } else if e > zero_tol {
            inertia.pos += 1;
        } else {
            inertia.zero += 1;
        }
    }
    Ok(inertia)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::BallDomain;

    fn ball(dim: usize) -> BallDomain {
        BallDomain::unit_ball(dim).unwrap()
    }

    fn center(dim: usize) -> Vec<Vec<f64>> {
        vec![vec![0.0; dim]]
    }

    #[test]
    fn six_dimensional_single_bubble_closed_form() {
        // Exponent 4/(N-2) = 1: F = 1/2 phi kappa^2 + d_6 V kappa with
        // minimizer kappa = d_6 |V| / phi(0). On the unit ball
        // phi(0) = 1/(4 pi^3) and d_6 = 1/(192 pi^3), so kappa = 1/48.
        let dom = ball(6);
        let energy = ReducedEnergy::new(&dom, Potential::constant(-1.0)).unwrap();
        let pred = energy.predict(&center(6)).unwrap();
        let RateRegime::PowerLaw {
            kappa,
            residual,
            unique,
            ..
        } = &pred.regime
        else {
            panic!("expected a power law");
        };
        assert!(unique);
        assert!((kappa[0] - 1.0 / 48.0).abs() < 1e-12, "kappa = {}", kappa[0]);
        assert!(*residual <= 1e-10);

        let phi = dom.robin(&vec![0.0; 6]).unwrap();
        let d6 = constants(6).unwrap().d_n;
        let k = kappa[0];
        let f = energy.value(&[k], &center(6)).unwrap();
        assert!((f - (0.5 * phi * k * k - d6 * k)).abs() < 1e-16);

        // eps mu^{-(N-4)} = kappa^{-2(N-4)/(N-2)} under the law.
        let sample = mu_law(&pred, 3e-4).unwrap();
        let lhs = 3e-4 * sample.mu[0].powi(-2);
        assert!((lhs - k.powf(-1.0)).abs() < 1e-9 * lhs);
    }

    #[test]
    fn five_dimensional_center_matches_algebra() {
        // phi(0) kappa = d_5 kappa^{1/3} on the unit ball gives
        // kappa = (d_5 / phi(0))^{3/2} = (pi/24)^{3/2} and the limit
        // eps / mu = kappa^{-2/3} = 24/pi.
        let dom = ball(5);
        let energy = ReducedEnergy::new(&dom, Potential::constant(-1.0)).unwrap();
        let pred = energy.predict(&center(5)).unwrap();
        let RateRegime::PowerLaw { kappa, unique, .. } = &pred.regime else {
            panic!("expected a power law");
        };
        assert!(unique);
        let expect = (std::f64::consts::PI / 24.0).powf(1.5);
        assert!((kappa[0] - expect).abs() < 1e-13);

        let sample = mu_law(&pred, 1e-3).unwrap();
        assert!((sample.mu[0] - 1e-3 * std::f64::consts::PI / 24.0).abs() < 1e-16);
        let ratio = 1e-3 / sample.mu[0];
        assert!((ratio - 24.0 / std::f64::consts::PI).abs() < 1e-10);
    }

    #[test]
    fn four_dimensional_center_root_is_two() {
        let dom = ball(4);
        let energy = ReducedEnergy::new(&dom, Potential::constant(-1.0)).unwrap();
        let pred = energy.predict(&center(4)).unwrap();
        let RateRegime::LogLaw { kappa0, lambda0 } = &pred.regime else {
            panic!("expected the log law");
        };
        assert!((kappa0 - 2.0).abs() < 1e-10, "kappa0 = {kappa0}");
        assert_eq!(lambda0.len(), 1);
        assert!((lambda0[0] - 1.0).abs() < 1e-14);

        let sample = mu_law(&pred, 0.2).unwrap();
        assert!((sample.mu[0] - (-10.0f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn shifted_eigenvalue_is_strictly_decreasing() {
        let dom = ball(4);
        let pts = vec![vec![0.3, 0.0, 0.0, 0.0], vec![-0.2, 0.25, 0.0, 0.0]];
        let config = Configuration::new(&dom, pts).unwrap();
        let m = config.interaction_matrix().unwrap();
        let weights = vec![1.0 / (8.0 * PI * PI); 2];
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let kappa = 0.1 * k as f64;
            let e = shifted_lowest(&m, &weights, 2, kappa).unwrap();
            assert!(e < prev, "not decreasing at kappa = {kappa}");
            prev = e;
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let dom = ball(5);
        // Polynomial potential -1 - 0.3 |x|^2 so the x-gradient sees
        // a nonzero dV term.
        let mut terms = vec![Monomial {
            coeff: -1.0,
            powers: vec![0; 5],
        }];
        for l in 0..5 {
            let mut powers = vec![0; 5];
            powers[l] = 2;
            terms.push(Monomial {
                coeff: -0.3,
                powers,
            });
        }
        let energy = ReducedEnergy::new(&dom, Potential::Polynomial { terms }).unwrap();
        let pts = vec![
            vec![0.2, 0.0, -0.1, 0.0, 0.05],
            vec![-0.1, 0.25, 0.0, 0.1, 0.0],
        ];
        let kappa = vec![0.031, 0.058];
        let (gk, gx) = energy.grad(&kappa, &pts).unwrap();

        let h = 1e-6;
        for k in 0..2 {
            let mut kp = kappa.clone();
            kp[k] += h;
            let mut km = kappa.clone();
            km[k] -= h;
            let fd = (energy.value(&kp, &pts).unwrap() - energy.value(&km, &pts).unwrap())
                / (2.0 * h);
            assert!(
                (fd - gk[k]).abs() <= 1e-6 * gk[k].abs().max(1e-3),
                "dF/dkappa_{k}: fd {fd} vs {g}",
                g = gk[k]
            );
        }
        for k in 0..2 {
            for l in 0..5 {
                let mut pp = pts.clone();
                pp[k][l] += h;
                let mut pm = pts.clone();
                pm[k][l] -= h;
                let fd = (energy.value(&kappa, &pp).unwrap()
                    - energy.value(&kappa, &pm).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - gx[k][l]).abs() <= 1e-6 * gx[k][l].abs().max(1e-3),
                    "dF/dx_{k}{l}: fd {fd} vs {g}",
                    g = gx[k][l]
                );
            }
        }
    }

    /// Lowest interaction eigenvalue of the antipodal pair (+-a, 0...)
    /// crosses zero between a = 0.3 and a = 0.5; locate the crossing.
    fn antipodal_crossing(dom: &BallDomain) -> f64 {
        let rho = |a: f64| {
            let pts = vec![
                vec![a, 0.0, 0.0, 0.0, 0.0],
                vec![-a, 0.0, 0.0, 0.0, 0.0],
            ];
            Configuration::new(dom, pts)
                .unwrap()
                .lowest_eig()
                .unwrap()
                .rho
        };
        let (mut lo, mut hi) = (0.3, 0.5);
        assert!(rho(lo) < 0.0 && rho(hi) > 0.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if rho(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn antipodal_pair_branches() {
        let dom = ball(5);
        let energy = ReducedEnergy::new(&dom, Potential::constant(-1.0)).unwrap();
        let pair = |a: f64| {
            vec![
                vec![a, 0.0, 0.0, 0.0, 0.0],
                vec![-a, 0.0, 0.0, 0.0, 0.0],
            ]
        };

        // Wide separation: rho > 0, symmetric heights.
        let pred = energy.predict(&pair(0.6)).unwrap();
        let RateRegime::PowerLaw {
            kappa, residual, ..
        } = &pred.regime
        else {
            panic!("expected a power law at a = 0.6");
        };
        assert!((kappa[0] - kappa[1]).abs() < 1e-10);
        assert!(*residual <= 1e-10);

        // Tight separation: rho < 0, infeasible.
        match energy.predict(&pair(0.2)) {
            Err(Error::Infeasible(_)) => {}
            other => panic!("expected infeasible, got {other:?}"),
        }

        // At the crossing: degenerate, direction (1, 1), and the
        // tangential eigenvalue gradient vanishes by symmetry.
        let a = antipodal_crossing(&dom);
        let pred = energy.predict(&pair(a)).unwrap();
        let RateRegime::Degenerate {
            lambda0,
            rho_residual,
            ..
        } = &pred.regime
        else {
            panic!("expected degenerate at the crossing");
        };
        assert!((lambda0[0] - 1.0).abs() < 1e-14);
        assert!((lambda0[1] - 1.0).abs() < 1e-8);
        assert!(rho_residual.abs() < 1e-10);
        assert!(mu_law(&pred, 1e-3).is_err());

        let grad = Configuration::new(&dom, pair(a))
            .unwrap()
            .grad_rho()
            .unwrap();
        for row in &grad {
            for &g in &row[1..] {
                assert!(g.abs() < 1e-8, "tangential gradient {g}");
            }
        }
    }

    #[test]
    fn six_dimensional_heights_are_reproducible() {
        // Convexity for N >= 6: every start converges to the same
        // root, so predict reports unique across random configs.
        let dom = ball(6);
        let energy = ReducedEnergy::new(&dom, Potential::constant(-1.0)).unwrap();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut rng = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut tested = 0;
        while tested < 10 {
            let pts: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..6).map(|_| 0.8 * (rng() - 0.5)).collect())
                .collect();
            match energy.predict(&pts) {
                Ok(RatePrediction {
                    regime: RateRegime::PowerLaw { unique, roots, .. },
                    ..
                }) => {
                    assert!(unique, "multiple roots at {pts:?}");
                    assert_eq!(roots.len(), 1);
                    tested += 1;
                }
                Ok(_) | Err(Error::Infeasible(_)) => continue,
                Err(e) => panic!("unexpected error {e}"),
            }
        }
    }

    #[test]
    fn search_finds_ball_center() {
        let dom = ball(5);
        let energy = ReducedEnergy::new(&dom, Potential::constant(-1.0)).unwrap();
        let start = vec![vec![0.3, -0.1, 0.0, 0.05, 0.0]];
        let cp = energy.critical_config_search(&start).unwrap();
        assert!(cp.grad_norm <= 1e-8);
        assert!(norm(&cp.points[0]) < 1e-5, "ended at {:?}", cp.points[0]);
        let expect = (std::f64::consts::PI / 24.0).powf(1.5);
        assert!((cp.kappa[0] - expect).abs() < 1e-6);
        assert_eq!(cp.inertia.neg, 0);
        assert_eq!(cp.inertia.zero, 0);
    }

    #[test]
    fn search_four_dimensional_center() {
        let dom = ball(4);
        let energy = ReducedEnergy::new(&dom, Potential::constant(-1.0)).unwrap();
        let start = vec![vec![0.25, 0.1, -0.05, 0.0]];
        let cp = energy.critical_config_search(&start).unwrap();
        assert!(cp.grad_norm <= 1e-8);
        assert!(norm(&cp.points[0]) < 1e-5);
        let k0 = cp.kappa0.unwrap();
        assert!((k0 - 2.0).abs() < 1e-6, "kappa0 = {k0}");
        assert_eq!(cp.kappa, vec![1.0]);
    }

    #[test]
    fn search_shifts_against_potential_well() {
        // V = -1 - c |x - x_b|^2 is most negative far from x_b, so the
        // potential term pulls the stationary point away from x_b.
        let dom = ball(5);
        let c = 0.4;
        let xb = 0.3;
        let mut terms = vec![Monomial {
            coeff: -1.0 - c * xb * xb,
            powers: vec![0; 5],
        }];
        for l in 0..5 {
            let mut powers = vec![0; 5];
            powers[l] = 2;
            terms.push(Monomial { coeff: -c, powers });
        }
        // cross term +2 c xb x_1
        let mut powers = vec![0; 5];
        powers[0] = 1;
        terms.push(Monomial {
            coeff: 2.0 * c * xb,
            powers,
        });
        let energy = ReducedEnergy::new(&dom, Potential::Polynomial { terms }).unwrap();

        let x = vec![0.1, 0.0, 0.0, 0.0, 0.0];
        let v = energy.potential().value(&x);
        assert!((v - (-1.0 - c * (0.1 - xb) * (0.1 - xb))).abs() < 1e-15);

        let cp = energy
            .critical_config_search(&vec![vec![0.05, 0.0, 0.0, 0.0, 0.0]])
            .unwrap();
        assert!(cp.grad_norm <= 1e-8);
        assert!(
            cp.points[0][0] < -1e-4,
            "stationary point {:?} did not move away from the well center",
            cp.points[0]
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let dom = ball(5);
        let energy = ReducedEnergy::new(&dom, Potential::constant(-1.0)).unwrap();
        assert!(energy.value(&[0.0], &center(5)).is_err());
        assert!(energy.value(&[-0.3], &center(5)).is_err());
        assert!(energy.value(&[0.1, 0.2], &center(5)).is_err());

        let positive = ReducedEnergy::new(&dom, Potential::constant(0.5)).unwrap();
        assert!(positive.predict(&center(5)).is_err());

        let dom4 = ball(4);
        let energy4 = ReducedEnergy::new(&dom4, Potential::constant(-1.0)).unwrap();
        match energy4.value(&[0.1], &center(4)) {
            Err(Error::NotDefined(_)) => {}
            other => panic!("expected the dimension-4 refusal, got {other:?}"),
        }

        let bad = Potential::Polynomial {
            terms: vec![Monomial {
                coeff: 1.0,
                powers: vec![0; 3],
            }],
        };
        assert!(ReducedEnergy::new(&dom, bad).is_err());
    }
}
