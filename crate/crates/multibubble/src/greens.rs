//! Dirichlet Green functions and their Robin (regular-part) data.
//!
//! The ball is handled in closed form by the method of images. Other
//! domains enter through the `GreenEvaluator` trait: a plugin only has
//! to produce G(x, y), and derived quantities fall back to difference
//! quotients and the smooth-part subtraction
//!     H(x, y) = c_N |x - y|^(2-N) - G(x, y).
//!
//! Conventions: G > 0 inside, G = 0 on the boundary, and the Robin
//! function phi(y) = H(y, y) blows up as y approaches the boundary.

use crate::error::{Error, Result};
use crate::special::kernel_constant;
use crate::vect::dist;

/// Evaluator of a Dirichlet Green function on a fixed domain in R^N.
///
/// Only `green` and `dim` are required. The default derived methods use
/// a step of 1e-5 times `length_scale`, so implementors working on very
/// small or very large domains should override `length_scale`.
pub trait GreenEvaluator {
    fn dim(&self) -> usize;

    /// G(x, y); errors off the domain or on the diagonal.
    fn green(&self, x: &[f64], y: &[f64]) -> Result<f64>;

    /// Characteristic length used to size difference-quotient steps.
    fn length_scale(&self) -> f64 {
        1.0
    }

    /// Whether concurrent calls are safe. Wrappers serialize evaluators
    /// that report false (the default).
    fn reentrant(&self) -> bool {
        false
    }

    /// Gradient of G in the first argument.
    fn grad_x_green(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let h = 1e-5 * self.length_scale();
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        for l in 0..x.len() {
            xp[l] = x[l] + h;
            xm[l] = x[l] - h;
            g[l] = (self.green(&xp, y)? - self.green(&xm, y)?) / (2.0 * h);
            xp[l] = x[l];
            xm[l] = x[l];
        }
        Ok(g)
    }

    /// Smooth part H(x, y), harmonic in x.
    fn regular_part(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let n = self.dim();
        let r = dist(x, y);
        if r == 0.0 {
            return Err(Error::config(
                "regular part needs x != y here; use robin for the diagonal",
            ));
        }
        Ok(kernel_constant(n) * r.powi(2 - n as i32) - self.green(x, y)?)
    }

    /// Robin function phi(y) = H(y, y).
    ///
    /// Averaging H(y +- delta e_l, y) over all axes cancels the odd terms
    /// by symmetry and the delta^2 term because H(., y) is harmonic, so a
    /// single Richardson step leaves O(delta^6). The step cannot be tiny:
    /// the default `regular_part` subtracts the kernel c_N |x-y|^(2-N)
    /// from G, and roundoff in that difference grows like delta^(2-N).
    fn robin(&self, y: &[f64]) -> Result<f64> {
        let d = 3e-3 * self.length_scale();
        let avg = |delta: f64| -> Result<f64> {
            let mut acc = 0.0;
            let mut p = y.to_vec();
            for l in 0..y.len() {
                p[l] = y[l] + delta;
                acc += self.regular_part(&p, y)?;
                p[l] = y[l] - delta;
                acc += self.regular_part(&p, y)?;
                p[l] = y[l];
            }
            Ok(acc / (2 * y.len()) as f64)
        };
        let coarse = avg(d)?;
        let fine = avg(0.5 * d)?;
        Ok((16.0 * fine - coarse) / 15.0)
    }

    /// Gradient of the Robin function.
    fn grad_robin(&self, y: &[f64]) -> Result<Vec<f64>> {
        let h = 1e-5 * self.length_scale();
        let mut g = vec![0.0; y.len()];
        let mut yp = y.to_vec();
        let mut ym = y.to_vec();
        for l in 0..y.len() {
            yp[l] = y[l] + h;
            ym[l] = y[l] - h;
            g[l] = (self.robin(&yp)? - self.robin(&ym)?) / (2.0 * h);
            yp[l] = y[l];
            ym[l] = y[l];
        }
        Ok(g)
    }
}

/// Ball in R^N, N >= 4, with everything in closed form.
#[derive(Debug, Clone)]
pub struct BallDomain {
    center: Vec<f64>,
    radius: f64,
}

impl BallDomain {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.len() < 4 {
            return Err(Error::config(format!(
                "dimension {} not supported, need at least 4",
                center.len()
            )));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::config("radius must be positive and finite"));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("center must be finite"));
        }
        Ok(BallDomain { center, radius })
    }

    pub fn unit_ball(dim: usize) -> Result<Self> {
        BallDomain::new(vec![0.0; dim], 1.0)
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    fn check_dim(&self, p: &[f64], role: &str) -> Result<()> {
        if p.len() != self.center.len() {
            return Err(Error::config(format!(
                "{role} has dimension {}, domain has {}",
                p.len(),
                self.center.len()
            )));
        }
        Ok(())
    }

    fn check_pair(&self, x: &[f64], y: &[f64]) -> Result<()> {
        self.check_dim(x, "evaluation point")?;
        self.check_dim(y, "source point")?;
        let r = self.radius;
        if dist(y, &self.center) >= r {
            return Err(Error::config(
                "source point must lie strictly inside the ball",
            ));
        }
        if dist(x, &self.center) > r * (1.0 + 1e-12) {
            return Err(Error::config(
                "evaluation point lies outside the closed ball",
            ));
        }
        if dist(x, y) == 0.0 {
            return Err(Error::config("Green function is singular at x = y"));
        }
        Ok(())
    }

    /// |y - c|^2 |x - ybar|^2 expanded so the image point ybar never has
    /// to be formed; smooth through y = center, where it equals R^4.
    fn image_s2(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2 = self.radius * self.radius;
        let mut dy2 = 0.0;
        let mut dx2 = 0.0;
        let mut cross = 0.0;
        for i in 0..x.len() {
            let a = x[i] - self.center[i];
            let b = y[i] - self.center[i];
            dx2 += a * a;
            dy2 += b * b;
            cross += a * b;
        }
        dy2 * dx2 - 2.0 * r2 * cross + r2 * r2
    }
}

impl GreenEvaluator for BallDomain {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn length_scale(&self) -> f64 {
        self.radius
    }

    fn reentrant(&self) -> bool {
        true
    }

    fn green(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_pair(x, y)?;
        let n = self.dim() as i32;
        let c = kernel_constant(self.dim());
        let direct = dist(x, y).powi(2 - n);
        let image = (self.image_s2(x, y).sqrt() / self.radius).powi(2 - n);
        Ok(c * (direct - image))
    }

    fn grad_x_green(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check_pair(x, y)?;
        let n = self.dim() as i32;
        let c = kernel_constant(self.dim());
        let rxy = dist(x, y);
        let s2 = self.image_s2(x, y);
        let image_amp = (s2.sqrt() / self.radius).powi(2 - n) / s2;
        let r2 = self.radius * self.radius;
        let dy2: f64 = y
            .iter()
            .zip(&self.center)
            .map(|(b, c)| (b - c) * (b - c))
            .sum();
        let mut g = vec![0.0; x.len()];
        for i in 0..x.len() {
            let direct = rxy.powi(-n) * (x[i] - y[i]);
            // dy2 * (x - ybar) stays finite as y approaches the center
            let image = image_amp * (dy2 * (x[i] - self.center[i]) - r2 * (y[i] - self.center[i]));
            g[i] = c * (2 - n) as f64 * (direct - image);
        }
        Ok(g)
    }

    fn regular_part(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dim(x, "evaluation point")?;
        self.check_dim(y, "source point")?;
        if dist(y, &self.center) >= self.radius {
            return Err(Error::config(
                "source point must lie strictly inside the ball",
            ));
        }
        let n = self.dim() as i32;
        let c = kernel_constant(self.dim());
        Ok(c * (self.image_s2(x, y).sqrt() / self.radius).powi(2 - n))
    }

    fn robin(&self, y: &[f64]) -> Result<f64> {
        self.check_dim(y, "source point")?;
        let dy = dist(y, &self.center);
        if dy >= self.radius {
            return Err(Error::config(
                "source point must lie strictly inside the ball",
            ));
        }
        let n = self.dim() as i32;
        let c = kernel_constant(self.dim());
        let r2 = self.radius * self.radius;
        Ok(c * ((r2 - dy * dy) / self.radius).powi(2 - n))
    }

    fn grad_robin(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y, "source point")?;
        let dy = dist(y, &self.center);
        if dy >= self.radius {
            return Err(Error::config(
                "source point must lie strictly inside the ball",
            ));
        }
        let n = self.dim();
        let c = kernel_constant(n);
        let gap = self.radius * self.radius - dy * dy;
        let amp =
            2.0 * c * (n as f64 - 2.0) * self.radius.powi(n as i32 - 2) / gap.powi(n as i32 - 1);
        Ok(y
            .iter()
            .zip(&self.center)
            .map(|(v, ctr)| amp * (v - ctr))
            .collect())
    }
}

/// Plugged-in evaluator behind a lock.
///
/// Implementations that report `reentrant() == false` are never entered
/// concurrently: every call goes through the mutex. The wrapper itself
/// is therefore always safe to share.
pub struct ExternalDomain {
    inner: std::sync::Mutex<Box<dyn GreenEvaluator + Send>>,
    dim: usize,
    scale: f64,
}

impl ExternalDomain {
    pub fn new(eval: Box<dyn GreenEvaluator + Send>) -> Self {
        let dim = eval.dim();
        let scale = eval.length_scale();
        ExternalDomain {
            inner: std::sync::Mutex::new(eval),
            dim,
            scale,
        }
    }
}

impl GreenEvaluator for ExternalDomain {
    fn dim(&self) -> usize {
        self.dim
    }

    fn length_scale(&self) -> f64 {
        self.scale
    }

    fn reentrant(&self) -> bool {
        true
    }

    fn green(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.inner.lock().unwrap().green(x, y)
    }

    fn grad_x_green(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.inner.lock().unwrap().grad_x_green(x, y)
    }

    fn regular_part(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.inner.lock().unwrap().regular_part(x, y)
    }

    fn robin(&self, y: &[f64]) -> Result<f64> {
        self.inner.lock().unwrap().robin(y)
    }

    fn grad_robin(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.inner.lock().unwrap().grad_robin(y)
    }
}

/// The domain kinds the toolkit works on.
pub enum DomainModel {
    Ball(BallDomain),
    External(ExternalDomain),
}

impl GreenEvaluator for DomainModel {
    fn dim(&self) -> usize {
        match self {
            DomainModel::Ball(b) => b.dim(),
            DomainModel::External(e) => e.dim(),
        }
    }

    fn length_scale(&self) -> f64 {
        match self {
            DomainModel::Ball(b) => b.length_scale(),
            DomainModel::External(e) => e.length_scale(),
        }
    }

    fn reentrant(&self) -> bool {
        true
    }

    fn green(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            DomainModel::Ball(b) => b.green(x, y),
            DomainModel::External(e) => e.green(x, y),
        }
    }

    fn grad_x_green(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        match self {
            DomainModel::Ball(b) => b.grad_x_green(x, y),
            DomainModel::External(e) => e.grad_x_green(x, y),
        }
    }

    fn regular_part(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            DomainModel::Ball(b) => b.regular_part(x, y),
            DomainModel::External(e) => e.regular_part(x, y),
        }
    }

    fn robin(&self, y: &[f64]) -> Result<f64> {
        match self {
            DomainModel::Ball(b) => b.robin(y),
            DomainModel::External(e) => e.robin(y),
        }
    }

    fn grad_robin(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            DomainModel::Ball(b) => b.grad_robin(y),
            DomainModel::External(e) => e.grad_robin(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_interior(rng: &mut ChaCha8Rng, ball: &BallDomain, rmax: f64) -> Vec<f64> {
        loop {
            let p: Vec<f64> = (0..ball.dim())
                .map(|_| ball.radius() * (2.0 * rng.random::<f64>() - 1.0))
                .collect();
            if crate::vect::norm(&p) < rmax * ball.radius() {
                return p
                    .iter()
                    .zip(ball.center())
                    .map(|(a, c)| a + c)
                    .collect();
            }
        }
    }

    #[test]
    fn center_source_closed_form() {
        let ball = BallDomain::unit_ball(5).unwrap();
        let x = [0.3, 0.0, 0.0, 0.0, 0.0];
        let y = [0.0; 5];
        let expect = kernel_constant(5) * (0.3f64.powi(-3) - 1.0);
        assert!((ball.green(&x, &y).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in 4..=6 {
            let ball = BallDomain::new(vec![0.5; dim], 2.0).unwrap();
            for _ in 0..20 {
                let x = random_interior(&mut rng, &ball, 0.95);
                let y = random_interior(&mut rng, &ball, 0.95);
                if dist(&x, &y) < 1e-6 {
                    continue;
                }
                let g_xy = ball.green(&x, &y).unwrap();
                let g_yx = ball.green(&y, &x).unwrap();
                assert!((g_xy - g_yx).abs() <= 1e-12 * (1.0 + g_xy.abs()));
            }
        }
    }

    #[test]
    fn vanishes_on_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ball = BallDomain::unit_ball(5).unwrap();
        for _ in 0..20 {
            let mut x = random_interior(&mut rng, &ball, 0.9);
            let nx = crate::vect::norm(&x);
            x.iter_mut().for_each(|v| *v /= nx);
            let y = random_interior(&mut rng, &ball, 0.8);
            let g = ball.green(&x, &y).unwrap();
            let magnitude = kernel_constant(5) * dist(&x, &y).powi(-3);
            assert!(g.abs() <= 1e-12 * magnitude, "boundary leak {g:e}");
        }
    }

    #[test]
    fn positive_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ball = BallDomain::unit_ball(4).unwrap();
        for _ in 0..50 {
            let x = random_interior(&mut rng, &ball, 0.99);
            let y = random_interior(&mut rng, &ball, 0.99);
            if dist(&x, &y) < 1e-9 {
                continue;
            }
            assert!(ball.green(&x, &y).unwrap() > 0.0);
        }
    }

    #[test]
    fn regular_part_is_harmonic() {
        let ball = BallDomain::unit_ball(5).unwrap();
        let y = [0.2, -0.1, 0.3, 0.0, 0.1];
        let x = [0.4, 0.1, -0.2, 0.3, 0.0];
        let h = 1e-3;
        let center_val = ball.regular_part(&x, &y).unwrap();
        let mut lap = -2.0 * 5.0 * center_val;
        for l in 0..5 {
            let mut xp = x;
            let mut xm = x;
            xp[l] += h;
            xm[l] -= h;
            lap += ball.regular_part(&xp, &y).unwrap() + ball.regular_part(&xm, &y).unwrap();
        }
        lap /= h * h;
        assert!(lap.abs() <= 1e-4 * center_val.abs(), "Laplacian {lap:e}");
    }

    #[test]
    fn gradient_matches_difference_quotient() {
        let ball = BallDomain::new(vec![0.1, -0.2, 0.0, 0.4, 0.0], 1.5).unwrap();
        let x = [0.5, 0.1, 0.2, 0.1, -0.3];
        let y = [-0.2, 0.3, -0.1, 0.6, 0.2];
        let g = ball.grad_x_green(&x, &y).unwrap();
        let h = 1e-6;
        for l in 0..5 {
            let mut xp = x;
            let mut xm = x;
            xp[l] += h;
            xm[l] -= h;
            let fd = (ball.green(&xp, &y).unwrap() - ball.green(&xm, &y).unwrap()) / (2.0 * h);
            assert!(
                (g[l] - fd).abs() <= 1e-7 * (1.0 + fd.abs()),
                "component {l}: {} vs {fd}",
                g[l]
            );
        }
    }

    #[test]
    fn image_gradient_dies_at_center_source() {
        // With the source at the center the image term is constant in x,
        // so the gradient must reduce to the free-space one.
        let ball = BallDomain::unit_ball(5).unwrap();
        let x = [0.3, 0.1, 0.0, -0.2, 0.0];
        let y = [0.0; 5];
        let g = ball.grad_x_green(&x, &y).unwrap();
        let r = crate::vect::norm(&x);
        let c = kernel_constant(5);
        for l in 0..5 {
            let free = -3.0 * c * r.powi(-5) * x[l];
            assert!((g[l] - free).abs() < 1e-14);
        }
    }

    #[test]
    fn robin_closed_form_and_blowup() {
        let ball = BallDomain::new(vec![0.0; 5], 2.0).unwrap();
        let c = kernel_constant(5);
        let mut prev = 0.0;
        for (k, t) in [0.0, 0.3, 0.6, 0.9, 0.99].iter().enumerate() {
            let y = [2.0 * t, 0.0, 0.0, 0.0, 0.0];
            let phi = ball.robin(&y).unwrap();
            let dy = 2.0 * t;
            let expect = c * 2.0f64.powi(3) / (4.0 - dy * dy).powi(3);
            assert!((phi - expect).abs() <= 1e-13 * expect);
            if k > 0 {
                assert!(phi > prev, "Robin function must grow toward the boundary");
            }
            prev = phi;
        }
        assert!(prev > 1e3 * ball.robin(&[0.0; 5]).unwrap());
    }

    #[test]
    fn grad_robin_matches_difference_quotient() {
        let ball = BallDomain::new(vec![0.3, 0.0, -0.1, 0.0], 1.2).unwrap();
        let y = [0.5, -0.2, 0.1, 0.3];
        let g = ball.grad_robin(&y).unwrap();
        let h = 1e-6;
        for l in 0..4 {
            let mut yp = y;
            let mut ym = y;
            yp[l] += h;
            ym[l] -= h;
            let fd = (ball.robin(&yp).unwrap() - ball.robin(&ym).unwrap()) / (2.0 * h);
            assert!((g[l] - fd).abs() <= 1e-7 * (1.0 + fd.abs()));
        }
    }

    /// Exposes only `green`; every derived method exercises the trait
    /// defaults.
    struct GreenOnly(BallDomain);

    impl GreenEvaluator for GreenOnly {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn length_scale(&self) -> f64 {
            self.0.length_scale()
        }
        fn green(&self, x: &[f64], y: &[f64]) -> Result<f64> {
            self.0.green(x, y)
        }
    }

    #[test]
    fn trait_defaults_reproduce_exact_values() {
        let ball = BallDomain::unit_ball(5).unwrap();
        let plugin = GreenOnly(ball.clone());
        let x = [0.35, -0.1, 0.2, 0.0, 0.15];
        let y = [-0.25, 0.2, 0.1, 0.3, 0.0];

        let h_exact = ball.regular_part(&x, &y).unwrap();
        let h_default = plugin.regular_part(&x, &y).unwrap();
        assert!((h_exact - h_default).abs() <= 1e-12 * h_exact.abs());

        let phi_exact = ball.robin(&y).unwrap();
        let phi_default = plugin.robin(&y).unwrap();
        assert!((phi_exact - phi_default).abs() <= 1e-6 * phi_exact.abs());

        let g_exact = ball.grad_x_green(&x, &y).unwrap();
        let g_default = plugin.grad_x_green(&x, &y).unwrap();
        for l in 0..5 {
            assert!((g_exact[l] - g_default[l]).abs() <= 1e-5 * (1.0 + g_exact[l].abs()));
        }

        let gr_exact = ball.grad_robin(&y).unwrap();
        let gr_default = plugin.grad_robin(&y).unwrap();
        for l in 0..5 {
            assert!((gr_exact[l] - gr_default[l]).abs() <= 1e-4 * (1.0 + gr_exact[l].abs()));
        }
    }

    #[test]
    fn external_wrapper_delegates() {
        let ball = BallDomain::unit_ball(5).unwrap();
        let wrapped = ExternalDomain::new(Box::new(GreenOnly(ball.clone())));
        assert!(wrapped.reentrant());
        let x = [0.3, 0.0, 0.1, 0.0, 0.0];
        let y = [0.0, 0.2, 0.0, -0.1, 0.0];
        assert_eq!(
            wrapped.green(&x, &y).unwrap(),
            ball.green(&x, &y).unwrap()
        );
        let phi = wrapped.robin(&y).unwrap();
        assert!((phi - ball.robin(&y).unwrap()).abs() <= 1e-6 * phi);
    }

    #[test]
    fn smooth_through_center_source() {
        let ball = BallDomain::unit_ball(5).unwrap();
        let x = [0.4, 0.1, 0.0, 0.0, 0.2];
        let near = [1e-9, -1e-9, 0.0, 1e-9, 0.0];
        let at = ball.green(&x, &[0.0; 5]).unwrap();
        let off = ball.green(&x, &near).unwrap();
        assert!((at - off).abs() <= 1e-8 * at.abs());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(BallDomain::unit_ball(3).is_err());
        assert!(BallDomain::new(vec![0.0; 5], 0.0).is_err());
        let ball = BallDomain::unit_ball(5).unwrap();
        let inside = [0.1, 0.0, 0.0, 0.0, 0.0];
        let outside = [1.5, 0.0, 0.0, 0.0, 0.0];
        assert!(ball.green(&outside, &inside).is_err());
        assert!(ball.green(&inside, &outside).is_err());
        assert!(ball.green(&inside, &inside).is_err());
        let boundary = [1.0, 0.0, 0.0, 0.0, 0.0];
        assert!(ball.robin(&boundary).is_err());
    }
}
