//! Cubic Hermite interpolation on scattered nodes.
//!
//! Each node carries the function value and its first derivative, so the
//! interpolant is C^1 and fourth-order accurate in the local spacing. The
//! tables produced by the ODE drivers store exactly this data.

/// Piecewise cubic Hermite table over strictly increasing nodes.
#[derive(Debug, Clone)]
pub struct HermiteTable {
    x: Vec<f64>,
    f: Vec<f64>,
    df: Vec<f64>,
}

impl HermiteTable {
    pub fn new(x: Vec<f64>, f: Vec<f64>, df: Vec<f64>) -> Self {
        assert_eq!(x.len(), f.len());
        assert_eq!(x.len(), df.len());
        assert!(x.len() >= 2, "need at least two nodes");
        assert!(
            x.windows(2).all(|w| w[0] < w[1]),
            "nodes must be strictly increasing"
        );
        HermiteTable { x, f, df }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn x_min(&self) -> f64 {
        self.x[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.x.last().unwrap()
    }

    pub fn node(&self, i: usize) -> (f64, f64, f64) {
        (self.x[i], self.f[i], self.df[i])
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    /// Index of the interval containing x (clamped to the table range).
    fn segment(&self, x: f64) -> usize {
        match self.x.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.x.len() - 2),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.x[i + 1] - self.x[i];
        let t = (x - self.x[i]) / h;
        let (f0, f1) = (self.f[i], self.f[i + 1]);
        let (d0, d1) = (self.df[i] * h, self.df[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        f0 * (2.0 * t3 - 3.0 * t2 + 1.0)
            + d0 * (t3 - 2.0 * t2 + t)
            + f1 * (-2.0 * t3 + 3.0 * t2)
            + d1 * (t3 - t2)
    }

    pub fn eval_deriv(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.x[i + 1] - self.x[i];
        let t = (x - self.x[i]) / h;
        let (f0, f1) = (self.f[i], self.f[i + 1]);
        let (d0, d1) = (self.df[i] * h, self.df[i + 1] * h);
        let t2 = t * t;
        (f0 * (6.0 * t2 - 6.0 * t)
            + d0 * (3.0 * t2 - 4.0 * t + 1.0)
            + f1 * (-6.0 * t2 + 6.0 * t)
            + d1 * (3.0 * t2 - 2.0 * t))
            / h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(f: impl Fn(f64) -> (f64, f64), n: usize, a: f64, b: f64) -> HermiteTable {
        let xs: Vec<f64> = (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect();
        let mut fs = Vec::with_capacity(n);
        let mut dfs = Vec::with_capacity(n);
        for &x in &xs {
            let (v, d) = f(x);
            fs.push(v);
            dfs.push(d);
        }
        HermiteTable::new(xs, fs, dfs)
    }

    #[test]
    fn reproduces_cubics_exactly() {
        let t = sample(|x| (x * x * x - 2.0 * x, 3.0 * x * x - 2.0), 5, -1.0, 2.0);
        for k in 0..40 {
            let x = -1.0 + 3.0 * k as f64 / 39.0;
            assert!((t.eval(x) - (x * x * x - 2.0 * x)).abs() < 1e-13);
            assert!((t.eval_deriv(x) - (3.0 * x * x - 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn fourth_order_on_smooth_function() {
        let err = |n: usize| {
            let t = sample(|x| (x.sin(), x.cos()), n, 0.0, 3.0);
            (0..200)
                .map(|k| {
                    let x = 3.0 * k as f64 / 199.0;
                    (t.eval(x) - x.sin()).abs()
                })
                .fold(0.0f64, f64::max)
        };
        let (e1, e2) = (err(11), err(21));
        let order = (e1 / e2).log2();
        assert!(order > 3.5, "observed order {order}");
    }

    #[test]
    fn clamps_outside_range() {
        let t = sample(|x| (x, 1.0), 3, 0.0, 1.0);
        // linear data extrapolates linearly from the end segment
        assert!((t.eval(1.5) - 1.5).abs() < 1e-13);
        assert!((t.eval(-0.5) + 0.5).abs() < 1e-13);
    }
}
