//! Natural cubic spline through irregularly spaced samples.

#[derive(Debug, Clone)]
pub struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl NaturalSpline {
    /// `x` must be strictly increasing and have the same length as `y` (at least 2).
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        assert_eq!(x.len(), y.len());
        assert!(x.len() >= 2);
        let n = x.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior knots.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                let h0 = x[i + 1] - x[i];
                let h1 = x[i + 2] - x[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..k {
                let lower = x[i + 1] - x[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        }
    }

    fn segment(&self, t: f64) -> usize {
        match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p => (p - 1).min(self.x.len() - 2),
        }
    }

    /// Cubic coefficients of segment `i` in `s = t - x[i]`: `a + b s + c s^2 + d s^3`.
    fn coefficients(&self, i: usize) -> [f64; 4] {
        let h = self.x[i + 1] - self.x[i];
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let b = (self.y[i + 1] - self.y[i]) / h - h * (2.0 * m0 + m1) / 6.0;
        [self.y[i], b, 0.5 * m0, (m1 - m0) / (6.0 * h)]
    }

    /// Value at `t`; outside the knot range the end cubic is extended.
    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let [a, b, c, d] = self.coefficients(i);
        let s = t - self.x[i];
        a + s * (b + s * (c + s * d))
    }

    /// Location of the smallest value on `[lo, hi]`, which must lie inside the knot range.
    pub fn argmin_on(&self, lo: f64, hi: f64) -> f64 {
        let mut best = (lo, self.eval(lo));
        let mut consider = |t: f64| {
            if (lo..=hi).contains(&t) {
                let v = self.eval(t);
                if v < best.1 {
                    best = (t, v);
                }
            }
        };
        consider(hi);
        let first = self.segment(lo);
        let last = self.segment(hi);
        for i in first..=last {
            consider(self.x[i]);
            let [_, b, c, d] = self.coefficients(i);
            // Stationary points: b + 2c s + 3d s^2 = 0.
            let (qa, qb, qc) = (3.0 * d, 2.0 * c, b);
            if qa.abs() < 1e-300 {
                if qb != 0.0 {
                    consider(self.x[i] - qc / qb);
                }
                continue;
            }
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                consider(self.x[i] + (-qb + sq) / (2.0 * qa));
                consider(self.x[i] + (-qb - sq) / (2.0 * qa));
            }
        }
        best.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_knots() {
        let x = [0.0, 0.5, 1.7, 2.0, 3.1];
        let y = [1.0, -2.0, 0.5, 4.0, 3.0];
        let s = NaturalSpline::new(&x, &y);
        for (a, b) in x.iter().zip(y) {
            assert!((s.eval(*a) - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reproduces_lines() {
        let x: Vec<f64> = (0..7).map(|i| i as f64 * 0.3 + (i * i) as f64 * 0.01).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let s = NaturalSpline::new(&x, &y);
        for k in 0..50 {
            let t = x[0] + (x[6] - x[0]) * k as f64 / 49.0;
            assert!((s.eval(t) - (2.0 * t - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn tracks_a_sampled_sine() {
        let x: Vec<f64> = (0..60).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let s = NaturalSpline::new(&x, &y);
        for k in 10..500 {
            let t = 1.0 + k as f64 * 0.008;
            assert!((s.eval(t) - t.sin()).abs() < 2e-5, "t={t}");
        }
        let tmin = s.argmin_on(4.4, 4.8);
        assert!((tmin - 1.5 * std::f64::consts::PI).abs() < 1e-4, "{tmin}");
    }
}
