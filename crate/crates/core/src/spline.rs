//! Natural cubic splines over strictly increasing knots.

/// Piecewise cubic through `(times[i], values[i])` with zero second
/// derivative at both ends. Evaluation outside the knot range holds the end
/// value (zero velocity).
#[derive(Clone, Debug)]
pub struct CubicSpline {
    times: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots.
    moments: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(times: &[f64], values: &[f64]) -> Self {
        assert_eq!(times.len(), values.len());
        assert!(times.len() >= 2, "a spline needs at least two knots");
        assert!(
            times.windows(2).all(|w| w[1] > w[0]),
            "knot times must be strictly increasing"
        );
        let n = times.len();
        let mut moments = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations
            let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for i in 0..m {
                let k = i + 1;
                diag[i] = 2.0 * (h[k - 1] + h[k]);
                upper[i] = h[k];
                rhs[i] = 6.0
                    * ((values[k + 1] - values[k]) / h[k] - (values[k] - values[k - 1]) / h[k - 1]);
            }
            for i in 1..m {
                let w = h[i] / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            moments[m] = rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                moments[i + 1] = (rhs[i] - upper[i] * moments[i + 2]) / diag[i];
            }
        }
        CubicSpline {
            times: times.to_vec(),
            values: values.to_vec(),
            moments,
        }
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn segment(&self, t: f64) -> usize {
        match self.times.partition_point(|&k| k <= t) {
            0 => 0,
            i => (i - 1).min(self.times.len() - 2),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= self.start() {
            return self.values[0];
        }
        if t >= self.end() {
            return *self.values.last().unwrap();
        }
        let i = self.segment(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let (a, b) = ((t1 - t) / h, (t - t0) / h);
        let (m0, m1) = (self.moments[i], self.moments[i + 1]);
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        if t < self.start() || t > self.end() {
            return 0.0;
        }
        let i = self.segment(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let (a, b) = ((t1 - t) / h, (t - t0) / h);
        let (m0, m1) = (self.moments[i], self.moments[i + 1]);
        (self.values[i + 1] - self.values[i]) / h
            + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_knots() {
        let t = [0.0, 0.5, 1.3, 2.0, 2.2];
        let v = [1.0, -1.0, 0.5, 3.0, 2.0];
        let s = CubicSpline::natural(&t, &v);
        for (ti, vi) in t.iter().zip(v) {
            assert!((s.eval(*ti) - vi).abs() < 1e-12);
        }
    }

    #[test]
    fn reproduces_straight_lines() {
        let t: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|x| 2.0 * x - 0.3).collect();
        let s = CubicSpline::natural(&t, &v);
        for k in 0..80 {
            let x = k as f64 * 0.01;
            assert!((s.eval(x) - (2.0 * x - 0.3)).abs() < 1e-12);
            assert!((s.derivative(x) - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let t = [0.0, 0.4, 0.9, 1.2, 2.0];
        let v = [0.0, 1.0, 0.2, -0.5, 0.3];
        let s = CubicSpline::natural(&t, &v);
        for k in 1..39 {
            let x = k as f64 * 0.05 + 0.013;
            let fd = (s.eval(x + 1e-6) - s.eval(x - 1e-6)) / 2e-6;
            assert!((s.derivative(x) - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn holds_outside_range() {
        let s = CubicSpline::natural(&[0.0, 1.0, 2.0], &[1.0, 2.0, 5.0]);
        assert_eq!(s.eval(-1.0), 1.0);
        assert_eq!(s.eval(3.0), 5.0);
        assert_eq!(s.derivative(3.0), 0.0);
    }
}
