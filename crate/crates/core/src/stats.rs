//! Streaming summary statistics and the few classical tests the harness needs.

/// Running first/second moments, mergeable across path chunks.
///
/// Merging must happen in a fixed chunk order for bit-stable results; the
/// harness guarantees that.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningMoments {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &RunningMoments) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn std_err(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.std_dev() / (self.n as f64).sqrt()
        }
    }

    /// z-statistic of the sample mean against a target value.
    ///
    /// Degenerate samples (zero spread) give z = 0 when the mean matches the
    /// target exactly and +/-inf otherwise.
    pub fn z_score(&self, target: f64) -> f64 {
        let se = self.std_err();
        let dev = self.mean() - target;
        if se == 0.0 {
            if dev == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(dev)
            }
        } else {
            dev / se
        }
    }
}

/// Standard normal CDF via the Abramowitz–Stegun 7.1.26 erf approximation
/// (absolute error < 1.5e-7, enough for test p-values).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Two-sided Welch test p-value for equal means (normal approximation; the
/// sample sizes used here are in the tens of thousands).
pub fn welch_p_value(a: &RunningMoments, b: &RunningMoments) -> f64 {
    let va = a.variance() / a.n.max(1) as f64;
    let vb = b.variance() / b.n.max(1) as f64;
    let denom = (va + vb).sqrt();
    if denom == 0.0 {
        return if a.mean() == b.mean() { 1.0 } else { 0.0 };
    }
    let t = (a.mean() - b.mean()) / denom;
    2.0 * (1.0 - normal_cdf(t.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_match_direct_computation() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let mut acc = RunningMoments::default();
        for &x in &xs {
            acc.push(x);
        }
        assert_eq!(acc.n, 4);
        assert!((acc.mean() - 3.75).abs() < 1e-14);
        let mean = 3.75;
        let var: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0;
        assert!((acc.variance() - var).abs() < 1e-12);
    }

    #[test]
    fn merge_equals_single_pass() {
        let mut a = RunningMoments::default();
        let mut b = RunningMoments::default();
        let mut whole = RunningMoments::default();
        for i in 0..100 {
            let x = (i as f64).sin();
            whole.push(x);
            if i < 40 {
                a.push(x)
            } else {
                b.push(x)
            }
        }
        a.merge(&b);
        assert_eq!(a.n, whole.n);
        assert!((a.sum - whole.sum).abs() < 1e-12);
        assert!((a.sum_sq - whole.sum_sq).abs() < 1e-12);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-7);
        assert!((normal_cdf(1.96) - 0.975).abs() < 1e-3);
        assert!((normal_cdf(-1.96) - 0.025).abs() < 1e-3);
    }

    #[test]
    fn welch_detects_shift() {
        let mut a = RunningMoments::default();
        let mut b = RunningMoments::default();
        let mut s = 1u64;
        for _ in 0..5000 {
            let u = (crate::rng::splitmix64(&mut s) as f64 / u64::MAX as f64) - 0.5;
            a.push(u);
            b.push(u + 0.1);
        }
        assert!(welch_p_value(&a, &b) < 0.01);
        let p_same = welch_p_value(&a, &a);
        assert!(p_same > 0.9);
    }
}
