//! Jump-size distribution catalog.
//!
//! Every law used for Poisson marks or transition-triggered impulses must
//! expose closed-form raw moments: compensators and basis grams are computed
//! from them exactly, never by quadrature or sampling.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::psd_factor;

/// Highest raw moment order served by the catalog. Factorials beyond this
/// start losing too much precision for the double-exponential law.
pub const MAX_MOMENT_ORDER: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarkDistribution {
    /// Degenerate law at `value`.
    PointMass { value: f64 },
    /// Two atoms `lo < hi` with P(hi) = `p_hi`.
    TwoPoint { lo: f64, hi: f64, p_hi: f64 },
    Gaussian { mean: f64, std_dev: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Asymmetric double exponential: up-jump Exp(rate_up) with probability
    /// `p_up`, down-jump -Exp(rate_down) otherwise.
    DoubleExponential { p_up: f64, rate_up: f64, rate_down: f64 },
}

impl MarkDistribution {
    /// Symmetric two-point law on {-1, +1}.
    pub fn rademacher() -> Self {
        MarkDistribution::TwoPoint {
            lo: -1.0,
            hi: 1.0,
            p_hi: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        match *self {
            MarkDistribution::PointMass { value } => {
                if !value.is_finite() {
                    return bad("point mass value must be finite".into());
                }
            }
            MarkDistribution::TwoPoint { lo, hi, p_hi } => {
                if !(lo < hi) {
                    return bad(format!("two-point law needs lo < hi, got {lo} >= {hi}"));
                }
                if !(0.0..=1.0).contains(&p_hi) {
                    return bad(format!("two-point probability {p_hi} outside [0,1]"));
                }
            }
            MarkDistribution::Gaussian { mean, std_dev } => {
                if !mean.is_finite() || !(std_dev >= 0.0) {
                    return bad(format!("gaussian law needs finite mean, std >= 0 (got {mean}, {std_dev})"));
                }
            }
            MarkDistribution::Uniform { lo, hi } => {
                if !(lo < hi) {
                    return bad(format!("uniform law needs lo < hi, got {lo} >= {hi}"));
                }
            }
            MarkDistribution::DoubleExponential { p_up, rate_up, rate_down } => {
                if !(0.0..=1.0).contains(&p_up) {
                    return bad(format!("double-exponential p_up {p_up} outside [0,1]"));
                }
                if !(rate_up > 0.0) || !(rate_down > 0.0) {
                    return bad("double-exponential rates must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// Raw moment E X^k, exact up to rounding.
    pub fn moment(&self, k: usize) -> Result<f64> {
        if k > MAX_MOMENT_ORDER {
            return Err(Error::Validation(format!(
                "moment order {k} exceeds catalog maximum {MAX_MOMENT_ORDER}"
            )));
        }
        if k == 0 {
            return Ok(1.0);
        }
        Ok(match *self {
            MarkDistribution::PointMass { value } => value.powi(k as i32),
            MarkDistribution::TwoPoint { lo, hi, p_hi } => {
                p_hi * hi.powi(k as i32) + (1.0 - p_hi) * lo.powi(k as i32)
            }
            MarkDistribution::Gaussian { mean, std_dev } => {
                // M_k = mean*M_{k-1} + (k-1)*var*M_{k-2}
                let var = std_dev * std_dev;
                let (mut prev, mut cur) = (1.0f64, mean);
                for order in 2..=k {
                    let next = mean * cur + (order as f64 - 1.0) * var * prev;
                    prev = cur;
                    cur = next;
                }
                if k == 0 {
                    prev
                } else {
                    cur
                }
            }
            MarkDistribution::Uniform { lo, hi } => {
                let kk = k as i32;
                (hi.powi(kk + 1) - lo.powi(kk + 1)) / ((k as f64 + 1.0) * (hi - lo))
            }
            MarkDistribution::DoubleExponential { p_up, rate_up, rate_down } => {
                let mut fact = 1.0f64;
                for i in 1..=k {
                    fact *= i as f64;
                }
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                p_up * fact / rate_up.powi(k as i32)
                    + (1.0 - p_up) * sign * fact / rate_down.powi(k as i32)
            }
        })
    }

    pub fn mean(&self) -> f64 {
        self.moment(1).expect("first moment always available")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            MarkDistribution::PointMass { value } => value,
            MarkDistribution::TwoPoint { lo, hi, p_hi } => {
                if rng.gen::<f64>() < p_hi {
                    hi
                } else {
                    lo
                }
            }
            MarkDistribution::Gaussian { mean, std_dev } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std_dev * z
            }
            MarkDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
            MarkDistribution::DoubleExponential { p_up, rate_up, rate_down } => {
                let up = rng.gen::<f64>() < p_up;
                if up {
                    Exp::new(rate_up).unwrap().sample(rng)
                } else {
                    -Exp::new(rate_down).unwrap().sample(rng)
                }
            }
        }
    }

    pub fn bounded_support(&self) -> bool {
        matches!(
            self,
            MarkDistribution::PointMass { .. }
                | MarkDistribution::TwoPoint { .. }
                | MarkDistribution::Uniform { .. }
        )
    }

    /// Whether E exp(lambda |X|) is finite (analytic per catalog entry).
    pub fn exp_abs_moment_finite(&self, lambda: f64) -> bool {
        match *self {
            MarkDistribution::Gaussian { .. } => true,
            MarkDistribution::DoubleExponential { rate_up, rate_down, .. } => {
                lambda < rate_up.min(rate_down)
            }
            _ => true, // bounded support
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            MarkDistribution::PointMass { value } => format!("point mass at {value}"),
            MarkDistribution::TwoPoint { lo, hi, p_hi } => {
                format!("two-point {{{lo}, {hi}}} with P(hi)={p_hi}")
            }
            MarkDistribution::Gaussian { mean, std_dev } => {
                format!("gaussian(mean={mean}, std={std_dev})")
            }
            MarkDistribution::Uniform { lo, hi } => format!("uniform[{lo}, {hi}]"),
            MarkDistribution::DoubleExponential { p_up, rate_up, rate_down } => {
                format!("double-exponential(p_up={p_up}, rates={rate_up}/{rate_down})")
            }
        }
    }

    /// Consistency check on the analytic moments: the Hankel matrix
    /// [m_{a+b}] for a,b <= order must be PSD for any genuine law.
    pub fn check_hankel_psd(&self, order: usize) -> Result<()> {
        let n = order + 1;
        let mut h = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                h[a * n + b] = self.moment(a + b)?;
            }
        }
        psd_factor(&h, n, 1e-9, 1e-9).map_err(|e| {
            Error::Validation(format!(
                "moment sequence of {} is not a valid Hankel form: {e}",
                self.describe()
            ))
        })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{path_rng, Stream};
    use crate::stats::RunningMoments;

    #[test]
    fn gaussian_standard_moments() {
        let g = MarkDistribution::Gaussian { mean: 0.0, std_dev: 1.0 };
        let expect = [1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0, 0.0, 105.0];
        for (k, &m) in expect.iter().enumerate() {
            assert!((g.moment(k).unwrap() - m).abs() < 1e-12, "order {k}");
        }
    }

    #[test]
    fn rademacher_moments_alternate() {
        let d = MarkDistribution::rademacher();
        for k in 0..10 {
            let want = if k % 2 == 0 { 1.0 } else { 0.0 };
            assert_eq!(d.moment(k).unwrap(), want);
        }
    }

    #[test]
    fn uniform_and_double_exponential_moments() {
        let u = MarkDistribution::Uniform { lo: -1.0, hi: 1.0 };
        assert!((u.moment(2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((u.moment(4).unwrap() - 0.2).abs() < 1e-15);

        // Symmetric Laplace with rate 2: E X^2 = 2!/4 = 0.5, E X^4 = 4!/16.
        let de = MarkDistribution::DoubleExponential { p_up: 0.5, rate_up: 2.0, rate_down: 2.0 };
        assert!((de.moment(1).unwrap() - 0.0).abs() < 1e-15);
        assert!((de.moment(2).unwrap() - 0.5).abs() < 1e-15);
        assert!((de.moment(4).unwrap() - 1.5).abs() < 1e-15);
    }

    /// Monte Carlo oracle for the closed-form moments.
    #[test]
    fn sampled_moments_agree_with_analytic() {
        let laws = [
            MarkDistribution::Gaussian { mean: 0.3, std_dev: 0.8 },
            MarkDistribution::DoubleExponential { p_up: 0.4, rate_up: 1.5, rate_down: 2.5 },
            MarkDistribution::Uniform { lo: -0.5, hi: 2.0 },
            MarkDistribution::TwoPoint { lo: -1.0, hi: 2.0, p_hi: 0.25 },
        ];
        let mut rng = path_rng(99, 0, Stream::Impulse);
        for law in &laws {
            for k in 1..=4 {
                let mut acc = RunningMoments::default();
                for _ in 0..200_000 {
                    acc.push(law.sample(&mut rng).powi(k as i32));
                }
                let want = law.moment(k).unwrap();
                let tol = 5.0 * acc.std_err();
                assert!(
                    (acc.mean() - want).abs() <= tol.max(1e-9),
                    "{} moment {k}: mc {} vs analytic {want}",
                    law.describe(),
                    acc.mean()
                );
            }
        }
    }

    #[test]
    fn exponential_moment_verdicts() {
        let g = MarkDistribution::Gaussian { mean: 0.0, std_dev: 2.0 };
        assert!(g.exp_abs_moment_finite(100.0));
        let de = MarkDistribution::DoubleExponential { p_up: 0.5, rate_up: 2.0, rate_down: 3.0 };
        assert!(de.exp_abs_moment_finite(1.9));
        assert!(!de.exp_abs_moment_finite(2.1));
        assert!(MarkDistribution::rademacher().exp_abs_moment_finite(1e6));
    }

    #[test]
    fn hankel_check_accepts_catalog() {
        for law in [
            MarkDistribution::PointMass { value: 2.5 },
            MarkDistribution::rademacher(),
            MarkDistribution::Gaussian { mean: 0.0, std_dev: 1.0 },
            MarkDistribution::Uniform { lo: 0.0, hi: 1.0 },
            MarkDistribution::DoubleExponential { p_up: 0.3, rate_up: 1.0, rate_down: 2.0 },
        ] {
            law.check_hankel_psd(4).unwrap();
        }
    }

    #[test]
    fn moment_order_cap() {
        let g = MarkDistribution::Gaussian { mean: 0.0, std_dev: 1.0 };
        assert!(g.moment(MAX_MOMENT_ORDER).is_ok());
        assert!(g.moment(MAX_MOMENT_ORDER + 1).is_err());
    }
}
