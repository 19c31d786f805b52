//! Small statistics toolkit: reproducible sums, standard errors, rate fits.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Pairwise (cascade) summation with a fixed reduction tree: blocks of 64 are
/// summed left to right, then halves are combined recursively. The result
/// depends only on the input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { estimate: value, se: 0.0 }
    }

    /// `|estimate - target| <= sigmas * se` (with a tiny absolute floor for
    /// exactly-zero standard errors).
    pub fn agrees_with(&self, target: f64, sigmas: f64) -> bool {
        (self.estimate - target).abs() <= sigmas * self.se + 1e-12 * (1.0 + target.abs())
    }
}

/// Sample mean and standard error `s / sqrt(n)` of `values` (`n >= 2`).
pub fn mean_se(values: &[f64]) -> Estimate {
    let n = values.len();
    assert!(n >= 2, "standard error needs at least two values");
    let mean = pairwise_sum(values) / n as f64;
    let centred: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&centred) / (n - 1) as f64;
    Estimate { estimate: mean, se: (var / n as f64).sqrt() }
}

/// Delta-method transfer of a mean of `p`-th powers to its `p`-th root:
/// `m^(1/p)` with standard error `(1/p) m^(1/p - 1) se(m)`.
pub fn pth_root(moment: Estimate, p: f64) -> Estimate {
    let m = moment.estimate.max(0.0);
    if m == 0.0 {
        return Estimate { estimate: 0.0, se: if p == 1.0 { moment.se } else { 0.0 } };
    }
    Estimate { estimate: m.powf(1.0 / p), se: m.powf(1.0 / p - 1.0) * moment.se / p }
}

/// Weighted least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub xs: Vec<f64>,
    pub means: Vec<f64>,
    pub ses: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// 95% normal half-width, `1.96 * slope_se`.
    pub slope_half_width: f64,
}

impl RateFit {
    pub fn slope_within(&self, expected: f64, tolerance: f64) -> bool {
        (self.slope - expected).abs() <= tolerance
    }
}

/// Fits `ln mean = intercept + slope * ln x`, weighting each point by the
/// inverse variance of `ln mean` (`(se / mean)^2`). Requires at least two
/// decades between the smallest and largest `x`.
pub fn fit_log_log(xs: &[f64], means: &[f64], ses: &[f64]) -> Result<RateFit> {
    ensure(xs.len() == means.len() && xs.len() == ses.len(), || "rate fit inputs have mismatched lengths".into())?;
    ensure(xs.len() >= 2, || "rate fit needs at least two points".into())?;
    ensure(xs.iter().chain(means).all(|v| *v > 0.0 && v.is_finite()), || {
        format!("rate fit needs positive finite values, got xs={xs:?} means={means:?}")
    })?;
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(0.0, f64::max);
    ensure(hi / lo >= 100.0 * (1.0 - 1e-12), || format!("rate fit needs two decades of spread, got [{lo}, {hi}]"))?;

    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = means.iter().map(|y| y.ln()).collect();
    let rel: Vec<f64> = ses.iter().zip(means).map(|(s, m)| s / m).collect();
    let weights: Vec<f64> =
        if rel.iter().all(|r| *r > 0.0) { rel.iter().map(|r| 1.0 / (r * r)).collect() } else { vec![1.0; xs.len()] };
    let sw: f64 = weights.iter().sum();
    let mx = weights.iter().zip(&lx).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = weights.iter().zip(&ly).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = weights.iter().zip(&lx).map(|(w, x)| w * (x - mx) * (x - mx)).sum();
    let sxy: f64 = weights.iter().zip(lx.iter().zip(&ly)).map(|(w, (x, y))| w * (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if rel.iter().all(|r| *r > 0.0) { (1.0 / sxx).sqrt() } else { 0.0 };
    Ok(RateFit {
        xs: xs.to_vec(),
        means: means.to_vec(),
        ses: ses.to_vec(),
        slope,
        intercept,
        slope_se,
        slope_half_width: 1.96 * slope_se,
    })
}

/// Result of a one-sided sign test on paired differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// `P(Binomial(wins + losses, 1/2) >= wins)`.
    pub p_value: f64,
}

/// One-sided sign test of "first sample smaller than second". Ties are dropped.
pub fn sign_test_less(first: &[f64], second: &[f64]) -> SignTest {
    assert_eq!(first.len(), second.len());
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (a, b) in first.iter().zip(second) {
        if a < b {
            wins += 1;
        } else if a > b {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    let n = wins + losses;
    let p_value = (wins..=n).map(|j| binomial(n, j)).sum::<f64>() / 2f64.powi(n as i32);
    SignTest { wins, losses, ties, p_value: if n == 0 { 1.0 } else { p_value } }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn mean_and_se() {
        let e = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.estimate, 2.5);
        // sample variance 5/3, se = sqrt(5/12)
        assert!((e.se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn exact_power_law_fit() {
        let xs = [10.0, 100.0, 1000.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        let fit = fit_log_log(&xs, &ys, &[0.1, 0.01, 0.001]).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fit_needs_two_decades() {
        assert!(fit_log_log(&[10.0, 500.0], &[1.0, 0.5], &[0.1, 0.1]).is_err());
    }

    #[test]
    fn sign_test_counts() {
        let t = sign_test_less(&[1.0, 1.0, 3.0, 0.0], &[2.0, 1.0, 2.0, 5.0]);
        assert_eq!((t.wins, t.losses, t.ties), (2, 1, 1));
        // P(Bin(3, 1/2) >= 2) = 4/8
        assert!((t.p_value - 0.5).abs() < 1e-15);
        let all = sign_test_less(&[0.0; 20], &[1.0; 20]);
        assert!(all.p_value < 1e-5);
    }

    #[test]
    fn delta_method_root() {
        let r = pth_root(Estimate { estimate: 4.0, se: 0.4 }, 2.0);
        assert_eq!(r.estimate, 2.0);
        assert!((r.se - 0.1).abs() < 1e-15);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
