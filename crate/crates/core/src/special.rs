//! Gamma and Beta functions and numerical checks of the Gamma-ratio, Beta and
//! unit-interval inequalities.
//!
//! The Lanczos approximation comes from `statrs` (`g = 10.900511`, 11
//! coefficients). Above [`GAMMA_SHIFT_FROM`] the Gamma function is evaluated
//! as `Gamma(x - 40) * prod_{i=1}^{40} (x - i)`, which keeps the power term of
//! the approximation finite up to the overflow threshold near 171.6.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{derive_stream, Purpose, Stream, StreamTag};

/// Default relative slack for the inequality checks.
pub const DEFAULT_SLACK: f64 = 1e-11;

const GAMMA_SHIFT_FROM: f64 = 120.0;
const GAMMA_SHIFT: u32 = 40;

fn positive(x: f64, what: &str) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} needs a positive finite argument, got {x}")))
    }
}

/// `ln Gamma(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64> {
    positive(x, "ln_gamma")?;
    // exact zeros; the series is off by a few ulps there
    if x == 1.0 || x == 2.0 {
        return Ok(0.0);
    }
    Ok(statrs::function::gamma::ln_gamma(x))
}

/// `Gamma(x)` for `x > 0`; `inf` beyond the `f64` range.
pub fn gamma(x: f64) -> Result<f64> {
    positive(x, "gamma")?;
    if x < GAMMA_SHIFT_FROM {
        return Ok(statrs::function::gamma::gamma(x));
    }
    let base = statrs::function::gamma::gamma(x - f64::from(GAMMA_SHIFT));
    Ok((1..=GAMMA_SHIFT).fold(base, |acc, i| acc * (x - f64::from(i))))
}

/// `B(x, y) = Gamma(x) Gamma(y) / Gamma(x + y)`.
pub fn beta(x: f64, y: f64) -> Result<f64> {
    positive(x, "beta")?;
    positive(y, "beta")?;
    Ok((ln_gamma(x)? + ln_gamma(y)? - ln_gamma(x + y)?).exp())
}

/// `Gamma(x + alpha) / Gamma(x)`.
pub fn gamma_ratio(x: f64, alpha: f64) -> Result<f64> {
    positive(x, "gamma_ratio")?;
    if alpha == 0.0 {
        return Ok(1.0);
    }
    Ok((ln_gamma(x + alpha)? - ln_gamma(x)?).exp())
}

/// Largest integer strictly below `x`: `max([0, x) ∩ N_0)` for `x > 0`.
/// Differs from `floor` at integers (`strict_floor(3) = 2`).
pub fn strict_floor(x: f64) -> Result<f64> {
    positive(x, "strict_floor")?;
    Ok(x.ceil() - 1.0)
}

/// A chain `chain[0] <= chain[1] <= ...` evaluated numerically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IneqCheckResult {
    /// Left-hand side first, right-hand side last.
    pub chain: Vec<f64>,
    pub holds: bool,
    /// Smallest relative gap `(next - prev) / max(|prev|, |next|)` over the links.
    pub slack: f64,
}

impl IneqCheckResult {
    fn from_chain(chain: Vec<f64>, tolerance: f64) -> Self {
        let slack = chain
            .windows(2)
            .map(|w| {
                let scale = w[0].abs().max(w[1].abs());
                if scale == 0.0 {
                    0.0
                } else {
                    (w[1] - w[0]) / scale
                }
            })
            .fold(f64::INFINITY, f64::min);
        let holds = chain.iter().all(|v| !v.is_nan()) && slack >= -tolerance;
        Self { chain, holds, slack }
    }

    pub fn lhs(&self) -> f64 {
        self.chain[0]
    }

    pub fn rhs(&self) -> f64 {
        *self.chain.last().expect("chains are non-empty")
    }
}

fn in_unit(v: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must lie in [0, 1], got {v}")))
    }
}

/// `(1 - x)^alpha <= 1 - alpha x` for `alpha, x in [0, 1]`.
pub fn check_unit_interval_ineq(alpha: f64, x: f64) -> Result<IneqCheckResult> {
    in_unit(alpha, "alpha")?;
    in_unit(x, "x")?;
    Ok(IneqCheckResult::from_chain(vec![(1.0 - x).powf(alpha), 1.0 - alpha * x], DEFAULT_SLACK))
}

/// `(max{x+alpha-1, 0})^alpha <= x/(x+alpha)^(1-alpha) <= Gamma(x+alpha)/Gamma(x) <= x^alpha`
/// for `x > 0`, `alpha in [0, 1]`.
pub fn check_wendel(x: f64, alpha: f64) -> Result<IneqCheckResult> {
    positive(x, "check_wendel")?;
    in_unit(alpha, "alpha")?;
    Ok(IneqCheckResult::from_chain(
        vec![(x + alpha - 1.0).max(0.0).powf(alpha), x / (x + alpha).powf(1.0 - alpha), gamma_ratio(x, alpha)?, x.powf(alpha)],
        DEFAULT_SLACK,
    ))
}

/// `(max{x + min{alpha-1, 0}, 0})^alpha <= Gamma(x+alpha)/Gamma(x) <= (x + max{alpha-1, 0})^alpha`
/// for `x > 0`, `alpha >= 0`.
pub fn check_gamma_ratio_general(x: f64, alpha: f64) -> Result<IneqCheckResult> {
    positive(x, "check_gamma_ratio_general")?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(IneqCheckResult::from_chain(
        vec![(x + (alpha - 1.0).min(0.0)).max(0.0).powf(alpha), gamma_ratio(x, alpha)?, (x + (alpha - 1.0).max(0.0)).powf(alpha)],
        DEFAULT_SLACK,
    ))
}

/// `Gamma(x+1) <= x^(strict_floor(x)) <= max{1, x^x}` for `x > 0`.
pub fn check_gamma_poly_bound(x: f64) -> Result<IneqCheckResult> {
    positive(x, "check_gamma_poly_bound")?;
    Ok(IneqCheckResult::from_chain(vec![gamma(x + 1.0)?, x.powf(strict_floor(x)?), x.powf(x).max(1.0)], DEFAULT_SLACK))
}

/// For `x, y > 0` with `x + y > 1`:
/// `Gamma(x)/(y + max{x-1,0})^x <= B(x,y) <= Gamma(x)/(y + min{x-1,0})^x <= max{1, x^x}/(x (y + min{x-1,0})^x)`.
pub fn check_beta_bounds(x: f64, y: f64) -> Result<IneqCheckResult> {
    positive(x, "check_beta_bounds")?;
    positive(y, "check_beta_bounds")?;
    if x + y <= 1.0 {
        return Err(Error::Domain(format!("beta bounds need x + y > 1, got x={x}, y={y}")));
    }
    let g = gamma(x)?;
    let low_base = (y + (x - 1.0).max(0.0)).powf(x);
    let high_base = (y + (x - 1.0).min(0.0)).powf(x);
    Ok(IneqCheckResult::from_chain(
        vec![g / low_base, beta(x, y)?, g / high_base, x.powf(x).max(1.0) / (x * high_base)],
        DEFAULT_SLACK,
    ))
}

/// Outcome of one random sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub samples: usize,
    pub violations: usize,
    pub worst_slack: f64,
    /// Arguments at which the worst slack occurred.
    pub worst_at: Vec<f64>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Draws from `(0, hi]`.
fn open_left(stream: &mut Stream, hi: f64) -> f64 {
    hi * (1.0 - stream.uniform())
}

fn sweep(
    name: &str,
    seed: u64,
    index: u64,
    samples: usize,
    mut draw: impl FnMut(&mut Stream) -> Vec<f64>,
    check: impl Fn(&[f64]) -> Result<IneqCheckResult>,
) -> Result<SweepReport> {
    let mut stream = derive_stream(seed, StreamTag::new(Purpose::Sweep, index, 0));
    let mut report = SweepReport { name: name.into(), samples, violations: 0, worst_slack: f64::INFINITY, worst_at: Vec::new() };
    for _ in 0..samples {
        let args = draw(&mut stream);
        let result = check(&args)?;
        if !result.holds {
            report.violations += 1;
        }
        if result.slack < report.worst_slack || report.worst_at.is_empty() {
            report.worst_slack = result.slack;
            report.worst_at = args;
        }
    }
    Ok(report)
}

/// Runs every inequality over its random sweep: `(alpha, x) in [0,1]^2`,
/// Wendel on `(0,100] x [0,1]`, the general ratio on `(0,50] x [0,20]`, the
/// polynomial bound on `(0,30]`, and Beta on `x in (0,20]`, `y in (max{0,1-x}, max{0,1-x}+20]`.
pub fn verify_special(seed: u64, samples: usize) -> Result<Vec<SweepReport>> {
    Ok(vec![
        sweep("unit_interval", seed, 1, samples, |s| vec![s.uniform(), s.uniform()], |a| check_unit_interval_ineq(a[0], a[1]))?,
        sweep("wendel", seed, 2, samples, |s| vec![open_left(s, 100.0), s.uniform()], |a| check_wendel(a[0], a[1]))?,
        sweep(
            "gamma_ratio_general",
            seed,
            3,
            samples,
            |s| vec![open_left(s, 50.0), 20.0 * s.uniform()],
            |a| check_gamma_ratio_general(a[0], a[1]),
        )?,
        sweep("gamma_poly", seed, 4, samples, |s| vec![open_left(s, 30.0)], |a| check_gamma_poly_bound(a[0]))?,
        sweep(
            "beta",
            seed,
            5,
            samples,
            |s| {
                let x = open_left(s, 20.0);
                vec![x, (1.0 - x).max(0.0) + open_left(s, 20.0)]
            },
            |a| check_beta_bounds(a[0], a[1]),
        )?,
    ])
}
