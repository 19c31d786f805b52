//! Quadratic empirical risk, its generalized gradient, and estimators of the
//! true risk and of the L1/L2 distance to the target.
//!
//! Subgradient convention at kinks: `relu'(0) = 0`, and the output clip has
//! derivative 1 strictly inside `(u, v)` and 0 everywhere else (including at
//! both thresholds). With these choices the gradient is defined everywhere
//! and coincides with the true gradient wherever the risk is differentiable.

use serde::{Deserialize, Serialize};

use crate::data::{DataModel, InputBox, Sample, TargetFn};
use crate::error::{ensure, Result};
use crate::net::{require_scalar, ClippedNet, ParamVector, Scratch};
use crate::stats::{mean_se, pairwise_sum, Estimate};
use crate::stream::Stream;

/// Default central-difference step for unit-scale parameters.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Second differences larger than this multiple of `h^2 * max(1, risk)` mark a
/// kink inside `[theta_i - h, theta_i + h]`. Piecewise-quadratic pieces of the
/// risk give second differences of order `h^2`; a slope jump `s` gives `s * h`.
pub const DEFAULT_KINK_RATIO: f64 = 1e4;

fn check_batch(net: &ClippedNet, theta: &ParamVector, batch: &[Sample]) -> Result<()> {
    require_scalar(net)?;
    net.check_theta(theta.as_slice())?;
    ensure(!batch.is_empty(), || "batch must be nonempty".into())?;
    for s in batch {
        net.check_input(&s.x)?;
        ensure(s.y.is_finite(), || format!("label {} is not finite", s.y))?;
    }
    Ok(())
}

/// `(1/J) sum_j |N_theta(x_j) - y_j|^2`.
pub fn empirical_risk(net: &ClippedNet, theta: &ParamVector, batch: &[Sample]) -> Result<f64> {
    check_batch(net, theta, batch)?;
    Ok(risk_unchecked(net, theta.as_slice(), batch, &mut Scratch::default()))
}

pub(crate) fn risk_unchecked(net: &ClippedNet, theta: &[f64], batch: &[Sample], scratch: &mut Scratch) -> f64 {
    let sq: Vec<f64> = batch
        .iter()
        .map(|s| {
            let r = net.eval(theta, &s.x, scratch) - s.y;
            r * r
        })
        .collect();
    pairwise_sum(&sq) / batch.len() as f64
}

/// Reverse-mode gradient of [`empirical_risk`] with respect to every entry of
/// `theta`; entries past the architecture's parameter count get 0.
pub fn generalized_gradient(net: &ClippedNet, theta: &ParamVector, batch: &[Sample]) -> Result<Vec<f64>> {
    check_batch(net, theta, batch)?;
    Ok(gradient_unchecked(net, theta.as_slice(), batch))
}

pub(crate) fn gradient_unchecked(net: &ClippedNet, theta: &[f64], batch: &[Sample]) -> Vec<f64> {
    let widths = net.arch().widths();
    let depth = net.arch().depth();
    let offsets: Vec<usize> = (1..=depth).map(|i| net.arch().layer_offset(i)).collect();
    let (u, v) = (net.lower(), net.upper());
    let scale = 2.0 / batch.len() as f64;
    let mut grad = vec![0.0; theta.len()];

    for sample in batch {
        let trace = net.trace(theta, &sample.x);
        let z_out = trace.pre[depth - 1][0];
        let out = u.max(z_out.min(v));
        let inside = z_out > u && z_out < v;
        if !inside {
            continue;
        }
        // delta = d(loss)/d(pre-activation) of the current layer
        let mut delta = vec![scale * (out - sample.y)];
        for layer in (1..=depth).rev() {
            let (n, m) = (widths[layer - 1], widths[layer]);
            let s = offsets[layer - 1];
            let input = &trace.post[layer - 1];
            for r in 0..m {
                let row = &mut grad[s + r * n..s + (r + 1) * n];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += delta[r] * a;
                }
                grad[s + m * n + r] += delta[r];
            }
            if layer > 1 {
                let z_prev = &trace.pre[layer - 2];
                let mut back = vec![0.0; n];
                for (q, b) in back.iter_mut().enumerate() {
                    if z_prev[q] > 0.0 {
                        *b = (0..m).map(|r| theta[s + r * n + q] * delta[r]).sum();
                    }
                }
                delta = back;
            }
        }
    }
    grad
}

/// Central-difference gradient with per-coordinate kink flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdGradient {
    pub grad: Vec<f64>,
    /// `true` where the second difference indicates a kink within one step.
    pub kinks: Vec<bool>,
}

impl FdGradient {
    pub fn any_kink(&self) -> bool {
        self.kinks.iter().any(|&k| k)
    }
}

/// `(R(theta + h e_i) - R(theta - h e_i)) / (2h)` for every coordinate.
pub fn finite_diff_gradient(net: &ClippedNet, theta: &ParamVector, batch: &[Sample], h: f64) -> Result<FdGradient> {
    finite_diff_gradient_with(net, theta, batch, h, DEFAULT_KINK_RATIO)
}

pub fn finite_diff_gradient_with(
    net: &ClippedNet,
    theta: &ParamVector,
    batch: &[Sample],
    h: f64,
    kink_ratio: f64,
) -> Result<FdGradient> {
    ensure(h > 0.0 && h.is_finite(), || format!("step must be positive, got {h}"))?;
    check_batch(net, theta, batch)?;
    let mut scratch = Scratch::default();
    let base = risk_unchecked(net, theta.as_slice(), batch, &mut scratch);
    let mut work = theta.as_slice().to_vec();
    let mut grad = Vec::with_capacity(work.len());
    let mut kinks = Vec::with_capacity(work.len());
    for i in 0..work.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = risk_unchecked(net, &work, batch, &mut scratch);
        work[i] = orig - h;
        let minus = risk_unchecked(net, &work, batch, &mut scratch);
        work[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
        let second = (plus + minus - 2.0 * base).abs();
        kinks.push(second > kink_ratio * h * h * base.max(1.0));
    }
    Ok(FdGradient { grad, kinks })
}

/// `||a - b||_inf / max(||b||_inf, floor)`.
pub fn relative_sup_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(floor, |m, y| m.max(y.abs()));
    diff / scale
}

fn check_eval(net: &ClippedNet, theta: &ParamVector, input: &InputBox) -> Result<()> {
    require_scalar(net)?;
    net.check_theta(theta.as_slice())?;
    ensure(input.d == net.arch().input_dim(), || {
        format!("input box dimension {} does not match network input {}", input.d, net.arch().input_dim())
    })
}

fn mc_mean<F: FnMut(&[f64], &mut Stream) -> f64>(
    input: &InputBox,
    n_mc: usize,
    stream: &mut Stream,
    mut f: F,
) -> Result<Estimate> {
    ensure(n_mc >= 2, || format!("Monte Carlo needs n >= 2 samples, got {n_mc}"))?;
    let mut x = vec![0.0; input.d];
    let values: Vec<f64> = (0..n_mc)
        .map(|_| {
            input.draw(stream, &mut x);
            f(&x, stream)
        })
        .collect();
    Ok(mean_se(&values))
}

/// Monte Carlo estimate of `int |N_theta(x) - E(x)|^2 dP_X(x)` with `X`
/// uniform on `input`.
pub fn l2_error_mc(
    net: &ClippedNet,
    theta: &ParamVector,
    target: &TargetFn,
    input: &InputBox,
    n_mc: usize,
    stream: &mut Stream,
) -> Result<Estimate> {
    check_eval(net, theta, input)?;
    let mut scratch = Scratch::default();
    mc_mean(input, n_mc, stream, |x, _| {
        let r = net.eval(theta.as_slice(), x, &mut scratch) - target.eval(x);
        r * r
    })
}

/// Monte Carlo estimate of `int |N_theta(x) - E(x)| dP_X(x)`.
pub fn l1_error_mc(
    net: &ClippedNet,
    theta: &ParamVector,
    target: &TargetFn,
    input: &InputBox,
    n_mc: usize,
    stream: &mut Stream,
) -> Result<Estimate> {
    check_eval(net, theta, input)?;
    let mut scratch = Scratch::default();
    mc_mean(input, n_mc, stream, |x, _| (net.eval(theta.as_slice(), x, &mut scratch) - target.eval(x)).abs())
}

/// Monte Carlo estimate of `E[|N_theta(X) - Y|^2]` over fresh pairs.
pub fn true_risk_mc(
    net: &ClippedNet,
    theta: &ParamVector,
    model: &DataModel,
    n_mc: usize,
    stream: &mut Stream,
) -> Result<Estimate> {
    check_eval(net, theta, &model.input)?;
    ensure(n_mc >= 2, || format!("Monte Carlo needs n >= 2 samples, got {n_mc}"))?;
    let mut scratch = Scratch::default();
    let values: Vec<f64> = (0..n_mc)
        .map(|_| {
            let s = model.draw(stream);
            let r = net.eval(theta.as_slice(), &s.x, &mut scratch) - s.y;
            r * r
        })
        .collect();
    Ok(mean_se(&values))
}

/// Composite 3-point Gauss-Legendre rule on a tensor grid of `panels^d` cells.
///
/// Exact for piecewise polynomials of degree <= 5 per axis whose breakpoints
/// fall on cell boundaries; kinks inside a cell cost `O(h^3)` per cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub panels: usize,
}

impl Quadrature {
    const NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
    const WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

    pub fn new(panels: usize) -> Result<Self> {
        ensure(panels >= 1, || "quadrature needs at least one panel".into())?;
        Ok(Self { panels })
    }

    /// Average of `f` over the box (integral against the uniform law).
    pub fn mean<F: FnMut(&[f64]) -> f64>(&self, input: &InputBox, mut f: F) -> Result<f64> {
        ensure(input.d <= 3, || format!("tensor quadrature supports d <= 3, got {}", input.d))?;
        let h = input.width() / self.panels as f64;
        let nodes: Vec<(f64, f64)> = (0..self.panels)
            .flat_map(|p| {
                let left = input.a + p as f64 * h;
                Self::NODES.iter().zip(Self::WEIGHTS).map(move |(t, w)| (left + 0.5 * h * (t + 1.0), 0.5 * w))
            })
            .collect();
        let per_axis = nodes.len();
        let d = input.d;
        let total = per_axis.pow(d as u32);
        let mut x = vec![0.0; d];
        let mut terms = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let mut w = 1.0;
            for (axis, &i) in idx.iter().enumerate() {
                x[axis] = nodes[i].0;
                w *= nodes[i].1 / self.panels as f64;
            }
            terms.push(w * f(&x));
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < per_axis {
                    break;
                }
                *slot = 0;
            }
        }
        Ok(pairwise_sum(&terms))
    }
}

/// `int |N_theta - E|^2 dP_X` by tensor Gauss-Legendre (uniform `X`, `d <= 3`).
pub fn l2_error_quadrature(
    net: &ClippedNet,
    theta: &ParamVector,
    target: &TargetFn,
    input: &InputBox,
    quad: Quadrature,
) -> Result<f64> {
    check_eval(net, theta, input)?;
    let mut scratch = Scratch::default();
    quad.mean(input, |x| {
        let r = net.eval(theta.as_slice(), x, &mut scratch) - target.eval(x);
        r * r
    })
}

/// `int |N_theta - E| dP_X` by tensor Gauss-Legendre.
pub fn l1_error_quadrature(
    net: &ClippedNet,
    theta: &ParamVector,
    target: &TargetFn,
    input: &InputBox,
    quad: Quadrature,
) -> Result<f64> {
    check_eval(net, theta, input)?;
    let mut scratch = Scratch::default();
    quad.mean(input, |x| (net.eval(theta.as_slice(), x, &mut scratch) - target.eval(x)).abs())
}

/// True risk `E|N_theta(X) - Y|^2`: tensor quadrature over `X` and the exact
/// expectation over the (finitely supported) label noise.
pub fn true_risk_quadrature(net: &ClippedNet, theta: &ParamVector, model: &DataModel, quad: Quadrature) -> Result<f64> {
    check_eval(net, theta, &model.input)?;
    ensure(model.input.d <= 3, || format!("tensor quadrature supports d <= 3, got {}", model.input.d))?;
    Ok(true_risk_quadrature_unchecked(net, theta.as_slice(), model, quad, &mut Scratch::default()))
}

pub(crate) fn true_risk_quadrature_unchecked(
    net: &ClippedNet,
    theta: &[f64],
    model: &DataModel,
    quad: Quadrature,
    scratch: &mut Scratch,
) -> f64 {
    let atoms = model.noise.atoms();
    quad.mean(&model.input, |x| {
        let r = net.eval(theta, x, scratch) - model.target.eval(x);
        atoms.iter().map(|(w, eta)| w * (r - eta) * (r - eta)).sum()
    })
    .expect("dimension checked by caller")
}
