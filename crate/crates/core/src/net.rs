//! Rectified clipped feedforward networks over a flat parameter vector.
//!
//! A network with layer widths `l = (l_0, ..., l_L)` reads its parameters from
//! one flat vector. Layer `i` (1-based) starts at offset
//! `s_i = sum_{j<i} l_j (l_{j-1} + 1)`, stores its `l_i x l_{i-1}` weight
//! matrix row-major, then its `l_i` biases. Internally all indices are
//! 0-based: the weight in row `r`, column `q` (both 0-based) of layer `i`
//! lives at `s_i + r * l_{i-1} + q`, and bias `r` at `s_i + l_i * l_{i-1} + r`.
//!
//! Hidden layers apply the rectifier `max{x, 0}`; the output layer applies
//! `max{u, min{x, v}}`, so every output lies in `[u, v]`. Entries of the
//! parameter vector past [`Architecture::param_count`] are never read.

use serde::{Deserialize, Serialize};

use crate::error::{contract, ensure, ensure_finite, Result};

/// Layer widths `(l_0, ..., l_L)` with `L >= 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Architecture {
    widths: Vec<usize>,
}

impl Architecture {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        ensure(widths.len() >= 2, || format!("architecture needs at least two widths, got {:?}", widths))?;
        ensure(widths.iter().all(|&w| w >= 1), || format!("architecture widths must be positive, got {:?}", widths))?;
        Ok(Self { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of affine layers `L`.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.depth()]
    }

    /// `||l||_inf`, the largest width including input and output.
    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(0)
    }

    /// Widths `l_1, ..., l_{L-1}`.
    pub fn hidden_widths(&self) -> &[usize] {
        &self.widths[1..self.depth()]
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// 0-based start of layer `layer` (1-based, `1..=L`) in the flat vector.
    pub fn layer_offset(&self, layer: usize) -> usize {
        assert!(layer >= 1 && layer <= self.depth(), "layer {layer} out of range");
        self.widths[..layer].windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub fn require_scalar_output(&self) -> Result<()> {
        ensure(self.output_dim() == 1, || format!("expected scalar output width, architecture is {:?}", self.widths))
    }
}

impl TryFrom<Vec<usize>> for Architecture {
    type Error = crate::Error;

    fn try_from(widths: Vec<usize>) -> Result<Self> {
        Self::new(widths)
    }
}

impl From<Architecture> for Vec<usize> {
    fn from(arch: Architecture) -> Self {
        arch.widths
    }
}

pub fn param_count(arch: &Architecture) -> usize {
    arch.param_count()
}

/// Flat parameter vector `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure_finite(&values, "theta")?;
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Wraps values without the finiteness check. Used for SGD iterates,
    /// which may legitimately diverge.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `||theta||_inf`; `NaN` if any entry is `NaN`.
    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.0)
    }

    /// Exact test of `||theta||_inf <= cap`. Non-finite vectors are never inside.
    pub fn within_box(&self, cap: f64) -> bool {
        self.0.iter().all(|v| v.is_finite() && v.abs() <= cap)
    }
}

pub(crate) fn sup_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v.abs()) })
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// The affine map reading `m * n` row-major weights and `m` biases from
/// `theta` starting at `offset`.
pub fn affine_apply(theta: &[f64], offset: usize, m: usize, n: usize, x: &[f64]) -> Result<Vec<f64>> {
    ensure(x.len() == n, || format!("input has length {}, expected {n}", x.len()))?;
    ensure(theta.len() >= offset + m * n + m, || {
        format!("theta has length {}, affine map needs {}", theta.len(), offset + m * n + m)
    })?;
    ensure_finite(x, "x")?;
    let mut out = vec![0.0; m];
    affine_into(theta, offset, m, n, x, &mut out);
    Ok(out)
}

#[inline]
fn affine_into(theta: &[f64], offset: usize, m: usize, n: usize, x: &[f64], out: &mut [f64]) {
    let weights = &theta[offset..offset + m * n];
    let biases = &theta[offset + m * n..offset + m * n + m];
    for (r, o) in out.iter_mut().enumerate() {
        let row = &weights[r * n..(r + 1) * n];
        *o = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + biases[r];
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn relu_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| relu(v)).collect()
}

pub fn clip(u: f64, v: f64, x: f64) -> Result<f64> {
    ensure(v > u, || format!("clip bounds need v > u, got u={u}, v={v}"))?;
    Ok(clamp_unchecked(u, v, x))
}

#[inline]
fn clamp_unchecked(u: f64, v: f64, x: f64) -> f64 {
    u.max(x.min(v))
}

/// Layer activations kept for reverse-mode differentiation.
#[derive(Debug, Clone, Default)]
pub(crate) struct Trace {
    /// Pre-activations `z_i` for layers `1..=L`.
    pub pre: Vec<Vec<f64>>,
    /// Post-activations `a_i` for layers `0..L` (`a_0 = x`).
    pub post: Vec<Vec<f64>>,
}

/// A rectified clipped network: architecture plus output clip range `[u, v]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClippedNet {
    arch: Architecture,
    u: f64,
    v: f64,
}

impl ClippedNet {
    pub fn new(arch: Architecture, u: f64, v: f64) -> Result<Self> {
        ensure(u.is_finite() && v.is_finite() && v > u, || format!("clip range needs finite u < v, got u={u}, v={v}"))?;
        Ok(Self { arch, u, v })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn lower(&self) -> f64 {
        self.u
    }

    pub fn upper(&self) -> f64 {
        self.v
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    pub(crate) fn check_theta(&self, theta: &[f64]) -> Result<()> {
        let needed = self.param_count();
        ensure(theta.len() >= needed, || format!("theta has length {}, architecture needs {needed}", theta.len()))?;
        ensure_finite(&theta[..needed], "theta")
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        ensure(x.len() == self.arch.input_dim(), || format!("input has length {}, expected {}", x.len(), self.arch.input_dim()))?;
        ensure_finite(x, "x")
    }

    /// Validated forward pass; returns all `l_L` clipped outputs.
    pub fn forward(&self, theta: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta.as_slice())?;
        self.check_input(x)?;
        let trace = self.trace(theta.as_slice(), x);
        let last = trace.pre.last().expect("depth >= 1");
        Ok(last.iter().map(|&z| clamp_unchecked(self.u, self.v, z)).collect())
    }

    /// Validated forward pass for scalar-output networks.
    pub fn forward_scalar(&self, theta: &ParamVector, x: &[f64]) -> Result<f64> {
        self.arch.require_scalar_output()?;
        Ok(self.forward(theta, x)?[0])
    }

    /// Unchecked scalar evaluation for hot loops. Callers validate once.
    pub(crate) fn eval(&self, theta: &[f64], x: &[f64], scratch: &mut Scratch) -> f64 {
        debug_assert_eq!(x.len(), self.arch.input_dim());
        let widths = self.arch.widths();
        let depth = self.arch.depth();
        scratch.cur.clear();
        scratch.cur.extend_from_slice(x);
        let mut offset = 0;
        for layer in 1..=depth {
            let (n, m) = (widths[layer - 1], widths[layer]);
            scratch.next.resize(m, 0.0);
            affine_into(theta, offset, m, n, &scratch.cur, &mut scratch.next);
            offset += m * (n + 1);
            if layer < depth {
                scratch.next.iter_mut().for_each(|z| *z = relu(*z));
            }
            std::mem::swap(&mut scratch.cur, &mut scratch.next);
        }
        clamp_unchecked(self.u, self.v, scratch.cur[0])
    }

    pub(crate) fn trace(&self, theta: &[f64], x: &[f64]) -> Trace {
        let widths = self.arch.widths();
        let depth = self.arch.depth();
        let mut trace = Trace { pre: Vec::with_capacity(depth), post: Vec::with_capacity(depth) };
        trace.post.push(x.to_vec());
        let mut offset = 0;
        for layer in 1..=depth {
            let (n, m) = (widths[layer - 1], widths[layer]);
            let mut z = vec![0.0; m];
            affine_into(theta, offset, m, n, &trace.post[layer - 1], &mut z);
            offset += m * (n + 1);
            if layer < depth {
                trace.post.push(relu_vec(&z));
            }
            trace.pre.push(z);
        }
        trace
    }
}

/// Reusable buffers for [`ClippedNet::eval`].
#[derive(Debug, Default, Clone)]
pub(crate) struct Scratch {
    cur: Vec<f64>,
    next: Vec<f64>,
}

/// Uniform Lipschitz constant (w.r.t. `||.||_inf` on parameters) of
/// `theta -> forward(theta, x)` over `x in [-b, b]^d`, `theta in [-B, B]^d`:
/// `b * L * (||l||_inf + 1)^L * B^(L-1)`.
pub fn lipschitz_param_bound(arch: &Architecture, b: f64, cap: f64) -> Result<f64> {
    ensure(b >= 1.0, || format!("input box half-size must be >= 1, got {b}"))?;
    ensure(cap >= 1.0, || format!("parameter cap must be >= 1, got {cap}"))?;
    let depth = arch.depth() as i32;
    let width = (arch.max_width() + 1) as f64;
    Ok(b * depth as f64 * width.powi(depth) * cap.powi(depth - 1))
}

/// Wraps `theta` for a network, checking the length once.
pub fn params_for(net: &ClippedNet, values: Vec<f64>) -> Result<ParamVector> {
    let theta = ParamVector::new(values)?;
    net.check_theta(theta.as_slice())?;
    Ok(theta)
}

pub(crate) fn require_scalar(net: &ClippedNet) -> Result<()> {
    net.arch()
        .require_scalar_output()
        .map_err(|_| contract(format!("operation requires a scalar-output network, got widths {:?}", net.arch().widths())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(w: &[usize]) -> Architecture {
        Architecture::new(w.to_vec()).unwrap()
    }

    #[test]
    fn param_counts() {
        assert_eq!(param_count(&arch(&[1, 1])), 2);
        assert_eq!(param_count(&arch(&[2, 3, 1])), 13);
        let a = arch(&[3, 5, 4, 1]);
        let last = a.layer_offset(a.depth());
        // one output row of 4 weights plus its bias
        assert_eq!(last + 4 + 1, a.param_count());
    }

    #[test]
    fn architecture_rejects_degenerate_widths() {
        assert!(Architecture::new(vec![3]).is_err());
        assert!(Architecture::new(vec![2, 0, 1]).is_err());
    }

    #[test]
    fn affine_examples() {
        assert_eq!(affine_apply(&[2.0, 3.0], 0, 1, 1, &[1.0]).unwrap(), vec![5.0]);
        assert_eq!(affine_apply(&[0.0; 12], 0, 3, 2, &[4.0, -1.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(affine_apply(&[1.0, -1.0, 0.5, -0.5], 0, 2, 1, &[2.0]).unwrap(), vec![2.5, -2.5]);
        // offset into a longer vector
        assert_eq!(affine_apply(&[9.0, 2.0, 3.0], 1, 1, 1, &[1.0]).unwrap(), vec![5.0]);
    }

    #[test]
    fn affine_dimension_errors() {
        assert!(affine_apply(&[1.0, 2.0], 0, 1, 1, &[1.0, 2.0]).is_err());
        assert!(affine_apply(&[1.0], 0, 1, 1, &[1.0]).is_err());
        assert!(affine_apply(&[1.0, 2.0], 0, 1, 1, &[f64::NAN]).is_err());
    }

    #[test]
    fn relu_and_clip() {
        assert_eq!(relu(-1.0), 0.0);
        assert_eq!(relu(0.0), 0.0);
        assert_eq!(relu(2.5), 2.5);
        assert_eq!(relu_vec(&[-1.0, 3.0]), vec![0.0, 3.0]);
        assert_eq!(clip(0.0, 1.0, 1.7).unwrap(), 1.0);
        assert_eq!(clip(0.0, 1.0, -0.2).unwrap(), 0.0);
        assert_eq!(clip(0.0, 1.0, 0.4).unwrap(), 0.4);
        assert!(clip(1.0, 1.0, 0.4).is_err());
        assert!(clip(2.0, 1.0, 0.4).is_err());
    }

    #[test]
    fn forward_identity_and_abs() {
        let net = ClippedNet::new(arch(&[1, 1]), 0.0, 1.0).unwrap();
        let theta = ParamVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(net.forward(&theta, &[0.5]).unwrap(), vec![0.5]);

        // clip(relu(x) + relu(-x)) = clip(|x|)
        let net = ClippedNet::new(arch(&[1, 2, 1]), 0.0, 1.0).unwrap();
        let theta = ParamVector::new(vec![1.0, -1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(net.forward(&theta, &[0.3]).unwrap(), vec![0.3]);
        assert_eq!(net.forward(&theta, &[-0.3]).unwrap(), vec![0.3]);
        assert_eq!(net.forward(&theta, &[-4.0]).unwrap(), vec![1.0]);
        let mut scratch = Scratch::default();
        assert_eq!(net.eval(theta.as_slice(), &[-0.3], &mut scratch), 0.3);
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let net = ClippedNet::new(arch(&[2, 1]), 0.0, 1.0).unwrap();
        let theta = ParamVector::zeros(3);
        assert!(net.forward(&theta, &[0.1]).is_err());
        assert!(net.forward(&theta, &[0.1, f64::INFINITY]).is_err());
        assert!(net.forward(&ParamVector::zeros(2), &[0.1, 0.2]).is_err());
        assert!(ParamVector::new(vec![f64::NAN]).is_err());
        assert!(ClippedNet::new(arch(&[2, 1]), 1.0, 1.0).is_err());
    }

    #[test]
    fn inert_tail_is_ignored() {
        let net = ClippedNet::new(arch(&[2, 3, 1]), -1.0, 1.0).unwrap();
        let mut values: Vec<f64> = (0..13).map(|i| ((i as f64) * 0.37).sin()).collect();
        let base = net.forward(&ParamVector::new(values.clone()).unwrap(), &[0.2, -0.7]).unwrap();
        values.extend([5.0, -3.0, 100.0]);
        let with_tail = net.forward(&ParamVector::new(values).unwrap(), &[0.2, -0.7]).unwrap();
        assert_eq!(base, with_tail);
    }

    #[test]
    fn lipschitz_constant_examples() {
        assert_eq!(lipschitz_param_bound(&arch(&[1, 1]), 1.0, 1.0).unwrap(), 2.0);
        assert_eq!(lipschitz_param_bound(&arch(&[2, 3, 1]), 1.0, 2.0).unwrap(), 64.0);
        assert!(lipschitz_param_bound(&arch(&[1, 1]), 0.5, 1.0).is_err());
        assert!(lipschitz_param_bound(&arch(&[1, 1]), 1.0, 0.9).is_err());
    }

    #[test]
    fn sup_norm_and_box() {
        let t = ParamVector::new(vec![0.5, -2.0, 1.0]).unwrap();
        assert_eq!(t.sup_norm(), 2.0);
        assert!(t.within_box(2.0));
        assert!(!t.within_box(1.999));
        let diverged = ParamVector::from_raw(vec![0.0, f64::NAN]);
        assert!(diverged.sup_norm().is_nan());
        assert!(!diverged.within_box(1e300));
    }
}
