//! Closed-form error bounds and the constructive objects behind them.
//!
//! Architecture quantities used throughout: depth `L`, `||l||_inf` the largest
//! layer width (input and output included), `dim = sum l_i (l_{i-1} + 1)` the
//! parameter count, and the capacity `A = min{L, l_1, ..., l_{L-1}}`.
//! Every bound that is stated as a chain `fine <= coarse` is returned as a pair.

use serde::{Deserialize, Serialize};

use crate::error::{contract, ensure, Error, Result};
use crate::net::{Architecture, ClippedNet, ParamVector};
use crate::stream::Stream;

fn width_plus_one(arch: &Architecture) -> f64 {
    (arch.max_width() + 1) as f64
}

fn depth(arch: &Architecture) -> f64 {
    arch.depth() as f64
}

/// Order of the norm used for covering radii.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormOrder {
    Finite(f64),
    Infinity,
}

impl NormOrder {
    pub fn validate(self) -> Result<Self> {
        match self {
            NormOrder::Finite(p) if !(p >= 1.0 && p.is_finite()) => Err(contract(format!("norm order must be >= 1, got {p}"))),
            _ => Ok(self),
        }
    }

    /// `d^(1/p)`, the factor between the sup-norm and the `p`-norm on `R^d`.
    pub fn dim_factor(self, d: usize) -> f64 {
        match self {
            NormOrder::Finite(p) => (d as f64).powf(1.0 / p),
            NormOrder::Infinity => 1.0,
        }
    }

    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            NormOrder::Infinity => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            NormOrder::Finite(1.0) => v.iter().map(|x| x.abs()).sum(),
            NormOrder::Finite(2.0) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormOrder::Finite(p) => v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }
}

impl Serialize for NormOrder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NormOrder::Finite(p) => s.serialize_f64(*p),
            NormOrder::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for NormOrder {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) => Ok(NormOrder::Finite(p)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for NormOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "Inf" => Ok(NormOrder::Infinity),
            t => t
                .parse::<f64>()
                .map_err(|_| contract(format!("norm order must be a number or \"inf\", got {t:?}")))
                .and_then(|p| NormOrder::Finite(p).validate()),
        }
    }
}

/// `ceil(x)` that treats values within `1e-12` (relative) of an integer as
/// that integer, so `d^(1/p)(b-a)/(2r)` at a grid-derived radius is not bumped
/// up by rounding.
fn snapped_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveringBound {
    /// Centres per axis, `ceil(d^(1/p)(b-a)/(2r))`.
    pub per_axis: u64,
    /// `per_axis^d`, saturating.
    pub count: u128,
    /// `1` if `r >= d(b-a)/2` (finite `p`) or `r >= (b-a)/2` (sup-norm), else `(d(b-a)/r)^d` resp. `((b-a)/r)^d`.
    pub coarse: f64,
}

pub fn covering_number_bound(d: usize, a: f64, b: f64, r: f64, p: NormOrder) -> Result<CoveringBound> {
    ensure(d >= 1, || "dimension must be >= 1".into())?;
    ensure(b > a, || format!("need b > a, got [{a}, {b}]"))?;
    ensure(r > 0.0 && r.is_finite(), || format!("radius must be > 0, got {r}"))?;
    let p = p.validate()?;
    let width = b - a;
    let per_axis = snapped_ceil(p.dim_factor(d) * width / (2.0 * r)).max(1.0);
    let per_axis_int = if per_axis >= u64::MAX as f64 { u64::MAX } else { per_axis as u64 };
    let count = (0..d).fold(1u128, |acc, _| acc.saturating_mul(u128::from(per_axis_int)));
    let spread = match p {
        NormOrder::Finite(_) => d as f64 * width,
        NormOrder::Infinity => width,
    };
    let coarse = if r >= spread / 2.0 { 1.0 } else { (spread / r).powi(d as i32) };
    Ok(CoveringBound { per_axis: per_axis_int, count, coarse })
}

/// Per-axis midpoints `a + (i - 1/2)(b - a)/n`, `i = 1..=n`.
pub fn grid_axis(a: f64, b: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| a + (i as f64 - 0.5) * (b - a) / n as f64).collect()
}

/// The `n^d` product grid of per-axis midpoints, last coordinate fastest.
pub fn covering_grid(d: usize, a: f64, b: f64, n: usize) -> Result<Vec<Vec<f64>>> {
    ensure(n >= 1, || "grid needs at least one centre per axis".into())?;
    ensure(b > a, || format!("need b > a, got [{a}, {b}]"))?;
    let total = n
        .checked_pow(d as u32)
        .filter(|t| *t <= 1 << 26)
        .ok_or_else(|| Error::Capability(format!("{n}^{d} grid centres exceed the supported size")))?;
    let axis = grid_axis(a, b, n);
    Ok((0..total)
        .map(|mut idx| {
            let mut point = vec![0.0; d];
            for slot in point.iter_mut().rev() {
                *slot = axis[idx % n];
                idx /= n;
            }
            point
        })
        .collect())
}

/// Radius at which the `n`-per-axis midpoint grid covers `[a,b]^d` in the `p`-norm.
pub fn covering_radius(d: usize, a: f64, b: f64, n: usize, p: NormOrder) -> f64 {
    p.dim_factor(d) * (b - a) / (2.0 * n as f64)
}

/// Closest grid centre to `x` (per-axis rounding; optimal for every `p`-norm).
pub fn nearest_centre(x: &[f64], a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = (b - a) / n as f64;
    x.iter()
        .map(|&xi| {
            let i = (((xi - a) / h).floor().max(0.0) as usize).min(n - 1);
            a + (i as f64 + 0.5) * h
        })
        .collect()
}

/// Outcome of probing a midpoint grid with random points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringCheck {
    pub d: usize,
    pub n: usize,
    pub p: NormOrder,
    pub radius: f64,
    pub centres: u128,
    pub bound: CoveringBound,
    pub probes: usize,
    /// Largest distance from a probe to its nearest centre.
    pub max_distance: f64,
    pub uncovered: usize,
    pub passed: bool,
}

/// Draws `probes` uniform points in `[a,b]^d` and checks that each lies within
/// the covering radius of the `n`-per-axis grid and that the grid is no larger
/// than the covering-number bound at that radius.
pub fn check_covering(
    d: usize,
    a: f64,
    b: f64,
    n: usize,
    p: NormOrder,
    probes: usize,
    stream: &mut Stream,
) -> Result<CoveringCheck> {
    ensure(d >= 1 && n >= 1 && b > a, || format!("need d, n >= 1 and b > a, got d = {d}, n = {n}, [{a}, {b}]"))?;
    let p = p.validate()?;
    let radius = covering_radius(d, a, b, n, p);
    let bound = covering_number_bound(d, a, b, radius, p)?;
    let centres = (n as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
    let mut x = vec![0.0; d];
    let mut max_distance = 0.0_f64;
    let mut uncovered = 0;
    for _ in 0..probes {
        stream.fill_uniform(a, b, &mut x);
        let c = nearest_centre(&x, a, b, n);
        let diff: Vec<f64> = x.iter().zip(&c).map(|(xi, ci)| xi - ci).collect();
        let dist = p.norm(&diff);
        max_distance = max_distance.max(dist);
        if dist > radius * (1.0 + 1e-12) {
            uncovered += 1;
        }
    }
    Ok(CoveringCheck {
        d,
        n,
        p,
        radius,
        centres,
        passed: uncovered == 0 && centres <= bound.count,
        bound,
        probes,
        max_distance,
        uncovered,
    })
}

/// The network that is constant `value`: only the output bias (the last
/// parameter) is non-zero.
pub fn construct_constant_net(net: &ClippedNet, value: f64) -> Result<ParamVector> {
    crate::net::require_scalar(net)?;
    ensure(value.is_finite() && net.lower() <= value && value <= net.upper(), || {
        format!("constant {value} lies outside [{}, {}]", net.lower(), net.upper())
    })?;
    let mut theta = vec![0.0; net.param_count()];
    *theta.last_mut().expect("nets have parameters") = value;
    ParamVector::new(theta)
}

/// Sup-distance `d L (b-a)/2` of the constant net at the box midpoint from an
/// `L`-Lipschitz (1-norm) target.
pub fn constant_net_error_bound(d: usize, lipschitz: f64, a: f64, b: f64) -> f64 {
    d as f64 * lipschitz * (b - a) / 2.0
}

/// `3 d L (b-a) / A^(1/d)`.
pub fn approx_bound(d: usize, lipschitz: f64, a: f64, b: f64, capacity: f64) -> Result<f64> {
    ensure(capacity > 0.0, || format!("capacity must be > 0, got {capacity}"))?;
    ensure(b > a && d >= 1, || "need b > a and d >= 1".into())?;
    Ok(3.0 * d as f64 * lipschitz * (b - a) / capacity.powf(1.0 / d as f64))
}

/// `min{L, l_1, ..., l_{L-1}}`.
pub fn arch_capacity(arch: &Architecture) -> usize {
    arch.hidden_widths().iter().copied().fold(arch.depth(), usize::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// `"depth"` or `"width"`.
    pub constraint: String,
    /// 1-based hidden layer index for width constraints.
    pub layer: Option<usize>,
    pub required: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub admissible: bool,
    /// First violated constraint.
    pub witness: Option<Violation>,
}

/// Checks the depth and width floors under which the approximation bound
/// holds for capacity `A`. All floors vanish for `A <= 6^d`.
pub fn arch_admissible_for_capacity(arch: &Architecture, d: usize, capacity: f64) -> Admissibility {
    let on = if capacity > 6f64.powi(d as i32) { 1.0 } else { 0.0 };
    let depth_req = capacity * on / (2.0 * d as f64) + 1.0;
    let mut witness = None;
    if (arch.depth() as f64) < depth_req {
        witness = Some(Violation { constraint: "depth".into(), layer: None, required: depth_req, actual: arch.depth() as f64 });
    } else {
        for (idx, &width) in arch.hidden_widths().iter().enumerate() {
            let i = idx + 1;
            let req = if i == 1 { capacity * on } else { on * (capacity / d as f64 - 2.0 * i as f64 + 3.0).max(2.0) };
            if (width as f64) < req {
                witness = Some(Violation { constraint: "width".into(), layer: Some(i), required: req, actual: width as f64 });
                break;
            }
        }
    }
    Admissibility { admissible: witness.is_none(), witness }
}

/// A bound stated as `fine <= coarse`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub fine: f64,
    pub coarse: f64,
}

/// Worst-case generalization error of the empirical risk over `[-B, B]^dim`,
/// for inputs in `[-b, b]^d` and labels in `[u, v]`:
/// fine `9(v-u)^2 L (w+1) sqrt(max{p, ln(4 (M b)^(1/L) (w+1) B)}) / sqrt(M)`,
/// coarse `9(v-u)^2 L (w+1)^2 max{p, ln(3 M B b)} / sqrt(M)`.
pub fn generalization_bound(p: f64, u: f64, v: f64, arch: &Architecture, m: usize, cap: f64, b: f64) -> Result<BoundPair> {
    ensure(p > 0.0 && v > u && m >= 1, || "need p > 0, v > u, M >= 1".into())?;
    let (l, w, m) = (depth(arch), width_plus_one(arch), m as f64);
    let scale = 9.0 * (v - u).powi(2) * l / m.sqrt();
    let inner = (4.0 * (m * b).powf(1.0 / l) * w * cap).ln();
    Ok(BoundPair { fine: scale * w * p.max(inner).sqrt(), coarse: scale * w * w * p.max((3.0 * m * cap * b).ln()) })
}

/// Hypotheses of the generalization bound: `B, b >= 1` and `v >= u + 1`.
pub fn generalization_violations(u: f64, v: f64, cap: f64, b: f64) -> Vec<String> {
    let mut out = Vec::new();
    if cap < 1.0 {
        out.push(format!("B = {cap} < 1"));
    }
    if b < 1.0 {
        out.push(format!("b = {b} < 1"));
    }
    if v < u + 1.0 {
        out.push(format!("v - u = {} < 1", v - u));
    }
    out
}

/// Random-search optimization error after `K` uniform draws on `[-B, B]^dim`:
/// fine `4(v-u) b L (w+1)^L B^L sqrt(max{1, p/dim}) / K^(1/dim)`,
/// coarse with `max{1, p}` and exponent `1/(L (w+1)^2)`.
pub fn optimization_bound(p: f64, u: f64, v: f64, arch: &Architecture, b: f64, cap: f64, k: usize) -> Result<BoundPair> {
    ensure(p > 0.0 && v > u && k >= 1, || "need p > 0, v > u, K >= 1".into())?;
    let (l, w, k) = (depth(arch), width_plus_one(arch), k as f64);
    let dim = arch.param_count() as f64;
    let prefactor = 4.0 * (v - u) * b * l * w.powf(l) * cap.powf(l);
    Ok(BoundPair {
        fine: prefactor * (p / dim).max(1.0).sqrt() / k.powf(1.0 / dim),
        coarse: prefactor * p.max(1.0) / k.powf(1.0 / (l * w * w)),
    })
}

/// Minimum of `K` uniform evaluations of an `L`-Lipschitz (sup-norm) field on
/// `[alpha, beta]^dim`: fine `L(beta-alpha) max{1, (p/dim)^(1/dim)} / K^(1/dim)`,
/// coarse with `max{1, p}`.
pub fn mmc_bound(p: f64, lipschitz: f64, alpha: f64, beta: f64, dim: usize, k: usize) -> Result<BoundPair> {
    ensure(beta > alpha, || format!("need beta > alpha, got [{alpha}, {beta}]"))?;
    ensure(k >= 1 && dim >= 1 && p > 0.0, || "need K >= 1, dim >= 1, p > 0".into())?;
    let (dim, k) = (dim as f64, k as f64);
    let scale = lipschitz * (beta - alpha) / k.powf(1.0 / dim);
    Ok(BoundPair { fine: scale * (p / dim).powf(1.0 / dim).max(1.0), coarse: scale * p.max(1.0) })
}

/// Lipschitz constant of `theta -> empirical risk` on `[-B, B]^dim`:
/// `2(v-u) b L (w+1)^L B^(L-1)`.
pub fn lipschitz_risk_bound(arch: &Architecture, u: f64, v: f64, b: f64, cap: f64) -> Result<f64> {
    ensure(v > u, || "need v > u".into())?;
    Ok(2.0 * (v - u) * crate::net::lipschitz_param_bound(arch, b, cap)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LnReduction {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `ln(3 M B c) <= (23 B / 18) ln(e M)`.
pub fn ln_reduction_check(m: f64, cap: f64, c: f64) -> Result<LnReduction> {
    ensure(m >= 1.0 && c >= 1.0 && cap >= c, || format!("need M, c >= 1 and B >= c, got M={m}, B={cap}, c={c}"))?;
    let lhs = (3.0 * m * cap * c).ln();
    let rhs = 23.0 * cap / 18.0 * (1.0 + m.ln());
    Ok(LnReduction { lhs, rhs, holds: lhs <= rhs })
}

/// `L^p` error bound `2 sqrt(p-1) / sqrt(M) * max_norm` for the mean of `M` i.i.d. vectors.
pub fn mc_lp_bound(p: f64, m: usize, max_centred_norm: f64) -> Result<f64> {
    ensure(p >= 2.0, || format!("the Monte Carlo L^p bound needs p >= 2, got {p}"))?;
    ensure(m >= 1, || "need M >= 1".into())?;
    Ok(2.0 * (p - 1.0).sqrt() / (m as f64).sqrt() * max_centred_norm)
}

/// Inputs of the assembled bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    pub d: usize,
    pub arch: Architecture,
    /// Lipschitz constant of the target (1-norm).
    pub lipschitz: f64,
    pub a: f64,
    pub b: f64,
    pub u: f64,
    pub v: f64,
    pub c: f64,
    pub cap: f64,
    pub m: usize,
    pub k: usize,
    pub p: f64,
    /// Capacity override; defaults to `min{L, l_1, ..., l_{L-1}}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
}

impl BoundInputs {
    pub fn capacity(&self) -> f64 {
        self.capacity.unwrap_or_else(|| arch_capacity(&self.arch) as f64)
    }

    fn check_basic(&self) -> Result<()> {
        ensure(self.b > self.a, || format!("need b > a, got [{}, {}]", self.a, self.b))?;
        ensure(self.v > self.u, || format!("need v > u, got [{}, {}]", self.u, self.v))?;
        ensure(self.m >= 1 && self.k >= 1, || "need M, K >= 1".into())?;
        ensure(self.p > 0.0, || format!("need p > 0, got {}", self.p))?;
        ensure(self.capacity() > 0.0, || "capacity must be > 0".into())?;
        ensure(self.arch.input_dim() == self.d, || {
            format!("architecture input width {} differs from d = {}", self.arch.input_dim(), self.d)
        })?;
        self.arch.require_scalar_output()
    }

    /// Hypotheses of the main squared-error bound, one message per violation.
    pub fn main_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let floor = [1.0, self.lipschitz, self.a.abs(), self.b.abs(), 2.0 * self.u.abs(), 2.0 * self.v.abs()]
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        if self.c < floor {
            out.push(format!("c = {} < max{{1, L, |a|, |b|, 2|u|, 2|v|}} = {floor}", self.c));
        }
        if self.cap < self.c {
            out.push(format!("B = {} < c = {}", self.cap, self.c));
        }
        if let Some(w) = arch_admissible_for_capacity(&self.arch, self.d, self.capacity()).witness {
            out.push(match w.layer {
                Some(i) => format!("hidden layer {i} has width {} < {}", w.actual, w.required),
                None => format!("depth {} < {}", w.actual, w.required),
            });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub formula: String,
    pub approx_term: f64,
    pub generalization_term: f64,
    pub optimization_term: f64,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl BoundReport {
    fn new(formula: &str, approx: f64, generalization: f64, optimization: f64, warnings: Vec<String>) -> Self {
        Self {
            formula: formula.into(),
            approx_term: approx,
            generalization_term: generalization,
            optimization_term: optimization,
            total: approx + generalization + optimization,
            warnings,
        }
    }

    pub fn csv_header() -> &'static str {
        "formula_id,approx,gen,opt,total"
    }

    pub fn csv_row(&self) -> String {
        use crate::report::fmt_f64;
        format!(
            "{},{},{},{},{}",
            self.formula,
            fmt_f64(self.approx_term),
            fmt_f64(self.generalization_term),
            fmt_f64(self.optimization_term),
            fmt_f64(self.total)
        )
    }
}

/// Both displays of the `L^p` bound on the squared `L^2` error of the selected
/// network. With `strict` any hypothesis violation is an error; otherwise the
/// violations are attached as warnings.
pub fn overall_bound_main(inputs: &BoundInputs, strict: bool) -> Result<(BoundReport, BoundReport)> {
    inputs.check_basic()?;
    let warnings = inputs.main_violations();
    if strict && !warnings.is_empty() {
        return Err(Error::Hypothesis(warnings.join("; ")));
    }
    let BoundInputs { d, lipschitz, a, b, u, v, c, cap, p, .. } = *inputs;
    let (d, a_cap) = (d as f64, inputs.capacity());
    let (l, w) = (depth(&inputs.arch), width_plus_one(&inputs.arch));
    let (m, k) = (inputs.m as f64, inputs.k as f64);
    let rate_k = k.powf(1.0 / (l * w * w));
    let cap_term = a_cap.powf(2.0 / d);

    let fine = BoundReport::new(
        "main-fine",
        9.0 * d * d * lipschitz * lipschitz * (b - a) * (b - a) / cap_term,
        18.0 * (v - u).powi(2).max(1.0) * l * w * w * p.max((3.0 * m * cap * c).ln()) / m.sqrt(),
        4.0 * (v - u) * l * w.powf(l) * c.powf(l + 1.0) * p.max(1.0) / rate_k,
        warnings.clone(),
    );
    let coarse = BoundReport::new(
        "main-coarse",
        36.0 * d * d * c.powi(4) / cap_term,
        23.0 * cap.powi(3) * l * w * w * p.max(1.0 + m.ln()) / m.sqrt(),
        4.0 * l * w.powf(l) * c.powf(l + 2.0) * p.max(1.0) / rate_k,
        warnings,
    );
    Ok((fine, coarse))
}

/// Headline bound on the expected `L^1` error over `[0,1]^d` with labels in
/// `[0,1]` and cap `B = c`:
/// `d c^3 / A^(1/d) + c^3 L (w+1) ln(eM) / M^(1/4) + L (w+1)^L c^(L+1) / K^(1/(2L(w+1)^2))`.
pub fn overall_bound_intro(d: usize, arch: &Architecture, c: f64, m: usize, k: usize) -> Result<BoundReport> {
    overall_bound_sgd(d, arch, 0.0, c, c, m, k).map(|(_, mut coarse)| {
        coarse.formula = "intro".into();
        coarse
    })
}

/// The `L^1` bound with a separate cap `B >= c >= max{2, L}`; fine display
/// `3dL/A^(1/d) + 3(w+1) sqrt(2 L ln(3MBc)) / M^(1/4) + 2 sqrt(L (w+1)^L c^(L+1)) / K^(...)`
/// and coarse display `d c^3/A^(1/d) + B^3 L (w+1) ln(eM)/M^(1/4) + L (w+1)^L c^(L+1)/K^(...)`.
pub fn overall_bound_sgd(
    d: usize,
    arch: &Architecture,
    lipschitz: f64,
    c: f64,
    cap: f64,
    m: usize,
    k: usize,
) -> Result<(BoundReport, BoundReport)> {
    ensure(arch.input_dim() == d, || format!("architecture input width {} differs from d = {d}", arch.input_dim()))?;
    arch.require_scalar_output()?;
    ensure(m >= 1 && k >= 1, || "need M, K >= 1".into())?;
    let mut warnings = Vec::new();
    if c < 2f64.max(lipschitz) {
        warnings.push(format!("c = {c} < max{{2, L}}"));
    }
    if cap < c {
        warnings.push(format!("B = {cap} < c = {c}"));
    }
    let (df, l, w) = (d as f64, depth(arch), width_plus_one(arch));
    let (m, k) = (m as f64, k as f64);
    let a_root = (arch_capacity(arch) as f64).powf(1.0 / df);
    let rate_k = k.powf(1.0 / (2.0 * l * w * w));
    let opt_core = l * w.powf(l) * c.powf(l + 1.0);
    let fine = BoundReport::new(
        "sgd-fine",
        3.0 * df * lipschitz / a_root,
        3.0 * w * (2.0 * l * (3.0 * m * cap * c).ln()).sqrt() / m.powf(0.25),
        2.0 * opt_core.sqrt() / rate_k,
        warnings.clone(),
    );
    let coarse = BoundReport::new(
        "sgd-coarse",
        df * c.powi(3) / a_root,
        cap.powi(3) * l * w * (1.0 + m.ln()) / m.powf(0.25),
        opt_core / rate_k,
        warnings,
    );
    Ok((fine, coarse))
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;

    fn arch(w: &[usize]) -> Architecture {
        Architecture::new(w.to_vec()).unwrap()
    }

    #[test]
    fn covering_check_small() {
        let mut s = crate::stream::derive_stream(1, crate::stream::StreamTag::new(crate::stream::Purpose::Probe, 0, 0));
        for p in [NormOrder::Finite(1.0), NormOrder::Finite(2.0), NormOrder::Infinity] {
            let c = check_covering(2, -1.0, 1.0, 4, p, 2000, &mut s).unwrap();
            assert!(c.passed, "{c:?}");
            assert_eq!(c.centres, 16);
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn covering_examples() {
        let b = covering_number_bound(1, 0.0, 1.0, 0.5, NormOrder::Infinity).unwrap();
        assert_eq!(b.count, 1);
        assert_eq!(covering_number_bound(2, 0.0, 1.0, 0.25, NormOrder::Infinity).unwrap().count, 4);
        assert_eq!(covering_number_bound(2, 0.0, 1.0, 0.5, NormOrder::Finite(1.0)).unwrap().count, 4);
        assert!(covering_number_bound(2, 0.0, 1.0, 0.0, NormOrder::Infinity).is_err());
        assert!(covering_number_bound(2, 0.0, 1.0, 0.1, NormOrder::Finite(0.5)).is_err());
    }

    #[test]
    fn covering_count_at_grid_radius_is_exact() {
        for d in 1..=3 {
            for n in 1..=8 {
                for p in [NormOrder::Finite(1.0), NormOrder::Finite(2.0), NormOrder::Infinity] {
                    let r = covering_radius(d, -0.3, 1.7, n, p);
                    let bound = covering_number_bound(d, -0.3, 1.7, r, p).unwrap();
                    assert_eq!(bound.count, (n as u128).pow(d as u32), "d={d} n={n} p={p:?}");
                }
            }
        }
    }

    #[test]
    fn grid_examples() {
        assert_eq!(covering_grid(1, 0.0, 1.0, 2).unwrap(), vec![vec![0.25], vec![0.75]]);
        assert_eq!(covering_grid(2, 0.0, 2.0, 1).unwrap(), vec![vec![1.0, 1.0]]);
        assert_eq!(covering_grid(3, 0.0, 1.0, 4).unwrap().len(), 64);
        assert_eq!(nearest_centre(&[0.0, 1.0, 0.49], 0.0, 1.0, 2), vec![0.25, 0.75, 0.25]);
    }

    #[test]
    fn norm_order_parsing() {
        assert_eq!("inf".parse::<NormOrder>().unwrap(), NormOrder::Infinity);
        assert_eq!("2".parse::<NormOrder>().unwrap(), NormOrder::Finite(2.0));
        assert!("0.5".parse::<NormOrder>().is_err());
        let parsed: Vec<NormOrder> = serde_json::from_str(r#"[1, "inf"]"#).unwrap();
        assert_eq!(parsed, vec![NormOrder::Finite(1.0), NormOrder::Infinity]);
    }

    #[test]
    fn constant_net() {
        let net = ClippedNet::new(arch(&[2, 3, 1]), 0.0, 1.0).unwrap();
        let theta = construct_constant_net(&net, 0.7).unwrap();
        assert_eq!(theta.sup_norm(), 0.7);
        for x in [[0.0, 0.0], [0.3, -5.0], [9.0, 2.0]] {
            assert_eq!(net.forward_scalar(&theta, &x).unwrap(), 0.7);
        }
        assert_eq!(net.forward_scalar(&construct_constant_net(&net, 0.0).unwrap(), &[1.0, 1.0]).unwrap(), 0.0);
        assert!(construct_constant_net(&net, 1.5).is_err());
    }

    #[test]
    fn approx_examples() {
        assert_eq!(approx_bound(1, 1.0, 0.0, 1.0, 8.0).unwrap(), 0.375);
        assert!((approx_bound(2, 2.0, 0.0, 1.0, 36.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(approx_bound(1, 1.0, 0.0, 1.0, 0.0).is_err());
        assert!(rel(approx_bound(3, 1.5, 0.0, 2.0, 10.0).unwrap(), 12.53228985075450301) < 1e-12);
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(arch_capacity(&arch(&[2, 3, 1])), 2);
        assert_eq!(arch_capacity(&arch(&[4, 1])), 1);
        assert_eq!(arch_capacity(&arch(&[1, 5, 7, 1])), 3);
    }

    #[test]
    fn admissibility() {
        assert!(arch_admissible_for_capacity(&arch(&[1, 1]), 1, 6.0).admissible);
        let ok = arch(&[1, 7, 6, 4, 2, 1]);
        assert!(arch_admissible_for_capacity(&ok, 1, 7.0).admissible);
        let shallow = arch(&[1, 7, 6, 4, 1]);
        assert_eq!(arch_admissible_for_capacity(&shallow, 1, 7.0).witness.unwrap().constraint, "depth");
        let thin = arch(&[1, 6, 6, 4, 2, 1]);
        let w = arch_admissible_for_capacity(&thin, 1, 7.0).witness.unwrap();
        assert_eq!((w.layer, w.required), (Some(1), 7.0));
        let thin3 = arch(&[1, 7, 6, 3, 2, 1]);
        assert_eq!(arch_admissible_for_capacity(&thin3, 1, 7.0).witness.unwrap().layer, Some(3));
    }

    #[test]
    fn generalization_examples() {
        let g = generalization_bound(2.0, 0.0, 1.0, &arch(&[1, 1]), 10_000, 1.0, 1.0).unwrap();
        assert!(rel(g.coarse, 3.7112229578319452739) < 1e-12);
        assert!(rel(g.fine, 0.60480487266758607417) < 1e-12);
        let g2 = generalization_bound(2.0, 0.0, 1.0, &arch(&[1, 1]), 20_000, 1.0, 1.0).unwrap();
        assert!(g2.coarse < g.coarse && g2.fine < g.fine);
        assert_eq!(generalization_violations(0.0, 0.5, 1.0, 1.0).len(), 1);
    }

    #[test]
    fn optimization_examples() {
        let a = arch(&[1, 1]);
        let one = optimization_bound(1.0, 0.0, 1.0, &a, 1.0, 1.0, 1).unwrap();
        assert_eq!(one.fine, 4.0 * 2.0);
        let hundred = optimization_bound(1.0, 0.0, 1.0, &a, 1.0, 1.0, 100).unwrap();
        assert!((hundred.fine - one.fine / 10.0).abs() < 1e-12);
        let o = optimization_bound(3.0, 0.0, 1.0, &arch(&[2, 3, 1]), 1.5, 2.0, 1000).unwrap();
        assert!(rel(o.fine, 451.4316343507133054) < 1e-12);
        assert!(rel(o.coarse, 1856.6604006024541064) < 1e-12);
    }

    #[test]
    fn mmc_examples() {
        let b = mmc_bound(2.0, 1.0, 0.0, 1.0, 2, 10_000).unwrap();
        assert!((b.fine - 0.01).abs() < 1e-15);
        let b = mmc_bound(1.0, 1.0, 0.0, 1.0, 2, 10_000).unwrap();
        assert!((b.fine - 0.01).abs() < 1e-15);
        let b = mmc_bound(5.0, 2.0, -1.0, 2.0, 3, 500).unwrap();
        assert!(rel(b.fine, 0.89628094931143294175) < 1e-12);
        assert!(rel(b.coarse, 3.7797631496846194943) < 1e-12);
        let mut last = f64::INFINITY;
        for k in 1..200 {
            let f = mmc_bound(1.0, 1.0, 0.0, 1.0, 2, k).unwrap().fine;
            assert!(f <= last);
            last = f;
        }
    }

    #[test]
    fn lipschitz_risk_examples() {
        assert_eq!(lipschitz_risk_bound(&arch(&[1, 1]), 0.0, 1.0, 1.0, 1.0).unwrap(), 4.0);
        assert_eq!(lipschitz_risk_bound(&arch(&[1, 1]), 0.0, 2.0, 1.0, 1.0).unwrap(), 8.0);
        assert_eq!(lipschitz_risk_bound(&arch(&[2, 3, 1]), -1.0, 2.0, 1.5, 2.0).unwrap(), 576.0);
    }

    #[test]
    fn ln_reduction() {
        let r = ln_reduction_check(1.0, 1.0, 1.0).unwrap();
        assert!(rel(r.lhs, 1.0986122886681096914) < 1e-12 && rel(r.rhs, 1.2777777777777777778) < 1e-12);
        assert!(r.holds);
        assert!(ln_reduction_check(1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn mc_lp() {
        assert_eq!(mc_lp_bound(2.0, 4, 1.0).unwrap(), 1.0);
        assert!(rel(mc_lp_bound(4.0, 100, 0.5).unwrap(), 0.17320508075688772935) < 1e-12);
        assert!(mc_lp_bound(1.5, 4, 1.0).is_err());
    }

    fn main_inputs() -> BoundInputs {
        BoundInputs {
            d: 1,
            arch: arch(&[1, 8, 1]),
            lipschitz: 1.0,
            a: 0.0,
            b: 1.0,
            u: 0.0,
            v: 1.0,
            c: 2.0,
            cap: 2.0,
            m: 1_000_000,
            k: 1_000_000,
            p: 2.0,
            capacity: None,
        }
    }

    #[test]
    fn main_bound_oracle() {
        let (fine, coarse) = overall_bound_main(&main_inputs(), true).unwrap();
        assert!(rel(fine.approx_term, 2.25) < 1e-12);
        assert!(rel(fine.optimization_term, 9520.4604120084366107) < 1e-12);
        assert!(rel(fine.generalization_term, 47.532016577805632192) < 1e-12);
        assert!(rel(coarse.approx_term, 144.0) < 1e-12);
        assert!(rel(coarse.optimization_term, 19040.920824016873221) < 1e-12);
        assert!(rel(coarse.generalization_term, 441.6207387117990825) < 1e-12);
        for r in [&fine, &coarse] {
            assert_eq!(r.total, r.approx_term + r.generalization_term + r.optimization_term);
        }
    }

    #[test]
    fn main_bound_hypotheses() {
        let mut inputs = main_inputs();
        inputs.c = 0.5;
        assert!(matches!(overall_bound_main(&inputs, true), Err(Error::Hypothesis(_))));
        let (fine, _) = overall_bound_main(&inputs, false).unwrap();
        assert_eq!(fine.warnings.len(), 1);
        inputs.cap = 0.25;
        assert_eq!(overall_bound_main(&inputs, false).unwrap().0.warnings.len(), 2);
    }

    #[test]
    fn intro_bound_oracle() {
        let r = overall_bound_intro(1, &arch(&[1, 4, 1]), 2.0, 10_000, 10_000).unwrap();
        assert!(rel(r.approx_term, 4.0) < 1e-12);
        assert!(rel(r.generalization_term, 81.682722975809461889) < 1e-12);
        assert!(rel(r.optimization_term, 364.80433574236389685) < 1e-12);
        let deep = overall_bound_intro(2, &arch(&[2, 1, 1]), 3.0, 10, 10).unwrap();
        assert_eq!(deep.approx_term, 2.0 * 27.0);
    }

    #[test]
    fn sgd_bound_oracle() {
        let (fine, coarse) = overall_bound_sgd(1, &arch(&[1, 4, 1]), 1.0, 2.0, 3.0, 10_000, 10_000).unwrap();
        assert!(rel(fine.approx_term, 1.5) < 1e-12);
        assert!(rel(fine.generalization_term, 10.435823358453856412) < 1e-12);
        assert!(rel(fine.optimization_term, 36.480433574236389685) < 1e-12);
        assert!(rel(coarse.generalization_term, 275.67919004335693387) < 1e-12);
    }

    #[test]
    fn intro_matches_coarse_main_structure() {
        // with u=0, v=1, a=0, b=1, B=c the intro display equals the sgd coarse display
        let a = arch(&[1, 4, 1]);
        let intro = overall_bound_intro(1, &a, 2.0, 1000, 100).unwrap();
        let (_, coarse) = overall_bound_sgd(1, &a, 1.0, 2.0, 2.0, 1000, 100).unwrap();
        assert_eq!(intro.total, coarse.total);
    }
}
