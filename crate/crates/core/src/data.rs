//! Samples, synthetic targets and the data models that generate them.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{contract, ensure, ensure_finite, Result};
use crate::stream::Stream;

/// One labelled observation `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

/// The input box `[a, b]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBox {
    pub d: usize,
    pub a: f64,
    pub b: f64,
}

impl InputBox {
    pub fn new(d: usize, a: f64, b: f64) -> Result<Self> {
        ensure(d >= 1, || "input dimension must be >= 1".into())?;
        ensure(a.is_finite() && b.is_finite() && b > a, || format!("input box needs finite a < b, got [{a}, {b}]"))?;
        Ok(Self { d, a, b })
    }

    pub fn unit(d: usize) -> Self {
        Self { d, a: 0.0, b: 1.0 }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.d && x.iter().all(|v| *v >= self.a && *v <= self.b)
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn midpoint(&self) -> Vec<f64> {
        vec![0.5 * (self.a + self.b); self.d]
    }

    /// `max{1, |a|, |b|}`, the half-width of the symmetric box `[-b, b]^d`
    /// containing this one.
    pub fn symmetric_radius(&self) -> f64 {
        1f64.max(self.a.abs()).max(self.b.abs())
    }

    pub fn draw(&self, stream: &mut Stream, out: &mut [f64]) {
        stream.fill_uniform(self.a, self.b, out);
    }
}

/// Affine piece `w . x + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffinePiece {
    pub weights: Vec<f64>,
    pub offset: f64,
}

impl AffinePiece {
    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + self.offset
    }

    fn sup_weight(&self) -> f64 {
        self.weights.iter().fold(0.0, |m, w| m.max(w.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetKind {
    /// `clip(w . x + c)`.
    AffineClipped { weights: Vec<f64>, offset: f64 },
    /// `clip(max_k (w_k . x + c_k))`.
    MaxAffine { pieces: Vec<AffinePiece> },
}

/// Target function `E` clipped to its own range `[lo, hi]`.
///
/// The declared Lipschitz constant is with respect to `||.||_1` and equals the
/// largest `|w_i|` over all pieces (clipping does not increase it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetFn {
    pub shape: TargetKind,
    pub lo: f64,
    pub hi: f64,
}

impl TargetFn {
    pub fn affine_clipped(weights: Vec<f64>, offset: f64, lo: f64, hi: f64) -> Result<Self> {
        let t = Self { shape: TargetKind::AffineClipped { weights, offset }, lo, hi };
        t.validate()?;
        Ok(t)
    }

    pub fn max_affine(pieces: Vec<AffinePiece>, lo: f64, hi: f64) -> Result<Self> {
        let t = Self { shape: TargetKind::MaxAffine { pieces }, lo, hi };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi, || {
            format!("target range needs finite lo <= hi, got [{}, {}]", self.lo, self.hi)
        })?;
        match &self.shape {
            TargetKind::AffineClipped { weights, offset } => {
                ensure(!weights.is_empty(), || "target has no weights".into())?;
                ensure_finite(weights, "target.weights")?;
                ensure_finite(&[*offset], "target.offset")
            }
            TargetKind::MaxAffine { pieces } => {
                ensure(!pieces.is_empty(), || "max-affine target has no pieces".into())?;
                let d = pieces[0].weights.len();
                ensure(d >= 1 && pieces.iter().all(|p| p.weights.len() == d), || {
                    "max-affine pieces have inconsistent dimensions".into()
                })?;
                for p in pieces {
                    ensure_finite(&p.weights, "target.pieces.weights")?;
                    ensure_finite(&[p.offset], "target.pieces.offset")?;
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match &self.shape {
            TargetKind::AffineClipped { weights, .. } => weights.len(),
            TargetKind::MaxAffine { pieces } => pieces[0].weights.len(),
        }
    }

    /// Lipschitz constant w.r.t. `||.||_1`.
    pub fn lipschitz(&self) -> f64 {
        match &self.shape {
            TargetKind::AffineClipped { weights, offset } => {
                AffinePiece { weights: weights.clone(), offset: *offset }.sup_weight()
            }
            TargetKind::MaxAffine { pieces } => pieces.iter().fold(0.0, |m, p| m.max(p.sup_weight())),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let raw = match &self.shape {
            TargetKind::AffineClipped { weights, offset } => weights.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + offset,
            TargetKind::MaxAffine { pieces } => pieces.iter().map(|p| p.eval(x)).fold(f64::NEG_INFINITY, f64::max),
        };
        self.lo.max(raw.min(self.hi))
    }

    /// Parameters of a `(d, 1)` clipped network computing this target exactly
    /// when the target is affine-clipped with range equal to the net's `[u, v]`.
    pub fn exact_representer(&self, u: f64, v: f64) -> Option<Vec<f64>> {
        match &self.shape {
            TargetKind::AffineClipped { weights, offset } if self.lo == u && self.hi == v => {
                let mut theta = weights.clone();
                theta.push(*offset);
                Some(theta)
            }
            _ => None,
        }
    }
}

/// Label noise added to `E(X)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Noise {
    None,
    /// `eta` uniform on `{-eps, +eps}`.
    Symmetric {
        eps: f64,
    },
}

impl Noise {
    pub fn variance(&self) -> f64 {
        match self {
            Noise::None => 0.0,
            Noise::Symmetric { eps } => eps * eps,
        }
    }

    /// Support of the noise as `(probability, value)` pairs.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match self {
            Noise::None => vec![(1.0, 0.0)],
            Noise::Symmetric { eps } => vec![(0.5, -eps), (0.5, *eps)],
        }
    }

    fn eps(&self) -> f64 {
        match self {
            Noise::None => 0.0,
            Noise::Symmetric { eps } => *eps,
        }
    }
}

/// Label range `[u, v]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRange {
    pub u: f64,
    pub v: f64,
}

/// `X` uniform on the box, `Y = E(X) + eta`, labels in `[u, v]`.
///
/// With symmetric noise the target's range must sit inside `[u + eps, v - eps]`
/// so labels never need clipping and `E[Y | X] = E(X)` holds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataModel {
    pub input: InputBox,
    pub target: TargetFn,
    pub noise: Noise,
    pub range: LabelRange,
}

impl DataModel {
    pub fn new(input: InputBox, target: TargetFn, noise: Noise, range: LabelRange) -> Result<Self> {
        let model = Self { input, target, noise, range };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        InputBox::new(self.input.d, self.input.a, self.input.b)?;
        self.target.validate()?;
        ensure(self.target.dim() == self.input.d, || {
            format!("target dimension {} does not match input dimension {}", self.target.dim(), self.input.d)
        })?;
        let LabelRange { u, v } = self.range;
        ensure(u.is_finite() && v.is_finite() && v > u, || format!("label range needs finite u < v, got [{u}, {v}]"))?;
        let eps = self.noise.eps();
        ensure(eps >= 0.0 && eps.is_finite(), || format!("noise eps must be >= 0, got {eps}"))?;
        ensure(self.target.lo >= u + eps && self.target.hi <= v - eps, || {
            format!(
                "target range [{}, {}] must lie in [u + eps, v - eps] = [{}, {}]",
                self.target.lo,
                self.target.hi,
                u + eps,
                v - eps
            )
        })
    }

    pub fn noiseless(&self) -> bool {
        self.noise.eps() == 0.0
    }

    pub fn draw(&self, stream: &mut Stream) -> Sample {
        let mut x = vec![0.0; self.input.d];
        self.input.draw(stream, &mut x);
        let y = self.draw_label(self.target.eval(&x), stream);
        Sample { x, y }
    }

    /// `clean + eta` with fresh noise.
    pub fn draw_label(&self, clean: f64, stream: &mut Stream) -> f64 {
        match self.noise {
            Noise::None => clean,
            Noise::Symmetric { eps } => clean + eps * stream.sign(),
        }
    }

    pub fn draw_many(&self, stream: &mut Stream, count: usize) -> Vec<Sample> {
        (0..count).map(|_| self.draw(stream)).collect()
    }
}

/// Checks that every sample lies in the box with label in `[u, v]`.
pub fn validate_samples(samples: &[Sample], input: &InputBox, range: &LabelRange) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        ensure_finite(&s.x, "x")?;
        ensure(input.contains(&s.x), || format!("sample {i}: x = {:?} outside [{}, {}]^{}", s.x, input.a, input.b, input.d))?;
        ensure(s.y.is_finite() && s.y >= range.u && s.y <= range.v, || {
            format!("sample {i}: y = {} outside [{}, {}]", s.y, range.u, range.v)
        })?;
    }
    Ok(())
}

/// Reads a dataset CSV with header `x0,...,x{d-1},y` and validates it.
pub fn read_dataset_csv<R: Read>(reader: R, input: &InputBox, range: &LabelRange) -> Result<Vec<Sample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected: Vec<String> = (0..input.d).map(|i| format!("x{i}")).chain(std::iter::once("y".to_string())).collect();
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    ensure(got == expected, || format!("dataset header {got:?}, expected {expected:?}"))?;
    let mut samples = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let values: Vec<f64> = record
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| contract(format!("dataset row {}: {e}", line + 1)))?;
        let (x, y) = values.split_at(input.d);
        samples.push(Sample { x: x.to_vec(), y: y[0] });
    }
    validate_samples(&samples, input, range)?;
    Ok(samples)
}

pub fn load_dataset(path: &Path, input: &InputBox, range: &LabelRange) -> Result<Vec<Sample>> {
    read_dataset_csv(std::fs::File::open(path)?, input, range)
}

pub fn write_dataset_csv<W: Write>(writer: W, samples: &[Sample]) -> Result<()> {
    let d = samples.first().map_or(0, |s| s.x.len());
    let mut wtr = csv::Writer::from_writer(writer);
    let header: Vec<String> = (0..d).map(|i| format!("x{i}")).chain(std::iter::once("y".to_string())).collect();
    wtr.write_record(&header)?;
    for s in samples {
        let row: Vec<String> = s.x.iter().chain(std::iter::once(&s.y)).map(|v| crate::report::fmt_f64(*v)).collect();
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{derive_stream, Purpose, StreamTag};

    fn model(eps: f64) -> DataModel {
        let target = TargetFn::affine_clipped(vec![0.5, -0.25], 0.5, 0.1, 0.9).unwrap();
        DataModel::new(
            InputBox::unit(2),
            target,
            if eps > 0.0 { Noise::Symmetric { eps } } else { Noise::None },
            LabelRange { u: 0.0, v: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn noise_must_fit_inside_label_range() {
        let target = TargetFn::affine_clipped(vec![1.0], 0.0, 0.0, 1.0).unwrap();
        let bad = DataModel::new(InputBox::unit(1), target, Noise::Symmetric { eps: 0.05 }, LabelRange { u: 0.0, v: 1.0 });
        assert!(bad.is_err());
        assert!(DataModel::new(
            InputBox::unit(2),
            model(0.0).target,
            Noise::Symmetric { eps: 0.1 },
            LabelRange { u: 0.0, v: 1.0 }
        )
        .is_ok());
    }

    #[test]
    fn samples_respect_box_and_range() {
        let m = model(0.1);
        let mut s = derive_stream(1, StreamTag::new(Purpose::Data, 0, 0));
        let samples = m.draw_many(&mut s, 500);
        validate_samples(&samples, &m.input, &m.range).unwrap();
        for smp in &samples {
            let resid = smp.y - m.target.eval(&smp.x);
            assert!((resid.abs() - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn target_lipschitz_and_clip() {
        let t = TargetFn::max_affine(
            vec![AffinePiece { weights: vec![1.0, -2.0], offset: 0.0 }, AffinePiece { weights: vec![0.5, 0.5], offset: 0.1 }],
            0.0,
            1.0,
        )
        .unwrap();
        assert_eq!(t.lipschitz(), 2.0);
        assert_eq!(t.eval(&[1.0, 0.0]), 1.0);
        assert_eq!(t.eval(&[0.0, 1.0]), 0.6);
        assert_eq!(t.eval(&[0.0, 0.0]), 0.1);
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let m = model(0.0);
        let mut s = derive_stream(3, StreamTag::new(Purpose::Data, 0, 0));
        let samples = m.draw_many(&mut s, 20);
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, &samples).unwrap();
        let back = read_dataset_csv(buf.as_slice(), &m.input, &m.range).unwrap();
        assert_eq!(back, samples);

        let bad_header = "x0,x1,label\n0.1,0.2,0.3\n";
        assert!(read_dataset_csv(bad_header.as_bytes(), &m.input, &m.range).is_err());
        let out_of_box = "x0,x1,y\n1.5,0.2,0.3\n";
        assert!(read_dataset_csv(out_of_box.as_bytes(), &m.input, &m.range).is_err());
        let bad_label = "x0,x1,y\n0.5,0.2,1.3\n";
        assert!(read_dataset_csv(bad_label.as_bytes(), &m.input, &m.range).is_err());
    }

    #[test]
    fn exact_representer_only_for_matching_affine() {
        let t = TargetFn::affine_clipped(vec![0.3], 0.2, 0.0, 1.0).unwrap();
        assert_eq!(t.exact_representer(0.0, 1.0), Some(vec![0.3, 0.2]));
        assert_eq!(t.exact_representer(0.0, 2.0), None);
    }
}
