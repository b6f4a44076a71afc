//! Octave convolution over high/low spatial-frequency feature pairs.
//!
//! A feature map with `C` channels is held as a full-resolution high part with
//! `C - ⌊αC⌋` channels and a half-resolution low part with `⌊αC⌋` channels.
//! Four conv paths map between them: high→high, high→low (after a 2×2
//! average pool), low→high (followed by a nearest ×2 upsample) and low→low.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{ConvSpec, PoolSpec};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OctavePath {
    HighToHigh,
    HighToLow,
    LowToHigh,
    LowToLow,
}

impl OctavePath {
    pub const ALL: [OctavePath; 4] = [
        OctavePath::HighToHigh,
        OctavePath::HighToLow,
        OctavePath::LowToHigh,
        OctavePath::LowToLow,
    ];

    /// Short name used in parameter names, e.g. `block2.conv.hl.weight`.
    pub fn tag(self) -> &'static str {
        match self {
            OctavePath::HighToHigh => "hh",
            OctavePath::HighToLow => "hl",
            OctavePath::LowToHigh => "lh",
            OctavePath::LowToLow => "ll",
        }
    }
}

/// Splits `channels` into `(high, low)` counts for ratio `alpha`.
pub fn split_channels(channels: usize, alpha: f64) -> (usize, usize) {
    let low = (alpha * channels as f64).floor() as usize;
    (channels - low, low)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OctaveSpec {
    pub base: ConvSpec,
    pub alpha_in: f64,
    pub alpha_out: f64,
    pub depthwise: bool,
}

impl OctaveSpec {
    pub fn new(base: ConvSpec, alpha_in: f64, alpha_out: f64) -> Self {
        Self {
            base,
            alpha_in,
            alpha_out,
            depthwise: false,
        }
    }

    /// Depth-wise form over `channels` with a single ratio.
    pub fn depthwise(channels: usize, k: usize, alpha: f64) -> Self {
        Self {
            base: ConvSpec::depthwise(channels, 1, k),
            alpha_in: alpha,
            alpha_out: alpha,
            depthwise: true,
        }
    }

    pub fn with_stride(mut self, s: usize) -> Self {
        self.base = self.base.with_stride(s);
        self
    }

    pub fn in_split(&self) -> (usize, usize) {
        split_channels(self.base.in_channels, self.alpha_in)
    }

    pub fn out_split(&self) -> (usize, usize) {
        split_channels(self.base.out_channels, self.alpha_out)
    }

    /// Both ratios zero: the layer is an ordinary convolution.
    pub fn is_vanilla(&self) -> bool {
        self.alpha_in == 0.0 && self.alpha_out == 0.0
    }

    /// Stride-2 octave layers average-pool both inputs and then run stride 1.
    pub fn pre_pools(&self) -> bool {
        !self.is_vanilla() && self.base.stride == (2, 2)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        for a in [self.alpha_in, self.alpha_out] {
            if !(0.0..1.0).contains(&a) {
                return Err(Error::Octave(format!("ratio {a} outside [0, 1)")));
            }
        }
        if self.base.bias {
            return Err(Error::Octave("octave convolutions carry no bias".into()));
        }
        if self.depthwise {
            if !self.base.is_depthwise() || self.base.out_channels != self.base.in_channels {
                return Err(Error::Octave("depth-wise form needs groups = in = out channels".into()));
            }
            if self.alpha_in != self.alpha_out {
                return Err(Error::Octave(
                    "depth-wise form needs equal input and output ratios".into(),
                ));
            }
        } else if self.base.groups != 1 {
            return Err(Error::Octave(
                "grouped octave convolution must use the depth-wise form".into(),
            ));
        }
        if !self.is_vanilla() {
            let (kh, kw) = self.base.kernel;
            if kh % 2 == 0 || kw % 2 == 0 || self.base.padding != (kh / 2, kw / 2) {
                return Err(Error::Octave("octave layers need odd kernels with same padding".into()));
            }
            if self.base.stride != (1, 1) && self.base.stride != (2, 2) {
                return Err(Error::Octave(format!(
                    "unsupported octave stride {:?}",
                    self.base.stride
                )));
            }
        }
        Ok(())
    }

    /// Conv spec of one path, or `None` when the path has no weights.
    pub fn path_spec(&self, path: OctavePath) -> Option<ConvSpec> {
        let (hi_in, lo_in) = self.in_split();
        let (hi_out, lo_out) = self.out_split();
        let (cin, cout) = match path {
            OctavePath::HighToHigh => (hi_in, hi_out),
            OctavePath::HighToLow => (hi_in, lo_out),
            OctavePath::LowToHigh => (lo_in, hi_out),
            OctavePath::LowToLow => (lo_in, lo_out),
        };
        if cin == 0 || cout == 0 {
            return None;
        }
        let cross = matches!(path, OctavePath::HighToLow | OctavePath::LowToHigh);
        if self.depthwise && cross {
            return None;
        }
        let stride = if self.is_vanilla() { self.base.stride.0 } else { 1 };
        let spec = ConvSpec {
            in_channels: cin,
            out_channels: cout,
            groups: if self.depthwise { cin } else { 1 },
            ..self.base
        };
        Some(spec.with_stride(stride))
    }

    pub fn param_count(&self) -> usize {
        OctavePath::ALL
            .iter()
            .filter_map(|&p| self.path_spec(p))
            .map(|s| s.param_count())
            .sum()
    }

    /// Output pair shapes for the given input pair shapes.
    pub fn output_shapes(&self, high: Shape) -> Result<(Shape, Option<Shape>)> {
        let (hi_out, lo_out) = self.out_split();
        if self.is_vanilla() {
            return Ok((self.base.output_shape(high)?, None));
        }
        let (h, w) = if self.pre_pools() {
            (
                PoolSpec::HALVE.output_extent(high.h)?,
                PoolSpec::HALVE.output_extent(high.w)?,
            )
        } else {
            (high.h, high.w)
        };
        let hs = Shape::new(high.n, hi_out, h, w);
        let ls = (lo_out > 0).then(|| Shape::new(high.n, lo_out, h / 2, w / 2));
        Ok((hs, ls))
    }
}

/// A feature map split into frequency groups. Plain maps have no low part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OctavePair<V> {
    pub high: V,
    pub low: Option<V>,
}

impl<V> OctavePair<V> {
    pub fn plain(high: V) -> Self {
        Self { high, low: None }
    }
}

/// Per-path weights; absent paths must be `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct OctaveWeights<V> {
    pub hh: Option<V>,
    pub hl: Option<V>,
    pub lh: Option<V>,
    pub ll: Option<V>,
}

impl<V> OctaveWeights<V> {
    pub fn get(&self, path: OctavePath) -> Option<&V> {
        match path {
            OctavePath::HighToHigh => self.hh.as_ref(),
            OctavePath::HighToLow => self.hl.as_ref(),
            OctavePath::LowToHigh => self.lh.as_ref(),
            OctavePath::LowToLow => self.ll.as_ref(),
        }
    }

    /// Builds weights for every path `spec` needs.
    pub fn from_fn(spec: &OctaveSpec, mut f: impl FnMut(OctavePath, ConvSpec) -> V) -> Self {
        let mut pick = |p| spec.path_spec(p).map(|s| f(p, s));
        Self {
            hh: pick(OctavePath::HighToHigh),
            hl: pick(OctavePath::HighToLow),
            lh: pick(OctavePath::LowToHigh),
            ll: pick(OctavePath::LowToLow),
        }
    }
}

fn check_resolution(high: Shape, low: Shape) -> Result<()> {
    if low.h != high.h / 2 || low.w != high.w / 2 || low.n != high.n {
        return Err(Error::Octave(format!(
            "low branch {low} is not at half the resolution of high branch {high}"
        )));
    }
    Ok(())
}

fn sum_opt<T: Element>(tape: &mut Tape<T>, a: Option<Var>, b: Option<Var>) -> Result<Option<Var>> {
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(tape.add(a, b)?),
        (a, b) => a.or(b),
    })
}

/// Records an octave convolution on `tape`.
pub fn octave_conv<T: Element>(
    tape: &mut Tape<T>,
    x: OctavePair<Var>,
    spec: &OctaveSpec,
    weights: &OctaveWeights<Var>,
) -> Result<OctavePair<Var>> {
    spec.validate()?;
    for path in OctavePath::ALL {
        if spec.path_spec(path).is_some() != weights.get(path).is_some() {
            return Err(Error::Octave(format!(
                "weight presence mismatch on path {}",
                path.tag()
            )));
        }
    }
    let (hi_in, lo_in) = spec.in_split();
    let hs = tape.shape(x.high);
    if hs.c != hi_in {
        return Err(Error::Octave(format!(
            "high branch has {} channels, expected {hi_in}",
            hs.c
        )));
    }
    match (x.low, lo_in) {
        (None, 0) => {}
        (Some(l), n) if n > 0 => {
            let ls = tape.shape(l);
            check_resolution(hs, ls)?;
            if ls.c != lo_in {
                return Err(Error::Octave(format!(
                    "low branch has {} channels, expected {lo_in}",
                    ls.c
                )));
            }
        }
        (None, _) => {
            return Err(Error::Octave(
                "input ratio is positive but the low branch is absent".into(),
            ))
        }
        (Some(_), _) => return Err(Error::Octave("low branch given for a zero input ratio".into())),
    }

    let mut xh = x.high;
    let mut xl = x.low;
    if spec.pre_pools() {
        xh = tape.avg_pool2d(xh, PoolSpec::HALVE)?;
        xl = xl.map(|l| tape.avg_pool2d(l, PoolSpec::HALVE)).transpose()?;
        if let Some(l) = xl {
            check_resolution(tape.shape(xh), tape.shape(l))?;
        }
    }

    let conv = |tape: &mut Tape<T>, input: Var, path: OctavePath| -> Result<Option<Var>> {
        match (spec.path_spec(path), weights.get(path)) {
            (Some(s), Some(&w)) => Ok(Some(tape.conv2d(input, w, None, s)?)),
            _ => Ok(None),
        }
    };

    let hh = conv(tape, xh, OctavePath::HighToHigh)?;
    let (mut lh, mut ll) = (None, None);
    if let Some(l) = xl {
        lh = conv(tape, l, OctavePath::LowToHigh)?;
        ll = conv(tape, l, OctavePath::LowToLow)?;
    }
    let hl = if spec.path_spec(OctavePath::HighToLow).is_some() {
        let pooled = tape.avg_pool2d(xh, PoolSpec::HALVE)?;
        conv(tape, pooled, OctavePath::HighToLow)?
    } else {
        None
    };
    let lh_up = match lh {
        Some(v) => {
            let target = tape.shape(hh.unwrap_or(xh));
            Some(tape.upsample_nearest(v, target.h, target.w))
        }
        None => None,
    };
    let high = sum_opt(tape, hh, lh_up)?.ok_or_else(|| Error::Octave("no path produces a high output".into()))?;
    let low = sum_opt(tape, hl, ll)?;
    if let Some(l) = low {
        check_resolution(tape.shape(high), tape.shape(l))?;
    }
    Ok(OctavePair { high, low })
}

/// First octave layer: plain input, `alpha_in = 0`.
pub fn octave_entry<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    spec: &OctaveSpec,
    weights: &OctaveWeights<Var>,
) -> Result<OctavePair<Var>> {
    if spec.alpha_in != 0.0 {
        return Err(Error::Octave("entry layer needs a zero input ratio".into()));
    }
    octave_conv(tape, OctavePair::plain(x), spec, weights)
}

/// Last octave layer: merges back to one full-resolution map, `alpha_out = 0`.
pub fn octave_exit<T: Element>(
    tape: &mut Tape<T>,
    x: OctavePair<Var>,
    spec: &OctaveSpec,
    weights: &OctaveWeights<Var>,
) -> Result<Var> {
    if spec.alpha_out != 0.0 {
        return Err(Error::Octave("exit layer needs a zero output ratio".into()));
    }
    Ok(octave_conv(tape, x, spec, weights)?.high)
}

/// Tape-free evaluation of [`octave_conv`] on concrete tensors.
pub fn octave_conv_tensors<T: Element>(
    x: &OctavePair<Tensor<T>>,
    spec: &OctaveSpec,
    weights: &OctaveWeights<Tensor<T>>,
) -> Result<OctavePair<Tensor<T>>> {
    let mut tape = Tape::new();
    let xv = OctavePair {
        high: tape.constant(x.high.clone()),
        low: x.low.as_ref().map(|l| tape.constant(l.clone())),
    };
    let wv = OctaveWeights {
        hh: weights.hh.as_ref().map(|w| tape.constant(w.clone())),
        hl: weights.hl.as_ref().map(|w| tape.constant(w.clone())),
        lh: weights.lh.as_ref().map(|w| tape.constant(w.clone())),
        ll: weights.ll.as_ref().map(|w| tape.constant(w.clone())),
    };
    let y = octave_conv(&mut tape, xv, spec, &wv)?;
    Ok(OctavePair {
        high: tape.value(y.high).clone(),
        low: y.low.map(|l| tape.value(l).clone()),
    })
}
