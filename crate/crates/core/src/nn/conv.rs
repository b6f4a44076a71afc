//! 2-D cross-correlation with zero padding, stride and channel groups.
//!
//! Every group is lowered to im2col + GEMM; 1×1 stride-1 unpadded kernels skip
//! the column copy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Square `k×k` kernel, stride 1, "same" padding `k/2`, no bias.
    pub fn new(in_channels: usize, out_channels: usize, k: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: (1, 1),
            padding: (k / 2, k / 2),
            groups: 1,
            bias: false,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1)
    }

    /// Depth-wise: `groups = channels`, `out = channels · multiplier`.
    pub fn depthwise(channels: usize, multiplier: usize, k: usize) -> Self {
        Self {
            groups: channels,
            ..Self::new(channels, channels * multiplier, k)
        }
    }

    pub fn with_stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn with_padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn with_groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups > 1
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Conv("channel counts must be positive".into()));
        }
        if self.groups == 0
            || !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(Error::Conv(format!(
                "{} -> {} channels not divisible by {} groups",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        if kh == 0 || kw == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::Conv("kernel and stride must be positive".into()));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_per_group(), self.kernel.0, self.kernel.1)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + if self.bias { self.out_channels } else { 0 }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (ph, pw) = self.padding;
        if kh > h + 2 * ph || kw > w + 2 * pw {
            return Err(Error::Conv(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * ph,
                w + 2 * pw
            )));
        }
        Ok((
            (h + 2 * ph - kh) / self.stride.0 + 1,
            (w + 2 * pw - kw) / self.stride.1 + 1,
        ))
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.in_channels {
            return Err(Error::Conv(format!(
                "input has {} channels, spec expects {}",
                input.c, self.in_channels
            )));
        }
        let (oh, ow) = self.output_hw(input.h, input.w)?;
        Ok(Shape::new(input.n, self.out_channels, oh, ow))
    }

    fn is_plain_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.padding == (0, 0)
    }
}

struct Geometry {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

fn check<T: Element>(input: &Tensor<T>, spec: &ConvSpec, weight: &Tensor<T>) -> Result<Shape> {
    spec.validate()?;
    if weight.shape() != spec.weight_shape() {
        return Err(Error::Conv(format!(
            "weight shape {} does not match spec {}",
            weight.shape(),
            spec.weight_shape()
        )));
    }
    spec.output_shape(input.shape())
}

/// Columns for one sample and one group: rows `(c, ki, kj)`, columns `(oy, ox)`.
fn im2col<T: Element>(plane: &[T], channels: usize, spec: &ConvSpec, g: &Geometry, cols: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let positions = g.oh * g.ow;
    for c in 0..channels {
        let src = &plane[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..g.oh {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy as usize >= g.h {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        *v = if ix < 0 || ix as usize >= g.w {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], channels: usize, spec: &ConvSpec, g: &Geometry, plane: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let positions = g.oh * g.ow;
    for c in 0..channels {
        let dst = &mut plane[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..g.oh {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[iy as usize * g.w + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let out_shape = check(input, spec, weight)?;
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::Conv(format!(
                "bias has {} values for {} output channels",
                b.len(),
                spec.out_channels
            )));
        }
    }
    let s = input.shape();
    let g = Geometry {
        h: s.h,
        w: s.w,
        oh: out_shape.h,
        ow: out_shape.w,
    };
    let (cg, og) = (spec.in_per_group(), spec.out_per_group());
    let ksize = cg * spec.kernel.0 * spec.kernel.1;
    let positions = g.oh * g.ow;
    let mut out = Tensor::zeros(out_shape);
    let mut cols = vec![
        T::zero();
        if spec.is_plain_pointwise() {
            0
        } else {
            ksize * positions
        }
    ];
    let x = input.data();
    let w = weight.data();
    let o = out.data_mut();
    for n in 0..s.n {
        for grp in 0..spec.groups {
            let plane = &x[(n * s.c + grp * cg) * s.plane()..(n * s.c + (grp + 1) * cg) * s.plane()];
            let lhs = &w[grp * og * ksize..(grp + 1) * og * ksize];
            let dst = &mut o
                [(n * spec.out_channels + grp * og) * positions..(n * spec.out_channels + (grp + 1) * og) * positions];
            if spec.is_plain_pointwise() {
                T::gemm(og, ksize, positions, lhs, false, plane, false, T::zero(), dst);
            } else {
                im2col(plane, cg, spec, &g, &mut cols);
                T::gemm(og, ksize, positions, lhs, false, &cols, false, T::zero(), dst);
            }
        }
        if let Some(b) = bias {
            for (oc, &bv) in b.data().iter().enumerate() {
                let base = (n * spec.out_channels + oc) * positions;
                o[base..base + positions].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution with respect to input, weight and (optional) bias.
pub struct ConvGrads<T: Element> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let out_shape = check(input, spec, weight)?;
    if grad_out.shape() != out_shape {
        return Err(Error::ShapeMismatch {
            left: grad_out.shape(),
            right: out_shape,
        });
    }
    let s = input.shape();
    let g = Geometry {
        h: s.h,
        w: s.w,
        oh: out_shape.h,
        ow: out_shape.w,
    };
    let (cg, og) = (spec.in_per_group(), spec.out_per_group());
    let ksize = cg * spec.kernel.0 * spec.kernel.1;
    let positions = g.oh * g.ow;
    let pointwise = spec.is_plain_pointwise();

    let mut gx = Tensor::zeros(s);
    let mut gw = Tensor::zeros(weight.shape());
    let mut cols = vec![T::zero(); if pointwise { 0 } else { ksize * positions }];
    let mut dcols = vec![T::zero(); ksize * positions];
    let x = input.data();
    let w = weight.data();
    let dy = grad_out.data();
    for n in 0..s.n {
        for grp in 0..spec.groups {
            let in_range = (n * s.c + grp * cg) * s.plane()..(n * s.c + (grp + 1) * cg) * s.plane();
            let dy_g = &dy
                [(n * spec.out_channels + grp * og) * positions..(n * spec.out_channels + (grp + 1) * og) * positions];
            let w_g = &w[grp * og * ksize..(grp + 1) * og * ksize];
            // dW_g += dY_g · colsᵀ
            let rhs: &[T] = if pointwise {
                &x[in_range.clone()]
            } else {
                im2col(&x[in_range.clone()], cg, spec, &g, &mut cols);
                &cols
            };
            T::gemm(
                og,
                positions,
                ksize,
                dy_g,
                false,
                rhs,
                true,
                T::one(),
                &mut gw.data_mut()[grp * og * ksize..(grp + 1) * og * ksize],
            );
            // dcols = W_gᵀ · dY_g
            if pointwise {
                T::gemm(
                    ksize,
                    og,
                    positions,
                    w_g,
                    true,
                    dy_g,
                    false,
                    T::one(),
                    &mut gx.data_mut()[in_range],
                );
            } else {
                T::gemm(ksize, og, positions, w_g, true, dy_g, false, T::zero(), &mut dcols);
                col2im(&dcols, cg, spec, &g, &mut gx.data_mut()[in_range]);
            }
        }
    }
    let bias = spec.bias.then(|| {
        let mut gb = Tensor::zeros(spec.bias_shape());
        for n in 0..s.n {
            for oc in 0..spec.out_channels {
                let base = (n * spec.out_channels + oc) * positions;
                gb.data_mut()[oc] += dy[base..base + positions].iter().copied().sum::<T>();
            }
        }
        gb
    });
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias,
    })
}
