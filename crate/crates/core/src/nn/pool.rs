//! Max, average and global-average pooling, plus nearest-neighbour upsampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    /// The 2×2, stride-2 window used throughout KutralNet.
    pub const HALVE: PoolSpec = PoolSpec {
        kernel: 2,
        stride: 2,
        padding: 0,
    };

    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// `⌊(in + 2p − k)/s⌋ + 1`.
    pub fn output_extent(&self, extent: usize) -> Result<usize> {
        if self.kernel == 0 || self.stride == 0 || 2 * self.padding > self.kernel {
            return Err(Error::InvalidShape(format!("invalid pooling window {self:?}")));
        }
        if extent + 2 * self.padding < self.kernel {
            return Err(Error::InvalidShape(format!(
                "pooling window {} larger than padded extent {}",
                self.kernel,
                extent + 2 * self.padding
            )));
        }
        Ok((extent + 2 * self.padding - self.kernel) / self.stride + 1)
    }

    pub fn output_shape(&self, s: Shape) -> Result<Shape> {
        Ok(Shape::new(s.n, s.c, self.output_extent(s.h)?, self.output_extent(s.w)?))
    }

    /// In-bounds input offsets (within one plane) covered by output cell `(oy, ox)`.
    fn window(&self, s: Shape, oy: usize, ox: usize) -> impl Iterator<Item = usize> + '_ {
        let (h, w) = (s.h as isize, s.w as isize);
        let y0 = (oy * self.stride) as isize - self.padding as isize;
        let x0 = (ox * self.stride) as isize - self.padding as isize;
        let k = self.kernel as isize;
        (y0..y0 + k)
            .flat_map(move |y| (x0..x0 + k).map(move |x| (y, x)))
            .filter(move |&(y, x)| y >= 0 && x >= 0 && y < h && x < w)
            .map(move |(y, x)| (y * w + x) as usize)
    }
}

/// Returns the pooled tensor and, per output element, the flat input index of
/// its maximum (first in row-major order on ties).
pub fn max_pool2d<T: Element>(input: &Tensor<T>, spec: PoolSpec) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = input.shape();
    let os = spec.output_shape(s)?;
    let mut out = Tensor::zeros(os);
    let mut argmax = vec![0usize; os.numel()];
    let x = input.data();
    let mut o = 0;
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let mut best: Option<(usize, T)> = None;
                for off in spec.window(s, oy, ox) {
                    let v = x[base + off];
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((base + off, v));
                    }
                }
                let (idx, v) = best.expect("window covers at least one input");
                out.data_mut()[o] = v;
                argmax[o] = idx;
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn max_pool2d_backward<T: Element>(input_shape: Shape, argmax: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut gx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        gx.data_mut()[i] += g;
    }
    gx
}

/// Window mean; padded cells count toward the divisor.
pub fn avg_pool2d<T: Element>(input: &Tensor<T>, spec: PoolSpec) -> Result<Tensor<T>> {
    let s = input.shape();
    let os = spec.output_shape(s)?;
    let scale = T::one() / T::of_f64((spec.kernel * spec.kernel) as f64);
    let mut out = Tensor::zeros(os);
    let x = input.data();
    let mut o = 0;
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let sum: T = spec.window(s, oy, ox).map(|off| x[base + off]).sum();
                out.data_mut()[o] = sum * scale;
                o += 1;
            }
        }
    }
    Ok(out)
}

pub fn avg_pool2d_backward<T: Element>(input_shape: Shape, spec: PoolSpec, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let os = spec.output_shape(input_shape)?;
    let scale = T::one() / T::of_f64((spec.kernel * spec.kernel) as f64);
    let mut gx = Tensor::zeros(input_shape);
    let g = grad_out.data();
    let mut o = 0;
    for nc in 0..input_shape.n * input_shape.c {
        let base = nc * input_shape.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let d = g[o] * scale;
                for off in spec.window(input_shape, oy, ox) {
                    gx.data_mut()[base + off] += d;
                }
                o += 1;
            }
        }
    }
    Ok(gx)
}

/// Per-channel spatial mean, shaped `(N, C, 1, 1)`.
pub fn global_avg_pool<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let plane = s.plane().max(1);
    let scale = T::one() / T::of_f64(plane as f64);
    let data = input
        .data()
        .chunks(plane)
        .map(|c| c.iter().copied().sum::<T>() * scale)
        .collect();
    Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data).expect("one value per channel")
}

pub fn global_avg_pool_backward<T: Element>(input_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let plane = input_shape.plane();
    let scale = T::one() / T::of_f64(plane as f64);
    let mut gx = Tensor::zeros(input_shape);
    for (chunk, &g) in gx.data_mut().chunks_mut(plane).zip(grad_out.data()) {
        chunk.iter_mut().for_each(|v| *v = g * scale);
    }
    gx
}

/// Nearest-neighbour ×2 upsampling to exactly `(out_h, out_w)`. Output cells
/// past `2·extent` repeat the last source row/column.
pub fn upsample_nearest<T: Element>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let s = input.shape();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, out_h, out_w));
    let x = input.data();
    let o = out.data_mut();
    for nc in 0..s.n * s.c {
        for y in 0..out_h {
            let sy = (y / 2).min(s.h - 1);
            for xx in 0..out_w {
                let sx = (xx / 2).min(s.w - 1);
                o[(nc * out_h + y) * out_w + xx] = x[(nc * s.h + sy) * s.w + sx];
            }
        }
    }
    out
}

pub fn upsample_nearest_backward<T: Element>(input_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let s = input_shape;
    let os = grad_out.shape();
    let mut gx = Tensor::zeros(s);
    let g = grad_out.data();
    for nc in 0..s.n * s.c {
        for y in 0..os.h {
            let sy = (y / 2).min(s.h - 1);
            for xx in 0..os.w {
                let sx = (xx / 2).min(s.w - 1);
                gx.data_mut()[(nc * s.h + sy) * s.w + sx] += g[(nc * os.h + y) * os.w + xx];
            }
        }
    }
    gx
}
