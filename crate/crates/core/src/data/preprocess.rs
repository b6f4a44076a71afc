//! Image decoding, bilinear resizing and `[0, 1]` scaling.

use std::path::{Path, PathBuf};

use crate::data::manifest::{Entry, Origin};
use crate::error::{DataError, Result};
use crate::tensor::{Shape, Tensor};

/// Bilinear resize of an interleaved RGB byte image to `out_h × out_w`,
/// returned as planar `3 × out_h × out_w` floats in `[0, 1]`.
///
/// Sample positions use pixel-center alignment: output pixel `i` reads source
/// coordinate `(i + 0.5)·in/out − 0.5`, clamped to the image.
pub fn resize_bilinear(rgb: &[u8], in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    assert_eq!(rgb.len(), in_h * in_w * 3, "rgb buffer length");
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        (0..out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * inp as f64 / out as f64 - 0.5).max(0.0);
                let lo = (src.floor() as usize).min(inp - 1);
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, (src - lo as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, in_h);
    let xs = axis(out_w, in_w);
    let plane = out_h * out_w;
    let mut out = vec![0.0f32; 3 * plane];
    let px = |y: usize, x: usize, c: usize| rgb[(y * in_w + x) * 3 + c] as f32;
    for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
                let top = lerp(px(y0, x0, c), px(y0, x1, c), tx);
                let bottom = lerp(px(y1, x0, c), px(y1, x1, c), tx);
                out[c * plane + oy * out_w + ox] = lerp(top, bottom, ty) / 255.0;
            }
        }
    }
    out
}

/// Decodes PNG or JPEG bytes into a `1 × 3 × size × size` tensor.
/// Grayscale and alpha images are converted to RGB.
pub fn preprocess(bytes: &[u8], size: usize, path: &Path) -> Result<Tensor<f32>> {
    let img = image::load_from_memory(bytes).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(DataError::Decode {
            path: path.to_path_buf(),
            message: "image has zero extent".into(),
        }
        .into());
    }
    let data = resize_bilinear(rgb.as_raw(), h, w, size, size);
    Tensor::from_vec(Shape::new(1, 3, size, size), data)
}

/// The all-zero input used for black images.
pub fn black_image(size: usize) -> Tensor<f32> {
    Tensor::zeros(Shape::new(1, 3, size, size))
}

/// Resolves manifest paths and loads entries, optionally caching results.
#[derive(Debug)]
pub struct ImageLoader {
    root: Option<PathBuf>,
    size: usize,
    cache: Option<std::collections::HashMap<PathBuf, Vec<f32>>>,
}

impl ImageLoader {
    pub fn new(root: Option<PathBuf>, size: usize) -> Self {
        Self {
            root,
            size,
            cache: None,
        }
    }

    /// Keeps decoded images in memory across epochs.
    pub fn with_cache(mut self) -> Self {
        self.cache = Some(Default::default());
        self
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.root {
            Some(root) if path.is_relative() => root.join(path),
            _ => path.to_path_buf(),
        }
    }

    /// Synthetic black entries never touch the file system.
    pub fn load(&mut self, entry: &Entry) -> Result<Tensor<f32>> {
        if entry.origin == Origin::SyntheticBlack {
            return Ok(black_image(self.size));
        }
        let full = self.resolve(&entry.path);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&full)) {
            return Tensor::from_vec(Shape::new(1, 3, self.size, self.size), hit.clone());
        }
        let bytes = std::fs::read(&full).map_err(|e| DataError::Decode {
            path: full.clone(),
            message: e.to_string(),
        })?;
        let t = preprocess(&bytes, self.size, &full)?;
        if let Some(cache) = self.cache.as_mut() {
            cache.insert(full, t.data().to_vec());
        }
        Ok(t)
    }
}
