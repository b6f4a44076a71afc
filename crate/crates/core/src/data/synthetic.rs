//! A tiny two-class image set: bright blobs (fire) against low-contrast noise (no-fire).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::manifest::{DatasetManifest, Entry, Label, Split};
use crate::error::{DataError, Result};

/// Renders one image; `fire` images get a saturated orange disc.
pub fn render(fire: bool, size: u32, rng: &mut impl Rng) -> image::RgbImage {
    let mut img = image::RgbImage::new(size, size);
    for p in img.pixels_mut() {
        let v = rng.gen_range(20..110u8);
        *p = image::Rgb([v, v, v]);
    }
    if fire {
        let s = size as f64;
        let (cx, cy) = (rng.gen_range(0.3..0.7) * s, rng.gen_range(0.3..0.7) * s);
        let r = rng.gen_range(0.15..0.3) * s;
        for (x, y, p) in img.enumerate_pixels_mut() {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if d < r {
                *p = image::Rgb([255, rng.gen_range(140..220), rng.gen_range(0..60)]);
            }
        }
    }
    img
}

/// Writes `n` PNGs (alternating fire / no-fire) under `dir` and returns a
/// manifest with every entry in the training split and relative paths.
pub fn write_blob_noise_set(dir: &Path, n: usize, size: u32, seed: u64) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let fire = i % 2 == 0;
        let name = format!("{}_{i:03}.png", if fire { "fire" } else { "noise" });
        render(fire, size, &mut rng)
            .save(dir.join(&name))
            .map_err(|e| DataError::Decode {
                path: dir.join(&name),
                message: e.to_string(),
            })?;
        let mut e = Entry::real(name, if fire { Label::Fire } else { Label::NoFire });
        e.split = Some(Split::Train);
        entries.push(e);
    }
    Ok(DatasetManifest::new("blob-noise", entries))
}
