//! Training images, random patch extraction and synthetic test textures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Named images, each stored as `[1, C, H, W]` in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub images: Vec<Tensor>,
}

impl Dataset {
    pub fn new(names: Vec<String>, images: Vec<Tensor>) -> Result<Self> {
        if names.len() != images.len() {
            return Err(Error::Input("names and images differ in length".into()));
        }
        let channels = images.first().map(|t| t.shape().c());
        for (name, img) in names.iter().zip(&images) {
            if img.shape().n() != 1 {
                return Err(Error::Input(format!("image {name} has batch size {}", img.shape().n())));
            }
            if Some(img.shape().c()) != channels {
                return Err(Error::Dimension(format!(
                    "image {name} has {} channels, expected {}",
                    img.shape().c(),
                    channels.unwrap_or(0)
                )));
            }
        }
        Ok(Dataset { names, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn channels(&self) -> Option<usize> {
        self.images.first().map(|t| t.shape().c())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augment {
    pub flip_h: bool,
    pub flip_v: bool,
    /// Random multiples of 90 degrees; square patches only.
    pub rotate: bool,
}

pub fn extract_patches(
    dataset: &Dataset,
    patch: usize,
    count: usize,
    augment: Augment,
    seed: u64,
) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    extract_patches_with(dataset, patch, count, augment, &mut rng)
}

/// Uniformly random `patch x patch` crops, optionally flipped or rotated.
pub fn extract_patches_with<R: Rng>(
    dataset: &Dataset,
    patch: usize,
    count: usize,
    augment: Augment,
    rng: &mut R,
) -> Result<Tensor> {
    if dataset.is_empty() {
        return Err(Error::Input("dataset is empty".into()));
    }
    if patch == 0 {
        return Err(Error::Parameter("patch size must be positive".into()));
    }
    for (name, img) in dataset.names.iter().zip(&dataset.images) {
        let s = img.shape();
        if s.h() < patch || s.w() < patch {
            return Err(Error::Input(format!(
                "image {name} ({}x{}) is smaller than the {patch}x{patch} patch",
                s.h(),
                s.w()
            )));
        }
    }
    let c = dataset.channels().expect("non-empty");
    let mut out = Tensor::zeros(Shape::new(count, c, patch, patch));
    for b in 0..count {
        let img = &dataset.images[rng.random_range(0..dataset.len())];
        let s = img.shape();
        let top = rng.random_range(0..=s.h() - patch);
        let left = rng.random_range(0..=s.w() - patch);
        let fh = augment.flip_h && rng.random::<bool>();
        let fv = augment.flip_v && rng.random::<bool>();
        let rot = if augment.rotate { rng.random_range(0..4u8) } else { 0 };
        for ch in 0..c {
            let src = img.plane(0, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..patch {
                for x in 0..patch {
                    let (mut sy, mut sx) = (y, x);
                    for _ in 0..rot {
                        (sy, sx) = (sx, patch - 1 - sy);
                    }
                    if fh {
                        sx = patch - 1 - sx;
                    }
                    if fv {
                        sy = patch - 1 - sy;
                    }
                    dst[y * patch + x] = src[(top + sy) * s.w() + left + sx];
                }
            }
        }
    }
    Ok(out)
}

/// Smooth procedural texture in `[0.1, 0.9]`: a few random oriented
/// sinusoidal gratings plus a soft-edged disc.
pub fn synthetic_texture(size: usize, channels: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let period = rng.random_range(10.0..32.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.3..1.0);
            (angle, period, phase, amp)
        })
        .collect();
    let (cy, cx) = (
        rng.random_range(0.2..0.8) * size as f64,
        rng.random_range(0.2..0.8) * size as f64,
    );
    let radius = rng.random_range(0.15..0.35) * size as f64;
    let tint: Vec<f64> = (0..channels).map(|_| rng.random_range(0.6..1.0)).collect();

    let mut raw = vec![0f64; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut v = 0.0;
            for &(angle, period, phase, amp) in &waves {
                let t = (x as f64 * angle.cos() + y as f64 * angle.sin()) / period;
                v += amp * (std::f64::consts::TAU * t + phase).sin();
            }
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            v += 1.5 / (1.0 + ((d - radius) / 1.5).exp());
            raw[y * size + x] = v;
        }
    }
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    Tensor::from_fn(Shape::new(1, channels, size, size), |[_, c, y, x]| {
        let u = (raw[y * size + x] - lo) / span;
        (0.1 + 0.8 * u * tint[c]) as f32
    })
}

/// `count` synthetic textures named `texture_000`, `texture_001`, ...
pub fn synthetic_dataset(count: usize, size: usize, channels: usize, seed: u64) -> Dataset {
    let names = (0..count).map(|i| format!("texture_{i:03}")).collect();
    let images = (0..count)
        .map(|i| synthetic_texture(size, channels, seed.wrapping_mul(1000).wrapping_add(i as u64)))
        .collect();
    Dataset { names, images }
}
