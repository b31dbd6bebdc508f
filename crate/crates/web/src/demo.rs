//! Demo logic, independent of JavaScript so it can be tested natively.

use blindspot::data::{synthetic_dataset, Dataset};
use blindspot::eval::{denoise, dirac_probe, probe_size, psnr, Denoised};
use blindspot::linalg::Mat;
use blindspot::noise::{gaussian_std_map, posterior};
use blindspot::train::{TrainConfig, Trainer};
use blindspot::{corrupt, NetworkConfig, NoiseModel, Result, Tensor};

/// Narrow network used for footprints; the support does not depend on width.
pub fn probe_config(depth: usize) -> NetworkConfig {
    NetworkConfig {
        depth,
        forward_channels: 4,
        branch_channels: 3,
        head_widths: vec![6],
        ..Default::default()
    }
}

pub struct FootprintImage {
    pub size: usize,
    pub width: usize,
    pub height: usize,
    pub center: f64,
    /// Row-major RGBA, log-scaled like the 16-bit report images.
    pub rgba: Vec<u8>,
}

pub fn footprint(depth: usize, seeds: u32) -> Result<FootprintImage> {
    let config = probe_config(depth);
    let size = probe_size(&config);
    let seeds: Vec<u64> = (0..seeds.max(1) as u64).collect();
    let fp = dirac_probe(&config, &seeds, size)?;
    let img = fp.to_image();
    let mid = size / 2;
    let mut rgba = Vec::with_capacity(size * size * 4);
    for y in 0..size {
        for x in 0..size {
            let v = (img.get(0, 0, y, x) * 255.0).round() as u8;
            if (y, x) == (mid, mid) {
                // mark the blind pixel
                rgba.extend_from_slice(&[220, 40, 40, 255]);
            } else {
                rgba.extend_from_slice(&[v, v, v, 255]);
            }
        }
    }
    Ok(FootprintImage {
        size,
        width: fp.width(),
        height: fp.height(),
        center: fp.center,
        rgba,
    })
}

fn gauss(x: f64, m: f64, var: f64) -> f64 {
    (-(x - m).powi(2) / (2.0 * var)).exp() / (std::f64::consts::TAU * var).sqrt()
}

/// Posterior mean and variance for a scalar prior `N(mu, prior_std^2)` and
/// an observation `y` with noise std `noise_std`.
pub fn fusion(mu: f64, prior_std: f64, y: f64, noise_std: f64) -> Result<(f64, f64)> {
    let p = posterior(&[mu], &Mat::from_rows(&[&[prior_std * prior_std]]), &[y], noise_std)?;
    Ok((p.mean[0], p.cov.a[0][0]))
}

/// `[xs, prior, likelihood, posterior]`, each of length `n`, over `[lo, hi]`.
pub fn fusion_curves(
    mu: f64,
    prior_std: f64,
    y: f64,
    noise_std: f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<Vec<f64>> {
    let (m, p) = fusion(mu, prior_std, y, noise_std)?;
    let n = n.max(2);
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let mut out = xs.clone();
    out.extend(xs.iter().map(|&x| gauss(x, mu, prior_std * prior_std)));
    out.extend(xs.iter().map(|&x| gauss(x, y, noise_std * noise_std)));
    // a zero-variance posterior is a spike; draw it as a very narrow bump
    out.extend(xs.iter().map(|&x| gauss(x, m, p.max(1e-8))));
    Ok(out)
}

/// Small network trained live on synthetic textures, with one held-out image.
pub struct Toy {
    trainer: Trainer,
    data: Dataset,
    sigma: f64,
    clean: Tensor,
    noisy: Tensor,
    std: Tensor,
    last: Option<Denoised>,
}

pub const TOY_SIZE: usize = 64;

impl Toy {
    pub fn new(seed: u64, sigma: f64) -> Result<Self> {
        let net = NetworkConfig {
            depth: 2,
            forward_channels: 8,
            branch_channels: 8,
            head_widths: vec![16, 16],
            ..Default::default()
        };
        let train = TrainConfig {
            lr: 3e-3,
            steps: 1500,
            batch_size: 4,
            patch_size: 32,
            noise: NoiseModel::GaussianKnown { sigma },
            seed,
            ..Default::default()
        };
        let trainer = Trainer::from_configs(&net, train)?;
        let data = synthetic_dataset(10, TOY_SIZE, 1, seed);
        let clean = synthetic_dataset(1, TOY_SIZE, 1, seed.wrapping_add(7919)).images.remove(0);
        let noisy = corrupt(&clean, &NoiseModel::GaussianKnown { sigma }, seed ^ 0xd1ce)?.noisy;
        let std = gaussian_std_map(noisy.shape(), sigma)?;
        Ok(Toy {
            trainer,
            data,
            sigma,
            clean,
            noisy,
            std,
            last: None,
        })
    }

    /// Runs up to `n` steps (stopping at the schedule's end); returns the last loss.
    pub fn train(&mut self, n: u32) -> Result<f64> {
        let mut loss = f64::NAN;
        for _ in 0..n {
            if self.trainer.step >= self.trainer.config.steps {
                break;
            }
            loss = self.trainer.step(&self.data)?;
        }
        self.last = None;
        Ok(loss)
    }

    pub fn steps_done(&self) -> u64 {
        self.trainer.step
    }

    pub fn total_steps(&self) -> u64 {
        self.trainer.config.steps
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn denoised(&mut self) -> Result<&Denoised> {
        if self.last.is_none() {
            self.last = Some(denoise(&self.trainer.net, &self.noisy, &self.std)?);
        }
        Ok(self.last.as_ref().expect("just filled"))
    }

    /// `clean`, `noisy`, `posterior` or `mean`.
    pub fn image(&mut self, kind: &str) -> Result<&Tensor> {
        Ok(match kind {
            "clean" => &self.clean,
            "noisy" => &self.noisy,
            "posterior" => &self.denoised()?.posterior,
            "mean" => &self.denoised()?.mean_only,
            other => return Err(blindspot::Error::Usage(format!("unknown image kind `{other}`"))),
        })
    }

    pub fn psnr(&mut self, kind: &str) -> Result<f64> {
        let clean = self.clean.clone();
        psnr(&clean, self.image(kind)?, 1.0)
    }
}

/// Gray `[1, 1, H, W]` image in `[0, 1]` as clamped RGBA bytes.
pub fn to_rgba(img: &Tensor) -> Vec<u8> {
    img.plane(0, 0)
        .iter()
        .flat_map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}
