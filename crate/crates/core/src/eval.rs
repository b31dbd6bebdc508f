//! PSNR evaluation, cross-noise-level sweeps and the Dirac receptive-field probe.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::imageio::{encode_png, Depth};
use crate::network::{build_network, Network, NetworkConfig};
use crate::noise::{clamp_unit, corrupt, gaussian_std_map, mean_only, posterior_mean_map, NoiseModel};
use crate::tensor::{Shape, Tensor};

/// `10 log10(peak^2 / MSE)` over every element; identical inputs give `+inf`.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    a.ensure_same_shape(b, "psnr")?;
    if a.is_empty() {
        return Err(Error::Dimension("psnr of empty tensors".into()));
    }
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sse / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Sensitivity of the center output to every input pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Footprint {
    pub size: usize,
    /// Row-major `size x size` mean absolute gradient.
    pub map: Vec<f64>,
    /// Tight bounding box of nonzero entries: `(top, left, height, width)`.
    pub bbox: (usize, usize, usize, usize),
    /// Value at the probed pixel itself.
    pub center: f64,
}

impl Footprint {
    fn from_map(size: usize, map: Vec<f64>) -> Self {
        let (mut top, mut left, mut bottom, mut right) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..size {
            for x in 0..size {
                if map[y * size + x] != 0.0 {
                    top = top.min(y);
                    bottom = bottom.max(y);
                    left = left.min(x);
                    right = right.max(x);
                }
            }
        }
        let bbox = if top == usize::MAX {
            (size / 2, size / 2, 0, 0)
        } else {
            (top, left, bottom - top + 1, right - left + 1)
        };
        let c = size / 2;
        Footprint {
            size,
            center: map[c * size + c],
            map,
            bbox,
        }
    }

    pub fn height(&self) -> usize {
        self.bbox.2
    }

    pub fn width(&self) -> usize {
        self.bbox.3
    }

    /// 16-bit log-scaled rendering: `log(1 + x / max * 1e6)` mapped to the
    /// full range, with every nonzero entry at least 1.
    pub fn to_image(&self) -> Tensor {
        let max = self.map.iter().cloned().fold(0.0, f64::max);
        let norm = (1.0f64 + 1e6).ln();
        Tensor::from_fn(Shape::new(1, 1, self.size, self.size), |[_, _, y, x]| {
            let v = self.map[y * self.size + x];
            if v == 0.0 || max == 0.0 {
                return 0.0;
            }
            let level = ((1.0 + v / max * 1e6).ln() / norm * 65535.0).round().max(1.0);
            (level / 65535.0) as f32
        })
    }
}

/// |d mean(center) / d input| for one network and one random input image.
pub fn probe_gradient(net: &Network, size: usize, input_seed: u64) -> Result<Vec<f64>> {
    let side = net.config().receptive_field().side;
    if size < 2 * side {
        return Err(Error::Parameter(format!(
            "probe image {size}x{size} is smaller than twice the {side}x{side} receptive field"
        )));
    }
    let c = net.config().image_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(input_seed);
    let image = Tensor::from_fn(Shape::new(1, c, size, size), |_| rng.random::<f32>());
    let mut tape = Tape::new();
    let x = tape.leaf(image);
    let (out, _) = net.record(&mut tape, x, false)?;
    let mean = tape.channels(out, 0, c)?;
    let mid = size / 2;
    let mut map = vec![0.0; size * size];
    for ch in 0..c {
        let root = tape.pick(mean, [0, ch, mid, mid])?;
        let g = tape.backward(root)?;
        let gx = g.get(x).expect("input is tracked");
        for ic in 0..c {
            for (m, &v) in map.iter_mut().zip(gx.plane(0, ic)) {
                *m += (v as f64).abs();
            }
        }
    }
    Ok(map)
}

/// Averages the probe over networks freshly built from each seed.
pub fn dirac_probe(config: &NetworkConfig, seeds: &[u64], size: usize) -> Result<Footprint> {
    let nets = seeds
        .iter()
        .map(|&s| build_network(config, s))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Network> = nets.iter().collect();
    let inputs: Vec<u64> = seeds.iter().map(|s| s ^ 0x5eed).collect();
    probe_average(&refs, &inputs, size)
}

/// Probes one (e.g. trained) network over several random inputs.
pub fn dirac_probe_network(net: &Network, input_seeds: &[u64], size: usize) -> Result<Footprint> {
    let refs = vec![net; input_seeds.len()];
    probe_average(&refs, input_seeds, size)
}

fn probe_average(nets: &[&Network], inputs: &[u64], size: usize) -> Result<Footprint> {
    if nets.is_empty() {
        return Err(Error::Parameter("probe needs at least one seed".into()));
    }
    let mut acc = vec![0.0; size * size];
    for (net, &s) in nets.iter().zip(inputs) {
        for (a, v) in acc.iter_mut().zip(probe_gradient(net, size, s)?) {
            *a += v;
        }
    }
    let k = nets.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(Footprint::from_map(size, acc))
}

/// Probe image side that keeps a `depth` network's footprint off the borders.
pub fn probe_size(config: &NetworkConfig) -> usize {
    let side = config.receptive_field().side;
    let s = 2 * side;
    s + (1 - s % 2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub image: String,
    pub noise: NoiseModel,
    pub sigma_test: f64,
    pub psnr_posterior: f64,
    pub psnr_mean_only: f64,
    pub psnr_noisy: f64,
}

/// Posterior and mean-only estimates for a noisy image, both clamped to `[0, 1]`.
pub struct Denoised {
    pub posterior: Tensor,
    pub mean_only: Tensor,
}

pub fn denoise(net: &Network, noisy: &Tensor, noise_std: &Tensor) -> Result<Denoised> {
    let pred = net.forward(noisy)?;
    Ok(Denoised {
        posterior: clamp_unit(&posterior_mean_map(&pred, noisy, noise_std)?),
        mean_only: mean_only(&pred),
    })
}

/// Seed used to corrupt image `index` at test level `sigma`.
pub fn record_seed(seed: u64, index: usize, sigma: f64) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [index as u64, sigma.to_bits()] {
        h = (h ^ v).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(29);
    }
    h
}

/// Corrupts each image at each test level, denoises with the posterior
/// (using the test level) and with the mean alone, and reports PSNRs.
pub fn cross_sigma_eval(
    net: &Network,
    images: &Dataset,
    sigmas: &[f64],
    seed: u64,
) -> Result<Vec<EvalRecord>> {
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Parameter(format!("test sigma must be non-negative, got {s}")));
    }
    let mut out = Vec::new();
    for (i, (name, clean)) in images.names.iter().zip(&images.images).enumerate() {
        for &sigma in sigmas {
            let model = NoiseModel::GaussianKnown { sigma };
            let noisy = corrupt(clean, &model, record_seed(seed, i, sigma))?.noisy;
            let std = gaussian_std_map(noisy.shape(), sigma)?;
            let d = denoise(net, &noisy, &std)?;
            out.push(EvalRecord {
                image: name.clone(),
                noise: model,
                sigma_test: sigma,
                psnr_posterior: psnr(clean, &d.posterior, 1.0)?,
                psnr_mean_only: psnr(clean, &d.mean_only, 1.0)?,
                psnr_noisy: psnr(clean, &noisy, 1.0)?,
            });
        }
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "image,sigma_test,psnr_posterior,psnr_mean_only,psnr_noisy";

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn records_csv(records: &[EvalRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.image,
            r.sigma_test,
            fmt_db(r.psnr_posterior),
            fmt_db(r.psnr_mean_only),
            fmt_db(r.psnr_noisy)
        );
    }
    s
}

/// Writes `eval.csv` plus one `footprint_<name>.png` per footprint into `out_dir`.
pub fn emit_reports(
    records: &[EvalRecord],
    footprints: &[(String, Footprint)],
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    if records.is_empty() && footprints.is_empty() {
        return Err(Error::Input("nothing to report".into()));
    }
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if !records.is_empty() {
        let path = dir.join("eval.csv");
        fs::write(&path, records_csv(records)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    for (name, fp) in footprints {
        let path = dir.join(format!("footprint_{name}.png"));
        let bytes = encode_png(&fp.to_image(), Depth::Sixteen)?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
