//! Corruption processes, the marginal Gaussian likelihood used for training,
//! and the per-pixel Bayesian fusion used at prediction time.
//!
//! Images live in `[0, 1]`; noise levels are quoted in 0-255 units and
//! divided by 255 internally. Noise is described per pixel and channel by a
//! standard-deviation map with the same shape as the image, so the noise
//! covariance at a pixel is `diag(std^2)`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::autodiff::ScalarObjective;
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Mat, MAX_DIM};
use crate::network::{cov_factor, GaussianPredictionMap, COV_EPSILON, LOG_PARAM_RANGE};
use crate::tensor::{Shape, Tensor};

pub const PHOTOMETRIC_SCALE: f64 = 255.0;

/// Variance floor (before dividing by lambda) for the Poisson approximation.
pub const POISSON_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseModel {
    /// Additive Gaussian noise with fixed std `sigma` (0-255 units).
    GaussianKnown { sigma: f64 },
    /// Per-image std drawn uniformly from `[lo, hi]` (0-255 units).
    GaussianVariable { lo: f64, hi: f64 },
    /// `Poisson(lambda * x) / lambda`.
    Poisson { lambda: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseModel::GaussianKnown { sigma } => sigma >= 0.0 && sigma.is_finite(),
            NoiseModel::GaussianVariable { lo, hi } => lo >= 0.0 && lo <= hi && hi.is_finite(),
            NoiseModel::Poisson { lambda } => lambda > 0.0 && lambda.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid noise model {self}")))
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            NoiseModel::GaussianKnown { .. } => "gaussian_known",
            NoiseModel::GaussianVariable { .. } => "gaussian_variable",
            NoiseModel::Poisson { .. } => "poisson",
        }
    }
}

/// `gaussian:25`, `gaussian-range:5,50` or `poisson:30`.
impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseModel::GaussianKnown { sigma } => write!(f, "gaussian:{sigma}"),
            NoiseModel::GaussianVariable { lo, hi } => write!(f, "gaussian-range:{lo},{hi}"),
            NoiseModel::Poisson { lambda } => write!(f, "poisson:{lambda}"),
        }
    }
}

pub const NOISE_GRAMMAR: &str = "gaussian:SIGMA | gaussian-range:LO,HI | poisson:LAMBDA";

impl FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Usage(format!("cannot parse noise spec {s:?}; expected {NOISE_GRAMMAR}"));
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        let model = match kind.trim() {
            "gaussian" => NoiseModel::GaussianKnown { sigma: num(args)? },
            "gaussian-range" => {
                let (lo, hi) = args.split_once(',').ok_or_else(bad)?;
                NoiseModel::GaussianVariable {
                    lo: num(lo)?,
                    hi: num(hi)?,
                }
            }
            "poisson" => NoiseModel::Poisson { lambda: num(args)? },
            _ => return Err(bad()),
        };
        model.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(model)
    }
}

/// A noisy batch together with the per-pixel noise std used to make it.
#[derive(Clone, Debug, PartialEq)]
pub struct Corrupted {
    pub noisy: Tensor,
    /// Same shape as `noisy`, `[0, 1]` units.
    pub noise_std: Tensor,
    /// Per-image std in 0-255 units for Gaussian models; `None` for Poisson.
    pub sigmas: Vec<Option<f64>>,
}

fn check_unit_range(clean: &Tensor) -> Result<()> {
    match clean.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(i) => Err(Error::Input(format!(
            "clean value {} at flat index {i} is outside [0, 1]",
            clean.data()[i]
        ))),
        None => Ok(()),
    }
}

pub fn corrupt(clean: &Tensor, model: &NoiseModel, seed: u64) -> Result<Corrupted> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corrupt_with(clean, model, &mut rng)
}

pub fn corrupt_with<R: Rng>(clean: &Tensor, model: &NoiseModel, rng: &mut R) -> Result<Corrupted> {
    model.validate()?;
    check_unit_range(clean)?;
    let shape = clean.shape();
    let per_image = shape.c() * shape.plane();
    let mut noisy = clean.clone();
    let mut noise_std = Tensor::zeros(shape);
    let mut sigmas = Vec::with_capacity(shape.n());

    for n in 0..shape.n() {
        let range = n * per_image..(n + 1) * per_image;
        let sigma = match *model {
            NoiseModel::GaussianKnown { sigma } => Some(sigma),
            NoiseModel::GaussianVariable { lo, hi } => Some(if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }),
            NoiseModel::Poisson { .. } => None,
        };
        sigmas.push(sigma);
        match (sigma, *model) {
            (Some(s), _) => {
                let std = s / PHOTOMETRIC_SCALE;
                for v in &mut noisy.data_mut()[range.clone()] {
                    let e: f64 = rng.sample(StandardNormal);
                    if std > 0.0 {
                        *v = (*v as f64 + std * e) as f32;
                    }
                }
                noise_std.data_mut()[range].fill(std as f32);
            }
            (None, NoiseModel::Poisson { lambda }) => {
                for v in &mut noisy.data_mut()[range.clone()] {
                    let rate = lambda * *v as f64;
                    let count = if rate > 0.0 {
                        Poisson::new(rate)
                            .map_err(|e| Error::Parameter(format!("poisson rate {rate}: {e}")))?
                            .sample(rng)
                    } else {
                        0.0
                    };
                    *v = (count / lambda) as f32;
                }
                let approx = poisson_std(&noisy.data()[range.clone()], lambda);
                noise_std.data_mut()[range].copy_from_slice(&approx);
            }
            (None, _) => unreachable!("only poisson has no sigma"),
        }
    }
    Ok(Corrupted {
        noisy,
        noise_std,
        sigmas,
    })
}

fn poisson_std(noisy: &[f32], lambda: f64) -> Vec<f32> {
    noisy
        .iter()
        .map(|&y| ((y as f64).max(POISSON_FLOOR) / lambda).sqrt() as f32)
        .collect()
}

/// Signal-dependent Gaussian approximation of Poisson noise:
/// `var = max(noisy, 1e-3) / lambda`. Returns the std map.
pub fn poisson_as_gaussian(noisy: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(lambda > 0.0) {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    Tensor::from_vec(noisy.shape(), poisson_std(noisy.data(), lambda))
}

/// Constant std map for a known Gaussian level quoted in 0-255 units.
pub fn gaussian_std_map(shape: Shape, sigma: f64) -> Result<Tensor> {
    if !(sigma >= 0.0) {
        return Err(Error::Parameter(format!("sigma must be non-negative, got {sigma}")));
    }
    Ok(Tensor::full(shape, (sigma / PHOTOMETRIC_SCALE) as f32))
}

/// Negative log-likelihood of one noisy pixel under `N(mu, Sigma + diag(noise_var))`
/// plus its gradient with respect to the mean and the raw covariance parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelNll {
    pub value: f64,
    pub grad_mean: [f64; MAX_DIM],
    pub grad_params: [f64; 6],
}

pub fn pixel_nll(
    mean: &[f64],
    params: &[f64],
    y: &[f64],
    noise_var: &[f64],
    channels: usize,
) -> Result<PixelNll> {
    let c = channels;
    let l = cov_factor(params, c);
    let mut a = l.mul(&l.transpose());
    for i in 0..c {
        a.a[i][i] += COV_EPSILON + noise_var[i];
    }
    let chol = Cholesky::new(&a)?;
    let mut r = [0.0; MAX_DIM];
    for i in 0..c {
        r[i] = y[i] - mean[i];
    }
    let alpha = chol.solve(&r);
    let quad: f64 = (0..c).map(|i| r[i] * alpha[i]).sum();
    let value = 0.5 * chol.log_det() + 0.5 * quad + 0.5 * c as f64 * (2.0 * std::f64::consts::PI).ln();

    let mut grad_mean = [0.0; MAX_DIM];
    for i in 0..c {
        grad_mean[i] = -alpha[i];
    }
    // dLoss/dA = (A^-1 - alpha alpha^T) / 2, dLoss/dL = 2 (dLoss/dA) L
    let inv = chol.inverse();
    let mut g = Mat::zeros(c);
    for i in 0..c {
        for j in 0..c {
            g.a[i][j] = 0.5 * (inv.a[i][j] - alpha[i] * alpha[j]);
        }
    }
    let gl = g.mul(&l);
    let in_range = |raw: f64| (LOG_PARAM_RANGE.0..=LOG_PARAM_RANGE.1).contains(&raw);
    let mut grad_params = [0.0; 6];
    if c == 1 {
        // L = exp(s / 2)
        if in_range(params[0] * 0.5) {
            grad_params[0] = 2.0 * gl.a[0][0] * 0.5 * l.a[0][0];
        }
    } else {
        for i in 0..3 {
            if in_range(params[i]) {
                grad_params[i] = 2.0 * gl.a[i][i] * l.a[i][i];
            }
        }
        grad_params[3] = 2.0 * gl.a[1][0];
        grad_params[4] = 2.0 * gl.a[2][0];
        grad_params[5] = 2.0 * gl.a[2][1];
    }
    Ok(PixelNll {
        value,
        grad_mean,
        grad_params,
    })
}

/// Mean per-pixel marginal NLL of the noisy image, as a tape objective over
/// the raw head output `[N, c + p, H, W]`.
pub struct GaussianNll<'a> {
    pub noisy: &'a Tensor,
    pub noise_std: &'a Tensor,
}

impl GaussianNll<'_> {
    fn check(&self, head: &Tensor) -> Result<(usize, usize)> {
        let c = self.noisy.shape().c();
        let p = match c {
            1 => 1,
            3 => 6,
            _ => return Err(Error::Dimension(format!("unsupported channel count {c}"))),
        };
        let [n, hc, h, w] = head.shape().0;
        if hc != c + p || (n, h, w) != (self.noisy.shape().n(), self.noisy.shape().h(), self.noisy.shape().w()) {
            return Err(Error::Dimension(format!(
                "prediction {} does not match noisy image {}",
                head.shape(),
                self.noisy.shape()
            )));
        }
        self.noise_std.ensure_same_shape(self.noisy, "noise std map")?;
        Ok((c, p))
    }
}

impl ScalarObjective for GaussianNll<'_> {
    fn name(&self) -> &'static str {
        "gaussian_nll"
    }

    fn value_and_grad(&self, head: &Tensor) -> Result<(f64, Tensor)> {
        let (c, p) = self.check(head)?;
        let [n, _, h, w] = head.shape().0;
        let count = (n * h * w) as f64;
        let mut grad = Tensor::zeros(head.shape());
        let mut total = 0.0;
        let (mut mu, mut par, mut y, mut var) = ([0.0; 3], [0.0; 6], [0.0; 3], [0.0; 3]);
        for b in 0..n {
            for yy in 0..h {
                for xx in 0..w {
                    for k in 0..c {
                        mu[k] = head.get(b, k, yy, xx) as f64;
                        y[k] = self.noisy.get(b, k, yy, xx) as f64;
                        let s = self.noise_std.get(b, k, yy, xx) as f64;
                        var[k] = s * s;
                    }
                    for k in 0..p {
                        par[k] = head.get(b, c + k, yy, xx) as f64;
                    }
                    let px = pixel_nll(&mu, &par, &y, &var, c)?;
                    total += px.value;
                    for k in 0..c {
                        grad.set(b, k, yy, xx, (px.grad_mean[k] / count) as f32);
                    }
                    for k in 0..p {
                        grad.set(b, c + k, yy, xx, (px.grad_params[k] / count) as f32);
                    }
                }
            }
        }
        Ok((total / count, grad))
    }
}

/// Mean per-pixel marginal NLL of `noisy` under the prediction.
pub fn nll_loss(pred: &GaussianPredictionMap, noisy: &Tensor, noise_std: &Tensor) -> Result<f64> {
    let head = concat_channels(&pred.mean, &pred.cov_params)?;
    let obj = GaussianNll { noisy, noise_std };
    Ok(obj.value_and_grad(&head)?.0)
}

fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, ca, h, w] = a.shape().0;
    let [nb, cb, hb, wb] = b.shape().0;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::Dimension(format!("cannot join {} and {}", a.shape(), b.shape())));
    }
    let mut out = Tensor::zeros(Shape::new(n, ca + cb, h, w));
    for i in 0..n {
        for c in 0..ca {
            out.plane_mut(i, c).copy_from_slice(a.plane(i, c));
        }
        for c in 0..cb {
            out.plane_mut(i, ca + c).copy_from_slice(b.plane(i, c));
        }
    }
    Ok(out)
}

/// Gaussian belief about one clean pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelPosterior {
    pub mean: [f64; MAX_DIM],
    pub cov: Mat,
}

/// Fuses the prior `N(mean, cov)` with the noise likelihood `N(y, diag(noise_var))`.
///
/// Computed as `m = mu + S (S + D)^-1 (y - mu)`, `P = S - S (S + D)^-1 S`,
/// which equals the precision form and stays defined when `D = 0`.
pub fn posterior_diag(mean: &[f64], cov: &Mat, y: &[f64], noise_var: &[f64]) -> Result<PixelPosterior> {
    let c = cov.dim;
    if noise_var[..c].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Parameter(format!(
            "noise variance must be non-negative, got {:?}",
            &noise_var[..c]
        )));
    }
    if noise_var[..c].iter().all(|&v| v == 0.0) {
        let mut m = [0.0; MAX_DIM];
        m[..c].copy_from_slice(&y[..c]);
        return Ok(PixelPosterior {
            mean: m,
            cov: Mat::zeros(c),
        });
    }
    let mut a = *cov;
    for i in 0..c {
        a.a[i][i] += noise_var[i];
    }
    let chol = Cholesky::new(&a)?;
    let mut r = [0.0; MAX_DIM];
    for i in 0..c {
        r[i] = y[i] - mean[i];
    }
    let gain = cov.mul_vec(&chol.solve(&r));
    let mut m = [0.0; MAX_DIM];
    for i in 0..c {
        m[i] = mean[i] + gain[i];
    }
    // S A^-1 S, column by column
    let mut sas = Mat::zeros(c);
    for j in 0..c {
        let col: Vec<f64> = (0..c).map(|i| cov.a[i][j]).collect();
        let v = cov.mul_vec(&chol.solve(&col));
        for i in 0..c {
            sas.a[i][j] = v[i];
        }
    }
    Ok(PixelPosterior {
        mean: m,
        cov: cov.sub(&sas).symmetrize(),
    })
}

/// Posterior for isotropic noise with std `sigma` (same units as `y`).
pub fn posterior(mean: &[f64], cov: &Mat, y: &[f64], sigma: f64) -> Result<PixelPosterior> {
    if !(sigma >= 0.0) {
        return Err(Error::Parameter(format!("sigma must be non-negative, got {sigma}")));
    }
    posterior_diag(mean, cov, y, &[sigma * sigma; MAX_DIM])
}

/// Posterior-mean image for a whole prediction map (not clamped).
pub fn posterior_mean_map(
    pred: &GaussianPredictionMap,
    noisy: &Tensor,
    noise_std: &Tensor,
) -> Result<Tensor> {
    pred.mean.ensure_same_shape(noisy, "posterior")?;
    noise_std.ensure_same_shape(noisy, "noise std map")?;
    let [n, c, h, w] = noisy.shape().0;
    let mut out = Tensor::zeros(noisy.shape());
    let (mut y, mut var) = ([0.0; 3], [0.0; 3]);
    for b in 0..n {
        for yy in 0..h {
            for xx in 0..w {
                for k in 0..c {
                    y[k] = noisy.get(b, k, yy, xx) as f64;
                    let s = noise_std.get(b, k, yy, xx) as f64;
                    var[k] = s * s;
                }
                let post = posterior_diag(&pred.mean_at(b, yy, xx), &pred.covariance_at(b, yy, xx), &y, &var)?;
                for k in 0..c {
                    out.set(b, k, yy, xx, post.mean[k] as f32);
                }
            }
        }
    }
    Ok(out)
}

pub fn clamp_unit(t: &Tensor) -> Tensor {
    t.map(|v| v.clamp(0.0, 1.0))
}

/// The network mean alone, clamped to `[0, 1]`.
pub fn mean_only(pred: &GaussianPredictionMap) -> Tensor {
    clamp_unit(&pred.mean)
}
