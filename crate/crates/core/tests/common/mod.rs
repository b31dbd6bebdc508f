#![allow(dead_code)]

use blindspot::linalg::Mat;
use blindspot::network::COV_EPSILON;
use blindspot::noise::GaussianNll;
use blindspot::{
    build_network, KernelMask, NetworkConfig, Result, ScalarObjective, Shape, Tape, Tensor, Var,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-3;

/// `sum(w * x)` with fixed random weights, evaluated in f64.
pub struct WeightedSum {
    pub weights: Tensor,
}

impl WeightedSum {
    pub fn for_shape(shape: Shape) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0xfeed ^ shape.numel() as u64);
        WeightedSum {
            weights: Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)),
        }
    }
}

impl ScalarObjective for WeightedSum {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn value_and_grad(&self, input: &Tensor) -> Result<(f64, Tensor)> {
        let v = input
            .data()
            .iter()
            .zip(self.weights.data())
            .map(|(&x, &w)| x as f64 * w as f64)
            .sum();
        Ok((v, self.weights.clone()))
    }
}

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

fn evaluate(inputs: &[Tensor], build: &Build<'_>) -> (Tape, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &leaves).expect("graph builds");
    let shape = tape.value(out).shape();
    if shape == Shape::scalar() {
        // keeps the exact f64 value of sum and objective nodes
        return (tape, leaves, out);
    }
    let root = tape
        .objective(out, &WeightedSum::for_shape(shape))
        .expect("objective");
    (tape, leaves, root)
}

pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Worst norm-wise relative error between autodiff and central differences
/// over every input of the graph.
pub fn grad_check(inputs: &[Tensor], h: f32, build: &Build<'_>) -> f64 {
    let (tape, leaves, root) = evaluate(inputs, build);
    let grads = tape.backward(root).expect("backward");
    let mut worst = 0.0f64;
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(*leaf) {
            Some(g) => g.data().iter().map(|&v| v as f64).collect(),
            None => vec![0.0; inputs[k].len()],
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..inputs[k].len() {
            let x = inputs[k].data()[j];
            let (xp, xm) = (x + h, x - h);
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] = xp;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] = xm;
            let fp = scalar(&plus, build);
            let fm = scalar(&minus, build);
            numeric.push((fp - fm) / (xp as f64 - xm as f64));
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

fn scalar(inputs: &[Tensor], build: &Build<'_>) -> f64 {
    let (tape, _, root) = evaluate(inputs, build);
    tape.scalar(root).expect("scalar")
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero so the leaky kink is never crossed.
pub fn off_zero(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0f32);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    (
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        rng.random_range(3..=6),
        rng.random_range(3..=6),
    )
}

fn conv_case(seed: u64, masked: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, cin, h, w) = dims(&mut rng);
    let cout = rng.random_range(1..=3);
    let k = if masked || rng.random::<bool>() { 3 } else { 1 };
    let dilation = rng.random_range(1..=3);
    let x = uniform(&mut rng, Shape::new(n, cin, h, w), -1.0, 1.0);
    let kernel = uniform(&mut rng, Shape::new(cout, cin, k, k), -1.0, 1.0);
    let bias = uniform(&mut rng, Shape::new(1, cout, 1, 1), -1.0, 1.0);
    let mask = masked.then(|| KernelMask::blind_spot(3, 3).unwrap());
    grad_check(&[x, kernel, bias], 1e-2, &|t, v| {
        t.conv2d(v[0], v[1], v[2], dilation, mask.clone())
    })
}

fn nll_case(seed: u64, c: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, _, h, w) = dims(&mut rng);
    let p = if c == 1 { 1 } else { 6 };
    let shape = Shape::new(n, c, h, w);
    let noisy = uniform(&mut rng, shape, 0.0, 1.0);
    let std = uniform(&mut rng, shape, 0.0, 0.3);
    let mean = uniform(&mut rng, shape, 0.0, 1.0);
    let params = Tensor::from_fn(Shape::new(n, p, h, w), |[_, k, _, _]| {
        if c == 3 && k >= 3 {
            rng.random_range(-0.5..0.5)
        } else {
            rng.random_range(-3.0..0.0)
        }
    });
    let head = Tensor::from_fn(Shape::new(n, c + p, h, w), |[b, k, y, x]| {
        if k < c {
            mean.get(b, k, y, x)
        } else {
            params.get(b, k - c, y, x)
        }
    });
    grad_check(&[head], 1e-3, &|t, v| {
        t.objective(v[0], &GaussianNll { noisy: &noisy, noise_std: &std })
    })
}

/// Whole network, gradient with respect to the input image. The step is
/// kept at 1e-3: larger steps start crossing leaky kinks in hidden layers.
pub fn network_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = NetworkConfig {
        depth: rng.random_range(1..=2),
        forward_channels: 3,
        branch_channels: 2,
        head_widths: vec![4],
        image_channels: if seed.is_multiple_of(2) { 1 } else { 3 },
        ..Default::default()
    };
    let net = build_network(&config, seed).unwrap();
    let x = uniform(&mut rng, Shape::new(1, config.image_channels, 6, 6), 0.0, 1.0);
    grad_check(&[x], 1e-3, &|t, v| Ok(net.record(t, v[0], false)?.0))
}

pub type OpCase = (&'static str, fn(u64) -> f64);

/// One entry per differentiable operation; each maps a seed to the worst
/// relative gradient error for a random shape drawn from that seed.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        ("conv2d", |s| conv_case(s, false)),
        ("conv2d_blind_spot", |s| conv_case(s, true)),
        ("add", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (n, c, h, w) = dims(&mut rng);
            let a = uniform(&mut rng, Shape::new(n, c, h, w), -1.0, 1.0);
            let b = uniform(&mut rng, Shape::new(n, c, h, w), -1.0, 1.0);
            grad_check(&[a, b], 1e-2, &|t, v| {
                // fan-out through a shared operand
                let s = t.add(v[0], v[1])?;
                t.add(s, v[0])
            })
        }),
        ("leaky", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (n, c, h, w) = dims(&mut rng);
            let a = off_zero(&mut rng, Shape::new(n, c, h, w));
            grad_check(&[a], 1e-2, &|t, v| Ok(t.leaky(v[0], 0.1)))
        }),
        ("concat", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (n, c, h, w) = dims(&mut rng);
            let c2 = rng.random_range(1..=3);
            let a = uniform(&mut rng, Shape::new(n, c, h, w), -1.0, 1.0);
            let b = uniform(&mut rng, Shape::new(n, c2, h, w), -1.0, 1.0);
            grad_check(&[a, b], 1e-2, &|t, v| t.concat(&[v[0], v[1], v[0]]))
        }),
        ("channels", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (n, _, h, w) = dims(&mut rng);
            let c = rng.random_range(2..=5);
            let start = rng.random_range(0..c);
            let len = rng.random_range(1..=c - start);
            let a = uniform(&mut rng, Shape::new(n, c, h, w), -1.0, 1.0);
            grad_check(&[a], 1e-2, &|t, v| t.channels(v[0], start, len))
        }),
        ("sum", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (n, c, h, w) = dims(&mut rng);
            let a = uniform(&mut rng, Shape::new(n, c, h, w), -1.0, 1.0);
            grad_check(&[a], 1e-2, &|t, v| Ok(t.sum(v[0])))
        }),
        ("pick", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (n, c, h, w) = dims(&mut rng);
            let at = [
                rng.random_range(0..n),
                rng.random_range(0..c),
                rng.random_range(0..h),
                rng.random_range(0..w),
            ];
            let a = uniform(&mut rng, Shape::new(n, c, h, w), -1.0, 1.0);
            grad_check(&[a], 1e-2, &|t, v| t.pick(v[0], at))
        }),
        ("gaussian_nll_gray", |s| nll_case(s, 1)),
        ("gaussian_nll_color", |s| nll_case(s, 3)),
    ]
}

// Independent dense references built on nalgebra.

pub fn to_dense(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_fn(m.dim, m.dim, |i, j| m.a[i][j])
}

/// Random symmetric positive-definite matrix with eigenvalues bounded below.
pub fn random_spd(rng: &mut ChaCha8Rng, c: usize) -> Mat {
    let b = DMatrix::from_fn(c, c, |_, _| rng.random_range(-1.0..1.0));
    let s = &b * b.transpose() + DMatrix::identity(c, c) * rng.random_range(0.01..0.5);
    let mut m = Mat::zeros(c);
    for i in 0..c {
        for j in 0..c {
            m.a[i][j] = s[(i, j)];
        }
    }
    m
}

/// Covariance from raw head parameters, rebuilt from the documented
/// parameterization without the library's helpers.
pub fn dense_covariance(params: &[f64], c: usize) -> DMatrix<f64> {
    let l = if c == 1 {
        DMatrix::from_element(1, 1, (params[0] / 2.0).exp())
    } else {
        DMatrix::from_row_slice(
            3,
            3,
            &[
                params[0].exp(), 0.0, 0.0,
                params[3], params[1].exp(), 0.0,
                params[4], params[5], params[2].exp(),
            ],
        )
    };
    &l * l.transpose() + DMatrix::identity(c, c) * COV_EPSILON
}

/// `-log N(y; mu, cov)` by direct dense evaluation.
pub fn dense_nll(mu: &[f64], cov: &DMatrix<f64>, y: &[f64]) -> f64 {
    let c = mu.len();
    let r = DVector::from_fn(c, |i, _| y[i] - mu[i]);
    let inv = cov.clone().try_inverse().expect("invertible");
    let quad = (r.transpose() * inv * &r)[(0, 0)];
    let det = cov.determinant();
    0.5 * (std::f64::consts::TAU.powi(c as i32) * det).ln() + 0.5 * quad
}

/// Gaussian fusion in precision form: `P = (S^-1 + D^-1)^-1`,
/// `m = P (S^-1 mu + D^-1 y)`.
pub fn dense_fusion(mu: &[f64], cov: &DMatrix<f64>, y: &[f64], noise_var: f64) -> (Vec<f64>, DMatrix<f64>) {
    let c = mu.len();
    let s_inv = cov.clone().try_inverse().expect("invertible");
    let d_inv = DMatrix::identity(c, c) / noise_var;
    let p = (&s_inv + &d_inv).try_inverse().expect("invertible");
    let rhs = &s_inv * DVector::from_column_slice(mu) + &d_inv * DVector::from_column_slice(y);
    let m = &p * rhs;
    (m.iter().copied().collect(), p)
}

/// Posterior mean and variance of `N(x; mu, s) N(y; x, v)` for scalars,
/// by Simpson integration over a dense grid.
pub fn integrate_fusion(mu: f64, s: f64, y: f64, v: f64) -> (f64, f64) {
    let spread = s.sqrt().min(v.sqrt());
    let centre = (mu * v + y * s) / (s + v);
    let (lo, hi) = (centre - 12.0 * spread, centre + 12.0 * spread);
    let n = 20_000;
    let dx = (hi - lo) / n as f64;
    let dens = |x: f64| (-(x - mu).powi(2) / (2.0 * s) - (y - x).powi(2) / (2.0 * v)).exp();
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..=n {
        let x = lo + i as f64 * dx;
        let wgt = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let p = wgt * dens(x);
        z += p;
        m1 += p * x;
        m2 += p * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// Empirical versus analytic moments of every noise model over 10^6 samples:
/// `(label, measured, expected)`.
pub fn noise_moments() -> Vec<(String, f64, f64)> {
    use blindspot::{corrupt, NoiseModel};
    let mut out = Vec::new();
    let moments = |clean: &Tensor, noisy: &Tensor| {
        let n = noisy.len() as f64;
        let diff: Vec<f64> = noisy.data().iter().zip(clean.data()).map(|(&y, &x)| y as f64 - x as f64).collect();
        let mean = noisy.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let dm = diff.iter().sum::<f64>() / n;
        let var = diff.iter().map(|d| (d - dm).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    };

    let clean = Tensor::full(Shape::new(1, 1, 1000, 1000), 0.5);
    let c = corrupt(&clean, &NoiseModel::GaussianKnown { sigma: 25.0 }, 1).unwrap();
    let (mean, var) = moments(&clean, &c.noisy);
    out.push(("gaussian:25 mean".into(), mean, 0.5));
    out.push(("gaussian:25 std".into(), var.sqrt(), 25.0 / 255.0));

    // sigma is drawn per image, so use many small images
    let clean = Tensor::full(Shape::new(100_000, 1, 1, 10), 0.5);
    let (lo, hi) = (5.0f64, 50.0f64);
    let c = corrupt(&clean, &NoiseModel::GaussianVariable { lo, hi }, 2).unwrap();
    let (mean, var) = moments(&clean, &c.noisy);
    out.push(("gaussian-range:5,50 mean".into(), mean, 0.5));
    out.push((
        "gaussian-range:5,50 variance".into(),
        var,
        (lo * lo + lo * hi + hi * hi) / 3.0 / (255.0 * 255.0),
    ));
    let sig: Vec<f64> = c.sigmas.iter().map(|s| s.unwrap()).collect();
    out.push((
        "gaussian-range:5,50 sigma mean".into(),
        sig.iter().sum::<f64>() / sig.len() as f64,
        (lo + hi) / 2.0,
    ));

    let clean = Tensor::full(Shape::new(1, 1, 1000, 1000), 0.5);
    let c = corrupt(&clean, &NoiseModel::Poisson { lambda: 30.0 }, 3).unwrap();
    let (mean, var) = moments(&clean, &c.noisy);
    out.push(("poisson:30 mean".into(), mean, 0.5));
    out.push(("poisson:30 variance".into(), var, 0.5 / 30.0));
    out
}
