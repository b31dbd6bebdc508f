//! The blind-spot denoising network.
//!
//! A forward stream of ordinary convolutions (with residual skips every
//! `residual_period` layers) is tapped at every depth by a blind-spot
//! convolution whose dilation exceeds the radius of the stream's receptive
//! field at that depth. Branch outputs are concatenated and mapped by a
//! stack of 1x1 convolutions to per-pixel Gaussian parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::conv::KernelMask;
use crate::error::{Error, Result};
use crate::kv::{self, KvDoc, KvReader};
use crate::linalg::Mat;
use crate::tensor::{Shape, Tensor};

pub const LEAKY_SLOPE: f32 = 0.1;

/// Floor added to every reconstructed covariance diagonal.
pub const COV_EPSILON: f64 = 1e-6;

/// Radius of the forward stream's receptive field after `depth` convolutions
/// of size `kernel`. Residual additions never widen it.
pub fn rf_half(depth: usize, kernel: usize) -> usize {
    depth * (kernel - 1) / 2
}

/// Dilation of the blind-spot branch tapping the stream at `depth`.
pub fn branch_dilation(depth: usize, kernel: usize) -> usize {
    1 + rf_half(depth, kernel)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReceptiveFieldInfo {
    /// `rf_half(i)` for `i = 0..=depth`.
    pub radii: Vec<usize>,
    pub dilations: Vec<usize>,
    /// Side length of the square box containing the whole network footprint.
    pub side: usize,
}

impl ReceptiveFieldInfo {
    pub fn new(depth: usize, kernel: usize) -> Self {
        let radii: Vec<usize> = (0..=depth).map(|i| rf_half(i, kernel)).collect();
        let dilations: Vec<usize> = (0..=depth).map(|i| branch_dilation(i, kernel)).collect();
        let reach = radii
            .iter()
            .zip(&dilations)
            .map(|(r, d)| r + d * (kernel / 2))
            .max()
            .unwrap_or(0);
        ReceptiveFieldInfo {
            radii,
            dilations,
            side: 2 * reach + 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Forward,
    Branch,
    Head,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel_size: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub blind_spot: bool,
}

impl LayerSpec {
    fn mask(&self) -> Option<KernelMask> {
        self.blind_spot
            .then(|| KernelMask::blind_spot(self.kernel_size, self.kernel_size).expect("odd kernel"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub depth: usize,
    pub kernel_size: usize,
    pub forward_channels: usize,
    pub branch_channels: usize,
    /// Hidden 1x1 widths; the output layer is appended automatically.
    pub head_widths: Vec<usize>,
    /// 1 for grayscale, 3 for color.
    pub image_channels: usize,
    /// Skip connection spans this many forward convs; 0 disables skips.
    pub residual_period: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            depth: 10,
            kernel_size: 3,
            forward_channels: 64,
            branch_channels: 32,
            head_widths: vec![96, 96],
            image_channels: 1,
            residual_period: 2,
        }
    }
}

impl NetworkConfig {
    pub fn with_depth(depth: usize) -> Self {
        NetworkConfig {
            depth,
            ..Default::default()
        }
    }

    /// Number of covariance parameters per pixel.
    pub fn cov_params(&self) -> usize {
        match self.image_channels {
            1 => 1,
            _ => 6,
        }
    }

    pub fn output_channels(&self) -> usize {
        self.image_channels + self.cov_params()
    }

    pub fn receptive_field(&self) -> ReceptiveFieldInfo {
        ReceptiveFieldInfo::new(self.depth, self.kernel_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::config("depth", "must be at least 1"));
        }
        if self.kernel_size.is_multiple_of(2) || self.kernel_size < 3 {
            return Err(Error::config("kernel_size", "must be odd and at least 3"));
        }
        if self.forward_channels < 1 {
            return Err(Error::config("forward_channels", "must be at least 1"));
        }
        if self.branch_channels < 1 {
            return Err(Error::config("branch_channels", "must be at least 1"));
        }
        if self.head_widths.iter().any(|&w| w < 1) {
            return Err(Error::config("head_widths", "widths must be at least 1"));
        }
        if self.image_channels != 1 && self.image_channels != 3 {
            return Err(Error::config("image_channels", "must be 1 or 3"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::new();
        d.push("depth", self.depth);
        d.push("kernel_size", self.kernel_size);
        d.push("forward_channels", self.forward_channels);
        d.push("branch_channels", self.branch_channels);
        d.push("head_widths", kv::join(&self.head_widths));
        d.push("image_channels", self.image_channels);
        d.push("residual_period", self.residual_period);
        d
    }

    /// Reads the network keys, leaving others for the caller.
    pub fn read_kv(r: &mut KvReader<'_>) -> Result<Self> {
        let def = NetworkConfig::default();
        let cfg = NetworkConfig {
            depth: r.or("depth", def.depth)?,
            kernel_size: r.or("kernel_size", def.kernel_size)?,
            forward_channels: r.or("forward_channels", def.forward_channels)?,
            branch_channels: r.or("branch_channels", def.branch_channels)?,
            head_widths: r.list_or("head_widths", def.head_widths)?,
            image_channels: r.or("image_channels", def.image_channels)?,
            residual_period: r.or("residual_period", def.residual_period)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut r = KvReader::new(doc);
        let cfg = Self::read_kv(&mut r)?;
        r.finish()?;
        Ok(cfg)
    }
}

/// Per-pixel Gaussian parameters emitted by the network head.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPredictionMap {
    /// `[N, c, H, W]`.
    pub mean: Tensor,
    /// `[N, 1, H, W]` log-variance (gray) or `[N, 6, H, W]` Cholesky
    /// entries `(log l00, log l11, log l22, l10, l20, l21)` (color).
    pub cov_params: Tensor,
}

/// Clamp for exponentiated covariance parameters.
pub(crate) const LOG_PARAM_RANGE: (f64, f64) = (-30.0, 30.0);

impl GaussianPredictionMap {
    pub fn from_head(out: &Tensor, image_channels: usize) -> Result<Self> {
        let c = image_channels;
        let p = out.shape().c().saturating_sub(c);
        if !matches!((c, p), (1, 1) | (3, 6)) {
            return Err(Error::Dimension(format!(
                "head output {} does not hold {c}-channel Gaussian parameters",
                out.shape()
            )));
        }
        Ok(GaussianPredictionMap {
            mean: out.channels(0, c)?,
            cov_params: out.channels(c, p)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.mean.shape().c()
    }

    pub fn mean_at(&self, n: usize, y: usize, x: usize) -> [f64; 3] {
        let mut m = [0.0; 3];
        for (c, v) in m.iter_mut().enumerate().take(self.channels()) {
            *v = self.mean.get(n, c, y, x) as f64;
        }
        m
    }

    /// Raw covariance parameters at one pixel.
    pub fn params_at(&self, n: usize, y: usize, x: usize) -> [f64; 6] {
        let mut p = [0.0; 6];
        for (k, v) in p.iter_mut().enumerate().take(self.cov_params.shape().c()) {
            *v = self.cov_params.get(n, k, y, x) as f64;
        }
        p
    }

    /// Reconstructed prior covariance at one pixel.
    pub fn covariance_at(&self, n: usize, y: usize, x: usize) -> Mat {
        covariance_from_params(&self.params_at(n, y, x), self.channels())
    }
}

/// Cholesky-style factor `L` for the raw covariance parameters.
pub fn cov_factor(params: &[f64], channels: usize) -> Mat {
    let ex = |v: f64| v.clamp(LOG_PARAM_RANGE.0, LOG_PARAM_RANGE.1).exp();
    if channels == 1 {
        // log-variance: L = exp(s / 2)
        return Mat::from_rows(&[&[ex(params[0] * 0.5)]]);
    }
    let mut l = Mat::zeros(3);
    l.a[0][0] = ex(params[0]);
    l.a[1][1] = ex(params[1]);
    l.a[2][2] = ex(params[2]);
    l.a[1][0] = params[3];
    l.a[2][0] = params[4];
    l.a[2][1] = params[5];
    l
}

/// `L L^T + eps I` for the raw parameters.
pub fn covariance_from_params(params: &[f64], channels: usize) -> Mat {
    let l = cov_factor(params, channels);
    l.mul(&l.transpose())
        .add(&Mat::scaled_identity(channels, COV_EPSILON))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    pub forward: Vec<Layer>,
    pub branches: Vec<Layer>,
    pub head: Vec<Layer>,
}

fn init_layer(spec: LayerSpec, rng: &mut ChaCha8Rng) -> Layer {
    let k = spec.kernel_size;
    let mask = spec.mask();
    let taps = mask.as_ref().map_or(k * k, KernelMask::active_count);
    let bound = (6.0 / (spec.in_channels * taps) as f64).sqrt() as f32;
    let shape = Shape::new(spec.out_channels, spec.in_channels, k, k);
    let weight = Tensor::from_fn(shape, |[_, _, i, j]| {
        let v = rng.random_range(-bound..=bound);
        match &mask {
            Some(m) if !m.is_active(i, j) => 0.0,
            _ => v,
        }
    });
    Layer {
        bias: Tensor::zeros(Shape::new(1, spec.out_channels, 1, 1)),
        spec,
        weight,
    }
}

/// Builds the layer stack and draws initial parameters from `seed`.
pub fn build_network(config: &NetworkConfig, seed: u64) -> Result<Network> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = config.kernel_size;

    let mut forward = Vec::with_capacity(config.depth);
    for i in 0..config.depth {
        let cin = if i == 0 {
            config.image_channels
        } else {
            config.forward_channels
        };
        let spec = LayerSpec {
            kind: LayerKind::Forward,
            kernel_size: k,
            dilation: 1,
            in_channels: cin,
            out_channels: config.forward_channels,
            blind_spot: false,
        };
        forward.push(init_layer(spec, &mut rng));
    }

    let mut branches = Vec::with_capacity(config.depth + 1);
    for i in 0..=config.depth {
        let cin = if i == 0 {
            config.image_channels
        } else {
            config.forward_channels
        };
        let spec = LayerSpec {
            kind: LayerKind::Branch,
            kernel_size: k,
            dilation: branch_dilation(i, k),
            in_channels: cin,
            out_channels: config.branch_channels,
            blind_spot: true,
        };
        branches.push(init_layer(spec, &mut rng));
    }

    let mut head = Vec::new();
    let mut cin = config.branch_channels * (config.depth + 1);
    for &w in config
        .head_widths
        .iter()
        .chain(std::iter::once(&config.output_channels()))
    {
        let spec = LayerSpec {
            kind: LayerKind::Head,
            kernel_size: 1,
            dilation: 1,
            in_channels: cin,
            out_channels: w,
            blind_spot: false,
        };
        head.push(init_layer(spec, &mut rng));
        cin = w;
    }

    Ok(Network {
        config: config.clone(),
        forward,
        branches,
        head,
    })
}

/// Parameter tensors recorded on a tape, in [`Network::param_names`] order.
pub struct RecordedParams {
    pub vars: Vec<Var>,
}

impl Network {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn layers(&self) -> impl Iterator<Item = (&'static str, usize, &Layer)> {
        let f = self.forward.iter().enumerate().map(|(i, l)| ("forward", i, l));
        let b = self.branches.iter().enumerate().map(|(i, l)| ("branch", i, l));
        let h = self.head.iter().enumerate().map(|(i, l)| ("head", i, l));
        f.chain(b).chain(h)
    }

    /// Canonical parameter names, weight before bias, layer by layer.
    pub fn param_names(&self) -> Vec<String> {
        self.layers()
            .flat_map(|(g, i, _)| [format!("{g}.{i}.weight"), format!("{g}.{i}.bias")])
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers()
            .flat_map(|(_, _, l)| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.forward
            .iter_mut()
            .chain(self.branches.iter_mut())
            .chain(self.head.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Replaces all parameters, checking names and shapes.
    pub fn load_params(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        let names = self.param_names();
        if names.len() != named.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameter tensors, got {}",
                names.len(),
                named.len()
            )));
        }
        for ((expect, slot), (name, t)) in names.iter().zip(self.params_mut()).zip(named) {
            if expect != name || slot.shape() != t.shape() {
                return Err(Error::Dimension(format!(
                    "parameter {name} {} does not match {expect} {}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(())
    }

    /// Records the full forward pass; returns the raw head output.
    ///
    /// With `track_params` the parameters are gradient-tracked leaves.
    pub fn record(
        &self,
        tape: &mut Tape,
        input: Var,
        track_params: bool,
    ) -> Result<(Var, RecordedParams)> {
        let shape = tape.value(input).shape();
        if shape.c() != self.config.image_channels {
            return Err(Error::Dimension(format!(
                "network expects {} image channels, got {}",
                self.config.image_channels,
                shape.c()
            )));
        }
        let mut vars = Vec::new();
        let mut put = |tape: &mut Tape, t: &Tensor| {
            let v = if track_params {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            };
            vars.push(v);
            v
        };

        let mut forward_params = Vec::new();
        for l in &self.forward {
            forward_params.push((put(tape, &l.weight), put(tape, &l.bias)));
        }
        let mut branch_params = Vec::new();
        for l in &self.branches {
            branch_params.push((put(tape, &l.weight), put(tape, &l.bias)));
        }
        let mut head_params = Vec::new();
        for l in &self.head {
            head_params.push((put(tape, &l.weight), put(tape, &l.bias)));
        }

        // stream[i] is the feature map after i forward convs
        let mut stream = vec![input];
        let period = self.config.residual_period;
        let mut skip_from = input;
        for (i, (l, &(w, b))) in self.forward.iter().zip(&forward_params).enumerate() {
            let prev = *stream.last().expect("stream is never empty");
            if period > 0 && i % period == 0 {
                skip_from = prev;
            }
            let conv = tape.conv2d(prev, w, b, l.spec.dilation, l.spec.mask())?;
            let mut h = tape.leaky(conv, LEAKY_SLOPE);
            let closes_group = period > 0 && (i + 1) % period == 0;
            if closes_group {
                h = self.residual(tape, skip_from, h)?;
            }
            stream.push(h);
        }

        let mut outs = Vec::with_capacity(self.branches.len());
        for ((l, &(w, b)), &src) in self.branches.iter().zip(&branch_params).zip(&stream) {
            let conv = tape.conv2d(src, w, b, l.spec.dilation, l.spec.mask())?;
            outs.push(tape.leaky(conv, LEAKY_SLOPE));
        }
        let mut h = tape.concat(&outs)?;
        let last = self.head.len() - 1;
        for (i, (l, &(w, b))) in self.head.iter().zip(&head_params).enumerate() {
            h = tape.conv2d(h, w, b, l.spec.dilation, l.spec.mask())?;
            if i != last {
                h = tape.leaky(h, LEAKY_SLOPE);
            }
        }
        Ok((h, RecordedParams { vars }))
    }

    /// Adds `skip` to `h`, zero-padding extra channels when `skip` is narrower.
    fn residual(&self, tape: &mut Tape, skip: Var, h: Var) -> Result<Var> {
        let s = tape.value(skip).shape();
        let t = tape.value(h).shape();
        if s.c() > t.c() {
            return Ok(h);
        }
        let skip = if s.c() < t.c() {
            let pad = tape.constant(Tensor::zeros(Shape::new(s.n(), t.c() - s.c(), s.h(), s.w())));
            tape.concat(&[skip, pad])?
        } else {
            skip
        };
        tape.add(h, skip)
    }

    /// Raw head output without recording gradients.
    pub fn forward_raw(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let (out, _) = self.record(&mut tape, x, false)?;
        Ok(tape.value(out).clone())
    }

    pub fn forward(&self, image: &Tensor) -> Result<GaussianPredictionMap> {
        let out = self.forward_raw(image)?;
        GaussianPredictionMap::from_head(&out, self.config.image_channels)
    }
}

/// Outcome of a blind-spot gradient probe at one pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub y: usize,
    pub x: usize,
    /// Largest `|d out(c, y, x) / d in(c', y, x)|` over all channel pairs.
    pub center_gradient: f64,
    /// Largest gradient magnitude anywhere; nonzero for a live network.
    pub max_gradient: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlindSpotReport {
    pub image_size: usize,
    pub probes: Vec<ProbeResult>,
}

impl BlindSpotReport {
    pub fn passed(&self) -> bool {
        self.first_failure().is_none()
    }

    pub fn first_failure(&self) -> Option<&ProbeResult> {
        self.probes.iter().find(|p| p.center_gradient > 0.0)
    }
}

impl std::fmt::Display for BlindSpotReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.first_failure() {
            None => write!(
                f,
                "blind spot holds at {} probe positions on a {0}x{0} image",
                self.probes.len()
            )?,
            Some(p) => write!(
                f,
                "blind spot violated at (y={}, x={}): center gradient {:e}",
                p.y, p.x, p.center_gradient
            )?,
        }
        Ok(())
    }
}

/// Probes `d out(y, x) / d in(y, x)` by backpropagation at the corners, edge
/// midpoints and interior of a random image.
pub fn assert_blind_spot(net: &Network, seed: u64) -> Result<BlindSpotReport> {
    let size = 17;
    let c = net.config().image_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = Tensor::from_fn(Shape::new(1, c, size, size), |_| rng.random::<f32>());
    let e = size - 1;
    let m = size / 2;
    let positions = [
        (0, 0),
        (0, e),
        (e, 0),
        (e, e),
        (0, m),
        (m, 0),
        (e, m),
        (m, e),
        (m, m),
        (m / 2, m + 3),
    ];

    let mut tape = Tape::new();
    let x = tape.leaf(image);
    let (out, _) = net.record(&mut tape, x, false)?;
    let out_channels = tape.value(out).shape().c();
    let mut probes = Vec::new();
    for &(py, px) in &positions {
        let mut center: f64 = 0.0;
        let mut max: f64 = 0.0;
        for oc in 0..out_channels {
            let root = tape.pick(out, [0, oc, py, px])?;
            let g = tape.backward(root)?;
            let gx = g.get(x).expect("input is tracked");
            for ic in 0..c {
                center = center.max(gx.get(0, ic, py, px).abs() as f64);
            }
            max = gx
                .data()
                .iter()
                .fold(max, |acc, &v| acc.max(v.abs() as f64));
        }
        probes.push(ProbeResult {
            y: py,
            x: px,
            center_gradient: center,
            max_gradient: max,
        });
    }
    Ok(BlindSpotReport {
        image_size: size,
        probes,
    })
}
