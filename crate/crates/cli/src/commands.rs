use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use blindspot::checkpoint::{load_checkpoint, save_checkpoint};
use blindspot::data::synthetic_dataset;
use blindspot::eval::{
    cross_sigma_eval, denoise, dirac_probe, dirac_probe_network, emit_reports, probe_size,
    record_seed, records_csv, EvalRecord, Footprint,
};
use blindspot::imageio::{file_stem, list_pngs, load_dir, load_png, save_png, Depth};
use blindspot::noise::{gaussian_std_map, poisson_as_gaussian};
use blindspot::train::{parse_run_config, Trainer};
use blindspot::{corrupt, Error, NoiseModel, Result};

use crate::manifest::RunManifest;
use crate::{Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, count, size, channels, seed } => cmd_synth(&out, count, size, channels, seed),
        Command::Corrupt { input, out, noise, seed } => cmd_corrupt(&input, &out, &noise, seed),
        Command::Train { data, config, out, seed, steps } => cmd_train(&data, &config, &out, seed, steps),
        Command::Denoise { ckpt, input, sigma, lambda, out, mean_only } => {
            cmd_denoise(&ckpt, &input, sigma, lambda, &out, mean_only)
        }
        Command::ProbeRf { ckpt, config, out, seeds } => cmd_probe_rf(ckpt.as_deref(), config.as_deref(), &out, seeds),
        Command::Eval { ckpt, clean, sigmas, out, seed } => cmd_eval(&ckpt, &clean, &sigmas, &out, seed),
    }
}

/// `path` with `suffix` appended to its file name.
fn beside(path: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn inputs(dir: &Path) -> Result<Vec<PathBuf>> {
    let paths = list_pngs(dir)?;
    if paths.is_empty() {
        return Err(Error::Input(format!("no PNG images in {}", dir.display())));
    }
    Ok(paths)
}

/// Per-image corruption seed. Gaussian levels share the seeds `eval` uses,
/// so `corrupt --noise gaussian:S` reproduces the noise `eval --sigmas S` draws.
fn image_seed(seed: u64, index: usize, model: &NoiseModel) -> u64 {
    let key = match *model {
        NoiseModel::GaussianKnown { sigma } => sigma,
        NoiseModel::GaussianVariable { .. } => -1.0,
        NoiseModel::Poisson { .. } => -2.0,
    };
    record_seed(seed, index, key)
}

fn cmd_synth(out: &Path, count: usize, size: usize, channels: usize, seed: u64) -> Result<()> {
    if !(channels == 1 || channels == 3) {
        return Err(Error::Usage(format!("--channels must be 1 or 3, got {channels}")));
    }
    if count == 0 || size == 0 {
        return Err(Error::Usage("--count and --size must be positive".into()));
    }
    create_dir(out)?;
    let ds = synthetic_dataset(count, size, channels, seed);
    for (name, img) in ds.names.iter().zip(&ds.images) {
        save_png(out.join(format!("{name}.png")), img, Depth::Sixteen)?;
    }
    RunManifest::new("synth")
        .path("out", out)
        .arg("count", count)
        .arg("size", size)
        .arg("channels", channels)
        .arg("seed", seed)
        .write(&out.join("manifest.txt"))?;
    println!("wrote {count} textures to {}", out.display());
    Ok(())
}

fn cmd_corrupt(input: &Path, out: &Path, noise: &NoiseModel, seed: u64) -> Result<()> {
    let paths = inputs(input)?;
    create_dir(out)?;
    let mut sidecar = String::from("image,noise,sigma\n");
    for (i, path) in paths.iter().enumerate() {
        let clean = load_png(path)?;
        let c = corrupt(&clean, noise, image_seed(seed, i, noise))?;
        let name = file_stem(path);
        save_png(out.join(format!("{name}.png")), &c.noisy, Depth::Sixteen)?;
        let sigma = c.sigmas[0].map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(sidecar, "{name},{noise},{sigma}");
    }
    let sidecar_path = out.join("sigmas.csv");
    fs::write(&sidecar_path, sidecar).map_err(|e| Error::io(&sidecar_path, e))?;
    RunManifest::new("corrupt")
        .path("in", input)
        .path("out", out)
        .arg("noise", noise)
        .arg("seed", seed)
        .output(&sidecar_path)
        .write(&out.join("manifest.txt"))?;
    println!("corrupted {} images with {noise} into {}", paths.len(), out.display());
    Ok(())
}

fn cmd_train(data: &Path, config: &Path, out: &Path, seed: Option<u64>, steps: Option<u64>) -> Result<()> {
    let (net, mut train) = parse_run_config(&read_text(config)?)?;
    if let Some(s) = seed {
        train.seed = s;
    }
    if let Some(s) = steps {
        train.steps = s;
    }
    let dataset = load_dir(data)?;
    create_parent(out)?;
    let mut trainer = Trainer::from_configs(&net, train)?;
    let total = trainer.config.steps;
    let every = (total / 20).max(1);
    let mut log = String::from("step,loss\n");
    trainer.run(&dataset, Some(out), |step, loss| {
        let _ = writeln!(log, "{step},{loss}");
        if step % every == 0 || step == total {
            eprintln!("step {step}/{total} loss {loss:.5}");
        }
    })?;
    save_checkpoint(out, &trainer.checkpoint())?;
    let loss_path = beside(out, ".loss.csv");
    fs::write(&loss_path, log).map_err(|e| Error::io(&loss_path, e))?;

    let mut resolved = net.to_kv();
    resolved.extend(&trainer.config.to_kv());
    RunManifest::new("train")
        .path("data", data)
        .path("config", config)
        .path("out", out)
        .arg("seed", trainer.config.seed)
        .arg("steps", trainer.config.steps)
        .config(&resolved)
        .output(out)
        .output(&loss_path)
        .write(&beside(out, ".manifest"))?;
    println!("trained {} steps on {} images; checkpoint {}", trainer.step, dataset.len(), out.display());
    Ok(())
}

fn cmd_denoise(
    ckpt: &Path,
    input: &Path,
    sigma: Option<f64>,
    lambda: Option<f64>,
    out: &Path,
    mean_only: bool,
) -> Result<()> {
    let checkpoint = load_checkpoint(ckpt)?;
    let net = checkpoint.restore_network()?;
    let channels = net.config().image_channels;
    let paths = inputs(input)?;
    create_dir(out)?;
    for path in &paths {
        let noisy = load_png(path)?;
        if noisy.shape().c() != channels {
            return Err(Error::Dimension(format!(
                "{} has {} channels, the checkpoint expects {channels}",
                path.display(),
                noisy.shape().c()
            )));
        }
        let std = match (sigma, lambda) {
            (Some(s), _) => gaussian_std_map(noisy.shape(), s)?,
            (None, Some(l)) => poisson_as_gaussian(&noisy, l)?,
            (None, None) => return Err(Error::Usage("one of --sigma or --lambda is required".into())),
        };
        let d = denoise(&net, &noisy, &std)?;
        let result = if mean_only { d.mean_only } else { d.posterior };
        save_png(out.join(format!("{}.png", file_stem(path))), &result, Depth::Sixteen)?;
    }
    let mut m = RunManifest::new("denoise");
    m.path("ckpt", ckpt).path("in", input).path("out", out);
    if let Some(s) = sigma {
        m.arg("sigma", s);
    }
    if let Some(l) = lambda {
        m.arg("lambda", l);
    }
    m.arg("mean_only", mean_only).config(&checkpoint.network.to_kv());
    m.write(&out.join("manifest.txt"))?;
    println!("denoised {} images into {}", paths.len(), out.display());
    Ok(())
}

fn describe(fp: &Footprint) -> String {
    let center = if fp.center == 0.0 { "0".to_string() } else { format!("{:e}", fp.center) };
    format!("footprint {}×{}, center {center}", fp.height(), fp.width())
}

fn cmd_probe_rf(ckpt: Option<&Path>, config: Option<&Path>, out: &Path, seeds: u64) -> Result<()> {
    if seeds == 0 {
        return Err(Error::Usage("--seeds must be at least 1".into()));
    }
    let seed_list: Vec<u64> = (0..seeds).collect();
    let mut m = RunManifest::new("probe-rf");
    let (net_config, fp) = match (ckpt, config) {
        (Some(path), _) => {
            let net = load_checkpoint(path)?.restore_network()?;
            let size = probe_size(net.config());
            m.path("ckpt", path);
            let fp = dirac_probe_network(&net, &seed_list, size)?;
            (net.config().clone(), fp)
        }
        (None, Some(path)) => {
            let (net, _) = parse_run_config(&read_text(path)?)?;
            m.path("config", path);
            let fp = dirac_probe(&net, &seed_list, probe_size(&net))?;
            (net, fp)
        }
        (None, None) => return Err(Error::Usage("one of --ckpt or --config is required".into())),
    };
    let name = format!("d{}", net_config.depth);
    let written = emit_reports(&[], &[(name, fp.clone())], out)?;
    m.path("out", out).arg("seeds", seeds).config(&net_config.to_kv());
    for p in &written {
        m.output(p);
    }
    m.write(&out.join("manifest.txt"))?;
    println!("{}", describe(&fp));
    Ok(())
}

fn summary(records: &[EvalRecord], sigmas: &[f64]) -> String {
    let mut s = String::from("sigma  posterior  mean-only  noisy\n");
    for &sigma in sigmas {
        let r: Vec<_> = records.iter().filter(|r| r.sigma_test == sigma).collect();
        let k = r.len() as f64;
        let avg = |f: fn(&EvalRecord) -> f64| r.iter().map(|x| f(x)).sum::<f64>() / k;
        let _ = writeln!(
            s,
            "{sigma:>5}  {:>9.3}  {:>9.3}  {:>5.3}",
            avg(|x| x.psnr_posterior),
            avg(|x| x.psnr_mean_only),
            avg(|x| x.psnr_noisy)
        );
    }
    s
}

fn cmd_eval(ckpt: &Path, clean: &Path, sigmas: &[f64], out: &Path, seed: u64) -> Result<()> {
    if sigmas.is_empty() {
        return Err(Error::Usage("--sigmas needs at least one value".into()));
    }
    let checkpoint = load_checkpoint(ckpt)?;
    if !matches!(checkpoint.train.noise, NoiseModel::GaussianKnown { .. }) {
        eprintln!("warning: checkpoint was trained with {}, not a fixed Gaussian level", checkpoint.train.noise);
    }
    let net = checkpoint.restore_network()?;
    let images = load_dir(clean)?;
    let records = cross_sigma_eval(&net, &images, sigmas, seed)?;
    create_parent(out)?;
    fs::write(out, records_csv(&records)).map_err(|e| Error::io(out, e))?;
    let list: Vec<String> = sigmas.iter().map(|s| s.to_string()).collect();
    RunManifest::new("eval")
        .path("ckpt", ckpt)
        .path("clean", clean)
        .arg("sigmas", list.join(","))
        .path("out", out)
        .arg("seed", seed)
        .config(&checkpoint.network.to_kv())
        .output(out)
        .write(&beside(out, ".manifest"))?;
    print!("{}", summary(&records, sigmas));
    Ok(())
}
