use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blindspot::checkpoint::load_checkpoint;
use blindspot::eval::{psnr, record_seed};
use blindspot::imageio::{list_pngs, load_png};
use blindspot::train::parse_run_config;
use blindspot::{build_network, corrupt, NoiseModel};

const TOY: &str = "\
depth = 2
forward_channels = 8
branch_channels = 8
head_widths = 16,16
lr = 0.003
steps = 300
batch_size = 4
patch_size = 32
noise = gaussian:25
seed = 1
";

fn bsdn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsdn")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bsdn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    bsdn(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, count: usize, size: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("clean{seed}"));
    ok(&["synth", "--out", s(&out), "--count", &count.to_string(), "--size", &size.to_string(), "--seed", &seed.to_string()]);
    out
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn zero_noise_round_trips_and_runs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = synth(tmp.path(), 3, 16, 1);
    let zero = tmp.path().join("zero");
    ok(&["corrupt", "--in", s(&clean), "--out", s(&zero), "--noise", "gaussian:0"]);
    for p in list_pngs(&clean).unwrap() {
        let name = p.file_name().unwrap();
        assert_eq!(load_png(&p).unwrap(), load_png(zero.join(name)).unwrap());
    }
    assert!(zero.join("manifest.txt").exists());

    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["corrupt", "--in", s(&clean), "--out", s(&a), "--noise", "gaussian:25", "--seed", "4"]);
    ok(&["corrupt", "--in", s(&clean), "--out", s(&b), "--noise", "gaussian:25", "--seed", "4"]);
    let (ta, tb) = (tree(&a), tree(&b));
    let strip = |t: Vec<(PathBuf, Vec<u8>)>| -> Vec<(PathBuf, Vec<u8>)> {
        t.into_iter().filter(|(p, _)| p != Path::new("manifest.txt")).collect()
    };
    assert_eq!(strip(ta), strip(tb));
    let sidecar = fs::read_to_string(a.join("sigmas.csv")).unwrap();
    assert_eq!(sidecar.lines().count(), 4);
    assert!(sidecar.contains("texture_000,gaussian:25,25"));
}

#[test]
fn corrupt_shares_noise_draws_with_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = synth(tmp.path(), 2, 16, 2);
    let noisy = tmp.path().join("noisy");
    ok(&["corrupt", "--in", s(&clean), "--out", s(&noisy), "--noise", "gaussian:25", "--seed", "9"]);
    for (i, p) in list_pngs(&clean).unwrap().iter().enumerate() {
        let c = load_png(p).unwrap();
        let model = NoiseModel::GaussianKnown { sigma: 25.0 };
        let expect = corrupt(&c, &model, record_seed(9, i, 25.0)).unwrap().noisy;
        let got = load_png(noisy.join(p.file_name().unwrap())).unwrap();
        for (g, e) in got.data().iter().zip(expect.data()) {
            // 16-bit quantization and write-time clamping
            assert!((g - e.clamp(0.0, 1.0)).abs() <= 0.5 / 65535.0 + 1e-7);
        }
    }
}

#[test]
fn variable_sigma_is_uniform() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = synth(tmp.path(), 200, 8, 3);
    let out = tmp.path().join("var");
    ok(&["corrupt", "--in", s(&clean), "--out", s(&out), "--noise", "gaussian-range:5,50", "--seed", "1"]);
    let mut sig: Vec<f64> = fs::read_to_string(out.join("sigmas.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(sig.len(), 200);
    sig.sort_by(f64::total_cmp);
    let n = sig.len() as f64;
    let d = sig
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = (x - 5.0) / 45.0;
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // Kolmogorov-Smirnov, 1% level
    assert!(d < 1.628 / n.sqrt(), "D = {d}");
}

#[test]
fn train_denoise_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("toy.cfg");
    fs::write(&config, TOY).unwrap();
    let data = synth(tmp.path(), 10, 64, 1);

    // zero steps leave the seeded initialization
    let init = tmp.path().join("init/model.ckpt");
    ok(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&init), "--steps", "0"]);
    let (net_cfg, _) = parse_run_config(TOY).unwrap();
    assert_eq!(load_checkpoint(&init).unwrap().restore_network().unwrap(), build_network(&net_cfg, 1).unwrap());

    let run = tmp.path().join("run");
    let ckpt = run.join("model.ckpt");
    ok(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&ckpt)]);
    let again = tmp.path().join("again.ckpt");
    ok(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&again)]);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&again).unwrap());
    let names: Vec<PathBuf> = tree(&run).into_iter().map(|(p, _)| p).collect();
    assert_eq!(names, ["model.ckpt", "model.ckpt.loss.csv", "model.ckpt.manifest"].map(PathBuf::from));
    let losses = fs::read_to_string(run.join("model.ckpt.loss.csv")).unwrap();
    assert_eq!(losses.lines().count(), 301);

    // held-out images at the training level
    let test_clean = synth(tmp.path(), 4, 64, 7);
    let test_noisy = tmp.path().join("test_noisy");
    ok(&["corrupt", "--in", s(&test_clean), "--out", s(&test_noisy), "--noise", "gaussian:25", "--seed", "5"]);
    let den = tmp.path().join("den");
    ok(&["denoise", "--ckpt", s(&ckpt), "--in", s(&test_noisy), "--sigma", "25", "--out", s(&den)]);
    let zero = tmp.path().join("den0");
    ok(&["denoise", "--ckpt", s(&ckpt), "--in", s(&test_noisy), "--sigma", "0", "--out", s(&zero)]);
    let huge = tmp.path().join("huge");
    ok(&["denoise", "--ckpt", s(&ckpt), "--in", s(&test_noisy), "--sigma", "1e6", "--out", s(&huge)]);
    let mean = tmp.path().join("mean");
    ok(&["denoise", "--ckpt", s(&ckpt), "--in", s(&test_noisy), "--sigma", "25", "--mean-only", "--out", s(&mean)]);
    for p in list_pngs(&test_clean).unwrap() {
        let name = p.file_name().unwrap();
        let c = load_png(&p).unwrap();
        let y = load_png(test_noisy.join(name)).unwrap();
        let gain = psnr(&c, &load_png(den.join(name)).unwrap(), 1.0).unwrap() - psnr(&c, &y, 1.0).unwrap();
        assert!(gain > 3.0, "{name:?}: +{gain:.2} dB");
        assert_eq!(load_png(zero.join(name)).unwrap(), y);
        let (h, m) = (load_png(huge.join(name)).unwrap(), load_png(mean.join(name)).unwrap());
        assert!(h.data().iter().zip(m.data()).all(|(a, b)| (a - b).abs() <= 1e-3));
    }

    let csv = tmp.path().join("eval/eval.csv");
    let table = ok(&["eval", "--ckpt", s(&ckpt), "--clean", s(&test_clean), "--sigmas", "5,15,25,35,50", "--out", s(&csv)]);
    assert_eq!(table.lines().count(), 6);
    let rows = fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 1 + 4 * 5);
    assert!(tmp.path().join("eval/eval.csv.manifest").exists());

    // RGB images against a grayscale checkpoint
    let rgb = tmp.path().join("rgb");
    ok(&["synth", "--out", s(&rgb), "--count", "1", "--size", "16", "--channels", "3"]);
    assert_eq!(code(&["denoise", "--ckpt", s(&ckpt), "--in", s(&rgb), "--sigma", "25", "--out", s(&tmp.path().join("x"))]), 2);
}

#[test]
fn probe_reports_the_footprint() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("d10.cfg");
    fs::write(&config, "depth = 10\nforward_channels = 4\nbranch_channels = 3\nhead_widths = 6\n").unwrap();
    let out = tmp.path().join("probe");
    let line = ok(&["probe-rf", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(line.trim(), "footprint 43×43, center 0");
    let img = load_png(out.join("footprint_d10.png")).unwrap();
    assert_eq!(img.shape().h(), 87);
    assert!(out.join("manifest.txt").exists());
}

#[test]
fn exit_codes_follow_error_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = synth(tmp.path(), 2, 40, 1);
    let out = s(tmp.path()).to_string() + "/o";
    assert_eq!(code(&["corrupt", "--in", s(&clean), "--out", &out, "--noise", "gauss:3"]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["eval", "--ckpt", "/nonexistent", "--clean", s(&clean), "--sigmas", "1", "--out", &out]), 2);
    assert_eq!(code(&["corrupt", "--in", s(&tmp.path().join("empty")), "--out", &out, "--noise", "gaussian:1"]), 2);

    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "depht = 2\n").unwrap();
    assert_eq!(code(&["train", "--data", s(&clean), "--config", s(&cfg), "--out", &out]), 1);

    // an absurd learning rate blows the loss up
    let cfg = tmp.path().join("explode.cfg");
    fs::write(&cfg, "depth = 1\nforward_channels = 4\nbranch_channels = 4\nhead_widths = 4\nlr = 1e30\nsteps = 20\npatch_size = 16\n").unwrap();
    let run = bsdn(&["train", "--data", s(&clean), "--config", s(&cfg), "--out", &out]);
    assert_eq!(run.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&run.stderr).contains("step"));

    assert_eq!(code(&["--version"]), 0);
}

#[test]
fn shipped_configs_parse() {
    for text in [include_str!("../../../configs/toy.conf"), include_str!("../../../configs/full.conf")] {
        parse_run_config(text).unwrap();
    }
}
