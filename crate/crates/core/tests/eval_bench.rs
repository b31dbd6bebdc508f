use blindspot::data::synthetic_dataset;
use blindspot::eval::{
    cross_sigma_eval, dirac_probe, emit_reports, probe_size, psnr, records_csv, CSV_HEADER,
};
use blindspot::imageio::load_png;
use blindspot::{build_network, Error, NetworkConfig, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn narrow(depth: usize) -> NetworkConfig {
    NetworkConfig {
        depth,
        forward_channels: 4,
        branch_channels: 3,
        head_widths: vec![6],
        ..Default::default()
    }
}

#[test]
fn psnr_matches_a_direct_formula_and_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = Shape::new(1, 3, 8, 9);
    let a = Tensor::from_fn(shape, |_| rng.random::<f32>());
    let b = Tensor::from_fn(shape, |_| rng.random::<f32>());
    let mse: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    let direct = -10.0 * mse.log10();
    assert!((psnr(&a, &b, 1.0).unwrap() - direct).abs() < 1e-9);
    assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());

    // the same permutation applied to both leaves PSNR unchanged
    let mut order: Vec<usize> = (0..a.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let shuffle = |t: &Tensor| Tensor::from_vec(shape, order.iter().map(|&i| t.data()[i]).collect()).unwrap();
    assert!((psnr(&shuffle(&a), &shuffle(&b), 1.0).unwrap() - direct).abs() < 1e-9);
    assert!(psnr(&a, &Tensor::zeros(Shape::new(1, 1, 8, 9)), 1.0).is_err());
}

#[test]
fn depth_one_footprint_agrees_with_exhaustive_perturbation() {
    let config = narrow(1);
    let size = probe_size(&config);
    let fp = dirac_probe(&config, &(0..8).collect::<Vec<_>>(), size).unwrap();
    assert_eq!((fp.height(), fp.width()), (7, 7));
    assert_eq!(fp.center, 0.0);

    let net = build_network(&config, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::from_fn(Shape::new(1, 1, size, size), |_| rng.random::<f32>());
    let mid = size / 2;
    let base = net.forward(&x).unwrap().mean.get(0, 0, mid, mid);
    let (mut top, mut left, mut bottom, mut right) = (size, size, 0, 0);
    for y in 0..size {
        for xx in 0..size {
            let mut moved = x.clone();
            moved.set(0, 0, y, xx, x.get(0, 0, y, xx) + 3.0);
            let out = net.forward(&moved).unwrap().mean.get(0, 0, mid, mid);
            if (y, xx) == (mid, mid) {
                assert_eq!(out.to_bits(), base.to_bits());
            } else if out != base {
                top = top.min(y);
                left = left.min(xx);
                bottom = bottom.max(y);
                right = right.max(xx);
            }
        }
    }
    assert_eq!((bottom - top + 1, right - left + 1), (7, 7));
    assert_eq!((top, left), (fp.bbox.0, fp.bbox.1));
}

#[test]
fn undersized_probe_is_a_parameter_error() {
    let config = narrow(2);
    assert!(matches!(dirac_probe(&config, &[0], 12), Err(Error::Parameter(_))));
}

#[test]
fn reports_are_deterministic() {
    let config = narrow(1);
    let net = build_network(&config, 0).unwrap();
    let images = synthetic_dataset(2, 24, 1, 3);
    let records = cross_sigma_eval(&net, &images, &[5.0, 15.0, 25.0, 35.0, 50.0], 9).unwrap();
    assert_eq!(records.len(), 10);
    assert_eq!(records, cross_sigma_eval(&net, &images, &[5.0, 15.0, 25.0, 35.0, 50.0], 9).unwrap());
    assert!(matches!(cross_sigma_eval(&net, &images, &[-1.0], 0), Err(Error::Parameter(_))));

    let one = records_csv(&records[..1]);
    assert_eq!(one.lines().count(), 2);
    assert_eq!(one.lines().next().unwrap(), CSV_HEADER);

    let fp = dirac_probe(&config, &[0, 1], probe_size(&config)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = emit_reports(&records, &[("d1".into(), fp.clone())], dir.path()).unwrap();
    let first: Vec<Vec<u8>> = written.iter().map(|p| std::fs::read(p).unwrap()).collect();
    emit_reports(&records, &[("d1".into(), fp)], dir.path()).unwrap();
    let second: Vec<Vec<u8>> = written.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(first, second);

    let img = load_png(dir.path().join("footprint_d1.png")).unwrap();
    let nonzero_cols = (0..img.shape().w()).filter(|&x| (0..img.shape().h()).any(|y| img.get(0, 0, y, x) > 0.0)).count();
    assert_eq!(nonzero_cols, 7);
    assert!(emit_reports(&[], &[], dir.path()).is_err());
}

#[test]
fn zero_test_sigma_reproduces_the_clean_image() {
    let net = build_network(&narrow(1), 2).unwrap();
    let images = synthetic_dataset(1, 16, 1, 1);
    let r = &cross_sigma_eval(&net, &images, &[0.0], 0).unwrap()[0];
    assert!(r.psnr_posterior.is_infinite() && r.psnr_noisy.is_infinite());
    assert!(records_csv(std::slice::from_ref(r)).contains("inf"));
}
