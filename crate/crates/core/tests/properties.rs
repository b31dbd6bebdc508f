use blindspot::checkpoint::Checkpoint;
use blindspot::linalg::Mat;
use blindspot::noise::posterior;
use blindspot::train::Trainer;
use blindspot::{build_network, conv2d, KernelMask, NetworkConfig, NoiseModel, Shape, Tensor};
use proptest::prelude::*;

fn tensor(shape: Shape) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0f32..1.0, shape.numel())
        .prop_map(move |d| Tensor::from_vec(shape, d).unwrap())
}

fn conv_inputs() -> impl Strategy<Value = (Tensor, Tensor, Tensor, usize)> {
    (1usize..3, 1usize..4, 2usize..7, 2usize..7, 1usize..4).prop_flat_map(|(cin, cout, h, w, d)| {
        (
            tensor(Shape::new(1, cin, h, w)),
            tensor(Shape::new(1, cin, h, w)),
            tensor(Shape::new(cout, cin, 3, 3)),
            Just(d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear((x, y, k, d) in conv_inputs(), a in -2.0f32..2.0, b in -2.0f32..2.0) {
        let bias = Tensor::zeros(Shape::new(1, k.shape().n(), 1, 1));
        let mix = Tensor::from_vec(
            x.shape(),
            x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
        ).unwrap();
        let lhs = conv2d(&mix, &k, &bias, d, None).unwrap();
        let cx = conv2d(&x, &k, &bias, d, None).unwrap();
        let cy = conv2d(&y, &k, &bias, d, None).unwrap();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..lhs.len() {
            let r = a as f64 * cx.data()[i] as f64 + b as f64 * cy.data()[i] as f64;
            num += (lhs.data()[i] as f64 - r).powi(2);
            den += r * r;
        }
        prop_assert!(num.sqrt() <= 1e-5 * den.sqrt().max(1e-6));
    }

    #[test]
    fn masking_equals_zeroing_the_center((x, _y, k, d) in conv_inputs()) {
        let bias = Tensor::full(Shape::new(1, k.shape().n(), 1, 1), 0.25);
        let mask = KernelMask::blind_spot(3, 3).unwrap();
        let masked = conv2d(&x, &k, &bias, d, Some(&mask)).unwrap();
        let mut zeroed = k.clone();
        for co in 0..k.shape().n() {
            for ci in 0..k.shape().c() {
                zeroed.set(co, ci, 1, 1, 0.0);
            }
        }
        let plain = conv2d(&x, &zeroed, &bias, d, None).unwrap();
        prop_assert_eq!(masked, plain);
    }

    #[test]
    fn scalar_posterior_lies_between_mean_and_observation(
        mu in -1.0f64..2.0, y in -1.0f64..2.0, s in 1e-4f64..1.0, sigma in 0.0f64..1.0,
    ) {
        let p = posterior(&[mu], &Mat::from_rows(&[&[s]]), &[y], sigma).unwrap();
        let (lo, hi) = if mu < y { (mu, y) } else { (y, mu) };
        prop_assert!(p.mean[0] >= lo - 1e-12 && p.mean[0] <= hi + 1e-12);
        prop_assert!(p.cov.a[0][0] <= s + 1e-15 && p.cov.a[0][0] <= sigma * sigma + 1e-15);
    }

    #[test]
    fn network_config_text_round_trips(
        depth in 1usize..12, fc in 1usize..70, bc in 1usize..40,
        heads in prop::collection::vec(1usize..100, 0..3), color: bool, period in 1usize..4,
    ) {
        let c = NetworkConfig {
            depth, forward_channels: fc, branch_channels: bc, head_widths: heads,
            image_channels: if color { 3 } else { 1 }, residual_period: period,
            ..Default::default()
        };
        let text = c.to_kv().to_text();
        let back = NetworkConfig::from_kv(&blindspot::kv::KvDoc::parse(&text).unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn noise_model_text_round_trips(a in 0.0f64..100.0, b in 0.0f64..100.0, l in 0.01f64..100.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        for m in [
            NoiseModel::GaussianKnown { sigma: a },
            NoiseModel::GaussianVariable { lo, hi },
            NoiseModel::Poisson { lambda: l },
        ] {
            prop_assert_eq!(m.to_string().parse::<NoiseModel>().unwrap(), m);
        }
    }

    #[test]
    fn damaged_checkpoints_error_instead_of_panicking(
        cut in 0usize..4000, flips in prop::collection::vec((0usize..4000, 1u8..=255), 0..4),
    ) {
        let net = NetworkConfig {
            depth: 1, forward_channels: 2, branch_channels: 2, head_widths: vec![3],
            ..Default::default()
        };
        let t = blindspot::train::TrainConfig { patch_size: 8, ..Default::default() };
        let original = Trainer::from_configs(&net, t).unwrap().checkpoint().encode();
        let mut bytes = original.clone();
        for (at, x) in &flips {
            let i = at % bytes.len();
            bytes[i] ^= x;
        }
        let cut = cut.min(bytes.len());
        let damaged = &bytes[..bytes.len() - cut];
        if damaged != original.as_slice() {
            prop_assert!(Checkpoint::decode(damaged).is_err());
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let c = NetworkConfig { depth: 3, forward_channels: 5, branch_channels: 4, head_widths: vec![7], image_channels: 3, ..Default::default() };
    let x = Tensor::from_fn(Shape::new(2, 3, 9, 8), |[n, c, y, x]| ((n * 7 + c * 5 + y * 3 + x) % 11) as f32 / 11.0);
    let a = build_network(&c, 4).unwrap().forward(&x).unwrap();
    let b = build_network(&c, 4).unwrap().forward(&x).unwrap();
    assert_eq!(a, b);
}
