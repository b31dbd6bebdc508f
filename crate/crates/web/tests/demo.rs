use blindspot_web::demo::{footprint, fusion, fusion_curves, to_rgba, Toy, TOY_SIZE};

#[test]
fn footprint_sizes_follow_depth() {
    for depth in [1, 4, 10] {
        let f = footprint(depth, 2).unwrap();
        assert_eq!((f.width, f.height), (4 * depth + 3, 4 * depth + 3));
        assert_eq!(f.center, 0.0);
        assert_eq!(f.rgba.len(), f.size * f.size * 4);
    }
}

#[test]
fn fusion_curves_are_normalized_densities() {
    let n = 2001;
    let c = fusion_curves(0.2, 0.1, 0.6, 0.2, -1.0, 2.0, n).unwrap();
    assert_eq!(c.len(), 4 * n);
    let dx = 3.0 / (n - 1) as f64;
    for k in 1..4 {
        let area: f64 = c[k * n..(k + 1) * n].iter().sum::<f64>() * dx;
        assert!((area - 1.0).abs() < 1e-3, "curve {k}: {area}");
    }
    let (m, p) = fusion(0.0, 1.0, 2.0, 1.0).unwrap();
    assert!((m - 1.0).abs() < 1e-12 && (p - 0.5).abs() < 1e-12, "{m} {p}");
    assert!(fusion(0.0, 1.0, 2.0, -1.0).is_err());
}

#[test]
fn toy_denoiser_improves_and_renders() {
    let mut toy = Toy::new(1, 25.0).unwrap();
    let before = toy.psnr("posterior").unwrap();
    toy.train(150).unwrap();
    assert_eq!(toy.steps_done(), 150);
    let after = toy.psnr("posterior").unwrap();
    assert!(after > before && after > toy.psnr("noisy").unwrap(), "{before} -> {after}");
    let rgba = to_rgba(toy.image("mean").unwrap());
    assert_eq!(rgba.len(), TOY_SIZE * TOY_SIZE * 4);
    assert!(toy.image("sharpened").is_err());
}
