use nightdiff::image::ImageBuffer;
use nightdiff::metrics::{psnr, ssim};
use nightdiff::seed;
use proptest::prelude::*;
use rand::Rng;

/// Direct 2-D windowed SSIM: no separable filtering, no shared moments.
fn reference_ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let luma = |img: &ImageBuffer, r: usize, c: usize| {
        0.299 * img.get(r, c, 0) + 0.587 * img.get(r, c, 1) + 0.114 * img.get(r, c, 2)
    };
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let gs: f64 = g.iter().sum();
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let (h, w) = (a.height(), a.width());
    let mut total = 0.0;
    let mut count = 0.0;
    for r in 0..=h - 11 {
        for c in 0..=w - 11 {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = g[i] * g[j] / (gs * gs);
                    let (x, y) = (luma(a, r + i, c + j), luma(b, r + i, c + j));
                    mx += wt * x;
                    my += wt * y;
                    sxx += wt * x * x;
                    syy += wt * y * y;
                    sxy += wt * x * y;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    total / count
}

#[test]
fn ssim_agrees_with_direct_reference() {
    let mut rng = seed::rng(31);
    for _ in 0..5 {
        let a = ImageBuffer::from_fn(20, 23, 3, |_, _, _| rng.random_range(0.0..1.0));
        let noise = ImageBuffer::from_fn(20, 23, 3, |_, _, _| rng.random_range(-0.2..0.2));
        let b = a.zip_map(&noise, |v, n| (v + n).clamp(0.0, 1.0)).unwrap();
        assert!((ssim(&a, &b).unwrap() - reference_ssim(&a, &b)).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scores_are_symmetric_and_bounded(vals in prop::collection::vec(0.0f64..=1.0, 2 * 12 * 12 * 3)) {
        let (va, vb) = vals.split_at(12 * 12 * 3);
        let a = ImageBuffer::new(12, 12, 3, va.to_vec()).unwrap();
        let b = ImageBuffer::new(12, 12, 3, vb.to_vec()).unwrap();
        let s = ssim(&a, &b).unwrap();
        prop_assert_eq!(s, ssim(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        prop_assert!(psnr(&a, &b, 1.0).unwrap() <= 99.0);
    }
}
