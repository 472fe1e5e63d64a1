use nightdiff::diffcore::{
    ddim_step, forward_sample, make_subsequence, restore_from, sample_latent, NoiseSchedule, OracleDenoiser,
};
use nightdiff::illumest::IlluminationMap;
use nightdiff::image::ImageBuffer;
use nightdiff::seed;
use proptest::prelude::*;

#[test]
fn forward_variance_matches_schedule() {
    let sched = NoiseSchedule::default();
    let x0 = ImageBuffer::zeros(64, 64, 3);
    let mut rng = seed::rng(3);
    for t in [1, 100, 500, 1000] {
        let mut acc = 0.0;
        let mut n = 0usize;
        for _ in 0..4 {
            let eps = sample_latent(&mut rng, 64, 64, 3);
            let x = forward_sample(&x0, t, &eps, &sched).unwrap();
            acc += x.data().iter().map(|v| v * v).sum::<f64>();
            n += x.len();
        }
        let var = acc / n as f64;
        let expect = 1.0 - sched.alpha_bar(t);
        assert!((var / expect - 1.0).abs() < 0.02, "t={t}: {var} vs {expect}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn subsequence_is_strictly_decreasing(total in 1usize..2000, s in 1usize..200) {
        let s = s.min(total);
        let seq = make_subsequence(total, s).unwrap();
        prop_assert_eq!(seq[0], total);
        prop_assert!(seq.windows(2).all(|w| w[0] > w[1]));
        prop_assert!(*seq.last().unwrap() >= 1);
        prop_assert!(seq.len() <= s);
    }

    #[test]
    fn oracle_step_keeps_the_target(seed_value in any::<u64>(), t in 2usize..=1000, back in 1usize..50) {
        let sched = NoiseSchedule::default();
        let mut rng = seed::rng(seed_value);
        let x0 = ImageBuffer::from_fn(4, 4, 3, |r, c, k| ((r + c + k) % 5) as f64 / 4.0);
        let eps = sample_latent(&mut rng, 4, 4, 3);
        let x_t = forward_sample(&x0, t, &eps, &sched).unwrap();
        let t_prev = t.saturating_sub(back);
        let prev = ddim_step(&x_t, &eps, t, t_prev, &sched).unwrap();
        let expect = forward_sample(&x0, t_prev, &eps, &sched).unwrap();
        prop_assert!(prev.max_abs_diff(&expect) < 1e-9);
    }
}

#[test]
fn oracle_restore_is_exact_for_many_step_counts() {
    let sched = NoiseSchedule::default();
    let x0 = ImageBuffer::from_fn(8, 8, 3, |r, c, k| 0.1 + 0.8 * ((r * 8 + c + k) % 13) as f64 / 12.0);
    let den = OracleDenoiser::new(x0.clone(), sched.clone());
    let illum = IlluminationMap::from_buffer(ImageBuffer::filled(8, 8, 1, 0.5)).unwrap();
    let mut rng = seed::rng(9);
    for steps in [1, 2, 3, 10, 50, 333, 1000] {
        let x_t = sample_latent(&mut rng, 8, 8, 3);
        let out = restore_from(x_t, &x0, &illum, &den, &sched, steps).unwrap();
        assert!(out.max_abs_diff(&x0) < 1e-10, "S={steps}");
    }
}
