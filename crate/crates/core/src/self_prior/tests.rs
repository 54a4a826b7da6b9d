use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..h * w).map(|_| rng.gen()).collect();
    Tensor::from_f64(vec![h, w, 1], &data).unwrap()
}

#[test]
fn default_roi_examples() {
    let r = default_roi(64, 64).unwrap();
    assert_eq!((r.origin_y, r.origin_x, r.height, r.width), (16, 16, 32, 32));
    let r = default_roi(320, 320).unwrap();
    assert_eq!((r.origin_y, r.origin_x, r.height, r.width), (80, 80, 160, 160));
    let r = default_roi(10, 10).unwrap();
    assert_eq!((r.origin_y, r.origin_x, r.height, r.width), (2, 2, 5, 5));
    assert_eq!(r.positions(5), (1, 1));
    assert!(default_roi(9, 64).is_err());
}

#[test]
fn bad_geometry_is_rejected() {
    let img = image(16, 16, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = PerturbConfig {
        roi: Some(RoiSpec { origin_y: 12, origin_x: 0, height: 5, width: 5 }),
        ..Default::default()
    };
    assert!(perturb(&img, &cfg, &mut rng, true).is_err());
    let cfg = PerturbConfig {
        roi: Some(RoiSpec { origin_y: 0, origin_x: 0, height: 4, width: 8 }),
        ..Default::default()
    };
    assert!(perturb(&img, &cfg, &mut rng, true).is_err());
    assert!(perturb(&image(8, 8, 0), &PerturbConfig::default(), &mut rng, true).is_err());
}

#[test]
fn eval_mode_is_identity() {
    let img = image(32, 32, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (out, rec) = perturb(&img, &PerturbConfig::default(), &mut rng, false).unwrap();
    assert_eq!(out, img);
    assert!(!rec.applied);
}

#[test]
fn same_seed_same_block() {
    let img = image(64, 64, 2);
    let run = || perturb(&img, &PerturbConfig::default(), &mut ChaCha8Rng::seed_from_u64(3), true).unwrap();
    assert_eq!(run(), run());
}

#[test]
fn zero_probability_never_applies() {
    let img = image(32, 32, 4);
    let cfg = PerturbConfig { prob: 0.0, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (out, rec) = perturb(&img, &cfg, &mut rng, true).unwrap();
        assert!(!rec.applied);
        assert_eq!(out, img);
    }
}

#[test]
fn add_mode_offsets_and_clips() {
    let img = Tensor::<f32>::full(&[20, 20, 1], 0.6);
    let cfg = PerturbConfig { mode: PerturbMode::Add, ..Default::default() };
    let (out, rec) = perturb(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(6), true).unwrap();
    let expect = (0.6 + rec.brightness as f32).min(1.0);
    let p = out.data()[rec.block_y * 20 + rec.block_x];
    assert!((p - expect).abs() < 1e-6);
}

#[test]
fn block_positions_are_uniform() {
    let img = image(64, 64, 7);
    let cfg = PerturbConfig::default();
    let roi = default_roi(64, 64).unwrap();
    let (ny, nx) = roi.positions(5);
    let mut counts = vec![0usize; ny * nx];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws = 10_000;
    let mut bright = 0.0;
    for _ in 0..draws {
        let (_, rec) = perturb(&img, &cfg, &mut rng, true).unwrap();
        counts[(rec.block_y - roi.origin_y) * nx + rec.block_x - roi.origin_x] += 1;
        bright += rec.brightness;
    }
    let cells = (ny * nx) as f64;
    let e = draws as f64 / cells;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // χ² with cells−1 degrees of freedom: mean k, sd √(2k). Six sd is loose.
    let k = cells - 1.0;
    assert!(chi2 < k + 6.0 * (2.0 * k).sqrt(), "chi2 {chi2} for {k} dof");
    assert!(chi2 > k - 6.0 * (2.0 * k).sqrt(), "chi2 {chi2} suspiciously small");
    assert!((bright / draws as f64 - 0.5).abs() < 0.02);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn only_one_block_changes(seed in any::<u64>(), h in 10usize..40, w in 10usize..40) {
        let img = image(h, w, seed ^ 0x5eed);
        let cfg = PerturbConfig::default();
        let roi = cfg.roi_for(h, w).unwrap();
        let (out, rec) = perturb(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(seed), true).unwrap();
        prop_assert!(rec.applied);
        prop_assert!(rec.block_y >= roi.origin_y && rec.block_y + 5 <= roi.origin_y + roi.height);
        prop_assert!(rec.block_x >= roi.origin_x && rec.block_x + 5 <= roi.origin_x + roi.width);
        prop_assert!((0.0..=1.0).contains(&rec.brightness));
        let b = rec.brightness as f32;
        for y in 0..h {
            for x in 0..w {
                let inside = (rec.block_y..rec.block_y + 5).contains(&y) && (rec.block_x..rec.block_x + 5).contains(&x);
                let (o, i) = (out.data()[y * w + x], img.data()[y * w + x]);
                if inside {
                    prop_assert_eq!(o, b);
                } else {
                    prop_assert_eq!(o.to_bits(), i.to_bits());
                }
            }
        }
    }
}
