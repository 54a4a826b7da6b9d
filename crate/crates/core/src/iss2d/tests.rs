use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::grad_check;
use crate::ssm::SsmParams;

fn rand_tensor<T: Float>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape.to_vec(), &data).unwrap()
}

fn params<T: Float>(c: usize, n: usize, seed: u64) -> SsmParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = SsmParams::<f64>::init(c, n, true, &mut rng);
    p.b_delta = rand_tensor(&[c], seed + 1);
    p.cast()
}

fn values<T: Float>(v: Var<'_, T>) -> Vec<T> {
    v.value().data().to_vec()
}

#[test]
fn two_by_two_traversal_table() {
    let tape = Tape::<f32>::new();
    let g = tape.constant(Tensor::from_f64(vec![2, 2, 1], &[1., 2., 3., 4.]).unwrap());
    let seqs = values(scan_expand(g).unwrap());
    assert_eq!(seqs, [1., 2., 3., 4., 4., 3., 2., 1., 1., 3., 2., 4., 4., 2., 3., 1.]);
}

#[test]
fn degenerate_grids() {
    let one = traversal_orders(1, 1);
    assert!(one.iter().all(|o| o == &vec![0]));
    let row = traversal_orders(1, 5);
    assert_eq!(row[0], row[2]);
    assert_eq!(row[1], row[3]);
    let col = traversal_orders(5, 1);
    assert_eq!(col[0], col[2]);
}

#[test]
fn uniform_fusion_is_the_mean() {
    let tape = Tape::<f32>::new();
    let ys = tape.constant(rand_tensor(&[4, 6, 3], 1));
    let out = values(scan_merge(ys, fusion_weights(tape.constant(Tensor::zeros(&[4]))).unwrap(), 2, 3).unwrap());
    let orders = traversal_orders(2, 3);
    let y = ys.value();
    for p in 0..6 {
        for k in 0..3 {
            let mut mean = 0.0f64;
            for (d, o) in orders.iter().enumerate() {
                let t = o.iter().position(|&q| q == p).unwrap();
                mean += y.data()[(d * 6 + t) * 3 + k] as f64 / 4.0;
            }
            assert!((out[p * 3 + k] as f64 - mean).abs() <= 1e-7);
        }
    }
}

#[test]
fn saturated_logits_select_one_direction() {
    let tape = Tape::<f64>::new();
    let ys = tape.constant(rand_tensor(&[4, 9, 2], 2));
    let logits = tape.constant(Tensor::from_f64(vec![4], &[1e6, -1e6, -1e6, -1e6]).unwrap());
    let out = values(scan_merge(ys, fusion_weights(logits).unwrap(), 3, 3).unwrap());
    // Direction 0 is row-major, so its re-indexed grid is its own data.
    let yv = ys.value();
    for (a, b) in out.iter().zip(&yv.data()[..18]) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn weighted_merge_matches_per_pixel_sum() {
    let (h, w, c) = (3, 4, 2);
    let tape = Tape::<f64>::new();
    let ys = tape.constant(rand_tensor(&[4, h * w, c], 3));
    let logits = rand_tensor::<f64>(&[4], 4);
    let lv = tape.constant(logits.clone());
    let out = values(scan_merge(ys, fusion_weights(lv).unwrap(), h, w).unwrap());
    let z: f64 = logits.data().iter().map(|v| v.exp()).sum();
    let wts: Vec<f64> = logits.data().iter().map(|v| v.exp() / z).collect();
    let yv = ys.value();
    for y in 0..h {
        for x in 0..w {
            // Step index of (y, x) in each traversal, written out directly.
            let steps = [y * w + x, h * w - 1 - (y * w + x), x * h + y, h * w - 1 - (x * h + y)];
            for k in 0..c {
                let expect: f64 = (0..4).map(|d| wts[d] * yv.data()[(d * h * w + steps[d]) * c + k]).sum();
                assert!((out[(y * w + x) * c + k] - expect).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn expand_then_merge_round_trips() {
    let tape = Tape::<f32>::new();
    let g = tape.constant(rand_tensor(&[5, 3, 4], 5));
    let back = scan_merge(scan_expand(g).unwrap(), uniform_weights(&tape), 5, 3).unwrap();
    assert_eq!(values(back), values(g));
}

#[test]
fn fusion_weights_are_a_distribution() {
    let tape = Tape::<f32>::new();
    for seed in 0..20 {
        let l = rand_tensor::<f32>(&[4], seed).map(|v| v * 8.0);
        let w = values(fusion_weights(tape.constant(l)).unwrap());
        assert!(w.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!((w.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() <= 1e-7);
    }
}

#[test]
fn logit_shift_leaves_output_unchanged() {
    let tape = Tape::<f32>::new();
    let ys = tape.constant(rand_tensor(&[4, 8, 3], 6));
    let l = rand_tensor::<f32>(&[4], 7);
    let a = values(scan_merge(ys, fusion_weights(tape.constant(l.clone())).unwrap(), 2, 4).unwrap());
    let b = values(scan_merge(ys, fusion_weights(tape.constant(l.map(|v| v + 3.5))).unwrap(), 2, 4).unwrap());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-6);
    }
}

#[test]
fn zero_grid_maps_to_zero() {
    let p = params::<f32>(8, 16, 8);
    let tape = Tape::new();
    let vars = p.bind(&tape, false);
    let g = tape.constant(Tensor::zeros(&[4, 4, 8]));
    let out = iss2d_forward(g, DirectionParams::Shared(&vars), uniform_weights(&tape), ScanMode::Sequential).unwrap();
    assert_eq!(out.shape(), [4, 4, 8]);
    assert!(values(out).iter().all(|&v| v == 0.0));
}

#[test]
fn fast_path_matches_literal_path() {
    let p = params::<f64>(3, 4, 9);
    let per: [SsmParams<f64>; 4] = std::array::from_fn(|d| params(3, 4, 20 + d as u64));
    let tape = Tape::new();
    let vars = p.bind(&tape, false);
    let per_vars = per.each_ref().map(|q| q.bind(&tape, false));
    let g = tape.constant(rand_tensor(&[3, 5, 3], 10));
    let wts = fusion_weights(tape.constant(rand_tensor(&[4], 11))).unwrap();
    for mode in [ScanMode::Sequential, ScanMode::Chunked(4)] {
        for dp in [DirectionParams::Shared(&vars), DirectionParams::PerDirection(&per_vars)] {
            let a = values(iss2d_forward(g, dp, wts, mode).unwrap());
            let b = values(iss2d_literal(g, dp, wts, mode).unwrap());
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}

fn rotate180(t: &Tensor<f64>) -> Tensor<f64> {
    let (h, w, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut out = vec![0.0; t.len()];
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                out[((h - 1 - y) * w + (w - 1 - x)) * c + k] = t.data()[(y * w + x) * c + k];
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out).unwrap()
}

#[test]
fn rotation_swaps_direction_pairs() {
    let p = params::<f64>(2, 4, 12);
    let g = rand_tensor::<f64>(&[3, 3, 2], 13);
    let logits = rand_tensor::<f64>(&[4], 14);
    let l = logits.data();
    let swapped = Tensor::new(vec![4], vec![l[1], l[0], l[3], l[2]]).unwrap();
    let run = |grid: &Tensor<f64>, lg: &Tensor<f64>| {
        let tape = Tape::new();
        let vars = p.bind(&tape, false);
        let w = fusion_weights(tape.constant(lg.clone())).unwrap();
        let out = iss2d_literal(tape.constant(grid.clone()), DirectionParams::Shared(&vars), w, ScanMode::Sequential);
        (*out.unwrap().value()).clone()
    };
    let rotated = rotate180(&run(&rotate180(&g), &logits));
    let direct = run(&g, &swapped);
    assert!(rotated.max_abs_diff(&direct) <= 1e-13);
    // A generic grid is not symmetric, so the relation is not vacuous.
    assert!(run(&g, &logits).max_abs_diff(&direct) > 1e-6);
}

#[test]
fn module_gradients_match_finite_differences() {
    let p = params::<f64>(3, 4, 15);
    let g = rand_tensor::<f64>(&[3, 3, 3], 16);
    let logits = rand_tensor::<f64>(&[4], 17);
    let wsum = rand_tensor::<f64>(&[3, 3, 3], 18);
    for literal in [false, true] {
        let err_grid = grad_check(
            |t, xv| {
                let vars = p.bind(t, true);
                let w = fusion_weights(t.constant(logits.clone()))?;
                let run = if literal { iss2d_literal } else { iss2d_forward };
                run(xv, DirectionParams::Shared(&vars), w, ScanMode::Chunked(4))?.mul(t.constant(wsum.clone()))?.sum()
            },
            &g,
            1e-3,
        )
        .unwrap();
        assert!(err_grid <= 1e-4, "grid {err_grid}");
        let err_logits = grad_check(
            |t, lv| {
                let vars = p.bind(t, true);
                let w = fusion_weights(lv)?;
                let run = if literal { iss2d_literal } else { iss2d_forward };
                run(t.constant(g.clone()), DirectionParams::Shared(&vars), w, ScanMode::Sequential)?
                    .mul(t.constant(wsum.clone()))?
                    .sum()
            },
            &logits,
            1e-3,
        )
        .unwrap();
        assert!(err_logits <= 1e-4, "logits {err_logits}");
    }
}

#[test]
fn logits_receive_gradient() {
    let p = params::<f64>(3, 4, 19);
    let tape = Tape::new();
    let vars = p.bind(&tape, false);
    let lg = tape.param(Tensor::zeros(&[4]));
    let g = tape.constant(rand_tensor(&[4, 4, 3], 20));
    let out = iss2d_forward(g, DirectionParams::Shared(&vars), fusion_weights(lg).unwrap(), ScanMode::Sequential).unwrap();
    let loss = out.mul(tape.constant(rand_tensor(&[4, 4, 3], 21))).unwrap().sum().unwrap();
    let grads = tape.backward(loss).unwrap();
    let gl = grads.get(lg).unwrap();
    assert!(gl.data().iter().all(|v| v.abs() > 1e-8));
    // Softmax weights sum to one, so the logit gradient sums to zero.
    assert!(gl.sum().abs() < 1e-12);
}
