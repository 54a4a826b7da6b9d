use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::grad_check;

/// Double-double arithmetic for the extended-precision ZOH oracle.
#[derive(Clone, Copy, Debug)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        let e = (a - (s - bb)) + (b - bb);
        Dd { hi: s, lo: e }
    }

    fn norm(self) -> Dd {
        let s = self.hi + self.lo;
        Dd {
            hi: s,
            lo: self.lo - (s - self.hi),
        }
    }

    fn add(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.hi, o.hi);
        Dd {
            hi: s.hi,
            lo: s.lo + self.lo + o.lo,
        }
        .norm()
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Dd {
            hi: p,
            lo: e + self.hi * o.lo + self.lo * o.hi,
        }
        .norm()
    }

    fn div_f64(self, b: f64) -> Dd {
        let q1 = self.hi / b;
        let p = Dd::from(q1).mul(Dd::from(b));
        let r = self.add(Dd { hi: -p.hi, lo: -p.lo });
        let q2 = r.hi / b;
        Dd { hi: q1, lo: q2 }.norm()
    }

    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let p = Dd::from(q1).mul(o);
        let r = self.add(Dd { hi: -p.hi, lo: -p.lo });
        let q2 = r.hi / o.hi;
        Dd { hi: q1, lo: q2 }.norm()
    }
}

/// `(exp(Δa) − 1)/a · b` and `exp(Δa)` in double-double via Taylor series.
fn zoh_oracle(delta: f64, a: f64, b: f64) -> (f64, f64) {
    let z = Dd::from(delta).mul(Dd::from(a));
    // Series of expm1(w). For z < −½ it runs on −z, where every term is
    // positive, and exp(z) = 1/exp(−z).
    let series = |w: Dd| {
        let mut term = w;
        let mut sum = w;
        for k in 2..80 {
            term = term.mul(w).div_f64(k as f64);
            sum = sum.add(term);
        }
        sum
    };
    let em1 = if z.hi < -0.5 {
        let e = Dd::from(1.0).div(series(Dd { hi: -z.hi, lo: -z.lo }).add(Dd::from(1.0)));
        e.add(Dd::from(-1.0))
    } else {
        series(z)
    };
    let a_bar = em1.add(Dd::from(1.0));
    let b_bar = em1.div(Dd::from(a)).mul(Dd::from(b));
    (a_bar.hi + a_bar.lo, b_bar.hi + b_bar.lo)
}

#[test]
fn zoh_matches_extended_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let a = -rng.gen_range(0.01..16.0f64);
        let delta = (rng.gen_range(-7.0..0.0f64)).exp();
        let b = rng.gen_range(-2.0..2.0f64);
        let pair = zoh_discretize(&[delta], &[a], &[b], 1, 1, 1).unwrap();
        let (oa, ob) = zoh_oracle(delta, a, b);
        assert!((pair.a_bar[0] - oa).abs() <= 1e-12 * oa.abs(), "a_bar {delta} {a} {} {oa}", pair.a_bar[0]);
        assert!((pair.b_bar[0] - ob).abs() <= 1e-12 * ob.abs(), "b_bar {delta} {a} {b}");
    }
}

#[test]
fn series_branch_matches_extended_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let a = -rng.gen_range(0.5..2.0f64);
        let delta = rng.gen_range(1e-12..4e-7f64);
        assert!((delta * a).abs() < SERIES_THRESHOLD);
        let b = rng.gen_range(0.5..2.0f64);
        let pair = zoh_discretize(&[delta], &[a], &[b], 1, 1, 1).unwrap();
        let (oa, ob) = zoh_oracle(delta, a, b);
        assert!((pair.a_bar[0] - oa).abs() <= 1e-10 * oa.abs());
        assert!((pair.b_bar[0] - ob).abs() <= 1e-10 * ob.abs());
    }
}

fn random_pair(l: usize, ch: usize, n: usize, seed: u64) -> (DiscretePair<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta: Vec<f64> = (0..l * ch).map(|_| rng.gen_range(0.001..0.5)).collect();
    let a: Vec<f64> = (0..ch * n).map(|_| -rng.gen_range(0.1..4.0)).collect();
    let b: Vec<f64> = (0..l * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..l * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x: Vec<f64> = (0..l * ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let d: Vec<f64> = (0..ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (zoh_discretize(&delta, &a, &b, l, ch, n).unwrap(), c, x, d)
}

#[test]
fn single_step_unrolls_by_hand() {
    let (pair, c, x, d) = random_pair(1, 3, 4, 1);
    let y = recurrence_reference(&pair, &c, &x, Some(&d)).unwrap();
    for ci in 0..3 {
        let mut want = d[ci] * x[ci];
        for k in 0..4 {
            want += c[k] * pair.b_bar[ci * 4 + k] * x[ci];
        }
        assert!((y[ci] - want).abs() < 1e-15);
    }
}

#[test]
fn zero_decay_is_memoryless() {
    let (mut pair, c, x, d) = random_pair(7, 2, 3, 2);
    pair.a_bar.iter_mut().for_each(|v| *v = 0.0);
    let y = recurrence_reference(&pair, &c, &x, Some(&d)).unwrap();
    for t in 0..7 {
        for ci in 0..2 {
            let mut want = 0.0;
            for k in 0..3 {
                want += c[t * 3 + k] * (pair.b_bar[(t * 2 + ci) * 3 + k] * x[t * 2 + ci]);
            }
            want += d[ci] * x[t * 2 + ci];
            assert!((y[t * 2 + ci] - want).abs() < 1e-14);
        }
    }
}

#[test]
fn reference_rejects_bad_shapes() {
    let (pair, c, x, d) = random_pair(4, 2, 3, 3);
    assert!(recurrence_reference(&pair, &c[1..], &x, Some(&d)).is_err());
    assert!(recurrence_reference(&pair, &c, &x[1..], Some(&d)).is_err());
    assert!(recurrence_reference(&pair, &c, &x, Some(&d[1..])).is_err());
}

#[test]
fn hidden_state_stays_bounded() {
    let (pair, c, x, d) = random_pair(64, 4, 8, 4);
    let (_, h) = recurrence_reference_states(&pair, &c, &x, Some(&d)).unwrap();
    let max_abar = pair.a_bar.iter().copied().fold(0.0f64, f64::max);
    assert!(max_abar < 1.0);
    let max_input = pair
        .b_bar
        .iter()
        .enumerate()
        .map(|(i, &bb)| (bb * x[i / 8]).abs())
        .fold(0.0f64, f64::max);
    let (ch, n) = (4, 8);
    for t in 1..64 {
        for ci in 0..ch {
            let norm = |tt: usize| (0..n).map(|k| h[(tt * ch + ci) * n + k].abs()).fold(0.0f64, f64::max);
            assert!(norm(t) <= norm(t - 1) * max_abar + max_input + 1e-15);
        }
    }
}

fn params64(ch: usize, n: usize, seed: u64, d_skip: bool) -> SsmParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = SsmParams::init(ch, n, d_skip, &mut rng);
    // Larger steps than the default init exercise the recurrence harder.
    p.b_delta = uniform(&[ch], 1.0, &mut rng);
    if let Some(d) = &mut p.d_skip {
        *d = uniform(&[ch], 1.0, &mut rng);
    }
    p
}

fn rand_x<T: Float>(l: usize, ch: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uniform(&[l, ch], 1.0, &mut rng)
}

fn run_scan<T: Float>(x: &Tensor<T>, p: &SsmParams<T>, mode: ScanMode) -> Tensor<T> {
    let tape = Tape::new();
    let vars = p.bind(&tape, false);
    let y = selective_scan(tape.constant(x.clone()), &vars, mode).unwrap();
    (*y.value()).clone()
}

#[test]
fn zero_input_gives_zero_output() {
    let p: SsmParams<f32> = params64(6, 16, 1, true).cast();
    let y = run_scan(&Tensor::zeros(&[10, 6]), &p, ScanMode::Sequential);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn full_chunk_is_bitwise_sequential() {
    for d_skip in [true, false] {
        let p: SsmParams<f32> = params64(8, 16, 2, d_skip).cast();
        let x = rand_x::<f32>(64, 8, 3);
        let reference = selective_scan_reference(&x, &p).unwrap();
        assert_eq!(run_scan(&x, &p, ScanMode::Sequential), reference);
        assert_eq!(run_scan(&x, &p, ScanMode::Chunked(64)), reference);
        assert_eq!(run_scan(&x, &p, ScanMode::Chunked(1000)), reference);
    }
}

#[test]
fn chunked_matches_reference_f32() {
    let p: SsmParams<f32> = params64(8, 16, 4, true).cast();
    let x = rand_x::<f32>(64, 8, 5);
    let reference = selective_scan_reference(&x, &p).unwrap();
    for chunk in [1, 4, 16] {
        let y = run_scan(&x, &p, ScanMode::Chunked(chunk));
        assert!(y.max_abs_diff(&reference) <= 1e-5, "chunk {chunk}");
    }
}

#[test]
fn d_skip_toggle_changes_only_the_skip_term() {
    let with = params64(4, 8, 6, true);
    let mut without = with.clone();
    without.d_skip = None;
    let x = rand_x::<f64>(12, 4, 7);
    let y1 = run_scan(&x, &with, ScanMode::Sequential);
    let y0 = run_scan(&x, &without, ScanMode::Sequential);
    let d = with.d_skip.as_ref().unwrap();
    for t in 0..12 {
        for c in 0..4 {
            let diff = y1.data()[t * 4 + c] - y0.data()[t * 4 + c];
            assert!((diff - d.data()[c] * x.data()[t * 4 + c]).abs() < 1e-14);
        }
    }
}

#[test]
fn output_is_causal() {
    let p = params64(4, 16, 8, true);
    let x = rand_x::<f64>(32, 4, 9);
    let mut x2 = x.clone();
    for v in &mut x2.data_mut()[20 * 4..] {
        *v += 0.5;
    }
    for mode in [ScanMode::Sequential, ScanMode::Chunked(8)] {
        let (y, y2) = (run_scan(&x, &p, mode), run_scan(&x2, &p, mode));
        assert_eq!(y.data()[..20 * 4], y2.data()[..20 * 4]);
        assert_ne!(y.data()[20 * 4..], y2.data()[20 * 4..]);
    }
}

#[test]
fn rejects_non_negative_a() {
    let mut p = params64(2, 4, 10, true);
    let tape = Tape::new();
    let vars = p.bind(&tape, false);
    let x = tape.constant(rand_x::<f64>(3, 2, 1));
    let mut proj = vars.project(x).unwrap();
    proj.a = tape.constant(Tensor::zeros(&[2, 4]));
    assert!(scan_op(x, &proj, None, Arc::new(vec![vec![0, 1, 2]]), ScanMode::Sequential).is_err());
    p.a_log = Tensor::zeros(&[2, 4]);
    assert!(run_scan_result(&p).is_ok());
}

fn run_scan_result(p: &SsmParams<f64>) -> Result<Tensor<f64>> {
    let tape = Tape::new();
    let vars = p.bind(&tape, false);
    let y = selective_scan(tape.constant(rand_x::<f64>(3, 2, 1)), &vars, ScanMode::Sequential)?;
    Ok((*y.value()).clone())
}

fn scan_loss<'t>(
    tape: &'t Tape<f64>,
    vars: &SsmVars<'t, f64>,
    x: Var<'t, f64>,
    mode: ScanMode,
    weights: &Tensor<f64>,
) -> Result<Var<'t, f64>> {
    let y = selective_scan(x, vars, mode)?;
    y.mul(tape.constant(weights.clone()))?.sum()
}

#[test]
fn selective_scan_gradients_match_finite_differences() {
    let (l, ch, n) = (6, 3, 4);
    let p = params64(ch, n, 20, true);
    let x = rand_x::<f64>(l, ch, 21);
    let w = rand_x::<f64>(l, ch, 22);
    for mode in [ScanMode::Sequential, ScanMode::Chunked(4)] {
        let err = grad_check(|t, xv| scan_loss(t, &p.bind(t, false), xv, mode, &w), &x, 1e-3).unwrap();
        assert!(err <= 1e-4, "x: {err}");
        let fields: [(&str, Tensor<f64>, usize); 6] = [
            ("a_log", p.a_log.clone(), 0),
            ("d_skip", p.d_skip.clone().unwrap(), 1),
            ("w_delta", p.w_delta.clone(), 2),
            ("b_delta", p.b_delta.clone(), 3),
            ("w_b", p.w_b.clone(), 4),
            ("w_c", p.w_c.clone(), 5),
        ];
        for (name, value, which) in fields {
            let err = grad_check(
                |t, pv| {
                    let mut vars = p.bind(t, false);
                    match which {
                        0 => vars.a_log = pv,
                        1 => vars.d_skip = Some(pv),
                        2 => vars.w_delta = pv,
                        3 => vars.b_delta = pv,
                        4 => vars.w_b = pv,
                        _ => vars.w_c = pv,
                    }
                    scan_loss(t, &vars, t.constant(x.clone()), mode, &w)
                },
                &value,
                1e-3,
            )
            .unwrap();
            assert!(err <= 1e-4, "{name}: {err}");
        }
    }
}

#[test]
fn multi_order_scan_gradients() {
    let (l, ch, n) = (6, 2, 3);
    let p = params64(ch, n, 30, true);
    let x = rand_x::<f64>(l, ch, 31);
    let w = {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        uniform::<f64, _>(&[3, l, ch], 1.0, &mut rng)
    };
    let orders = Arc::new(vec![(0..l).collect(), (0..l).rev().collect(), vec![3, 0, 4, 1, 5, 2]]);
    let err = grad_check(
        |t, xv| {
            let vars = p.bind(t, false);
            let proj = vars.project(xv)?;
            let y = scan_op(xv, &proj, vars.d_skip, orders.clone(), ScanMode::Chunked(4))?;
            y.mul(t.constant(w.clone()))?.sum()
        },
        &x,
        1e-3,
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}


#[test]
fn init_follows_conventions() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let p = SsmParams::<f64>::init(5, 16, true, &mut rng);
    let a = p.a_diag();
    for c in 0..5 {
        for n in 0..16 {
            assert!((a.data()[c * 16 + n] + (n as f64 + 1.0)).abs() < 1e-12);
        }
    }
    for &b in p.b_delta.data() {
        let dt = crate::autodiff::softplus_scalar(b);
        assert!((DT_MIN * (1.0 - 1e-9)..=DT_MAX * (1.0 + 1e-9)).contains(&dt), "{dt}");
    }
    assert!(p.d_skip.unwrap().data().iter().all(|&d| d == 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn chunked_equals_sequential_f64(chunk in 1usize..40, l in 1usize..40, seed in 0u64..1000) {
        let p = params64(3, 8, seed, true);
        let x = rand_x::<f64>(l, 3, seed + 1);
        let seq = run_scan(&x, &p, ScanMode::Sequential);
        let chk = run_scan(&x, &p, ScanMode::Chunked(chunk));
        prop_assert!(seq.max_abs_diff(&chk) <= 1e-10);
    }
}
