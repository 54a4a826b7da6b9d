//! Finite-difference gradient suites over the autodiff ops, the selective
//! scan, ISS2D, the vision Mamba block and a small end-to-end network.
//!
//! All checks run in f64 through [`grad_check`].

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, grad_check_at, Tape, Var, LN_EPS};
use crate::error::{Error, Result};
use crate::iss2d::{fusion_weights, iss2d_forward, iss2d_literal, DirectionParams};
use crate::ssm::{selective_scan, ScanMode, SsmParams};
use crate::tensor::Tensor;
use crate::unet::{BlockOptions, Builder, Ctx, MambaUNet, ParamId, ParamStore, UNetConfig, VisionMambaBlock};

pub const SUITES: [&str; 5] = ["ops", "ssm", "iss2d", "block", "network"];

pub const MODULE_TOL: f64 = 1e-4;
pub const NETWORK_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub suite: &'static str,
    pub name: String,
    pub rel: f64,
    pub tol: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.rel <= self.tol
    }
}

pub fn run_suite(name: &str) -> Result<Vec<CaseResult>> {
    let mut r = Runner { suite: "", out: Vec::new() };
    match name {
        "ops" => ops(&mut r)?,
        "ssm" => ssm(&mut r)?,
        "iss2d" => iss2d(&mut r)?,
        "block" => block(&mut r)?,
        "network" => network(&mut r)?,
        other => return Err(Error::invalid(format!("unknown gradient suite {other:?}; expected one of {SUITES:?}"))),
    }
    Ok(r.out)
}

pub fn run_all() -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for s in SUITES {
        out.extend(run_suite(s)?);
    }
    Ok(out)
}

struct Runner {
    suite: &'static str,
    out: Vec<CaseResult>,
}

impl Runner {
    fn push(&mut self, name: impl Into<String>, rel: f64, tol: f64) {
        self.out.push(CaseResult { suite: self.suite, name: name.into(), rel, tol });
    }

    fn check<F>(&mut self, name: &str, x: &Tensor<f64>, f: F) -> Result<()>
    where
        F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
    {
        let rel = grad_check(f, x, 1e-3)?;
        self.push(name, rel, MODULE_TOL);
        Ok(())
    }
}

pub fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape matches data")
}

fn unit(shape: &[usize], seed: u64) -> Tensor<f64> {
    rand_tensor(shape, seed, -1.0, 1.0)
}

/// Reduces `y` against fixed random weights so every coordinate carries a
/// distinct gradient.
fn probe<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    y.mul(tape.constant(unit(&y.shape(), seed)))?.sum()
}

fn ops(r: &mut Runner) -> Result<()> {
    r.suite = "ops";
    let other = unit(&[3, 4], 100);
    let x34 = unit(&[3, 4], 1);
    r.check("add", &x34, |t, x| probe(t, x.add(t.constant(other.clone()))?, 2))?;
    r.check("sub", &x34, |t, x| probe(t, t.constant(other.clone()).sub(x)?, 3))?;
    r.check("mul", &x34, |t, x| probe(t, x.mul(x)?, 4))?;
    r.check("scale", &x34, |t, x| probe(t, x.scale(-1.7)?.add_scalar(0.3)?.neg()?, 5))?;
    let v = unit(&[4], 101);
    r.check("add_last", &x34, |t, x| probe(t, x.add_last(t.constant(v.clone()))?, 6))?;
    r.check("add_last/v", &v, |t, x| probe(t, t.constant(other.clone()).add_last(x)?, 7))?;
    r.check("mul_last", &x34, |t, x| probe(t, x.mul_last(t.constant(v.clone()))?, 8))?;
    r.check("mul_last/v", &v, |t, x| probe(t, t.constant(other.clone()).mul_last(x)?, 9))?;
    let m = unit(&[4, 2], 102);
    r.check("matmul/a", &x34, |t, x| probe(t, x.matmul(t.constant(m.clone()))?, 10))?;
    r.check("matmul/b", &m, |t, x| probe(t, t.constant(other.clone()).matmul(x)?, 11))?;
    let b2 = unit(&[2], 103);
    let x3 = unit(&[2, 3, 4], 104);
    r.check("linear/x", &x3, |t, x| probe(t, x.linear(t.constant(m.clone()), Some(t.constant(b2.clone())))?, 12))?;
    r.check("linear/w", &m, |t, w| probe(t, t.constant(x3.clone()).linear(w, None)?, 13))?;
    r.check("linear/b", &b2, |t, b| probe(t, t.constant(x3.clone()).linear(t.constant(m.clone()), Some(b))?, 14))?;

    let img = unit(&[5, 4, 2], 105);
    let cw = unit(&[3, 3, 2, 3], 106);
    let cb = unit(&[3], 107);
    for (stride, pad) in [(1, 1), (2, 1), (2, 0)] {
        r.check(&format!("conv2d/x s{stride}p{pad}"), &img, |t, x| {
            probe(t, x.conv2d(t.constant(cw.clone()), Some(t.constant(cb.clone())), stride, pad)?, 15)
        })?;
        r.check(&format!("conv2d/w s{stride}p{pad}"), &cw, |t, w| {
            probe(t, t.constant(img.clone()).conv2d(w, None, stride, pad)?, 16)
        })?;
    }
    r.check("conv2d/b", &cb, |t, b| probe(t, t.constant(img.clone()).conv2d(t.constant(cw.clone()), Some(b), 1, 1)?, 17))?;
    let dw = unit(&[3, 3, 2], 108);
    let db = unit(&[2], 109);
    r.check("dwconv2d/x", &img, |t, x| probe(t, x.dwconv2d(t.constant(dw.clone()), Some(t.constant(db.clone())))?, 18))?;
    r.check("dwconv2d/w", &dw, |t, w| probe(t, t.constant(img.clone()).dwconv2d(w, None)?, 19))?;
    r.check("dwconv2d/b", &db, |t, b| probe(t, t.constant(img.clone()).dwconv2d(t.constant(dw.clone()), Some(b))?, 20))?;

    let gm = unit(&[4], 110);
    r.check("layer_norm/x", &x34, |t, x| {
        probe(t, x.layer_norm(Some(t.constant(gm.clone())), Some(t.constant(v.clone())), LN_EPS)?, 21)
    })?;
    r.check("layer_norm/gamma", &gm, |t, g| probe(t, t.constant(other.clone()).layer_norm(Some(g), None, LN_EPS)?, 22))?;
    r.check("layer_norm/beta", &v, |t, b| probe(t, t.constant(other.clone()).layer_norm(None, Some(b), LN_EPS)?, 23))?;

    r.check("silu", &x34, |t, x| probe(t, x.scale(3.0)?.silu()?, 24))?;
    r.check("softplus", &x34, |t, x| probe(t, x.scale(3.0)?.softplus()?, 25))?;
    r.check("exp", &x34, |t, x| probe(t, x.exp()?, 26))?;
    r.check("relu", &x34, |t, x| probe(t, x.relu()?, 27))?;
    r.check("abs", &x34, |t, x| probe(t, x.abs()?, 28))?;
    r.check("sqrt", &x34, |t, x| probe(t, x.mul(x)?.add_scalar(0.5)?.sqrt()?, 29))?;
    r.check("softmax/0", &x34, |t, x| probe(t, x.softmax(0)?, 30))?;
    r.check("softmax/1", &x34, |t, x| probe(t, x.softmax(1)?, 31))?;
    r.check("sum", &x34, |_, x| x.exp()?.sum())?;
    r.check("mean", &x34, |_, x| x.exp()?.mean())?;
    r.check("reshape", &x34, |t, x| probe(t, x.reshape(&[2, 6])?, 32))?;
    r.check("permute", &x3, |t, x| probe(t, x.permute(&[2, 0, 1])?, 33))?;
    r.check("slice", &x34, |t, x| probe(t, x.slice(1, 1, 3)?, 34))?;
    r.check("concat", &x34, |t, x| probe(t, t.concat(&[x, t.constant(other.clone()), x], 1)?, 35))?;
    let idx = Arc::new(vec![0usize, 5, 5, 11, 2, 7]);
    r.check("gather", &x34, |t, x| probe(t, x.gather(idx.clone(), &[2, 3])?, 36))?;
    let stack = unit(&[4, 3, 2], 111);
    r.check("mix/x", &stack, |t, x| probe(t, x.mix(t.constant(v.clone()))?, 37))?;
    r.check("mix/w", &v, |t, w| probe(t, t.constant(stack.clone()).mix(w.softmax(0)?)?, 38))?;
    Ok(())
}

/// SSM parameters with larger steps and skip terms than the default init.
fn ssm_params(ch: usize, n: usize, seed: u64) -> SsmParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = SsmParams::init(ch, n, true, &mut rng);
    p.b_delta = unit(&[ch], seed + 1);
    p.d_skip = Some(unit(&[ch], seed + 2));
    p
}

fn ssm(r: &mut Runner) -> Result<()> {
    r.suite = "ssm";
    let p = ssm_params(3, 4, 200);
    let x = unit(&[6, 3], 201);
    let w = unit(&[6, 3], 202);
    for (label, mode) in [("sequential", ScanMode::Sequential), ("chunked", ScanMode::Chunked(4))] {
        r.check(&format!("{label}/x"), &x, |t, xv| {
            selective_scan(xv, &p.bind(t, false), mode)?.mul(t.constant(w.clone()))?.sum()
        })?;
        let fields = [
            ("a_log", p.a_log.clone()),
            ("d_skip", p.d_skip.clone().expect("skip enabled")),
            ("w_delta", p.w_delta.clone()),
            ("b_delta", p.b_delta.clone()),
            ("w_b", p.w_b.clone()),
            ("w_c", p.w_c.clone()),
        ];
        for (which, (name, value)) in fields.into_iter().enumerate() {
            r.check(&format!("{label}/{name}"), &value, |t, pv| {
                let mut vars = p.bind(t, false);
                match which {
                    0 => vars.a_log = pv,
                    1 => vars.d_skip = Some(pv),
                    2 => vars.w_delta = pv,
                    3 => vars.b_delta = pv,
                    4 => vars.w_b = pv,
                    _ => vars.w_c = pv,
                }
                selective_scan(t.constant(x.clone()), &vars, mode)?.mul(t.constant(w.clone()))?.sum()
            })?;
        }
    }
    Ok(())
}

fn iss2d(r: &mut Runner) -> Result<()> {
    r.suite = "iss2d";
    let p = ssm_params(3, 4, 300);
    let g = unit(&[3, 3, 3], 301);
    let logits = unit(&[4], 302);
    let wsum = unit(&[3, 3, 3], 303);
    for (label, literal) in [("fast", false), ("literal", true)] {
        let run = if literal { iss2d_literal } else { iss2d_forward };
        r.check(&format!("{label}/grid"), &g, |t, xv| {
            let vars = p.bind(t, true);
            let w = fusion_weights(t.constant(logits.clone()))?;
            run(xv, DirectionParams::Shared(&vars), w, ScanMode::Chunked(4))?.mul(t.constant(wsum.clone()))?.sum()
        })?;
        r.check(&format!("{label}/logits"), &logits, |t, lv| {
            let vars = p.bind(t, true);
            run(t.constant(g.clone()), DirectionParams::Shared(&vars), fusion_weights(lv)?, ScanMode::Sequential)?
                .mul(t.constant(wsum.clone()))?
                .sum()
        })?;
    }
    Ok(())
}

/// Fills every all-zero or one-initialized tensor with random values so no
/// gradient path is trivially dead.
pub fn scramble(store: &mut ParamStore<f64>, seed: u64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        if name.ends_with(".a_log") || name.ends_with(".b_delta") {
            continue;
        }
        let t = store.get_mut(id);
        let r = rand_tensor(t.shape(), seed + id.index() as u64, -0.3, 0.3);
        if name.ends_with(".g") || name.ends_with(".d") {
            *t = r.map(|v| 1.0 + v);
        } else if t.data().iter().all(|&v| v == 0.0) {
            *t = r;
        }
    }
}

fn block(r: &mut Runner) -> Result<()> {
    r.suite = "block";
    for (label, per_direction) in [("shared", false), ("per-direction", true)] {
        let opts = BlockOptions {
            expansion: 2,
            state_dim: 4,
            learned_fusion: true,
            d_skip: true,
            per_direction,
        };
        let mut b = Builder::default();
        let blk = VisionMambaBlock::new(&mut b, "b", 4, opts);
        let mut store = ParamStore::materialize(&b.into_specs(), 400);
        scramble(&mut store, 401);
        let x = unit(&[4, 4, 4], 402);
        let wsum = unit(&[4, 4, 4], 403);
        // Training mode: dropout masks are fixed by the context seed.
        r.check(&format!("{label}/input"), &x, |t, xv| {
            let ctx = Ctx::new(t, &store, false, true, 5).with_scan_mode(ScanMode::Chunked(3));
            blk.forward(&ctx, xv, 0.3)?.mul(t.constant(wsum.clone()))?.sum()
        })?;
        for id in store.ids() {
            let rel = grad_check(
                |t, pv| {
                    let mut ctx = Ctx::new(t, &store, false, false, 0);
                    ctx.set(id, pv);
                    blk.forward(&ctx, t.constant(x.clone()), 0.3)?.mul(t.constant(wsum.clone()))?.sum()
                },
                store.get(id),
                3e-3,
            )?;
            r.push(format!("{label}/{}", store.name(id)), rel, MODULE_TOL);
        }
    }
    Ok(())
}

/// The network used by the end-to-end check: four levels of 4..32
/// channels, one block each, 16x16 input at scale 2.
pub fn network_config() -> UNetConfig {
    UNetConfig {
        level_channels: vec![4, 8, 16, 32],
        blocks_per_level: 1,
        state_dim: 4,
        head_channels: 4,
        dropout: 0.3,
        ..UNetConfig::default()
    }
}

fn network(r: &mut Runner) -> Result<()> {
    r.suite = "network";
    let cfg = network_config();
    let (net, mut store) = MambaUNet::init::<f64>(&cfg, 500)?;
    scramble(&mut store, 501);
    let lr = rand_tensor(&[16, 16, 1], 502, 0.0, 1.0);
    let wsum = unit(&[32, 32, 1], 503);
    let mut rng = ChaCha8Rng::seed_from_u64(504);
    let mut pick = |n: usize| -> Vec<usize> { (0..2.min(n)).map(|_| rng.gen_range(0..n)).collect() };
    let check = |which: Option<ParamId>, x: &Tensor<f64>, coords: Vec<usize>| {
        grad_check_at(
            |t, v| {
                let mut ctx = Ctx::new(t, &store, false, false, 0);
                let input = match which {
                    Some(id) => {
                        ctx.set(id, v);
                        t.constant(lr.clone())
                    }
                    None => v,
                };
                net.forward(&ctx, input)?.mul(t.constant(wsum.clone()))?.sum()
            },
            x,
            3e-3,
            coords,
        )
    };
    let rel = check(None, &lr, pick(lr.len()))?;
    r.push("input", rel, NETWORK_TOL);
    for id in store.ids() {
        let p = store.get(id);
        let rel = check(Some(id), p, pick(p.len()))?;
        r.push(store.name(id).to_string(), rel, NETWORK_TOL);
    }
    Ok(())
}
