//! Training loop.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::config::TrainConfig;
use super::extractor::FeatureExtractor;
use super::loss::total_loss;
use crate::autodiff::Tape;
use crate::data::{to_canonical_json, Manifest, SlicePair, Split};
use crate::error::{Error, Result};
use crate::parallel;
use crate::self_prior::{perturb, PerturbRecord};
use crate::unet::{save_checkpoint, CheckpointHeader, Ctx, MambaUNet, ParamStore};

pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const LOG_HEADER: &str = "step,l1,perceptual,total,wall_ms,perturb";

/// Independent random streams derived from the run seed.
const STREAM_SAMPLE: u64 = 1;
const STREAM_PERTURB: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub l1: f64,
    pub perceptual: f64,
    pub total: f64,
    pub wall_ms: f64,
    pub perturb: Vec<PerturbRecord>,
}

impl StepLog {
    /// One CSV row. Perturbations are `y:x:brightness` joined by `;`, or `-`
    /// when a sample was left untouched.
    pub fn csv_row(&self) -> String {
        let mut p = String::new();
        for (i, r) in self.perturb.iter().enumerate() {
            if i > 0 {
                p.push(';');
            }
            if r.applied {
                let _ = write!(p, "{}:{}:{:.6}", r.block_y, r.block_x, r.brightness);
            } else {
                p.push('-');
            }
        }
        format!("{},{:.8},{:.8},{:.8},{:.3},{}", self.step, self.l1, self.perceptual, self.total, self.wall_ms, p)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub log: Vec<StepLog>,
    pub checkpoints: Vec<PathBuf>,
    pub net: MambaUNet,
    pub store: ParamStore<f32>,
}

impl TrainReport {
    pub fn final_checkpoint(&self) -> &Path {
        self.checkpoints.last().expect("training writes a final checkpoint")
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

pub fn load_extractor(cfg: &TrainConfig) -> Result<FeatureExtractor> {
    match &cfg.extractor.pack {
        Some(dir) => FeatureExtractor::load_pack(dir),
        None => Ok(FeatureExtractor::seeded(cfg.extractor.seed)),
    }
}

/// Checks the training pairs against the config before any step runs.
pub fn preflight(cfg: &TrainConfig, pairs: &[SlicePair], phi: &FeatureExtractor) -> Result<()> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Data("no training slices in the dataset".into()));
    }
    for p in pairs {
        if p.scale != cfg.unet.scale {
            return Err(Error::Data(format!("{}: dataset scale {} but model scale {}", p.name, p.scale, cfg.unet.scale)));
        }
        let (h, w) = (p.lr.shape()[0], p.lr.shape()[1]);
        cfg.unet.check_input(h, w).map_err(|e| Error::Data(format!("{}: {e}", p.name)))?;
        if cfg.unet.use_self_prior {
            cfg.perturb.roi_for(h, w).map_err(|e| Error::Data(format!("{}: {e}", p.name)))?;
        }
        let m = phi.min_extent();
        if cfg.beta > 0.0 && (p.hr.shape()[0] < m || p.hr.shape()[1] < m) {
            return Err(Error::Data(format!("{}: high-resolution slice smaller than the extractor's {m}x{m}", p.name)));
        }
    }
    Ok(())
}

/// Reads the dataset named in the config and trains on its train split.
pub fn train(cfg: &TrainConfig) -> Result<TrainReport> {
    let (manifest, root) = Manifest::read(&cfg.data)?;
    let pairs = manifest.load_pairs(&root, Split::Train)?;
    train_on(cfg, &pairs, |_| {})
}

/// Trains on `pairs`, writing the log, config and checkpoints under
/// `cfg.out`. `observe` sees every step as it completes.
pub fn train_on(cfg: &TrainConfig, pairs: &[SlicePair], mut observe: impl FnMut(&StepLog)) -> Result<TrainReport> {
    let phi = load_extractor(cfg)?;
    preflight(cfg, pairs, &phi)?;
    let was_parallel = parallel::is_enabled();
    if cfg.deterministic {
        parallel::set_enabled(false);
    }
    let result = run(cfg, pairs, &phi, &mut observe);
    parallel::set_enabled(was_parallel);
    result
}

fn run(cfg: &TrainConfig, pairs: &[SlicePair], phi: &FeatureExtractor, observe: &mut dyn FnMut(&StepLog)) -> Result<TrainReport> {
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.json"), to_canonical_json(cfg)?)?;
    let mut log_file = fs::File::create(cfg.out.join(LOG_FILE))?;
    writeln!(log_file, "{LOG_HEADER}")?;

    let (net, mut store) = MambaUNet::init::<f32>(&cfg.unet, cfg.seed)?;
    let mut adam = Adam::new(cfg.adam(), &store);
    let mut sampler = stream(cfg.seed, STREAM_SAMPLE);
    let mut perturber = stream(cfg.seed, STREAM_PERTURB);
    let mut dropout_seeds = stream(cfg.seed, STREAM_DROPOUT);
    let mut log = Vec::with_capacity(cfg.steps);
    let mut checkpoints = Vec::new();

    for step in 1..=cfg.steps {
        let start = Instant::now();
        let batch: Vec<&SlicePair> = (0..cfg.batch_size).map(|_| &pairs[sampler.gen_range(0..pairs.len())]).collect();
        let mut records = Vec::with_capacity(batch.len());
        let inputs = batch
            .iter()
            .map(|p| {
                if cfg.unet.use_self_prior {
                    let (img, rec) = perturb(&p.lr, &cfg.perturb, &mut perturber, true)?;
                    records.push(rec);
                    Ok(img)
                } else {
                    records.push(PerturbRecord::default());
                    Ok(p.lr.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let tape = Tape::<f32>::new();
        let ctx = Ctx::new(&tape, &store, true, true, dropout_seeds.gen()).with_scan_mode(cfg.unet.scan_mode());
        let sr = inputs
            .into_iter()
            .map(|lr| net.forward(&ctx, tape.constant(lr)))
            .collect::<Result<Vec<_>>>()?;
        let hr: Vec<_> = batch.iter().map(|p| tape.constant(p.hr.clone())).collect();
        let loss = total_loss(&sr, &hr, cfg.beta, phi)?;
        let total = loss.total.item().into();
        if !f64::is_finite(total) {
            return Err(Error::NonFinite { op: "training loss" });
        }
        let mut grads = tape.backward(loss.total)?;
        let grads: Vec<_> = ctx.vars().iter().map(|v| grads.take(*v)).collect();
        if grads.iter().flatten().any(|g| !g.all_finite()) {
            return Err(Error::NonFinite { op: "training gradient" });
        }
        adam.step(&mut store, &grads)?;

        let entry = StepLog {
            step,
            l1: loss.l1.item().into(),
            perceptual: loss.perceptual.map_or(0.0, |p| p.item().into()),
            total,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            perturb: records,
        };
        writeln!(log_file, "{}", entry.csv_row())?;
        observe(&entry);
        log.push(entry);

        let header = CheckpointHeader {
            config: cfg.unet.clone(),
            step: step as u64,
        };
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.steps {
            let path = cfg.out.join(format!("ckpt_{step:06}.ckpt"));
            save_checkpoint(&path, &header, &store)?;
            checkpoints.push(path);
        }
        if step == cfg.steps {
            let path = cfg.out.join(FINAL_CHECKPOINT);
            save_checkpoint(&path, &header, &store)?;
            checkpoints.push(path);
        }
    }
    log_file.flush()?;
    Ok(TrainReport { log, checkpoints, net, store })
}
