//! Held-out evaluation against the bicubic baseline.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{bicubic_upscale, psnr, ssim, write_pgm16, Manifest, SlicePair, Split};
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;
use crate::unet::{load_checkpoint, MambaUNet, ParamStore};

pub const METRICS_FILE: &str = "metrics.csv";
pub const BICUBIC_METRICS_FILE: &str = "metrics_bicubic.csv";
pub const ERROR_MAP_DIR: &str = "error_maps";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub slice: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: Vec<EvalRow>,
    pub bicubic: Vec<EvalRow>,
}

fn mean(rows: &[EvalRow]) -> (f64, f64) {
    let n = rows.len() as f64;
    (
        rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
        rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    )
}

impl EvalReport {
    /// `(psnr_db, ssim)` averaged over slices.
    pub fn model_mean(&self) -> (f64, f64) {
        mean(&self.model)
    }

    pub fn bicubic_mean(&self) -> (f64, f64) {
        mean(&self.bicubic)
    }
}

fn clip(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| v.clamp(0.0, 1.0))
}

fn row(slice: &str, out: &Tensor<f32>, hr: &Tensor<f32>) -> Result<EvalRow> {
    Ok(EvalRow {
        slice: slice.to_string(),
        psnr_db: psnr(out, hr, 1.0)?,
        ssim: ssim(out, hr)?,
    })
}

/// Scores `pairs` with the model and with clipped bicubic upscaling. With
/// `out` set, also writes both CSVs and `|SR − HR|` maps.
pub fn evaluate_pairs(net: &MambaUNet, store: &ParamStore<f32>, pairs: &[SlicePair], out: Option<&Path>) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Data("no test slices to evaluate".into()));
    }
    for p in pairs {
        if p.scale != net.config.scale {
            return Err(Error::Data(format!(
                "{}: dataset scale {} but checkpoint scale {}",
                p.name, p.scale, net.config.scale
            )));
        }
    }
    let results = parallel::map(pairs.len(), |i| -> Result<(EvalRow, EvalRow, Tensor<f32>)> {
        let p = &pairs[i];
        let sr = net.infer(store, &p.lr)?;
        let base = clip(&bicubic_upscale(&p.lr, p.scale)?);
        let err = Tensor::new(
            sr.shape().to_vec(),
            sr.data().iter().zip(p.hr.data()).map(|(a, b)| (a - b).abs()).collect(),
        )?;
        Ok((row(&p.name, &sr, &p.hr)?, row(&p.name, &base, &p.hr)?, err))
    });
    let mut report = EvalReport {
        model: Vec::new(),
        bicubic: Vec::new(),
    };
    let mut maps = Vec::new();
    for r in results {
        let (m, b, e) = r?;
        report.model.push(m);
        report.bicubic.push(b);
        maps.push(e);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir.join(ERROR_MAP_DIR))?;
        write_csv(&dir.join(METRICS_FILE), &report.model)?;
        write_csv(&dir.join(BICUBIC_METRICS_FILE), &report.bicubic)?;
        for (r, e) in report.model.iter().zip(&maps) {
            write_pgm16(&dir.join(ERROR_MAP_DIR).join(format!("{}.pgm", r.slice)), e)?;
        }
    }
    Ok(report)
}

fn write_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "slice,psnr_db,ssim")?;
    for r in rows {
        writeln!(f, "{},{:.6},{:.6}", r.slice, r.psnr_db, r.ssim)?;
    }
    let (p, s) = mean(rows);
    writeln!(f, "mean,{p:.6},{s:.6}")?;
    Ok(())
}

/// Loads a checkpoint and scores the test split of the dataset at `data`.
pub fn evaluate(checkpoint: &Path, data: &Path, out: &Path) -> Result<EvalReport> {
    let (_, net, store) = load_checkpoint::<f32>(checkpoint)?;
    let (manifest, root) = Manifest::read(data)?;
    if let Some(s) = manifest.scale {
        if s != net.config.scale {
            return Err(Error::Data(format!("dataset scale {s} but checkpoint scale {}", net.config.scale)));
        }
    }
    let pairs = manifest.load_pairs(&root, Split::Test)?;
    evaluate_pairs(&net, &store, &pairs, Some(out))
}
