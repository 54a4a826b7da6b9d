//! Parameter counting straight from the layout, without allocating.

use std::fmt;

use super::config::UNetConfig;
use super::model::MambaUNet;
use super::params::ParamSpec;
use crate::error::Result;
use crate::tensor::numel;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamReport {
    /// Per module, in layout order.
    pub modules: Vec<(String, usize)>,
    /// Vision Mamba block internals summed over every block.
    pub block_parts: Vec<(String, usize)>,
    pub total: usize,
}

fn module_key(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        [top, sub, ..] if sub.starts_with("block") => format!("{top}.blocks"),
        [top, sub, ..] if top.starts_with("enc") || top.starts_with("dec") => format!("{top}.{sub}"),
        [top, ..] => top.to_string(),
        [] => String::new(),
    }
}

fn block_part(name: &str) -> Option<&'static str> {
    let mut it = name.split('.');
    it.find(|s| s.starts_with("block"))?;
    let part = it.next()?;
    Some(match part {
        "norm1" | "norm2" => "layer norms",
        "in_a" | "in_b" => "input projections",
        "dw" => "depthwise conv",
        "out" => "output projection",
        "fusion" => "fusion logits",
        p if p.starts_with("ssm") => "selective SSM",
        _ => "other",
    })
}

fn tally(keys: impl Iterator<Item = (String, usize)>) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for (k, n) in keys {
        match out.iter_mut().find(|(kk, _)| *kk == k) {
            Some((_, acc)) => *acc += n,
            None => out.push((k, n)),
        }
    }
    out
}

pub fn report_from_specs(specs: &[ParamSpec]) -> ParamReport {
    let modules = tally(specs.iter().map(|s| (module_key(&s.name), numel(&s.shape))));
    let block_parts = tally(
        specs
            .iter()
            .filter_map(|s| block_part(&s.name).map(|p| (p.to_string(), numel(&s.shape)))),
    );
    ParamReport {
        modules,
        block_parts,
        total: specs.iter().map(|s| numel(&s.shape)).sum(),
    }
}

pub fn param_report(config: &UNetConfig) -> Result<ParamReport> {
    let (_, specs) = MambaUNet::layout(config)?;
    Ok(report_from_specs(&specs))
}

pub fn param_count(config: &UNetConfig) -> Result<usize> {
    Ok(param_report(config)?.total)
}

impl ParamReport {
    /// Scalars that live inside vision Mamba blocks.
    pub fn block_total(&self) -> usize {
        self.block_parts.iter().map(|(_, n)| n).sum()
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>12}", "module", "params")?;
        for (k, n) in &self.modules {
            writeln!(f, "{k:<24} {n:>12}")?;
        }
        writeln!(f, "{:<24} {:>12}", "total", self.total)?;
        writeln!(f)?;
        writeln!(f, "{:<24} {:>12}", "block part", "params")?;
        for (k, n) in &self.block_parts {
            writeln!(f, "{k:<24} {n:>12}")?;
        }
        write!(f, "{:<24} {:>12}", "all blocks", self.block_total())
    }
}
