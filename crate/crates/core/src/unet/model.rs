use super::block::{BlockOptions, VisionMambaBlock};
use super::config::{UNetConfig, LEVELS};
use super::layers::{bicubic, merge_neighbourhoods, pixel_shuffle, Conv, Linear, Norm};
use super::params::{Builder, Ctx, ParamSpec, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct PatchMerge {
    pub norm: Norm,
    pub proj: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLevel {
    pub blocks: Vec<VisionMambaBlock>,
    pub merge: PatchMerge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLevel {
    /// `C_{l+1} → 4·C_l`, followed by a 2× pixel shuffle.
    pub expand: Linear,
    /// `concat(decoder, skip)`, `2·C_l → C_l`.
    pub fuse: Linear,
    pub blocks: Vec<VisionMambaBlock>,
}

/// Layout of the network: parameter ids grouped by module. Tensors live in
/// a separate [`ParamStore`] so one layout serves any precision.
#[derive(Debug, Clone, PartialEq)]
pub struct MambaUNet {
    pub config: UNetConfig,
    pub head: Conv,
    pub embed: Conv,
    pub encoder: Vec<EncoderLevel>,
    pub bottleneck: Vec<VisionMambaBlock>,
    /// Index `l` restores level `l`; run from the deepest level up.
    pub decoder: Vec<DecoderLevel>,
    pub final_expand: Linear,
    pub final_conv: Conv,
}

/// Top-level parameter name prefixes, in forward order.
pub const MODULE_GROUPS: [&str; 6] = ["head", "embed", "enc", "bottleneck", "dec", "final"];

impl MambaUNet {
    pub fn layout(config: &UNetConfig) -> Result<(Self, Vec<ParamSpec>)> {
        config.validate()?;
        let c = &config.level_channels;
        let (p, s) = (config.patch_size, config.scale);
        let opts = BlockOptions {
            expansion: config.expansion,
            state_dim: config.state_dim,
            learned_fusion: config.use_iss2d_weights,
            d_skip: config.use_d_skip,
            per_direction: config.per_direction_params,
        };
        let mut b = Builder::default();
        let blocks = |b: &mut Builder, prefix: &str, ch: usize| -> Vec<VisionMambaBlock> {
            (0..config.blocks_per_level)
                .map(|i| VisionMambaBlock::new(b, &format!("{prefix}.block{i}"), ch, opts))
                .collect()
        };
        let hc = config.head_channels;
        let head = Conv::new(&mut b, "head.conv", 3, 1, hc * s * s, 1, 1, false);
        let embed = Conv::new(&mut b, "embed.conv", p, hc, c[0], p, 0, false);
        let mut encoder = Vec::with_capacity(LEVELS - 1);
        for l in 0..LEVELS - 1 {
            let bl = blocks(&mut b, &format!("enc{l}"), c[l]);
            let merge = PatchMerge {
                norm: Norm::new(&mut b, &format!("enc{l}.merge.norm"), 4 * c[l]),
                proj: Linear::new(&mut b, &format!("enc{l}.merge.proj"), 4 * c[l], c[l + 1], false),
            };
            encoder.push(EncoderLevel { blocks: bl, merge });
        }
        let bottleneck = blocks(&mut b, "bottleneck", c[LEVELS - 1]);
        let mut decoder = Vec::with_capacity(LEVELS - 1);
        for l in 0..LEVELS - 1 {
            decoder.push(DecoderLevel {
                expand: Linear::new(&mut b, &format!("dec{l}.expand"), c[l + 1], 4 * c[l], false),
                fuse: Linear::new(&mut b, &format!("dec{l}.fuse"), 2 * c[l], c[l], true),
                blocks: blocks(&mut b, &format!("dec{l}"), c[l]),
            });
        }
        let final_expand = Linear::new(&mut b, "final.expand", c[0], c[0], false);
        let final_conv = Conv::new(&mut b, "final.conv", 3, c[0] / (p * p), 1, 1, 1, true);
        let net = Self {
            config: config.clone(),
            head,
            embed,
            encoder,
            bottleneck,
            decoder,
            final_expand,
            final_conv,
        };
        Ok((net, b.into_specs()))
    }

    /// Layout plus freshly initialized parameters.
    pub fn init<T: Float>(config: &UNetConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let (net, specs) = Self::layout(config)?;
        Ok((net, ParamStore::materialize(&specs, seed)))
    }

    /// `lr (h, w, 1)` → `(h·s, w·s, 1)`. No clipping; see [`MambaUNet::infer`].
    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, lr: Var<'t, T>) -> Result<Var<'t, T>> {
        let cfg = &self.config;
        let (h, w) = match lr.shape()[..] {
            [h, w, 1] => (h, w),
            ref sh => return Err(Error::shape("forward", sh, &[0, 0, 1])),
        };
        cfg.check_input(h, w)?;
        let rate = cfg.dropout;
        let x = pixel_shuffle(self.head.forward(ctx, lr)?, cfg.scale)?;
        let mut x = self.embed.forward(ctx, x)?;
        let mut skips = Vec::with_capacity(LEVELS - 1);
        for level in &self.encoder {
            for blk in &level.blocks {
                x = blk.forward(ctx, x, rate)?;
            }
            skips.push(x);
            let m = level.merge.norm.forward(ctx, merge_neighbourhoods(x)?)?;
            x = level.merge.proj.forward(ctx, m)?;
        }
        for blk in &self.bottleneck {
            x = blk.forward(ctx, x, rate)?;
        }
        for (level, skip) in self.decoder.iter().zip(skips).rev() {
            x = pixel_shuffle(level.expand.forward(ctx, x)?, 2)?;
            x = level.fuse.forward(ctx, Var::concat(&[x, skip], 2)?)?;
            for blk in &level.blocks {
                x = blk.forward(ctx, x, rate)?;
            }
        }
        let x = pixel_shuffle(self.final_expand.forward(ctx, x)?, cfg.patch_size)?;
        let residual = self.final_conv.forward(ctx, x)?;
        residual.add(bicubic(lr, cfg.scale)?)
    }

    /// Inference: eval mode, no gradients, output clipped to `[0, 1]`.
    pub fn infer<T: Float>(&self, store: &ParamStore<T>, lr: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store, false, false, 0).with_scan_mode(self.config.scan_mode());
        let y = self.forward(&ctx, tape.constant(lr.clone()))?;
        let zero = T::zero();
        Ok(y.value().map(|v| v.max(zero).min(T::one())))
    }
}
