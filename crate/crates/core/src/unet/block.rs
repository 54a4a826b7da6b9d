use super::layers::{Linear, Norm};
use super::params::{Builder, Ctx, Init, ParamId};
use crate::autodiff::Var;
use crate::error::Result;
use crate::iss2d::{fusion_weights, iss2d_forward, uniform_weights, DirectionParams, DIRECTIONS};
use crate::ssm::SsmVars;
use crate::tensor::Float;

/// Parameter ids of one selective SSM over `C_e` channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsmIds {
    pub a_log: ParamId,
    pub d_skip: Option<ParamId>,
    pub w_delta: ParamId,
    pub b_delta: ParamId,
    pub w_b: ParamId,
    pub w_c: ParamId,
}

impl SsmIds {
    pub fn new(bld: &mut Builder, name: &str, c: usize, n: usize, d_skip: bool) -> Self {
        let bound = 1.0 / (c as f64).sqrt();
        Self {
            a_log: bld.add(format!("{name}.a_log"), &[c, n], Init::ALogRamp),
            d_skip: d_skip.then(|| bld.add(format!("{name}.d"), &[c], Init::Ones)),
            w_delta: bld.add(format!("{name}.w_delta"), &[c, c], Init::Uniform(bound)),
            b_delta: bld.add(format!("{name}.b_delta"), &[c], Init::DeltaBias),
            w_b: bld.add(format!("{name}.w_b"), &[c, n], Init::Uniform(bound)),
            w_c: bld.add(format!("{name}.w_c"), &[c, n], Init::Uniform(bound)),
        }
    }

    pub fn bind<'t, T: Float>(&self, ctx: &Ctx<'t, T>) -> SsmVars<'t, T> {
        SsmVars {
            a_log: ctx.p(self.a_log),
            d_skip: self.d_skip.map(|d| ctx.p(d)),
            w_delta: ctx.p(self.w_delta),
            b_delta: ctx.p(self.b_delta),
            w_b: ctx.p(self.w_b),
            w_c: ctx.p(self.w_c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockOptions {
    pub expansion: usize,
    pub state_dim: usize,
    pub learned_fusion: bool,
    pub d_skip: bool,
    pub per_direction: bool,
}

/// Vision Mamba block on a `(H, W, C)` grid:
///
/// ```text
/// u   = norm1(x)
/// a   = silu(in_a(u))
/// b   = norm2(iss2d(silu(dwconv3x3(in_b(u)))))
/// out = x + dropout(out(a ⊙ b))
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct VisionMambaBlock {
    pub channels: usize,
    pub expanded: usize,
    pub norm1: Norm,
    pub in_a: Linear,
    pub in_b: Linear,
    pub dw_w: ParamId,
    pub dw_b: ParamId,
    pub ssm: Vec<SsmIds>,
    pub norm2: Norm,
    pub out: Linear,
    pub fusion: Option<ParamId>,
}

impl VisionMambaBlock {
    pub fn new(bld: &mut Builder, name: &str, c: usize, o: BlockOptions) -> Self {
        let ce = o.expansion * c;
        let norm1 = Norm::new(bld, &format!("{name}.norm1"), c);
        let in_a = Linear::new(bld, &format!("{name}.in_a"), c, ce, true);
        let in_b = Linear::new(bld, &format!("{name}.in_b"), c, ce, true);
        let dw_w = bld.add(format!("{name}.dw.w"), &[3, 3, ce], Init::Uniform(1.0 / 3.0));
        let dw_b = bld.add(format!("{name}.dw.b"), &[ce], Init::Zeros);
        let ssm = if o.per_direction {
            (0..DIRECTIONS)
                .map(|d| SsmIds::new(bld, &format!("{name}.ssm{d}"), ce, o.state_dim, o.d_skip))
                .collect()
        } else {
            vec![SsmIds::new(bld, &format!("{name}.ssm"), ce, o.state_dim, o.d_skip)]
        };
        let norm2 = Norm::new(bld, &format!("{name}.norm2"), ce);
        let out = Linear::new(bld, &format!("{name}.out"), ce, c, true);
        let fusion = o
            .learned_fusion
            .then(|| bld.add(format!("{name}.fusion.logits"), &[DIRECTIONS], Init::Zeros));
        Self {
            channels: c,
            expanded: ce,
            norm1,
            in_a,
            in_b,
            dw_w,
            dw_b,
            ssm,
            norm2,
            out,
            fusion,
        }
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>, dropout: f64) -> Result<Var<'t, T>> {
        let u = self.norm1.forward(ctx, x)?;
        let a = self.in_a.forward(ctx, u)?.silu()?;
        let b = self
            .in_b
            .forward(ctx, u)?
            .dwconv2d(ctx.p(self.dw_w), Some(ctx.p(self.dw_b)))?
            .silu()?;
        let weights = match self.fusion {
            Some(l) => fusion_weights(ctx.p(l))?,
            None => uniform_weights(ctx.tape),
        };
        let s = match self.ssm.as_slice() {
            [one] => iss2d_forward(b, DirectionParams::Shared(&one.bind(ctx)), weights, ctx.scan_mode)?,
            many => {
                let vars: [SsmVars<'t, T>; DIRECTIONS] = std::array::from_fn(|d| many[d].bind(ctx));
                iss2d_forward(b, DirectionParams::PerDirection(&vars), weights, ctx.scan_mode)?
            }
        };
        let s = self.norm2.forward(ctx, s)?;
        let y = self.out.forward(ctx, a.mul(s)?)?;
        x.add(ctx.dropout(y, dropout)?)
    }
}
