use std::collections::BTreeMap;

use super::blocks::{ForwardCtx, ForwardMode};
use super::config::ModelConfig;
use super::params::{stage_name, ParameterSet};
use crate::error::{shape_err, Result};
use crate::tensor::{Pads, Real, Tape, Tensor, Var};

/// Result of recording one forward pass.
pub struct Forward<T> {
    /// `[N, 1, H, W]` logits, no output activation.
    pub logits: Var,
    /// Parameter name to the tape leaf it was bound to.
    pub bound: BTreeMap<String, Var>,
    /// New running statistics from training-mode batch norm.
    pub running_updates: BTreeMap<String, Vec<T>>,
}

/// Reflection pads that bring `extent` up to a multiple of `m`, split so the
/// larger half goes after.
pub fn padding_for(extent: usize, m: usize) -> (usize, usize) {
    let total = extent.next_multiple_of(m) - extent;
    (total / 2, total - total / 2)
}

/// The full encoder-decoder segmentation network.
#[derive(Clone, Debug, PartialEq)]
pub struct FsNet<T: Real = f32> {
    pub config: ModelConfig,
    pub params: ParameterSet<T>,
}

impl<T: Real> FsNet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParameterSet::init(&config, seed);
        Ok(FsNet { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParameterSet<T>) -> Result<Self> {
        config.validate()?;
        params.validate(&config)?;
        Ok(FsNet { config, params })
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let &[_, c, h, w] = shape else {
            return Err(shape_err!("model input must be [N, C, H, W], got {shape:?}"));
        };
        if c != self.config.in_channels {
            return Err(shape_err!("model expects {} input channels, got {c}", self.config.in_channels));
        }
        let m = self.config.size_multiple();
        if h < m || w < m {
            return Err(shape_err!("input {h}x{w} is smaller than {m}x{m} required by depth {}", self.config.depth));
        }
        Ok(())
    }

    /// Records the network on `tape`. Parameters track gradients when
    /// `track_grads` is set. Running statistics are not committed; see
    /// [`FsNet::commit_running_stats`].
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        mode: ForwardMode,
        track_grads: bool,
    ) -> Result<Forward<T>> {
        self.check_input(tape.shape(x))?;
        let cfg = &self.config;
        let (h, w) = (tape.shape(x)[2], tape.shape(x)[3]);
        let m = cfg.size_multiple();
        let (top, bottom) = padding_for(h, m);
        let (left, right) = padding_for(w, m);
        let x_pad = tape.reflect_pad2d(x, Pads { top, bottom, left, right })?;

        let mut ctx = ForwardCtx::new(tape, cfg, &self.params, mode, track_grads);
        let mut skips = Vec::with_capacity(cfg.depth);
        let e0 = ctx.residual_block(x_pad, "enc0", true)?;
        let mut prev = se_if(&mut ctx, e0, "enc0")?;
        let mut booster = x_pad;
        for i in 1..=cfg.depth {
            let mut input = ctx.tape.max_pool2d(prev, 2, 2)?;
            if cfg.enable_encoder_booster {
                booster = ctx.encoder_booster(prev, booster, &format!("booster{i}"))?;
                input = ctx.tape.add(input, booster)?;
            }
            skips.push(prev);
            let name = stage_name(cfg, i);
            let e = ctx.residual_block(input, &name, true)?;
            prev = se_if(&mut ctx, e, &name)?;
        }
        let bottleneck = prev;
        let enhancement = if cfg.enable_bottleneck_enhancement {
            Some(ctx.bottleneck_enhancement(bottleneck, "be")?)
        } else {
            None
        };
        let mut d = bottleneck;
        for j in (0..cfg.depth).rev() {
            let prefix = format!("dec{j}");
            let up = ctx.tape.upsample2d(d, 2, cfg.upsample_mode)?;
            let up = ctx.conv(up, &format!("{prefix}.up.conv"), 1, 1)?;
            let up = ctx.batch_norm(up, &format!("{prefix}.up.bn"))?;
            let mut up = ctx.leaky(up)?;
            if j == cfg.depth - 1 {
                if let Some(be) = enhancement {
                    up = ctx.tape.add(up, be)?;
                }
            }
            let cat = ctx.tape.concat_channels(&[up, skips[j]])?;
            let block = ctx.residual_block(cat, &format!("{prefix}.block"), false)?;
            d = se_if(&mut ctx, block, &prefix)?;
        }
        let logits = ctx.conv(d, "head", 0, 1)?;
        let logits = ctx.tape.crop2d(logits, top, left, h, w)?;
        let (bound, running_updates) = ctx.finish();
        Ok(Forward {
            logits,
            bound,
            running_updates,
        })
    }

    pub fn commit_running_stats(&mut self, updates: BTreeMap<String, Vec<T>>) -> Result<()> {
        for (name, values) in updates {
            let t = self
                .params
                .get_mut(&name)
                .ok_or_else(|| shape_err!("unknown running statistic {name}"))?;
            if t.numel() != values.len() {
                return Err(shape_err!("running statistic {name} length changed"));
            }
            t.data_mut().copy_from_slice(&values);
        }
        Ok(())
    }

    /// Eval-mode logits for a `[N, C, H, W]` batch.
    pub fn predict_logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, xv, ForwardMode::EVAL, false)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Eval-mode probabilities: sigmoid of the logits, or the logits clamped
    /// to [0, 1] when smoothing is disabled.
    pub fn predict_probabilities(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let logits = self.predict_logits(x)?;
        Ok(crate::postprocess::to_probabilities(&logits, self.config.enable_smoothing))
    }

    pub fn trainable_count(&self) -> usize {
        self.params.trainable_count()
    }
}

fn se_if<T: Real>(ctx: &mut ForwardCtx<'_, T>, x: Var, prefix: &str) -> Result<Var> {
    if ctx.config.enable_se {
        ctx.se_block(x, &format!("{prefix}.se"))
    } else {
        Ok(x)
    }
}
