use super::config::ModelConfig;
use super::net::padding_for;
use super::params::param_specs;
use crate::error::{shape_err, Result};
use crate::tensor::{flops, UpsampleMode};

/// Parameter and FLOP totals for one config and input shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComplexityReport {
    pub total_params: usize,
    pub flops: u64,
    pub input_height: usize,
    pub input_width: usize,
}

/// Trainable parameters, excluding batch-norm running statistics.
pub fn count_params(config: &ModelConfig) -> usize {
    param_specs(config)
        .iter()
        .filter(|s| !s.kind.is_buffer())
        .map(|s| s.numel())
        .sum()
}

/// Forward cost walker that mirrors the network graph without running it.
struct Walker<'a> {
    cfg: &'a ModelConfig,
    total: u64,
}

impl Walker<'_> {
    fn conv(&mut self, cin: usize, cout: usize, k: usize, pixels: usize, bias: bool) {
        let macs = (cin * cout * k * k * pixels) as u64;
        self.total += flops::affine(macs, (cout * pixels) as u64, bias);
    }

    fn bn_act(&mut self, c: usize, pixels: usize, act: bool) {
        self.total += flops::BATCH_NORM_PER_ELEMENT * (c * pixels) as u64;
        if act {
            self.total += flops::ACTIVATION_PER_ELEMENT * (c * pixels) as u64;
        }
    }

    fn add(&mut self, elements: usize) {
        self.total += flops::ADD_PER_ELEMENT * elements as u64;
    }

    fn residual(&mut self, cin: usize, cout: usize, pixels: usize) {
        self.conv(cin, cout, 3, pixels, false);
        self.bn_act(cout, pixels, true);
        self.conv(cout, cout, 3, pixels, false);
        self.bn_act(cout, pixels, true);
        if cin != cout {
            self.conv(cin, cout, 1, pixels, true);
        }
        self.add(cout * pixels);
    }

    fn se(&mut self, c: usize, pixels: usize) {
        if !self.cfg.enable_se {
            return;
        }
        let hidden = (c / self.cfg.se_reduction) as u64;
        let c64 = c as u64;
        self.total += (c * pixels) as u64; // global average
        self.total += flops::affine(c64 * hidden, hidden, false);
        self.total += flops::ACTIVATION_PER_ELEMENT * hidden;
        self.total += flops::affine(hidden * c64, c64, false);
        self.total += flops::SIGMOID_PER_ELEMENT * c64;
        self.total += flops::SCALE_PER_ELEMENT * (c * pixels) as u64;
    }

    fn upsample(&mut self, c: usize, out_pixels: usize) {
        if self.cfg.upsample_mode == UpsampleMode::Bilinear {
            self.total += flops::BILINEAR_PER_OUTPUT * (c * out_pixels) as u64;
        }
    }

    fn max_pool2(&mut self, c: usize, out_pixels: usize) {
        self.total += flops::max_pool((c * out_pixels) as u64, 2);
    }
}

/// Forward FLOPs for a single `[1, in_channels, height, width]` input in
/// eval mode, using the per-op costs in [`crate::tensor::flops`].
pub fn count_flops(config: &ModelConfig, height: usize, width: usize) -> Result<ComplexityReport> {
    config.validate()?;
    let m = config.size_multiple();
    if height < m || width < m {
        return Err(shape_err!("input {height}x{width} is smaller than {m}x{m}"));
    }
    let ph = height + { let (a, b) = padding_for(height, m); a + b };
    let pw = width + { let (a, b) = padding_for(width, m); a + b };
    let pixels = |level: usize| (ph >> level) * (pw >> level);
    let w = |i| config.width(i);
    let mut k = Walker { cfg: config, total: 0 };

    k.residual(config.in_channels, w(0), pixels(0));
    k.se(w(0), pixels(0));
    for i in 1..=config.depth {
        k.max_pool2(w(i - 1), pixels(i));
        if config.enable_encoder_booster {
            let other = if i == 1 { config.in_channels } else { w(i - 2) };
            k.conv(w(i - 1) + other, w(i - 1), 3, pixels(i - 1), false);
            k.bn_act(w(i - 1), pixels(i - 1), true);
            k.max_pool2(w(i - 1), pixels(i));
            k.add(w(i - 1) * pixels(i));
        }
        k.residual(w(i - 1), w(i), pixels(i));
        k.se(w(i), pixels(i));
    }
    let d = config.depth;
    if config.enable_bottleneck_enhancement {
        k.upsample(w(d), pixels(d - 1));
        k.conv(w(d), w(d - 1), 3, pixels(d - 1), false);
        k.bn_act(w(d - 1), pixels(d - 1), false);
    }
    for j in (0..d).rev() {
        k.upsample(w(j + 1), pixels(j));
        k.conv(w(j + 1), w(j), 3, pixels(j), false);
        k.bn_act(w(j), pixels(j), true);
        if j == d - 1 && config.enable_bottleneck_enhancement {
            k.add(w(j) * pixels(j));
        }
        k.residual(2 * w(j), w(j), pixels(j));
        k.se(w(j), pixels(j));
    }
    k.conv(w(0), 1, 1, pixels(0), true);
    Ok(ComplexityReport {
        total_params: count_params(config),
        flops: k.total,
        input_height: height,
        input_width: width,
    })
}
