use std::collections::BTreeMap;

use super::config::{ModelConfig, BN_EPS, BN_MOMENTUM};
use super::params::ParameterSet;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Var};

/// Training flag and the seed that drives every dropout mask of one forward.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardMode {
    pub training: bool,
    pub seed: u64,
}

impl ForwardMode {
    pub const EVAL: ForwardMode = ForwardMode { training: false, seed: 0 };

    pub fn train(seed: u64) -> Self {
        ForwardMode { training: true, seed }
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d1_11eb_2b75_2a5c);
    z ^ (z >> 31)
}

/// Records network blocks onto a tape, binding parameters by name on first use.
///
/// Parameters become gradient-tracking leaves when `track_grads` is set.
/// Running-statistic updates from training-mode batch norm are collected in
/// `running_updates` and left for the caller to commit.
pub struct ForwardCtx<'a, T: Real> {
    pub tape: &'a mut Tape<T>,
    pub config: &'a ModelConfig,
    params: &'a ParameterSet<T>,
    mode: ForwardMode,
    track_grads: bool,
    dropout_calls: u64,
    bound: BTreeMap<String, Var>,
    running_updates: BTreeMap<String, Vec<T>>,
}

impl<'a, T: Real> ForwardCtx<'a, T> {
    pub fn new(
        tape: &'a mut Tape<T>,
        config: &'a ModelConfig,
        params: &'a ParameterSet<T>,
        mode: ForwardMode,
        track_grads: bool,
    ) -> Self {
        ForwardCtx {
            tape,
            config,
            params,
            mode,
            track_grads,
            dropout_calls: 0,
            bound: BTreeMap::new(),
            running_updates: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> ForwardMode {
        self.mode
    }

    /// Parameter vars bound so far and pending running-stat updates.
    pub fn finish(self) -> (BTreeMap<String, Var>, BTreeMap<String, Vec<T>>) {
        (self.bound, self.running_updates)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::Config(format!("parameter {name} not present")))?
            .clone();
        let v = if self.track_grads {
            self.tape.param(t)
        } else {
            self.tape.constant(t)
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    fn slope(&self) -> T {
        T::lit(self.config.leaky_slope)
    }

    /// `prefix.weight` with `prefix.bias` when present.
    pub fn conv(&mut self, x: Var, prefix: &str, padding: usize, dilation: usize) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let bias_name = format!("{prefix}.bias");
        let b = if self.params.contains(&bias_name) {
            Some(self.param(&bias_name)?)
        } else {
            None
        };
        self.tape.conv2d(x, w, b, 1, padding, dilation)
    }

    pub fn batch_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let (mean_name, var_name) = (format!("{prefix}.running_mean"), format!("{prefix}.running_var"));
        let stat = |name: &str| -> Result<Vec<T>> {
            Ok(self
                .params
                .get(name)
                .ok_or_else(|| Error::Config(format!("buffer {name} not present")))?
                .data()
                .to_vec())
        };
        let mut rm = stat(&mean_name)?;
        let mut rv = stat(&var_name)?;
        let y = self.tape.batch_norm2d(
            x,
            gamma,
            beta,
            &mut rm,
            &mut rv,
            self.mode.training,
            T::lit(BN_EPS),
            T::lit(BN_MOMENTUM),
        )?;
        if self.mode.training {
            self.running_updates.insert(mean_name, rm);
            self.running_updates.insert(var_name, rv);
        }
        Ok(y)
    }

    pub fn leaky(&mut self, x: Var) -> Result<Var> {
        let slope = self.slope();
        self.tape.leaky_relu(x, slope)
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        self.dropout_calls += 1;
        let seed = splitmix64(self.mode.seed ^ splitmix64(self.dropout_calls));
        self.tape
            .dropout(x, self.config.dropout_rate, self.mode.training, seed)
    }

    /// conv3x3 -> BN -> leaky ReLU [-> dropout] -> conv3x3 -> BN -> leaky ReLU,
    /// plus an identity or 1x1-projection shortcut. Dropout only when
    /// `is_encoder` and training.
    pub fn residual_block(&mut self, x: Var, prefix: &str, is_encoder: bool) -> Result<Var> {
        let h = self.conv(x, &format!("{prefix}.conv1"), 1, 1)?;
        let h = self.batch_norm(h, &format!("{prefix}.bn1"))?;
        let mut h = self.leaky(h)?;
        if is_encoder {
            h = self.dropout(h)?;
        }
        let h = self.conv(h, &format!("{prefix}.conv2"), 1, 1)?;
        let h = self.batch_norm(h, &format!("{prefix}.bn2"))?;
        let h = self.leaky(h)?;
        let shortcut_name = format!("{prefix}.shortcut");
        let shortcut = if self.params.contains(&format!("{shortcut_name}.weight")) {
            self.conv(x, &shortcut_name, 0, 1)?
        } else {
            x
        };
        self.tape.add(h, shortcut)
    }

    /// Channel gate `sigmoid(W2 relu(W1 mean(x)))` applied to `x`.
    pub fn se_block(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w1 = self.param(&format!("{prefix}.fc1.weight"))?;
        let w2 = self.param(&format!("{prefix}.fc2.weight"))?;
        let s = self.tape.global_avg_pool(x)?;
        let z = self.tape.linear(s, w1, None)?;
        let z = self.tape.relu(z)?;
        let z = self.tape.linear(z, w2, None)?;
        let gate = self.tape.sigmoid(z);
        self.tape.channel_scale(x, gate)
    }

    /// Concatenates the previous encoder output with the previous booster
    /// output (or the model input, for the first booster), then atrous conv
    /// -> BN -> leaky ReLU -> 2x2 max pool, landing on the next stage's grid.
    pub fn encoder_booster(&mut self, prev_encoder: Var, prev_booster: Var, prefix: &str) -> Result<Var> {
        let fused = self.tape.concat_channels(&[prev_encoder, prev_booster])?;
        let d = self.config.dilation_rate;
        let h = self.conv(fused, &format!("{prefix}.conv"), d, d)?;
        let h = self.batch_norm(h, &format!("{prefix}.bn"))?;
        let h = self.leaky(h)?;
        self.tape.max_pool2d(h, 2, 2)
    }

    /// Upsample x2 followed by a batch-normalized 3x3 conv.
    pub fn bottleneck_enhancement(&mut self, bottleneck: Var, prefix: &str) -> Result<Var> {
        let up = self.tape.upsample2d(bottleneck, 2, self.config.upsample_mode)?;
        let h = self.conv(up, &format!("{prefix}.conv"), 1, 1)?;
        self.batch_norm(h, &format!("{prefix}.bn"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ParameterSet;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            base_channels: 4,
            depth: 2,
            se_reduction: 2,
            ..Default::default()
        }
    }

    fn rand_input(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_residual_branch_leaves_shortcut() {
        let cfg = small();
        let mut p = ParameterSet::<f64>::init(&cfg, 0);
        for n in ["enc1.conv1.weight", "enc1.conv2.weight"] {
            let shape = p.get(n).unwrap().shape().to_vec();
            p.insert(n, Tensor::zeros(shape));
        }
        // 4 -> 8 channels projects; make the projection an exact channel copy
        let mut proj = Tensor::zeros(vec![8, 4, 1, 1]);
        for c in 0..4 {
            proj.data_mut()[c * 4 + c] = 1.0;
        }
        p.insert("enc1.shortcut.weight", proj);
        let mut tape = Tape::new();
        let x = tape.constant(rand_input(vec![1, 4, 6, 6], 1));
        let mut ctx = ForwardCtx::new(&mut tape, &cfg, &p, ForwardMode::EVAL, false);
        let y = ctx.residual_block(x, "enc1", true).unwrap();
        let (yv, xv) = (tape.value(y), tape.value(x));
        for c in 0..4 {
            for i in 0..36 {
                assert_eq!(yv.data()[c * 36 + i], xv.data()[c * 36 + i]);
                assert_eq!(yv.data()[(c + 4) * 36 + i], 0.0);
            }
        }
    }

    #[test]
    fn decoder_block_ignores_dropout_rate() {
        let run = |rate: f64| {
            let cfg = ModelConfig { dropout_rate: rate, ..small() };
            let p = ParameterSet::<f32>::init(&cfg, 4);
            let mut tape = Tape::new();
            let x = tape.constant(rand_input(vec![2, 8, 4, 4], 2).cast());
            let mut ctx = ForwardCtx::new(&mut tape, &cfg, &p, ForwardMode::train(9), false);
            let y = ctx.residual_block(x, "dec0.block", false).unwrap();
            tape.value(y).clone()
        };
        assert_eq!(run(0.0), run(0.5));
        assert_eq!(run(0.2), run(0.9));
    }

    #[test]
    fn encoder_block_dropout_only_in_training() {
        let run = |rate: f64, mode: ForwardMode| {
            let cfg = ModelConfig { dropout_rate: rate, ..small() };
            let p = ParameterSet::<f32>::init(&cfg, 4);
            let mut tape = Tape::new();
            let x = tape.constant(rand_input(vec![2, 4, 4, 4], 2).cast());
            let mut ctx = ForwardCtx::new(&mut tape, &cfg, &p, mode, false);
            let y = ctx.residual_block(x, "enc1", true).unwrap();
            tape.value(y).clone()
        };
        assert_ne!(run(0.0, ForwardMode::train(1)), run(0.5, ForwardMode::train(1)));
        assert_eq!(run(0.0, ForwardMode::EVAL), run(0.5, ForwardMode::EVAL));
    }

    #[test]
    fn residual_gradient_reaches_input_through_both_paths() {
        let cfg = small();
        let p = ParameterSet::<f64>::init(&cfg, 5);
        let xt = rand_input(vec![1, 4, 8, 8], 6);
        let loss_of = |x: &Tensor<f64>, skip_main: bool| {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let mut ctx = ForwardCtx::new(&mut tape, &cfg, &p, ForwardMode::EVAL, false);
            let y = if skip_main {
                ctx.conv(xv, "enc1.shortcut", 0, 1).unwrap()
            } else {
                ctx.residual_block(xv, "enc1", true).unwrap()
            };
            let y2 = tape.mul(y, y).unwrap();
            let l = tape.sum(y2);
            tape.backward(l).unwrap();
            (tape.value(l).data()[0], tape.grad(xv).unwrap().to_vec())
        };
        let (_, g_full) = loss_of(&xt, false);
        let (_, g_short) = loss_of(&xt, true);
        assert!(g_full.iter().any(|&g| g != 0.0));
        // the main branch contributes, so the full gradient differs from the shortcut-only one
        assert!(g_full.iter().zip(&g_short).any(|(a, b)| (a - b).abs() > 1e-6));
        let h = 1e-6;
        for idx in [0, 37, 200] {
            let mut plus = xt.clone();
            plus.data_mut()[idx] += h;
            let mut minus = xt.clone();
            minus.data_mut()[idx] -= h;
            let fd = (loss_of(&plus, false).0 - loss_of(&minus, false).0) / (2.0 * h);
            assert!((fd - g_full[idx]).abs() <= 1e-5 * fd.abs().max(1.0), "{fd} vs {}", g_full[idx]);
        }
    }

    #[test]
    fn zero_weight_se_halves_input() {
        let cfg = small();
        let mut p = ParameterSet::<f64>::init(&cfg, 0);
        p.insert("enc0.se.fc1.weight", Tensor::zeros(vec![2, 4]));
        p.insert("enc0.se.fc2.weight", Tensor::zeros(vec![4, 2]));
        let mut tape = Tape::new();
        let xt = rand_input(vec![1, 4, 3, 3], 3);
        let x = tape.constant(xt.clone());
        let mut ctx = ForwardCtx::new(&mut tape, &cfg, &p, ForwardMode::EVAL, false);
        let y = ctx.se_block(x, "enc0.se").unwrap();
        for (a, b) in tape.value(y).data().iter().zip(xt.data()) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn se_gate_matches_hand_evaluation() {
        let cfg = ModelConfig { base_channels: 2, depth: 1, se_reduction: 2, ..Default::default() };
        let mut p = ParameterSet::<f64>::init(&cfg, 0);
        p.insert("enc0.se.fc1.weight", Tensor::new(vec![1, 2], vec![0.5, -1.0]).unwrap());
        p.insert("enc0.se.fc2.weight", Tensor::new(vec![2, 1], vec![2.0, -3.0]).unwrap());
        let xt = Tensor::new(vec![1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, -1.0, -1.0, 0.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(xt.clone());
        let mut ctx = ForwardCtx::new(&mut tape, &cfg, &p, ForwardMode::EVAL, false);
        let y = ctx.se_block(x, "enc0.se").unwrap();
        // means 2.5 and -0.5; hidden relu(1.25 + 0.5) = 1.75; gates sigmoid(3.5), sigmoid(-5.25)
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let gates = [sig(3.5), sig(-5.25)];
        for c in 0..2 {
            for i in 0..4 {
                let want = xt.data()[c * 4 + i] * gates[c];
                assert!((tape.value(y).data()[c * 4 + i] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn booster_ignores_weights_on_zero_branch() {
        let cfg = small();
        let p1 = ParameterSet::<f64>::init(&cfg, 0);
        let mut p2 = p1.clone();
        // scramble the taps that read the (zero) model-input channel
        let w = p2.get_mut("booster1.conv.weight").unwrap();
        let [k, c, kh, kw] = w.dims4().unwrap();
        for o in 0..k {
            for t in 0..kh * kw {
                w.data_mut()[(o * c + c - 1) * kh * kw + t] = 7.0 + o as f64;
            }
        }
        let enc = rand_input(vec![1, 4, 8, 8], 1);
        let run = |p: &ParameterSet<f64>| {
            let mut tape = Tape::new();
            let e = tape.constant(enc.clone());
            let x = tape.constant(Tensor::zeros(vec![1, 1, 8, 8]));
            let mut ctx = ForwardCtx::new(&mut tape, &cfg, p, ForwardMode::EVAL, false);
            let y = ctx.encoder_booster(e, x, "booster1").unwrap();
            tape.value(y).clone()
        };
        let (a, b) = (run(&p1), run(&p2));
        assert_eq!(a.shape(), &[1, 4, 4, 4]);
        assert_eq!(a, b);
    }

    #[test]
    fn atrous_impulse_support_is_five_by_five() {
        let mut tape = Tape::<f64>::new();
        let mut delta = Tensor::zeros(vec![1, 1, 9, 9]);
        delta.data_mut()[4 * 9 + 4] = 1.0;
        let x = tape.constant(delta);
        let w = tape.constant(Tensor::ones(vec![1, 1, 3, 3]));
        let y = tape.conv2d(x, w, None, 1, 2, 2).unwrap();
        let yv = tape.value(y);
        let nz: Vec<(usize, usize)> = (0..81)
            .filter(|&i| yv.data()[i] != 0.0)
            .map(|i| (i / 9, i % 9))
            .collect();
        let rows = nz.iter().map(|p| p.0).max().unwrap() - nz.iter().map(|p| p.0).min().unwrap() + 1;
        let cols = nz.iter().map(|p| p.1).max().unwrap() - nz.iter().map(|p| p.1).min().unwrap() + 1;
        assert_eq!((rows, cols), (5, 5));
        assert_eq!(nz.len(), 9);
        // dilation 1 with padding 1 is the ordinary 3x3 conv
        let y1 = tape.conv2d(x, w, None, 1, 1, 1).unwrap();
        let nz1 = tape.value(y1).data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nz1, 9);
    }

    #[test]
    fn enhancement_doubles_extent() {
        let cfg = small();
        let p = ParameterSet::<f32>::init(&cfg, 0);
        let mut tape = Tape::new();
        let x = tape.constant(rand_input(vec![1, 16, 3, 5], 1).cast());
        let mut ctx = ForwardCtx::new(&mut tape, &cfg, &p, ForwardMode::EVAL, false);
        let y = ctx.bottleneck_enhancement(x, "be").unwrap();
        assert_eq!(tape.shape(y), &[1, 8, 6, 10]);
    }
}
