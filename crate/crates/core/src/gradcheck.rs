//! Central finite-difference checks for tape gradients.
//!
//! Analytic gradients are taken at the working precision `T`; the numeric
//! reference always runs in f64 so that the difference quotient is not
//! dominated by rounding in the loss.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ForwardMode, FsNet, ModelConfig, ParameterSet};
use crate::tensor::{Real, Tape, Tensor, Var};

/// A scalar function of tape inputs, evaluable at any precision.
pub trait ScalarFn {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Result<Var>;
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
    /// Entries probed per tensor; tensors this small or smaller are probed fully.
    pub entries_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-6,
            tolerance: 1e-2,
            floor: 1e-4,
            entries_per_tensor: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Probe> {
        self.probes.iter().filter(|p| !(p.rel_error < self.tolerance))
    }

    pub fn passed(&self) -> bool {
        !self.probes.is_empty() && self.failures().next().is_none()
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

impl GradCheck {
    fn indices(&self, numel: usize, salt: u64) -> Vec<usize> {
        if numel <= self.entries_per_tensor {
            return (0..numel).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut idx = sample(&mut rng, numel, self.entries_per_tensor).into_vec();
        idx.sort_unstable();
        idx
    }

    fn central<F: FnMut(usize, f64) -> Result<f64>>(&self, index: usize, mut eval: F) -> Result<f64> {
        let plus = eval(index, self.step)?;
        let minus = eval(index, -self.step)?;
        Ok((plus - minus) / (2.0 * self.step))
    }

    fn probe(&self, tensor: String, index: usize, analytic: f64, numeric: f64) -> Probe {
        Probe {
            tensor,
            index,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric, self.floor),
        }
    }

    /// Checks d f / d input for every input tensor.
    pub fn check_fn<T: Real, F: ScalarFn>(&self, f: &F, inputs: &[Tensor<f64>]) -> Result<GradCheckReport> {
        let mut tape = Tape::<T>::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.cast())).collect();
        let out = f.eval(&mut tape, &vars)?;
        tape.backward(out)?;
        let grads: Vec<Vec<f64>> = vars
            .iter()
            .map(|&v| {
                tape.grad(v)
                    .map(|g| g.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect())
                    .ok_or_else(|| Error::Tape("input received no gradient".into()))
            })
            .collect::<Result<_>>()?;

        let eval64 = |which: usize, index: usize, delta: f64| -> Result<f64> {
            let mut tape = Tape::<f64>::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let mut t = t.clone();
                    if i == which {
                        t.data_mut()[index] += delta;
                    }
                    tape.constant(t)
                })
                .collect();
            let out = f.eval(&mut tape, &vars)?;
            Ok(tape.value(out).data()[0])
        };
        let mut report = GradCheckReport { probes: Vec::new(), tolerance: self.tolerance };
        for (which, t) in inputs.iter().enumerate() {
            for index in self.indices(t.numel(), which as u64) {
                let numeric = self.central(index, |i, d| eval64(which, i, d))?;
                report
                    .probes
                    .push(self.probe(format!("input{which}"), index, grads[which][index], numeric));
            }
        }
        Ok(report)
    }

    /// Checks mean BCE of the network in training mode with respect to every
    /// trainable tensor. Dropout masks are fixed by `mode.seed`.
    pub fn check_model<T: Real>(
        &self,
        config: &ModelConfig,
        params: &ParameterSet<f64>,
        input: &Tensor<f64>,
        target: &Tensor<f64>,
        mode: ForwardMode,
    ) -> Result<GradCheckReport> {
        let net = FsNet::<T>::from_parts(config.clone(), params.cast())?;
        let mut tape = Tape::<T>::new();
        let x = tape.constant(input.cast());
        let out = net.forward(&mut tape, x, mode, true)?;
        let loss = tape.bce_with_logits(out.logits, &target.cast())?;
        tape.backward(loss)?;
        let mut grads: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (name, &v) in &out.bound {
            let g = tape
                .grad(v)
                .ok_or_else(|| Error::Tape(format!("{name} received no gradient")))?;
            grads.insert(name, g.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect());
        }

        let mut net64 = FsNet::<f64>::from_parts(config.clone(), params.clone())?;
        let mut report = GradCheckReport { probes: Vec::new(), tolerance: self.tolerance };
        for (salt, (name, analytic)) in grads.iter().enumerate() {
            for index in self.indices(analytic.len(), salt as u64) {
                let numeric = self.central(index, |i, d| {
                    let orig = params.get(name).expect("bound names exist").data()[i];
                    net64.params.get_mut(name).expect("bound names exist").data_mut()[i] = orig + d;
                    let mut tape = Tape::<f64>::new();
                    let x = tape.constant(input.clone());
                    let out = net64.forward(&mut tape, x, mode, false)?;
                    let loss = tape.bce_with_logits(out.logits, target)?;
                    net64.params.get_mut(name).expect("bound names exist").data_mut()[i] = orig;
                    Ok(tape.value(loss).data()[0])
                })?;
                report.probes.push(self.probe(name.to_string(), index, analytic[index], numeric));
            }
        }
        Ok(report)
    }
}
