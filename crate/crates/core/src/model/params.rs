use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Running statistics are state, not trainable parameters.
    pub fn is_buffer(self) -> bool {
        matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    /// Inputs feeding one output unit; drives Kaiming init.
    pub fan_in: usize,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Default)]
struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, name: String, shape: Vec<usize>, kind: ParamKind, fan_in: usize) {
        self.0.push(ParamSpec { name, shape, kind, fan_in });
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        let fan_in = cin * k * k;
        self.push(format!("{prefix}.weight"), vec![cout, cin, k, k], ParamKind::Weight, fan_in);
        self.push(format!("{prefix}.bias"), vec![cout], ParamKind::Bias, fan_in);
    }

    /// Convolution feeding batch norm; a bias would be cancelled by the mean subtraction.
    fn conv_bn(&mut self, conv: &str, bn: &str, cin: usize, cout: usize, k: usize) {
        self.push(format!("{conv}.weight"), vec![cout, cin, k, k], ParamKind::Weight, cin * k * k);
        self.bn(bn, cout);
    }

    fn bn(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.gamma"), vec![c], ParamKind::Gamma, 1);
        self.push(format!("{prefix}.beta"), vec![c], ParamKind::Beta, 1);
        self.push(format!("{prefix}.running_mean"), vec![c], ParamKind::RunningMean, 1);
        self.push(format!("{prefix}.running_var"), vec![c], ParamKind::RunningVar, 1);
    }

    fn residual(&mut self, prefix: &str, cin: usize, cout: usize) {
        self.conv_bn(&format!("{prefix}.conv1"), &format!("{prefix}.bn1"), cin, cout, 3);
        self.conv_bn(&format!("{prefix}.conv2"), &format!("{prefix}.bn2"), cout, cout, 3);
        if cin != cout {
            self.conv(&format!("{prefix}.shortcut"), cin, cout, 1);
        }
    }

    fn se(&mut self, prefix: &str, c: usize, r: usize) {
        let hidden = c / r;
        self.push(format!("{prefix}.fc1.weight"), vec![hidden, c], ParamKind::Weight, c);
        self.push(format!("{prefix}.fc2.weight"), vec![c, hidden], ParamKind::Weight, hidden);
    }
}

/// Name of encoder stage `i`; the last stage is the bottleneck.
pub fn stage_name(config: &ModelConfig, i: usize) -> String {
    if i == config.depth {
        "bottleneck".into()
    } else {
        format!("enc{i}")
    }
}

/// Every parameter and buffer the network binds, in definition order.
pub fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let mut s = Specs::default();
    let w = |i| config.width(i);
    let se = |s: &mut Specs, prefix: &str, c| {
        if config.enable_se {
            s.se(&format!("{prefix}.se"), c, config.se_reduction);
        }
    };
    s.residual("enc0", config.in_channels, w(0));
    se(&mut s, "enc0", w(0));
    for i in 1..=config.depth {
        if config.enable_encoder_booster {
            let other = if i == 1 { config.in_channels } else { w(i - 2) };
            s.conv_bn(&format!("booster{i}.conv"), &format!("booster{i}.bn"), w(i - 1) + other, w(i - 1), 3);
        }
        let name = stage_name(config, i);
        s.residual(&name, w(i - 1), w(i));
        se(&mut s, &name, w(i));
    }
    if config.enable_bottleneck_enhancement {
        s.conv_bn("be.conv", "be.bn", w(config.depth), w(config.depth - 1), 3);
    }
    for j in (0..config.depth).rev() {
        let prefix = format!("dec{j}");
        s.conv_bn(&format!("{prefix}.up.conv"), &format!("{prefix}.up.bn"), w(j + 1), w(j), 3);
        s.residual(&format!("{prefix}.block"), 2 * w(j), w(j));
        se(&mut s, &prefix, w(j));
    }
    s.conv("head", w(0), 1, 1);
    s.0
}

/// Named tensors: trainable parameters plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T: Real = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParameterSet<T> {
    /// Kaiming fan-in normal weights, zero biases, unit gamma, zero beta,
    /// running mean 0 and running variance 1.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = param_specs(config)
            .into_iter()
            .map(|spec| {
                let t = match spec.kind {
                    ParamKind::Weight => {
                        Tensor::randn(spec.shape, (2.0 / spec.fan_in as f64).sqrt(), &mut rng)
                    }
                    ParamKind::Bias | ParamKind::Beta | ParamKind::RunningMean => {
                        Tensor::zeros(spec.shape)
                    }
                    ParamKind::Gamma | ParamKind::RunningVar => Tensor::ones(spec.shape),
                };
                (spec.name, t)
            })
            .collect();
        ParameterSet { tensors }
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        ParameterSet { tensors }
    }

    /// Checks names and shapes against the config's parameter list.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let specs = param_specs(config);
        for spec in &specs {
            let t = self
                .tensors
                .get(&spec.name)
                .ok_or_else(|| Error::Format(format!("missing parameter {}", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(shape_err!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                ));
            }
        }
        if self.tensors.len() != specs.len() {
            let known: std::collections::BTreeSet<_> = specs.iter().map(|s| &s.name).collect();
            let extra = self.tensors.keys().find(|k| !known.contains(k));
            return Err(Error::Format(format!("unexpected parameter {extra:?}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn is_buffer(name: &str) -> bool {
        name.ends_with(".running_mean") || name.ends_with(".running_var")
    }

    /// Scalar count of trainable entries.
    pub fn trainable_count(&self) -> usize {
        self.iter()
            .filter(|(n, _)| !Self::is_buffer(n))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        ParameterSet {
            tensors: self.iter().map(|(k, v)| (k.to_string(), v.cast())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let specs = param_specs(&ModelConfig::default());
        let set: std::collections::BTreeSet<_> = specs.iter().map(|s| &s.name).collect();
        assert_eq!(set.len(), specs.len());
    }

    #[test]
    fn init_matches_specs() {
        let cfg = ModelConfig { base_channels: 8, depth: 2, ..Default::default() };
        let p = ParameterSet::<f32>::init(&cfg, 1);
        p.validate(&cfg).unwrap();
        assert!(p.get("enc0.bn1.gamma").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(p.get("enc0.bn1.running_var").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(p.get("head.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(p, ParameterSet::init(&cfg, 1));
        assert_ne!(p, ParameterSet::init(&cfg, 2));
    }

    #[test]
    fn kaiming_scale() {
        let cfg = ModelConfig::default();
        let p = ParameterSet::<f64>::init(&cfg, 3);
        let w = p.get("dec3.block.conv1.weight").unwrap();
        let fan_in = 512.0 * 9.0;
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / w.numel() as f64;
        assert!((var * fan_in / 2.0 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn validate_catches_missing_and_extra() {
        let cfg = ModelConfig { base_channels: 8, depth: 1, ..Default::default() };
        let mut p = ParameterSet::<f32>::init(&cfg, 0);
        p.insert("stray", Tensor::zeros(vec![1]));
        assert!(p.validate(&cfg).is_err());
        let other = ModelConfig { enable_se: false, ..cfg.clone() };
        assert!(ParameterSet::<f32>::init(&other, 0).validate(&cfg).is_err());
    }
}
