//! Data preparation and the training loop.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DataSource, TrainConfig, MAX_DESK_EXTENT};
use super::evaluate::{evaluate_samples, optimum_from_samples, EvalOptions, InferenceSettings};
use super::optim::Adam;
use crate::data::{
    augment, discover, load_entries, make_splits, synthetic_sample, SegmentationSample, SplitPlan,
    SyntheticConfig,
};
use crate::error::{invalid, Error, Result};
use crate::metrics::{Aggregation, MetricsReport};
use crate::model::{save_checkpoint, splitmix64, ForwardMode, FsNet, ParameterSet};
use crate::tensor::{Tape, Tensor};

/// Samples per split after preprocessing.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub plan: SplitPlan,
    pub train: Vec<SegmentationSample>,
    pub validation: Vec<SegmentationSample>,
    pub test: Vec<SegmentationSample>,
}

impl PreparedData {
    /// Train plus validation, i.e. everything the model may learn from.
    pub fn training_pool(&self) -> Vec<SegmentationSample> {
        self.train.iter().chain(&self.validation).cloned().collect()
    }
}

fn preprocess(cfg: &TrainConfig, s: SegmentationSample) -> Result<SegmentationSample> {
    let s = s.map_image(|img| cfg.preprocess.apply(img))?;
    match cfg.effective_image_size() {
        Some(n) => s.resized(n, n),
        None => {
            let (h, w) = s.dims();
            if h.max(w) > MAX_DESK_EXTENT && !cfg.full_resolution {
                return Err(Error::Config(format!(
                    "{} is {h}x{w}; set image_size or full_resolution = true to train at this scale",
                    s.id
                )));
            }
            Ok(s)
        }
    }
}

/// Loads, splits and preprocesses the configured data.
pub fn prepare_data(cfg: &TrainConfig) -> Result<PreparedData> {
    let (ids, mut samples): (Vec<_>, BTreeMap<String, SegmentationSample>) = match &cfg.source {
        DataSource::Folder(root) => {
            let entries = discover(root)?;
            let ids = entries.iter().map(|e| (e.id.clone(), e.hint)).collect();
            let loaded = load_entries(&entries, cfg.dataset)?;
            (ids, loaded.into_iter().map(|s| (s.id.clone(), s)).collect())
        }
        DataSource::Synthetic { count, size, seed } => {
            let syn = SyntheticConfig::sized(*size, *size);
            let mut map = BTreeMap::new();
            let mut ids = Vec::new();
            for i in 0..*count {
                let id = format!("synth_{i:03}");
                let mut s = synthetic_sample(&syn, seed.wrapping_add(i as u64), &id)?;
                s.tag = cfg.dataset;
                ids.push((id.clone(), None));
                map.insert(id, s);
            }
            (ids, map)
        }
    };
    let refs: Vec<(&str, _)> = ids.iter().map(|(id, h)| (id.as_str(), *h)).collect();
    let plan = make_splits(cfg.dataset, &refs, &cfg.split)?;
    let mut take = |list: &[String]| -> Result<Vec<SegmentationSample>> {
        list.iter()
            .map(|id| preprocess(cfg, samples.remove(id).expect("split ids come from the samples")))
            .collect()
    };
    let train = take(&plan.train)?;
    let validation = take(&plan.validation)?;
    let test = take(&plan.test)?;
    Ok(PreparedData {
        plan,
        train,
        validation,
        test,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionSet {
    Validation,
    /// No validation ids: the eval-mode loss on the training set decides.
    Train,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's batches, weighted by batch size.
    pub train_loss: f64,
    /// Eval-mode loss on the selection set after the epoch.
    pub selection_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest selection loss; earliest on ties.
    pub best_epoch: usize,
    pub selection: SelectionSet,
    /// Background/foreground ratio of the training annotations.
    pub optimum: Option<f64>,
    /// Pooled metrics of the best model per split name.
    pub final_metrics: BTreeMap<String, MetricsReport>,
}

impl RunRecord {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    /// `epoch,train_loss,selection_loss,seconds` rows.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,selection_loss,seconds\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{:.3}\n", e.epoch, e.train_loss, e.selection_loss, e.seconds));
        }
        s
    }
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub best: FsNet<f32>,
    pub last: FsNet<f32>,
}

fn batch_tensors(samples: &[&SegmentationSample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let xs: Vec<Tensor<f32>> = samples.iter().map(|s| s.image.to_tensor()).collect();
    let ys: Vec<Tensor<f32>> = samples
        .iter()
        .map(|s| s.mask.map(|&b| if b { 1.0f32 } else { 0.0 }).to_tensor())
        .collect();
    let squeeze = |t: Tensor<f32>| {
        let s = t.shape().to_vec();
        t.reshape(vec![s[0], 1, s[3], s[4]])
    };
    Ok((squeeze(Tensor::stack(&xs)?)?, squeeze(Tensor::stack(&ys)?)?))
}

/// Mean eval-mode loss per image.
pub fn evaluation_loss(model: &FsNet<f32>, samples: &[SegmentationSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid!("loss over zero samples"));
    }
    let mut total = 0.0;
    for s in samples {
        let (x, y) = batch_tensors(&[s])?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let out = model.forward(&mut tape, xv, ForwardMode::EVAL, false)?;
        let loss = tape.bce_with_logits(out.logits, &y)?;
        total += tape.value(loss).data()[0] as f64;
    }
    Ok(total / samples.len() as f64)
}

/// One optimizer step on a batch; returns the batch loss.
fn train_step(model: &mut FsNet<f32>, adam: &mut Adam, batch: &[&SegmentationSample], seed: u64) -> Result<f64> {
    let (x, y) = batch_tensors(batch)?;
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let out = model.forward(&mut tape, xv, ForwardMode::train(seed), true)?;
    let loss = tape.bce_with_logits(out.logits, &y)?;
    let value = tape.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Err(invalid!("training loss became {value}"));
    }
    tape.backward(loss)?;
    let mut grads = BTreeMap::new();
    for (name, var) in &out.bound {
        if ParameterSet::<f32>::is_buffer(name) {
            continue;
        }
        if let Some(g) = tape.grad(*var) {
            grads.insert(name.clone(), g.to_vec());
        }
    }
    adam.update(&mut model.params, &grads)?;
    model.commit_running_stats(out.running_updates)?;
    Ok(value)
}

const AUGMENT_SALT: u64 = 0x5eed_a06e;
const ORDER_SALT: u64 = 0x5eed_0dde;
const DROPOUT_SALT: u64 = 0x5eed_d209;

/// Trains from scratch on `data.train`, keeping the parameters with the
/// lowest selection loss.
pub fn fit(cfg: &TrainConfig, data: &PreparedData) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let dims = data.train[0].dims();
    if let Some(s) = data.train.iter().find(|s| s.dims() != dims) {
        return Err(Error::Dataset(format!(
            "training images must share one size for batching: {} is {:?}, {} is {dims:?}; set image_size",
            s.id,
            s.dims(),
            data.train[0].id
        )));
    }
    let (selection, selection_set) = if data.validation.is_empty() {
        (SelectionSet::Train, &data.train)
    } else {
        (SelectionSet::Validation, &data.validation)
    };
    let mut model = FsNet::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg.adam)?;
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let epoch_seed = splitmix64(cfg.seed ^ splitmix64(epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed ^ ORDER_SALT));
        let mut weighted = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let augmented: Vec<SegmentationSample> = if cfg.augment.is_enabled() {
                chunk
                    .iter()
                    .map(|&i| augment(&data.train[i], &cfg.augment, splitmix64(epoch_seed ^ AUGMENT_SALT ^ i as u64)))
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let batch: Vec<&SegmentationSample> = if cfg.augment.is_enabled() {
                augmented.iter().collect()
            } else {
                chunk.iter().map(|&i| &data.train[i]).collect()
            };
            step += 1;
            let loss = train_step(&mut model, &mut adam, &batch, splitmix64(cfg.seed ^ DROPOUT_SALT ^ step))?;
            weighted += loss * batch.len() as f64;
        }
        let train_loss = weighted / data.train.len() as f64;
        let selection_loss = evaluation_loss(&model, selection_set)?;
        if selection_loss < best_loss {
            best_loss = selection_loss;
            best_epoch = epoch;
            best = model.clone();
        }
        let seconds = started.elapsed().as_secs_f64();
        log::info!("epoch {epoch}/{}: train {train_loss:.5} select {selection_loss:.5} ({seconds:.1}s)", cfg.epochs);
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            selection_loss,
            seconds,
        });
    }
    if best_epoch == 0 {
        return Err(invalid!("selection loss was never finite"));
    }
    let optimum = optimum_from_samples(&data.training_pool()).ok();
    let opts = match (cfg.model.enable_adaptive_threshold, optimum) {
        (true, Some(o)) => EvalOptions::adaptive(o),
        _ => EvalOptions::default(),
    };
    let mut final_metrics = BTreeMap::new();
    for (name, set) in [("train", &data.train), ("validation", &data.validation), ("test", &data.test)] {
        if !set.is_empty() {
            let eval = evaluate_samples(&best, set, &opts)?;
            final_metrics.insert(name.to_string(), eval.aggregate(Aggregation::Pooled)?);
        }
    }
    Ok(TrainOutcome {
        record: RunRecord {
            epochs,
            best_epoch,
            selection,
            optimum,
            final_metrics,
        },
        best,
        last: model,
    })
}

/// Checkpoint metadata describing a finished run.
pub fn run_metadata(cfg: &TrainConfig, record: &RunRecord) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let settings = InferenceSettings {
        optimum: record.optimum,
        ..InferenceSettings::from_train_config(cfg)
    };
    settings.to_metadata(&mut m);
    m.insert("dataset".into(), cfg.dataset.to_string());
    m.insert("seed".into(), cfg.seed.to_string());
    m.insert("epoch".into(), record.best_epoch.to_string());
    m.insert("selection_loss".into(), record.best().selection_loss.to_string());
    m.insert(
        "selection".into(),
        match record.selection {
            SelectionSet::Validation => "validation".into(),
            SelectionSet::Train => "train".into(),
        },
    );
    m
}

pub const CHECKPOINT_FILE: &str = "best.fsck";

/// Writes `best.fsck`, `trace.csv`, `metrics.csv` and `train.cfg` into `dir`.
pub fn write_run(dir: &Path, cfg: &TrainConfig, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(&outcome.best, &run_metadata(cfg, &outcome.record), dir.join(CHECKPOINT_FILE))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("trace.csv", outcome.record.trace_csv())?;
    let mut metrics = format!("split,{}\n", crate::metrics::CSV_HEADER);
    for (split, r) in &outcome.record.final_metrics {
        metrics.push_str(&format!("{split},{}\n", r.csv_row()));
    }
    write("metrics.csv", metrics)?;
    write("train.cfg", cfg.to_text())
}

/// Prepares data, trains, and writes outputs when `output_dir` is set.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let outcome = fit(cfg, &data)?;
    if let Some(dir) = &cfg.output_dir {
        write_run(dir, cfg, &outcome)?;
    }
    Ok(outcome)
}
