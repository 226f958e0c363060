//! Ablation and cross-dataset drivers.

use std::fmt::Write as _;

use super::config::{DataSource, TrainConfig};
use super::evaluate::{evaluate_samples, optimum_from_samples, EvalOptions};
use super::trainer::{fit, prepare_data, PreparedData, TrainOutcome};
use crate::data::DatasetTag;
use crate::error::{invalid, Result};
use crate::metrics::{Aggregation, Evaluation, MetricsReport};
use crate::model::{count_params, Stage};

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub stage: Stage,
    pub params: usize,
    pub best_epoch: usize,
    pub report: MetricsReport,
}

/// Samples the ablation is scored on: test, else validation, else train.
fn scoring_set(data: &PreparedData) -> (&'static str, &[crate::data::SegmentationSample]) {
    if !data.test.is_empty() {
        ("test", &data.test)
    } else if !data.validation.is_empty() {
        ("validation", &data.validation)
    } else {
        ("train", &data.train)
    }
}

/// Trains each requested stage on the same data and seed. The adaptive
/// threshold stage has no weights of its own; it reuses the
/// squeeze-excitation checkpoint and changes only post-processing.
pub fn ablate(cfg: &TrainConfig, stages: &[Stage]) -> Result<Vec<AblationRow>> {
    if stages.is_empty() {
        return Err(invalid!("no ablation stages requested"));
    }
    let data = prepare_data(cfg)?;
    let (split, samples) = scoring_set(&data);
    log::info!("ablation scored on the {split} split ({} images)", samples.len());
    let optimum = optimum_from_samples(&data.training_pool())?;
    let mut rows = Vec::new();
    let mut se_run: Option<(TrainOutcome, usize)> = None;
    for &stage in stages {
        let trained = if stage == Stage::AdaptiveThreshold { Stage::SqueezeExcitation } else { stage };
        let model_cfg = cfg.model.for_stage(trained);
        let reuse = trained == Stage::SqueezeExcitation && se_run.is_some();
        if !reuse {
            let run_cfg = TrainConfig {
                model: model_cfg.clone(),
                ..cfg.clone()
            };
            let outcome = fit(&run_cfg, &data)?;
            if trained == Stage::SqueezeExcitation {
                se_run = Some((outcome, count_params(&model_cfg)));
            } else {
                let eval = evaluate_samples(&outcome.best, samples, &EvalOptions::default())?;
                rows.push(AblationRow {
                    stage,
                    params: count_params(&model_cfg),
                    best_epoch: outcome.record.best_epoch,
                    report: eval.aggregate(Aggregation::Pooled)?,
                });
                continue;
            }
        }
        let (outcome, params) = se_run.as_ref().expect("trained above");
        let opts = if stage == Stage::AdaptiveThreshold {
            EvalOptions::adaptive(optimum)
        } else {
            EvalOptions::default()
        };
        let eval = evaluate_samples(&outcome.best, samples, &opts)?;
        rows.push(AblationRow {
            stage,
            params: *params,
            best_epoch: outcome.record.best_epoch,
            report: eval.aggregate(Aggregation::Pooled)?,
        });
    }
    Ok(rows)
}

pub const ABLATION_HEADER: &str = "stage,params,sen,spe,f1,acc,auc,iou";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let m = &r.report;
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.stage, r.params, m.sensitivity, m.specificity, m.f1, m.accuracy, m.auc, m.iou
        );
    }
    s
}

#[derive(Clone, Debug)]
pub struct CrossReport {
    pub train_tag: DatasetTag,
    pub test_tag: DatasetTag,
    /// Ratio target taken from the training dataset's annotations.
    pub optimum: f64,
    pub evaluation: Evaluation,
    pub report: MetricsReport,
}

/// Trains on every training id of `cfg`'s dataset (validation included) and
/// evaluates on the test split of `test_tag` read from `test_source`.
pub fn cross_train(cfg: &TrainConfig, test_tag: DatasetTag, test_source: DataSource) -> Result<CrossReport> {
    let mut train_cfg = cfg.clone();
    train_cfg.split.validation_fraction = 0.0;
    let train_data = prepare_data(&train_cfg)?;
    let outcome = fit(&train_cfg, &train_data)?;
    cross_evaluate(&train_cfg, &outcome, &train_data, test_tag, test_source)
}

/// Scores an already trained model on another dataset's test split.
pub fn cross_evaluate(
    cfg: &TrainConfig,
    outcome: &TrainOutcome,
    train_data: &PreparedData,
    test_tag: DatasetTag,
    test_source: DataSource,
) -> Result<CrossReport> {
    let optimum = optimum_from_samples(&train_data.training_pool())?;
    let test_cfg = TrainConfig {
        dataset: test_tag,
        source: test_source,
        ..cfg.clone()
    };
    let test_data = prepare_data(&test_cfg)?;
    if test_data.test.is_empty() {
        return Err(invalid!("{test_tag} has no test split to evaluate"));
    }
    let opts = if cfg.model.enable_adaptive_threshold {
        EvalOptions::adaptive(optimum)
    } else {
        EvalOptions::default()
    };
    let evaluation = evaluate_samples(&outcome.best, &test_data.test, &opts)?;
    let report = evaluation.aggregate(Aggregation::Pooled)?;
    Ok(CrossReport {
        train_tag: cfg.dataset,
        test_tag,
        optimum,
        evaluation,
        report,
    })
}
