//! Confusion counts, scalar segmentation metrics and exact ROC AUC.

use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::grid::Mask;
use crate::postprocess::ProbabilityMap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Bits set in [`MetricsReport::undefined`] when a denominator was zero and
/// the metric was reported as 0.
pub mod undefined {
    pub const SENSITIVITY: u8 = 1;
    pub const SPECIFICITY: u8 = 2;
    pub const F1: u8 = 4;
    pub const ACCURACY: u8 = 8;
    pub const IOU: u8 = 16;
    pub const AUC: u8 = 32;
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub iou: f64,
    pub threshold: f64,
    pub pixels: u64,
    pub undefined: u8,
}

pub const CSV_HEADER: &str = "sen,spe,f1,acc,auc,iou,threshold,pixels";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.sensitivity,
            self.specificity,
            self.f1,
            self.accuracy,
            self.auc,
            self.iou,
            self.threshold,
            self.pixels
        )
    }

    pub fn is_defined(&self, bit: u8) -> bool {
        self.undefined & bit == 0
    }
}

fn check_dims(pred: &Mask, truth: &Mask, fov: Option<&Mask>) -> Result<()> {
    pred.ensure_same_dims(truth, "prediction vs truth")?;
    if let Some(f) = fov {
        pred.ensure_same_dims(f, "prediction vs field of view")?;
    }
    Ok(())
}

/// Counts over the field of view, or every pixel when absent.
pub fn confusion(pred: &Mask, truth: &Mask, fov: Option<&Mask>) -> Result<ConfusionCounts> {
    check_dims(pred, truth, fov)?;
    let mut c = ConfusionCounts::default();
    for (i, (&p, &t)) in pred.data().iter().zip(truth.data()).enumerate() {
        if fov.is_some_and(|f| !f.data()[i]) {
            continue;
        }
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64, bit: u8, flags: &mut u8) -> f64 {
    if den == 0 {
        *flags |= bit;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Sen, Spe, F1, Acc and IoU from counts. AUC and threshold are left at 0
/// with the AUC flag set.
pub fn scalar_metrics(c: &ConfusionCounts) -> MetricsReport {
    let mut flags = undefined::AUC;
    let report = MetricsReport {
        sensitivity: ratio(c.tp, c.tp + c.fn_, undefined::SENSITIVITY, &mut flags),
        specificity: ratio(c.tn, c.tn + c.fp, undefined::SPECIFICITY, &mut flags),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, undefined::F1, &mut flags),
        accuracy: ratio(c.tp + c.tn, c.total(), undefined::ACCURACY, &mut flags),
        iou: ratio(c.tp, c.tp + c.fp + c.fn_, undefined::IOU, &mut flags),
        auc: 0.0,
        threshold: 0.0,
        pixels: c.total(),
        undefined: 0,
    };
    MetricsReport { undefined: flags, ..report }
}

/// Area under the ROC curve with every distinct score as a threshold.
/// Tied scores form one diagonal step, which makes this equal to the
/// Mann-Whitney statistic with ties counted as one half.
pub fn auc_from_scores(scores: &mut [(f32, bool)]) -> Result<f64> {
    let pos = scores.iter().filter(|s| s.1).count() as u64;
    let neg = scores.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(invalid!("AUC needs both classes, got {pos} positive and {neg} negative"));
    }
    if scores.iter().any(|s| s.0.is_nan()) {
        return Err(invalid!("AUC scores must not be NaN"));
    }
    scores.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    // twice the area in units of one positive x one negative, kept integral
    let (mut tp, mut fp, mut area2) = (0u64, 0u64, 0u128);
    let mut i = 0;
    while i < scores.len() {
        let (tp0, fp0) = (tp, fp);
        let v = scores[i].0;
        while i < scores.len() && scores[i].0 == v {
            if scores[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) as u128 * (tp + tp0) as u128;
    }
    Ok(area2 as f64 / (2.0 * pos as f64 * neg as f64))
}

fn collect_scores(probs: &ProbabilityMap, truth: &Mask, fov: Option<&Mask>, out: &mut Vec<(f32, bool)>) -> Result<()> {
    probs.grid().ensure_same_dims(truth, "probabilities vs truth")?;
    if let Some(f) = fov {
        truth.ensure_same_dims(f, "truth vs field of view")?;
    }
    for (i, (&p, &t)) in probs.values().iter().zip(truth.data()).enumerate() {
        if fov.is_none_or(|f| f.data()[i]) {
            out.push((p, t));
        }
    }
    Ok(())
}

pub fn auc(probs: &ProbabilityMap, truth: &Mask, fov: Option<&Mask>) -> Result<f64> {
    let mut scores = Vec::with_capacity(truth.len());
    collect_scores(probs, truth, fov, &mut scores)?;
    auc_from_scores(&mut scores)
}

/// All metrics for one image. A single-class truth leaves AUC at 0 with its
/// flag set instead of failing.
pub fn evaluate_image(
    probs: &ProbabilityMap,
    pred: &Mask,
    truth: &Mask,
    fov: Option<&Mask>,
    threshold: f64,
) -> Result<(ConfusionCounts, MetricsReport)> {
    let counts = confusion(pred, truth, fov)?;
    if counts.total() == 0 {
        return Err(invalid!("no pixels to evaluate"));
    }
    let mut report = scalar_metrics(&counts);
    report.threshold = threshold;
    if let Ok(a) = auc(probs, truth, fov) {
        report.auc = a;
        report.undefined &= !undefined::AUC;
    }
    Ok((counts, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    /// Sum confusion counts, then compute metrics. AUC over all scored pixels.
    Pooled,
    /// Mean of per-image metrics.
    Averaged,
}

#[derive(Clone, Debug)]
pub struct ImageResult {
    pub id: String,
    pub counts: ConfusionCounts,
    pub report: MetricsReport,
}

/// Per-image results for a test set plus the pixel scores for pooled AUC.
#[derive(Clone, Debug, Default)]
pub struct Evaluation {
    pub images: Vec<ImageResult>,
    scores: Vec<(f32, bool)>,
}

impl Evaluation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        id: impl Into<String>,
        probs: &ProbabilityMap,
        pred: &Mask,
        truth: &Mask,
        fov: Option<&Mask>,
        threshold: f64,
    ) -> Result<&ImageResult> {
        let (counts, report) = evaluate_image(probs, pred, truth, fov, threshold)?;
        collect_scores(probs, truth, fov, &mut self.scores)?;
        self.images.push(ImageResult { id: id.into(), counts, report });
        Ok(self.images.last().expect("just pushed"))
    }

    pub fn aggregate(&self, how: Aggregation) -> Result<MetricsReport> {
        if self.images.is_empty() {
            return Err(Error::InvalidArgument("no images to aggregate".into()));
        }
        let n = self.images.len() as f64;
        let mean_threshold = self.images.iter().map(|r| r.report.threshold).sum::<f64>() / n;
        match how {
            Aggregation::Pooled => {
                let counts = self.images.iter().fold(ConfusionCounts::default(), |a, r| a + r.counts);
                let mut report = scalar_metrics(&counts);
                report.threshold = mean_threshold;
                if let Ok(a) = auc_from_scores(&mut self.scores.clone()) {
                    report.auc = a;
                    report.undefined &= !undefined::AUC;
                }
                Ok(report)
            }
            Aggregation::Averaged => {
                let mean = |f: fn(&MetricsReport) -> f64| self.images.iter().map(|r| f(&r.report)).sum::<f64>() / n;
                Ok(MetricsReport {
                    sensitivity: mean(|r| r.sensitivity),
                    specificity: mean(|r| r.specificity),
                    f1: mean(|r| r.f1),
                    accuracy: mean(|r| r.accuracy),
                    auc: mean(|r| r.auc),
                    iou: mean(|r| r.iou),
                    threshold: mean_threshold,
                    pixels: self.images.iter().map(|r| r.report.pixels).sum(),
                    undefined: self.images.iter().fold(0, |a, r| a | r.report.undefined),
                })
            }
        }
    }

    /// Header, one row per image in insertion order, then pooled and averaged rows.
    /// With `with_ids`, a leading `image` column names each row.
    pub fn write_csv<W: Write>(&self, out: &mut W, with_ids: bool) -> Result<()> {
        let io = |e: std::io::Error| Error::InvalidArgument(format!("writing CSV: {e}"));
        let lead = |id: &str| if with_ids { format!("{id},") } else { String::new() };
        writeln!(out, "{}{CSV_HEADER}", if with_ids { "image," } else { "" }).map_err(io)?;
        for r in &self.images {
            writeln!(out, "{}{}", lead(&r.id), r.report.csv_row()).map_err(io)?;
        }
        writeln!(out, "{}{}", lead("pooled"), self.aggregate(Aggregation::Pooled)?.csv_row()).map_err(io)?;
        writeln!(out, "{}{}", lead("averaged"), self.aggregate(Aggregation::Averaged)?.csv_row()).map_err(io)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn mask(v: &[u8]) -> Mask {
        Grid::new(1, v.len(), v.iter().map(|&b| b != 0).collect()).unwrap()
    }

    fn probs(v: &[f32]) -> ProbabilityMap {
        ProbabilityMap::new(Grid::new(1, v.len(), v.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn perfect_and_inverted() {
        let t = Grid::filled(2, 2, true);
        let c = confusion(&t, &t, None).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 4, ..Default::default() });
        let m = mask(&[1, 0, 1, 0]);
        let inv = m.map(|&b| !b);
        let c = confusion(&inv, &m, None).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        let r = scalar_metrics(&confusion(&m, &m, None).unwrap());
        for v in [r.sensitivity, r.specificity, r.f1, r.accuracy, r.iou] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn sensitivity_formula() {
        let r = scalar_metrics(&ConfusionCounts { tp: 3, fn_: 1, tn: 5, fp: 0 });
        assert_eq!(r.sensitivity, 0.75);
    }

    #[test]
    fn zero_denominators_flag() {
        let r = scalar_metrics(&ConfusionCounts { tn: 4, ..Default::default() });
        assert_eq!(r.sensitivity, 0.0);
        assert!(!r.is_defined(undefined::SENSITIVITY));
        assert!(!r.is_defined(undefined::F1));
        assert!(r.is_defined(undefined::SPECIFICITY));
    }

    #[test]
    fn fov_restricts_counts() {
        let pred = mask(&[1, 1, 0, 0]);
        let truth = mask(&[1, 0, 1, 0]);
        let fov = mask(&[1, 1, 0, 0]);
        let c = confusion(&pred, &truth, Some(&fov)).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, tn: 0, fn_: 0 });
        assert!(confusion(&pred, &mask(&[1]), None).is_err());
    }

    #[test]
    fn auc_extremes() {
        let t = mask(&[1, 1, 0, 0, 0]);
        assert_eq!(auc(&probs(&[0.9, 0.8, 0.1, 0.2, 0.3]), &t, None).unwrap(), 1.0);
        assert_eq!(auc(&probs(&[0.4; 5]), &t, None).unwrap(), 0.5);
        assert_eq!(auc(&probs(&[0.1, 0.2, 0.8, 0.9, 0.7]), &t, None).unwrap(), 0.0);
        assert!(auc(&probs(&[0.4; 5]), &mask(&[1; 5]), None).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut e = Evaluation::new();
        let t = mask(&[1, 0, 1, 0]);
        let p = probs(&[0.9, 0.2, 0.6, 0.4]);
        e.add("a", &p, &t, &t, None, 0.5).unwrap();
        e.add("b", &p, &mask(&[1, 1, 0, 0]), &t, None, 0.5).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 1 + 2 + 2);
    }
}
