//! Classification metrics for attack-window detection, plus the data splits
//! used to obtain them.
//!
//! Class 1 (attack) is the positive class throughout. Precision, recall and F1
//! are reported as 0 when their denominator vanishes, with a flag set on the
//! report, so sweeps over folds that lack one class keep running.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{seed, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn from_predictions(predicted: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
        if predicted.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} labels",
                predicted.len(),
                labels.len()
            )));
        }
        let mut m = ConfusionMatrix::default();
        for (&p, &y) in predicted.iter().zip(labels) {
            match (p == 1, y == 1) {
                (true, true) => m.tp += 1,
                (true, false) => m.fp += 1,
                (false, true) => m.fn_ += 1,
                (false, false) => m.tn += 1,
            }
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn scores(&self) -> Scores {
        let ratio = |num: u64, den: u64| if den == 0 { None } else { Some(num as f64 / den as f64) };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Scores {
            accuracy: ratio(self.tp + self.tn, self.total()).unwrap_or(0.0),
            precision: precision.unwrap_or(0.0),
            recall: recall.unwrap_or(0.0),
            f1: f1.unwrap_or(0.0),
            precision_undefined: precision.is_none(),
            recall_undefined: recall.is_none(),
            f1_undefined: f1.is_none(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

impl Scores {
    pub fn degenerate(&self) -> bool {
        self.precision_undefined || self.recall_undefined || self.f1_undefined
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Lowest score predicted positive at this point; `+inf` for the origin.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub scores: Scores,
    pub threshold: f64,
    pub roc: Option<Roc>,
}

impl EvalReport {
    pub fn auc(&self) -> Option<f64> {
        self.roc.as_ref().map(|r| r.auc)
    }
}

/// 1 where `proba >= threshold`.
pub fn apply_threshold(probas: &[f64], threshold: f64) -> Vec<u8> {
    probas.iter().map(|&p| u8::from(p >= threshold)).collect()
}

/// Confusion matrix and scores at `threshold`, without ROC.
pub fn compute_metrics(probas: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    if probas.is_empty() {
        return Err(Error::Contract("no predictions to score".into()));
    }
    let confusion = ConfusionMatrix::from_predictions(&apply_threshold(probas, threshold), labels)?;
    Ok(EvalReport {
        confusion,
        scores: confusion.scores(),
        threshold,
        roc: None,
    })
}

/// ROC curve over the distinct score values (tied scores move together) and
/// its trapezoidal area.
pub fn roc_auc(probas: &[f64], labels: &[u8]) -> Result<Roc> {
    if probas.len() != labels.len() {
        return Err(Error::Contract("scores and labels differ in length".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Undefined("ROC needs both classes"));
    }
    let mut order: Vec<usize> = (0..probas.len()).collect();
    order.sort_by(|&a, &b| probas[b].total_cmp(&probas[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    // twice the area, in units of one (positive, negative) pair
    let mut area2: u128 = 0;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let score = probas[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && probas[order[i]] == score {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push(RocPoint {
            threshold: score,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    let auc = area2 as f64 / (2.0 * positives as f64 * negatives as f64);
    Ok(Roc { points, auc })
}

/// Metrics at `threshold` plus ROC/AUC when both classes are present.
pub fn evaluate(probas: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    let mut report = compute_metrics(probas, labels, threshold)?;
    report.roc = roc_auc(probas, labels).ok();
    Ok(report)
}

/// Shuffled train/test partition of `0..n` (indices). The first
/// `floor(fraction·n)` shuffled indices train. With `stratified`, each class
/// is shuffled and cut separately.
pub fn split_indices(labels: &[u8], fraction: f64, seed_value: u64, stratified: bool) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Split(format!("train fraction must be in (0, 1), got {fraction}")));
    }
    let n = labels.len();
    let mut rng = seed::rng(seed_value);
    let (train, test) = if stratified {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in [0u8, 1] {
            let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            idx.shuffle(&mut rng);
            let cut = (fraction * idx.len() as f64).floor() as usize;
            train.extend_from_slice(&idx[..cut]);
            test.extend_from_slice(&idx[cut..]);
        }
        (train, test)
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let cut = (fraction * n as f64).floor() as usize;
        let test = idx.split_off(cut);
        (idx, test)
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::Split(format!(
            "{n} rows at fraction {fraction} leave an empty train or test side"
        )));
    }
    Ok((train, test))
}

pub fn split_train_test(data: &Dataset, fraction: f64, seed_value: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(data.labels(), fraction, seed_value, false)?;
    Ok((data.subset(&train), data.subset(&test)))
}

/// `k` disjoint folds covering `0..n`, sizes within one of each other.
pub fn fold_indices(labels: &[u8], k: usize, seed_value: u64, stratified: bool) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    if k < 2 || k > n {
        return Err(Error::Split(format!("cannot cut {n} rows into {k} folds")));
    }
    let mut rng = seed::rng(seed_value);
    let order: Vec<usize> = if stratified {
        let mut order = Vec::with_capacity(n);
        for class in [0u8, 1] {
            let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            idx.shuffle(&mut rng);
            order.extend(idx);
        }
        order
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx
    };
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    if stratified {
        // deal round robin so each fold gets its share of both classes
        for (pos, i) in order.into_iter().enumerate() {
            folds[pos % k].push(i);
        }
    } else {
        let (base, extra) = (n / k, n % k);
        let mut it = order.into_iter();
        for (f, fold) in folds.iter_mut().enumerate() {
            let size = base + usize::from(f < extra);
            fold.extend(it.by_ref().take(size));
        }
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Present only when every fold produced an AUC.
    pub auc: Option<f64>,
    pub degenerate_folds: usize,
}

impl MeanScores {
    pub fn of(reports: &[EvalReport]) -> MeanScores {
        let n = reports.len() as f64;
        let mean = |get: fn(&EvalReport) -> f64| reports.iter().map(get).sum::<f64>() / n;
        let aucs: Option<Vec<f64>> = reports.iter().map(EvalReport::auc).collect();
        MeanScores {
            accuracy: mean(|r| r.scores.accuracy),
            precision: mean(|r| r.scores.precision),
            recall: mean(|r| r.scores.recall),
            f1: mean(|r| r.scores.f1),
            auc: aucs.map(|a| a.iter().sum::<f64>() / n),
            degenerate_folds: reports.iter().filter(|r| r.scores.degenerate()).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldResult {
    pub folds: Vec<EvalReport>,
    pub mean: MeanScores,
}

/// Runs `evaluate(fold, train, test)` once per fold, folds in parallel, and
/// averages the scores (unweighted).
pub fn kfold<F>(data: &Dataset, k: usize, seed_value: u64, stratified: bool, evaluate: F) -> Result<KFoldResult>
where
    F: Fn(usize, &Dataset, &Dataset) -> Result<EvalReport> + Sync,
{
    let folds = fold_indices(data.labels(), k, seed_value, stratified)?;
    let reports = (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            evaluate(f, &data.subset(&train), &data.subset(&folds[f]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = MeanScores::of(&reports);
    Ok(KFoldResult { folds: reports, mean })
}

pub const REPORT_HEADER: [&str; 13] = [
    "name",
    "threshold",
    "tp",
    "fp",
    "fn",
    "tn",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "auc",
    "degenerate",
    "n",
];

/// One summary row per named report.
pub fn write_report_csv<W: Write>(out: W, reports: &[(String, &EvalReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for (name, r) in reports {
        let c = &r.confusion;
        w.write_record([
            name.clone(),
            r.threshold.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
            r.scores.accuracy.to_string(),
            r.scores.precision.to_string(),
            r.scores.recall.to_string(),
            r.scores.f1.to_string(),
            r.auc().map(|a| a.to_string()).unwrap_or_default(),
            r.scores.degenerate().to_string(),
            c.total().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_roc_csv<W: Write>(out: W, roc: &Roc) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "fpr", "tpr"])?;
    for p in &roc.points {
        w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
