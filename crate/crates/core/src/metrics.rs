//! Patient-level aggregation of image-level probabilities, ROC analysis and
//! accuracy.
//!
//! Two aggregation statistics are computed per patient:
//!
//! - the *ratio* score, the fraction of the patient's view sets whose
//!   probability is strictly above the image threshold (default 0.5);
//! - the *max* score, the largest probability among the view sets.
//!
//! Both patient classifiers use strict inequalities: a ratio score of exactly
//! 0.4 is not CHIP at a 0.4 ratio threshold.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cv::FoldReport;
use crate::{Error, Result};

pub const DEFAULT_IMAGE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_RATIO_THRESHOLD: f64 = 0.4;
pub const DEFAULT_MAX_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Chip,
    NoChip,
}

impl Decision {
    pub fn from_bool(chip: bool) -> Self {
        if chip {
            Decision::Chip
        } else {
            Decision::NoChip
        }
    }

    pub fn is_chip(self) -> bool {
        self == Decision::Chip
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientScore {
    pub patient_id: String,
    pub label: bool,
    pub image_probs: Vec<f64>,
    pub ratio_score: f64,
    pub max_score: f64,
}

impl PatientScore {
    pub fn new(patient_id: impl Into<String>, label: bool, image_probs: Vec<f64>, image_threshold: f64) -> Result<Self> {
        let patient_id = patient_id.into();
        if image_probs.is_empty() {
            return Err(Error::Data(format!("patient {patient_id:?} has no predictions")));
        }
        let above = image_probs.iter().filter(|&&p| p > image_threshold).count();
        let ratio_score = above as f64 / image_probs.len() as f64;
        let max_score = image_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(PatientScore {
            patient_id,
            label,
            image_probs,
            ratio_score,
            max_score,
        })
    }
}

/// Groups image-level predictions from all reports by patient, ordered by
/// patient id.
pub fn patient_scores(reports: &[FoldReport], image_threshold: f64) -> Result<Vec<PatientScore>> {
    let mut grouped: BTreeMap<&str, (bool, Vec<(usize, f64)>)> = BTreeMap::new();
    for report in reports {
        for p in &report.image_predictions {
            let entry = grouped.entry(&p.patient_id).or_insert((p.label, Vec::new()));
            if entry.0 != p.label {
                return Err(Error::Data(format!(
                    "patient {:?} has conflicting labels across predictions",
                    p.patient_id
                )));
            }
            entry.1.push((p.sample_index, p.probability));
        }
    }
    grouped
        .into_iter()
        .map(|(id, (label, mut preds))| {
            preds.sort_by_key(|&(i, _)| i);
            PatientScore::new(id, label, preds.into_iter().map(|(_, p)| p).collect(), image_threshold)
        })
        .collect()
}

pub fn classify_ratio(score: &PatientScore, ratio_threshold: f64) -> Decision {
    Decision::from_bool(score.ratio_score > ratio_threshold)
}

pub fn classify_max(score: &PatientScore, threshold: f64) -> Decision {
    Decision::from_bool(score.max_score > threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive at this point.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Ordered by threshold descending, from (0, 0) at `+inf` to (1, 1).
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

fn class_counts(scores: &[(f64, bool)]) -> Result<(usize, usize)> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("score {s} is not a number")));
    }
    let pos = scores.iter().filter(|(_, l)| *l).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::AucUndefined(format!(
            "need both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Threshold sweep over the distinct scores. Tied scores enter the curve
/// together, producing one diagonal segment.
pub fn roc_curve(scores: &[(f64, bool)]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold,
        });
    }

    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half, by enumerating every positive/negative pair.
pub fn auc_oracle(scores: &[(f64, bool)]) -> Result<f64> {
    let (pos, neg) = class_counts(scores)?;
    let mut wins = 0.0;
    for &(sp, _) in scores.iter().filter(|(_, l)| *l) {
        for &(sn, _) in scores.iter().filter(|(_, l)| !*l) {
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos * neg) as f64)
}

pub fn accuracy(decisions: &[Decision], labels: &[bool]) -> Result<f64> {
    if decisions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} decisions but {} labels",
            decisions.len(),
            labels.len()
        )));
    }
    if decisions.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let correct = decisions.iter().zip(labels).filter(|(d, &l)| d.is_chip() == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

pub fn ratio_roc(scores: &[PatientScore]) -> Result<RocCurve> {
    roc_curve(&scores.iter().map(|s| (s.ratio_score, s.label)).collect::<Vec<_>>())
}

pub fn max_roc(scores: &[PatientScore]) -> Result<RocCurve> {
    roc_curve(&scores.iter().map(|s| (s.max_score, s.label)).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub image: f64,
    pub ratio: f64,
    pub max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            image: DEFAULT_IMAGE_THRESHOLD,
            ratio: DEFAULT_RATIO_THRESHOLD,
            max: DEFAULT_MAX_THRESHOLD,
        }
    }
}

/// Pooled evaluation of a cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc_ratio: f64,
    pub auc_max: f64,
    /// Ratio-method accuracy at the configured ratio threshold (0.4 by
    /// default).
    #[serde(rename = "accuracy_ratio_at_0.4")]
    pub accuracy_ratio: f64,
    /// Max-method accuracy at the configured max threshold.
    pub accuracy_max: f64,
    /// `None` for folds whose test set holds a single class.
    pub per_fold_auc_ratio: Vec<Option<f64>>,
    pub n_patients: usize,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub scores: Vec<PatientScore>,
    pub ratio_roc: RocCurve,
    pub max_roc: RocCurve,
    pub metrics: Metrics,
}

/// Pools every fold's predictions and computes both aggregation ROCs,
/// accuracies and per-fold ratio AUCs.
pub fn evaluate(reports: &[FoldReport], thresholds: Thresholds) -> Result<Evaluation> {
    let scores = patient_scores(reports, thresholds.image)?;
    let ratio = ratio_roc(&scores)?;
    let max = max_roc(&scores)?;
    let labels: Vec<bool> = scores.iter().map(|s| s.label).collect();
    let ratio_decisions: Vec<Decision> = scores.iter().map(|s| classify_ratio(s, thresholds.ratio)).collect();
    let max_decisions: Vec<Decision> = scores.iter().map(|s| classify_max(s, thresholds.max)).collect();
    let per_fold_auc_ratio = reports
        .iter()
        .map(|r| {
            let fold_scores = patient_scores(std::slice::from_ref(r), thresholds.image)?;
            match ratio_roc(&fold_scores) {
                Ok(c) => Ok(Some(c.auc)),
                Err(Error::AucUndefined(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics = Metrics {
        auc_ratio: ratio.auc,
        auc_max: max.auc,
        accuracy_ratio: accuracy(&ratio_decisions, &labels)?,
        accuracy_max: accuracy(&max_decisions, &labels)?,
        per_fold_auc_ratio,
        n_patients: scores.len(),
    };
    Ok(Evaluation {
        scores,
        ratio_roc: ratio,
        max_roc: max,
        metrics,
    })
}

/// `threshold,fpr,tpr` with one row per point; floats use the shortest
/// representation that parses back to the same value.
pub fn roc_csv(curve: &RocCurve) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &curve.points {
        writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr).expect("write to string");
    }
    out
}

pub fn parse_roc_csv(text: &str) -> Result<Vec<RocPoint>> {
    let mut lines = text.lines();
    if lines.next() != Some("threshold,fpr,tpr") {
        return Err(Error::Data("ROC CSV missing header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<f64> = line
                .split(',')
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("ROC CSV row {line:?}: {e}")))?;
            match f[..] {
                [threshold, fpr, tpr] => Ok(RocPoint { fpr, tpr, threshold }),
                _ => Err(Error::Data(format!("ROC CSV row {line:?} needs 3 fields"))),
            }
        })
        .collect()
}

pub fn write_roc_csv(path: &Path, curve: &RocCurve) -> Result<()> {
    std::fs::write(path, roc_csv(curve)).map_err(|e| Error::io(path, e))
}
