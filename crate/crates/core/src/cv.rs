//! Grouped k-fold cross-validation: every view set of a patient lands in the
//! same fold, each fold is the test set once, and the remaining folds train a
//! freshly initialised model.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{augment, enumerate_samples, AugmentationConfig, PatientRecord, ViewSet};
use crate::model::{ModelConfig, MultiViewModel};
use crate::nn::{Adam, AdamConfig};
use crate::rng::{self, derive_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn test_ids(&self, fold: usize) -> BTreeSet<&str> {
        self.fold_of
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn train_ids(&self, fold: usize) -> BTreeSet<&str> {
        self.fold_of
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.fold_of.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Splits `records` into (train, test) for `fold`, keeping input order.
    pub fn split<'a>(&self, records: &'a [PatientRecord], fold: usize) -> (Vec<&'a PatientRecord>, Vec<&'a PatientRecord>) {
        records
            .iter()
            .partition(|r| self.fold_of.get(&r.patient_id) != Some(&fold))
    }
}

/// Assigns patients to `k` folds: patients are sorted by id, shuffled with
/// `seed`, then dealt round-robin. With `stratified`, positives are dealt
/// first and negatives continue the same rotation, so both fold sizes and
/// per-fold positive counts differ by at most one.
pub fn make_folds(patients: &[PatientRecord], k: usize, seed: u64, stratified: bool) -> Result<FoldAssignment> {
    let labelled: Vec<(&str, bool)> = patients.iter().map(|p| (p.patient_id.as_str(), p.chip_label)).collect();
    assign_folds(&labelled, k, seed, stratified)
}

pub fn assign_folds(patients: &[(&str, bool)], k: usize, seed: u64, stratified: bool) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if k > patients.len() {
        return Err(Error::Config(format!(
            "k = {k} exceeds the number of patients ({})",
            patients.len()
        )));
    }
    let mut sorted = patients.to_vec();
    sorted.sort_unstable_by(|a, b| a.0.cmp(b.0));
    if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Data(format!("duplicate patient id {:?}", w[0].0)));
    }

    let mut rng = rng::stream(seed, 0);
    let order: Vec<&str> = if stratified {
        let (mut pos, mut neg): (Vec<&(&str, bool)>, Vec<_>) = sorted.iter().partition(|p| p.1);
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        pos.iter().chain(&neg).map(|p| p.0).collect()
    } else {
        sorted.shuffle(&mut rng);
        sorted.iter().map(|p| p.0).collect()
    };
    let fold_of = order
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), i % k))
        .collect();
    Ok(FoldAssignment { k, fold_of })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub augmentation: AugmentationConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 8,
            learning_rate: 1e-3,
            augmentation: AugmentationConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MultiViewModel,
    /// Mean per-sample BCE of each epoch.
    pub loss_history: Vec<f64>,
}

/// Trains a fresh model built from `model_config` on every view set of
/// `patients`, with per-epoch augmentation and reshuffling.
pub fn train_fold(patients: &[&PatientRecord], config: &TrainConfig, model_config: &ModelConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if patients.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let n_pos = patients.iter().filter(|p| p.chip_label).count();
    if n_pos == 0 || n_pos == patients.len() {
        log::warn!("training set holds a single class ({n_pos} of {} positive)", patients.len());
    }
    let samples: Vec<ViewSet> = patients
        .iter()
        .map(|p| enumerate_samples(p))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut model = MultiViewModel::build(model_config.clone())?;
    let mut adam = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    })?;
    let mut shuffle_rng = rng::stream(config.seed, 0);
    let mut augment_rng = rng::stream(config.augmentation.seed, 1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let augmented: Vec<ViewSet> = samples
            .iter()
            .map(|s| augment(s, &config.augmentation, &mut augment_rng))
            .collect();
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&ViewSet> = chunk.iter().map(|&i| &augmented[i]).collect();
            model.zero_grad();
            let loss = model.accumulate_batch_gradients(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss {loss} in epoch {}", epoch + 1)));
            }
            adam.step(model.params_mut())?;
            total += loss * batch.len() as f64;
        }
        let mean = total / samples.len() as f64;
        log::debug!("epoch {}/{}: mean loss {mean:.6}", epoch + 1, config.epochs);
        loss_history.push(mean);
    }
    model.zero_grad();
    Ok(TrainOutcome { model, loss_history })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePrediction {
    pub patient_id: String,
    pub sample_index: usize,
    pub probability: f64,
    pub label: bool,
}

/// Scores every view set of every test patient, without augmentation.
/// Fails if any test patient id also appears in `train_ids`.
pub fn evaluate_fold<S: AsRef<str>>(
    model: &MultiViewModel,
    train_ids: &[S],
    test_patients: &[&PatientRecord],
) -> Result<Vec<ImagePrediction>> {
    let train: BTreeSet<&str> = train_ids.iter().map(AsRef::as_ref).collect();
    let leaked: Vec<&str> = test_patients
        .iter()
        .map(|p| p.patient_id.as_str())
        .filter(|id| train.contains(id))
        .collect();
    if !leaked.is_empty() {
        return Err(Error::Leakage(leaked.join(", ")));
    }
    let mut out = Vec::new();
    for p in test_patients {
        for s in enumerate_samples(p)? {
            let probability = model.forward(&s)?;
            if !probability.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite probability for patient {:?}",
                    p.patient_id
                )));
            }
            out.push(ImagePrediction {
                patient_id: s.patient_id,
                sample_index: s.sample_index,
                probability,
                label: s.label,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold_index: usize,
    pub image_predictions: Vec<ImagePrediction>,
    pub training_loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FoldReportJson {
    fold: usize,
    predictions: Vec<PredictionJson>,
    loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionJson {
    patient: String,
    sample: usize,
    prob: f64,
    label: u8,
}

impl FoldReport {
    pub fn to_json(&self) -> String {
        let wire = FoldReportJson {
            fold: self.fold_index,
            predictions: self
                .image_predictions
                .iter()
                .map(|p| PredictionJson {
                    patient: p.patient_id.clone(),
                    sample: p.sample_index,
                    prob: p.probability,
                    label: u8::from(p.label),
                })
                .collect(),
            loss_history: self.training_loss_history.clone(),
        };
        let mut text = serde_json::to_string_pretty(&wire).expect("finite floats serialise");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: FoldReportJson = serde_json::from_str(text).map_err(|e| Error::Data(format!("fold report: {e}")))?;
        let image_predictions = wire
            .predictions
            .into_iter()
            .map(|p| {
                let label = match p.label {
                    0 => false,
                    1 => true,
                    other => return Err(Error::Data(format!("fold report: label {other} is not 0 or 1"))),
                };
                Ok(ImagePrediction {
                    patient_id: p.patient,
                    sample_index: p.sample,
                    probability: p.prob,
                    label,
                })
            })
            .collect::<Result<_>>()?;
        Ok(FoldReport {
            fold_index: wire.fold,
            image_predictions,
            training_loss_history: wire.loss_history,
        })
    }

    pub fn path_in(dir: &Path, fold: usize) -> PathBuf {
        dir.join(format!("fold_{fold}.json"))
    }

    pub fn checkpoint_path_in(dir: &Path, fold: usize) -> PathBuf {
        dir.join(format!("fold_{fold}.chpv"))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = Self::path_in(dir, self.fold_index);
        std::fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Reads every `fold_<i>.json` in `dir`, ordered by fold index.
pub fn read_fold_reports(dir: &Path) -> Result<Vec<FoldReport>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(index) = name
            .to_str()
            .and_then(|n| n.strip_prefix("fold_"))
            .and_then(|n| n.strip_suffix(".json"))
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        let path = entry.path();
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let report = FoldReport::from_json(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        found.push((index, report));
    }
    if found.is_empty() {
        return Err(Error::Data(format!("no fold reports in {}", dir.display())));
    }
    found.sort_by_key(|(i, _)| *i);
    Ok(found.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvOptions {
    pub k: usize,
    /// Seed for the fold assignment.
    pub seed: u64,
    pub stratified: bool,
    /// Number of folds trained concurrently.
    pub jobs: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            k: 5,
            seed: 0,
            stratified: true,
            jobs: 1,
        }
    }
}

/// Seeds for fold `fold`: the model is initialised from `seed + fold`, the
/// training and augmentation streams are derived from their base seeds.
pub fn fold_configs(fold: usize, train: &TrainConfig, model: &ModelConfig) -> (TrainConfig, ModelConfig) {
    let mut t = train.clone();
    t.seed = derive_seed(train.seed, fold as u64);
    t.augmentation.seed = derive_seed(train.augmentation.seed, fold as u64);
    let mut m = model.clone();
    m.seed = model.seed.wrapping_add(fold as u64);
    (t, m)
}

fn run_one_fold(
    records: &[PatientRecord],
    folds: &FoldAssignment,
    fold: usize,
    train_config: &TrainConfig,
    model_config: &ModelConfig,
    out_dir: Option<&Path>,
) -> Result<FoldReport> {
    let (train, test) = folds.split(records, fold);
    let (t, m) = fold_configs(fold, train_config, model_config);
    log::info!("fold {fold}: training on {} patients, testing on {}", train.len(), test.len());
    let outcome = train_fold(&train, &t, &m)?;
    let train_ids: Vec<&str> = train.iter().map(|p| p.patient_id.as_str()).collect();
    let image_predictions = evaluate_fold(&outcome.model, &train_ids, &test)?;
    let report = FoldReport {
        fold_index: fold,
        image_predictions,
        training_loss_history: outcome.loss_history,
    };
    if let Some(dir) = out_dir {
        report.write(dir)?;
        outcome.model.save(&FoldReport::checkpoint_path_in(dir, fold))?;
    }
    Ok(report)
}

/// Runs all `k` train/evaluate cycles, optionally writing each fold's report
/// and checkpoint to `out_dir`. Results are ordered by fold and do not depend
/// on `options.jobs`.
pub fn run_cv(
    records: &[PatientRecord],
    train_config: &TrainConfig,
    model_config: &ModelConfig,
    options: &CvOptions,
    out_dir: Option<&Path>,
) -> Result<Vec<FoldReport>> {
    train_config.validate()?;
    model_config.validate()?;
    let folds = make_folds(records, options.k, options.seed, options.stratified)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let jobs = options.jobs.clamp(1, options.k);
    if jobs == 1 {
        return (0..options.k)
            .map(|f| run_one_fold(records, &folds, f, train_config, model_config, out_dir))
            .collect();
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<FoldReport>>>> = Mutex::new((0..options.k).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let f = next.fetch_add(1, Ordering::Relaxed);
                if f >= options.k {
                    break;
                }
                let r = run_one_fold(records, &folds, f, train_config, model_config, out_dir);
                results.lock().expect("no poisoned workers")[f] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every fold ran"))
        .collect()
}
