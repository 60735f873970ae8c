//! Mesh-grouped crossvalidation, confusion matrices, classification metrics
//! and precision/recall curves.
//!
//! Meshes are shuffled with a seed and dealt round-robin into folds. Every
//! element is predicted exactly once by a model trained on the other folds;
//! the predictions of all folds are pooled and scored as one experiment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{build_dataset, Dataset, FeatureConfig, FeatureError, LabelledMesh};
use crate::mesh::{ElementId, Label};
use crate::models::{apply_threshold, Model, ModelError, TrainConfig};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{folds} folds requested but only {meshes} meshes available")]
    TooFewMeshes { folds: usize, meshes: usize },
    #[error("at least 2 folds are required, got {0}")]
    TooFewFolds(usize),
    #[error("no predictions to score")]
    Empty,
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: ModelError,
    },
}

/// Mesh id to fold index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: usize,
    pub seed: u64,
    pub fold_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold(&self, mesh_id: &str) -> Option<usize> {
        self.fold_of.get(mesh_id).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &f in self.fold_of.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Mesh ids of one fold, sorted.
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.fold_of
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Seeded shuffle of the sorted ids followed by round-robin dealing. The
/// input order does not matter.
pub fn assign_folds<S: AsRef<str>>(mesh_ids: &[S], folds: usize, seed: u64) -> Result<FoldAssignment, EvalError> {
    let mut ids: Vec<&str> = mesh_ids.iter().map(AsRef::as_ref).collect();
    ids.sort_unstable();
    ids.dedup();
    if folds < 1 || folds > ids.len() {
        return Err(EvalError::TooFewMeshes {
            folds,
            meshes: ids.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let fold_of = ids
        .iter()
        .enumerate()
        .map(|(i, id)| ((*id).to_owned(), i % folds))
        .collect();
    Ok(FoldAssignment { folds, seed, fold_of })
}

/// One pooled crossvalidation prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub mesh_id: String,
    pub element_id: ElementId,
    pub probability: f64,
    pub ground_truth: Label,
    pub fold: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossvalConfig {
    pub folds: usize,
    /// Seed of the fold assignment.
    pub seed: u64,
    pub features: FeatureConfig,
    /// Fold `f` trains with seed `train.seed + f`.
    pub train: TrainConfig,
}

impl Default for CrossvalConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 0,
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossvalResult {
    pub assignment: FoldAssignment,
    /// Sorted by mesh id, then element id.
    pub records: Vec<PredictionRecord>,
}

pub fn run_crossval(meshes: &[LabelledMesh], config: &CrossvalConfig) -> Result<CrossvalResult, EvalError> {
    let data = build_dataset(meshes, &config.features)?;
    crossval_dataset(&data, config)
}

/// Crossvalidation over an already featurised dataset; folds run in parallel.
pub fn crossval_dataset(data: &Dataset, config: &CrossvalConfig) -> Result<CrossvalResult, EvalError> {
    if config.folds < 2 {
        return Err(EvalError::TooFewFolds(config.folds));
    }
    let assignment = assign_folds(data.mesh_ids(), config.folds, config.seed)?;
    let row_fold: Vec<usize> = (0..data.len())
        .map(|i| assignment.fold(data.mesh_id(i)).expect("every mesh assigned"))
        .collect();

    let per_fold: Vec<Vec<PredictionRecord>> = (0..config.folds)
        .into_par_iter()
        .map(|fold| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| row_fold[i] == fold);
            let train_data = data.subset(&train);
            let mut train_config = config.train.clone();
            train_config.seed = train_config.seed.wrapping_add(fold as u64);
            let fail = |source| EvalError::Fold { fold, source };
            let model = Model::train(&train_data, &train_config).map_err(fail)?;
            let mut values = Vec::with_capacity(test.len() * data.dim());
            for &i in &test {
                values.extend_from_slice(data.row(i));
            }
            let probs = if test.is_empty() {
                Vec::new()
            } else {
                model.predict_many(&values).map_err(fail)?
            };
            Ok(test
                .iter()
                .zip(probs)
                .map(|(&i, probability)| PredictionRecord {
                    mesh_id: data.mesh_id(i).to_owned(),
                    element_id: data.element(i),
                    probability,
                    ground_truth: data.label(i),
                    fold,
                })
                .collect())
        })
        .collect::<Result<_, EvalError>>()?;

    let mut records: Vec<PredictionRecord> = per_fold.into_iter().flatten().collect();
    records.sort_by(|a, b| (&a.mesh_id, a.element_id).cmp(&(&b.mesh_id, b.element_id)));
    Ok(CrossvalResult { assignment, records })
}

/// Rework is the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn from_predictions(records: &[PredictionRecord], threshold: f64) -> Self {
        Self::from_pairs(records.iter().map(|r| (r.probability, r.ground_truth)), threshold)
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, Label)>, threshold: f64) -> Self {
        let mut cm = Self::default();
        for (p, truth) in pairs {
            match (apply_threshold(p, threshold).is_rework(), truth.is_rework()) {
                (true, true) => cm.tp += 1,
                (false, false) => cm.tn += 1,
                (true, false) => cm.fp += 1,
                (false, true) => cm.fn_ += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// TP, TN, FP, FN as percentages of the total.
    pub fn shares(&self) -> [f64; 4] {
        let total = self.total() as f64;
        [self.tp, self.tn, self.fp, self.fn_].map(|c| 100.0 * c as f64 / total)
    }

    pub fn metrics(&self) -> Result<Metrics, EvalError> {
        Metrics::from_counts(self.tp as f64, self.tn as f64, self.fp as f64, self.fn_ as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    /// False when nothing was predicted rework; precision is then reported as 0.
    pub precision_defined: bool,
    /// False when there is no ground-truth rework; recall is then reported as 0.
    pub recall_defined: bool,
}

impl Metrics {
    /// Accepts counts or shares of any common scale.
    pub fn from_counts(tp: f64, tn: f64, fp: f64, fn_: f64) -> Result<Self, EvalError> {
        let total = tp + tn + fp + fn_;
        if !(total > 0.0) {
            return Err(EvalError::Empty);
        }
        let precision_defined = tp + fp > 0.0;
        let recall_defined = tp + fn_ > 0.0;
        let precision = if precision_defined { tp / (tp + fp) } else { 0.0 };
        let recall = if recall_defined { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Ok(Self {
            precision,
            recall,
            accuracy: (tp + tn) / total,
            f1,
            precision_defined,
            recall_defined,
        })
    }
}

/// Metrics of each fold's records on its own, for comparison with pooling.
pub fn per_fold_metrics(result: &CrossvalResult, threshold: f64) -> Vec<Option<Metrics>> {
    (0..result.assignment.folds)
        .map(|fold| {
            let cm = ConfusionMatrix::from_pairs(
                result
                    .records
                    .iter()
                    .filter(|r| r.fold == fold)
                    .map(|r| (r.probability, r.ground_truth)),
                threshold,
            );
            cm.metrics().ok()
        })
        .collect()
}

/// Unweighted mean of the defined per-fold metrics.
pub fn averaged_metrics(result: &CrossvalResult, threshold: f64) -> Result<Metrics, EvalError> {
    let folds: Vec<Metrics> = per_fold_metrics(result, threshold).into_iter().flatten().collect();
    if folds.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = folds.len() as f64;
    let mean = |f: fn(&Metrics) -> f64| folds.iter().map(f).sum::<f64>() / n;
    Ok(Metrics {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        accuracy: mean(|m| m.accuracy),
        f1: mean(|m| m.f1),
        precision_defined: folds.iter().all(|m| m.precision_defined),
        recall_defined: folds.iter().all(|m| m.recall_defined),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub precision_defined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// `n` evenly spaced thresholds from 0 to 1 inclusive.
pub fn threshold_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub const DEFAULT_GRID_POINTS: usize = 101;

/// One point per distinct threshold, in increasing order.
pub fn pr_curve(records: &[PredictionRecord], thresholds: &[f64]) -> Result<PrCurve, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(EvalError::Threshold(t));
    }
    let mut ts = thresholds.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let points = ts
        .into_iter()
        .map(|threshold| {
            let m = ConfusionMatrix::from_predictions(records, threshold)
                .metrics()
                .expect("records are non-empty");
            PrPoint {
                threshold,
                precision: m.precision,
                recall: m.recall,
                precision_defined: m.precision_defined,
            }
        })
        .collect();
    Ok(PrCurve { points })
}

impl PrCurve {
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "threshold,precision,recall")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.threshold, p.precision, p.recall)?;
        }
        Ok(())
    }

    /// Point with the highest F1; ties go to the lower threshold.
    pub fn best_f1(&self) -> Option<(PrPoint, f64)> {
        let f1 = |p: &PrPoint| {
            if p.precision + p.recall > 0.0 {
                2.0 * p.precision * p.recall / (p.precision + p.recall)
            } else {
                0.0
            }
        };
        self.points.iter().fold(None, |best, p| match best {
            Some((_, b)) if f1(p) <= b => best,
            _ => Some((*p, f1(p))),
        })
    }
}

pub fn write_predictions_csv(records: &[PredictionRecord], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "mesh_id,element_id,probability,ground_truth")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{}",
            r.mesh_id,
            r.element_id,
            r.probability,
            u8::from(r.ground_truth.is_rework())
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    /// TP, TN, FP, FN in percent.
    pub shares: [f64; 4],
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub config: CrossvalConfig,
    pub meshes: usize,
    pub elements: usize,
    pub rework_share: f64,
    pub fold_sizes: Vec<usize>,
    pub rows: Vec<ThresholdRow>,
    pub best_f1: Option<PrPoint>,
}

pub const REPORT_THRESHOLDS: [f64; 3] = [0.25, 0.5, 0.75];

pub fn threshold_rows(records: &[PredictionRecord], thresholds: &[f64]) -> Result<Vec<ThresholdRow>, EvalError> {
    thresholds
        .iter()
        .map(|&threshold| {
            let confusion = ConfusionMatrix::from_predictions(records, threshold);
            Ok(ThresholdRow {
                threshold,
                confusion,
                shares: confusion.shares(),
                metrics: confusion.metrics()?,
            })
        })
        .collect()
}

impl CrossvalReport {
    pub fn new(config: &CrossvalConfig, result: &CrossvalResult, thresholds: &[f64]) -> Result<Self, EvalError> {
        let records = &result.records;
        if records.is_empty() {
            return Err(EvalError::Empty);
        }
        let rework = records.iter().filter(|r| r.ground_truth.is_rework()).count();
        let curve = pr_curve(records, &threshold_grid(DEFAULT_GRID_POINTS))?;
        Ok(Self {
            config: config.clone(),
            meshes: result.assignment.fold_of.len(),
            elements: records.len(),
            rework_share: rework as f64 / records.len() as f64,
            fold_sizes: result.assignment.sizes(),
            rows: threshold_rows(records, thresholds)?,
            best_f1: curve.best_f1().map(|(p, _)| p),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Table with one line per threshold: shares in percent with two decimals,
/// then precision, recall, accuracy and F1.
pub fn render_table(title: &str, rows: &[ThresholdRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>5} {:>7} {:>7} {:>7} {:>7} {:>9} {:>7} {:>7} {:>8}",
        "model", "th", "TP%", "TN%", "FP%", "FN%", "precision", "recall", "acc", "F1"
    );
    for row in rows {
        let [tp, tn, fp, fn_] = row.shares;
        let m = &row.metrics;
        let _ = writeln!(
            out,
            "{:<12} {:>5.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>9.2} {:>7.2} {:>7.2} {:>8.2}",
            title, row.threshold, tp, tn, fp, fn_, m.precision, m.recall, m.accuracy, m.f1
        );
    }
    out
}
