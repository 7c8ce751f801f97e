//! Open-set metrics, dataset splits and the end-to-end experiment.

mod metrics;

pub use metrics::{accuracy_by_snr, accuracy_where, auroc, confusion_matrix, openness, roc_points};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{create_dir, write_json, DatasetHandle, ModelSpec};
use crate::meta::{train, write_log_csv, FeatureBank, LogEntry, ReprConfig, TrainConfig};
use crate::net::EncoderConfig;
use crate::openset::{OpenSetModel, DEFAULT_GAMMA};
use crate::rng::rng_for;
use crate::signal::ModulationScheme;

pub const REPORT_FILE: &str = "report.json";
pub const SNR_CSV: &str = "accuracy_by_snr.csv";
pub const ROC_CSV: &str = "roc.csv";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const UNKNOWN_NAME: &str = "unknown";

const SPLIT_STREAM: u64 = 1;
const ENROLL_STREAM: u64 = 2;

/// Names equal after alias resolution, or byte-equal when unparseable.
pub fn same_class(a: &str, b: &str) -> bool {
    a == b
        || match (ModulationScheme::parse(a), ModulationScheme::parse(b)) {
            (Ok(x), Ok(y)) => x == y,
            _ => false,
        }
}

/// Known/unknown class split. `n_tr`/`n_te` may be left at 0 in a file
/// and are filled from the class lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub known_classes: Vec<String>,
    pub unknown_classes: Vec<String>,
    #[serde(default)]
    pub n_tr: usize,
    #[serde(default)]
    pub n_te: usize,
}

impl SplitConfig {
    pub fn new(known: &[&str], unknown: &[&str]) -> Result<Self> {
        Self {
            known_classes: known.iter().map(|s| s.to_string()).collect(),
            unknown_classes: unknown.iter().map(|s| s.to_string()).collect(),
            n_tr: 0,
            n_te: 0,
        }
        .normalized()
    }

    /// RadioML 2016.10A style split (6 known, 5 unknown).
    pub fn table_iii() -> Self {
        Self::new(
            &["AM-DSB", "QAM64", "CPFSK", "GFSK", "8PSK", "PAM4"],
            &["AM-SSB", "BPSK", "QAM16", "QPSK", "WBFM"],
        )
        .expect("preset split is valid")
    }

    /// HisarMod 2019.1 style split (13 known, 13 unknown).
    pub fn table_iv() -> Self {
        Self::new(
            &[
                "64PSK", "AM-DSB", "FM", "16PSK", "BPSK", "8FSK", "2FSK", "4FSK", "QPSK", "128QAM",
                "4PAM", "8PAM", "64QAM",
            ],
            &[
                "8PSK",
                "32PSK",
                "4QAM",
                "8QAM",
                "16QAM",
                "32QAM",
                "256QAM",
                "16FSK",
                "16PAM",
                "AM-DSB-SC",
                "AM-USB",
                "AM-LSB",
                "PM",
            ],
        )
        .expect("preset split is valid")
    }

    /// Check disjointness and fill or verify the class counts.
    pub fn normalized(mut self) -> Result<Self> {
        if self.known_classes.is_empty() {
            return Err(Error::InvalidCounts("split has no known classes".into()));
        }
        let all: Vec<&String> = self
            .known_classes
            .iter()
            .chain(&self.unknown_classes)
            .collect();
        for (i, a) in all.iter().enumerate() {
            if let Some(b) = all[i + 1..].iter().find(|b| same_class(a, b)) {
                return Err(Error::InvalidConfig(format!(
                    "class {a} listed twice in split (as {b})"
                )));
            }
        }
        let n_tr = self.known_classes.len();
        let n_te = n_tr + self.unknown_classes.len();
        if (self.n_tr != 0 && self.n_tr != n_tr) || (self.n_te != 0 && self.n_te != n_te) {
            return Err(Error::InvalidCounts(format!(
                "split declares n_tr={} n_te={} but lists {n_tr} known and {n_te} total",
                self.n_tr, self.n_te
            )));
        }
        self.n_tr = n_tr;
        self.n_te = n_te;
        Ok(self)
    }

    pub fn openness(&self) -> Result<f64> {
        openness(self.n_tr, self.n_te)
    }

    fn is_unknown(&self, name: &str) -> bool {
        self.unknown_classes.iter().any(|u| same_class(u, name))
    }
}

/// Detection score used for AUROC.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// The unknown-class probability p₀.
    #[default]
    P0,
    /// Negated maximum known-class probability.
    NegMaxKnown,
}

impl ScoreKind {
    pub fn score(self, p: &[f64]) -> f64 {
        match self {
            ScoreKind::P0 => p[0],
            ScoreKind::NegMaxKnown => -p[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Support examples per known class at enrollment.
    pub shots: usize,
    /// Unknown-pool size for c₀; 0 runs threshold-only.
    pub unknown_pool: usize,
    pub gamma: f64,
    /// Share of every class held out from training.
    pub test_fraction: f64,
    pub seed: u64,
    pub score: ScoreKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            shots: 10,
            unknown_pool: 10,
            gamma: DEFAULT_GAMMA,
            test_fraction: 0.2,
            seed: 0,
            score: ScoreKind::P0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::InvalidConfig("shots must be positive".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "test_fraction must be in (0, 1)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub openness: f64,
    pub n_tr: usize,
    pub n_te: usize,
    /// Confusion labels: `unknown` first, then the enrolled classes.
    pub class_names: Vec<String>,
    pub gamma: f64,
    pub score: ScoreKind,
    pub test_count: usize,
    /// All samples; unknowns count as correct when rejected.
    pub overall_accuracy: f64,
    pub known_accuracy: Option<f64>,
    pub unknown_accuracy: Option<f64>,
    /// `None` when the test set lacks knowns or unknowns.
    pub auroc: Option<f64>,
    pub accuracy_by_snr: BTreeMap<i16, f64>,
    /// Rows are truths, columns predictions.
    pub confusion: Vec<Vec<u64>>,
}

/// A scored test set: the report plus everything behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub indices: Vec<usize>,
    pub truths: Vec<usize>,
    pub predictions: Vec<usize>,
    pub snrs: Vec<i16>,
    pub scores: Vec<Vec<f64>>,
    pub roc: Vec<(f64, f64)>,
}

/// Score `indices` of `bank` with `model`. Records whose class is neither
/// enrolled nor an unknown class of `split` are skipped.
pub fn evaluate(
    model: &OpenSetModel,
    bank: &FeatureBank,
    dataset_classes: &[String],
    split: &SplitConfig,
    indices: &[usize],
    score: ScoreKind,
) -> Result<Evaluation> {
    let split = split.clone().normalized()?;
    for k in &split.known_classes {
        if !model.class_names.iter().any(|c| same_class(c, k)) {
            return Err(Error::InvalidConfig(format!(
                "known class {k} is not enrolled in the model"
            )));
        }
    }
    if model.class_names.len() != split.n_tr {
        return Err(Error::InvalidCounts(format!(
            "model enrolls {} classes, split lists {} known",
            model.class_names.len(),
            split.n_tr
        )));
    }
    // dataset label -> truth (0 = unknown), None = outside the split
    let truth_of: Vec<Option<usize>> = dataset_classes
        .iter()
        .map(
            |name| match model.class_names.iter().position(|c| same_class(c, name)) {
                Some(j) => Some(j + 1),
                None => split.is_unknown(name).then_some(0),
            },
        )
        .collect();
    let mut kept = Vec::with_capacity(indices.len());
    let mut truths = Vec::with_capacity(indices.len());
    for &i in indices {
        let label = bank.label(i);
        let t = *truth_of.get(label).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "record {i} has label {label} outside the class table"
            ))
        })?;
        if let Some(t) = t {
            kept.push(i);
            truths.push(t);
        }
    }
    let (predictions, scores) = model.classify_batch(bank, &kept)?;
    let snrs: Vec<i16> = kept.iter().map(|&i| bank.snr_db(i)).collect();
    let detect: Vec<f64> = scores.iter().map(|p| score.score(p)).collect();
    let is_unknown: Vec<bool> = truths.iter().map(|&t| t == 0).collect();
    let (auroc_value, roc) = match auroc(&detect, &is_unknown) {
        Ok(a) => (Some(a), roc_points(&detect, &is_unknown)?),
        Err(Error::DegenerateLabels(_)) => (None, Vec::new()),
        Err(e) => return Err(e),
    };
    let size = model.num_classes() + 1;
    let mut class_names = vec![UNKNOWN_NAME.to_string()];
    class_names.extend(model.class_names.iter().cloned());
    let report = EvalReport {
        openness: split.openness()?,
        n_tr: split.n_tr,
        n_te: split.n_te,
        class_names,
        gamma: model.gamma,
        score,
        test_count: kept.len(),
        overall_accuracy: accuracy_where(&predictions, &truths, |_| true).unwrap_or(0.0),
        known_accuracy: accuracy_where(&predictions, &truths, |t| t != 0),
        unknown_accuracy: accuracy_where(&predictions, &truths, |t| t == 0),
        auroc: auroc_value,
        accuracy_by_snr: accuracy_by_snr(&predictions, &truths, &snrs)?,
        confusion: confusion_matrix(&predictions, &truths, size)?,
    };
    Ok(Evaluation {
        report,
        indices: kept,
        truths,
        predictions,
        snrs,
        scores,
        roc,
    })
}

fn csv_name(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl Evaluation {
    /// Write report.json and the CSV curves, confusion matrix and
    /// per-record predictions into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        write_json(&dir.join(REPORT_FILE), &self.report)?;

        let mut snr = String::from("snr_db,accuracy\n");
        for (s, a) in &self.report.accuracy_by_snr {
            writeln!(snr, "{s},{a}").unwrap();
        }
        write_text(&dir.join(SNR_CSV), &snr)?;

        let mut roc = String::from("fpr,tpr\n");
        for (f, t) in &self.roc {
            writeln!(roc, "{f},{t}").unwrap();
        }
        write_text(&dir.join(ROC_CSV), &roc)?;

        let names: Vec<String> = self
            .report
            .class_names
            .iter()
            .map(|n| csv_name(n))
            .collect();
        let mut conf = format!("truth\\predicted,{}\n", names.join(","));
        for (name, row) in names.iter().zip(&self.report.confusion) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(conf, "{name},{}", cells.join(",")).unwrap();
        }
        write_text(&dir.join(CONFUSION_CSV), &conf)?;

        write_text(
            &dir.join(PREDICTIONS_CSV),
            &predictions_csv(&self.report.class_names, self),
        )
    }
}

fn predictions_csv(names: &[String], e: &Evaluation) -> String {
    let mut out = String::from("index,snr_db,truth,predicted");
    for n in names {
        write!(out, ",p_{}", csv_name(n)).unwrap();
    }
    out.push('\n');
    for k in 0..e.indices.len() {
        write!(
            out,
            "{},{},{},{}",
            e.indices[k],
            e.snrs[k],
            csv_name(&names[e.truths[k]]),
            csv_name(&names[e.predictions[k]])
        )
        .unwrap();
        for p in &e.scores[k] {
            write!(out, ",{p}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Everything an experiment needs besides the data and the split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub encoder: EncoderConfig,
    pub repr: ReprConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

pub struct Experiment {
    pub evaluation: Evaluation,
    pub model: OpenSetModel,
    pub log: Vec<LogEntry>,
    pub epoch_losses: Vec<f64>,
}

impl Experiment {
    /// Write `bundle/`, `train_log.csv` and the evaluation artifacts.
    pub fn save(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        self.model.save(&dir.join("bundle"))?;
        let log_path = dir.join("train_log.csv");
        let mut buf = Vec::new();
        write_log_csv(&self.log, &mut buf).map_err(|e| Error::io(&log_path, e))?;
        std::fs::write(&log_path, buf).map_err(|e| Error::io(&log_path, e))?;
        self.evaluation.write_artifacts(dir)
    }
}

/// Train/test partition of one experiment, in dataset record indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    /// Known classes (dataset ids), in split order.
    pub known_ids: Vec<usize>,
    pub train: Vec<usize>,
    /// Enrollment support per known class.
    pub support: Vec<Vec<usize>>,
    pub unknown_pool: Vec<usize>,
    pub test: Vec<usize>,
}

/// Hold out `test_fraction` of every split class, train on the rest of
/// the known classes, draw enrollment shots and the unknown pool from the
/// held-out part and test on what remains.
pub fn partition(ds: &DatasetHandle, split: &SplitConfig, cfg: &EvalConfig) -> Result<Partition> {
    cfg.validate()?;
    let id = |name: &String| {
        ds.class_id(name)
            .ok_or_else(|| Error::InvalidConfig(format!("class {name} is not in the dataset")))
    };
    let known_ids = split
        .known_classes
        .iter()
        .map(id)
        .collect::<Result<Vec<_>>>()?;
    let unknown_ids = split
        .unknown_classes
        .iter()
        .map(id)
        .collect::<Result<Vec<_>>>()?;
    let by_class = ds.indices_by_class();
    let mut rng = rng_for(cfg.seed, &[SPLIT_STREAM]);
    let mut held = |c: usize| -> (Vec<usize>, Vec<usize>) {
        let mut recs = by_class[c].clone();
        recs.shuffle(&mut rng);
        let n_test = (recs.len() as f64 * cfg.test_fraction).round() as usize;
        let train = recs.split_off(n_test);
        (train, recs)
    };

    let mut out = Partition {
        known_ids: known_ids.clone(),
        train: Vec::new(),
        support: Vec::new(),
        unknown_pool: Vec::new(),
        test: Vec::new(),
    };
    for &c in &known_ids {
        let (train, test) = held(c);
        if test.len() <= cfg.shots {
            return Err(Error::InsufficientData(format!(
                "class {} has {} held-out records, need more than {} shots",
                ds.meta().classes[c],
                test.len(),
                cfg.shots
            )));
        }
        out.train.extend(train);
        out.support.push(test[..cfg.shots].to_vec());
        out.test.extend_from_slice(&test[cfg.shots..]);
    }
    let mut unknown_test = Vec::new();
    for &c in &unknown_ids {
        unknown_test.extend(held(c).1);
    }
    if cfg.unknown_pool > 0 {
        if unknown_test.len() <= cfg.unknown_pool {
            return Err(Error::InsufficientData(format!(
                "{} held-out unknown records, need more than a pool of {}",
                unknown_test.len(),
                cfg.unknown_pool
            )));
        }
        let mut erng = rng_for(cfg.seed, &[ENROLL_STREAM]);
        let mut picked = index::sample(&mut erng, unknown_test.len(), cfg.unknown_pool).into_vec();
        picked.sort_unstable();
        out.unknown_pool = picked.iter().map(|&k| unknown_test[k]).collect();
        let mut rest = Vec::with_capacity(unknown_test.len() - picked.len());
        let mut next = picked.iter().peekable();
        for (k, &r) in unknown_test.iter().enumerate() {
            if next.peek() == Some(&&k) {
                next.next();
            } else {
                rest.push(r);
            }
        }
        unknown_test = rest;
    }
    out.test.extend(unknown_test);
    out.train.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Train on the known classes, enroll from held-out data and evaluate on
/// the remaining known and unknown records.
pub fn run_experiment(
    ds: &DatasetHandle,
    split: &SplitConfig,
    cfg: &ExperimentConfig,
) -> Result<Experiment> {
    let split = split.clone().normalized()?;
    let part = partition(ds, &split, &cfg.eval)?;
    let bank = FeatureBank::from_dataset(ds, &cfg.repr)?;
    let outcome = train(&bank, &part.train, &cfg.encoder, &cfg.train, None)?;
    let names: Vec<String> = part
        .known_ids
        .iter()
        .map(|&c| ds.meta().classes[c].clone())
        .collect();
    let spec = ModelSpec::new(cfg.encoder.clone(), cfg.repr.clone(), ds.signal_len());
    let pool = (!part.unknown_pool.is_empty()).then_some(part.unknown_pool.as_slice());
    let model = OpenSetModel::enroll(
        spec,
        outcome.encoder,
        &bank,
        names,
        &part.support,
        pool,
        cfg.eval.gamma,
    )?;
    let evaluation = evaluate(
        &model,
        &bank,
        &ds.meta().classes,
        &split,
        &part.test,
        cfg.eval.score,
    )?;
    Ok(Experiment {
        evaluation,
        model,
        log: outcome.log,
        epoch_losses: outcome.epoch_losses,
    })
}
