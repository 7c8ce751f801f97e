//! `fsos`: few-shot open-set modulation classification from the shell.

mod config;

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fsos_core::eval::{
    evaluate, partition, run_experiment, ScoreKind, SplitConfig, PREDICTIONS_CSV,
};
use fsos_core::io::{import_csv, load_model, open_dataset, DatasetHandle, ModelSpec};
use fsos_core::meta::{train, write_log_csv, FeatureBank};
use fsos_core::openset::OpenSetModel;
use fsos_core::repr::to_multisequence;
use fsos_core::rng::rng_for;
use fsos_core::signal::generate_dataset;
use fsos_core::{Error, Result};
use rand::seq::index;
use serde_json::json;

use config::{Manifest, RunConfig, MANIFEST_FILE};

#[derive(Parser)]
#[command(
    name = "fsos",
    version,
    about = "Few-shot open-set modulation classification"
)]
struct Cli {
    /// Worker threads for generation and batch classification (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed (falls back to the config file, then FSOS_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides, self.seed)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset from the `dataset` section of the config.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an encoder episodically.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Train only on these classes (comma separated); default: all.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enroll known classes (and optionally an unknown pool) into a bundle.
    Enroll {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        known: Vec<String>,
        #[arg(long)]
        shots: usize,
        /// Size of the unknown pool; omit for threshold-only mode.
        #[arg(long)]
        unknown_pool: Option<usize>,
        /// Classes the unknown pool is drawn from; default: all non-known.
        #[arg(long, value_delimiter = ',')]
        unknown: Vec<String>,
        #[arg(long)]
        gamma: Option<f64>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify every record of a dataset with a bundle.
    Classify {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        /// Output CSV; the manifest goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a bundle against a known/unknown split.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Split JSON file, or `table-iii` / `table-iv`.
        #[arg(long)]
        split: String,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, value_parser = parse_score, default_value = "p0")]
        score: ScoreKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the IQ, AP and PSD views of one record as CSV.
    ReprDump {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        index: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert `label,snr_db,i0,q0,...` CSV lines into a dataset.
    Import {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        signal_len: usize,
        #[arg(long, default_value = "awgn")]
        channel: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, enroll and evaluate in one go.
    Experiment {
        #[arg(long)]
        dataset: PathBuf,
        /// Split JSON file, or `table-iii` / `table-iv`; default: the config's `split`.
        #[arg(long)]
        split: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_score(s: &str) -> std::result::Result<ScoreKind, String> {
    match s {
        "p0" => Ok(ScoreKind::P0),
        "neg-max-known" | "neg_max_known" => Ok(ScoreKind::NegMaxKnown),
        _ => Err(format!("unknown score `{s}` (p0 or neg-max-known)")),
    }
}

fn load_split(spec: &str) -> Result<SplitConfig> {
    match spec.to_ascii_lowercase().as_str() {
        "table-iii" | "table_iii" => Ok(SplitConfig::table_iii()),
        "table-iv" | "table_iv" => Ok(SplitConfig::table_iv()),
        _ => fsos_core::io::read_json::<SplitConfig>(Path::new(spec))?.normalized(),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path_str(path),
        source: e,
    })
}

fn class_ids(ds: &DatasetHandle, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            ds.class_id(n)
                .ok_or_else(|| Error::InvalidConfig(format!("class {n} is not in the dataset")))
        })
        .collect()
}

const ENROLLMENT_FILE: &str = "enrollment.json";

/// Records consumed by enrollment, so evaluation can leave them out.
#[derive(serde::Serialize, serde::Deserialize)]
struct Enrollment {
    dataset_crc32: std::collections::BTreeMap<String, String>,
    support: Vec<Vec<usize>>,
    unknown_pool: Vec<usize>,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    }
    match cli.command {
        Command::Generate { cfg, out } => {
            let rc = cfg.load()?;
            let ds_cfg = rc
                .dataset
                .clone()
                .ok_or_else(|| Error::InvalidConfig("config has no `dataset` section".into()))?;
            Manifest::new("generate", json!({}), &rc).write(&out.join(MANIFEST_FILE))?;
            let ds = generate_dataset(&ds_cfg, rc.master_seed(), &out)?;
            log::info!("wrote {} records to {}", ds.len(), out.display());
        }
        Command::Train {
            dataset,
            classes,
            cfg,
            out,
        } => {
            let rc = cfg.load()?;
            let inputs = json!({"dataset": path_str(&dataset), "classes": classes});
            Manifest::new("train", inputs, &rc).write(&out.join(MANIFEST_FILE))?;
            let ds = open_dataset(&dataset)?;
            let bank = FeatureBank::from_dataset(&ds, &rc.repr)?;
            let pool: Vec<usize> = if classes.is_empty() {
                (0..ds.len()).collect()
            } else {
                let ids = class_ids(&ds, &classes)?;
                (0..ds.len())
                    .filter(|&i| ids.contains(&ds.label(i)))
                    .collect()
            };
            let outcome = train(
                &bank,
                &pool,
                &rc.encoder,
                &rc.train,
                Some(&out.join("checkpoints")),
            )?;
            let spec = ModelSpec::new(rc.encoder.clone(), rc.repr, ds.signal_len());
            fsos_core::io::save_model(&out, &spec, &outcome.encoder)?;
            let mut log = Vec::new();
            write_log_csv(&outcome.log, &mut log).map_err(|e| Error::Io {
                path: path_str(&out.join("train_log.csv")),
                source: e,
            })?;
            write_file(&out.join("train_log.csv"), &log)?;
        }
        Command::Enroll {
            model,
            dataset,
            known,
            shots,
            unknown_pool,
            unknown,
            gamma,
            cfg,
            out,
        } => {
            let rc = cfg.load()?;
            let inputs = json!({
                "model": path_str(&model), "dataset": path_str(&dataset), "known": known,
                "shots": shots, "unknown_pool": unknown_pool, "unknown": unknown, "gamma": gamma,
            });
            Manifest::new("enroll", inputs, &rc).write(&out.join(MANIFEST_FILE))?;
            let (spec, encoder) = load_model(&model)?;
            let ds = open_dataset(&dataset)?;
            let bank = FeatureBank::from_dataset(&ds, &spec.repr)?;
            let known_ids = class_ids(&ds, &known)?;
            let by_class = ds.indices_by_class();
            let mut rng = rng_for(rc.eval.seed, &[7]);
            let mut support = Vec::new();
            for &c in &known_ids {
                let recs = &by_class[c];
                if recs.len() < shots || shots == 0 {
                    return Err(Error::InsufficientData(format!(
                        "class {} has {} records, asked for {shots} shots",
                        ds.meta().classes[c],
                        recs.len()
                    )));
                }
                let mut pick = index::sample(&mut rng, recs.len(), shots).into_vec();
                pick.sort_unstable();
                support.push(pick.into_iter().map(|k| recs[k]).collect::<Vec<_>>());
            }
            let pool_ids = if unknown.is_empty() {
                (0..ds.num_classes())
                    .filter(|c| !known_ids.contains(c))
                    .collect()
            } else {
                class_ids(&ds, &unknown)?
            };
            let pool = match unknown_pool.filter(|&k| k > 0) {
                Some(k) => {
                    let cands: Vec<usize> =
                        pool_ids.iter().flat_map(|&c| by_class[c].clone()).collect();
                    if cands.len() < k {
                        return Err(Error::InsufficientData(format!(
                            "{} unknown records, asked for a pool of {k}",
                            cands.len()
                        )));
                    }
                    let mut pick = index::sample(&mut rng, cands.len(), k).into_vec();
                    pick.sort_unstable();
                    pick.into_iter().map(|i| cands[i]).collect()
                }
                None => Vec::new(),
            };
            let names = known_ids
                .iter()
                .map(|&c| ds.meta().classes[c].clone())
                .collect();
            let m = OpenSetModel::enroll(
                spec,
                encoder,
                &bank,
                names,
                &support,
                (!pool.is_empty()).then_some(pool.as_slice()),
                gamma.unwrap_or(rc.eval.gamma),
            )?;
            m.save(&out)?;
            fsos_core::io::write_json(
                &out.join(ENROLLMENT_FILE),
                &Enrollment {
                    dataset_crc32: ds.meta().crc32.clone(),
                    support,
                    unknown_pool: pool,
                },
            )?;
        }
        Command::Classify {
            bundle,
            dataset,
            gamma,
            out,
        } => {
            let rc = RunConfig::default();
            let inputs =
                json!({"bundle": path_str(&bundle), "dataset": path_str(&dataset), "gamma": gamma});
            Manifest::new("classify", inputs, &rc).write(&out.with_extension("manifest.json"))?;
            let mut m = OpenSetModel::load(&bundle)?;
            if let Some(g) = gamma {
                m = m.with_gamma(g)?;
            }
            let ds = open_dataset(&dataset)?;
            let bank = FeatureBank::from_dataset(&ds, &m.spec.repr)?;
            let idx: Vec<usize> = (0..ds.len()).collect();
            let (preds, scores) = m.classify_batch(&bank, &idx)?;
            let mut names = vec!["unknown".to_string()];
            names.extend(m.class_names.iter().cloned());
            let mut csv = String::from("index,snr_db,label,predicted");
            for n in &names {
                write!(csv, ",p_{n}").unwrap();
            }
            csv.push('\n');
            for (k, &i) in idx.iter().enumerate() {
                write!(
                    csv,
                    "{i},{},{},{}",
                    ds.snr_db(i),
                    ds.meta().classes[ds.label(i)],
                    names[preds[k]]
                )
                .unwrap();
                for p in &scores[k] {
                    write!(csv, ",{p}").unwrap();
                }
                csv.push('\n');
            }
            write_file(&out, csv.as_bytes())?;
        }
        Command::Eval {
            bundle,
            dataset,
            split,
            gamma,
            score,
            out,
        } => {
            let split_cfg = load_split(&split)?;
            let rc = RunConfig {
                split: Some(split_cfg.clone()),
                ..RunConfig::default()
            };
            let inputs = json!({
                "bundle": path_str(&bundle), "dataset": path_str(&dataset), "split": split,
                "gamma": gamma, "score": score,
            });
            Manifest::new("eval", inputs, &rc).write(&out.join(MANIFEST_FILE))?;
            let mut m = OpenSetModel::load(&bundle)?;
            if let Some(g) = gamma {
                m = m.with_gamma(g)?;
            }
            let ds = open_dataset(&dataset)?;
            let bank = FeatureBank::from_dataset(&ds, &m.spec.repr)?;
            let mut skip = std::collections::BTreeSet::new();
            let enrolled = bundle.join(ENROLLMENT_FILE);
            if enrolled.is_file() {
                let e: Enrollment = fsos_core::io::read_json(&enrolled)?;
                if e.dataset_crc32 == ds.meta().crc32 {
                    skip.extend(e.support.iter().flatten().copied());
                    skip.extend(e.unknown_pool.iter().copied());
                }
            }
            let idx: Vec<usize> = (0..ds.len()).filter(|i| !skip.contains(i)).collect();
            let ev = evaluate(&m, &bank, &ds.meta().classes, &split_cfg, &idx, score)?;
            ev.write_artifacts(&out)?;
            log::info!(
                "openness {:.4}, overall accuracy {:.4}, {} test records",
                ev.report.openness,
                ev.report.overall_accuracy,
                ev.report.test_count
            );
        }
        Command::ReprDump {
            dataset,
            index,
            cfg,
            out,
        } => {
            let rc = cfg.load()?;
            let inputs = json!({"dataset": path_str(&dataset), "index": index});
            Manifest::new("repr-dump", inputs, &rc).write(&out.with_extension("manifest.json"))?;
            let ds = open_dataset(&dataset)?;
            if index >= ds.len() {
                return Err(Error::InvalidConfig(format!(
                    "index {index} outside a dataset of {} records",
                    ds.len()
                )));
            }
            let ms = to_multisequence(&ds.signal(index)?, &rc.repr.welch)?;
            let mut csv = String::from("n,i,q,amplitude,phase,psd\n");
            for n in 0..ms.length_n.max(ms.psd_bins) {
                let cell = |row: &[f64]| row.get(n).map(|v| v.to_string()).unwrap_or_default();
                writeln!(
                    csv,
                    "{n},{},{},{},{},{}",
                    cell(&ms.iq[0]),
                    cell(&ms.iq[1]),
                    cell(&ms.ap[0]),
                    cell(&ms.ap[1]),
                    cell(&ms.psd)
                )
                .unwrap();
            }
            write_file(&out, csv.as_bytes())?;
        }
        Command::Import {
            csv,
            signal_len,
            channel,
            out,
        } => {
            let rc = RunConfig::default();
            let inputs =
                json!({"csv": path_str(&csv), "signal_len": signal_len, "channel": channel});
            Manifest::new("import", inputs, &rc).write(&out.join(MANIFEST_FILE))?;
            let f = File::open(&csv).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Error::DatasetNotFound(csv.clone())
                } else {
                    Error::Io {
                        path: path_str(&csv),
                        source: e,
                    }
                }
            })?;
            import_csv(BufReader::new(f), signal_len, &channel, &out)?;
        }
        Command::Experiment {
            dataset,
            split,
            cfg,
            out,
        } => {
            let mut rc = cfg.load()?;
            if let Some(s) = &split {
                rc.split = Some(load_split(s)?);
            }
            let split_cfg = rc
                .split
                .clone()
                .ok_or_else(|| {
                    Error::InvalidConfig("no split given (--split or config `split`)".into())
                })?
                .normalized()?;
            let inputs = json!({"dataset": path_str(&dataset), "split": split});
            Manifest::new("experiment", inputs, &rc).write(&out.join(MANIFEST_FILE))?;
            let ds = open_dataset(&dataset)?;
            let setup = fsos_core::eval::ExperimentConfig {
                encoder: rc.encoder.clone(),
                repr: rc.repr,
                train: rc.train.clone(),
                eval: rc.eval.clone(),
            };
            // fail on a bad split before spending time on training
            partition(&ds, &split_cfg, &setup.eval)?;
            let exp = run_experiment(&ds, &split_cfg, &setup)?;
            exp.save(&out)?;
            log::info!(
                "wrote {} and the report to {}",
                PREDICTIONS_CSV,
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = json!({"code": e.code(), "message": e.to_string()});
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}
