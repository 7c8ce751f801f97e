use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{sample_episode, triplet_loss, FeatureBank, PrototypeSet};
use crate::error::{Error, Result};
use crate::net::{Encoder, EncoderConfig};
use crate::rng::{derive_seed, rng_for};
use crate::tensor::{Adam, Graph, Mode};

const INIT_STREAM: u64 = 1;
const EPISODE_STREAM: u64 = 2;
const VALIDATION_STREAM: u64 = 3;
const EMBED_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub n_way: usize,
    pub s_shot: usize,
    pub q_query: usize,
    pub margin: f64,
    pub lr: f64,
    pub seed: u64,
    /// Share of each training class held out for the accuracy probe.
    pub val_fraction: f64,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            episodes_per_epoch: 200,
            n_way: 5,
            s_shot: 10,
            q_query: 5,
            margin: 0.5,
            lr: 0.001,
            seed: 0,
            val_fraction: 0.1,
            bn_momentum: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.epochs,
            self.episodes_per_epoch,
            self.n_way,
            self.s_shot,
            self.q_query,
        ];
        if positive.contains(&0) || !(self.margin > 0.0) || !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(
                "training counts, margin and lr must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidConfig(
                "val_fraction must be in [0, 1), bn_momentum in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    /// 1-based across the whole run.
    pub episode: usize,
    pub loss: f64,
    pub lr: f64,
    /// Filled on the last episode of each epoch when a probe set exists.
    pub val_accuracy: Option<f64>,
}

pub struct TrainOutcome {
    pub encoder: Encoder<f32>,
    pub log: Vec<LogEntry>,
    pub epoch_losses: Vec<f64>,
}

/// Embed records in eval mode, chunked, as f64 rows.
pub fn embed_records(
    encoder: &Encoder<f32>,
    bank: &FeatureBank,
    indices: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let dim = encoder.embedding_dim();
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EMBED_CHUNK) {
        let e = encoder.embed(&bank.batch(chunk), chunk.len())?;
        out.extend(e.chunks(dim).map(|r| r.iter().map(|&v| v as f64).collect()));
    }
    Ok(out)
}

struct Probe {
    /// Per class: records used as probe prototypes.
    support: Vec<Vec<usize>>,
    held_out: Vec<(usize, usize)>,
}

impl Probe {
    fn accuracy(&self, encoder: &Encoder<f32>, bank: &FeatureBank) -> Result<Option<f64>> {
        if self.held_out.is_empty() {
            return Ok(None);
        }
        let mut prototypes = Vec::with_capacity(self.support.len());
        for s in &self.support {
            let e = embed_records(encoder, bank, s)?;
            let refs: Vec<&[f64]> = e.iter().map(Vec::as_slice).collect();
            prototypes.push(super::mean_vector(&refs)?);
        }
        let set = PrototypeSet {
            embedding_dim: encoder.embedding_dim(),
            prototypes,
            unknown: None,
        };
        let idx: Vec<usize> = self.held_out.iter().map(|&(i, _)| i).collect();
        let emb = embed_records(encoder, bank, &idx)?;
        let mut correct = 0;
        for (e, &(_, slot)) in emb.iter().zip(&self.held_out) {
            if set.nearest(e)? == slot {
                correct += 1;
            }
        }
        Ok(Some(correct as f64 / self.held_out.len() as f64))
    }
}

/// Episodic prototype training on the records in `pool`.
///
/// Every class present in `pool` takes part. A `val_fraction` share of
/// each class is held out and scored by nearest prototype at the end of
/// each epoch. With `checkpoints` set, weights are written there after
/// every epoch as `epoch_NNN.bin`.
pub fn train(
    bank: &FeatureBank,
    pool: &[usize],
    encoder_config: &EncoderConfig,
    cfg: &TrainConfig,
    checkpoints: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut classes: Vec<usize> = pool.iter().map(|&i| bank.label(i)).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut by_slot: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
    for &i in pool {
        let slot = classes.binary_search(&bank.label(i)).unwrap();
        by_slot[slot].push(i);
    }

    let mut vrng = rng_for(cfg.seed, &[VALIDATION_STREAM]);
    let mut train_pool = Vec::with_capacity(by_slot.len());
    let mut probe = Probe {
        support: Vec::new(),
        held_out: Vec::new(),
    };
    for (slot, recs) in by_slot.iter().enumerate() {
        let mut recs = recs.clone();
        recs.shuffle(&mut vrng);
        let hold = (recs.len() as f64 * cfg.val_fraction).floor() as usize;
        let (held, rest) = recs.split_at(hold);
        probe.held_out.extend(held.iter().map(|&i| (i, slot)));
        probe
            .support
            .push(rest[..rest.len().min(cfg.s_shot)].to_vec());
        train_pool.push(rest.to_vec());
    }

    let mut encoder = Encoder::<f32>::new(
        encoder_config.clone(),
        derive_seed(cfg.seed, &[INIT_STREAM]),
    )?;
    let mut adam = Adam::new(cfg.lr);
    let mut erng = rng_for(cfg.seed, &[EPISODE_STREAM]);
    if let Some(dir) = checkpoints {
        crate::io::create_dir(dir)?;
    }

    let mut log = Vec::with_capacity(cfg.epochs * cfg.episodes_per_epoch);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for k in 0..cfg.episodes_per_epoch {
            let ep = sample_episode(&train_pool, cfg.n_way, cfg.s_shot, cfg.q_query, &mut erng)?;
            let records: Vec<usize> = ep.support.iter().chain(&ep.query).copied().collect();
            let input = bank.batch(&records);
            let ns = ep.support.len();

            let mut g = Graph::new();
            let emb = encoder.forward(&mut g, &input, records.len(), Mode::Train)?;
            let groups: Vec<Vec<usize>> = (0..ep.n_way)
                .map(|j| (j * ep.s_shot..(j + 1) * ep.s_shot).collect())
                .collect();
            let protos = g.group_mean(emb, &groups)?;
            let qrows: Vec<usize> = (ns..records.len()).collect();
            let queries = g.gather_rows(emb, &qrows)?;
            let loss_var = triplet_loss(&mut g, queries, &ep.query_slots(), protos, cfg.margin)?;
            let loss = g.scalar(loss_var) as f64;
            let episode = epoch * cfg.episodes_per_epoch + k + 1;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    episode,
                    value: loss,
                });
            }
            let store = encoder.params_mut();
            store.zero_grad();
            g.backward(loss_var, store);
            adam.step(store);
            g.apply_bn_updates(store, cfg.bn_momentum);

            total += loss;
            log.push(LogEntry {
                epoch: epoch + 1,
                episode,
                loss,
                lr: cfg.lr,
                val_accuracy: None,
            });
        }
        epoch_losses.push(total / cfg.episodes_per_epoch as f64);
        let acc = probe.accuracy(&encoder, bank)?;
        if let Some(last) = log.last_mut() {
            last.val_accuracy = acc;
        }
        log::info!(
            "epoch {}: mean loss {:.4}, val accuracy {}",
            epoch + 1,
            epoch_losses[epoch],
            acc.map_or("n/a".into(), |a| format!("{a:.3}"))
        );
        if let Some(dir) = checkpoints {
            encoder.save_weights(&dir.join(format!("epoch_{:03}.bin", epoch + 1)))?;
        }
    }
    Ok(TrainOutcome {
        encoder,
        log,
        epoch_losses,
    })
}

/// Training log as CSV: `episode,loss,lr,val_accuracy`.
pub fn write_log_csv<W: Write>(log: &[LogEntry], mut w: W) -> std::io::Result<()> {
    writeln!(w, "episode,loss,lr,val_accuracy")?;
    for e in log {
        let acc = e.val_accuracy.map(|a| a.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", e.episode, e.loss, e.lr, acc)?;
    }
    Ok(())
}
