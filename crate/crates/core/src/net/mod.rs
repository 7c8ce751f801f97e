//! Multi-scale attention encoder.
//!
//! Each selected sequence (IQ, AP, PSD) has its own stem of stacked
//! multi-scale attention blocks. With N = 128 and two blocks a stem's
//! temporal length goes 128 → 64 → 32. Stem outputs are averaged over
//! time, fused into one vector and L2-normalized.

mod block;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use block::{
    attention_block, multi_scale_block, se_attention, BlockParams, ConvBn, MultiScaleBlockConfig,
    SeParams,
};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::{serialize, Graph, Mode, ParamId, ParamStore, Real, Var};

/// Rows of the encoder input: I, Q, amplitude, phase, PSD.
pub const INPUT_ROWS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sequence {
    Iq,
    Ap,
    Psd,
}

impl Sequence {
    /// Rows of the five-row input this sequence reads.
    pub fn rows(self) -> &'static [usize] {
        match self {
            Sequence::Iq => &[0, 1],
            Sequence::Ap => &[2, 3],
            Sequence::Psd => &[4],
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Sequence::Iq => "iq",
            Sequence::Ap => "ap",
            Sequence::Psd => "psd",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fusion {
    /// Concatenate pooled stem vectors, then one linear projection.
    ConcatThenProject,
    /// Project each pooled stem vector, then sum.
    SumAfterProject,
}

/// Block widths; input channels follow from the previous block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockWidths {
    pub down_channels: usize,
    pub reduce_channels: usize,
    pub branch_channels: usize,
    pub se_reduction: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub sequences: Vec<Sequence>,
    pub blocks_per_stem: usize,
    pub block_configs: Vec<BlockWidths>,
    pub embedding_dim: usize,
    pub fusion: Fusion,
    /// With SE disabled every gate is 1 (plain multi-scale network).
    pub se_enabled: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            sequences: vec![Sequence::Iq, Sequence::Ap, Sequence::Psd],
            blocks_per_stem: 2,
            block_configs: vec![
                BlockWidths {
                    down_channels: 32,
                    reduce_channels: 8,
                    branch_channels: 16,
                    se_reduction: 4,
                },
                BlockWidths {
                    down_channels: 64,
                    reduce_channels: 16,
                    branch_channels: 32,
                    se_reduction: 4,
                },
            ],
            embedding_dim: 64,
            fusion: Fusion::ConcatThenProject,
            se_enabled: true,
        }
    }
}

impl EncoderConfig {
    /// A very small network for gradient checks and quick tests.
    pub fn tiny() -> Self {
        let w = BlockWidths {
            down_channels: 4,
            reduce_channels: 2,
            branch_channels: 1,
            se_reduction: 2,
        };
        Self {
            block_configs: vec![w, w],
            embedding_dim: 4,
            ..Self::default()
        }
    }

    fn stem_blocks(&self, seq: Sequence) -> Vec<MultiScaleBlockConfig> {
        let mut cin = seq.rows().len();
        self.block_configs
            .iter()
            .map(|w| {
                let cfg = MultiScaleBlockConfig {
                    in_channels: cin,
                    down_channels: w.down_channels,
                    reduce_channels: w.reduce_channels,
                    branch_channels: w.branch_channels,
                    se_reduction: w.se_reduction,
                };
                cin = cfg.out_channels();
                cfg
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.sequences.is_empty() {
            return bad("encoder needs at least one sequence".into());
        }
        for (i, s) in self.sequences.iter().enumerate() {
            if self.sequences[..i].contains(s) {
                return bad(format!("sequence {s:?} listed twice"));
            }
        }
        if self.blocks_per_stem == 0 || self.block_configs.len() != self.blocks_per_stem {
            return bad(format!(
                "blocks_per_stem {} but {} block configs",
                self.blocks_per_stem,
                self.block_configs.len()
            ));
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        for b in self.stem_blocks(Sequence::Iq) {
            b.validate()?;
        }
        Ok(())
    }

    /// Shortest input length every block accepts (each needs L ≥ 8).
    pub fn min_signal_len(&self) -> usize {
        8 << (self.blocks_per_stem - 1)
    }

    /// Temporal length after each block for input length `n`.
    pub fn length_chain(&self, n: usize) -> Vec<usize> {
        let mut out = vec![n];
        for _ in 0..self.blocks_per_stem {
            let l = *out.last().unwrap();
            out.push(l.div_ceil(2));
        }
        out
    }

    fn stem_out(&self) -> usize {
        self.block_configs
            .last()
            .map_or(0, |b| 4 * b.branch_channels)
    }
}

#[derive(Clone, Debug)]
struct Projection {
    w: ParamId,
    b: ParamId,
}

/// Encoder parameters plus the layer layout that reads them.
#[derive(Clone, Debug)]
pub struct Encoder<T: Real = f32> {
    config: EncoderConfig,
    store: ParamStore<T>,
    stems: Vec<Vec<BlockParams>>,
    heads: Vec<Projection>,
}

impl<T: Real> Encoder<T> {
    /// Fresh Kaiming-uniform weights drawn from `seed`.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, &[0xE1C0]);
        let mut store = ParamStore::new();
        let mut stems = Vec::new();
        for &seq in &config.sequences {
            let blocks = config
                .stem_blocks(seq)
                .into_iter()
                .enumerate()
                .map(|(i, cfg)| {
                    BlockParams::new(
                        &mut store,
                        &format!("{}.block{i}", seq.tag()),
                        cfg,
                        config.se_enabled,
                        &mut rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stems.push(blocks);
        }
        let (e, c) = (config.embedding_dim, config.stem_out());
        let mut proj = |name: String, fan_in: usize, rng: &mut _| Projection {
            w: store.kaiming_uniform(format!("{name}.w"), &[e, fan_in], fan_in, rng),
            b: store.constant(format!("{name}.b"), &[e], 0.0, true),
        };
        let heads = match config.fusion {
            Fusion::ConcatThenProject => {
                vec![proj("head".into(), c * config.sequences.len(), &mut rng)]
            }
            Fusion::SumAfterProject => config
                .sequences
                .iter()
                .map(|s| proj(format!("head.{}", s.tag()), c, &mut rng))
                .collect(),
        };
        Ok(Self {
            config,
            store,
            stems,
            heads,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Real>(&self) -> Encoder<U> {
        Encoder {
            config: self.config.clone(),
            store: self.store.cast(),
            stems: self.stems.clone(),
            heads: self.heads.clone(),
        }
    }

    /// Record the encoder on `g`. `input` is [B, 5, N] row-major; the
    /// result is the [B, embedding_dim] unit-norm embedding.
    pub fn forward(&self, g: &mut Graph<T>, input: &[T], batch: usize, mode: Mode) -> Result<Var> {
        if batch == 0 || input.len() % (batch * INPUT_ROWS) != 0 {
            return Err(Error::ShapeMismatch(format!(
                "encoder input of {} values is not [{batch}, {INPUT_ROWS}, N]",
                input.len()
            )));
        }
        let n = input.len() / (batch * INPUT_ROWS);
        if n < self.config.min_signal_len() {
            return Err(Error::ShapeMismatch(format!(
                "signal length {n} below the encoder minimum {}",
                self.config.min_signal_len()
            )));
        }
        let mut pooled = Vec::with_capacity(self.stems.len());
        for (seq, blocks) in self.config.sequences.iter().zip(&self.stems) {
            let rows = seq.rows();
            let mut data = Vec::with_capacity(batch * rows.len() * n);
            for b in 0..batch {
                for &r in rows {
                    let start = (b * INPUT_ROWS + r) * n;
                    data.extend_from_slice(&input[start..start + n]);
                }
            }
            let mut x = g.input(data, &[batch, rows.len(), n]);
            for p in blocks {
                x = attention_block(g, &self.store, p, x, mode)?;
            }
            pooled.push(g.global_avg_pool(x)?);
        }
        let fused = match self.config.fusion {
            Fusion::ConcatThenProject => {
                let z = g.concat(&pooled)?;
                self.project(g, &self.heads[0], z)?
            }
            Fusion::SumAfterProject => {
                let mut acc: Option<Var> = None;
                for (z, head) in pooled.into_iter().zip(&self.heads) {
                    let y = self.project(g, head, z)?;
                    acc = Some(match acc {
                        Some(a) => g.add(a, y)?,
                        None => y,
                    });
                }
                acc.expect("at least one sequence")
            }
        };
        g.l2_normalize(fused)
    }

    fn project(&self, g: &mut Graph<T>, head: &Projection, z: Var) -> Result<Var> {
        let w = g.param(&self.store, head.w);
        let b = g.param(&self.store, head.b);
        g.linear(z, w, Some(b))
    }

    /// Eval-mode embeddings, flattened [B, embedding_dim].
    pub fn embed(&self, input: &[T], batch: usize) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let e = self.forward(&mut g, input, batch, Mode::Eval)?;
        Ok(g.value(e).to_vec())
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        serialize::save_weights(&self.store, path)
    }

    /// Build the architecture for `config` and fill it from a weights file.
    pub fn load(config: EncoderConfig, path: &Path) -> Result<Self> {
        let mut enc = Self::new(config, 0)?;
        serialize::load_weights(&mut enc.store, path)?;
        Ok(enc)
    }

    pub fn weights_bytes(&self) -> Vec<u8> {
        serialize::weights_to_bytes(&self.store)
    }
}
