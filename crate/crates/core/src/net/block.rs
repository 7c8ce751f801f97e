use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Mode, ParamId, ParamStore, Real, Var};

/// Shape of one multi-scale attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiScaleBlockConfig {
    pub in_channels: usize,
    /// Output of the stride-2 downsampling conv.
    pub down_channels: usize,
    /// Output of the shared 1×1 reduce conv ahead of the wide kernels.
    pub reduce_channels: usize,
    /// Output of each of the four branches.
    pub branch_channels: usize,
    pub se_reduction: usize,
}

impl MultiScaleBlockConfig {
    pub fn out_channels(&self) -> usize {
        4 * self.branch_channels
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.out_channels();
        if [
            self.in_channels,
            self.down_channels,
            self.reduce_channels,
            self.branch_channels,
            self.se_reduction,
        ]
        .contains(&0)
        {
            return Err(Error::InvalidConfig("block widths must be positive".into()));
        }
        if c % self.se_reduction != 0 {
            return Err(Error::InvalidConfig(format!(
                "SE reduction {} does not divide {c} block channels",
                self.se_reduction
            )));
        }
        Ok(())
    }
}

/// Conv1d without bias, followed by batchnorm and ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub w: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvBn {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: store.kaiming_uniform(format!("{name}.w"), &[cout, cin, k], cin * k, rng),
            gamma: store.constant(format!("{name}.bn.gamma"), &[cout], 1.0, true),
            beta: store.constant(format!("{name}.bn.beta"), &[cout], 0.0, true),
            running_mean: store.constant(format!("{name}.bn.running_mean"), &[cout], 0.0, false),
            running_var: store.constant(format!("{name}.bn.running_var"), &[cout], 1.0, false),
            stride,
            pad: k / 2,
        }
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let w = g.param(store, self.w);
        let y = g.conv1d(x, w, self.stride, self.pad)?;
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let y = g.batchnorm(
            y,
            gamma,
            beta,
            store,
            self.running_mean,
            self.running_var,
            mode,
        )?;
        Ok(g.relu(y))
    }
}

/// Squeeze-and-excitation weights (no biases).
#[derive(Clone, Debug)]
pub struct SeParams {
    /// [C/r, C]
    pub w1: ParamId,
    /// [C, C/r]
    pub w2: ParamId,
}

impl SeParams {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        r: usize,
        rng: &mut R,
    ) -> Self {
        let hidden = channels / r;
        Self {
            w1: store.kaiming_uniform(format!("{name}.w1"), &[hidden, channels], channels, rng),
            w2: store.kaiming_uniform(format!("{name}.w2"), &[channels, hidden], hidden, rng),
        }
    }
}

/// Channel gating `x · σ(W₂ relu(W₁ mean_L(x)))` on [B, C, L].
pub fn se_attention<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    se: &SeParams,
    x: Var,
) -> Result<Var> {
    let c = g.shape(x).get(1).copied().unwrap_or(0);
    let (s1, s2) = (&store.get(se.w1).shape, &store.get(se.w2).shape);
    if s1[1] != c || s2[0] != c || c % s1[0] != 0 {
        return Err(Error::ShapeMismatch(format!(
            "SE weights {s1:?}/{s2:?} for {c} channels"
        )));
    }
    let z = g.global_avg_pool(x)?;
    let w1 = g.param(store, se.w1);
    let h = g.linear(z, w1, None)?;
    let h = g.relu(h);
    let w2 = g.param(store, se.w2);
    let s = g.linear(h, w2, None)?;
    let s = g.sigmoid(s);
    g.channel_scale(x, s)
}

/// Parameters of one multi-scale attention block.
#[derive(Clone, Debug)]
pub struct BlockParams {
    pub config: MultiScaleBlockConfig,
    pub down: ConvBn,
    pub conv1: ConvBn,
    pub reduce: ConvBn,
    pub conv3: ConvBn,
    pub conv5: ConvBn,
    pub conv7: ConvBn,
    pub se: Option<SeParams>,
}

impl BlockParams {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: MultiScaleBlockConfig,
        se_enabled: bool,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (d, r, b) = (cfg.down_channels, cfg.reduce_channels, cfg.branch_channels);
        Ok(Self {
            config: cfg,
            down: ConvBn::new(
                store,
                &format!("{name}.down"),
                cfg.in_channels,
                d,
                3,
                2,
                rng,
            ),
            conv1: ConvBn::new(store, &format!("{name}.conv1"), d, b, 1, 1, rng),
            reduce: ConvBn::new(store, &format!("{name}.reduce"), d, r, 1, 1, rng),
            conv3: ConvBn::new(store, &format!("{name}.conv3"), r, b, 3, 1, rng),
            conv5: ConvBn::new(store, &format!("{name}.conv5"), r, b, 5, 1, rng),
            conv7: ConvBn::new(store, &format!("{name}.conv7"), r, b, 7, 1, rng),
            se: se_enabled.then(|| {
                SeParams::new(
                    store,
                    &format!("{name}.se"),
                    cfg.out_channels(),
                    cfg.se_reduction,
                    rng,
                )
            }),
        })
    }
}

/// Multi-scale block without attention: [B, C_in, L] → [B, 4·branch, ⌈L/2⌉].
pub fn multi_scale_block<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &BlockParams,
    x: Var,
    mode: Mode,
) -> Result<Var> {
    let xs = g.shape(x);
    if xs.len() != 3 || xs[1] != p.config.in_channels || xs[2] < 8 {
        return Err(Error::ShapeMismatch(format!(
            "block expects [B, {}, L ≥ 8], got {xs:?}",
            p.config.in_channels
        )));
    }
    let d = p.down.forward(g, store, x, mode)?;
    let x1 = p.conv1.forward(g, store, d, mode)?;
    let c1 = p.reduce.forward(g, store, d, mode)?;
    let x2 = p.conv3.forward(g, store, c1, mode)?;
    let x3 = p.conv5.forward(g, store, c1, mode)?;
    let x4 = p.conv7.forward(g, store, c1, mode)?;
    g.concat(&[x1, x2, x3, x4])
}

/// Multi-scale block followed by SE gating when enabled.
pub fn attention_block<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &BlockParams,
    x: Var,
    mode: Mode,
) -> Result<Var> {
    let y = multi_scale_block(g, store, p, x, mode)?;
    match &p.se {
        Some(se) => se_attention(g, store, se, y),
        None => Ok(y),
    }
}
