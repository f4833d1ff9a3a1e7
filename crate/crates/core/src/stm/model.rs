use serde::{Deserialize, Serialize};

use crate::dense::Linear;
use crate::error::{Error, Result};
use crate::lstm::{LstmStack, LstmState, StepCache};
use crate::math::{Params, RngState};
use crate::mdn::{mdn_backward, mdn_forward, mdn_sample, MdnCache, MdnWeights, MixtureParams, SampleMode};

/// Auto-conditioning lengths: `u` ground-truth steps followed by `v`
/// self-fed steps, repeating from `t = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub u: usize,
    pub v: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { u: 5, v: 5 }
    }
}

impl ScheduleConfig {
    pub fn teacher_forcing() -> Self {
        Self { u: 1, v: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.u + self.v == 0 {
            return Err(Error::Invalid("schedule needs u + v >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conditioning {
    GroundTruth,
    SelfFed,
}

pub fn conditioning_mask(t: usize, sched: ScheduleConfig) -> Conditioning {
    let period = sched.u + sched.v;
    if period == 0 || t % period < sched.u {
        Conditioning::GroundTruth
    } else {
        Conditioning::SelfFed
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    #[default]
    Mdn,
    /// Point prediction trained with squared error.
    Mse,
}

/// Training ablations: output head crossed with auto-conditioning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Lstm,
    AcLstm,
    LstmMdn,
    AcLstmMdn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Lstm, Variant::AcLstm, Variant::LstmMdn, Variant::AcLstmMdn];

    pub fn head(self) -> HeadKind {
        match self {
            Variant::Lstm | Variant::AcLstm => HeadKind::Mse,
            Variant::LstmMdn | Variant::AcLstmMdn => HeadKind::Mdn,
        }
    }

    pub fn auto_conditioned(self) -> bool {
        matches!(self, Variant::AcLstm | Variant::AcLstmMdn)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lstm => "lstm",
            Variant::AcLstm => "ac-lstm",
            Variant::LstmMdn => "lstm-mdn",
            Variant::AcLstmMdn => "ac-lstm-mdn",
        }
    }

    /// Rewrites `cfg` so it trains this ablation row. Non-auto-conditioned
    /// variants use plain teacher forcing (`v = 0`).
    pub fn apply(self, cfg: &mut StmConfig) {
        cfg.head = self.head();
        if !self.auto_conditioned() {
            cfg.schedule = ScheduleConfig { u: cfg.schedule.u.max(1), v: 0 };
        } else if cfg.schedule.v == 0 {
            cfg.schedule = ScheduleConfig::default();
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StmConfig {
    pub layers: usize,
    pub hidden: usize,
    pub mixtures: usize,
    pub head: HeadKind,
    pub learning_rate: f64,
    /// Learning rate reached at the last iteration by cosine decay; constant
    /// when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_learning_rate: Option<f64>,
    pub iterations: usize,
    pub clip_norm: f64,
    pub schedule: ScheduleConfig,
    pub self_feed: SampleMode,
    pub seed: u64,
    pub normalize: bool,
}

impl Default for StmConfig {
    /// Reacher settings: three layers of 64 units, three Gaussians and long
    /// self-fed stretches.
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 64,
            mixtures: 3,
            head: HeadKind::Mdn,
            learning_rate: 2e-3,
            final_learning_rate: Some(1e-4),
            iterations: 5000,
            clip_norm: 5.0,
            schedule: ScheduleConfig { u: 3, v: 15 },
            self_feed: SampleMode::Deterministic,
            seed: 0,
            normalize: true,
        }
    }
}

impl StmConfig {
    /// Pick-and-place sizes: 128 units per layer, 20 Gaussians, 30k iterations.
    pub fn pick_place() -> Self {
        Self {
            hidden: 128,
            mixtures: 20,
            iterations: 30_000,
            schedule: ScheduleConfig::default(),
            ..Self::default()
        }
    }

    /// Reacher network with the default 5/5 schedule.
    pub fn circle() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            ..Self::default()
        }
    }

    /// Learning rate for `iteration`.
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        match self.final_learning_rate {
            None => self.learning_rate,
            Some(end) => {
                let s = iteration as f64 / self.iterations.saturating_sub(1).max(1) as f64;
                end + 0.5 * (self.learning_rate - end) * (1.0 + (std::f64::consts::PI * s.min(1.0)).cos())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.mixtures == 0 {
            return Err(Error::Invalid("layers, hidden and mixtures must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Invalid("learning rate and clip norm must be positive".into()));
        }
        if let Some(end) = self.final_learning_rate {
            if !(end > 0.0 && end <= self.learning_rate) {
                return Err(Error::Invalid(format!("final learning rate {end} must be in (0, learning_rate]")));
            }
        }
        self.schedule.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Mdn(MdnWeights),
    Mse(Linear),
}

impl Head {
    fn zeros_like(&self) -> Self {
        match self {
            Head::Mdn(w) => Head::Mdn(w.zeros_like()),
            Head::Mse(l) => Head::Mse(Linear::zeros(l.input_size(), l.output_size())),
        }
    }
}

/// Per-step head output kept for the loss and the next input.
pub enum HeadOutput {
    Mixture(MixtureParams, MdnCache),
    Point { prediction: Vec<f64>, hidden: Vec<f64> },
}

impl HeadOutput {
    /// Prediction in normalized coordinates.
    pub fn predict(&self, rng: &mut RngState, mode: SampleMode) -> Vec<f64> {
        match self {
            HeadOutput::Mixture(p, _) => mdn_sample(p, rng, mode),
            HeadOutput::Point { prediction, .. } => prediction.clone(),
        }
    }
}

/// LSTM stack followed by an output head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StmModel {
    pub lstm: LstmStack,
    pub head: Head,
}

impl StmModel {
    pub fn init(input: usize, output: usize, cfg: &StmConfig, rng: &mut RngState) -> Self {
        let lstm = LstmStack::init(input, cfg.hidden, cfg.layers, rng);
        let head = match cfg.head {
            HeadKind::Mdn => Head::Mdn(MdnWeights::init(cfg.hidden, cfg.mixtures, output, rng)),
            HeadKind::Mse => Head::Mse(Linear::init(cfg.hidden, output, rng)),
        };
        Self { lstm, head }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            lstm: self.lstm.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.lstm.input_size()
    }

    pub fn zero_state(&self) -> LstmState {
        self.lstm.zero_state()
    }

    pub fn step(&self, x: &[f64], state: &mut LstmState) -> Result<(HeadOutput, StepCache)> {
        let (h, cache) = self.lstm.forward(x, state)?;
        let out = match &self.head {
            Head::Mdn(w) => {
                let (p, c) = mdn_forward(&h, w)?;
                HeadOutput::Mixture(p, c)
            }
            Head::Mse(l) => HeadOutput::Point {
                prediction: l.forward(&h)?,
                hidden: h,
            },
        };
        Ok((out, cache))
    }

    /// Loss for one step and its gradient with respect to the top hidden
    /// vector; head gradients are accumulated into `grads`.
    pub fn head_backward(&self, out: &HeadOutput, target: &[f64], grads: &mut StmModel) -> Result<(f64, Vec<f64>)> {
        match (&self.head, &mut grads.head, out) {
            (Head::Mdn(w), Head::Mdn(g), HeadOutput::Mixture(p, c)) => mdn_backward(p, target, c, w, g),
            (Head::Mse(l), Head::Mse(g), HeadOutput::Point { prediction, hidden }) => {
                if target.len() != prediction.len() {
                    return Err(Error::dim("mse target", prediction.len(), target.len()));
                }
                let diff: Vec<f64> = prediction.iter().zip(target).map(|(p, t)| p - t).collect();
                let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
                Ok((loss, l.backward(hidden, &diff, g)))
            }
            _ => Err(Error::StaleCache("head output does not match head kind")),
        }
    }
}

impl Params for Head {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        match self {
            Head::Mdn(w) => w.visit(f),
            Head::Mse(l) => l.visit(f),
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        match self {
            Head::Mdn(w) => w.visit_mut(f),
            Head::Mse(l) => l.visit_mut(f),
        }
    }
}

impl Params for StmModel {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.lstm.visit(f);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.lstm.visit_mut(f);
        self.head.visit_mut(f);
    }
}
