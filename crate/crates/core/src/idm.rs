//! Inverse dynamics model: a feedforward network with one mixture-density
//! head per joint that maps a short state/action history and a desired next
//! state to the torque that achieves it. Used to track STM joint paths at a
//! higher control rate than the STM itself.

use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::arm::{inverse_dynamics, step_dynamics, ArmConfig, ArmState};
use crate::dense::Linear;
use crate::error::{Error, Result};
use crate::math::{clip_global_norm, AdamConfig, AdamState, Params, RngState};
use crate::mdn::{mdn_backward, mdn_forward, mdn_sample, MdnCache, MdnWeights, MixtureParams, SampleMode};
use crate::stm::{load_versioned, rollout, write_atomically, ModelCheckpoint, RolloutOptions, Trajectory, CHECKPOINT_VERSION};
use crate::task::Task;
use crate::trajopt::apply_path;

pub const IDM_KIND: &str = "idm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmConfig {
    /// Number of past state/action frames besides the current state.
    pub history: usize,
    pub layers: usize,
    pub hidden: usize,
    /// Mixture components per joint.
    pub mixtures: usize,
    /// Dynamics steps per STM step.
    pub substeps: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Exploration torques are uniform in `[-torque_range, torque_range]`.
    pub torque_range: f64,
    pub transitions: usize,
    pub episode_length: usize,
    pub seed: u64,
}

impl Default for IdmConfig {
    fn default() -> Self {
        Self {
            history: 2,
            layers: 3,
            hidden: 64,
            mixtures: 5,
            substeps: 10,
            learning_rate: 1e-3,
            iterations: 3000,
            batch_size: 32,
            clip_norm: 5.0,
            torque_range: 2.0,
            transitions: 20_000,
            episode_length: 50,
            seed: 0,
        }
    }
}

impl IdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::Invalid("substeps must be at least 1".into()));
        }
        if self.layers == 0 || self.hidden == 0 || self.mixtures == 0 {
            return Err(Error::Invalid("IDM needs at least one hidden layer, unit and mixture".into()));
        }
        if self.batch_size == 0 || self.episode_length == 0 {
            return Err(Error::Invalid("batch size and episode length must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) || !(self.torque_range >= 0.0) {
            return Err(Error::Invalid("learning rate, clip norm and torque range must be positive".into()));
        }
        Ok(())
    }

    pub fn exploration(&self) -> Exploration {
        Exploration {
            torque_range: self.torque_range,
            episode_length: self.episode_length,
            initial_speed: 1.0,
        }
    }
}

/// One dynamics step with the history that preceded it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// `s_{t-H} .. s_t`, oldest first; zero before the episode start.
    pub states: Vec<ArmState>,
    /// `a_{t-H} .. a_{t-1}`, oldest first; zero before the episode start.
    pub actions: Vec<Vec<f64>>,
    /// `a_t`, the torque applied at `s_t`.
    pub action: Vec<f64>,
    pub next: ArmState,
}

impl Transition {
    pub fn current(&self) -> &ArmState {
        self.states.last().expect("transitions hold at least the current state")
    }
}

/// Size of the flat network input for `joints` joints and history `h`.
pub fn input_len(joints: usize, h: usize) -> usize {
    (h + 1) * 2 * joints + h * joints + 2 * joints
}

/// Flat network input. Layout, oldest frame first:
/// `[q, q̇] × (H+1) ‖ a × H ‖ q_des − q_t ‖ q̇_des`.
pub fn encode_idm_input(states: &[ArmState], actions: &[Vec<f64>], desired: &ArmState) -> Result<Vec<f64>> {
    let current = states.last().ok_or(Error::Empty("IDM state history"))?;
    let n = current.q.len();
    let h = states.len() - 1;
    if actions.len() != h {
        return Err(Error::dim("IDM action history", h, actions.len()));
    }
    let mut x = Vec::with_capacity(input_len(n, h));
    for s in states {
        if s.q.len() != n || s.qdot.len() != n {
            return Err(Error::dim("IDM state frame", n, s.q.len()));
        }
        x.extend_from_slice(&s.q);
        x.extend_from_slice(&s.qdot);
    }
    for a in actions {
        if a.len() != n {
            return Err(Error::dim("IDM action frame", n, a.len()));
        }
        x.extend_from_slice(a);
    }
    if desired.q.len() != n || desired.qdot.len() != n {
        return Err(Error::dim("IDM desired state", n, desired.q.len()));
    }
    x.extend(desired.q.iter().zip(&current.q).map(|(d, q)| d - q));
    x.extend_from_slice(&desired.qdot);
    Ok(x)
}

fn transition_input(t: &Transition) -> Result<Vec<f64>> {
    encode_idm_input(&t.states, &t.actions, &t.next)
}

/// Random torque excitation used to collect training data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exploration {
    pub torque_range: f64,
    pub episode_length: usize,
    /// Initial joint speeds are uniform in `[-initial_speed, initial_speed]`.
    pub initial_speed: f64,
}

/// Rolls the dynamics under uniform random torques in short episodes from
/// random configurations, recording every step with its history.
/// Episode `e` draws from its own stream derived from `seed`.
pub fn collect_transitions(arm: &ArmConfig, policy: Exploration, count: usize, history: usize, seed: u64) -> Result<Vec<Transition>> {
    arm.validate()?;
    if count == 0 {
        return Err(Error::Invalid("transition count must be at least 1".into()));
    }
    if policy.episode_length == 0 {
        return Err(Error::Invalid("episode length must be positive".into()));
    }
    let n = arm.joints();
    let zero = ArmState {
        q: vec![0.0; n],
        qdot: vec![0.0; n],
    };
    let mut out = Vec::with_capacity(count);
    let mut episode = 0u64;
    while out.len() < count {
        let mut rng = RngState::derived(seed, episode);
        episode += 1;
        let mut state = ArmState {
            q: (0..n).map(|_| rng.uniform_range(-std::f64::consts::PI, std::f64::consts::PI)).collect(),
            qdot: (0..n)
                .map(|_| rng.uniform_range(-policy.initial_speed, policy.initial_speed))
                .collect(),
        };
        let mut states = vec![zero.clone(); history];
        let mut actions = vec![vec![0.0; n]; history];
        for _ in 0..policy.episode_length {
            if out.len() == count {
                break;
            }
            let action: Vec<f64> = (0..n)
                .map(|_| rng.uniform_range(-policy.torque_range, policy.torque_range))
                .collect();
            let next = step_dynamics(&state, &action, arm)?;
            states.push(state.clone());
            out.push(Transition {
                states: states[states.len() - history - 1..].to_vec(),
                actions: actions[actions.len() - history..].to_vec(),
                action: action.clone(),
                next: next.clone(),
            });
            actions.push(action);
            state = next;
        }
    }
    Ok(out)
}

/// Per-dimension standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("standardization rows"))?;
        let width = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; width];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n);
        }
        let mut var = vec![0.0; width];
        for r in rows {
            for k in 0..width {
                var[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        let std = var.iter().map(|v| if v.sqrt() > 1e-8 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, v)| (v - self.mean[k]) / self.std[k])
            .collect()
    }

    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(k, v)| v * self.std[k] + self.mean[k]).collect()
    }
}

/// `tanh` hidden stack followed by an independent one-dimensional mixture
/// head per joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdmNetwork {
    pub hidden: Vec<Linear>,
    pub heads: Vec<MdnWeights>,
}

pub struct IdmCache {
    /// Layer inputs; the last entry is the top hidden activation.
    activations: Vec<Vec<f64>>,
    heads: Vec<MdnCache>,
}

impl IdmNetwork {
    pub fn init(input: usize, joints: usize, cfg: &IdmConfig, rng: &mut RngState) -> Self {
        let mut hidden = Vec::with_capacity(cfg.layers);
        let mut width = input;
        for _ in 0..cfg.layers {
            hidden.push(Linear::init(width, cfg.hidden, rng));
            width = cfg.hidden;
        }
        let heads = (0..joints).map(|_| MdnWeights::init(width, cfg.mixtures, 1, rng)).collect();
        Self { hidden, heads }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self
                .hidden
                .iter()
                .map(|l| Linear::zeros(l.input_size(), l.output_size()))
                .collect(),
            heads: self.heads.iter().map(MdnWeights::zeros_like).collect(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.hidden.first().map_or(0, Linear::input_size)
    }

    pub fn joints(&self) -> usize {
        self.heads.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<MixtureParams>, IdmCache)> {
        let mut activations = Vec::with_capacity(self.hidden.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.hidden {
            let mut y = layer.forward(activations.last().expect("nonempty"))?;
            y.iter_mut().for_each(|v| *v = v.tanh());
            activations.push(y);
        }
        let top = activations.last().expect("nonempty");
        let mut params = Vec::with_capacity(self.heads.len());
        let mut heads = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let (p, c) = mdn_forward(top, head)?;
            params.push(p);
            heads.push(c);
        }
        Ok((params, IdmCache { activations, heads }))
    }

    /// Summed per-joint NLL of `target`; gradients are accumulated into
    /// `grads`.
    pub fn backward(&self, params: &[MixtureParams], target: &[f64], cache: &IdmCache, grads: &mut IdmNetwork) -> Result<f64> {
        if target.len() != self.heads.len() || params.len() != self.heads.len() {
            return Err(Error::dim("IDM action", self.heads.len(), target.len()));
        }
        if cache.activations.len() != self.hidden.len() + 1 {
            return Err(Error::StaleCache("IDM cache does not match the network depth"));
        }
        let mut loss = 0.0;
        let mut dh = vec![0.0; cache.activations.last().expect("nonempty").len()];
        for (j, head) in self.heads.iter().enumerate() {
            let (l, d) = mdn_backward(&params[j], &target[j..j + 1], &cache.heads[j], head, &mut grads.heads[j])?;
            loss += l;
            dh.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        }
        for (k, layer) in self.hidden.iter().enumerate().rev() {
            let y = &cache.activations[k + 1];
            let dz: Vec<f64> = dh.iter().zip(y).map(|(g, v)| g * (1.0 - v * v)).collect();
            dh = layer.backward(&cache.activations[k], &dz, &mut grads.hidden[k]);
        }
        Ok(loss)
    }
}

impl Params for IdmNetwork {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.hidden.iter().for_each(|l| l.visit(f));
        self.heads.iter().for_each(|h| h.visit(f));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.hidden.iter_mut().for_each(|l| l.visit_mut(f));
        self.heads.iter_mut().for_each(|h| h.visit_mut(f));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmCheckpoint {
    pub format_version: u32,
    pub model_kind: String,
    pub arm: ArmConfig,
    pub config: IdmConfig,
    pub input_norm: Standardizer,
    pub action_norm: Standardizer,
    pub network: IdmNetwork,
    pub loss_curve: Vec<f64>,
}

impl IdmCheckpoint {
    /// Deterministic-mode torque for an encoded (unstandardized) input.
    pub fn torque(&self, input: &[f64]) -> Result<Vec<f64>> {
        let (params, _) = self.network.forward(&self.input_norm.encode(input))?;
        let mut rng = RngState::new(0);
        let z: Vec<f64> = params
            .iter()
            .map(|p| mdn_sample(p, &mut rng, SampleMode::Deterministic)[0])
            .collect();
        Ok(self.action_norm.decode(&z))
    }

    pub fn history(&self) -> usize {
        self.config.history
    }
}

pub fn save_idm(ckpt: &IdmCheckpoint, path: &Path) -> Result<()> {
    write_atomically(path, serde_json::to_string_pretty(ckpt)?.as_bytes())
}

pub fn load_idm(path: &Path) -> Result<IdmCheckpoint> {
    let ckpt: IdmCheckpoint = load_versioned(path, IDM_KIND)?;
    let n = ckpt.arm.joints();
    if ckpt.network.input_size() != input_len(n, ckpt.config.history) || ckpt.network.joints() != n {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            detail: "network shape does not match the arm and history length".into(),
        });
    }
    Ok(ckpt)
}

/// Fits the IDM by minimizing the summed per-joint NLL of the applied
/// torque over minibatches drawn uniformly from `transitions`.
pub fn train_idm(transitions: &[Transition], cfg: &IdmConfig, arm: &ArmConfig) -> Result<IdmCheckpoint> {
    cfg.validate()?;
    let first = transitions.first().ok_or(Error::Empty("IDM transitions"))?;
    let n = arm.joints();
    if first.action.len() != n || first.states.len() != cfg.history + 1 {
        return Err(Error::dim("IDM transition history", cfg.history + 1, first.states.len()));
    }
    let inputs = transitions.iter().map(transition_input).collect::<Result<Vec<_>>>()?;
    let actions: Vec<Vec<f64>> = transitions.iter().map(|t| t.action.clone()).collect();
    let input_norm = Standardizer::fit(&inputs)?;
    let action_norm = Standardizer::fit(&actions)?;
    let inputs: Vec<Vec<f64>> = inputs.iter().map(|x| input_norm.encode(x)).collect();
    let actions: Vec<Vec<f64>> = actions.iter().map(|a| action_norm.encode(a)).collect();

    let mut rng = RngState::new(cfg.seed);
    let mut network = IdmNetwork::init(input_len(n, cfg.history), n, cfg, &mut rng);
    let mut params = network.to_flat();
    let mut adam = AdamState::new(params.len(), AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut grads = network.zeros_like();
    let mut flat = vec![0.0; params.len()];
    let mut loss_curve = Vec::with_capacity(cfg.iterations);
    let scale = 1.0 / cfg.batch_size as f64;

    for iteration in 0..cfg.iterations {
        grads.zero();
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let k = rng.index(inputs.len());
            let (p, cache) = network.forward(&inputs[k])?;
            loss += network.backward(&p, &actions[k], &cache, &mut grads)?;
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                iteration,
                detail: format!("IDM loss {loss}"),
            });
        }
        grads.write_flat(&mut flat);
        flat.iter_mut().for_each(|g| *g *= scale);
        clip_global_norm(&mut flat, cfg.clip_norm);
        adam.step(&mut params, &flat).map_err(|e| Error::TrainingDiverged {
            iteration,
            detail: e.to_string(),
        })?;
        network.copy_from_flat(&params);
        loss_curve.push(loss);
        if iteration % 500 == 0 || iteration + 1 == cfg.iterations {
            info!("IDM iteration {iteration}: loss {loss:.5}");
        }
    }

    Ok(IdmCheckpoint {
        format_version: CHECKPOINT_VERSION,
        model_kind: IDM_KIND.to_string(),
        arm: arm.clone(),
        config: cfg.clone(),
        input_norm,
        action_norm,
        network,
        loss_curve,
    })
}

/// Relative error `|τ̂ − τ*| / |τ*|` of the learned torque against the
/// analytic inverse, per transition and joint.
pub fn oracle_relative_errors(ckpt: &IdmCheckpoint, transitions: &[Transition]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(transitions.len() * ckpt.arm.joints());
    for t in transitions {
        let predicted = ckpt.torque(&transition_input(t)?)?;
        let exact = inverse_dynamics(&t.current().qdot, &t.next.qdot, &ckpt.arm);
        for (p, e) in predicted.iter().zip(&exact) {
            out.push((p - e).abs() / e.abs().max(1e-12));
        }
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] })
}

/// Source of torques while tracking.
#[derive(Clone, Copy, Debug)]
pub enum Controller<'a> {
    Learned(&'a IdmCheckpoint),
    /// Closed-form inverse of the arm dynamics.
    Oracle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackRecord {
    pub step: usize,
    pub desired_q: Vec<f64>,
    pub actual_q: Vec<f64>,
    /// Torque applied on the last substep of this step.
    pub torque: Vec<f64>,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub desired: Trajectory,
    pub executed: Trajectory,
    pub records: Vec<TrackRecord>,
}

/// Drives the simulated arm along `path` (one entry per STM step), with
/// `substeps` dynamics steps between consecutive entries.
///
/// On each substep the desired position is interpolated linearly between
/// path entries and the desired velocity is the one that lands exactly on
/// it from the current position, `(q_des − q)/dt`.
pub fn track_path(path: &[Vec<f64>], controller: Controller<'_>, arm: &ArmConfig, substeps: usize) -> Result<(Vec<Vec<f64>>, Vec<TrackRecord>)> {
    if substeps == 0 {
        return Err(Error::Invalid("substeps must be at least 1".into()));
    }
    let start = path.first().ok_or(Error::Empty("tracking path"))?;
    let n = arm.joints();
    if start.len() != n {
        return Err(Error::dim("tracking path joints", n, start.len()));
    }
    let history = match controller {
        Controller::Learned(idm) => {
            if idm.network.joints() != n {
                return Err(Error::dim("IDM joints", n, idm.network.joints()));
            }
            idm.history()
        }
        Controller::Oracle => 0,
    };
    let zero = ArmState {
        q: vec![0.0; n],
        qdot: vec![0.0; n],
    };
    let mut state = ArmState::at_rest(start.clone());
    let mut states = vec![zero; history];
    let mut actions = vec![vec![0.0; n]; history];
    let mut executed = vec![start.clone()];
    let mut records = Vec::with_capacity(path.len() - 1);

    for (t, pair) in path.windows(2).enumerate() {
        let mut torque = vec![0.0; n];
        for k in 1..=substeps {
            let frac = k as f64 / substeps as f64;
            let q_des: Vec<f64> = pair[0].iter().zip(&pair[1]).map(|(a, b)| a + frac * (b - a)).collect();
            let qdot_des: Vec<f64> = q_des.iter().zip(&state.q).map(|(d, q)| (d - q) / arm.dt).collect();
            torque = match controller {
                Controller::Oracle => inverse_dynamics(&state.qdot, &qdot_des, arm),
                Controller::Learned(idm) => {
                    states.push(state.clone());
                    let frames = &states[states.len() - history - 1..];
                    let desired = ArmState { q: q_des, qdot: qdot_des };
                    let x = encode_idm_input(frames, &actions[actions.len() - history..], &desired)?;
                    let tau = idm.torque(&x)?;
                    actions.push(tau.clone());
                    if states.len() > 4 * (history + 1) {
                        states.drain(..states.len() - history - 1);
                        actions.drain(..actions.len() - history);
                    }
                    tau
                }
            };
            state = step_dynamics(&state, &torque, arm).map_err(|_| Error::DynamicsDiverged { step: t })?;
            if state.q.iter().chain(&state.qdot).any(|v| !v.is_finite()) {
                return Err(Error::DynamicsDiverged { step: t });
            }
        }
        let error = state
            .q
            .iter()
            .zip(&pair[1])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if !error.is_finite() {
            return Err(Error::DynamicsDiverged { step: t });
        }
        records.push(TrackRecord {
            step: t + 1,
            desired_q: pair[1].clone(),
            actual_q: state.q.clone(),
            torque,
            error,
        });
        executed.push(state.q.clone());
    }
    Ok((executed, records))
}

/// Rolls the STM out deterministically for `steps` steps and tracks the
/// resulting joint path with torque control.
pub fn track(
    stm: &ModelCheckpoint,
    controller: Controller<'_>,
    arm: &ArmConfig,
    task: &Task,
    q0: &[f64],
    steps: usize,
    substeps: usize,
) -> Result<TrackResult> {
    let desired = rollout(stm, q0, task, steps, &[], arm, RolloutOptions::default())?;
    let (path, records) = track_path(&desired.joint_path(), controller, arm, substeps)?;
    let executed = apply_path(&desired, &path, arm)?;
    Ok(TrackResult {
        desired,
        executed,
        records,
    })
}

/// Writes the per-step tracking CSV:
/// `step, q_des_0.., q_act_0.., tau_0.., error`.
pub fn write_track_csv<W: std::io::Write>(records: &[TrackRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = records.first() {
        let n = first.desired_q.len();
        let mut header = vec!["step".to_string()];
        header.extend((0..n).map(|k| format!("q_des_{k}")));
        header.extend((0..n).map(|k| format!("q_act_{k}")));
        header.extend((0..n).map(|k| format!("tau_{k}")));
        header.push("error".into());
        w.write_record(&header)?;
    }
    for r in records {
        let mut row = vec![r.step.to_string()];
        row.extend(r.desired_q.iter().map(|v| v.to_string()));
        row.extend(r.actual_q.iter().map(|v| v.to_string()));
        row.extend(r.torque.iter().map(|v| v.to_string()));
        row.push(r.error.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_cfg() -> IdmConfig {
        IdmConfig {
            layers: 2,
            hidden: 6,
            mixtures: 3,
            ..IdmConfig::default()
        }
    }

    #[test]
    fn zero_network_gives_uniform_mixtures() {
        let cfg = small_cfg();
        let net = IdmNetwork::init(input_len(3, 2), 3, &cfg, &mut RngState::new(0)).zeros_like();
        let (params, _) = net.forward(&vec![0.3; input_len(3, 2)]).unwrap();
        assert_eq!(params.len(), 3);
        for p in params {
            for a in &p.alpha {
                assert_abs_diff_eq!(*a, 1.0 / 3.0, epsilon = 1e-15);
            }
            assert!(p.mu.as_slice().iter().all(|&m| m == 0.0));
        }
    }

    #[test]
    fn forward_matches_layer_by_layer_evaluation() {
        let cfg = small_cfg();
        let mut rng = RngState::new(4);
        let net = IdmNetwork::init(input_len(2, 1), 2, &cfg, &mut rng);
        let x: Vec<f64> = (0..input_len(2, 1)).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let (params, _) = net.forward(&x).unwrap();
        let mut h = x.clone();
        for layer in &net.hidden {
            h = (0..layer.output_size())
                .map(|r| (layer.b[r] + (0..h.len()).map(|c| layer.w.get(r, c) * h[c]).sum::<f64>()).tanh())
                .collect();
        }
        for (j, head) in net.heads.iter().enumerate() {
            let raw: Vec<f64> = (0..head.linear.output_size())
                .map(|r| head.linear.b[r] + (0..h.len()).map(|c| head.linear.w.get(r, c) * h[c]).sum::<f64>())
                .collect();
            let expected = MixtureParams::from_raw(&raw, head.mixtures, 1, head.sigma_floor).unwrap();
            for i in 0..head.mixtures {
                assert_abs_diff_eq!(expected.mu.get(i, 0), params[j].mu.get(i, 0), epsilon = 1e-12);
                assert_abs_diff_eq!(expected.sigma[i], params[j].sigma[i], epsilon = 1e-12);
                assert_abs_diff_eq!(expected.alpha[i], params[j].alpha[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn input_dimension_checked() {
        let net = IdmNetwork::init(input_len(3, 2), 3, &small_cfg(), &mut RngState::new(0));
        assert!(net.forward(&[0.0; 4]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = small_cfg();
        let mut rng = RngState::new(9);
        let n = 2;
        let mut net = IdmNetwork::init(input_len(n, 1), n, &cfg, &mut rng);
        let x: Vec<f64> = (0..input_len(n, 1)).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let target = vec![0.3, -0.4];
        let mut grads = net.zeros_like();
        let (p, c) = net.forward(&x).unwrap();
        net.backward(&p, &target, &c, &mut grads).unwrap();
        let analytic = grads.to_flat();
        let mut flat = net.to_flat();
        let h = 1e-6;
        let mut scratch = net.zeros_like();
        let mut loss_at = |net: &IdmNetwork| {
            let (p, c) = net.forward(&x).unwrap();
            net.backward(&p, &target, &c, &mut scratch).unwrap()
        };
        for k in 0..flat.len() {
            let orig = flat[k];
            flat[k] = orig + h;
            net.copy_from_flat(&flat);
            let up = loss_at(&net);
            flat[k] = orig - h;
            net.copy_from_flat(&flat);
            let down = loss_at(&net);
            flat[k] = orig;
            let num = (up - down) / (2.0 * h);
            let rel = (num - analytic[k]).abs() / num.abs().max(analytic[k].abs()).max(1e-3);
            assert!(rel < 1e-6, "param {k}: {num} vs {}", analytic[k]);
        }
    }

    #[test]
    fn encoding_layout() {
        let states = vec![
            ArmState { q: vec![1.0, 2.0], qdot: vec![3.0, 4.0] },
            ArmState { q: vec![5.0, 6.0], qdot: vec![7.0, 8.0] },
        ];
        let actions = vec![vec![9.0, 10.0]];
        let desired = ArmState { q: vec![6.0, 8.0], qdot: vec![11.0, 12.0] };
        let x = encode_idm_input(&states, &actions, &desired).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 1.0, 2.0, 11.0, 12.0]);
        assert_eq!(x.len(), input_len(2, 1));
        assert!(encode_idm_input(&states, &[], &desired).is_err());
    }

    #[test]
    fn zero_torque_transitions_decay() {
        let arm = ArmConfig::default();
        let policy = Exploration {
            torque_range: 0.0,
            episode_length: 20,
            initial_speed: 1.0,
        };
        let data = collect_transitions(&arm, policy, 60, 2, 3).unwrap();
        assert_eq!(data.len(), 60);
        for t in &data {
            for k in 0..3 {
                let expected = t.current().qdot[k] * (1.0 - arm.dt * arm.damping[k] / arm.inertia[k]);
                assert_abs_diff_eq!(t.next.qdot[k], expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn transitions_replay_and_pad() {
        let arm = ArmConfig::default();
        let cfg = IdmConfig::default();
        let a = collect_transitions(&arm, cfg.exploration(), 120, 2, 11).unwrap();
        let b = collect_transitions(&arm, cfg.exploration(), 120, 2, 11).unwrap();
        assert_eq!(a, b);
        for t in &a {
            assert_eq!(step_dynamics(t.current(), &t.action, &arm).unwrap(), t.next);
            assert_eq!(t.states.len(), 3);
            assert_eq!(t.actions.len(), 2);
        }
        // First step of an episode has an all-zero history.
        assert!(a[0].states[..2].iter().all(|s| s.q.iter().all(|&v| v == 0.0)));
        assert!(a[0].actions.iter().flatten().all(|&v| v == 0.0));
        // Histories chain within an episode.
        assert_eq!(a[1].states[1], a[0].states[2]);
        assert_eq!(a[1].actions[1], a[0].action);
    }

    #[test]
    fn oracle_tracking_is_exact() {
        let arm = ArmConfig::default();
        let path: Vec<Vec<f64>> = (0..30)
            .map(|t| {
                let s = t as f64 * 0.02;
                vec![0.1 + s, 0.8 - 0.5 * s, 0.5 + (3.0 * s).sin() * 0.1]
            })
            .collect();
        let (executed, records) = track_path(&path, Controller::Oracle, &arm, 10).unwrap();
        assert_eq!(executed.len(), 30);
        assert!(records.iter().all(|r| r.error < 1e-9), "{:?}", records.last());
    }

    #[test]
    fn zero_substeps_rejected() {
        let arm = ArmConfig::default();
        let path = vec![vec![0.0; 3], vec![0.1; 3]];
        assert!(track_path(&path, Controller::Oracle, &arm, 0).is_err());
        let cfg = IdmConfig { substeps: 0, ..IdmConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn learned_model_fits_the_inverse() {
        let arm = ArmConfig::default();
        let cfg = IdmConfig {
            hidden: 32,
            iterations: 1500,
            transitions: 4000,
            ..IdmConfig::default()
        };
        let data = collect_transitions(&arm, cfg.exploration(), cfg.transitions, cfg.history, 1).unwrap();
        let ckpt = train_idm(&data, &cfg, &arm).unwrap();
        let early: f64 = ckpt.loss_curve[..100].iter().sum();
        let late: f64 = ckpt.loss_curve[1400..].iter().sum();
        assert!(late < early);
        let held_out = collect_transitions(&arm, cfg.exploration(), 500, cfg.history, 99).unwrap();
        let errors = oracle_relative_errors(&ckpt, &held_out).unwrap();
        let med = median(&errors).unwrap();
        assert!(med < 0.1, "median relative error {med}");
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
