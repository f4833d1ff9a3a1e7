use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::Task;

/// Minimum standard deviation used when standardizing a dimension.
pub const STD_FLOOR: f64 = 1e-8;

/// Slot layout of a flat state vector: `dq ‖ phi ‖ psi ‖ grip?`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateLayout {
    pub dq: usize,
    pub phi: usize,
    pub psi: usize,
    pub grip: bool,
}

impl StateLayout {
    pub fn new(dq: usize, phi: usize, psi: usize, grip: bool) -> Self {
        Self { dq, phi, psi, grip }
    }

    pub fn width(&self) -> usize {
        self.dq + self.phi + self.psi + usize::from(self.grip)
    }

    /// Number of dimensions the model predicts (`dq` plus the grip channel).
    pub fn predicted(&self) -> usize {
        self.dq + usize::from(self.grip)
    }

    pub fn grip_index(&self) -> Option<usize> {
        self.grip.then(|| self.dq + self.phi + self.psi)
    }

    /// Flat indices of the predicted dimensions, in prediction order.
    pub fn predicted_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.dq).collect();
        idx.extend(self.grip_index());
        idx
    }
}

/// One time step: joint-angle deltas, task-specific input, task description
/// and the optional grip channel.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub dq: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub grip: Option<f64>,
}

impl State {
    pub fn layout(&self) -> StateLayout {
        StateLayout::new(self.dq.len(), self.phi.len(), self.psi.len(), self.grip.is_some())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout().width());
        v.extend_from_slice(&self.dq);
        v.extend_from_slice(&self.phi);
        v.extend_from_slice(&self.psi);
        v.extend(self.grip);
        v
    }

    pub fn from_flat(layout: StateLayout, flat: &[f64]) -> Result<Self> {
        if flat.len() != layout.width() {
            return Err(Error::dim("state width", layout.width(), flat.len()));
        }
        let (dq, rest) = flat.split_at(layout.dq);
        let (phi, rest) = rest.split_at(layout.phi);
        let (psi, rest) = rest.split_at(layout.psi);
        Ok(Self {
            dq: dq.to_vec(),
            phi: phi.to_vec(),
            psi: psi.to_vec(),
            grip: layout.grip.then(|| rest[0]),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalChange {
    pub step: usize,
    pub psi: Vec<f64>,
}

/// Ordered state sequence with its task and absolute start configuration.
///
/// Joint angles at step `t` are `q0 + Σ_{k=1..t} dq_k`; the first state's
/// `dq` describes motion before the trajectory starts and is not integrated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub layout: StateLayout,
    /// Active task at the end of the trajectory.
    pub task: Task,
    pub q0: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub goal_changes: Vec<GoalChange>,
}

impl Trajectory {
    pub fn new(layout: StateLayout, task: Task, q0: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        let t = Self {
            layout,
            task,
            q0,
            states,
            goal_changes: Vec::new(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() < 2 {
            return Err(Error::Invalid(format!(
                "trajectory needs at least 2 states, has {}",
                self.states.len()
            )));
        }
        if self.q0.len() != self.layout.dq {
            return Err(Error::dim("trajectory q0", self.layout.dq, self.q0.len()));
        }
        for s in &self.states {
            if s.len() != self.layout.width() {
                return Err(Error::dim("trajectory state", self.layout.width(), s.len()));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite("trajectory state"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, t: usize) -> State {
        State::from_flat(self.layout, &self.states[t]).expect("validated layout")
    }

    pub fn dq(&self, t: usize) -> &[f64] {
        &self.states[t][..self.layout.dq]
    }

    pub fn grip(&self, t: usize) -> Option<f64> {
        self.layout.grip_index().map(|i| self.states[t][i])
    }

    /// Absolute joint angles at every step.
    pub fn joint_path(&self) -> Vec<Vec<f64>> {
        let mut q = self.q0.clone();
        let mut out = Vec::with_capacity(self.states.len());
        out.push(q.clone());
        for t in 1..self.states.len() {
            q.iter_mut().zip(self.dq(t)).for_each(|(a, b)| *a += b);
            out.push(q.clone());
        }
        out
    }
}

/// Per-dimension standardization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub enabled: bool,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(width: usize) -> Self {
        Self {
            enabled: false,
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Mean and (population) standard deviation over every state of the
    /// dataset.
    pub fn fit(dataset: &[Trajectory], enabled: bool) -> Result<Self> {
        let first = dataset.first().ok_or(Error::Empty("dataset"))?;
        let width = first.layout.width();
        if !enabled {
            return Ok(Self::identity(width));
        }
        let mut n = 0usize;
        let mut mean = vec![0.0; width];
        for traj in dataset {
            for s in &traj.states {
                n += 1;
                mean.iter_mut().zip(s).for_each(|(m, x)| *m += x);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; width];
        for traj in dataset {
            for s in &traj.states {
                for k in 0..width {
                    var[k] += (s[k] - mean[k]).powi(2);
                }
            }
        }
        let std = var.iter().map(|v| (v / n as f64).sqrt()).collect();
        Ok(Self { enabled, mean, std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    fn scale(&self, k: usize) -> f64 {
        self.std[k].max(STD_FLOOR)
    }

    pub fn encode(&self, flat: &[f64]) -> Result<Vec<f64>> {
        if flat.len() != self.width() {
            return Err(Error::dim("normalization width", self.width(), flat.len()));
        }
        if !self.enabled {
            return Ok(flat.to_vec());
        }
        Ok(flat
            .iter()
            .enumerate()
            .map(|(k, x)| (x - self.mean[k]) / self.scale(k))
            .collect())
    }

    pub fn decode(&self, encoded: &[f64]) -> Result<Vec<f64>> {
        if encoded.len() != self.width() {
            return Err(Error::dim("normalization width", self.width(), encoded.len()));
        }
        if !self.enabled {
            return Ok(encoded.to_vec());
        }
        Ok(encoded
            .iter()
            .enumerate()
            .map(|(k, z)| z * self.scale(k) + self.mean[k])
            .collect())
    }

    /// Standardizes only the entries at `indices` of a flat state.
    pub fn encode_at(&self, values: &[f64], indices: &[usize]) -> Vec<f64> {
        values
            .iter()
            .zip(indices)
            .map(|(x, &k)| {
                if self.enabled {
                    (x - self.mean[k]) / self.scale(k)
                } else {
                    *x
                }
            })
            .collect()
    }

    pub fn decode_at(&self, values: &[f64], indices: &[usize]) -> Vec<f64> {
        values
            .iter()
            .zip(indices)
            .map(|(z, &k)| {
                if self.enabled {
                    z * self.scale(k) + self.mean[k]
                } else {
                    *z
                }
            })
            .collect()
    }
}

/// Concatenates the state and standardizes it.
pub fn encode_input(s: &State, norm: &Normalization) -> Result<Vec<f64>> {
    norm.encode(&s.to_flat())
}

pub fn decode_input(encoded: &[f64], layout: StateLayout, norm: &Normalization) -> Result<State> {
    State::from_flat(layout, &norm.decode(encoded)?)
}

/// Writes a dataset as line-delimited JSON, one trajectory per line. The
/// file appears only once it is complete.
pub fn write_dataset(path: &Path, dataset: &[Trajectory]) -> Result<()> {
    let mut buf = Vec::new();
    for traj in dataset {
        serde_json::to_writer(&mut buf, traj)?;
        buf.push(b'\n');
    }
    super::checkpoint::write_atomically(path, &buf)
}

/// Appends one trajectory record to a dataset file, creating it if needed.
pub fn append_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut line = serde_json::to_vec(traj)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<Trajectory>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let traj: Trajectory = serde_json::from_str(&line).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            detail: format!("line {}: {e}", i + 1),
        })?;
        traj.validate().map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            detail: format!("line {}: {e}", i + 1),
        })?;
        out.push(traj);
    }
    Ok(out)
}
