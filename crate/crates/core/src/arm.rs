//! Planar n-link arm: kinematics, damped-least-squares IK and decoupled
//! per-joint torque dynamics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;

pub type Point = [f64; 2];

/// DLS damping factor.
pub const IK_DAMPING: f64 = 0.1;
/// Largest Cartesian correction attempted in one IK iteration (m).
pub const IK_STEP_CLAMP: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmConfig {
    /// Link lengths in meters, base to tip.
    pub link_lengths: Vec<f64>,
    /// Optional `(lower, upper)` limits per joint, radians.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint_limits: Option<Vec<(f64, f64)>>,
    /// Per-joint inertia, kg·m².
    pub inertia: Vec<f64>,
    /// Per-joint viscous damping, N·m·s/rad.
    pub damping: Vec<f64>,
    /// Integration timestep, s.
    pub dt: f64,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self {
            link_lengths: vec![0.5, 0.3, 0.2],
            joint_limits: None,
            inertia: vec![0.01; 3],
            damping: vec![0.1; 3],
            dt: 0.01,
        }
    }
}

impl ArmConfig {
    pub fn joints(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joints();
        if n == 0 {
            return Err(Error::Invalid("arm needs at least one joint".into()));
        }
        if self.link_lengths.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Invalid("link lengths must be positive".into()));
        }
        if self.inertia.len() != n || self.damping.len() != n {
            return Err(Error::Invalid(format!(
                "inertia/damping must have {n} entries"
            )));
        }
        if self.inertia.iter().any(|&i| !(i > 0.0)) || self.damping.iter().any(|&c| !(c >= 0.0)) {
            return Err(Error::Invalid("inertia must be positive and damping nonnegative".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Invalid("dt must be positive".into()));
        }
        if let Some(lim) = &self.joint_limits {
            if lim.len() != n || lim.iter().any(|(lo, hi)| !(lo < hi)) {
                return Err(Error::Invalid("joint limits malformed".into()));
            }
        }
        Ok(())
    }

    fn check_q(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.joints() {
            return Err(Error::dim("joint vector", self.joints(), q.len()));
        }
        Ok(())
    }

    fn clamp_to_limits(&self, q: &mut [f64]) {
        if let Some(lim) = &self.joint_limits {
            for (qi, (lo, hi)) in q.iter_mut().zip(lim) {
                *qi = qi.clamp(*lo, *hi);
            }
        }
    }
}

/// End-effector position: `Σ_k L_k (cos θ_k, sin θ_k)` with `θ_k = Σ_{j≤k} q_j`.
pub fn forward_kinematics(q: &[f64], arm: &ArmConfig) -> Result<Point> {
    arm.check_q(q)?;
    let mut theta = 0.0;
    let mut p = [0.0, 0.0];
    for (qi, l) in q.iter().zip(&arm.link_lengths) {
        theta += qi;
        p[0] += l * theta.cos();
        p[1] += l * theta.sin();
    }
    Ok(p)
}

/// Analytic `2 × n` Jacobian of [`forward_kinematics`].
pub fn jacobian(q: &[f64], arm: &ArmConfig) -> Result<Matrix> {
    arm.check_q(q)?;
    let n = arm.joints();
    // Column j sums the contributions of links j..n.
    let mut theta = 0.0;
    let mut link_x = vec![0.0; n];
    let mut link_y = vec![0.0; n];
    for k in 0..n {
        theta += q[k];
        link_x[k] = arm.link_lengths[k] * theta.cos();
        link_y[k] = arm.link_lengths[k] * theta.sin();
    }
    let mut j = Matrix::zeros(2, n);
    let (mut sx, mut sy) = (0.0, 0.0);
    for k in (0..n).rev() {
        sx += link_x[k];
        sy += link_y[k];
        j.set(0, k, -sy);
        j.set(1, k, sx);
    }
    Ok(j)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IkSolution {
    pub q: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// One damped-least-squares update `Δq = Jᵀ(JJᵀ + λ²I)⁻¹ e` with the
/// Cartesian error `e` clamped to [`IK_STEP_CLAMP`].
pub fn dls_step(q: &[f64], target: Point, arm: &ArmConfig) -> Result<Vec<f64>> {
    let p = forward_kinematics(q, arm)?;
    let mut e = [target[0] - p[0], target[1] - p[1]];
    let norm = e[0].hypot(e[1]);
    if norm > IK_STEP_CLAMP {
        e[0] *= IK_STEP_CLAMP / norm;
        e[1] *= IK_STEP_CLAMP / norm;
    }
    let j = jacobian(q, arm)?;
    let lam2 = IK_DAMPING * IK_DAMPING;
    let (r0, r1) = (j.row(0), j.row(1));
    let a = crate::math::dot(r0, r0) + lam2;
    let b = crate::math::dot(r0, r1);
    let d = crate::math::dot(r1, r1) + lam2;
    let det = a * d - b * b;
    let y0 = (d * e[0] - b * e[1]) / det;
    let y1 = (a * e[1] - b * e[0]) / det;
    Ok((0..arm.joints()).map(|k| r0[k] * y0 + r1[k] * y1).collect())
}

pub fn ik_solve(target: Point, q_init: &[f64], arm: &ArmConfig, tol: f64, max_iters: usize) -> Result<IkSolution> {
    arm.check_q(q_init)?;
    let mut q = q_init.to_vec();
    let residual_of = |q: &[f64]| -> Result<f64> {
        let p = forward_kinematics(q, arm)?;
        Ok((target[0] - p[0]).hypot(target[1] - p[1]))
    };
    let mut residual = residual_of(&q)?;
    let mut best = (residual, q.clone());
    for it in 0..max_iters {
        if residual < tol {
            return Ok(IkSolution {
                q,
                iterations: it,
                residual,
            });
        }
        let dq = dls_step(&q, target, arm)?;
        q.iter_mut().zip(&dq).for_each(|(a, b)| *a += b);
        arm.clamp_to_limits(&mut q);
        residual = residual_of(&q)?;
        if residual < best.0 {
            best = (residual, q.clone());
        }
    }
    if residual < tol {
        return Ok(IkSolution {
            q,
            iterations: max_iters,
            residual,
        });
    }
    Err(Error::IkNoConvergence {
        iterations: max_iters,
        residual: best.0,
        best: best.1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
}

impl ArmState {
    pub fn at_rest(q: Vec<f64>) -> Self {
        let n = q.len();
        Self { q, qdot: vec![0.0; n] }
    }

    pub fn kinetic_energy(&self, arm: &ArmConfig) -> f64 {
        self.qdot
            .iter()
            .zip(&arm.inertia)
            .map(|(v, i)| 0.5 * i * v * v)
            .sum()
    }
}

/// Semi-implicit Euler on decoupled damped double integrators:
/// `q̇' = q̇ + dt (τ − c q̇)/I`, `q' = q + dt q̇'`.
pub fn step_dynamics(s: &ArmState, torque: &[f64], arm: &ArmConfig) -> Result<ArmState> {
    let n = arm.joints();
    if torque.len() != n {
        return Err(Error::dim("torque", n, torque.len()));
    }
    if s.q.len() != n || s.qdot.len() != n {
        return Err(Error::dim("arm state", n, s.q.len()));
    }
    if torque.iter().any(|t| !t.is_finite()) {
        return Err(Error::non_finite("torque"));
    }
    let mut next = s.clone();
    for k in 0..n {
        next.qdot[k] = s.qdot[k] + arm.dt * (torque[k] - arm.damping[k] * s.qdot[k]) / arm.inertia[k];
        next.q[k] = s.q[k] + arm.dt * next.qdot[k];
    }
    Ok(next)
}

/// Torque that takes `qdot` to `qdot_next` in one step of [`step_dynamics`].
pub fn inverse_dynamics(qdot: &[f64], qdot_next: &[f64], arm: &ArmConfig) -> Vec<f64> {
    (0..arm.joints())
        .map(|k| arm.inertia[k] * (qdot_next[k] - qdot[k]) / arm.dt + arm.damping[k] * qdot[k])
        .collect()
}
