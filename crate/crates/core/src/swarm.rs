//! Swarm state and the ground-truth vector field.
//!
//! Each agent obeys a second-order law
//!
//! ```text
//! dr_i/dt = v_i
//! dv_i/dt = (1 - |v_i|^2) v_i - (a/N) * sum_j (r_i - r_j) + noise
//! ```
//!
//! The self-propulsion term drives every speed towards 1 and the coupling
//! term pulls each agent towards the swarm's mean position. Noise is not part
//! of [`swarm_rhs`]; the integrator in [`crate::simulator`] injects it.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// A point or vector in the plane.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self * rhs.x, self * rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, rhs: Vec2) {
        self.x -= rhs.x;
        self.y -= rhs.y;
    }
}

impl std::iter::Sum for Vec2 {
    fn sum<I: Iterator<Item = Vec2>>(iter: I) -> Vec2 {
        iter.fold(Vec2::ZERO, Add::add)
    }
}

/// How the per-step noise increment scales with the step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseScaling {
    /// Euler–Maruyama: `noise_std * sqrt(dt) * xi`.
    #[default]
    SqrtDt,
    /// Plain Euler treatment of the noise as a force: `noise_std * dt * xi`.
    Dt,
}

impl NoiseScaling {
    pub fn factor(self, dt: f64) -> f64 {
        match self {
            NoiseScaling::SqrtDt => dt.sqrt(),
            NoiseScaling::Dt => dt,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseScaling::SqrtDt => "sqrt_dt",
            NoiseScaling::Dt => "dt",
        }
    }
}

impl std::str::FromStr for NoiseScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt_dt" => Ok(NoiseScaling::SqrtDt),
            "dt" => Ok(NoiseScaling::Dt),
            other => Err(Error::InvalidParams(format!(
                "noise_scaling must be sqrt_dt or dt, got {other:?}"
            ))),
        }
    }
}

/// Model and integration parameters for one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmParams {
    pub n_agents: usize,
    /// Coupling strength `a`.
    pub coupling: f64,
    /// Standard deviation of each noise component.
    pub noise_std: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub noise_scaling: NoiseScaling,
}

impl Default for SwarmParams {
    fn default() -> Self {
        Self {
            n_agents: 32,
            coupling: 1.0,
            noise_std: 1e-3,
            dt: 0.05,
            n_steps: 3000,
            seed: 0,
            noise_scaling: NoiseScaling::SqrtDt,
        }
    }
}

impl SwarmParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::InvalidParams("n_agents must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.coupling >= 0.0 && self.coupling.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "coupling must be nonnegative, got {}",
                self.coupling
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "noise_std must be nonnegative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// Positions and velocities of every agent at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub time: f64,
}

/// Number of scalar features per agent: `[x, y, vx, vy]`.
pub const FEATURES_PER_AGENT: usize = 4;

impl SwarmState {
    pub fn new(positions: Vec<Vec2>, velocities: Vec<Vec2>, time: f64) -> Result<Self> {
        if positions.len() != velocities.len() {
            return Err(Error::AgentCount {
                expected: positions.len(),
                found: velocities.len(),
            });
        }
        let state = Self {
            positions,
            velocities,
            time,
        };
        if !state.is_finite() {
            return Err(Error::NonFinite {
                step: 0,
                context: "swarm state",
            });
        }
        Ok(state)
    }

    pub fn zeros(n_agents: usize) -> Self {
        Self {
            positions: vec![Vec2::ZERO; n_agents],
            velocities: vec![Vec2::ZERO; n_agents],
            time: 0.0,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.positions.len()
    }

    pub fn is_finite(&self) -> bool {
        self.time.is_finite()
            && self.positions.iter().all(|p| p.is_finite())
            && self.velocities.iter().all(|v| v.is_finite())
    }

    /// Largest absolute position or velocity component.
    pub fn max_abs_component(&self) -> f64 {
        self.positions
            .iter()
            .chain(&self.velocities)
            .map(|p| p.x.abs().max(p.y.abs()))
            .fold(0.0, f64::max)
    }

    /// Flattens to `[x0, y0, vx0, vy0, x1, ...]`.
    pub fn to_features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_agents() * FEATURES_PER_AGENT);
        for (p, v) in self.positions.iter().zip(&self.velocities) {
            out.extend_from_slice(&[p.x, p.y, v.x, v.y]);
        }
        out
    }

    pub fn from_features(features: &[f64], time: f64) -> Result<Self> {
        if !features.len().is_multiple_of(FEATURES_PER_AGENT) {
            return Err(Error::InvalidParams(format!(
                "feature vector length {} is not a multiple of {FEATURES_PER_AGENT}",
                features.len()
            )));
        }
        let (positions, velocities) = features
            .chunks_exact(FEATURES_PER_AGENT)
            .map(|c| (Vec2::new(c[0], c[1]), Vec2::new(c[2], c[3])))
            .unzip();
        Ok(Self {
            positions,
            velocities,
            time,
        })
    }

    /// Reorders agents so that agent `k` of the result is agent `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            positions: perm.iter().map(|&i| self.positions[i]).collect(),
            velocities: perm.iter().map(|&i| self.velocities[i]).collect(),
            time: self.time,
        }
    }
}

/// Time derivative of a [`SwarmState`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub d_positions: Vec<Vec2>,
    pub d_velocities: Vec<Vec2>,
}

impl StateDerivative {
    pub fn to_features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.d_positions.len() * FEATURES_PER_AGENT);
        for (p, v) in self.d_positions.iter().zip(&self.d_velocities) {
            out.extend_from_slice(&[p.x, p.y, v.x, v.y]);
        }
        out
    }
}

/// Self-propulsion `(1 - |v|^2) v`.
pub fn intrinsic_accel(v: Vec2) -> Vec2 {
    (1.0 - v.norm_sq()) * v
}

/// Attraction of agent `i` towards the others: `-(a/N) * sum_j (r_i - r_j)`.
pub fn interaction_accel(i: usize, state: &SwarmState, params: &SwarmParams) -> Result<Vec2> {
    let n = state.n_agents();
    if i >= n {
        return Err(Error::AgentIndex {
            index: i,
            n_agents: n,
        });
    }
    Ok(pairwise_pull(i, &state.positions, params.coupling))
}

fn pairwise_pull(i: usize, positions: &[Vec2], coupling: f64) -> Vec2 {
    let ri = positions[i];
    let sum: Vec2 = positions.iter().map(|&rj| ri - rj).sum();
    -(coupling / positions.len() as f64) * sum
}

/// Deterministic right-hand side of the swarm ODE.
pub fn swarm_rhs(state: &SwarmState, params: &SwarmParams) -> StateDerivative {
    let d_velocities = state
        .velocities
        .iter()
        .enumerate()
        .map(|(i, &v)| intrinsic_accel(v) + pairwise_pull(i, &state.positions, params.coupling))
        .collect();
    StateDerivative {
        d_positions: state.velocities.clone(),
        d_velocities,
    }
}
