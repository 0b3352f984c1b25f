//! Mean Field Error and steady-state descriptors.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::simulator::Trajectory;
use crate::swarm::{SwarmState, Vec2};

/// Arithmetic mean of all agent positions.
///
/// Each coordinate is summed in sorted order, so the result is bit-for-bit
/// independent of agent ordering.
pub fn mean_field(state: &SwarmState) -> Vec2 {
    let n = state.n_agents().max(1) as f64;
    let sorted_sum = |mut xs: Vec<f64>| {
        xs.sort_by(f64::total_cmp);
        xs.into_iter().sum::<f64>()
    };
    let xs = state.positions.iter().map(|p| p.x).collect();
    let ys = state.positions.iter().map(|p| p.y).collect();
    Vec2::new(sorted_sum(xs) / n, sorted_sum(ys) / n)
}

/// Euclidean distance between the mean fields of two states.
///
/// Only positions enter. The agent counts may differ; that is logged since
/// it usually indicates mismatched data.
pub fn mfe(state_true: &SwarmState, state_pred: &SwarmState) -> f64 {
    if state_true.n_agents() != state_pred.n_agents() {
        log::warn!(
            "mfe between swarms of {} and {} agents",
            state_true.n_agents(),
            state_pred.n_agents()
        );
    }
    (mean_field(state_true) - mean_field(state_pred)).norm()
}

/// Per-step MFE between two trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct MfeSeries {
    pub values: Vec<f64>,
    pub dt: f64,
    /// Time of the first compared state.
    pub t0: f64,
    /// Set when the inputs had different lengths and only the common prefix
    /// was compared.
    pub truncated: bool,
}

impl MfeSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn median(&self) -> f64 {
        median(&self.values)
    }

    /// Mean over the last `frac` of the series (at least one value).
    pub fn tail_mean(&self, frac: f64) -> f64 {
        if self.values.is_empty() {
            return f64::NAN;
        }
        let n = ((self.values.len() as f64 * frac).ceil() as usize).clamp(1, self.values.len());
        let tail = &self.values[self.values.len() - n..];
        tail.iter().sum::<f64>() / n as f64
    }

    /// Least-squares slope of the series against its step index.
    pub fn trend_slope(&self) -> f64 {
        let n = self.values.len() as f64;
        if self.values.len() < 2 {
            return 0.0;
        }
        let mean_x = (n - 1.0) / 2.0;
        let mean_y = self.values.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (k, y) in self.values.iter().enumerate() {
            let dx = k as f64 - mean_x;
            sxy += dx * (y - mean_y);
            sxx += dx * dx;
        }
        sxy / sxx
    }

    /// Two-column `t,mfe` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "t,mfe")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(out, "{:.16e},{:.16e}", self.t0 + k as f64 * self.dt, v)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn mfe_series(traj_true: &Trajectory, traj_pred: &Trajectory) -> MfeSeries {
    let truncated = traj_true.len() != traj_pred.len();
    if truncated {
        log::warn!(
            "mfe_series: lengths differ ({} vs {}), comparing the common prefix",
            traj_true.len(),
            traj_pred.len()
        );
    }
    let values = traj_true
        .states
        .iter()
        .zip(&traj_pred.states)
        .map(|(a, b)| mfe(a, b))
        .collect();
    MfeSeries {
        values,
        dt: traj_true.dt,
        t0: traj_true.states.first().map_or(0.0, |s| s.time),
        truncated,
    }
}

/// Summary statistics of the tail of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyDescriptors {
    pub mean_speed: f64,
    /// Mean distance of agents from the per-step mean field.
    pub ring_radius_mean: f64,
    /// Coefficient of variation of those distances (0 when the mean is 0).
    pub ring_radius_cv: f64,
    pub polarization: f64,
}

pub const DEFAULT_TAIL_FRAC: f64 = 0.2;

/// Number of trailing states covered by `frac` (at least one).
pub(crate) fn tail_len(len: usize, frac: f64) -> usize {
    ((len as f64 * frac).ceil() as usize).clamp(1, len.max(1))
}

/// Statistics over the last `tail_frac` of `traj`. Returns NaN fields for an
/// empty trajectory.
pub fn steady_descriptors(traj: &Trajectory, tail_frac: f64) -> SteadyDescriptors {
    if traj.is_empty() {
        return SteadyDescriptors {
            mean_speed: f64::NAN,
            ring_radius_mean: f64::NAN,
            ring_radius_cv: f64::NAN,
            polarization: f64::NAN,
        };
    }
    let tail = &traj.states[traj.len() - tail_len(traj.len(), tail_frac)..];
    let mut speed = Welford::default();
    let mut radius = Welford::default();
    let mut polarization = 0.0;
    for s in tail {
        let mf = mean_field(s);
        for p in &s.positions {
            radius.push((*p - mf).norm());
        }
        for v in &s.velocities {
            speed.push(v.norm());
        }
        polarization += state_polarization(s);
    }
    let ring_radius_mean = radius.mean();
    SteadyDescriptors {
        mean_speed: speed.mean(),
        ring_radius_mean,
        ring_radius_cv: if ring_radius_mean > 0.0 {
            radius.std() / ring_radius_mean
        } else {
            0.0
        },
        polarization: polarization / tail.len() as f64,
    }
}

/// `|mean_i v_i| / mean_i |v_i|`, or 0 for a swarm at rest.
pub fn state_polarization(state: &SwarmState) -> f64 {
    let n = state.n_agents().max(1) as f64;
    let mean_speed = state.velocities.iter().map(|v| v.norm()).sum::<f64>() / n;
    if mean_speed == 0.0 {
        return 0.0;
    }
    let mean_vel = (1.0 / n) * state.velocities.iter().copied().sum::<Vec2>();
    mean_vel.norm() / mean_speed
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

/// Running mean and population standard deviation.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub(crate) fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub(crate) fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    pub(crate) fn std(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            (self.m2 / self.n as f64).max(0.0).sqrt()
        }
    }
}
