//! Steady-state regime classification from the tail of a trajectory.
//!
//! Three regimes are recognised:
//!
//! * **Rotation**: the swarm is a tight cluster whose mean field travels
//!   around a circle.
//! * **Flocking**: velocities are aligned (high polarization) and the mean
//!   field translates.
//! * **Milling**: agents circle the mean field on a ring of nearly constant
//!   radius.
//!
//! Rotation is tested first because a tight rotating cluster is also highly
//! polarized at every instant.

use crate::error::{Error, Result};
use crate::metrics::{mean_field, state_polarization, tail_len, Welford};
use crate::simulator::Trajectory;
use crate::swarm::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Milling,
    Rotation,
    Flocking,
    Unclassified,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Milling => "milling",
            Regime::Rotation => "rotation",
            Regime::Flocking => "flocking",
            Regime::Unclassified => "unclassified",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Decision thresholds. All are dimensionless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeThresholds {
    /// Flocking needs tail polarization at or above this.
    pub flocking_polarization: f64,
    /// Milling needs the ring radius cv at or below this.
    pub milling_radius_cv: f64,
    /// Milling needs `cluster_spread / (2 * ring_radius_mean)` at or above this.
    pub milling_spread_ratio: f64,
    /// Rotation needs `cluster_spread / orbit_radius` at or below this.
    pub rotation_spread_ratio: f64,
    /// Rotation needs the mean field to move at least this fraction of the
    /// mean agent speed.
    pub rotation_min_speed_frac: f64,
    /// Rotation needs the mean-field heading to turn at least this much
    /// (radians) across the window.
    pub rotation_min_turn: f64,
    /// Rotation needs `|sum of turns| / sum of |turns|` at or above this, so
    /// a jittering mean field does not count as orbiting.
    pub rotation_turn_consistency: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            flocking_polarization: 0.9,
            milling_radius_cv: 0.2,
            milling_spread_ratio: 0.25,
            rotation_spread_ratio: 0.5,
            rotation_min_speed_frac: 0.5,
            rotation_min_turn: std::f64::consts::FRAC_PI_2,
            rotation_turn_consistency: 0.9,
        }
    }
}

/// Classification result with the diagnostics that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeLabel {
    pub regime: Regime,
    pub polarization: f64,
    pub ring_radius_mean: f64,
    pub ring_radius_cv: f64,
    /// Mean pairwise distance between agents.
    pub cluster_spread: f64,
    pub mean_speed: f64,
    /// Mean speed of the mean field itself.
    pub mean_field_speed: f64,
    /// Total absolute turning of the mean-field heading over the window.
    pub mean_field_turn: f64,
    /// Mean step length over mean heading change; infinite for a straight path.
    pub orbit_radius: f64,
}

pub const MIN_CLASSIFY_LEN: usize = 10;

pub fn classify_regime(traj: &Trajectory, window_frac: f64) -> Result<RegimeLabel> {
    classify_regime_with(traj, window_frac, &RegimeThresholds::default())
}

pub fn classify_regime_with(
    traj: &Trajectory,
    window_frac: f64,
    thresholds: &RegimeThresholds,
) -> Result<RegimeLabel> {
    if traj.len() < MIN_CLASSIFY_LEN {
        return Err(Error::TooShort {
            what: "classify_regime",
            needed: MIN_CLASSIFY_LEN,
            found: traj.len(),
        });
    }
    if !(window_frac > 0.0 && window_frac <= 1.0) {
        return Err(Error::InvalidParams(format!(
            "window_frac must lie in (0, 1], got {window_frac}"
        )));
    }
    let n_tail = tail_len(traj.len(), window_frac).max(3);
    let tail = &traj.states[traj.len() - n_tail..];

    let mut radius = Welford::default();
    let mut speed = Welford::default();
    let mut polarization = 0.0;
    let mut spread = 0.0;
    let mut centers = Vec::with_capacity(tail.len());
    for s in tail {
        let mf = mean_field(s);
        centers.push(mf);
        for p in &s.positions {
            radius.push((*p - mf).norm());
        }
        for v in &s.velocities {
            speed.push(v.norm());
        }
        polarization += state_polarization(s);
        spread += mean_pairwise_distance(&s.positions);
    }
    let polarization = polarization / tail.len() as f64;
    let cluster_spread = spread / tail.len() as f64;
    let ring_radius_mean = radius.mean();
    let ring_radius_cv = if ring_radius_mean > 0.0 {
        radius.std() / ring_radius_mean
    } else {
        0.0
    };
    let mean_speed = speed.mean();

    // Mean-field path: length, speed and accumulated heading change.
    let steps: Vec<Vec2> = centers.windows(2).map(|w| w[1] - w[0]).collect();
    let path_len: f64 = steps.iter().map(|d| d.norm()).sum();
    let mean_field_speed = path_len / (steps.len() as f64 * traj.dt);
    let mut turn = 0.0;
    let mut abs_turn = 0.0;
    let mut n_turns = 0usize;
    for w in steps.windows(2) {
        if w[0].norm() > 0.0 && w[1].norm() > 0.0 {
            let cross = w[0].x * w[1].y - w[0].y * w[1].x;
            let dtheta = cross.atan2(w[0].dot(w[1]));
            turn += dtheta;
            abs_turn += dtheta.abs();
            n_turns += 1;
        }
    }
    let mean_field_turn = turn.abs();
    let turn_consistency = if abs_turn > 0.0 { mean_field_turn / abs_turn } else { 0.0 };
    // Mean step length over mean turn per step.
    let orbit_radius = if mean_field_turn > 0.0 {
        (path_len / steps.len() as f64) / (mean_field_turn / n_turns as f64)
    } else {
        f64::INFINITY
    };

    let is_rotation = mean_field_speed >= thresholds.rotation_min_speed_frac * mean_speed
        && mean_speed > 0.0
        && mean_field_turn >= thresholds.rotation_min_turn
        && turn_consistency >= thresholds.rotation_turn_consistency
        && cluster_spread <= thresholds.rotation_spread_ratio * orbit_radius;
    let is_flocking = polarization >= thresholds.flocking_polarization;
    let is_milling = polarization < thresholds.flocking_polarization
        && ring_radius_mean > 0.0
        && ring_radius_cv <= thresholds.milling_radius_cv
        && cluster_spread >= thresholds.milling_spread_ratio * 2.0 * ring_radius_mean;

    let regime = if is_rotation {
        Regime::Rotation
    } else if is_flocking {
        Regime::Flocking
    } else if is_milling {
        Regime::Milling
    } else {
        Regime::Unclassified
    };
    Ok(RegimeLabel {
        regime,
        polarization,
        ring_radius_mean,
        ring_radius_cv,
        cluster_spread,
        mean_speed,
        mean_field_speed,
        mean_field_turn,
        orbit_radius,
    })
}

fn mean_pairwise_distance(positions: &[Vec2]) -> f64 {
    let n = positions.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += (positions[i] - positions[j]).norm();
        }
    }
    total / (n * (n - 1) / 2) as f64
}
