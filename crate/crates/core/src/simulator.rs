//! Ground-truth trajectories by Euler(–Maruyama) integration of [`swarm_rhs`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::swarm::{swarm_rhs, SwarmParams, SwarmState, Vec2};

/// Any state component larger than this in magnitude aborts integration.
pub const BLOW_UP_THRESHOLD: f64 = 1e6;

/// A uniformly sampled sequence of swarm states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<SwarmState>,
    pub dt: f64,
    pub params_used: SwarmParams,
}

impl Trajectory {
    pub fn new(states: Vec<SwarmState>, dt: f64, params_used: SwarmParams) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
        }
        if let Some(first) = states.first() {
            let n = first.n_agents();
            if let Some(bad) = states.iter().find(|s| s.n_agents() != n) {
                return Err(Error::AgentCount {
                    expected: n,
                    found: bad.n_agents(),
                });
            }
        }
        Ok(Self {
            states,
            dt,
            params_used,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Agent count, or `params_used.n_agents` for an empty trajectory.
    pub fn n_agents(&self) -> usize {
        self.states
            .first()
            .map_or(self.params_used.n_agents, SwarmState::n_agents)
    }

    /// Copies `states[range]` into a new trajectory with the same metadata.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Trajectory {
        Trajectory {
            states: self.states[range].to_vec(),
            dt: self.dt,
            params_used: self.params_used.clone(),
        }
    }

    /// Last `n` states (all of them if the trajectory is shorter).
    pub fn tail(&self, n: usize) -> Trajectory {
        let start = self.len().saturating_sub(n);
        self.slice(start..self.len())
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(|s| s.time)
    }
}

/// Boxes for uniform initial-condition sampling, per coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitRanges {
    pub pos_box: (f64, f64),
    pub vel_box: (f64, f64),
}

impl Default for InitRanges {
    fn default() -> Self {
        Self {
            pos_box: (-1.0, 1.0),
            vel_box: (-1.0, 1.0),
        }
    }
}

impl InitRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("pos_box", self.pos_box), ("vel_box", self.vel_box)] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "{name} must satisfy min <= max, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

/// One Euler step with externally supplied standard-normal draws.
///
/// `noise_draws` holds `2N` values ordered `[xi_0x, xi_0y, xi_1x, ...]`.
pub fn euler_step(
    state: &SwarmState,
    params: &SwarmParams,
    noise_draws: &[f64],
) -> Result<SwarmState> {
    let n = state.n_agents();
    if noise_draws.len() != 2 * n {
        return Err(Error::InvalidParams(format!(
            "expected {} noise draws, got {}",
            2 * n,
            noise_draws.len()
        )));
    }
    let dt = params.dt;
    let noise_scale = params.noise_std * params.noise_scaling.factor(dt);
    let deriv = swarm_rhs(state, params);
    let positions = state
        .positions
        .iter()
        .zip(&deriv.d_positions)
        .map(|(&r, &dr)| r + dt * dr)
        .collect();
    let velocities = state
        .velocities
        .iter()
        .zip(&deriv.d_velocities)
        .zip(noise_draws.chunks_exact(2))
        .map(|((&v, &dv), xi)| v + dt * dv + noise_scale * Vec2::new(xi[0], xi[1]))
        .collect();
    let next = SwarmState {
        positions,
        velocities,
        time: state.time + dt,
    };
    check_bounded(&next, 0)?;
    Ok(next)
}

fn check_bounded(state: &SwarmState, step: usize) -> Result<()> {
    if !state.is_finite() {
        return Err(Error::NonFinite {
            step,
            context: "euler step",
        });
    }
    let magnitude = state.max_abs_component();
    if magnitude > BLOW_UP_THRESHOLD {
        return Err(Error::BlowUp { step, magnitude });
    }
    Ok(())
}

/// Integrates `params.n_steps` Euler steps from `ic`.
///
/// Returns `n_steps + 1` states including `ic`. The noise stream is a
/// ChaCha8 generator seeded with `params.seed`, so the result is a pure
/// function of `(params, ic)`.
pub fn simulate(params: &SwarmParams, ic: &SwarmState) -> Result<Trajectory> {
    params.validate()?;
    if ic.n_agents() != params.n_agents {
        return Err(Error::AgentCount {
            expected: params.n_agents,
            found: ic.n_agents(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut draws = vec![0.0; 2 * params.n_agents];
    let mut states = Vec::with_capacity(params.n_steps + 1);
    states.push(ic.clone());
    let mut current = ic.clone();
    for step in 1..=params.n_steps {
        for d in draws.iter_mut() {
            *d = rng.sample(StandardNormal);
        }
        let mut next = euler_step(&current, params, &draws).map_err(|e| match e {
            Error::BlowUp { magnitude, .. } => Error::BlowUp { step, magnitude },
            Error::NonFinite { context, .. } => Error::NonFinite { step, context },
            other => other,
        })?;
        // Avoid accumulating rounding drift in the clock.
        next.time = ic.time + step as f64 * params.dt;
        states.push(next.clone());
        current = next;
    }
    Trajectory::new(states, params.dt, params.clone())
}

/// Uniform i.i.d. positions and velocities inside `ranges`.
pub fn sample_initial_conditions(
    n_agents: usize,
    ranges: &InitRanges,
    seed: u64,
) -> Result<SwarmState> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |(lo, hi): (f64, f64)| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    };
    let mut positions = Vec::with_capacity(n_agents);
    let mut velocities = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        positions.push(Vec2::new(uniform(ranges.pos_box), uniform(ranges.pos_box)));
        velocities.push(Vec2::new(uniform(ranges.vel_box), uniform(ranges.vel_box)));
    }
    SwarmState::new(positions, velocities, 0.0)
}

/// Where to cut a trajectory into its transient and steady parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitPolicy {
    FixedIndex(usize),
    /// First index `k` such that every window of `window` states starting at
    /// or after `k` has a pooled ring-radius coefficient of variation at most
    /// `cv_threshold`.
    AutoDetect { window: usize, cv_threshold: f64 },
}

impl SplitPolicy {
    pub fn auto() -> Self {
        SplitPolicy::AutoDetect {
            window: 20,
            cv_threshold: 0.05,
        }
    }
}

/// Returns `(transient, steady)`; their concatenation is `traj`.
pub fn split_transient_steady(
    traj: &Trajectory,
    policy: SplitPolicy,
) -> Result<(Trajectory, Trajectory)> {
    if traj.is_empty() {
        return Err(Error::TooShort {
            what: "split_transient_steady",
            needed: 1,
            found: 0,
        });
    }
    let k = match policy {
        SplitPolicy::FixedIndex(k) => {
            if k > traj.len() {
                return Err(Error::InvalidParams(format!(
                    "split index {k} beyond trajectory length {}",
                    traj.len()
                )));
            }
            k
        }
        SplitPolicy::AutoDetect {
            window,
            cv_threshold,
        } => detect_steady_onset(traj, window, cv_threshold)?,
    };
    Ok((traj.slice(0..k), traj.slice(k..traj.len())))
}

fn detect_steady_onset(traj: &Trajectory, window: usize, cv_threshold: f64) -> Result<usize> {
    if window == 0 || window > traj.len() {
        return Err(Error::NoSteadySegment(format!(
            "window {window} does not fit a trajectory of {} states",
            traj.len()
        )));
    }
    // Per-state sums of radius and squared radius about the mean field.
    let moments: Vec<(f64, f64, f64)> = traj
        .states
        .iter()
        .map(|s| {
            let mf = crate::metrics::mean_field(s);
            s.positions.iter().fold((0.0, 0.0, 0.0), |(c, s1, s2), p| {
                let r = (*p - mf).norm();
                (c + 1.0, s1 + r, s2 + r * r)
            })
        })
        .collect();
    let n_windows = traj.len() - window + 1;
    let window_cv = |start: usize| {
        let (c, s1, s2) = moments[start..start + window]
            .iter()
            .fold((0.0, 0.0, 0.0), |acc, m| (acc.0 + m.0, acc.1 + m.1, acc.2 + m.2));
        let mean = s1 / c;
        if mean <= 0.0 {
            return f64::INFINITY;
        }
        let var = (s2 / c - mean * mean).max(0.0);
        var.sqrt() / mean
    };
    let mut onset = None;
    let mut last_cv = f64::NAN;
    for start in (0..n_windows).rev() {
        let cv = window_cv(start);
        last_cv = cv;
        if cv <= cv_threshold {
            onset = Some(start);
        } else {
            break;
        }
    }
    onset.ok_or_else(|| {
        Error::NoSteadySegment(format!(
            "ring radius cv over the final {window}-state window is {last_cv:.4}, above {cv_threshold}"
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swarm::NoiseScaling;

    fn noise_free(n: usize, a: f64, dt: f64, n_steps: usize) -> SwarmParams {
        SwarmParams {
            n_agents: n,
            coupling: a,
            noise_std: 0.0,
            dt,
            n_steps,
            seed: 0,
            noise_scaling: NoiseScaling::SqrtDt,
        }
    }

    #[test]
    fn step_at_unit_speed_equilibrium() {
        let p = noise_free(1, 1.0, 0.1, 1);
        let s = SwarmState::new(vec![Vec2::ZERO], vec![Vec2::new(1.0, 0.0)], 0.0).unwrap();
        let next = euler_step(&s, &p, &[0.0, 0.0]).unwrap();
        assert!((next.positions[0] - Vec2::new(0.1, 0.0)).norm() < 1e-15);
        assert_eq!(next.velocities[0], Vec2::new(1.0, 0.0));
        assert!((next.time - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_state_stays_zero() {
        let p = noise_free(3, 1.0, 0.05, 1);
        let s = SwarmState::zeros(3);
        let next = euler_step(&s, &p, &[0.3; 6]).unwrap();
        assert_eq!(next.positions, s.positions);
        assert_eq!(next.velocities, s.velocities);
        assert!((next.time - 0.05).abs() < 1e-15);
    }

    #[test]
    fn wrong_draw_count_rejected() {
        let p = noise_free(2, 1.0, 0.05, 1);
        assert!(euler_step(&SwarmState::zeros(2), &p, &[0.0; 3]).is_err());
    }

    #[test]
    fn noise_increment_statistics() {
        let p = SwarmParams {
            n_agents: 1,
            noise_std: 0.2,
            dt: 0.01,
            ..SwarmParams::default()
        };
        let s = SwarmState::new(vec![Vec2::ZERO], vec![Vec2::new(0.5, -0.2)], 0.0).unwrap();
        let clean = euler_step(&s, &p, &[0.0, 0.0]).unwrap().velocities[0];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let incs: Vec<f64> = (0..n)
            .map(|_| {
                let xi = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                (euler_step(&s, &p, &xi).unwrap().velocities[0] - clean).x
            })
            .collect();
        let mean = incs.iter().sum::<f64>() / n as f64;
        let std = (incs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let expected = 0.2 * 0.01f64.sqrt();
        assert!((std / expected - 1.0).abs() < 0.05, "std {std} vs {expected}");
    }

    #[test]
    fn dt_noise_scaling() {
        let p = SwarmParams {
            n_agents: 1,
            noise_std: 1.0,
            dt: 0.04,
            noise_scaling: NoiseScaling::Dt,
            ..SwarmParams::default()
        };
        let s = SwarmState::zeros(1);
        let next = euler_step(&s, &p, &[1.0, 0.0]).unwrap();
        assert!((next.velocities[0].x - 0.04).abs() < 1e-15);
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        let p = noise_free(1, 0.0, 1.0, 50);
        let ic = SwarmState::new(vec![Vec2::ZERO], vec![Vec2::new(3.0, 0.0)], 0.0).unwrap();
        match simulate(&p, &ic) {
            Err(Error::BlowUp { step, .. }) | Err(Error::NonFinite { step, .. }) => {
                assert!((1..=50).contains(&step))
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn seeded_determinism() {
        let p = SwarmParams {
            n_agents: 5,
            n_steps: 200,
            seed: 42,
            ..SwarmParams::default()
        };
        let ic = sample_initial_conditions(5, &InitRanges::default(), 7).unwrap();
        let a = simulate(&p, &ic).unwrap();
        let b = simulate(&p, &ic).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 201);
        for (k, s) in a.states.iter().enumerate() {
            assert!((s.time - k as f64 * p.dt).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_free_ignores_seed() {
        let mut p = noise_free(4, 1.0, 0.05, 100);
        let ic = sample_initial_conditions(4, &InitRanges::default(), 3).unwrap();
        let a = simulate(&p, &ic).unwrap();
        p.seed = 999;
        let b = simulate(&p, &ic).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn speed_follows_closed_form() {
        // ds/dt = (1 - s^2) s  =>  s(t)^2 = s0^2 e^{2t} / (1 - s0^2 + s0^2 e^{2t})
        let dt = 1e-3;
        let p = noise_free(1, 0.0, dt, 5000);
        let s0: f64 = 0.5;
        let ic = SwarmState::new(vec![Vec2::ZERO], vec![Vec2::new(s0, 0.0)], 0.0).unwrap();
        let traj = simulate(&p, &ic).unwrap();
        for state in traj.states.iter().step_by(250) {
            let t = state.time;
            let e = (2.0 * t).exp();
            let exact = (s0 * s0 * e / (1.0 - s0 * s0 + s0 * s0 * e)).sqrt();
            let got = state.velocities[0].norm();
            assert!((got - exact).abs() < 1e-3, "t={t}: {got} vs {exact}");
        }
    }

    #[test]
    fn euler_is_first_order() {
        let ic = sample_initial_conditions(4, &InitRanges::default(), 5).unwrap();
        let horizon = 2.0;
        let endpoint = |dt: f64| {
            let n = (horizon / dt).round() as usize;
            simulate(&noise_free(4, 1.0, dt, n), &ic)
                .unwrap()
                .states
                .last()
                .unwrap()
                .to_features()
        };
        let reference = endpoint(0.05 / 64.0);
        let err = |x: &[f64]| {
            x.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let e1 = err(&endpoint(0.05));
        let e2 = err(&endpoint(0.025));
        let ratio = e1 / e2;
        assert!((1.7..2.4).contains(&ratio), "error ratio {ratio}");
    }

    #[test]
    fn initial_conditions_respect_boxes_and_seeds() {
        let ranges = InitRanges {
            pos_box: (-2.0, 0.5),
            vel_box: (0.1, 0.3),
        };
        let s = sample_initial_conditions(50, &ranges, 1).unwrap();
        for (p, v) in s.positions.iter().zip(&s.velocities) {
            assert!((-2.0..0.5).contains(&p.x) && (-2.0..0.5).contains(&p.y));
            assert!((0.1..0.3).contains(&v.x) && (0.1..0.3).contains(&v.y));
        }
        assert_eq!(s, sample_initial_conditions(50, &ranges, 1).unwrap());
        assert_ne!(s, sample_initial_conditions(50, &ranges, 2).unwrap());
        let bad = InitRanges {
            pos_box: (1.0, -1.0),
            ..InitRanges::default()
        };
        assert!(sample_initial_conditions(3, &bad, 0).is_err());
    }

    fn short_run(n_states: usize) -> Trajectory {
        let p = SwarmParams {
            n_agents: 3,
            n_steps: n_states - 1,
            ..SwarmParams::default()
        };
        let ic = sample_initial_conditions(3, &InitRanges::default(), 0).unwrap();
        simulate(&p, &ic).unwrap()
    }

    #[test]
    fn fixed_splits() {
        let traj = short_run(250);
        let (a, b) = split_transient_steady(&traj, SplitPolicy::FixedIndex(0)).unwrap();
        assert!(a.is_empty());
        assert_eq!(b, traj);

        let (a, b) = split_transient_steady(&traj, SplitPolicy::FixedIndex(150)).unwrap();
        assert_eq!((a.len(), b.len()), (150, 100));
        let mut joined = a.states.clone();
        joined.extend(b.states.iter().cloned());
        assert_eq!(joined, traj.states);

        assert!(split_transient_steady(&traj, SplitPolicy::FixedIndex(251)).is_err());
    }

    #[test]
    fn auto_detect_finds_constructed_ring() {
        // Random scatter for 100 states, then an exact rotating unit ring.
        let n = 8;
        let mut states = Vec::new();
        for k in 0..100 {
            let s = sample_initial_conditions(n, &InitRanges::default(), k).unwrap();
            states.push(SwarmState { time: k as f64 * 0.05, ..s });
        }
        for k in 100..300 {
            let t = k as f64 * 0.05;
            let positions = (0..n)
                .map(|i| {
                    let th = t + std::f64::consts::TAU * i as f64 / n as f64;
                    Vec2::new(th.cos(), th.sin())
                })
                .collect();
            states.push(SwarmState {
                positions,
                velocities: vec![Vec2::new(0.0, 1.0); n],
                time: t,
            });
        }
        let traj = Trajectory::new(states, 0.05, SwarmParams::default()).unwrap();
        let policy = SplitPolicy::auto();
        let (pre, post) = split_transient_steady(&traj, policy).unwrap();
        let SplitPolicy::AutoDetect { window, .. } = policy else {
            unreachable!()
        };
        assert!(pre.len() <= 100 + window, "onset {}", pre.len());
        assert_eq!(pre.len() + post.len(), traj.len());
    }

    #[test]
    fn auto_detect_reports_missing_steady_state() {
        let traj = short_run(60);
        let err = split_transient_steady(
            &traj,
            SplitPolicy::AutoDetect {
                window: 10,
                cv_threshold: 1e-9,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("ring radius cv"), "{err}");
    }
}
