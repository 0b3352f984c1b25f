//! Shared pieces of the end-to-end acceptance checks.
//!
//! Each check builds its own data from fixed seeds, measures wall time
//! against its budget and reports one `criterion N PASS|FAIL: ...` line.

use std::io::Write;
use std::time::{Duration, Instant};

use swarm_sysid::baselines::{self, Forecaster, ForecasterSpec, ModelKind, TrainConfig};
use swarm_sysid::dataset::{build_methodology, IcMatch, Methodology, MethodologySeeds, Phase, SplitSpec};
use swarm_sysid::simulator::{sample_initial_conditions, simulate, InitRanges};
use swarm_sysid::{mfe_series, Result, SwarmParams, Trajectory};

/// Outcome of one criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub criterion: u32,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn line(&self) -> String {
        let status = if self.pass { "PASS" } else { "FAIL" };
        format!("criterion {} {status}: {}", self.criterion, self.detail)
    }

    /// Prints the verdict line past the test harness's output capture, then
    /// panics on failure.
    pub fn report(&self) {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{}", self.line());
        let _ = out.flush();
        assert!(self.pass, "{}", self.line());
    }
}

/// Wall-clock timer for a criterion's runtime budget.
pub struct Budget {
    start: Instant,
    limit: Duration,
}

impl Budget {
    pub fn start(limit: Duration) -> Self {
        Self {
            start: Instant::now(),
            limit,
        }
    }

    pub fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }

    pub fn within(&self) -> bool {
        self.elapsed() <= self.limit
    }

    pub fn describe(&self) -> String {
        format!("{:.1}s of {}s", self.elapsed().as_secs_f64(), self.limit.as_secs())
    }
}

/// Simulates `n_steps` steps from the uniform initial condition drawn
/// with `ic_seed`, using `sim_seed` for the noise stream.
pub fn seeded_run(n_agents: usize, n_steps: usize, sim_seed: u64, ic_seed: u64) -> Result<Trajectory> {
    let params = SwarmParams {
        n_agents,
        n_steps,
        seed: sim_seed,
        ..SwarmParams::default()
    };
    let ic = sample_initial_conditions(n_agents, &InitRanges::default(), ic_seed)?;
    simulate(&params, &ic)
}

/// A deep baseline trained on the (transient, different) split with its
/// default hyperparameters.
pub fn transient_baseline(kind: ModelKind, n_agents: usize, seeds: MethodologySeeds) -> Result<Forecaster> {
    let params = SwarmParams {
        n_agents,
        ..SwarmParams::default()
    };
    let data = build_methodology(
        Methodology::new(Phase::Transient, IcMatch::Different),
        &SplitSpec::TRANSIENT,
        &params,
        seeds,
        &InitRanges::default(),
    )?;
    let (model, _) = baselines::train(ForecasterSpec::new(kind, n_agents), &data.train_samples, &TrainConfig::for_kind(kind))?;
    Ok(model)
}

/// Tail mean of the MFE between `truth` and `pred`, divided by `radius`.
/// Both must start at the same time.
pub fn normalized_tail_mfe(truth: &Trajectory, pred: &Trajectory, tail_frac: f64, radius: f64) -> f64 {
    mfe_series(truth, pred).tail_mean(tail_frac) / radius
}
