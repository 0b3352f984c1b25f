//! Flat `key = value` experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use swarm_sysid::baselines::{ModelKind, TrainConfig};
use swarm_sysid::dataset::{IcMatch, Methodology, MethodologySeeds, Phase, SplitSpec};
use swarm_sysid::node::{NodeArchitecture, NodeTrainConfig};
use swarm_sysid::ols::OlsConfig;
use swarm_sysid::{NoiseScaling, SwarmParams};

use crate::CliError;

/// Any model the runner can train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelChoice {
    Ols,
    Mlp,
    Rnn,
    Cnn,
    Node,
}

impl ModelChoice {
    pub const ALL: [ModelChoice; 5] = [Self::Ols, Self::Mlp, Self::Rnn, Self::Cnn, Self::Node];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ols => "ols",
            Self::Mlp => "mlp",
            Self::Rnn => "rnn",
            Self::Cnn => "cnn",
            Self::Node => "node",
        }
    }

    pub fn deep_kind(self) -> Option<ModelKind> {
        match self {
            Self::Mlp => Some(ModelKind::Mlp),
            Self::Rnn => Some(ModelKind::Rnn),
            Self::Cnn => Some(ModelKind::Cnn),
            Self::Ols | Self::Node => None,
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown model {s:?}, expected one of ols, mlp, rnn, cnn, node"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_agents: usize,
    pub coupling: f64,
    pub noise_std: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub noise_scaling: NoiseScaling,
    /// Noise stream seed; also the base of the IC seeds when those are unset.
    pub seed: u64,
    pub train_ic_seed: Option<u64>,
    pub test_ic_seed: Option<u64>,
    pub phase: Phase,
    pub ic: IcMatch,
    pub model: ModelChoice,
    pub window_len: usize,
    pub ols_in_samples: usize,
    pub ols_horizon: usize,
    pub ridge: f64,
    pub hidden: usize,
    /// Unset means the per-model default.
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub standardize: bool,
    pub node_hidden: usize,
    pub node_cubic_input: bool,
    pub node_odd_symmetric: bool,
    pub node_epochs: usize,
    pub node_learning_rate: f64,
    pub node_solver_step: f64,
    pub node_segment_length: usize,
    pub node_segment_stride: usize,
    /// Swarm size of the neural ODE training runs; 0 trains on the
    /// methodology's own training segment.
    pub node_train_agents: usize,
    pub node_train_runs: usize,
    pub node_train_steps: usize,
    pub tail_frac: f64,
    pub models: Vec<ModelChoice>,
    pub methodologies: Vec<Methodology>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sim = SwarmParams::default();
        Self {
            n_agents: sim.n_agents,
            coupling: sim.coupling,
            noise_std: sim.noise_std,
            dt: sim.dt,
            n_steps: sim.n_steps,
            noise_scaling: sim.noise_scaling,
            seed: 0,
            train_ic_seed: None,
            test_ic_seed: None,
            phase: Phase::Steady,
            ic: IcMatch::SameAsTest,
            model: ModelChoice::Ols,
            window_len: 5,
            ols_in_samples: 10,
            ols_horizon: 1,
            ridge: 0.0,
            hidden: 256,
            epochs: None,
            learning_rate: None,
            batch_size: 1,
            standardize: false,
            node_hidden: 64,
            node_cubic_input: true,
            node_odd_symmetric: true,
            node_epochs: 200,
            node_learning_rate: 0.01,
            node_solver_step: 0.05,
            node_segment_length: 50,
            node_segment_stride: 25,
            node_train_agents: 0,
            node_train_runs: 4,
            node_train_steps: 250,
            tail_frac: 0.2,
            models: ModelChoice::ALL.to_vec(),
            methodologies: Methodology::all().to_vec(),
            out: PathBuf::from("out"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "n_agents",
    "coupling",
    "noise_std",
    "dt",
    "n_steps",
    "noise_scaling",
    "seed",
    "train_ic_seed",
    "test_ic_seed",
    "phase",
    "ic",
    "model",
    "window_len",
    "ols_in_samples",
    "ols_horizon",
    "ridge",
    "hidden",
    "epochs",
    "learning_rate",
    "batch_size",
    "standardize",
    "node_hidden",
    "node_cubic_input",
    "node_odd_symmetric",
    "node_epochs",
    "node_learning_rate",
    "node_solver_step",
    "node_segment_length",
    "node_segment_stride",
    "node_train_agents",
    "node_train_runs",
    "node_train_steps",
    "tail_frac",
    "models",
    "methodologies",
    "out",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value {value:?} for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!("invalid value {value:?} for key '{key}'"))),
    }
}

fn parse_methodology(key: &str, value: &str) -> Result<Methodology, CliError> {
    let bad = || CliError::Config(format!("invalid methodology {value:?} for key '{key}', expected phase/ic"));
    let (phase, ic) = value.split_once('/').ok_or_else(bad)?;
    Ok(Methodology::new(
        phase.trim().parse().map_err(|_| bad())?,
        ic.trim().parse().map_err(|_| bad())?,
    ))
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value, found {line:?}", i + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "n_agents" => self.n_agents = parse(key, value)?,
            "coupling" => self.coupling = parse(key, value)?,
            "noise_std" => self.noise_std = parse(key, value)?,
            "dt" => self.dt = parse(key, value)?,
            "n_steps" => self.n_steps = parse(key, value)?,
            "noise_scaling" => self.noise_scaling = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "train_ic_seed" => self.train_ic_seed = Some(parse(key, value)?),
            "test_ic_seed" => self.test_ic_seed = Some(parse(key, value)?),
            "phase" => self.phase = parse(key, value)?,
            "ic" => self.ic = parse(key, value)?,
            "model" => self.model = parse(key, value)?,
            "window_len" => self.window_len = parse(key, value)?,
            "ols_in_samples" => self.ols_in_samples = parse(key, value)?,
            "ols_horizon" => self.ols_horizon = parse(key, value)?,
            "ridge" => self.ridge = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "epochs" => self.epochs = Some(parse(key, value)?),
            "learning_rate" => self.learning_rate = Some(parse(key, value)?),
            "batch_size" => self.batch_size = parse(key, value)?,
            "standardize" => self.standardize = parse_bool(key, value)?,
            "node_hidden" => self.node_hidden = parse(key, value)?,
            "node_cubic_input" => self.node_cubic_input = parse_bool(key, value)?,
            "node_odd_symmetric" => self.node_odd_symmetric = parse_bool(key, value)?,
            "node_epochs" => self.node_epochs = parse(key, value)?,
            "node_learning_rate" => self.node_learning_rate = parse(key, value)?,
            "node_solver_step" => self.node_solver_step = parse(key, value)?,
            "node_segment_length" => self.node_segment_length = parse(key, value)?,
            "node_segment_stride" => self.node_segment_stride = parse(key, value)?,
            "node_train_agents" => self.node_train_agents = parse(key, value)?,
            "node_train_runs" => self.node_train_runs = parse(key, value)?,
            "node_train_steps" => self.node_train_steps = parse(key, value)?,
            "tail_frac" => self.tail_frac = parse(key, value)?,
            "models" => {
                self.models = value
                    .split(',')
                    .map(|m| m.trim().parse().map_err(CliError::Config))
                    .collect::<Result<_, _>>()?;
            }
            "methodologies" => {
                self.methodologies = if value == "all" {
                    Methodology::all().to_vec()
                } else {
                    value
                        .split(',')
                        .map(|m| parse_methodology(key, m.trim()))
                        .collect::<Result<_, _>>()?
                };
            }
            "out" => self.out = PathBuf::from(value),
            _ => return Err(CliError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn sim_params(&self) -> SwarmParams {
        SwarmParams {
            n_agents: self.n_agents,
            coupling: self.coupling,
            noise_std: self.noise_std,
            dt: self.dt,
            n_steps: self.n_steps,
            seed: self.seed,
            noise_scaling: self.noise_scaling,
        }
    }

    pub fn seeds(&self) -> MethodologySeeds {
        MethodologySeeds {
            sim: self.seed,
            train_ic: self.train_ic_seed.unwrap_or(self.seed.wrapping_add(1)),
            test_ic: self.test_ic_seed.unwrap_or(self.seed.wrapping_add(2)),
        }
    }

    pub fn methodology(&self) -> Methodology {
        Methodology::new(self.phase, self.ic)
    }

    /// Split for `model`; OLS needs its own, longer window.
    pub fn split(&self, phase: Phase, model: ModelChoice) -> SplitSpec {
        let w = match model {
            ModelChoice::Ols => self.ols_in_samples,
            _ => self.window_len,
        };
        SplitSpec::for_phase(phase).with_window(w)
    }

    pub fn ols_config(&self) -> OlsConfig {
        OlsConfig {
            in_samples: self.ols_in_samples,
            horizon: self.ols_horizon,
            ridge: self.ridge,
        }
    }

    pub fn train_config(&self, kind: ModelKind) -> TrainConfig {
        let base = TrainConfig::for_kind(kind);
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size,
            standardize: self.standardize,
            seed: self.seed,
        }
    }

    pub fn node_arch(&self) -> NodeArchitecture {
        NodeArchitecture {
            hidden: self.node_hidden,
            cubic_input: self.node_cubic_input,
            odd_symmetric: self.node_odd_symmetric,
        }
    }

    pub fn node_train_config(&self) -> NodeTrainConfig {
        NodeTrainConfig {
            solver_step: self.node_solver_step,
            learning_rate: self.node_learning_rate,
            segment_length: self.node_segment_length,
            segment_stride: self.node_segment_stride,
            epochs: self.node_epochs,
            seed: self.seed,
        }
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "default".into());
        let mut out = String::new();
        for key in KEYS {
            let value = match *key {
                "n_agents" => self.n_agents.to_string(),
                "coupling" => format!("{:?}", self.coupling),
                "noise_std" => format!("{:?}", self.noise_std),
                "dt" => format!("{:?}", self.dt),
                "n_steps" => self.n_steps.to_string(),
                "noise_scaling" => self.noise_scaling.as_str().into(),
                "seed" => self.seed.to_string(),
                "train_ic_seed" => self.seeds().train_ic.to_string(),
                "test_ic_seed" => self.seeds().test_ic.to_string(),
                "phase" => self.phase.as_str().into(),
                "ic" => self.ic.as_str().into(),
                "model" => self.model.as_str().into(),
                "window_len" => self.window_len.to_string(),
                "ols_in_samples" => self.ols_in_samples.to_string(),
                "ols_horizon" => self.ols_horizon.to_string(),
                "ridge" => format!("{:?}", self.ridge),
                "hidden" => self.hidden.to_string(),
                "epochs" => opt(self.epochs.map(|e| e.to_string())),
                "learning_rate" => opt(self.learning_rate.map(|l| format!("{l:?}"))),
                "batch_size" => self.batch_size.to_string(),
                "standardize" => self.standardize.to_string(),
                "node_hidden" => self.node_hidden.to_string(),
                "node_cubic_input" => self.node_cubic_input.to_string(),
                "node_odd_symmetric" => self.node_odd_symmetric.to_string(),
                "node_epochs" => self.node_epochs.to_string(),
                "node_learning_rate" => format!("{:?}", self.node_learning_rate),
                "node_solver_step" => format!("{:?}", self.node_solver_step),
                "node_segment_length" => self.node_segment_length.to_string(),
                "node_segment_stride" => self.node_segment_stride.to_string(),
                "node_train_agents" => self.node_train_agents.to_string(),
                "node_train_runs" => self.node_train_runs.to_string(),
                "node_train_steps" => self.node_train_steps.to_string(),
                "tail_frac" => format!("{:?}", self.tail_frac),
                "models" => self.models.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","),
                "methodologies" => self.methodologies.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
                "out" => self.out.display().to_string(),
                _ => unreachable!("every key is listed"),
            };
            if !(value == "default" && matches!(*key, "epochs" | "learning_rate")) {
                out.push_str(&format!("{key} = {value}\n"));
            }
        }
        out
    }
}
