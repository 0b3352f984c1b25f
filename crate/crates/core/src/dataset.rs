//! Sliding-window samples, the four train/test methodologies, and
//! trajectory CSV persistence.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::simulator::{sample_initial_conditions, simulate, InitRanges, Trajectory};
use crate::swarm::{SwarmParams, SwarmState, FEATURES_PER_AGENT};

pub const DEFAULT_WINDOW_LEN: usize = 5;

/// A window of consecutive flattened states and the state that follows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    /// `window_len` rows of `4N` features, row-major.
    pub input: Vec<f64>,
    /// `4N` features of the target step.
    pub target: Vec<f64>,
    pub window_len: usize,
}

impl WindowedSample {
    pub fn width(&self) -> usize {
        self.target.len()
    }

    pub fn n_agents(&self) -> usize {
        self.width() / FEATURES_PER_AGENT
    }

    /// Features of step `k` of the input window.
    pub fn step(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.input[k * w..(k + 1) * w]
    }
}

/// Samples whose target lies `horizon` steps after the window's last state.
///
/// Sample `k` reads steps `[k, k + window_len)` and targets step
/// `k + window_len - 1 + horizon`.
pub fn fold_windows_ahead(traj: &Trajectory, window_len: usize, horizon: usize) -> Result<Vec<WindowedSample>> {
    if window_len == 0 || horizon == 0 {
        return Err(Error::InvalidParams(format!(
            "window_len and horizon must be positive, got {window_len} and {horizon}"
        )));
    }
    let needed = window_len + horizon;
    if traj.len() < needed {
        return Err(Error::TooShort {
            what: "fold_windows",
            needed,
            found: traj.len(),
        });
    }
    let features: Vec<Vec<f64>> = traj.states.iter().map(SwarmState::to_features).collect();
    Ok((0..=traj.len() - needed)
        .map(|k| WindowedSample {
            input: features[k..k + window_len].concat(),
            target: features[k + window_len - 1 + horizon].clone(),
            window_len,
        })
        .collect())
}

/// One-step-ahead samples: `len - window_len` of them.
pub fn fold_windows(traj: &Trajectory, window_len: usize) -> Result<Vec<WindowedSample>> {
    fold_windows_ahead(traj, window_len, 1)
}

/// Sliding-window rollout: predict the next state from the last
/// `window_len` states, append it, repeat `n_steps` times.
///
/// Returns only the predicted states, timed `dt` apart after the seed
/// window's last state.
pub fn autoregressive_rollout(
    seed_window: &Trajectory,
    window_len: usize,
    n_steps: usize,
    mut predict: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<Trajectory> {
    if seed_window.len() < window_len || window_len == 0 {
        return Err(Error::TooShort {
            what: "rollout seed window",
            needed: window_len.max(1),
            found: seed_window.len(),
        });
    }
    let width = seed_window.n_agents() * FEATURES_PER_AGENT;
    let mut window: Vec<f64> = seed_window.states[seed_window.len() - window_len..]
        .iter()
        .flat_map(SwarmState::to_features)
        .collect();
    let t_last = seed_window.states.last().map_or(0.0, |s| s.time);
    let mut states = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        let next = predict(&window)?;
        if next.len() != width {
            return Err(Error::Shape {
                op: "rollout prediction",
                lhs: vec![width],
                rhs: vec![next.len()],
            });
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step,
                context: "rollout prediction",
            });
        }
        let time = t_last + (step + 1) as f64 * seed_window.dt;
        states.push(SwarmState::from_features(&next, time)?);
        window.drain(..width);
        window.extend_from_slice(&next);
    }
    let params = SwarmParams {
        n_steps,
        ..seed_window.params_used.clone()
    };
    Trajectory::new(states, seed_window.dt, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Transient,
    Steady,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IcMatch {
    SameAsTest,
    Different,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Transient => "transient",
            Phase::Steady => "steady",
        }
    }
}

impl IcMatch {
    pub fn as_str(self) -> &'static str {
        match self {
            IcMatch::SameAsTest => "same",
            IcMatch::Different => "different",
        }
    }
}

impl FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transient" => Ok(Phase::Transient),
            "steady" => Ok(Phase::Steady),
            other => Err(Error::InvalidParams(format!("phase must be transient or steady, got {other:?}"))),
        }
    }
}

impl FromStr for IcMatch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(IcMatch::SameAsTest),
            "different" => Ok(IcMatch::Different),
            other => Err(Error::InvalidParams(format!("ic must be same or different, got {other:?}"))),
        }
    }
}

/// Which data a model trains on relative to its test trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Methodology {
    pub phase: Phase,
    pub ic_match: IcMatch,
}

impl Methodology {
    pub const fn new(phase: Phase, ic_match: IcMatch) -> Self {
        Self { phase, ic_match }
    }

    pub fn all() -> [Methodology; 4] {
        [
            Self::new(Phase::Transient, IcMatch::SameAsTest),
            Self::new(Phase::Transient, IcMatch::Different),
            Self::new(Phase::Steady, IcMatch::SameAsTest),
            Self::new(Phase::Steady, IcMatch::Different),
        ]
    }
}

impl fmt::Display for Methodology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.phase.as_str(), self.ic_match.as_str())
    }
}

/// Train/test lengths in states, plus the model window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_len: usize,
    pub test_len: usize,
    pub window_len: usize,
}

impl SplitSpec {
    pub const STEADY: SplitSpec = SplitSpec {
        train_len: 2000,
        test_len: 1000,
        window_len: DEFAULT_WINDOW_LEN,
    };
    pub const TRANSIENT: SplitSpec = SplitSpec {
        train_len: 150,
        test_len: 100,
        window_len: DEFAULT_WINDOW_LEN,
    };

    pub fn for_phase(phase: Phase) -> Self {
        match phase {
            Phase::Steady => Self::STEADY,
            Phase::Transient => Self::TRANSIENT,
        }
    }

    pub fn with_window(self, window_len: usize) -> Self {
        Self { window_len, ..self }
    }

    pub fn total_len(&self) -> usize {
        self.train_len + self.test_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.test_len == 0 || self.train_len < self.window_len + 1 {
            return Err(Error::InvalidParams(format!(
                "split needs window_len >= 1, test_len >= 1 and train_len >= window_len + 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Seeds for the noise stream and the two initial-condition draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodologySeeds {
    pub sim: u64,
    pub train_ic: u64,
    pub test_ic: u64,
}

impl Default for MethodologySeeds {
    fn default() -> Self {
        Self {
            sim: 0,
            train_ic: 1,
            test_ic: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodologyData {
    pub methodology: Methodology,
    pub split: SplitSpec,
    /// The training segment, `split.train_len` states.
    pub train: Trajectory,
    pub train_samples: Vec<WindowedSample>,
    /// Ground truth the rollout is scored against, `split.test_len` states.
    pub test: Trajectory,
    /// The `window_len` states immediately preceding `test`.
    pub seed_window: Trajectory,
}

/// Simulates and splits the data for one methodology.
///
/// Each run has `train_len + test_len` states: the first `train_len` are the
/// training segment and the rest the test segment. `SameAsTest` scores
/// against the training run's own continuation. `Different` scores against
/// the test segment of a second run started from `seeds.test_ic`; its seed
/// window is that run's last `window_len` states before the test segment.
/// Both runs share the noise seed, so equal IC seeds reproduce `SameAsTest`.
pub fn build_methodology(
    methodology: Methodology,
    split: &SplitSpec,
    params: &SwarmParams,
    seeds: MethodologySeeds,
    init: &InitRanges,
) -> Result<MethodologyData> {
    split.validate()?;
    let run_params = SwarmParams {
        n_steps: split.total_len() - 1,
        seed: seeds.sim,
        ..params.clone()
    };
    let run = |ic_seed: u64| -> Result<Trajectory> {
        let ic = sample_initial_conditions(params.n_agents, init, ic_seed)?;
        simulate(&run_params, &ic)
    };
    let train_run = run(seeds.train_ic)?;
    let test_run = match methodology.ic_match {
        IcMatch::SameAsTest => train_run.clone(),
        IcMatch::Different => run(seeds.test_ic)?,
    };
    let train = train_run.slice(0..split.train_len);
    let train_samples = fold_windows(&train, split.window_len)?;
    let test = test_run.slice(split.train_len..split.total_len());
    let seed_window = test_run.slice(split.train_len - split.window_len..split.train_len);
    Ok(MethodologyData {
        methodology,
        split: *split,
        train,
        train_samples,
        test,
        seed_window,
    })
}

/// `t,x0,y0,vx0,vy0,x1,...` for `n_agents` agents.
pub fn csv_header(n_agents: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for i in 0..n_agents {
        h.extend([format!("x{i}"), format!("y{i}"), format!("vx{i}"), format!("vy{i}")]);
    }
    h
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes one row per state at 17 significant digits, plus a `.meta`
/// sidecar holding the simulation parameters.
pub fn write_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(csv_header(traj.n_agents())).map_err(csv_io)?;
    for s in &traj.states {
        let mut row = vec![fmt17(s.time)];
        row.extend(s.to_features().into_iter().map(fmt17));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    write_metadata(&meta_path(path), &params_to_meta(&traj.params_used, traj.dt))?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Reads a trajectory written by [`write_csv`]. Parameters come from the
/// sidecar when present; otherwise `dt` is inferred from the first two
/// timestamps.
pub fn read_csv(path: &Path) -> Result<Trajectory> {
    let perr = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(csv_io)?;
    let mut records = r.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| perr(1, e.to_string()))?,
        None => return Err(perr(1, "empty file".into())),
    };
    let cols = header.len();
    if cols < 1 + FEATURES_PER_AGENT || (cols - 1) % FEATURES_PER_AGENT != 0 {
        return Err(perr(1, format!("header has {cols} columns, expected 1 + 4N")));
    }
    let n_agents = (cols - 1) / FEATURES_PER_AGENT;
    let expected = csv_header(n_agents);
    for (c, (got, want)) in header.iter().zip(&expected).enumerate() {
        if got != want {
            return Err(perr(1, format!("column {c}: expected header {want:?}, found {got:?}")));
        }
    }
    let mut states = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| perr(row, e.to_string()))?;
        if rec.len() != cols {
            return Err(perr(row, format!("expected {cols} columns, found {}", rec.len())));
        }
        let values: Vec<f64> = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| perr(row, format!("column {c}: non-numeric cell {cell:?}")))
            })
            .collect::<Result<_>>()?;
        let state = SwarmState::from_features(&values[1..], values[0]).map_err(|e| perr(row, e.to_string()))?;
        states.push(state);
    }
    let meta = meta_path(path);
    let (params, dt) = if meta.exists() {
        params_from_meta(&read_metadata(&meta)?, &meta)?
    } else {
        let dt = match states.as_slice() {
            [a, b, ..] => b.time - a.time,
            _ => SwarmParams::default().dt,
        };
        let params = SwarmParams {
            n_agents,
            dt,
            n_steps: states.len().saturating_sub(1),
            ..SwarmParams::default()
        };
        (params, dt)
    };
    Trajectory::new(states, dt, params)
}

/// `<path>.meta`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// One `key=value` per line, in the given order.
pub fn write_metadata(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let text: String = entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    fs::write(path, text)?;
    Ok(())
}

pub fn read_metadata(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            row: i + 1,
            message: format!("expected key=value, found {line:?}"),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn params_to_meta(params: &SwarmParams, dt: f64) -> Vec<(String, String)> {
    vec![
        ("n_agents".into(), params.n_agents.to_string()),
        ("coupling".into(), format!("{:?}", params.coupling)),
        ("noise_std".into(), format!("{:?}", params.noise_std)),
        ("dt".into(), format!("{dt:?}")),
        ("n_steps".into(), params.n_steps.to_string()),
        ("seed".into(), params.seed.to_string()),
        ("noise_scaling".into(), params.noise_scaling.as_str().to_string()),
    ]
}

fn params_from_meta(meta: &BTreeMap<String, String>, path: &Path) -> Result<(SwarmParams, f64)> {
    fn field<T: FromStr>(meta: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<T> {
        let raw = meta.get(key).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            message: format!("missing key {key:?}"),
        })?;
        raw.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            message: format!("bad value {raw:?} for key {key:?}"),
        })
    }
    let dt: f64 = field(meta, "dt", path)?;
    let params = SwarmParams {
        n_agents: field(meta, "n_agents", path)?,
        coupling: field(meta, "coupling", path)?,
        noise_std: field(meta, "noise_std", path)?,
        dt,
        n_steps: field(meta, "n_steps", path)?,
        seed: field(meta, "seed", path)?,
        noise_scaling: field(meta, "noise_scaling", path)?,
    };
    Ok((params, dt))
}
