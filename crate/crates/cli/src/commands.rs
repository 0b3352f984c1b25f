//! The five subcommands. Every artifact name is derived from the config,
//! so a rerun with the same config overwrites identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use swarm_sysid::baselines::{self, Forecaster, ForecasterSpec};
use swarm_sysid::dataset::{self, build_methodology, Methodology, MethodologyData};
use swarm_sysid::node::{self, NodeModel};
use swarm_sysid::ols::{self, fit_ols_trajectory, OlsModel};
use swarm_sysid::simulator::{sample_initial_conditions, simulate, InitRanges, Trajectory};
use swarm_sysid::{classify_regime, mfe_series, steady_descriptors, Error, Regime, SwarmParams};

use crate::config::{ExperimentConfig, ModelChoice};
use crate::CliError;

/// File stem shared by everything a (model, methodology) cell writes.
pub fn cell_stem(model: ModelChoice, methodology: Methodology) -> String {
    format!("{model}_{}_{}", methodology.phase.as_str(), methodology.ic_match.as_str())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutput {
    pub trajectory: PathBuf,
    pub regime: Regime,
}

pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<SimulateOutput, CliError> {
    ensure_dir(&cfg.out)?;
    let params = cfg.sim_params();
    let ic_seed = cfg.seeds().train_ic;
    let ic = sample_initial_conditions(params.n_agents, &InitRanges::default(), ic_seed)?;
    let traj = simulate(&params, &ic)?;
    let path = cfg.out.join("trajectory.csv");
    dataset::write_csv(&traj, &path)?;
    let label = classify_regime(&traj, cfg.tail_frac)?;
    let mut meta = dataset::params_to_meta(&params, traj.dt);
    meta.extend([
        ("ic_seed".to_string(), ic_seed.to_string()),
        ("regime".to_string(), label.regime.as_str().to_string()),
        ("polarization".to_string(), format!("{:?}", label.polarization)),
        ("ring_radius_mean".to_string(), format!("{:?}", label.ring_radius_mean)),
        ("ring_radius_cv".to_string(), format!("{:?}", label.ring_radius_cv)),
        ("mean_speed".to_string(), format!("{:?}", label.mean_speed)),
    ]);
    dataset::write_metadata(&dataset::meta_path(&path), &meta)?;
    log::info!("simulate: {} states, regime {}", traj.len(), label.regime);
    Ok(SimulateOutput {
        trajectory: path,
        regime: label.regime,
    })
}

fn methodology_data(cfg: &ExperimentConfig, model: ModelChoice, methodology: Methodology) -> Result<MethodologyData, CliError> {
    let split = cfg.split(methodology.phase, model);
    Ok(build_methodology(
        methodology,
        &split,
        &cfg.sim_params(),
        cfg.seeds(),
        &InitRanges::default(),
    )?)
}

pub fn cmd_make_dataset(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let methodology = cfg.methodology();
    let data = methodology_data(cfg, cfg.model, methodology)?;
    let dir = cfg
        .out
        .join(format!("dataset_{}_{}", methodology.phase.as_str(), methodology.ic_match.as_str()));
    ensure_dir(&dir)?;
    dataset::write_csv(&data.train, &dir.join("train.csv"))?;
    dataset::write_csv(&data.test, &dir.join("test.csv"))?;
    dataset::write_csv(&data.seed_window, &dir.join("seed_window.csv"))?;
    let seeds = cfg.seeds();
    let entries = [
        ("methodology", methodology.to_string()),
        ("train_len", data.split.train_len.to_string()),
        ("test_len", data.split.test_len.to_string()),
        ("window_len", data.split.window_len.to_string()),
        ("train_samples", data.train_samples.len().to_string()),
        ("sim_seed", seeds.sim.to_string()),
        ("train_ic_seed", seeds.train_ic.to_string()),
        ("test_ic_seed", seeds.test_ic.to_string()),
    ]
    .map(|(k, v)| (k.to_string(), v));
    dataset::write_metadata(&dir.join("dataset.meta"), &entries)?;
    Ok(dir)
}

/// A fitted model of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Trained {
    Ols(OlsModel),
    Deep(Forecaster),
    Node(NodeModel),
}

impl Trained {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        match self {
            Trained::Ols(m) => m.write_csv(path)?,
            Trained::Deep(m) => m.save(path)?,
            Trained::Node(m) => m.save(path)?,
        }
        Ok(())
    }

    pub fn load(model: ModelChoice, path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Err(CliError::Config(format!(
                "model file {} not found; run `train` with the same config first",
                path.display()
            )));
        }
        Ok(match model {
            ModelChoice::Ols => Trained::Ols(OlsModel::read_csv(path)?),
            ModelChoice::Node => Trained::Node(NodeModel::load(path)?),
            _ => Trained::Deep(Forecaster::load(path)?),
        })
    }

    /// Predicted states aligned with `data.test`.
    pub fn rollout(&self, data: &MethodologyData, solver_step: f64) -> Result<Trajectory, CliError> {
        let n = data.test.len();
        Ok(match self {
            Trained::Ols(m) => ols::ols_rollout(m, &data.seed_window, n)?,
            Trained::Deep(m) => baselines::rollout(m, &data.seed_window, n)?,
            Trained::Node(m) => {
                let ic = data.seed_window.states.last().expect("non-empty seed window");
                let steps_per_sample = (data.test.dt / solver_step).round().max(1.0) as usize;
                let full = node::node_rollout(m, ic, n * steps_per_sample, solver_step)?;
                let states = (1..=n).map(|k| full.states[k * steps_per_sample].clone()).collect();
                Trajectory::new(states, data.test.dt, full.params_used.clone())?
            }
        })
    }
}

/// Transient runs for the neural ODE when it trains on its own swarm size.
pub fn node_training_runs(cfg: &ExperimentConfig) -> Result<Vec<Trajectory>, CliError> {
    let seeds = cfg.seeds();
    (0..cfg.node_train_runs as u64)
        .map(|r| {
            let params = SwarmParams {
                n_agents: cfg.node_train_agents,
                n_steps: cfg.node_train_steps.saturating_sub(1),
                seed: seeds.sim.wrapping_add(r),
                ..cfg.sim_params()
            };
            let ic = sample_initial_conditions(cfg.node_train_agents, &InitRanges::default(), seeds.train_ic.wrapping_add(r))?;
            Ok(simulate(&params, &ic)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model_path: PathBuf,
    pub loss_path: PathBuf,
    pub loss_history: Vec<f64>,
    pub model: Trained,
}

pub fn train_cell(cfg: &ExperimentConfig, model: ModelChoice, methodology: Methodology) -> Result<TrainOutput, CliError> {
    ensure_dir(&cfg.out)?;
    let data = methodology_data(cfg, model, methodology)?;
    let (trained, history) = match model {
        ModelChoice::Ols => {
            let m = fit_ols_trajectory(&data.train, &cfg.ols_config())?;
            let mut sq = 0.0;
            let mut count = 0usize;
            let w = m.in_samples;
            let features: Vec<Vec<f64>> = data.train.states.iter().map(|s| s.to_features()).collect();
            for k in w..features.len() {
                let window: Vec<f64> = features[k - w..k].concat();
                let pred = m.predict(&window)?;
                sq += pred.iter().zip(&features[k]).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
                count += pred.len();
            }
            (Trained::Ols(m), vec![sq / count.max(1) as f64])
        }
        ModelChoice::Node => {
            let runs = if cfg.node_train_agents == 0 {
                vec![data.train.clone()]
            } else {
                node_training_runs(cfg)?
            };
            let segments = node::make_segments(&runs, cfg.node_segment_length, cfg.node_segment_stride)?;
            let (m, curve) = node::train_node(&segments, cfg.node_arch(), &cfg.node_train_config())?;
            (Trained::Node(m), curve)
        }
        _ => {
            let kind = model.deep_kind().expect("deep model");
            let mut spec = ForecasterSpec::new(kind, cfg.n_agents);
            spec.window_len = cfg.window_len;
            spec.hidden = cfg.hidden;
            let (m, h) = baselines::train(spec, &data.train_samples, &cfg.train_config(kind))?;
            (Trained::Deep(m), h)
        }
    };
    let stem = cell_stem(model, methodology);
    let model_path = cfg.out.join(format!("{stem}.model"));
    trained.save(&model_path)?;
    let loss_path = cfg.out.join(format!("{stem}_loss.csv"));
    let mut text = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        writeln!(text, "{},{:.16e}", i + 1, l).expect("string write");
    }
    write_text(&loss_path, &text)?;
    Ok(TrainOutput {
        model_path,
        loss_path,
        loss_history: history,
        model: trained,
    })
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutput, CliError> {
    train_cell(cfg, cfg.model, cfg.methodology())
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: ModelChoice,
    pub methodology: Methodology,
    pub n_agents: usize,
    /// Mean MFE over the tail of the rollout; infinite when the rollout
    /// diverged.
    pub tail_mfe: f64,
    /// `tail_mfe` over the true tail ring radius.
    pub tail_mfe_normalized: f64,
    pub regime_true: Regime,
    /// `None` when the rollout diverged.
    pub regime_pred: Option<Regime>,
}

impl SummaryRow {
    pub const HEADER: &'static str =
        "model,methodology,n_agents,tail_mfe,tail_mfe_normalized,regime_true,regime_pred,regime_match";

    pub fn regime_match(&self) -> bool {
        self.regime_pred == Some(self.regime_true)
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.16e},{:.16e},{},{},{}",
            self.model,
            self.methodology,
            self.n_agents,
            self.tail_mfe,
            self.tail_mfe_normalized,
            self.regime_true,
            self.regime_pred.map_or("diverged", Regime::as_str),
            self.regime_match()
        )
    }
}

fn describe(label: &str, traj: &Trajectory, frac: f64, out: &mut String) {
    let d = steady_descriptors(traj, frac);
    writeln!(
        out,
        "{label}: mean_speed={:.6} ring_radius_mean={:.6} ring_radius_cv={:.6} polarization={:.6}",
        d.mean_speed, d.ring_radius_mean, d.ring_radius_cv, d.polarization
    )
    .expect("string write");
}

pub fn evaluate_cell(cfg: &ExperimentConfig, model: ModelChoice, methodology: Methodology) -> Result<SummaryRow, CliError> {
    let stem = cell_stem(model, methodology);
    let trained = Trained::load(model, &cfg.out.join(format!("{stem}.model")))?;
    let data = methodology_data(cfg, model, methodology)?;
    let truth_label = classify_regime(&data.test, cfg.tail_frac)?;
    let radius = steady_descriptors(&data.test, cfg.tail_frac).ring_radius_mean;
    let mut report = format!("model={model}\nmethodology={methodology}\nregime_true={}\n", truth_label.regime);
    describe("true", &data.test, cfg.tail_frac, &mut report);
    let row = match trained.rollout(&data, cfg.node_solver_step) {
        Ok(pred) => {
            let series = mfe_series(&data.test, &pred);
            series.write_csv(&cfg.out.join(format!("{stem}_mfe.csv")))?;
            dataset::write_csv(&pred, &cfg.out.join(format!("{stem}_prediction.csv")))?;
            let regime_pred = classify_regime(&pred, cfg.tail_frac).map(|l| l.regime).unwrap_or(Regime::Unclassified);
            describe("predicted", &pred, cfg.tail_frac, &mut report);
            let tail = series.tail_mean(cfg.tail_frac);
            SummaryRow {
                model,
                methodology,
                n_agents: cfg.n_agents,
                tail_mfe: tail,
                tail_mfe_normalized: tail / radius,
                regime_true: truth_label.regime,
                regime_pred: Some(regime_pred),
            }
        }
        Err(CliError::Core(e @ Error::NonFinite { .. })) => {
            log::warn!("{stem}: rollout diverged: {e}");
            writeln!(report, "predicted: diverged ({e})").expect("string write");
            SummaryRow {
                model,
                methodology,
                n_agents: cfg.n_agents,
                tail_mfe: f64::INFINITY,
                tail_mfe_normalized: f64::INFINITY,
                regime_true: truth_label.regime,
                regime_pred: None,
            }
        }
        Err(e) => return Err(e),
    };
    writeln!(report, "regime_pred={}", row.regime_pred.map_or("diverged", Regime::as_str)).expect("string write");
    writeln!(report, "tail_mfe={:.16e}", row.tail_mfe).expect("string write");
    write_text(&cfg.out.join(format!("{stem}_report.txt")), &report)?;
    write_text(
        &cfg.out.join(format!("{stem}_summary.csv")),
        &format!("{}\n{}\n", SummaryRow::HEADER, row.to_csv()),
    )?;
    Ok(row)
}

pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<SummaryRow, CliError> {
    evaluate_cell(cfg, cfg.model, cfg.methodology())
}

/// Trains and evaluates every (model, methodology) cell, `threads` at a
/// time, then writes `comparison.csv` in a fixed cell order.
pub fn cmd_compare(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<SummaryRow>, CliError> {
    ensure_dir(&cfg.out)?;
    let cells: Vec<(ModelChoice, Methodology)> = cfg
        .models
        .iter()
        .flat_map(|&m| cfg.methodologies.iter().map(move |&d| (m, d)))
        .collect();
    let run = |&(m, d): &(ModelChoice, Methodology)| -> Result<SummaryRow, CliError> {
        train_cell(cfg, m, d)?;
        evaluate_cell(cfg, m, d)
    };
    let threads = threads.max(1);
    let mut results: Vec<Option<Result<SummaryRow, CliError>>> = (0..cells.len()).map(|_| None).collect();
    for (chunk_cells, chunk_out) in cells.chunks(threads).zip(results.chunks_mut(threads)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk_cells.iter().map(|c| s.spawn(move || run(c))).collect();
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(h.join().unwrap_or_else(|_| Err(CliError::Config("worker panicked".into()))));
            }
        });
    }
    let rows = results
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<Result<Vec<_>, _>>()?;
    let mut text = format!("{}\n", SummaryRow::HEADER);
    for r in &rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    write_text(&cfg.out.join("comparison.csv"), &text)?;
    Ok(rows)
}

