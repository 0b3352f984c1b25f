//! Sliding-window linear forecaster fitted by least squares.
//!
//! Inputs are `m` consecutive flattened swarm states plus a bias feature;
//! the output is the flattened state `n` steps after the window.

use std::fs;
use std::path::Path;

use faer::Mat;

use crate::dataset::{autoregressive_rollout, fold_windows_ahead, WindowedSample};
use crate::error::{Error, Result};
use crate::simulator::Trajectory;
use crate::swarm::FEATURES_PER_AGENT;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsConfig {
    /// Window length `m`.
    pub in_samples: usize,
    /// Prediction horizon `n`.
    pub horizon: usize,
    pub ridge: f64,
}

impl Default for OlsConfig {
    fn default() -> Self {
        Self {
            in_samples: 10,
            horizon: 1,
            ridge: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsModel {
    /// `(m * 4N + 1) x 4N`, row-major; the last row is the bias.
    pub weights: Vec<f64>,
    pub in_samples: usize,
    pub horizon: usize,
    pub n_agents: usize,
    /// Numerical rank of the design matrix.
    pub rank: usize,
}

impl OlsModel {
    pub fn width(&self) -> usize {
        self.n_agents * FEATURES_PER_AGENT
    }

    pub fn n_inputs(&self) -> usize {
        self.in_samples * self.width() + 1
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.n_inputs()
    }

    /// `W^T [window, 1]`.
    pub fn predict(&self, window: &[f64]) -> Result<Vec<f64>> {
        let w = self.width();
        if window.len() != self.n_inputs() - 1 {
            return Err(Error::Shape {
                op: "ols predict",
                lhs: vec![self.n_inputs() - 1],
                rhs: vec![window.len()],
            });
        }
        let bias_row = &self.weights[(self.n_inputs() - 1) * w..];
        let mut out = bias_row.to_vec();
        for (i, &x) in window.iter().enumerate() {
            let row = &self.weights[i * w..(i + 1) * w];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += x * wij;
            }
        }
        Ok(out)
    }

    /// Header row `m,n,N`, its values, then one row per weight-matrix row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = format!("m,n,N\n{},{},{}\n", self.in_samples, self.horizon, self.n_agents);
        for row in self.weights.chunks(self.width()) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let perr = |row: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            row,
            message,
        };
        let mut lines = text.lines();
        if lines.next() != Some("m,n,N") {
            return Err(perr(1, "expected header m,n,N".into()));
        }
        let dims: Vec<usize> = lines
            .next()
            .ok_or_else(|| perr(2, "missing dimensions".into()))?
            .split(',')
            .map(|v| v.parse().map_err(|_| perr(2, format!("bad dimension {v:?}"))))
            .collect::<Result<_>>()?;
        let &[in_samples, horizon, n_agents] = dims.as_slice() else {
            return Err(perr(2, "expected three dimensions".into()));
        };
        let mut weights = Vec::new();
        for (i, line) in lines.enumerate() {
            for (c, v) in line.split(',').enumerate() {
                weights.push(v.parse().map_err(|_| perr(i + 3, format!("column {c}: bad value {v:?}")))?);
            }
        }
        let width = n_agents * FEATURES_PER_AGENT;
        let expected = (in_samples * width + 1) * width;
        if weights.len() != expected {
            return Err(perr(0, format!("expected {expected} weights, found {}", weights.len())));
        }
        let mut model = Self {
            weights,
            in_samples,
            horizon,
            n_agents,
            rank: 0,
        };
        model.rank = model.n_inputs();
        Ok(model)
    }
}

/// Minimises `sum ||W^T x - y||^2 + ridge ||W||^2` over the samples.
///
/// Solved through a thin SVD of the design matrix. Singular values below
/// `eps * max(rows, cols) * s_max` are dropped, so a rank-deficient problem
/// without ridge yields the minimum-norm solution (logged as a warning).
pub fn fit_ols(samples: &[WindowedSample], horizon: usize, ridge: f64) -> Result<OlsModel> {
    let first = samples.first().ok_or(Error::TooShort {
        what: "fit_ols",
        needed: 1,
        found: 0,
    })?;
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidParams(format!("ridge must be nonnegative, got {ridge}")));
    }
    let width = first.width();
    let d = first.input.len();
    if let Some(bad) = samples.iter().find(|s| s.input.len() != d || s.width() != width) {
        return Err(Error::Shape {
            op: "fit_ols",
            lhs: vec![d, width],
            rhs: vec![bad.input.len(), bad.width()],
        });
    }
    let rows = samples.len();
    let cols = d + 1;
    let a = Mat::<f64>::from_fn(rows, cols, |i, j| if j < d { samples[i].input[j] } else { 1.0 });
    let y = Mat::<f64>::from_fn(rows, width, |i, j| samples[i].target[j]);
    let svd = a
        .thin_svd()
        .map_err(|e| Error::InvalidParams(format!("SVD did not converge: {e:?}")))?;
    let s = svd.S().column_vector();
    let k = s.nrows();
    let s_max = (0..k).map(|i| s[i]).fold(0.0, f64::max);
    let cutoff = f64::EPSILON * rows.max(cols) as f64 * s_max;
    let mut rank = 0;
    let factors: Vec<f64> = (0..k)
        .map(|i| {
            let si = s[i];
            if si > cutoff {
                rank += 1;
            }
            if ridge > 0.0 {
                si / (si * si + ridge)
            } else if si > cutoff {
                1.0 / si
            } else {
                0.0
            }
        })
        .collect();
    let mut uty = svd.U().transpose() * &y;
    for (i, f) in factors.iter().enumerate() {
        for j in 0..width {
            uty[(i, j)] *= f;
        }
    }
    let w = svd.V() * &uty;
    if rank < cols && ridge == 0.0 {
        log::warn!("fit_ols: design matrix has rank {rank} < {cols}; using the minimum-norm solution");
    }
    let weights: Vec<f64> = (0..cols).flat_map(|i| (0..width).map(move |j| (i, j))).map(|(i, j)| w[(i, j)]).collect();
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: 0,
            context: "ols weights",
        });
    }
    Ok(OlsModel {
        weights,
        in_samples: first.window_len,
        horizon,
        n_agents: width / FEATURES_PER_AGENT,
        rank,
    })
}

/// Folds `traj` with `config.in_samples` / `config.horizon` and fits.
pub fn fit_ols_trajectory(traj: &Trajectory, config: &OlsConfig) -> Result<OlsModel> {
    let samples = fold_windows_ahead(traj, config.in_samples, config.horizon)?;
    fit_ols(&samples, config.horizon, config.ridge)
}

/// Autoregressive rollout of a one-step model.
pub fn ols_rollout(model: &OlsModel, seed_window: &Trajectory, n_steps: usize) -> Result<Trajectory> {
    if model.horizon != 1 {
        return Err(Error::InvalidParams(format!(
            "rollout needs a one-step model, this one predicts {} steps ahead",
            model.horizon
        )));
    }
    if seed_window.n_agents() != model.n_agents {
        return Err(Error::AgentCount {
            expected: model.n_agents,
            found: seed_window.n_agents(),
        });
    }
    autoregressive_rollout(seed_window, model.in_samples, n_steps, |w| model.predict(w))
}
