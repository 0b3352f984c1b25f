//! One-step deep forecasters: MLP, RNN and 1-D CNN over a window of
//! flattened swarm states.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{conv1d_out_len, Array, OptimizerState, ParamSet, Tape, Var};
use crate::dataset::{autoregressive_rollout, WindowedSample, DEFAULT_WINDOW_LEN};
use crate::error::{Error, Result};
use crate::simulator::Trajectory;
use crate::swarm::FEATURES_PER_AGENT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Mlp,
    Rnn,
    Cnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Rnn => "rnn",
            ModelKind::Cnn => "cnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "rnn" => Ok(ModelKind::Rnn),
            "cnn" => Ok(ModelKind::Cnn),
            other => Err(Error::InvalidParams(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub filter: usize,
    pub padding: usize,
    pub stride: usize,
}

/// Convolution stack of the CNN; every layer keeps `4N` channels.
pub const CNN_LAYERS: [ConvLayer; 3] = [
    ConvLayer { filter: 5, padding: 2, stride: 2 },
    ConvLayer { filter: 5, padding: 2, stride: 2 },
    ConvLayer { filter: 3, padding: 1, stride: 1 },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForecasterSpec {
    pub kind: ModelKind,
    pub n_agents: usize,
    pub window_len: usize,
    /// Hidden width of the MLP layer and the RNN state.
    pub hidden: usize,
}

impl ForecasterSpec {
    pub fn new(kind: ModelKind, n_agents: usize) -> Self {
        Self {
            kind,
            n_agents,
            window_len: DEFAULT_WINDOW_LEN,
            hidden: 256,
        }
    }

    pub fn io_width(&self) -> usize {
        self.n_agents * FEATURES_PER_AGENT
    }

    /// Sequence length after the convolution stack.
    pub fn cnn_out_len(&self) -> Result<usize> {
        CNN_LAYERS.iter().try_fold(self.window_len, |len, l| {
            conv1d_out_len(len, l.filter, l.padding, l.stride).ok_or_else(|| {
                Error::InvalidParams(format!("window of {} is too short for the CNN", self.window_len))
            })
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.window_len == 0 || self.hidden == 0 {
            return Err(Error::InvalidParams(format!("degenerate forecaster spec {self:?}")));
        }
        if self.kind == ModelKind::Cnn {
            self.cnn_out_len()?;
        }
        Ok(())
    }

    fn descriptor(&self, standardized: bool) -> String {
        format!(
            "kind={} n_agents={} window_len={} hidden={} standardize={}",
            self.kind, self.n_agents, self.window_len, self.hidden, standardized as u8
        )
    }

    fn from_descriptor(desc: &str) -> Result<(Self, bool)> {
        let mut kind = None;
        let (mut n, mut w, mut h, mut std) = (None, None, None, false);
        for part in desc.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidParams(format!("bad descriptor field {part:?}")))?;
            let num = || v.parse::<usize>().map_err(|_| Error::InvalidParams(format!("bad value for {k}: {v:?}")));
            match k {
                "kind" => kind = Some(v.parse()?),
                "n_agents" => n = Some(num()?),
                "window_len" => w = Some(num()?),
                "hidden" => h = Some(num()?),
                "standardize" => std = v == "1",
                _ => {}
            }
        }
        let missing = || Error::InvalidParams(format!("incomplete model descriptor {desc:?}"));
        Ok((
            Self {
                kind: kind.ok_or_else(missing)?,
                n_agents: n.ok_or_else(missing)?,
                window_len: w.ok_or_else(missing)?,
                hidden: h.ok_or_else(missing)?,
            },
            std,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Samples per SGD step; 0 means the whole dataset.
    pub batch_size: usize,
    /// Standardize every feature by the training mean and std.
    pub standardize: bool,
    pub seed: u64,
}

impl TrainConfig {
    /// SGD learning rate and epoch budget per model kind.
    pub fn for_kind(kind: ModelKind) -> Self {
        let (learning_rate, epochs) = match kind {
            ModelKind::Mlp => (0.001, 500),
            ModelKind::Rnn => (0.005, 50),
            ModelKind::Cnn => (0.0005, 50),
        };
        Self {
            learning_rate,
            epochs,
            batch_size: 1,
            standardize: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || self.epochs == 0 {
            return Err(Error::InvalidParams(format!(
                "need a positive learning rate and epoch count, got {} and {}",
                self.learning_rate, self.epochs
            )));
        }
        Ok(())
    }
}

/// Per-feature affine normalization.
#[derive(Debug, Clone, PartialEq)]
struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    fn fit(samples: &[WindowedSample]) -> Self {
        let w = samples[0].width();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; w];
        for s in samples {
            for (m, t) in mean.iter_mut().zip(&s.target) {
                *m += t / n;
            }
        }
        let mut var = vec![0.0; w];
        for s in samples {
            for ((v, t), m) in var.iter_mut().zip(&s.target).zip(&mean) {
                *v += (t - m) * (t - m) / n;
            }
        }
        let std = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, std }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let w = self.mean.len();
        x.iter().enumerate().map(|(i, v)| (v - self.mean[i % w]) / self.std[i % w]).collect()
    }

    fn inverse(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| v * s + m).collect()
    }
}

/// A forecaster and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub spec: ForecasterSpec,
    pub params: ParamSet,
    standardizer: Option<Standardizer>,
}

impl Forecaster {
    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(spec: ForecasterSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let (d, w, h) = (spec.io_width(), spec.window_len, spec.hidden);
        match spec.kind {
            ModelKind::Mlp => {
                p.push_uniform("hidden.w", &[w * d, h], w * d, &mut rng);
                p.push_uniform("hidden.b", &[h], w * d, &mut rng);
                p.push_uniform("out.w", &[h, d], h, &mut rng);
                p.push_uniform("out.b", &[d], h, &mut rng);
            }
            ModelKind::Rnn => {
                p.push_uniform("cell.w_in", &[d, h], d, &mut rng);
                p.push_uniform("cell.w_rec", &[h, h], h, &mut rng);
                p.push_uniform("cell.b", &[h], h, &mut rng);
                p.push_uniform("out.w", &[h, d], h, &mut rng);
                p.push_uniform("out.b", &[d], h, &mut rng);
            }
            ModelKind::Cnn => {
                for (i, l) in CNN_LAYERS.iter().enumerate() {
                    p.push_uniform(format!("conv{i}.w"), &[d, d, l.filter], d * l.filter, &mut rng);
                    p.push_uniform(format!("conv{i}.b"), &[d], d * l.filter, &mut rng);
                }
                let flat = d * spec.cnn_out_len()?;
                p.push_uniform("out.w", &[flat, d], flat, &mut rng);
                p.push_uniform("out.b", &[d], flat, &mut rng);
            }
        }
        Ok(Self {
            spec,
            params: p,
            standardizer: None,
        })
    }

    /// Records the batched forward pass; `inputs` holds `batch` windows of
    /// `window_len * 4N` features. Returns the `[batch, 4N]` output.
    fn record(&self, tape: &mut Tape, vars: &[Var], inputs: &[f64], batch: usize) -> Result<Var> {
        let spec = &self.spec;
        let (d, w) = (spec.io_width(), spec.window_len);
        match spec.kind {
            ModelKind::Mlp => {
                let x = tape.constant(Array::matrix(batch, w * d, inputs.to_vec())?);
                let h = tape.dense(x, vars[0], vars[1])?;
                let h = tape.tanh(h);
                tape.dense(h, vars[2], vars[3])
            }
            ModelKind::Rnn => {
                let mut state: Option<Var> = None;
                for t in 0..w {
                    let mut step = Vec::with_capacity(batch * d);
                    for b in 0..batch {
                        step.extend_from_slice(&inputs[b * w * d + t * d..b * w * d + (t + 1) * d]);
                    }
                    let x = tape.constant(Array::matrix(batch, d, step)?);
                    let mut pre = tape.matmul(x, vars[0])?;
                    if let Some(h) = state {
                        let rec = tape.matmul(h, vars[1])?;
                        pre = tape.add(pre, rec)?;
                    }
                    let pre = tape.add_bias(pre, vars[2])?;
                    state = Some(tape.tanh(pre));
                }
                let h = state.expect("window_len >= 1");
                tape.dense(h, vars[3], vars[4])
            }
            ModelKind::Cnn => {
                // Channels are state features, convolved along time.
                let mut x = vec![0.0; batch * d * w];
                for b in 0..batch {
                    for t in 0..w {
                        for c in 0..d {
                            x[(b * d + c) * w + t] = inputs[b * w * d + t * d + c];
                        }
                    }
                }
                let mut h = tape.constant(Array::new(vec![batch, d, w], x)?);
                for (i, l) in CNN_LAYERS.iter().enumerate() {
                    let c = tape.conv1d(h, vars[2 * i], vars[2 * i + 1], l.padding, l.stride)?;
                    h = tape.relu(c);
                }
                let flat = d * spec.cnn_out_len()?;
                let h = tape.reshape(h, vec![batch, flat])?;
                tape.dense(h, vars[6], vars[7])
            }
        }
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        let expected = self.spec.window_len * self.spec.io_width();
        if window.len() != expected {
            return Err(Error::Shape {
                op: "forecaster input",
                lhs: vec![self.spec.window_len, self.spec.io_width()],
                rhs: vec![window.len()],
            });
        }
        Ok(())
    }

    /// Next-state prediction for one `window_len x 4N` window.
    pub fn forward(&self, window: &[f64]) -> Result<Vec<f64>> {
        self.check_window(window)?;
        let input = match &self.standardizer {
            Some(s) => s.forward(window),
            None => window.to_vec(),
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.arrays().iter().map(|a| tape.constant(a.clone())).collect();
        let out = self.record(&mut tape, &vars, &input, 1)?;
        let y = tape.value(out).data();
        Ok(match &self.standardizer {
            Some(s) => s.inverse(y),
            None => y.to_vec(),
        })
    }

    /// Mean squared error over `samples`, in the training feature space.
    pub fn loss(&self, samples: &[WindowedSample]) -> Result<f64> {
        let (inputs, targets) = self.batch(samples);
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.arrays().iter().map(|a| tape.constant(a.clone())).collect();
        let out = self.record(&mut tape, &vars, &inputs, samples.len())?;
        let y = tape.constant(Array::matrix(samples.len(), self.spec.io_width(), targets)?);
        let l = tape.mse(out, y)?;
        Ok(tape.value(l).item())
    }

    fn batch(&self, samples: &[WindowedSample]) -> (Vec<f64>, Vec<f64>) {
        let mut inputs = Vec::with_capacity(samples.len() * samples[0].input.len());
        let mut targets = Vec::with_capacity(samples.len() * samples[0].width());
        for s in samples {
            match &self.standardizer {
                Some(st) => {
                    inputs.extend(st.forward(&s.input));
                    targets.extend(st.forward(&s.target));
                }
                None => {
                    inputs.extend_from_slice(&s.input);
                    targets.extend_from_slice(&s.target);
                }
            }
        }
        (inputs, targets)
    }

    /// One optimizer step on a batch; returns the batch loss before the step.
    fn train_step(&mut self, samples: &[WindowedSample], opt: &mut OptimizerState) -> Result<f64> {
        let (inputs, targets) = self.batch(samples);
        let mut tape = Tape::new();
        let vars = self.params.lend(&mut tape);
        let result = self.record(&mut tape, &vars, &inputs, samples.len()).and_then(|out| {
            let y = tape.constant(Array::matrix(samples.len(), self.spec.io_width(), targets)?);
            let l = tape.mse(out, y)?;
            Ok((tape.value(l).item(), tape.backward(l)?))
        });
        let mut arrays = tape.into_values(&vars);
        let step = match &result {
            Ok((loss, grads)) if loss.is_finite() => {
                let g: Vec<_> = vars.iter().map(|&v| grads.get(v)).collect();
                opt.step_tensors(&mut arrays, &g)
            }
            _ => Ok(()),
        };
        self.params.restore(arrays);
        step?;
        result.map(|(loss, _)| loss)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut all = self.params.clone();
        if let Some(s) = &self.standardizer {
            all.push("norm.mean", Array::new(vec![s.mean.len()], s.mean.clone())?);
            all.push("norm.std", Array::new(vec![s.std.len()], s.std.clone())?);
        }
        all.save(path, &self.spec.descriptor(self.standardizer.is_some()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (desc, all) = ParamSet::load(path)?;
        let (spec, standardized) = ForecasterSpec::from_descriptor(&desc)?;
        let template = Self::init(spec, 0)?;
        let mut params = ParamSet::new();
        for name in template.params.names() {
            let a = all
                .get(name)
                .ok_or_else(|| Error::InvalidParams(format!("{}: missing tensor {name}", path.display())))?;
            let want = template.params.get(name).expect("template").shape();
            if a.shape() != want {
                return Err(Error::Shape {
                    op: "load forecaster",
                    lhs: want.to_vec(),
                    rhs: a.shape().to_vec(),
                });
            }
            params.push(name.clone(), a.clone());
        }
        let standardizer = if standardized {
            let get = |n: &str| {
                all.get(n)
                    .map(|a| a.data().to_vec())
                    .ok_or_else(|| Error::InvalidParams(format!("{}: missing tensor {n}", path.display())))
            };
            Some(Standardizer {
                mean: get("norm.mean")?,
                std: get("norm.std")?,
            })
        } else {
            None
        };
        Ok(Self {
            spec,
            params,
            standardizer,
        })
    }
}

/// SGD training on the MSE of the next-state prediction.
///
/// Samples are visited in a seeded random order each epoch. The returned
/// history holds the full-dataset loss after each epoch.
pub fn train(spec: ForecasterSpec, samples: &[WindowedSample], config: &TrainConfig) -> Result<(Forecaster, Vec<f64>)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::TooShort {
            what: "train",
            needed: 1,
            found: 0,
        });
    }
    let mut model = Forecaster::init(spec, config.seed)?;
    for s in samples {
        model.check_window(&s.input)?;
        if s.width() != spec.io_width() {
            return Err(Error::AgentCount {
                expected: spec.n_agents,
                found: s.n_agents(),
            });
        }
    }
    if config.standardize {
        model.standardizer = Some(Standardizer::fit(samples));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut opt = OptimizerState::sgd(config.learning_rate);
    let batch = if config.batch_size == 0 { samples.len() } else { config.batch_size };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut chunk = Vec::with_capacity(batch);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(batch) {
            chunk.clear();
            chunk.extend(idx.iter().map(|&i| samples[i].clone()));
            let loss = model.train_step(&chunk, &mut opt)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
        }
        let loss = model.loss(samples)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        log::debug!("{} epoch {epoch}: loss {loss:.6e}", spec.kind);
        history.push(loss);
    }
    Ok((model, history))
}

/// Sliding-window rollout fed by the model's own predictions.
pub fn rollout(model: &Forecaster, seed_window: &Trajectory, n_steps: usize) -> Result<Trajectory> {
    if seed_window.n_agents() != model.spec.n_agents {
        return Err(Error::AgentCount {
            expected: model.spec.n_agents,
            found: seed_window.n_agents(),
        });
    }
    autoregressive_rollout(seed_window, model.spec.window_len, n_steps, |w| model.forward(w))
}
