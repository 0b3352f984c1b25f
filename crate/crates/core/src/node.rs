//! Neural ODE with a weight-shared, swarm-structured vector field.
//!
//! The learned field mirrors the swarm model: positions integrate
//! velocities exactly, and each agent's acceleration is an intrinsic term
//! of its own velocity plus an aggregated pairwise interaction term,
//!
//! ```text
//! dv_i = intrinsic([v_i, |v_i|^2 v_i]) + aggregation(mean_{j != i} interaction(r_i - r_j))
//! ```
//!
//! The same three small networks serve every agent and pair, so the
//! parameter count does not depend on the swarm size. Training uses the
//! discrete adjoint of the explicit Euler solver.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Array, OptimizerState, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::simulator::Trajectory;
use crate::swarm::{StateDerivative, SwarmParams, SwarmState, FEATURES_PER_AGENT};

const NETS: [&str; 3] = ["intrinsic", "interaction", "aggregation"];
const LAYERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeArchitecture {
    pub hidden: usize,
    /// Feed `|v|^2 v` to the intrinsic net alongside `v`.
    pub cubic_input: bool,
    /// Antisymmetrize the field, `f(X) = (g(X) - g(-X)) / 2`, so that it is
    /// exactly odd under point reflection like the swarm model.
    pub odd_symmetric: bool,
}

impl Default for NodeArchitecture {
    fn default() -> Self {
        Self {
            hidden: 64,
            cubic_input: true,
            odd_symmetric: true,
        }
    }
}

impl NodeArchitecture {
    fn input_width(&self, net: usize) -> usize {
        if net == 0 && self.cubic_input {
            4
        } else {
            2
        }
    }

    pub fn descriptor(&self) -> String {
        format!(
            "node layers={LAYERS} hidden={} cubic_input={} odd_symmetric={} activation=tanh",
            self.hidden, self.cubic_input as u8, self.odd_symmetric as u8
        )
    }

    fn from_descriptor(desc: &str) -> Result<Self> {
        let mut arch = Self::default();
        let mut seen = false;
        for part in desc.split_whitespace() {
            match part.split_once('=') {
                Some(("hidden", v)) => {
                    arch.hidden = v
                        .parse()
                        .map_err(|_| Error::InvalidParams(format!("bad hidden width {v:?}")))?;
                    seen = true;
                }
                Some(("cubic_input", v)) => arch.cubic_input = v == "1",
                Some(("odd_symmetric", v)) => arch.odd_symmetric = v == "1",
                Some(("layers", v)) if v != LAYERS.to_string() => {
                    return Err(Error::InvalidParams(format!("unsupported layer count {v}")));
                }
                _ => {}
            }
        }
        if !desc.starts_with("node") || !seen {
            return Err(Error::InvalidParams(format!("not a neural ODE descriptor: {desc:?}")));
        }
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeModel {
    pub arch: NodeArchitecture,
    pub params: ParamSet,
}

/// Recorded vector field `f(X)` for a state `[N, 4]`.
struct RhsGraph {
    state: Var,
    params: Vec<Var>,
    output: Var,
}

impl NodeModel {
    pub fn init(arch: NodeArchitecture, seed: u64) -> Result<Self> {
        if arch.hidden == 0 {
            return Err(Error::InvalidParams("hidden width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let h = arch.hidden;
        for (n, name) in NETS.iter().enumerate() {
            let widths = [arch.input_width(n), h, h, 2];
            for l in 0..LAYERS {
                let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                params.push_uniform(format!("{name}.{l}.w"), &[fan_in, fan_out], fan_in, &mut rng);
                params.push_uniform(format!("{name}.{l}.b"), &[fan_out], fan_in, &mut rng);
            }
        }
        Ok(Self { arch, params })
    }

    /// Sets every parameter of one sub-network (`"interaction"`, ...) to zero.
    pub fn zero_net(&mut self, net: &str) {
        for l in 0..LAYERS {
            for suffix in ["w", "b"] {
                if let Some(a) = self.params.get_mut(&format!("{net}.{l}.{suffix}")) {
                    a.data_mut().iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
    }

    fn mlp(tape: &mut Tape, x: Var, layers: &[Var]) -> Result<Var> {
        let mut h = x;
        for l in 0..LAYERS {
            h = tape.dense(h, layers[2 * l], layers[2 * l + 1])?;
            if l + 1 < LAYERS {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    /// Records `f` on `tape`. `state` is `[N, 4]` rows of `[x, y, vx, vy]`;
    /// `params` are this model's parameters registered on the same tape.
    pub fn record(&self, tape: &mut Tape, state: Var, params: &[Var]) -> Result<Var> {
        if !self.arch.odd_symmetric {
            return self.record_raw(tape, state, params);
        }
        let plus = self.record_raw(tape, state, params)?;
        let flipped = tape.scale(state, -1.0);
        let minus = self.record_raw(tape, flipped, params)?;
        let diff = tape.sub(plus, minus)?;
        Ok(tape.scale(diff, 0.5))
    }

    fn record_raw(&self, tape: &mut Tape, state: Var, params: &[Var]) -> Result<Var> {
        let n = tape.value(state).shape()[0];
        let per_net = 2 * LAYERS;
        let (intr, inter, agg) = (&params[..per_net], &params[per_net..2 * per_net], &params[2 * per_net..]);
        let pos = tape.slice_cols(state, 0, 2)?;
        let vel = tape.slice_cols(state, 2, 4)?;
        let feats = if self.arch.cubic_input {
            let sq = tape.row_square_norm(vel)?;
            let cubic = tape.scale_rows(vel, sq)?;
            tape.concat(&[vel, cubic])?
        } else {
            vel
        };
        let own = Self::mlp(tape, feats, intr)?;
        let pooled = if n > 1 {
            // Row (i, j) of `diff` is r_i - r_j over ordered pairs j != i.
            let pairs = n * (n - 1);
            let mut diff = vec![0.0; pairs * n];
            let mut mean = vec![0.0; n * pairs];
            let mut row = 0;
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    diff[row * n + i] = 1.0;
                    diff[row * n + j] = -1.0;
                    mean[i * pairs + row] = 1.0 / (n - 1) as f64;
                    row += 1;
                }
            }
            let diff = tape.constant(Array::matrix(pairs, n, diff)?);
            let mean = tape.constant(Array::matrix(n, pairs, mean)?);
            let disp = tape.matmul(diff, pos)?;
            let g = Self::mlp(tape, disp, inter)?;
            tape.matmul(mean, g)?
        } else {
            tape.constant(Array::zeros(&[1, 2]))
        };
        let social = Self::mlp(tape, pooled, agg)?;
        let acc = tape.add(own, social)?;
        tape.concat(&[vel, acc])
    }

    fn graph(&self, features: &[f64], track_params: bool) -> Result<(Tape, RhsGraph)> {
        let n = features.len() / FEATURES_PER_AGENT;
        let mut tape = Tape::new();
        let state = tape.var(Array::matrix(n, FEATURES_PER_AGENT, features.to_vec())?);
        let params = if track_params {
            self.params.register(&mut tape)
        } else {
            self.params.arrays().iter().map(|a| tape.constant(a.clone())).collect()
        };
        let output = self.record(&mut tape, state, &params)?;
        Ok((tape, RhsGraph { state, params, output }))
    }

    /// `f(X)` on flat `[x, y, vx, vy]` features.
    pub fn rhs_features(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.is_empty() || !features.len().is_multiple_of(FEATURES_PER_AGENT) {
            return Err(Error::Shape {
                op: "node rhs",
                lhs: vec![FEATURES_PER_AGENT],
                rhs: vec![features.len()],
            });
        }
        let n = features.len() / FEATURES_PER_AGENT;
        let mut tape = Tape::new();
        let state = tape.constant(Array::matrix(n, FEATURES_PER_AGENT, features.to_vec())?);
        let params: Vec<Var> = self.params.arrays().iter().map(|a| tape.constant(a.clone())).collect();
        let out = self.record(&mut tape, state, &params)?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path, &self.arch.descriptor())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (desc, params) = ParamSet::load(path)?;
        let arch = NodeArchitecture::from_descriptor(&desc)?;
        let template = Self::init(arch, 0)?;
        if template.params.names() != params.names()
            || template.params.arrays().iter().zip(params.arrays()).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::InvalidParams(format!(
                "{}: tensors do not match {}",
                path.display(),
                arch.descriptor()
            )));
        }
        Ok(Self { arch, params })
    }
}

/// The learned vector field evaluated on a swarm state.
pub fn node_rhs(state: &SwarmState, model: &NodeModel) -> Result<StateDerivative> {
    if !state.is_finite() {
        return Err(Error::NonFinite {
            step: 0,
            context: "node_rhs input",
        });
    }
    let f = model.rhs_features(&state.to_features())?;
    let d = SwarmState::from_features(&f, state.time)?;
    Ok(StateDerivative {
        d_positions: d.positions,
        d_velocities: d.velocities,
    })
}

/// Number of Euler steps covering `[t0, t1]` at `step`.
pub fn n_solver_steps(t0: f64, t1: f64, step: f64) -> Result<usize> {
    if !(t1 > t0) || !(step > 0.0) {
        return Err(Error::InvalidParams(format!(
            "need t1 > t0 and step > 0, got t0={t0}, t1={t1}, step={step}"
        )));
    }
    Ok(((t1 - t0) / step).round() as usize)
}

/// Fixed-step explicit Euler on a flat state; returns every visited state.
pub fn euler_solve(
    mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    x0: &[f64],
    step: f64,
    n_steps: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut xs = Vec::with_capacity(n_steps + 1);
    xs.push(x0.to_vec());
    for k in 0..n_steps {
        let x = &xs[k];
        let dx = f(x)?;
        let next: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + step * b).collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: k + 1,
                context: "odesolve",
            });
        }
        xs.push(next);
    }
    Ok(xs)
}

/// Euler integration of `rhs` from `x0` over `[t0, t1]`.
pub fn odesolve(
    mut rhs: impl FnMut(&SwarmState) -> Result<StateDerivative>,
    x0: &SwarmState,
    t0: f64,
    t1: f64,
    step: f64,
) -> Result<Trajectory> {
    let n_steps = n_solver_steps(t0, t1, step)?;
    let xs = euler_solve(
        |x| {
            let s = SwarmState::from_features(x, 0.0)?;
            Ok(rhs(&s)?.to_features())
        },
        &x0.to_features(),
        step,
        n_steps,
    )?;
    to_trajectory(&xs, t0, step)
}

fn to_trajectory(xs: &[Vec<f64>], t0: f64, step: f64) -> Result<Trajectory> {
    let states = xs
        .iter()
        .enumerate()
        .map(|(k, x)| SwarmState::from_features(x, t0 + k as f64 * step))
        .collect::<Result<Vec<_>>>()?;
    let n_agents = states.first().map_or(0, SwarmState::n_agents);
    let params = SwarmParams {
        n_agents,
        noise_std: 0.0,
        dt: step,
        n_steps: xs.len().saturating_sub(1),
        ..SwarmParams::default()
    };
    Trajectory::new(states, step, params)
}

/// Sensitivities after sweeping the adjoint back to the initial time.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState {
    /// `dL/dX` at the current time.
    pub a: Vec<f64>,
    /// `dL/dtheta`, flattened like [`ParamSet::flatten`].
    pub param_grad: Vec<f64>,
    pub time: f64,
}

/// Discrete adjoint of the Euler scheme `X_{k+1} = X_k + h f(X_k)`.
///
/// `forward` holds `X_0 ..= X_K` and `loss_grads[k]` is the direct
/// derivative of the loss with respect to `X_k` (zeros where nothing is
/// observed). Sweeping backwards,
///
/// ```text
/// a_K = g_K
/// a_k = a_{k+1} + h J_f(X_k)^T a_{k+1} + g_k
/// dL/dtheta += h (df/dtheta at X_k)^T a_{k+1}
/// ```
///
/// with the vector-Jacobian products taken from the tape.
pub fn adjoint_backward(
    model: &NodeModel,
    forward: &[Vec<f64>],
    step: f64,
    t0: f64,
    loss_grads: &[Vec<f64>],
) -> Result<AdjointState> {
    if forward.is_empty() || loss_grads.len() != forward.len() {
        return Err(Error::Shape {
            op: "adjoint_backward",
            lhs: vec![forward.len()],
            rhs: vec![loss_grads.len()],
        });
    }
    let k_max = forward.len() - 1;
    let mut a = loss_grads[k_max].clone();
    let mut param_grad = vec![0.0; model.params.n_params()];
    for k in (0..k_max).rev() {
        let (tape, g) = model.graph(&forward[k], true)?;
        let cot = Array::new(tape.value(g.output).shape().to_vec(), a.clone())?;
        let grads = tape.vjp(g.output, &cot)?;
        let jt_a = grads.wrt(&tape, g.state);
        let dtheta = model.params.flat_grad(&tape, &grads, &g.params);
        for (p, d) in param_grad.iter_mut().zip(&dtheta) {
            *p += step * d;
        }
        for ((ai, ji), gi) in a.iter_mut().zip(jt_a.data()).zip(&loss_grads[k]) {
            *ai += step * ji + gi;
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: k,
                context: "adjoint",
            });
        }
    }
    Ok(AdjointState {
        a,
        param_grad,
        time: t0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeTrainConfig {
    pub solver_step: f64,
    pub learning_rate: f64,
    /// Solver steps per training segment.
    pub segment_length: usize,
    /// Offset between consecutive segment starts, in data steps.
    pub segment_stride: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for NodeTrainConfig {
    fn default() -> Self {
        Self {
            solver_step: 0.05,
            learning_rate: 0.01,
            segment_length: 50,
            segment_stride: 25,
            epochs: 200,
            seed: 0,
        }
    }
}

/// Cuts every trajectory into overlapping segments of
/// `segment_length + 1` states.
pub fn make_segments(trajs: &[Trajectory], segment_length: usize, stride: usize) -> Result<Vec<Trajectory>> {
    if segment_length == 0 || stride == 0 {
        return Err(Error::InvalidParams("segment length and stride must be positive".into()));
    }
    let mut out = Vec::new();
    for t in trajs {
        let mut start = 0;
        while start + segment_length < t.len() {
            out.push(t.slice(start..start + segment_length + 1));
            start += stride;
        }
    }
    if out.is_empty() {
        return Err(Error::TooShort {
            what: "make_segments",
            needed: segment_length + 1,
            found: trajs.iter().map(Trajectory::len).max().unwrap_or(0),
        });
    }
    Ok(out)
}

/// Mean loss over segments and its parameter gradient.
///
/// Each segment contributes the MSE between the solve from its first state
/// and its observed states `1..`.
pub fn segment_loss_and_grad(model: &NodeModel, segments: &[Trajectory], solver_step: f64) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0;
    let mut grad = vec![0.0; model.params.n_params()];
    let n_seg = segments.len() as f64;
    for seg in segments {
        let ratio = (seg.dt / solver_step).round() as usize;
        if ratio == 0 || ((ratio as f64) * solver_step - seg.dt).abs() > 1e-9 * seg.dt {
            return Err(Error::InvalidParams(format!(
                "data dt {} is not a multiple of solver step {solver_step}",
                seg.dt
            )));
        }
        let obs: Vec<Vec<f64>> = seg.states.iter().map(SwarmState::to_features).collect();
        let n_steps = (obs.len() - 1) * ratio;
        let xs = euler_solve(|x| model.rhs_features(x), &obs[0], solver_step, n_steps)?;
        let width = obs[0].len();
        let count = ((obs.len() - 1) * width) as f64;
        let mut loss_grads = vec![vec![0.0; width]; xs.len()];
        let mut loss = 0.0;
        for (k, y) in obs.iter().enumerate().skip(1) {
            let x = &xs[k * ratio];
            for j in 0..width {
                let r = x[j] - y[j];
                loss += r * r / count;
                loss_grads[k * ratio][j] = 2.0 * r / count / n_seg;
            }
        }
        total += loss / n_seg;
        let adj = adjoint_backward(model, &xs, solver_step, seg.states[0].time, &loss_grads)?;
        for (g, d) in grad.iter_mut().zip(&adj.param_grad) {
            *g += d;
        }
    }
    Ok((total, grad))
}

/// Adam on the mean segment loss, one step per epoch. The learning curve
/// holds the loss evaluated before each step.
pub fn train_node(
    segments: &[Trajectory],
    arch: NodeArchitecture,
    config: &NodeTrainConfig,
) -> Result<(NodeModel, Vec<f64>)> {
    if !(config.solver_step > 0.0) || config.epochs == 0 {
        return Err(Error::InvalidParams(format!("invalid neural ODE training config {config:?}")));
    }
    if segments.is_empty() {
        return Err(Error::TooShort {
            what: "train_node",
            needed: 1,
            found: 0,
        });
    }
    let mut model = NodeModel::init(arch, config.seed)?;
    let mut opt = OptimizerState::adam(config.learning_rate, model.params.n_params());
    let mut flat = model.params.flatten();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let (loss, grad) = segment_loss_and_grad(&model, segments, config.solver_step)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        curve.push(loss);
        log::debug!("node epoch {epoch}: loss {loss:.6e}");
        opt.step(&mut flat, &grad)?;
        model.params.assign_flat(&flat)?;
    }
    Ok((model, curve))
}

/// Solves the learned field from `ic` for `horizon` steps of `step`.
pub fn node_rollout(model: &NodeModel, ic: &SwarmState, horizon: usize, step: f64) -> Result<Trajectory> {
    if !ic.is_finite() {
        return Err(Error::NonFinite {
            step: 0,
            context: "node_rollout initial condition",
        });
    }
    let xs = euler_solve(|x| model.rhs_features(x), &ic.to_features(), step, horizon)?;
    to_trajectory(&xs, ic.time, step)
}
