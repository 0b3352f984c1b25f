use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use swarm_sysid::autodiff::{Array, Tape};
use swarm_sysid::baselines::{self, ForecasterSpec, ModelKind, TrainConfig};
use swarm_sysid::dataset::{self, build_methodology, IcMatch, Methodology, MethodologySeeds, Phase, SplitSpec};
use swarm_sysid::node::{
    make_segments, node_rollout, segment_loss_and_grad, train_node, NodeArchitecture, NodeModel, NodeTrainConfig,
};
use swarm_sysid::ols::{fit_ols, ols_rollout};
use swarm_sysid::simulator::{sample_initial_conditions, simulate, InitRanges};
use swarm_sysid::{
    classify_regime, mean_field, mfe, mfe_series, steady_descriptors, Error, Regime, SwarmParams, SwarmState, Trajectory,
    Vec2,
};
use swarm_sysid_cli::{cmd_compare, cmd_make_dataset, cmd_simulate, ExperimentConfig};
use swarm_sysid_validation::{normalized_tail_mfe, seeded_run, transient_baseline, Budget, Verdict};

const TAIL: f64 = 0.2;

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn label(traj: &swarm_sysid::Result<Trajectory>) -> String {
    match traj {
        Ok(t) => match classify_regime(t, TAIL) {
            Ok(l) => l.regime.as_str().to_string(),
            Err(e) => format!("error ({e})"),
        },
        Err(Error::BlowUp { .. }) | Err(Error::NonFinite { .. }) => "blow-up".to_string(),
        Err(e) => format!("error ({e})"),
    }
}

#[test]
fn criterion_1_single_agent_relaxes_to_unit_speed() {
    let budget = Budget::start(secs(1));
    let dt = 1e-3;
    let n_steps = 20_000;
    let (mut end_err, mut path_err) = (0.0f64, 0.0f64);
    for s0 in [0.1, 0.5, 1.5] {
        let ic = SwarmState::new(vec![Vec2::new(0.25, -1.0)], vec![Vec2::new(0.6 * s0, 0.8 * s0)], 0.0).unwrap();
        let params = SwarmParams {
            n_agents: 1,
            coupling: 0.0,
            noise_std: 0.0,
            dt,
            n_steps,
            ..SwarmParams::default()
        };
        let traj = simulate(&params, &ic).unwrap();
        // ds/dt = s (1 - s^2) has s(t) = 1 / sqrt(1 + (1/s0^2 - 1) e^{-2t}).
        for (k, s) in traj.states.iter().enumerate() {
            let t = k as f64 * dt;
            let exact = 1.0 / (1.0 + (1.0 / (s0 * s0) - 1.0) * (-2.0 * t).exp()).sqrt();
            path_err = path_err.max((s.velocities[0].norm() - exact).abs());
        }
        let last = traj.states.last().unwrap().velocities[0].norm();
        end_err = end_err.max((last - 1.0).abs());
    }
    let pass = end_err <= 1e-3 && path_err <= 1e-3 && budget.within();
    Verdict {
        criterion: 1,
        pass,
        detail: format!(
            "max ||v|-1| at t=20 {end_err:.2e}, max deviation from closed form {path_err:.2e}, {}",
            budget.describe()
        ),
    }
    .report();
}

#[test]
fn criterion_2_default_swarm_mills_at_unit_radius() {
    let budget = Budget::start(secs(10));
    let traj = seeded_run(32, 3000, 0, 1).unwrap();
    let l = classify_regime(&traj, TAIL).unwrap();
    let expected = 1.0 / SwarmParams::default().coupling.sqrt();
    let rel = (l.ring_radius_mean - expected).abs() / expected;
    let pass = l.regime == Regime::Milling && rel <= 0.1 && budget.within();
    Verdict {
        criterion: 2,
        pass,
        detail: format!(
            "regime {}, tail ring radius {:.4} (rel. dev. {rel:.3}), {}",
            l.regime,
            l.ring_radius_mean,
            budget.describe()
        ),
    }
    .report();
}

#[test]
fn criterion_3_step_size_shifts_milling_to_rotation() {
    let budget = Budget::start(secs(60));
    let horizon = 150.0;
    let dts = [0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5];
    let ic = sample_initial_conditions(32, &InitRanges::default(), 1).unwrap();
    let labels: Vec<String> = dts
        .iter()
        .map(|&dt| {
            let params = SwarmParams {
                dt,
                n_steps: (horizon / dt).round() as usize,
                ..SwarmParams::default()
            };
            label(&simulate(&params, &ic))
        })
        .collect();
    let mut pair = None;
    for i in 0..dts.len() {
        for j in i + 1..dts.len() {
            if pair.is_none() && labels[i] == "milling" && labels[j] == "rotation" {
                pair = Some((dts[i], dts[j]));
            }
        }
    }
    let sweep: Vec<String> = dts.iter().zip(&labels).map(|(dt, l)| format!("dt={dt}:{l}")).collect();
    let found = match pair {
        Some((a, b)) => format!("milling at dt={a}, rotation at dt={b}"),
        None => "no milling to rotation pair".to_string(),
    };
    Verdict {
        criterion: 3,
        pass: pair.is_some() && budget.within(),
        detail: format!("{found}; T={horizon} sweep [{}], {}", sweep.join(" "), budget.describe()),
    }
    .report();
}

#[test]
fn criterion_4_ols_steady_beats_transient() {
    let budget = Budget::start(secs(10));
    let params = SwarmParams::default();
    let seeds = MethodologySeeds::default();
    let run = |phase: Phase| {
        let split = SplitSpec::for_phase(phase).with_window(10);
        let data = build_methodology(
            Methodology::new(phase, IcMatch::SameAsTest),
            &split,
            &params,
            seeds,
            &InitRanges::default(),
        )
        .unwrap();
        let model = fit_ols(&data.train_samples, 1, 0.0).unwrap();
        let pred = ols_rollout(&model, &data.seed_window, split.test_len);
        (data, pred)
    };
    let (steady, steady_pred) = run(Phase::Steady);
    let (transient, transient_pred) = run(Phase::Transient);
    let radius = steady_descriptors(&steady.test, TAIL).ring_radius_mean;
    let steady_series = steady_pred.as_ref().map(|p| mfe_series(&steady.test, p));
    let steady_median = steady_series.as_ref().map_or(f64::INFINITY, |s| s.median() / radius);
    let slope = steady_series.as_ref().map_or(f64::NAN, |s| s.trend_slope());
    let transient_median = transient_pred
        .as_ref()
        .map_or(f64::INFINITY, |p| mfe_series(&transient.test, p).median() / radius);
    let pass = 5.0 * steady_median <= transient_median && slope >= 0.0 && budget.within();
    Verdict {
        criterion: 4,
        pass,
        detail: format!(
            "normalized median MFE steady {steady_median:.3e} vs transient {transient_median:.3e} (ratio {:.1}), steady slope {slope:.3e}, {}",
            transient_median / steady_median,
            budget.describe()
        ),
    }
    .report();
}

#[test]
fn criterion_5_deep_baselines_converge_within_budget() {
    let budget = Budget::start(secs(300));
    // Eight agents: these seeds mill, and the 32-agent MLP alone would
    // exceed the time budget.
    let n_agents = 8;
    let seeds = MethodologySeeds {
        sim: 1,
        train_ic: 2,
        test_ic: 3,
    };
    let params = SwarmParams {
        n_agents,
        ..SwarmParams::default()
    };
    let data = build_methodology(
        Methodology::new(Phase::Steady, IcMatch::SameAsTest),
        &SplitSpec::STEADY,
        &params,
        seeds,
        &InitRanges::default(),
    )
    .unwrap();
    let mut ratios = BTreeMap::new();
    let mut mlp_at_50 = f64::NAN;
    for kind in [ModelKind::Rnn, ModelKind::Cnn, ModelKind::Mlp] {
        let cfg = TrainConfig::for_kind(kind);
        let (_, history) = baselines::train(ForecasterSpec::new(kind, n_agents), &data.train_samples, &cfg).unwrap();
        if kind == ModelKind::Mlp {
            mlp_at_50 = history[49] / history[0];
        }
        ratios.insert(kind.as_str(), (cfg.epochs, history[cfg.epochs - 1] / history[0]));
    }
    let pass = ratios.values().all(|&(_, r)| r <= 0.1) && budget.within();
    let parts: Vec<String> = ratios.iter().map(|(k, (e, r))| format!("{k} epoch {e}/1 = {r:.3}")).collect();
    Verdict {
        criterion: 5,
        pass,
        detail: format!(
            "N={n_agents} loss ratios {}; mlp epoch 50/1 = {mlp_at_50:.4}, {}",
            parts.join(", "),
            budget.describe()
        ),
    }
    .report();
}

#[test]
fn criterion_6_transient_baselines_miss_the_steady_regime() {
    let budget = Budget::start(secs(300));
    let n_agents = 8;
    let split = SplitSpec::TRANSIENT;
    let mut truth_mills = true;
    let mut mismatches = BTreeMap::from([("rnn", 0), ("cnn", 0)]);
    let mut trials = Vec::new();
    for t in 0..3u64 {
        let seeds = MethodologySeeds {
            sim: 1 + t,
            train_ic: 2 + t,
            test_ic: 3 + t,
        };
        let truth = seeded_run(n_agents, 2999, seeds.sim, seeds.test_ic).unwrap();
        let truth_label = classify_regime(&truth, TAIL).unwrap().regime;
        truth_mills &= truth_label == Regime::Milling;
        let window = truth.slice(split.train_len - split.window_len..split.train_len);
        let horizon = truth.len() - split.train_len;
        let mut row = vec![format!("trial {t} truth {truth_label}")];
        for kind in [ModelKind::Rnn, ModelKind::Cnn] {
            let model = transient_baseline(kind, n_agents, seeds).unwrap();
            let l = label(&baselines::rollout(&model, &window, horizon));
            if l != truth_label.as_str() {
                *mismatches.get_mut(kind.as_str()).unwrap() += 1;
            }
            row.push(format!("{kind} {l}"));
        }
        trials.push(row.join(" "));
    }
    let pass = truth_mills && mismatches.values().all(|&m| m >= 1) && budget.within();
    Verdict {
        criterion: 6,
        pass,
        detail: format!(
            "N={n_agents} mismatches rnn {}/3 cnn {}/3; {}; {}",
            mismatches["rnn"],
            mismatches["cnn"],
            trials.join("; "),
            budget.describe()
        ),
    }
    .report();
}

fn unrolled_loss_and_grad(m: &NodeModel, seg: &Trajectory, step: f64) -> (f64, Vec<f64>) {
    let obs: Vec<Vec<f64>> = seg.states.iter().map(SwarmState::to_features).collect();
    let n = seg.n_agents();
    let mut tape = Tape::new();
    let params = m.params.register(&mut tape);
    let mut x = tape.constant(Array::matrix(n, 4, obs[0].clone()).unwrap());
    let mut terms = Vec::new();
    for y in &obs[1..] {
        let f = m.record(&mut tape, x, &params).unwrap();
        let dx = tape.scale(f, step);
        x = tape.add(x, dx).unwrap();
        let target = tape.constant(Array::matrix(n, 4, y.clone()).unwrap());
        terms.push(tape.mse(x, target).unwrap());
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t).unwrap();
    }
    let loss = tape.scale(total, 1.0 / terms.len() as f64);
    let grads = tape.backward(loss).unwrap();
    (tape.value(loss).item(), m.params.flat_grad(&tape, &grads, &params))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

#[test]
fn criterion_7_adjoint_gradients_match_references() {
    let budget = Budget::start(secs(30));
    let model = NodeModel::init(NodeArchitecture::default(), 7).unwrap();
    let seg = seeded_run(3, 10, 3, 4).unwrap();
    let segs = [seg.clone()];
    let step = seg.dt;
    let (loss, grad) = segment_loss_and_grad(&model, &segs, step).unwrap();
    let (ref_loss, ref_grad) = unrolled_loss_and_grad(&model, &seg, step);
    let unrolled = rel_err(&grad, &ref_grad);

    let flat = model.params.flatten();
    let picks: Vec<usize> = (0..flat.len()).step_by(flat.len() / 64).collect();
    let h = 1e-5;
    let mut probe = model.clone();
    let mut fd = Vec::with_capacity(picks.len());
    for &i in &picks {
        let mut p = flat.clone();
        p[i] = flat[i] + h;
        probe.params.assign_flat(&p).unwrap();
        let up = segment_loss_and_grad(&probe, &segs, step).unwrap().0;
        p[i] = flat[i] - h;
        probe.params.assign_flat(&p).unwrap();
        let down = segment_loss_and_grad(&probe, &segs, step).unwrap().0;
        fd.push((up - down) / (2.0 * h));
    }
    let picked: Vec<f64> = picks.iter().map(|&i| grad[i]).collect();
    let finite = rel_err(&picked, &fd);
    let pass = unrolled < 1e-6 && finite < 1e-3 && (loss - ref_loss).abs() <= 1e-12 * ref_loss && budget.within();
    Verdict {
        criterion: 7,
        pass,
        detail: format!(
            "{} params; rel. err vs unrolled {unrolled:.2e}, vs central differences on {} params {finite:.2e}, {}",
            flat.len(),
            picks.len(),
            budget.describe()
        ),
    }
    .report();
}

#[test]
fn criterion_8_neural_ode_generalizes_to_unseen_swarms() {
    let budget = Budget::start(secs(600));
    let runs: Vec<Trajectory> = (0..4).map(|s| seeded_run(3, 249, 100 + s, 100 + s).unwrap()).collect();
    let cfg = NodeTrainConfig::default();
    let segments = make_segments(&runs, cfg.segment_length, cfg.segment_stride).unwrap();
    let (model, _) = train_node(&segments, NodeArchitecture::default(), &cfg).unwrap();
    let baselines: Vec<_> = [ModelKind::Rnn, ModelKind::Cnn]
        .into_iter()
        .map(|k| (k, transient_baseline(k, 32, MethodologySeeds::default()).unwrap()))
        .collect();

    let n_agents = 32;
    let window = SplitSpec::TRANSIENT.window_len;
    let mut milling = 0;
    let mut speeds_ok = true;
    let mut node_mfe = Vec::new();
    let mut base_mfe: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut trials = Vec::new();
    for s in 0..3u64 {
        let truth = seeded_run(n_agents, 2999, 500 + s, 500 + s).unwrap();
        let radius = classify_regime(&truth, TAIL).unwrap().ring_radius_mean;
        let pred = node_rollout(&model, &truth.states[0], truth.len() - 1, cfg.solver_step).unwrap();
        let l = classify_regime(&pred, TAIL).unwrap();
        milling += usize::from(l.regime == Regime::Milling);
        speeds_ok &= (l.mean_speed - 1.0).abs() <= 0.1;
        let m = normalized_tail_mfe(&truth, &pred, TAIL, radius);
        node_mfe.push(m);
        let mut row = format!("ic {s} node {} speed {:.3} mfe {m:.3}", l.regime, l.mean_speed);
        let target = truth.slice(window..truth.len());
        for (kind, bm) in &baselines {
            let b = baselines::rollout(bm, &truth.slice(0..window), target.len())
                .map_or(f64::INFINITY, |p| normalized_tail_mfe(&target, &p, TAIL, radius));
            base_mfe.entry(kind.as_str()).or_default().push(b);
            row.push_str(&format!(" {kind} {b:.3}"));
        }
        trials.push(row);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let node_mean = mean(&node_mfe);
    let beats = base_mfe.values().all(|v| node_mean < mean(v));
    let pass = milling >= 2 && speeds_ok && beats && budget.within();
    Verdict {
        criterion: 8,
        pass,
        detail: format!(
            "milling {milling}/3, mean normalized tail MFE node {node_mean:.3} rnn {:.3} cnn {:.3}; {}; {}",
            mean(&base_mfe["rnn"]),
            mean(&base_mfe["cnn"]),
            trials.join("; "),
            budget.describe()
        ),
    }
    .report();
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
        }
    }
}

fn run_pipeline(out: &Path, threads: usize) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_text("n_agents = 3\nhidden = 8\nepochs = 2\nnode_hidden = 8\nnode_epochs = 2\nphase = transient\n")
        .unwrap();
    cfg.out = out.to_path_buf();
    cmd_simulate(&cfg).unwrap();
    cmd_make_dataset(&cfg).unwrap();
    cmd_compare(&cfg, threads).unwrap();
    let mut files = BTreeMap::new();
    collect_files(out, out, &mut files);
    files
}

#[test]
fn criterion_9_exact_metrics_and_reproducible_artifacts() {
    let budget = Budget::start(secs(10));
    let mut failures = Vec::new();

    let positions = vec![Vec2::new(0.5, -1.25), Vec2::new(2.0, 0.75), Vec2::new(-0.25, 3.5), Vec2::new(1.0, 1.0)];
    let velocities = vec![Vec2::new(1.0, 0.0); 4];
    let state = SwarmState::new(positions.clone(), velocities.clone(), 0.0).unwrap();
    let shifted = SwarmState::new(
        positions.iter().map(|p| *p + Vec2::new(3.0, 4.0)).collect(),
        velocities.clone(),
        0.0,
    )
    .unwrap();
    if mfe(&state, &state) != 0.0 {
        failures.push("identity");
    }
    if mfe(&state, &shifted) != 5.0 {
        failures.push("offset");
    }
    if mfe(&state, &state.permuted(&[2, 0, 3, 1])) != 0.0 || mean_field(&state) != Vec2::new(0.8125, 1.0) {
        failures.push("permutation");
    }

    let dir = tempfile::tempdir().unwrap();
    let traj = seeded_run(4, 50, 9, 10).unwrap();
    let csv = dir.path().join("traj.csv");
    dataset::write_csv(&traj, &csv).unwrap();
    let back = dataset::read_csv(&csv).unwrap();
    let bits = |t: &Trajectory| -> Vec<u64> {
        t.states.iter().flat_map(|s| {
            let mut f: Vec<u64> = s.to_features().iter().map(|v| v.to_bits()).collect();
            f.push(s.time.to_bits());
            f
        }).collect()
    };
    if bits(&back) != bits(&traj) || back.dt.to_bits() != traj.dt.to_bits() {
        failures.push("csv round trip");
    }

    let a = run_pipeline(&dir.path().join("a"), 1);
    let b = run_pipeline(&dir.path().join("b"), 2);
    let identical = a == b;
    if !identical {
        failures.push("cli artifacts differ");
    }
    let pass = failures.is_empty() && budget.within();
    Verdict {
        criterion: 9,
        pass,
        detail: format!(
            "mfe identity/offset/permutation, bitwise csv round trip, {} cli artifacts over two runs; failed checks [{}]; {}",
            a.len(),
            failures.join(", "),
            budget.describe()
        ),
    }
    .report();
}
