//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records operations eagerly; [`Tape::vjp`] and
//! [`Tape::backward`] sweep it in reverse. Parameters live in a
//! [`ParamSet`] and are updated through an [`OptimizerState`].

mod array;
mod optim;
mod params;
mod tape;

pub use array::Array;
pub use optim::{OptimizerKind, OptimizerState};
pub use params::ParamSet;
pub use tape::{conv1d_out_len, Gradients, Tape, Var};

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
        let n = shape.iter().product();
        // Kept away from zero so relu has no kink inside the FD stencil.
        let data = (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(-1.0..1.0);
                if v.abs() < 0.05 {
                    v + 0.1f64.copysign(v)
                } else {
                    v
                }
            })
            .collect();
        Array::new(shape.to_vec(), data).unwrap()
    }

    type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

    /// Max relative error between reverse-mode and central differences for
    /// `sum(build(inputs) * r)` with fixed random weights `r`.
    fn fd_check(build: &Build, inputs: &[Array], seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eval = |xs: &[Array], weights: Option<&Array>| -> (f64, Tape, Vec<Var>, Var, Var) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|x| tape.var(x.clone())).collect();
            let out = build(&mut tape, &vars);
            let w = weights
                .cloned()
                .unwrap_or_else(|| Array::filled(tape.value(out).shape(), 1.0));
            let wv = tape.constant(w);
            let prod = tape.mul(out, wv).unwrap();
            let loss = tape.sum(prod);
            (tape.value(loss).item(), tape, vars, loss, out)
        };
        let (_, probe, _, _, probe_out) = eval(inputs, None);
        let out_shape = probe.value(probe_out).shape().to_vec();
        let weights = rand_array(&mut rng, &out_shape);
        let (_, tape, vars, loss, _) = eval(inputs, Some(&weights));
        let grads = tape.backward(loss).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (k, x) in inputs.iter().enumerate() {
            let analytic = grads.wrt(&tape, vars[k]);
            for j in 0..x.len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[j] += h;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[j] -= h;
                let numeric = (eval(&plus, Some(&weights)).0 - eval(&minus, Some(&weights)).0) / (2.0 * h);
                let a = analytic.data()[j];
                let scale = a.abs().max(numeric.abs());
                let err = if scale > 1e-6 { (a - numeric).abs() / scale } else { (a - numeric).abs() };
                worst = worst.max(err);
            }
        }
        worst
    }

    fn all_primitives(seed: u64) -> Vec<(&'static str, Box<Build>, Vec<Array>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |s: &[usize]| rand_array(&mut rng, s);
        vec![
            ("matmul", Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1]).unwrap()) as Box<Build>, vec![r(&[3, 4]), r(&[4, 2])]),
            ("add", Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1]).unwrap()), vec![r(&[2, 3]), r(&[2, 3])]),
            ("sub", Box::new(|t: &mut Tape, v: &[Var]| t.sub(v[0], v[1]).unwrap()), vec![r(&[2, 3]), r(&[2, 3])]),
            ("mul", Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1]).unwrap()), vec![r(&[2, 3]), r(&[2, 3])]),
            ("scale", Box::new(|t: &mut Tape, v: &[Var]| t.scale(v[0], -1.7)), vec![r(&[4])]),
            ("add_bias", Box::new(|t: &mut Tape, v: &[Var]| t.add_bias(v[0], v[1]).unwrap()), vec![r(&[3, 2]), r(&[2])]),
            ("concat", Box::new(|t: &mut Tape, v: &[Var]| t.concat(&[v[0], v[1], v[0]]).unwrap()), vec![r(&[2, 1]), r(&[2, 3])]),
            ("slice_cols", Box::new(|t: &mut Tape, v: &[Var]| t.slice_cols(v[0], 1, 3).unwrap()), vec![r(&[3, 4])]),
            ("reshape", Box::new(|t: &mut Tape, v: &[Var]| t.reshape(v[0], vec![6]).unwrap()), vec![r(&[2, 3])]),
            ("relu", Box::new(|t: &mut Tape, v: &[Var]| t.relu(v[0])), vec![r(&[3, 3])]),
            ("tanh", Box::new(|t: &mut Tape, v: &[Var]| t.tanh(v[0])), vec![r(&[3, 3])]),
            ("cubic", Box::new(|t: &mut Tape, v: &[Var]| t.cubic(v[0])), vec![r(&[3, 3])]),
            ("square_norm", Box::new(|t: &mut Tape, v: &[Var]| t.square_norm(v[0])), vec![r(&[2, 3])]),
            ("row_square_norm", Box::new(|t: &mut Tape, v: &[Var]| t.row_square_norm(v[0]).unwrap()), vec![r(&[3, 2])]),
            ("scale_rows", Box::new(|t: &mut Tape, v: &[Var]| t.scale_rows(v[0], v[1]).unwrap()), vec![r(&[3, 2]), r(&[3, 1])]),
            (
                "conv1d",
                Box::new(|t: &mut Tape, v: &[Var]| t.conv1d(v[0], v[1], v[2], 2, 2).unwrap()),
                vec![r(&[2, 3, 5]), r(&[4, 3, 5]), r(&[4])],
            ),
            (
                "conv1d_s1",
                Box::new(|t: &mut Tape, v: &[Var]| t.conv1d(v[0], v[1], v[2], 1, 1).unwrap()),
                vec![r(&[1, 2, 4]), r(&[3, 2, 3]), r(&[3])],
            ),
            ("mse", Box::new(|t: &mut Tape, v: &[Var]| t.mse(v[0], v[1]).unwrap()), vec![r(&[2, 3]), r(&[2, 3])]),
            ("sum", Box::new(|t: &mut Tape, v: &[Var]| t.sum(v[0])), vec![r(&[2, 2])]),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn every_primitive_matches_finite_differences(seed in any::<u64>()) {
            for (name, build, inputs) in all_primitives(seed) {
                let err = fd_check(build.as_ref(), &inputs, seed);
                prop_assert!(err < 1e-4, "{name}: rel err {err}");
            }
        }
    }

    #[test]
    fn three_layer_network_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut r = |s: &[usize]| rand_array(&mut rng, s);
        let inputs = vec![r(&[5, 4]), r(&[4, 8]), r(&[8]), r(&[8, 8]), r(&[8]), r(&[8, 3]), r(&[3])];
        let build = |t: &mut Tape, v: &[Var]| {
            let h = t.dense(v[0], v[1], v[2]).unwrap();
            let h = t.tanh(h);
            let h = t.dense(h, v[3], v[4]).unwrap();
            let h = t.relu(h);
            t.dense(h, v[5], v[6]).unwrap()
        };
        let err = fd_check(&build, &inputs, 11);
        assert!(err < 1e-4, "rel err {err}");
    }

    fn naive_conv(x: &Array, w: &Array, b: &Array, pad: usize, stride: usize) -> Vec<f64> {
        let (nb, ci, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co, k) = (w.shape()[0], w.shape()[2]);
        let lo = (len + 2 * pad - k) / stride + 1;
        let mut padded = vec![0.0; nb * ci * (len + 2 * pad)];
        for bi in 0..nb {
            for c in 0..ci {
                for l in 0..len {
                    padded[(bi * ci + c) * (len + 2 * pad) + pad + l] = x.data()[(bi * ci + c) * len + l];
                }
            }
        }
        let mut out = Vec::new();
        for bi in 0..nb {
            for o in 0..co {
                for l in 0..lo {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for t in 0..k {
                            acc += w.data()[(o * ci + c) * k + t]
                                * padded[(bi * ci + c) * (len + 2 * pad) + l * stride + t];
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn conv1d_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(len, k, pad, stride) in &[(5, 5, 2, 2), (3, 5, 2, 2), (2, 3, 1, 1), (9, 3, 0, 2)] {
            let x = rand_array(&mut rng, &[3, 4, len]);
            let w = rand_array(&mut rng, &[6, 4, k]);
            let b = rand_array(&mut rng, &[6]);
            let mut t = Tape::new();
            let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
            let y = t.conv1d(xv, wv, bv, pad, stride).unwrap();
            let expected = naive_conv(&x, &w, &b, pad, stride);
            assert_eq!(t.value(y).len(), expected.len());
            for (a, e) in t.value(y).data().iter().zip(&expected) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv1d_output_lengths() {
        assert_eq!(conv1d_out_len(5, 5, 2, 2), Some(3));
        assert_eq!(conv1d_out_len(3, 5, 2, 2), Some(2));
        assert_eq!(conv1d_out_len(2, 3, 1, 1), Some(2));
        assert_eq!(conv1d_out_len(2, 5, 0, 1), None);
    }

    #[test]
    fn named_examples() {
        let mut t = Tape::new();
        let x = t.var(Array::scalar(3.0));
        let sq = t.square_norm(x);
        let g = t.backward(sq).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);

        let c = t.constant(Array::scalar(2.0));
        let cube = t.cubic(c);
        assert_eq!(t.value(cube).item(), 8.0);

        let a = t.var(Array::new(vec![2, 2], vec![1.0, -2.0, 0.5, 4.0]).unwrap());
        let m = t.mse(a, a).unwrap();
        assert_eq!(t.value(m).item(), 0.0);
    }

    #[test]
    fn mse_linear_hand_derivative() {
        let (w0, xs, ys) = (0.7, [1.0, -2.0, 3.0], [0.5, 0.1, -1.0]);
        let mut t = Tape::new();
        let w = t.var(Array::scalar(w0));
        let x = t.constant(Array::matrix(3, 1, xs.to_vec()).unwrap());
        let y = t.constant(Array::matrix(3, 1, ys.to_vec()).unwrap());
        let wm = t.reshape(w, vec![1, 1]).unwrap();
        let pred = t.matmul(x, wm).unwrap();
        let loss = t.mse(pred, y).unwrap();
        let g = t.backward(loss).unwrap().get(w).unwrap().item();
        let expected: f64 = xs.iter().zip(&ys).map(|(x, y)| 2.0 * x * (w0 * x - y)).sum::<f64>() / 3.0;
        assert!((g - expected).abs() < 1e-14);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Array::scalar(2.0));
        let x = t.var(Array::scalar(1.5));
        let p = t.mul(c, x).unwrap();
        let g = t.backward(p).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.var(Array::zeros(&[2, 2]));
        let y = t.tanh(x);
        assert!(matches!(t.backward(y), Err(crate::Error::NonScalarLoss(s)) if s == vec![2, 2]));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = t.var(Array::zeros(&[2, 3]));
        let b = t.var(Array::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        let c = t.var(Array::zeros(&[3, 2]));
        assert!(t.add(a, c).is_err());
    }

    #[test]
    fn backward_is_deterministic() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut t = Tape::new();
            let x = t.var(rand_array(&mut rng, &[4, 3]));
            let w = t.var(rand_array(&mut rng, &[3, 3]));
            let h = t.matmul(x, w).unwrap();
            let h = t.tanh(h);
            let l = t.square_norm(h);
            let g = t.backward(l).unwrap();
            (g.get(x).unwrap().clone(), g.get(w).unwrap().clone())
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn vjp_matches_explicit_jacobian() {
        // y = x @ W, so x-bar = c @ W^T.
        let mut t = Tape::new();
        let x = t.var(Array::matrix(1, 2, vec![0.3, -0.4]).unwrap());
        let w = t.constant(Array::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let y = t.matmul(x, w).unwrap();
        let c = Array::matrix(1, 3, vec![1.0, 0.0, -1.0]).unwrap();
        let g = t.vjp(y, &c).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0 - 3.0, 4.0 - 6.0]);
    }
}
