mod common;

use common::{close, fd_check, random_tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wave_core::nn::*;
use wave_oracles::{dense_chain, layer_norm_row};

const H: f64 = 1e-5;
const REL: f64 = 1e-4;
const ABS: f64 = 1e-7;

fn plain_spec(input: usize, hidden: Vec<usize>, output: usize) -> MlpSpec {
    MlpSpec {
        input_dim: input,
        hidden_dims: hidden,
        output_dim: output,
        hidden_activation: Activation::Relu,
        output_activation: OutputActivation::Identity,
        use_layer_norm: false,
    }
}

#[test]
fn identity_and_zero_networks() {
    let spec = MlpSpec {
        hidden_activation: Activation::Identity,
        ..plain_spec(3, vec![], 3)
    };
    let mut p = ParameterSet::new();
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 4] = 1.0;
    }
    p.insert("out.weight", Tensor::new(vec![3, 3], eye).unwrap()).unwrap();
    p.insert("out.bias", Tensor::zeros(&[3])).unwrap();
    let y = forward(&spec, &p, &Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
    assert_eq!(y.data(), &[1.0, 2.0, 3.0]);

    let spec = MlpSpec::critic(5);
    let zeros = spec.init_params(&mut ChaCha8Rng::seed_from_u64(0)).unwrap().zeros_like();
    let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(1), &[7, 5], 10.0);
    let y = forward(&spec, &zeros, &x).unwrap();
    assert_eq!(y.shape(), &[7, 1]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..100 {
        let (i, h, o) = (rng.random_range(1..6), rng.random_range(1..9), rng.random_range(1..4));
        let spec = plain_spec(i, vec![h], o);
        let params = spec.init_params(&mut rng).unwrap();
        let x: Vec<f64> = (0..i).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = forward(&spec, &params, &Tensor::vector(x.clone()).unwrap()).unwrap();
        let layer = |w: &str, b: &str| (params.get(w).unwrap().data().to_vec(), params.get(b).unwrap().data().to_vec());
        let oracle = dense_chain(
            &x,
            &[layer("l0.weight", "l0.bias"), layer("out.weight", "out.bias")],
            |v| v.max(0.0),
        );
        for (a, b) in y.data().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn batched_rows_map_independently() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let spec = MlpSpec::critic(4).with_hidden(vec![16, 16]);
    let params = spec.init_params(&mut rng).unwrap();
    let batch = random_tensor(&mut rng, &[6, 4], 1.0);
    let all = forward(&spec, &params, &batch).unwrap();
    for r in 0..6 {
        let one = forward(&spec, &params, &Tensor::vector(batch.row(r).to_vec()).unwrap()).unwrap();
        assert_eq!(one.data()[0], all.data()[r]);
    }
}

#[test]
fn forward_rejects_bad_shapes() {
    let spec = MlpSpec::critic(4);
    let params = spec.init_params(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(matches!(
        forward(&spec, &params, &Tensor::zeros(&[2, 3])),
        Err(NnError::ShapeMismatch(_))
    ));
    let other = MlpSpec::critic(3).init_params(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(forward(&spec, &other, &Tensor::zeros(&[2, 4])).is_err());
}

#[test]
fn layer_norm_examples() {
    let one = |v: &[f64]| Tensor::vector(vec![1.0; v.len()]).unwrap();
    let zero = |v: &[f64]| Tensor::zeros(&[v.len()]);
    let row = [5.0, 5.0, 5.0];
    let y = layer_norm(&Tensor::vector(row.to_vec()).unwrap(), &one(&row), &zero(&row)).unwrap();
    assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

    let row = [1.0, -1.0];
    let y = layer_norm(&Tensor::vector(row.to_vec()).unwrap(), &one(&row), &zero(&row)).unwrap();
    let expect = 1.0 / (1.0f64 + LAYER_NORM_EPS).sqrt();
    assert!((y.data()[0] - expect).abs() < 1e-15 && (y.data()[1] + expect).abs() < 1e-15);
    assert!((y.data()[0] - 1.0).abs() < 1e-5);

    let y = layer_norm(
        &Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap(),
        &Tensor::full(&[3], 2.0),
        &Tensor::full(&[3], 1.0),
    )
    .unwrap();
    let oracle = layer_norm_row(&[1.0, 2.0, 3.0], &[2.0; 3], &[1.0; 3], 1e-5);
    for (a, b) in y.data().iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-14);
    }
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let (r, c) = (rng.random_range(1..5), rng.random_range(2..40));
        let shift = rng.random_range(-100.0..100.0);
        let spread = rng.random_range(0.05..50.0);
        let data: Vec<f64> = (0..r * c).map(|_| shift + spread * rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(vec![r, c], data).unwrap();
        let y = layer_norm(&x, &Tensor::full(&[c], 1.0), &Tensor::zeros(&[c])).unwrap();
        for i in 0..r {
            let xs = x.row(i);
            let m0 = xs.iter().sum::<f64>() / c as f64;
            let var0 = xs.iter().map(|v| (v - m0) * (v - m0)).sum::<f64>() / c as f64;
            let row = y.row(i);
            let m = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c as f64;
            assert!(m.abs() <= 1e-6);
            if var0 >= 1e-3 {
                // The stabilizer shrinks the variance by var0 / (var0 + 1e-5).
                assert!((var - 1.0).abs() <= 1e-5 + 1e-5 / var0, "{var} {var0}");
            }
            let oracle = layer_norm_row(xs, &vec![1.0; c], &vec![0.0; c], 1e-5);
            for (a, b) in row.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn layer_norm_rejects_empty_rows() {
    assert!(layer_norm(&Tensor::zeros(&[2, 0]), &Tensor::zeros(&[0]), &Tensor::zeros(&[0])).is_err());
}

#[test]
fn backward_trivial_cases() {
    let mut g = Graph::new();
    let w = Tensor::vector(vec![0.5, -1.5, 2.0]).unwrap();
    let x = Tensor::vector(vec![3.0, 1.0, -4.0]).unwrap();
    let wv = g.param("w", &w).unwrap();
    let xv = g.constant(x.clone()).unwrap();
    let prod = g.mul(wv, xv).unwrap();
    let loss = g.sum(prod).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get("w").unwrap().data(), x.data());
    assert!(matches!(g.backward(loss), Err(NnError::GraphConsumed)));

    let mut g = Graph::new();
    let wv = g.param("w", &w).unwrap();
    let sq = g.square(wv).unwrap();
    let loss = g.sum(sq).unwrap();
    let grads = g.backward(loss).unwrap();
    let twice: Vec<f64> = w.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(grads.get("w").unwrap().data(), &twice[..]);

    let mut g = Graph::new();
    let wv = g.param("w", &w).unwrap();
    assert!(matches!(g.backward(wv), Err(NnError::NotScalar(..))));
}

/// Random weighted sum so that every output coordinate matters.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var, NnError> {
    let shape = g.value(y).shape().to_vec();
    let w = random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &shape, 1.0);
    let wv = g.constant(w)?;
    let p = g.mul(y, wv)?;
    g.sum(p)
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let ops = [
        "matmul", "add_row", "layer_norm", "relu", "tanh", "affine_cols", "concat_cols", "add", "sub", "mul",
        "square", "scale", "sum", "mean",
    ];
    for op in ops {
        for case in 0..100 {
            let (r, c) = (rng.random_range(1..5), rng.random_range(2..6));
            let k = rng.random_range(1..5);
            let mut p = ParameterSet::new();
            p.insert("a", random_tensor(&mut rng, &[r, c], 1.5)).unwrap();
            match op {
                "matmul" => p.insert("b", random_tensor(&mut rng, &[c, k], 1.5)).unwrap(),
                "add_row" => p.insert("b", random_tensor(&mut rng, &[c], 1.5)).unwrap(),
                "layer_norm" => {
                    p.insert("gain", random_tensor(&mut rng, &[c], 2.0)).unwrap();
                    p.insert("offset", random_tensor(&mut rng, &[c], 2.0)).unwrap();
                }
                "concat_cols" => p.insert("b", random_tensor(&mut rng, &[r, k], 1.5)).unwrap(),
                "add" | "sub" | "mul" => p.insert("b", random_tensor(&mut rng, &[r, c], 1.5)).unwrap(),
                _ => {}
            }
            let scale: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
            let shift: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
            let factor = rng.random_range(-3.0..3.0);
            let seed = rng.random();
            let (ok, worst) = fd_check(&p, H, REL, ABS, |g, v| {
                let y = match op {
                    "matmul" => g.matmul(v[0], v[1])?,
                    "add_row" => g.add_row(v[0], v[1])?,
                    "layer_norm" => g.layer_norm(v[0], v[1], v[2])?,
                    "relu" => g.relu(v[0])?,
                    "tanh" => g.tanh(v[0])?,
                    "affine_cols" => g.affine_cols(v[0], &scale, &shift)?,
                    "concat_cols" => g.concat_cols(v[0], v[1])?,
                    "add" => g.add(v[0], v[1])?,
                    "sub" => g.sub(v[0], v[1])?,
                    "mul" => g.mul(v[0], v[1])?,
                    "square" => g.square(v[0])?,
                    "scale" => g.scale(v[0], factor)?,
                    "sum" => g.sum(v[0])?,
                    "mean" => g.mean(v[0])?,
                    _ => unreachable!(),
                };
                weighted_sum(g, y, seed)
            });
            assert!(ok, "{op} case {case}: worst relative error {worst:e}");
        }
    }
}

/// Twin small critics with layer norm, mean squared TD error against fixed
/// targets, summed over both critics.
#[test]
fn composed_critic_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let spec = MlpSpec::critic(4).with_hidden(vec![6, 5, 4]);
    for case in 0..100 {
        let mut p = ParameterSet::new();
        for prefix in ["q1.", "q2."] {
            let mut init = spec.init_params(&mut rng).unwrap();
            // Larger output layers than the default init, so gradients are not tiny.
            for (name, t) in init.iter_mut() {
                if name.starts_with("out.") {
                    t.data_mut().iter_mut().for_each(|v| *v *= 100.0);
                }
            }
            for (name, t) in init.iter() {
                p.insert(format!("{prefix}{name}"), t.clone()).unwrap();
            }
        }
        let batch = random_tensor(&mut rng, &[8, 4], 1.0);
        let y = random_tensor(&mut rng, &[8, 1], 1.0);
        let (ok, worst) = fd_check(&p, H, REL, ABS, |g, v| {
            let x = g.constant(batch.clone())?;
            let yt = g.constant(y.clone())?;
            let mut total = None;
            for prefix in ["q1.", "q2."] {
                let names: Vec<&str> = p.names().collect();
                let pick = |suffix: &str| v[names.iter().position(|n| *n == format!("{prefix}{suffix}")).unwrap()];
                let mut h = x;
                for l in 0..3 {
                    h = g.matmul(h, pick(&format!("l{l}.weight")))?;
                    h = g.add_row(h, pick(&format!("l{l}.bias")))?;
                    h = g.layer_norm(h, pick(&format!("l{l}.ln_gain")), pick(&format!("l{l}.ln_offset")))?;
                    h = g.relu(h)?;
                }
                h = g.matmul(h, pick("out.weight"))?;
                let q = g.add_row(h, pick("out.bias"))?;
                let d = g.sub(q, yt)?;
                let sq = g.square(d)?;
                let m = g.mean(sq)?;
                total = Some(match total {
                    Some(t) => g.add(t, m)?,
                    None => m,
                });
            }
            Ok(total.unwrap())
        });
        assert!(ok, "case {case}: {worst:e}");
    }
}

/// A tanh-headed actor through `bind`, which is how the agent builds networks.
#[test]
fn bound_network_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let spec = MlpSpec::actor(3, vec![-2.0, -1.0], vec![2.0, 0.5]).with_hidden(vec![5, 4]);
    for case in 0..100 {
        let params = spec.init_params(&mut rng).unwrap();
        let mut scaled = params.clone();
        for (name, t) in scaled.iter_mut() {
            if name.starts_with("out.") {
                t.data_mut().iter_mut().for_each(|v| *v *= 200.0);
            }
        }
        let batch = random_tensor(&mut rng, &[5, 3], 1.0);
        let seed = rng.random();
        let mut g = Graph::new();
        let net = bind(&spec, &scaled, &mut g, Some("a.")).unwrap();
        let x = g.constant(batch.clone()).unwrap();
        let y = net.apply(&mut g, x).unwrap();
        let loss = weighted_sum(&mut g, y, seed).unwrap();
        let analytic = g.backward(loss).unwrap().flatten();
        let numeric = wave_oracles::central_difference(&scaled.flatten(), H, |flat| {
            let p = scaled.unflatten(flat).unwrap();
            let mut g = Graph::new();
            let y = {
                let net = bind(&spec, &p, &mut g, None).unwrap();
                let x = g.constant(batch.clone()).unwrap();
                net.apply(&mut g, x).unwrap()
            };
            let l = weighted_sum(&mut g, y, seed).unwrap();
            g.value(l).data()[0]
        });
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(close(*a, *n, REL, ABS), "case {case}: {a} vs {n}");
        }
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let spec = MlpSpec::critic(5);
        let params = spec.init_params(&mut rng).unwrap();
        let x = random_tensor(&mut rng, &[32, 5], 1.0);
        let mut g = Graph::new();
        let net = bind(&spec, &params, &mut g, Some("")).unwrap();
        let xv = g.constant(x).unwrap();
        let q = net.apply(&mut g, xv).unwrap();
        let out = g.value(q).data().to_vec();
        let sq = g.square(q).unwrap();
        let loss = g.mean(sq).unwrap();
        (out, g.backward(loss).unwrap().flatten())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn adam_examples() {
    let mut p = ParameterSet::new();
    p.insert("w", Tensor::vector(vec![1.0, -2.0]).unwrap()).unwrap();
    let before = p.clone();
    let mut state = AdamState::new(&p, 3e-4);
    let zeros = p.zeros_like();
    adam_step(&mut p, &zeros, &mut state).unwrap();
    assert_eq!(p, before);

    let mut state = AdamState::new(&p, 0.01);
    let grad = {
        let mut g = ParameterSet::new();
        g.insert("w", Tensor::vector(vec![1.0, 1.0]).unwrap()).unwrap();
        g
    };
    adam_step(&mut p, &grad, &mut state).unwrap();
    // m̂ = 1, v̂ = 1 after bias correction.
    let step = 0.01 * (1.0 / (1.0f64.sqrt() + 1e-8));
    assert!((p.get("w").unwrap().data()[0] - (1.0 - step)).abs() < 1e-15);
    let mut last = p.get("w").unwrap().data()[0];
    for _ in 0..50 {
        adam_step(&mut p, &grad, &mut state).unwrap();
        let now = p.get("w").unwrap().data()[0];
        assert!(now < last);
        last = now;
    }

    let mut wrong = ParameterSet::new();
    wrong.insert("w", Tensor::zeros(&[3])).unwrap();
    assert!(adam_step(&mut p, &wrong, &mut state).is_err());
}

#[test]
fn soft_update_examples() {
    let set = |v: f64| {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::scalar(v)).unwrap();
        p
    };
    let mut t = set(10.0);
    soft_update(&mut t, &set(0.0), 0.005).unwrap();
    assert!((t.get("w").unwrap().data()[0] - 9.95).abs() < 1e-12);
    let mut t = set(10.0);
    soft_update(&mut t, &set(0.0), 0.0).unwrap();
    assert_eq!(t.get("w").unwrap().data()[0], 10.0);
    soft_update(&mut t, &set(3.0), 1.0).unwrap();
    assert_eq!(t.get("w").unwrap().data()[0], 3.0);
    assert!(soft_update(&mut t, &set(3.0), 1.5).is_err());
}

#[test]
fn target_lag_shrinks_by_one_minus_tau() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let spec = MlpSpec::critic(3).with_hidden(vec![8]);
    let online = spec.init_params(&mut rng).unwrap();
    let mut target = spec.init_params(&mut rng).unwrap();
    let gap = |t: &ParameterSet| {
        t.flatten().iter().zip(online.flatten()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let mut prev = gap(&target);
    for _ in 0..20 {
        soft_update(&mut target, &online, 0.005).unwrap();
        let now = gap(&target);
        assert!((now / prev - 0.995).abs() < 1e-9);
        prev = now;
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let spec = MlpSpec::critic(4);
    let params = spec.init_params(&mut ChaCha8Rng::seed_from_u64(28)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("critic.bin");
    write_checkpoint(&params, std::fs::File::create(&path).unwrap()).unwrap();
    let back = read_checkpoint(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back.names().collect::<Vec<_>>(), params.names().collect::<Vec<_>>());
    for ((_, a), (_, b)) in back.iter().zip(params.iter()) {
        assert_eq!(a.shape(), b.shape());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
