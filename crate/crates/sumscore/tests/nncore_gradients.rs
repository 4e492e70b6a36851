//! Finite-difference oracles for every hand-written backward pass. Each test
//! rebuilds the forward computation from a ParamSet so the checker can
//! perturb parameters independently of the analytic gradients under test.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sumscore::nncore::{
    attention_backward, attention_forward, bilstm_backward, bilstm_forward, conv2d_backward,
    conv2d_forward, dense_backward, dense_forward, gradient_check, lstm_step_backward,
    lstm_step_forward, max_pool2_backward, max_pool2_forward, mse_loss, Activation,
    AttentionParams, LstmGrads, LstmParams, ParamSet, Tensor, GRAD_CHECK_H,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn dense_relu_dense_gradients_match_finite_differences() {
    let mut r = rng(41);
    let mut params = ParamSet::new();
    params.insert("w1", Tensor::uniform(&[4, 3], 0.7, &mut r));
    params.insert("b1", Tensor::uniform(&[4], 0.3, &mut r));
    params.insert("w2", Tensor::uniform(&[2, 4], 0.7, &mut r));
    params.insert("b2", Tensor::uniform(&[2], 0.3, &mut r));
    let x = vec![0.4, -0.9, 0.15];
    let target = vec![0.3, -0.6];

    let forward = |p: &ParamSet| -> f64 {
        let z1 = dense_forward(&x, p.get("w1"), p.get("b1"));
        let h1 = Activation::Relu.forward(&z1);
        let y = dense_forward(&h1, p.get("w2"), p.get("b2"));
        mse_loss(&y, &target).0
    };

    let z1 = dense_forward(&x, params.get("w1"), params.get("b1"));
    let h1 = Activation::Relu.forward(&z1);
    let y = dense_forward(&h1, params.get("w2"), params.get("b2"));
    let (_, grad_y) = mse_loss(&y, &target);
    let (grad_h1, gw2, gb2) = dense_backward(&h1, params.get("w2"), &grad_y);
    let grad_z1 = Activation::Relu.backward(&z1, &h1, &grad_h1);
    let (_, gw1, gb1) = dense_backward(&x, params.get("w1"), &grad_z1);

    let mut analytic = ParamSet::new();
    analytic.insert("w1", gw1);
    analytic.insert("b1", gb1);
    analytic.insert("w2", gw2);
    analytic.insert("b2", gb2);

    let report = gradient_check(&params, &analytic, GRAD_CHECK_H, forward);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn conv_pool_dense_gradients_match_finite_differences() {
    let mut r = rng(42);
    let mut params = ParamSet::new();
    params.insert("k", Tensor::uniform(&[2, 1, 3, 3], 0.5, &mut r));
    params.insert("kb", Tensor::uniform(&[2], 0.2, &mut r));
    // 5x5 input, 3x3 kernels -> 2x3x3 maps -> pool -> 2x1x1 -> dense.
    params.insert("w", Tensor::uniform(&[1, 2], 0.6, &mut r));
    params.insert("b", Tensor::uniform(&[1], 0.2, &mut r));
    let x = Tensor::uniform(&[1, 5, 5], 1.0, &mut r);
    let target = vec![0.25];

    let forward = |p: &ParamSet| -> f64 {
        let conv = conv2d_forward(&x, p.get("k"), p.get("kb"), 1);
        let act = Tensor::from_vec(&conv.shape, Activation::Tanh.forward(&conv.data));
        let (pooled, _) = max_pool2_forward(&act);
        let y = dense_forward(&pooled.data, p.get("w"), p.get("b"));
        mse_loss(&y, &target).0
    };

    let conv = conv2d_forward(&x, params.get("k"), params.get("kb"), 1);
    let act = Tensor::from_vec(&conv.shape, Activation::Tanh.forward(&conv.data));
    let (pooled, argmax) = max_pool2_forward(&act);
    let y = dense_forward(&pooled.data, params.get("w"), params.get("b"));
    let (_, grad_y) = mse_loss(&y, &target);
    let (grad_pooled, gw, gb) = dense_backward(&pooled.data, params.get("w"), &grad_y);
    let grad_act = max_pool2_backward(&act, &argmax, &Tensor::from_vec(&pooled.shape, grad_pooled));
    let grad_conv = Activation::Tanh.backward(&conv.data, &act.data, &grad_act.data);
    let (_, gk, gkb) = conv2d_backward(
        &x,
        params.get("k"),
        &Tensor::from_vec(&conv.shape, grad_conv),
        1,
    );

    let mut analytic = ParamSet::new();
    analytic.insert("k", gk);
    analytic.insert("kb", gkb);
    analytic.insert("w", gw);
    analytic.insert("b", gb);

    let report = gradient_check(&params, &analytic, GRAD_CHECK_H, forward);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

fn lstm_param_set(hidden: usize, input: usize, prefix: &str, seed: u64, params: &mut ParamSet) {
    let mut r = rng(seed);
    params.insert(
        format!("{prefix}.w"),
        Tensor::uniform(&[4 * hidden, input], 0.5, &mut r),
    );
    params.insert(
        format!("{prefix}.u"),
        Tensor::uniform(&[4 * hidden, hidden], 0.5, &mut r),
    );
    params.insert(
        format!("{prefix}.b"),
        Tensor::uniform(&[4 * hidden], 0.2, &mut r),
    );
}

fn lstm_view<'a>(params: &'a ParamSet, prefix: &str) -> LstmParams<'a> {
    LstmParams {
        w: params.get(&format!("{prefix}.w")),
        u: params.get(&format!("{prefix}.u")),
        b: params.get(&format!("{prefix}.b")),
    }
}

#[test]
fn lstm_bptt_over_four_steps_matches_finite_differences() {
    let hidden = 3;
    let mut params = ParamSet::new();
    lstm_param_set(hidden, 2, "l", 43, &mut params);
    let mut r = rng(44);
    let seq: Vec<Vec<f64>> = (0..4)
        .map(|_| Tensor::uniform(&[2], 1.0, &mut r).data)
        .collect();
    let target = vec![0.2, -0.4, 0.6];

    // Loss on the final hidden state after four steps.
    let forward = |p: &ParamSet| -> f64 {
        let lp = lstm_view(p, "l");
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        for x in &seq {
            let (nh, nc, _) = lstm_step_forward(x, &h, &c, lp);
            h = nh;
            c = nc;
        }
        mse_loss(&h, &target).0
    };

    let lp = lstm_view(&params, "l");
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut caches = Vec::new();
    for x in &seq {
        let (nh, nc, cache) = lstm_step_forward(x, &h, &c, lp);
        h = nh;
        c = nc;
        caches.push(cache);
    }
    let (_, grad_h_final) = mse_loss(&h, &target);
    let mut grads = LstmGrads::zeros(lp);
    let mut gh = grad_h_final;
    let mut gc = vec![0.0; hidden];
    for cache in caches.iter().rev() {
        let (_, gh_prev, gc_prev) = lstm_step_backward(lp, cache, &gh, &gc, &mut grads);
        gh = gh_prev;
        gc = gc_prev;
    }

    let mut analytic = ParamSet::new();
    analytic.insert("l.w", grads.w);
    analytic.insert("l.u", grads.u);
    analytic.insert("l.b", grads.b);

    let report = gradient_check(&params, &analytic, GRAD_CHECK_H, forward);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn bilstm_gradients_on_both_outputs_match_finite_differences() {
    let hidden = 2;
    let mut params = ParamSet::new();
    lstm_param_set(hidden, 2, "fwd", 45, &mut params);
    lstm_param_set(hidden, 2, "bwd", 46, &mut params);
    let mut r = rng(47);
    let seq: Vec<Vec<f64>> = (0..3)
        .map(|_| Tensor::uniform(&[2], 1.0, &mut r).data)
        .collect();
    let s_target = Tensor::uniform(&[2 * hidden], 0.5, &mut r).data;

    // Loss touches both the final state and every per-token state so all
    // gradient paths through the encoder are exercised.
    let forward = |p: &ParamSet| -> f64 {
        let (s, a, _) = bilstm_forward(&seq, lstm_view(p, "fwd"), lstm_view(p, "bwd")).unwrap();
        let (ls, _) = mse_loss(&s, &s_target);
        let la: f64 = a
            .iter()
            .map(|at| at.iter().map(|v| v * v).sum::<f64>())
            .sum();
        ls + 0.5 * la
    };

    let fwd = lstm_view(&params, "fwd");
    let bwd = lstm_view(&params, "bwd");
    let (s, a, cache) = bilstm_forward(&seq, fwd, bwd).unwrap();
    let (_, grad_s) = mse_loss(&s, &s_target);
    let grad_a: Vec<Vec<f64>> = a
        .iter()
        .map(|at| at.iter().map(|v| v * 1.0).collect())
        .collect();
    let (_, fg, bg) = bilstm_backward(fwd, bwd, &cache, &grad_s, &grad_a);

    let mut analytic = ParamSet::new();
    analytic.insert("fwd.w", fg.w);
    analytic.insert("fwd.u", fg.u);
    analytic.insert("fwd.b", fg.b);
    analytic.insert("bwd.w", bg.w);
    analytic.insert("bwd.u", bg.u);
    analytic.insert("bwd.b", bg.b);

    let report = gradient_check(&params, &analytic, GRAD_CHECK_H, forward);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn attention_gradients_for_every_parameter_match_finite_differences() {
    let (dim_a, dim_s, dim_m) = (3, 4, 2);
    let mut r = rng(48);
    let mut params = ParamSet::new();
    params.insert("w_aa", Tensor::uniform(&[dim_a], 0.6, &mut r));
    params.insert("w_sa", Tensor::uniform(&[dim_s], 0.6, &mut r));
    params.insert("w_sm", Tensor::uniform(&[dim_m, dim_s], 0.6, &mut r));
    params.insert("w_rm", Tensor::uniform(&[dim_m, dim_a], 0.6, &mut r));
    params.insert("b", Tensor::uniform(&[dim_m], 0.2, &mut r));
    let s = Tensor::uniform(&[dim_s], 1.0, &mut r).data;
    let a: Vec<Vec<f64>> = (0..4)
        .map(|_| Tensor::uniform(&[dim_a], 1.0, &mut r).data)
        .collect();
    let target = vec![0.4, -0.3];

    fn view(p: &ParamSet) -> AttentionParams<'_> {
        AttentionParams {
            w_aa: p.get("w_aa"),
            w_sa: p.get("w_sa"),
            w_sm: p.get("w_sm"),
            w_rm: p.get("w_rm"),
            b: p.get("b"),
        }
    }

    let forward = |p: &ParamSet| -> f64 {
        let (m, _) = attention_forward(&s, &a, view(p)).unwrap();
        mse_loss(&m, &target).0
    };

    let (m, cache) = attention_forward(&s, &a, view(&params)).unwrap();
    let (_, grad_m) = mse_loss(&m, &target);
    let (_, _, g) = attention_backward(view(&params), &cache, &grad_m);

    let mut analytic = ParamSet::new();
    analytic.insert("w_aa", g.w_aa);
    analytic.insert("w_sa", g.w_sa);
    analytic.insert("w_sm", g.w_sm);
    analytic.insert("w_rm", g.w_rm);
    analytic.insert("b", g.b);

    let report = gradient_check(&params, &analytic, GRAD_CHECK_H, forward);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    for (name, err) in &report.per_tensor {
        assert!(*err < 1e-4, "{name}: {err}");
    }
}

#[test]
fn attention_input_gradients_match_finite_differences() {
    // Check grad_s and grad_a by treating the inputs themselves as the
    // parameters being perturbed.
    let (dim_a, dim_s, dim_m) = (2, 3, 2);
    let mut r = rng(49);
    let w_aa = Tensor::uniform(&[dim_a], 0.6, &mut r);
    let w_sa = Tensor::uniform(&[dim_s], 0.6, &mut r);
    let w_sm = Tensor::uniform(&[dim_m, dim_s], 0.6, &mut r);
    let w_rm = Tensor::uniform(&[dim_m, dim_a], 0.6, &mut r);
    let b = Tensor::uniform(&[dim_m], 0.2, &mut r);
    let view = AttentionParams {
        w_aa: &w_aa,
        w_sa: &w_sa,
        w_sm: &w_sm,
        w_rm: &w_rm,
        b: &b,
    };

    let mut inputs = ParamSet::new();
    inputs.insert("s", Tensor::uniform(&[dim_s], 1.0, &mut r));
    inputs.insert("a", Tensor::uniform(&[3, dim_a], 1.0, &mut r));
    let target = vec![0.1, 0.7];

    let unpack = |p: &ParamSet| -> (Vec<f64>, Vec<Vec<f64>>) {
        let s = p.get("s").data.clone();
        let a_flat = p.get("a");
        let a: Vec<Vec<f64>> = (0..3)
            .map(|t| a_flat.data[t * dim_a..(t + 1) * dim_a].to_vec())
            .collect();
        (s, a)
    };

    let forward = |p: &ParamSet| -> f64 {
        let (s, a) = unpack(p);
        let (m, _) = attention_forward(&s, &a, view).unwrap();
        mse_loss(&m, &target).0
    };

    let (s, a) = unpack(&inputs);
    let (m, cache) = attention_forward(&s, &a, view).unwrap();
    let (_, grad_m) = mse_loss(&m, &target);
    let (grad_s, grad_a, _) = attention_backward(view, &cache, &grad_m);

    let mut analytic = ParamSet::new();
    analytic.insert("s", Tensor::from_vec(&[dim_s], grad_s));
    analytic.insert(
        "a",
        Tensor::from_vec(&[3, dim_a], grad_a.into_iter().flatten().collect()),
    );

    let report = gradient_check(&inputs, &analytic, GRAD_CHECK_H, forward);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn bilstm_input_gradients_match_finite_differences() {
    let hidden = 2;
    let mut params = ParamSet::new();
    lstm_param_set(hidden, 2, "fwd", 50, &mut params);
    lstm_param_set(hidden, 2, "bwd", 51, &mut params);
    let mut r = rng(52);
    let mut inputs = ParamSet::new();
    inputs.insert("seq", Tensor::uniform(&[3, 2], 1.0, &mut r));
    let s_target = Tensor::uniform(&[2 * hidden], 0.5, &mut r).data;

    let unpack = |p: &ParamSet| -> Vec<Vec<f64>> {
        let t = p.get("seq");
        (0..3).map(|i| t.data[i * 2..(i + 1) * 2].to_vec()).collect()
    };

    let forward = |p: &ParamSet| -> f64 {
        let seq = unpack(p);
        let (s, _, _) =
            bilstm_forward(&seq, lstm_view(&params, "fwd"), lstm_view(&params, "bwd")).unwrap();
        mse_loss(&s, &s_target).0
    };

    let seq = unpack(&inputs);
    let fwd = lstm_view(&params, "fwd");
    let bwd = lstm_view(&params, "bwd");
    let (s, a, cache) = bilstm_forward(&seq, fwd, bwd).unwrap();
    let (_, grad_s) = mse_loss(&s, &s_target);
    let grad_a = vec![vec![0.0; 2 * hidden]; a.len()];
    let (grad_seq, _, _) = bilstm_backward(fwd, bwd, &cache, &grad_s, &grad_a);

    let mut analytic = ParamSet::new();
    analytic.insert(
        "seq",
        Tensor::from_vec(&[3, 2], grad_seq.into_iter().flatten().collect()),
    );

    let report = gradient_check(&inputs, &analytic, GRAD_CHECK_H, forward);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}
