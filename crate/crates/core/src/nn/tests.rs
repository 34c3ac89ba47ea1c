use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::spectro::{StftConfig, StftEngine};

fn eval(store: &ParamStore, build: &impl Fn(&mut Graph) -> Var) -> f64 {
    let mut g = Graph::new(store, true);
    let loss = build(&mut g);
    g.value(loss).item()
}

/// Compares backprop against central differences on a sample of entries of
/// every trainable parameter.
fn check(store: &mut ParamStore, build: impl Fn(&mut Graph) -> Var) {
    let grads: Vec<(ParamId, Tensor)> = {
        let mut g = Graph::new(store, true);
        let loss = build(&mut g);
        g.backward(loss).iter().map(|(id, t)| (id, t.clone())).collect()
    };
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    assert_eq!(grads.len(), ids.len(), "every parameter should receive a gradient");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = 1e-6;
    for (id, grad) in grads {
        let n = grad.len();
        for _ in 0..n.min(6) {
            let k = rng.gen_range(0..n);
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let up = eval(store, &build);
            store.get_mut(id).data_mut()[k] = orig - h;
            let down = eval(store, &build);
            store.get_mut(id).data_mut()[k] = orig;
            let num = (up - down) / (2.0 * h);
            let ana = grad.data()[k];
            let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-4);
            assert!(err < 1e-5, "{}[{k}]: analytic {ana} numeric {num}", store.name(id));
        }
    }
}

fn random(store: &mut ParamStore, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> ParamId {
    store.add_uniform(name, shape, 1, rng)
}

fn sum_squares(g: &mut Graph, v: Var) -> Var {
    let sq = g.mul(v, v);
    g.mean(sq)
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = ParamStore::new();
    let x = random(&mut s, "x", &[2, 3, 9, 8], &mut rng);
    let w = random(&mut s, "w", &[4, 3, 5, 3], &mut rng);
    let b = random(&mut s, "b", &[4], &mut rng);
    let geom = Conv2dGeom { kernel: (5, 3), stride: (2, 1), dilation: (1, 2), padding: (2, 2) };
    check(&mut s, |g| {
        let (xv, wv, bv) = (g.param(x), g.param(w), g.param(b));
        let y = g.conv2d(xv, wv, Some(bv), geom);
        let y = g.tanh(y);
        sum_squares(g, y)
    });
}

#[test]
fn conv_transpose_gradients_and_target_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut s = ParamStore::new();
    let x = random(&mut s, "x", &[2, 3, 5, 4], &mut rng);
    let w = random(&mut s, "w", &[3, 2, 3, 3], &mut rng);
    let b = random(&mut s, "b", &[2], &mut rng);
    let geom = Conv2dGeom::strided((3, 3), (2, 2));
    {
        let mut g = Graph::new(&s, false);
        let (xv, wv) = (g.param(x), g.param(w));
        let y = g.conv_transpose2d(xv, wv, None, geom, (9, 8));
        assert_eq!(g.shape(y), [2, 2, 9, 8]);
    }
    check(&mut s, |g| {
        let (xv, wv, bv) = (g.param(x), g.param(w), g.param(b));
        let y = g.conv_transpose2d(xv, wv, Some(bv), geom, (10, 8));
        let y = g.sigmoid(y);
        sum_squares(g, y)
    });
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = ParamStore::new();
    let img = random(&mut s, "img", &[1, 2, 9, 8], &mut rng);
    let small = random(&mut s, "small", &[1, 3, 5, 4], &mut rng);
    let w = random(&mut s, "w", &[3, 2, 3, 3], &mut rng);
    let geom = Conv2dGeom::strided((3, 3), (2, 2));
    let mut g = Graph::new(&s, false);
    let (iv, sv, wv) = (g.param(img), g.param(small), g.param(w));
    let fwd = g.conv2d(iv, wv, None, geom);
    let w_t = Tensor::new(vec![3, 2, 3, 3], s.get(w).data().to_vec());
    let wt = g.input(w_t);
    let back = g.conv_transpose2d(sv, wt, None, geom, (9, 8));
    let dot = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>();
    let lhs = dot(g.value(fwd), s.get(small));
    let rhs = dot(s.get(img), g.value(back));
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
}

#[test]
fn batch_norm_gradients_and_running_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = ParamStore::new();
    let x = random(&mut s, "x", &[3, 2, 4, 5], &mut rng);
    let gamma = random(&mut s, "gamma", &[2], &mut rng);
    let beta = random(&mut s, "beta", &[2], &mut rng);
    let rm = s.add_const("rm", &[2], 0.0, false);
    let rv = s.add_const("rv", &[2], 1.0, false);
    let w = random(&mut s, "w", &[2, 3, 4, 5], &mut rng);
    check(&mut s, |g| {
        let (xv, gv, bv, wv) = (g.param(x), g.param(gamma), g.param(beta), g.param(w));
        let y = g.batch_norm(xv, gv, bv, rm, rv);
        let wv = g.reshape(wv, &[3, 2, 4, 5]);
        let y = g.mul(y, wv);
        sum_squares(g, y)
    });
    let updates = {
        let mut g = Graph::new(&s, true);
        let (xv, gv, bv) = (g.param(x), g.param(gamma), g.param(beta));
        g.batch_norm(xv, gv, bv, rm, rv);
        g.take_buffer_updates()
    };
    s.apply_updates(updates);
    let xs = s.get(x).data();
    let ch0: Vec<f64> = (0..3).flat_map(|b| xs[(b * 2) * 20..(b * 2 + 1) * 20].to_vec()).collect();
    let mean = ch0.iter().sum::<f64>() / 60.0;
    let var = ch0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 59.0;
    assert!((s.get(rm).data()[0] - 0.1 * mean).abs() < 1e-12);
    assert!((s.get(rv).data()[0] - (0.9 + 0.1 * var)).abs() < 1e-12);
}

#[test]
fn bilstm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = ParamStore::new();
    let x = random(&mut s, "x", &[2, 5, 3], &mut rng);
    let fwd = LstmParams::new(&mut s, "fwd", 3, 4, &mut rng);
    let bwd = LstmParams::new(&mut s, "bwd", 3, 4, &mut rng);
    check(&mut s, |g| {
        let xv = g.param(x);
        let y = g.bilstm(xv, &fwd, &bwd);
        sum_squares(g, y)
    });
}

#[test]
fn bilstm_directions_see_opposite_context() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut s = ParamStore::new();
    let fwd = LstmParams::new(&mut s, "fwd", 1, 2, &mut rng);
    let bwd = LstmParams::new(&mut s, "bwd", 1, 2, &mut rng);
    let run = |s: &ParamStore, data: Vec<f64>| {
        let mut g = Graph::new(s, false);
        let xv = g.input(Tensor::new(vec![1, 4, 1], data));
        let y = g.bilstm(xv, &fwd, &bwd);
        g.value(y).data().to_vec()
    };
    let a = run(&s, vec![0.1, 0.2, 0.3, 0.4]);
    let b = run(&s, vec![0.1, 0.2, 0.3, -0.9]);
    // Changing the last step leaves the forward direction before it intact
    // and changes the backward direction everywhere.
    for t in 0..3 {
        assert_eq!(a[t * 4..t * 4 + 2], b[t * 4..t * 4 + 2]);
        assert_ne!(a[t * 4 + 2..t * 4 + 4], b[t * 4 + 2..t * 4 + 4]);
    }
}

#[test]
fn sequence_head_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut s = ParamStore::new();
    let x = random(&mut s, "x", &[2, 3, 4, 5], &mut rng);
    let other = random(&mut s, "other", &[2, 1, 4, 5], &mut rng);
    let w = random(&mut s, "w", &[1, 20], &mut rng);
    let b = random(&mut s, "b", &[1], &mut rng);
    let target = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    check(&mut s, |g| {
        let (xv, ov, wv, bv) = (g.param(x), g.param(other), g.param(w), g.param(b));
        let cat = g.concat_channels(&[xv, ov]);
        let seq = g.planes_to_seq(cat);
        let back = g.seq_to_planes(seq, 4);
        let seq = g.planes_to_seq(back);
        let y = g.linear(seq, wv, bv);
        let y = g.relu(y);
        let y = g.scale(y, 0.5);
        let p = g.sigmoid(y);
        let p = g.reshape(p, &[2, 4]);
        let seg = g.segment_mean(p, vec![vec![0], vec![1, 2], vec![3]]);
        g.bce_mean(seg, &target)
    });
}

#[test]
fn spectral_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = StftConfig::default();
    let engine = StftEngine::new(cfg).unwrap();
    let n = 1200;
    let frames = cfg.n_frames(n);
    let segs = crate::segments::segment_count(n, 16000);
    let mut s = ParamStore::new();
    let conf = random(&mut s, "conf", &[2, segs], &mut rng);
    let mask = random(&mut s, "mask", &[2, 2, frames, 256], &mut rng);
    let signal: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let target: Vec<f64> = (0..2 * 2 * frames * 256).map(|_| rng.gen_range(-1.0..1.0)).collect();
    check(&mut s, |g| {
        let (cv, mv) = (g.param(conf), g.param(mask));
        let c = g.sigmoid(cv);
        let spec = g.masked_stft(Tensor::new(vec![2, n], signal.clone()), c, &engine, 16000);
        let y = g.complex_mul(spec, mv);
        let t = g.input(Tensor::new(vec![2, 2, frames, 256], target.clone()));
        g.l2_dist_mean(y, t)
    });
}

#[test]
fn frozen_parameters_get_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut s = ParamStore::new();
    let a = random(&mut s, "det.w", &[3], &mut rng);
    let b = random(&mut s, "rem.w", &[3], &mut rng);
    let mut g = Graph::new(&s, true);
    g.freeze_prefix("det.");
    let (av, bv) = (g.param(a), g.param(b));
    let y = g.mul(av, bv);
    let loss = g.mean(y);
    let grads = g.backward(loss);
    assert!(grads.get(a).is_none());
    assert!(grads.get(b).is_some());
}

#[test]
fn adam_moves_against_gradient_and_round_trips() {
    let mut s = ParamStore::new();
    let p = s.add("p", Tensor::new(vec![2], vec![1.0, -1.0]), true);
    let mut opt = Adam::new(AdamConfig::default());
    for _ in 0..3 {
        let grads = {
            let mut g = Graph::new(&s, true);
            let v = g.param(p);
            let sq = g.mul(v, v);
            let loss = g.mean(sq);
            g.backward(loss)
        };
        opt.update(&mut s, &grads);
    }
    // First Adam step moves each coordinate by about lr regardless of scale.
    assert!((s.get(p).data()[0] - (1.0 - 3e-3)).abs() < 1e-5);
    assert!((s.get(p).data()[1] + (1.0 - 3e-3)).abs() < 1e-5);
    let (step, moments) = opt.export();
    let back = Adam::import(opt.config, step, moments);
    assert_eq!(back, opt);
}
