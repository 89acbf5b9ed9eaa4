//! Finite-difference checks for every differentiable operator.

use hipal_autograd::check::check_gradients;
use hipal_autograd::{init, Graph, ParamStore, Segments, Var};
use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const RTOL: f64 = 1e-5;
const ATOL: f64 = 1e-8;

/// Builds a scalar from `f` by contracting its output with a fixed random
/// projection, then verifies all parameter gradients.
fn assert_grads(store: ParamStore, f: impl Fn(&mut Graph) -> Var) {
    let mut store = store;
    let proj_seed = 99;
    let scalar = |g: &mut Graph| {
        let out = f(g);
        let (r, c) = g.value(out).dim();
        let mut rng = ChaCha8Rng::seed_from_u64(proj_seed);
        let w = init::uniform(r, c, 1.0, &mut rng);
        let m = g.mul_const(out, w);
        g.sum(m)
    };
    let grads = {
        let mut g = Graph::new(&store);
        let loss = scalar(&mut g);
        g.backward(loss)
    };
    let mut loss_fn = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let l = scalar(&mut g);
        g.scalar(l)
    };
    let report = check_gradients(&mut store, &grads, EPS, RTOL, ATOL, &mut loss_fn);
    assert!(report.passed(), "gradient mismatch: {:?}", &report.failures[..report.failures.len().min(5)]);
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn matmul_add_row_and_elementwise() {
    let mut r = rng();
    let mut s = ParamStore::new();
    let a = s.add("a", init::uniform(3, 4, 1.0, &mut r));
    let b = s.add("b", init::uniform(4, 2, 1.0, &mut r));
    let bias = s.add("bias", init::uniform(1, 2, 1.0, &mut r));
    let c = s.add("c", init::uniform(3, 2, 1.0, &mut r));
    assert_grads(s, |g| {
        let (a, b, bias, c) = (g.param(a), g.param(b), g.param(bias), g.param(c));
        let m = g.matmul(a, b);
        let m = g.add_row(m, bias);
        let t = g.tanh(m);
        let sg = g.sigmoid(c);
        let p = g.mul(t, sg);
        let q = g.add(p, c);
        g.scale(q, 0.5)
    });
}

#[test]
fn periodic_relu_concat_slice_select() {
    let mut r = rng();
    let mut s = ParamStore::new();
    let a = s.add("a", init::uniform(4, 3, 2.0, &mut r));
    let b = s.add("b", init::uniform(4, 2, 2.0, &mut r));
    assert_grads(s, |g| {
        let (a, b) = (g.param(a), g.param(b));
        let p = g.periodic(a);
        let rl = g.relu(b);
        let cat = g.concat_cols(&[p, rl]);
        let sl = g.slice_cols(cat, 1, 3);
        let sel = g.select_rows(sl, &[3, 0, 3]);
        let rows = g.concat_rows(&[sel, sl]);
        g.tanh(rows)
    });
}

#[test]
fn causal_and_same_convolution() {
    let mut r = rng();
    let mut s = ParamStore::new();
    let x = s.add("x", init::uniform(9, 3, 1.0, &mut r));
    let w = s.add("w", init::uniform(3 * 3, 2, 1.0, &mut r));
    let w2 = s.add("w2", init::uniform(4 * 2, 2, 1.0, &mut r));
    let segs = Segments::from_lengths(&[4, 1, 4]);
    assert_grads(s, move |g| {
        let (x, w, w2) = (g.param(x), g.param(w), g.param(w2));
        let y = g.conv1d(x, w, &segs, 3, 2, 0);
        g.conv1d(y, w2, &segs, 4, 1, 2)
    });
}

#[test]
fn pooling_upsampling_and_segment_reductions() {
    let mut r = rng();
    let mut s = ParamStore::new();
    let x = s.add("x", init::uniform(8, 2, 1.0, &mut r));
    let h = s.add("h", init::uniform(3, 6, 1.0, &mut r));
    let segs = Segments::from_lengths(&[5, 1, 2]);
    assert_grads(s, move |g| {
        let (x, h) = (g.param(x), g.param(h));
        let (p, psegs) = g.max_pool2(x, &segs);
        let u = g.upsample2(p, &psegs, &segs);
        let mean = g.segment_mean(u, &segs);
        let flat = g.segment_flatten(x, &segs, 5);
        let un = g.segment_unflatten(h, &psegs, 2);
        let b = g.broadcast_segments(mean, &segs);
        let last = g.select_rows(b, &segs.last_rows());
        let un_mean = g.segment_mean(un, &psegs);
        let a = g.concat_cols(&[last, un_mean]);
        let fsum = g.sum(flat);
        let fsum = g.concat_rows(&[fsum, fsum, fsum]);
        g.concat_cols(&[a, fsum])
    });
}

#[test]
fn batch_norm_batch_and_fixed_statistics() {
    let mut r = rng();
    let mut s = ParamStore::new();
    let x = s.add("x", init::uniform(6, 3, 1.0, &mut r));
    let gamma = s.add("gamma", init::uniform(1, 3, 1.0, &mut r));
    let beta = s.add("beta", init::uniform(1, 3, 1.0, &mut r));
    assert_grads(s, |g| {
        let (x, gm, bt) = (g.param(x), g.param(gamma), g.param(beta));
        let a = g.batch_norm(x, gm, bt, None, 1e-5);
        let b = g.batch_norm(x, gm, bt, Some((&[0.1, -0.2, 0.3], &[1.0, 0.5, 2.0])), 1e-5);
        g.concat_cols(&[a, b])
    });
}

#[test]
fn weight_norm_and_softmax_cross_entropy() {
    let mut r = rng();
    let mut s = ParamStore::new();
    let v = s.add("v", init::uniform(4, 3, 1.0, &mut r));
    let gain = s.add("g", init::uniform(1, 3, 1.0, &mut r));
    let x = s.add("x", init::uniform(2, 4, 1.0, &mut r));
    assert_grads(s, |g| {
        let (v, gain, x) = (g.param(v), g.param(gain), g.param(x));
        let w = g.weight_norm(v, gain);
        let logits = g.matmul(x, w);
        let ce = g.softmax_cross_entropy(logits, &[2, 0], &[0.7, 1.3]);
        g.concat_cols(&[ce, ce])
    });
}

#[test]
fn conv_matches_hand_fixture() {
    // Scalar channels, f = [1, 1], dilation 2, zero left padding.
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let x = g.input(array![[1.0], [2.0], [3.0], [4.0]]);
    let w = g.input(array![[1.0], [1.0]]);
    let y = g.conv1d(x, w, &Segments::single(4), 2, 2, 0);
    assert_eq!(g.value(y), &array![[1.0], [2.0], [4.0], [6.0]]);
}

#[test]
fn softmax_ce_uniform_logits_is_log_k() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let l = g.input(ndarray::Array2::zeros((3, 5)));
    let ce = g.softmax_cross_entropy(l, &[0, 1, 4], &[1.0 / 3.0; 3]);
    assert!((g.scalar(ce) - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn adam_minimizes_quadratic() {
    let mut s = ParamStore::new();
    let p = s.add("p", array![[3.0, -2.0]]);
    let mut opt = hipal_autograd::Adam::new(0.1);
    for _ in 0..500 {
        let grads = {
            let mut g = Graph::new(&s);
            let v = g.param(p);
            let sq = g.mul(v, v);
            let l = g.sum(sq);
            g.backward(l)
        };
        opt.step(&mut s, &grads);
    }
    assert!(s.value(p).iter().all(|v| v.abs() < 1e-2));
}

#[test]
fn clip_global_norm_caps_norm() {
    let mut s = ParamStore::new();
    let p = s.add("p", array![[3.0, 4.0]]);
    let mut g = Graph::new(&s);
    let v = g.param(p);
    let sq = g.mul(v, v);
    let l = g.sum(sq);
    let mut grads = g.backward(l);
    let before = grads.clip_global_norm(5.0);
    assert!((before - 10.0).abs() < 1e-12);
    assert!((grads.global_norm() - 5.0).abs() < 1e-12);
}
