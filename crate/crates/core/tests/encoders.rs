use hipal::encoders::{receptive_field, Arch, Encoder, EncoderConfig};
use hipal::nn::ForwardCtx;
use hipal_autograd::check::check_gradients;
use hipal_autograd::{init, Graph, ParamStore, Segments, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(arch: Arch) -> EncoderConfig {
    let mut c = EncoderConfig::hierarchical(arch);
    c.n_layers = 2;
    c.filters = vec![4];
    c.kernels = vec![3];
    c.dropout = 0.0;
    c.max_steps = 16;
    c.out_dim = 3;
    c
}

fn build(arch: Arch, seed: u64) -> (ParamStore, Encoder) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let e = Encoder::new(&mut s, "enc", &small(arch), 3, &mut rng).unwrap();
    (s, e)
}

fn encode(store: &ParamStore, enc: &Encoder, x: &Tensor, lengths: &[usize]) -> Tensor {
    let mut g = Graph::new(store);
    let xv = g.input(x.clone());
    let h = enc.forward(&mut g, xv, &Segments::from_lengths(lengths), &mut ForwardCtx::eval());
    g.value(h).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn causal_outputs_ignore_later_steps(len in 2usize..16, t in 0usize..16, bump in -2.0f64..2.0, seed in 0u64..50) {
        let t = t % len;
        for arch in [Arch::CausalNet, Arch::ResTcn] {
            let (store, enc) = build(arch, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let base = init::uniform(len, 3, 1.0, &mut rng);
            let mut moved = base.clone();
            moved[[t, 1]] += bump;
            let trace = |x: &Tensor| {
                let mut g = Graph::new(&store);
                let xv = g.input(x.clone());
                enc.trace(&mut g, xv, &Segments::from_lengths(&[len]), &mut ForwardCtx::eval())
                    .iter()
                    .map(|l| (g.value(l.value).clone(), l.stride))
                    .collect::<Vec<_>>()
            };
            for ((a, stride), (b, _)) in trace(&base).iter().zip(trace(&moved)) {
                for s in 0..a.nrows() {
                    if (s + 1) * stride <= t {
                        prop_assert_eq!(a.row(s), b.row(s));
                    }
                }
            }
        }
    }

    #[test]
    fn batching_does_not_change_codes(l1 in 1usize..16, l2 in 1usize..16, seed in 0u64..50) {
        for arch in [Arch::Fcn, Arch::CausalNet, Arch::ResTcn] {
            let (store, enc) = build(arch, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            let x = init::uniform(l1 + l2, 3, 1.0, &mut rng);
            let both = encode(&store, &enc, &x, &[l1, l2]);
            let first = encode(&store, &enc, &x.slice(ndarray::s![..l1, ..]).to_owned(), &[l1]);
            let second = encode(&store, &enc, &x.slice(ndarray::s![l1.., ..]).to_owned(), &[l2]);
            for j in 0..both.ncols() {
                prop_assert!((both[[0, j]] - first[[0, j]]).abs() < 1e-12);
                prop_assert!((both[[1, j]] - second[[0, j]]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    for arch in [Arch::Fcn, Arch::CausalNet, Arch::ResTcn] {
        let (mut store, enc) = build(arch, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = init::uniform(14, 3, 1.0, &mut rng);
        let segs = Segments::from_lengths(&[9, 5]);
        let proj = init::uniform(2, enc.h_dim(), 1.0, &mut rng);
        let run = |s: &ParamStore| {
            let mut g = Graph::new(s);
            let xv = g.input(x.clone());
            let mut crng = ChaCha8Rng::seed_from_u64(0);
            let h = enc.forward(&mut g, xv, &segs, &mut ForwardCtx::train(&mut crng));
            let y = g.mul_const(h, proj.clone());
            let l = g.sum(y);
            (g.scalar(l), g.backward(l))
        };
        let (_, grads) = run(&store);
        let report = check_gradients(&mut store, &grads, 1e-6, 1e-4, 1e-8, &mut |s| run(s).0);
        assert!(report.passed(), "{arch}: {:?}", report.failures);
    }
}

#[test]
fn receptive_field_matches_a_perturbation_probe() {
    for kernel in [2usize, 3] {
        let mut cfg = EncoderConfig::hierarchical(Arch::ResTcn);
        cfg.n_layers = 4;
        cfg.filters = vec![2];
        cfg.kernels = vec![kernel];
        cfg.dropout = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(kernel as u64);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, "enc", &cfg, 2, &mut rng).unwrap();
        let n = 40;
        let run = |x: Tensor| {
            let mut g = Graph::new(&store);
            let xv = g.input(x);
            let t = enc.trace(&mut g, xv, &Segments::from_lengths(&[n]), &mut ForwardCtx::eval());
            g.value(t.last().unwrap().value).clone()
        };
        let base = init::uniform(n, 2, 1.0, &mut rng);
        let mut poked = base.clone();
        poked[[0, 0]] += 1.0;
        poked[[0, 1]] -= 1.0;
        let (a, b) = (run(base), run(poked));
        let reach = (0..n).filter(|&s| a.row(s) != b.row(s)).max().unwrap() + 1;
        assert!(reach <= receptive_field(&cfg), "kernel {kernel}: {reach}");
        assert_eq!(receptive_field(&cfg), 1 + (kernel - 1) * 2 * (1 + 2));
    }
}
