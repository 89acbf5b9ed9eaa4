use hipal::embed::{ActionEmbedding, EmbeddingConfig};
use hipal::encoders::{Arch, EncoderConfig};
use hipal::hipal::{HiPALModel, ModelConfig};
use hipal::logstore::{Action, Shift};
use hipal::seqae::{pretrain_unsupervised, transfer_weights, SeqAEConfig, SeqAEModel, TimeBins};
use hipal_autograd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn emb() -> EmbeddingConfig {
    EmbeddingConfig {
        d_a: 6,
        d_t: 3,
        ..Default::default()
    }
}

fn enc(arch: Arch) -> EncoderConfig {
    let mut c = EncoderConfig::hierarchical(arch);
    c.n_layers = 2;
    c.filters = vec![12];
    c.kernels = vec![3];
    c.dropout = 0.0;
    c.max_steps = 16;
    c.out_dim = 12;
    c
}

fn cyclic_shifts(n: usize, len: usize) -> Vec<Shift> {
    (0..n)
        .map(|s| {
            let t0 = s as i64 * 86_400;
            Shift::new(
                (0..len)
                    .map(|i| Action {
                        timestamp: t0 + 30 * i as i64 + (i % 3) as i64 * 10,
                        code: ((i + s) % 3) as u32,
                    })
                    .collect(),
            )
            .unwrap()
        })
        .collect()
}

fn model(arch: Arch, vocab: usize, epochs: usize, shifts: &[Shift]) -> SeqAEModel {
    let mut cfg = SeqAEConfig::new(vocab, emb(), enc(arch));
    cfg.epochs = epochs;
    cfg.batch_size = 8;
    cfg.learning_rate = 1e-2;
    cfg.seed = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let refs: Vec<&Shift> = shifts.iter().collect();
    SeqAEModel::for_corpus(&cfg, ActionEmbedding::random(vocab, 6, &mut rng), &refs).unwrap()
}

#[test]
fn uniform_heads_score_log_vocabulary_plus_log_bins() {
    let shifts = cyclic_shifts(6, 10);
    let events: Vec<&[Action]> = shifts.iter().map(|s| s.events()).collect();
    for arch in [Arch::Fcn, Arch::CausalNet, Arch::ResTcn] {
        let mut m = model(arch, 7, 0, &shifts);
        for name in ["head.action.w", "head.action.b", "head.time.w", "head.time.b"] {
            let id = m.store.find(name).unwrap();
            let shape = m.store.value(id).raw_dim();
            *m.store.value_mut(id) = Tensor::zeros(shape);
        }
        let (a, t) = m.evaluate(&events).unwrap();
        assert!((a - 7f64.ln()).abs() < 1e-12, "{arch}");
        assert!((t - 50f64.ln()).abs() < 1e-12, "{arch}");
    }
}

fn unit_scale(mut e: ActionEmbedding) -> ActionEmbedding {
    e.matrix.mapv_inplace(|v| v * 12.0);
    e
}

fn pretrained_on_cycle(arch: Arch) -> (SeqAEModel, Vec<Shift>) {
    let shifts = cyclic_shifts(48, 12);
    let events: Vec<&[Action]> = shifts.iter().map(|s| s.events()).collect();
    let mut cfg = SeqAEConfig::new(3, emb(), enc(arch));
    cfg.epochs = 40;
    cfg.batch_size = 8;
    cfg.learning_rate = 1e-2;
    cfg.seed = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let refs: Vec<&Shift> = shifts.iter().collect();
    let actions = unit_scale(ActionEmbedding::random(3, 6, &mut rng));
    let mut m = SeqAEModel::for_corpus(&cfg, actions, &refs).unwrap();
    let losses = pretrain_unsupervised(&mut m, &events).unwrap();
    assert!(losses.last().unwrap() < &losses[0]);
    (m, shifts)
}

#[test]
fn learns_to_reconstruct_a_cyclic_corpus() {
    let (m, shifts) = pretrained_on_cycle(Arch::CausalNet);
    let (mut hit, mut total) = (0, 0);
    for s in &shifts {
        let r = m.reconstruct_shift(s.events()).unwrap();
        for (i, a) in s.events().iter().enumerate() {
            let row = r.action_log_probs.row(i);
            let best = (0..3).max_by(|&x, &y| row[x].total_cmp(&row[y])).unwrap();
            hit += usize::from(best == a.code as usize);
            total += 1;
        }
    }
    let acc = hit as f64 / total as f64;
    assert!(acc > 0.9, "{acc}");
}

#[test]
fn replicated_decoders_beat_chance_but_cannot_place_interior_steps() {
    for arch in [Arch::Fcn, Arch::ResTcn] {
        let (m, shifts) = pretrained_on_cycle(arch);
        let events: Vec<&[Action]> = shifts.iter().map(|s| s.events()).collect();
        let (a, t) = m.evaluate(&events).unwrap();
        assert!(a < 3f64.ln(), "{arch}: {a}");
        assert!(t < 50f64.ln(), "{arch}: {t}");
        let r = m.reconstruct_shift(events[0]).unwrap();
        let lp = &r.action_log_probs;
        assert_eq!(lp.row(7), lp.row(8), "{arch}");
    }
}

#[test]
fn zero_epochs_leave_the_initialization() {
    let shifts = cyclic_shifts(4, 6);
    let events: Vec<&[Action]> = shifts.iter().map(|s| s.events()).collect();
    let mut m = model(Arch::ResTcn, 3, 0, &shifts);
    let before: Vec<Tensor> = m.store.iter().map(|(_, p)| p.value.clone()).collect();
    assert!(pretrain_unsupervised(&mut m, &events).unwrap().is_empty());
    let after: Vec<Tensor> = m.store.iter().map(|(_, p)| p.value.clone()).collect();
    assert_eq!(before, after);
    assert!(pretrain_unsupervised(&mut m, &[]).is_err());
}

#[test]
fn transfer_reproduces_shift_codes_exactly() {
    let shifts = cyclic_shifts(10, 9);
    let events: Vec<&[Action]> = shifts.iter().map(|s| s.events()).collect();
    for arch in [Arch::Fcn, Arch::CausalNet, Arch::ResTcn] {
        let mut ae = model(arch, 3, 2, &shifts);
        pretrain_unsupervised(&mut ae, &events).unwrap();
        let mut cfg = ModelConfig::new(3, arch);
        cfg.embedding = emb();
        cfg.encoder = enc(arch);
        cfg.seed = 99;
        let mut target = HiPALModel::with_random_actions(&cfg).unwrap();
        let classifier = target.store.value(target.mlp1.w).clone();
        transfer_weights(&ae, &mut target).unwrap();
        let mut g = hipal_autograd::Graph::new(&target.store);
        let h = target
            .encode_shifts(&mut g, &events, &mut hipal::nn::ForwardCtx::eval())
            .unwrap();
        assert_eq!(g.value(h), &ae.encode_shifts(&events).unwrap(), "{arch}");
        assert_eq!(target.store.value(target.mlp1.w), &classifier);
    }
}

#[test]
fn transfer_rejects_mismatched_encoders() {
    let shifts = cyclic_shifts(4, 6);
    let ae = model(Arch::CausalNet, 3, 0, &shifts);
    let mut cfg = ModelConfig::new(3, Arch::CausalNet);
    cfg.embedding = emb();
    cfg.encoder = enc(Arch::CausalNet);
    cfg.encoder.filters = vec![8];
    let mut target = HiPALModel::with_random_actions(&cfg).unwrap();
    assert!(transfer_weights(&ae, &mut target).is_err());
    cfg.encoder = enc(Arch::ResTcn);
    let mut target = HiPALModel::with_random_actions(&cfg).unwrap();
    assert!(transfer_weights(&ae, &mut target).is_err());
}

#[test]
fn same_length_decoders_return_the_input_length() {
    let shifts = cyclic_shifts(4, 6);
    for arch in [Arch::Fcn, Arch::ResTcn] {
        let m = model(arch, 3, 0, &shifts);
        for len in [1, 5, 16] {
            assert!(m.shape_walk(len).iter().all(|&l| l == len), "{arch}");
        }
    }
}

#[test]
fn checkpoints_keep_bins_and_weights() {
    let shifts = cyclic_shifts(6, 8);
    let events: Vec<&[Action]> = shifts.iter().map(|s| s.events()).collect();
    let m = model(Arch::CausalNet, 3, 1, &shifts);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ae.ckpt");
    m.save(&path).unwrap();
    let back = SeqAEModel::load(&path).unwrap();
    assert_eq!(back.bins, m.bins);
    assert_eq!(back.evaluate(&events).unwrap(), m.evaluate(&events).unwrap());
}

#[test]
fn bins_respect_log_interval_quantiles() {
    let b = TimeBins::fit((1..=1000).map(|i| i * 3), 11).unwrap();
    assert_eq!(b.edges.len(), 9);
    let per_bin = |k: usize| (1..=1000).filter(|i| b.bin(Some(i * 3)) == k).count();
    for k in 1..11 {
        let c = per_bin(k);
        assert!((90..=112).contains(&c), "bin {k}: {c}");
    }
}
