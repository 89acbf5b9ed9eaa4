//! Sequence autoencoder for unsupervised pretraining of the per-shift
//! encoder: every shift is encoded to `h` and decoded back into its action
//! sequence and binned inter-event intervals.

mod bins;

use std::path::Path;

use hipal_autograd::{log_softmax_rows, Adam, Graph, ParamStore, Segments, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use bins::{log_interval, TimeBins};

use crate::checkpoint::{Blob, Container};
use crate::config::KvConfig;
use crate::embed::{ActionEmbedding, EmbeddingBank, EmbeddingConfig, EventBatch};
use crate::encoders::{truncate_recent, Arch, ConvLayer, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::hipal::{HiPALModel, ENCODER_PREFIX};
use crate::logstore::{Action, Shift};
use crate::nn::{BatchNorm, ForwardCtx, Linear};

const BINS_BLOB: &str = "time_bins.edges";

#[derive(Clone, Debug, PartialEq)]
pub struct SeqAEConfig {
    pub vocab_size: usize,
    pub embedding: EmbeddingConfig,
    pub encoder: EncoderConfig,
    pub n_bins: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Shifts per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
}

impl SeqAEConfig {
    pub fn new(vocab_size: usize, embedding: EmbeddingConfig, encoder: EncoderConfig) -> Self {
        Self {
            vocab_size,
            embedding,
            encoder,
            n_bins: 50,
            epochs: 5,
            learning_rate: 1e-3,
            batch_size: 16,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        self.encoder.validate()?;
        if self.n_bins < 2 || self.batch_size == 0 || self.learning_rate <= 0.0 {
            return Err(Error::Config("invalid autoencoder training settings".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("vocab_size", self.vocab_size.to_string());
        kv.merge_prefixed("emb.", &self.embedding.to_kv());
        kv.merge_prefixed("enc.", &self.encoder.to_kv());
        kv.set("n_bins", self.n_bins.to_string());
        kv.set("epochs", self.epochs.to_string());
        kv.set("lr", self.learning_rate.to_string());
        kv.set("batch_size", self.batch_size.to_string());
        kv.set("seed", self.seed.to_string());
        kv
    }

    pub fn from_kv(kv: &KvConfig, vocab_size: usize) -> Result<Self> {
        let mut c = Self::new(
            vocab_size,
            EmbeddingConfig::from_kv(&kv.sub("emb."))?,
            EncoderConfig::from_kv(&kv.sub("enc."), false)?,
        );
        kv.read_into("vocab_size", &mut c.vocab_size)?;
        kv.read_into("n_bins", &mut c.n_bins)?;
        kv.read_into("epochs", &mut c.epochs)?;
        kv.read_into("lr", &mut c.learning_rate)?;
        kv.read_into("batch_size", &mut c.batch_size)?;
        kv.read_into("seed", &mut c.seed)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug)]
struct DecBlock {
    conv1: ConvLayer,
    conv2: ConvLayer,
    skip: Option<Linear>,
}

#[derive(Clone, Debug)]
enum Decoder {
    Fcn {
        convs: Vec<ConvLayer>,
        norms: Vec<BatchNorm>,
    },
    CausalNet {
        expand: Linear,
        convs: Vec<ConvLayer>,
    },
    ResTcn {
        blocks: Vec<DecBlock>,
    },
}

/// Mirrored decoder layout: per decoder layer, `(c_in, c_out, kernel, dilation)`.
pub fn decoder_layers(cfg: &EncoderConfig) -> Vec<(usize, usize, usize, usize)> {
    let dil = cfg.dilations();
    let n = cfg.n_layers;
    let mut c_in = cfg.filters_at(n - 1);
    (0..n)
        .rev()
        .map(|l| {
            let c_out = cfg.filters_at(l);
            let layer = (c_in, c_out, cfg.kernel_at(l), dil[l]);
            c_in = c_out;
            layer
        })
        .collect()
}

/// Per-step output distributions of one reconstructed shift.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// `steps × |A|` log-probabilities.
    pub action_log_probs: Tensor,
    /// `steps × K` log-probabilities.
    pub time_log_probs: Tensor,
}

pub struct SeqAEModel {
    pub cfg: SeqAEConfig,
    pub bins: TimeBins,
    pub store: ParamStore,
    pub bank: EmbeddingBank,
    pub encoder: Encoder,
    decoder: Decoder,
    pub proj: Linear,
    pub action_head: Linear,
    pub time_head: Linear,
}

struct Packed {
    batch: EventBatch,
    action_targets: Vec<usize>,
    time_targets: Vec<usize>,
}

impl SeqAEModel {
    /// The action head starts from the transpose of the action matrix.
    pub fn new(cfg: &SeqAEConfig, actions: ActionEmbedding, bins: TimeBins) -> Result<Self> {
        cfg.validate()?;
        if actions.vocab_size() != cfg.vocab_size {
            return Err(Error::Config("action embedding and model vocabularies differ".into()));
        }
        if bins.n_bins != cfg.n_bins {
            return Err(Error::Config("bin count differs from configuration".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let head_init = actions.matrix.t().to_owned();
        let bank = EmbeddingBank::new(&mut store, "emb", &cfg.embedding, actions, &mut rng)?;
        let enc_cfg = &cfg.encoder;
        let encoder = Encoder::new(&mut store, ENCODER_PREFIX, enc_cfg, bank.dim(), &mut rng)?;
        let layers = decoder_layers(enc_cfg);
        let decoder = match enc_cfg.arch {
            Arch::Fcn => {
                let mut convs = Vec::new();
                let mut norms = Vec::new();
                for (j, &(c_in, c_out, k, d)) in layers.iter().enumerate() {
                    let name = format!("dec.block{j}");
                    convs.push(ConvLayer::new(&mut store, &format!("{name}.conv"), c_in, c_out, k, d, k / 2, false, &mut rng));
                    norms.push(BatchNorm::new(&mut store, &format!("{name}.bn"), c_out));
                }
                Decoder::Fcn { convs, norms }
            }
            Arch::CausalNet => {
                let c_last = enc_cfg.filters_at(enc_cfg.n_layers - 1);
                let expand = Linear::new(&mut store, "dec.expand", enc_cfg.out_dim, enc_cfg.flatten_width() * c_last, &mut rng);
                let convs = layers
                    .iter()
                    .enumerate()
                    .map(|(j, &(c_in, c_out, k, d))| {
                        ConvLayer::new(&mut store, &format!("dec.layer{j}"), c_in, c_out, k, d, 0, false, &mut rng)
                    })
                    .collect();
                Decoder::CausalNet { expand, convs }
            }
            Arch::ResTcn => {
                let blocks = layers
                    .chunks(2)
                    .enumerate()
                    .map(|(b, pair)| {
                        let name = format!("dec.block{b}");
                        let (c_in, f1, k1, d1) = pair[0];
                        let (_, f2, k2, d2) = pair[pair.len() - 1];
                        let conv1 = ConvLayer::new(&mut store, &format!("{name}.conv1"), c_in, f1, k1, d1, 0, true, &mut rng);
                        let conv2 = ConvLayer::new(&mut store, &format!("{name}.conv2"), f1, f2, k2, d2, 0, true, &mut rng);
                        let skip = (c_in != f2).then(|| Linear::new(&mut store, &format!("{name}.skip"), c_in, f2, &mut rng));
                        DecBlock { conv1, conv2, skip }
                    })
                    .collect();
                Decoder::ResTcn { blocks }
            }
        };
        let c_dec = layers.last().map_or(enc_cfg.h_dim(), |l| l.1);
        let proj = Linear::new(&mut store, "dec.proj", c_dec, cfg.embedding.d_a, &mut rng);
        let action_head = Linear {
            w: store.add("head.action.w", head_init),
            b: store.add("head.action.b", Tensor::zeros((1, cfg.vocab_size))),
        };
        let time_head = Linear::new(&mut store, "head.time", cfg.embedding.d_a, cfg.n_bins, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            bins,
            store,
            bank,
            encoder,
            decoder,
            proj,
            action_head,
            time_head,
        })
    }

    /// Fits the time bins on `shifts` and builds a model around them.
    pub fn for_corpus(cfg: &SeqAEConfig, actions: ActionEmbedding, shifts: &[&Shift]) -> Result<Self> {
        let bins = TimeBins::fit(
            shifts
                .iter()
                .flat_map(|s| truncate_recent(s.events(), cfg.encoder.max_steps).windows(2).map(|w| w[1].timestamp - w[0].timestamp)),
            cfg.n_bins,
        )?;
        Self::new(cfg, actions, bins)
    }

    fn pack(&self, shifts: &[&[Action]]) -> Result<Packed> {
        if let Some(i) = shifts.iter().position(|s| s.is_empty()) {
            return Err(Error::Validation(format!("shift {i} is empty")));
        }
        let shifts: Vec<&[Action]> = shifts.iter().map(|s| truncate_recent(s, self.cfg.encoder.max_steps)).collect();
        let batch = EventBatch::from_shifts(shifts.iter().copied());
        self.bank.check_codes(&batch.codes)?;
        let mut time_targets = Vec::with_capacity(batch.rows());
        for s in &shifts {
            let ts: Vec<i64> = s.iter().map(|a| a.timestamp).collect();
            time_targets.extend(self.bins.bins_of(&ts));
        }
        Ok(Packed {
            action_targets: batch.codes.clone(),
            batch,
            time_targets,
        })
    }

    /// Decoder pass from shift vectors `h` back to one row per input step,
    /// returning the intermediate sequence lengths of the first shift.
    fn decode(&self, g: &mut Graph, h: Var, segs: &Segments, ctx: &mut ForwardCtx) -> (Var, Vec<usize>) {
        let p = self.cfg.encoder.dropout;
        let mut lens = Vec::new();
        let out = match &self.decoder {
            Decoder::Fcn { convs, norms } => {
                let mut x = g.broadcast_segments(h, segs);
                for (conv, bn) in convs.iter().zip(norms) {
                    let y = conv.forward(g, x, segs);
                    let y = bn.forward(g, y, ctx);
                    x = g.relu(y);
                    lens.push(segs.length(0));
                }
                x
            }
            Decoder::CausalNet { expand, convs } => {
                let mut levels = vec![segs.clone()];
                for _ in 0..self.cfg.encoder.pool_layers() {
                    let next = levels.last().expect("non-empty").halved();
                    levels.push(next);
                }
                let c_last = self.cfg.encoder.filters_at(self.cfg.encoder.n_layers - 1);
                let flat = expand.forward(g, h);
                let mut level = levels.len() - 1;
                let mut x = g.segment_unflatten(flat, &levels[level], c_last);
                for (j, conv) in convs.iter().enumerate() {
                    let y = conv.forward(g, x, &levels[level]);
                    x = g.relu(y);
                    lens.push(levels[level].length(0));
                    if j + 1 < convs.len() {
                        x = g.upsample2(x, &levels[level], &levels[level - 1]);
                        level -= 1;
                    }
                }
                x
            }
            Decoder::ResTcn { blocks } => {
                let mut x = g.broadcast_segments(h, segs);
                for b in blocks {
                    let y = b.conv1.forward(g, x, segs);
                    let y = g.relu(y);
                    let y = ctx.dropout(g, y, p);
                    let y = b.conv2.forward(g, y, segs);
                    let y = g.relu(y);
                    let y = ctx.dropout(g, y, p);
                    let skip = match &b.skip {
                        Some(lin) => lin.forward(g, x),
                        None => x,
                    };
                    let sum = g.add(y, skip);
                    x = g.relu(sum);
                    lens.push(segs.length(0));
                }
                x
            }
        };
        (out, lens)
    }

    /// Action and time-bin logits for a packed batch.
    fn forward(&self, g: &mut Graph, packed: &Packed, ctx: &mut ForwardCtx) -> (Var, Var) {
        let segs = &packed.batch.time.segs;
        let x = self.bank.forward(g, &packed.batch);
        let h = self.encoder.forward(g, x, segs, ctx);
        let (d, _) = self.decode(g, h, segs, ctx);
        let s = self.proj.forward(g, d);
        (self.action_head.forward(g, s), self.time_head.forward(g, s))
    }

    fn loss(&self, g: &mut Graph, packed: &Packed, ctx: &mut ForwardCtx) -> Var {
        let (a, t) = self.forward(g, packed, ctx);
        let n = packed.action_targets.len();
        let w = vec![1.0 / n as f64; n];
        let la = g.softmax_cross_entropy(a, &packed.action_targets, &w);
        let lt = g.softmax_cross_entropy(t, &packed.time_targets, &w);
        g.add(la, lt)
    }

    /// Shift vectors as the encoder produces them in evaluation mode.
    pub fn encode_shifts(&self, shifts: &[&[Action]]) -> Result<Tensor> {
        let packed = self.pack(shifts)?;
        let mut g = Graph::new(&self.store);
        let x = self.bank.forward(&mut g, &packed.batch);
        let h = self.encoder.forward(&mut g, x, &packed.batch.time.segs, &mut ForwardCtx::eval());
        Ok(g.value(h).clone())
    }

    pub fn reconstruct_shift(&self, shift: &[Action]) -> Result<Reconstruction> {
        let packed = self.pack(&[shift])?;
        let mut g = Graph::new(&self.store);
        let (a, t) = self.forward(&mut g, &packed, &mut ForwardCtx::eval());
        Ok(Reconstruction {
            action_log_probs: log_softmax_rows(g.value(a)),
            time_log_probs: log_softmax_rows(g.value(t)),
        })
    }

    /// Mean per-step `(action NLL, time-bin NLL)` over `shifts`.
    pub fn evaluate(&self, shifts: &[&[Action]]) -> Result<(f64, f64)> {
        let (mut na, mut nt, mut n) = (0.0, 0.0, 0usize);
        for chunk in shifts.chunks(self.cfg.batch_size) {
            let packed = self.pack(chunk)?;
            let mut g = Graph::new(&self.store);
            let (a, t) = self.forward(&mut g, &packed, &mut ForwardCtx::eval());
            let (la, lt) = (log_softmax_rows(g.value(a)), log_softmax_rows(g.value(t)));
            for (i, (&ya, &yt)) in packed.action_targets.iter().zip(&packed.time_targets).enumerate() {
                na -= la[[i, ya]];
                nt -= lt[[i, yt]];
            }
            n += packed.action_targets.len();
        }
        Ok((na / n as f64, nt / n as f64))
    }

    /// Encoder and decoder sequence lengths for one shift of `len` steps.
    pub fn shape_walk(&self, len: usize) -> Vec<usize> {
        let events: Vec<Action> = (0..len).map(|i| Action { timestamp: i as i64, code: 0 }).collect();
        let batch = EventBatch::from_shifts([events.as_slice()]);
        let segs = batch.time.segs.clone();
        let mut g = Graph::new(&self.store);
        let mut ctx = ForwardCtx::eval();
        let x = self.bank.forward(&mut g, &batch);
        let mut walk: Vec<usize> = self
            .encoder
            .trace(&mut g, x, &segs, &mut ctx)
            .iter()
            .map(|t| t.segs.length(0))
            .collect();
        let h = self.encoder.forward(&mut g, x, &segs, &mut ctx);
        let (out, lens) = self.decode(&mut g, h, &segs, &mut ctx);
        walk.extend(lens);
        walk.push(g.value(out).nrows());
        walk
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::from_store("seqae", self.cfg.to_kv(), &self.store, "");
        c.blobs.push(Blob {
            name: BINS_BLOB.into(),
            trainable: false,
            value: Tensor::from_shape_vec((1, self.bins.edges.len()), self.bins.edges.clone()).expect("row"),
        });
        c
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("seqae")?;
        let vocab_size = c
            .echo
            .get("vocab_size")?
            .ok_or_else(|| Error::Checkpoint("missing vocab_size".into()))?;
        let cfg = SeqAEConfig::from_kv(&c.echo, vocab_size)?;
        let edges = c
            .blob(BINS_BLOB)
            .ok_or_else(|| Error::Checkpoint("missing time bins".into()))?
            .value
            .iter()
            .copied()
            .collect();
        let bins = TimeBins::from_edges(edges, cfg.n_bins)?;
        let actions = ActionEmbedding {
            matrix: Tensor::zeros((vocab_size, cfg.embedding.d_a)),
        };
        let mut m = Self::new(&cfg, actions, bins)?;
        c.load_into(&mut m.store, "")?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Trains the autoencoder on every shift given. Returns the mean training
/// loss of each epoch.
pub fn pretrain_unsupervised(model: &mut SeqAEModel, shifts: &[&[Action]]) -> Result<Vec<f64>> {
    if shifts.is_empty() {
        return Err(Error::Validation("autoencoder pretraining needs at least one shift".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.cfg.seed.wrapping_add(1));
    let mut opt = Adam::new(model.cfg.learning_rate);
    let mut order: Vec<usize> = (0..shifts.len()).collect();
    let mut losses = Vec::with_capacity(model.cfg.epochs);
    for _ in 0..model.cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut steps) = (0.0, 0usize);
        for chunk in order.chunks(model.cfg.batch_size) {
            let batch: Vec<&[Action]> = chunk.iter().map(|&i| shifts[i]).collect();
            let packed = model.pack(&batch)?;
            let n = packed.action_targets.len();
            let (mut grads, bn) = {
                let mut g = Graph::new(&model.store);
                let mut ctx = ForwardCtx::train(&mut rng);
                let loss = model.loss(&mut g, &packed, &mut ctx);
                total += g.scalar(loss) * n as f64;
                (g.backward(loss), ctx.bn_updates(&g))
            };
            steps += n;
            grads.clip_global_norm(5.0);
            opt.step(&mut model.store, &grads);
            bn.apply(&mut model.store);
        }
        losses.push(total / steps as f64);
    }
    Ok(losses)
}

/// Copies the pretrained low-level path (event embedders and encoder) into
/// `target`, leaving every other parameter as it was.
pub fn transfer_weights(source: &SeqAEModel, target: &mut HiPALModel) -> Result<()> {
    if source.cfg.encoder != target.cfg.encoder
        || source.cfg.embedding != target.cfg.embedding
        || source.cfg.vocab_size != target.cfg.vocab_size
    {
        return Err(Error::Config("autoencoder and model low-level configurations differ".into()));
    }
    let enc = format!("{ENCODER_PREFIX}.");
    for (id, p) in target.store.iter().map(|(id, p)| (id, p.name.clone())).collect::<Vec<_>>() {
        if p.starts_with(&enc) || p.starts_with("emb.") {
            let src = source
                .store
                .find(&p)
                .ok_or_else(|| Error::Config(format!("autoencoder lacks parameter {p}")))?;
            *target.store.value_mut(id) = source.store.value(src).clone();
        }
    }
    Ok(())
}
