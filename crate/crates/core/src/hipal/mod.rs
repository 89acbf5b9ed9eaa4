//! The hierarchical predictive model: a shared per-shift encoder, an LSTM
//! accumulating shift representations over the month, a monthly
//! classifier and a per-shift daily-risk head.

mod single;
mod stream;
mod taildrop;
mod train;

use std::path::Path;

use hipal_autograd::{softmax_rows, Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use single::{SingleLevelConfig, SingleLevelModel};
pub use stream::{StreamUpdate, StreamingPredictor};
pub use taildrop::{apply_tail_drop, sample_tail_drop, tail_drop_weights};
pub use train::{train_supervised, EpochRecord, History, MonthModel, TrainConfig};

use crate::checkpoint::Container;
use crate::config::KvConfig;
use crate::embed::{ActionEmbedding, EmbeddingBank, EmbeddingConfig, EventBatch, ShiftTimeEmbedder, TimeFeatures};
use crate::encoders::{truncate_recent, Arch, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::logstore::{Action, MonthRecord};
use crate::nn::{ForwardCtx, Linear, Lstm};

pub const ENCODER_PREFIX: &str = "enc";

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embedding: EmbeddingConfig,
    pub encoder: EncoderConfig,
    pub lstm_hidden: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
    /// Months keep only their most recent `max_shifts` shifts.
    pub max_shifts: usize,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, arch: Arch) -> Self {
        Self {
            vocab_size,
            embedding: EmbeddingConfig::default(),
            encoder: EncoderConfig::hierarchical(arch),
            lstm_hidden: 128,
            mlp_hidden: 64,
            dropout: 0.3,
            max_shifts: 30,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        self.encoder.validate()?;
        if self.vocab_size == 0 || self.lstm_hidden == 0 || self.mlp_hidden == 0 || self.max_shifts == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Width of the shift representation `r = (h, p, q)`.
    pub fn r_dim(&self) -> usize {
        self.encoder.h_dim() + 2 * self.embedding.d_t
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("vocab_size", self.vocab_size.to_string());
        kv.merge_prefixed("emb.", &self.embedding.to_kv());
        kv.merge_prefixed("enc.", &self.encoder.to_kv());
        kv.set("lstm_hidden", self.lstm_hidden.to_string());
        kv.set("mlp_hidden", self.mlp_hidden.to_string());
        kv.set("dropout", self.dropout.to_string());
        kv.set("max_shifts", self.max_shifts.to_string());
        kv.set("seed", self.seed.to_string());
        kv
    }

    pub fn from_kv(kv: &KvConfig, vocab_size: usize) -> Result<Self> {
        let enc = EncoderConfig::from_kv(&kv.sub("enc."), false)?;
        let mut c = Self::new(vocab_size, enc.arch);
        c.encoder = enc;
        kv.read_into("vocab_size", &mut c.vocab_size)?;
        c.embedding = EmbeddingConfig::from_kv(&kv.sub("emb."))?;
        kv.read_into("lstm_hidden", &mut c.lstm_hidden)?;
        kv.read_into("mlp_hidden", &mut c.mlp_hidden)?;
        kv.read_into("dropout", &mut c.dropout)?;
        kv.read_into("max_shifts", &mut c.max_shifts)?;
        kv.read_into("seed", &mut c.seed)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonthPrediction {
    /// Probability of the burnout class for the month.
    pub gamma: f64,
    /// Per-shift burnout probabilities, aligned to the shifts used.
    pub daily_risks: Vec<f64>,
}

/// Cross-entropy of a predicted burnout probability against a label.
pub fn binary_ce(p: f64, y: bool) -> f64 {
    -(if y { p } else { 1.0 - p }).ln()
}

/// `CE(γ, y) + λ/T · Σ_k CE(α_k, y)`.
pub fn composite_loss(gamma: f64, daily_risks: &[f64], y: bool, lambda: f64) -> f64 {
    let t = daily_risks.len().max(1) as f64;
    binary_ce(gamma, y) + lambda / t * daily_risks.iter().map(|&a| binary_ce(a, y)).sum::<f64>()
}

/// A month reduced to what the model consumes: its most recent shifts,
/// each truncated to its most recent events.
pub struct PreparedMonth<'a> {
    pub shifts: Vec<&'a [Action]>,
    pub starts: Vec<i64>,
    pub origin: i64,
}

pub fn prepare_month(month: &MonthRecord, max_shifts: usize, max_steps: usize) -> Result<PreparedMonth<'_>> {
    if month.shifts.is_empty() {
        return Err(Error::Validation(format!(
            "month {}/{} has no shifts",
            month.participant_id, month.month_index
        )));
    }
    let keep = &month.shifts[month.shifts.len().saturating_sub(max_shifts)..];
    let shifts: Vec<&[Action]> = keep.iter().map(|s| truncate_recent(s.events(), max_steps)).collect();
    Ok(PreparedMonth {
        starts: shifts.iter().map(|s| s[0].timestamp).collect(),
        shifts,
        origin: month.window_start,
    })
}

/// Graph outputs for a batch of months.
pub struct BatchOutput {
    /// One row of two-class logits per month.
    pub gamma_logits: Var,
    /// One row of two-class logits per shift, months concatenated.
    pub tc_logits: Var,
    pub shift_counts: Vec<usize>,
}

pub struct HiPALModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub bank: EmbeddingBank,
    pub encoder: Encoder,
    pub high: ShiftTimeEmbedder,
    pub lstm: Lstm,
    pub mlp1: Linear,
    pub mlp2: Linear,
    pub tc: Linear,
}

impl HiPALModel {
    pub fn new(cfg: &ModelConfig, actions: ActionEmbedding) -> Result<Self> {
        cfg.validate()?;
        if actions.vocab_size() != cfg.vocab_size {
            return Err(Error::Config(format!(
                "action embedding covers {} actions, model expects {}",
                actions.vocab_size(),
                cfg.vocab_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let bank = EmbeddingBank::new(&mut store, "emb", &cfg.embedding, actions, &mut rng)?;
        let encoder = Encoder::new(&mut store, ENCODER_PREFIX, &cfg.encoder, bank.dim(), &mut rng)?;
        let high = ShiftTimeEmbedder::new(&mut store, "high", cfg.embedding.d_t, cfg.embedding.time_unit, &mut rng);
        let r = cfg.r_dim();
        let lstm = Lstm::new(&mut store, "lstm", r, cfg.lstm_hidden, &mut rng);
        let mlp1 = Linear::new(&mut store, "cls.0", cfg.lstm_hidden, cfg.mlp_hidden, &mut rng);
        let mlp2 = Linear::new(&mut store, "cls.1", cfg.mlp_hidden, 2, &mut rng);
        let tc = Linear::new(&mut store, "tc", r, 2, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            store,
            bank,
            encoder,
            high,
            lstm,
            mlp1,
            mlp2,
            tc,
        })
    }

    /// A model with a freshly drawn action matrix.
    pub fn with_random_actions(cfg: &ModelConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_a0a0);
        Self::new(cfg, ActionEmbedding::random(cfg.vocab_size, cfg.embedding.d_a, &mut rng))
    }

    /// Shift vectors `h` for a packed batch of event sequences.
    pub fn encode_shifts(&self, g: &mut Graph, shifts: &[&[Action]], ctx: &mut ForwardCtx) -> Result<Var> {
        let batch = EventBatch::from_shifts(shifts.iter().copied());
        self.bank.check_codes(&batch.codes)?;
        let x = self.bank.forward(g, &batch);
        Ok(self.encoder.forward(g, x, &batch.time.segs, ctx))
    }

    /// Shift representations `r = (h, p, q)` for every shift of every
    /// prepared month, months concatenated.
    pub fn shift_representations(&self, g: &mut Graph, months: &[PreparedMonth], ctx: &mut ForwardCtx) -> Result<Var> {
        let all: Vec<&[Action]> = months.iter().flat_map(|m| m.shifts.iter().copied()).collect();
        let h = self.encode_shifts(g, &all, ctx)?;
        let tf = TimeFeatures::from_sequences(months.iter().map(|m| (m.starts.as_slice(), m.origin)));
        let pq = self.high.forward(g, &tf);
        Ok(g.concat_cols(&[h, pq]))
    }

    /// Monthly logits from the final LSTM state.
    pub fn classify(&self, g: &mut Graph, v: Var, ctx: &mut ForwardCtx) -> Var {
        let z = self.mlp1.forward(g, v);
        let z = g.relu(z);
        let z = ctx.dropout(g, z, self.cfg.dropout);
        self.mlp2.forward(g, z)
    }

    pub fn forward_batch(&self, g: &mut Graph, months: &[&MonthRecord], ctx: &mut ForwardCtx) -> Result<BatchOutput> {
        let prepared = months
            .iter()
            .map(|m| prepare_month(m, self.cfg.max_shifts, self.cfg.encoder.max_steps))
            .collect::<Result<Vec<_>>>()?;
        let r = self.shift_representations(g, &prepared, ctx)?;
        let tc_logits = self.tc.forward(g, r);
        let mut finals = Vec::with_capacity(months.len());
        let mut offset = 0;
        let mut shift_counts = Vec::with_capacity(months.len());
        for p in &prepared {
            let t = p.shifts.len();
            let rows: Vec<usize> = (offset..offset + t).collect();
            let rm = g.select_rows(r, &rows);
            let hs = self.lstm.run(g, rm);
            finals.push(*hs.last().expect("non-empty month"));
            shift_counts.push(t);
            offset += t;
        }
        let v = g.concat_rows(&finals);
        let gamma_logits = self.classify(g, v, ctx);
        Ok(BatchOutput {
            gamma_logits,
            tc_logits,
            shift_counts,
        })
    }

    /// Batch-mean composite loss as a graph scalar.
    pub fn loss(&self, g: &mut Graph, out: &BatchOutput, labels: &[bool], lambda: f64) -> Var {
        let b = labels.len() as f64;
        let targets: Vec<usize> = labels.iter().map(|&y| usize::from(y)).collect();
        let main = g.softmax_cross_entropy(out.gamma_logits, &targets, &vec![1.0 / b; labels.len()]);
        if lambda == 0.0 {
            return main;
        }
        let mut tc_targets = Vec::new();
        let mut tc_weights = Vec::new();
        for (&y, &t) in labels.iter().zip(&out.shift_counts) {
            tc_targets.extend(std::iter::repeat_n(usize::from(y), t));
            tc_weights.extend(std::iter::repeat_n(lambda / (t as f64 * b), t));
        }
        let aux = g.softmax_cross_entropy(out.tc_logits, &tc_targets, &tc_weights);
        g.add(main, aux)
    }

    pub fn predict_batch(&self, months: &[&MonthRecord]) -> Result<Vec<MonthPrediction>> {
        let mut g = Graph::new(&self.store);
        let out = self.forward_batch(&mut g, months, &mut ForwardCtx::eval())?;
        let gamma = softmax_rows(g.value(out.gamma_logits));
        let alpha = softmax_rows(g.value(out.tc_logits));
        let mut preds = Vec::with_capacity(months.len());
        let mut offset = 0;
        for (i, &t) in out.shift_counts.iter().enumerate() {
            preds.push(MonthPrediction {
                gamma: gamma[[i, 1]],
                daily_risks: (offset..offset + t).map(|k| alpha[[k, 1]]).collect(),
            });
            offset += t;
        }
        Ok(preds)
    }

    /// Deterministic inference for one month.
    pub fn predict(&self, month: &MonthRecord) -> Result<MonthPrediction> {
        Ok(self.predict_batch(&[month])?.remove(0))
    }

    pub fn to_container(&self) -> Container {
        Container::from_store("hipal", self.cfg.to_kv(), &self.store, "")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("hipal")?;
        let vocab_size = c
            .echo
            .get("vocab_size")?
            .ok_or_else(|| Error::Checkpoint("missing vocab_size".into()))?;
        let cfg = ModelConfig::from_kv(&c.echo, vocab_size)?;
        let mut model = Self::new(&cfg, ActionEmbedding {
            matrix: Tensor::zeros((vocab_size, cfg.embedding.d_a)),
        })?;
        c.load_into(&mut model.store, "")?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

impl MonthModel for HiPALModel {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_loss(&self, g: &mut Graph, months: &[&MonthRecord], labels: &[bool], lambda: f64, ctx: &mut ForwardCtx) -> Result<Var> {
        let out = self.forward_batch(g, months, ctx)?;
        Ok(self.loss(g, &out, labels, lambda))
    }

    fn predict_gamma(&self, months: &[&MonthRecord]) -> Result<Vec<f64>> {
        Ok(self.predict_batch(months)?.into_iter().map(|p| p.gamma).collect())
    }
}
