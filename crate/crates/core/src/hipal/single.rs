use std::path::Path;

use hipal_autograd::{softmax_rows, Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MonthModel;
use crate::checkpoint::Container;
use crate::config::KvConfig;
use crate::embed::{ActionEmbedding, EmbeddingBank, EmbeddingConfig, EventBatch};
use crate::encoders::{truncate_recent, Arch, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::logstore::{Action, MonthRecord};
use crate::nn::{ForwardCtx, Linear};

#[derive(Clone, Debug, PartialEq)]
pub struct SingleLevelConfig {
    pub vocab_size: usize,
    pub embedding: EmbeddingConfig,
    pub encoder: EncoderConfig,
    pub mlp_hidden: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl SingleLevelConfig {
    pub fn new(vocab_size: usize, arch: Arch) -> Self {
        Self {
            vocab_size,
            embedding: EmbeddingConfig::default(),
            encoder: EncoderConfig::single_level(arch),
            mlp_hidden: 64,
            dropout: 0.3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        self.encoder.validate()?;
        if self.vocab_size == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("vocab_size", self.vocab_size.to_string());
        kv.merge_prefixed("emb.", &self.embedding.to_kv());
        kv.merge_prefixed("enc.", &self.encoder.to_kv());
        kv.set("mlp_hidden", self.mlp_hidden.to_string());
        kv.set("dropout", self.dropout.to_string());
        kv.set("seed", self.seed.to_string());
        kv
    }

    pub fn from_kv(kv: &KvConfig, vocab_size: usize) -> Result<Self> {
        let enc = EncoderConfig::from_kv(&kv.sub("enc."), true)?;
        let mut c = Self::new(vocab_size, enc.arch);
        c.encoder = enc;
        kv.read_into("vocab_size", &mut c.vocab_size)?;
        c.embedding = EmbeddingConfig::from_kv(&kv.sub("emb."))?;
        kv.read_into("mlp_hidden", &mut c.mlp_hidden)?;
        kv.read_into("dropout", &mut c.dropout)?;
        kv.read_into("seed", &mut c.seed)?;
        c.validate()?;
        Ok(c)
    }
}

/// Baseline that encodes the whole month as one event sequence.
pub struct SingleLevelModel {
    pub cfg: SingleLevelConfig,
    pub store: ParamStore,
    pub bank: EmbeddingBank,
    pub encoder: Encoder,
    pub mlp1: Linear,
    pub mlp2: Linear,
}

impl SingleLevelModel {
    pub fn new(cfg: &SingleLevelConfig, actions: ActionEmbedding) -> Result<Self> {
        cfg.validate()?;
        if actions.vocab_size() != cfg.vocab_size {
            return Err(Error::Config("action embedding and model vocabularies differ".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let bank = EmbeddingBank::new(&mut store, "emb", &cfg.embedding, actions, &mut rng)?;
        let encoder = Encoder::new(&mut store, "enc", &cfg.encoder, bank.dim(), &mut rng)?;
        let mlp1 = Linear::new(&mut store, "cls.0", cfg.encoder.h_dim(), cfg.mlp_hidden, &mut rng);
        let mlp2 = Linear::new(&mut store, "cls.1", cfg.mlp_hidden, 2, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            store,
            bank,
            encoder,
            mlp1,
            mlp2,
        })
    }

    pub fn with_random_actions(cfg: &SingleLevelConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_a0a0);
        Self::new(cfg, ActionEmbedding::random(cfg.vocab_size, cfg.embedding.d_a, &mut rng))
    }

    pub fn forward_batch(&self, g: &mut Graph, months: &[&MonthRecord], ctx: &mut ForwardCtx) -> Result<Var> {
        let seqs: Vec<Vec<Action>> = months.iter().map(|m| m.events().copied().collect()).collect();
        if let Some(i) = seqs.iter().position(|s| s.is_empty()) {
            return Err(Error::Validation(format!(
                "month {}/{} has no events",
                months[i].participant_id, months[i].month_index
            )));
        }
        let batch = EventBatch::from_sequences(
            seqs.iter()
                .zip(months)
                .map(|(s, m)| (truncate_recent(s, self.cfg.encoder.max_steps), m.window_start)),
        );
        self.bank.check_codes(&batch.codes)?;
        let x = self.bank.forward(g, &batch);
        let h = self.encoder.forward(g, x, &batch.time.segs, ctx);
        let z = self.mlp1.forward(g, h);
        let z = g.relu(z);
        let z = ctx.dropout(g, z, self.cfg.dropout);
        Ok(self.mlp2.forward(g, z))
    }

    pub fn predict(&self, month: &MonthRecord) -> Result<f64> {
        Ok(self.predict_gamma(&[month])?[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Container::from_store("single_level", self.cfg.to_kv(), &self.store, "").save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        c.expect_kind("single_level")?;
        let vocab_size = c
            .echo
            .get("vocab_size")?
            .ok_or_else(|| Error::Checkpoint("missing vocab_size".into()))?;
        let cfg = SingleLevelConfig::from_kv(&c.echo, vocab_size)?;
        let mut model = Self::new(&cfg, ActionEmbedding {
            matrix: Tensor::zeros((vocab_size, cfg.embedding.d_a)),
        })?;
        c.load_into(&mut model.store, "")?;
        Ok(model)
    }
}

impl MonthModel for SingleLevelModel {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_loss(&self, g: &mut Graph, months: &[&MonthRecord], labels: &[bool], _lambda: f64, ctx: &mut ForwardCtx) -> Result<Var> {
        let logits = self.forward_batch(g, months, ctx)?;
        let targets: Vec<usize> = labels.iter().map(|&y| usize::from(y)).collect();
        let w = vec![1.0 / labels.len() as f64; labels.len()];
        Ok(g.softmax_cross_entropy(logits, &targets, &w))
    }

    fn predict_gamma(&self, months: &[&MonthRecord]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let logits = self.forward_batch(&mut g, months, &mut ForwardCtx::eval())?;
        let p = softmax_rows(g.value(logits));
        Ok((0..months.len()).map(|i| p[[i, 1]]).collect())
    }
}
