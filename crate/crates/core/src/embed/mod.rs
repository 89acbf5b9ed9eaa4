//! Time-dependent activity embedding: action vectors, log-interval and
//! periodicity features, and their combination into one vector per event.

mod skipgram;
mod time;

use std::path::Path;

use hipal_autograd::{init, Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

pub use skipgram::{pretrain_skipgram, SkipGramConfig, SkipGramResult};
pub use time::{
    embed_interval, embed_periodic, IntervalEmbedder, PeriodicEmbedder, ShiftTimeEmbedder,
    TimeFeatures, LOG_EPS,
};

use crate::checkpoint::Container;
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::logstore::{Action, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JoinMode {
    Concat,
    Add,
}

impl std::str::FromStr for JoinMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Self::Concat),
            "add" => Ok(Self::Add),
            other => Err(Error::Config(format!("unknown join mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for JoinMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Concat => "concat",
            Self::Add => "add",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingConfig {
    pub d_a: usize,
    pub d_t: usize,
    pub mode: JoinMode,
    /// Seconds per unit of the periodic embedders' internal time axis.
    pub time_unit: f64,
    /// Whether the action matrix is updated during supervised training.
    pub train_actions: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            d_a: 100,
            d_t: 50,
            mode: JoinMode::Concat,
            time_unit: 3600.0,
            train_actions: false,
        }
    }
}

impl EmbeddingConfig {
    pub fn joint_dim(&self) -> usize {
        match self.mode {
            JoinMode::Concat => self.d_a + 2 * self.d_t,
            JoinMode::Add => self.d_a,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_a == 0 || self.d_t == 0 {
            return Err(Error::Config("embedding sizes must be positive".into()));
        }
        if self.mode == JoinMode::Add && self.d_a != self.d_t {
            return Err(Error::Config("additive join needs d_a == d_t".into()));
        }
        if self.time_unit <= 0.0 {
            return Err(Error::Config("time_unit must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("d_a", self.d_a.to_string());
        kv.set("d_t", self.d_t.to_string());
        kv.set("mode", self.mode.to_string());
        kv.set("time_unit", self.time_unit.to_string());
        kv.set("train_actions", self.train_actions.to_string());
        kv
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut c = Self::default();
        kv.read_into("d_a", &mut c.d_a)?;
        kv.read_into("d_t", &mut c.d_t)?;
        kv.read_into("mode", &mut c.mode)?;
        kv.read_into("time_unit", &mut c.time_unit)?;
        kv.read_into("train_actions", &mut c.train_actions)?;
        c.validate()?;
        Ok(c)
    }
}

/// Action embedding matrix, one row per action code (`|A| × d_a`).
#[derive(Clone, Debug, PartialEq)]
pub struct ActionEmbedding {
    pub matrix: Tensor,
}

const ACTION_KIND: &str = "action_embedding";

impl ActionEmbedding {
    pub fn random<R: Rng>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            matrix: init::uniform(vocab_size, dim, 0.5 / dim as f64, rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn vector(&self, code: u32) -> Option<Vec<f64>> {
        ((code as usize) < self.vocab_size()).then(|| self.matrix.row(code as usize).to_vec())
    }

    pub fn cosine(&self, a: u32, b: u32) -> f64 {
        let (x, y) = (self.matrix.row(a as usize), self.matrix.row(b as usize));
        x.dot(&y) / (x.dot(&x).sqrt() * y.dot(&y).sqrt()).max(1e-300)
    }

    /// Saves with a header recording the shape and the vocabulary hash.
    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        let mut echo = KvConfig::new();
        echo.set("vocab_size", self.vocab_size().to_string());
        echo.set("dim", self.dim().to_string());
        echo.set("vocab_hash", vocab.hash());
        let mut c = Container::new(ACTION_KIND, echo);
        c.blobs.push(crate::checkpoint::Blob {
            name: "W_a".into(),
            trainable: true,
            value: self.matrix.clone(),
        });
        c.save(path)
    }

    /// Loads a saved matrix, rejecting it unless it was trained against a
    /// vocabulary with the same hash.
    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let c = Container::load(path)?;
        c.expect_kind(ACTION_KIND)?;
        let hash = c.echo.get_str("vocab_hash").unwrap_or("");
        if hash != vocab.hash() {
            return Err(Error::Checkpoint(
                "action embedding was trained on a different vocabulary".into(),
            ));
        }
        let blob = c
            .blob("W_a")
            .ok_or_else(|| Error::Checkpoint("missing W_a".into()))?;
        if blob.value.nrows() != vocab.len() {
            return Err(Error::Checkpoint("row count differs from vocabulary size".into()));
        }
        Ok(Self {
            matrix: blob.value.clone(),
        })
    }
}

/// Packed model inputs for a batch of event sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct EventBatch {
    pub codes: Vec<usize>,
    pub time: TimeFeatures,
}

impl EventBatch {
    /// Each sequence is paired with the origin of its periodic time axis.
    pub fn from_sequences<'a, I>(seqs: I) -> Self
    where
        I: IntoIterator<Item = (&'a [Action], i64)>,
    {
        let mut codes = Vec::new();
        let mut stamps: Vec<(Vec<i64>, i64)> = Vec::new();
        for (acts, origin) in seqs {
            codes.extend(acts.iter().map(|a| a.code as usize));
            stamps.push((acts.iter().map(|a| a.timestamp).collect(), origin));
        }
        let time = TimeFeatures::from_sequences(stamps.iter().map(|(t, o)| (t.as_slice(), *o)));
        Self { codes, time }
    }

    /// Shift batches: the periodic origin of each shift is its first event.
    pub fn from_shifts<'a, I>(shifts: I) -> Self
    where
        I: IntoIterator<Item = &'a [Action]>,
    {
        Self::from_sequences(shifts.into_iter().map(|s| (s, s.first().map_or(0, |a| a.timestamp))))
    }

    pub fn rows(&self) -> usize {
        self.codes.len()
    }
}

/// Action matrix plus the low-level interval and periodicity embedders.
#[derive(Clone, Debug)]
pub struct EmbeddingBank {
    pub cfg: EmbeddingConfig,
    pub vocab_size: usize,
    pub actions: ParamId,
    pub interval: IntervalEmbedder,
    pub periodic: PeriodicEmbedder,
}

impl EmbeddingBank {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EmbeddingConfig,
        actions: ActionEmbedding,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if actions.dim() != cfg.d_a {
            return Err(Error::Config(format!(
                "action embedding has dimension {}, configuration expects {}",
                actions.dim(),
                cfg.d_a
            )));
        }
        let vocab_size = actions.vocab_size();
        let name = format!("{prefix}.actions");
        let actions = if cfg.train_actions {
            store.add(name, actions.matrix)
        } else {
            store.add_buffer(name, actions.matrix)
        };
        Ok(Self {
            cfg: cfg.clone(),
            vocab_size,
            actions,
            interval: IntervalEmbedder::new(store, &format!("{prefix}.interval"), cfg.d_t, rng),
            periodic: PeriodicEmbedder::new(store, &format!("{prefix}.periodic"), cfg.d_t, cfg.time_unit, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.cfg.joint_dim()
    }

    pub fn check_codes(&self, codes: &[usize]) -> Result<()> {
        if let Some(c) = codes.iter().find(|&&c| c >= self.vocab_size) {
            return Err(Error::Validation(format!(
                "action code {c} outside the model vocabulary of size {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// One joint embedding row per event of the batch.
    pub fn forward(&self, g: &mut Graph, batch: &EventBatch) -> Var {
        let table = g.param(self.actions);
        let a = g.select_rows(table, &batch.codes);
        let b = self.interval.forward(g, &batch.time);
        let c = self.periodic.forward(g, &batch.time);
        match self.cfg.mode {
            JoinMode::Concat => g.concat_cols(&[a, b, c]),
            JoinMode::Add => {
                let ab = g.add(a, b);
                g.add(ab, c)
            }
        }
    }
}

/// Joint embedding of one event given the previous event's timestamp in the
/// same shift (`None` for the first) and the shift start.
pub fn joint_embed(
    store: &ParamStore,
    bank: &EmbeddingBank,
    event: Action,
    previous: Option<i64>,
    shift_start: i64,
) -> Result<Vec<f64>> {
    bank.check_codes(&[event.code as usize])?;
    let mut acts = Vec::with_capacity(2);
    if let Some(p) = previous {
        if p > event.timestamp {
            return Err(Error::Contract("previous event is later than the current one".into()));
        }
        acts.push(Action {
            timestamp: p,
            code: event.code,
        });
    }
    acts.push(event);
    let batch = EventBatch::from_sequences([(acts.as_slice(), shift_start)]);
    let mut g = Graph::new(store);
    let y = bank.forward(&mut g, &batch);
    Ok(g.value(y).row(acts.len() - 1).to_vec())
}
