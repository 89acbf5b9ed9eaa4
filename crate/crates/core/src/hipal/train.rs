use std::io::Write;
use std::time::Instant;

use hipal_autograd::{Adam, Graph, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{apply_tail_drop, sample_tail_drop};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::harness::metrics::auroc;
use crate::logstore::MonthRecord;
use crate::nn::ForwardCtx;

/// A month-level classifier that can be trained by [`train_supervised`].
pub trait MonthModel {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Batch-mean training loss as a graph scalar.
    fn batch_loss(&self, g: &mut Graph, months: &[&MonthRecord], labels: &[bool], lambda: f64, ctx: &mut ForwardCtx) -> Result<Var>;
    /// Deterministic burnout probabilities.
    fn predict_gamma(&self, months: &[&MonthRecord]) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the per-shift auxiliary loss.
    pub lambda: f64,
    pub l_max: u32,
    pub rho: f64,
    pub tail_drop: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Record per-epoch wall-clock seconds.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            l_max: 5,
            rho: 2.0,
            tail_drop: true,
            learning_rate: 1e-3,
            batch_size: 2,
            epochs: 50,
            clip_norm: 5.0,
            seed: 0,
            record_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.lambda < 0.0 || self.rho < 0.0 || self.learning_rate <= 0.0 || self.clip_norm <= 0.0 {
            return Err(Error::Config("lambda, rho, learning rate and clip norm out of range".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("lambda", self.lambda.to_string());
        kv.set("l_max", self.l_max.to_string());
        kv.set("rho", self.rho.to_string());
        kv.set("tail_drop", self.tail_drop.to_string());
        kv.set("lr", self.learning_rate.to_string());
        kv.set("batch_size", self.batch_size.to_string());
        kv.set("epochs", self.epochs.to_string());
        kv.set("clip_norm", self.clip_norm.to_string());
        kv.set("seed", self.seed.to_string());
        kv.set("record_timing", self.record_timing.to_string());
        kv
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut c = Self::default();
        kv.read_into("lambda", &mut c.lambda)?;
        kv.read_into("l_max", &mut c.l_max)?;
        kv.read_into("rho", &mut c.rho)?;
        kv.read_into("tail_drop", &mut c.tail_drop)?;
        kv.read_into("lr", &mut c.learning_rate)?;
        kv.read_into("batch_size", &mut c.batch_size)?;
        kv.read_into("epochs", &mut c.epochs)?;
        kv.read_into("clip_norm", &mut c.clip_norm)?;
        kv.read_into("seed", &mut c.seed)?;
        kv.read_into("record_timing", &mut c.record_timing)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_auroc: Option<f64>,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

impl History {
    /// Mean wall-clock seconds per epoch, excluding the first epoch when
    /// more than one was timed.
    pub fn mean_epoch_seconds(&self) -> Option<f64> {
        let secs: Vec<f64> = self.epochs.iter().filter_map(|e| e.seconds).collect();
        let timed = if secs.len() > 1 { &secs[1..] } else { &secs[..] };
        (!timed.is_empty()).then(|| timed.iter().sum::<f64>() / timed.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "val_loss", "val_auroc", "seconds"])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                format!("{:.6}", e.train_loss),
                opt(e.val_loss),
                opt(e.val_auroc),
                opt(e.seconds),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn labels_of(months: &[&MonthRecord]) -> Result<Vec<bool>> {
    months
        .iter()
        .map(|m| {
            m.label.ok_or_else(|| {
                Error::NoLabels(format!("month {}/{} has no label", m.participant_id, m.month_index))
            })
        })
        .collect()
}

/// Mean composite loss over `months` in evaluation mode.
pub fn evaluate_loss<M: MonthModel>(model: &M, months: &[&MonthRecord], lambda: f64, batch_size: usize) -> Result<f64> {
    let labels = labels_of(months)?;
    let mut total = 0.0;
    for (chunk, ys) in months.chunks(batch_size).zip(labels.chunks(batch_size)) {
        let mut g = Graph::new(model.store());
        let loss = model.batch_loss(&mut g, chunk, ys, lambda, &mut ForwardCtx::eval())?;
        total += g.scalar(loss) * chunk.len() as f64;
    }
    Ok(total / months.len() as f64)
}

fn snapshot(store: &ParamStore) -> Vec<Tensor> {
    store.iter().map(|(_, p)| p.value.clone()).collect()
}

fn restore(store: &mut ParamStore, values: Vec<Tensor>) {
    let ids: Vec<_> = store.ids().collect();
    for (id, v) in ids.into_iter().zip(values) {
        *store.value_mut(id) = v;
    }
}

/// Supervised training with Adam, global-norm clipping and, when enabled,
/// a fresh random tail drop per month per epoch. With a validation set
/// the parameters of the best epoch (by AUROC, else by loss) are kept.
pub fn train_supervised<M: MonthModel>(
    model: &mut M,
    train: &[&MonthRecord],
    val: &[&MonthRecord],
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::NoLabels("no labeled training months".into()));
    }
    labels_of(train)?;
    labels_of(val)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    for epoch in 0..cfg.epochs {
        let clock = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let months: Vec<MonthRecord> = chunk
                .iter()
                .map(|&i| {
                    let m = train[i];
                    if cfg.tail_drop {
                        apply_tail_drop(m, sample_tail_drop(cfg.l_max, cfg.rho, &mut rng))
                    } else {
                        m.clone()
                    }
                })
                .collect();
            let refs: Vec<&MonthRecord> = months.iter().collect();
            let labels = labels_of(&refs)?;
            let (mut grads, bn) = {
                let mut g = Graph::new(model.store());
                let mut ctx = ForwardCtx::train(&mut rng);
                let loss = model.batch_loss(&mut g, &refs, &labels, cfg.lambda, &mut ctx)?;
                total += g.scalar(loss) * refs.len() as f64;
                (g.backward(loss), ctx.bn_updates(&g))
            };
            grads.clip_global_norm(cfg.clip_norm);
            opt.step(model.store_mut(), &grads);
            bn.apply(model.store_mut());
        }
        let train_loss = total / train.len() as f64;
        let (val_loss, val_auroc) = if val.is_empty() {
            (None, None)
        } else {
            let labels = labels_of(val)?;
            let scores = model.predict_gamma(val)?;
            (
                Some(evaluate_loss(model, val, cfg.lambda, cfg.batch_size.max(8))?),
                auroc(&labels, &scores),
            )
        };
        let seconds = cfg.record_timing.then(|| clock.elapsed().as_secs_f64());
        if let Some(vl) = val_loss {
            let score = val_auroc.unwrap_or(-vl);
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, snapshot(model.store())));
                history.best_epoch = Some(epoch);
            }
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_auroc,
            seconds,
        });
    }
    match best {
        Some((_, values)) => restore(model.store_mut(), values),
        None => history.best_epoch = cfg.epochs.checked_sub(1),
    }
    Ok(history)
}
