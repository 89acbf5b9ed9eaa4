//! Participant-grouped repeated cross-validation and the model recipes it
//! trains.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::{FeatureConfig, FeatureExtractor, LogisticRegression};
use super::metrics::{compute_metrics, mean_std, Metrics};
use crate::config::KvConfig;
use crate::embed::ActionEmbedding;
use crate::encoders::Arch;
use crate::error::{Error, Result};
use crate::hipal::{
    apply_tail_drop, train_supervised, HiPALModel, ModelConfig, MonthModel, SingleLevelConfig, SingleLevelModel,
    TrainConfig,
};
use crate::logstore::{Dataset, MonthRecord, Vocabulary};
use crate::seqae::{pretrain_unsupervised, transfer_weights, SeqAEConfig, SeqAEModel};

#[derive(Clone, Debug, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub rounds: usize,
    /// Share of each fold's training participants held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            rounds: 6,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 || self.rounds == 0 {
            return Err(Error::Config("cross-validation needs at least two folds and one round".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("validation fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut c = Self::default();
        kv.read_into("folds", &mut c.folds)?;
        kv.read_into("rounds", &mut c.rounds)?;
        kv.read_into("val_fraction", &mut c.val_fraction)?;
        kv.read_into("seed", &mut c.seed)?;
        c.validate()?;
        Ok(c)
    }
}

/// Participant ids on each side of one fold of one round.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub round: usize,
    pub fold: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Participants with at least one labeled month, split by participant.
pub fn grouped_cv_split(ds: &Dataset, cfg: &CvConfig) -> Result<Vec<Split>> {
    cfg.validate()?;
    let ids: Vec<String> = ds
        .labeled()
        .map(|m| m.participant_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if ids.len() < cfg.folds {
        return Err(Error::Validation(format!(
            "{} labeled participants cannot fill {} folds",
            ids.len(),
            cfg.folds
        )));
    }
    let mut splits = Vec::with_capacity(cfg.folds * cfg.rounds);
    for round in 0..cfg.rounds {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(round as u64 + 1);
        let mut order = ids.clone();
        order.shuffle(&mut rng);
        for fold in 0..cfg.folds {
            let mut test = Vec::new();
            let mut rest = Vec::new();
            for (i, p) in order.iter().enumerate() {
                if i % cfg.folds == fold {
                    test.push(p.clone());
                } else {
                    rest.push(p.clone());
                }
            }
            let mut n_val = (cfg.val_fraction * rest.len() as f64).round() as usize;
            if cfg.val_fraction > 0.0 && rest.len() >= 2 {
                n_val = n_val.clamp(1, rest.len() - 1);
            }
            let train = rest.split_off(n_val);
            let sorted = |mut v: Vec<String>| {
                v.sort();
                v
            };
            splits.push(Split {
                round,
                fold,
                train: sorted(train),
                val: sorted(rest),
                test: sorted(test),
            });
        }
    }
    Ok(splits)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recipe {
    Hipal(Arch),
    SemiHipal(Arch),
    SingleLevel(Arch),
    BaselineFeatures,
}

fn arch_letter(a: Arch) -> char {
    match a {
        Arch::Fcn => 'f',
        Arch::CausalNet => 'c',
        Arch::ResTcn => 'r',
    }
}

fn parse_arch(s: &str) -> Option<Arch> {
    match s {
        "f" => Some(Arch::Fcn),
        "c" => Some(Arch::CausalNet),
        "r" => Some(Arch::ResTcn),
        other => other.parse().ok(),
    }
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown recipe {s}"));
        if s == "baseline-features" {
            return Ok(Self::BaselineFeatures);
        }
        let (kind, arch) = s.rsplit_once('-').ok_or_else(bad)?;
        let arch = parse_arch(arch).ok_or_else(bad)?;
        match kind {
            "hipal" => Ok(Self::Hipal(arch)),
            "semi-hipal" => Ok(Self::SemiHipal(arch)),
            "single-level" => Ok(Self::SingleLevel(arch)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Hipal(a) => write!(f, "hipal-{}", arch_letter(*a)),
            Self::SemiHipal(a) => write!(f, "semi-hipal-{}", arch_letter(*a)),
            Self::SingleLevel(a) => write!(f, "single-level-{}", arch_letter(*a)),
            Self::BaselineFeatures => f.write_str("baseline-features"),
        }
    }
}

/// Everything a recipe needs besides the data.
#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Keys applied over the hierarchical model defaults (`emb.*`, `enc.*`,
    /// `lstm_hidden`, ...); the recipe sets `enc.arch`.
    pub model: KvConfig,
    /// Keys applied over the single-level defaults.
    pub single: KvConfig,
    pub train: TrainConfig,
    pub ae_epochs: usize,
    pub ae_batch_size: usize,
    /// Pretrained action embedding; a seeded random matrix otherwise.
    pub actions: Option<ActionEmbedding>,
    pub vocabulary: Option<Vocabulary>,
    pub features: FeatureConfig,
    pub logreg_l2: f64,
    pub logreg_iterations: usize,
    pub logreg_lr: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: KvConfig::new(),
            single: KvConfig::new(),
            train: TrainConfig::default(),
            ae_epochs: 5,
            ae_batch_size: 16,
            actions: None,
            vocabulary: None,
            features: FeatureConfig::default(),
            logreg_l2: 1e-2,
            logreg_iterations: 500,
            logreg_lr: 0.5,
        }
    }
}

impl RunConfig {
    pub fn hipal_config(&self, vocab_size: usize, arch: Arch, seed: u64) -> Result<ModelConfig> {
        let mut kv = self.model.clone();
        kv.set("enc.arch", arch.to_string());
        kv.set("seed", seed.to_string());
        ModelConfig::from_kv(&kv, vocab_size)
    }

    pub fn single_config(&self, vocab_size: usize, arch: Arch, seed: u64) -> Result<SingleLevelConfig> {
        let mut kv = self.single.clone();
        kv.set("enc.arch", arch.to_string());
        kv.set("seed", seed.to_string());
        SingleLevelConfig::from_kv(&kv, vocab_size)
    }

    pub fn actions_for(&self, vocab_size: usize, d_a: usize, seed: u64) -> Result<ActionEmbedding> {
        match &self.actions {
            Some(a) if a.vocab_size() == vocab_size && a.dim() == d_a => Ok(a.clone()),
            Some(_) => Err(Error::Config("pretrained action embedding does not match the model".into())),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a0a0);
                Ok(ActionEmbedding::random(vocab_size, d_a, &mut rng))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub round: usize,
    pub fold: usize,
    pub metrics: Metrics,
    pub epoch_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub recipe: String,
    pub folds: Vec<FoldResult>,
}

/// Mean and standard deviation of one metric over the folds that define it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

fn summarize(xs: Vec<f64>) -> Option<Summary> {
    let mut xs = xs;
    xs.sort_by(f64::total_cmp);
    (!xs.is_empty()).then(|| {
        let (mean, std) = mean_std(&xs);
        Summary { mean, std, n: xs.len() }
    })
}

impl MetricsReport {
    pub fn auroc(&self) -> Option<Summary> {
        summarize(self.folds.iter().filter_map(|f| f.metrics.auroc).collect())
    }

    pub fn auprc(&self) -> Option<Summary> {
        summarize(self.folds.iter().filter_map(|f| f.metrics.auprc).collect())
    }

    pub fn accuracy(&self) -> Option<Summary> {
        summarize(self.folds.iter().map(|f| f.metrics.accuracy).collect())
    }

    pub fn epoch_seconds(&self) -> Option<Summary> {
        summarize(self.folds.iter().filter_map(|f| f.epoch_seconds).collect())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["recipe", "round", "fold", "auroc", "auprc", "accuracy", "epoch_seconds"])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for f in &self.folds {
            out.write_record([
                self.recipe.clone(),
                f.round.to_string(),
                f.fold.to_string(),
                opt(f.metrics.auroc),
                opt(f.metrics.auprc),
                format!("{:.6}", f.metrics.accuracy),
                opt(f.epoch_seconds),
            ])?;
        }
        let stats = [self.auroc(), self.auprc(), self.accuracy(), self.epoch_seconds()];
        for (label, pick) in [("mean", 0), ("std", 1)] {
            let mut row = vec![self.recipe.clone(), label.to_string(), String::new()];
            row.extend(stats.iter().map(|s| opt(s.map(|s| if pick == 0 { s.mean } else { s.std }))));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn months_of<'a>(ds: &'a Dataset, ids: &[String], labeled_only: bool) -> Vec<&'a MonthRecord> {
    let set: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    ds.months
        .iter()
        .filter(|m| set.contains(m.participant_id.as_str()) && (!labeled_only || m.label.is_some()))
        .collect()
}

/// Deterministic probabilities for many months, in bounded batches.
pub fn predict_all<M: MonthModel>(model: &M, months: &[&MonthRecord]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(months.len());
    for chunk in months.chunks(16) {
        out.extend(model.predict_gamma(chunk)?);
    }
    Ok(out)
}

fn split_seed(base: u64, round: usize, fold: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add((round * 1000 + fold) as u64)
}

/// A trained per-split model, ready for evaluation.
pub enum Trained {
    Hipal(Box<HiPALModel>),
    Single(Box<SingleLevelModel>),
    Features(FeatureExtractor, LogisticRegression),
}

impl Trained {
    pub fn predict(&self, months: &[&MonthRecord]) -> Result<Vec<f64>> {
        match self {
            Self::Hipal(m) => predict_all(m.as_ref(), months),
            Self::Single(m) => predict_all(m.as_ref(), months),
            Self::Features(fx, lr) => months.iter().map(|m| Ok(lr.predict(&fx.extract(m)?))).collect(),
        }
    }
}

/// Trains one recipe on one split. Returns the model and the mean epoch
/// time when timing is recorded.
pub fn train_recipe(ds: &Dataset, recipe: Recipe, split: &Split, run: &RunConfig, seed: u64) -> Result<(Trained, Option<f64>)> {
    let train = months_of(ds, &split.train, true);
    let val = months_of(ds, &split.val, true);
    if train.is_empty() {
        return Err(Error::NoLabels("split has no labeled training months".into()));
    }
    let tc = TrainConfig {
        seed,
        ..run.train.clone()
    };
    match recipe {
        Recipe::Hipal(arch) | Recipe::SemiHipal(arch) => {
            let cfg = run.hipal_config(ds.vocab_size, arch, seed)?;
            let actions = run.actions_for(ds.vocab_size, cfg.embedding.d_a, seed)?;
            let mut model = HiPALModel::new(&cfg, actions.clone())?;
            if matches!(recipe, Recipe::SemiHipal(_)) {
                let mut pool = split.train.clone();
                pool.extend(split.val.iter().cloned());
                let shifts: Vec<_> = months_of(ds, &pool, false).into_iter().flat_map(|m| m.shifts.iter()).collect();
                let mut ae_cfg = SeqAEConfig::new(ds.vocab_size, cfg.embedding.clone(), cfg.encoder.clone());
                ae_cfg.epochs = run.ae_epochs;
                ae_cfg.batch_size = run.ae_batch_size;
                ae_cfg.learning_rate = run.train.learning_rate;
                ae_cfg.seed = seed;
                let mut ae = SeqAEModel::for_corpus(&ae_cfg, actions, &shifts)?;
                let events: Vec<_> = shifts.iter().map(|s| s.events()).collect();
                pretrain_unsupervised(&mut ae, &events)?;
                transfer_weights(&ae, &mut model)?;
            }
            let h = train_supervised(&mut model, &train, &val, &tc)?;
            Ok((Trained::Hipal(Box::new(model)), h.mean_epoch_seconds()))
        }
        Recipe::SingleLevel(arch) => {
            let cfg = run.single_config(ds.vocab_size, arch, seed)?;
            let actions = run.actions_for(ds.vocab_size, cfg.embedding.d_a, seed)?;
            let mut model = SingleLevelModel::new(&cfg, actions)?;
            let h = train_supervised(&mut model, &train, &val, &tc)?;
            Ok((Trained::Single(Box::new(model)), h.mean_epoch_seconds()))
        }
        Recipe::BaselineFeatures => {
            let vocab = run
                .vocabulary
                .clone()
                .unwrap_or_else(|| Vocabulary::anonymous(ds.vocab_size));
            let fx = FeatureExtractor::new(&vocab, run.features.clone())?;
            let mut rows: Vec<&MonthRecord> = train;
            rows.extend(val);
            let x = rows.iter().map(|m| fx.extract(m)).collect::<Result<Vec<_>>>()?;
            let y: Vec<bool> = rows.iter().map(|m| m.label.unwrap_or(false)).collect();
            let lr = LogisticRegression::fit(&x, &y, run.logreg_l2, run.logreg_iterations, run.logreg_lr)?;
            Ok((Trained::Features(fx, lr), None))
        }
    }
}

/// Trains and evaluates `recipe` on every split.
pub fn run_cv(ds: &Dataset, recipe: Recipe, cv: &CvConfig, run: &RunConfig) -> Result<MetricsReport> {
    let splits = grouped_cv_split(ds, cv)?;
    run_splits(ds, recipe, &splits, cv.seed, run)
}

pub fn run_splits(ds: &Dataset, recipe: Recipe, splits: &[Split], seed: u64, run: &RunConfig) -> Result<MetricsReport> {
    let mut folds = Vec::with_capacity(splits.len());
    for split in splits {
        let s = split_seed(seed, split.round, split.fold);
        let (model, epoch_seconds) = train_recipe(ds, recipe, split, run, s)?;
        let test = months_of(ds, &split.test, true);
        let labels: Vec<bool> = test.iter().filter_map(|m| m.label).collect();
        let scores = model.predict(&test)?;
        folds.push(FoldResult {
            round: split.round,
            fold: split.fold,
            metrics: compute_metrics(&labels, &scores, 0.5),
            epoch_seconds,
        });
    }
    Ok(MetricsReport {
        recipe: recipe.to_string(),
        folds,
    })
}

/// Test months with their final `offset` days removed.
pub fn offset_months(months: &[&MonthRecord], offset: u32) -> Vec<MonthRecord> {
    months.iter().map(|m| apply_tail_drop(m, offset)).collect()
}

/// AUROC of `predict` on the labeled `months` at every offset.
pub fn offset_evaluation<F>(months: &[&MonthRecord], offsets: &[u32], mut predict: F) -> Result<Vec<(u32, Option<f64>)>>
where
    F: FnMut(&[&MonthRecord]) -> Result<Vec<f64>>,
{
    let labeled: Vec<&MonthRecord> = months.iter().copied().filter(|m| m.label.is_some()).collect();
    let labels: Vec<bool> = labeled.iter().filter_map(|m| m.label).collect();
    offsets
        .iter()
        .map(|&o| {
            let cut = offset_months(&labeled, o);
            let refs: Vec<&MonthRecord> = cut.iter().collect();
            let scores = predict(&refs)?;
            Ok((o, super::metrics::auroc(&labels, &scores)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipe_names_round_trip() {
        for s in ["hipal-c", "semi-hipal-f", "single-level-r", "baseline-features"] {
            assert_eq!(s.parse::<Recipe>().unwrap().to_string(), s);
        }
        assert_eq!("hipal-restcn".parse::<Recipe>().unwrap(), Recipe::Hipal(Arch::ResTcn));
        assert!("hipal-x".parse::<Recipe>().is_err());
        assert!("deep-c".parse::<Recipe>().is_err());
    }
}
