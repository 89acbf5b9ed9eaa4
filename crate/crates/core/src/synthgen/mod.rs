//! Synthetic activity logs with a planted workload → burnout link.
//!
//! Each participant·month has a latent workload intensity `w`. Higher `w`
//! means more shifts, longer shifts, shorter gaps between actions and a
//! category mix tilted toward documentation work. Labels are drawn from
//! `sigmoid(a·z(w) + b)` where `z` standardizes `w` over the dataset.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::Serialize;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::harness::metrics::auroc;
use crate::logstore::{
    write_dataset_jsonl, write_events_csv, write_surveys_csv, Action, ActionEvent, Dataset,
    MonthRecord, Shift, SurveyWindow, Vocabulary, VocabularyEntry, PFI_BURNOUT_THRESHOLD,
};

const DAY: i64 = 86_400;
const HOUR: i64 = 3_600;
/// Monday 2020-01-06 00:00 UTC.
const EPOCH_BASE: i64 = 1_578_268_800;
const ROTATION_DAYS: i64 = 28;
const MAX_INTERVAL: f64 = 2.0 * HOUR as f64;

pub const CATEGORY_NAMES: [&str; 8] = [
    "note_review",
    "note_writing",
    "orders",
    "inbox",
    "chart_review",
    "results",
    "scheduling",
    "other",
];

/// How strongly each category's share grows with workload.
const CATEGORY_TILT: [f64; 8] = [0.6, 1.0, 0.4, 0.8, -0.2, -0.4, -0.8, 0.0];

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub n_participants: usize,
    pub months_per_participant: usize,
    pub vocab_size: usize,
    pub n_categories: usize,
    pub mean_shifts_per_month: f64,
    pub max_shifts_per_month: usize,
    pub mean_events_per_shift: f64,
    pub max_events_per_shift: usize,
    /// Location of the log-interval distribution at `w = 1`.
    pub interval_log_mean: f64,
    pub interval_log_sd: f64,
    /// Between-participant spread of `ln w`.
    pub workload_participant_sd: f64,
    /// Within-participant month-to-month spread of `ln w`.
    pub workload_month_sd: f64,
    pub signal_strength: f64,
    pub label_bias: f64,
    pub unlabeled_fraction: f64,
    /// Alternate light and heavy shifts at equal expected monthly totals.
    pub intermittent: bool,
    /// Upper bound of extra next-rotation days appended to each month.
    pub tail_jitter_days: u32,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_participants: 40,
            months_per_participant: 6,
            vocab_size: 1961,
            n_categories: 8,
            mean_shifts_per_month: 16.0,
            max_shifts_per_month: 28,
            mean_events_per_shift: 40.0,
            max_events_per_shift: 3000,
            interval_log_mean: 45f64.ln(),
            interval_log_sd: 1.0,
            workload_participant_sd: 0.35,
            workload_month_sd: 0.35,
            signal_strength: 2.0,
            label_bias: 0.0,
            unlabeled_fraction: 0.48,
            intermittent: false,
            tail_jitter_days: 0,
            seed: 7,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_participants", self.n_participants),
            ("months_per_participant", self.months_per_participant),
            ("vocab_size", self.vocab_size),
            ("n_categories", self.n_categories),
            ("max_shifts_per_month", self.max_shifts_per_month),
            ("max_events_per_shift", self.max_events_per_shift),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_categories > self.vocab_size {
            return Err(Error::Config("more categories than actions".into()));
        }
        if self.max_shifts_per_month > ROTATION_DAYS as usize {
            return Err(Error::Config(format!(
                "max_shifts_per_month must be at most {ROTATION_DAYS} (one shift per day)"
            )));
        }
        if !(self.mean_shifts_per_month > 0.0 && self.mean_events_per_shift > 0.0) {
            return Err(Error::Config("mean counts must be positive".into()));
        }
        if !(self.interval_log_sd >= 0.0
            && self.workload_participant_sd >= 0.0
            && self.workload_month_sd >= 0.0)
        {
            return Err(Error::Config("spreads must be non-negative".into()));
        }
        if self.signal_strength < 0.0 {
            return Err(Error::Config("signal_strength must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.unlabeled_fraction) {
            return Err(Error::Config("unlabeled_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut c = Self::default();
        kv.read_into("n_participants", &mut c.n_participants)?;
        kv.read_into("months_per_participant", &mut c.months_per_participant)?;
        kv.read_into("vocab_size", &mut c.vocab_size)?;
        kv.read_into("n_categories", &mut c.n_categories)?;
        kv.read_into("mean_shifts_per_month", &mut c.mean_shifts_per_month)?;
        kv.read_into("max_shifts_per_month", &mut c.max_shifts_per_month)?;
        kv.read_into("mean_events_per_shift", &mut c.mean_events_per_shift)?;
        kv.read_into("max_events_per_shift", &mut c.max_events_per_shift)?;
        kv.read_into("interval_log_mean", &mut c.interval_log_mean)?;
        kv.read_into("interval_log_sd", &mut c.interval_log_sd)?;
        kv.read_into("workload_participant_sd", &mut c.workload_participant_sd)?;
        kv.read_into("workload_month_sd", &mut c.workload_month_sd)?;
        kv.read_into("signal_strength", &mut c.signal_strength)?;
        kv.read_into("label_bias", &mut c.label_bias)?;
        kv.read_into("unlabeled_fraction", &mut c.unlabeled_fraction)?;
        kv.read_into("intermittent", &mut c.intermittent)?;
        kv.read_into("tail_jitter_days", &mut c.tail_jitter_days)?;
        kv.read_into("seed", &mut c.seed)?;
        c.validate()?;
        Ok(c)
    }

    fn rotation_stride(&self) -> i64 {
        (ROTATION_DAYS + self.tail_jitter_days as i64) * DAY
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatentMonth {
    pub participant_id: String,
    pub month_index: u32,
    pub w: f64,
    pub z: f64,
    pub p_burnout: f64,
    /// Realized label, kept even when withheld from the dataset.
    pub label: bool,
    pub label_withheld: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatentTruth {
    pub months: Vec<LatentMonth>,
}

impl LatentTruth {
    pub fn get(&self, participant_id: &str, month_index: u32) -> Option<&LatentMonth> {
        self.months
            .iter()
            .find(|m| m.participant_id == participant_id && m.month_index == month_index)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["participant_id", "month_index", "w", "p_burnout", "label_withheld"])?;
        for m in &self.months {
            w.write_record([
                m.participant_id.clone(),
                m.month_index.to_string(),
                format!("{:.9}", m.w),
                format!("{:.9}", m.p_burnout),
                m.label_withheld.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn participant_id(p: usize) -> String {
    format!("P{p:03}")
}

/// Category of each action code: contiguous, near-equal blocks.
pub fn category_of(code: usize, vocab_size: usize, n_categories: usize) -> usize {
    code * n_categories / vocab_size
}

pub fn category_name(k: usize, n_categories: usize) -> String {
    if n_categories == CATEGORY_NAMES.len() {
        CATEGORY_NAMES[k].to_owned()
    } else {
        format!("category_{k}")
    }
}

pub fn vocabulary(cfg: &GeneratorConfig) -> Vocabulary {
    let entries = (0..cfg.vocab_size)
        .map(|c| {
            let k = category_of(c, cfg.vocab_size, cfg.n_categories);
            let name = category_name(k, cfg.n_categories);
            VocabularyEntry {
                action_code: c as u32,
                action_name: format!("{name}_{c}"),
                category: name,
            }
        })
        .collect();
    Vocabulary::new(entries).expect("dense by construction")
}

/// Per-participant generator sharing read-only configuration.
struct Sampler<'a> {
    cfg: &'a GeneratorConfig,
    blocks: Vec<std::ops::Range<usize>>,
}

impl<'a> Sampler<'a> {
    fn new(cfg: &'a GeneratorConfig) -> Self {
        let (v, n) = (cfg.vocab_size, cfg.n_categories);
        let blocks = (0..n).map(|k| (k * v).div_ceil(n)..((k + 1) * v).div_ceil(n)).collect();
        Self { cfg, blocks }
    }

    fn tilt(&self, k: usize) -> f64 {
        CATEGORY_TILT[k % CATEGORY_TILT.len()]
    }

    /// Events of one shift starting at `start`, never running past
    /// `latest_end`.
    fn shift<R: Rng>(&self, rng: &mut R, w: f64, rate: f64, start: i64, latest_end: i64) -> Shift {
        let cfg = self.cfg;
        let lw = w.ln();
        let lambda = (cfg.mean_events_per_shift * w * rate).max(1e-3);
        let n = (Poisson::new(lambda).expect("positive rate").sample(rng) as usize)
            .clamp(1, cfg.max_events_per_shift);
        let prefs: Vec<f64> = (0..cfg.n_categories).map(|k| (self.tilt(k) * lw).exp()).collect();
        let total: f64 = prefs.iter().sum();
        let dwell = 0.1 + 0.6 * sigmoid(2.0 * lw);
        let interval = LogNormal::new(cfg.interval_log_mean - lw, cfg.interval_log_sd)
            .expect("finite lognormal");
        let draw_category = |rng: &mut R| {
            let mut u = rng.random::<f64>() * total;
            for (k, p) in prefs.iter().enumerate() {
                if u < *p {
                    return k;
                }
                u -= p;
            }
            cfg.n_categories - 1
        };
        let mut cat = draw_category(rng);
        let mut t = start;
        let mut events = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                let dt = interval.sample(rng).min(MAX_INTERVAL).round() as i64;
                if t + dt > latest_end {
                    break;
                }
                t += dt;
                if rng.random::<f64>() >= dwell {
                    cat = draw_category(rng);
                }
            }
            let block = self.blocks[cat].clone();
            events.push(Action {
                timestamp: t,
                code: rng.random_range(block) as u32,
            });
        }
        Shift::new(events).expect("non-empty and sorted by construction")
    }

    /// Shifts on the given day offsets of a window starting at `origin`.
    fn shifts_on_days<R: Rng>(&self, rng: &mut R, w: f64, origin: i64, days: &[i64]) -> Vec<Shift> {
        days.iter()
            .enumerate()
            .map(|(k, &d)| {
                let rate = if self.cfg.intermittent {
                    if k % 2 == 0 {
                        1.6
                    } else {
                        0.4
                    }
                } else {
                    1.0
                };
                let day0 = origin + d * DAY;
                let start = if rng.random::<f64>() < 0.15 {
                    day0 + 17 * HOUR + rng.random_range(0..3 * HOUR)
                } else {
                    day0 + 7 * HOUR + rng.random_range(0..4 * HOUR)
                };
                self.shift(rng, w, rate, start, day0 + 23 * HOUR)
            })
            .collect()
    }

    fn month_shift_days<R: Rng>(&self, rng: &mut R, w: f64) -> Vec<i64> {
        let cfg = self.cfg;
        let lambda = cfg.mean_shifts_per_month * w.powf(0.3);
        let s = (Poisson::new(lambda).expect("positive rate").sample(rng) as usize)
            .clamp(1, cfg.max_shifts_per_month);
        let mut days: Vec<i64> = sample(rng, ROTATION_DAYS as usize, s)
            .into_iter()
            .map(|d| d as i64)
            .collect();
        days.sort_unstable();
        days
    }
}

fn participant_rng(seed: u64, p: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(p as u64 + 1);
    rng
}

/// Generates a dataset and its latent ground truth. Deterministic in
/// `cfg.seed`; each participant draws from an independent substream.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<(Dataset, LatentTruth)> {
    cfg.validate()?;
    let months_n = cfg.months_per_participant;
    let mut rngs: Vec<ChaCha8Rng> = (0..cfg.n_participants).map(|p| participant_rng(cfg.seed, p)).collect();

    // Workload: participant baseline plus month deviation, on the log scale.
    // One extra draw per participant feeds the tail after the last month.
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut lw: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_participants);
    for rng in rngs.iter_mut() {
        let base = cfg.workload_participant_sd * std_normal.sample(rng);
        lw.push(
            (0..=months_n)
                .map(|_| base + cfg.workload_month_sd * std_normal.sample(rng))
                .collect(),
        );
    }
    let all: Vec<f64> = lw.iter().flat_map(|v| v[..months_n].iter().map(|x| x.exp())).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let sd = (all.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
    let z_of = |w: f64| if sd > 0.0 { (w - mean) / sd } else { 0.0 };

    let sampler = Sampler::new(cfg);
    let mut months = Vec::with_capacity(cfg.n_participants * months_n);
    let mut truth = LatentTruth::default();
    for (p, rng) in rngs.iter_mut().enumerate() {
        let pid = participant_id(p);
        for m in 0..months_n {
            let w = lw[p][m].exp();
            let z = z_of(w);
            let p_burnout = sigmoid(cfg.signal_strength * z + cfg.label_bias);
            let label = rng.random::<f64>() < p_burnout;
            let withheld = rng.random::<f64>() < cfg.unlabeled_fraction;

            let origin = EPOCH_BASE + m as i64 * cfg.rotation_stride();
            let days = sampler.month_shift_days(rng, w);
            let mut shifts = sampler.shifts_on_days(rng, w, origin, &days);
            let extra = if cfg.tail_jitter_days > 0 {
                rng.random_range(0..=cfg.tail_jitter_days) as i64
            } else {
                0
            };
            let w_next = lw[p][m + 1].exp();
            let daily_p = (cfg.mean_shifts_per_month / ROTATION_DAYS as f64).min(1.0);
            let tail_days: Vec<i64> = (0..extra)
                .filter(|_| rng.random::<f64>() < daily_p)
                .map(|d| ROTATION_DAYS + d)
                .collect();
            shifts.extend(sampler.shifts_on_days(rng, w_next, origin, &tail_days));

            let pfi = if label {
                rng.random_range((PFI_BURNOUT_THRESHOLD * 100.0).round() as u32..=400)
            } else {
                rng.random_range(0..(PFI_BURNOUT_THRESHOLD * 100.0).round() as u32)
            } as f64
                / 100.0;
            months.push(MonthRecord {
                participant_id: pid.clone(),
                month_index: m as u32,
                window_start: origin,
                window_end: origin + (ROTATION_DAYS + extra) * DAY,
                shifts,
                label: (!withheld).then_some(label),
                pfi_score: (!withheld).then_some(pfi),
            });
            truth.months.push(LatentMonth {
                participant_id: pid.clone(),
                month_index: m as u32,
                w,
                z,
                p_burnout,
                label,
                label_withheld: withheld,
            });
        }
    }
    Ok((Dataset::new(cfg.vocab_size, months)?, truth))
}

/// AUROC of the latent workload against the realized labels of every month
/// present in `ds`, withheld or not.
pub fn oracle_auroc(ds: &Dataset, truth: &LatentTruth) -> Result<Option<f64>> {
    let mut labels = Vec::with_capacity(ds.months.len());
    let mut scores = Vec::with_capacity(ds.months.len());
    for m in &ds.months {
        let t = truth.get(&m.participant_id, m.month_index).ok_or_else(|| {
            Error::NotFound(format!(
                "no latent truth for {}/{}",
                m.participant_id, m.month_index
            ))
        })?;
        labels.push(t.label);
        scores.push(t.w);
    }
    Ok(auroc(&labels, &scores))
}

/// Flattens a dataset back into raw event rows and survey windows.
pub fn to_raw(ds: &Dataset) -> (Vec<ActionEvent>, Vec<SurveyWindow>) {
    let mut events = Vec::new();
    let mut surveys = Vec::new();
    for m in &ds.months {
        events.extend(m.events().map(|a| ActionEvent {
            participant_id: m.participant_id.clone(),
            timestamp: a.timestamp,
            action_code: a.code,
        }));
        surveys.push(SurveyWindow {
            participant_id: m.participant_id.clone(),
            month_index: m.month_index,
            month_start: m.window_start,
            month_end: m.window_end,
            pfi_score: m.pfi_score,
        });
    }
    (events, surveys)
}

/// Writes `events.csv`, `surveys.csv`, `vocab.csv`, `latent_truth.csv` and
/// `dataset.jsonl` into `dir`.
pub fn write_outputs(dir: &Path, cfg: &GeneratorConfig, ds: &Dataset, truth: &LatentTruth) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let create = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
    let (events, surveys) = to_raw(ds);
    write_events_csv(create("events.csv")?, &events)?;
    write_surveys_csv(create("surveys.csv")?, &surveys)?;
    vocabulary(cfg).write_csv(create("vocab.csv")?)?;
    truth.write_csv(create("latent_truth.csv")?)?;
    write_dataset_jsonl(create("dataset.jsonl")?, ds)?;
    Ok(())
}
