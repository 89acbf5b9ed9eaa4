#![allow(dead_code)]

use chrono::{DateTime, Timelike};
use hipal::config::KvConfig;
use hipal::logstore::{Action, MonthRecord, Shift};
use hipal::synthgen::{category_name, category_of, GeneratorConfig};

/// Model sizes small enough for cross-validation on one CPU core.
pub fn desk_model_kv() -> KvConfig {
    KvConfig::parse("emb.d_a = 32\nemb.d_t = 8\nenc.filters = 32\nenc.out_dim = 32\nlstm_hidden = 32\nmlp_hidden = 32\n")
        .unwrap()
}

pub fn desk_single_kv() -> KvConfig {
    KvConfig::parse("emb.d_a = 32\nemb.d_t = 8\nenc.filters = 32\nenc.out_dim = 32\nmlp_hidden = 32\n").unwrap()
}

/// A handful of short months over a small vocabulary.
pub fn tiny_generator(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        n_participants: 4,
        months_per_participant: 2,
        vocab_size: 12,
        n_categories: 3,
        mean_shifts_per_month: 3.0,
        max_shifts_per_month: 4,
        mean_events_per_shift: 5.0,
        max_events_per_shift: 7,
        unlabeled_fraction: 0.0,
        seed,
        ..Default::default()
    }
}

pub fn month(pid: &str, index: u32, window_start: i64, shifts: &[&[(i64, u32)]], label: Option<bool>) -> MonthRecord {
    let shifts: Vec<Shift> = shifts
        .iter()
        .map(|s| Shift::new(s.iter().map(|&(t, c)| Action { timestamp: t, code: c }).collect()).unwrap())
        .collect();
    let end = shifts.last().map_or(window_start + 1, |s| s.end_time() + 1);
    MonthRecord {
        participant_id: pid.into(),
        month_index: index,
        window_start,
        window_end: end.max(window_start + 28 * 86_400),
        shifts,
        label,
        pfi_score: None,
    }
}

/// AUROC by counting every positive/negative pair, ties counted half.
pub fn auroc_pairs(labels: &[bool], scores: &[f64]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Baseline features recomputed from first principles for a synthetic
/// month, in extractor order.
pub fn features_by_hand(m: &MonthRecord, gen: &GeneratorConfig) -> Vec<f64> {
    let mut names: Vec<String> = (0..gen.n_categories).map(|k| category_name(k, gen.n_categories)).collect();
    names.sort();
    let slot = |code: u32| {
        let name = category_name(category_of(code as usize, gen.vocab_size, gen.n_categories), gen.n_categories);
        names.iter().position(|n| *n == name).unwrap()
    };
    let n_shifts = m.shifts.len() as f64;
    let n_events: usize = m.shifts.iter().map(|s| s.len()).sum();
    let span: i64 = m.shifts.iter().map(|s| s.end_time() - s.start_time()).sum();
    let mut after = 0i64;
    let mut count = vec![0usize; names.len()];
    let mut secs = vec![0i64; names.len()];
    let mut dts: Vec<f64> = Vec::new();
    for s in &m.shifts {
        let ev = s.events();
        for a in ev {
            count[slot(a.code)] += 1;
        }
        for i in 1..ev.len() {
            let dt = ev[i].timestamp - ev[i - 1].timestamp;
            secs[slot(ev[i - 1].code)] += dt;
            let hour = DateTime::from_timestamp(ev[i - 1].timestamp, 0).unwrap().hour();
            if !(8..18).contains(&hour) {
                after += dt;
            }
            dts.push(dt as f64);
        }
    }
    let per_shift = |x: f64| x / n_shifts;
    let mut f = vec![
        n_shifts,
        per_shift(n_events as f64),
        per_shift(span as f64 / 3600.0),
        per_shift(after as f64 / 3600.0),
    ];
    f.extend(count.iter().map(|&c| per_shift(c as f64)));
    f.extend(secs.iter().map(|&s| per_shift(s as f64 / 3600.0)));

    let n = dts.len() as f64;
    let mu = dts.iter().sum::<f64>() / n;
    let lo = dts.iter().cloned().fold(f64::MAX, f64::min);
    let hi = dts.iter().cloned().fold(f64::MIN, f64::max);
    let dev: Vec<f64> = dts.iter().map(|x| x - mu).collect();
    let var = dev.iter().map(|d| d * d).sum::<f64>() / n;
    let sd = var.sqrt();
    let skew = dev.iter().map(|d| (d / sd).powi(3)).sum::<f64>() / n;
    let kurt = dev.iter().map(|d| (d / sd).powi(4)).sum::<f64>() / n - 3.0;
    let width = (hi - lo) / 10.0;
    let mut hist = [0usize; 10];
    for x in &dts {
        let b = ((x - lo) / width).floor() as usize;
        hist[b.min(9)] += 1;
    }
    let entropy: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 / n)
        .map(|p| -p * p.ln())
        .sum();
    let energy: f64 = dts.iter().map(|x| x * x).sum();
    let lag1 = dev.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (var * n);
    let xbar = (n - 1.0) / 2.0;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in dts.iter().enumerate() {
        sxy += (i as f64 - xbar) * (y - mu);
        sxx += (i as f64 - xbar).powi(2);
    }
    f.extend([mu, lo, hi, skew, kurt, entropy, energy, lag1, sxy / sxx, 0.0]);
    f
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
