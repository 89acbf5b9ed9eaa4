//! Hand-crafted monthly workload and interval-statistics features for the
//! feature-based baselines.

use std::io::Write;

use crate::error::{Error, Result};
use crate::logstore::{MonthRecord, Vocabulary};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    /// Local clock offset from UTC, seconds.
    pub tz_offset_seconds: i64,
    /// Working hours `[start, end)` in local clock hours.
    pub work_start_hour: u32,
    pub work_end_hour: u32,
    /// Histogram bins for the interval entropy.
    pub entropy_bins: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            tz_offset_seconds: 0,
            work_start_hour: 8,
            work_end_hour: 18,
            entropy_bins: 10,
        }
    }
}

const INTERVAL_STATS: [&str; 10] = [
    "dt_mean",
    "dt_min",
    "dt_max",
    "dt_skewness",
    "dt_kurtosis",
    "dt_entropy",
    "dt_energy",
    "dt_autocorr1",
    "dt_slope",
    "dt_degenerate",
];

/// Fixed-length feature extraction against a vocabulary's categories.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    categories: Vec<String>,
    category_of: Vec<usize>,
}

/// Summary statistics of a month's intra-shift intervals in seconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntervalStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub entropy: f64,
    pub energy: f64,
    pub autocorr1: f64,
    pub slope: f64,
    /// Set when some statistic is undefined and reported as 0.
    pub degenerate: bool,
}

/// Moments use the population convention; kurtosis is excess kurtosis.
pub fn interval_stats(dts: &[f64], entropy_bins: usize) -> IntervalStats {
    let n = dts.len();
    if n == 0 {
        return IntervalStats {
            degenerate: true,
            ..Default::default()
        };
    }
    let nf = n as f64;
    let mean = dts.iter().sum::<f64>() / nf;
    let min = dts.iter().copied().fold(f64::INFINITY, f64::min);
    let max = dts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let moment = |k: i32| dts.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / nf;
    let (m2, m3, m4) = (moment(2), moment(3), moment(4));
    let energy = dts.iter().map(|x| x * x).sum();
    let mut degenerate = false;
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        degenerate = true;
        (0.0, 0.0)
    };
    let autocorr1 = if m2 > 0.0 && n >= 2 {
        dts.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (m2 * nf)
    } else {
        degenerate = true;
        0.0
    };
    let slope = if n >= 2 {
        let im = (nf - 1.0) / 2.0;
        let sxy: f64 = dts.iter().enumerate().map(|(i, x)| (i as f64 - im) * (x - mean)).sum();
        let sxx: f64 = (0..n).map(|i| (i as f64 - im).powi(2)).sum();
        sxy / sxx
    } else {
        degenerate = true;
        0.0
    };
    let entropy = if max > min {
        let k = entropy_bins.max(1);
        let mut counts = vec![0usize; k];
        for x in dts {
            let b = (((x - min) / (max - min)) * k as f64) as usize;
            counts[b.min(k - 1)] += 1;
        }
        -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                p * p.ln()
            })
            .sum::<f64>()
    } else {
        0.0
    };
    IntervalStats {
        mean,
        min,
        max,
        skewness,
        kurtosis,
        entropy,
        energy,
        autocorr1,
        slope,
        degenerate,
    }
}

impl FeatureExtractor {
    pub fn new(vocab: &Vocabulary, cfg: FeatureConfig) -> Result<Self> {
        if cfg.work_start_hour >= cfg.work_end_hour || cfg.work_end_hour > 24 {
            return Err(Error::Config("working hours must satisfy start < end <= 24".into()));
        }
        Ok(Self {
            cfg,
            categories: vocab.categories().to_vec(),
            category_of: vocab.category_index(),
        })
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec![
            "shifts".to_string(),
            "events_per_shift".into(),
            "active_hours_per_shift".into(),
            "after_hours_per_shift".into(),
        ];
        for c in &self.categories {
            names.push(format!("count_{c}_per_shift"));
        }
        for c in &self.categories {
            names.push(format!("hours_{c}_per_shift"));
        }
        names.extend(INTERVAL_STATS.iter().map(|s| s.to_string()));
        names
    }

    pub fn len(&self) -> usize {
        4 + 2 * self.categories.len() + INTERVAL_STATS.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn after_hours(&self, t: i64) -> bool {
        let secs = (t + self.cfg.tz_offset_seconds).rem_euclid(86_400);
        let hour = (secs / 3600) as u32;
        hour < self.cfg.work_start_hour || hour >= self.cfg.work_end_hour
    }

    /// Each interval is attributed to the event that opens it, both for its
    /// category and for the after-hours test.
    pub fn extract(&self, month: &MonthRecord) -> Result<Vec<f64>> {
        let n_cat = self.categories.len();
        let mut counts = vec![0.0; n_cat];
        let mut cat_secs = vec![0.0; n_cat];
        let (mut active, mut after) = (0.0, 0.0);
        let mut dts = Vec::new();
        for shift in &month.shifts {
            let ev = shift.events();
            for a in ev {
                let c = *self
                    .category_of
                    .get(a.code as usize)
                    .ok_or_else(|| Error::Validation(format!("action code {} outside vocabulary", a.code)))?;
                counts[c] += 1.0;
            }
            for w in ev.windows(2) {
                let dt = (w[1].timestamp - w[0].timestamp) as f64;
                dts.push(dt);
                active += dt;
                cat_secs[self.category_of[w[0].code as usize]] += dt;
                if self.after_hours(w[0].timestamp) {
                    after += dt;
                }
            }
        }
        let shifts = month.num_shifts().max(1) as f64;
        let hours = |s: f64| s / 3600.0 / shifts;
        let mut f = vec![
            month.num_shifts() as f64,
            month.num_events() as f64 / shifts,
            hours(active),
            hours(after),
        ];
        f.extend(counts.iter().map(|c| c / shifts));
        f.extend(cat_secs.iter().map(|&s| hours(s)));
        let s = interval_stats(&dts, self.cfg.entropy_bins);
        f.extend([
            s.mean,
            s.min,
            s.max,
            s.skewness,
            s.kurtosis,
            s.entropy,
            s.energy,
            s.autocorr1,
            s.slope,
            if s.degenerate { 1.0 } else { 0.0 },
        ]);
        Ok(f)
    }

    /// Feature matrix CSV with identifying columns and the label.
    pub fn write_matrix<'a, W: Write, I: IntoIterator<Item = &'a MonthRecord>>(&self, months: I, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["participant_id".to_string(), "month_index".into(), "label".into()];
        header.extend(self.names());
        out.write_record(&header)?;
        for m in months {
            let mut row = vec![
                m.participant_id.clone(),
                m.month_index.to_string(),
                m.label.map_or(String::new(), |l| u8::from(l).to_string()),
            ];
            row.extend(self.extract(m)?.iter().map(|x| x.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// L2-regularized logistic regression on standardized features, fitted by
/// full-batch gradient descent.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticRegression {
    pub fn fit(x: &[Vec<f64>], y: &[bool], l2: f64, iterations: usize, lr: f64) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::NoLabels("logistic regression needs labeled rows".into()));
        }
        let d = x[0].len();
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 0.0 { v.sqrt() } else { 1.0 }
            })
            .collect();
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().enumerate().map(|(j, v)| (v - mean[j]) / scale[j]).collect())
            .collect();
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        for _ in 0..iterations {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (row, &label) in z.iter().zip(y) {
                let p = sigmoid(b + dot(&w, row));
                let e = p - f64::from(u8::from(label));
                gb += e / n;
                for (g, v) in gw.iter_mut().zip(row) {
                    *g += e * v / n;
                }
            }
            for (wj, g) in w.iter_mut().zip(&gw) {
                *wj -= lr * (g + l2 * *wj);
            }
            b -= lr * gb;
        }
        Ok(Self {
            mean,
            scale,
            weights: w,
            bias: b,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.mean[j]) / self.scale[j])
            .collect();
        sigmoid(self.bias + dot(&self.weights, &z))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_intervals_are_degenerate() {
        let s = interval_stats(&[60.0; 9], 10);
        assert_eq!((s.mean, s.min, s.max), (60.0, 60.0, 60.0));
        assert_eq!((s.skewness, s.autocorr1, s.slope, s.entropy), (0.0, 0.0, 0.0, 0.0));
        assert!(s.degenerate);
        assert_eq!(s.energy, 9.0 * 3600.0);
    }

    #[test]
    fn no_intervals_yield_zeros() {
        let s = interval_stats(&[], 10);
        assert!(s.degenerate);
        assert_eq!(s.mean, 0.0);
    }

    #[test]
    fn logistic_regression_separates_a_line() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, 1.0]).collect();
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let m = LogisticRegression::fit(&x, &y, 0.0, 500, 0.5).unwrap();
        assert!(m.predict(&[35.0, 1.0]) > 0.9);
        assert!(m.predict(&[2.0, 1.0]) < 0.1);
    }
}
