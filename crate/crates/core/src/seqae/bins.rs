use crate::error::{Error, Result};

/// Discretization of inter-event intervals for the time head. Bin 0 holds
/// first events; the remaining bins split `ln(Δt + 1)` at corpus quantiles.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeBins {
    /// Strictly increasing interior cut points in log-interval space.
    pub edges: Vec<f64>,
    pub n_bins: usize,
}

pub fn log_interval(dt: i64) -> f64 {
    (dt.max(0) as f64 + 1.0).ln()
}

impl TimeBins {
    /// Quantile cut points of the observed intervals. Repeated quantiles
    /// collapse, so heavily tied corpora use fewer than `n_bins` bins.
    pub fn fit<I: IntoIterator<Item = i64>>(intervals: I, n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::Config("time head needs at least two bins".into()));
        }
        let mut xs: Vec<f64> = intervals.into_iter().map(log_interval).collect();
        xs.sort_by(f64::total_cmp);
        let inner = n_bins - 1;
        let mut edges: Vec<f64> = Vec::new();
        if !xs.is_empty() {
            for j in 1..inner {
                let q = xs[(j * xs.len() / inner).min(xs.len() - 1)];
                if edges.last().is_none_or(|&e| q > e) && q > xs[0] {
                    edges.push(q);
                }
            }
        }
        Ok(Self { edges, n_bins })
    }

    pub fn from_edges(edges: Vec<f64>, n_bins: usize) -> Result<Self> {
        if edges.windows(2).any(|w| w[1] <= w[0]) || edges.len() + 2 > n_bins {
            return Err(Error::Config("bin edges must be strictly increasing and fit the bin count".into()));
        }
        Ok(Self { edges, n_bins })
    }

    /// Bin of an interval; `None` marks a first event.
    pub fn bin(&self, dt: Option<i64>) -> usize {
        match dt {
            None => 0,
            Some(dt) => {
                let x = log_interval(dt);
                1 + self.edges.partition_point(|&e| e <= x)
            }
        }
    }

    /// Bin of every step of a time-sorted sequence.
    pub fn bins_of(&self, timestamps: &[i64]) -> Vec<usize> {
        (0..timestamps.len())
            .map(|i| self.bin((i > 0).then(|| timestamps[i] - timestamps[i - 1])))
            .collect()
    }
}
