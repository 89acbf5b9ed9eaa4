use std::collections::BTreeMap;

use serde::Serialize;

use super::Dataset;

/// Mean, population standard deviation and maximum of a list of lengths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LengthStats {
    pub mean: f64,
    pub std: f64,
    pub max: usize,
}

impl LengthStats {
    pub fn of(lengths: &[usize]) -> Self {
        if lengths.is_empty() {
            return Self::default();
        }
        let n = lengths.len() as f64;
        let mean = lengths.iter().sum::<usize>() as f64 / n;
        let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            max: lengths.iter().copied().max().unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DatasetStats {
    pub participants: usize,
    pub events: usize,
    pub months: usize,
    pub labeled_months: usize,
    pub positive_months: usize,
    pub shifts: usize,
    pub shifts_per_month: LengthStats,
    /// Event counts per participant.
    pub per_participant: LengthStats,
    /// Event counts per participant·month.
    pub per_month: LengthStats,
    /// Event counts per participant·month·shift.
    pub per_shift: LengthStats,
}

pub fn dataset_stats(ds: &Dataset) -> DatasetStats {
    let mut by_participant: BTreeMap<&str, usize> = BTreeMap::new();
    let mut per_month = Vec::with_capacity(ds.months.len());
    let mut shifts_per_month = Vec::with_capacity(ds.months.len());
    let mut per_shift = Vec::new();
    for m in &ds.months {
        let n = m.num_events();
        *by_participant.entry(&m.participant_id).or_default() += n;
        per_month.push(n);
        shifts_per_month.push(m.num_shifts());
        per_shift.extend(m.shifts.iter().map(|s| s.len()));
    }
    let per_participant: Vec<usize> = by_participant.values().copied().collect();
    DatasetStats {
        participants: per_participant.len(),
        events: per_month.iter().sum(),
        months: ds.months.len(),
        labeled_months: ds.labeled().count(),
        positive_months: ds.labeled().filter(|m| m.label == Some(true)).count(),
        shifts: per_shift.len(),
        shifts_per_month: LengthStats::of(&shifts_per_month),
        per_participant: LengthStats::of(&per_participant),
        per_month: LengthStats::of(&per_month),
        per_shift: LengthStats::of(&per_shift),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dataset_has_zero_counts() {
        let s = dataset_stats(&Dataset::empty(10));
        assert_eq!(s, DatasetStats::default());
    }

    #[test]
    fn length_stats_population_std() {
        let s = LengthStats::of(&[2, 4, 4, 4, 5, 5, 7, 9]);
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.std, 2.0);
        assert_eq!(s.max, 9);
    }
}
