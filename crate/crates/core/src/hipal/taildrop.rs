use rand::Rng;

use crate::logstore::{MonthRecord, Shift};

const DAY: i64 = 86_400;

/// Probabilities of dropping `0..=l_max` days: `p(L) ∝ (l_max − L)^ρ`.
/// With `l_max = 0` the only outcome is 0.
pub fn tail_drop_weights(l_max: u32, rho: f64) -> Vec<f64> {
    if l_max == 0 {
        return vec![1.0];
    }
    let raw: Vec<f64> = (0..=l_max).map(|l| ((l_max - l) as f64).powf(rho)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

pub fn sample_tail_drop<R: Rng + ?Sized>(l_max: u32, rho: f64, rng: &mut R) -> u32 {
    let weights = tail_drop_weights(l_max, rho);
    let mut u = rng.random::<f64>();
    for (l, w) in weights.iter().enumerate() {
        if u < *w {
            return l as u32;
        }
        u -= w;
    }
    // Floating-point slack: fall back to the largest outcome with mass.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0) as u32
}

fn truncate_after(month: &MonthRecord, cutoff: i64) -> Vec<Shift> {
    month
        .shifts
        .iter()
        .filter_map(|s| {
            let kept: Vec<_> = s.events().iter().copied().filter(|a| a.timestamp <= cutoff).collect();
            Shift::new(kept).ok()
        })
        .collect()
}

/// Removes every event in the final `days` days before the month's last
/// event. Shifts emptied by the cut disappear; if nothing would remain,
/// `days` is reduced until at least one shift survives.
pub fn apply_tail_drop(month: &MonthRecord, days: u32) -> MonthRecord {
    let Some(last) = month.last_timestamp() else {
        return month.clone();
    };
    for l in (0..=days).rev() {
        let shifts = truncate_after(month, last - l as i64 * DAY);
        if !shifts.is_empty() {
            return MonthRecord {
                shifts,
                ..month.clone()
            };
        }
    }
    month.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logstore::Action;

    fn month(days: &[i64]) -> MonthRecord {
        MonthRecord {
            participant_id: "p".into(),
            month_index: 0,
            window_start: 0,
            window_end: 40 * DAY,
            shifts: days
                .iter()
                .map(|&d| {
                    Shift::new(vec![
                        Action { timestamp: d * DAY + 8 * 3600, code: 0 },
                        Action { timestamp: d * DAY + 9 * 3600, code: 1 },
                    ])
                    .unwrap()
                })
                .collect(),
            label: Some(true),
            pfi_score: Some(2.0),
        }
    }

    #[test]
    fn weights_match_closed_form() {
        let w = tail_drop_weights(5, 2.0);
        let want = [25.0, 16.0, 9.0, 4.0, 1.0, 0.0].map(|x| x / 55.0);
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(tail_drop_weights(4, 0.0), vec![0.2; 5]);
        assert_eq!(tail_drop_weights(0, 2.0), vec![1.0]);
    }

    #[test]
    fn zero_l_max_never_drops() {
        let mut rng = rand::rng();
        assert!((0..100).all(|_| sample_tail_drop(0, 2.0, &mut rng) == 0));
    }

    #[test]
    fn zero_days_is_identity() {
        let m = month(&[0, 3, 10]);
        assert_eq!(apply_tail_drop(&m, 0), m);
    }

    #[test]
    fn last_isolated_shift_removed() {
        let m = month(&[0, 3, 10]);
        let d = apply_tail_drop(&m, 3);
        assert_eq!(d.num_shifts(), 2);
        assert_eq!(d.shifts, m.shifts[..2]);
    }

    #[test]
    fn drop_clamped_to_keep_one_shift() {
        let m = month(&[0, 3, 10]);
        let d = apply_tail_drop(&m, 30);
        assert!(d.num_shifts() >= 1);
        assert_eq!(d.shifts[0], m.shifts[0]);
    }
}
