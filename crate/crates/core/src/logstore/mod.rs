//! Activity-log storage: events, work shifts, survey months and the
//! assembled hierarchical dataset.

mod io;
mod stats;
mod vocab;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    parse_events, parse_surveys, read_dataset_jsonl, write_dataset_jsonl, write_events_csv,
    write_surveys_csv, EventFormat,
};
pub use stats::{dataset_stats, DatasetStats, LengthStats};
pub use vocab::{Vocabulary, VocabularyEntry};

/// Default idle gap that separates two work shifts: 4 hours.
pub const DEFAULT_GAP_THRESHOLD: i64 = 4 * 3600;

/// PFI score at or above which a month is labeled as burnout.
pub const PFI_BURNOUT_THRESHOLD: f64 = 1.33;

/// One raw log row as read from an event file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub participant_id: String,
    /// Epoch seconds, UTC.
    pub timestamp: i64,
    pub action_code: u32,
}

/// A timestamped action inside a shift; the participant is implied by the
/// owning [`MonthRecord`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(i64, u32)", into = "(i64, u32)")]
pub struct Action {
    pub timestamp: i64,
    pub code: u32,
}

impl From<(i64, u32)> for Action {
    fn from((timestamp, code): (i64, u32)) -> Self {
        Self { timestamp, code }
    }
}

impl From<Action> for (i64, u32) {
    fn from(a: Action) -> Self {
        (a.timestamp, a.code)
    }
}

impl From<&ActionEvent> for Action {
    fn from(e: &ActionEvent) -> Self {
        Self {
            timestamp: e.timestamp,
            code: e.action_code,
        }
    }
}

/// A temporally contiguous run of one participant's actions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shift {
    events: Vec<Action>,
}

impl Shift {
    /// Builds a shift from a non-empty, time-sorted list of actions.
    pub fn new(events: Vec<Action>) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::Validation("shift must contain at least one event".into()));
        }
        if events.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
            return Err(Error::Validation("shift events must be sorted by timestamp".into()));
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[Action] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn start_time(&self) -> i64 {
        self.events[0].timestamp
    }

    pub fn end_time(&self) -> i64 {
        self.events[self.events.len() - 1].timestamp
    }

    /// Seconds between consecutive actions (length `len() - 1`).
    pub fn intervals(&self) -> impl Iterator<Item = i64> + '_ {
        self.events.windows(2).map(|w| w[1].timestamp - w[0].timestamp)
    }
}

/// One survey month of a participant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonthRecord {
    pub participant_id: String,
    pub month_index: u32,
    /// Start of the survey window (epoch seconds); origin for month-level
    /// periodicity features.
    pub window_start: i64,
    pub window_end: i64,
    pub shifts: Vec<Shift>,
    pub label: Option<bool>,
    pub pfi_score: Option<f64>,
}

impl MonthRecord {
    pub fn num_shifts(&self) -> usize {
        self.shifts.len()
    }

    pub fn num_events(&self) -> usize {
        self.shifts.iter().map(Shift::len).sum()
    }

    pub fn events(&self) -> impl Iterator<Item = &Action> {
        self.shifts.iter().flat_map(|s| s.events().iter())
    }

    pub fn last_timestamp(&self) -> Option<i64> {
        self.shifts.last().map(Shift::end_time)
    }

    pub fn key(&self) -> (&str, u32) {
        (&self.participant_id, self.month_index)
    }

    fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.shifts.is_empty() {
            return Err(Error::Validation(format!(
                "month {}/{} has no shifts",
                self.participant_id, self.month_index
            )));
        }
        if self.shifts.windows(2).any(|w| w[1].start_time() < w[0].start_time()) {
            return Err(Error::Validation("shifts must be ordered by start time".into()));
        }
        if let Some(p) = self.pfi_score {
            if self.label != Some(derive_label(p)?) {
                return Err(Error::Validation(format!(
                    "label of {}/{} disagrees with its PFI score {p}",
                    self.participant_id, self.month_index
                )));
            }
        }
        if let Some(a) = self.events().find(|a| a.code as usize >= vocab_size) {
            return Err(Error::Validation(format!(
                "action code {} outside vocabulary of size {vocab_size}",
                a.code
            )));
        }
        Ok(())
    }
}

/// The whole hierarchical dataset (participant → month → shift → action).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub vocab_size: usize,
    pub months: Vec<MonthRecord>,
}

impl Dataset {
    pub fn new(vocab_size: usize, months: Vec<MonthRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for m in &months {
            m.validate(vocab_size)?;
            if !seen.insert((m.participant_id.clone(), m.month_index)) {
                return Err(Error::Validation(format!(
                    "duplicate month {}/{}",
                    m.participant_id, m.month_index
                )));
            }
        }
        Ok(Self { vocab_size, months })
    }

    pub fn empty(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            months: Vec::new(),
        }
    }

    pub fn labeled(&self) -> impl Iterator<Item = &MonthRecord> {
        self.months.iter().filter(|m| m.label.is_some())
    }

    pub fn unlabeled(&self) -> impl Iterator<Item = &MonthRecord> {
        self.months.iter().filter(|m| m.label.is_none())
    }

    /// Sorted, de-duplicated participant ids.
    pub fn participants(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.months.iter().map(|m| m.participant_id.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn months_of<'a>(&'a self, participant: &'a str) -> impl Iterator<Item = &'a MonthRecord> {
        self.months.iter().filter(move |m| m.participant_id == participant)
    }

    /// All shifts of all months, in dataset order.
    pub fn shifts(&self) -> impl Iterator<Item = &Shift> {
        self.months.iter().flat_map(|m| m.shifts.iter())
    }
}

/// Maps a PFI score in [0, 4] to the binary burnout label.
pub fn derive_label(pfi_score: f64) -> Result<bool> {
    if !(0.0..=4.0).contains(&pfi_score) {
        return Err(Error::Validation(format!(
            "PFI score {pfi_score} outside [0, 4]"
        )));
    }
    Ok(pfi_score >= PFI_BURNOUT_THRESHOLD)
}

/// Splits one participant's time-sorted events into shifts. A new shift
/// starts wherever the gap to the previous event is at least
/// `gap_threshold` seconds.
pub fn segment_shifts(events: &[Action], gap_threshold: i64) -> Result<Vec<Shift>> {
    if events.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::Contract("segment_shifts requires time-sorted events".into()));
    }
    let mut shifts = Vec::new();
    let mut current: Vec<Action> = Vec::new();
    for &e in events {
        if let Some(prev) = current.last() {
            if e.timestamp - prev.timestamp >= gap_threshold {
                shifts.push(Shift {
                    events: std::mem::take(&mut current),
                });
            }
        }
        current.push(e);
    }
    if !current.is_empty() {
        shifts.push(Shift { events: current });
    }
    Ok(shifts)
}

/// One row of a survey file: a participant's survey window and its
/// optional PFI score.
#[derive(Clone, Debug, PartialEq)]
pub struct SurveyWindow {
    pub participant_id: String,
    pub month_index: u32,
    pub month_start: i64,
    /// Exclusive end of the window.
    pub month_end: i64,
    pub pfi_score: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AssemblyReport {
    /// Events that fell outside every survey window of their participant.
    pub dropped_events: usize,
    /// Survey windows that contained no events and were skipped.
    pub empty_windows: usize,
}

/// Buckets each participant's events into survey windows, segments every
/// window into shifts and attaches labels derived from the PFI scores.
pub fn assemble_dataset(
    events_by_participant: &BTreeMap<String, Vec<ActionEvent>>,
    surveys: &[SurveyWindow],
    gap_threshold: i64,
    vocab_size: usize,
) -> Result<(Dataset, AssemblyReport)> {
    let mut windows: BTreeMap<&str, Vec<&SurveyWindow>> = BTreeMap::new();
    for s in surveys {
        if s.month_end <= s.month_start {
            return Err(Error::Validation(format!(
                "survey window {}/{} is empty",
                s.participant_id, s.month_index
            )));
        }
        windows.entry(&s.participant_id).or_default().push(s);
    }
    for ws in windows.values_mut() {
        ws.sort_by_key(|w| w.month_start);
        if let Some(pair) = ws.windows(2).find(|p| p[1].month_start < p[0].month_end) {
            return Err(Error::Validation(format!(
                "overlapping survey windows for participant {} (months {} and {})",
                pair[0].participant_id, pair[0].month_index, pair[1].month_index
            )));
        }
    }

    let mut report = AssemblyReport::default();
    let mut months = Vec::new();
    for (pid, events) in events_by_participant {
        let Some(ws) = windows.get(pid.as_str()) else {
            report.dropped_events += events.len();
            continue;
        };
        let mut sorted: Vec<&ActionEvent> = events.iter().collect();
        sorted.sort_by_key(|e| e.timestamp);
        let mut buckets: Vec<Vec<Action>> = vec![Vec::new(); ws.len()];
        for e in sorted {
            let idx = ws.partition_point(|w| w.month_start <= e.timestamp);
            match idx.checked_sub(1) {
                Some(i) if e.timestamp < ws[i].month_end => buckets[i].push(e.into()),
                _ => report.dropped_events += 1,
            }
        }
        for (w, bucket) in ws.iter().zip(buckets) {
            if bucket.is_empty() {
                report.empty_windows += 1;
                continue;
            }
            let label = w.pfi_score.map(derive_label).transpose()?;
            months.push(MonthRecord {
                participant_id: pid.clone(),
                month_index: w.month_index,
                window_start: w.month_start,
                window_end: w.month_end,
                shifts: segment_shifts(&bucket, gap_threshold)?,
                label,
                pfi_score: w.pfi_score,
            });
        }
    }
    // Windows of participants with no events at all.
    for (pid, ws) in &windows {
        if !events_by_participant.contains_key(*pid) {
            report.empty_windows += ws.len();
        }
    }
    months.sort_by(|a, b| {
        (a.participant_id.as_str(), a.month_index).cmp(&(b.participant_id.as_str(), b.month_index))
    });
    Ok((Dataset::new(vocab_size, months)?, report))
}

/// Groups parsed events by participant, keeping each list time-sorted.
pub fn group_by_participant(events: Vec<ActionEvent>) -> BTreeMap<String, Vec<ActionEvent>> {
    let mut out: BTreeMap<String, Vec<ActionEvent>> = BTreeMap::new();
    for e in events {
        out.entry(e.participant_id.clone()).or_default().push(e);
    }
    for v in out.values_mut() {
        v.sort_by_key(|e| e.timestamp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acts(ts: &[i64]) -> Vec<Action> {
        ts.iter().map(|&t| Action { timestamp: t, code: 0 }).collect()
    }

    #[test]
    fn segment_empty_is_empty() {
        assert!(segment_shifts(&[], DEFAULT_GAP_THRESHOLD).unwrap().is_empty());
    }

    #[test]
    fn segment_splits_at_gap() {
        let h = 3600;
        let ts = [0, 600, 1200, 1200 + 5 * h, 1200 + 5 * h + 60];
        let shifts = segment_shifts(&acts(&ts), 4 * h).unwrap();
        let sizes: Vec<usize> = shifts.iter().map(Shift::len).collect();
        assert_eq!(sizes, vec![3, 2]);
        assert_eq!(shifts[1].start_time(), 1200 + 5 * h);
    }

    #[test]
    fn gap_equal_to_threshold_splits() {
        let shifts = segment_shifts(&acts(&[0, 100]), 100).unwrap();
        assert_eq!(shifts.len(), 2);
    }

    #[test]
    fn no_split_point_gives_single_shift() {
        let shifts = segment_shifts(&acts(&[0, 10, 20, 30]), 100).unwrap();
        assert_eq!(shifts.len(), 1);
        assert_eq!(shifts[0].len(), 4);
    }

    #[test]
    fn unsorted_input_is_contract_violation() {
        let err = segment_shifts(&acts(&[10, 5]), 100).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn label_threshold_is_inclusive() {
        assert!(derive_label(1.33).unwrap());
        assert!(!derive_label(0.0).unwrap());
        assert!(derive_label(4.0).unwrap());
        assert!(!derive_label(1.3299).unwrap());
        assert!(derive_label(4.01).is_err());
        assert!(derive_label(-0.1).is_err());
    }

    fn ev(pid: &str, t: i64, a: u32) -> ActionEvent {
        ActionEvent {
            participant_id: pid.into(),
            timestamp: t,
            action_code: a,
        }
    }

    fn window(pid: &str, idx: u32, start: i64, end: i64, pfi: Option<f64>) -> SurveyWindow {
        SurveyWindow {
            participant_id: pid.into(),
            month_index: idx,
            month_start: start,
            month_end: end,
            pfi_score: pfi,
        }
    }

    #[test]
    fn assemble_minimal() {
        let events = group_by_participant(vec![ev("p", 50, 1)]);
        let (ds, report) =
            assemble_dataset(&events, &[window("p", 0, 0, 100, Some(2.0))], DEFAULT_GAP_THRESHOLD, 5)
                .unwrap();
        assert_eq!(ds.months.len(), 1);
        assert_eq!(ds.months[0].num_shifts(), 1);
        assert_eq!(ds.months[0].label, Some(true));
        assert_eq!(report, AssemblyReport::default());
    }

    #[test]
    fn assemble_unlabeled_and_dropped() {
        let events = group_by_participant(vec![ev("p", 50, 1), ev("p", 500, 1)]);
        let (ds, report) =
            assemble_dataset(&events, &[window("p", 0, 0, 100, None)], DEFAULT_GAP_THRESHOLD, 5)
                .unwrap();
        assert_eq!(ds.months[0].label, None);
        assert_eq!(ds.unlabeled().count(), 1);
        assert_eq!(report.dropped_events, 1);
    }

    #[test]
    fn assemble_interleaved_participants_segment_independently() {
        let h = 3600;
        let events = group_by_participant(vec![
            ev("a", 0, 0),
            ev("b", 10, 0),
            ev("a", 5 * h, 0),
            ev("b", 20, 0),
        ]);
        let ws = [window("a", 0, 0, 10 * h, Some(0.5)), window("b", 0, 0, 10 * h, Some(3.0))];
        let (ds, _) = assemble_dataset(&events, &ws, 4 * h, 5).unwrap();
        let a = ds.months_of("a").next().unwrap();
        let b = ds.months_of("b").next().unwrap();
        assert_eq!(a.num_shifts(), 2);
        assert_eq!(b.num_shifts(), 1);
        assert_eq!(b.label, Some(true));
    }

    #[test]
    fn overlapping_windows_rejected() {
        let events = group_by_participant(vec![ev("p", 50, 1)]);
        let ws = [window("p", 0, 0, 100, None), window("p", 1, 50, 200, None)];
        assert!(assemble_dataset(&events, &ws, 10, 5).is_err());
    }

    #[test]
    fn dataset_rejects_out_of_vocab_codes() {
        let m = MonthRecord {
            participant_id: "p".into(),
            month_index: 0,
            window_start: 0,
            window_end: 10,
            shifts: vec![Shift::new(vec![Action { timestamp: 1, code: 7 }]).unwrap()],
            label: None,
            pfi_score: None,
        };
        assert!(Dataset::new(7, vec![m.clone()]).is_err());
        assert!(Dataset::new(8, vec![m]).is_ok());
    }
}
