use std::io::{BufRead, Write};

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ActionEvent, Dataset, MonthRecord, SurveyWindow};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for EventFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(Error::Config(format!("unknown event format {other:?}"))),
        }
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Epoch seconds from either an integer or an ISO-8601 / RFC 3339 string.
/// Naive date-times without an offset are read as UTC.
pub(crate) fn parse_timestamp(raw: &str) -> std::result::Result<i64, String> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(format!("unparseable timestamp {raw:?}"))
}

fn check_event(ev: &ActionEvent, line: u64, vocab_size: Option<usize>) -> Result<()> {
    if ev.timestamp < 0 {
        return Err(Error::Validation(format!(
            "line {line}: negative timestamp {}",
            ev.timestamp
        )));
    }
    if let Some(v) = vocab_size {
        if ev.action_code as usize >= v {
            return Err(Error::Validation(format!(
                "line {line}: action code {} outside vocabulary of size {v}",
                ev.action_code
            )));
        }
    }
    Ok(())
}

/// Parses an event stream. The result is grouped by participant (sorted by
/// id) and stably sorted by timestamp within each participant.
pub fn parse_events<R: BufRead>(
    reader: R,
    format: EventFormat,
    vocab_size: Option<usize>,
) -> Result<Vec<ActionEvent>> {
    let events = match format {
        EventFormat::Csv => parse_events_csv(reader, vocab_size)?,
        EventFormat::Jsonl => parse_events_jsonl(reader, vocab_size)?,
    };
    let grouped = super::group_by_participant(events);
    Ok(grouped.into_values().flatten().collect())
}

fn parse_events_csv<R: BufRead>(reader: R, vocab_size: Option<usize>) -> Result<Vec<ActionEvent>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column {name:?}")))
    };
    let (pid_i, ts_i, code_i) = (col("participant_id")?, col("timestamp")?, col("action_code")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(i).ok_or_else(|| parse_err(line, "missing field"));
        let timestamp = parse_timestamp(field(ts_i)?).map_err(|m| parse_err(line, m))?;
        let action_code = field(code_i)?
            .parse::<i64>()
            .map_err(|e| parse_err(line, format!("bad action_code: {e}")))?;
        let action_code = u32::try_from(action_code)
            .map_err(|_| Error::Validation(format!("line {line}: action code {action_code} out of range")))?;
        let ev = ActionEvent {
            participant_id: field(pid_i)?.to_owned(),
            timestamp,
            action_code,
        };
        check_event(&ev, line, vocab_size)?;
        out.push(ev);
    }
    Ok(out)
}

fn parse_events_jsonl<R: BufRead>(reader: R, vocab_size: Option<usize>) -> Result<Vec<ActionEvent>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        let pid = match &v["participant_id"] {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            _ => return Err(parse_err(line_no, "missing participant_id")),
        };
        let timestamp = match &v["timestamp"] {
            Value::Number(n) => n
                .as_i64()
                .ok_or_else(|| parse_err(line_no, "timestamp must be an integer"))?,
            Value::String(s) => parse_timestamp(s).map_err(|m| parse_err(line_no, m))?,
            _ => return Err(parse_err(line_no, "missing timestamp")),
        };
        let code = v["action_code"]
            .as_i64()
            .ok_or_else(|| parse_err(line_no, "missing or non-integer action_code"))?;
        let action_code = u32::try_from(code)
            .map_err(|_| Error::Validation(format!("line {line_no}: action code {code} out of range")))?;
        let ev = ActionEvent {
            participant_id: pid,
            timestamp,
            action_code,
        };
        check_event(&ev, line_no, vocab_size)?;
        out.push(ev);
    }
    Ok(out)
}

/// Parses a survey file with columns
/// `participant_id,month_index,month_start,month_end,pfi_score`.
pub fn parse_surveys<R: BufRead>(reader: R) -> Result<Vec<SurveyWindow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column {name:?}")))
    };
    let idx = [
        col("participant_id")?,
        col("month_index")?,
        col("month_start")?,
        col("month_end")?,
        col("pfi_score")?,
    ];
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let f = |i: usize| rec.get(idx[i]).unwrap_or("");
        let month_index = f(1)
            .parse()
            .map_err(|e| parse_err(line, format!("bad month_index: {e}")))?;
        let month_start = parse_timestamp(f(2)).map_err(|m| parse_err(line, m))?;
        let month_end = parse_timestamp(f(3)).map_err(|m| parse_err(line, m))?;
        let pfi_score = match f(4) {
            "" => None,
            s => {
                let p: f64 = s
                    .parse()
                    .map_err(|e| parse_err(line, format!("bad pfi_score: {e}")))?;
                super::derive_label(p)?;
                Some(p)
            }
        };
        out.push(SurveyWindow {
            participant_id: f(0).to_owned(),
            month_index,
            month_start,
            month_end,
            pfi_score,
        });
    }
    Ok(out)
}

pub fn write_events_csv<W: Write>(writer: W, events: &[ActionEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["participant_id", "timestamp", "action_code"])?;
    for e in events {
        w.write_record([
            e.participant_id.as_str(),
            &e.timestamp.to_string(),
            &e.action_code.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_surveys_csv<W: Write>(writer: W, surveys: &[SurveyWindow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["participant_id", "month_index", "month_start", "month_end", "pfi_score"])?;
    for s in surveys {
        w.write_record([
            s.participant_id.clone(),
            s.month_index.to_string(),
            s.month_start.to_string(),
            s.month_end.to_string(),
            s.pfi_score.map(|p| format!("{p:.2}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    format: String,
    vocab_size: usize,
    months: usize,
}

const JSONL_FORMAT: &str = "hipal-dataset-v1";

/// Writes a dataset as JSON lines: one header object followed by one
/// [`MonthRecord`] per line.
pub fn write_dataset_jsonl<W: Write>(mut writer: W, ds: &Dataset) -> Result<()> {
    let header = JsonlHeader {
        format: JSONL_FORMAT.into(),
        vocab_size: ds.vocab_size,
        months: ds.months.len(),
    };
    serde_json::to_writer(&mut writer, &header)?;
    writeln!(writer)?;
    for m in &ds.months {
        serde_json::to_writer(&mut writer, m)?;
        writeln!(writer)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_dataset_jsonl<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty dataset file"))??;
    let header: JsonlHeader = serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
    if header.format != JSONL_FORMAT {
        return Err(parse_err(1, format!("unsupported dataset format {:?}", header.format)));
    }
    let mut months = Vec::with_capacity(header.months);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: MonthRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(i as u64 + 2, e.to_string()))?;
        months.push(m);
    }
    if months.len() != header.months {
        return Err(Error::Validation(format!(
            "header announces {} months, found {}",
            header.months,
            months.len()
        )));
    }
    Dataset::new(header.vocab_size, months)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream_is_empty() {
        let csv = "participant_id,timestamp,action_code\n";
        assert!(parse_events(csv.as_bytes(), EventFormat::Csv, None).unwrap().is_empty());
        assert!(parse_events("".as_bytes(), EventFormat::Jsonl, None).unwrap().is_empty());
    }

    #[test]
    fn rows_are_sorted_per_participant() {
        let csv = "participant_id,timestamp,action_code\np,100,1\np,50,2\n";
        let ev = parse_events(csv.as_bytes(), EventFormat::Csv, None).unwrap();
        assert_eq!(ev.iter().map(|e| e.timestamp).collect::<Vec<_>>(), vec![50, 100]);
    }

    #[test]
    fn simultaneous_rows_keep_input_order() {
        let csv = "participant_id,timestamp,action_code\np,5,3\np,5,1\np,5,2\n";
        let ev = parse_events(csv.as_bytes(), EventFormat::Csv, None).unwrap();
        assert_eq!(ev.iter().map(|e| e.action_code).collect::<Vec<_>>(), vec![3, 1, 2]);
    }

    #[test]
    fn code_equal_to_vocab_size_rejected() {
        let csv = "participant_id,timestamp,action_code\np,1,1961\n";
        let err = parse_events(csv.as_bytes(), EventFormat::Csv, Some(1961)).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let ok = "participant_id,timestamp,action_code\np,1,1960\n";
        assert!(parse_events(ok.as_bytes(), EventFormat::Csv, Some(1961)).is_ok());
    }

    #[test]
    fn negative_timestamp_rejected() {
        let csv = "participant_id,timestamp,action_code\np,-1,0\n";
        let err = parse_events(csv.as_bytes(), EventFormat::Csv, None).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn malformed_record_reports_line() {
        let csv = "participant_id,timestamp,action_code\np,1,0\np,abc,0\n";
        match parse_events(csv.as_bytes(), EventFormat::Csv, None).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let jsonl = "{\"participant_id\":\"p\",\"timestamp\":1,\"action_code\":0}\n{oops\n";
        match parse_events(jsonl.as_bytes(), EventFormat::Jsonl, None).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn iso_timestamps_convert_to_epoch() {
        let jsonl = "{\"participant_id\":\"p\",\"timestamp\":\"1970-01-01T01:00:00Z\",\"action_code\":0}\n\
                     {\"participant_id\":\"p\",\"timestamp\":\"1970-01-01 00:00:30\",\"action_code\":1}\n";
        let ev = parse_events(jsonl.as_bytes(), EventFormat::Jsonl, None).unwrap();
        assert_eq!(ev[0].timestamp, 30);
        assert_eq!(ev[1].timestamp, 3600);
    }

    #[test]
    fn survey_with_empty_score_is_unlabeled() {
        let csv = "participant_id,month_index,month_start,month_end,pfi_score\np,0,0,100,\np,1,100,200,1.5\n";
        let s = parse_surveys(csv.as_bytes()).unwrap();
        assert_eq!(s[0].pfi_score, None);
        assert_eq!(s[1].pfi_score, Some(1.5));
    }
}
