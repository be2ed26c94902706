//! 30-day readmission labels derived from encounter records.
//!
//! For each patient, encounters are ordered by admission time. The
//! readmission interval of an encounter runs from its discharge to the
//! patient's next admission. Intervals within the window are positive,
//! longer ones negative. A final encounter (no later admission) is only
//! labeled negative if it was discharged at least `buffer_days` before the
//! latest admission anywhere in the dataset; otherwise a readmission may
//! simply be unobserved and the encounter is excluded.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::Deserialize;
use thiserror::Error;

const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("encounter `{encounter_id}` of patient `{patient_id}` is discharged before admission")]
    DischargeBeforeAdmit {
        patient_id: String,
        encounter_id: String,
    },
    #[error("duplicate encounter `{encounter_id}` for patient `{patient_id}`")]
    Duplicate {
        patient_id: String,
        encounter_id: String,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncounterRecord {
    pub patient_id: String,
    pub encounter_id: String,
    /// UTC seconds.
    pub admit_time: i64,
    /// UTC seconds.
    pub discharge_time: i64,
    pub note_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelOutcome {
    Negative,
    Positive,
    Excluded,
}

impl LabelOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelOutcome::Negative => "0",
            LabelOutcome::Positive => "1",
            LabelOutcome::Excluded => "excluded",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledEncounter {
    pub record: EncounterRecord,
    pub outcome: LabelOutcome,
    /// Days from discharge to the next admission, if there is one.
    pub interval_days: Option<f64>,
    /// Set when the next admission starts before this discharge; the
    /// interval is clamped to zero.
    pub overlap: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelConfig {
    pub window_days: i64,
    /// Minimum gap between discharge and the dataset's latest admission for
    /// a final encounter to count as an observed negative.
    pub buffer_days: i64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig::with_window(30)
    }
}

impl LabelConfig {
    /// Window with a buffer of the same length.
    pub fn with_window(window_days: i64) -> Self {
        LabelConfig {
            window_days,
            buffer_days: window_days,
        }
    }
}

pub fn generate_labels(
    encounters: &[EncounterRecord],
    config: &LabelConfig,
) -> Result<Vec<LabeledEncounter>, LabelError> {
    let mut seen = HashSet::new();
    let mut by_patient: BTreeMap<&str, Vec<&EncounterRecord>> = BTreeMap::new();
    for e in encounters {
        if e.discharge_time < e.admit_time {
            return Err(LabelError::DischargeBeforeAdmit {
                patient_id: e.patient_id.clone(),
                encounter_id: e.encounter_id.clone(),
            });
        }
        if !seen.insert((e.patient_id.as_str(), e.encounter_id.as_str())) {
            return Err(LabelError::Duplicate {
                patient_id: e.patient_id.clone(),
                encounter_id: e.encounter_id.clone(),
            });
        }
        by_patient.entry(&e.patient_id).or_default().push(e);
    }
    let Some(latest_admit) = encounters.iter().map(|e| e.admit_time).max() else {
        return Ok(Vec::new());
    };
    let window = config.window_days * SECONDS_PER_DAY;
    let buffer = config.buffer_days * SECONDS_PER_DAY;

    let mut out = Vec::with_capacity(encounters.len());
    for stays in by_patient.values_mut() {
        stays.sort_by(|a, b| {
            (a.admit_time, &a.encounter_id).cmp(&(b.admit_time, &b.encounter_id))
        });
        for (i, stay) in stays.iter().enumerate() {
            let labeled = match stays.get(i + 1) {
                Some(next) => {
                    let raw = next.admit_time - stay.discharge_time;
                    let gap = raw.max(0);
                    LabeledEncounter {
                        record: (*stay).clone(),
                        outcome: if gap <= window {
                            LabelOutcome::Positive
                        } else {
                            LabelOutcome::Negative
                        },
                        interval_days: Some(gap as f64 / SECONDS_PER_DAY as f64),
                        overlap: raw < 0,
                    }
                }
                None => LabeledEncounter {
                    record: (*stay).clone(),
                    outcome: if latest_admit - stay.discharge_time >= buffer {
                        LabelOutcome::Negative
                    } else {
                        LabelOutcome::Excluded
                    },
                    interval_days: None,
                    overlap: false,
                },
            };
            out.push(labeled);
        }
    }
    Ok(out)
}

/// Parses an ISO-8601 timestamp into UTC seconds. Timestamps without an
/// offset are taken as UTC; a bare date means midnight.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp())
}

pub fn format_timestamp(secs: i64) -> String {
    DateTime::from_timestamp(secs, 0)
        .map(|dt| dt.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| secs.to_string())
}

const ENCOUNTER_COLUMNS: [&str; 5] = [
    "patient_id",
    "encounter_id",
    "admit_time",
    "discharge_time",
    "note_id",
];

/// Reads the encounter table (header row required unless the input is empty).
pub fn read_encounters_csv<R: Read>(reader: R) -> Result<Vec<EncounterRecord>, LabelError> {
    #[derive(Deserialize)]
    struct Row {
        patient_id: String,
        encounter_id: String,
        admit_time: String,
        discharge_time: String,
        note_id: String,
    }

    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    for col in ENCOUNTER_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(LabelError::Parse {
                line: 1,
                message: format!("missing column `{col}`"),
            });
        }
    }
    let mut out = Vec::new();
    for result in rdr.records() {
        let record = result?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| LabelError::Parse { line, message: e.to_string() })?;
        let ts = |s: &str, col: &str| {
            parse_timestamp(s).ok_or_else(|| LabelError::Parse {
                line,
                message: format!("malformed {col} `{s}`"),
            })
        };
        out.push(EncounterRecord {
            admit_time: ts(&row.admit_time, "admit_time")?,
            discharge_time: ts(&row.discharge_time, "discharge_time")?,
            patient_id: row.patient_id,
            encounter_id: row.encounter_id,
            note_id: row.note_id,
        });
    }
    Ok(out)
}

/// Writes labeled encounters in canonical (patient, admission) order.
pub fn write_labels_csv<W: Write>(writer: W, labeled: &[LabeledEncounter]) -> Result<(), LabelError> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header: Vec<&str> = ENCOUNTER_COLUMNS.to_vec();
    header.extend(["label", "interval_days", "warning"]);
    wtr.write_record(&header)?;
    let mut rows: Vec<&LabeledEncounter> = labeled.iter().collect();
    rows.sort_by(|a, b| {
        (&a.record.patient_id, a.record.admit_time, &a.record.encounter_id).cmp(&(
            &b.record.patient_id,
            b.record.admit_time,
            &b.record.encounter_id,
        ))
    });
    for l in rows {
        let r = &l.record;
        wtr.write_record([
            r.patient_id.as_str(),
            r.encounter_id.as_str(),
            &format_timestamp(r.admit_time),
            &format_timestamp(r.discharge_time),
            r.note_id.as_str(),
            l.outcome.as_str(),
            &l.interval_days.map(|d| d.to_string()).unwrap_or_default(),
            if l.overlap { "overlap" } else { "" },
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
