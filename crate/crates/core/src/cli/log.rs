//! JSONL measurement log: one record per line,
//! `{"type":"imu","t":..,"w":[..],"a":[..]}` or
//! `{"type":"tag","t":..,"id":..,"corners":[[u,v],..],"undistorted":true}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::camera::{undistort_pixel, Pixel, PinholeIntrinsics, RadTanDistortion};
use crate::ekf::Event;
use crate::geometry::Vec3;
use crate::models::{ImuSample, TagDetection, TagId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LogRecord {
    Imu {
        t: f64,
        w: [f64; 3],
        a: [f64; 3],
    },
    Tag {
        t: f64,
        id: TagId,
        corners: [[f64; 2]; 4],
        undistorted: bool,
    },
}

impl LogRecord {
    pub fn t(&self) -> f64 {
        match self {
            LogRecord::Imu { t, .. } | LogRecord::Tag { t, .. } => *t,
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            LogRecord::Imu { t, w, a } => t.is_finite() && w.iter().chain(a).all(|v| v.is_finite()),
            LogRecord::Tag { t, corners, .. } => t.is_finite() && corners.iter().flatten().all(|v| v.is_finite()),
        }
    }
}

/// Log records of an event stream; detections are written as undistorted.
pub fn records_from_events(events: &[Event]) -> Vec<LogRecord> {
    let mut out = Vec::with_capacity(events.len());
    for e in events {
        match e {
            Event::Imu(s) => out.push(LogRecord::Imu { t: s.t, w: s.gyro.into(), a: s.accel.into() }),
            Event::Detections { dets, .. } => out.extend(dets.iter().map(|d| LogRecord::Tag {
                t: d.t,
                id: d.tag_id,
                corners: d.corners.map(|c| [c.x, c.y]),
                undistorted: true,
            })),
        }
    }
    out
}

pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("log record serializes");
        writeln!(w, "{line}").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Parses a log, checking that timestamps never decrease. Blank lines are
/// skipped. Errors cite the 1-based line number.
pub fn parse_log(reader: impl BufRead) -> Result<Vec<LogRecord>, CliError> {
    let mut out: Vec<LogRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CliError::Malformed { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::Malformed { line: line_no, message: e.to_string() })?;
        if !rec.is_finite() {
            return Err(CliError::Malformed { line: line_no, message: "non-finite value".into() });
        }
        if let Some(prev) = out.last() {
            if rec.t() < prev.t() {
                return Err(CliError::Malformed {
                    line: line_no,
                    message: format!("time {} goes back from {}", rec.t(), prev.t()),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_log(BufReader::new(file))
}

/// Filter events from log records. Consecutive tag records with the same
/// timestamp form one detection batch; distorted corners are undistorted
/// with `distortion` when given.
pub fn events_from_records(
    records: &[LogRecord],
    k: &PinholeIntrinsics,
    distortion: Option<&RadTanDistortion>,
) -> Result<Vec<Event>, CliError> {
    let mut out: Vec<Event> = Vec::new();
    for r in records {
        match r {
            LogRecord::Imu { t, w, a } => out.push(Event::Imu(ImuSample::new(*t, Vec3::from(*w), Vec3::from(*a)))),
            LogRecord::Tag { t, id, corners, undistorted } => {
                let mut px = corners.map(|[u, v]| Pixel::new(u, v));
                if let (false, Some(d)) = (*undistorted, distortion) {
                    for c in px.iter_mut() {
                        *c = undistort_pixel(c, k, d).map_err(|e| CliError::Data(format!("tag {id} at t={t}: {e}")))?;
                    }
                }
                let det = TagDetection { t: *t, tag_id: *id, corners: px };
                match out.last_mut() {
                    Some(Event::Detections { t: bt, dets }) if *bt == *t => dets.push(det),
                    _ => out.push(Event::Detections { t: *t, dets: vec![det] }),
                }
            }
        }
    }
    Ok(out)
}
