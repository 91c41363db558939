//! CSV and JSON artifacts. Quaternion columns are ordered `w, x, y, z`.

use std::fs::{self, File};
use std::path::Path;

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::ekf::{FilterState, SnapshotKind, StateSnapshot, TagPose};
use crate::geometry::{quat, Pose, PoseRecord, UnitQuaternion, Vec3};
use crate::models::TagId;
use crate::sim::TruthSample;

fn kind_name(k: SnapshotKind) -> &'static str {
    match k {
        SnapshotKind::Init => "init",
        SnapshotKind::Imu => "imu",
        SnapshotKind::Prior => "prior",
        SnapshotKind::Update => "update",
    }
}

fn parse_kind(s: &str) -> Result<SnapshotKind, CliError> {
    Ok(match s {
        "init" => SnapshotKind::Init,
        "imu" => SnapshotKind::Imu,
        "prior" => SnapshotKind::Prior,
        "update" => SnapshotKind::Update,
        other => return Err(CliError::Data(format!("unknown snapshot kind {other:?}"))),
    })
}

fn wxyz(q: &UnitQuaternion) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// One row of `states.csv`: the filter state after an event. `ws_*` is the
/// body pose in the workspace frame, empty until it is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub snapshot: usize,
    pub kind: String,
    pub t: f64,
    pub ws_px: Option<f64>,
    pub ws_py: Option<f64>,
    pub ws_pz: Option<f64>,
    pub ws_qw: Option<f64>,
    pub ws_qx: Option<f64>,
    pub ws_qy: Option<f64>,
    pub ws_qz: Option<f64>,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub bfx: f64,
    pub bfy: f64,
    pub bfz: f64,
    pub bwx: f64,
    pub bwy: f64,
    pub bwz: f64,
    pub rvx: f64,
    pub rvy: f64,
    pub rvz: f64,
    pub qvw: f64,
    pub qvx: f64,
    pub qvy: f64,
    pub qvz: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
    pub tags: usize,
    pub used: Option<usize>,
    pub gated: Option<usize>,
    pub nis: Option<f64>,
}

/// One row of `tags.csv`: a tag estimate (`_V r_VT`, `q_TV`) and its
/// marginal variances, for prior and update snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRow {
    pub snapshot: usize,
    pub kind: String,
    pub t: f64,
    pub id: TagId,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub var_rx: f64,
    pub var_ry: f64,
    pub var_rz: f64,
    pub var_ax: f64,
    pub var_ay: f64,
    pub var_az: f64,
}

/// One row of `truth.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub t: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    /// World-frame velocity.
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    /// Body-frame rotational rate.
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
}

impl From<&TruthSample> for TruthRow {
    fn from(s: &TruthSample) -> Self {
        let p = s.pose.position;
        let [qw, qx, qy, qz] = wxyz(&s.pose.orientation);
        Self {
            t: s.t,
            px: p.x,
            py: p.y,
            pz: p.z,
            qw,
            qx,
            qy,
            qz,
            vx: s.velocity.x,
            vy: s.velocity.y,
            vz: s.velocity.z,
            wx: s.omega.x,
            wy: s.omega.y,
            wz: s.omega.z,
        }
    }
}

impl TruthRow {
    pub fn pose(&self) -> Pose {
        Pose::new(Vec3::new(self.px, self.py, self.pz), quat(self.qw, self.qx, self.qy, self.qz))
    }

    pub fn velocity(&self) -> Vec3 {
        Vec3::new(self.vx, self.vy, self.vz)
    }

    pub fn omega(&self) -> Vec3 {
        Vec3::new(self.wx, self.wy, self.wz)
    }
}

pub fn state_row(index: usize, s: &StateSnapshot) -> StateRow {
    let st = &s.state;
    let ws = s.workspace.map(|p| (p.position, wxyz(&p.orientation)));
    let [qw, qx, qy, qz] = wxyz(&st.q);
    let [qvw, qvx, qvy, qvz] = wxyz(&st.q_v);
    StateRow {
        snapshot: index,
        kind: kind_name(s.kind).into(),
        t: st.t,
        ws_px: ws.map(|w| w.0.x),
        ws_py: ws.map(|w| w.0.y),
        ws_pz: ws.map(|w| w.0.z),
        ws_qw: ws.map(|w| w.1[0]),
        ws_qx: ws.map(|w| w.1[1]),
        ws_qy: ws.map(|w| w.1[2]),
        ws_qz: ws.map(|w| w.1[3]),
        rx: st.r.x,
        ry: st.r.y,
        rz: st.r.z,
        vx: st.v.x,
        vy: st.v.y,
        vz: st.v.z,
        qw,
        qx,
        qy,
        qz,
        bfx: st.b_f.x,
        bfy: st.b_f.y,
        bfz: st.b_f.z,
        bwx: st.b_w.x,
        bwy: st.b_w.y,
        bwz: st.b_w.z,
        rvx: st.r_v.x,
        rvy: st.r_v.y,
        rvz: st.r_v.z,
        qvw,
        qvx,
        qvy,
        qvz,
        wx: s.omega.x,
        wy: s.omega.y,
        wz: s.omega.z,
        tags: st.tags.len(),
        used: s.report.as_ref().map(|r| r.used.len()),
        gated: s.report.as_ref().map(|r| r.gated.len()),
        nis: s.report.as_ref().and_then(|r| r.nis),
    }
}

pub fn tag_rows(index: usize, s: &StateSnapshot) -> Vec<TagRow> {
    s.tag_variances
        .iter()
        .filter_map(|(id, var)| {
            let tag = s.state.tags.get(id)?;
            let [qw, qx, qy, qz] = wxyz(&tag.q);
            Some(TagRow {
                snapshot: index,
                kind: kind_name(s.kind).into(),
                t: s.state.t,
                id: *id,
                rx: tag.r.x,
                ry: tag.r.y,
                rz: tag.r.z,
                qw,
                qx,
                qy,
                qz,
                var_rx: var[0],
                var_ry: var[1],
                var_rz: var[2],
                var_ax: var[3],
                var_ay: var[4],
                var_az: var[5],
            })
        })
        .collect()
}

/// Rebuilds snapshots from `states.csv` and `tags.csv` rows. Update reports
/// and covariances are not recoverable.
pub fn snapshots_from_rows(states: &[StateRow], tags: &[TagRow]) -> Result<Vec<StateSnapshot>, CliError> {
    let mut by_snapshot: IndexMap<usize, Vec<&TagRow>> = IndexMap::new();
    for t in tags {
        by_snapshot.entry(t.snapshot).or_default().push(t);
    }
    states
        .iter()
        .map(|r| {
            let mut st = FilterState::new(r.t);
            st.r = Vec3::new(r.rx, r.ry, r.rz);
            st.v = Vec3::new(r.vx, r.vy, r.vz);
            st.q = quat(r.qw, r.qx, r.qy, r.qz);
            st.b_f = Vec3::new(r.bfx, r.bfy, r.bfz);
            st.b_w = Vec3::new(r.bwx, r.bwy, r.bwz);
            st.r_v = Vec3::new(r.rvx, r.rvy, r.rvz);
            st.q_v = quat(r.qvw, r.qvx, r.qvy, r.qvz);
            let mut tag_variances = Vec::new();
            for t in by_snapshot.get(&r.snapshot).into_iter().flatten() {
                st.tags.insert(t.id, TagPose { r: Vec3::new(t.rx, t.ry, t.rz), q: quat(t.qw, t.qx, t.qy, t.qz) });
                tag_variances.push((t.id, [t.var_rx, t.var_ry, t.var_rz, t.var_ax, t.var_ay, t.var_az]));
            }
            let workspace = match (r.ws_px, r.ws_py, r.ws_pz, r.ws_qw, r.ws_qx, r.ws_qy, r.ws_qz) {
                (Some(x), Some(y), Some(z), Some(w), Some(i), Some(j), Some(k)) => {
                    Some(Pose::new(Vec3::new(x, y, z), quat(w, i, j, k)))
                }
                _ => None,
            };
            Ok(StateSnapshot {
                kind: parse_kind(&r.kind)?,
                state: st,
                workspace,
                omega: Vec3::new(r.wx, r.wy, r.wz),
                tag_variances,
                report: None,
            })
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes only the header when `rows` is empty.
pub fn write_csv_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), CliError> {
    if rows.is_empty() {
        return fs::write(path, format!("{}\n", header.join(","))).map_err(|e| CliError::io(path, e));
    }
    write_csv(path, rows)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| CliError::Malformed { line: i + 2, message: format!("{}: {e}", path.display()) }))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub const STATE_COLUMNS: &[&str] = &[
    "snapshot", "kind", "t", "ws_px", "ws_py", "ws_pz", "ws_qw", "ws_qx", "ws_qy", "ws_qz", "rx", "ry", "rz", "vx",
    "vy", "vz", "qw", "qx", "qy", "qz", "bfx", "bfy", "bfz", "bwx", "bwy", "bwz", "rvx", "rvy", "rvz", "qvw", "qvx",
    "qvy", "qvz", "wx", "wy", "wz", "tags", "used", "gated", "nis",
];

pub const TAG_COLUMNS: &[&str] = &[
    "snapshot", "kind", "t", "id", "rx", "ry", "rz", "qw", "qx", "qy", "qz", "var_rx", "var_ry", "var_rz", "var_ax",
    "var_ay", "var_az",
];

/// Deterministic part of a run's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario_id: Option<String>,
    pub events: usize,
    pub imu_events: usize,
    pub detection_events: usize,
    pub snapshots: usize,
    pub rejected_events: usize,
    /// The first rejections, as `event index: reason`.
    pub rejections: Vec<String>,
    pub initialized: bool,
    pub anchor: Option<TagId>,
    pub tag_ids: Vec<TagId>,
    pub gated_measurements: usize,
    pub final_state: Option<FinalState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    pub t: f64,
    /// `_B r_BV`, `q_BV`
    pub extrinsics: PoseRecord,
    pub accel_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
}

/// Wall-clock statistics, kept apart from the summary because they vary
/// between invocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub events: usize,
    pub total_seconds: f64,
    pub mean_event_ms: f64,
    pub max_event_ms: f64,
    pub detection_events: usize,
    pub mean_detection_event_ms: f64,
}

impl Timing {
    pub fn from_run(seconds: &[f64], tags: &[usize]) -> Self {
        let total: f64 = seconds.iter().sum();
        let det: Vec<f64> = seconds.iter().zip(tags).filter(|(_, n)| **n > 0).map(|(s, _)| *s).collect();
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        Self {
            events: seconds.len(),
            total_seconds: total,
            mean_event_ms: 1e3 * mean(seconds),
            max_event_ms: 1e3 * seconds.iter().copied().fold(0.0, f64::max),
            detection_events: det.len(),
            mean_detection_event_ms: 1e3 * mean(&det),
        }
    }
}
