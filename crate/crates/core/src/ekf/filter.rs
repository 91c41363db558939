use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::init::{initialize, InitConfig};
use super::propagation::{propagate, MAX_DT};
use super::state::{idx, symmetrize, Covariance, FilterState};
use super::update::{update, MeasurementModel, UpdateReport};
use super::workspace::{AnchorFrame, KnownTagMap};
use super::EkfError;
use crate::camera::PinholeIntrinsics;
use crate::geometry::{Pose, Vec3};
use crate::models::{ImuSample, NoiseParameters, TagDetection, TagId, TagSizes};
use crate::tag_init::estimate_tag_pose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub noise: NoiseParameters,
    pub intrinsics: PinholeIntrinsics,
    pub tag_sizes: TagSizes,
    pub init: InitConfig,
    pub augment: AugmentConfig,
    /// Per-tag χ² gate on the corner innovation.
    pub gate: bool,
    /// Tag that defines the workspace frame; the first tracked tag if unset.
    pub anchor: Option<TagId>,
    /// Anchor updates after which the workspace rotation is frozen.
    pub anchor_freeze_updates: usize,
    pub known_tags: KnownTagMap,
    /// Position and attitude standard deviation after aligning to a known
    /// tag.
    pub known_align_sigma_position: f64,
    pub known_align_sigma_attitude: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            noise: NoiseParameters::default(),
            intrinsics: PinholeIntrinsics {
                fx: 460.0,
                fy: 460.0,
                cx: 376.0,
                cy: 240.0,
                width: 752,
                height: 480,
            },
            tag_sizes: TagSizes::default(),
            init: InitConfig::default(),
            augment: AugmentConfig::default(),
            gate: false,
            anchor: None,
            anchor_freeze_updates: 10,
            known_tags: KnownTagMap::new(),
            known_align_sigma_position: 0.05,
            known_align_sigma_attitude: 0.05,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), EkfError> {
        self.noise.validate()?;
        self.intrinsics
            .validate()
            .map_err(|e| EkfError::InvalidConfig(e.to_string()))?;
        self.tag_sizes.geometry(0)?;
        for (id, s) in &self.tag_sizes.sizes {
            self.tag_sizes.geometry(*id).map_err(|_| EkfError::InvalidConfig(format!("tag {id} size {s}")))?;
        }
        let a = &self.augment;
        if !(a.sigma_position > 0.0 && a.sigma_rotation > 0.0 && a.ambiguous_factor >= 1.0) {
            return Err(EkfError::InvalidConfig("augmentation sigmas must be positive".into()));
        }
        if let Some(anchor) = self.anchor {
            if self.known_tags.contains(anchor) {
                return Err(EkfError::InvalidConfig(format!("anchor {anchor} is a known tag")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Imu(ImuSample),
    /// All tag detections of one image.
    Detections { t: f64, dets: Vec<TagDetection> },
}

impl Event {
    pub fn t(&self) -> f64 {
        match self {
            Event::Imu(s) => s.t,
            Event::Detections { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SnapshotKind {
    /// Filter just initialized from the static window.
    Init,
    /// After an IMU propagation.
    Imu,
    /// Propagated to an image timestamp, before the update.
    Prior,
    /// After update and augmentation.
    Update,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSnapshot {
    pub kind: SnapshotKind,
    pub state: FilterState,
    /// Body pose in the workspace frame, once it is defined.
    pub workspace: Option<Pose>,
    /// Bias-corrected rotational rate, body frame.
    pub omega: Vec3,
    /// Diagonal of each tag's 6×6 covariance block; filled for `Prior` and
    /// `Update` snapshots only.
    pub tag_variances: Vec<(TagId, [f64; 6])>,
    pub report: Option<UpdateReport>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub snapshots: Vec<StateSnapshot>,
    /// Index of each rejected event with the reason.
    pub rejected: Vec<(usize, EkfError)>,
    /// Wall-clock processing time per event, seconds.
    pub event_seconds: Vec<f64>,
    /// Number of tag detections per event, zero for IMU events.
    pub event_tags: Vec<usize>,
}

/// Event-driven filter: buffers the static window, initializes, then
/// propagates on IMU samples and updates on detection batches.
#[derive(Debug, Clone)]
pub struct Filter {
    config: FilterConfig,
    model: MeasurementModel,
    state: Option<FilterState>,
    cov: Covariance,
    init_buffer: Vec<ImuSample>,
    last_imu: Option<ImuSample>,
    last_t: f64,
    anchor: Option<AnchorFrame>,
    aligned: bool,
}

impl Filter {
    pub fn new(config: FilterConfig) -> Result<Self, EkfError> {
        config.validate()?;
        let model = MeasurementModel {
            intrinsics: config.intrinsics,
            sizes: config.tag_sizes.clone(),
            known: config.known_tags.clone(),
        };
        Ok(Self {
            config,
            model,
            state: None,
            cov: Covariance::zeros(0, 0),
            init_buffer: Vec::new(),
            last_imu: None,
            last_t: f64::NEG_INFINITY,
            anchor: None,
            aligned: false,
        })
    }

    /// Starts from a given state and covariance instead of a static window.
    pub fn with_state(config: FilterConfig, state: FilterState, cov: Covariance) -> Result<Self, EkfError> {
        let mut f = Self::new(config)?;
        if cov.nrows() != state.dim() || cov.ncols() != state.dim() {
            return Err(EkfError::InvalidConfig("covariance does not match the state".into()));
        }
        f.last_t = state.t;
        f.state = Some(state);
        f.cov = cov;
        Ok(f)
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&FilterState> {
        self.state.as_ref()
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    pub fn anchor(&self) -> Option<&AnchorFrame> {
        self.anchor.as_ref()
    }

    pub fn is_initialized(&self) -> bool {
        self.state.is_some()
    }

    /// Body pose in the workspace frame: the known-tag frame once aligned,
    /// otherwise the anchor-tag frame.
    pub fn workspace_pose(&self) -> Result<Pose, EkfError> {
        let state = self.state.as_ref().ok_or(EkfError::NotInitialized)?;
        if self.aligned {
            return Ok(Pose::new(state.q * state.r, state.q));
        }
        self.anchor.as_ref().ok_or(EkfError::AnchorNotVisibleYet)?.body_pose(state)
    }

    pub fn process(&mut self, event: &Event) -> Result<Vec<StateSnapshot>, EkfError> {
        let t = event.t();
        if !t.is_finite() || t < self.last_t {
            return Err(EkfError::NonMonotonicTime { t, state_t: self.last_t });
        }
        self.last_t = t;
        match event {
            Event::Imu(sample) => self.on_imu(sample),
            Event::Detections { t, dets } => self.on_detections(*t, dets),
        }
    }

    /// Processes every event, collecting snapshots, rejections and timing.
    pub fn run<'a>(&mut self, events: impl IntoIterator<Item = &'a Event>) -> RunOutput {
        let mut out = RunOutput::default();
        for (i, e) in events.into_iter().enumerate() {
            let start = Instant::now();
            let res = self.process(e);
            out.event_seconds.push(start.elapsed().as_secs_f64());
            out.event_tags.push(match e {
                Event::Imu(_) => 0,
                Event::Detections { dets, .. } => dets.len(),
            });
            match res {
                Ok(s) => out.snapshots.extend(s),
                Err(err) => out.rejected.push((i, err)),
            }
        }
        out
    }

    fn on_imu(&mut self, sample: &ImuSample) -> Result<Vec<StateSnapshot>, EkfError> {
        if !sample.is_finite() {
            return Err(EkfError::InvalidConfig(format!("non-finite IMU sample at t={}", sample.t)));
        }
        if self.state.is_none() {
            self.init_buffer.push(*sample);
            if self.init_buffer.len() < self.config.init.static_samples.max(1) {
                return Ok(Vec::new());
            }
            let res = initialize(&self.init_buffer, &self.config.init, self.config.noise.gravity);
            let (state, cov) = match res {
                Ok(v) => v,
                Err(e) => {
                    // slide the window and try again with the next sample
                    self.init_buffer.remove(0);
                    return Err(e);
                }
            };
            self.init_buffer.clear();
            self.state = Some(state);
            self.cov = cov;
            self.last_imu = Some(*sample);
            return Ok(vec![self.snapshot(SnapshotKind::Init, None)]);
        }
        let res = self.propagate_to(sample.t, Some(sample));
        self.last_imu = Some(*sample);
        res?;
        Ok(vec![self.snapshot(SnapshotKind::Imu, None)])
    }

    /// Propagates to `t` with the mean of the rates at both interval ends,
    /// linearly interpolated between the last sample and `next`. Without
    /// `next` the last sample is held.
    fn propagate_to(&mut self, t: f64, next: Option<&ImuSample>) -> Result<(), EkfError> {
        let state = self.state.as_mut().ok_or(EkfError::NotInitialized)?;
        let Some(last) = self.last_imu else {
            return Ok(());
        };
        if t - state.t > MAX_DT {
            // a data gap: skip ahead rather than extrapolating over it
            let dt = t - state.t;
            state.t = t;
            return Err(EkfError::ExcessiveDt(dt));
        }
        let held = match next {
            Some(next) if next.t > last.t => {
                let u = ((state.t - last.t) / (next.t - last.t)).clamp(0.0, 1.0);
                let start_gyro = last.gyro.lerp(&next.gyro, u);
                let start_accel = last.accel.lerp(&next.accel, u);
                ImuSample::new(t, (start_gyro + next.gyro) * 0.5, (start_accel + next.accel) * 0.5)
            }
            _ => ImuSample::new(t, last.gyro, last.accel),
        };
        propagate(state, &mut self.cov, &held, &self.config.noise)
    }

    fn on_detections(&mut self, t: f64, dets: &[TagDetection]) -> Result<Vec<StateSnapshot>, EkfError> {
        if self.state.is_none() {
            return Err(EkfError::NotInitialized);
        }
        for d in dets {
            if d.t != t {
                return Err(EkfError::InvalidConfig(format!("detection of tag {} at t={} in batch t={t}", d.tag_id, d.t)));
            }
            d.validate(&self.config.intrinsics)?;
        }
        self.propagate_to(t, None)?;
        let mut out = vec![self.snapshot(SnapshotKind::Prior, None)];

        if !self.aligned {
            if let Some(det) = dets.iter().find(|d| self.model.known.contains(d.tag_id)) {
                self.align_to_known(det)?;
            }
        }

        let state = self.state.as_mut().expect("checked above");
        let mut report = update(state, &mut self.cov, dets, &self.model, &self.config.noise, self.config.gate)?;
        for det in report.unknown.clone() {
            let geom = self.model.geometry(det.tag_id)?;
            match augment(state, &mut self.cov, &det, &geom, &self.config.intrinsics, &self.config.augment) {
                Ok(_) => {}
                Err(e @ EkfError::TagCapExceeded(_)) => log::debug!("tag {} not added: {e}", det.tag_id),
                Err(e) => log::debug!("tag {} not added: {e}", det.tag_id),
            }
        }
        report.unknown.retain(|d| !state.tags.contains_key(&d.tag_id));
        self.update_anchor(&report);
        out.push(self.snapshot(SnapshotKind::Update, Some(report)));
        Ok(out)
    }

    fn update_anchor(&mut self, report: &UpdateReport) {
        if self.aligned {
            return;
        }
        let state = self.state.as_ref().expect("initialized");
        if self.anchor.is_none() {
            let id = match self.config.anchor {
                Some(id) => Some(id),
                None => state.tags.keys().next().copied(),
            };
            if let Some(id) = id {
                self.anchor = AnchorFrame::new(state, id).ok();
            }
            return;
        }
        let anchor = self.anchor.as_mut().expect("checked above");
        if anchor.frozen || !report.used.contains(&anchor.tag_id) {
            return;
        }
        anchor.updates += 1;
        // refresh cannot fail: the anchor tag was just updated
        let _ = anchor.refresh(state);
        if anchor.updates >= self.config.anchor_freeze_updates {
            anchor.freeze();
        }
    }

    /// Resets position and attitude from a single-frame pose of a known tag,
    /// making the filter world frame the known-tag frame.
    fn align_to_known(&mut self, det: &TagDetection) -> Result<(), EkfError> {
        let state = self.state.as_mut().expect("initialized");
        let geom = self.model.geometry(det.tag_id)?;
        let est = estimate_tag_pose(det, &geom, &self.config.intrinsics)?;
        let tag = self.model.known.pose(det.tag_id).expect("known tag");
        let q_wv = tag.orientation * est.q;
        let p_v = tag.position - q_wv * est.r;
        let q_wb = q_wv * state.q_v;
        let p_b = p_v - q_wb * state.r_v;
        state.q = q_wb;
        state.r = q_wb.inverse() * p_b;
        let n = state.dim();
        for o in [idx::R, idx::Q] {
            for i in o..o + 3 {
                for j in 0..n {
                    self.cov[(i, j)] = 0.0;
                    self.cov[(j, i)] = 0.0;
                }
            }
        }
        let (sp, sa) = (self.config.known_align_sigma_position, self.config.known_align_sigma_attitude);
        for i in 0..3 {
            self.cov[(idx::R + i, idx::R + i)] = sp * sp;
            self.cov[(idx::Q + i, idx::Q + i)] = sa * sa;
        }
        symmetrize(&mut self.cov);
        self.aligned = true;
        self.anchor = None;
        Ok(())
    }

    fn snapshot(&self, kind: SnapshotKind, report: Option<UpdateReport>) -> StateSnapshot {
        let state = self.state.clone().expect("initialized");
        let omega = self.last_imu.map_or(Vec3::zeros(), |s| s.gyro - state.b_w);
        let tag_variances = if matches!(kind, SnapshotKind::Prior | SnapshotKind::Update) {
            state
                .tags
                .keys()
                .enumerate()
                .map(|(k, id)| {
                    let o = FilterState::tag_offset(k);
                    (*id, std::array::from_fn(|i| self.cov[(o + i, o + i)]))
                })
                .collect()
        } else {
            Vec::new()
        };
        StateSnapshot {
            kind,
            workspace: self.workspace_pose().ok(),
            state,
            omega,
            tag_variances,
            report,
        }
    }
}
