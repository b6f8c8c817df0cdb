//! Alignment of heterogeneous timestamped streams onto the 25 ms grid.
//!
//! Every stream is resampled by zero-order hold: a grid tick takes the
//! latest sample at or before it, never a later one, and records how stale
//! that sample is. Holds expire after a per-kind staleness bound (100 ms for
//! poses and robot state, 250 ms for camera frames by default) so a tracker
//! dropout turns into missing markers instead of a silently frozen pose.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Body, Se3};
use crate::grammar::{RobotStateSample, SpecId, Vocabulary};

pub const DEFAULT_STEP_US: i64 = 25_000;
pub const DEFAULT_POSE_STALENESS_US: i64 = 100_000;
pub const DEFAULT_FRAME_STALENESS_US: i64 = 250_000;
pub const DEFAULT_WINDOW_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum TimelineError {
    #[error("stream {stream}: timestamp {t_us} µs does not increase over {prev} µs")]
    NonMonotonic { stream: String, t_us: i64, prev: i64 },
    #[error("grid step must be positive, got {step_us} µs")]
    InvalidStep { step_us: i64 },
    #[error("window of {k} frames needs history through index {}, have only {t}", k - 1)]
    InsufficientHistory { t: usize, k: usize },
    #[error("window length must be >= 1")]
    EmptyWindow,
}

/// One timestamped record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Payload {
    Pose { from: Body, to: Body, pose: Se3 },
    RobotState { sample: RobotStateSample },
    FrameRef { frame_id: u64 },
    Event { label: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Pose,
    RobotState,
    FrameRef,
    Event,
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Pose { .. } => PayloadKind::Pose,
            Payload::RobotState { .. } => PayloadKind::RobotState,
            Payload::FrameRef { .. } => PayloadKind::FrameRef,
            Payload::Event { .. } => PayloadKind::Event,
        }
    }
}

/// Ordered `(timestamp µs, payload)` records for one source.
///
/// Timestamps are strictly increasing; all sources are assumed to share a
/// clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StampedStream {
    pub id: String,
    /// Nominal rate, informational only.
    pub rate_hz: Option<f64>,
    records: Vec<(i64, Payload)>,
}

impl StampedStream {
    pub fn new(id: impl Into<String>, rate_hz: Option<f64>) -> Self {
        Self {
            id: id.into(),
            rate_hz,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, t_us: i64, payload: Payload) -> Result<(), TimelineError> {
        if let Some(&(prev, _)) = self.records.last() {
            if t_us <= prev {
                return Err(TimelineError::NonMonotonic {
                    stream: self.id.clone(),
                    t_us,
                    prev,
                });
            }
        }
        self.records.push((t_us, payload));
        Ok(())
    }

    pub fn records(&self) -> &[(i64, Payload)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Latest record with timestamp ≤ `t_us` (zero-order hold source).
    pub fn at_or_before(&self, t_us: i64) -> Option<(i64, &Payload)> {
        let idx = self.records.partition_point(|&(t, _)| t <= t_us);
        idx.checked_sub(1).map(|i| {
            let (t, ref p) = self.records[i];
            (t, p)
        })
    }
}

/// Uniform tick grid `epoch + k * step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceGrid {
    pub epoch_us: i64,
    pub step_us: i64,
    pub len: usize,
}

impl ReferenceGrid {
    pub fn new(epoch_us: i64, step_us: i64, len: usize) -> Result<Self, TimelineError> {
        if step_us <= 0 {
            return Err(TimelineError::InvalidStep { step_us });
        }
        Ok(Self {
            epoch_us,
            step_us,
            len,
        })
    }

    /// Grid covering `[epoch, end]` inclusive.
    pub fn spanning(epoch_us: i64, end_us: i64, step_us: i64) -> Result<Self, TimelineError> {
        if step_us <= 0 {
            return Err(TimelineError::InvalidStep { step_us });
        }
        let len = if end_us < epoch_us {
            0
        } else {
            ((end_us - epoch_us) / step_us) as usize + 1
        };
        Ok(Self {
            epoch_us,
            step_us,
            len,
        })
    }

    pub fn tick_us(&self, index: usize) -> i64 {
        self.epoch_us + self.step_us * index as i64
    }

    pub fn ticks(&self) -> impl Iterator<Item = (usize, i64)> + '_ {
        (0..self.len).map(move |i| (i, self.tick_us(i)))
    }
}

/// Payload held at one grid tick, with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldSample {
    pub payload: Payload,
    pub source_t_us: i64,
    pub staleness_us: i64,
}

/// Per-grid result of resampling one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub stream_id: String,
    pub grid: ReferenceGrid,
    pub cells: Vec<Option<HeldSample>>,
    /// Set when the input stream had no records at all.
    pub warning: Option<String>,
}

/// Zero-order hold of `stream` onto `grid`.
///
/// Each tick takes the latest sample at or before it; the hold expires once
/// the sample is older than `max_staleness_us`, leaving a missing cell. An
/// empty stream yields all-missing cells plus a warning rather than an
/// error.
pub fn resample(stream: &StampedStream, grid: &ReferenceGrid, max_staleness_us: i64) -> Resampled {
    let warning = stream
        .is_empty()
        .then(|| format!("stream {} has no samples", stream.id));
    let cells = grid
        .ticks()
        .map(|(_, t)| {
            stream.at_or_before(t).and_then(|(src_t, payload)| {
                let staleness = t - src_t;
                (staleness <= max_staleness_us).then(|| HeldSample {
                    payload: payload.clone(),
                    source_t_us: src_t,
                    staleness_us: staleness,
                })
            })
        })
        .collect();
    Resampled {
        stream_id: stream.id.clone(),
        grid: *grid,
        cells,
        warning,
    }
}

/// Robot-state bins for one aligned frame, produced with the shared
/// quantization specs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedJoints {
    pub q: Vec<u32>,
    pub qd: Vec<u32>,
    pub tau: Vec<u32>,
    pub clamped: bool,
}

pub fn quantize_joints(
    vocab: &Vocabulary,
    sample: &RobotStateSample,
) -> Result<QuantizedJoints, crate::grammar::GrammarError> {
    let mut clamped = false;
    let mut run = |spec: SpecId, xs: &[f64]| -> Result<Vec<u32>, crate::grammar::GrammarError> {
        xs.iter()
            .map(|&x| {
                let (bin, c) = vocab.spec(spec).quantize(x)?;
                clamped |= c;
                Ok(bin)
            })
            .collect()
    };
    let q = run(SpecId::JointAngle, &sample.q)?;
    let qd = run(SpecId::JointVelocity, &sample.qd)?;
    let tau = run(SpecId::JointTorque, &sample.tau)?;
    Ok(QuantizedJoints { q, qd, tau, clamped })
}

/// Everything known at one grid tick: held payloads per stream with their
/// staleness, quantized robot state, the pose snapshot, and which required
/// streams were missing or too stale (`degraded`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedFrame {
    pub index: usize,
    pub t_us: i64,
    pub streams: BTreeMap<String, HeldSample>,
    pub degraded: Vec<String>,
    pub robot_tokens: Option<QuantizedJoints>,
    pub poses: Vec<(Body, Body, Se3)>,
}

impl AlignedFrame {
    pub fn is_degraded(&self) -> bool {
        !self.degraded.is_empty()
    }
}

/// Staleness bounds per payload kind plus the window length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub pose_staleness_us: i64,
    pub robot_staleness_us: i64,
    pub frame_staleness_us: i64,
    pub event_staleness_us: i64,
    pub window_len: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            pose_staleness_us: DEFAULT_POSE_STALENESS_US,
            robot_staleness_us: DEFAULT_POSE_STALENESS_US,
            frame_staleness_us: DEFAULT_FRAME_STALENESS_US,
            event_staleness_us: DEFAULT_POSE_STALENESS_US,
            window_len: DEFAULT_WINDOW_LEN,
        }
    }
}

impl AlignConfig {
    pub fn staleness_for(&self, kind: PayloadKind) -> i64 {
        match kind {
            PayloadKind::Pose => self.pose_staleness_us,
            PayloadKind::RobotState => self.robot_staleness_us,
            PayloadKind::FrameRef => self.frame_staleness_us,
            PayloadKind::Event => self.event_staleness_us,
        }
    }
}

/// Resamples every stream onto `grid` and merges the per-tick holds into
/// [`AlignedFrame`]s.
///
/// `required` lists stream ids that must be live at a tick for the frame to
/// count as clean; any of them missing puts the frame in `degraded` with the
/// offending ids. Streams pick their staleness bound by payload kind (first
/// record decides the kind).
pub fn align_streams(
    streams: &[StampedStream],
    grid: &ReferenceGrid,
    cfg: &AlignConfig,
    vocab: &Vocabulary,
    required: &[&str],
) -> Result<Vec<AlignedFrame>, crate::grammar::GrammarError> {
    let resampled: Vec<Resampled> = streams
        .iter()
        .map(|s| {
            let bound = s
                .records()
                .first()
                .map(|(_, p)| cfg.staleness_for(p.kind()))
                .unwrap_or(0);
            resample(s, grid, bound)
        })
        .collect();
    let mut frames = Vec::with_capacity(grid.len);
    for (index, t_us) in grid.ticks() {
        let mut slots = BTreeMap::new();
        let mut poses = Vec::new();
        let mut robot_tokens = None;
        for r in &resampled {
            let Some(cell) = &r.cells[index] else {
                continue;
            };
            match &cell.payload {
                Payload::Pose { from, to, pose } => poses.push((*from, *to, pose.clone())),
                Payload::RobotState { sample } => {
                    robot_tokens = Some(quantize_joints(vocab, sample)?);
                }
                _ => {}
            }
            slots.insert(r.stream_id.clone(), cell.clone());
        }
        let degraded = required
            .iter()
            .filter(|id| !slots.contains_key(**id))
            .map(|id| id.to_string())
            .collect();
        frames.push(AlignedFrame {
            index,
            t_us,
            streams: slots,
            degraded,
            robot_tokens,
            poses,
        });
    }
    Ok(frames)
}

/// The `k` most recent frames ending at grid index `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow<'a> {
    pub frames: &'a [AlignedFrame],
}

pub fn window(
    frames: &[AlignedFrame],
    t: usize,
    k: usize,
) -> Result<ObservationWindow<'_>, TimelineError> {
    if k == 0 {
        return Err(TimelineError::EmptyWindow);
    }
    if t + 1 < k || t >= frames.len() {
        return Err(TimelineError::InsufficientHistory { t, k });
    }
    Ok(ObservationWindow {
        frames: &frames[t + 1 - k..=t],
    })
}

/// A gap in a stream: no sample within the staleness bound between two
/// consecutive records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropout {
    pub start_us: i64,
    pub end_us: i64,
}

impl Dropout {
    pub fn gap_us(&self) -> i64 {
        self.end_us - self.start_us
    }
}

/// Maximal intervals `(last sample before, first sample after)` whose gap
/// exceeds `max_staleness_us`. Output is disjoint and sorted.
pub fn detect_dropouts(stream: &StampedStream, max_staleness_us: i64) -> Vec<Dropout> {
    stream
        .records()
        .windows(2)
        .filter(|w| w[1].0 - w[0].0 > max_staleness_us)
        .map(|w| Dropout {
            start_us: w[0].0,
            end_us: w[1].0,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn pose_payload(x: f64) -> Payload {
        Payload::Pose {
            from: Body::Camera,
            to: Body::EndEffector,
            pose: Se3::from_translation(Vector3::new(x, 0.0, 0.0)),
        }
    }

    fn stream_at(times: &[i64]) -> StampedStream {
        let mut s = StampedStream::new("tracker", Some(1e6 / 33_333.0));
        for &t in times {
            s.push(t, pose_payload(t as f64)).unwrap();
        }
        s
    }

    #[test]
    fn timestamps_must_strictly_increase() {
        let mut s = StampedStream::new("tracker", None);
        s.push(10, pose_payload(0.0)).unwrap();
        assert!(matches!(
            s.push(10, pose_payload(1.0)),
            Err(TimelineError::NonMonotonic { .. })
        ));
    }

    #[test]
    fn grid_times_are_epoch_plus_k_step() {
        let grid = ReferenceGrid::new(1_000, 25_000, 5).unwrap();
        let ticks: Vec<i64> = grid.ticks().map(|(_, t)| t).collect();
        assert_eq!(ticks, vec![1_000, 26_000, 51_000, 76_000, 101_000]);
        assert!(ReferenceGrid::new(0, 0, 1).is_err());
    }

    #[test]
    fn on_grid_stream_has_zero_staleness() {
        let grid = ReferenceGrid::new(0, 25_000, 8).unwrap();
        let times: Vec<i64> = (0..8).map(|k| k * 25_000).collect();
        let out = resample(&stream_at(&times), &grid, 100_000);
        for cell in &out.cells {
            assert_eq!(cell.as_ref().unwrap().staleness_us, 0);
        }
    }

    #[test]
    fn thirty_hz_on_forty_hz_grid_stays_under_one_period() {
        // 30 Hz period is 33 333 µs; staleness must stay below 33.4 ms.
        let times: Vec<i64> = (0..40).map(|k| k * 33_333).collect();
        let grid = ReferenceGrid::new(0, 25_000, 50).unwrap();
        let out = resample(&stream_at(&times), &grid, 100_000);
        for (i, cell) in out.cells.iter().enumerate() {
            let held = cell.as_ref().unwrap_or_else(|| panic!("missing at {i}"));
            assert!(held.staleness_us < 33_400, "tick {i}: {}", held.staleness_us);
        }
    }

    #[test]
    fn no_future_leakage() {
        let times: Vec<i64> = (0..100).map(|k| k * 13_777 + 311).collect();
        let grid = ReferenceGrid::new(0, 25_000, 60).unwrap();
        let out = resample(&stream_at(&times), &grid, 100_000);
        for (i, cell) in out.cells.iter().enumerate() {
            if let Some(held) = cell {
                assert!(held.source_t_us <= grid.tick_us(i));
            }
        }
    }

    #[test]
    fn hold_expires_over_a_long_gap() {
        // Samples every 25 ms, then silence for 500 ms, then resume.
        let mut times: Vec<i64> = (0..5).map(|k| k * 25_000).collect();
        times.extend((0..5).map(|k| 600_000 + k * 25_000));
        let grid = ReferenceGrid::new(0, 25_000, 29).unwrap();
        let out = resample(&stream_at(&times), &grid, 100_000);
        for (i, cell) in out.cells.iter().enumerate() {
            let t = grid.tick_us(i);
            if t <= 200_000 || t >= 600_000 {
                assert!(cell.is_some(), "expected hold at {t}");
            } else if t > 100_000 + 100_000 {
                // Gap interior beyond the staleness bound.
                assert!(cell.is_none(), "expected missing at {t}");
            }
        }
    }

    #[test]
    fn empty_stream_resamples_to_all_missing_with_warning() {
        let grid = ReferenceGrid::new(0, 25_000, 4).unwrap();
        let s = StampedStream::new("tracker", None);
        let out = resample(&s, &grid, 100_000);
        assert!(out.cells.iter().all(Option::is_none));
        assert!(out.warning.is_some());
    }

    #[test]
    fn resampling_grid_aligned_input_is_identity_on_payloads() {
        let grid = ReferenceGrid::new(0, 25_000, 6).unwrap();
        let times: Vec<i64> = (0..6).map(|k| k * 25_000).collect();
        let s = stream_at(&times);
        let out = resample(&s, &grid, 100_000);
        for (i, cell) in out.cells.iter().enumerate() {
            assert_eq!(&cell.as_ref().unwrap().payload, &s.records()[i].1);
        }
    }

    #[test]
    fn window_slices_and_bounds() {
        let grid = ReferenceGrid::new(0, 25_000, 10).unwrap();
        let vocab = Vocabulary::default();
        let times: Vec<i64> = (0..10).map(|k| k * 25_000).collect();
        let frames =
            align_streams(&[stream_at(&times)], &grid, &AlignConfig::default(), &vocab, &[])
                .unwrap();
        let w = window(&frames, 5, 1).unwrap();
        assert_eq!(w.frames.len(), 1);
        assert_eq!(w.frames[0].index, 5);

        let w4 = window(&frames, 5, 4).unwrap();
        let w5 = window(&frames, 6, 4).unwrap();
        // Sliding windows share k-1 frames.
        assert_eq!(&w4.frames[1..], &w5.frames[..3]);

        assert!(matches!(
            window(&frames, 2, 4),
            Err(TimelineError::InsufficientHistory { t: 2, k: 4 })
        ));
    }

    #[test]
    fn dropout_detection_matches_injected_gap() {
        let mut times: Vec<i64> = (0..10).map(|k| k * 25_000).collect();
        let resume = 225_000 + 1_000_000;
        times.extend((0..5).map(|k| resume + k * 25_000));
        let s = stream_at(&times);
        let gaps = detect_dropouts(&s, 100_000);
        assert_eq!(gaps, vec![Dropout { start_us: 225_000, end_us: resume }]);
        assert_eq!(gaps[0].gap_us(), 1_000_000);

        let dense = stream_at(&(0..20).map(|k| k * 25_000).collect::<Vec<_>>());
        assert!(detect_dropouts(&dense, 100_000).is_empty());
    }

    #[test]
    fn dropouts_are_disjoint_and_sorted() {
        let times = [0, 25_000, 500_000, 525_000, 1_200_000];
        let gaps = detect_dropouts(&stream_at(&times), 100_000);
        assert_eq!(gaps.len(), 2);
        assert!(gaps[0].end_us <= gaps[1].start_us);
    }

    #[test]
    fn aligned_frames_carry_quantized_robot_tokens_and_poses() {
        let vocab = Vocabulary::default();
        let grid = ReferenceGrid::new(0, 25_000, 4).unwrap();
        let mut robot = StampedStream::new("joints", Some(100.0));
        for k in 0..4i64 {
            let sample = RobotStateSample {
                q: vec![0.5, -0.5, 0.0, 1.0, -1.0, 0.25],
                qd: vec![0.0; 6],
                tau: vec![k as f64; 6],
            };
            robot
                .push(k * 25_000, Payload::RobotState { sample })
                .unwrap();
        }
        let tracker = stream_at(&[0, 25_000, 50_000, 75_000]);
        let frames = align_streams(
            &[tracker, robot],
            &grid,
            &AlignConfig::default(),
            &vocab,
            &["tracker", "joints"],
        )
        .unwrap();
        assert!(frames.iter().all(|f| !f.is_degraded()));
        let toks = frames[2].robot_tokens.as_ref().unwrap();
        let expect = vocab.spec(SpecId::JointAngle).quantize(0.5).unwrap().0;
        assert_eq!(toks.q[0], expect);
        assert_eq!(frames[2].poses.len(), 1);
        assert_eq!(frames[2].poses[0].0, Body::Camera);
    }

    #[test]
    fn missing_required_stream_marks_frames_degraded() {
        let vocab = Vocabulary::default();
        let grid = ReferenceGrid::new(0, 25_000, 4).unwrap();
        let tracker = stream_at(&[0, 25_000]);
        let frames = align_streams(
            &[tracker],
            &grid,
            &AlignConfig::default(),
            &vocab,
            &["tracker", "joints"],
        )
        .unwrap();
        // The joints stream never appears; every frame lists it.
        assert!(frames.iter().all(|f| f.degraded.contains(&"joints".to_string())));
        // Tracker holds through tick 3 (staleness 50 ms < 100 ms).
        assert_eq!(frames[3].degraded, vec!["joints".to_string()]);
    }
}
