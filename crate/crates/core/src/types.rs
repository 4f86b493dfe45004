//! Domain types shared by every stage of the pipeline.
//!
//! Boxes are kept in center form (`cx`, `cy`, `w`, `h`) and only converted to
//! corners inside [`iou`]. Frame indices are 0-based everywhere. A masked
//! keypoint is the in-band sentinel `(0, 0, 0)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One person candidate in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

impl Detection {
    pub fn new(frame: usize, cx: f64, cy: f64, w: f64, h: f64, score: f64) -> Result<Self> {
        let d = Detection {
            frame,
            cx,
            cy,
            w,
            h,
            score,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(Error::InvalidInput(format!(
                "detection at frame {} has non-positive extent {}x{}",
                self.frame, self.w, self.h
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidInput(format!(
                "detection at frame {} has score {} outside [0, 1]",
                self.frame, self.score
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "detection at frame {} has a non-finite center",
                self.frame
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corner form `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        let hw = self.w / 2.0;
        let hh = self.h / 2.0;
        (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)
    }

    /// Same box scaled about the image origin.
    pub fn scaled(&self, factor: f64) -> Detection {
        Detection {
            cx: self.cx * factor,
            cy: self.cy * factor,
            w: self.w * factor,
            h: self.h * factor,
            ..*self
        }
    }
}

/// Intersection over union of two axis-aligned boxes.
pub fn iou(a: &Detection, b: &Detection) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A single 2D keypoint with its confidence.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

impl Keypoint {
    pub const MASKED: Keypoint = Keypoint {
        x: 0.0,
        y: 0.0,
        score: 0.0,
    };

    pub fn new(x: f64, y: f64, score: f64) -> Self {
        Keypoint { x, y, score }
    }

    pub fn is_masked(&self) -> bool {
        *self == Keypoint::MASKED
    }
}

/// `K` keypoints of one person in one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pose {
    pub keypoints: Vec<Keypoint>,
}

impl Pose {
    pub fn new(keypoints: Vec<Keypoint>) -> Self {
        Pose { keypoints }
    }

    pub fn masked(k: usize) -> Self {
        Pose {
            keypoints: vec![Keypoint::MASKED; k],
        }
    }

    pub fn k(&self) -> usize {
        self.keypoints.len()
    }

    pub fn validate(&self, expected_k: Option<usize>) -> Result<()> {
        if let Some(k) = expected_k {
            if self.k() != k {
                return Err(Error::Schema(format!(
                    "pose has {} keypoints, configuration expects K = {}",
                    self.k(),
                    k
                )));
            }
        }
        for (i, kp) in self.keypoints.iter().enumerate() {
            if !(0.0..=1.0).contains(&kp.score) {
                return Err(Error::InvalidInput(format!(
                    "keypoint {i} has score {} outside [0, 1]",
                    kp.score
                )));
            }
        }
        Ok(())
    }

    pub fn is_fully_masked(&self) -> bool {
        self.keypoints.iter().all(Keypoint::is_masked)
    }

    pub fn get(&self, index: usize) -> Option<&Keypoint> {
        self.keypoints.get(index).filter(|kp| !kp.is_masked())
    }

    /// Scale coordinates about the image origin; masked keypoints stay masked.
    pub fn scaled(&self, factor: f64) -> Pose {
        self.map_points(|x, y| (x * factor, y * factor))
    }

    pub fn map_points(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Pose {
        Pose {
            keypoints: self
                .keypoints
                .iter()
                .map(|kp| {
                    if kp.is_masked() {
                        *kp
                    } else {
                        let (x, y) = f(kp.x, kp.y);
                        Keypoint::new(x, y, kp.score)
                    }
                })
                .collect(),
        }
    }
}

/// A detection together with its pose estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub detection: Detection,
    pub pose: Pose,
}

/// Up to `D` candidates of one frame, by descending detection score.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameCandidates {
    pub frame: usize,
    pub items: Vec<Candidate>,
}

impl FrameCandidates {
    pub fn new(frame: usize, mut items: Vec<Candidate>, max_items: usize) -> Self {
        items.sort_by(|a, b| b.detection.score.total_cmp(&a.detection.score));
        items.truncate(max_items);
        FrameCandidates { frame, items }
    }
}

/// One frame of a track. `candidate` is the index into that frame's candidate
/// list, or `None` for interpolated gap frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackEntry {
    pub detection: Detection,
    pub pose: Pose,
    pub candidate: Option<usize>,
}

impl TrackEntry {
    pub fn is_interpolated(&self) -> bool {
        self.candidate.is_none()
    }
}

/// A temporally contiguous run of detections, one per frame in `t1..=t2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub t1: usize,
    pub t2: usize,
    pub entries: Vec<TrackEntry>,
}

impl Track {
    pub fn new(t1: usize, entries: Vec<TrackEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("track without entries".into()));
        }
        let t2 = t1 + entries.len() - 1;
        for (i, e) in entries.iter().enumerate() {
            if e.detection.frame != t1 + i {
                return Err(Error::InvalidInput(format!(
                    "track entry {i} belongs to frame {}, expected {}",
                    e.detection.frame,
                    t1 + i
                )));
            }
        }
        Ok(Track { t1, t2, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn first(&self) -> &TrackEntry {
        &self.entries[0]
    }

    pub fn last(&self) -> &TrackEntry {
        &self.entries[self.entries.len() - 1]
    }

    pub fn at(&self, frame: usize) -> Option<&TrackEntry> {
        if frame < self.t1 || frame > self.t2 {
            return None;
        }
        self.entries.get(frame - self.t1)
    }

    pub fn covers(&self, frame: usize) -> bool {
        frame >= self.t1 && frame <= self.t2
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.entries.iter().map(|e| e.pose.clone()).collect()
    }

    /// Entries that come from real detections.
    pub fn observed(&self) -> impl Iterator<Item = &TrackEntry> {
        self.entries.iter().filter(|e| !e.is_interpolated())
    }
}

/// Which recording domain a pipeline runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Swim,
    #[default]
    Athletics,
}

/// Event types of both domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    JumpOff,
    DiveIn,
    FirstKick,
    D5m,
    D10m,
    D15m,
    StepBegin,
    StepEnd,
}

impl EventType {
    /// Swim-start events in their fixed temporal order.
    pub const SWIM: [EventType; 6] = [
        EventType::JumpOff,
        EventType::DiveIn,
        EventType::FirstKick,
        EventType::D5m,
        EventType::D10m,
        EventType::D15m,
    ];

    pub const STRIDE: [EventType; 2] = [EventType::StepBegin, EventType::StepEnd];

    pub fn name(self) -> &'static str {
        match self {
            EventType::JumpOff => "jump_off",
            EventType::DiveIn => "dive_in",
            EventType::FirstKick => "first_kick",
            EventType::D5m => "d5m",
            EventType::D10m => "d10m",
            EventType::D15m => "d15m",
            EventType::StepBegin => "step_begin",
            EventType::StepEnd => "step_end",
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EventType::SWIM
            .iter()
            .chain(EventType::STRIDE.iter())
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown event type '{s}'")))
    }
}

/// Sorted occurrences of one event type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventTimeline {
    pub event_type: EventType,
    occurrences: Vec<usize>,
}

impl EventTimeline {
    pub fn new(event_type: EventType, occurrences: Vec<usize>) -> Result<Self> {
        if occurrences.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "occurrences of {event_type} are not strictly increasing"
            )));
        }
        Ok(EventTimeline {
            event_type,
            occurrences,
        })
    }

    pub fn empty(event_type: EventType) -> Self {
        EventTimeline {
            event_type,
            occurrences: Vec::new(),
        }
    }

    pub fn occurrences(&self) -> &[usize] {
        &self.occurrences
    }

    pub fn len(&self) -> usize {
        self.occurrences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }
}

/// The event timelines of one recording, keyed by type.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventSet {
    pub fps: f64,
    pub timelines: BTreeMap<EventType, EventTimeline>,
}

impl EventSet {
    pub fn new(fps: f64) -> Self {
        EventSet {
            fps,
            timelines: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, timeline: EventTimeline) {
        self.timelines.insert(timeline.event_type, timeline);
    }

    pub fn get(&self, event_type: EventType) -> Option<&EventTimeline> {
        self.timelines.get(&event_type)
    }

    /// Occurrences of `event_type`, empty when the type is absent.
    pub fn occurrences(&self, event_type: EventType) -> &[usize] {
        self.get(event_type).map(|t| t.occurrences()).unwrap_or(&[])
    }

    /// First occurrence, for event types that occur once per recording.
    pub fn single(&self, event_type: EventType) -> Option<usize> {
        self.occurrences(event_type).first().copied()
    }
}

/// Placement of a camera in a multi-camera setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraRole {
    AboveWater,
    UnderWater,
    Pannable,
}

/// Per-frame candidates of one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRecording {
    pub camera_id: String,
    pub fps: f64,
    pub role: Option<CameraRole>,
    pub frames: Vec<FrameCandidates>,
}

impl CameraRecording {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn keypoint_count(&self) -> Option<usize> {
        self.frames
            .iter()
            .flat_map(|f| f.items.first())
            .map(|c| c.pose.k())
            .next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(cx: f64, cy: f64, w: f64, h: f64) -> Detection {
        Detection::new(0, cx, cy, w, h, 0.9).unwrap()
    }

    #[test]
    fn iou_identical_is_one() {
        let a = det(5.0, 5.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        assert_eq!(iou(&det(0.0, 0.0, 2.0, 2.0), &det(10.0, 10.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn iou_half_shifted() {
        let v = iou(&det(5.0, 5.0, 10.0, 10.0), &det(10.0, 5.0, 10.0, 10.0));
        assert!((v - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_detections_rejected() {
        assert!(Detection::new(0, 0.0, 0.0, 0.0, 1.0, 0.5).is_err());
        assert!(Detection::new(0, 0.0, 0.0, 1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn timeline_requires_strict_order() {
        assert!(EventTimeline::new(EventType::StepBegin, vec![1, 1]).is_err());
        assert!(EventTimeline::new(EventType::StepBegin, vec![3, 1]).is_err());
        assert!(EventTimeline::new(EventType::StepBegin, vec![1, 3]).is_ok());
    }

    #[test]
    fn event_names_roundtrip() {
        for t in EventType::SWIM.iter().chain(EventType::STRIDE.iter()) {
            assert_eq!(t.name().parse::<EventType>().unwrap(), *t);
        }
    }

    fn arb_box() -> impl Strategy<Value = Detection> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64)
            .prop_map(|(cx, cy, w, h)| det(cx, cy, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            let ba = iou(&b, &a);
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            if ab == 1.0 {
                prop_assert_eq!(a.corners(), b.corners());
            }
        }
    }
}
