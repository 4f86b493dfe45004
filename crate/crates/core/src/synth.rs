//! Synthetic recordings with exactly known event timings.
//!
//! Two generators are provided: a side-view runner (athletics, K = 20) with a
//! scheduled ground-contact pattern, and a four-camera swim start (K = 14)
//! with scripted knee-angle extrema, head visibility and head trajectories.
//! [`perturb`] degrades a recording the way an imperfect pose estimator would.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::swim::{CameraAssignment, MarkingThresholds, SwimRuleConfig};
use crate::types::{
    Candidate, CameraRecording, CameraRole, Detection, EventSet, EventTimeline, EventType,
    FrameCandidates, Keypoint, Pose,
};

/// Keypoint layout of the runner (K = 20).
pub mod runner_keypoints {
    pub const HEAD: usize = 0;
    pub const NECK: usize = 1;
    pub const RIGHT_SHOULDER: usize = 2;
    pub const RIGHT_ELBOW: usize = 3;
    pub const RIGHT_WRIST: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const LEFT_ELBOW: usize = 6;
    pub const LEFT_WRIST: usize = 7;
    pub const RIGHT_HIP: usize = 8;
    pub const RIGHT_KNEE: usize = 9;
    pub const RIGHT_ANKLE: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const LEFT_KNEE: usize = 12;
    pub const LEFT_ANKLE: usize = 13;
    pub const RIGHT_HEEL: usize = 14;
    pub const RIGHT_TOE: usize = 15;
    pub const LEFT_HEEL: usize = 16;
    pub const LEFT_TOE: usize = 17;
    pub const PELVIS: usize = 18;
    pub const THORAX: usize = 19;
    pub const COUNT: usize = 20;
}

/// Keypoints of the swimmer (K = 14), matching the default swim rule layout.
pub const SWIM_KEYPOINTS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunnerParams {
    pub fps: f64,
    pub num_strides: usize,
    /// Duration of one full stride (both feet) in frames. Must be even.
    pub period: usize,
    /// Fraction of the period a foot spends on the ground.
    pub contact_fraction: f64,
    /// Forward speed of the runner in the world, px/frame.
    pub speed: f64,
    /// Horizontal camera pan added to every image coordinate, px/frame.
    pub pan: f64,
    /// Leg length (hip to ankle, straight) in pixels.
    pub scale: f64,
    /// Frame at which the right foot touches down (mod `period`). Drawn at
    /// random when absent.
    pub phase: Option<usize>,
    /// Amplitude of a vertical camera oscillation in pixels.
    pub tilt: f64,
    /// Relative amplitude of a zoom oscillation about the image center.
    pub zoom: f64,
    /// Period of the tilt and zoom oscillations in frames.
    pub camera_period: f64,
    pub image_size: [f64; 2],
}

impl Default for RunnerParams {
    fn default() -> Self {
        RunnerParams {
            fps: 200.0,
            num_strides: 4,
            period: 56,
            contact_fraction: 0.25,
            speed: 6.0,
            pan: -4.0,
            scale: 120.0,
            phase: None,
            tilt: 0.0,
            zoom: 0.0,
            camera_period: 150.0,
            image_size: [1280.0, 720.0],
        }
    }
}

impl RunnerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.contact_fraction > 0.0 && self.contact_fraction < 1.0) {
            return Err(Error::Config(format!(
                "contact fraction {} outside (0, 1)",
                self.contact_fraction
            )));
        }
        if self.period < 4 || self.period % 2 != 0 {
            return Err(Error::Config(format!(
                "stride period must be an even number of at least 4 frames, got {}",
                self.period
            )));
        }
        let c = self.contact_frames();
        if c == 0 || c >= self.period {
            return Err(Error::Config(format!(
                "contact fraction {} leaves no contact or no swing in a {}-frame period",
                self.contact_fraction, self.period
            )));
        }
        if self.num_strides == 0 {
            return Err(Error::Config("num_strides must be positive".into()));
        }
        if !(self.scale > 0.0 && self.fps > 0.0 && self.camera_period > 0.0) {
            return Err(Error::Config("scale, fps and camera_period must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.zoom.abs()) {
            return Err(Error::Config(format!("zoom amplitude {} must be below 1", self.zoom)));
        }
        if let Some(p) = self.phase {
            if p >= self.period {
                return Err(Error::Config(format!("phase {p} not below period {}", self.period)));
            }
        }
        Ok(())
    }

    /// Frames from touch-down to the last ground frame of one contact.
    pub fn contact_frames(&self) -> usize {
        (self.contact_fraction * self.period as f64).round() as usize
    }

    pub fn num_frames(&self) -> usize {
        self.num_strides * self.period
    }
}

type P2 = (f64, f64);

fn add(a: P2, b: P2) -> P2 {
    (a.0 + b.0, a.1 + b.1)
}

fn dir(angle: f64) -> P2 {
    (angle.cos(), angle.sin())
}

fn mul(a: P2, k: f64) -> P2 {
    (a.0 * k, a.1 * k)
}

/// Knee of a two-segment leg with equal segments `l`, bending toward `+x`.
fn knee_ik(hip: P2, ankle: P2, l: f64) -> P2 {
    let (dx, dy) = (ankle.0 - hip.0, ankle.1 - hip.1);
    let d = (dx * dx + dy * dy).sqrt();
    let mid = ((hip.0 + ankle.0) / 2.0, (hip.1 + ankle.1) / 2.0);
    if d == 0.0 {
        return (hip.0 + l, hip.1);
    }
    let h = (l * l - d * d / 4.0).max(0.0).sqrt();
    // Perpendicular pointing forward for a leg hanging down.
    let (px, py) = (-dy / d, dx / d);
    let sign = if px >= 0.0 { 1.0 } else { -1.0 };
    (mid.0 + sign * h * px, mid.1 + sign * h * py)
}

/// World position of one ankle and whether it is on the ground.
struct FootSchedule {
    offset: usize,
    period: usize,
    contact: usize,
}

impl FootSchedule {
    fn contact_start(&self, t: usize) -> i64 {
        let (t, off, p) = (t as i64, self.offset as i64, self.period as i64);
        off + (t - off).div_euclid(p) * p
    }

    /// Ankle `(x, lift)`; `hip_x` maps a (fractional) frame to the hip's
    /// world x-position.
    fn ankle(&self, t: usize, hip_x: impl Fn(f64) -> f64, lift: f64) -> (f64, f64, bool) {
        let b = self.contact_start(t);
        let c = self.contact as f64;
        let placement = |start: i64| hip_x(start as f64 + c / 2.0);
        let since = t as i64 - b;
        if since <= self.contact as i64 {
            (placement(b), 0.0, true)
        } else {
            let swing = (self.period - self.contact) as f64;
            let s = (since as f64 - c) / swing;
            let from = placement(b);
            let to = placement(b + self.period as i64);
            // Constant horizontal speed: the foot lands and leaves at full
            // speed, so contact changes show as kinks in the trajectory.
            (from + (to - from) * s, lift * (PI * s).sin(), false)
        }
    }

    fn events(&self, n: usize) -> (Vec<usize>, Vec<usize>) {
        let p = self.period;
        let begins = (0..n).filter(|t| t % p == self.offset % p).collect();
        let ends = (0..n)
            .filter(|t| t % p == (self.offset + self.contact) % p)
            .collect();
        (begins, ends)
    }
}

/// Simulated side-view runner with one detection per frame.
///
/// Each foot is on the ground from touch-down `b` to `b + C` inclusive, with
/// `C = round(contact_fraction * period)`; the left foot runs half a period
/// behind the right. `step_begin` is the touch-down frame and `step_end` the
/// last ground frame, for both feet. The sequence spans exactly
/// `num_strides * period` frames, so each foot contributes `num_strides`
/// events of either type.
pub fn generate_runner<R: Rng + ?Sized>(
    params: &RunnerParams,
    rng: &mut R,
) -> Result<(CameraRecording, EventSet)> {
    use runner_keypoints::*;
    params.validate()?;
    let p = params.period;
    let c = params.contact_frames();
    let phase = params.phase.unwrap_or_else(|| rng.random_range(0..p));
    let feet = [
        FootSchedule { offset: phase, period: p, contact: c },
        FootSchedule { offset: (phase + p / 2) % p, period: p, contact: c },
    ];
    let scores: Vec<f64> = (0..COUNT).map(|_| rng.random_range(0.8..0.95)).collect();
    let n = params.num_frames();
    let l = params.scale;
    let [w, h] = params.image_size;
    let ground = 0.8 * h;
    let drift = params.speed + params.pan;
    let x0 = w / 2.0 - drift * n as f64 / 2.0;
    let hip_height = 0.88 * l;
    let ankle_height = 0.05 * l;
    let hip_x = |t: f64| x0 + params.speed * t;

    let camera = |t: usize, q: P2| -> P2 {
        let tf = t as f64;
        let z = 1.0 + params.zoom * (2.0 * PI * tf / params.camera_period).sin();
        let tilt = params.tilt * (2.0 * PI * tf / params.camera_period).cos();
        let (cx, cy) = (w / 2.0, h / 2.0);
        (cx + z * (q.0 + params.pan * tf - cx), cy + z * (q.1 + tilt - cy))
    };

    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let tf = t as f64;
        let bounce = 0.03 * l * (4.0 * PI * (tf - phase as f64) / p as f64).cos();
        let pelvis = (hip_x(tf), ground - hip_height + bounce);
        let mut pts = [(0.0, 0.0); COUNT];
        pts[PELVIS] = pelvis;
        pts[THORAX] = add(pelvis, (0.08 * l, -0.45 * l));
        pts[NECK] = add(pelvis, (0.15 * l, -0.8 * l));
        pts[HEAD] = add(pts[NECK], (0.05 * l, -0.2 * l));
        pts[RIGHT_SHOULDER] = add(pts[NECK], (0.02 * l, 0.05 * l));
        pts[LEFT_SHOULDER] = add(pts[NECK], (-0.02 * l, 0.05 * l));
        let swing = 2.0 * PI * (tf - phase as f64) / p as f64;
        for (shoulder, elbow, wrist, sign) in [
            (RIGHT_SHOULDER, RIGHT_ELBOW, RIGHT_WRIST, 1.0),
            (LEFT_SHOULDER, LEFT_ELBOW, LEFT_WRIST, -1.0),
        ] {
            let a = PI / 2.0 + sign * 0.7 * swing.sin();
            pts[elbow] = add(pts[shoulder], mul(dir(a), 0.3 * l));
            pts[wrist] = add(pts[elbow], mul(dir(a - 1.3), 0.28 * l));
        }
        for (foot, (hip, knee, ankle, heel, toe, dx)) in feet.iter().zip([
            (RIGHT_HIP, RIGHT_KNEE, RIGHT_ANKLE, RIGHT_HEEL, RIGHT_TOE, 0.02),
            (LEFT_HIP, LEFT_KNEE, LEFT_ANKLE, LEFT_HEEL, LEFT_TOE, -0.02),
        ]) {
            pts[hip] = add(pelvis, (dx * l, 0.0));
            let (ax, lift, _) = foot.ankle(t, hip_x, 0.25 * l);
            let a = (ax, ground - ankle_height - lift);
            pts[ankle] = a;
            pts[knee] = knee_ik(pts[hip], a, l / 2.0);
            pts[heel] = add(a, (-0.06 * l, ankle_height));
            pts[toe] = add(a, (0.14 * l, ankle_height));
        }
        let keypoints: Vec<Keypoint> = pts
            .iter()
            .zip(&scores)
            .map(|(&q, &s)| {
                let (x, y) = camera(t, q);
                Keypoint::new(x, y, s)
            })
            .collect();
        let z = 1.0 + params.zoom * (2.0 * PI * tf / params.camera_period).sin();
        let (bx, by) = camera(t, add(pelvis, (0.05 * l, -0.25 * l)));
        let detection = Detection::new(t, bx, by, 1.0 * l * z, 2.2 * l * z, 0.95)?;
        frames.push(FrameCandidates::new(
            t,
            vec![Candidate { detection, pose: Pose::new(keypoints) }],
            1,
        ));
    }

    let (mut begins, mut ends) = (Vec::new(), Vec::new());
    for foot in &feet {
        let (b, e) = foot.events(n);
        begins.extend(b);
        ends.extend(e);
    }
    begins.sort_unstable();
    ends.sort_unstable();
    let mut events = EventSet::new(params.fps);
    events.insert(EventTimeline::new(EventType::StepBegin, begins)?);
    events.insert(EventTimeline::new(EventType::StepEnd, ends)?);
    let rec = CameraRecording {
        camera_id: "runner".into(),
        fps: params.fps,
        role: Some(CameraRole::Pannable),
        frames,
    };
    Ok((rec, events))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwimStartParams {
    pub fps: f64,
    pub image_size: [f64; 2],
    /// Head x-positions of the 5 m, 10 m and 15 m markings in the under-water
    /// cameras 1, 2 and 3.
    pub markings: [f64; 3],
    /// Frame of the jump-off, drawn from this inclusive range.
    pub jump_off: [usize; 2],
    /// Frames of push-off extension before the jump-off.
    pub push_frames: usize,
    /// Flight duration (dive-in minus jump-off), inclusive range.
    pub flight: [usize; 2],
    /// Frames the legs stay visible above water after the dive-in.
    pub submerge_frames: usize,
    /// Frames from dive-in to the first appearance in camera 1.
    pub entry_delay: usize,
    /// Glide duration from the camera-1 entry to the first kick, inclusive range.
    pub glide: [usize; 2],
    pub kick_period: usize,
    /// Under-water head speed, px/frame, inclusive range.
    pub speed: [f64; 2],
    /// Frames during which consecutive under-water cameras both see the athlete.
    pub camera_overlap: usize,
    /// Frames recorded after the athlete leaves camera 3.
    pub tail_frames: usize,
    /// Leg length above and under water, px.
    pub scale_above: f64,
    pub scale_under: f64,
    pub num_distractors: usize,
    /// Number of detection gaps per camera and their maximal length.
    pub gaps: usize,
    pub max_gap: usize,
}

impl Default for SwimStartParams {
    fn default() -> Self {
        SwimStartParams {
            fps: 50.0,
            image_size: [1280.0, 720.0],
            markings: [400.0, 800.0, 1200.0],
            jump_off: [25, 35],
            push_frames: 8,
            flight: [10, 16],
            submerge_frames: 12,
            entry_delay: 3,
            glide: [8, 18],
            kick_period: 14,
            speed: [8.0, 12.0],
            camera_overlap: 10,
            tail_frames: 20,
            scale_above: 160.0,
            scale_under: 120.0,
            num_distractors: 0,
            gaps: 0,
            max_gap: 15,
        }
    }
}

impl SwimStartParams {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("jump_off", self.jump_off),
            ("flight", self.flight),
            ("glide", self.glide),
        ];
        for (name, [lo, hi]) in ranges {
            if lo > hi {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is empty")));
            }
        }
        if self.jump_off[0] < self.push_frames + 2 {
            return Err(Error::Config("jump_off must leave room for the push-off".into()));
        }
        if self.flight[0] < 2 || self.entry_delay < 1 || self.kick_period < 10 {
            return Err(Error::Config(
                "flight needs 2+ frames, entry_delay 1+ and kick_period 10+".into(),
            ));
        }
        if self.glide[0] < 5 {
            return Err(Error::Config("glide must last at least 5 frames".into()));
        }
        if !(self.speed[0] > 0.0 && self.speed[0] <= self.speed[1]) {
            return Err(Error::Config("speed range must be positive and ordered".into()));
        }
        let w = self.image_size[0];
        if !self.markings.iter().all(|&m| m > HEAD_ENTRY_X && m < w) {
            return Err(Error::Config(format!(
                "markings must lie between {HEAD_ENTRY_X} and the image width {w}"
            )));
        }
        if self.max_gap == 0 && self.gaps > 0 {
            return Err(Error::Config("max_gap must be positive when gaps are requested".into()));
        }
        Ok(())
    }

    /// Swim rule configuration matching the generated camera layout.
    pub fn rule_config(&self) -> SwimRuleConfig {
        SwimRuleConfig {
            thresholds: MarkingThresholds {
                d5m: self.markings[0],
                d10m: self.markings[1],
                d15m: self.markings[2],
            },
            cameras: CameraAssignment::default(),
            direction: 1,
            image_size: self.image_size,
            ..SwimRuleConfig::default()
        }
    }
}

const HEAD_ENTRY_X: f64 = 20.0;
const LANE_Y: f64 = 380.0;
const DISTRACTOR_LANES: [f64; 4] = [140.0, 620.0, 220.0, 540.0];
const KICK_HALF_WIDTH: f64 = 4.0;
const KICK_DEPTH: f64 = 80.0;
const GLIDE_ANGLE: f64 = 175.0;
const DROWNED_HEAD_SCORE: f64 = 0.05;
const MIN_RUN: usize = 5;

/// A generated swim start.
#[derive(Debug, Clone)]
pub struct SwimScene {
    /// Cameras 0 (above water) to 3, all on one frame clock.
    pub recordings: Vec<CameraRecording>,
    pub events: EventSet,
    /// Athlete box per camera and frame, `None` where it is not detected.
    pub athlete: Vec<Vec<Option<Detection>>>,
}

/// Swimmer stick figure. Angles in radians, image coordinates (y down).
struct Body {
    hip: P2,
    torso: f64,
    thigh: f64,
    knee_deg: f64,
    arms: f64,
    leg: f64,
}

impl Body {
    fn points(&self) -> [P2; SWIM_KEYPOINTS] {
        let l = self.leg;
        let u = dir(self.torso);
        let perp = (-u.1, u.0);
        let neck = add(self.hip, mul(u, 0.75 * l));
        let head = add(neck, mul(u, 0.25 * l));
        let mut pts = [(0.0, 0.0); SWIM_KEYPOINTS];
        pts[0] = head;
        pts[1] = neck;
        for (i, side) in [(2, 1.0), (5, -1.0)] {
            let shoulder = add(neck, mul(perp, 0.03 * l * side));
            let elbow = add(shoulder, mul(dir(self.arms), 0.3 * l));
            pts[i] = shoulder;
            pts[i + 1] = elbow;
            pts[i + 2] = add(elbow, mul(dir(self.arms), 0.3 * l));
        }
        let bend = PI - self.knee_deg.to_radians();
        for (i, side) in [(8, 1.0), (11, -1.0)] {
            let hip = add(self.hip, mul(perp, 0.02 * l * side));
            let knee = add(hip, mul(dir(self.thigh), 0.5 * l));
            pts[i] = hip;
            pts[i + 1] = knee;
            pts[i + 2] = add(knee, mul(dir(self.thigh + bend), 0.5 * l));
        }
        pts
    }
}

/// Box of fixed size `extent` (in leg lengths) around the hip, shifted by
/// `offset`; it moves smoothly even while the limbs swing.
fn hip_box(frame: usize, body: &Body, offset: P2, extent: P2, score: f64) -> Result<Detection> {
    let l = body.leg;
    Detection::new(
        frame,
        body.hip.0 + offset.0 * l,
        body.hip.1 + offset.1 * l,
        extent.0 * l,
        extent.1 * l,
        score,
    )
}

fn candidate(body: &Body, scores: &[f64], head_score: f64, detection: Detection) -> Candidate {
    let keypoints = body
        .points()
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (&(x, y), &s))| Keypoint::new(x, y, if i == 0 { head_score } else { s }))
        .collect();
    Candidate { detection, pose: Pose::new(keypoints) }
}

fn lerp(a: f64, b: f64, u: f64) -> f64 {
    a + (b - a) * u
}

/// Knee angle of the kicking swimmer: a straight glide interrupted by
/// V-shaped dips reaching [`KICK_DEPTH`] at `first + k * period`.
fn kick_angle(t: usize, first: usize, period: usize) -> f64 {
    let mut angle = GLIDE_ANGLE;
    let mut center = first;
    while (center as f64) <= t as f64 + KICK_HALF_WIDTH {
        let dist = (t as f64 - center as f64).abs();
        let dip = (1.0 - dist / KICK_HALF_WIDTH).max(0.0);
        angle = angle.min(GLIDE_ANGLE - (GLIDE_ANGLE - KICK_DEPTH) * dip);
        center += period;
    }
    angle
}

/// First frame at which a head moving as `x0 + v (t - t0)` reaches `marking`.
pub fn crossing_frame(t0: usize, x0: f64, v: f64, marking: f64) -> usize {
    t0 + ((marking - x0) / v).ceil().max(0.0) as usize
}

/// Simulated four-camera swim start.
///
/// Camera 0 looks at the block from above water: the knee angle ramps to its
/// maximum at the jump-off and the head confidence collapses at the dive-in.
/// Cameras 1 to 3 look under water, where the head moves at constant speed
/// from left to right and crosses the configured markings; camera 1 also
/// sees the first dolphin kick as the first knee-angle dip. Distractor
/// swimmers are smaller, less confident and swim the other way.
pub fn generate_swim_start<R: Rng + ?Sized>(params: &SwimStartParams, rng: &mut R) -> Result<SwimScene> {
    params.validate()?;
    let [w, _] = params.image_size;
    let jump = rng.random_range(params.jump_off[0]..=params.jump_off[1]);
    let dive = jump + rng.random_range(params.flight[0]..=params.flight[1]);
    let v = rng.random_range(params.speed[0]..=params.speed[1]);
    let scores: Vec<f64> = (0..SWIM_KEYPOINTS).map(|_| rng.random_range(0.8..0.95)).collect();

    // Under-water camera windows on the shared clock.
    let visible = ((w - HEAD_ENTRY_X) / v).floor() as usize;
    let mut entries = [0usize; 3];
    entries[0] = dive + params.entry_delay;
    for c in 1..3 {
        entries[c] = entries[c - 1] + visible - params.camera_overlap.min(visible - 1);
    }
    let kick = entries[0] + rng.random_range(params.glide[0]..=params.glide[1]);
    let crossings: Vec<usize> = (0..3)
        .map(|c| crossing_frame(entries[c], HEAD_ENTRY_X, v, params.markings[c]))
        .collect();
    let n = entries[2] + visible + 1 + params.tail_frames;

    let mut cameras: Vec<Vec<Vec<Candidate>>> = vec![vec![Vec::new(); n]; 4];
    let mut athlete: Vec<Vec<Option<Detection>>> = vec![vec![None; n]; 4];

    // Camera 0: block, push-off, flight, entry.
    let la = params.scale_above;
    let k = la / 160.0;
    let hip0 = (250.0, 330.0);
    let push_start = jump - params.push_frames;
    let flight = (dive - jump) as f64;
    for t in 0..=(dive + params.submerge_frames).min(n - 1) {
        let body = if t <= jump {
            let u = if t < push_start {
                0.0
            } else {
                (t - push_start) as f64 / params.push_frames as f64
            };
            Body {
                hip: add(hip0, (40.0 * k * u, -20.0 * k * u)),
                torso: lerp(-40.0, -15.0, u).to_radians(),
                thigh: lerp(70.0, 100.0, u).to_radians(),
                knee_deg: lerp(95.0, 175.0, u),
                arms: lerp(100.0, -20.0, u).to_radians(),
                leg: la,
            }
        } else {
            let tau = (t - jump) as f64;
            let torso = (-15.0 + 50.0 * (tau / flight).min(1.3)).to_radians();
            Body {
                hip: add(hip0, (k * (40.0 + 14.0 * tau), k * (-20.0 - 6.0 * tau + 0.6 * tau * tau))),
                torso,
                thigh: torso + (170.0f64).to_radians(),
                knee_deg: (175.0 - 8.0 * tau).max(145.0),
                arms: torso,
                leg: la,
            }
        };
        let head_score = if t >= dive { DROWNED_HEAD_SCORE } else { scores[0] };
        let det = hip_box(t, &body, (0.2, -0.1), (1.8, 1.6), 0.95)?;
        let cand = candidate(&body, &scores, head_score, det);
        athlete[0][t] = Some(cand.detection);
        cameras[0][t].push(cand);
    }

    // Cameras 1-3: horizontal glide and dolphin kicks.
    let lu = params.scale_under;
    for c in 0..3 {
        for t in entries[c]..=entries[c] + visible {
            let head_x = HEAD_ENTRY_X + v * (t - entries[c]) as f64;
            let body = Body {
                hip: (head_x - lu, LANE_Y),
                torso: 0.0,
                thigh: PI,
                knee_deg: kick_angle(t, kick, params.kick_period),
                arms: 0.0,
                leg: lu,
            };
            let det = hip_box(t, &body, (0.1, 0.0), (2.4, 0.8), 0.9)?;
            let cand = candidate(&body, &scores, scores[0], det);
            athlete[c + 1][t] = Some(cand.detection);
            cameras[c + 1][t].push(cand);
        }
    }

    // Detection gaps inside the visible span, away from its ends and at
    // least `MIN_RUN` detected frames apart, so no gap grows beyond
    // `max_gap` and no fragment is too short to have a direction. On the
    // block the athlete stands still, and a still fragment has no swim
    // direction to merge on, so camera 0 gaps start once the push-off begins.
    for cam in 0..4 {
        let frames: Vec<usize> = (0..n).filter(|&t| athlete[cam][t].is_some()).collect();
        let (Some(&first), Some(&last)) = (frames.first(), frames.last()) else {
            continue;
        };
        let first = if cam == 0 { first.max(push_start) } else { first };
        let mut placed: Vec<(usize, usize)> = Vec::new();
        for _ in 0..params.gaps {
            for _attempt in 0..50 {
                let len = rng.random_range(1..=params.max_gap);
                if last < first + len + 10 {
                    break;
                }
                let start = rng.random_range(first + 5..=last - len - 5);
                let clear = placed
                    .iter()
                    .all(|&(a, b)| start >= b + MIN_RUN || start + len + MIN_RUN <= a);
                if clear {
                    placed.push((start, start + len));
                    break;
                }
            }
        }
        for (a, b) in placed {
            for t in a..b {
                athlete[cam][t] = None;
                cameras[cam][t].clear();
            }
        }
    }

    // Distractors swim from right to left in other lanes and are seen for
    // part of their crossing only.
    for cam in 0..4 {
        for d in 0..params.num_distractors {
            let lane = DISTRACTOR_LANES[d % DISTRACTOR_LANES.len()];
            let speed = rng.random_range(4.0..7.0);
            let crossing = ((w - HEAD_ENTRY_X) / speed).floor() as usize;
            let shown = (crossing as f64 * rng.random_range(0.3..0.8)) as usize;
            let offset = rng.random_range(0..=crossing - shown);
            let start = rng.random_range(0..n);
            let leg = 0.65 * lu;
            let det_score = rng.random_range(0.55..0.7);
            for t in start..(start + shown).min(n) {
                let head_x = w - HEAD_ENTRY_X - speed * (t - start + offset) as f64;
                let body = Body {
                    hip: (head_x + leg, lane),
                    torso: PI,
                    thigh: 0.0,
                    knee_deg: kick_angle(t, start + 5, 16),
                    arms: PI,
                    leg,
                };
                let s: Vec<f64> = scores.iter().map(|s| s * 0.8).collect();
                let det = hip_box(t, &body, (-0.1, 0.0), (2.4, 0.8), det_score)?;
                cameras[cam][t].push(candidate(&body, &s, s[0], det));
            }
        }
    }

    let recordings = cameras
        .into_iter()
        .enumerate()
        .map(|(cam, frames)| CameraRecording {
            camera_id: format!("cam{cam}"),
            fps: params.fps,
            role: Some(if cam == 0 { CameraRole::AboveWater } else { CameraRole::UnderWater }),
            frames: frames
                .into_iter()
                .enumerate()
                .map(|(t, items)| FrameCandidates::new(t, items, usize::MAX))
                .collect(),
        })
        .collect();

    let mut events = EventSet::new(params.fps);
    for (event, frame) in [
        (EventType::JumpOff, jump),
        (EventType::DiveIn, dive),
        (EventType::FirstKick, kick),
        (EventType::D5m, crossings[0]),
        (EventType::D10m, crossings[1]),
        (EventType::D15m, crossings[2]),
    ] {
        events.insert(EventTimeline::new(event, vec![frame])?);
    }
    Ok(SwimScene { recordings, events, athlete })
}

/// Pose-estimation noise applied independently to every keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Standard deviation of the coordinate jitter, px.
    pub sigma: f64,
    /// Probability that a keypoint is lost; its score then falls below
    /// `dropped_score`.
    pub dropout: f64,
    pub dropped_score: f64,
    /// Standard deviation of additive score noise.
    pub score_noise: f64,
    /// Probability of a gross error and its displacement in pixels.
    pub outlier_prob: f64,
    pub outlier_magnitude: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            sigma: 0.0,
            dropout: 0.0,
            dropped_score: 0.05,
            score_noise: 0.0,
            outlier_prob: 0.0,
            outlier_magnitude: 50.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("dropout", self.dropout),
            ("outlier_prob", self.outlier_prob),
            ("dropped_score", self.dropped_score),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        for (name, s) in [
            ("sigma", self.sigma),
            ("score_noise", self.score_noise),
            ("outlier_magnitude", self.outlier_magnitude),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{name} = {s} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Degrade every pose of a recording. Boxes, frame count and keypoint count
/// are left alone; masked keypoints stay masked.
pub fn perturb(rec: &CameraRecording, noise: &NoiseModel) -> Result<CameraRecording> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let jitter = Normal::new(0.0, noise.sigma).expect("validated sigma");
    let score_jitter = Normal::new(0.0, noise.score_noise).expect("validated score noise");
    let mut out = rec.clone();
    for frame in &mut out.frames {
        for cand in &mut frame.items {
            for kp in &mut cand.pose.keypoints {
                if kp.is_masked() {
                    continue;
                }
                let (dx, dy) = (jitter.sample(&mut rng), jitter.sample(&mut rng));
                let ds = score_jitter.sample(&mut rng);
                let dropped = rng.random_bool(noise.dropout);
                let outlier = rng.random_bool(noise.outlier_prob);
                let angle = rng.random_range(0.0..2.0 * PI);
                let low = rng.random_range(0.0..1.0) * noise.dropped_score;
                if noise.sigma > 0.0 {
                    kp.x += dx;
                    kp.y += dy;
                }
                if outlier {
                    kp.x += noise.outlier_magnitude * angle.cos();
                    kp.y += noise.outlier_magnitude * angle.sin();
                }
                if dropped {
                    kp.score = low;
                } else if noise.score_noise > 0.0 {
                    kp.score = (kp.score + ds).clamp(noise.dropped_score, 1.0);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::mask_low_confidence;
    use crate::swim::{detect_swim_start, knee_angle, Side, SwimKeypoints};
    use crate::tracker::{build_initial_tracks, track_athlete, TrackerConfig};
    use crate::types::Domain;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn runner_schedule_example() {
        let params = RunnerParams {
            period: 40,
            contact_fraction: 0.3,
            num_strides: 5,
            phase: Some(7),
            ..RunnerParams::default()
        };
        let (rec, ev) = generate_runner(&params, &mut rng(1)).unwrap();
        assert_eq!(rec.frames.len(), 200);
        let begins = ev.occurrences(EventType::StepBegin);
        let ends = ev.occurrences(EventType::StepEnd);
        assert_eq!(begins.len(), 10);
        assert_eq!(ends.len(), 10);
        // Right foot touches down at 7 + 40k, the left at 27 + 40k; both stay
        // on the ground for 12 more frames.
        assert_eq!(&begins[..4], &[7, 27, 47, 67]);
        assert_eq!(&ends[..4], &[19, 39, 59, 79]);
        assert!(begins.iter().all(|&b| ends.contains(&((b + 12) % 200)) || b + 12 >= 200));
    }

    #[test]
    fn runner_wraps_contact_at_sequence_start() {
        let params = RunnerParams { period: 40, contact_fraction: 0.3, num_strides: 3, phase: Some(35), ..RunnerParams::default() };
        let (_, ev) = generate_runner(&params, &mut rng(1)).unwrap();
        assert_eq!(ev.occurrences(EventType::StepBegin), &[15, 35, 55, 75, 95, 115]);
        assert_eq!(ev.occurrences(EventType::StepEnd), &[7, 27, 47, 67, 87, 107]);
    }

    fn ankle_x(rec: &CameraRecording, t: usize) -> f64 {
        rec.frames[t].items[0].pose.keypoints[runner_keypoints::RIGHT_ANKLE].x
    }

    #[test]
    fn foot_is_fixed_during_contact_without_pan() {
        let params = RunnerParams { pan: 0.0, phase: Some(3), ..RunnerParams::default() };
        let (rec, _) = generate_runner(&params, &mut rng(2)).unwrap();
        let c = params.contact_frames();
        for start in [3, 3 + params.period] {
            let x = ankle_x(&rec, start);
            let y = rec.frames[start].items[0].pose.keypoints[runner_keypoints::RIGHT_ANKLE].y;
            for t in start..=start + c {
                assert_eq!(ankle_x(&rec, t), x);
                assert_eq!(rec.frames[t].items[0].pose.keypoints[runner_keypoints::RIGHT_ANKLE].y, y);
            }
            assert_ne!(ankle_x(&rec, start + c + 2), x);
        }
    }

    #[test]
    fn doubling_pixel_quantities_doubles_distances() {
        let base = RunnerParams { phase: Some(5), tilt: 10.0, zoom: 0.1, ..RunnerParams::default() };
        let double = RunnerParams { scale: 2.0 * base.scale, speed: 2.0 * base.speed, pan: 2.0 * base.pan, ..base };
        let (a, _) = generate_runner(&base, &mut rng(3)).unwrap();
        let (b, _) = generate_runner(&double, &mut rng(3)).unwrap();
        for t in [0, 17, 100] {
            let pa = &a.frames[t].items[0].pose.keypoints;
            let pb = &b.frames[t].items[0].pose.keypoints;
            for i in 0..20 {
                for j in 0..i {
                    let da = (pa[i].x - pa[j].x).hypot(pa[i].y - pa[j].y);
                    let db = (pb[i].x - pb[j].x).hypot(pb[i].y - pb[j].y);
                    assert!((db - 2.0 * da).abs() < 1e-9 * db.max(1.0), "{i}-{j}: {da} {db}");
                }
            }
        }
    }

    #[test]
    fn runner_is_one_clean_track() {
        let (rec, _) = generate_runner(&RunnerParams { tilt: 15.0, zoom: 0.15, ..RunnerParams::default() }, &mut rng(4)).unwrap();
        let tracks = build_initial_tracks(&rec, &TrackerConfig::default());
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), rec.frames.len());
        for f in &rec.frames {
            let p = &f.items[0].pose;
            for side in [Side::Right, Side::Left] {
                let kp = SwimKeypoints::default();
                let a = knee_angle(p, side, &kp).unwrap();
                assert!(a > 60.0 && a <= 180.0);
            }
            assert!(p.keypoints.iter().all(|k| k.y < 720.0 && k.y > 0.0));
        }
    }

    #[test]
    fn rejects_invalid_runner_params() {
        for p in [
            RunnerParams { contact_fraction: 1.0, ..RunnerParams::default() },
            RunnerParams { contact_fraction: 0.0, ..RunnerParams::default() },
            RunnerParams { period: 2, ..RunnerParams::default() },
            RunnerParams { period: 41, ..RunnerParams::default() },
        ] {
            assert!(generate_runner(&p, &mut rng(0)).is_err());
        }
    }

    #[test]
    fn crossing_closed_form_matches_scan() {
        for (x0, v, m) in [(20.0, 10.0, 400.0), (20.0, 9.7, 800.0), (20.0, 11.3, 1200.0), (20.0, 8.0, 20.0)] {
            let closed = crossing_frame(5, x0, v, m);
            let scan = (5..).find(|&t| x0 + v * (t - 5) as f64 >= m).unwrap();
            assert_eq!(closed, scan);
        }
        assert_eq!(crossing_frame(0, 20.0, 10.0, 400.0), 38);
    }

    fn clean_scene(seed: u64, distractors: usize) -> SwimScene {
        let p = SwimStartParams { num_distractors: distractors, ..SwimStartParams::default() };
        generate_swim_start(&p, &mut rng(seed)).unwrap()
    }

    #[test]
    fn swim_scene_structure() {
        let scene = clean_scene(1, 0);
        assert_eq!(scene.recordings.len(), 4);
        let order = EventType::SWIM.map(|e| scene.events.single(e).unwrap());
        assert!(order.windows(2).all(|w| w[0] < w[1]), "{order:?}");
        for rec in &scene.recordings {
            assert!(rec.frames.iter().all(|f| f.items.len() <= 1));
            assert_eq!(rec.frames.len(), scene.recordings[0].frames.len());
        }
        // Head crossings follow the scripted linear motion.
        for (cam, event, marking) in [(1, EventType::D5m, 400.0), (2, EventType::D10m, 800.0), (3, EventType::D15m, 1200.0)] {
            let t = scene.events.single(event).unwrap();
            let head = |t: usize| scene.recordings[cam].frames[t].items[0].pose.keypoints[0].x;
            assert!(head(t) >= marking);
            assert!(head(t - 1) < marking);
        }
        let dive = scene.events.single(EventType::DiveIn).unwrap();
        let cam0 = &scene.recordings[0].frames;
        assert!(cam0[dive].items[0].pose.keypoints[0].score < 0.2);
        assert!(cam0[dive - 1].items[0].pose.keypoints[0].score > 0.2);
    }

    #[test]
    fn clean_swim_rules_hit_every_event() {
        for seed in 0..10 {
            let scene = clean_scene(seed, 2);
            let cfg = TrackerConfig { domain: Domain::Swim, ..TrackerConfig::default() };
            let tracks: Vec<_> = scene
                .recordings
                .iter()
                .map(|r| track_athlete(r, &cfg).map(|(t, _)| t))
                .collect();
            let found = detect_swim_start(&tracks, &SwimStartParams::default().rule_config());
            for e in EventType::SWIM {
                assert_eq!(found.single(e), scene.events.single(e), "seed {seed} {e:?}");
            }
        }
    }

    #[test]
    fn distractors_stay_separable() {
        let scene = clean_scene(3, 2);
        let cfg = TrackerConfig { domain: Domain::Swim, ..TrackerConfig::default() };
        for (cam, rec) in scene.recordings.iter().enumerate() {
            assert!(rec.frames.iter().all(|f| f.items.len() <= 3));
            let (track, _) = track_athlete(rec, &cfg).unwrap();
            for e in &track.entries {
                let gt = scene.athlete[cam][e.detection.frame].as_ref().unwrap();
                assert_eq!(&e.detection, gt);
            }
        }
    }

    #[test]
    fn gaps_are_bridged() {
        let p = SwimStartParams { num_distractors: 2, gaps: 2, ..SwimStartParams::default() };
        let scene = generate_swim_start(&p, &mut rng(9)).unwrap();
        let cfg = TrackerConfig { domain: Domain::Swim, ..TrackerConfig::default() };
        for (cam, rec) in scene.recordings.iter().enumerate() {
            let (track, _) = track_athlete(rec, &cfg).unwrap();
            let detectable = scene.athlete[cam].iter().filter(|d| d.is_some()).count();
            let matched = track.observed().count();
            assert_eq!(matched, detectable, "camera {cam}");
        }
    }

    #[test]
    fn perturb_identity_and_determinism() {
        let (rec, _) = generate_runner(&RunnerParams::default(), &mut rng(5)).unwrap();
        assert_eq!(perturb(&rec, &NoiseModel::default()).unwrap(), rec);
        let noise = NoiseModel { sigma: 2.0, dropout: 0.05, outlier_prob: 0.01, seed: 1, ..NoiseModel::default() };
        let a = perturb(&rec, &noise).unwrap();
        assert_eq!(a, perturb(&rec, &noise).unwrap());
        let b = perturb(&rec, &NoiseModel { seed: 2, ..noise }).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.frames.len(), rec.frames.len());
        for (fa, fr) in a.frames.iter().zip(&rec.frames) {
            assert_eq!(fa.items[0].detection, fr.items[0].detection);
            assert_eq!(fa.items[0].pose.k(), fr.items[0].pose.k());
        }
    }

    #[test]
    fn full_dropout_masks_everything() {
        let (rec, _) = generate_runner(&RunnerParams::default(), &mut rng(6)).unwrap();
        let out = perturb(&rec, &NoiseModel { dropout: 1.0, ..NoiseModel::default() }).unwrap();
        for f in &out.frames {
            assert!(mask_low_confidence(&f.items[0].pose, 0.1).is_fully_masked());
        }
    }

    #[test]
    fn rejects_invalid_noise() {
        assert!(NoiseModel { dropout: 1.5, ..NoiseModel::default() }.validate().is_err());
        assert!(NoiseModel { sigma: -1.0, ..NoiseModel::default() }.validate().is_err());
    }
}
