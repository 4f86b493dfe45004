//! Decision rules for the six swim-start events.
//!
//! Every rule asks for its pose characteristic to persist over `rho` frames
//! (or smooths the statistic with a `rho`-wide median), so single erroneous
//! pose estimates cannot trigger a detection. Interpolated track entries carry
//! no observation and are skipped by all rules.

use serde::{Deserialize, Serialize};

use crate::encoding::mask_low_confidence;
use crate::error::{Error, Result};
use crate::types::{EventSet, EventTimeline, EventType, Pose, Track};

/// Keypoint indices of the 14-point swim body model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwimKeypoints {
    pub head: usize,
    pub right_hip: usize,
    pub right_knee: usize,
    pub right_ankle: usize,
    pub left_hip: usize,
    pub left_knee: usize,
    pub left_ankle: usize,
}

impl Default for SwimKeypoints {
    fn default() -> Self {
        SwimKeypoints {
            head: 0,
            right_hip: 8,
            right_knee: 9,
            right_ankle: 10,
            left_hip: 11,
            left_knee: 12,
            left_ankle: 13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Index into the per-camera track list for each event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraAssignment {
    pub jump_off: usize,
    pub dive_in: usize,
    pub first_kick: usize,
    pub d5m: usize,
    pub d10m: usize,
    pub d15m: usize,
}

impl Default for CameraAssignment {
    fn default() -> Self {
        CameraAssignment {
            jump_off: 0,
            dive_in: 0,
            first_kick: 1,
            d5m: 1,
            d10m: 2,
            d15m: 3,
        }
    }
}

impl CameraAssignment {
    pub fn camera(&self, event: EventType) -> Option<usize> {
        match event {
            EventType::JumpOff => Some(self.jump_off),
            EventType::DiveIn => Some(self.dive_in),
            EventType::FirstKick => Some(self.first_kick),
            EventType::D5m => Some(self.d5m),
            EventType::D10m => Some(self.d10m),
            EventType::D15m => Some(self.d15m),
            _ => None,
        }
    }
}

/// Calibrated x-thresholds (pixels, in the assigned camera's image) of the
/// distance markings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkingThresholds {
    pub d5m: f64,
    pub d10m: f64,
    pub d15m: f64,
}

impl Default for MarkingThresholds {
    fn default() -> Self {
        MarkingThresholds {
            d5m: 640.0,
            d10m: 640.0,
            d15m: 640.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwimRuleConfig {
    pub thresholds: MarkingThresholds,
    /// Head confidence below which the head counts as invisible.
    pub c_head: f64,
    /// Persistence length in frames.
    pub rho: usize,
    /// Knee angle (degrees) a first-kick minimum has to undercut.
    pub theta_kick: f64,
    /// Keypoints below this confidence are masked before any rule runs.
    pub c_min: f64,
    pub cameras: CameraAssignment,
    /// +1 when the athlete swims toward larger x, -1 otherwise.
    pub direction: i8,
    /// Image width and height in pixels.
    pub image_size: [f64; 2],
    pub keypoints: SwimKeypoints,
}

impl Default for SwimRuleConfig {
    fn default() -> Self {
        SwimRuleConfig {
            thresholds: MarkingThresholds::default(),
            c_head: 0.2,
            rho: 3,
            theta_kick: 120.0,
            c_min: 0.1,
            cameras: CameraAssignment::default(),
            direction: 1,
            image_size: [1280.0, 720.0],
            keypoints: SwimKeypoints::default(),
        }
    }
}

impl SwimRuleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho < 1 {
            return Err(Error::Config("rho must be at least 1".into()));
        }
        if self.direction != 1 && self.direction != -1 {
            return Err(Error::Config("direction must be +1 or -1".into()));
        }
        let w = self.image_size[0];
        for (name, v) in [
            ("d5m", self.thresholds.d5m),
            ("d10m", self.thresholds.d10m),
            ("d15m", self.thresholds.d15m),
        ] {
            if !(0.0..=w).contains(&v) {
                return Err(Error::Config(format!(
                    "threshold {name} = {v} lies outside the image width {w}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.c_head) || !(0.0..=1.0).contains(&self.c_min) {
            return Err(Error::Config("confidence thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Interior knee angle in degrees, `None` when hip, knee or ankle is masked.
pub fn knee_angle(pose: &Pose, side: Side, kp: &SwimKeypoints) -> Option<f64> {
    let (hip, knee, ankle) = match side {
        Side::Right => (kp.right_hip, kp.right_knee, kp.right_ankle),
        Side::Left => (kp.left_hip, kp.left_knee, kp.left_ankle),
    };
    let hip = pose.get(hip)?;
    let knee = pose.get(knee)?;
    let ankle = pose.get(ankle)?;
    let (ax, ay) = (hip.x - knee.x, hip.y - knee.y);
    let (bx, by) = (ankle.x - knee.x, ankle.y - knee.y);
    let na = ax.hypot(ay);
    let nb = bx.hypot(by);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let cos = ((ax * bx + ay * by) / (na * nb)).clamp(-1.0, 1.0);
    Some(cos.acos().to_degrees())
}

/// Larger knee angle of both legs.
pub fn max_knee_angle(pose: &Pose, kp: &SwimKeypoints) -> Option<f64> {
    let l = knee_angle(pose, Side::Left, kp);
    let r = knee_angle(pose, Side::Right, kp);
    match (l, r) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    }
}

/// Smaller knee angle of both legs.
pub fn min_knee_angle(pose: &Pose, kp: &SwimKeypoints) -> Option<f64> {
    let l = knee_angle(pose, Side::Left, kp);
    let r = knee_angle(pose, Side::Right, kp);
    match (l, r) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// Frame range `[start, end)` of a track clipped to a search window.
fn window(track: &Track, start: Option<usize>, end: Option<usize>) -> (usize, usize) {
    let lo = start.unwrap_or(track.t1).max(track.t1);
    let hi = end.unwrap_or(track.t2 + 1).min(track.t2 + 1);
    (lo, hi.max(lo))
}

/// Running median over a sequence, window `rho` centered on each element and
/// truncated at the ends. Even-sized windows average the two middle values.
pub fn median_filter(values: &[f64], rho: usize) -> Vec<f64> {
    let before = (rho.max(1) - 1) / 2;
    let after = rho.max(1) / 2;
    let mut buf = Vec::with_capacity(rho);
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(values.len());
            buf.clear();
            buf.extend_from_slice(&values[lo..hi]);
            buf.sort_by(f64::total_cmp);
            let n = buf.len();
            if n % 2 == 1 {
                buf[n / 2]
            } else {
                0.5 * (buf[n / 2 - 1] + buf[n / 2])
            }
        })
        .collect()
}

/// Statistic per observed frame within the window, as (frame, value).
fn series(
    track: &Track,
    lo: usize,
    hi: usize,
    stat: impl Fn(&Pose) -> Option<f64>,
) -> Vec<(usize, f64)> {
    (lo..hi)
        .filter_map(|t| {
            let e = track.at(t)?;
            if e.is_interpolated() {
                return None;
            }
            stat(&e.pose).map(|v| (t, v))
        })
        .collect()
}

/// First frame from which the head stays beyond `x_threshold` (in the swim
/// `direction`) for `rho` consecutive observations.
pub fn detect_position_event(
    track: &Track,
    x_threshold: f64,
    direction: i8,
    rho: usize,
    head: usize,
    search: (Option<usize>, Option<usize>),
) -> Option<usize> {
    let (lo, hi) = window(track, search.0, search.1);
    let xs = series(track, lo, hi, |p| p.get(head).map(|k| k.x));
    first_persistent(&xs, rho, |x| {
        if direction >= 0 {
            x >= x_threshold
        } else {
            x <= x_threshold
        }
    })
}

/// First frame from which the head confidence stays below `c_head` for `rho`
/// consecutive observed frames. A masked head has confidence 0.
pub fn detect_presence_event(
    track: &Track,
    c_head: f64,
    rho: usize,
    head: usize,
    search: (Option<usize>, Option<usize>),
) -> Option<usize> {
    let (lo, hi) = window(track, search.0, search.1);
    let scores = series(track, lo, hi, |p| p.keypoints.get(head).map(|k| k.score));
    first_persistent(&scores, rho, |s| s < c_head)
}

fn first_persistent(values: &[(usize, f64)], rho: usize, pred: impl Fn(f64) -> bool) -> Option<usize> {
    let mut run = 0;
    for (i, &(_, v)) in values.iter().enumerate() {
        if pred(v) {
            run += 1;
            if run >= rho {
                return Some(values[i + 1 - rho].0);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Frame of maximal (median-smoothed) knee extension before `search_end`.
pub fn detect_jump_off(
    track: &Track,
    search_end: Option<usize>,
    rho: usize,
    kp: &SwimKeypoints,
) -> Option<usize> {
    let (lo, hi) = window(track, None, search_end);
    let angles = series(track, lo, hi, |p| max_knee_angle(p, kp));
    if angles.len() < rho {
        return None;
    }
    let values: Vec<f64> = angles.iter().map(|&(_, v)| v).collect();
    let smooth = median_filter(&values, rho);
    let mut best = 0;
    for (i, &v) in smooth.iter().enumerate() {
        if v > smooth[best] {
            best = i;
        }
    }
    // Median smoothing flattens a sharp peak into a short plateau; the raw
    // maximum within it marks the extremum.
    let mut end = best;
    while end + 1 < smooth.len() && smooth[end + 1] == smooth[best] {
        end += 1;
    }
    let best = (best..=end).fold(best, |b, i| if values[i] > values[b] { i } else { b });
    Some(angles[best].0)
}

/// First local minimum of the smoothed knee angle after `search_start` that
/// undercuts `theta_kick`. Within a flat minimum the lowest raw angle wins,
/// the earliest on ties.
pub fn detect_first_kick(
    track: &Track,
    search_start: Option<usize>,
    theta_kick: f64,
    rho: usize,
    kp: &SwimKeypoints,
) -> Option<usize> {
    let (lo, hi) = window(track, search_start, None);
    let angles = series(track, lo, hi, |p| min_knee_angle(p, kp));
    if angles.len() < rho.max(3) {
        return None;
    }
    let values: Vec<f64> = angles.iter().map(|&(_, v)| v).collect();
    let smooth = median_filter(&values, rho);
    let mut i = 1;
    while i + 1 < smooth.len() {
        if smooth[i] < smooth[i - 1] {
            let mut j = i;
            while j + 1 < smooth.len() && smooth[j + 1] == smooth[i] {
                j += 1;
            }
            if j + 1 < smooth.len() && smooth[j + 1] > smooth[i] && smooth[i] < theta_kick {
                let low = (i..=j).fold(i, |b, u| if values[u] < values[b] { u } else { b });
                return Some(angles[low].0);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    None
}

/// Apply `mask_low_confidence` to every pose of a track.
pub fn masked_track(track: &Track, c_min: f64) -> Track {
    let mut out = track.clone();
    for e in &mut out.entries {
        e.pose = mask_low_confidence(&e.pose, c_min);
    }
    out
}

/// Run all six detectors on their assigned cameras.
///
/// Each search starts after the latest event already detected earlier in the
/// fixed order; a missing event imposes no constraint. Jump-off is searched
/// before the dive-in, which is therefore detected first.
pub fn detect_swim_start(tracks: &[Option<Track>], cfg: &SwimRuleConfig) -> EventSet {
    let kp = &cfg.keypoints;
    let masked: Vec<Option<Track>> = tracks
        .iter()
        .map(|t| t.as_ref().map(|t| masked_track(t, cfg.c_min)))
        .collect();
    let track_for = |event: EventType| -> Option<&Track> {
        cfg.cameras
            .camera(event)
            .and_then(|c| masked.get(c))
            .and_then(|t| t.as_ref())
    };

    let mut found: Vec<(EventType, Option<usize>)> = Vec::new();

    let dive_in = track_for(EventType::DiveIn)
        .and_then(|t| detect_presence_event(t, cfg.c_head, cfg.rho, kp.head, (None, None)));
    let jump_off = track_for(EventType::JumpOff)
        .and_then(|t| detect_jump_off(t, dive_in, cfg.rho, kp));
    found.push((EventType::JumpOff, jump_off));
    found.push((EventType::DiveIn, dive_in));

    let after = |found: &[(EventType, Option<usize>)]| -> Option<usize> {
        found.iter().filter_map(|(_, f)| *f).max().map(|f| f + 1)
    };

    let first_kick = track_for(EventType::FirstKick).and_then(|t| {
        detect_first_kick(t, after(&found), cfg.theta_kick, cfg.rho, kp)
    });
    found.push((EventType::FirstKick, first_kick));

    for (event, threshold) in [
        (EventType::D5m, cfg.thresholds.d5m),
        (EventType::D10m, cfg.thresholds.d10m),
        (EventType::D15m, cfg.thresholds.d15m),
    ] {
        let start = after(&found);
        let frame = track_for(event).and_then(|t| {
            detect_position_event(t, threshold, cfg.direction, cfg.rho, kp.head, (start, None))
        });
        found.push((event, frame));
    }

    let mut set = EventSet::new(0.0);
    for (event, frame) in found {
        let occ = frame.map(|f| vec![f]).unwrap_or_default();
        set.insert(EventTimeline::new(event, occ).expect("at most one occurrence"));
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Detection, Keypoint, TrackEntry};
    use proptest::prelude::*;

    fn kp() -> SwimKeypoints {
        SwimKeypoints::default()
    }

    /// Pose with the head at `head` and both legs bent to `angle` degrees.
    fn pose(head: (f64, f64, f64), angle: Option<f64>) -> Pose {
        let mut pts = vec![Keypoint::new(10.0, 10.0, 0.9); 14];
        pts[0] = Keypoint::new(head.0, head.1, head.2);
        match angle {
            Some(a) => {
                let r = (180.0 - a).to_radians();
                for (hip, knee, ankle) in [(8, 9, 10), (11, 12, 13)] {
                    pts[hip] = Keypoint::new(0.0 + 1.0, 0.0 + 1.0, 0.9);
                    pts[knee] = Keypoint::new(40.0 + 1.0, 0.0 + 1.0, 0.9);
                    pts[ankle] = Keypoint::new(40.0 + 1.0 + 40.0 * r.cos(), 1.0 + 40.0 * r.sin(), 0.9);
                }
            }
            None => {
                for i in 8..14 {
                    pts[i] = Keypoint::MASKED;
                }
            }
        }
        Pose::new(pts)
    }

    fn track_from(poses: Vec<Pose>) -> Track {
        Track::new(
            0,
            poses
                .into_iter()
                .enumerate()
                .map(|(t, p)| TrackEntry {
                    detection: Detection::new(t, 0.0, 0.0, 10.0, 10.0, 0.9).unwrap(),
                    pose: p,
                    candidate: Some(0),
                })
                .collect(),
        )
        .unwrap()
    }

    fn leg(hip: (f64, f64), knee: (f64, f64), ankle: (f64, f64)) -> Pose {
        let mut pts = vec![Keypoint::new(5.0, 5.0, 0.9); 14];
        pts[8] = Keypoint::new(hip.0, hip.1, 0.9);
        pts[9] = Keypoint::new(knee.0, knee.1, 0.9);
        pts[10] = Keypoint::new(ankle.0, ankle.1, 0.9);
        Pose::new(pts)
    }

    #[test]
    fn knee_angle_straight_and_right() {
        let p = leg((0.0, 0.0), (0.0, 1.0), (0.0, 2.0));
        assert!((knee_angle(&p, Side::Right, &kp()).unwrap() - 180.0).abs() < 1e-9);
        let p = leg((0.0, 0.0), (0.0, 1.0), (1.0, 1.0));
        assert!((knee_angle(&p, Side::Right, &kp()).unwrap() - 90.0).abs() < 1e-9);
    }

    #[test]
    fn knee_angle_masked_is_undefined() {
        let mut p = leg((0.0, 0.0), (0.0, 1.0), (1.0, 1.0));
        p.keypoints[9] = Keypoint::MASKED;
        assert_eq!(knee_angle(&p, Side::Right, &kp()), None);
    }

    #[test]
    fn position_event_linear_motion() {
        let poses = (0..30).map(|t| pose((10.0 * t as f64, 0.0, 0.9), Some(170.0))).collect();
        let tr = track_from(poses);
        assert_eq!(detect_position_event(&tr, 100.0, 1, 3, 0, (None, None)), Some(10));
        assert_eq!(detect_position_event(&tr, 1000.0, 1, 3, 0, (None, None)), None);
    }

    #[test]
    fn position_event_needs_persistence() {
        let xs = [0.0, 50.0, 120.0, 60.0, 70.0, 90.0, 110.0, 120.0, 130.0, 140.0];
        let tr = track_from(xs.iter().map(|&x| pose((x, 0.0, 0.9), None)).collect());
        assert_eq!(detect_position_event(&tr, 100.0, 1, 3, 0, (None, None)), Some(6));
    }

    #[test]
    fn presence_event_scan() {
        let scores = [0.9, 0.9, 0.1, 0.1, 0.1, 0.1, 0.1];
        let tr = track_from(scores.iter().map(|&s| pose((0.0, 0.0, s), None)).collect());
        assert_eq!(detect_presence_event(&tr, 0.2, 3, 0, (None, None)), Some(2));

        let scores = [0.9, 0.1, 0.9, 0.9, 0.1, 0.9, 0.9];
        let tr = track_from(scores.iter().map(|&s| pose((0.0, 0.0, s), None)).collect());
        assert_eq!(detect_presence_event(&tr, 0.2, 3, 0, (None, None)), None);

        let tr = track_from((0..10).map(|_| pose((0.0, 0.0, 0.9), None)).collect());
        assert_eq!(detect_presence_event(&tr, 0.2, 3, 0, (None, None)), None);
    }

    fn ramp_series() -> Vec<f64> {
        // 90 -> 175 over frames 0..=40, then down to 120 at frame 60.
        (0..=60)
            .map(|t| {
                if t <= 40 {
                    90.0 + 85.0 * t as f64 / 40.0
                } else {
                    175.0 - 55.0 * (t - 40) as f64 / 20.0
                }
            })
            .collect()
    }

    #[test]
    fn jump_off_at_peak() {
        let tr = track_from(ramp_series().into_iter().map(|a| pose((0.0, 0.0, 0.9), Some(a))).collect());
        assert_eq!(detect_jump_off(&tr, None, 3, &kp()), Some(40));
    }

    #[test]
    fn jump_off_ignores_single_spike() {
        // Plateau at 120 with a one-frame spike at frame 10, broad peak at 30..=32.
        let angles: Vec<f64> = (0..50)
            .map(|t| match t {
                10 => 179.0,
                29 | 33 => 150.0,
                30..=32 => 160.0,
                _ => 120.0,
            })
            .collect();
        let tr = track_from(angles.into_iter().map(|a| pose((0.0, 0.0, 0.9), Some(a))).collect());
        assert_eq!(detect_jump_off(&tr, None, 3, &kp()), Some(30));
        // Without smoothing the spike would win.
        assert_eq!(detect_jump_off(&tr, None, 1, &kp()), Some(10));
    }

    #[test]
    fn jump_off_without_knees() {
        let tr = track_from((0..20).map(|_| pose((0.0, 0.0, 0.9), None)).collect());
        assert_eq!(detect_jump_off(&tr, None, 3, &kp()), None);
    }

    fn kick_series() -> Vec<f64> {
        (0..160)
            .map(|t: i64| {
                let dip = |c: i64, depth: f64| (depth * (1.0 - (t - c).abs() as f64 / 6.0)).max(0.0);
                170.0 - dip(80, 70.0) - dip(120, 75.0)
            })
            .collect()
    }

    #[test]
    fn first_kick_is_first_qualifying_minimum() {
        let tr = track_from(kick_series().into_iter().map(|a| pose((0.0, 0.0, 0.9), Some(a))).collect());
        assert_eq!(detect_first_kick(&tr, None, 120.0, 3, &kp()), Some(80));
        assert_eq!(detect_first_kick(&tr, Some(100), 120.0, 3, &kp()), Some(120));
    }

    #[test]
    fn shallow_dip_and_monotone_have_no_kick() {
        let shallow: Vec<f64> = (0..60)
            .map(|t: i64| 170.0 - (20.0 * (1.0 - (t - 30).abs() as f64 / 6.0)).max(0.0))
            .collect();
        let tr = track_from(shallow.into_iter().map(|a| pose((0.0, 0.0, 0.9), Some(a))).collect());
        assert_eq!(detect_first_kick(&tr, None, 120.0, 3, &kp()), None);

        let mono: Vec<f64> = (0..60).map(|t| 170.0 - t as f64).collect();
        let tr = track_from(mono.into_iter().map(|a| pose((0.0, 0.0, 0.9), Some(a))).collect());
        assert_eq!(detect_first_kick(&tr, None, 120.0, 3, &kp()), None);
    }

    #[test]
    fn median_filter_window() {
        assert_eq!(median_filter(&[1.0, 9.0, 2.0, 3.0], 3), vec![5.0, 2.0, 3.0, 2.5]);
        assert_eq!(median_filter(&[4.0, 1.0], 1), vec![4.0, 1.0]);
    }

    fn start_tracks(kick_before_dive: bool) -> (Vec<Option<Track>>, SwimRuleConfig) {
        // cam0: knee peak at 20, head lost at 30.
        let cam0: Vec<Pose> = (0..45)
            .map(|t| {
                let a = if t <= 20 { 100.0 + 3.5 * t as f64 } else { 170.0 - 2.0 * (t - 20) as f64 };
                let s = if t < 30 { 0.9 } else { 0.05 };
                pose((100.0, 50.0, s), Some(a))
            })
            .collect();
        // cam1: kick minimum at 50 (or a spurious one at 25), marking crossed at 60.
        let cam1: Vec<Pose> = (0..100)
            .map(|t: i64| {
                let dip = |c: i64, d: f64| (d * (1.0 - (t - c).abs() as f64 / 5.0)).max(0.0);
                let spurious = if kick_before_dive { dip(25, 70.0) } else { 0.0 };
                let a = 170.0 - dip(50, 70.0) - spurious;
                pose((10.0 * t as f64, 50.0, 0.9), Some(a))
            })
            .collect();
        let cam2: Vec<Pose> = (0..120).map(|t| pose((10.0 * t as f64, 50.0, 0.9), Some(170.0))).collect();
        let cam3: Vec<Pose> = (0..140).map(|t| pose((10.0 * t as f64, 50.0, 0.9), Some(170.0))).collect();
        let cfg = SwimRuleConfig {
            thresholds: MarkingThresholds { d5m: 600.0, d10m: 900.0, d15m: 1200.0 },
            image_size: [1400.0, 720.0],
            ..SwimRuleConfig::default()
        };
        (
            vec![Some(track_from(cam0)), Some(track_from(cam1)), Some(track_from(cam2)), Some(track_from(cam3))],
            cfg,
        )
    }

    #[test]
    fn swim_start_events_in_order() {
        let (tracks, cfg) = start_tracks(false);
        let ev = detect_swim_start(&tracks, &cfg);
        assert_eq!(ev.single(EventType::DiveIn), Some(30));
        assert_eq!(ev.single(EventType::JumpOff), Some(20));
        assert_eq!(ev.single(EventType::FirstKick), Some(50));
        assert_eq!(ev.single(EventType::D5m), Some(60));
        assert_eq!(ev.single(EventType::D10m), Some(90));
        assert_eq!(ev.single(EventType::D15m), Some(120));
    }

    #[test]
    fn kick_before_dive_in_is_rejected() {
        let (tracks, cfg) = start_tracks(true);
        let ev = detect_swim_start(&tracks, &cfg);
        assert_eq!(ev.single(EventType::FirstKick), Some(50));
    }

    #[test]
    fn missing_underwater_cameras() {
        let (mut tracks, cfg) = start_tracks(false);
        tracks.truncate(1);
        let ev = detect_swim_start(&tracks, &cfg);
        assert_eq!(ev.single(EventType::JumpOff), Some(20));
        assert_eq!(ev.single(EventType::DiveIn), Some(30));
        for e in [EventType::FirstKick, EventType::D5m, EventType::D10m, EventType::D15m] {
            assert_eq!(ev.single(e), None);
        }
    }

    fn similarity(p: &Pose, angle: f64, scale: f64, tx: f64, ty: f64) -> Pose {
        let (s, c) = angle.sin_cos();
        p.map_points(|x, y| (scale * (c * x - s * y) + tx, scale * (s * x + c * y) + ty))
    }

    proptest! {
        #[test]
        fn knee_angle_similarity_invariant(a in 20.0..179.0f64, rot in -3.1..3.1f64, scale in 0.2..5.0f64,
                                           tx in -500.0..500.0f64, ty in -500.0..500.0f64) {
            let p = pose((0.0, 0.0, 0.9), Some(a));
            let q = similarity(&p, rot, scale, tx, ty);
            let va = knee_angle(&p, Side::Right, &kp()).unwrap();
            let vb = knee_angle(&q, Side::Right, &kp()).unwrap();
            prop_assert!((va - vb).abs() < 1e-6);
            prop_assert!((va - a).abs() < 1e-6);
        }

        #[test]
        fn single_frame_corruption_moves_detections_at_most_rho(frame in 0usize..140, x in -2000.0..2000.0f64,
                                                                 y in -2000.0..2000.0f64, s in 0.0..=1.0f64,
                                                                 cam in 0usize..4) {
            let (tracks, cfg) = start_tracks(false);
            let base = detect_swim_start(&tracks, &cfg);
            let mut bad = tracks.clone();
            if let Some(tr) = bad[cam].as_mut() {
                if frame < tr.len() {
                    let e = &mut tr.entries[frame];
                    e.pose = Pose::new(e.pose.keypoints.iter().map(|_| Keypoint::new(x, y, s)).collect());
                }
            }
            let ev = detect_swim_start(&bad, &cfg);
            for t in EventType::SWIM {
                let a = base.single(t).unwrap() as i64;
                let b = ev.single(t);
                prop_assert!(b.is_some(), "{t} lost");
                prop_assert!((a - b.unwrap() as i64).abs() <= cfg.rho as i64, "{t}: {a} vs {b:?}");
            }
        }
    }
}
