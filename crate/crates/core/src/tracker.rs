//! Single-athlete tracking: greedy IoU linking, gap merging and track ranking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{iou, CameraRecording, Detection, Domain, Pose, Track, TrackEntry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Linking threshold; adjacent detections of a track need IoU above it.
    pub tau_iou: f64,
    /// Largest `t1_j - t2_i` at which two tracks may still be merged.
    pub tau_gap: usize,
    /// Bound on the mean-area ratio of merged tracks.
    pub tau_scale: f64,
    pub domain: Domain,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            tau_iou: 0.75,
            tau_gap: 25,
            tau_scale: 1.5,
            domain: Domain::Athletics,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_iou > 0.0 && self.tau_iou < 1.0) {
            return Err(Error::Config(format!(
                "tau_iou must lie in (0, 1), got {}",
                self.tau_iou
            )));
        }
        if self.tau_gap < 1 {
            return Err(Error::Config("tau_gap must be at least 1".into()));
        }
        if !(self.tau_scale >= 1.0) {
            return Err(Error::Config(format!(
                "tau_scale must be at least 1, got {}",
                self.tau_scale
            )));
        }
        Ok(())
    }
}

/// Link temporally adjacent detections into maximal tracks.
///
/// Frames are processed in ascending order. Among all (open track, candidate)
/// pairs with IoU above `tau_iou`, the highest IoU is linked first, ties going
/// to the candidate with the higher detection score. Unlinked candidates open
/// new tracks.
pub fn build_initial_tracks(rec: &CameraRecording, cfg: &TrackerConfig) -> Vec<Track> {
    let mut finished: Vec<Track> = Vec::new();
    let mut open: Vec<Track> = Vec::new();

    for (t, frame) in rec.frames.iter().enumerate() {
        let mut pairs: Vec<(f64, f64, usize, usize)> = Vec::new();
        for (ti, track) in open.iter().enumerate() {
            let last = &track.last().detection;
            for (ci, cand) in frame.items.iter().enumerate() {
                let v = iou(last, &cand.detection);
                if v > cfg.tau_iou {
                    pairs.push((v, cand.detection.score, ti, ci));
                }
            }
        }
        pairs.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(b.1.total_cmp(&a.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });

        let mut track_used = vec![false; open.len()];
        let mut cand_used = vec![false; frame.items.len()];
        for &(_, _, ti, ci) in &pairs {
            if track_used[ti] || cand_used[ci] {
                continue;
            }
            track_used[ti] = true;
            cand_used[ci] = true;
            let cand = &frame.items[ci];
            let track = &mut open[ti];
            track.entries.push(TrackEntry {
                detection: Detection {
                    frame: t,
                    ..cand.detection
                },
                pose: cand.pose.clone(),
                candidate: Some(ci),
            });
            track.t2 = t;
        }

        let mut still_open = Vec::with_capacity(open.len());
        for (ti, track) in open.into_iter().enumerate() {
            if track_used[ti] {
                still_open.push(track);
            } else {
                finished.push(track);
            }
        }
        for (ci, cand) in frame.items.iter().enumerate() {
            if !cand_used[ci] {
                still_open.push(Track {
                    t1: t,
                    t2: t,
                    entries: vec![TrackEntry {
                        detection: Detection {
                            frame: t,
                            ..cand.detection
                        },
                        pose: cand.pose.clone(),
                        candidate: Some(ci),
                    }],
                });
            }
        }
        open = still_open;
    }
    finished.extend(open);
    finished.sort_by_key(|t| (t.t1, t.first().candidate));
    finished
}

fn observed_stats(track: &Track) -> (f64, f64, usize) {
    let mut area = 0.0;
    let mut score = 0.0;
    let mut n = 0;
    for e in track.observed() {
        area += e.detection.area();
        score += e.detection.score;
        n += 1;
    }
    (area, score, n)
}

fn mean_area(track: &Track) -> f64 {
    let (area, _, n) = observed_stats(track);
    area / n.max(1) as f64
}

fn mean_score(track: &Track) -> f64 {
    let (_, score, n) = observed_stats(track);
    score / n.max(1) as f64
}

fn horizontal_displacement(track: &Track) -> f64 {
    track.last().detection.cx - track.first().detection.cx
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Scale ratio of two tracks: `(|T_j| / |T_i|) * (sum area_i / sum area_j)`,
/// over observed entries.
pub fn scale_ratio(ti: &Track, tj: &Track) -> f64 {
    let (ai, _, ni) = observed_stats(ti);
    let (aj, _, nj) = observed_stats(tj);
    (nj as f64 / ni as f64) * (ai / aj)
}

/// Whether `tj` may be appended to `ti`.
pub fn can_merge(ti: &Track, tj: &Track, cfg: &TrackerConfig) -> bool {
    if tj.t1 <= ti.t2 {
        return false;
    }
    let gap = tj.t1 - ti.t2;
    if gap < 1 || gap > cfg.tau_gap {
        return false;
    }
    if iou(&ti.last().detection, &tj.first().detection) <= 0.0 {
        return false;
    }
    let ratio = scale_ratio(ti, tj);
    if !(ratio >= 1.0 / cfg.tau_scale && ratio <= cfg.tau_scale) {
        return false;
    }
    if cfg.domain == Domain::Swim
        && sign(horizontal_displacement(ti)) != sign(horizontal_displacement(tj))
    {
        return false;
    }
    true
}

fn lerp(a: f64, b: f64, u: f64) -> f64 {
    a + (b - a) * u
}

fn join(ti: Track, tj: Track) -> Track {
    let a = ti.last().detection;
    let b = tj.first().detection;
    let k = a_pose_k(&ti);
    let gap = tj.t1 - ti.t2;
    let mut entries = ti.entries;
    for step in 1..gap {
        let u = step as f64 / gap as f64;
        entries.push(TrackEntry {
            detection: Detection {
                frame: a.frame + step,
                cx: lerp(a.cx, b.cx, u),
                cy: lerp(a.cy, b.cy, u),
                w: lerp(a.w, b.w, u),
                h: lerp(a.h, b.h, u),
                score: 0.0,
            },
            pose: Pose::masked(k),
            candidate: None,
        });
    }
    entries.extend(tj.entries);
    Track {
        t1: ti.t1,
        t2: tj.t2,
        entries,
    }
}

fn a_pose_k(track: &Track) -> usize {
    track.first().pose.k()
}

/// Greedily merge temporally close tracks until no admissible pair remains.
///
/// Candidate pairs are ordered by gap size, then by the start frame of the
/// earlier track. Gap frames are filled by linear interpolation of the box and
/// carry a fully masked pose.
pub fn merge_tracks(mut tracks: Vec<Track>, cfg: &TrackerConfig) -> Vec<Track> {
    loop {
        let mut best: Option<(usize, usize, usize, usize, usize)> = None;
        for (i, ti) in tracks.iter().enumerate() {
            for (j, tj) in tracks.iter().enumerate() {
                if i == j || !can_merge(ti, tj, cfg) {
                    continue;
                }
                let key = (tj.t1 - ti.t2, ti.t1, tj.t1, i, j);
                if best.is_none_or(|b| key < b) {
                    best = Some(key);
                }
            }
        }
        let Some((_, _, _, i, j)) = best else {
            break;
        };
        let (hi, lo) = if i > j { (i, j) } else { (j, i) };
        let t_hi = tracks.remove(hi);
        let t_lo = tracks.remove(lo);
        let (ti, tj) = if i < j { (t_lo, t_hi) } else { (t_hi, t_lo) };
        let merged = join(ti, tj);
        let pos = tracks
            .iter()
            .position(|t| t.t1 > merged.t1)
            .unwrap_or(tracks.len());
        tracks.insert(pos, merged);
    }
    tracks
}

/// A track with its per-criterion ranks and their sum.
#[derive(Debug, Clone)]
pub struct RankedTrack {
    pub track: Track,
    pub ranks: Vec<usize>,
    pub total: usize,
}

/// Competition ranking ("1224"): rank 1 for the largest value, ties share the
/// smallest rank of their range.
fn rank_descending(values: &[f64]) -> Vec<usize> {
    values
        .iter()
        .map(|v| 1 + values.iter().filter(|o| *o > v).count())
        .collect()
}

/// Rank tracks and select the athlete. Returns `None` when there are no tracks.
///
/// Applicable rankings: mean box area and mean detection score for both
/// domains, plus track length (athletics) or horizontal displacement (swim).
/// The smallest rank sum wins; ties go to the earlier start frame, then to the
/// lower index.
pub fn rank_and_select(tracks: &[Track], cfg: &TrackerConfig) -> Option<(Track, Vec<RankedTrack>)> {
    if tracks.is_empty() {
        return None;
    }
    let areas: Vec<f64> = tracks.iter().map(mean_area).collect();
    let scores: Vec<f64> = tracks.iter().map(mean_score).collect();
    let third: Vec<f64> = match cfg.domain {
        Domain::Athletics => tracks.iter().map(|t| t.len() as f64).collect(),
        Domain::Swim => tracks
            .iter()
            .map(|t| horizontal_displacement(t).abs())
            .collect(),
    };
    let r = [
        rank_descending(&areas),
        rank_descending(&scores),
        rank_descending(&third),
    ];
    let mut ranked: Vec<(usize, RankedTrack)> = tracks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let ranks: Vec<usize> = r.iter().map(|rk| rk[i]).collect();
            let total = ranks.iter().sum();
            (
                i,
                RankedTrack {
                    track: t.clone(),
                    ranks,
                    total,
                },
            )
        })
        .collect();
    ranked.sort_by_key(|(i, rt)| (rt.total, rt.track.t1, *i));
    let ranked: Vec<RankedTrack> = ranked.into_iter().map(|(_, rt)| rt).collect();
    Some((ranked[0].track.clone(), ranked))
}

/// Full track → merge → rank pipeline for one camera.
pub fn track_athlete(rec: &CameraRecording, cfg: &TrackerConfig) -> Option<(Track, Vec<RankedTrack>)> {
    let initial = build_initial_tracks(rec, cfg);
    let merged = merge_tracks(initial, cfg);
    rank_and_select(&merged, cfg)
}
