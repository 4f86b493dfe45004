//! Event matching, PCK, detection AP and false-positive rate.

use std::collections::BTreeMap;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::types::{iou, Detection, EventSet, EventType, Pose, Track};

/// Outcome of matching one predicted timeline against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Sum of `|pred - gt|` over true positives, in frames.
    pub abs_dev: f64,
}

impl MatchCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn mean_abs_dev(&self) -> Option<f64> {
        (self.tp > 0).then(|| self.abs_dev / self.tp as f64)
    }
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, o: MatchCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.abs_dev += o.abs_dev;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Assign every prediction to its nearest ground-truth event (the earlier one
/// on ties). Per ground-truth event only the closest assigned prediction can
/// be a true positive, and only within `dt` frames.
pub fn match_events(pred: &[usize], gt: &[usize], dt: usize) -> MatchCounts {
    let mut best: Vec<Option<usize>> = vec![None; gt.len()];
    let mut fp = 0;
    for &p in pred {
        let Some(g) = nearest(gt, p) else {
            fp += 1;
            continue;
        };
        let d = p.abs_diff(gt[g]);
        match best[g] {
            Some(prev) if prev <= d => fp += 1,
            Some(_) => {
                fp += 1;
                best[g] = Some(d);
            }
            None => best[g] = Some(d),
        }
    }
    let mut counts = MatchCounts {
        fp,
        ..MatchCounts::default()
    };
    for d in best.into_iter().flatten() {
        if d <= dt {
            counts.tp += 1;
            counts.abs_dev += d as f64;
        } else {
            counts.fp += 1;
        }
    }
    counts.fn_ = gt.len() - counts.tp;
    counts
}

fn nearest(sorted: &[usize], p: usize) -> Option<usize> {
    if sorted.is_empty() {
        return None;
    }
    let i = sorted.partition_point(|&g| g < p);
    match (i.checked_sub(1), (i < sorted.len()).then_some(i)) {
        (Some(a), Some(b)) => Some(if p - sorted[a] <= sorted[b] - p { a } else { b }),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    }
}

/// One row of a [`MatchReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    /// Event type name, or `all` for the pooled counts of every type.
    pub event: String,
    pub dt: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mean_abs_dev_frames: Option<f64>,
    pub mean_abs_dev_ms: Option<f64>,
}

impl MatchEntry {
    fn new(event: String, dt: usize, c: &MatchCounts, fps: f64) -> Self {
        let dev = c.mean_abs_dev();
        MatchEntry {
            event,
            dt,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            mean_abs_dev_frames: dev,
            mean_abs_dev_ms: dev.filter(|_| fps > 0.0).map(|d| 1000.0 * d / fps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchReport {
    pub entries: Vec<MatchEntry>,
}

impl MatchReport {
    pub fn get(&self, event: &str, dt: usize) -> Option<&MatchEntry> {
        self.entries.iter().find(|e| e.event == event && e.dt == dt)
    }

    /// F1 of the counts pooled over all event types.
    pub fn f1(&self, dt: usize) -> Option<f64> {
        self.get("all", dt).map(|e| e.f1)
    }
}

/// Match predicted against ground-truth event sets of several recordings,
/// summing counts per event type and over all types.
pub fn evaluate_events(
    pred: &[EventSet],
    gt: &[EventSet],
    types: &[EventType],
    dts: &[usize],
) -> MatchReport {
    let fps = gt.first().map(|g| g.fps).unwrap_or(0.0);
    let mut entries = Vec::new();
    for &dt in dts {
        let mut all = MatchCounts::default();
        let mut per_type: BTreeMap<EventType, MatchCounts> = BTreeMap::new();
        for (p, g) in pred.iter().zip(gt) {
            for &ty in types {
                let c = match_events(p.occurrences(ty), g.occurrences(ty), dt);
                *per_type.entry(ty).or_default() += c;
                all += c;
            }
        }
        for (ty, c) in &per_type {
            entries.push(MatchEntry::new(ty.name().into(), dt, c, fps));
        }
        entries.push(MatchEntry::new("all".into(), dt, &all, fps));
    }
    MatchReport { entries }
}

/// Keep only occurrences inside `range`.
pub fn restrict(events: &EventSet, range: std::ops::Range<usize>) -> EventSet {
    let mut out = EventSet::new(events.fps);
    for tl in events.timelines.values() {
        let occ = tl
            .occurrences()
            .iter()
            .copied()
            .filter(|t| range.contains(t))
            .collect();
        out.insert(crate::types::EventTimeline::new(tl.event_type, occ).expect("subset stays sorted"));
    }
    out
}

/// Percentage of visible ground-truth keypoints whose prediction lies within
/// `alpha` times the longer side of the visible ground-truth bounding box.
/// A keypoint is visible when it is not masked; masked predictions count as
/// misses. Returns 0 when no keypoint is visible.
pub fn pck(pred: &[Pose], gt: &[Pose], alpha: f64) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        let visible: Vec<usize> = (0..g.k()).filter(|&i| g.get(i).is_some()).collect();
        if visible.is_empty() {
            continue;
        }
        let xs = visible.iter().map(|&i| g.keypoints[i].x);
        let ys = visible.iter().map(|&i| g.keypoints[i].y);
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            hi - lo
        };
        let size = span(&mut xs.into_iter()).max(span(&mut ys.into_iter()));
        let radius = alpha * size;
        for &i in &visible {
            total += 1;
            if let Some(q) = p.get(i) {
                let gk = &g.keypoints[i];
                if (q.x - gk.x).hypot(q.y - gk.y) <= radius {
                    correct += 1;
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

/// Average precision (percent) with all-point interpolation. Detections are
/// ranked by score over all frames and greedily matched to the unmatched
/// ground-truth box of their frame with the highest IoU.
pub fn average_precision(dets: &[Detection], gt: &[Detection], iou_thresh: f64) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let mut by_frame: BTreeMap<usize, Vec<(&Detection, bool)>> = BTreeMap::new();
    for g in gt {
        by_frame.entry(g.frame).or_default().push((g, false));
    }
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(order.len());
    for (rank, d) in order.iter().enumerate() {
        if let Some(cands) = by_frame.get_mut(&d.frame) {
            let best = cands
                .iter()
                .enumerate()
                .filter(|(_, (_, used))| !used)
                .map(|(i, (g, _))| (i, iou(d, g)))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((i, v)) = best {
                if v >= iou_thresh {
                    cands[i].1 = true;
                    tp += 1;
                }
            }
        }
        curve.push((tp as f64 / gt.len() as f64, tp as f64 / (rank + 1) as f64));
    }
    let mut ap = 0.0;
    let mut best_prec = 0.0f64;
    let mut prev_recall = curve.last().map(|c| c.0).unwrap_or(0.0);
    for &(recall, precision) in curve.iter().rev() {
        if recall < prev_recall {
            ap += (prev_recall - recall) * best_prec;
            prev_recall = recall;
        }
        best_prec = best_prec.max(precision);
    }
    ap += prev_recall * best_prec;
    100.0 * ap
}

/// Percentage of `negatives` (frames without the athlete) on which the track
/// emits a box, interpolated boxes included.
pub fn fpr(track: Option<&Track>, negatives: &[usize]) -> f64 {
    if negatives.is_empty() {
        return 0.0;
    }
    let hits = match track {
        Some(t) => negatives.iter().filter(|&&f| t.covers(f)).count(),
        None => 0,
    };
    100.0 * hits as f64 / negatives.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Keypoint, TrackEntry};
    use proptest::prelude::*;

    #[test]
    fn matching_example() {
        let c = match_events(&[10, 20, 31], &[10, 21, 40], 1);
        assert_eq!((c.tp, c.fp, c.fn_), (2, 1, 1));
        for v in [c.precision(), c.recall(), c.f1()] {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(c.mean_abs_dev(), Some(0.5));
    }

    #[test]
    fn identical_timelines() {
        let c = match_events(&[3, 50, 90], &[3, 50, 90], 0);
        assert_eq!((c.precision(), c.recall(), c.f1()), (1.0, 1.0, 1.0));
    }

    #[test]
    fn exclusive_assignment() {
        let c = match_events(&[8, 13], &[10], 100);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 0));
        assert_eq!(c.abs_dev, 2.0);
    }

    #[test]
    fn equidistant_goes_to_earlier_gt() {
        // 15 is equidistant from 10 and 20 and goes to 10, where 10 wins.
        let c = match_events(&[10, 15], &[10, 20], 5);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 1));
    }

    #[test]
    fn empty_sides() {
        assert_eq!(match_events(&[], &[1, 2], 1).fn_, 2);
        assert_eq!(match_events(&[1, 2], &[], 1).fp, 2);
        assert_eq!(match_events(&[], &[], 1).f1(), 0.0);
    }

    fn pose(points: &[(f64, f64)]) -> Pose {
        Pose::new(points.iter().map(|&(x, y)| Keypoint::new(x, y, 0.9)).collect())
    }

    #[test]
    fn pck_examples() {
        let gt = pose(&[(0.0, 0.0), (100.0, 0.0), (100.0, 50.0), (0.0, 50.0)]);
        assert_eq!(pck(&[gt.clone()], &[gt.clone()], 0.1), 100.0);
        // Radius 0.1 * 100 = 10; an offset of (6, 8) lies exactly on it.
        let mut p = gt.clone();
        p.keypoints[0] = Keypoint::new(6.0, 8.0, 0.9);
        assert_eq!(pck(&[p.clone()], &[gt.clone()], 0.1), 100.0);
        p.keypoints[0] = Keypoint::new(6.0, 8.5, 0.9);
        assert_eq!(pck(&[p], &[gt], 0.1), 75.0);
    }

    #[test]
    fn pck_ten_keypoints() {
        let gt_pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 20.0, (i % 2) as f64 * 100.0)).collect();
        let gt = pose(&gt_pts);
        // Box 180 x 100, alpha 0.05 -> radius 9.
        let offsets = [0.0, 3.0, 9.0, 8.9, 5.0, 9.1, 20.0, 1.0, 50.0, 0.5];
        let pred = pose(&gt_pts.iter().zip(offsets).map(|(&(x, y), o)| (x + o, y)).collect::<Vec<_>>());
        assert_eq!(pck(&[pred], &[gt], 0.05), 70.0);
    }

    #[test]
    fn pck_ignores_invisible() {
        let mut gt = pose(&[(0.0, 0.0), (10.0, 10.0), (5.0, 5.0)]);
        gt.keypoints[2] = Keypoint::MASKED;
        let pred = pose(&[(0.0, 0.0), (10.0, 10.0), (500.0, 500.0)]);
        assert_eq!(pck(&[pred], &[gt], 0.05), 100.0);
    }

    fn bx(frame: usize, cx: f64, score: f64) -> Detection {
        Detection::new(frame, cx, 50.0, 20.0, 40.0, score).unwrap()
    }

    #[test]
    fn ap_examples() {
        let gt = vec![bx(0, 10.0, 1.0), bx(1, 30.0, 1.0)];
        assert_eq!(average_precision(&[bx(0, 10.0, 0.9), bx(1, 30.0, 0.8)], &gt, 0.75), 100.0);
        let one = vec![bx(0, 10.0, 1.0)];
        let dets = vec![bx(0, 200.0, 0.9), bx(0, 10.0, 0.3)];
        assert_eq!(average_precision(&dets, &one, 0.75), 50.0);
        assert_eq!(average_precision(&[], &one, 0.75), 0.0);
    }

    #[test]
    fn ap_duplicate_detection_is_false_positive() {
        let gt = vec![bx(0, 10.0, 1.0)];
        let dets = vec![bx(0, 10.0, 0.9), bx(0, 10.0, 0.8)];
        assert_eq!(average_precision(&dets, &gt, 0.75), 100.0);
        let gt2 = vec![bx(0, 10.0, 1.0), bx(3, 10.0, 1.0)];
        // Ranks: TP, FP, TP -> precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1.
        let dets2 = vec![bx(0, 10.0, 0.9), bx(0, 10.0, 0.8), bx(3, 10.0, 0.7)];
        let ap = average_precision(&dets2, &gt2, 0.75);
        assert!((ap - 100.0 * (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-9);
    }

    fn track(t1: usize, observed: &[bool]) -> Track {
        Track::new(
            t1,
            observed
                .iter()
                .enumerate()
                .map(|(i, &o)| TrackEntry {
                    detection: Detection::new(t1 + i, 0.0, 0.0, 1.0, 1.0, if o { 0.9 } else { 0.0 }).unwrap(),
                    pose: Pose::masked(1),
                    candidate: o.then_some(0),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn fpr_examples() {
        let negatives: Vec<usize> = (100..200).collect();
        assert_eq!(fpr(None, &negatives), 0.0);
        assert_eq!(fpr(Some(&track(0, &[true; 50])), &negatives), 0.0);
        assert_eq!(fpr(Some(&track(0, &[true; 102])), &negatives), 2.0);
        // Frames 100..=104 are an interpolated gap, 105 observed again.
        let mut obs = vec![true; 100];
        obs.extend([false; 5]);
        obs.push(true);
        assert_eq!(fpr(Some(&track(0, &obs)), &negatives), 6.0);
    }

    #[test]
    fn restrict_drops_outside() {
        let mut e = EventSet::new(10.0);
        e.insert(crate::types::EventTimeline::new(EventType::StepEnd, vec![1, 5, 9]).unwrap());
        assert_eq!(restrict(&e, 2..9).occurrences(EventType::StepEnd), &[5]);
    }

    fn spaced(min_gap: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(min_gap..min_gap + 40, 0..15).prop_map(|gaps| {
            let mut t = 0;
            gaps.into_iter().map(|g| { t += g; t }).collect()
        })
    }

    proptest! {
        #[test]
        fn swap_exchanges_precision_and_recall(dt in 0usize..5, seed_a in spaced(11), seed_b in spaced(11)) {
            let a = match_events(&seed_a, &seed_b, dt);
            let b = match_events(&seed_b, &seed_a, dt);
            prop_assert!((a.precision() - b.recall()).abs() < 1e-12);
            prop_assert!((a.recall() - b.precision()).abs() < 1e-12);
        }

        #[test]
        fn f1_monotone_in_dt(pred in proptest::collection::btree_set(0usize..300, 0..30),
                             gt in proptest::collection::btree_set(0usize..300, 0..30)) {
            let pred: Vec<usize> = pred.into_iter().collect();
            let gt: Vec<usize> = gt.into_iter().collect();
            let mut prev = 0.0;
            for dt in 0..20 {
                let c = match_events(&pred, &gt, dt);
                prop_assert!(c.f1() >= prev);
                prop_assert_eq!(c.tp + c.fn_, gt.len());
                prop_assert_eq!(c.tp + c.fp, pred.len());
                prev = c.f1();
            }
        }

        #[test]
        fn ap_scale_invariant(boxes in proptest::collection::vec((0usize..5, 0.0..500.0f64, 0.0..500.0f64, 1.0..80.0f64, 1.0..80.0f64, 0.0..1.0f64), 1..20),
                              gts in proptest::collection::vec((0usize..5, 0.0..500.0f64, 0.0..500.0f64, 1.0..80.0f64, 1.0..80.0f64), 1..8),
                              exp in -3i32..4) {
            let dets: Vec<Detection> = boxes.iter().map(|&(f, x, y, w, h, s)| Detection::new(f, x, y, w, h, s).unwrap()).collect();
            let gt: Vec<Detection> = gts.iter().map(|&(f, x, y, w, h)| Detection::new(f, x, y, w, h, 1.0).unwrap()).collect();
            let factor = 2f64.powi(exp);
            let a = average_precision(&dets, &gt, 0.75);
            let sd: Vec<Detection> = dets.iter().map(|d| d.scaled(factor)).collect();
            let sg: Vec<Detection> = gt.iter().map(|d| d.scaled(factor)).collect();
            prop_assert_eq!(a, average_precision(&sd, &sg, 0.75));
        }
    }
}
