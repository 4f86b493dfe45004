use std::collections::BTreeMap;

use ndarray::Array2;

use super::net::{forward, Mode};
use super::params::TcnParams;
use crate::encoding::{
    center_index, is_boundary, mask_low_confidence, normalize, normalize_frames, pose_features,
    EncodingConfig, Indicator, IndicatorSeries, NormalizationMode,
};
use crate::error::{Error, Result};
use crate::metrics::{match_events, MatchCounts};
use crate::types::{EventSet, EventTimeline, EventType, Pose};

const WINDOW_CHUNK: usize = 128;

/// Predict timing indicators for every frame of a pose sequence.
///
/// Frame `t` is predicted from the window centered on it; windows that reach
/// past either end use clamped frame indices and are flagged as boundary.
pub fn infer_video(
    params: &TcnParams<f32>,
    poses: &[Pose],
    cfg: &EncodingConfig,
) -> Result<IndicatorSeries> {
    let arch = params.arch();
    let s = arch.receptive_field();
    let n = poses.len();
    if n < s {
        return Err(Error::SequenceTooShort { required: s, actual: n });
    }
    if let Some(p) = poses.iter().find(|p| p.k() != arch.keypoints) {
        return Err(Error::Schema(format!(
            "pose has {} keypoints, the model expects K = {}",
            p.k(),
            arch.keypoints
        )));
    }
    let c = arch.in_channels();
    let masked: Vec<Pose> = poses.iter().map(|p| mask_low_confidence(p, cfg.c_min)).collect();
    let out = match cfg.mode {
        NormalizationMode::Sequence => {
            let windows = normalize(&masked, cfg.mode, s).windows;
            let mut out = Array2::zeros((4, n));
            let mut feats = Vec::with_capacity(s * c);
            for (start, chunk) in (0..n).step_by(WINDOW_CHUNK).zip(windows.chunks(WINDOW_CHUNK)) {
                let mut x = Array2::zeros((c, chunk.len() * s));
                for (b, window) in chunk.iter().enumerate() {
                    for (t, pose) in window.iter().enumerate() {
                        feats.clear();
                        pose_features(pose, &mut feats);
                        for (f, &v) in feats.iter().enumerate() {
                            x[[f, b * s + t]] = v;
                        }
                    }
                }
                let y = forward(params, x.view(), chunk.len(), Mode::Eval)?;
                out.slice_mut(ndarray::s![.., start..start + chunk.len()]).assign(&y);
            }
            out
        }
        mode => {
            // One convolutional pass over the edge-replicated sequence.
            let frames = normalize_frames(&masked, mode, s);
            let m = center_index(s);
            let padded = n + s - 1;
            let mut x = Array2::zeros((c, padded));
            let mut feats = Vec::with_capacity(c);
            for i in 0..padded {
                let src = i.saturating_sub(m).min(n - 1);
                feats.clear();
                pose_features(&frames[src], &mut feats);
                for (f, &v) in feats.iter().enumerate() {
                    x[[f, i]] = v;
                }
            }
            forward(params, x.view(), 1, Mode::Eval)?
        }
    };
    let row = |r: usize| out.row(r).iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let mut channels = BTreeMap::new();
    for (i, &event) in cfg.events.iter().enumerate() {
        channels.insert(
            event,
            Indicator {
                forward: row(2 * i),
                backward: row(2 * i + 1),
            },
        );
    }
    Ok(IndicatorSeries {
        t_max: cfg.t_max,
        channels,
        boundary: (0..n).map(|t| is_boundary(t, n, s)).collect(),
    })
}

/// Default occurrence threshold on `f - b`.
pub fn default_theta(t_max: usize) -> f64 {
    2.0 / t_max as f64
}

/// Frames where `f - b` is at most `theta` and minimal within `rho_sup`
/// frames on either side. Equal minima go to the earliest frame.
pub fn extract_events(pred: &IndicatorSeries, theta: f64, rho_sup: usize, fps: f64) -> EventSet {
    let mut set = EventSet::new(fps);
    for (&event, ind) in &pred.channels {
        let g = ind.gap();
        let occ = local_minima(&g, theta, rho_sup);
        set.insert(EventTimeline::new(event, occ).expect("increasing by construction"));
    }
    set
}

/// Candidate thresholds `k / t_max` for `k = 1 ..= t_max`.
pub fn theta_grid(t_max: usize) -> Vec<f64> {
    (1..=t_max.max(1)).map(|k| k as f64 / t_max as f64).collect()
}

/// The candidate threshold with the best F1 at tolerance `dt`, counts
/// pooled over all recordings and event types. Ties go to the smallest
/// threshold.
pub fn calibrate_theta(
    series: &[IndicatorSeries],
    truth: &[EventSet],
    candidates: &[f64],
    rho_sup: usize,
    dt: usize,
) -> f64 {
    let gaps: Vec<Vec<(EventType, Vec<f64>)>> = series
        .iter()
        .map(|s| s.channels.iter().map(|(e, ind)| (*e, ind.gap())).collect())
        .collect();
    let mut best = (f64::NEG_INFINITY, candidates.first().copied().unwrap_or(0.0));
    for &theta in candidates {
        let mut total = MatchCounts::default();
        for (channels, gt) in gaps.iter().zip(truth) {
            for (event, g) in channels {
                total += match_events(&local_minima(g, theta, rho_sup), gt.occurrences(*event), dt);
            }
        }
        if total.f1() > best.0 {
            best = (total.f1(), theta);
        }
    }
    best.1
}

fn local_minima(g: &[f64], theta: f64, rho: usize) -> Vec<usize> {
    let n = g.len();
    (0..n)
        .filter(|&t| {
            g[t] <= theta
                && (t.saturating_sub(rho)..(t + rho + 1).min(n))
                    .filter(|&u| u != t)
                    .all(|u| g[u] > g[t] || (g[u] == g[t] && u > t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::encode_event_set;
    use crate::model::Arch;
    use crate::types::Keypoint;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn series(occ: &[usize], n: usize, t_max: usize) -> IndicatorSeries {
        let mut e = EventSet::new(100.0);
        e.insert(EventTimeline::new(EventType::StepBegin, occ.to_vec()).unwrap());
        encode_event_set(&e, &[EventType::StepBegin], n, t_max).unwrap()
    }

    #[test]
    fn roundtrip_example() {
        let s = series(&[5, 12], 20, 8);
        let ev = extract_events(&s, default_theta(8), 5, 100.0);
        assert_eq!(ev.occurrences(EventType::StepBegin), &[5, 12]);
    }

    #[test]
    fn high_gap_gives_nothing() {
        let s = series(&[], 50, 10);
        let ev = extract_events(&s, default_theta(10), 5, 100.0);
        assert!(ev.occurrences(EventType::StepBegin).is_empty());
    }

    #[test]
    fn suppression_keeps_smaller_minimum() {
        let mut g = vec![1.0; 30];
        g[10] = 0.01;
        g[12] = 0.005;
        assert_eq!(local_minima(&g, 0.02, 5), vec![12]);
        g[12] = 0.01;
        assert_eq!(local_minima(&g, 0.02, 5), vec![10]);
        g[20] = 0.01;
        assert_eq!(local_minima(&g, 0.02, 5), vec![10, 20]);
    }

    #[test]
    fn calibration_finds_the_dip_depth() {
        let mut s = series(&[10, 30, 50], 70, 20);
        let gt = extract_events(&s, default_theta(20), 5, 100.0);
        let clean = calibrate_theta(std::slice::from_ref(&s), std::slice::from_ref(&gt), &theta_grid(20), 5, 1);
        assert_eq!(clean, 0.05);
        // Lift every value by 0.2: the dips now bottom out at 0.2.
        let ind = s.channels.get_mut(&EventType::StepBegin).unwrap();
        ind.forward.iter_mut().for_each(|f| *f += 0.2);
        let theta = calibrate_theta(&[s.clone()], &[gt.clone()], &theta_grid(20), 5, 1);
        assert!((theta - 0.2).abs() < 1e-12, "{theta}");
        assert_eq!(extract_events(&s, theta, 5, 100.0), gt);
    }

    fn pose(t: usize, k: usize) -> Pose {
        Pose::new(
            (0..k)
                .map(|i| Keypoint::new(100.0 + i as f64 * 7.0 + (t as f64 * 0.2).sin() * 5.0, 50.0 + i as f64, 0.9))
                .collect(),
        )
    }

    fn arch() -> Arch {
        Arch { keypoints: 3, hidden: 8, ..Arch::default() }
    }

    #[test]
    fn exact_length_and_too_short() {
        let p = TcnParams::<f32>::init(arch(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cfg = EncodingConfig { t_max: 20, ..EncodingConfig::default() };
        let poses: Vec<Pose> = (0..29).map(|t| pose(t, 3)).collect();
        let out = infer_video(&p, &poses, &cfg).unwrap();
        assert_eq!(out.len(), 29);
        assert_eq!(out.boundary.iter().filter(|&&b| !b).count(), 1);
        assert!(!out.boundary[14]);
        let err = infer_video(&p, &poses[..28], &cfg).unwrap_err();
        assert!(err.to_string().contains("s = 29"), "{err}");
    }

    #[test]
    fn static_sequence_modes_agree() {
        let mut p = TcnParams::<f32>::init(arch(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for b in p.buffers.iter_mut() {
            *b = 0.5;
        }
        let still = pose(0, 3);
        let poses = vec![still; 40];
        let seq = infer_video(&p, &poses, &EncodingConfig { mode: NormalizationMode::Sequence, ..Default::default() }).unwrap();
        let glob = infer_video(&p, &poses, &EncodingConfig { mode: NormalizationMode::Global, ..Default::default() }).unwrap();
        for (a, b) in seq.channels.values().zip(glob.channels.values()) {
            for (x, y) in a.forward.iter().zip(&b.forward) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn windowed_and_single_pass_agree_for_local_mode() {
        let p = TcnParams::<f32>::init(arch(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let poses: Vec<Pose> = (0..50).map(|t| pose(t, 3)).collect();
        let cfg = EncodingConfig { mode: NormalizationMode::Local, ..Default::default() };
        let whole = infer_video(&p, &poses, &cfg).unwrap();
        // Recompute frame 20 from an explicit window.
        let frames = normalize_frames(&poses, NormalizationMode::Local, 29);
        let mut x = Array2::zeros((9, 29));
        for (t, f) in (6..35).enumerate() {
            let mut v = Vec::new();
            pose_features(&frames[f], &mut v);
            for (i, &val) in v.iter().enumerate() {
                x[[i, t]] = val;
            }
        }
        let y = forward(&p, x.view(), 1, Mode::Eval).unwrap();
        let ind = &whole.channels[&EventType::StepBegin];
        assert!((ind.forward[20] - y[[0, 0]] as f64).abs() < 1e-6);
        assert!((ind.backward[20] - y[[1, 0]] as f64).abs() < 1e-6);
    }

    fn arb_timeline() -> impl Strategy<Value = (Vec<usize>, usize, usize)> {
        (50usize..600, 10usize..150).prop_flat_map(|(n, t_max)| {
            (proptest::collection::vec(6usize..60, 0..12), Just(n), Just(t_max)).prop_map(|(gaps, n, t)| {
                let mut occ = Vec::new();
                let mut cur = 0usize;
                for g in gaps {
                    cur += g;
                    if cur >= n {
                        break;
                    }
                    occ.push(cur);
                }
                (occ, n, t)
            })
        })
    }

    proptest! {
        #[test]
        fn clean_roundtrip((occ, n, t_max) in arb_timeline()) {
            let s = series(&occ, n, t_max);
            let ev = extract_events(&s, default_theta(t_max), 5, 100.0);
            prop_assert_eq!(ev.occurrences(EventType::StepBegin), &occ[..]);
        }
    }
}
