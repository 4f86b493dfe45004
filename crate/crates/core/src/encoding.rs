//! Timing indicators, pose normalization and training-crop assembly.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EventSet, EventTimeline, EventType, Keypoint, Pose};

/// Forward and backward timing indicators of one event type.
#[derive(Debug, Clone, PartialEq)]
pub struct Indicator {
    /// Distance to the next occurrence, in `[0, 1]`.
    pub forward: Vec<f64>,
    /// Negated distance to the previous occurrence, in `[-1, 0]`.
    pub backward: Vec<f64>,
}

impl Indicator {
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// `f(t) - b(t)`, zero exactly at occurrences for clean encodings.
    pub fn gap(&self) -> Vec<f64> {
        self.forward
            .iter()
            .zip(&self.backward)
            .map(|(f, b)| f - b)
            .collect()
    }
}

/// Indicators of several event types over one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorSeries {
    pub t_max: usize,
    pub channels: BTreeMap<EventType, Indicator>,
    /// Frames whose model window had to be clamped at the sequence ends.
    pub boundary: Vec<bool>,
}

impl IndicatorSeries {
    pub fn len(&self) -> usize {
        self.boundary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundary.is_empty()
    }

    pub fn get(&self, event: EventType) -> Option<&Indicator> {
        self.channels.get(&event)
    }
}

/// Encode one event timeline over `n` frames.
pub fn encode_targets(timeline: &EventTimeline, n: usize, t_max: usize) -> Result<Indicator> {
    if t_max == 0 {
        return Err(Error::Config("t_max must be positive".into()));
    }
    let occ = timeline.occurrences();
    if let Some(&last) = occ.last() {
        if last >= n {
            return Err(Error::InvalidInput(format!(
                "{} occurrence at frame {last} lies outside a sequence of {n} frames",
                timeline.event_type
            )));
        }
    }
    let t_max = t_max as f64;
    let mut forward = vec![1.0; n];
    let mut backward = vec![-1.0; n];
    let mut next = None;
    for t in (0..n).rev() {
        if occ.binary_search(&t).is_ok() {
            next = Some(t);
        }
        if let Some(e) = next {
            forward[t] = ((e - t) as f64 / t_max).min(1.0);
        }
    }
    let mut prev = None;
    for t in 0..n {
        if occ.binary_search(&t).is_ok() {
            prev = Some(t);
        }
        if let Some(e) = prev {
            backward[t] = -((t - e) as f64 / t_max).min(1.0);
        }
    }
    Ok(Indicator { forward, backward })
}

/// Encode all `types` of an event set; absent types encode as empty timelines.
pub fn encode_event_set(
    events: &EventSet,
    types: &[EventType],
    n: usize,
    t_max: usize,
) -> Result<IndicatorSeries> {
    let mut channels = BTreeMap::new();
    for &ty in types {
        let timeline = events
            .get(ty)
            .cloned()
            .unwrap_or_else(|| EventTimeline::empty(ty));
        channels.insert(ty, encode_targets(&timeline, n, t_max)?);
    }
    Ok(IndicatorSeries {
        t_max,
        channels,
        boundary: vec![false; n],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Every pose against the whole sequence.
    Global,
    /// Every pose against its own temporal surrounding.
    Local,
    /// Every model window jointly against itself.
    #[default]
    Sequence,
}

impl NormalizationMode {
    pub fn name(self) -> &'static str {
        match self {
            NormalizationMode::Global => "global",
            NormalizationMode::Local => "local",
            NormalizationMode::Sequence => "sequence",
        }
    }

    fn code(self) -> u32 {
        match self {
            NormalizationMode::Global => 0,
            NormalizationMode::Local => 1,
            NormalizationMode::Sequence => 2,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(NormalizationMode::Global),
            1 => Some(NormalizationMode::Local),
            2 => Some(NormalizationMode::Sequence),
            _ => None,
        }
    }
}

impl fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(NormalizationMode::Global),
            "local" => Ok(NormalizationMode::Local),
            "sequence" => Ok(NormalizationMode::Sequence),
            other => Err(Error::Config(format!(
                "unknown normalization mode '{other}' (expected global, local or sequence)"
            ))),
        }
    }
}

/// Zero out keypoints whose confidence is below `c_min`.
pub fn mask_low_confidence(pose: &Pose, c_min: f64) -> Pose {
    Pose::new(
        pose.keypoints
            .iter()
            .map(|kp| if kp.score < c_min { Keypoint::MASKED } else { *kp })
            .collect(),
    )
}

/// Per-axis coordinate range of the unmasked keypoints of a reference set.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Bounds {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Bounds {
    fn of<'a>(poses: impl IntoIterator<Item = &'a Pose>) -> Option<Bounds> {
        let mut b: Option<Bounds> = None;
        for kp in poses
            .into_iter()
            .flat_map(|p| &p.keypoints)
            .filter(|kp| !kp.is_masked())
        {
            let b = b.get_or_insert(Bounds {
                lo: [kp.x, kp.y],
                hi: [kp.x, kp.y],
            });
            b.lo[0] = b.lo[0].min(kp.x);
            b.lo[1] = b.lo[1].min(kp.y);
            b.hi[0] = b.hi[0].max(kp.x);
            b.hi[1] = b.hi[1].max(kp.y);
        }
        b
    }

    fn apply(bounds: Option<Bounds>, pose: &Pose) -> Pose {
        let map = |v: f64, axis: usize| match bounds {
            Some(b) if b.hi[axis] > b.lo[axis] => {
                2.0 * (v - b.lo[axis]) / (b.hi[axis] - b.lo[axis]) - 1.0
            }
            _ => 0.0,
        };
        Pose::new(
            pose.keypoints
                .iter()
                .map(|kp| {
                    if kp.is_masked() {
                        *kp
                    } else {
                        Keypoint::new(map(kp.x, 0), map(kp.y, 1), kp.score)
                    }
                })
                .collect(),
        )
    }
}

/// Min-max normalize `pose` to `[-1, 1]` per axis using the ranges of
/// `reference`. A degenerate axis maps to 0.
pub fn minmax_norm(pose: &Pose, reference: &[Pose]) -> Pose {
    Bounds::apply(Bounds::of(reference), pose)
}

/// Index of the window center within a window of length `s`.
pub fn center_index(s: usize) -> usize {
    s / 2
}

/// Frame indices of the model window centered on `t`, clamped to `[0, n)`.
pub fn window_indices(t: usize, n: usize, s: usize) -> impl Iterator<Item = usize> {
    let m = center_index(s) as isize;
    let last = n as isize - 1;
    (0..s as isize).map(move |i| (t as isize - m + i).clamp(0, last.max(0)) as usize)
}

/// Whether the window around `t` reaches past either sequence end.
pub fn is_boundary(t: usize, n: usize, s: usize) -> bool {
    let m = center_index(s);
    t < m || t + (s - 1 - m) >= n
}

/// Normalize every pose of a sequence on its own, for the global and local
/// modes. Sequence mode normalizes windows, see [`normalize`].
pub fn normalize_frames(sequence: &[Pose], mode: NormalizationMode, s: usize) -> Vec<Pose> {
    let n = sequence.len();
    match mode {
        NormalizationMode::Global => {
            let b = Bounds::of(sequence);
            sequence.iter().map(|p| Bounds::apply(b, p)).collect()
        }
        NormalizationMode::Local => (0..n)
            .map(|t| {
                let b = Bounds::of(window_indices(t, n, s).map(|i| &sequence[i]));
                Bounds::apply(b, &sequence[t])
            })
            .collect(),
        NormalizationMode::Sequence => {
            panic!("sequence mode normalizes windows, not frames")
        }
    }
}

/// Normalized model inputs: one window of `s` poses per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWindows {
    pub windows: Vec<Vec<Pose>>,
    pub boundary: Vec<bool>,
    /// Set when the sequence is shorter than a single window.
    pub short: bool,
}

/// Build the normalized `s`-frame window around every frame.
pub fn normalize(sequence: &[Pose], mode: NormalizationMode, s: usize) -> NormalizedWindows {
    let n = sequence.len();
    let windows: Vec<Vec<Pose>> = match mode {
        NormalizationMode::Sequence => (0..n)
            .map(|t| {
                let idx: Vec<usize> = window_indices(t, n, s).collect();
                let b = Bounds::of(idx.iter().map(|&i| &sequence[i]));
                idx.iter().map(|&i| Bounds::apply(b, &sequence[i])).collect()
            })
            .collect(),
        _ => {
            let frames = normalize_frames(sequence, mode, s);
            (0..n)
                .map(|t| window_indices(t, n, s).map(|i| frames[i].clone()).collect())
                .collect()
        }
    };
    NormalizedWindows {
        windows,
        boundary: (0..n).map(|t| is_boundary(t, n, s)).collect(),
        short: n < s,
    }
}

/// Feature vector of one pose: `x, y, score` per keypoint.
pub fn pose_features(pose: &Pose, out: &mut Vec<f32>) {
    for kp in &pose.keypoints {
        out.extend_from_slice(&[kp.x as f32, kp.y as f32, kp.score as f32]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodingConfig {
    pub mode: NormalizationMode,
    pub t_max: usize,
    pub c_min: f64,
    /// Window length; must equal the model's receptive field.
    pub s: usize,
    /// Event types of the (begin, end) output pairs.
    pub events: [EventType; 2],
    /// Keep every `crop_stride`-th window center when building training
    /// crops. Inference is unaffected.
    pub crop_stride: usize,
    /// Build training crops only at frames that have an event of each
    /// output type both at or before and at or after them. Elsewhere the
    /// targets are clamped placeholders no window can predict.
    pub bracketed_only: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            mode: NormalizationMode::Sequence,
            t_max: 100,
            c_min: 0.1,
            s: 29,
            events: EventType::STRIDE,
            crop_stride: 1,
            bracketed_only: true,
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be positive".into()));
        }
        if self.s == 0 || self.s % 2 == 0 {
            return Err(Error::Config(format!("window length s = {} must be odd", self.s)));
        }
        if !(0.0..=1.0).contains(&self.c_min) {
            return Err(Error::Config("c_min must lie in [0, 1]".into()));
        }
        if self.crop_stride == 0 {
            return Err(Error::Config("crop_stride must be positive".into()));
        }
        Ok(())
    }
}

/// One model input window with the indicator targets at its center.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCrop {
    pub video: u32,
    pub center: u32,
    /// `s x 3K`, time-major.
    pub input: Vec<f32>,
    /// `(f_begin, b_begin, f_end, b_end)` at the center frame.
    pub target: [f32; 4],
}

/// Crops of one or more videos.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub k: usize,
    pub s: usize,
    pub t_max: usize,
    pub mode: NormalizationMode,
    pub num_videos: usize,
    pub crops: Vec<TrainingCrop>,
    groups: Vec<Vec<usize>>,
}

impl TrainingSet {
    pub fn new(
        k: usize,
        s: usize,
        t_max: usize,
        mode: NormalizationMode,
        num_videos: usize,
        crops: Vec<TrainingCrop>,
    ) -> Result<Self> {
        let width = s * 3 * k;
        let mut groups = vec![Vec::new(); num_videos];
        for (i, c) in crops.iter().enumerate() {
            if c.input.len() != width {
                return Err(Error::Schema(format!(
                    "crop {i} has {} inputs, expected s x 3K = {width}",
                    c.input.len()
                )));
            }
            let g = groups.get_mut(c.video as usize).ok_or_else(|| {
                Error::Schema(format!(
                    "crop {i} references video {} of {num_videos}",
                    c.video
                ))
            })?;
            g.push(i);
        }
        Ok(TrainingSet {
            k,
            s,
            t_max,
            mode,
            num_videos,
            crops,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.crops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }

    /// Crop indices of every video identity.
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn features(&self) -> usize {
        3 * self.k
    }
}

/// Crops of one pose sequence at every `crop_stride`-th center whose window
/// fits entirely.
pub fn video_crops(
    poses: &[Pose],
    events: &EventSet,
    video: u32,
    cfg: &EncodingConfig,
) -> Result<Vec<TrainingCrop>> {
    let n = poses.len();
    let begin = encode_event_set(events, &cfg.events[..1], n, cfg.t_max)?;
    let end = encode_event_set(events, &cfg.events[1..], n, cfg.t_max)?;
    let begin = &begin.channels[&cfg.events[0]];
    let end = &end.channels[&cfg.events[1]];
    if n < cfg.s {
        warn!("video {video} has {n} frames, fewer than one window of {}", cfg.s);
        return Ok(Vec::new());
    }
    let masked: Vec<Pose> = poses.iter().map(|p| mask_low_confidence(p, cfg.c_min)).collect();
    let norm = normalize(&masked, cfg.mode, cfg.s);
    let m = center_index(cfg.s);
    let bracket = |ty: EventType| {
        let frames = events.occurrences(ty);
        match (frames.first(), frames.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (usize::MAX, 0),
        }
    };
    let (lo, hi) = if cfg.bracketed_only {
        let (a0, b0) = bracket(cfg.events[0]);
        let (a1, b1) = bracket(cfg.events[1]);
        (a0.max(a1), b0.min(b1))
    } else {
        (0, usize::MAX)
    };
    let mut crops = Vec::with_capacity((n + 1 - cfg.s).div_ceil(cfg.crop_stride));
    for t in (m..n - (cfg.s - 1 - m)).step_by(cfg.crop_stride.max(1)) {
        if t < lo || t > hi {
            continue;
        }
        let mut input = Vec::with_capacity(cfg.s * 3 * poses[0].k());
        for p in &norm.windows[t] {
            pose_features(p, &mut input);
        }
        crops.push(TrainingCrop {
            video,
            center: t as u32,
            input,
            target: [
                begin.forward[t] as f32,
                begin.backward[t] as f32,
                end.forward[t] as f32,
                end.backward[t] as f32,
            ],
        });
    }
    Ok(crops)
}

/// Training set from several pose-estimate variants of the same videos.
///
/// `variants[v][i]` is the pose sequence of video `i` under variant `v`; all
/// variants of a video share `events[i]` and one video identity.
pub fn assemble_multi_variant_dataset(
    variants: &[Vec<Vec<Pose>>],
    events: &[EventSet],
    cfg: &EncodingConfig,
) -> Result<TrainingSet> {
    cfg.validate()?;
    let mut crops = Vec::new();
    let mut k = None;
    for (v, videos) in variants.iter().enumerate() {
        if videos.len() != events.len() {
            return Err(Error::InvalidInput(format!(
                "variant {v} has {} videos but {} event timelines were given",
                videos.len(),
                events.len()
            )));
        }
        for (i, poses) in videos.iter().enumerate() {
            for p in poses {
                if *k.get_or_insert(p.k()) != p.k() {
                    return Err(Error::Schema(format!(
                        "video {i} of variant {v} mixes keypoint counts"
                    )));
                }
            }
            crops.extend(video_crops(poses, &events[i], i as u32, cfg)?);
        }
    }
    let k = k.ok_or_else(|| Error::InvalidInput("no poses to encode".into()))?;
    TrainingSet::new(k, cfg.s, cfg.t_max, cfg.mode, events.len(), crops)
}

/// Draw one batch of crop indices.
///
/// While `batch_size` does not exceed the number of videos every crop comes
/// from a different video. Larger batches cover all videos in full rounds
/// and fill the remainder with distinct videos. Within a video the crop is
/// uniform over centers and variants.
pub fn sample_training_crops<R: Rng + ?Sized>(
    set: &TrainingSet,
    batch_size: usize,
    rng: &mut R,
) -> Vec<usize> {
    let videos: Vec<usize> = (0..set.num_videos)
        .filter(|&v| !set.groups[v].is_empty())
        .collect();
    if videos.is_empty() || batch_size == 0 {
        return Vec::new();
    }
    let mut chosen = Vec::with_capacity(batch_size);
    for _ in 0..batch_size / videos.len() {
        let mut round = videos.clone();
        round.shuffle(rng);
        chosen.extend(round);
    }
    let rest = batch_size % videos.len();
    chosen.extend(sample(rng, videos.len(), rest).into_iter().map(|i| videos[i]));
    chosen
        .into_iter()
        .map(|v| {
            let g = &set.groups[v];
            g[rng.random_range(0..g.len())]
        })
        .collect()
}

const MAGIC: &[u8; 4] = b"PSEQ";
const VERSION: u32 = 1;

/// Serialize a training set as little-endian binary.
pub fn write_dataset<W: Write>(set: &TrainingSet, mut w: W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    let header = [
        VERSION,
        set.k as u32,
        set.s as u32,
        set.t_max as u32,
        set.mode.code(),
        set.num_videos as u32,
        set.crops.len() as u32,
    ];
    for v in header {
        w.write_all(&v.to_le_bytes())?;
    }
    for c in &set.crops {
        w.write_all(&c.video.to_le_bytes())?;
        w.write_all(&c.center.to_le_bytes())?;
        for v in c.input.iter().chain(&c.target) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn save_dataset(path: &Path, set: &TrainingSet) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(set, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Parse a training set written by [`write_dataset`].
pub fn read_dataset(bytes: &[u8]) -> Result<TrainingSet> {
    let mut r = bytes;
    let bad = |msg: &str| Error::Schema(format!("dataset: {msg}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic, not a dataset file"));
    }
    let u32s = |n: usize, r: &mut &[u8]| -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(|_| bad("truncated file"))?;
            out.push(u32::from_le_bytes(buf));
        }
        Ok(out)
    };
    let h = u32s(7, &mut r)?;
    if h[0] != VERSION {
        return Err(bad(&format!("unsupported version {}", h[0])));
    }
    let (k, s, t_max) = (h[1] as usize, h[2] as usize, h[3] as usize);
    let mode = NormalizationMode::from_code(h[4]).ok_or_else(|| bad("unknown normalization mode"))?;
    let (num_videos, num_crops) = (h[5] as usize, h[6] as usize);
    let width = s * 3 * k;
    let record = 8 + 4 * (width + 4);
    if r.len() != num_crops * record {
        return Err(bad(&format!(
            "expected {num_crops} crops of {record} bytes, found {} bytes",
            r.len()
        )));
    }
    let crops = r
        .chunks_exact(record)
        .map(|rec| {
            let word = |i: usize| <[u8; 4]>::try_from(&rec[4 * i..4 * i + 4]).unwrap();
            let floats: Vec<f32> = (2..2 + width + 4).map(|i| f32::from_le_bytes(word(i))).collect();
            TrainingCrop {
                video: u32::from_le_bytes(word(0)),
                center: u32::from_le_bytes(word(1)),
                input: floats[..width].to_vec(),
                target: floats[width..].try_into().unwrap(),
            }
        })
        .collect();
    TrainingSet::new(k, s, t_max, mode, num_videos, crops)
}

pub fn load_dataset(path: &Path) -> Result<TrainingSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_dataset(&bytes)
}
