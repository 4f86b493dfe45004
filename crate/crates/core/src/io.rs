//! Interchange files: `candidates.jsonl`, `track.jsonl` and `events.json`.
//!
//! Candidate files hold one JSON object per frame. An optional first line
//! without a `"frame"` key carries camera metadata (`camera_id`, `fps`,
//! `role`). Track files start with a `{"track_frame_range": [t1, t2]}` line.
//! Floats are written by `serde_json`, which emits the shortest string that
//! round-trips.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::types::{
    CameraRecording, CameraRole, Candidate, Detection, EventSet, EventTimeline, EventType,
    FrameCandidates, Keypoint, Pose, Track, TrackEntry,
};

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
    keypoints: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    interpolated: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRecord {
    frame: usize,
    detections: Vec<DetectionRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CameraHeader {
    camera_id: String,
    fps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    role: Option<CameraRole>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackHeader {
    track_frame_range: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct EventsFile {
    fps: f64,
    events: BTreeMap<String, Vec<usize>>,
}

fn detection_record(d: &Detection, pose: &Pose, interpolated: bool) -> DetectionRecord {
    DetectionRecord {
        bbox: [d.cx, d.cy, d.w, d.h],
        score: d.score,
        keypoints: pose.keypoints.iter().map(|k| [k.x, k.y, k.score]).collect(),
        interpolated,
    }
}

fn parse_detection(
    rec: &DetectionRecord,
    frame: usize,
    expected_k: Option<usize>,
    path: &Path,
    line: usize,
) -> Result<(Detection, Pose)> {
    let [cx, cy, w, h] = rec.bbox;
    let det = Detection::new(frame, cx, cy, w, h, rec.score)
        .map_err(|e| Error::parse(path, line, format!("field 'box'/'score': {e}")))?;
    let pose = Pose::new(
        rec.keypoints
            .iter()
            .map(|&[x, y, s]| Keypoint::new(x, y, s))
            .collect(),
    );
    if let Some(k) = expected_k {
        if pose.k() != k {
            return Err(Error::Schema(format!(
                "{}:{}: pose has K = {} keypoints, configuration expects K = {}",
                path.display(),
                line,
                pose.k(),
                k
            )));
        }
    }
    pose.validate(None)
        .map_err(|e| Error::parse(path, line, format!("field 'keypoints': {e}")))?;
    Ok((det, pose))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents).map_err(|e| Error::io(path, e))
}

fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("records serialize infallibly")
}

/// Parse one candidates file into a recording.
///
/// Frame indices must equal the 0-based position of the record in the file.
pub fn read_candidates(path: &Path, expected_k: Option<usize>) -> Result<CameraRecording> {
    let lines = read_lines(path)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().trim_end_matches(".candidates").to_string())
        .unwrap_or_default();
    let mut rec = CameraRecording {
        camera_id: stem,
        fps: 0.0,
        role: None,
        frames: Vec::new(),
    };
    for (idx, (line_no, line)) in lines.iter().enumerate() {
        let value: Value = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, *line_no, format!("invalid JSON: {e}")))?;
        if idx == 0 && value.get("frame").is_none() {
            let header: CameraHeader = serde_json::from_value(value)
                .map_err(|e| Error::parse(path, *line_no, format!("camera header: {e}")))?;
            rec.camera_id = header.camera_id;
            rec.fps = header.fps;
            rec.role = header.role;
            continue;
        }
        let record: FrameRecord = serde_json::from_value(value)
            .map_err(|e| Error::parse(path, *line_no, format!("frame record: {e}")))?;
        if record.frame != rec.frames.len() {
            return Err(Error::parse(
                path,
                *line_no,
                format!(
                    "field 'frame': expected {}, found {}",
                    rec.frames.len(),
                    record.frame
                ),
            ));
        }
        let mut items = Vec::with_capacity(record.detections.len());
        for d in &record.detections {
            let (detection, pose) = parse_detection(d, record.frame, expected_k, path, *line_no)?;
            items.push(Candidate { detection, pose });
        }
        if items
            .windows(2)
            .any(|w| w[0].detection.score < w[1].detection.score)
        {
            return Err(Error::parse(
                path,
                *line_no,
                "field 'detections': not sorted by descending score",
            ));
        }
        rec.frames.push(FrameCandidates {
            frame: record.frame,
            items,
        });
    }
    Ok(rec)
}

/// Load a candidates file, or every `*.jsonl` file of a directory in name order.
pub fn load_candidates(path: &Path, expected_k: Option<usize>) -> Result<Vec<CameraRecording>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
            .collect();
        files.sort();
        files
            .iter()
            .map(|p| read_candidates(p, expected_k))
            .collect()
    } else {
        Ok(vec![read_candidates(path, expected_k)?])
    }
}

pub fn candidates_to_string(rec: &CameraRecording) -> String {
    let mut out = String::new();
    let header = CameraHeader {
        camera_id: rec.camera_id.clone(),
        fps: rec.fps,
        role: rec.role,
    };
    out.push_str(&to_line(&header));
    out.push('\n');
    for f in &rec.frames {
        let record = FrameRecord {
            frame: f.frame,
            detections: f
                .items
                .iter()
                .map(|c| detection_record(&c.detection, &c.pose, false))
                .collect(),
        };
        out.push_str(&to_line(&record));
        out.push('\n');
    }
    out
}

pub fn save_candidates(path: &Path, rec: &CameraRecording) -> Result<()> {
    write_file(path, candidates_to_string(rec).as_bytes())
}

pub fn track_to_string(track: &Track) -> String {
    let mut out = to_line(&TrackHeader {
        track_frame_range: [track.t1, track.t2],
    });
    out.push('\n');
    for e in &track.entries {
        let record = FrameRecord {
            frame: e.detection.frame,
            detections: vec![detection_record(
                &e.detection,
                &e.pose,
                e.is_interpolated(),
            )],
        };
        out.push_str(&to_line(&record));
        out.push('\n');
    }
    out
}

pub fn save_track(path: &Path, track: &Track) -> Result<()> {
    write_file(path, track_to_string(track).as_bytes())
}

/// Load a track file. Observed entries get candidate index 0 since the file
/// only keeps the selected detection.
pub fn load_track(path: &Path, expected_k: Option<usize>) -> Result<Track> {
    let lines = read_lines(path)?;
    let (first_line, header_line) = lines
        .first()
        .ok_or_else(|| Error::parse(path, 1, "empty track file"))?;
    let header: TrackHeader = serde_json::from_str(header_line)
        .map_err(|e| Error::parse(path, *first_line, format!("field 'track_frame_range': {e}")))?;
    let [t1, t2] = header.track_frame_range;
    if t2 < t1 {
        return Err(Error::parse(path, *first_line, "field 'track_frame_range': t2 < t1"));
    }
    let mut entries = Vec::with_capacity(t2 - t1 + 1);
    for (line_no, line) in &lines[1..] {
        let record: FrameRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, *line_no, format!("frame record: {e}")))?;
        let expected = t1 + entries.len();
        if record.frame != expected {
            return Err(Error::parse(
                path,
                *line_no,
                format!("field 'frame': expected {expected}, found {}", record.frame),
            ));
        }
        if record.detections.len() != 1 {
            return Err(Error::parse(
                path,
                *line_no,
                format!(
                    "field 'detections': track frames need exactly one detection, found {}",
                    record.detections.len()
                ),
            ));
        }
        let d = &record.detections[0];
        let (detection, pose) = parse_detection(d, record.frame, expected_k, path, *line_no)?;
        entries.push(TrackEntry {
            detection,
            pose,
            candidate: if d.interpolated { None } else { Some(0) },
        });
    }
    if entries.len() != t2 - t1 + 1 {
        return Err(Error::Schema(format!(
            "{}: track_frame_range [{t1}, {t2}] declares {} frames, file has {}",
            path.display(),
            t2 - t1 + 1,
            entries.len()
        )));
    }
    Track::new(t1, entries)
}

pub fn timeline_to_string(events: &EventSet) -> String {
    let file = EventsFile {
        fps: events.fps,
        events: events
            .timelines
            .values()
            .map(|t| (t.event_type.name().to_string(), t.occurrences().to_vec()))
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("events serialize infallibly");
    s.push('\n');
    s
}

pub fn save_timeline(path: &Path, events: &EventSet) -> Result<()> {
    write_file(path, timeline_to_string(events).as_bytes())
}

pub fn parse_timeline(text: &str, path: &Path) -> Result<EventSet> {
    let file: EventsFile = serde_json::from_str(text).map_err(|e| {
        Error::parse(path, e.line(), format!("events file: {e}"))
    })?;
    let mut set = EventSet::new(file.fps);
    for (name, occ) in file.events {
        let t: EventType = name
            .parse()
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        let tl = EventTimeline::new(t, occ)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        set.insert(tl);
    }
    Ok(set)
}

pub fn load_timeline(path: &Path) -> Result<EventSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_timeline(&text, path)
}
