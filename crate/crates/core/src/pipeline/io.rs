//! JSON-lines wire formats.
//!
//! Detections: one record per box, `{"video_id", "frame", "bbox": [x1, y1, x2, y2],
//! "scores": [...]}` or with `"label"`/`"score"` instead of `"scores"`. A box
//! may instead be given in center form as `"bbox_xywh": [cx, cy, w, h]`. A
//! record without a box marks a frame that has no detections.
//!
//! Ground truth: one record per box, `{"video_id", "frame", "track_id",
//! "class_id", "bbox", "occluded"}`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::detection::{Detection, FrameDetections, ScoredDetection};
use crate::error::{Error, Result};
use crate::eval::{GroundTruthTrack, VideoGroundTruth, VideoOutput};
use crate::geometry::BBox;
use crate::tubelet::ScoreVector;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub video_id: String,
    pub frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox_xywh: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_track_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tubelet_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub video_id: String,
    pub frame: usize,
    pub track_id: u64,
    pub class_id: usize,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub occluded: bool,
}

/// Raw detections of one video, frames `1..=n`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VideoDetections {
    pub video_id: String,
    pub frames: Vec<FrameDetections>,
}

impl VideoDetections {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

/// A long tubelet as written to `tubelets.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeletRecord {
    pub video_id: String,
    pub tubelet_id: u64,
    pub class_id: usize,
    pub start_frame: usize,
    pub score: f64,
    pub boxes: Vec<[f64; 4]>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn read_records<T: for<'de> Deserialize<'de>>(reader: impl BufRead) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn record_box(line: usize, rec: &DetectionRecord) -> Result<Option<BBox>> {
    let b = match (rec.bbox, rec.bbox_xywh) {
        (Some(_), Some(_)) => return Err(parse_err(line, "both bbox and bbox_xywh given")),
        (Some(c), None) => BBox::try_from(c),
        (None, Some([cx, cy, w, h])) => BBox::from_center(cx, cy, w, h),
        (None, None) => return Ok(None),
    };
    b.map(Some).map_err(|e| parse_err(line, e.to_string()))
}

enum RecordScores {
    Vector(Vec<f64>),
    Label(usize, f64),
}

fn record_scores(line: usize, rec: &DetectionRecord) -> Result<RecordScores> {
    match (&rec.scores, rec.label, rec.score) {
        (Some(v), None, None) => Ok(RecordScores::Vector(v.clone())),
        (None, Some(l), Some(s)) => Ok(RecordScores::Label(l, s)),
        _ => Err(parse_err(line, "expected either scores or label with score")),
    }
}

fn group_frames(
    by_video: BTreeMap<String, BTreeMap<usize, Vec<Detection>>>,
) -> Result<Vec<VideoDetections>> {
    by_video
        .into_iter()
        .map(|(video_id, frames)| {
            let n = frames.keys().next_back().copied().unwrap_or(0);
            if let Some(missing) = (1..=n).find(|f| !frames.contains_key(f)) {
                return Err(Error::FrameGap {
                    video: video_id,
                    missing,
                });
            }
            let frames = frames
                .into_iter()
                .map(|(f, d)| FrameDetections::new(f, d))
                .collect();
            Ok(VideoDetections { video_id, frames })
        })
        .collect()
}

/// Reads raw detections, grouped by video (sorted by id) and frame.
///
/// Label-form records are widened to full score vectors using the largest
/// class id seen in the input.
pub fn read_detections(reader: impl BufRead) -> Result<Vec<VideoDetections>> {
    let records: Vec<(usize, DetectionRecord)> = read_records(reader)?;
    let mut n_classes = 0usize;
    for (line, rec) in &records {
        if rec.frame == 0 {
            return Err(parse_err(*line, "frames are 1-based"));
        }
        if record_box(*line, rec)?.is_some() {
            match record_scores(*line, rec)? {
                RecordScores::Vector(v) => n_classes = n_classes.max(v.len().saturating_sub(1)),
                RecordScores::Label(l, _) => n_classes = n_classes.max(l),
            }
        }
    }
    let mut by_video: BTreeMap<String, BTreeMap<usize, Vec<Detection>>> = BTreeMap::new();
    for (line, rec) in records {
        let frame = by_video.entry(rec.video_id.clone()).or_default().entry(rec.frame).or_default();
        let Some(bbox) = record_box(line, &rec)? else {
            continue;
        };
        let scores = match record_scores(line, &rec)? {
            RecordScores::Vector(v) => {
                if v.len() != n_classes + 1 {
                    return Err(parse_err(
                        line,
                        format!("expected {} scores, found {}", n_classes + 1, v.len()),
                    ));
                }
                ScoreVector::new(v)
            }
            RecordScores::Label(l, s) => ScoreVector::from_label(l, s, n_classes),
        }
        .map_err(|e| parse_err(line, e.to_string()))?;
        frame.push(Detection {
            bbox,
            scores,
            id: rec.gt_track_id,
        });
    }
    group_frames(by_video)
}

/// Reads single-class scored detections (label form) for evaluation.
///
/// Full score vectors are expanded into one detection per foreground class.
pub fn read_scored(reader: impl BufRead) -> Result<Vec<VideoOutput>> {
    let mut by_video: BTreeMap<String, Vec<ScoredDetection>> = BTreeMap::new();
    for (line, rec) in read_records::<DetectionRecord>(reader)? {
        let out = by_video.entry(rec.video_id.clone()).or_default();
        let Some(bbox) = record_box(line, &rec)? else {
            continue;
        };
        match record_scores(line, &rec)? {
            RecordScores::Label(class_id, score) => out.push(ScoredDetection {
                frame: rec.frame,
                bbox,
                class_id,
                score,
                tubelet_id: rec.tubelet_id,
            }),
            RecordScores::Vector(v) => {
                for (class_id, &score) in v.iter().enumerate().skip(1) {
                    out.push(ScoredDetection {
                        frame: rec.frame,
                        bbox,
                        class_id,
                        score,
                        tubelet_id: rec.tubelet_id,
                    });
                }
            }
        }
    }
    Ok(by_video
        .into_iter()
        .map(|(video_id, detections)| VideoOutput { video_id, detections })
        .collect())
}

fn write_line<T: Serialize>(w: &mut impl Write, rec: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, rec).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Writes raw detections; empty frames get a box-less marker record.
pub fn write_detections(w: &mut impl Write, videos: &[VideoDetections]) -> Result<()> {
    for v in videos {
        for fd in &v.frames {
            if fd.is_empty() {
                write_line(
                    w,
                    &DetectionRecord {
                        video_id: v.video_id.clone(),
                        frame: fd.frame,
                        ..Default::default()
                    },
                )?;
            }
            for d in &fd.detections {
                write_line(
                    w,
                    &DetectionRecord {
                        video_id: v.video_id.clone(),
                        frame: fd.frame,
                        bbox: Some(d.bbox.corners()),
                        scores: Some(d.scores.as_slice().to_vec()),
                        gt_track_id: d.id,
                        ..Default::default()
                    },
                )?;
            }
        }
    }
    Ok(())
}

/// Writes single-class scored detections in label form.
pub fn write_scored(w: &mut impl Write, outputs: &[VideoOutput]) -> Result<()> {
    for v in outputs {
        for d in &v.detections {
            write_line(
                w,
                &DetectionRecord {
                    video_id: v.video_id.clone(),
                    frame: d.frame,
                    bbox: Some(d.bbox.corners()),
                    label: Some(d.class_id),
                    score: Some(d.score),
                    tubelet_id: d.tubelet_id,
                    ..Default::default()
                },
            )?;
        }
    }
    Ok(())
}

pub fn write_ground_truth(w: &mut impl Write, videos: &[VideoGroundTruth]) -> Result<()> {
    for v in videos {
        for t in &v.tracks {
            for (frame, b) in t.frames() {
                write_line(
                    w,
                    &GroundTruthRecord {
                        video_id: v.video_id.clone(),
                        frame,
                        track_id: t.track_id,
                        class_id: t.class_id,
                        bbox: b.corners(),
                        occluded: t.occluded_at(frame),
                    },
                )?;
            }
        }
    }
    Ok(())
}

/// Reads ground truth, grouped by video (sorted by id) and track.
///
/// `n_frames` of each video is its last annotated frame.
pub fn read_ground_truth(reader: impl BufRead) -> Result<Vec<VideoGroundTruth>> {
    type TrackFrames = BTreeMap<usize, (usize, BBox, bool, usize)>;
    let mut by_video: BTreeMap<String, BTreeMap<u64, TrackFrames>> = BTreeMap::new();
    for (line, rec) in read_records::<GroundTruthRecord>(reader)? {
        let bbox = BBox::try_from(rec.bbox).map_err(|e| parse_err(line, e.to_string()))?;
        if rec.frame == 0 || rec.class_id == 0 {
            return Err(parse_err(line, "frames and class ids are 1-based"));
        }
        let track = by_video.entry(rec.video_id).or_default().entry(rec.track_id).or_default();
        if track.insert(rec.frame, (rec.class_id, bbox, rec.occluded, line)).is_some() {
            return Err(parse_err(line, format!("duplicate frame {} for track {}", rec.frame, rec.track_id)));
        }
    }
    by_video
        .into_iter()
        .map(|(video_id, tracks)| {
            let mut n_frames = 0;
            let tracks = tracks
                .into_iter()
                .map(|(track_id, frames)| {
                    let start = *frames.keys().next().expect("track has a frame");
                    let (class_id, _, _, _) = frames[&start];
                    let mut boxes = Vec::with_capacity(frames.len());
                    let mut occluded = Vec::with_capacity(frames.len());
                    for (i, (f, (c, b, o, line))) in frames.into_iter().enumerate() {
                        if f != start + i {
                            return Err(parse_err(line, format!("track {track_id} skips frame {}", start + i)));
                        }
                        if c != class_id {
                            return Err(parse_err(line, format!("track {track_id} changes class")));
                        }
                        boxes.push(b);
                        occluded.push(o);
                    }
                    n_frames = n_frames.max(start + boxes.len() - 1);
                    GroundTruthTrack::with_occlusion(track_id, class_id, start, boxes, occluded)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(VideoGroundTruth {
                video_id,
                n_frames,
                tracks,
            })
        })
        .collect()
}

pub fn write_tubelets(w: &mut impl Write, tubelets: &[TubeletRecord]) -> Result<()> {
    for t in tubelets {
        write_line(w, t)?;
    }
    Ok(())
}

pub fn read_tubelets(reader: impl BufRead) -> Result<Vec<TubeletRecord>> {
    let records = read_records::<TubeletRecord>(reader)?;
    for (line, t) in &records {
        if t.boxes.is_empty() || t.start_frame == 0 {
            return Err(parse_err(*line, "tubelet needs boxes and a 1-based start frame"));
        }
        for b in &t.boxes {
            BBox::try_from(*b).map_err(|e| parse_err(*line, e.to_string()))?;
        }
    }
    Ok(records.into_iter().map(|(_, t)| t).collect())
}
