use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::tubelet::ScoreVector;

/// A raw detector output: a box and its class distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub scores: ScoreVector,
    /// Optional identity carried through from the producer (e.g. a ground-truth track id).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
}

impl Detection {
    pub fn new(bbox: BBox, scores: ScoreVector) -> Self {
        Self {
            bbox,
            scores,
            id: None,
        }
    }
}

/// All detections of one frame. Frames are 1-based.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame: usize,
    pub detections: Vec<Detection>,
}

impl FrameDetections {
    pub fn new(frame: usize, detections: Vec<Detection>) -> Self {
        Self { frame, detections }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

/// A single-class output box with its final score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDetection {
    pub frame: usize,
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
    /// Identity of the long tubelet the box came from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tubelet_id: Option<u64>,
}
