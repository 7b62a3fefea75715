//! Video detection post-processing by same-frame tubelet linking.
//!
//! Per-frame detections are cut into overlapping segments, turned into short
//! tubelets, deduplicated with tubelet NMS and greedily linked into long
//! tubelets whose aggregated scores are spread back onto their boxes.

pub mod assembly;
pub mod baselines;
pub mod detection;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod linking;
pub mod pipeline;
pub mod segment;
pub mod synth;
pub mod tubelet;

pub use detection::{Detection, FrameDetections, ScoredDetection};
pub use error::{Error, Result};
pub use geometry::{bounding_box, iou, BBox};
pub use segment::{plan_segments, SegmentPlan};
pub use tubelet::{aggregate_scores, tubelet_nms, tubelet_overlap, AggregationMode, FrameBox, ScoreVector, Tubelet};
