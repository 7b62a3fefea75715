use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): coordinates must be finite with x2 > x1 and y2 > y1")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("cannot bound an empty set of boxes")]
    EmptyBoxSet,

    #[error("invalid score vector: {0}")]
    InvalidScores(String),

    #[error("score vectors have mismatched lengths ({expected} vs {found})")]
    ScoreLengthMismatch { expected: usize, found: usize },

    #[error("cannot aggregate an empty list of score vectors")]
    EmptyAggregation,

    #[error("invalid tubelet: {0}")]
    InvalidTubelet(String),

    #[error("tubelet spans differ: [{a_start}, {a_end}] vs [{b_start}, {b_end}]")]
    SpanMismatch {
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },

    #[error("class id {class_id} out of range 1..={num_classes}")]
    InvalidClass { class_id: usize, num_classes: usize },

    #[error("threshold {0} must lie in the open interval (0, 1)")]
    InvalidThreshold(f64),

    #[error("segment length must be at least 2, got {0}")]
    SegmentLength(usize),

    #[error("video must contain at least one frame")]
    EmptyVideo,

    #[error("invalid corpus spec: {0}")]
    InvalidCorpus(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("video {video}: frames are not contiguous from 1 (missing frame {missing})")]
    FrameGap { video: String, missing: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
