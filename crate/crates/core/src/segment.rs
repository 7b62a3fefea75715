//! Temporally overlapping segment decomposition.
//!
//! A video of `n` frames is cut into windows of `k` frames with stride `k - 1`,
//! so consecutive windows share exactly one frame. A final window that would
//! run past the end repeats the last frame.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentPlan {
    n_frames: usize,
    segment_length: usize,
    segments: Vec<Vec<usize>>,
}

impl SegmentPlan {
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn segment_length(&self) -> usize {
        self.segment_length
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Frame indices of every segment, padded to the full length.
    pub fn segments(&self) -> &[Vec<usize>] {
        &self.segments
    }

    /// Inclusive span of distinct frames covered by segment `m`.
    pub fn span(&self, m: usize) -> (usize, usize) {
        let seg = &self.segments[m];
        (seg[0], seg[seg.len() - 1])
    }

    /// Distinct frames of segment `m`, with padding removed.
    pub fn real_frames(&self, m: usize) -> std::ops::RangeInclusive<usize> {
        let (a, b) = self.span(m);
        a..=b
    }

    /// Number of padded entries in segment `m`.
    pub fn padding(&self, m: usize) -> usize {
        let (a, b) = self.span(m);
        self.segment_length - (b - a + 1)
    }
}

/// Plans the overlapping segments for an `n_frames` video.
pub fn plan_segments(n_frames: usize, segment_length: usize) -> Result<SegmentPlan> {
    if segment_length < 2 {
        return Err(Error::SegmentLength(segment_length));
    }
    if n_frames == 0 {
        return Err(Error::EmptyVideo);
    }
    let stride = segment_length - 1;
    let count = if n_frames == 1 {
        1
    } else {
        (n_frames - 1).div_ceil(stride)
    };
    let segments = (0..count)
        .map(|m| {
            let first = 1 + m * stride;
            (0..segment_length).map(|i| (first + i).min(n_frames)).collect()
        })
        .collect();
    Ok(SegmentPlan {
        n_frames,
        segment_length,
        segments,
    })
}
