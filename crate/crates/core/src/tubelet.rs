//! Tubelets, score aggregation, tubelet overlap and tubelet NMS.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// A `C + 1` way classification distribution. Index 0 is background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::InvalidScores(format!(
                "need background plus at least one class, got {} entries",
                scores.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidScores(format!("entry {bad} outside [0, 1]")));
        }
        Ok(Self(scores))
    }

    /// A vector with `score` on `label`, `1 - score` on background, zero elsewhere.
    pub fn from_label(label: usize, score: f64, num_classes: usize) -> Result<Self> {
        if label == 0 || label > num_classes {
            return Err(Error::InvalidClass {
                class_id: label,
                num_classes,
            });
        }
        let mut v = vec![0.0; num_classes + 1];
        v[label] = score;
        v[0] = (1.0 - score).max(0.0);
        Self::new(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of foreground classes.
    pub fn num_classes(&self) -> usize {
        self.0.len() - 1
    }

    pub fn get(&self, class_id: usize) -> f64 {
        self.0[class_id]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Highest-scoring foreground class and its score.
    pub fn best_class(&self) -> (usize, f64) {
        let mut best = (1, self.0[1]);
        for (c, &s) in self.0.iter().enumerate().skip(2) {
            if s > best.1 {
                best = (c, s);
            }
        }
        best
    }

    pub(crate) fn check_class(&self, class_id: usize) -> Result<()> {
        if class_id == 0 || class_id >= self.0.len() {
            return Err(Error::InvalidClass {
                class_id,
                num_classes: self.num_classes(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for ScoreVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ScoreVector> for Vec<f64> {
    fn from(v: ScoreVector) -> Self {
        v.0
    }
}

/// How per-frame score vectors are combined into a tubelet score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    Mean,
    Max,
    #[default]
    MeanMax,
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationMode::Mean => "mean",
            AggregationMode::Max => "max",
            AggregationMode::MeanMax => "mean_max",
        })
    }
}

impl FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            "mean_max" | "mean-max" => Ok(Self::MeanMax),
            other => Err(Error::InvalidConfig(format!(
                "unknown aggregation mode {other:?} (expected mean, max or mean_max)"
            ))),
        }
    }
}

/// Elementwise mean, max, or `(mean + max) / 2` of the input vectors.
pub fn aggregate_scores<'a, I>(vectors: I, mode: AggregationMode) -> Result<ScoreVector>
where
    I: IntoIterator<Item = &'a ScoreVector>,
{
    let mut iter = vectors.into_iter();
    let first = iter.next().ok_or(Error::EmptyAggregation)?;
    let len = first.len();
    let mut sum = first.0.clone();
    let mut max = first.0.clone();
    let mut count = 1usize;
    for v in iter {
        if v.len() != len {
            return Err(Error::ScoreLengthMismatch {
                expected: len,
                found: v.len(),
            });
        }
        for ((s, m), &x) in sum.iter_mut().zip(max.iter_mut()).zip(&v.0) {
            *s += x;
            if x > *m {
                *m = x;
            }
        }
        count += 1;
    }
    let n = count as f64;
    let out = sum
        .into_iter()
        .zip(max)
        .map(|(s, m)| {
            let mean = (s / n).min(m);
            match mode {
                AggregationMode::Mean => mean,
                AggregationMode::Max => m,
                AggregationMode::MeanMax => (mean + m) / 2.0,
            }
        })
        .collect();
    Ok(ScoreVector(out))
}

/// One per-frame entry of a tubelet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameBox {
    pub bbox: BBox,
    pub scores: ScoreVector,
    /// Index of the source detection within its frame, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<usize>,
}

impl FrameBox {
    pub fn new(bbox: BBox, scores: ScoreVector) -> Self {
        Self {
            bbox,
            scores,
            origin: None,
        }
    }

    pub fn with_origin(mut self, origin: usize) -> Self {
        self.origin = Some(origin);
        self
    }
}

/// A sequence of boxes on consecutive frames with an aggregated score.
///
/// Frames are 1-based; `boxes[i]` belongs to frame `start_frame + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tubelet {
    start_frame: usize,
    boxes: Vec<FrameBox>,
    aggregated: ScoreVector,
}

impl Tubelet {
    pub fn new(start_frame: usize, boxes: Vec<FrameBox>, mode: AggregationMode) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::InvalidTubelet("no boxes".into()));
        }
        if start_frame == 0 {
            return Err(Error::InvalidTubelet("frames are 1-based".into()));
        }
        let aggregated = aggregate_scores(boxes.iter().map(|b| &b.scores), mode)?;
        Ok(Self {
            start_frame,
            boxes,
            aggregated,
        })
    }

    pub fn start_frame(&self) -> usize {
        self.start_frame
    }

    /// Last covered frame (inclusive).
    pub fn end_frame(&self) -> usize {
        self.start_frame + self.boxes.len() - 1
    }

    /// Covered frames as an inclusive `(first, last)` pair.
    pub fn span(&self) -> (usize, usize) {
        (self.start_frame, self.end_frame())
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn boxes(&self) -> &[FrameBox] {
        &self.boxes
    }

    pub fn aggregated(&self) -> &ScoreVector {
        &self.aggregated
    }

    pub fn score(&self, class_id: usize) -> f64 {
        self.aggregated.get(class_id)
    }

    /// The entry at an absolute frame index, if covered.
    pub fn at_frame(&self, frame: usize) -> Option<&FrameBox> {
        frame
            .checked_sub(self.start_frame)
            .and_then(|i| self.boxes.get(i))
    }

    pub fn first(&self) -> &FrameBox {
        &self.boxes[0]
    }

    pub fn last(&self) -> &FrameBox {
        &self.boxes[self.boxes.len() - 1]
    }

    /// Frames with their entries, in order.
    pub fn frames(&self) -> impl Iterator<Item = (usize, &FrameBox)> {
        self.boxes
            .iter()
            .enumerate()
            .map(move |(i, b)| (self.start_frame + i, b))
    }

    pub fn into_boxes(self) -> Vec<FrameBox> {
        self.boxes
    }
}

/// Spatial overlap of two tubelets over the same frames: the minimum per-frame IoU.
pub fn tubelet_overlap(a: &Tubelet, b: &Tubelet) -> Result<f64> {
    if a.span() != b.span() {
        return Err(span_mismatch(a, b));
    }
    Ok(a.boxes
        .iter()
        .zip(&b.boxes)
        .map(|(p, q)| iou(&p.bbox, &q.bbox))
        .fold(1.0, f64::min))
}

fn span_mismatch(a: &Tubelet, b: &Tubelet) -> Error {
    Error::SpanMismatch {
        a_start: a.start_frame(),
        a_end: a.end_frame(),
        b_start: b.start_frame(),
        b_end: b.end_frame(),
    }
}

pub(crate) fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidThreshold(threshold))
    }
}

/// Indices kept by tubelet NMS, in keep order.
///
/// Tubelets are visited by descending aggregated score for `class_id`, ties
/// going to the lower index. A tubelet is suppressed when its overlap with an
/// already kept tubelet exceeds `threshold`.
pub fn tubelet_nms_indices(tubelets: &[Tubelet], class_id: usize, threshold: f64) -> Result<Vec<usize>> {
    check_threshold(threshold)?;
    let Some(head) = tubelets.first() else {
        return Ok(Vec::new());
    };
    head.aggregated.check_class(class_id)?;
    for t in &tubelets[1..] {
        if t.span() != head.span() {
            return Err(span_mismatch(head, t));
        }
        if t.aggregated.len() != head.aggregated.len() {
            return Err(Error::ScoreLengthMismatch {
                expected: head.aggregated.len(),
                found: t.aggregated.len(),
            });
        }
    }

    let mut order: Vec<usize> = (0..tubelets.len()).collect();
    order.sort_by(|&i, &j| {
        tubelets[j]
            .score(class_id)
            .total_cmp(&tubelets[i].score(class_id))
            .then(i.cmp(&j))
    });

    let mut keep: Vec<usize> = Vec::new();
    'outer: for i in order {
        for &k in &keep {
            if tubelet_overlap(&tubelets[k], &tubelets[i])? > threshold {
                continue 'outer;
            }
        }
        keep.push(i);
    }
    Ok(keep)
}

/// Tubelet NMS returning the kept tubelets in keep order.
pub fn tubelet_nms(tubelets: &[Tubelet], class_id: usize, threshold: f64) -> Result<Vec<Tubelet>> {
    Ok(tubelet_nms_indices(tubelets, class_id, threshold)?
        .into_iter()
        .map(|i| tubelets[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(v: &[f64]) -> ScoreVector {
        ScoreVector::new(v.to_vec()).unwrap()
    }

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn tube(start: usize, entries: &[(BBox, f64)]) -> Tubelet {
        let boxes = entries
            .iter()
            .map(|&(b, s)| FrameBox::new(b, sv(&[1.0 - s, s])))
            .collect();
        Tubelet::new(start, boxes, AggregationMode::MeanMax).unwrap()
    }

    #[test]
    fn score_vector_validation() {
        assert!(ScoreVector::new(vec![1.0]).is_err());
        assert!(ScoreVector::new(vec![0.5, 1.5]).is_err());
        assert!(ScoreVector::new(vec![0.5, f64::NAN]).is_err());
        let v = ScoreVector::from_label(2, 0.7, 3).unwrap();
        assert_eq!(v.as_slice(), &[1.0 - 0.7, 0.0, 0.7, 0.0]);
        assert!(ScoreVector::from_label(0, 0.7, 3).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let v = sv(&[0.3, 0.7]);
        for mode in [AggregationMode::Mean, AggregationMode::Max, AggregationMode::MeanMax] {
            assert_eq!(aggregate_scores([&v], mode).unwrap(), v);
            let agg = aggregate_scores([&v, &v, &v], mode).unwrap();
            for (a, b) in agg.as_slice().iter().zip(v.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let lo = sv(&[0.8, 0.2]);
        let hi = sv(&[0.2, 0.8]);
        let agg = aggregate_scores([&lo, &hi], AggregationMode::MeanMax).unwrap();
        assert!((agg.get(1) - 0.65).abs() < 1e-12);
        let agg = aggregate_scores([&lo, &hi], AggregationMode::Mean).unwrap();
        assert!((agg.get(1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn aggregation_errors() {
        let empty: [&ScoreVector; 0] = [];
        assert!(matches!(
            aggregate_scores(empty, AggregationMode::Mean),
            Err(Error::EmptyAggregation)
        ));
        let a = sv(&[0.5, 0.5]);
        let b = sv(&[0.5, 0.25, 0.25]);
        assert!(matches!(
            aggregate_scores([&a, &b], AggregationMode::Mean),
            Err(Error::ScoreLengthMismatch { .. })
        ));
    }

    #[test]
    fn overlap_examples() {
        let a = bx(0.0, 0.0, 1.0, 1.0);
        let t = tube(3, &[(a, 0.9), (a, 0.8)]);
        assert_eq!(tubelet_overlap(&t, &t).unwrap(), 1.0);
        let split = tube(3, &[(a, 0.9), (bx(5.0, 5.0, 6.0, 6.0), 0.8)]);
        assert_eq!(tubelet_overlap(&t, &split).unwrap(), 0.0);
        let third = tube(3, &[(bx(0.5, 0.0, 1.5, 1.0), 0.9), (a, 0.8)]);
        assert!((tubelet_overlap(&t, &third).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let shifted = tube(4, &[(a, 0.9), (a, 0.8)]);
        assert!(matches!(
            tubelet_overlap(&t, &shifted),
            Err(Error::SpanMismatch { .. })
        ));
    }

    #[test]
    fn nms_examples() {
        assert!(tubelet_nms(&[], 1, 0.4).unwrap().is_empty());
        let a = bx(0.0, 0.0, 1.0, 1.0);
        let weak = tube(1, &[(a, 0.6), (a, 0.6)]);
        let strong = tube(1, &[(a, 0.9), (a, 0.9)]);
        let kept = tubelet_nms(&[weak, strong.clone()], 1, 0.4).unwrap();
        assert_eq!(kept, vec![strong]);
    }

    #[test]
    fn nms_rejects_bad_inputs() {
        let a = bx(0.0, 0.0, 1.0, 1.0);
        let t1 = tube(1, &[(a, 0.6), (a, 0.6)]);
        let t2 = tube(2, &[(a, 0.6), (a, 0.6)]);
        assert!(matches!(
            tubelet_nms(&[t1.clone(), t2], 1, 0.4),
            Err(Error::SpanMismatch { .. })
        ));
        assert!(matches!(tubelet_nms(std::slice::from_ref(&t1), 0, 0.4), Err(Error::InvalidClass { .. })));
        assert!(matches!(tubelet_nms(std::slice::from_ref(&t1), 2, 0.4), Err(Error::InvalidClass { .. })));
        assert!(matches!(tubelet_nms(&[t1], 1, 1.0), Err(Error::InvalidThreshold(_))));
    }

    #[test]
    fn nms_ties_keep_lower_index() {
        let a = bx(0.0, 0.0, 1.0, 1.0);
        let t = tube(1, &[(a, 0.5)]);
        assert_eq!(tubelet_nms_indices(&[t.clone(), t], 1, 0.4).unwrap(), vec![0]);
    }

    fn arb_vectors() -> impl Strategy<Value = Vec<ScoreVector>> {
        (2usize..5).prop_flat_map(|len| {
            prop::collection::vec(
                prop::collection::vec(0.0..=1.0f64, len).prop_map(|v| ScoreVector::new(v).unwrap()),
                1..7,
            )
        })
    }

    proptest! {
        #[test]
        fn aggregation_bounded_by_min_and_max(vs in arb_vectors()) {
            for mode in [AggregationMode::Mean, AggregationMode::Max, AggregationMode::MeanMax] {
                let agg = aggregate_scores(&vs, mode).unwrap();
                for c in 0..agg.len() {
                    let lo = vs.iter().map(|v| v.get(c)).fold(f64::INFINITY, f64::min);
                    let hi = vs.iter().map(|v| v.get(c)).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(agg.get(c) >= lo - 1e-12 && agg.get(c) <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn aggregation_permutation_invariant(vs in arb_vectors()) {
            let mut rev = vs.clone();
            rev.reverse();
            for mode in [AggregationMode::Mean, AggregationMode::Max, AggregationMode::MeanMax] {
                let a = aggregate_scores(&vs, mode).unwrap();
                let b = aggregate_scores(&rev, mode).unwrap();
                for c in 0..a.len() {
                    prop_assert!((a.get(c) - b.get(c)).abs() < 1e-12);
                }
            }
        }
    }
}
