//! Short tubelet construction from per-frame detections.
//!
//! Boxes are linked between consecutive frames of a segment by greedy
//! one-to-one IoU matching; chains spanning the whole segment become short
//! tubelets and their union box is the segment's cuboid proposal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detection::FrameDetections;
use crate::error::{Error, Result};
use crate::eval::GroundTruthTrack;
use crate::geometry::{bounding_box, iou, BBox};
use crate::tubelet::{AggregationMode, FrameBox, Tubelet};

/// The 2D simplification of a cuboid proposal: one box for every frame of a span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    pub bbox: BBox,
    /// Inclusive frame span.
    pub span: (usize, usize),
}

/// A sequence of matched detections on consecutive frames of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub start_frame: usize,
    pub boxes: Vec<FrameBox>,
    pub cuboid: Cuboid,
    /// True when the chain covers every frame of its segment.
    pub full_span: bool,
}

impl Chain {
    pub fn end_frame(&self) -> usize {
        self.start_frame + self.boxes.len() - 1
    }
}

/// Greedy one-to-one matching between two frames by descending IoU.
///
/// Returns `(i, j)` index pairs with IoU at least `threshold`.
pub fn greedy_match(prev: &[BBox], next: &[BBox], threshold: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, a) in prev.iter().enumerate() {
        for (j, b) in next.iter().enumerate() {
            let v = iou(a, b);
            if v >= threshold && v > 0.0 {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_prev = vec![false; prev.len()];
    let mut used_next = vec![false; next.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_prev[i] && !used_next[j] {
            used_prev[i] = true;
            used_next[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

/// Links detections across the consecutive frames of one segment.
///
/// Every detection lands in exactly one chain. Chains not covering the full
/// segment are returned with `full_span == false`.
pub fn pair_union_proposals(segment: &[FrameDetections], pair_iou_threshold: f64) -> Result<Vec<Chain>> {
    let Some(first) = segment.first() else {
        return Ok(Vec::new());
    };
    for (offset, fd) in segment.iter().enumerate() {
        if fd.frame != first.frame + offset {
            return Err(Error::InvalidTubelet(format!(
                "segment frames must be consecutive, found frame {} after {}",
                fd.frame,
                first.frame + offset - 1
            )));
        }
    }
    let seg_first = first.frame;
    let seg_last = seg_first + segment.len() - 1;

    // open[j] = chain index whose last member is detection j of the previous frame
    let mut chains: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    for (offset, fd) in segment.iter().enumerate() {
        let mut next_open = vec![usize::MAX; fd.len()];
        if offset > 0 {
            let prev_boxes: Vec<BBox> = segment[offset - 1].detections.iter().map(|d| d.bbox).collect();
            let next_boxes: Vec<BBox> = fd.detections.iter().map(|d| d.bbox).collect();
            for (i, j) in greedy_match(&prev_boxes, &next_boxes, pair_iou_threshold) {
                let c = open[i];
                chains[c].1.push(j);
                next_open[j] = c;
            }
        }
        for (j, slot) in next_open.iter_mut().enumerate() {
            if *slot == usize::MAX {
                *slot = chains.len();
                chains.push((fd.frame, vec![j]));
            }
        }
        open = next_open;
    }

    chains
        .into_iter()
        .map(|(start, members)| {
            let boxes: Vec<FrameBox> = members
                .iter()
                .enumerate()
                .map(|(k, &j)| {
                    let d = &segment[start - seg_first + k].detections[j];
                    FrameBox::new(d.bbox, d.scores.clone()).with_origin(j)
                })
                .collect();
            let end = start + boxes.len() - 1;
            let cuboid = Cuboid {
                bbox: bounding_box(boxes.iter().map(|b| &b.bbox))?,
                span: (start, end),
            };
            Ok(Chain {
                start_frame: start,
                full_span: start == seg_first && end == seg_last,
                boxes,
                cuboid,
            })
        })
        .collect()
}

/// Turns every full-span chain into a short tubelet.
pub fn assemble_short_tubelets(chains: &[Chain], mode: AggregationMode) -> Result<Vec<Tubelet>> {
    chains
        .iter()
        .filter(|c| c.full_span)
        .map(|c| Tubelet::new(c.start_frame, c.boxes.clone(), mode))
        .collect()
}

/// Bounded uniform perturbation applied to oracle cuboids.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CuboidJitter {
    /// Maximum relative change of width and height.
    pub scale: f64,
    /// Maximum center shift as a fraction of width (x) and height (y).
    pub translation: f64,
}

/// Ground-truth cuboids for every track alive over the whole `span`, perturbed by seeded noise.
pub fn oracle_cuboids(
    gt: &[GroundTruthTrack],
    span: (usize, usize),
    jitter: CuboidJitter,
    seed: u64,
) -> Result<Vec<Cuboid>> {
    if !(jitter.scale >= 0.0 && jitter.translation >= 0.0) || jitter.scale >= 1.0 {
        return Err(Error::InvalidConfig(format!("invalid cuboid jitter {jitter:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for track in gt {
        let boxes: Option<Vec<&BBox>> = (span.0..=span.1).map(|f| track.box_at(f)).collect();
        let Some(boxes) = boxes else { continue };
        let union = bounding_box(boxes)?;
        let bbox = if jitter.scale == 0.0 && jitter.translation == 0.0 {
            union
        } else {
            let mut unit = || rng.random_range(-1.0..=1.0);
            let (cx, cy) = union.center();
            let w = union.width() * (1.0 + jitter.scale * unit());
            let h = union.height() * (1.0 + jitter.scale * unit());
            let cx = cx + jitter.translation * union.width() * unit();
            let cy = cy + jitter.translation * union.height() * unit();
            BBox::from_center(cx, cy, w, h)?
        };
        out.push(Cuboid { bbox, span });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::Detection;
    use crate::tubelet::ScoreVector;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(b: BBox, s: f64) -> Detection {
        Detection::new(b, ScoreVector::new(vec![1.0 - s, s]).unwrap())
    }

    fn frame(f: usize, dets: Vec<Detection>) -> FrameDetections {
        FrameDetections::new(f, dets)
    }

    #[test]
    fn stationary_box_forms_one_chain() {
        let b = bx(10.0, 10.0, 20.0, 20.0);
        let seg = [frame(1, vec![det(b, 0.9)]), frame(2, vec![det(b, 0.8)])];
        let chains = pair_union_proposals(&seg, 0.3).unwrap();
        assert_eq!(chains.len(), 1);
        assert!(chains[0].full_span);
        assert_eq!(chains[0].cuboid.bbox, b);
        assert_eq!(chains[0].cuboid.span, (1, 2));
    }

    #[test]
    fn disjoint_boxes_do_not_chain() {
        let seg = [
            frame(1, vec![det(bx(0.0, 0.0, 1.0, 1.0), 0.9)]),
            frame(2, vec![det(bx(5.0, 5.0, 6.0, 6.0), 0.9)]),
        ];
        let chains = pair_union_proposals(&seg, 0.3).unwrap();
        assert_eq!(chains.len(), 2);
        assert!(chains.iter().all(|c| !c.full_span));
        assert!(assemble_short_tubelets(&chains, AggregationMode::MeanMax).unwrap().is_empty());
    }

    #[test]
    fn third_overlap_chains_at_point_three() {
        let seg = [
            frame(1, vec![det(bx(0.0, 0.0, 1.0, 1.0), 0.9)]),
            frame(2, vec![det(bx(0.5, 0.0, 1.5, 1.0), 0.9)]),
        ];
        let chains = pair_union_proposals(&seg, 0.3).unwrap();
        assert_eq!(chains.len(), 1);
        assert_eq!(chains[0].cuboid.bbox.corners(), [0.0, 0.0, 1.5, 1.0]);
        // 1/3 falls short of 0.34
        assert_eq!(pair_union_proposals(&seg, 0.34).unwrap().len(), 2);
    }

    #[test]
    fn matching_is_one_to_one() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let near = bx(1.0, 0.0, 11.0, 10.0);
        let seg = [
            frame(1, vec![det(b, 0.9)]),
            frame(2, vec![det(near, 0.5), det(b, 0.7)]),
        ];
        let chains = pair_union_proposals(&seg, 0.3).unwrap();
        let full: Vec<_> = chains.iter().filter(|c| c.full_span).collect();
        assert_eq!(full.len(), 1);
        assert_eq!(full[0].boxes[1].origin, Some(1));
        assert_eq!(chains.len(), 2);
    }

    #[test]
    fn assembly_aggregates_scores() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        let seg = [frame(4, vec![det(b, 0.2)]), frame(5, vec![det(b, 0.8)])];
        let chains = pair_union_proposals(&seg, 0.3).unwrap();
        let tubes = assemble_short_tubelets(&chains, AggregationMode::MeanMax).unwrap();
        assert_eq!(tubes.len(), 1);
        assert_eq!(tubes[0].span(), (4, 5));
        assert!((tubes[0].score(1) - 0.65).abs() < 1e-12);
        assert!(assemble_short_tubelets(&[], AggregationMode::MeanMax).unwrap().is_empty());

        let seg = [frame(1, vec![det(b, 0.7)]), frame(2, vec![det(b, 0.7)]), frame(3, vec![det(b, 0.7)])];
        let chains = pair_union_proposals(&seg, 0.3).unwrap();
        let tubes = assemble_short_tubelets(&chains, AggregationMode::MeanMax).unwrap();
        assert_eq!(tubes[0].aggregated(), &seg[0].detections[0].scores);
    }

    #[test]
    fn rejects_non_consecutive_frames() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        let seg = [frame(1, vec![det(b, 0.2)]), frame(3, vec![det(b, 0.8)])];
        assert!(pair_union_proposals(&seg, 0.3).is_err());
    }

    #[test]
    fn empty_frames_yield_no_chains() {
        let seg = [frame(1, vec![]), frame(2, vec![])];
        assert!(pair_union_proposals(&seg, 0.3).unwrap().is_empty());
    }

    fn track(id: u64, start: usize, boxes: Vec<BBox>) -> GroundTruthTrack {
        GroundTruthTrack::new(id, 1, start, boxes).unwrap()
    }

    #[test]
    fn oracle_cuboid_cases() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        let still = track(1, 1, vec![b, b]);
        let out = oracle_cuboids(&[still], (1, 2), CuboidJitter::default(), 0).unwrap();
        assert_eq!(out, vec![Cuboid { bbox: b, span: (1, 2) }]);

        let moving = track(2, 1, vec![b, bx(2.0, 0.0, 3.0, 1.0)]);
        let out = oracle_cuboids(std::slice::from_ref(&moving), (1, 2), CuboidJitter::default(), 0).unwrap();
        assert_eq!(out[0].bbox.corners(), [0.0, 0.0, 3.0, 1.0]);

        // tracks not alive over the whole span are skipped
        assert!(oracle_cuboids(std::slice::from_ref(&moving), (2, 3), CuboidJitter::default(), 0)
            .unwrap()
            .is_empty());

        let jitter = CuboidJitter { scale: 0.1, translation: 0.1 };
        let a = oracle_cuboids(std::slice::from_ref(&moving), (1, 2), jitter, 7).unwrap();
        let b2 = oracle_cuboids(&[moving], (1, 2), jitter, 7).unwrap();
        assert_eq!(
            a[0].bbox.corners().map(f64::to_bits),
            b2[0].bbox.corners().map(f64::to_bits)
        );
    }
}
