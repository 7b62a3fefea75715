//! Greedy short-tubelet linking across overlapping segments.
//!
//! All short tubelets of one class go into a pool. The highest-scoring tubelet
//! is popped and compared with the tubelets of the neighbouring segments on
//! the frame they share. When the shared-frame boxes overlap enough the two
//! are merged: the lower-scoring duplicate box is dropped, the score is
//! re-aggregated and the merged tubelet goes back into the pool. A tubelet
//! with no mergeable neighbour is finalized.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::segment::SegmentPlan;
use crate::tubelet::{check_threshold, AggregationMode, FrameBox, ScoreVector, Tubelet};

/// Priority of a pooled tubelet. Greater means popped first.
#[derive(Debug, Clone, Copy)]
struct PoolKey {
    score: f64,
    start: usize,
    anchor: [f64; 4],
    id: usize,
}

impl PoolKey {
    fn of(t: &Tubelet, class_id: usize, id: usize) -> Self {
        Self {
            score: t.score(class_id),
            start: t.start_frame(),
            anchor: t.first().bbox.corners(),
            id,
        }
    }
}

fn cmp_corners(a: &[f64; 4], b: &[f64; 4]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

impl Ord for PoolKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.start.cmp(&self.start))
            .then_with(|| cmp_corners(&other.anchor, &self.anchor))
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for PoolKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for PoolKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for PoolKey {}

#[derive(Debug)]
struct Pooled {
    tubelet: Tubelet,
    first_segment: usize,
    last_segment: usize,
    key: PoolKey,
}

/// The working set of the linker.
///
/// Every tubelet is either pooled (still mergeable) or finalized.
#[derive(Debug)]
pub struct TubeletPool {
    class_id: usize,
    slots: Vec<Option<Pooled>>,
    heap: BinaryHeap<PoolKey>,
    by_first_segment: BTreeMap<usize, BTreeSet<usize>>,
    by_last_segment: BTreeMap<usize, BTreeSet<usize>>,
    finalized: Vec<Tubelet>,
}

impl TubeletPool {
    fn new(class_id: usize) -> Self {
        Self {
            class_id,
            slots: Vec::new(),
            heap: BinaryHeap::new(),
            by_first_segment: BTreeMap::new(),
            by_last_segment: BTreeMap::new(),
            finalized: Vec::new(),
        }
    }

    fn push(&mut self, tubelet: Tubelet, first_segment: usize, last_segment: usize) {
        let id = self.slots.len();
        let key = PoolKey::of(&tubelet, self.class_id, id);
        self.by_first_segment.entry(first_segment).or_default().insert(id);
        self.by_last_segment.entry(last_segment).or_default().insert(id);
        self.heap.push(key);
        self.slots.push(Some(Pooled {
            tubelet,
            first_segment,
            last_segment,
            key,
        }));
    }

    fn take(&mut self, id: usize) -> Pooled {
        let p = self.slots[id].take().expect("pooled tubelet taken twice");
        self.by_first_segment.get_mut(&p.first_segment).map(|s| s.remove(&id));
        self.by_last_segment.get_mut(&p.last_segment).map(|s| s.remove(&id));
        p
    }

    fn pop(&mut self) -> Option<Pooled> {
        while let Some(key) = self.heap.pop() {
            if self.slots[key.id].is_some() {
                return Some(self.take(key.id));
            }
        }
        None
    }

    pub fn pooled(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn finalized(&self) -> &[Tubelet] {
        &self.finalized
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    /// The candidate follows the popped tubelet.
    After,
    /// The candidate precedes the popped tubelet.
    Before,
}

/// Joins two temporally adjacent tubelets that share one frame.
///
/// At the shared frame the box with the higher per-frame class score survives;
/// ties go to the higher tubelet score, then to the earlier tubelet.
pub fn merge_adjacent(
    earlier: &Tubelet,
    later: &Tubelet,
    class_id: usize,
    mode: AggregationMode,
) -> Result<Tubelet> {
    if earlier.end_frame() != later.start_frame() {
        return Err(Error::InvalidTubelet(format!(
            "cannot merge tubelets ending at {} and starting at {}",
            earlier.end_frame(),
            later.start_frame()
        )));
    }
    let a = earlier.last();
    let b = later.first();
    let keep_later = match b.scores.get(class_id).total_cmp(&a.scores.get(class_id)) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => later.score(class_id) > earlier.score(class_id),
    };
    let shared = if keep_later { b.clone() } else { a.clone() };
    let mut boxes: Vec<FrameBox> = Vec::with_capacity(earlier.len() + later.len() - 1);
    boxes.extend_from_slice(&earlier.boxes()[..earlier.len() - 1]);
    boxes.push(shared);
    boxes.extend_from_slice(&later.boxes()[1..]);
    Tubelet::new(earlier.start_frame(), boxes, mode)
}

/// Outcome of a linking run.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkResult {
    pub tubelets: Vec<Tubelet>,
    pub merges: usize,
}

/// Links the short tubelets of one class into long tubelets.
///
/// `groups[m]` holds the tubelets of segment `m` of `plan`; each must cover
/// exactly that segment's distinct frames.
pub fn link_short_tubelets(
    plan: &SegmentPlan,
    groups: &[Vec<Tubelet>],
    class_id: usize,
    threshold: f64,
    mode: AggregationMode,
) -> Result<LinkResult> {
    check_threshold(threshold)?;
    if groups.len() != plan.len() {
        return Err(Error::InvalidTubelet(format!(
            "{} tubelet groups for a plan of {} segments",
            groups.len(),
            plan.len()
        )));
    }
    let mut pool = TubeletPool::new(class_id);
    for (m, group) in groups.iter().enumerate() {
        for t in group {
            if t.span() != plan.span(m) {
                return Err(Error::InvalidTubelet(format!(
                    "tubelet spans {:?} but segment {} spans {:?}",
                    t.span(),
                    m,
                    plan.span(m)
                )));
            }
            t.aggregated().check_class(class_id)?;
            pool.push(t.clone(), m, m);
        }
    }

    let mut merges = 0;
    while let Some(popped) = pool.pop() {
        let head_last = popped.tubelet.last().bbox;
        let head_first = popped.tubelet.first().bbox;
        let mut best: Option<(f64, PoolKey, Side)> = None;
        let after = popped.last_segment + 1;
        let before = popped.first_segment.checked_sub(1);
        let mut consider = |ids: Option<&BTreeSet<usize>>, anchor: &BBox, side: Side, slots: &[Option<Pooled>]| {
            for &id in ids.into_iter().flatten() {
                let cand = slots[id].as_ref().expect("indexed tubelet is pooled");
                let shared = match side {
                    Side::After => &cand.tubelet.first().bbox,
                    Side::Before => &cand.tubelet.last().bbox,
                };
                let overlap = iou(anchor, shared);
                if overlap < threshold {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some((o, k, _)) => overlap.total_cmp(o).then_with(|| cand.key.cmp(k)).is_gt(),
                };
                if better {
                    best = Some((overlap, cand.key, side));
                }
            }
        };
        consider(pool.by_first_segment.get(&after), &head_last, Side::After, &pool.slots);
        if let Some(b) = before {
            consider(pool.by_last_segment.get(&b), &head_first, Side::Before, &pool.slots);
        }

        match best {
            None => pool.finalized.push(popped.tubelet),
            Some((_, key, side)) => {
                let cand = pool.take(key.id);
                let (earlier, later) = match side {
                    Side::After => (popped, cand),
                    Side::Before => (cand, popped),
                };
                let merged = merge_adjacent(&earlier.tubelet, &later.tubelet, class_id, mode)?;
                pool.push(merged, earlier.first_segment, later.last_segment);
                merges += 1;
            }
        }
    }
    Ok(LinkResult {
        tubelets: pool.finalized,
        merges,
    })
}

/// A box of a long tubelet, carrying the tubelet's aggregated score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmittedBox {
    pub bbox: BBox,
    pub scores: ScoreVector,
    /// Index of the source tubelet in the emitted list.
    pub tubelet: usize,
    pub origin: Option<usize>,
}

/// Spreads every tubelet's aggregated score onto its boxes, grouped by frame.
///
/// The result has one list per frame `1..=n_frames`; boxes outside that range are dropped.
pub fn emit_frame_detections(tubelets: &[Tubelet], n_frames: usize) -> Vec<Vec<EmittedBox>> {
    let mut frames = vec![Vec::new(); n_frames];
    for (idx, t) in tubelets.iter().enumerate() {
        for (f, fb) in t.frames() {
            if let Some(slot) = f.checked_sub(1).and_then(|i| frames.get_mut(i)) {
                slot.push(EmittedBox {
                    bbox: fb.bbox,
                    scores: t.aggregated().clone(),
                    tubelet: idx,
                    origin: fb.origin,
                });
            }
        }
    }
    frames
}
