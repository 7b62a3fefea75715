//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tubelink::segment::SegmentPlan;
use tubelink::{AggregationMode, BBox, FrameBox, ScoreVector, Tubelet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bx(c: [f64; 4]) -> BBox {
    BBox::try_from(c).unwrap()
}

/// Number of grid cells of `0..n` over `[lo, hi)` whose centers fall inside `[a, b]`.
fn covered_cells(lo: f64, hi: f64, n: usize, a: f64, b: f64) -> usize {
    let h = (hi - lo) / n as f64;
    (0..n)
        .filter(|&i| {
            let c = lo + (i as f64 + 0.5) * h;
            c >= a && c <= b
        })
        .count()
}

/// IoU by counting cells of an `n x n` raster laid over the union of both boxes.
///
/// A cell belongs to a box when its center does. Rectangles rasterize to a
/// product of row and column sets, so counts factor per axis.
pub fn raster_iou(p: &BBox, q: &BBox, n: usize) -> f64 {
    let (lx, hx) = (p.x1().min(q.x1()), p.x2().max(q.x2()));
    let (ly, hy) = (p.y1().min(q.y1()), p.y2().max(q.y2()));
    let cells = |b: &BBox| covered_cells(lx, hx, n, b.x1(), b.x2()) * covered_cells(ly, hy, n, b.y1(), b.y2());
    let both = {
        let ix = (0..n)
            .filter(|&i| {
                let c = lx + (i as f64 + 0.5) * (hx - lx) / n as f64;
                c >= p.x1() && c <= p.x2() && c >= q.x1() && c <= q.x2()
            })
            .count();
        let iy = (0..n)
            .filter(|&i| {
                let c = ly + (i as f64 + 0.5) * (hy - ly) / n as f64;
                c >= p.y1() && c <= p.y2() && c >= q.y1() && c <= q.y2()
            })
            .count();
        ix * iy
    };
    let union = cells(p) + cells(q) - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

/// IoU written out from scratch.
pub fn ref_iou(p: &BBox, q: &BBox) -> f64 {
    let w = (p.x2().min(q.x2()) - p.x1().max(q.x1())).max(0.0);
    let h = (p.y2().min(q.y2()) - p.y1().max(q.y1())).max(0.0);
    let inter = w * h;
    let union = (p.x2() - p.x1()) * (p.y2() - p.y1()) + (q.x2() - q.x1()) * (q.y2() - q.y1()) - inter;
    inter / union
}

pub fn ref_overlap(a: &Tubelet, b: &Tubelet) -> f64 {
    a.boxes()
        .iter()
        .zip(b.boxes())
        .map(|(p, q)| ref_iou(&p.bbox, &q.bbox))
        .fold(f64::INFINITY, f64::min)
}

/// Tubelet NMS by repeated selection: take the best remaining tubelet, drop
/// everything overlapping it, repeat.
pub fn ref_tubelet_nms(tubelets: &[Tubelet], class_id: usize, threshold: f64) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..tubelets.len()).collect();
    let mut keep = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for k in 1..remaining.len() {
            if tubelets[remaining[k]].score(class_id) > tubelets[remaining[best]].score(class_id) {
                best = k;
            }
        }
        let head = remaining.remove(best);
        keep.push(head);
        remaining.retain(|&i| ref_overlap(&tubelets[head], &tubelets[i]) <= threshold);
    }
    keep
}

/// Short tubelet of consecutive `boxes` starting at `start`, all sharing `scores`.
pub fn tube(start: usize, boxes: &[[f64; 4]], scores: &[&[f64]]) -> Tubelet {
    let fbs = boxes
        .iter()
        .zip(scores)
        .map(|(b, s)| FrameBox::new(bx(*b), ScoreVector::new(s.to_vec()).unwrap()))
        .collect();
    Tubelet::new(start, fbs, AggregationMode::MeanMax).unwrap()
}

fn corner_order(a: &Tubelet, b: &Tubelet) -> std::cmp::Ordering {
    let (p, q) = (a.first().bbox.corners(), b.first().bbox.corners());
    for k in 0..4 {
        match p[k].total_cmp(&q[k]) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

struct Entry {
    tubelet: Tubelet,
    first_seg: usize,
    last_seg: usize,
    created: usize,
}

/// True when `a` is popped before `b`.
fn pops_before(a: &Entry, b: &Entry, class_id: usize) -> bool {
    let (sa, sb) = (a.tubelet.score(class_id), b.tubelet.score(class_id));
    if sa != sb {
        return sa > sb;
    }
    if a.tubelet.start_frame() != b.tubelet.start_frame() {
        return a.tubelet.start_frame() < b.tubelet.start_frame();
    }
    match corner_order(&a.tubelet, &b.tubelet) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => a.created < b.created,
    }
}

/// Joins two tubelets sharing one frame, keeping the better box there.
fn ref_merge(earlier: &Tubelet, later: &Tubelet, class_id: usize, mode: AggregationMode) -> Tubelet {
    let a = earlier.last();
    let b = later.first();
    let (sa, sb) = (a.scores.get(class_id), b.scores.get(class_id));
    let take_later = sb > sa || (sb == sa && later.score(class_id) > earlier.score(class_id));
    let mut boxes: Vec<FrameBox> = earlier.boxes().to_vec();
    boxes.pop();
    boxes.push(if take_later { b.clone() } else { a.clone() });
    boxes.extend(later.boxes().iter().skip(1).cloned());
    Tubelet::new(earlier.start_frame(), boxes, mode).unwrap()
}

/// Greedy linking written as a linear scan over a flat list.
///
/// Returns finalized tubelets in finalization order.
pub fn ref_link(groups: &[Vec<Tubelet>], class_id: usize, threshold: f64, mode: AggregationMode) -> Vec<Tubelet> {
    let mut created = 0;
    let mut pool: Vec<Entry> = Vec::new();
    for (m, g) in groups.iter().enumerate() {
        for t in g {
            pool.push(Entry {
                tubelet: t.clone(),
                first_seg: m,
                last_seg: m,
                created,
            });
            created += 1;
        }
    }
    let mut done = Vec::new();
    while !pool.is_empty() {
        let mut h = 0;
        for k in 1..pool.len() {
            if pops_before(&pool[k], &pool[h], class_id) {
                h = k;
            }
        }
        let head = pool.remove(h);
        // (iou, index in pool, candidate comes after head)
        let mut best: Option<(f64, usize, bool)> = None;
        for (k, c) in pool.iter().enumerate() {
            let after = c.first_seg == head.last_seg + 1;
            let before = c.last_seg + 1 == head.first_seg;
            if !after && !before {
                continue;
            }
            let v = if after {
                ref_iou(&head.tubelet.last().bbox, &c.tubelet.first().bbox)
            } else {
                ref_iou(&head.tubelet.first().bbox, &c.tubelet.last().bbox)
            };
            if v < threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((bv, bk, _)) => v > bv || (v == bv && pops_before(c, &pool[bk], class_id)),
            };
            if better {
                best = Some((v, k, after));
            }
        }
        match best {
            None => done.push(head.tubelet),
            Some((_, k, after)) => {
                let cand = pool.remove(k);
                let (e, l) = if after { (head, cand) } else { (cand, head) };
                pool.push(Entry {
                    tubelet: ref_merge(&e.tubelet, &l.tubelet, class_id, mode),
                    first_seg: e.first_seg,
                    last_seg: l.last_seg,
                    created,
                });
                created += 1;
            }
        }
    }
    done
}

/// Best total score over every path of linked boxes on consecutive frames.
pub fn ref_best_path_total(boxes: &[Vec<BBox>], scores: &[Vec<f64>], link_iou: f64) -> Option<f64> {
    fn extend(f: usize, i: usize, acc: f64, boxes: &[Vec<BBox>], scores: &[Vec<f64>], link_iou: f64, best: &mut Option<f64>) {
        if best.is_none_or(|b| acc > b) {
            *best = Some(acc);
        }
        if f + 1 < boxes.len() {
            for j in 0..boxes[f + 1].len() {
                if ref_iou(&boxes[f][i], &boxes[f + 1][j]) >= link_iou {
                    extend(f + 1, j, acc + scores[f + 1][j], boxes, scores, link_iou, best);
                }
            }
        }
    }
    let mut best = None;
    for f in 0..boxes.len() {
        for i in 0..boxes[f].len() {
            extend(f, i, scores[f][i], boxes, scores, link_iou, &mut best);
        }
    }
    best
}

/// A box near `anchor` on a coarse grid, so exact IoU ties occur.
pub fn near_box(r: &mut ChaCha8Rng, anchor: [f64; 4], spread: f64) -> [f64; 4] {
    let step = spread / 4.0;
    let mut d = || f64::from(r.random_range(-4i32..=4)) * step;
    let x1 = anchor[0] + d();
    let y1 = anchor[1] + d();
    let w = (anchor[2] - anchor[0] + d()).max(step.max(1.0));
    let h = (anchor[3] - anchor[1] + d()).max(step.max(1.0));
    [x1, y1, x1 + w, y1 + h]
}

/// Score vector over `classes` foreground classes drawn from a coarse grid.
pub fn coarse_scores(r: &mut ChaCha8Rng, classes: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..classes).map(|_| f64::from(r.random_range(0..=4u8)) / 16.0).collect();
    let fg: f64 = v.iter().sum();
    v.insert(0, 1.0 - fg);
    v
}

/// Random linking instance: up to `max_tubelets` short tubelets over a plan.
pub fn random_link_instance(r: &mut ChaCha8Rng, plan: &SegmentPlan, max_tubelets: usize) -> Vec<Vec<Tubelet>> {
    let total = r.random_range(1..=max_tubelets);
    let anchors: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            let x = f64::from(r.random_range(0..40u8));
            let y = f64::from(r.random_range(0..40u8));
            [x, y, x + 20.0, y + 20.0]
        })
        .collect();
    let mut groups = vec![Vec::new(); plan.len()];
    for _ in 0..total {
        let m = r.random_range(0..plan.len());
        let (a, b) = plan.span(m);
        let anchor = anchors[r.random_range(0..anchors.len())];
        let boxes: Vec<[f64; 4]> = (a..=b).map(|_| near_box(r, anchor, 8.0)).collect();
        let scores: Vec<Vec<f64>> = (a..=b).map(|_| coarse_scores(r, 2)).collect();
        let refs: Vec<&[f64]> = scores.iter().map(|s| s.as_slice()).collect();
        groups[m].push(tube(a, &boxes, &refs));
    }
    groups
}

/// Random T-NMS instance: up to `max_tubelets` tubelets over a common span.
pub fn random_nms_instance(r: &mut ChaCha8Rng, max_tubelets: usize) -> Vec<Tubelet> {
    let len = r.random_range(1..=4usize);
    let n = r.random_range(0..=max_tubelets);
    let anchor = {
        let x = f64::from(r.random_range(0..20u8));
        [x, x, x + 30.0, x + 30.0]
    };
    (0..n)
        .map(|_| {
            let boxes: Vec<[f64; 4]> = (0..len).map(|_| near_box(r, anchor, 12.0)).collect();
            let scores: Vec<Vec<f64>> = (0..len).map(|_| coarse_scores(r, 2)).collect();
            let refs: Vec<&[f64]> = scores.iter().map(|s| s.as_slice()).collect();
            tube(3, &boxes, &refs)
        })
        .collect()
}
