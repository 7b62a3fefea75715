//! Reference post-processing methods: per-frame NMS and Seq-NMS style
//! neighbour-frame linking.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detection::FrameDetections;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::tubelet::check_threshold;

/// Greedy NMS over boxes with precomputed scores.
///
/// Visits boxes by descending score (ties: lower index first) and drops any
/// box whose IoU with an already kept box exceeds `threshold`. Returns kept
/// indices in keep order.
pub fn nms(boxes: &[BBox], scores: &[f64], threshold: f64) -> Vec<usize> {
    debug_assert_eq!(boxes.len(), scores.len());
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= threshold) {
            keep.push(i);
        }
    }
    keep
}

/// Per-class NMS on one frame of detections.
pub fn frame_nms(detections: &FrameDetections, class_id: usize, threshold: f64) -> Result<Vec<usize>> {
    check_threshold(threshold)?;
    for d in &detections.detections {
        d.scores.check_class(class_id)?;
    }
    let boxes: Vec<BBox> = detections.detections.iter().map(|d| d.bbox).collect();
    let scores: Vec<f64> = detections.detections.iter().map(|d| d.scores.get(class_id)).collect();
    Ok(nms(&boxes, &scores, threshold))
}

/// How a linked sequence is rescored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rescore {
    #[default]
    Avg,
    Max,
}

impl fmt::Display for Rescore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rescore::Avg => "avg",
            Rescore::Max => "max",
        })
    }
}

impl FromStr for Rescore {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Self::Avg),
            "max" => Ok(Self::Max),
            other => Err(Error::InvalidConfig(format!("unknown rescore mode {other:?}"))),
        }
    }
}

/// Detections of consecutive frames linked where neighbouring boxes overlap.
///
/// Edges only join frame `f` to frame `f + 1`.
#[derive(Debug, Clone)]
pub struct LinkGraph {
    boxes: Vec<Vec<BBox>>,
    scores: Vec<Vec<f64>>,
    /// `forward[f][i]` lists the nodes of frame `f + 1` linked to node `i` of frame `f`.
    forward: Vec<Vec<Vec<usize>>>,
    backward: Vec<Vec<Vec<usize>>>,
}

/// A linked sequence: one node per frame starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkPath {
    /// Frame offset (0-based, relative to the graph) of the first node.
    pub start: usize,
    pub nodes: Vec<usize>,
    pub total: f64,
}

impl LinkGraph {
    /// Builds the graph from per-frame boxes and scores of one class.
    pub fn new(boxes: Vec<Vec<BBox>>, scores: Vec<Vec<f64>>, link_iou: f64) -> Result<Self> {
        check_threshold(link_iou)?;
        if boxes.len() != scores.len() || boxes.iter().zip(&scores).any(|(b, s)| b.len() != s.len()) {
            return Err(Error::InvalidConfig("box and score lists differ in shape".into()));
        }
        let n = boxes.len();
        let mut forward: Vec<Vec<Vec<usize>>> = boxes.iter().map(|f| vec![Vec::new(); f.len()]).collect();
        let mut backward = forward.clone();
        for f in 1..n {
            for (i, a) in boxes[f - 1].iter().enumerate() {
                for (j, b) in boxes[f].iter().enumerate() {
                    if iou(a, b) >= link_iou {
                        forward[f - 1][i].push(j);
                        backward[f][j].push(i);
                    }
                }
            }
        }
        Ok(Self {
            boxes,
            scores,
            forward,
            backward,
        })
    }

    pub fn from_detections(video: &[FrameDetections], class_id: usize, link_iou: f64) -> Result<Self> {
        let mut boxes = Vec::with_capacity(video.len());
        let mut scores = Vec::with_capacity(video.len());
        for fd in video {
            for d in &fd.detections {
                d.scores.check_class(class_id)?;
            }
            boxes.push(fd.detections.iter().map(|d| d.bbox).collect());
            scores.push(fd.detections.iter().map(|d| d.scores.get(class_id)).collect());
        }
        Self::new(boxes, scores, link_iou)
    }

    pub fn n_frames(&self) -> usize {
        self.boxes.len()
    }

    pub fn boxes(&self, frame: usize) -> &[BBox] {
        &self.boxes[frame]
    }

    pub fn scores(&self, frame: usize) -> &[f64] {
        &self.scores[frame]
    }

    /// Successors of node `i` in frame `frame`.
    pub fn successors(&self, frame: usize, i: usize) -> &[usize] {
        &self.forward[frame][i]
    }

    fn all_active(&self) -> Vec<Vec<bool>> {
        self.boxes.iter().map(|f| vec![true; f.len()]).collect()
    }

    /// True when some edge joins two active nodes.
    pub fn has_active_edge(&self, active: &[Vec<bool>]) -> bool {
        self.forward.iter().enumerate().any(|(f, nodes)| {
            nodes.iter().enumerate().any(|(i, succ)| {
                active[f][i] && succ.iter().any(|&j| active[f + 1][j])
            })
        })
    }

    /// The maximum-total-score path through active nodes.
    ///
    /// Ties prefer the path ending on the earliest frame, then the lower node
    /// index; predecessor ties prefer the lower index.
    pub fn best_path(&self, active: &[Vec<bool>]) -> Option<LinkPath> {
        let n = self.n_frames();
        let mut best: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut pred: Vec<Vec<Option<usize>>> = Vec::with_capacity(n);
        let mut end: Option<(f64, usize, usize)> = None;
        for f in 0..n {
            let mut row = vec![f64::NEG_INFINITY; self.boxes[f].len()];
            let mut prow = vec![None; self.boxes[f].len()];
            for i in 0..row.len() {
                if !active[f][i] {
                    continue;
                }
                let mut acc: Option<(f64, usize)> = None;
                if f > 0 {
                    for &j in &self.backward[f][i] {
                        if active[f - 1][j] && acc.is_none_or(|(v, _)| best[f - 1][j] > v) {
                            acc = Some((best[f - 1][j], j));
                        }
                    }
                }
                row[i] = match acc {
                    Some((v, j)) => {
                        prow[i] = Some(j);
                        v + self.scores[f][i]
                    }
                    None => self.scores[f][i],
                };
                if end.is_none_or(|(v, _, _)| row[i] > v) {
                    end = Some((row[i], f, i));
                }
            }
            best.push(row);
            pred.push(prow);
        }
        let (total, mut f, mut i) = end?;
        let mut nodes = vec![i];
        while let Some(j) = pred[f][i] {
            nodes.push(j);
            f -= 1;
            i = j;
        }
        nodes.reverse();
        Some(LinkPath { start: f, nodes, total })
    }
}

/// Seq-NMS parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeqNmsParams {
    pub link_iou: f64,
    pub suppress_iou: f64,
    pub rescore: Rescore,
}

impl Default for SeqNmsParams {
    fn default() -> Self {
        Self {
            link_iou: 0.5,
            suppress_iou: 0.4,
            rescore: Rescore::Avg,
        }
    }
}

/// Seq-NMS over a prepared graph. Returns per frame the surviving `(node, score)` pairs sorted by node.
///
/// Repeatedly takes the best path, rescores it, and suppresses same-frame
/// boxes overlapping the path above `suppress_iou`, until no edges remain.
/// Leftover unlinked boxes go through plain NMS with their original scores.
pub fn seq_nms_graph(graph: &LinkGraph, params: &SeqNmsParams) -> Result<Vec<Vec<(usize, f64)>>> {
    check_threshold(params.suppress_iou)?;
    let n = graph.n_frames();
    let mut active = graph.all_active();
    let mut out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    while graph.has_active_edge(&active) {
        let path = graph
            .best_path(&active)
            .expect("an active edge implies an active node");
        let path_scores: Vec<f64> = path
            .nodes
            .iter()
            .enumerate()
            .map(|(k, &i)| graph.scores[path.start + k][i])
            .collect();
        let new_score = match params.rescore {
            Rescore::Avg => path_scores.iter().sum::<f64>() / path_scores.len() as f64,
            Rescore::Max => path_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        for (k, &i) in path.nodes.iter().enumerate() {
            let f = path.start + k;
            active[f][i] = false;
            out[f].push((i, new_score));
            let anchor = graph.boxes[f][i];
            for (j, b) in graph.boxes[f].iter().enumerate() {
                if active[f][j] && iou(&anchor, b) > params.suppress_iou {
                    active[f][j] = false;
                }
            }
        }
    }
    for f in 0..n {
        let rest: Vec<usize> = (0..graph.boxes[f].len()).filter(|&i| active[f][i]).collect();
        let boxes: Vec<BBox> = rest.iter().map(|&i| graph.boxes[f][i]).collect();
        let scores: Vec<f64> = rest.iter().map(|&i| graph.scores[f][i]).collect();
        for k in nms(&boxes, &scores, params.suppress_iou) {
            out[f].push((rest[k], scores[k]));
        }
        out[f].sort_by_key(|&(i, _)| i);
    }
    Ok(out)
}

/// Seq-NMS over raw detections for one class.
pub fn seq_nms_link(
    video: &[FrameDetections],
    class_id: usize,
    params: &SeqNmsParams,
) -> Result<Vec<Vec<(usize, f64)>>> {
    let graph = LinkGraph::from_detections(video, class_id, params.link_iou)?;
    seq_nms_graph(&graph, params)
}
