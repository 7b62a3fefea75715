//! Detection evaluation: all-points AP/mAP, motion-speed and occlusion
//! subsets, and the strict tubelet criterion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::detection::ScoredDetection;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// A ground-truth object over a contiguous run of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTrack {
    pub track_id: u64,
    pub class_id: usize,
    start_frame: usize,
    boxes: Vec<BBox>,
    occluded: Vec<bool>,
}

impl GroundTruthTrack {
    pub fn new(track_id: u64, class_id: usize, start_frame: usize, boxes: Vec<BBox>) -> Result<Self> {
        let occluded = vec![false; boxes.len()];
        Self::with_occlusion(track_id, class_id, start_frame, boxes, occluded)
    }

    pub fn with_occlusion(
        track_id: u64,
        class_id: usize,
        start_frame: usize,
        boxes: Vec<BBox>,
        occluded: Vec<bool>,
    ) -> Result<Self> {
        if boxes.is_empty() || start_frame == 0 || class_id == 0 {
            return Err(Error::InvalidTubelet(format!(
                "track {track_id}: needs boxes, a 1-based start frame and a foreground class"
            )));
        }
        if occluded.len() != boxes.len() {
            return Err(Error::InvalidTubelet(format!(
                "track {track_id}: {} occlusion flags for {} boxes",
                occluded.len(),
                boxes.len()
            )));
        }
        Ok(Self {
            track_id,
            class_id,
            start_frame,
            boxes,
            occluded,
        })
    }

    pub fn start_frame(&self) -> usize {
        self.start_frame
    }

    pub fn end_frame(&self) -> usize {
        self.start_frame + self.boxes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.boxes
    }

    pub fn box_at(&self, frame: usize) -> Option<&BBox> {
        frame.checked_sub(self.start_frame).and_then(|i| self.boxes.get(i))
    }

    pub fn occluded_at(&self, frame: usize) -> bool {
        frame
            .checked_sub(self.start_frame)
            .and_then(|i| self.occluded.get(i))
            .copied()
            .unwrap_or(false)
    }

    pub fn frames(&self) -> impl Iterator<Item = (usize, &BBox)> {
        self.boxes.iter().enumerate().map(move |(i, b)| (self.start_frame + i, b))
    }

    pub fn covers(&self, span: (usize, usize)) -> bool {
        self.start_frame <= span.0 && self.end_frame() >= span.1
    }
}

/// Ground truth of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoGroundTruth {
    pub video_id: String,
    pub n_frames: usize,
    pub tracks: Vec<GroundTruthTrack>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedClass {
    Slow,
    Medium,
    Fast,
}

impl SpeedClass {
    pub const ALL: [SpeedClass; 3] = [SpeedClass::Slow, SpeedClass::Medium, SpeedClass::Fast];
}

impl fmt::Display for SpeedClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpeedClass::Slow => "slow",
            SpeedClass::Medium => "medium",
            SpeedClass::Fast => "fast",
        })
    }
}

/// Motion-IoU speed split parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedParams {
    /// Frame radius of the neighbourhood.
    pub window: usize,
    /// Motion IoU above this is slow.
    pub slow_above: f64,
    /// Motion IoU below this is fast.
    pub fast_below: f64,
}

impl Default for SpeedParams {
    fn default() -> Self {
        Self {
            window: 10,
            slow_above: 0.9,
            fast_below: 0.7,
        }
    }
}

impl SpeedParams {
    pub fn classify(&self, motion_iou: f64) -> SpeedClass {
        if motion_iou > self.slow_above {
            SpeedClass::Slow
        } else if motion_iou < self.fast_below {
            SpeedClass::Fast
        } else {
            SpeedClass::Medium
        }
    }
}

/// Mean IoU between the box at `index` and the same track's boxes within `window` frames.
///
/// A single-box track has no neighbours and counts as stationary (1.0).
pub fn motion_iou(track: &GroundTruthTrack, index: usize, window: usize) -> f64 {
    let lo = index.saturating_sub(window);
    let hi = (index + window).min(track.len() - 1);
    let anchor = &track.boxes[index];
    let (sum, n) = (lo..=hi)
        .filter(|&j| j != index)
        .fold((0.0, 0usize), |(s, n), j| (s + iou(anchor, &track.boxes[j]), n + 1));
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

/// Speed label of every ground-truth box, `labels[t][i]` for box `i` of track `t`.
pub fn motion_speed_split(tracks: &[GroundTruthTrack], params: &SpeedParams) -> Result<Vec<Vec<SpeedClass>>> {
    if params.window == 0 {
        return Err(Error::InvalidConfig("speed window must be at least 1".into()));
    }
    Ok(tracks
        .iter()
        .map(|t| {
            (0..t.len())
                .map(|i| params.classify(motion_iou(t, i, params.window)))
                .collect()
        })
        .collect())
}

/// A scored box keyed by `(video index, frame)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalDetection {
    pub image: (usize, usize),
    pub bbox: BBox,
    pub score: f64,
}

/// A ground-truth box keyed by `(video index, frame)`. Ignored boxes neither
/// count as positives nor turn their matches into false positives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalGroundTruth {
    pub image: (usize, usize),
    pub bbox: BBox,
    pub ignore: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    /// `None` when there is no positive to recall.
    pub ap: Option<f64>,
    pub n_positives: usize,
    pub curve: Vec<PrPoint>,
}

/// Area under the all-points interpolated precision/recall curve.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let mut recall = Vec::with_capacity(curve.len() + 2);
    let mut precision = Vec::with_capacity(curve.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    for p in curve {
        recall.push(p.recall);
        precision.push(p.precision);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (1..recall.len())
        .filter(|&i| recall[i] != recall[i - 1])
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum()
}

/// Greedy score-ordered matching of detections to ground truth, then all-points AP.
///
/// Each detection takes the highest-IoU unmatched ground-truth box of its
/// image with IoU at least `match_iou`. Score ties keep input order.
pub fn compute_ap(detections: &[EvalDetection], gt: &[EvalGroundTruth], match_iou: f64) -> ApResult {
    let mut by_image: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (i, g) in gt.iter().enumerate() {
        by_image.entry(g.image).or_default().push(i);
    }
    let n_positives = gt.iter().filter(|g| !g.ignore).count();

    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));

    let mut matched = vec![false; gt.len()];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::new();
    for d in order.into_iter().map(|i| &detections[i]) {
        let candidates = by_image.get(&d.image).map(Vec::as_slice).unwrap_or(&[]);
        let mut best: Option<(f64, usize)> = None;
        let mut hits_ignored = false;
        for &g in candidates {
            let v = iou(&d.bbox, &gt[g].bbox);
            if v < match_iou {
                continue;
            }
            if gt[g].ignore {
                hits_ignored = true;
            } else if !matched[g] && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, g));
            }
        }
        match best {
            Some((_, g)) => {
                matched[g] = true;
                tp += 1;
            }
            None if hits_ignored => continue,
            None => fp += 1,
        }
        if n_positives > 0 {
            curve.push(PrPoint {
                recall: tp as f64 / n_positives as f64,
                precision: tp as f64 / (tp + fp) as f64,
                score: d.score,
            });
        }
    }
    let ap = (n_positives > 0).then(|| average_precision(&curve));
    ApResult {
        ap,
        n_positives,
        curve,
    }
}

/// A scored tubelet of one class for strict evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTubelet {
    pub class_id: usize,
    pub start_frame: usize,
    pub boxes: Vec<BBox>,
    pub score: f64,
}

impl ClassTubelet {
    pub fn span(&self) -> (usize, usize) {
        (self.start_frame, self.start_frame + self.boxes.len() - 1)
    }
}

/// Tubelets of one video together with the spans ground-truth tubelets are cut on.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTubelets {
    pub video_id: String,
    pub spans: Vec<(usize, usize)>,
    pub tubelets: Vec<ClassTubelet>,
}

/// AP of tubelets under the strict criterion for one class.
///
/// Positives are ground-truth tracks of `class_id` restricted to each span in
/// which they are present on every frame. A tubelet is a true positive only
/// when one unclaimed positive with its exact span matches every box at IoU
/// at least `match_iou`; otherwise it is a false positive.
pub fn strict_tubelet_ap(
    gt: &[VideoGroundTruth],
    tubelets: &[VideoTubelets],
    class_id: usize,
    match_iou: f64,
) -> ApResult {
    let gt_by_video: HashMap<&str, &VideoGroundTruth> = gt.iter().map(|v| (v.video_id.as_str(), v)).collect();
    let mut positives: BTreeSet<(usize, (usize, usize), usize)> = BTreeSet::new();
    for (v, vt) in tubelets.iter().enumerate() {
        let Some(vg) = gt_by_video.get(vt.video_id.as_str()) else {
            continue;
        };
        for &span in &vt.spans {
            for (t, track) in vg.tracks.iter().enumerate() {
                if track.class_id == class_id && track.covers(span) {
                    positives.insert((v, span, t));
                }
            }
        }
    }
    let n_positives = positives.len();

    let mut scored: Vec<(usize, &ClassTubelet)> = tubelets
        .iter()
        .enumerate()
        .flat_map(|(v, vt)| vt.tubelets.iter().filter(|t| t.class_id == class_id).map(move |t| (v, t)))
        .collect();
    scored.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

    let mut claimed: BTreeSet<(usize, (usize, usize), usize)> = BTreeSet::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::new();
    for (v, tube) in scored {
        let span = tube.span();
        let mut best: Option<(f64, usize)> = None;
        if let Some(vg) = gt_by_video.get(tubelets[v].video_id.as_str()) {
            for (t, track) in vg.tracks.iter().enumerate() {
                let key = (v, span, t);
                if !positives.contains(&key) || claimed.contains(&key) {
                    continue;
                }
                let ious: Vec<f64> = tube
                    .boxes
                    .iter()
                    .enumerate()
                    .map(|(k, b)| track.box_at(span.0 + k).map_or(0.0, |g| iou(b, g)))
                    .collect();
                if ious.iter().all(|&x| x >= match_iou) {
                    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
                    if best.is_none_or(|(m, _)| mean > m) {
                        best = Some((mean, t));
                    }
                }
            }
        }
        match best {
            Some((_, t)) => {
                claimed.insert((v, span, t));
                tp += 1;
            }
            None => fp += 1,
        }
        if n_positives > 0 {
            curve.push(PrPoint {
                recall: tp as f64 / n_positives as f64,
                precision: tp as f64 / (tp + fp) as f64,
                score: tube.score,
            });
        }
    }
    ApResult {
        ap: (n_positives > 0).then(|| average_precision(&curve)),
        n_positives,
        curve,
    }
}

/// Mean of strict tubelet AP over classes with at least one positive.
pub fn strict_tubelet_map(gt: &[VideoGroundTruth], tubelets: &[VideoTubelets], match_iou: f64) -> Option<f64> {
    let classes: BTreeSet<usize> = gt.iter().flat_map(|v| v.tracks.iter().map(|t| t.class_id)).collect();
    mean(classes.into_iter().filter_map(|c| strict_tubelet_ap(gt, tubelets, c, match_iou).ap))
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Detections of one video, as emitted by a method.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VideoOutput {
    pub video_id: String,
    pub detections: Vec<ScoredDetection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub match_iou: f64,
    pub speed: SpeedParams,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            match_iou: 0.5,
            speed: SpeedParams::default(),
        }
    }
}

/// mAP over a ground-truth subset; `None` when the subset holds no positives.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SubsetMaps {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slow: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub medium: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fast: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occluded: Option<f64>,
}

impl SubsetMaps {
    pub fn speed(&self, s: SpeedClass) -> Option<f64> {
        match s {
            SpeedClass::Slow => self.slow,
            SpeedClass::Medium => self.medium,
            SpeedClass::Fast => self.fast,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub ap: f64,
    pub n_gt: usize,
    pub n_detections: usize,
    pub subsets: SubsetMaps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub match_iou: f64,
    /// `None` when the ground truth holds no objects.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<f64>,
    pub subsets: SubsetMaps,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strict_tubelet_map: Option<f64>,
    pub classes: BTreeMap<String, ClassReport>,
    #[serde(skip)]
    pub pr_curves: BTreeMap<usize, Vec<PrPoint>>,
}

impl EvalReport {
    /// Precision/recall points as `class_id,recall,precision,score` lines.
    pub fn pr_csv(&self) -> String {
        let mut out = String::from("class_id,recall,precision,score\n");
        for (c, curve) in &self.pr_curves {
            for p in curve {
                out.push_str(&format!("{c},{},{},{}\n", p.recall, p.precision, p.score));
            }
        }
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

struct Prepared {
    /// Per class: detections.
    detections: BTreeMap<usize, Vec<EvalDetection>>,
    /// Per class: ground truth with speed labels and occluded-frame flag.
    gt: BTreeMap<usize, Vec<(EvalGroundTruth, SpeedClass)>>,
    occluded_frames: BTreeSet<(usize, usize)>,
}

fn prepare(gt: &[VideoGroundTruth], outputs: &[VideoOutput], params: &EvalParams) -> Result<Prepared> {
    let mut ids: Vec<&str> = gt
        .iter()
        .map(|v| v.video_id.as_str())
        .chain(outputs.iter().map(|v| v.video_id.as_str()))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();

    let mut out = Prepared {
        detections: BTreeMap::new(),
        gt: BTreeMap::new(),
        occluded_frames: BTreeSet::new(),
    };
    for video in gt {
        let v = index[video.video_id.as_str()];
        let labels = motion_speed_split(&video.tracks, &params.speed)?;
        let mut per_frame: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (track, speeds) in video.tracks.iter().zip(&labels) {
            for ((frame, bbox), &speed) in track.frames().zip(speeds) {
                out.gt.entry(track.class_id).or_default().push((
                    EvalGroundTruth {
                        image: (v, frame),
                        bbox: *bbox,
                        ignore: false,
                    },
                    speed,
                ));
                let e = per_frame.entry(frame).or_default();
                e.0 += 1;
                if track.occluded_at(frame) {
                    e.1 += 1;
                }
            }
        }
        for (frame, (total, occ)) in per_frame {
            if 2 * occ > total {
                out.occluded_frames.insert((v, frame));
            }
        }
    }
    for video in outputs {
        let v = index[video.video_id.as_str()];
        for d in &video.detections {
            out.detections.entry(d.class_id).or_default().push(EvalDetection {
                image: (v, d.frame),
                bbox: d.bbox,
                score: d.score,
            });
        }
    }
    Ok(out)
}

/// Full evaluation of method outputs against ground truth.
pub fn evaluate(gt: &[VideoGroundTruth], outputs: &[VideoOutput], params: &EvalParams) -> Result<EvalReport> {
    let prep = prepare(gt, outputs, params)?;
    let empty = Vec::new();
    let mut classes = BTreeMap::new();
    let mut pr_curves = BTreeMap::new();
    let mut subset_aps: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (&class_id, gts) in &prep.gt {
        let dets = prep.detections.get(&class_id).unwrap_or(&empty);
        let all: Vec<EvalGroundTruth> = gts.iter().map(|(g, _)| *g).collect();
        let result = compute_ap(dets, &all, params.match_iou);
        let Some(ap) = result.ap else { continue };

        let mut subsets = SubsetMaps::default();
        for speed in SpeedClass::ALL {
            let restricted: Vec<EvalGroundTruth> = gts
                .iter()
                .map(|(g, s)| EvalGroundTruth {
                    ignore: *s != speed,
                    ..*g
                })
                .collect();
            let ap = compute_ap(dets, &restricted, params.match_iou).ap;
            match speed {
                SpeedClass::Slow => subsets.slow = ap,
                SpeedClass::Medium => subsets.medium = ap,
                SpeedClass::Fast => subsets.fast = ap,
            }
        }
        let occ_gt: Vec<EvalGroundTruth> = all
            .iter()
            .filter(|g| prep.occluded_frames.contains(&g.image))
            .copied()
            .collect();
        let occ_dets: Vec<EvalDetection> = dets
            .iter()
            .filter(|d| prep.occluded_frames.contains(&d.image))
            .copied()
            .collect();
        subsets.occluded = compute_ap(&occ_dets, &occ_gt, params.match_iou).ap;

        for (name, v) in [
            ("slow", subsets.slow),
            ("medium", subsets.medium),
            ("fast", subsets.fast),
            ("occluded", subsets.occluded),
        ] {
            if let Some(v) = v {
                subset_aps.entry(name).or_default().push(v);
            }
        }
        classes.insert(
            class_id.to_string(),
            ClassReport {
                ap,
                n_gt: result.n_positives,
                n_detections: dets.len(),
                subsets,
            },
        );
        pr_curves.insert(class_id, result.curve);
    }
    let subset_mean = |name: &str| subset_aps.get(name).and_then(|v| mean(v.iter().copied()));
    Ok(EvalReport {
        match_iou: params.match_iou,
        map: mean(classes.values().map(|c| c.ap)),
        subsets: SubsetMaps {
            slow: subset_mean("slow"),
            medium: subset_mean("medium"),
            fast: subset_mean("fast"),
            occluded: subset_mean("occluded"),
        },
        strict_tubelet_map: None,
        classes,
        pr_curves,
    })
}
