//! End-to-end orchestration: segments, short tubelets, tubelet NMS, linking,
//! rescored frame detections, and evaluation.

mod ablation;
mod config;
pub mod io;

pub use ablation::{run_ablation, AblationRow, AblationTable};
pub use config::{Method, PipelineConfig};
pub use io::{TubeletRecord, VideoDetections};

use std::collections::HashSet;

use rayon::prelude::*;

use crate::assembly::{assemble_short_tubelets, pair_union_proposals};
use crate::baselines::{frame_nms, nms, seq_nms_graph, seq_nms_link, LinkGraph};
use crate::detection::{FrameDetections, ScoredDetection};
use crate::error::{Error, Result};
use crate::eval::{evaluate, strict_tubelet_map, ClassTubelet, EvalReport, VideoGroundTruth, VideoOutput, VideoTubelets};
use crate::geometry::{iou, BBox};
use crate::linking::link_short_tubelets;
use crate::segment::{plan_segments, SegmentPlan};
use crate::synth::Corpus;
use crate::tubelet::{tubelet_nms, Tubelet};

/// Everything one video produces under one method.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoResult {
    pub output: VideoOutput,
    /// Long tubelets for the full method, short tubelets for the other tubelet methods.
    pub tubelets: Vec<TubeletRecord>,
    /// Output tubelets cut on segment spans, for strict evaluation.
    pub strict: Option<VideoTubelets>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub config: PipelineConfig,
    pub method: Method,
    /// Sorted by video id.
    pub videos: Vec<VideoResult>,
    pub report: Option<EvalReport>,
}

impl PipelineOutput {
    pub fn outputs(&self) -> Vec<VideoOutput> {
        self.videos.iter().map(|v| v.output.clone()).collect()
    }

    pub fn tubelets(&self) -> Vec<TubeletRecord> {
        self.videos.iter().flat_map(|v| v.tubelets.iter().cloned()).collect()
    }
}

/// Splits a synthetic corpus into pipeline inputs and ground truth.
pub fn corpus_inputs(corpus: &Corpus) -> (Vec<VideoDetections>, Vec<VideoGroundTruth>) {
    let videos = corpus
        .videos
        .iter()
        .map(|v| VideoDetections {
            video_id: v.ground_truth.video_id.clone(),
            frames: v.detections.clone(),
        })
        .collect();
    (videos, corpus.ground_truth())
}

fn num_classes(video: &VideoDetections) -> Result<usize> {
    let mut n = None;
    for d in video.frames.iter().flat_map(|f| &f.detections) {
        let c = d.scores.num_classes();
        match n {
            None => n = Some(c),
            Some(prev) if prev != c => {
                return Err(Error::ScoreLengthMismatch {
                    expected: prev + 1,
                    found: c + 1,
                })
            }
            _ => {}
        }
    }
    Ok(n.unwrap_or(0))
}

fn check_frames(video: &VideoDetections) -> Result<()> {
    for (i, f) in video.frames.iter().enumerate() {
        if f.frame != i + 1 {
            return Err(Error::FrameGap {
                video: video.video_id.clone(),
                missing: i + 1,
            });
        }
    }
    Ok(())
}

/// Per-frame boxes of one class with their final scores and source tubelet.
type FrameOut = Vec<(BBox, f64, Option<u64>)>;

/// Class-independent stage: short tubelets per segment and the detections
/// left out of every full-span chain.
struct Assembled {
    plan: SegmentPlan,
    groups: Vec<Vec<Tubelet>>,
    /// `(frame, detection index)` of every detection not in any short tubelet.
    passthrough: Vec<Vec<usize>>,
}

fn assemble(video: &VideoDetections, config: &PipelineConfig) -> Result<Assembled> {
    let plan = plan_segments(video.n_frames(), config.segment_len)?;
    let mut groups = Vec::with_capacity(plan.len());
    let mut chained: HashSet<(usize, usize)> = HashSet::new();
    for m in 0..plan.len() {
        let (a, b) = plan.span(m);
        let chains = pair_union_proposals(&video.frames[a - 1..b], config.pair_iou_thresh)?;
        for c in chains.iter().filter(|c| c.full_span) {
            for (k, fb) in c.boxes.iter().enumerate() {
                chained.insert((c.start_frame + k, fb.origin.expect("chains record origins")));
            }
        }
        groups.push(assemble_short_tubelets(&chains, config.agg)?);
    }
    let passthrough = video
        .frames
        .iter()
        .map(|fd| (0..fd.len()).filter(|&i| !chained.contains(&(fd.frame, i))).collect())
        .collect();
    Ok(Assembled {
        plan,
        groups,
        passthrough,
    })
}

/// Adds unchained detections that do not overlap any tubelet box above `threshold`.
fn add_passthrough(frames: &mut [FrameOut], video: &VideoDetections, passthrough: &[Vec<usize>], class_id: usize, nms_thresh: f64, threshold: f64) {
    for ((out, fd), idx) in frames.iter_mut().zip(&video.frames).zip(passthrough) {
        let boxes: Vec<BBox> = idx.iter().map(|&i| fd.detections[i].bbox).collect();
        let scores: Vec<f64> = idx.iter().map(|&i| fd.detections[i].scores.get(class_id)).collect();
        let anchors: Vec<BBox> = out.iter().map(|o| o.0).collect();
        for k in nms(&boxes, &scores, nms_thresh) {
            if anchors.iter().all(|a| iou(a, &boxes[k]) <= threshold) {
                out.push((boxes[k], scores[k], None));
            }
        }
    }
}

fn emit_scored(frames: &mut [FrameOut], tubelets: &[(u64, &Tubelet)], class_id: usize) {
    for (id, t) in tubelets {
        let score = t.score(class_id);
        for (f, fb) in t.frames() {
            frames[f - 1].push((fb.bbox, score, Some(*id)));
        }
    }
}

/// Per-frame NMS over emitted boxes, removing duplicates at overlap frames.
fn dedup_frames(frames: &mut [FrameOut], threshold: f64) {
    for out in frames.iter_mut() {
        let boxes: Vec<BBox> = out.iter().map(|o| o.0).collect();
        let scores: Vec<f64> = out.iter().map(|o| o.1).collect();
        let mut keep = nms(&boxes, &scores, threshold);
        keep.sort_unstable();
        *out = keep.into_iter().map(|k| out[k]).collect();
    }
}

fn tubelet_record(video_id: &str, id: u64, class_id: usize, t: &Tubelet) -> TubeletRecord {
    TubeletRecord {
        video_id: video_id.to_string(),
        tubelet_id: id,
        class_id,
        start_frame: t.start_frame(),
        score: t.score(class_id),
        boxes: t.boxes().iter().map(|b| b.bbox.corners()).collect(),
    }
}

/// Cuts a tubelet into the segment spans it covers.
fn strict_pieces(plan: &SegmentPlan, t: &Tubelet, class_id: usize, out: &mut Vec<ClassTubelet>) {
    for m in 0..plan.len() {
        let (a, b) = plan.span(m);
        if a >= t.start_frame() && b <= t.end_frame() {
            out.push(ClassTubelet {
                class_id,
                start_frame: a,
                boxes: (a..=b).map(|f| t.at_frame(f).expect("span inside tubelet").bbox).collect(),
                score: t.score(class_id),
            });
        }
    }
}

fn static_frames(video: &VideoDetections, class_id: usize, threshold: f64) -> Result<Vec<FrameOut>> {
    video
        .frames
        .iter()
        .map(|fd| {
            let mut keep = frame_nms(fd, class_id, threshold)?;
            keep.sort_unstable();
            Ok(keep
                .into_iter()
                .map(|i| (fd.detections[i].bbox, fd.detections[i].scores.get(class_id), None))
                .collect())
        })
        .collect()
}

fn seqnms_frames(frames: &[FrameDetections], class_id: usize, config: &PipelineConfig) -> Result<Vec<FrameOut>> {
    let kept = seq_nms_link(frames, class_id, &config.seqnms_params())?;
    Ok(kept
        .into_iter()
        .zip(frames)
        .map(|(k, fd)| k.into_iter().map(|(i, s)| (fd.detections[i].bbox, s, None)).collect())
        .collect())
}

/// Runs one method on one video.
pub fn process_video(video: &VideoDetections, config: &PipelineConfig, method: Method) -> Result<VideoResult> {
    check_frames(video)?;
    let n_classes = num_classes(video)?;
    let method = if config.segment_len == 1 && method != Method::SeqNms {
        Method::Static
    } else {
        method
    };
    let tubelet_method = !matches!(method, Method::Static | Method::SeqNms);
    let assembled = if tubelet_method && video.n_frames() > 0 {
        Some(assemble(video, config)?)
    } else {
        None
    };

    let mut detections = Vec::new();
    let mut records = Vec::new();
    let mut strict = Vec::new();
    let mut next_id = 1u64;
    for class_id in 1..=n_classes {
        let mut frames: Vec<FrameOut> = match (method, &assembled) {
            (Method::Static, _) => static_frames(video, class_id, config.nms_thresh)?,
            (Method::SeqNms, _) => seqnms_frames(&video.frames, class_id, config)?,
            (_, None) => Vec::new(),
            (_, Some(asm)) => {
                let mut frames: Vec<FrameOut> = vec![Vec::new(); video.n_frames()];
                let kept: Vec<Vec<Tubelet>> = if method == Method::TubeletsNoLink {
                    asm.groups.clone()
                } else {
                    asm.groups
                        .iter()
                        .map(|g| tubelet_nms(g, class_id, config.tnms_thresh))
                        .collect::<Result<_>>()?
                };
                let output: Vec<Tubelet> = if method == Method::Full {
                    link_short_tubelets(&asm.plan, &kept, class_id, config.link_thresh, config.agg)?.tubelets
                } else {
                    kept.into_iter().flatten().collect()
                };
                let ids: Vec<(u64, &Tubelet)> = output
                    .iter()
                    .map(|t| {
                        let id = next_id;
                        next_id += 1;
                        (id, t)
                    })
                    .collect();
                for (id, t) in &ids {
                    records.push(tubelet_record(&video.video_id, *id, class_id, t));
                    strict_pieces(&asm.plan, t, class_id, &mut strict);
                }
                match method {
                    Method::UnionSeqNms => {
                        union_seqnms(&mut frames, &ids, video, asm, class_id, config)?;
                    }
                    Method::Full => {
                        emit_scored(&mut frames, &ids, class_id);
                        add_passthrough(&mut frames, video, &asm.passthrough, class_id, config.nms_thresh, config.tnms_thresh);
                    }
                    _ => {
                        emit_scored(&mut frames, &ids, class_id);
                        dedup_frames(&mut frames, config.nms_thresh);
                        add_passthrough(&mut frames, video, &asm.passthrough, class_id, config.nms_thresh, config.tnms_thresh);
                    }
                }
                frames
            }
        };
        for (f, out) in frames.iter_mut().enumerate() {
            for (bbox, score, tubelet_id) in out.drain(..) {
                detections.push(ScoredDetection {
                    frame: f + 1,
                    bbox,
                    class_id,
                    score,
                    tubelet_id,
                });
            }
        }
    }
    detections.sort_by_key(|d| (d.frame, d.class_id));

    Ok(VideoResult {
        output: VideoOutput {
            video_id: video.video_id.clone(),
            detections,
        },
        tubelets: records,
        strict: assembled.map(|asm| VideoTubelets {
            video_id: video.video_id.clone(),
            spans: (0..asm.plan.len()).map(|m| asm.plan.span(m)).collect(),
            tubelets: strict,
        }),
    })
}

/// Seq-NMS over the boxes of the kept short tubelets plus unchained detections.
///
/// A detection shared by two tubelets at an overlap frame enters once.
fn union_seqnms(
    frames: &mut [FrameOut],
    tubelets: &[(u64, &Tubelet)],
    video: &VideoDetections,
    asm: &Assembled,
    class_id: usize,
    config: &PipelineConfig,
) -> Result<()> {
    let n = video.n_frames();
    let mut nodes: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (_, t) in tubelets {
        for (f, fb) in t.frames() {
            nodes[f - 1].push(fb.origin.expect("tubelet boxes record origins"));
        }
    }
    for (f, idx) in asm.passthrough.iter().enumerate() {
        nodes[f].extend(idx);
    }
    for list in nodes.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }
    let boxes: Vec<Vec<BBox>> = nodes
        .iter()
        .zip(&video.frames)
        .map(|(l, fd)| l.iter().map(|&i| fd.detections[i].bbox).collect())
        .collect();
    let scores: Vec<Vec<f64>> = nodes
        .iter()
        .zip(&video.frames)
        .map(|(l, fd)| l.iter().map(|&i| fd.detections[i].scores.get(class_id)).collect())
        .collect();
    let graph = LinkGraph::new(boxes, scores, config.seqnms_link_iou)?;
    for (f, kept) in seq_nms_graph(&graph, &config.seqnms_params())?.into_iter().enumerate() {
        for (k, s) in kept {
            frames[f].push((graph.boxes(f)[k], s, None));
        }
    }
    Ok(())
}

/// Runs `method` over every video and, with ground truth, evaluates the outputs.
pub fn run_method(
    config: &PipelineConfig,
    method: Method,
    videos: &[VideoDetections],
    gt: Option<&[VideoGroundTruth]>,
) -> Result<PipelineOutput> {
    config.validate()?;
    let mut order: Vec<&VideoDetections> = videos.iter().collect();
    order.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    if let Some(w) = order.windows(2).find(|w| w[0].video_id == w[1].video_id) {
        return Err(Error::InvalidCorpus(format!("duplicate video id {:?}", w[0].video_id)));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let results = pool.install(|| {
        order
            .par_iter()
            .map(|v| process_video(v, config, method))
            .collect::<Result<Vec<_>>>()
    })?;
    let report = match gt {
        None => None,
        Some(gt) => {
            let outputs: Vec<VideoOutput> = results.iter().map(|r| r.output.clone()).collect();
            let mut report = evaluate(gt, &outputs, &config.eval_params())?;
            let strict: Vec<VideoTubelets> = results.iter().filter_map(|r| r.strict.clone()).collect();
            if !strict.is_empty() {
                report.strict_tubelet_map = strict_tubelet_map(gt, &strict, config.match_iou);
            }
            Some(report)
        }
    };
    Ok(PipelineOutput {
        config: config.clone(),
        method,
        videos: results,
        report,
    })
}

/// Runs the configured method (`config.baseline`).
pub fn run_pipeline(
    config: &PipelineConfig,
    videos: &[VideoDetections],
    gt: Option<&[VideoGroundTruth]>,
) -> Result<PipelineOutput> {
    run_method(config, config.baseline, videos, gt)
}
