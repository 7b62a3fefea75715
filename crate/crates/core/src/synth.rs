//! Deterministic synthetic video-detection corpora.
//!
//! Ground-truth tracks move at constant speed with small heading noise and
//! bounce off the canvas edges. Detections are jittered copies of the ground
//! truth whose true-class score collapses inside contiguous score-drop
//! windows, plus duplicates, misses, occlusions and false positives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{Detection, FrameDetections};
use crate::error::{Error, Result};
use crate::eval::{GroundTruthTrack, SpeedClass, VideoGroundTruth};
use crate::geometry::BBox;
use crate::tubelet::ScoreVector;

/// Speed range of one motion population, in box sizes per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionPopulation {
    pub weight: f64,
    pub min_speed: f64,
    pub max_speed: f64,
}

/// Parameters of a synthetic corpus. Probabilities lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub canvas_width: f64,
    pub canvas_height: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub n_classes: usize,
    pub min_box_size: f64,
    pub max_box_size: f64,
    pub slow: MotionPopulation,
    pub medium: MotionPopulation,
    pub fast: MotionPopulation,
    /// Standard deviation of the per-frame heading change, in radians.
    pub heading_noise: f64,
    /// Long-run fraction of frames inside score-drop windows.
    pub drop_prob: f64,
    /// Per-population drop fractions (slow, medium, fast); overrides `drop_prob` when set.
    pub drop_prob_by_speed: Option<[f64; 3]>,
    /// Mean length in frames of a score-drop window.
    pub drop_window_mean: f64,
    /// Fraction of the true-class score removed inside a drop window.
    pub drop_depth: f64,
    /// Strength of the coupling between track speed and drop frequency.
    pub speed_coupling: f64,
    /// Extra drop fraction of the fast population under full coupling.
    pub drop_increment: f64,
    /// True-class score is drawn from `[1 - score_spread, 1]`.
    pub score_spread: f64,
    /// Maximum stray score given to each non-true class.
    pub class_noise: f64,
    /// Localization jitter, as a fraction of box size.
    pub jitter_sigma: f64,
    /// Expected number of false positives per frame.
    pub fp_rate: f64,
    /// Highest false-positive score.
    pub fp_max_score: f64,
    pub miss_rate: f64,
    /// Probability that a detection gets an extra jittered duplicate.
    pub duplicate_rate: f64,
    /// Probability that a track suffers one occlusion event.
    pub occlusion_rate: f64,
    pub occlusion_min_len: usize,
    pub occlusion_max_len: usize,
    /// Fraction of the true-class score removed while occluded.
    pub occlusion_depth: f64,
    /// When false, tracks start and end at random frames.
    pub full_span_tracks: bool,
    pub min_track_len: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            n_videos: 50,
            frames_per_video: 60,
            canvas_width: 640.0,
            canvas_height: 360.0,
            min_objects: 1,
            max_objects: 3,
            n_classes: 5,
            min_box_size: 40.0,
            max_box_size: 120.0,
            slow: MotionPopulation {
                weight: 1.0,
                min_speed: 0.0,
                max_speed: 0.004,
            },
            medium: MotionPopulation {
                weight: 1.0,
                min_speed: 0.012,
                max_speed: 0.018,
            },
            fast: MotionPopulation {
                weight: 1.0,
                min_speed: 0.05,
                max_speed: 0.10,
            },
            heading_noise: 0.05,
            drop_prob: 0.15,
            drop_prob_by_speed: None,
            drop_window_mean: 6.0,
            drop_depth: 0.8,
            speed_coupling: 1.0,
            drop_increment: 0.2,
            score_spread: 0.45,
            class_noise: 0.05,
            jitter_sigma: 0.04,
            fp_rate: 1.0,
            fp_max_score: 0.6,
            miss_rate: 0.02,
            duplicate_rate: 0.3,
            occlusion_rate: 0.3,
            occlusion_min_len: 5,
            occlusion_max_len: 15,
            occlusion_depth: 0.5,
            full_span_tracks: true,
            min_track_len: 20,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidCorpus(format!("{name} = {p} is not a probability")))
    }
}

impl CorpusSpec {
    /// A spec with every degradation switched off.
    pub fn noiseless() -> Self {
        Self {
            drop_prob: 0.0,
            drop_increment: 0.0,
            speed_coupling: 0.0,
            score_spread: 0.0,
            class_noise: 0.0,
            jitter_sigma: 0.0,
            fp_rate: 0.0,
            miss_rate: 0.0,
            duplicate_rate: 0.0,
            occlusion_rate: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("drop_prob", self.drop_prob),
            ("drop_depth", self.drop_depth),
            ("speed_coupling", self.speed_coupling),
            ("drop_increment", self.drop_increment),
            ("score_spread", self.score_spread),
            ("class_noise", self.class_noise),
            ("fp_max_score", self.fp_max_score),
            ("miss_rate", self.miss_rate),
            ("duplicate_rate", self.duplicate_rate),
            ("occlusion_rate", self.occlusion_rate),
            ("occlusion_depth", self.occlusion_depth),
        ] {
            check_prob(name, p)?;
        }
        if let Some(by_speed) = self.drop_prob_by_speed {
            for p in by_speed {
                check_prob("drop_prob_by_speed", p)?;
            }
        }
        let bad = |msg: &str| Err(Error::InvalidCorpus(msg.to_string()));
        if self.n_classes < 1 {
            return bad("n_classes must be at least 1");
        }
        if self.frames_per_video < 1 {
            return bad("frames_per_video must be at least 1");
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects");
        }
        if !(self.canvas_width > 0.0 && self.canvas_height > 0.0) {
            return bad("canvas size must be positive");
        }
        if !(self.min_box_size > 0.0 && self.min_box_size <= self.max_box_size) {
            return bad("box size range must be positive and ordered");
        }
        // aspect ratios reach 1.5 in height
        if self.max_box_size >= self.canvas_width || self.max_box_size * 1.5 >= self.canvas_height {
            return bad("objects do not fit inside the canvas");
        }
        for (name, pop) in [("slow", self.slow), ("medium", self.medium), ("fast", self.fast)] {
            if !(pop.weight >= 0.0 && pop.min_speed >= 0.0 && pop.min_speed <= pop.max_speed) {
                return Err(Error::InvalidCorpus(format!("invalid {name} motion population")));
            }
        }
        if self.slow.weight + self.medium.weight + self.fast.weight <= 0.0 {
            return bad("motion population weights sum to zero");
        }
        if self.drop_window_mean.is_nan() || self.drop_window_mean < 1.0 {
            return bad("drop_window_mean must be at least 1");
        }
        if !(self.jitter_sigma >= 0.0 && self.heading_noise >= 0.0 && self.fp_rate >= 0.0) {
            return bad("jitter, heading noise and false-positive rate must be non-negative");
        }
        if self.occlusion_min_len < 1 || self.occlusion_min_len > self.occlusion_max_len {
            return bad("occlusion length range must be positive and ordered");
        }
        if self.min_track_len < 1 {
            return bad("min_track_len must be at least 1");
        }
        Ok(())
    }

    /// Drop fraction for tracks of a population.
    pub fn drop_prob_for(&self, speed: SpeedClass) -> f64 {
        match self.drop_prob_by_speed {
            Some(p) => p[speed as usize],
            None => self.drop_prob,
        }
    }
}

/// Couples score-drop frequency to object speed.
///
/// The slow population keeps the base rate, medium gains half of the
/// coupled increment and fast the full `speed_coupling * drop_increment`.
pub fn degradation_speed_coupling(spec: &CorpusSpec) -> CorpusSpec {
    if spec.speed_coupling == 0.0 {
        return spec.clone();
    }
    let base = spec.drop_prob;
    let inc = spec.speed_coupling * spec.drop_increment;
    CorpusSpec {
        drop_prob_by_speed: Some([base, (base + inc / 2.0).min(1.0), (base + inc).min(1.0)]),
        ..spec.clone()
    }
}

/// One generated video.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub ground_truth: VideoGroundTruth,
    /// One entry per frame `1..=n_frames`.
    pub detections: Vec<FrameDetections>,
    /// Generating population of each track.
    pub populations: Vec<SpeedClass>,
    /// Score-drop flags per track and frame of the track.
    pub drops: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub videos: Vec<SyntheticVideo>,
}

impl Corpus {
    pub fn ground_truth(&self) -> Vec<VideoGroundTruth> {
        self.videos.iter().map(|v| v.ground_truth.clone()).collect()
    }
}

pub fn video_id(index: usize) -> String {
    format!("vid{index:04}")
}

/// Generates the corpus described by `spec`. Identical specs give identical corpora.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let videos = (0..spec.n_videos)
        .into_par_iter()
        .map(|v| generate_video(spec, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        spec: spec.clone(),
        videos,
    })
}

struct TrackPlan {
    class_id: usize,
    population: SpeedClass,
    boxes: Vec<BBox>,
}

fn pick_population(spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> SpeedClass {
    let w = [spec.slow.weight, spec.medium.weight, spec.fast.weight];
    let mut r = rng.random::<f64>() * w.iter().sum::<f64>();
    for (i, &wi) in w.iter().enumerate() {
        if r < wi {
            return SpeedClass::ALL[i];
        }
        r -= wi;
    }
    *SpeedClass::ALL
        .iter()
        .rev()
        .zip(w.iter().rev())
        .find(|(_, &wi)| wi > 0.0)
        .map(|(s, _)| s)
        .unwrap_or(&SpeedClass::Slow)
}

fn simulate_track(spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> Result<TrackPlan> {
    let class_id = rng.random_range(1..=spec.n_classes);
    let population = pick_population(spec, rng);
    let pop = match population {
        SpeedClass::Slow => spec.slow,
        SpeedClass::Medium => spec.medium,
        SpeedClass::Fast => spec.fast,
    };
    let w = rng.random_range(spec.min_box_size..=spec.max_box_size);
    let h = w * rng.random_range(0.6..=1.5);
    let speed = rng.random_range(pop.min_speed..=pop.max_speed) * (w * h).sqrt();
    let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
    let mut x = rng.random_range(0.0..=spec.canvas_width - w);
    let mut y = rng.random_range(0.0..=spec.canvas_height - h);
    let turn = Normal::new(0.0, spec.heading_noise).expect("valid heading noise");

    let mut boxes = Vec::with_capacity(spec.frames_per_video);
    for _ in 0..spec.frames_per_video {
        boxes.push(BBox::new(x, y, x + w, y + h)?);
        heading += turn.sample(rng);
        let (mut vx, mut vy) = (speed * heading.cos(), speed * heading.sin());
        x += vx;
        y += vy;
        if x < 0.0 || x + w > spec.canvas_width {
            x = if x < 0.0 { -x } else { 2.0 * (spec.canvas_width - w) - x };
            vx = -vx;
        }
        if y < 0.0 || y + h > spec.canvas_height {
            y = if y < 0.0 { -y } else { 2.0 * (spec.canvas_height - h) - y };
            vy = -vy;
        }
        x = x.clamp(0.0, spec.canvas_width - w);
        y = y.clamp(0.0, spec.canvas_height - h);
        heading = vy.atan2(vx);
    }
    Ok(TrackPlan {
        class_id,
        population,
        boxes,
    })
}

/// Contiguous drop windows from a two-state chain whose stationary drop fraction is `p`.
fn drop_windows(n: usize, p: f64, mean_len: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    if p <= 0.0 {
        return vec![false; n];
    }
    if p >= 1.0 {
        return vec![true; n];
    }
    let exit = 1.0 / mean_len;
    let enter = (p * exit / (1.0 - p)).min(1.0);
    let mut state = rng.random::<f64>() < p;
    (0..n)
        .map(|_| {
            let cur = state;
            let flip = if state { exit } else { enter };
            if rng.random::<f64>() < flip {
                state = !state;
            }
            cur
        })
        .collect()
}

fn clip_to_canvas(spec: &CorpusSpec, cx: f64, cy: f64, w: f64, h: f64) -> Option<BBox> {
    let x1 = (cx - w / 2.0).max(0.0);
    let y1 = (cy - h / 2.0).max(0.0);
    let x2 = (cx + w / 2.0).min(spec.canvas_width);
    let y2 = (cy + h / 2.0).min(spec.canvas_height);
    BBox::new(x1, y1, x2, y2).ok()
}

fn jitter_box(spec: &CorpusSpec, b: &BBox, sigma: f64, rng: &mut ChaCha8Rng) -> BBox {
    if sigma == 0.0 {
        return *b;
    }
    let n = Normal::new(0.0, sigma).expect("valid jitter");
    let (cx, cy) = b.center();
    let cx = cx + n.sample(rng) * b.width();
    let cy = cy + n.sample(rng) * b.height();
    let w = b.width() * n.sample(rng).exp();
    let h = b.height() * n.sample(rng).exp();
    clip_to_canvas(spec, cx, cy, w, h).unwrap_or(*b)
}

/// Class distribution with `true_score` on `class_id`, optional confusion mass on `sibling`,
/// stray noise elsewhere and the remainder on background.
fn score_vector(
    spec: &CorpusSpec,
    class_id: usize,
    true_score: f64,
    sibling: Option<(usize, f64)>,
    rng: &mut ChaCha8Rng,
) -> ScoreVector {
    let mut v = vec![0.0; spec.n_classes + 1];
    for (c, slot) in v.iter_mut().enumerate().skip(1) {
        if c != class_id && spec.class_noise > 0.0 {
            *slot = rng.random_range(0.0..=spec.class_noise);
        }
    }
    v[class_id] = true_score;
    if let Some((s, mass)) = sibling {
        v[s] = (v[s] + mass).min(1.0);
    }
    let fg: f64 = v[1..].iter().sum();
    if fg > 1.0 {
        for x in &mut v[1..] {
            *x /= fg;
        }
        v[0] = 0.0;
    } else {
        v[0] = 1.0 - fg;
    }
    ScoreVector::new(v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect()).expect("scores in range")
}

fn generate_video(spec: &CorpusSpec, index: usize) -> Result<SyntheticVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(2 * index as u64);
    // lifetimes use their own stream so truncated and full-span corpora share every other draw
    let mut life_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    life_rng.set_stream(2 * index as u64 + 1);

    let n = spec.frames_per_video;
    let n_tracks = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut tracks = Vec::with_capacity(n_tracks);
    let mut populations = Vec::with_capacity(n_tracks);
    let mut drops = Vec::with_capacity(n_tracks);
    let mut frames: Vec<Vec<Detection>> = vec![Vec::new(); n];

    for t in 0..n_tracks {
        let plan = simulate_track(spec, &mut rng)?;
        let p_drop = spec.drop_prob_for(plan.population);
        let dropped = drop_windows(n, p_drop, spec.drop_window_mean, &mut rng);
        let mut occluded = vec![false; n];
        if rng.random::<f64>() < spec.occlusion_rate {
            let len = rng.random_range(spec.occlusion_min_len..=spec.occlusion_max_len).min(n);
            let start = rng.random_range(0..=n - len);
            occluded[start..start + len].iter_mut().for_each(|o| *o = true);
        }

        let (first, last) = if spec.full_span_tracks || n <= spec.min_track_len {
            (0, n - 1)
        } else {
            let len = life_rng.random_range(spec.min_track_len..=n);
            let start = life_rng.random_range(0..=n - len);
            (start, start + len - 1)
        };

        let track_id = (index as u64) * 1000 + t as u64 + 1;
        for f in 0..n {
            let gt_box = plan.boxes[f];
            let spread = rng.random_range(0.0..=spec.score_spread);
            let sibling_draw = rng.random::<f64>();
            let sibling_class = if spec.n_classes > 1 {
                let s = rng.random_range(1..spec.n_classes);
                Some(if s >= plan.class_id { s + 1 } else { s })
            } else {
                None
            };
            let missed = rng.random::<f64>() < spec.miss_rate;
            let dup = rng.random::<f64>() < spec.duplicate_rate;
            let sigma = if occluded[f] { 2.0 * spec.jitter_sigma } else { spec.jitter_sigma };
            let bbox = jitter_box(spec, &gt_box, sigma, &mut rng);
            let dup_box = jitter_box(spec, &gt_box, 2.0 * sigma.max(0.02), &mut rng);

            let mut true_score = 1.0 - spread;
            let mut confusion = None;
            if dropped[f] {
                let lost = true_score * spec.drop_depth;
                true_score -= lost;
                if let (true, Some(s)) = (sibling_draw < 0.5, sibling_class) {
                    confusion = Some((s, lost));
                }
            }
            if occluded[f] {
                true_score *= 1.0 - spec.occlusion_depth;
            }
            let scores = score_vector(spec, plan.class_id, true_score, confusion, &mut rng);
            let dup_scores = score_vector(spec, plan.class_id, true_score * 0.7, confusion, &mut rng);

            if f < first || f > last || missed {
                continue;
            }
            frames[f].push(Detection {
                bbox,
                scores,
                id: Some(track_id),
            });
            if dup {
                frames[f].push(Detection {
                    bbox: dup_box,
                    scores: dup_scores,
                    id: Some(track_id),
                });
            }
        }

        tracks.push(GroundTruthTrack::with_occlusion(
            track_id,
            plan.class_id,
            first + 1,
            plan.boxes[first..=last].to_vec(),
            occluded[first..=last].to_vec(),
        )?);
        populations.push(plan.population);
        drops.push(dropped[first..=last].to_vec());
    }

    if spec.fp_rate > 0.0 {
        let poisson = Poisson::new(spec.fp_rate).expect("positive rate");
        for frame in frames.iter_mut() {
            let count = poisson.sample(&mut rng) as usize;
            for _ in 0..count {
                let w = rng.random_range(spec.min_box_size..=spec.max_box_size);
                let h = w * rng.random_range(0.6..=1.5);
                let x = rng.random_range(0.0..=spec.canvas_width - w);
                let y = rng.random_range(0.0..=spec.canvas_height - h);
                let class_id = rng.random_range(1..=spec.n_classes);
                let score = rng.random_range(0.0..=spec.fp_max_score);
                frame.push(Detection {
                    bbox: BBox::new(x, y, x + w, y + h)?,
                    scores: score_vector(spec, class_id, score, None, &mut rng),
                    id: None,
                });
            }
        }
    }

    Ok(SyntheticVideo {
        ground_truth: VideoGroundTruth {
            video_id: video_id(index),
            n_frames: n,
            tracks,
        },
        detections: frames
            .into_iter()
            .enumerate()
            .map(|(f, d)| FrameDetections::new(f + 1, d))
            .collect(),
        populations,
        drops,
    })
}
