use tubelink::assembly::{oracle_cuboids, CuboidJitter};
use tubelink::eval::{motion_speed_split, SpeedClass, SpeedParams};
use tubelink::pipeline::io::{write_detections, write_ground_truth};
use tubelink::pipeline::{corpus_inputs, PipelineConfig};
use tubelink::synth::{degradation_speed_coupling, generate_corpus, CorpusSpec, MotionPopulation};

fn bytes(spec: &CorpusSpec) -> Vec<u8> {
    let (videos, gt) = corpus_inputs(&generate_corpus(spec).unwrap());
    let mut out = Vec::new();
    write_detections(&mut out, &videos).unwrap();
    write_ground_truth(&mut out, &gt).unwrap();
    out
}

#[test]
fn same_seed_same_bytes() {
    let spec = PipelineConfig::default().corpus_spec();
    assert_eq!(bytes(&spec), bytes(&spec));
    let other = CorpusSpec { seed: 43, ..spec.clone() };
    assert_ne!(bytes(&spec), bytes(&other));
}

#[test]
fn detections_stay_in_range_and_on_canvas() {
    let spec = PipelineConfig::default().corpus_spec();
    let corpus = generate_corpus(&spec).unwrap();
    for v in &corpus.videos {
        assert_eq!(v.detections.len(), spec.frames_per_video);
        for (f, fd) in v.detections.iter().enumerate() {
            assert_eq!(fd.frame, f + 1);
            for d in &fd.detections {
                let b = d.bbox;
                assert!(b.x1() >= 0.0 && b.y1() >= 0.0);
                assert!(b.x2() <= spec.canvas_width && b.y2() <= spec.canvas_height);
            }
        }
    }
}

#[test]
fn speed_labels_follow_generating_population() {
    let spec = PipelineConfig::default().corpus_spec();
    let corpus = generate_corpus(&spec).unwrap();
    let (mut agree, mut total) = (0usize, 0usize);
    for v in &corpus.videos {
        let labels = motion_speed_split(&v.ground_truth.tracks, &SpeedParams::default()).unwrap();
        for (per_box, pop) in labels.iter().zip(&v.populations) {
            agree += per_box.iter().filter(|l| *l == pop).count();
            total += per_box.len();
        }
    }
    let rate = agree as f64 / total as f64;
    assert!(rate >= 0.95, "speed label agreement {rate:.4}");
}

#[test]
fn fast_drop_frequency_matches_coupled_rate() {
    let only_fast = CorpusSpec {
        n_videos: 600,
        slow: MotionPopulation { weight: 0.0, ..CorpusSpec::default().slow },
        medium: MotionPopulation { weight: 0.0, ..CorpusSpec::default().medium },
        ..CorpusSpec::default()
    };
    let spec = degradation_speed_coupling(&only_fast);
    let target = spec.drop_prob_for(SpeedClass::Fast);
    assert!((target - (spec.drop_prob + spec.drop_increment)).abs() < 1e-12);
    let corpus = generate_corpus(&spec).unwrap();
    let (mut dropped, mut frames) = (0usize, 0usize);
    for v in &corpus.videos {
        for d in &v.drops {
            dropped += d.iter().filter(|x| **x).count();
            frames += d.len();
        }
    }
    assert!(frames >= 10_000);
    let rate = dropped as f64 / frames as f64;
    assert!((rate - target).abs() <= 0.02, "drop rate {rate:.4} vs {target}");
}

#[test]
fn exact_oracle_cuboids_bound_every_live_track() {
    let corpus = generate_corpus(&CorpusSpec { n_videos: 10, ..CorpusSpec::default() }).unwrap();
    for v in &corpus.videos {
        let n = v.ground_truth.n_frames;
        for start in 1..n {
            let span = (start, start + 1);
            let cuboids = oracle_cuboids(&v.ground_truth.tracks, span, CuboidJitter::default(), 1).unwrap();
            let live = v.ground_truth.tracks.iter().filter(|t| t.covers(span)).count();
            assert_eq!(cuboids.len(), live);
            for t in v.ground_truth.tracks.iter().filter(|t| t.covers(span)) {
                let recalled = cuboids
                    .iter()
                    .any(|c| (span.0..=span.1).all(|f| c.bbox.contains(t.box_at(f).unwrap())));
                assert!(recalled);
            }
        }
    }
}
