use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tubelink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tubelink")).args(args).output().unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn small_config(dir: &Path) -> String {
    let p = path(dir, "small.toml");
    fs::write(&p, "segment_len = 2\n[corpus]\nn_videos = 3\nframes_per_video = 30\n").unwrap();
    p
}

#[test]
fn synth_then_run_writes_outputs_and_echoes_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = small_config(dir);
    assert!(tubelink(&["synth", "--config", &cfg, "--out", &path(dir, "c")]).status.success());
    let out = tubelink(&[
        "run",
        "--config",
        &cfg,
        "--link-thresh",
        "0.5",
        "--agg",
        "max",
        "--detections",
        &path(dir, "c/detections.jsonl"),
        "--gt",
        &path(dir, "c/gt.jsonl"),
        "--out",
        &path(dir, "r"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("full: mAP"));
    let echo = fs::read_to_string(dir.join("r/config.toml")).unwrap();
    assert!(echo.contains("link_thresh = 0.5"));
    assert!(echo.contains("agg = \"max\""));
    assert!(echo.contains("tnms_thresh = 0.4"));
    for f in ["detections.jsonl", "tubelets.jsonl", "report.toml", "pr.csv"] {
        assert!(dir.join("r").join(f).exists(), "{f}");
    }
}

#[test]
fn ablate_lists_every_method() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = tubelink(&["ablate", "--config", &small_config(dir), "--out", &path(dir, "a")]);
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.join("a/ablation.csv")).unwrap();
    let methods: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        methods,
        ["static", "seqnms", "tubelets-no-link", "tubelets-tnms", "union-seqnms", "full"]
    );
}

#[test]
fn invalid_inputs_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let bad = path(dir, "bad.jsonl");
    fs::write(&bad, "{\"video_id\":\"a\",\"frame\":1}\n{\"video_id\":\"a\",\"frame\":1,\"bbox\":[5,0,1,1],\"scores\":[0.5,0.5]}\n").unwrap();
    let out = tubelink(&["run", "--detections", &bad, "--out", &path(dir, "o")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let gap = path(dir, "gap.jsonl");
    fs::write(&gap, "{\"video_id\":\"a\",\"frame\":1}\n{\"video_id\":\"a\",\"frame\":4}\n").unwrap();
    let out = tubelink(&["run", "--detections", &gap, "--out", &path(dir, "o")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("frame 2"));

    assert!(!tubelink(&["synth", "--tnms-thresh", "1.2", "--out", &path(dir, "s")]).status.success());
    assert!(!tubelink(&["synth", "--agg", "median", "--out", &path(dir, "s")]).status.success());
    let cfg = path(dir, "typo.toml");
    fs::write(&cfg, "segmnt_len = 2\n").unwrap();
    assert!(!tubelink(&["synth", "--config", &cfg, "--out", &path(dir, "s")]).status.success());
}
