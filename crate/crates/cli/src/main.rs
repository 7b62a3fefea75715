use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use tubelink::eval::{evaluate, VideoGroundTruth};
use tubelink::pipeline::{self, io, corpus_inputs, run_ablation, run_pipeline, Method, PipelineConfig};
use tubelink::synth::generate_corpus;
use tubelink::AggregationMode;

#[derive(Parser)]
#[command(name = "tubelink", version)]
#[command(about = "Link per-frame video detections into tubelets and evaluate them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Config file (TOML); command-line flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Segment length K; 1 disables tubelets
    #[arg(long)]
    segment_len: Option<usize>,
    #[arg(long)]
    tnms_thresh: Option<f64>,
    #[arg(long)]
    link_thresh: Option<f64>,
    /// Score aggregation: mean, max or mean_max
    #[arg(long)]
    agg: Option<AggregationMode>,
    /// Method: static, seqnms, tubelets-no-link, tubelets-tnms, union-seqnms, full
    #[arg(long)]
    baseline: Option<Method>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.segment_len {
            cfg.segment_len = v;
        }
        if let Some(v) = self.tnms_thresh {
            cfg.tnms_thresh = v;
        }
        if let Some(v) = self.link_thresh {
            cfg.link_thresh = v;
        }
        if let Some(v) = self.agg {
            cfg.agg = v;
        }
        if let Some(v) = self.baseline {
            cfg.baseline = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: detections.jsonl and gt.jsonl
    Synth {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Post-process detections; evaluates when ground truth is given
    Run {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare every method; synthesizes the configured corpus unless inputs are given
    Ablate {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long, requires = "gt")]
        detections: Option<PathBuf>,
        #[arg(long, requires = "detections")]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score existing outputs against ground truth
    Eval {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let mut w = create(dir, name)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn read_gt(path: &Path) -> Result<Vec<VideoGroundTruth>> {
    io::read_ground_truth(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn read_detections(path: &Path) -> Result<Vec<pipeline::VideoDetections>> {
    io::read_detections(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { opts, out } => {
            let cfg = opts.resolve()?;
            fs::create_dir_all(&out)?;
            let corpus = generate_corpus(&cfg.corpus_spec())?;
            let (videos, gt) = corpus_inputs(&corpus);
            let mut w = create(&out, "detections.jsonl")?;
            io::write_detections(&mut w, &videos)?;
            w.flush()?;
            let mut w = create(&out, "gt.jsonl")?;
            io::write_ground_truth(&mut w, &gt)?;
            w.flush()?;
            write_text(&out, "config.toml", &cfg.to_toml())?;
            println!("wrote {} videos to {}", videos.len(), out.display());
        }
        Command::Run {
            opts,
            detections,
            gt,
            out,
        } => {
            let cfg = opts.resolve()?;
            let videos = read_detections(&detections)?;
            let gt = gt.as_deref().map(read_gt).transpose()?;
            fs::create_dir_all(&out)?;
            let result = run_pipeline(&cfg, &videos, gt.as_deref())?;
            let mut w = create(&out, "detections.jsonl")?;
            io::write_scored(&mut w, &result.outputs())?;
            w.flush()?;
            let mut w = create(&out, "tubelets.jsonl")?;
            io::write_tubelets(&mut w, &result.tubelets())?;
            w.flush()?;
            write_text(&out, "config.toml", &cfg.to_toml())?;
            if let Some(report) = &result.report {
                write_text(&out, "report.toml", &report.to_toml())?;
                write_text(&out, "pr.csv", &report.pr_csv())?;
                match report.map {
                    Some(m) => println!("{}: mAP {:.4}", result.method, m),
                    None => println!("{}: no ground-truth objects", result.method),
                }
            }
        }
        Command::Ablate {
            opts,
            detections,
            gt,
            out,
        } => {
            let cfg = opts.resolve()?;
            let (videos, gt) = match (detections, gt) {
                (Some(d), Some(g)) => (read_detections(&d)?, read_gt(&g)?),
                _ => corpus_inputs(&generate_corpus(&cfg.corpus_spec())?),
            };
            fs::create_dir_all(&out)?;
            let table = run_ablation(&cfg, &videos, &gt)?;
            let csv = table.to_csv();
            write_text(&out, "ablation.csv", &csv)?;
            write_text(&out, "config.toml", &cfg.to_toml())?;
            print!("{csv}");
        }
        Command::Eval {
            opts,
            detections,
            gt,
            out,
        } => {
            let cfg = opts.resolve()?;
            let outputs = io::read_scored(open(&detections)?)
                .with_context(|| format!("reading {}", detections.display()))?;
            let gt = read_gt(&gt)?;
            fs::create_dir_all(&out)?;
            let report = evaluate(&gt, &outputs, &cfg.eval_params())?;
            write_text(&out, "report.toml", &report.to_toml())?;
            write_text(&out, "pr.csv", &report.pr_csv())?;
            write_text(&out, "config.toml", &cfg.to_toml())?;
            if let Some(m) = report.map {
                println!("mAP {m:.4}");
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
