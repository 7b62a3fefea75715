use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{Rescore, SeqNmsParams};
use crate::error::{Error, Result};
use crate::eval::{EvalParams, SpeedParams};
use crate::synth::{degradation_speed_coupling, CorpusSpec};
use crate::tubelet::AggregationMode;

/// Post-processing method. `Full` is same-frame tubelet linking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Per-frame NMS on raw detections.
    Static,
    /// Seq-NMS over raw detections.
    #[serde(rename = "seqnms")]
    SeqNms,
    /// Short tubelets deduplicated by per-frame NMS, no linking.
    TubeletsNoLink,
    /// Short tubelets with tubelet NMS, no linking.
    TubeletsTnms,
    /// Short tubelets with tubelet NMS, then Seq-NMS across neighbouring frames.
    #[serde(rename = "union-seqnms")]
    UnionSeqNms,
    /// Short tubelets with tubelet NMS and same-frame linking.
    #[default]
    #[serde(alias = "none")]
    Full,
}

impl Method {
    /// Ablation order, baseline first.
    pub const ALL: [Method; 6] = [
        Method::Static,
        Method::SeqNms,
        Method::TubeletsNoLink,
        Method::TubeletsTnms,
        Method::UnionSeqNms,
        Method::Full,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Static => "static",
            Method::SeqNms => "seqnms",
            Method::TubeletsNoLink => "tubelets-no-link",
            Method::TubeletsTnms => "tubelets-tnms",
            Method::UnionSeqNms => "union-seqnms",
            Method::Full => "full",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Method::Full),
            _ => Method::ALL
                .into_iter()
                .find(|m| m.name() == s)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}"))),
        }
    }
}

/// Every tunable of a pipeline run. Serialized as flat `key = value` lines,
/// with the synthetic corpus under a `[corpus]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Segment length `K`; 1 bypasses tubelets and runs per-frame NMS.
    pub segment_len: usize,
    pub tnms_thresh: f64,
    pub link_thresh: f64,
    pub pair_iou_thresh: f64,
    pub agg: AggregationMode,
    pub baseline: Method,
    /// Per-frame NMS threshold of the baselines.
    pub nms_thresh: f64,
    pub seqnms_link_iou: f64,
    pub seqnms_rescore: Rescore,
    pub match_iou: f64,
    pub speed_window: usize,
    pub slow_thresh: f64,
    pub fast_thresh: f64,
    pub workers: usize,
    pub seed: u64,
    pub corpus: CorpusSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segment_len: 2,
            tnms_thresh: 0.4,
            link_thresh: 0.4,
            pair_iou_thresh: 0.3,
            agg: AggregationMode::MeanMax,
            baseline: Method::Full,
            nms_thresh: 0.4,
            seqnms_link_iou: 0.5,
            seqnms_rescore: Rescore::Avg,
            match_iou: 0.5,
            speed_window: 10,
            slow_thresh: 0.9,
            fast_thresh: 0.7,
            workers: 1,
            seed: 42,
            corpus: CorpusSpec::default(),
        }
    }
}

fn unit_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} = {v} must lie in (0, 1)")))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tnms_thresh", self.tnms_thresh),
            ("link_thresh", self.link_thresh),
            ("pair_iou_thresh", self.pair_iou_thresh),
            ("nms_thresh", self.nms_thresh),
            ("seqnms_link_iou", self.seqnms_link_iou),
            ("match_iou", self.match_iou),
            ("slow_thresh", self.slow_thresh),
            ("fast_thresh", self.fast_thresh),
        ] {
            unit_open(name, v)?;
        }
        if self.segment_len < 1 {
            return Err(Error::InvalidConfig("segment_len must be at least 1".into()));
        }
        if self.speed_window < 1 {
            return Err(Error::InvalidConfig("speed_window must be at least 1".into()));
        }
        if self.fast_thresh > self.slow_thresh {
            return Err(Error::InvalidConfig("fast_thresh exceeds slow_thresh".into()));
        }
        if self.workers < 1 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        self.corpus.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// The fully resolved config, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn eval_params(&self) -> EvalParams {
        EvalParams {
            match_iou: self.match_iou,
            speed: SpeedParams {
                window: self.speed_window,
                slow_above: self.slow_thresh,
                fast_below: self.fast_thresh,
            },
        }
    }

    pub fn seqnms_params(&self) -> SeqNmsParams {
        SeqNmsParams {
            link_iou: self.seqnms_link_iou,
            suppress_iou: self.nms_thresh,
            rescore: self.seqnms_rescore,
        }
    }

    /// The corpus spec with the run seed and speed coupling applied.
    pub fn corpus_spec(&self) -> CorpusSpec {
        degradation_speed_coupling(&CorpusSpec {
            seed: self.seed,
            ..self.corpus.clone()
        })
    }
}
