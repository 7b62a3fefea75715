use std::fmt::Write;

use serde::Serialize;

use super::{run_method, Method, PipelineConfig, VideoDetections};
use crate::error::{Error, Result};
use crate::eval::{EvalReport, VideoGroundTruth};

/// One method's scores; `None` where a subset holds no positives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub method: Method,
    pub map: Option<f64>,
    pub slow: Option<f64>,
    pub medium: Option<f64>,
    pub fast: Option<f64>,
    pub occluded: Option<f64>,
    pub strict: Option<f64>,
}

impl AblationRow {
    fn from_report(method: Method, r: &EvalReport) -> Self {
        Self {
            method,
            map: r.map,
            slow: r.subsets.slow,
            medium: r.subsets.medium,
            fast: r.subsets.fast,
            occluded: r.subsets.occluded,
            strict: r.strict_tubelet_map,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

impl AblationTable {
    pub fn row(&self, method: Method) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Comma-separated table in percent, with the gain of each method over static NMS.
    pub fn to_csv(&self) -> String {
        let base = self.row(Method::Static).and_then(|r| r.map);
        let mut out = String::from("method,map,gain,slow,medium,fast,occluded,strict\n");
        for r in &self.rows {
            let gain = match (r.map, base) {
                (Some(m), Some(b)) => Some(m - b),
                _ => None,
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.method,
                cell(r.map),
                cell(gain),
                cell(r.slow),
                cell(r.medium),
                cell(r.fast),
                cell(r.occluded),
                cell(r.strict)
            )
            .expect("writing to a string");
        }
        out
    }
}

/// Evaluates every method on the same inputs.
pub fn run_ablation(
    config: &PipelineConfig,
    videos: &[VideoDetections],
    gt: &[VideoGroundTruth],
) -> Result<AblationTable> {
    let rows = Method::ALL
        .into_iter()
        .map(|m| {
            let out = run_method(config, m, videos, Some(gt))?;
            let report = out
                .report
                .ok_or_else(|| Error::InvalidCorpus("ablation needs ground truth".into()))?;
            Ok(AblationRow::from_report(m, &report))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { rows })
}
