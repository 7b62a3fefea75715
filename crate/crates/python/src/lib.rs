//! Python bindings for the tubelet linking toolkit.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use tubelink::baselines;
use tubelink::eval::{self, EvalDetection, EvalGroundTruth};
use tubelink::linking;
use tubelink::pipeline::{self, Method, PipelineConfig};
use tubelink::synth::generate_corpus;
use tubelink::tubelet::{self, tubelet_nms_indices};

fn err(e: tubelink::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = tubelink::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

/// Axis-aligned box in corner form.
#[pyclass(name = "BBox", frozen, eq, from_py_object)]
#[derive(Clone, Copy, PartialEq)]
struct PyBBox(tubelink::BBox);

#[pymethods]
impl PyBBox {
    #[new]
    fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> PyResult<Self> {
        tubelink::BBox::new(x1, y1, x2, y2).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> PyResult<Self> {
        tubelink::BBox::from_center(cx, cy, w, h).map(Self).map_err(err)
    }

    #[getter]
    fn corners(&self) -> (f64, f64, f64, f64) {
        let [a, b, c, d] = self.0.corners();
        (a, b, c, d)
    }

    #[getter]
    fn area(&self) -> f64 {
        self.0.area()
    }

    fn iou(&self, other: &PyBBox) -> f64 {
        tubelink::iou(&self.0, &other.0)
    }

    fn __repr__(&self) -> String {
        let [a, b, c, d] = self.0.corners();
        format!("BBox({a}, {b}, {c}, {d})")
    }
}

type Corners = (f64, f64, f64, f64);

fn to_box(c: Corners) -> PyResult<tubelink::BBox> {
    tubelink::BBox::new(c.0, c.1, c.2, c.3).map_err(err)
}

#[pyfunction]
fn iou(a: &PyBBox, b: &PyBBox) -> f64 {
    tubelink::iou(&a.0, &b.0)
}

#[pyfunction]
fn bounding_box(boxes: Vec<PyBBox>) -> PyResult<PyBBox> {
    tubelink::bounding_box(boxes.iter().map(|b| &b.0)).map(PyBBox).map_err(err)
}

/// Combines per-frame score vectors with `mean`, `max` or `mean_max`.
#[pyfunction]
#[pyo3(signature = (vectors, mode = "mean_max"))]
fn aggregate_scores(vectors: Vec<Vec<f64>>, mode: &str) -> PyResult<Vec<f64>> {
    let vs = vectors
        .into_iter()
        .map(tubelink::ScoreVector::new)
        .collect::<tubelink::Result<Vec<_>>>()
        .map_err(err)?;
    let agg = tubelink::aggregate_scores(&vs, parse(mode)?).map_err(err)?;
    Ok(agg.as_slice().to_vec())
}

/// Frame indices (1-based) of every overlapping segment, padded to length `k`.
#[pyfunction]
fn plan_segments(n_frames: usize, k: usize) -> PyResult<Vec<Vec<usize>>> {
    Ok(tubelink::plan_segments(n_frames, k).map_err(err)?.segments().to_vec())
}

/// A run of boxes on consecutive frames with an aggregated score vector.
#[pyclass(name = "Tubelet", frozen, from_py_object)]
#[derive(Clone)]
struct PyTubelet(tubelink::Tubelet);

#[pymethods]
impl PyTubelet {
    #[new]
    #[pyo3(signature = (start_frame, boxes, scores, agg = "mean_max"))]
    fn new(start_frame: usize, boxes: Vec<Corners>, scores: Vec<Vec<f64>>, agg: &str) -> PyResult<Self> {
        if boxes.len() != scores.len() {
            return Err(PyValueError::new_err("boxes and scores differ in length"));
        }
        let fbs = boxes
            .into_iter()
            .zip(scores)
            .map(|(b, s)| Ok(tubelet::FrameBox::new(to_box(b)?, tubelink::ScoreVector::new(s).map_err(err)?)))
            .collect::<PyResult<Vec<_>>>()?;
        tubelink::Tubelet::new(start_frame, fbs, parse(agg)?).map(Self).map_err(err)
    }

    #[getter]
    fn start_frame(&self) -> usize {
        self.0.start_frame()
    }

    #[getter]
    fn end_frame(&self) -> usize {
        self.0.end_frame()
    }

    #[getter]
    fn boxes(&self) -> Vec<Corners> {
        self.0
            .boxes()
            .iter()
            .map(|b| {
                let [a, c, d, e] = b.bbox.corners();
                (a, c, d, e)
            })
            .collect()
    }

    #[getter]
    fn aggregated(&self) -> Vec<f64> {
        self.0.aggregated().as_slice().to_vec()
    }

    fn score(&self, class_id: usize) -> f64 {
        self.0.score(class_id)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

fn unwrap_tubes(tubes: &[PyTubelet]) -> Vec<tubelink::Tubelet> {
    tubes.iter().map(|t| t.0.clone()).collect()
}

#[pyfunction]
fn tubelet_overlap(a: &PyTubelet, b: &PyTubelet) -> PyResult<f64> {
    tubelink::tubelet_overlap(&a.0, &b.0).map_err(err)
}

/// Indices of the tubelets kept by tubelet NMS, in keep order.
#[pyfunction]
#[pyo3(signature = (tubelets, class_id, threshold = 0.4))]
fn tubelet_nms(tubelets: Vec<PyTubelet>, class_id: usize, threshold: f64) -> PyResult<Vec<usize>> {
    tubelet_nms_indices(&unwrap_tubes(&tubelets), class_id, threshold).map_err(err)
}

/// Links short tubelets of a `n_frames` video cut into segments of length `k`.
///
/// Every tubelet must cover exactly one segment.
#[pyfunction]
#[pyo3(signature = (n_frames, k, tubelets, class_id, threshold = 0.4, agg = "mean_max"))]
fn link_tubelets(
    n_frames: usize,
    k: usize,
    tubelets: Vec<PyTubelet>,
    class_id: usize,
    threshold: f64,
    agg: &str,
) -> PyResult<Vec<PyTubelet>> {
    let plan = tubelink::plan_segments(n_frames, k).map_err(err)?;
    let mut groups = vec![Vec::new(); plan.len()];
    for t in tubelets {
        let m = (0..plan.len())
            .find(|&m| plan.span(m) == t.0.span())
            .ok_or_else(|| PyValueError::new_err(format!("tubelet span {:?} matches no segment", t.0.span())))?;
        groups[m].push(t.0);
    }
    let out = linking::link_short_tubelets(&plan, &groups, class_id, threshold, parse(agg)?).map_err(err)?;
    Ok(out.tubelets.into_iter().map(PyTubelet).collect())
}

/// Greedy NMS; returns kept indices in keep order.
#[pyfunction]
#[pyo3(signature = (boxes, scores, threshold = 0.4))]
fn nms(boxes: Vec<Corners>, scores: Vec<f64>, threshold: f64) -> PyResult<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(PyValueError::new_err("boxes and scores differ in length"));
    }
    let boxes = boxes.into_iter().map(to_box).collect::<PyResult<Vec<_>>>()?;
    Ok(baselines::nms(&boxes, &scores, threshold))
}

/// Seq-NMS over per-frame boxes and scores of one class.
///
/// Returns per frame the kept `(index, score)` pairs.
#[pyfunction]
#[pyo3(signature = (boxes, scores, link_iou = 0.5, suppress_iou = 0.4, rescore = "avg"))]
fn seq_nms(
    boxes: Vec<Vec<Corners>>,
    scores: Vec<Vec<f64>>,
    link_iou: f64,
    suppress_iou: f64,
    rescore: &str,
) -> PyResult<Vec<Vec<(usize, f64)>>> {
    let boxes = boxes
        .into_iter()
        .map(|f| f.into_iter().map(to_box).collect::<PyResult<Vec<_>>>())
        .collect::<PyResult<Vec<_>>>()?;
    let graph = baselines::LinkGraph::new(boxes, scores, link_iou).map_err(err)?;
    let params = baselines::SeqNmsParams {
        link_iou,
        suppress_iou,
        rescore: parse(rescore)?,
    };
    baselines::seq_nms_graph(&graph, &params).map_err(err)
}

/// Average precision of scored detections against ground truth.
///
/// Detections are `(image, box, score)` and ground truth `(image, box)`.
/// Returns `None` when there is no ground truth.
#[pyfunction]
#[pyo3(signature = (detections, ground_truth, match_iou = 0.5))]
fn compute_ap(
    detections: Vec<(usize, Corners, f64)>,
    ground_truth: Vec<(usize, Corners)>,
    match_iou: f64,
) -> PyResult<Option<f64>> {
    let dets = detections
        .into_iter()
        .map(|(i, b, score)| {
            Ok(EvalDetection {
                image: (i, 0),
                bbox: to_box(b)?,
                score,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let gt = ground_truth
        .into_iter()
        .map(|(i, b)| {
            Ok(EvalGroundTruth {
                image: (i, 0),
                bbox: to_box(b)?,
                ignore: false,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(eval::compute_ap(&dets, &gt, match_iou).ap)
}

fn config(toml_text: Option<&str>) -> PyResult<PipelineConfig> {
    match toml_text {
        Some(t) => PipelineConfig::from_toml(t).map_err(err),
        None => Ok(PipelineConfig::default()),
    }
}

/// Generates the configured synthetic corpus, runs one method and returns
/// the evaluation report as TOML text.
#[pyfunction]
#[pyo3(signature = (config_toml = None, method = None))]
fn run_synthetic(py: Python<'_>, config_toml: Option<&str>, method: Option<&str>) -> PyResult<String> {
    let cfg = config(config_toml)?;
    let method: Method = match method {
        Some(m) => parse(m)?,
        None => cfg.baseline,
    };
    py.detach(|| {
        let corpus = generate_corpus(&cfg.corpus_spec())?;
        let (videos, gt) = pipeline::corpus_inputs(&corpus);
        let out = pipeline::run_method(&cfg, method, &videos, Some(&gt))?;
        Ok(out.report.map(|r| r.to_toml()).unwrap_or_default())
    })
    .map_err(err)
}

/// Runs every method on the configured synthetic corpus; returns the CSV table.
#[pyfunction]
#[pyo3(signature = (config_toml = None))]
fn ablation(py: Python<'_>, config_toml: Option<&str>) -> PyResult<String> {
    let cfg = config(config_toml)?;
    py.detach(|| {
        let corpus = generate_corpus(&cfg.corpus_spec())?;
        let (videos, gt) = pipeline::corpus_inputs(&corpus);
        Ok(pipeline::run_ablation(&cfg, &videos, &gt)?.to_csv())
    })
    .map_err(err)
}

/// The default configuration as TOML text.
#[pyfunction]
fn default_config() -> String {
    PipelineConfig::default().to_toml()
}

#[pymodule]
fn _tubelink(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBBox>()?;
    m.add_class::<PyTubelet>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(bounding_box, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_scores, m)?)?;
    m.add_function(wrap_pyfunction!(plan_segments, m)?)?;
    m.add_function(wrap_pyfunction!(tubelet_overlap, m)?)?;
    m.add_function(wrap_pyfunction!(tubelet_nms, m)?)?;
    m.add_function(wrap_pyfunction!(link_tubelets, m)?)?;
    m.add_function(wrap_pyfunction!(nms, m)?)?;
    m.add_function(wrap_pyfunction!(seq_nms, m)?)?;
    m.add_function(wrap_pyfunction!(compute_ap, m)?)?;
    m.add_function(wrap_pyfunction!(run_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(ablation, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add(
        "__all__",
        [
            "BBox", "Tubelet", "iou", "bounding_box", "aggregate_scores", "plan_segments",
            "tubelet_overlap", "tubelet_nms", "link_tubelets", "nms", "seq_nms", "compute_ap",
            "run_synthetic", "ablation", "default_config",
        ],
    )?;
    Ok(())
}
