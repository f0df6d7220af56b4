//! Python bindings for the mining, aggregation and evaluation core.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyConnectionError, PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use whymine_core::annotations::{aggregate_corpus, agreement_report, dataset_stats, vote_matrices};
use whymine_core::corpus::{CaptionSegment, TranscriptDoc};
use whymine_core::eval::MetricOptions;
use whymine_core::scoring::TimeSlotCaption;
use whymine_core::taxonomy::ReasonVector;
use whymine_core::textmine::ActionLexicon;
use whymine_core::videofilter::FrameMatrix;
use whymine_core::{Error, PipelineConfig};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Transport(_) => PyConnectionError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Round-trips a serializable value through `json.loads`.
fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn cfg_or_default(cfg: Option<&Config>) -> PipelineConfig {
    cfg.map(|c| c.inner.clone()).unwrap_or_default()
}

fn lexicon(map: BTreeMap<String, Vec<String>>) -> PyResult<ActionLexicon> {
    ActionLexicon::new(map).map_err(py_err)
}

/// Pipeline configuration. Keys match the `key = value` config file.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Config {
    inner: PipelineConfig,
}

#[pymethods]
impl Config {
    #[new]
    fn new() -> Self {
        Config { inner: PipelineConfig::default() }
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Config { inner: PipelineConfig::from_file(&path).map_err(py_err)? })
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner.to_pairs().remove(key).ok_or_else(|| PyValueError::new_err(format!("unknown config key {key:?}")))
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, value).map_err(py_err)?;
        next.validate().map_err(py_err)?;
        self.inner = next;
        Ok(())
    }

    fn to_dict(&self) -> BTreeMap<String, String> {
        self.inner.to_pairs()
    }

    fn __repr__(&self) -> String {
        format!("Config({} keys)", self.inner.to_pairs().len())
    }
}

/// Confusion counts and accuracy/precision/recall/F1 for one clip.
#[pyfunction]
#[pyo3(signature = (gold, predicted, candidates, config=None))]
fn instance_metrics<'py>(
    py: Python<'py>,
    gold: Vec<String>,
    predicted: Vec<String>,
    candidates: Vec<String>,
    config: Option<&Config>,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = MetricOptions::from(&cfg_or_default(config));
    let m = whymine_core::eval::instance_metrics(&gold, &predicted, &candidates, &opts).map_err(py_err)?;
    to_py(py, &m)
}

/// Fleiss' kappa over items of per-category counts. Returns (kappa, degenerate).
#[pyfunction]
fn fleiss_kappa(items: Vec<Vec<usize>>) -> PyResult<(f64, bool)> {
    let k = whymine_core::annotations::fleiss_kappa(&items).map_err(py_err)?;
    Ok((k.kappa, k.degenerate))
}

/// Ward clustering of `{id: vector}` cut at `cut`.
#[pyfunction]
fn ward_cluster(vectors: BTreeMap<String, Vec<f64>>, cut: f64) -> PyResult<Vec<Vec<String>>> {
    let vs: Vec<ReasonVector> = vectors.into_iter().map(|(id, vector)| ReasonVector { id, vector }).collect();
    whymine_core::taxonomy::ward_cluster(&vs, cut).map_err(py_err)
}

fn frame(rows: Vec<Vec<f64>>) -> PyResult<FrameMatrix> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("frame rows differ in length"));
    }
    FrameMatrix::new(w, h, rows.into_iter().flatten().collect()).map_err(py_err)
}

/// 2-D correlation coefficient of two equally sized frames (lists of rows).
#[pyfunction]
fn corr2d(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    whymine_core::videofilter::corr2d(&frame(a)?, &frame(b)?).map_err(py_err)
}

#[pyfunction]
fn nli_hypothesis(action: &str, reason: &str) -> PyResult<String> {
    whymine_core::scoring::nli_hypothesis(action, reason).map_err(py_err)
}

/// Cloze prompt with a blank after the first mention of `action`.
#[pyfunction]
fn fitb_prompt(excerpt: &str, action: &str, lexicon_forms: BTreeMap<String, Vec<String>>) -> PyResult<String> {
    whymine_core::scoring::fitb_prompt(excerpt, action, &lexicon(lexicon_forms)?).map_err(py_err)
}

/// Drops caption slots covered by a longer slot. Slots are (start, end, text).
#[pyfunction]
#[pyo3(signature = (slots, overlap_fraction=None))]
fn dedup_captions(slots: Vec<(f64, f64, String)>, overlap_fraction: Option<f64>) -> Vec<(f64, f64, String)> {
    let frac = overlap_fraction.unwrap_or_else(|| PipelineConfig::default().dedup_overlap_fraction);
    let slots: Vec<TimeSlotCaption> =
        slots.into_iter().map(|(start_s, end_s, text)| TimeSlotCaption { start_s, end_s, text }).collect();
    whymine_core::scoring::dedup_captions(&slots, frac).into_iter().map(|s| (s.start_s, s.end_s, s.text)).collect()
}

/// Causal candidates in one transcript given as (start, end, text) segments.
#[pyfunction]
#[pyo3(signature = (video_id, segments, lexicon_forms, config=None))]
fn extract_candidates<'py>(
    py: Python<'py>,
    video_id: String,
    segments: Vec<(f64, f64, String)>,
    lexicon_forms: BTreeMap<String, Vec<String>>,
    config: Option<&Config>,
) -> PyResult<Bound<'py, PyAny>> {
    let doc = TranscriptDoc {
        video_id,
        channel_id: String::new(),
        segments: segments.into_iter().map(|(start_s, end_s, text)| CaptionSegment { start_s, end_s, text }).collect(),
    };
    let cfg = cfg_or_default(config);
    let (mined, _) = whymine_core::pipeline::mine_transcripts(&[doc], &lexicon(lexicon_forms)?, &cfg, None);
    to_py(py, &mined)
}

/// A loaded and validated corpus directory.
#[pyclass]
struct Corpus {
    inner: whymine_core::Corpus,
    cfg: PipelineConfig,
}

#[pymethods]
impl Corpus {
    #[getter]
    fn clip_ids(&self) -> Vec<String> {
        self.inner.clips.iter().map(|c| c.clip_id.clone()).collect()
    }

    #[getter]
    fn actions(&self) -> Vec<String> {
        self.inner.taxonomy.actions.keys().cloned().collect()
    }

    fn __len__(&self) -> usize {
        self.inner.clips.len()
    }

    /// Gold labels aggregated by quorum.
    fn gold<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &aggregate_corpus(&self.inner, self.cfg.quorum).map_err(py_err)?)
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let gold = aggregate_corpus(&self.inner, self.cfg.quorum).map_err(py_err)?;
        to_py(py, &dataset_stats(&self.inner, &gold))
    }

    /// Per-reason Fleiss kappa and per-action and overall means.
    fn agreement<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let gold = aggregate_corpus(&self.inner, self.cfg.quorum).map_err(py_err)?;
        let (matrices, _) = vote_matrices(&self.inner, self.cfg.raters_per_clip);
        to_py(py, &agreement_report(&matrices, &gold).map_err(py_err)?)
    }
}

#[pyfunction]
#[pyo3(signature = (path, config=None))]
fn load_corpus(path: PathBuf, config: Option<&Config>) -> PyResult<Corpus> {
    let cfg = cfg_or_default(config);
    let (inner, _) = whymine_core::Corpus::load(&path, &cfg).map_err(py_err)?;
    Ok(Corpus { inner, cfg })
}

#[pymodule]
fn whymine(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<Corpus>()?;
    m.add_function(wrap_pyfunction!(instance_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(fleiss_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(ward_cluster, m)?)?;
    m.add_function(wrap_pyfunction!(corr2d, m)?)?;
    m.add_function(wrap_pyfunction!(nli_hypothesis, m)?)?;
    m.add_function(wrap_pyfunction!(fitb_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(dedup_captions, m)?)?;
    m.add_function(wrap_pyfunction!(extract_candidates, m)?)?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    Ok(())
}
