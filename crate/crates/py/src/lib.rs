//! Python bindings for the qaforge engine.
//!
//! Passages, triplets and reports cross the boundary as plain dicts with the
//! same field names as the JSONL records.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use qaforge_core::corpus::{CorpusError, DomainTag, Passage, PassageStore, Triplet};
use qaforge_core::filter::{FilterConfig, FilterPipeline};
use qaforge_core::genio::{parse_generation as parse_raw, PromptStyle};
use qaforge_core::ingest::{ingest as run_ingest, IngestConfig, RawRecord};
use qaforge_core::metrics::{self, BleuConfig, MeteorParams, OverlapMode};
use qaforge_core::providers::TableLemmatizer;
use qaforge_core::stats::{diversity_report as run_diagnostics, DiagnosticsConfig};
use qaforge_core::textproc::{self, Analyzer, WhLexicon};
use qaforge_core::Providers;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn corpus_error(e: CorpusError) -> PyErr {
    match e {
        CorpusError::Io(e) => PyOSError::new_err(e.to_string()),
        other => value_error(other),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_error)
}

fn analyzer() -> Analyzer {
    Analyzer::new(Arc::new(TableLemmatizer::builtin()))
}

fn style(name: &str) -> PyResult<PromptStyle> {
    match name {
        "gpt" => Ok(PromptStyle::gpt()),
        "t5" => Ok(PromptStyle::t5()),
        other => Err(value_error(format!("unknown style `{other}` (expected gpt or t5)"))),
    }
}

/// Similarity ratio `1 - distance / max length` over characters.
#[pyfunction]
fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    textproc::levenshtein_similarity(a, b)
}

#[pyfunction]
#[pyo3(signature = (hypothesis, references, max_n = 4, smooth = true))]
fn bleu(hypothesis: Vec<String>, references: Vec<Vec<String>>, max_n: usize, smooth: bool) -> PyResult<f64> {
    if max_n == 0 {
        return Err(value_error("max_n must be at least 1"));
    }
    let cfg = if smooth {
        BleuConfig {
            max_n,
            ..BleuConfig::default()
        }
    } else {
        BleuConfig::unsmoothed(max_n)
    };
    Ok(metrics::bleu(&hypothesis, &references, &cfg))
}

#[pyfunction]
fn rouge_l(reference: Vec<String>, candidate: Vec<String>) -> f64 {
    metrics::rouge_l(&reference, &candidate)
}

#[pyfunction]
fn meteor(reference: Vec<String>, candidate: Vec<String>) -> f64 {
    metrics::meteor_lite(&reference, &candidate, &MeteorParams::default())
}

/// `(em, f1)` against the best-matching gold answer.
#[pyfunction]
fn squad_em_f1(prediction: &str, golds: Vec<String>) -> (f64, f64) {
    let s = metrics::squad_em_f1(prediction, &golds);
    (s.em, s.f1)
}

/// Jaccard overlap of lemma sets, using the built-in lemma table.
#[pyfunction]
fn lemma_overlap(a: &str, b: &str) -> PyResult<f64> {
    metrics::lemma_overlap(a, b, OverlapMode::Jaccard, &analyzer()).map_err(value_error)
}

#[pyfunction]
#[pyo3(signature = (questions, sample = 5000, seed = 0))]
fn self_bleu(questions: Vec<String>, sample: usize, seed: u64) -> PyResult<f64> {
    metrics::self_bleu(&questions, sample, seed, &analyzer(), &BleuConfig::default()).map_err(value_error)
}

#[pyfunction]
fn count_interrogatives(question: &str) -> PyResult<usize> {
    textproc::count_interrogatives(question, &WhLexicon::default(), &analyzer()).map_err(value_error)
}

/// Splits raw generator output into `(question, answer)` tuples.
#[pyfunction]
#[pyo3(signature = (raw, style_name = "gpt", cap = 3))]
fn parse_generation(raw: &str, style_name: &str, cap: usize) -> PyResult<Vec<(String, String)>> {
    let (pairs, _) = parse_raw(raw, &style(style_name)?, cap);
    Ok(pairs.into_iter().map(|p| (p.question, p.answer)).collect())
}

#[pyclass(name = "PassageStore", module = "qaforge")]
struct PyPassageStore {
    inner: PassageStore,
}

#[pymethods]
impl PyPassageStore {
    #[new]
    fn new(passages: &Bound<'_, PyAny>) -> PyResult<Self> {
        let passages: Vec<Passage> = from_py(passages)?;
        Ok(PyPassageStore {
            inner: PassageStore::new(passages).map_err(corpus_error)?,
        })
    }

    /// Reads every batch file in a store directory.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyPassageStore {
            inner: PassageStore::load(&path).map_err(corpus_error)?,
        })
    }

    fn write(&self, dir: PathBuf, batches: u32) -> PyResult<()> {
        self.inner.write_dir(&dir, batches).map_err(corpus_error)
    }

    fn get<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.inner.get(id).map(|p| to_py(py, p)).transpose()
    }

    fn passages<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.passages())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PassageStore({} passages)", self.inner.len())
    }
}

/// Runs ingest over raw records (`id`, `title`, `text`, `categories`).
/// Returns the store and the drop report.
#[pyfunction]
#[pyo3(signature = (records, domain = "wiki", batches = 20, seed = 0))]
fn ingest<'py>(
    py: Python<'py>,
    records: &Bound<'py, PyAny>,
    domain: &str,
    batches: u32,
    seed: u64,
) -> PyResult<(PyPassageStore, Bound<'py, PyAny>)> {
    let records: Vec<RawRecord> = from_py(records)?;
    let domain: DomainTag = domain.parse().map_err(value_error)?;
    let cfg = IngestConfig {
        batch_count: batches,
        seed,
        ..IngestConfig::for_domain(domain)
    };
    let (store, report) = run_ingest(records, cfg).map_err(value_error)?;
    Ok((PyPassageStore { inner: store }, to_py(py, &report)?))
}

#[pyclass(name = "FilterPipeline", module = "qaforge")]
struct PyFilterPipeline {
    inner: FilterPipeline,
}

#[pymethods]
impl PyFilterPipeline {
    /// `config` is a filter configuration in TOML; defaults when omitted.
    /// All providers are the in-process stubs.
    #[new]
    #[pyo3(signature = (config = None, workers = 1))]
    fn new(config: Option<&str>, workers: usize) -> PyResult<Self> {
        let cfg = match config {
            Some(text) => FilterConfig::from_toml(text).map_err(value_error)?,
            None => FilterConfig::default(),
        };
        let inner = FilterPipeline::new(cfg, Providers::stubs())
            .and_then(|p| p.with_workers(workers))
            .map_err(value_error)?;
        Ok(PyFilterPipeline { inner })
    }

    /// Returns the triplets with verdicts attached, and the run report.
    fn apply<'py>(
        &self,
        py: Python<'py>,
        triplets: &Bound<'py, PyAny>,
        store: &PyPassageStore,
    ) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
        let mut ts: Vec<Triplet> = from_py(triplets)?;
        let report = py
            .detach(|| self.inner.apply(&mut ts, &store.inner))
            .map_err(value_error)?;
        Ok((to_py(py, &ts)?, to_py(py, &report)?))
    }
}

/// Diversity diagnostics over the surviving triplets.
#[pyfunction]
#[pyo3(signature = (triplets, store, seed = 0, self_bleu_sample = 5000))]
fn diversity_report<'py>(
    py: Python<'py>,
    triplets: &Bound<'py, PyAny>,
    store: &PyPassageStore,
    seed: u64,
    self_bleu_sample: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let ts: Vec<Triplet> = from_py(triplets)?;
    let cfg = DiagnosticsConfig {
        seed,
        self_bleu_sample,
        ..Default::default()
    };
    let report = run_diagnostics(&ts, &store.inner, &cfg, &analyzer()).map_err(value_error)?;
    to_py(py, &report)
}

#[pymodule]
fn qaforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(levenshtein_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(meteor, m)?)?;
    m.add_function(wrap_pyfunction!(squad_em_f1, m)?)?;
    m.add_function(wrap_pyfunction!(lemma_overlap, m)?)?;
    m.add_function(wrap_pyfunction!(self_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(count_interrogatives, m)?)?;
    m.add_function(wrap_pyfunction!(parse_generation, m)?)?;
    m.add_function(wrap_pyfunction!(ingest, m)?)?;
    m.add_function(wrap_pyfunction!(diversity_report, m)?)?;
    m.add_class::<PyPassageStore>()?;
    m.add_class::<PyFilterPipeline>()?;
    Ok(())
}
