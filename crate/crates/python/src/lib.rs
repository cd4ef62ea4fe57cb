//! Python bindings for galleryrank.
//!
//! Structured results cross the boundary as JSON and come out as plain
//! dicts and lists, so they match the CLI's output documents.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use galleryrank::embstore::{self, EmbeddingRecord, Format, Role};
use galleryrank::engine::{AblationAxis, AblationSpec, AxisValue, EvalConfig, Evaluator, RunResult};
use galleryrank::gallery::{self, Candidate, KMeansOptions, SplitConfig};
use galleryrank::metrics;
use galleryrank::report::{self, RowKey, Scale, TableSchema};
use galleryrank::synth::{self, ScoredItem, SynthConfig};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(_galleryrank, GalleryrankError, PyValueError);

fn err(e: galleryrank::Error) -> PyErr {
    GalleryrankError::new_err(format!("{}: {e}", e.kind()))
}

trait OrPy<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for galleryrank::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

impl<T> OrPy<T> for serde_json::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(|e| GalleryrankError::new_err(format!("json: {e}")))
    }
}

fn parse<T: std::str::FromStr<Err = galleryrank::Error>>(text: &str) -> PyResult<T> {
    text.parse().map_err(err)
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).or_py()?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).or_py()
}

fn parse_format(format: Option<&str>, path: &Path) -> PyResult<Format> {
    match format {
        Some(f) => parse(f),
        None => Format::from_path(path).or_py(),
    }
}

fn record_from_dict(d: &Bound<'_, PyDict>) -> PyResult<EmbeddingRecord> {
    let field = |key: &str| -> PyResult<Bound<'_, PyAny>> {
        d.get_item(key)?
            .ok_or_else(|| GalleryrankError::new_err(format!("record is missing {key:?}")))
    };
    let optional = |key: &str| -> PyResult<String> {
        match d.get_item(key)? {
            Some(v) => v.extract(),
            None => Ok(String::new()),
        }
    };
    let role: String = field("role")?.extract()?;
    Ok(EmbeddingRecord {
        id: field("id")?.extract()?,
        subject: field("subject")?.extract()?,
        role: parse(&role)?,
        encoder: field("encoder")?.extract()?,
        variant: field("variant")?.extract()?,
        method: optional("method")?,
        vector: field("vector")?.extract()?,
    })
}

/// A validated collection of embedding records.
#[pyclass(name = "EmbeddingSet", module = "galleryrank", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyEmbeddingSet {
    inner: embstore::EmbeddingSet,
}

#[pymethods]
impl PyEmbeddingSet {
    /// Loads a JSONL or binary file; the format follows the extension unless given.
    #[staticmethod]
    #[pyo3(signature = (path, format=None))]
    fn load(path: PathBuf, format: Option<&str>) -> PyResult<Self> {
        let format = parse_format(format, &path)?;
        Ok(PyEmbeddingSet { inner: embstore::load_set(&path, format).or_py()? })
    }

    /// Builds a set from dicts with the JSONL record keys.
    #[staticmethod]
    fn from_records(name: &str, records: Vec<Bound<'_, PyDict>>) -> PyResult<Self> {
        let records = records.iter().map(record_from_dict).collect::<PyResult<Vec<_>>>()?;
        Ok(PyEmbeddingSet { inner: embstore::EmbeddingSet::new(name, records).or_py()? })
    }

    #[pyo3(signature = (path, format=None))]
    fn write(&self, path: PathBuf, format: Option<&str>) -> PyResult<()> {
        let format = parse_format(format, &path)?;
        embstore::write_set(&self.inner, &path, format).or_py()
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn encoder(&self) -> &str {
        self.inner.encoder()
    }

    fn subjects(&self) -> Vec<String> {
        self.inner.subjects().to_vec()
    }

    fn methods(&self) -> Vec<String> {
        self.inner.methods()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.records().iter().map(|r| r.id.clone()).collect()
    }

    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.records())
    }

    fn manifest<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.manifest())
    }

    fn vector(&self, id: &str) -> PyResult<Vec<f32>> {
        self.inner
            .get(id)
            .map(|r| r.vector.clone())
            .ok_or_else(|| GalleryrankError::new_err(format!("unknown id {id}")))
    }

    /// Records with the given role ("reference", "gallery", "generated", "prompt").
    fn with_role(&self, role: &str) -> PyResult<Self> {
        let role: Role = parse(role)?;
        Ok(PyEmbeddingSet { inner: self.inner.filter(|r| r.role == role).or_py()? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "EmbeddingSet(name={:?}, records={}, dimension={}, encoder={:?})",
            self.inner.name(),
            self.inner.len(),
            self.inner.dimension(),
            self.inner.encoder()
        )
    }
}

#[pyfunction]
fn cosine(u: Vec<f32>, v: Vec<f32>) -> PyResult<f64> {
    metrics::cosine(&u, &v).or_py()
}

/// Non-interpolated AP of a relevance sequence in rank order.
#[pyfunction]
fn ap_from_relevance(relevance: Vec<bool>) -> Option<f64> {
    metrics::ap_from_relevance(&relevance)
}

/// Counting-based AP over `(id, similarity, relevant)` triples.
#[pyfunction]
fn brute_force_ap(items: Vec<(String, f64, bool)>) -> PyResult<f64> {
    let items: Vec<ScoredItem> = items
        .into_iter()
        .map(|(id, similarity, relevant)| ScoredItem { id, similarity, relevant })
        .collect();
    synth::brute_force_ap(&items).or_py()
}

fn query_record(vector: Vec<f32>, subject: &str, encoder: &str) -> EmbeddingRecord {
    EmbeddingRecord {
        id: "<query>".into(),
        subject: subject.into(),
        role: Role::Generated,
        encoder: encoder.into(),
        variant: String::new(),
        method: "query".into(),
        vector,
    }
}

/// Ranks every record of `gallery` against a query vector. Returns
/// `(id, subject, similarity, relevant)` tuples, best first.
#[pyfunction]
fn rank(query: Vec<f32>, subject: &str, gallery: &PyEmbeddingSet) -> PyResult<Vec<(String, String, f64, bool)>> {
    let q = query_record(query, subject, gallery.inner.encoder());
    let items: Vec<&EmbeddingRecord> = gallery.inner.records().iter().collect();
    let ranked = metrics::rank_gallery(&q, &items).or_py()?;
    Ok(ranked
        .entries
        .into_iter()
        .map(|e| (e.id, e.subject, e.similarity, e.relevant))
        .collect())
}

#[pyfunction]
fn average_precision(query: Vec<f32>, subject: &str, gallery: &PyEmbeddingSet) -> PyResult<f64> {
    let q = query_record(query, subject, gallery.inner.encoder());
    let items: Vec<&EmbeddingRecord> = gallery.inner.records().iter().collect();
    let ranked = metrics::rank_gallery(&q, &items).or_py()?;
    Ok(metrics::average_precision(&ranked).or_py()?.ap)
}

#[pyfunction]
#[pyo3(signature = (gallery_size, relevant, trials=10_000, seed=0))]
fn monte_carlo_random_map(gallery_size: usize, relevant: usize, trials: usize, seed: u64) -> PyResult<(f64, f64)> {
    let est = synth::monte_carlo_random_map(gallery_size, relevant, trials, seed).or_py()?;
    Ok((est.mean, est.stderr))
}

#[pyfunction]
#[pyo3(signature = (points, k, seed=0, tol=1e-6, max_iter=100, n_init=10))]
fn kmeans<'py>(
    py: Python<'py>,
    points: Vec<Vec<f64>>,
    k: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
    n_init: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let result = gallery::kmeans(&points, k, seed, KMeansOptions { tol, max_iter, n_init }).or_py()?;
    to_py(py, &result)
}

fn candidates<'a>(ids: &'a [String], vectors: &'a [Vec<f32>]) -> PyResult<Vec<Candidate<'a>>> {
    if ids.len() != vectors.len() {
        return Err(GalleryrankError::new_err("ids and vectors differ in length"));
    }
    Ok(ids.iter().zip(vectors).map(|(id, v)| Candidate { id, vector: v }).collect())
}

#[pyfunction]
fn sample_random(ids: Vec<String>, vectors: Vec<Vec<f32>>, n: usize, seed: u64) -> PyResult<Vec<String>> {
    gallery::sample_random(&candidates(&ids, &vectors)?, n, seed).or_py()
}

#[pyfunction]
fn sample_kmeans(ids: Vec<String>, vectors: Vec<Vec<f32>>, n: usize, seed: u64) -> PyResult<Vec<String>> {
    gallery::sample_kmeans(&candidates(&ids, &vectors)?, n, seed).or_py()
}

/// Splits the real images of `pool` into reference and gallery lists.
#[pyfunction]
#[pyo3(signature = (pool, config=None))]
fn split_reference_gallery<'py>(
    py: Python<'py>,
    pool: &PyEmbeddingSet,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let config: SplitConfig = config.map(from_py).transpose()?.unwrap_or_default();
    let real = pool.inner.filter(|r| r.role.is_real()).or_py()?;
    to_py(py, &gallery::split_reference_gallery(&real, &config).or_py()?)
}

/// Generates a synthetic identity dataset; keyword arguments override the defaults.
#[pyfunction]
#[pyo3(signature = (**overrides))]
fn generate_synthetic(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<PyEmbeddingSet> {
    let config: SynthConfig = match overrides {
        Some(d) => from_py(d.as_any())?,
        None => SynthConfig::default(),
    };
    Ok(PyEmbeddingSet { inner: synth::generate_synthetic_dataset(&config).or_py()? })
}

fn evaluator(sets: Vec<PyRef<'_, PyEmbeddingSet>>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Evaluator> {
    let config: EvalConfig = config.map(from_py).transpose()?.unwrap_or_default();
    let sets = sets.iter().map(|s| s.inner.clone()).collect();
    Evaluator::new(config, sets).or_py()
}

/// Runs an evaluation over in-memory sets. `config` takes the run-config
/// keys (mode, gallery, metrics, ...); `sets` and `prompt_pairs` paths in
/// it are ignored, pass the pairing map directly instead.
#[pyfunction]
#[pyo3(signature = (sets, config=None, prompt_pairs=None))]
fn evaluate<'py>(
    py: Python<'py>,
    sets: Vec<PyRef<'py, PyEmbeddingSet>>,
    config: Option<&Bound<'py, PyAny>>,
    prompt_pairs: Option<BTreeMap<String, String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut ev = evaluator(sets, config)?;
    if let Some(p) = prompt_pairs {
        ev = ev.with_prompt_pairs(p);
    }
    to_py(py, &ev.run().or_py()?)
}

/// Runs a run-config file exactly as `galleryrank evaluate` does.
#[pyfunction]
fn evaluate_config<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let config = EvalConfig::load(&path).or_py()?;
    to_py(py, &Evaluator::from_config(config).or_py()?.run().or_py()?)
}

#[pyfunction]
#[pyo3(signature = (sets, axis, values, seeds, config=None, resample=false, per_subject=10))]
#[allow(clippy::too_many_arguments)]
fn ablate<'py>(
    py: Python<'py>,
    sets: Vec<PyRef<'py, PyEmbeddingSet>>,
    axis: &str,
    values: Vec<String>,
    seeds: Vec<u64>,
    config: Option<&Bound<'py, PyAny>>,
    resample: bool,
    per_subject: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let axis: AblationAxis = parse(axis)?;
    let values = values
        .iter()
        .map(|v| match axis {
            AblationAxis::SamplingStrategy => Ok(AxisValue::Strategy(parse(v)?)),
            _ => v
                .parse()
                .map(AxisValue::Count)
                .map_err(|_| GalleryrankError::new_err(format!("axis value {v:?} is not a count"))),
        })
        .collect::<PyResult<Vec<_>>>()?;
    let mut spec = AblationSpec::new(axis, values, seeds);
    spec.resample = resample;
    spec.per_subject = per_subject;
    to_py(py, &evaluator(sets, config)?.ablation(&spec).or_py()?)
}

#[pyfunction]
#[pyo3(signature = (sets, variant_a, variant_b, config=None))]
fn compare_variants<'py>(
    py: Python<'py>,
    sets: Vec<PyRef<'py, PyEmbeddingSet>>,
    variant_a: &str,
    variant_b: &str,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &evaluator(sets, config)?.compare_variants(variant_a, variant_b).or_py()?)
}

/// Renders results from `evaluate` as CSV or markdown.
#[pyfunction]
#[pyo3(signature = (results, format="csv", row_key="method", scale="fraction", decimals=None))]
fn render_table(
    results: &Bound<'_, PyAny>,
    format: &str,
    row_key: &str,
    scale: &str,
    decimals: Option<usize>,
) -> PyResult<String> {
    let results: Vec<RunResult> = from_py(results)?;
    let row_key: RowKey = parse(row_key)?;
    let scale: Scale = parse(scale)?;
    let mut schema = TableSchema::for_results(&results, row_key, scale);
    if let Some(d) = decimals {
        schema.decimals = d;
    }
    let rows = report::rows_from_results(&results, &schema).or_py()?;
    match format {
        "csv" => report::emit_csv(&rows, &schema).or_py(),
        "markdown" | "md" => report::emit_markdown(&rows, &schema).or_py(),
        other => Err(GalleryrankError::new_err(format!("unknown table format {other:?}"))),
    }
}

#[pymodule]
fn _galleryrank(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GalleryrankError", m.py().get_type::<GalleryrankError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("ORACLE_METHOD", galleryrank::engine::ORACLE_METHOD)?;
    m.add_class::<PyEmbeddingSet>()?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(ap_from_relevance, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_ap, m)?)?;
    m.add_function(wrap_pyfunction!(rank, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_random_map, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(sample_random, m)?)?;
    m.add_function(wrap_pyfunction!(sample_kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(split_reference_gallery, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_config, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(compare_variants, m)?)?;
    m.add_function(wrap_pyfunction!(render_table, m)?)?;
    Ok(())
}
