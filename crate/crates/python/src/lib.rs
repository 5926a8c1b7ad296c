//! Python bindings. Reports come back as JSON strings.
#![allow(clippy::useless_conversion)]

use std::path::{Path, PathBuf};

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use ldsel::config::Config;
use ldsel::corpus::{load_corpus, Lexicon, LinkingInstance};
use ldsel::eval::{build_report, reports_to_jsonl};
use ldsel::kb::KnowledgeBase;
use ldsel::params::ModelParams;
use ldsel::pipeline::{prepare, run_documents, train_all, train_stage, Stage};
use ldsel::synth::{gen_corpus, gen_kb, split};

create_exception!(pyldsel, LdselError, PyException);
create_exception!(pyldsel, GuardError, LdselError);

fn err(e: ldsel::Error) -> PyErr {
    match e {
        ldsel::Error::Config(m) => PyValueError::new_err(m),
        ldsel::Error::Guard(m) => GuardError::new_err(m),
        other => LdselError::new_err(other.to_string()),
    }
}

fn config(seed: u64, path: Option<PathBuf>) -> PyResult<Config> {
    let cfg = match path {
        Some(p) => Config::read(p).map_err(err)?,
        None => Config::default(),
    }
    .with_seed(seed);
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

fn load(dir: &Path, split: &str, cfg: &Config) -> PyResult<(KnowledgeBase, Vec<LinkingInstance>)> {
    if !["train", "dev", "test"].contains(&split) {
        return Err(PyValueError::new_err(format!("unknown split {split:?}")));
    }
    let kb = KnowledgeBase::load(dir.join("kb")).map_err(err)?;
    let lexicon = Lexicon::load(dir.join("lexicon.jsonl")).map_err(err)?;
    let docs = load_corpus(dir.join(format!("{split}.jsonl"))).map_err(err)?;
    let inst = prepare(&docs, &kb, &lexicon, cfg.candidates).map_err(err)?;
    Ok((kb, inst))
}

/// Levenshtein distance with unit costs.
#[pyfunction]
fn min_edit(a: &str, b: &str) -> usize {
    ldsel::feat::min_edit(a, b)
}

#[pyfunction]
fn softmax(v: Vec<f64>) -> PyResult<Vec<f64>> {
    if v.is_empty() {
        return Err(PyValueError::new_err("softmax of an empty vector"));
    }
    Ok(ldsel::nn::softmax(&v))
}

/// Largest softmax probability of a mention's local scores.
#[pyfunction]
fn h1(scores: Vec<f64>) -> PyResult<f64> {
    if scores.is_empty() {
        return Err(PyValueError::new_err("h1 needs at least one score"));
    }
    Ok(ldsel::heuristics::h1(&scores))
}

/// Writes `kb/`, `lexicon.jsonl` and the three corpus splits under `out`.
/// Returns the train/dev/test document counts.
#[pyfunction]
#[pyo3(signature = (out, seed=0, documents=None, config=None))]
fn synth(
    out: PathBuf,
    seed: u64,
    documents: Option<usize>,
    config: Option<PathBuf>,
) -> PyResult<(usize, usize, usize)> {
    let mut cfg = self::config(seed, config)?;
    if let Some(d) = documents {
        cfg.synth.documents = d;
    }
    cfg.synth.validate().map_err(err)?;
    let world = gen_kb(&cfg.synth).map_err(err)?;
    let docs = gen_corpus(&cfg.synth, &world.kb).map_err(err)?;
    let (train, dev, test) = split(&docs);
    world.kb.save(out.join("kb")).map_err(err)?;
    world.lexicon.save(out.join("lexicon.jsonl")).map_err(err)?;
    for (name, part) in [("train", &train), ("dev", &dev), ("test", &test)] {
        ldsel::corpus::save_corpus(part, out.join(format!("{name}.jsonl"))).map_err(err)?;
    }
    Ok((train.len(), dev.len(), test.len()))
}

/// Trains one stage (or "all") on the train split and saves the
/// parameter file. Returns the trained stage names.
#[pyfunction]
#[pyo3(signature = (data, params, stage="all", seed=0, config=None))]
fn train(
    py: Python<'_>,
    data: PathBuf,
    params: PathBuf,
    stage: &str,
    seed: u64,
    config: Option<PathBuf>,
) -> PyResult<Vec<String>> {
    let cfg = self::config(seed, config)?;
    let (kb, inst) = load(&data, "train", &cfg)?;
    let mut p = if stage == "all" || !params.exists() {
        ModelParams::new(kb.dim())
    } else {
        ModelParams::load(&params).map_err(err)?
    };
    let reports = py
        .allow_threads(|| {
            if stage == "all" {
                train_all(&mut p, &inst, &kb, &cfg)
            } else {
                let st: Stage = stage.parse()?;
                train_stage(st, &mut p, &inst, &kb, &cfg).map(|r| vec![r])
            }
        })
        .map_err(err)?;
    p.save(&params).map_err(err)?;
    Ok(reports
        .iter()
        .filter_map(|r| r.stage.map(|s| s.to_string()))
        .collect())
}

/// Predicted entity per linkable mention:
/// `(document id, mention index, lds entity, local entity)`.
#[pyfunction]
#[pyo3(signature = (data, params, split="test", seed=0, config=None))]
fn link(
    py: Python<'_>,
    data: PathBuf,
    params: PathBuf,
    split: &str,
    seed: u64,
    config: Option<PathBuf>,
) -> PyResult<Vec<(String, usize, u32, u32)>> {
    let cfg = self::config(seed, config)?;
    let p = ModelParams::load(&params).map_err(err)?;
    let (kb, inst) = load(&data, split, &cfg)?;
    let runs = py
        .allow_threads(|| run_documents(&inst, &kb, &p, &cfg, &[]))
        .map_err(err)?;
    let mut out = Vec::new();
    for run in &runs {
        for (pos, &m) in run.mentions.iter().enumerate() {
            let b = &run.baselines;
            out.push((
                run.id.clone(),
                m,
                run.entity(pos, b.lds[pos]),
                run.entity(pos, b.local[pos]),
            ));
        }
    }
    Ok(out)
}

/// Evaluation report for one split, as a JSON object string.
#[pyfunction]
#[pyo3(signature = (data, params, split="test", seed=0, config=None))]
fn evaluate(
    py: Python<'_>,
    data: PathBuf,
    params: PathBuf,
    split: &str,
    seed: u64,
    config: Option<PathBuf>,
) -> PyResult<String> {
    let cfg = self::config(seed, config)?;
    let p = ModelParams::load(&params).map_err(err)?;
    let (kb, inst) = load(&data, split, &cfg)?;
    let runs = py
        .allow_threads(|| run_documents(&inst, &kb, &p, &cfg, &[]))
        .map_err(err)?;
    let search = serde_json::to_value(cfg.search_config())
        .map_err(|e| LdselError::new_err(e.to_string()))?;
    let report = build_report(
        split,
        &runs,
        cfg.eval.h1_fraction,
        cfg.eval.rarity_bins,
        search,
    )
    .map_err(err)?;
    let line = reports_to_jsonl(std::slice::from_ref(&report)).map_err(err)?;
    Ok(line.trim_end().to_string())
}

/// Tiny-instance oracle suite; returns its report as a JSON string.
#[pyfunction]
#[pyo3(signature = (instances=50, samples=100, seed=0))]
fn oracle_check(instances: usize, samples: usize, seed: u64) -> PyResult<String> {
    let r = ldsel::oracle::tiny_instance_suite(instances, samples, seed).map_err(err)?;
    serde_json::to_string(&r).map_err(|e| LdselError::new_err(e.to_string()))
}

#[pymodule]
fn pyldsel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LdselError", m.py().get_type_bound::<LdselError>())?;
    m.add("GuardError", m.py().get_type_bound::<GuardError>())?;
    m.add_function(wrap_pyfunction!(min_edit, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(h1, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(link, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    Ok(())
}
