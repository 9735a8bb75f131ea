//! Thin Python bindings: trial generation, experiments and checkpoint inspection.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ctxlearn::checkpoint::read_checkpoint;
use ctxlearn::harness::{
    run_compgen, run_continual, run_transfer_backward, run_transfer_forward, ExperimentConfig, LearnerKind,
};
use ctxlearn::taskgen::sample_trial_indexed;
use ctxlearn::{rng, Error};

fn py_err(e: Error) -> PyErr {
    let msg = format!("{} ({})", e, e.category());
    if e.category() == "config" {
        PyValueError::new_err(msg)
    } else {
        PyRuntimeError::new_err(msg)
    }
}

fn config(preset: &str, overrides: &str) -> PyResult<ExperimentConfig> {
    ExperimentConfig::from_toml_over(preset, overrides).map_err(py_err)
}

/// Names of the tasks in the suite, in id order.
#[pyfunction]
#[pyo3(signature = (preset = "desk"))]
fn task_names(preset: &str) -> PyResult<Vec<String>> {
    Ok(config(preset, "")?.suite().tasks.iter().map(|t| t.name.clone()).collect())
}

/// One trial as `(inputs, targets, epochs, trial_variable)`.
#[pyfunction]
#[pyo3(signature = (task, seed = 0, index = 0, preset = "desk"))]
#[allow(clippy::type_complexity)]
fn generate_trial(
    task: &str,
    seed: u64,
    index: u64,
    preset: &str,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<usize>, usize)> {
    let cfg = config(preset, "")?;
    let suite = cfg.suite();
    let c = suite.task_by_name(task).map_err(py_err)?.id;
    let tr = sample_trial_indexed(&suite, c, &cfg.gen, seed, rng::stream::TRAIN_TRIALS, index).map_err(py_err)?;
    Ok((
        tr.s.iter().map(|v| v.to_vec()).collect(),
        tr.y.iter().map(|v| v.to_vec()).collect(),
        tr.z_true,
        tr.x_true,
    ))
}

/// Runs an experiment and returns the metrics log as CSV text.
///
/// `which` is one of continual, transfer_fwd, transfer_bwd, compgen. `overrides`
/// is a TOML document merged over the preset.
#[pyfunction]
#[pyo3(signature = (which, learner = "context_rnn", preset = "smoke", overrides = "", seed = None))]
fn run_experiment(
    py: Python<'_>,
    which: &str,
    learner: &str,
    preset: &str,
    overrides: &str,
    seed: Option<u64>,
) -> PyResult<String> {
    let mut cfg = config(preset, overrides)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let kind = LearnerKind::parse(learner).map_err(py_err)?;
    let which = which.to_string();
    py.allow_threads(move || {
        let mut log = ctxlearn::harness::MetricsLog::new();
        let runs = match which.as_str() {
            "continual" => vec![run_continual(&cfg, kind)],
            "transfer_fwd" => cfg.seeds.iter().map(|&s| run_transfer_forward(&cfg, kind, s)).collect(),
            "transfer_bwd" => cfg.seeds.iter().map(|&s| run_transfer_backward(&cfg, kind, s)).collect(),
            "compgen" => cfg.seeds.iter().map(|&s| run_compgen(&cfg, s)).collect(),
            other => return Err(Error::Config(format!("unknown experiment {other:?}"))),
        };
        for run in runs {
            let (l, _) = run.into_result()?;
            log.extend(l)?;
        }
        log.to_csv_string()
    })
    .map_err(py_err)
}

/// `(kind, summary)` of a checkpoint file.
#[pyfunction]
fn inspect_checkpoint(path: std::path::PathBuf) -> PyResult<(String, String)> {
    let ck = read_checkpoint(&path).map_err(py_err)?;
    Ok((ck.kind().to_string(), ck.summary()))
}

#[pymodule]
fn ctxlearn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(task_names, m)?)?;
    m.add_function(wrap_pyfunction!(generate_trial, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(inspect_checkpoint, m)?)?;
    Ok(())
}
