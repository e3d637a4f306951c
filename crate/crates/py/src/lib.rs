//! Python bindings. Structured values cross the boundary as JSON text using
//! the same field names as the command-line run configuration.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use decoy_qkd::cli::{self, CliError, Command, LoadedConfig, Options};
use decoy_qkd::model::{presets, MeasuredStats, ProtocolFamily, ProtocolSpec, SessionPlan, SetupParams};
use decoy_qkd::planner::{self, GridSpec};
use decoy_qkd::{channel, security, Error};

fn core_err(e: Error) -> PyErr {
    cli_err(CliError::from(e))
}

fn cli_err(e: CliError) -> PyErr {
    if e.exit_code() == 2 {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse<T: DeserializeOwned>(what: &str, text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn dump<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("records serialize")
}

fn family(name: &str) -> PyResult<ProtocolFamily> {
    parse("family", &dump(&name))
}

fn grid(text: Option<&str>) -> PyResult<GridSpec> {
    text.map_or_else(|| Ok(GridSpec::default()), |t| parse("grid", t))
}

fn command(name: &str) -> PyResult<Command> {
    match name {
        "analyze" => Ok(Command::Analyze),
        "optimize" => Ok(Command::Optimize),
        "sweep" => Ok(Command::Sweep),
        "montecarlo" => Ok(Command::Montecarlo),
        other => Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    }
}

/// The two built-in device setups as a JSON object keyed by name.
#[pyfunction]
fn setup_presets() -> String {
    let table = BTreeMap::from([
        ("one_decoy", presets::one_decoy_setup()),
        ("weak_vacuum", presets::weak_vacuum_setup()),
    ]);
    dump(&table)
}

/// Finite-size key-rate report for measured statistics.
#[pyfunction]
fn analyze(setup: &str, protocol: &str, plan: &str, stats: &str) -> PyResult<String> {
    let setup: SetupParams = parse("setup", setup)?;
    let protocol: ProtocolSpec = parse("protocol", protocol)?;
    let plan: SessionPlan = parse("plan", plan)?;
    let stats: MeasuredStats = parse("stats", stats)?;
    let report = security::analyze(&setup, &protocol, &plan, &stats).map_err(core_err)?;
    Ok(dump(&report))
}

/// Asymptotic rate with perfectly characterized single-photon pulses.
#[pyfunction]
fn infinite_decoy_rate(setup: &str, distance_km: f64, mu: f64) -> PyResult<f64> {
    let setup: SetupParams = parse("setup", setup)?;
    let setup = decoy_qkd::model::validate_setup(setup).map_err(core_err)?;
    let point = channel::transmittance(&setup, distance_km).map_err(core_err)?;
    security::infinite_decoy_rate(&setup, &point, mu).map_err(core_err)
}

/// Expected measurement record for a protocol at a distance.
#[pyfunction]
fn expected_stats(setup: &str, protocol: &str, distance_km: f64) -> PyResult<String> {
    let setup: SetupParams = parse("setup", setup)?;
    let protocol: ProtocolSpec = parse("protocol", protocol)?;
    let setup = decoy_qkd::model::validate_setup(setup).map_err(core_err)?;
    let protocol = decoy_qkd::model::validate_protocol(protocol).map_err(core_err)?;
    let point = channel::transmittance(&setup, distance_km).map_err(core_err)?;
    let stats = channel::expected_measured(&setup, &point, &protocol).map_err(core_err)?;
    Ok(dump(&stats))
}

/// Grid-search optimum of one protocol family at a distance.
#[pyfunction]
#[pyo3(signature = (setup, distance_km, family_name, plan, grid_spec=None))]
fn optimize(
    py: Python<'_>,
    setup: &str,
    distance_km: f64,
    family_name: &str,
    plan: &str,
    grid_spec: Option<&str>,
) -> PyResult<String> {
    let setup: SetupParams = parse("setup", setup)?;
    let plan: SessionPlan = parse("plan", plan)?;
    let family = family(family_name)?;
    let grid = grid(grid_spec)?;
    let outcome = py
        .detach(|| planner::optimize(&setup, distance_km, family, &plan, &grid))
        .map_err(core_err)?;
    Ok(dump(&outcome))
}

/// Largest distance (km) with a positive optimized rate.
#[pyfunction]
#[pyo3(signature = (setup, family_name, plan, grid_spec=None))]
fn max_secure_distance(
    py: Python<'_>,
    setup: &str,
    family_name: &str,
    plan: &str,
    grid_spec: Option<&str>,
) -> PyResult<f64> {
    let setup: SetupParams = parse("setup", setup)?;
    let plan: SessionPlan = parse("plan", plan)?;
    let family = family(family_name)?;
    let grid = grid(grid_spec)?;
    py.detach(|| planner::max_secure_distance(&setup, family, &plan, &grid))
        .map_err(core_err)
}

/// Runs a command-line subcommand on config text. Returns the human summary
/// and the machine-readable payload (JSON, or CSV for `sweep`).
#[pyfunction]
#[pyo3(signature = (command_name, config, threads=0, seed_override=None))]
fn run_command(
    py: Python<'_>,
    command_name: &str,
    config: &str,
    threads: usize,
    seed_override: Option<u64>,
) -> PyResult<(String, String)> {
    let command = command(command_name)?;
    let loaded = LoadedConfig::from_text(config).map_err(cli_err)?;
    let options = Options {
        out: None,
        threads,
        seed_override,
    };
    let output = py
        .detach(|| cli::execute(command, &loaded, &options))
        .map_err(cli_err)?;
    Ok((output.summary, output.payload))
}

#[pymodule]
fn decoy_qkd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(setup_presets, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(infinite_decoy_rate, m)?)?;
    m.add_function(wrap_pyfunction!(expected_stats, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(max_secure_distance, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    Ok(())
}
