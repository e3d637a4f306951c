use std::fmt::Write as _;

use serde::Serialize;

use super::config::{LoadedConfig, Reference, RunConfig, Seeds};
use super::output::{describe_report, sweep_csv};
use super::{CliError, Command, Options};
use crate::channel;
use crate::model::{KeyRateReport, MeasuredStats, ProtocolFamily};
use crate::montecarlo::{self, StateLabel, Tally, DETECTOR_MODEL};
use crate::planner::{self, GridSpec, OptimizeOutcome, SweepPoint};
use crate::security;

/// Text for stdout plus the payload destined for `--out`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutput {
    pub summary: String,
    pub payload: String,
    /// Provenance record written next to CSV payloads.
    pub sidecar: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct ToolInfo {
    name: &'static str,
    version: &'static str,
}

const TOOL: ToolInfo = ToolInfo {
    name: env!("CARGO_PKG_NAME"),
    version: env!("CARGO_PKG_VERSION"),
};

#[derive(Debug, Clone, Serialize)]
struct ReferenceCheck {
    #[serde(rename = "reference_rate_R")]
    reference_rate: f64,
    #[serde(rename = "computed_rate_R")]
    computed_rate: f64,
    rel_difference: f64,
    rel_tolerance: f64,
    within_tolerance: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

fn check_reference(reference: &Reference, report: &mut KeyRateReport) -> ReferenceCheck {
    let rel_difference = ((report.rate_lower - reference.rate) / reference.rate).abs();
    let within_tolerance = rel_difference <= reference.rel_tolerance;
    let source = reference.source.as_deref().map(|s| format!(" ({s})")).unwrap_or_default();
    let note = if within_tolerance {
        format!(
            "reference rate_R {:.4e}{source} agrees with the computed {:.4e} (relative difference {:.3})",
            reference.rate, report.rate_lower, rel_difference
        )
    } else {
        format!(
            "DISCREPANCY: reference rate_R {:.4e}{source} is not reproduced; computed {:.4e} from the given \
             inputs (relative difference {:.3} exceeds tolerance {})",
            reference.rate, report.rate_lower, rel_difference, reference.rel_tolerance
        )
    };
    report.notes.push(note);
    ReferenceCheck {
        reference_rate: reference.rate,
        computed_rate: report.rate_lower,
        rel_difference,
        rel_tolerance: reference.rel_tolerance,
        within_tolerance,
        source: reference.source.clone(),
    }
}

#[derive(Serialize)]
struct AnalyzeRecord<'a> {
    tool: ToolInfo,
    command: &'static str,
    config_sha256: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    distance_km: Option<f64>,
    report: KeyRateReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<ReferenceCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<&'a str>,
}

#[derive(Serialize)]
struct OptimizeRecord<'a> {
    tool: ToolInfo,
    command: &'static str,
    config_sha256: &'a str,
    grid: GridSpec,
    outcome: OptimizeOutcome,
    report: KeyRateReport,
}

#[derive(Serialize)]
struct SweepFamilySummary {
    family: ProtocolFamily,
    points: usize,
    /// Largest swept distance with a secure optimized rate.
    last_secure_distance_km: Option<f64>,
}

#[derive(Serialize)]
struct SweepRecord<'a> {
    tool: ToolInfo,
    command: &'static str,
    config_sha256: &'a str,
    grid: GridSpec,
    families: Vec<SweepFamilySummary>,
    ripple_warnings: Vec<String>,
}

#[derive(Serialize)]
struct MonteCarloRecord<'a> {
    tool: ToolInfo,
    command: &'static str,
    config_sha256: &'a str,
    seeds: Seeds,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed_override: Option<u64>,
    detector_model: &'static str,
    distance_km: f64,
    eta: f64,
    tally: Tally,
    zero_event_qber: Vec<StateLabel>,
    stats: MeasuredStats,
    report: KeyRateReport,
    #[serde(rename = "analytic_rate_R")]
    analytic_rate: f64,
    rel_difference_to_analytic: f64,
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("records serialize");
    text.push('\n');
    text
}

fn distance(config: &RunConfig, command: Command) -> Result<f64, CliError> {
    config
        .distance_km
        .ok_or_else(|| CliError::Config(format!("{} needs `distance_km`", command.name())))
}

/// Runs `command` on an already loaded config. Uses a dedicated thread
/// pool when `options.threads > 0`.
pub fn execute(command: Command, loaded: &LoadedConfig, options: &Options) -> Result<CommandOutput, CliError> {
    if options.seed_override.is_some() && command != Command::Montecarlo {
        log::warn!("--seed-override has no effect on {}", command.name());
    }
    let run = || match command {
        Command::Analyze => analyze(loaded),
        Command::Optimize => optimize(loaded),
        Command::Sweep => sweep(loaded),
        Command::Montecarlo => monte_carlo(loaded, options.seed_override),
    };
    if options.threads == 0 {
        return run();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} threads: {e}", options.threads)))?;
    pool.install(run)
}

fn analyze(loaded: &LoadedConfig) -> Result<CommandOutput, CliError> {
    let c = &loaded.config;
    let mut report = if c.protocol.family == ProtocolFamily::InfiniteDecoy {
        let d = distance(c, Command::Analyze)?;
        planner::report_at(&c.setup, d, &c.protocol, &c.plan)?
    } else {
        let stats = c
            .stats
            .as_ref()
            .ok_or_else(|| CliError::Config("analyze needs a `stats` block".into()))?;
        security::analyze(&c.setup, &c.protocol, &c.plan, stats)?
    };
    let reference = c.reference.as_ref().map(|r| check_reference(r, &mut report));
    let summary = describe_report(&report);
    let record = AnalyzeRecord {
        tool: TOOL,
        command: "analyze",
        config_sha256: &loaded.sha256,
        distance_km: c.distance_km,
        report,
        reference,
        note: c.note.as_deref(),
    };
    Ok(CommandOutput {
        summary,
        payload: to_json(&record),
        sidecar: None,
    })
}

fn optimize(loaded: &LoadedConfig) -> Result<CommandOutput, CliError> {
    let c = &loaded.config;
    let d = distance(c, Command::Optimize)?;
    let grid = c.grid.unwrap_or_default();
    let outcome = planner::optimize(&c.setup, d, c.protocol.family, &c.plan, &grid)?;
    let report = planner::report_at(&c.setup, d, &outcome.protocol, &c.plan)?;
    let mut summary = format!("optimum at {d} km\n");
    for stage in &outcome.stages {
        let _ = writeln!(
            summary,
            "stage {}  step {}/{}  points {}  tied {}  best R {:.6e}",
            stage.stage,
            stage.intensity_step,
            stage.fraction_step,
            stage.points_evaluated,
            stage.points_tied_at_best,
            stage.best_rate
        );
    }
    summary.push_str(&describe_report(&report));
    let record = OptimizeRecord {
        tool: TOOL,
        command: "optimize",
        config_sha256: &loaded.sha256,
        grid,
        outcome,
        report,
    };
    Ok(CommandOutput {
        summary,
        payload: to_json(&record),
        sidecar: None,
    })
}

fn sweep(loaded: &LoadedConfig) -> Result<CommandOutput, CliError> {
    let c = &loaded.config;
    let block = c
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep needs a `sweep` block".into()))?;
    let grid = c.grid.unwrap_or_default();
    let mut points: Vec<SweepPoint> = Vec::new();
    let mut families = Vec::new();
    let mut summary = String::new();
    for &family in &block.families {
        let curve = planner::sweep(&c.setup, family, &c.plan, block.d_start, block.d_end, block.d_step, &grid)?;
        let last = curve.iter().filter(|p| p.secure).map(|p| p.distance_km).next_back();
        let _ = writeln!(
            summary,
            "{family:<15} {} points, last secure distance {}",
            curve.len(),
            last.map_or_else(|| "none".to_string(), |d| format!("{d} km"))
        );
        families.push(SweepFamilySummary {
            family,
            points: curve.len(),
            last_secure_distance_km: last,
        });
        points.extend(curve);
    }
    let ripple_warnings = planner::ripple_warnings(&points);
    for w in &ripple_warnings {
        let _ = writeln!(summary, "warning: {w}");
    }
    let record = SweepRecord {
        tool: TOOL,
        command: "sweep",
        config_sha256: &loaded.sha256,
        grid,
        families,
        ripple_warnings,
    };
    Ok(CommandOutput {
        summary,
        payload: sweep_csv(&points),
        sidecar: Some(to_json(&record)),
    })
}

fn monte_carlo(loaded: &LoadedConfig, seed_override: Option<u64>) -> Result<CommandOutput, CliError> {
    let c = &loaded.config;
    let d = distance(c, Command::Montecarlo)?;
    if c.protocol.family == ProtocolFamily::InfiniteDecoy {
        return Err(CliError::Config("montecarlo needs a finite protocol family".into()));
    }
    let seeds = match (seed_override, c.seeds) {
        (Some(s), _) => Seeds {
            schedule: s,
            session: s.wrapping_add(1),
        },
        (None, Some(seeds)) => seeds,
        (None, None) => return Err(CliError::Config("montecarlo needs a `seeds` block".into())),
    };
    let point = channel::transmittance(&c.setup, d)?;
    let schedule = montecarlo::generate_schedule(&c.plan, &c.protocol, seeds.schedule)?;
    let events = montecarlo::simulate_session(&c.setup, &point, &schedule, seeds.session)?;
    let acc = montecarlo::accumulate(&schedule, &events)?;
    drop(events);
    drop(schedule);

    let mut report = security::analyze(&c.setup, &c.protocol, &c.plan, &acc.stats)?;
    for state in &acc.zero_event_qber {
        report.notes.push(format!(
            "no basis-matched {state:?} clicks; QBER filled with 0.5"
        ));
    }
    let analytic = planner::report_at(&c.setup, d, &c.protocol, &c.plan)?;
    let rel_difference = ((report.rate_lower - analytic.rate_lower) / analytic.rate_lower).abs();

    let mut summary = format!(
        "simulated {} pulses at {d} km (seeds {} / {})\n",
        acc.tally.total_pulses(),
        seeds.schedule,
        seeds.session
    );
    summary.push_str(&describe_report(&report));
    let _ = writeln!(
        summary,
        "analytic R      {:.6e} (relative difference {:.3})",
        analytic.rate_lower, rel_difference
    );
    let record = MonteCarloRecord {
        tool: TOOL,
        command: "montecarlo",
        config_sha256: &loaded.sha256,
        seeds,
        seed_override,
        detector_model: DETECTOR_MODEL,
        distance_km: d,
        eta: point.eta,
        tally: acc.tally,
        zero_event_qber: acc.zero_event_qber,
        stats: acc.stats,
        report,
        analytic_rate: analytic.rate_lower,
        rel_difference_to_analytic: rel_difference,
    };
    Ok(CommandOutput {
        summary,
        payload: to_json(&record),
        sidecar: None,
    })
}
