//! `ape`: run layered evaluations from the command line.
//!
//! Subcommands wrap the pipeline commands in `ape-core`: `run` executes the
//! enabled layers over the configured datasets, `consistency` reruns cases,
//! `gate` applies gate policies to a score file, `drift` checks KPI trends,
//! `triage` maps symptoms to layers, `dataset validate` lints dataset files,
//! and `baseline` manages regression baselines.
//!
//! Exit codes: 0 success, 1 quality gate failed, 2 usage or config error,
//! 3 infrastructure error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ape_core::pipeline::{
    cmd_baseline_compare, cmd_baseline_set, cmd_consistency, cmd_drift, cmd_gate, cmd_run,
    ConsistencyRunReport, DriftReport, GateCommandReport, PipelineConfig, PipelineError,
    RunOptions, RunReport,
};
use ape_core::regression::{triage, ChangeEvent, DriftOutcome, Symptom};
use ape_core::model::{load_dataset, validate_dataset};

#[derive(Parser)]
#[command(name = "ape", version, about = "Layered evaluation pipeline for prompts and agents")]
struct Cli {
    /// Pipeline config file; falls back to the APE_CONFIG environment variable.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the configured worker count.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Override the configured seed for scripted adapters.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Write the JSON report to this path.
    #[arg(long, global = true, value_name = "PATH")]
    report: Option<PathBuf>,

    /// Restrict which layers run, comma separated (e.g. 0,1,2).
    #[arg(long, global = true, value_name = "LAYERS", value_delimiter = ',')]
    layers: Option<Vec<u8>>,

    /// Pin the clock to an RFC 3339 instant for reproducible reports.
    #[arg(long, global = true, value_name = "TIMESTAMP")]
    now: Option<String>,

    /// Keep evaluating higher layers after a blocking layer-0 failure.
    #[arg(long, global = true)]
    continue_on_layer_failure: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the configured datasets and scenario suites.
    Run {
        /// Change event that triggered this run.
        #[arg(long, value_enum)]
        trigger: Option<TriggerKind>,
        /// New model version (with --trigger model-version-change).
        #[arg(long, value_name = "VERSION")]
        new_model: Option<String>,
        /// Prompt that changed or failed (with prompt-update / production-incident).
        #[arg(long, value_name = "ID")]
        prompt_id: Option<String>,
        /// Observed symptom (with --trigger production-incident).
        #[arg(long, value_name = "SYMPTOM")]
        symptom: Option<String>,
        /// Only run these dataset ids (repeatable).
        #[arg(long = "dataset", value_name = "ID")]
        datasets: Vec<String>,
    },
    /// Rerun cases and classify their pass rates as consistent or flaky.
    Consistency {
        /// Only rerun these case ids (repeatable; default: every case).
        #[arg(long = "case", value_name = "ID")]
        cases: Vec<String>,
        /// Runs per case (default: consistency_runs from the config).
        #[arg(long, value_name = "N")]
        runs: Option<usize>,
    },
    /// Apply the gate policies to a JSON file of scores.
    Gate {
        /// Score file with a "dimensions" and/or "rag" section.
        scores: PathBuf,
    },
    /// Check recorded KPI trends for gradual decline.
    Drift {
        /// Only check these dataset ids (repeatable).
        #[arg(long = "dataset", value_name = "ID")]
        datasets: Vec<String>,
        /// Only check this KPI.
        #[arg(long, value_name = "NAME")]
        kpi: Option<String>,
    },
    /// Map a production symptom to the layer to check first.
    Triage {
        /// Symptom token, e.g. wrong-tool-parameters. Pass "list" to see all.
        symptom: String,
    },
    /// Dataset file utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Manage regression baselines.
    Baseline {
        #[command(subcommand)]
        command: BaselineCommand,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Parse and lint dataset files.
    Validate {
        /// Dataset files to check.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BaselineCommand {
    /// Run the pipeline and, if it passes, record the runs as baselines.
    Set,
    /// Run the pipeline and fail on regression against the active baselines.
    Compare,
}

#[derive(Clone, Copy, ValueEnum)]
enum TriggerKind {
    ScheduledDaily,
    ModelVersionChange,
    PromptUpdate,
    ProductionIncident,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(error) => {
            eprintln!("ape: {error}");
            ExitCode::from(error.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, PipelineError> {
    match &cli.command {
        Command::Run {
            trigger,
            new_model,
            prompt_id,
            symptom,
            datasets,
        } => {
            let config = load_config(&cli)?;
            let mut opts = run_options(&cli)?;
            opts.trigger = build_trigger(*trigger, new_model, prompt_id, symptom)?;
            if !datasets.is_empty() {
                opts.dataset_ids = Some(datasets.clone());
            }
            let report = cmd_run(&config, &opts)?;
            write_report(cli.report.as_deref(), &report)?;
            print_run_summary(&report);
            Ok(report.exit_code)
        }
        Command::Consistency { cases, runs } => {
            let config = load_config(&cli)?;
            let n = runs.unwrap_or(config.consistency_runs);
            let selection = (!cases.is_empty()).then_some(cases.as_slice());
            let report = cmd_consistency(&config, selection, n)?;
            write_report(cli.report.as_deref(), &report)?;
            print_consistency_summary(&report);
            Ok(report.exit_code)
        }
        Command::Gate { scores } => {
            let config = match resolve_config_path(&cli) {
                Some(path) => Some(PipelineConfig::load(&path)?),
                None => None,
            };
            let report = cmd_gate(config.as_ref(), scores)?;
            write_report(cli.report.as_deref(), &report)?;
            print_gate_summary(&report);
            Ok(report.exit_code)
        }
        Command::Drift { datasets, kpi } => {
            let mut config = load_config(&cli)?;
            if let Some(kpi) = kpi {
                config.drift.kpi = Some(kpi.clone());
            }
            let selection = (!datasets.is_empty()).then_some(datasets.as_slice());
            let report = cmd_drift(&config, selection)?;
            write_report(cli.report.as_deref(), &report)?;
            print_drift_summary(&report);
            Ok(report.exit_code)
        }
        Command::Triage { symptom } => {
            if symptom == "list" {
                for s in Symptom::ALL {
                    println!("{s}");
                }
                return Ok(0);
            }
            let symptom = Symptom::parse(symptom).ok_or_else(|| {
                PipelineError::Config(format!(
                    "unknown symptom {symptom:?}; run `ape triage list` to see the vocabulary"
                ))
            })?;
            let advice = triage(symptom);
            println!("symptom:      {}", advice.symptom);
            println!("layer:        {}", advice.layer);
            println!("check first:  {}", advice.check_first);
            println!("likely cause: {}", advice.likely_cause);
            Ok(0)
        }
        Command::Dataset {
            command: DatasetCommand::Validate { paths },
        } => {
            let mut failed = false;
            for path in paths {
                match load_dataset(path) {
                    Ok(dataset) => {
                        let violations = validate_dataset(&dataset);
                        if violations.is_empty() {
                            println!(
                                "{}: ok ({} cases, dataset {})",
                                path.display(),
                                dataset.cases.len(),
                                dataset.dataset_id
                            );
                        } else {
                            failed = true;
                            println!("{}: INVALID", path.display());
                            for violation in violations {
                                println!("  - {violation}");
                            }
                        }
                    }
                    Err(error) => {
                        failed = true;
                        println!("{}: INVALID", path.display());
                        println!("  - {error}");
                    }
                }
            }
            Ok(if failed { 2 } else { 0 })
        }
        Command::Baseline { command } => {
            let config = load_config(&cli)?;
            let opts = run_options(&cli)?;
            let report = match command {
                BaselineCommand::Set => cmd_baseline_set(&config, &opts)?,
                BaselineCommand::Compare => cmd_baseline_compare(&config, &opts)?,
            };
            write_report(cli.report.as_deref(), &report)?;
            print_run_summary(&report);
            if matches!(command, BaselineCommand::Set) {
                if report.exit_code == 0 {
                    println!("baselines updated");
                } else {
                    println!("run failed; baselines not updated");
                }
            }
            Ok(report.exit_code)
        }
    }
}

fn resolve_config_path(cli: &Cli) -> Option<PathBuf> {
    cli.config
        .clone()
        .or_else(|| std::env::var_os("APE_CONFIG").map(PathBuf::from))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let path = resolve_config_path(cli).ok_or_else(|| {
        PipelineError::Config("no config file: pass --config or set APE_CONFIG".into())
    })?;
    let mut config = PipelineConfig::load(&path)?;
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(layers) = &cli.layers {
        config.layers_enabled = layers.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run_options(cli: &Cli) -> Result<RunOptions, PipelineError> {
    let now = match &cli.now {
        Some(text) => DateTime::parse_from_rfc3339(text)
            .map_err(|e| PipelineError::Config(format!("bad --now value {text:?}: {e}")))?
            .with_timezone(&Utc),
        None => Utc::now(),
    };
    let mut opts = RunOptions::new(now);
    opts.continue_on_layer_failure = cli.continue_on_layer_failure;
    Ok(opts)
}

fn build_trigger(
    kind: Option<TriggerKind>,
    new_model: &Option<String>,
    prompt_id: &Option<String>,
    symptom: &Option<String>,
) -> Result<Option<ChangeEvent>, PipelineError> {
    let Some(kind) = kind else {
        return Ok(None);
    };
    let event = match kind {
        TriggerKind::ScheduledDaily => ChangeEvent::ScheduledDaily,
        TriggerKind::ModelVersionChange => ChangeEvent::ModelVersionChange {
            new_model: new_model.clone().ok_or_else(|| {
                PipelineError::Config("--trigger model-version-change needs --new-model".into())
            })?,
        },
        TriggerKind::PromptUpdate => ChangeEvent::PromptUpdate {
            prompt_id: prompt_id.clone().ok_or_else(|| {
                PipelineError::Config("--trigger prompt-update needs --prompt-id".into())
            })?,
        },
        TriggerKind::ProductionIncident => {
            let prompt_id = prompt_id.clone().ok_or_else(|| {
                PipelineError::Config("--trigger production-incident needs --prompt-id".into())
            })?;
            let token = symptom.as_ref().ok_or_else(|| {
                PipelineError::Config("--trigger production-incident needs --symptom".into())
            })?;
            let symptom = Symptom::parse(token).ok_or_else(|| {
                PipelineError::Config(format!(
                    "unknown symptom {token:?}; run `ape triage list` to see the vocabulary"
                ))
            })?;
            ChangeEvent::ProductionIncident { prompt_id, symptom }
        }
    };
    Ok(Some(event))
}

fn write_report<T: Serialize>(path: Option<&Path>, report: &T) -> Result<(), PipelineError> {
    let Some(path) = path else {
        return Ok(());
    };
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| PipelineError::Config(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| PipelineError::Infra(format!("cannot write {}: {e}", path.display())))
}

fn print_run_summary(report: &RunReport) {
    let layers: Vec<String> = report.layers_enabled.iter().map(u8::to_string).collect();
    println!(
        "{}: model {}, config {}, layers {}{}",
        report.command,
        report.model_version,
        report.config_fingerprint,
        layers.join(","),
        if report.blocking { "" } else { " (non-blocking)" }
    );
    for dataset in &report.datasets {
        let verdict = if dataset.passed { "pass" } else { "FAIL" };
        let mut notes = Vec::new();
        if dataset.short_circuited {
            notes.push("stopped at layer 0".to_string());
        }
        if let Some(record) = &dataset.record {
            notes.push(format!("{} cases", record.cases.len()));
            let failing: Vec<&str> = record
                .cases
                .iter()
                .filter(|case| case.gate.as_ref().is_some_and(|gate| !gate.final_pass))
                .map(|case| case.case_id.as_str())
                .collect();
            if !failing.is_empty() {
                notes.push(format!("failing: {}", failing.join(", ")));
            }
        }
        if let Some(thresholds) = &dataset.thresholds {
            if !thresholds.pass {
                for breach in &thresholds.breaches {
                    notes.push(format!(
                        "{} {} < {}",
                        breach.dimension, breach.aggregate, breach.threshold
                    ));
                }
            }
        }
        if let Some(regression) = &dataset.regression {
            notes.push(if regression.regressed {
                "regressed".to_string()
            } else {
                "no regression".to_string()
            });
        }
        let suffix = if notes.is_empty() {
            String::new()
        } else {
            format!(" ({})", notes.join("; "))
        };
        println!("dataset {}: {verdict}{suffix}", dataset.dataset_id);
        for set in &dataset.layers {
            let kpis: Vec<String> = set
                .values
                .iter()
                .map(|(name, value)| format!("{name}={value}"))
                .collect();
            println!("  layer {}: {}", set.layer, kpis.join(", "));
        }
    }
    if let Some(rag) = &report.rag {
        let verdict = if rag.deploy_approved {
            "approved"
        } else {
            "BLOCKED"
        };
        println!("rag: {verdict}");
        for sample in &rag.samples {
            println!("  {}: {}", sample.sample_id, sample.diagnosis_description);
        }
    }
    if let Some(suites) = &report.suites {
        println!("suites: {}", if suites.passed { "pass" } else { "FAIL" });
        for set in &suites.layers {
            let kpis: Vec<String> = set
                .values
                .iter()
                .map(|(name, value)| format!("{name}={value}"))
                .collect();
            println!("  layer {}: {}", set.layer, kpis.join(", "));
        }
    }
    println!(
        "result: {} (exit {})",
        if report.gates_passed { "pass" } else { "fail" },
        report.exit_code
    );
}

fn print_consistency_summary(report: &ConsistencyRunReport) {
    println!("consistency: {} runs per case", report.n);
    for case in &report.cases {
        println!(
            "case {}: pass_rate {} -> {} (dataset {})",
            case.case_id, case.report.pass_rate, case.report.verdict, case.dataset_id
        );
    }
    println!(
        "result: {} (exit {})",
        if report.all_consistent {
            "consistent"
        } else {
            "inconsistent"
        },
        report.exit_code
    );
}

fn print_gate_summary(report: &GateCommandReport) {
    if let Some(gate) = &report.dimensions {
        println!(
            "dimensions: weighted {} mandatory {} -> {}",
            gate.weighted_score,
            if gate.mandatory_pass { "ok" } else { "FAIL" },
            if gate.final_pass { "pass" } else { "fail" }
        );
        if !gate.failed_gates.is_empty() {
            println!("  failed gates: {}", gate.failed_gates.join(", "));
        }
    }
    if let (Some(outcome), Some(description)) =
        (&report.rag_gates, &report.rag_diagnosis_description)
    {
        let verdict = if outcome.deploy_approved {
            "approved"
        } else {
            "BLOCKED"
        };
        println!("rag: {verdict}");
        for (metric, pass) in &outcome.gate_results {
            println!("  {metric}: {}", if *pass { "pass" } else { "fail" });
        }
        println!("  {description}");
    }
    println!(
        "result: {} (exit {})",
        if report.passed { "pass" } else { "fail" },
        report.exit_code
    );
}

fn print_drift_summary(report: &DriftReport) {
    for row in &report.rows {
        match &row.outcome {
            DriftOutcome::Evaluated {
                flagged,
                decline,
                window_start,
                latest,
                points_in_window,
            } => {
                let pct = ape_core::round6(decline * 100.0);
                println!(
                    "{}/{}: {} -> {} over {} points, decline {pct}%{}",
                    row.dataset_id,
                    row.kpi,
                    window_start,
                    latest,
                    points_in_window,
                    if *flagged { " FLAGGED" } else { "" }
                );
            }
            DriftOutcome::InsufficientData { reason } => {
                println!("{}/{}: insufficient data ({reason})", row.dataset_id, row.kpi);
            }
        }
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    println!(
        "result: {} (exit {})",
        if report.flagged { "drift flagged" } else { "ok" },
        report.exit_code
    );
}
