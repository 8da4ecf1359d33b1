//! `repogen` — batch CLI for the document-to-repository pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use repogen_core::pipeline::{load_report, PipelineError};
use repogen_core::{resume, run_pipeline, PipelineConfig, RunReport};

#[derive(Parser)]
#[command(name = "repogen", about = "Synthesize a code repository from a technical document", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline from a config file.
    Run {
        /// Pipeline config (.toml or .json).
        #[arg(long)]
        config: PathBuf,
    },
    /// Continue an interrupted run from its last checkpoint.
    Resume {
        /// Workspace directory of the interrupted run.
        workspace: PathBuf,
    },
    /// Print the report of a finished run.
    Report {
        /// Workspace directory.
        workspace: PathBuf,
    },
}

const EXIT_CONFIG_ERROR: u8 = 4;
const EXIT_FAILURE: u8 = 1;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => run(&config),
        Command::Resume { workspace } => resume_run(&workspace),
        Command::Report { workspace } => report(&workspace),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e
                .downcast_ref::<PipelineError>()
                .map(|pe| {
                    matches!(
                        pe,
                        PipelineError::Config(_) | PipelineError::Locked(_)
                    )
                })
                .unwrap_or(false);
            if config_error {
                ExitCode::from(EXIT_CONFIG_ERROR)
            } else {
                ExitCode::from(EXIT_FAILURE)
            }
        }
    }
}

fn run(config_path: &Path) -> anyhow::Result<ExitCode> {
    let cfg = PipelineConfig::load(config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    let report = run_pipeline(cfg)?;
    print_report(&report);
    Ok(ExitCode::from(report.status.exit_code() as u8))
}

fn resume_run(workspace: &Path) -> anyhow::Result<ExitCode> {
    let report = resume(workspace)?;
    print_report(&report);
    Ok(ExitCode::from(report.status.exit_code() as u8))
}

fn report(workspace: &Path) -> anyhow::Result<ExitCode> {
    let report = load_report(workspace)
        .with_context(|| format!("no report in {}", workspace.display()))?;
    print_report(&report);
    Ok(ExitCode::from(report.status.exit_code() as u8))
}

fn print_report(report: &RunReport) {
    println!("status: {}", status_name(report));
    println!("phases: {}", report.completed_phases.join(" -> "));
    if !report.timings_secs.is_empty() {
        let rendered: Vec<String> = report
            .timings_secs
            .iter()
            .map(|(name, secs)| format!("{name} {secs:.2}s"))
            .collect();
        println!("timings: {}", rendered.join(", "));
    }
    println!(
        "usage: {} calls, {} tokens",
        report.usage.total_calls(),
        report.usage.total_tokens()
    );
    for (role, usage) in &report.usage.per_role {
        println!(
            "  {role}: {} calls, {} prompt + {} reply tokens",
            usage.calls, usage.prompt_tokens, usage.reply_tokens
        );
    }
    let inv = &report.invariants;
    println!("invariants:");
    println!("  index round-trip: {}", inv.index_round_trip);
    println!("  index coverage: {}", inv.index_coverage);
    println!("  blueprint valid: {}", inv.blueprint_valid);
    println!(
        "  generation: {} steps, max context {} / {} tokens, {} truncation(s)",
        inv.generation_steps, inv.max_context_tokens, inv.context_budget, inv.truncation_events
    );
    println!("  memory monotonic: {}", inv.memory_monotonic);
    println!("  dependency sound: {}", inv.dependency_sound);
    println!(
        "  rag: {} tuple(s), order valid: {}",
        inv.rag_tuples, inv.rag_order_valid
    );
    println!(
        "  patches: {} applied, locality ok: {}",
        inv.patches_applied, inv.patch_locality_ok
    );
    println!("  sandbox confined: {}", inv.audit_confined);
    if !report.warnings.is_empty() {
        println!("warnings ({}):", report.warnings.len());
        for warning in &report.warnings {
            println!("  - {warning}");
        }
    }
    println!("repo: {}", report.workspace.join("repo").display());
}

fn status_name(report: &RunReport) -> &'static str {
    match report.status {
        repogen_core::RunStatus::Clean => "clean",
        repogen_core::RunStatus::MaxIterations => "max-iterations",
        repogen_core::RunStatus::SetupFailed => "setup-failed",
        repogen_core::RunStatus::Partial => "partial",
    }
}
