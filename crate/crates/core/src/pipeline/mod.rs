//! The end-to-end pipeline: index → blueprint → generate → verify, with
//! checkpointed workspace state and resume.
//!
//! Each phase reads its inputs from artifacts persisted by earlier phases,
//! never from in-process carryover, so an interrupted run resumed from its
//! checkpoint walks exactly the same path as an uninterrupted one.

mod config;
mod state;

pub use config::{GatewaySettings, PipelineConfig, ProviderKind, ProviderSettings, RagSettings};
pub use state::{Phase, RunState, WorkspaceLock, STATE_FILE};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    run_algorithm_agent, run_concept_agent, synthesize_blueprint, AgentError,
};
use crate::blueprint::{validate_blueprint, Blueprint};
use crate::codemem::{run_generation, CodememError};
use crate::coderag::{self, RagError, RagIndex};
use crate::doc_index::{build_index, parse_document, ContentIndex, DocFormat, DocIndexError};
use crate::gateway::{
    GatewayError, GatewayMode, HttpProvider, LlmGateway, Provider, ScriptedProvider, UsageReport,
};
use crate::paths::{normalize_line_endings, PathError};
use crate::templates::TemplateSet;
use crate::verify::{
    audit_is_confined, check_locality, read_audit_log, refine_loop, refine_static, static_analyze,
    IterationRecord, LoopStatus, ProcessSandbox, SetupOutcome, VerifyError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("workspace `{0}` is locked by another run (remove .lock if stale)")]
    Locked(PathBuf),
    #[error("artifact digest mismatch: {artifact} (workspace tampered or incomplete)")]
    DigestMismatch { artifact: String },
    #[error("index phase: {0}")]
    Index(#[from] DocIndexError),
    #[error("blueprint phase: {0}")]
    Agent(#[from] AgentError),
    #[error("generation phase: {0}")]
    Codemem(#[from] CodememError),
    #[error("rag indexing: {0}")]
    Rag(#[from] RagError),
    #[error("verification phase: {0}")]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Clean,
    MaxIterations,
    SetupFailed,
    /// Stopped at a checkpoint before verification completed.
    Partial,
}

impl RunStatus {
    /// Process exit code contract: 0 clean, 2 max-iterations, 3 setup-failed.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunStatus::Clean | RunStatus::Partial => 0,
            RunStatus::MaxIterations => 2,
            RunStatus::SetupFailed => 3,
        }
    }
}

/// Self-checks computed from the persisted artifacts.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct InvariantSummary {
    pub index_round_trip: bool,
    pub index_coverage: bool,
    pub blueprint_valid: bool,
    pub generation_steps: usize,
    pub memory_monotonic: bool,
    pub dependency_sound: bool,
    pub max_context_tokens: u64,
    pub context_budget: u64,
    pub truncation_events: usize,
    pub rag_tuples: usize,
    pub rag_order_valid: bool,
    pub patches_applied: usize,
    pub patch_locality_ok: bool,
    pub audit_confined: bool,
}

/// Final run report; serialized to `report.json` (timings live in a
/// separate non-deterministic sidecar).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub status: RunStatus,
    pub completed_phases: Vec<String>,
    pub artifacts: BTreeMap<String, String>,
    pub usage: UsageReport,
    pub invariants: InvariantSummary,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub timings_secs: Vec<(String, f64)>,
    #[serde(skip)]
    pub workspace: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GenerationStats {
    steps: usize,
    max_context_tokens: u64,
    truncation_events: usize,
    retrievals: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VerifyLog {
    status: LoopStatus,
    entry: Option<String>,
    structural_issues: usize,
    quality_scores: BTreeMap<String, f64>,
    issues_total: usize,
    fixed: Vec<String>,
    unfixable: Vec<String>,
    setup: Option<SetupOutcome>,
    iterations: Vec<IterationRecord>,
    executes: usize,
    patches_applied: usize,
    patch_locality_ok: bool,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Config(format!("corrupt artifact {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    let json = serde_json::to_string_pretty(value).expect("artifact serializes");
    std::fs::write(path, json).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn make_provider(cfg: &PipelineConfig) -> Result<Box<dyn Provider>, PipelineError> {
    match cfg.gateway.provider.kind {
        ProviderKind::Http => {
            let url = cfg.gateway.provider.url.clone().ok_or_else(|| {
                PipelineError::Config("http provider requires a url".into())
            })?;
            let model = cfg.gateway.provider.model.clone().ok_or_else(|| {
                PipelineError::Config("http provider requires a model".into())
            })?;
            let api_key = cfg
                .gateway
                .provider
                .api_key_env
                .as_ref()
                .and_then(|var| std::env::var(var).ok());
            Ok(Box::new(HttpProvider::new(url, model, api_key)))
        }
        ProviderKind::Scripted => {
            let playbook = cfg.gateway.provider.playbook.clone().ok_or_else(|| {
                PipelineError::Config("scripted provider requires a playbook".into())
            })?;
            Ok(Box::new(ScriptedProvider::from_file(&playbook)?))
        }
    }
}

fn make_gateway(cfg: &PipelineConfig, session: &str) -> Result<LlmGateway, PipelineError> {
    let tokenizer = cfg.tokenizer.build();
    let budgets = cfg.gateway.budgets.clone();
    match cfg.gateway.mode {
        GatewayMode::Replay => {
            let path = cfg.transcript_source().join(format!("{session}.jsonl"));
            Ok(LlmGateway::replay(path, budgets, tokenizer)?)
        }
        GatewayMode::Record => {
            let path = cfg
                .workspace
                .join("transcripts")
                .join(format!("{session}.jsonl"));
            if path.exists() {
                std::fs::remove_file(&path).map_err(|source| PipelineError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
            Ok(LlmGateway::record(
                make_provider(cfg)?,
                path,
                budgets,
                cfg.gateway.backoff.clone(),
                tokenizer,
            ))
        }
        GatewayMode::Live => Ok(LlmGateway::live(
            make_provider(cfg)?,
            budgets,
            cfg.gateway.backoff.clone(),
            tokenizer,
        )),
    }
}

fn resolve_format(cfg: &PipelineConfig) -> Result<DocFormat, PipelineError> {
    let name = match &cfg.format {
        Some(explicit) => explicit.clone(),
        None => cfg
            .input
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("markdown")
            .to_string(),
    };
    Ok(DocFormat::from_name(&name)?)
}

fn clear_dir(path: &Path) -> Result<(), PipelineError> {
    if path.exists() {
        std::fs::remove_dir_all(path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

fn phase_index(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let raw = std::fs::read_to_string(&cfg.input).map_err(|source| PipelineError::Io {
        path: cfg.input.display().to_string(),
        source,
    })?;
    let format = resolve_format(cfg)?;
    let mut doc = parse_document(&raw, format)?;
    doc.origin = Some(cfg.input.clone());
    let index = build_index(&doc);
    clear_dir(&cfg.workspace.join("index"))?;
    write_json(&cfg.workspace.join("index/index.json"), &index)
}

fn phase_blueprint(
    cfg: &PipelineConfig,
    templates: &TemplateSet,
    state: &mut RunState,
) -> Result<(), PipelineError> {
    let index: ContentIndex = read_json(&cfg.workspace.join("index/index.json"))?;
    let concept_gateway = make_gateway(cfg, "concept")?;
    let algorithm_gateway = make_gateway(cfg, "algorithm")?;

    // The two analysis tracks are independent: separate sessions, no shared
    // mutable state beyond the immutable index.
    let (concept_result, algorithm_result) = std::thread::scope(|scope| {
        let concept = scope.spawn(|| {
            run_concept_agent(&index, &concept_gateway, &cfg.analysis, templates)
        });
        let algorithm = scope.spawn(|| {
            run_algorithm_agent(&index, &algorithm_gateway, None, &cfg.analysis, templates)
        });
        (
            concept.join().expect("concept agent thread panicked"),
            algorithm.join().expect("algorithm agent thread panicked"),
        )
    });
    let concept = concept_result?;
    let algorithm = algorithm_result?;

    let planner_gateway = make_gateway(cfg, "planner")?;
    let synthesis = synthesize_blueprint(
        &concept.value,
        &algorithm.value,
        &index,
        &planner_gateway,
        &cfg.analysis,
        templates,
    )?;

    write_json(&cfg.workspace.join("blueprint.json"), &synthesis.value)?;

    let mut usage = concept_gateway.usage_report();
    usage.merge(&algorithm_gateway.usage_report());
    usage.merge(&planner_gateway.usage_report());
    state.usage_by_phase.insert("blueprinted".into(), usage);
    state.warnings.extend(concept.warnings);
    state.warnings.extend(algorithm.warnings);
    state.warnings.extend(synthesis.warnings);
    Ok(())
}

fn phase_generate(
    cfg: &PipelineConfig,
    templates: &TemplateSet,
    state: &mut RunState,
) -> Result<(), PipelineError> {
    let blueprint: Blueprint = read_json(&cfg.workspace.join("blueprint.json"))?;
    let mut usage = UsageReport::default();

    let rag_index = if cfg.rag.enabled && !cfg.rag.repos.is_empty() {
        let gateway = make_gateway(cfg, "rag")?;
        let (index, warnings) = coderag::build_index(
            &cfg.rag.repos,
            &blueprint,
            &gateway,
            &cfg.rag.config,
            templates,
        )?;
        usage.merge(&gateway.usage_report());
        state.warnings.extend(warnings);
        index
    } else {
        RagIndex::default()
    };
    write_json(&cfg.workspace.join("rag_index.json"), &rag_index)?;

    clear_dir(&cfg.workspace.join("repo"))?;
    clear_dir(&cfg.workspace.join("memory"))?;
    let gateway = make_gateway(cfg, "generation")?;
    let outcome = run_generation(
        &blueprint,
        &gateway,
        cfg.rag.enabled.then_some(&rag_index),
        &cfg.rag.policy,
        &cfg.workspace.join("repo"),
        Some(&cfg.workspace.join("memory")),
        &cfg.codemem,
        templates,
    )?;
    usage.merge(&gateway.usage_report());

    write_json(
        &cfg.workspace.join("generation_stats.json"),
        &GenerationStats {
            steps: outcome.steps,
            max_context_tokens: outcome.max_context_tokens,
            truncation_events: outcome.truncation_events,
            retrievals: outcome.retrievals,
        },
    )?;
    state.usage_by_phase.insert("generated".into(), usage);
    state.warnings.extend(outcome.warnings);
    Ok(())
}

fn phase_verify(
    cfg: &PipelineConfig,
    templates: &TemplateSet,
    state: &mut RunState,
) -> Result<(), PipelineError> {
    let blueprint: Blueprint = read_json(&cfg.workspace.join("blueprint.json"))?;
    let audit_path = cfg.workspace.join("sandbox_audit.jsonl");
    if audit_path.exists() {
        std::fs::remove_file(&audit_path).map_err(|source| PipelineError::Io {
            path: audit_path.display().to_string(),
            source,
        })?;
    }
    let sandbox = ProcessSandbox::new(cfg.workspace.clone(), audit_path);
    let gateway = make_gateway(cfg, "verify")?;
    let repo_rel = Path::new("repo");
    let repo_root = cfg.workspace.join("repo");

    let report = static_analyze(&repo_root, &blueprint, &gateway, &cfg.verifier, templates)?;
    let refine = refine_static(
        &sandbox,
        repo_rel,
        &blueprint,
        &report,
        &gateway,
        templates,
    )?;
    let loop_result = refine_loop(
        &sandbox,
        repo_rel,
        &blueprint,
        &gateway,
        &cfg.verifier,
        templates,
    )?;

    let mut patches_applied = 0usize;
    let mut locality_ok = true;
    for patch in refine.applied.iter().chain(loop_result.applied.iter()) {
        patches_applied += 1;
        locality_ok &= check_locality(&patch.before, &patch.after, &patch.instruction);
    }

    write_json(
        &cfg.workspace.join("verify_log.json"),
        &VerifyLog {
            status: loop_result.status,
            entry: loop_result.entry.clone(),
            structural_issues: report.structural_count(),
            quality_scores: report.quality_scores.clone(),
            issues_total: report.issues.len(),
            fixed: refine.fixed,
            unfixable: refine.unfixable,
            setup: loop_result.setup.clone(),
            iterations: loop_result.iterations.clone(),
            executes: loop_result.executes,
            patches_applied,
            patch_locality_ok: locality_ok,
        },
    )?;
    state.usage_by_phase.insert("verified".into(), gateway.usage_report());
    state.warnings.extend(loop_result.warnings);
    Ok(())
}

fn compute_invariants(cfg: &PipelineConfig) -> InvariantSummary {
    let mut inv = InvariantSummary {
        context_budget: cfg.codemem.context_budget,
        ..InvariantSummary::default()
    };

    if let (Ok(raw), Ok(index)) = (
        std::fs::read_to_string(&cfg.input),
        read_json::<ContentIndex>(&cfg.workspace.join("index/index.json")),
    ) {
        inv.index_round_trip = index.full_text() == normalize_line_endings(&raw);
        let block_count = index.chunks.last().map(|c| c.span.1).unwrap_or(0);
        inv.index_coverage = index.check_invariants(block_count).is_empty();
    }

    let blueprint = read_json::<Blueprint>(&cfg.workspace.join("blueprint.json")).ok();
    if let Some(blueprint) = &blueprint {
        inv.blueprint_valid = validate_blueprint(blueprint).is_valid();
    }

    if let Ok(stats) = read_json::<GenerationStats>(&cfg.workspace.join("generation_stats.json")) {
        inv.generation_steps = stats.steps;
        inv.max_context_tokens = stats.max_context_tokens;
        inv.truncation_events = stats.truncation_events;
    }

    // Memory snapshots: sizes must grow by exactly one per step, and every
    // file's declared dependencies must precede it in generation order.
    let memory_dir = cfg.workspace.join("memory");
    if memory_dir.is_dir() {
        let mut snapshots: Vec<PathBuf> = std::fs::read_dir(&memory_dir)
            .map(|entries| {
                entries
                    .filter_map(|e| e.ok())
                    .map(|e| e.path())
                    .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
                    .collect()
            })
            .unwrap_or_default();
        snapshots.sort();
        inv.memory_monotonic = !snapshots.is_empty();
        let mut last_order: Vec<String> = Vec::new();
        for (i, snapshot) in snapshots.iter().enumerate() {
            match read_json::<crate::codemem::CodeMemory>(snapshot) {
                Ok(memory)
                    if memory.len() == i + 1
                        && memory.generation_order.len() == i + 1
                        && memory.generation_order.starts_with(&last_order) =>
                {
                    last_order = memory.generation_order;
                }
                _ => {
                    inv.memory_monotonic = false;
                    break;
                }
            }
        }
        if let Some(blueprint) = &blueprint {
            inv.dependency_sound = !last_order.is_empty()
                && last_order.iter().enumerate().all(|(i, file)| {
                    blueprint
                        .spec_for(file)
                        .map(|s| s.depends_on.iter().all(|d| last_order[..i].contains(d)))
                        .unwrap_or(true)
                });
        }
    }

    if let Ok(rag) = read_json::<RagIndex>(&cfg.workspace.join("rag_index.json")) {
        inv.rag_tuples = rag.tuples.len();
        inv.rag_order_valid = rag.per_target.values().all(|indices| {
            indices.windows(2).all(|pair| {
                rag.tuples[pair[0]].confidence >= rag.tuples[pair[1]].confidence
            })
        });
    }

    if let Ok(log) = read_json::<VerifyLog>(&cfg.workspace.join("verify_log.json")) {
        inv.patches_applied = log.patches_applied;
        inv.patch_locality_ok = log.patch_locality_ok;
    }

    if let Ok(records) = read_audit_log(&cfg.workspace.join("sandbox_audit.jsonl")) {
        inv.audit_confined = audit_is_confined(&records, &cfg.workspace);
    }

    inv
}

fn build_report(cfg: &PipelineConfig, state: &RunState) -> RunReport {
    let status = match read_json::<VerifyLog>(&cfg.workspace.join("verify_log.json")) {
        Ok(log) if state.completed(Phase::Verified) => match log.status {
            LoopStatus::Clean => RunStatus::Clean,
            LoopStatus::MaxIterations => RunStatus::MaxIterations,
            LoopStatus::SetupFailed => RunStatus::SetupFailed,
        },
        _ => RunStatus::Partial,
    };
    let completed_phases = Phase::ALL
        .iter()
        .filter(|p| state.completed(**p))
        .map(|p| p.name().to_string())
        .collect();
    let mut usage = UsageReport::default();
    for phase_usage in state.usage_by_phase.values() {
        usage.merge(phase_usage);
    }
    RunReport {
        status,
        completed_phases,
        artifacts: state.artifact_digests.clone(),
        usage,
        invariants: compute_invariants(cfg),
        warnings: state.warnings.clone(),
        timings_secs: Vec::new(),
        workspace: cfg.workspace.clone(),
    }
}

fn run_phases(
    cfg: &PipelineConfig,
    templates: &TemplateSet,
    state: &mut RunState,
) -> Result<RunReport, PipelineError> {
    let mut timings: Vec<(String, f64)> = Vec::new();
    for phase in Phase::ALL {
        if state.completed(phase) {
            continue;
        }
        let started = Instant::now();
        match phase {
            Phase::Indexed => {
                phase_index(cfg)?;
                state.record_digest(&cfg.workspace, "index/index.json")?;
            }
            Phase::Blueprinted => {
                phase_blueprint(cfg, templates, state)?;
                state.record_digest(&cfg.workspace, "blueprint.json")?;
            }
            Phase::Generated => {
                phase_generate(cfg, templates, state)?;
                for key in ["rag_index.json", "memory", "generation_stats.json", "repo@generated"] {
                    state.record_digest(&cfg.workspace, key)?;
                }
            }
            Phase::Verified => {
                phase_verify(cfg, templates, state)?;
                for key in ["verify_log.json", "repo@verified"] {
                    state.record_digest(&cfg.workspace, key)?;
                }
            }
        }
        state.phase = Some(phase);
        state.resumable = true;
        state.save(&cfg.workspace)?;
        timings.push((phase.name().to_string(), started.elapsed().as_secs_f64()));

        if cfg.stop_after == Some(phase) && phase != Phase::Verified {
            let mut report = build_report(cfg, state);
            report.status = RunStatus::Partial;
            report.timings_secs = timings;
            return Ok(report);
        }
    }

    let mut report = build_report(cfg, state);
    write_json(&cfg.workspace.join("report.json"), &report)?;
    state.record_digest(&cfg.workspace, "report.json")?;
    state.save(&cfg.workspace)?;

    let timing_map: BTreeMap<String, f64> = timings.iter().cloned().collect();
    write_json(&cfg.workspace.join("timings.json"), &timing_map)?;
    report.timings_secs = timings;
    Ok(report)
}

/// Runs the full pipeline under `cfg`, or up to `cfg.stop_after`.
pub fn run_pipeline(cfg: PipelineConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let _lock = WorkspaceLock::acquire(&cfg.workspace)?;
    write_json(&cfg.workspace.join("config.json"), &cfg)?;
    let templates = cfg.load_templates()?;
    let mut state = RunState::default();
    run_phases(&cfg, &templates, &mut state)
}

/// Continues an interrupted run from its last checkpoint.
///
/// Completed phases are not re-run; their artifact digests must match the
/// workspace. Resuming a finished workspace is a no-op that returns the
/// stored report.
pub fn resume(workspace: &Path) -> Result<RunReport, PipelineError> {
    let config_path = workspace.join("config.json");
    if !config_path.is_file() {
        return Err(PipelineError::Config(format!(
            "`{}` is not a pipeline workspace (no config.json)",
            workspace.display()
        )));
    }
    let mut cfg: PipelineConfig = read_json(&config_path)?;
    cfg.stop_after = None;
    let _lock = WorkspaceLock::acquire(workspace)?;
    let state = RunState::load(workspace)?;
    if !state.resumable {
        return Err(PipelineError::Config("run state is not resumable".into()));
    }
    state.verify_digests(workspace)?;

    if state.completed(Phase::Verified) {
        let mut report: RunReport = read_json(&workspace.join("report.json"))?;
        report.workspace = workspace.to_path_buf();
        return Ok(report);
    }
    let templates = cfg.load_templates()?;
    let mut state = state;
    run_phases(&cfg, &templates, &mut state)
}

/// Loads the stored report of a finished or partial run.
pub fn load_report(workspace: &Path) -> Result<RunReport, PipelineError> {
    let mut report: RunReport = read_json(&workspace.join("report.json"))?;
    report.workspace = workspace.to_path_buf();
    Ok(report)
}
