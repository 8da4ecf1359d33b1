//! Phase 3: static analysis against the blueprint, line-level repair, and
//! the iterative sandbox execute-diagnose-patch loop.

pub mod patch;
pub mod sandbox;
pub mod trace;

pub use patch::{apply_patch, check_locality, LineEdit, PatchError, PatchInstruction};
pub use sandbox::{
    audit_is_confined, read_audit_log, AuditRecord, ProcessSandbox, RawExecution, Sandbox,
    SandboxError,
};
pub use trace::{execute, parse_error_records, ErrorPatterns, ErrorRecord, ExecutionTrace};

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blueprint::Blueprint;
use crate::gateway::{GatewayError, LlmGateway, Role};
use crate::reply::{call_validated_json, extract_code, parse_into, ValidatedCallError};
use crate::templates::{self, TemplateSet};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("reply failed schema validation after {attempts} attempts: {}", problems.join("; "))]
    SchemaParse { attempts: u32, problems: Vec<String> },
    #[error("environment setup failed: `{command}` exited {exit_code}")]
    SetupFailed {
        command: String,
        exit_code: i32,
        stderr: String,
    },
}

impl From<ValidatedCallError> for VerifyError {
    fn from(e: ValidatedCallError) -> Self {
        match e {
            ValidatedCallError::Gateway(g) => VerifyError::Gateway(g),
            ValidatedCallError::Schema { attempts, problems } => {
                VerifyError::SchemaParse { attempts, problems }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IssueCategory {
    StructuralDiscrepancy,
    QualityDeficiency,
}

/// One finding of the static analysis pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Issue {
    pub id: String,
    pub category: IssueCategory,
    /// Machine-readable kind: `missing-file`, `empty-file`, or `quality`.
    pub code: String,
    pub file: String,
    #[serde(default)]
    pub location: String,
    pub description: String,
    #[serde(default)]
    pub suggested_instruction: String,
}

/// Structured static analysis report: issues plus per-file quality scores.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StaticReport {
    pub issues: Vec<Issue>,
    pub quality_scores: BTreeMap<String, f64>,
}

impl StaticReport {
    pub fn structural_count(&self) -> usize {
        self.issues
            .iter()
            .filter(|i| i.category == IssueCategory::StructuralDiscrepancy)
            .count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct VerifierConfig {
    /// Maximum sandbox executions per refine loop.
    pub max_iter: u32,
    /// Wall timeout per sandbox execution, seconds.
    pub timeout_secs: u64,
    /// Value substituted for `{scale}` in blueprint entry commands.
    pub scale_down: u64,
    /// Dependency manifest file inside the repository.
    pub manifest_name: String,
    /// Commands run inside the sandbox after manifest reconciliation.
    pub install_commands: Vec<String>,
    /// Overrides entry-point discovery entirely when set.
    pub entry_override: Option<String>,
    pub error_patterns: ErrorPatterns,
    /// Repair retries for schema-validated replies.
    pub retry_budget: u32,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            max_iter: 5,
            timeout_secs: 60,
            scale_down: 1,
            manifest_name: "requirements.txt".to_string(),
            install_commands: Vec::new(),
            entry_override: None,
            error_patterns: ErrorPatterns::default(),
            retry_budget: 2,
        }
    }
}

/// Structural pass: missing blueprint files and zero-byte files. Computed
/// without the model; never fails.
pub fn structural_scan(repo_root: &Path, blueprint: &Blueprint) -> Vec<Issue> {
    let mut issues = Vec::new();
    for planned in &blueprint.file_hierarchy {
        let full = repo_root.join(&planned.path);
        let state = std::fs::metadata(&full);
        match state {
            Err(_) => issues.push(Issue {
                id: format!("S{}", issues.len() + 1),
                category: IssueCategory::StructuralDiscrepancy,
                code: "missing-file".into(),
                file: planned.path.clone(),
                location: String::new(),
                description: format!("planned file `{}` is missing", planned.path),
                suggested_instruction: "synthesize the file from its component specification"
                    .into(),
            }),
            Ok(meta) if meta.len() == 0 => issues.push(Issue {
                id: format!("S{}", issues.len() + 1),
                category: IssueCategory::StructuralDiscrepancy,
                code: "empty-file".into(),
                file: planned.path.clone(),
                location: String::new(),
                description: format!("planned file `{}` is empty (zero bytes)", planned.path),
                suggested_instruction: "regenerate the file contents".into(),
            }),
            Ok(_) => {}
        }
    }
    issues
}

#[derive(Debug, Deserialize)]
struct QualityReply {
    score: f64,
    #[serde(default)]
    issues: Vec<QualityIssueReply>,
}

#[derive(Debug, Deserialize)]
struct QualityIssueReply {
    #[serde(default)]
    location: String,
    description: String,
    #[serde(default)]
    suggestion: String,
}

/// Full static analysis: the structural pass plus a model-scored quality
/// pass over every existing planned file.
pub fn static_analyze(
    repo_root: &Path,
    blueprint: &Blueprint,
    gateway: &LlmGateway,
    cfg: &VerifierConfig,
    templates: &TemplateSet,
) -> Result<StaticReport, VerifyError> {
    let mut issues = structural_scan(repo_root, blueprint);
    let mut quality_scores = BTreeMap::new();
    let mut quality_counter = 0usize;

    for planned in &blueprint.file_hierarchy {
        let full = repo_root.join(&planned.path);
        let Ok(text) = std::fs::read_to_string(&full) else {
            continue;
        };
        if text.is_empty() {
            continue;
        }
        let prompt = templates.render(
            templates::QUALITY_REVIEW,
            &[("file", planned.path.as_str()), ("text", text.as_str())],
        );
        let (reply, _retries) = call_validated_json::<QualityReply>(
            gateway,
            templates,
            Role::Verifier,
            templates::QUALITY_REVIEW,
            "quality_review",
            &prompt,
            cfg.retry_budget,
            parse_into,
        )?;
        quality_scores.insert(planned.path.clone(), reply.score.clamp(0.0, 1.0));
        for issue in reply.issues {
            quality_counter += 1;
            issues.push(Issue {
                id: format!("Q{quality_counter}"),
                category: IssueCategory::QualityDeficiency,
                code: "quality".into(),
                file: planned.path.clone(),
                location: issue.location,
                description: issue.description,
                suggested_instruction: issue.suggestion,
            });
        }
    }
    Ok(StaticReport {
        issues,
        quality_scores,
    })
}

/// A patch that was actually applied, with before/after texts for locality
/// checking.
#[derive(Debug, Clone)]
pub struct AppliedPatch {
    pub instruction: PatchInstruction,
    pub before: String,
    pub after: String,
}

/// Outcome of one static refinement pass.
#[derive(Debug, Default)]
pub struct RefineStaticOutcome {
    pub fixed: Vec<String>,
    pub unfixable: Vec<String>,
    pub applied: Vec<AppliedPatch>,
    /// Structural issues remaining after the pass (excluding unfixable).
    pub remaining_structural: usize,
}

#[derive(Debug, Deserialize)]
struct PatchesReply {
    #[serde(default)]
    patches: Vec<PatchInstruction>,
}

fn numbered(text: &str) -> String {
    text.lines()
        .enumerate()
        .map(|(i, l)| format!("{:4} | {l}\n", i + 1))
        .collect()
}

fn render_spec_for(blueprint: &Blueprint, file: &str) -> String {
    blueprint
        .spec_for(file)
        .map(|s| serde_json::to_string_pretty(s).expect("spec serializes"))
        .unwrap_or_else(|| "(no component spec declared)".to_string())
}

/// Visits every issue once and applies a targeted fix: missing files are
/// synthesized whole, everything else is patched line-level. An issue whose
/// fix fails twice is marked unfixable; the pass continues.
pub fn refine_static(
    sandbox: &dyn Sandbox,
    repo_rel: &Path,
    blueprint: &Blueprint,
    report: &StaticReport,
    gateway: &LlmGateway,
    templates: &TemplateSet,
) -> Result<RefineStaticOutcome, VerifyError> {
    let mut outcome = RefineStaticOutcome::default();

    for issue in &report.issues {
        let mut fixed = false;
        for _attempt in 0..2 {
            match try_fix_issue(sandbox, repo_rel, blueprint, issue, gateway, templates) {
                Ok(Some(applied)) => {
                    outcome.applied.extend(applied);
                    fixed = true;
                    break;
                }
                Ok(None) => {}
                Err(VerifyError::Gateway(e)) => return Err(VerifyError::Gateway(e)),
                Err(_) => {}
            }
        }
        if fixed {
            outcome.fixed.push(issue.id.clone());
        } else {
            outcome.unfixable.push(issue.id.clone());
        }
    }

    let repo_root = sandbox.root().join(repo_rel);
    outcome.remaining_structural = structural_scan(&repo_root, blueprint)
        .iter()
        .filter(|i| !outcome.unfixable.iter().any(|u| u == &i.id))
        .count();
    Ok(outcome)
}

/// One fix attempt. `Ok(Some(..))` fixed it, `Ok(None)` produced nothing
/// usable, `Err` failed outright; the caller decides about retries.
fn try_fix_issue(
    sandbox: &dyn Sandbox,
    repo_rel: &Path,
    blueprint: &Blueprint,
    issue: &Issue,
    gateway: &LlmGateway,
    templates: &TemplateSet,
) -> Result<Option<Vec<AppliedPatch>>, VerifyError> {
    let file_rel = repo_rel.join(&issue.file);
    if issue.code == "missing-file" {
        let prompt = templates.render(
            templates::SYNTHESIZE_MISSING,
            &[
                ("file", issue.file.as_str()),
                ("spec", render_spec_for(blueprint, &issue.file).as_str()),
            ],
        );
        let request = crate::gateway::PromptRequest::new(
            Role::Verifier,
            templates::SYNTHESIZE_MISSING,
            prompt,
            gateway.tokenizer().as_ref(),
            None,
        );
        let reply = gateway.complete(&request)?;
        let Some(code) = extract_code(&reply) else {
            return Ok(None);
        };
        sandbox.write_file(&file_rel, &code)?;
        return Ok(Some(vec![]));
    }

    let before = sandbox.read_file(&file_rel).unwrap_or_default();
    let prompt = templates.render(
        templates::PATCH_STATIC,
        &[
            ("file", issue.file.as_str()),
            (
                "issue",
                format!("{} — {}", issue.description, issue.suggested_instruction).as_str(),
            ),
            ("numbered", numbered(&before).as_str()),
        ],
    );
    let (reply, _retries) = call_validated_json::<PatchesReply>(
        gateway,
        templates,
        Role::Verifier,
        templates::PATCH_STATIC,
        "patches",
        &prompt,
        0,
        parse_into,
    )?;
    if reply.patches.is_empty() {
        return Ok(None);
    }
    let mut applied = Vec::new();
    for instruction in reply.patches {
        if instruction.file != issue.file {
            continue;
        }
        match apply_patch(&before, &instruction) {
            Ok(after) => {
                sandbox.write_file(&file_rel, &after)?;
                applied.push(AppliedPatch {
                    instruction,
                    before: before.clone(),
                    after,
                });
            }
            Err(_) => return Ok(None),
        }
    }
    if applied.is_empty() {
        Ok(None)
    } else {
        Ok(Some(applied))
    }
}

/// Result of environment verification and setup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetupOutcome {
    pub manifest: String,
    pub corrected: bool,
    pub added: Vec<String>,
    /// One trace per install command run.
    pub install_commands_run: usize,
}

fn manifest_package_name(line: &str) -> Option<String> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return None;
    }
    let name: String = trimmed
        .chars()
        .take_while(|c| c.is_alphanumeric() || *c == '-' || *c == '_' || *c == '.')
        .collect();
    if name.is_empty() {
        None
    } else {
        Some(name.to_lowercase())
    }
}

/// Cross-checks the dependency manifest against the blueprint execution
/// environment, corrects discrepancies, then runs the configured install
/// commands inside the sandbox.
pub fn setup_environment(
    sandbox: &dyn Sandbox,
    repo_rel: &Path,
    blueprint: &Blueprint,
    cfg: &VerifierConfig,
) -> Result<SetupOutcome, VerifyError> {
    let manifest_rel = repo_rel.join(&cfg.manifest_name);
    let existing = sandbox.read_file(&manifest_rel).unwrap_or_default();
    let declared: Vec<String> = existing
        .lines()
        .filter_map(manifest_package_name)
        .collect();

    let mut added = Vec::new();
    let mut corrected_text = existing.clone();
    for dep in &blueprint.execution_environment.dependencies {
        if !declared.contains(&dep.name.to_lowercase()) {
            let line = if dep.version.is_empty() {
                dep.name.clone()
            } else {
                format!("{}=={}", dep.name, dep.version)
            };
            if !corrected_text.is_empty() && !corrected_text.ends_with('\n') {
                corrected_text.push('\n');
            }
            corrected_text.push_str(&line);
            corrected_text.push('\n');
            added.push(line);
        }
    }
    let corrected = !added.is_empty();
    if corrected {
        sandbox.write_file(&manifest_rel, &corrected_text)?;
    }

    let timeout = Duration::from_secs(cfg.timeout_secs);
    let mut run = 0usize;
    for command in &cfg.install_commands {
        let result = sandbox.run(command, Some(repo_rel), timeout)?;
        run += 1;
        if result.exit_code != 0 {
            return Err(VerifyError::SetupFailed {
                command: command.clone(),
                exit_code: result.exit_code,
                stderr: result.stderr,
            });
        }
    }
    Ok(SetupOutcome {
        manifest: cfg.manifest_name.clone(),
        corrected,
        added,
        install_commands_run: run,
    })
}

/// Terminal state of the refine loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopStatus {
    Clean,
    MaxIterations,
    SetupFailed,
}

/// One loop iteration: the trace observed and the patch set applied in
/// response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub trace_digest: String,
    pub error_records: Vec<ErrorRecord>,
    pub patches: Vec<PatchInstruction>,
    pub patch_failures: Vec<String>,
}

/// Full result of the execute-diagnose-patch loop.
#[derive(Debug)]
pub struct RefineLoopResult {
    pub status: LoopStatus,
    pub iterations: Vec<IterationRecord>,
    pub executes: usize,
    pub setup: Option<SetupOutcome>,
    pub applied: Vec<AppliedPatch>,
    pub final_trace: Option<ExecutionTrace>,
    pub entry: Option<String>,
    pub warnings: Vec<String>,
}

/// Entry-point discovery: explicit override, then a `reproduce.sh` script,
/// then the blueprint entry command with `{scale}` substituted, then the
/// first non-empty staged check.
pub fn discover_entry(
    repo_root: &Path,
    blueprint: &Blueprint,
    cfg: &VerifierConfig,
) -> Option<String> {
    if let Some(entry) = &cfg.entry_override {
        return Some(entry.clone());
    }
    if repo_root.join("reproduce.sh").is_file() {
        return Some("sh reproduce.sh".to_string());
    }
    let command = &blueprint.verification_protocol.entry_command;
    if !command.trim().is_empty() {
        return Some(command.replace("{scale}", &cfg.scale_down.to_string()));
    }
    blueprint
        .staged_plan
        .iter()
        .map(|s| s.check.trim())
        .find(|c| !c.is_empty())
        .map(str::to_string)
}

/// Runs setup, then executes the entry point and patches reported faults
/// until the run is clean or `max_iter` executions have happened.
pub fn refine_loop(
    sandbox: &dyn Sandbox,
    repo_rel: &Path,
    blueprint: &Blueprint,
    gateway: &LlmGateway,
    cfg: &VerifierConfig,
    templates: &TemplateSet,
) -> Result<RefineLoopResult, VerifyError> {
    let mut result = RefineLoopResult {
        status: LoopStatus::Clean,
        iterations: Vec::new(),
        executes: 0,
        setup: None,
        applied: Vec::new(),
        final_trace: None,
        entry: None,
        warnings: Vec::new(),
    };

    match setup_environment(sandbox, repo_rel, blueprint, cfg) {
        Ok(setup) => result.setup = Some(setup),
        Err(VerifyError::SetupFailed { command, exit_code, stderr }) => {
            result.status = LoopStatus::SetupFailed;
            result
                .warnings
                .push(format!("setup command `{command}` exited {exit_code}: {stderr}"));
            return Ok(result);
        }
        Err(e) => return Err(e),
    }

    let repo_root = sandbox.root().join(repo_rel);
    let Some(entry) = discover_entry(&repo_root, blueprint, cfg) else {
        result
            .warnings
            .push("no entry point discovered; nothing to execute".to_string());
        return Ok(result);
    };
    result.entry = Some(entry.clone());

    let timeout = Duration::from_secs(cfg.timeout_secs);
    for index in 0..cfg.max_iter as usize {
        let trace = execute(sandbox, repo_rel, &entry, timeout, &cfg.error_patterns)?;
        result.executes += 1;

        if trace.is_clean() {
            result.iterations.push(IterationRecord {
                index,
                trace_digest: trace.digest(),
                error_records: Vec::new(),
                patches: Vec::new(),
                patch_failures: Vec::new(),
            });
            result.status = LoopStatus::Clean;
            result.final_trace = Some(trace);
            return Ok(result);
        }

        if index + 1 == cfg.max_iter as usize {
            result.iterations.push(IterationRecord {
                index,
                trace_digest: trace.digest(),
                error_records: trace.error_records.clone(),
                patches: Vec::new(),
                patch_failures: Vec::new(),
            });
            result.status = LoopStatus::MaxIterations;
            result.final_trace = Some(trace);
            return Ok(result);
        }

        let (patches, failures) =
            request_and_apply_patches(sandbox, repo_rel, &trace, gateway, cfg, templates, &mut result.applied)?;
        result.iterations.push(IterationRecord {
            index,
            trace_digest: trace.digest(),
            error_records: trace.error_records.clone(),
            patches,
            patch_failures: failures,
        });
    }
    result.status = LoopStatus::MaxIterations;
    Ok(result)
}

/// Asks the repair agent for patches against a failing trace and applies
/// them. Application failures are recorded, not fatal.
fn request_and_apply_patches(
    sandbox: &dyn Sandbox,
    repo_rel: &Path,
    trace: &ExecutionTrace,
    gateway: &LlmGateway,
    cfg: &VerifierConfig,
    templates: &TemplateSet,
    applied_log: &mut Vec<AppliedPatch>,
) -> Result<(Vec<PatchInstruction>, Vec<String>), VerifyError> {
    let errors_rendered = if trace.error_records.is_empty() {
        "(none parsed)".to_string()
    } else {
        trace
            .error_records
            .iter()
            .map(|r| {
                format!(
                    "- {}{}: {}\n",
                    r.file.as_deref().unwrap_or("<unattributed>"),
                    r.line.map(|l| format!(":{l}")).unwrap_or_default(),
                    r.message
                )
            })
            .collect()
    };

    // Files named by the error records, numbered for line-accurate edits.
    let mut involved: Vec<String> = trace
        .error_records
        .iter()
        .filter_map(|r| r.file.clone())
        .collect();
    involved.sort();
    involved.dedup();
    let mut numbered_section = String::new();
    for file in &involved {
        if let Ok(text) = sandbox.read_file(&repo_rel.join(file)) {
            numbered_section.push_str(&format!("--- {file}\n{}\n", numbered(&text)));
        }
    }

    // When attribution failed, the whole stderr is the diagnostic signal.
    let stderr_excerpt: String = trace.stderr.chars().take(4000).collect();

    let prompt = templates.render(
        templates::PATCH_RUNTIME,
        &[
            ("command", trace.command.as_str()),
            ("errors", errors_rendered.as_str()),
            ("stderr", stderr_excerpt.as_str()),
            ("numbered", numbered_section.as_str()),
        ],
    );
    let (reply, _retries) = call_validated_json::<PatchesReply>(
        gateway,
        templates,
        Role::Verifier,
        templates::PATCH_RUNTIME,
        "patches",
        &prompt,
        cfg.retry_budget,
        parse_into,
    )?;

    let mut applied = Vec::new();
    let mut failures = Vec::new();
    for instruction in reply.patches {
        let file_rel = repo_rel.join(&instruction.file);
        let before = match sandbox.read_file(&file_rel) {
            Ok(text) => text,
            Err(e) => {
                failures.push(format!("patch target `{}`: {e}", instruction.file));
                continue;
            }
        };
        match apply_patch(&before, &instruction) {
            Ok(after) => {
                sandbox.write_file(&file_rel, &after)?;
                applied_log.push(AppliedPatch {
                    instruction: instruction.clone(),
                    before,
                    after,
                });
                applied.push(instruction);
            }
            Err(e) => failures.push(format!("patch on `{}`: {e}", instruction.file)),
        }
    }
    Ok((applied, failures))
}
