//! Stateful file-by-file generation with a compressed repository memory.
//!
//! Instead of accumulating raw code history, each generated file is distilled
//! into a [`MemoryEntry`] (purpose, public interface, dependency edges). The
//! generation context for the next file embeds the blueprint plus only the
//! relevant entries, so context size stays decoupled from repository size.
//! Target order is model-suggested but validated and, on violation,
//! overridden by topological order over the blueprint dependency graph.

mod loop_driver;

pub use loop_driver::{run_generation, GenerationOutcome};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blueprint::Blueprint;
use crate::coderag::Augmentation;
use crate::gateway::{GatewayError, LlmGateway, PromptRequest, Role};
use crate::paths::{resolve_under, PathError};
use crate::reply::{call_validated_json, extract_code, extract_json, parse_into, ValidatedCallError};
use crate::templates::{self, TemplateSet};
use crate::tokens::TokenCounter;

#[derive(Debug, Error)]
pub enum CodememError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("summary failed validation after {attempts} attempts: {}", problems.join("; "))]
    SchemaParse { attempts: u32, problems: Vec<String> },
    #[error("context for `{target}` needs {required} tokens even without summaries; budget is {budget}")]
    BudgetExceeded {
        target: String,
        required: u64,
        budget: u64,
    },
    #[error("generation reply for `{target}` had no code payload after {attempts} attempts")]
    EmptyGeneration { target: String, attempts: u32 },
    #[error("file `{0}` is already present in memory")]
    DuplicateFile(String),
    #[error("no eligible file: {} unimplemented file(s) form a dependency cycle: {}", remaining.len(), remaining.join(", "))]
    CyclicDependency { remaining: Vec<String> },
    #[error("target `{0}` is not in the blueprint hierarchy")]
    UnknownTarget(String),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<ValidatedCallError> for CodememError {
    fn from(e: ValidatedCallError) -> Self {
        match e {
            ValidatedCallError::Gateway(g) => CodememError::Gateway(g),
            ValidatedCallError::Schema { attempts, problems } => {
                CodememError::SchemaParse { attempts, problems }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolKind {
    Class,
    Function,
    Constant,
}

/// One externally visible symbol of a generated file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct InterfaceSymbol {
    pub kind: SymbolKind,
    pub name: String,
    #[serde(default)]
    pub signature: String,
    #[serde(default)]
    pub purpose: String,
}

/// An import consumed by the file: the module and the symbols taken from it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct AfferentImport {
    pub module: String,
    #[serde(default)]
    pub symbols: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct DependencyEdges {
    /// Imports this file consumes (internal modules and external packages).
    pub afferent: Vec<AfferentImport>,
    /// Planned files expected to consume this file's interface.
    pub efferent_predicted: Vec<String>,
}

/// Compressed structural essence of one generated file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct MemoryEntry {
    pub file: String,
    pub purpose: String,
    pub public_interface: Vec<InterfaceSymbol>,
    pub dependency_edges: DependencyEdges,
}

/// Append-only map from implemented file to its memory entry.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CodeMemory {
    pub entries: BTreeMap<String, MemoryEntry>,
    pub generation_order: Vec<String>,
}

impl CodeMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, file: &str) -> bool {
        self.entries.contains_key(file)
    }
}

/// Grows the memory by exactly one entry; prior entries are untouched.
pub fn update_memory(mut memory: CodeMemory, entry: MemoryEntry) -> Result<CodeMemory, CodememError> {
    if memory.contains(&entry.file) {
        return Err(CodememError::DuplicateFile(entry.file));
    }
    memory.generation_order.push(entry.file.clone());
    memory.entries.insert(entry.file.clone(), entry);
    Ok(memory)
}

/// Entries selected for a generation context, possibly truncated to fit the
/// budget.
#[derive(Debug, Clone)]
pub struct MemorySelection {
    pub entries: Vec<MemoryEntry>,
    pub truncated: bool,
}

/// Selects the memory entries relevant to `target`: its blueprint-declared
/// dependencies first, then entries that predicted `target` as a consumer.
/// Within each group, hierarchy (document) order. Entries are dropped from
/// the bottom of the ranking until the rendered summaries fit `budget`.
pub fn select_relevant_memory(
    memory: &CodeMemory,
    target: &str,
    blueprint: &Blueprint,
    budget: u64,
    tokenizer: &dyn TokenCounter,
) -> MemorySelection {
    let deps: Vec<&str> = blueprint
        .spec_for(target)
        .map(|s| s.depends_on.iter().map(String::as_str).collect())
        .unwrap_or_default();

    let hierarchy_rank =
        |file: &str| blueprint.hierarchy_index(file).unwrap_or(usize::MAX);

    let mut dependency_group: Vec<&MemoryEntry> = Vec::new();
    let mut predictor_group: Vec<&MemoryEntry> = Vec::new();
    for entry in memory.entries.values() {
        if deps.contains(&entry.file.as_str()) {
            dependency_group.push(entry);
        } else if entry
            .dependency_edges
            .efferent_predicted
            .iter()
            .any(|p| p == target)
        {
            predictor_group.push(entry);
        }
    }
    dependency_group.sort_by_key(|e| hierarchy_rank(&e.file));
    predictor_group.sort_by_key(|e| hierarchy_rank(&e.file));

    let mut entries = Vec::new();
    let mut used = 0u64;
    let mut truncated = false;
    for entry in dependency_group.into_iter().chain(predictor_group) {
        let cost = tokenizer.count(&render_memory_entry(entry));
        if used + cost <= budget {
            used += cost;
            entries.push(entry.clone());
        } else {
            truncated = true;
        }
    }
    MemorySelection { entries, truncated }
}

fn render_memory_entry(entry: &MemoryEntry) -> String {
    let mut out = format!("### {}\npurpose: {}\n", entry.file, entry.purpose);
    if entry.public_interface.is_empty() {
        out.push_str("interface: (none)\n");
    } else {
        out.push_str("interface:\n");
        for symbol in &entry.public_interface {
            let kind = match symbol.kind {
                SymbolKind::Class => "class",
                SymbolKind::Function => "function",
                SymbolKind::Constant => "constant",
            };
            out.push_str(&format!(
                "- {kind} {} — {}\n",
                if symbol.signature.is_empty() {
                    symbol.name.clone()
                } else {
                    symbol.signature.clone()
                },
                symbol.purpose
            ));
        }
    }
    if !entry.dependency_edges.afferent.is_empty() {
        let imports: Vec<String> = entry
            .dependency_edges
            .afferent
            .iter()
            .map(|i| {
                if i.symbols.is_empty() {
                    i.module.clone()
                } else {
                    format!("{} ({})", i.module, i.symbols.join(", "))
                }
            })
            .collect();
        out.push_str(&format!("imports: {}\n", imports.join("; ")));
    }
    if !entry.dependency_edges.efferent_predicted.is_empty() {
        out.push_str(&format!(
            "expected consumers: {}\n",
            entry.dependency_edges.efferent_predicted.join(", ")
        ));
    }
    out
}

/// The assembled input for generating one file: the final prompt text plus
/// the pieces it was built from.
#[derive(Debug, Clone)]
pub struct GenerationContext {
    pub target: String,
    pub next_target_hint: Option<String>,
    pub selection: MemorySelection,
    pub retrieval: Option<Augmentation>,
    pub rendered_prompt: String,
    pub token_count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default)]
pub struct CodememConfig {
    /// Token ceiling for each generation context.
    pub context_budget: u64,
    /// Repair retries for generation and summarization replies.
    pub retry_budget: u32,
}

impl Default for CodememConfig {
    fn default() -> Self {
        Self {
            context_budget: 16_000,
            retry_budget: 2,
        }
    }
}

fn render_spec_section(blueprint: &Blueprint, target: &str) -> String {
    let mut out = String::new();
    if let Some(spec) = blueprint.spec_for(target) {
        out.push_str(&serde_json::to_string_pretty(spec).expect("spec serializes"));
        out.push('\n');
        for item in &spec.linked_items {
            if let Some(algorithm_item) = blueprint.algorithm_items.get(item) {
                out.push_str(&format!("\n[{item}]\n{}\n", algorithm_item.text));
            }
        }
    } else {
        out.push_str("(no component spec declared)\n");
    }
    out
}

fn render_retrieval_section(retrieval: Option<&Augmentation>) -> String {
    let Some(aug) = retrieval else {
        return String::new();
    };
    let relation = serde_json::to_value(aug.relation_type)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    let mut out = format!(
        "## Reference material\nsource: {} ({relation}, confidence {:.2})\n",
        aug.source_file, aug.confidence
    );
    if !aug.usage_notes.is_empty() {
        out.push_str(&format!("usage notes: {}\n", aug.usage_notes));
    }
    for snippet in &aug.snippets {
        out.push_str(&format!(
            "snippet {} L{}-L{}:\n```\n{}\n```\n",
            snippet.path, snippet.start_line, snippet.end_line, snippet.text
        ));
    }
    out.push('\n');
    out
}

/// Builds the generation context for `target`, embedding the blueprint and
/// the relevant memory summaries, never raw source text of prior files.
///
/// Fails with `BudgetExceeded` when even the summary-free context overflows
/// the configured budget.
#[allow(clippy::too_many_arguments)]
pub fn formulate_context(
    blueprint: &Blueprint,
    memory: &CodeMemory,
    target: &str,
    retrieval: Option<Augmentation>,
    next_target_hint: Option<String>,
    cfg: &CodememConfig,
    templates: &TemplateSet,
    tokenizer: &dyn TokenCounter,
) -> Result<GenerationContext, CodememError> {
    if !blueprint.contains_file(target) {
        return Err(CodememError::UnknownTarget(target.to_string()));
    }
    if memory.contains(target) {
        return Err(CodememError::DuplicateFile(target.to_string()));
    }

    let blueprint_json = blueprint.to_json_pretty();
    let spec_section = render_spec_section(blueprint, target);
    let retrieval_section = render_retrieval_section(retrieval.as_ref());
    let hint_line = next_target_hint
        .as_ref()
        .map(|h| format!("Planned next file after this one: {h}\n"))
        .unwrap_or_default();

    let render = |memory_section: &str| {
        templates.render(
            templates::GENERATE_FILE,
            &[
                ("target", target),
                ("blueprint", blueprint_json.as_str()),
                ("spec", spec_section.as_str()),
                ("memory", memory_section),
                ("retrieval", format!("{retrieval_section}{hint_line}").as_str()),
            ],
        )
    };

    let base = render("(no files implemented yet)\n");
    let base_tokens = tokenizer.count(&base);
    if base_tokens > cfg.context_budget {
        return Err(CodememError::BudgetExceeded {
            target: target.to_string(),
            required: base_tokens,
            budget: cfg.context_budget,
        });
    }

    let selection = select_relevant_memory(
        memory,
        target,
        blueprint,
        cfg.context_budget - base_tokens,
        tokenizer,
    );
    let memory_section = if selection.entries.is_empty() {
        "(no files implemented yet)\n".to_string()
    } else {
        selection.entries.iter().map(render_memory_entry).collect()
    };
    let rendered_prompt = render(&memory_section);
    let token_count = tokenizer.count(&rendered_prompt);

    Ok(GenerationContext {
        target: target.to_string(),
        next_target_hint,
        selection,
        retrieval,
        rendered_prompt,
        token_count,
    })
}

/// Generates the target file from its context and writes it under
/// `repo_root`. The code payload is the reply's first fenced block; replies
/// with no payload are retried up to the budget.
pub fn generate_file(
    ctx: &GenerationContext,
    gateway: &LlmGateway,
    repo_root: &Path,
    cfg: &CodememConfig,
) -> Result<(PathBuf, String), CodememError> {
    let mut attempts = 0u32;
    for _ in 0..=cfg.retry_budget {
        attempts += 1;
        let request = PromptRequest::new(
            Role::Coder,
            templates::GENERATE_FILE,
            ctx.rendered_prompt.clone(),
            gateway.tokenizer().as_ref(),
            None,
        );
        let reply = gateway.complete(&request)?;
        if let Some(code) = extract_code(&reply) {
            let path = resolve_under(repo_root, Path::new(&ctx.target))?;
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|source| CodememError::Io {
                    path: parent.display().to_string(),
                    source,
                })?;
            }
            std::fs::write(&path, &code).map_err(|source| CodememError::Io {
                path: path.display().to_string(),
                source,
            })?;
            return Ok((path, code));
        }
    }
    Err(CodememError::EmptyGeneration {
        target: ctx.target.clone(),
        attempts,
    })
}

/// Python-style lexical import scan: returns the set of imported modules.
fn scan_imports(text: &str) -> BTreeSet<String> {
    let mut modules = BTreeSet::new();
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("import ") {
            for part in rest.split(',') {
                let module = part.split_whitespace().next().unwrap_or("");
                if !module.is_empty() {
                    modules.insert(module.to_string());
                }
            }
        } else if let Some(rest) = trimmed.strip_prefix("from ") {
            if let Some((module, _)) = rest.split_once(" import ") {
                let module = module.trim();
                if !module.is_empty() {
                    modules.insert(module.to_string());
                }
            }
        }
    }
    modules
}

/// Resolves an import module name to the blueprint file it would load,
/// e.g. `src.model` → `src/model.py`.
fn module_to_path(module: &str) -> String {
    format!("{}.py", module.replace('.', "/"))
}

/// Summarizes a freshly generated file into a memory entry.
///
/// The reply is validated against the entry invariants: unique interface
/// names, afferent imports actually present in the file text, efferent
/// predictions inside the hierarchy, and internal afferent modules already
/// in memory. Violations trigger the repair-retry loop.
///
/// Returns the entry plus warnings for prior entries that failed to predict
/// this file as a consumer.
pub fn summarize_file(
    file: &str,
    text: &str,
    gateway: &LlmGateway,
    blueprint: &Blueprint,
    memory: &CodeMemory,
    cfg: &CodememConfig,
    templates: &TemplateSet,
) -> Result<(MemoryEntry, Vec<String>), CodememError> {
    #[derive(Deserialize)]
    struct SummaryReply {
        purpose: String,
        #[serde(default)]
        public_interface: Vec<InterfaceSymbol>,
        #[serde(default)]
        afferent: Vec<AfferentImport>,
        #[serde(default)]
        efferent_predicted: Vec<String>,
    }

    if !blueprint.contains_file(file) {
        return Err(CodememError::UnknownTarget(file.to_string()));
    }
    let imports_in_text = scan_imports(text);
    let prompt = templates.render(templates::SUMMARIZE_FILE, &[("file", file), ("text", text)]);

    let (reply, _retries) = call_validated_json::<SummaryReply>(
        gateway,
        templates,
        Role::Summarizer,
        templates::SUMMARIZE_FILE,
        "memory_entry",
        &prompt,
        cfg.retry_budget,
        |value| {
            let parsed: SummaryReply = parse_into(value)?;
            let mut problems = Vec::new();
            let mut names = BTreeSet::new();
            for symbol in &parsed.public_interface {
                if !names.insert(symbol.name.as_str()) {
                    problems.push(format!("duplicate interface name `{}`", symbol.name));
                }
            }
            for import in &parsed.afferent {
                if !imports_in_text.contains(&import.module) {
                    problems.push(format!(
                        "claimed import `{}` does not appear in the file text",
                        import.module
                    ));
                    continue;
                }
                let as_path = module_to_path(&import.module);
                if blueprint.contains_file(&as_path) && !memory.contains(&as_path) {
                    problems.push(format!(
                        "internal import `{}` resolves to `{as_path}` which is not in memory yet",
                        import.module
                    ));
                }
            }
            for predicted in &parsed.efferent_predicted {
                if !blueprint.contains_file(predicted) {
                    problems.push(format!(
                        "efferent prediction `{predicted}` is not a planned file"
                    ));
                }
            }
            if problems.is_empty() {
                Ok(parsed)
            } else {
                Err(problems)
            }
        },
    )?;

    // Entries whose predictions missed this consumer are reported, never
    // rewritten.
    let mut warnings = Vec::new();
    for import in &reply.afferent {
        let as_path = module_to_path(&import.module);
        if let Some(entry) = memory.entries.get(&as_path) {
            if !entry
                .dependency_edges
                .efferent_predicted
                .iter()
                .any(|p| p == file)
            {
                warnings.push(format!(
                    "`{as_path}` did not predict `{file}` among its consumers"
                ));
            }
        }
    }

    Ok((
        MemoryEntry {
            file: file.to_string(),
            purpose: reply.purpose,
            public_interface: reply.public_interface,
            dependency_edges: DependencyEdges {
                afferent: reply.afferent,
                efferent_predicted: reply.efferent_predicted,
            },
        },
        warnings,
    ))
}

/// Files whose blueprint-declared dependencies are all implemented, in
/// (stage, hierarchy) order.
fn eligible_targets<'a>(memory: &CodeMemory, blueprint: &'a Blueprint) -> Vec<&'a str> {
    let mut eligible: Vec<&str> = blueprint
        .file_hierarchy
        .iter()
        .map(|f| f.path.as_str())
        .filter(|path| !memory.contains(path))
        .filter(|path| {
            blueprint
                .spec_for(path)
                .map(|s| s.depends_on.iter().all(|d| memory.contains(d)))
                .unwrap_or(true)
        })
        .collect();
    eligible.sort_by_key(|path| {
        (
            blueprint.stage_index(path).unwrap_or(usize::MAX),
            blueprint.hierarchy_index(path).unwrap_or(usize::MAX),
        )
    });
    eligible
}

/// Outcome of a next-target selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NextTarget {
    /// `None` when every planned file is implemented.
    pub target: Option<String>,
    /// True when the model suggestion was invalid and topological order took
    /// over.
    pub overridden: bool,
}

/// Picks the next unimplemented file whose dependencies are all in memory.
///
/// The model proposes a path; proposals outside the eligible set are
/// overridden by topological order with stage-priority tiebreak. Returns
/// done (target = None) without consulting the model when everything is
/// implemented, and fails with `CyclicDependency` when files remain but none
/// is eligible.
pub fn select_next_target(
    memory: &CodeMemory,
    blueprint: &Blueprint,
    gateway: &LlmGateway,
    templates: &TemplateSet,
) -> Result<NextTarget, CodememError> {
    let unimplemented: Vec<&str> = blueprint
        .file_hierarchy
        .iter()
        .map(|f| f.path.as_str())
        .filter(|p| !memory.contains(p))
        .collect();
    if unimplemented.is_empty() {
        return Ok(NextTarget {
            target: None,
            overridden: false,
        });
    }
    let eligible = eligible_targets(memory, blueprint);
    if eligible.is_empty() {
        return Err(CodememError::CyclicDependency {
            remaining: unimplemented.iter().map(|s| s.to_string()).collect(),
        });
    }

    let eligible_rendered: String = eligible.iter().map(|f| format!("- {f}\n")).collect();
    let implemented_rendered = if memory.generation_order.is_empty() {
        "(none)".to_string()
    } else {
        memory.generation_order.join(", ")
    };
    let prompt = templates.render(
        templates::NEXT_TARGET,
        &[
            ("eligible", eligible_rendered.as_str()),
            ("implemented", implemented_rendered.as_str()),
        ],
    );
    let request = PromptRequest::new(
        Role::Planner,
        templates::NEXT_TARGET,
        prompt,
        gateway.tokenizer().as_ref(),
        Some("next_target"),
    );
    let reply = gateway.complete(&request)?;
    let suggestion = extract_json(&reply)
        .and_then(|v| v["next"].as_str().map(str::to_string));

    match suggestion {
        Some(path) if eligible.contains(&path.as_str()) => Ok(NextTarget {
            target: Some(path),
            overridden: false,
        }),
        _ => Ok(NextTarget {
            target: Some(eligible[0].to_string()),
            overridden: true,
        }),
    }
}

/// Topological peek: the file that would be eligible next once `assuming`
/// is implemented. Used as the advisory next-target hint in prompts.
pub(crate) fn peek_after(
    memory: &CodeMemory,
    assuming: &str,
    blueprint: &Blueprint,
) -> Option<String> {
    let mut projected = memory.clone();
    let entry = MemoryEntry {
        file: assuming.to_string(),
        purpose: String::new(),
        public_interface: Vec::new(),
        dependency_edges: DependencyEdges::default(),
    };
    projected = update_memory(projected, entry).ok()?;
    eligible_targets(&projected, blueprint)
        .first()
        .map(|s| s.to_string())
}

#[cfg(test)]
mod tests;
