//! Reference repository mining and adaptive retrieval.
//!
//! Local reference repositories are filtered, summarized, and mapped against
//! the blueprint into relationship tuples (source file, target file, type,
//! confidence, context). During generation a deterministic gate decides per
//! target whether to inject the highest-confidence context.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blueprint::Blueprint;
use crate::gateway::{GatewayError, LlmGateway, Role};
use crate::reply::{call_validated_json, parse_into, ValidatedCallError};
use crate::templates::{self, TemplateSet};

#[derive(Debug, Error)]
pub enum RagError {
    #[error("repository `{0}` contains no source files")]
    EmptyRepo(PathBuf),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("reply failed schema validation after {attempts} attempts: {}", problems.join("; "))]
    SchemaParse { attempts: u32, problems: Vec<String> },
    #[error("no relationship tuple indexed for target `{0}`")]
    NoTuple(String),
    #[error("all {0} reference repositories failed to index")]
    AllReposFailed(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<ValidatedCallError> for RagError {
    fn from(e: ValidatedCallError) -> Self {
        match e {
            ValidatedCallError::Gateway(g) => RagError::Gateway(g),
            ValidatedCallError::Schema { attempts, problems } => {
                RagError::SchemaParse { attempts, problems }
            }
        }
    }
}

/// Nature of the contribution a reference file can make to a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationType {
    DirectImplementation,
    PartialPattern,
    Utility,
    Conceptual,
}

/// A code excerpt with its source span.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Snippet {
    pub path: String,
    pub start_line: usize,
    pub end_line: usize,
    pub text: String,
}

/// Actionable context attached to a relationship.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct TupleContext {
    pub snippets: Vec<Snippet>,
    pub usage_notes: String,
}

/// Mapping from a reference source file to a planned target file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationshipTuple {
    pub source_file: String,
    pub target_file: String,
    pub relation_type: RelationType,
    pub confidence: f64,
    pub context: TupleContext,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepoManifest {
    pub root: String,
    pub files_indexed: Vec<String>,
}

/// Queryable index of relationship tuples, grouped per target file with
/// confidence-descending order (source path breaks ties).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RagIndex {
    pub tuples: Vec<RelationshipTuple>,
    pub per_target: BTreeMap<String, Vec<usize>>,
    pub repo_manifest: Vec<RepoManifest>,
}

impl RagIndex {
    pub fn from_tuples(tuples: Vec<RelationshipTuple>, repo_manifest: Vec<RepoManifest>) -> Self {
        let mut per_target: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, tuple) in tuples.iter().enumerate() {
            per_target.entry(tuple.target_file.clone()).or_default().push(i);
        }
        for indices in per_target.values_mut() {
            indices.sort_by(|&a, &b| {
                tuples[b]
                    .confidence
                    .partial_cmp(&tuples[a].confidence)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(tuples[a].source_file.cmp(&tuples[b].source_file))
            });
        }
        Self {
            tuples,
            per_target,
            repo_manifest,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuples_for(&self, target: &str) -> Vec<&RelationshipTuple> {
        self.per_target
            .get(target)
            .map(|indices| indices.iter().map(|&i| &self.tuples[i]).collect())
            .unwrap_or_default()
    }
}

/// Structured summary of a reference source file (purpose, concepts,
/// public interface), mirroring the shape of a memory entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceSummary {
    pub file: String,
    pub line_count: usize,
    pub purpose: String,
    #[serde(default)]
    pub concepts: Vec<String>,
    #[serde(default)]
    pub public_interface: Vec<SummarySymbol>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummarySymbol {
    pub kind: String,
    pub name: String,
    #[serde(default)]
    pub signature: String,
    #[serde(default)]
    pub purpose: String,
}

/// Retrieved context injected into a generation prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Augmentation {
    pub source_file: String,
    pub relation_type: RelationType,
    pub confidence: f64,
    pub snippets: Vec<Snippet>,
    pub usage_notes: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RagConfig {
    /// Repair retries for schema-validated calls.
    pub retry_budget: u32,
    /// Denied repository paths (exact or prefix match).
    pub blacklist: Vec<String>,
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            retry_budget: 2,
            blacklist: Vec::new(),
        }
    }
}

/// Deterministic retrieval gate thresholds.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RetrievalPolicy {
    /// Retrieve when the fraction of declared components with signatures is
    /// below this.
    pub detail_threshold: f64,
    /// Retrieve when the target links at least this many algorithm items.
    pub complexity_threshold: usize,
}

impl Default for RetrievalPolicy {
    fn default() -> Self {
        Self {
            detail_threshold: 0.5,
            complexity_threshold: 3,
        }
    }
}

const SOURCE_EXTENSIONS: &[&str] = &[
    "py", "rs", "js", "ts", "jsx", "tsx", "java", "go", "c", "cc", "cpp", "h", "hpp", "rb", "sh",
];
const EXCLUDED_DIRS: &[&str] = &[
    ".git",
    "node_modules",
    "vendor",
    "venv",
    ".venv",
    "__pycache__",
    "target",
    "dist",
    "build",
    ".tox",
];

fn list_source_files(repo: &Path) -> Result<Vec<String>, RagError> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(repo)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| {
            !e.file_name()
                .to_str()
                .map(|n| EXCLUDED_DIRS.contains(&n))
                .unwrap_or(false)
        })
    {
        let entry = entry.map_err(|e| RagError::Io {
            path: repo.display().to_string(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let ext = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("");
        if SOURCE_EXTENSIONS.contains(&ext) {
            let rel = entry
                .path()
                .strip_prefix(repo)
                .unwrap_or(entry.path())
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            files.push(rel);
        }
    }
    files.sort();
    Ok(files)
}

fn hierarchy_listing(blueprint: &Blueprint) -> String {
    blueprint
        .file_hierarchy
        .iter()
        .map(|f| format!("- {} ({})\n", f.path, f.description))
        .collect()
}

/// Selects the repository files most relevant to the blueprint. Binary and
/// vendored paths are excluded statically before the model sees a listing;
/// selections that do not exist are dropped with a warning.
pub fn filter_relevant_files(
    repo: &Path,
    blueprint: &Blueprint,
    gateway: &LlmGateway,
    cfg: &RagConfig,
    templates: &TemplateSet,
) -> Result<(Vec<String>, Vec<String>), RagError> {
    let listing = list_source_files(repo)?;
    if listing.is_empty() {
        return Err(RagError::EmptyRepo(repo.to_path_buf()));
    }
    let files_rendered: String = listing.iter().map(|f| format!("- {f}\n")).collect();
    let prompt = templates.render(
        templates::RAG_FILTER,
        &[
            ("repo", repo.display().to_string().as_str()),
            ("hierarchy", hierarchy_listing(blueprint).as_str()),
            ("files", files_rendered.as_str()),
        ],
    );

    #[derive(Deserialize)]
    struct FilterReply {
        files: Vec<String>,
    }

    let (reply, _retries) = call_validated_json::<FilterReply>(
        gateway,
        templates,
        Role::Rag,
        templates::RAG_FILTER,
        "rag_filter",
        &prompt,
        cfg.retry_budget,
        parse_into,
    )?;

    let mut warnings = Vec::new();
    let mut selected = Vec::new();
    for file in reply.files {
        if listing.contains(&file) {
            if !selected.contains(&file) {
                selected.push(file);
            }
        } else {
            warnings.push(format!(
                "filter selected nonexistent path `{file}` in {}; dropped",
                repo.display()
            ));
        }
    }
    Ok((selected, warnings))
}

/// Summarizes one reference source file.
pub fn understand_source(
    file: &str,
    text: &str,
    gateway: &LlmGateway,
    cfg: &RagConfig,
    templates: &TemplateSet,
) -> Result<(SourceSummary, u32), RagError> {
    #[derive(Deserialize)]
    struct UnderstandReply {
        purpose: String,
        #[serde(default)]
        concepts: Vec<String>,
        #[serde(default)]
        public_interface: Vec<SummarySymbol>,
    }

    let prompt = templates.render(
        templates::RAG_UNDERSTAND,
        &[("file", file), ("text", text)],
    );
    let (reply, retries) = call_validated_json::<UnderstandReply>(
        gateway,
        templates,
        Role::Rag,
        templates::RAG_UNDERSTAND,
        "rag_understand",
        &prompt,
        cfg.retry_budget,
        |value| {
            let parsed: UnderstandReply = parse_into(value)?;
            if parsed.purpose.trim().is_empty() {
                return Err(vec!["purpose must be non-empty".to_string()]);
            }
            Ok(parsed)
        },
    )?;
    Ok((
        SourceSummary {
            file: file.to_string(),
            line_count: text.lines().count(),
            purpose: reply.purpose,
            concepts: reply.concepts,
            public_interface: reply.public_interface,
        },
        retries,
    ))
}

/// Maps a summarized reference file onto blueprint targets, validating and
/// clamping each proposed tuple. Needs the source text to extract snippet
/// excerpts.
pub fn map_relationships(
    summary: &SourceSummary,
    source_text: &str,
    blueprint: &Blueprint,
    gateway: &LlmGateway,
    cfg: &RagConfig,
    templates: &TemplateSet,
) -> Result<(Vec<RelationshipTuple>, Vec<String>), RagError> {
    #[derive(Deserialize)]
    struct RawSnippet {
        start_line: usize,
        end_line: usize,
    }
    #[derive(Deserialize)]
    struct RawTuple {
        target_file: String,
        relation_type: String,
        confidence: f64,
        #[serde(default)]
        snippets: Vec<RawSnippet>,
        #[serde(default)]
        usage_notes: String,
    }
    #[derive(Deserialize)]
    struct MapReply {
        #[serde(default)]
        tuples: Vec<RawTuple>,
    }

    let summary_json = serde_json::to_string_pretty(summary).expect("summary serializes");
    let prompt = templates.render(
        templates::RAG_MAP,
        &[
            ("file", summary.file.as_str()),
            ("summary", summary_json.as_str()),
            ("hierarchy", hierarchy_listing(blueprint).as_str()),
        ],
    );
    let (reply, _retries) = call_validated_json::<MapReply>(
        gateway,
        templates,
        Role::Rag,
        templates::RAG_MAP,
        "rag_map",
        &prompt,
        cfg.retry_budget,
        parse_into,
    )?;

    let source_lines: Vec<&str> = source_text.lines().collect();
    let mut warnings = Vec::new();
    let mut tuples = Vec::new();
    for raw in reply.tuples {
        if !blueprint.contains_file(&raw.target_file) {
            warnings.push(format!(
                "tuple from `{}` targets unplanned file `{}`; dropped",
                summary.file, raw.target_file
            ));
            continue;
        }
        let relation_type = match raw.relation_type.as_str() {
            "direct-implementation" => RelationType::DirectImplementation,
            "partial-pattern" => RelationType::PartialPattern,
            "utility" => RelationType::Utility,
            "conceptual" => RelationType::Conceptual,
            other => {
                warnings.push(format!(
                    "tuple from `{}` has unknown relation type `{other}`; dropped",
                    summary.file
                ));
                continue;
            }
        };
        let confidence = if (0.0..=1.0).contains(&raw.confidence) {
            raw.confidence
        } else {
            let clamped = raw.confidence.clamp(0.0, 1.0);
            warnings.push(format!(
                "confidence {} from `{}` clamped to {clamped}",
                raw.confidence, summary.file
            ));
            clamped
        };
        let mut snippets = Vec::new();
        for span in raw.snippets {
            if span.start_line >= 1
                && span.start_line <= span.end_line
                && span.end_line <= source_lines.len()
            {
                let text = source_lines[span.start_line - 1..span.end_line].join("\n");
                snippets.push(Snippet {
                    path: summary.file.clone(),
                    start_line: span.start_line,
                    end_line: span.end_line,
                    text,
                });
            } else {
                warnings.push(format!(
                    "snippet span {}..{} outside `{}` ({} lines); dropped",
                    span.start_line,
                    span.end_line,
                    summary.file,
                    source_lines.len()
                ));
            }
        }
        tuples.push(RelationshipTuple {
            source_file: summary.file.clone(),
            target_file: raw.target_file,
            relation_type,
            confidence,
            context: TupleContext {
                snippets,
                usage_notes: raw.usage_notes,
            },
        });
    }
    Ok((tuples, warnings))
}

/// Indexes the reference repositories: filter, understand, map, merge.
///
/// Individual repository failures are recorded as warnings; the build fails
/// only when every attempted repository fails. Zero repositories yield an
/// empty index.
pub fn build_index(
    repos: &[PathBuf],
    blueprint: &Blueprint,
    gateway: &LlmGateway,
    cfg: &RagConfig,
    templates: &TemplateSet,
) -> Result<(RagIndex, Vec<String>), RagError> {
    let mut warnings = Vec::new();
    let mut tuples = Vec::new();
    let mut manifest = Vec::new();
    let mut attempted = 0usize;
    let mut failed = 0usize;

    for repo in repos {
        let repo_str = repo.display().to_string();
        if cfg
            .blacklist
            .iter()
            .any(|denied| repo_str == *denied || repo_str.starts_with(denied))
        {
            warnings.push(format!("repository `{repo_str}` is blacklisted; skipped"));
            continue;
        }
        attempted += 1;
        match index_one_repo(repo, blueprint, gateway, cfg, templates) {
            Ok(indexed) => {
                warnings.extend(indexed.warnings);
                tuples.extend(indexed.tuples);
                manifest.push(RepoManifest {
                    root: repo_str,
                    files_indexed: indexed.files,
                });
            }
            Err(RagError::Gateway(e)) => return Err(RagError::Gateway(e)),
            Err(e) => {
                failed += 1;
                warnings.push(format!("repository `{repo_str}` failed to index: {e}"));
            }
        }
    }
    if attempted > 0 && failed == attempted {
        return Err(RagError::AllReposFailed(attempted));
    }
    Ok((RagIndex::from_tuples(tuples, manifest), warnings))
}

struct IndexedRepo {
    tuples: Vec<RelationshipTuple>,
    files: Vec<String>,
    warnings: Vec<String>,
}

fn index_one_repo(
    repo: &Path,
    blueprint: &Blueprint,
    gateway: &LlmGateway,
    cfg: &RagConfig,
    templates: &TemplateSet,
) -> Result<IndexedRepo, RagError> {
    let (files, mut warnings) = filter_relevant_files(repo, blueprint, gateway, cfg, templates)?;
    let mut tuples = Vec::new();
    for file in &files {
        let full = repo.join(file);
        let text = std::fs::read_to_string(&full).map_err(|source| RagError::Io {
            path: full.display().to_string(),
            source,
        })?;
        let (summary, _retries) = understand_source(file, &text, gateway, cfg, templates)?;
        let (file_tuples, map_warnings) =
            map_relationships(&summary, &text, blueprint, gateway, cfg, templates)?;
        warnings.extend(map_warnings);
        tuples.extend(file_tuples);
    }
    Ok(IndexedRepo {
        tuples,
        files,
        warnings,
    })
}

/// Detail score of a component spec: the fraction of declared components
/// carrying a signature (0 when nothing is declared).
fn detail_score(blueprint: &Blueprint, target: &str) -> f64 {
    match blueprint.spec_for(target) {
        Some(spec) if !spec.components.is_empty() => {
            let with_signature = spec
                .components
                .iter()
                .filter(|c| !c.signature.trim().is_empty())
                .count();
            with_signature as f64 / spec.components.len() as f64
        }
        _ => 0.0,
    }
}

/// Deterministic retrieval gate: retrieve iff the target's spec is sparse or
/// its linked-item count crosses the complexity threshold, and the index has
/// at least one tuple for it.
pub fn decide_retrieval(
    target: &str,
    blueprint: &Blueprint,
    index: &RagIndex,
    policy: &RetrievalPolicy,
) -> bool {
    if index.tuples_for(target).is_empty() {
        return false;
    }
    let linked = blueprint
        .spec_for(target)
        .map(|s| s.linked_items.len())
        .unwrap_or(0);
    detail_score(blueprint, target) < policy.detail_threshold
        || linked >= policy.complexity_threshold
}

/// Returns the context of the highest-confidence tuple for the target.
pub fn retrieve(index: &RagIndex, target: &str) -> Result<Augmentation, RagError> {
    let tuples = index.tuples_for(target);
    let top = tuples
        .first()
        .ok_or_else(|| RagError::NoTuple(target.to_string()))?;
    Ok(Augmentation {
        source_file: top.source_file.clone(),
        relation_type: top.relation_type,
        confidence: top.confidence,
        snippets: top.context.snippets.clone(),
        usage_notes: top.context.usage_notes.clone(),
    })
}
