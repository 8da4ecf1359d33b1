//! Phase 1 agents: concept analysis, algorithm analysis, and blueprint
//! synthesis.
//!
//! Both analysis agents read the document through a bounded sequence of
//! index queries driven by configurable keyword lists; prompts embed only
//! the fetched chunks plus the fixed template. Replies are structured JSON
//! validated against explicit schemas with a bounded repair-retry loop.

mod schema;

pub use schema::{
    validate_algorithm, validate_concept, AlgorithmSchema, ArchitectureItem, ConceptSchema,
    EquationItem, HyperparameterItem, ImplementationMapEntry, MethodComponent, PseudocodeItem,
    StructureMapEntry,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blueprint::{
    validate_blueprint, AlgorithmItem, AlgorithmItemKind, Blueprint, ComponentSpec,
    ExecutionEnvironment, PlannedFile, Stage, ValidationReport, VerificationProtocol,
    BLUEPRINT_SCHEMA_VERSION,
};
use crate::doc_index::{query_index, ContentIndex};
use crate::gateway::{GatewayError, LlmGateway, PromptRequest, Role};
use crate::reply::{call_validated_json, extract_json, parse_into, ValidatedCallError};
use crate::templates::{self, TemplateSet};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("content index is empty")]
    EmptyIndex,
    #[error("reply for role `{role}` failed schema validation after {attempts} attempts: {}", problems.join("; "))]
    SchemaParse {
        role: Role,
        attempts: u32,
        problems: Vec<String>,
    },
    #[error("blueprint failed validation: {} violation(s)", report.violations.len())]
    BlueprintValidation { report: ValidationReport },
}

/// Value produced by an agent plus how it got there.
#[derive(Debug, Clone)]
pub struct AgentOutcome<T> {
    pub value: T,
    /// Repair retries consumed (0 = first reply was valid).
    pub retries: u32,
    pub warnings: Vec<String>,
    /// Index queries issued.
    pub queries_used: u32,
}

/// Knobs shared by the phase-1 agents.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default)]
pub struct AnalysisConfig {
    pub concept_keywords: Vec<String>,
    pub algorithm_keywords: Vec<String>,
    /// Maximum index queries per agent run.
    pub query_budget: u32,
    /// Results taken per query.
    pub query_limit: usize,
    /// Repair retries after the first reply.
    pub retry_budget: u32,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            concept_keywords: [
                "introduction",
                "method",
                "contribution",
                "experiment",
                "result",
                "conclusion",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            algorithm_keywords: [
                "algorithm",
                "equation",
                "hyperparameter",
                "architecture",
                "training",
                "procedure",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            query_budget: 16,
            query_limit: 2,
            retry_budget: 2,
        }
    }
}

/// Web search hook for the algorithm agent. Failures degrade to offline.
pub trait WebSearch: Send + Sync {
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, String>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub url: String,
    pub snippet: String,
}

/// Chunks fetched for a prompt, in document order, trimmed to the budget.
struct FetchedChunks {
    rendered: String,
    queries_used: u32,
    dropped_for_budget: usize,
}

fn fetch_chunks(
    index: &ContentIndex,
    keywords: &[String],
    cfg: &AnalysisConfig,
    gateway: &LlmGateway,
    role: Role,
    reserve_tokens: u64,
) -> FetchedChunks {
    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    let mut queries_used = 0u32;
    for keyword in keywords.iter().take(cfg.query_budget as usize) {
        queries_used += 1;
        for hit in query_index(index, keyword, cfg.query_limit) {
            let entry = best.entry(hit.chunk).or_insert(hit.score);
            if hit.score > *entry {
                *entry = hit.score;
            }
        }
    }
    // Greedy pack by (score desc, document order), then render in document
    // order so the prompt reads like the paper.
    let mut ranked: Vec<(usize, f64)> = best.into_iter().collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let budget = gateway.budgets().budget_for(role).saturating_sub(reserve_tokens);
    let tokenizer = gateway.tokenizer();
    let mut taken: Vec<usize> = Vec::new();
    let mut used = 0u64;
    let mut dropped = 0usize;
    for (chunk_idx, _) in ranked {
        let chunk = &index.chunks[chunk_idx];
        let section = format!("### {}\n{}\n", chunk.heading, chunk.content_text());
        let cost = tokenizer.count(&section);
        if used + cost <= budget {
            used += cost;
            taken.push(chunk_idx);
        } else {
            dropped += 1;
        }
    }
    taken.sort_unstable();
    let rendered = taken
        .iter()
        .map(|&i| {
            let chunk = &index.chunks[i];
            format!("### {}\n{}\n", chunk.heading, chunk.content_text())
        })
        .collect::<String>();
    FetchedChunks {
        rendered,
        queries_used,
        dropped_for_budget: dropped,
    }
}

#[allow(clippy::too_many_arguments)]
fn complete_validated<T>(
    gateway: &LlmGateway,
    templates: &TemplateSet,
    role: Role,
    template_id: &str,
    schema_id: &str,
    base_prompt: &str,
    retry_budget: u32,
    parse: impl FnMut(&serde_json::Value) -> Result<T, Vec<String>>,
) -> Result<(T, u32), AgentError> {
    call_validated_json(
        gateway,
        templates,
        role,
        template_id,
        schema_id,
        base_prompt,
        retry_budget,
        parse,
    )
    .map_err(|e| match e {
        ValidatedCallError::Gateway(g) => AgentError::Gateway(g),
        ValidatedCallError::Schema { attempts, problems } => AgentError::SchemaParse {
            role,
            attempts,
            problems,
        },
    })
}

/// Concept agent: builds the high-level conceptual map via a segmented
/// reading of the index.
pub fn run_concept_agent(
    index: &ContentIndex,
    gateway: &LlmGateway,
    cfg: &AnalysisConfig,
    templates: &TemplateSet,
) -> Result<AgentOutcome<ConceptSchema>, AgentError> {
    if index.is_empty() {
        return Err(AgentError::EmptyIndex);
    }
    let template_tokens = gateway
        .tokenizer()
        .count(templates.get(templates::CONCEPT_ANALYSIS));
    let fetched = fetch_chunks(
        index,
        &cfg.concept_keywords,
        cfg,
        gateway,
        Role::Concept,
        template_tokens + 256,
    );
    let prompt = templates.render(
        templates::CONCEPT_ANALYSIS,
        &[("chunks", fetched.rendered.as_str())],
    );
    let (value, retries) = complete_validated(
        gateway,
        templates,
        Role::Concept,
        templates::CONCEPT_ANALYSIS,
        "concept_schema",
        &prompt,
        cfg.retry_budget,
        |v| {
            let schema: ConceptSchema = parse_into(v)?;
            let problems = validate_concept(&schema);
            if problems.is_empty() {
                Ok(schema)
            } else {
                Err(problems)
            }
        },
    )?;
    let mut warnings = Vec::new();
    if fetched.dropped_for_budget > 0 {
        warnings.push(format!(
            "concept agent dropped {} chunk(s) to fit the token budget",
            fetched.dropped_for_budget
        ));
    }
    Ok(AgentOutcome {
        value,
        retries,
        warnings,
        queries_used: fetched.queries_used,
    })
}

/// Algorithm agent: exhaustive low-level extraction with optional web
/// references. Search failures are recorded as warnings, never fatal.
pub fn run_algorithm_agent(
    index: &ContentIndex,
    gateway: &LlmGateway,
    search: Option<&dyn WebSearch>,
    cfg: &AnalysisConfig,
    templates: &TemplateSet,
) -> Result<AgentOutcome<AlgorithmSchema>, AgentError> {
    if index.is_empty() {
        return Err(AgentError::EmptyIndex);
    }
    let mut warnings = Vec::new();
    let mut references = String::new();
    if let Some(search) = search {
        for keyword in cfg.algorithm_keywords.iter().take(3) {
            match search.search(keyword) {
                Ok(hits) => {
                    for hit in hits.iter().take(2) {
                        references.push_str(&format!(
                            "- {} ({}): {}\n",
                            hit.title, hit.url, hit.snippet
                        ));
                    }
                }
                Err(e) => {
                    warnings.push(format!(
                        "web search for `{keyword}` failed ({e}); continuing offline"
                    ));
                }
            }
        }
    }
    let references_section = if references.is_empty() {
        String::new()
    } else {
        format!("## Web references\n{references}\n")
    };

    let template_tokens = gateway
        .tokenizer()
        .count(templates.get(templates::ALGORITHM_ANALYSIS));
    let reference_tokens = gateway.tokenizer().count(&references_section);
    let fetched = fetch_chunks(
        index,
        &cfg.algorithm_keywords,
        cfg,
        gateway,
        Role::Algorithm,
        template_tokens + reference_tokens + 256,
    );
    let prompt = templates.render(
        templates::ALGORITHM_ANALYSIS,
        &[
            ("chunks", fetched.rendered.as_str()),
            ("references", references_section.as_str()),
        ],
    );
    let (value, retries) = complete_validated(
        gateway,
        templates,
        Role::Algorithm,
        templates::ALGORITHM_ANALYSIS,
        "algorithm_schema",
        &prompt,
        cfg.retry_budget,
        |v| {
            let schema: AlgorithmSchema = parse_into(v)?;
            let problems = validate_algorithm(&schema, index);
            if problems.is_empty() {
                Ok(schema)
            } else {
                Err(problems)
            }
        },
    )?;
    if fetched.dropped_for_budget > 0 {
        warnings.push(format!(
            "algorithm agent dropped {} chunk(s) to fit the token budget",
            fetched.dropped_for_budget
        ));
    }
    Ok(AgentOutcome {
        value,
        retries,
        warnings,
        queries_used: fetched.queries_used,
    })
}

/// The blueprint reply shape: everything except the embedded item table,
/// which is copied from the algorithm schema during assembly.
#[derive(Debug, Deserialize)]
struct BlueprintDraft {
    file_hierarchy: Vec<PlannedFile>,
    #[serde(default)]
    component_specs: BTreeMap<String, ComponentSpec>,
    #[serde(default)]
    verification_protocol: VerificationProtocol,
    #[serde(default)]
    execution_environment: ExecutionEnvironment,
    #[serde(default)]
    staged_plan: Vec<Stage>,
}

fn algorithm_item_table(schema: &AlgorithmSchema) -> BTreeMap<String, AlgorithmItem> {
    let mut items = BTreeMap::new();
    for item in &schema.pseudocode_items {
        items.insert(
            item.label.clone(),
            AlgorithmItem {
                kind: AlgorithmItemKind::Pseudocode,
                text: item.text.clone(),
            },
        );
    }
    for item in &schema.equations {
        items.insert(
            item.id.clone(),
            AlgorithmItem {
                kind: AlgorithmItemKind::Equation,
                text: item.expression.clone(),
            },
        );
    }
    items
}

/// Code planning agent: reconciles the two schemas into the blueprint.
///
/// Invalid drafts trigger a bounded repair loop; violations that name
/// unknown algorithm items additionally re-query the index for those ids and
/// attach the excerpts to the retry prompt.
pub fn synthesize_blueprint(
    concept: &ConceptSchema,
    algorithm: &AlgorithmSchema,
    index: &ContentIndex,
    gateway: &LlmGateway,
    cfg: &AnalysisConfig,
    templates: &TemplateSet,
) -> Result<AgentOutcome<Blueprint>, AgentError> {
    let concept_json = serde_json::to_string_pretty(concept).expect("schema serializes");
    let algorithm_json = serde_json::to_string_pretty(algorithm).expect("schema serializes");
    let items = algorithm_item_table(algorithm);

    let mut extra = String::new();
    let mut queries_used = 0u32;
    let mut last_report = ValidationReport::default();
    let mut parse_problems: Vec<String> = Vec::new();

    for attempt in 0..=cfg.retry_budget {
        let mut prompt = templates.render(
            templates::BLUEPRINT_SYNTHESIS,
            &[
                ("concept", concept_json.as_str()),
                ("algorithm", algorithm_json.as_str()),
                ("extra", extra.as_str()),
            ],
        );
        if attempt > 0 {
            let problems = if parse_problems.is_empty() {
                last_report
                    .violations
                    .iter()
                    .map(|v| v.message.clone())
                    .collect::<Vec<_>>()
                    .join("\n")
            } else {
                parse_problems.join("\n")
            };
            prompt.push_str(&templates.render(
                templates::SCHEMA_REPAIR,
                &[
                    ("attempt", attempt.to_string().as_str()),
                    ("problems", problems.as_str()),
                ],
            ));
        }
        let request = PromptRequest::new(
            Role::Planner,
            templates::BLUEPRINT_SYNTHESIS,
            prompt,
            gateway.tokenizer().as_ref(),
            Some("blueprint"),
        );
        let reply = gateway.complete(&request)?;
        let Some(value) = extract_json(&reply) else {
            parse_problems = vec!["reply does not contain a JSON document".to_string()];
            continue;
        };
        let draft: BlueprintDraft = match serde_json::from_value(value) {
            Ok(d) => d,
            Err(e) => {
                parse_problems = vec![format!("schema mismatch: {e}")];
                continue;
            }
        };
        parse_problems.clear();
        let candidate = Blueprint {
            schema_version: BLUEPRINT_SCHEMA_VERSION,
            file_hierarchy: draft.file_hierarchy,
            component_specs: draft.component_specs,
            algorithm_items: items.clone(),
            verification_protocol: draft.verification_protocol,
            execution_environment: draft.execution_environment,
            staged_plan: draft.staged_plan,
        };
        let report = validate_blueprint(&candidate);
        if report.is_valid() {
            return Ok(AgentOutcome {
                value: candidate,
                retries: attempt,
                warnings: Vec::new(),
                queries_used,
            });
        }
        // Targeted re-queries for violations that name unknown items.
        for violation in &report.violations {
            if violation.code == "unknown-item" && queries_used < cfg.query_budget {
                if let Some(id) = violation.message.split('`').nth(3) {
                    queries_used += 1;
                    for hit in query_index(index, id, 1) {
                        let chunk = &index.chunks[hit.chunk];
                        extra.push_str(&format!(
                            "## Additional excerpt: {}\n{}\n",
                            chunk.heading,
                            chunk.content_text()
                        ));
                    }
                }
            }
        }
        last_report = report;
    }

    if !parse_problems.is_empty() {
        return Err(AgentError::SchemaParse {
            role: Role::Planner,
            attempts: cfg.retry_budget + 1,
            problems: parse_problems,
        });
    }
    Err(AgentError::BlueprintValidation {
        report: last_report,
    })
}
