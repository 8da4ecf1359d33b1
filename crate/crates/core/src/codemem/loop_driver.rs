//! The sequential generation loop: select target, formulate context,
//! generate, summarize, update memory. Exactly one iteration per planned
//! file, or `CyclicDependency` when the blueprint graph cannot be ordered.

use std::path::Path;

use super::{
    formulate_context, generate_file, peek_after, select_next_target, summarize_file,
    update_memory, CodeMemory, CodememConfig, CodememError,
};
use crate::blueprint::Blueprint;
use crate::coderag::{decide_retrieval, retrieve, RagIndex, RetrievalPolicy};
use crate::gateway::LlmGateway;
use crate::templates::TemplateSet;

/// What a full generation run produced, beyond the files on disk.
#[derive(Debug)]
pub struct GenerationOutcome {
    pub memory: CodeMemory,
    pub steps: usize,
    pub warnings: Vec<String>,
    /// Largest rendered context observed, in tokens.
    pub max_context_tokens: u64,
    /// Steps whose memory selection had to drop entries to fit the budget.
    pub truncation_events: usize,
    /// Steps that injected retrieved reference context.
    pub retrievals: usize,
}

/// Runs the generation loop over every blueprint file.
///
/// Passing `rag_index = None` disables retrieval; an empty index behaves
/// identically. Memory snapshots are persisted to `memory_dir` after every
/// step when given.
#[allow(clippy::too_many_arguments)]
pub fn run_generation(
    blueprint: &Blueprint,
    gateway: &LlmGateway,
    rag_index: Option<&RagIndex>,
    retrieval_policy: &RetrievalPolicy,
    repo_root: &Path,
    memory_dir: Option<&Path>,
    cfg: &CodememConfig,
    templates: &TemplateSet,
) -> Result<GenerationOutcome, CodememError> {
    let total = blueprint.file_hierarchy.len();
    let mut memory = CodeMemory::new();
    let mut warnings = Vec::new();
    let mut max_context_tokens = 0u64;
    let mut truncation_events = 0usize;
    let mut retrievals = 0usize;

    if let Some(dir) = memory_dir {
        std::fs::create_dir_all(dir).map_err(|source| CodememError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }

    for step in 1..=total {
        let next = select_next_target(&memory, blueprint, gateway, templates)?;
        let Some(target) = next.target else {
            break;
        };
        if next.overridden {
            warnings.push(format!(
                "step {step}: model target suggestion was invalid; took `{target}` by topological order"
            ));
        }

        let retrieval = match rag_index {
            Some(index) if decide_retrieval(&target, blueprint, index, retrieval_policy) => {
                retrievals += 1;
                Some(retrieve(index, &target).map_err(|e| CodememError::SchemaParse {
                    attempts: 0,
                    problems: vec![e.to_string()],
                })?)
            }
            _ => None,
        };

        let hint = peek_after(&memory, &target, blueprint);
        let ctx = formulate_context(
            blueprint,
            &memory,
            &target,
            retrieval,
            hint,
            cfg,
            templates,
            gateway.tokenizer().as_ref(),
        )?;
        max_context_tokens = max_context_tokens.max(ctx.token_count);
        if ctx.selection.truncated {
            truncation_events += 1;
        }

        let (_path, text) = generate_file(&ctx, gateway, repo_root, cfg)?;
        let (entry, summary_warnings) =
            summarize_file(&target, &text, gateway, blueprint, &memory, cfg, templates)?;
        warnings.extend(summary_warnings);
        memory = update_memory(memory, entry)?;

        if let Some(dir) = memory_dir {
            let path = dir.join(format!("{step:04}.json"));
            let json = serde_json::to_string_pretty(&memory).expect("memory serializes");
            std::fs::write(&path, json).map_err(|source| CodememError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
    }

    Ok(GenerationOutcome {
        steps: memory.generation_order.len(),
        memory,
        warnings,
        max_context_tokens,
        truncation_events,
        retrievals,
    })
}
