//! Prompt templates.
//!
//! Each template is plain text with named `{placeholder}` slots filled by
//! simple substitution. Defaults are compiled in; a config directory can
//! override any of them by id (`<id>.txt`). Marker lines such as
//! `TARGET-FILE:` are part of the contract: they make prompts
//! machine-checkable and let scripted providers key their replies.

use std::collections::BTreeMap;
use std::path::Path;

pub const CONCEPT_ANALYSIS: &str = "concept_analysis";
pub const ALGORITHM_ANALYSIS: &str = "algorithm_analysis";
pub const BLUEPRINT_SYNTHESIS: &str = "blueprint_synthesis";
pub const NEXT_TARGET: &str = "next_target";
pub const GENERATE_FILE: &str = "generate_file";
pub const SUMMARIZE_FILE: &str = "summarize_file";
pub const RAG_FILTER: &str = "rag_filter";
pub const RAG_UNDERSTAND: &str = "rag_understand";
pub const RAG_MAP: &str = "rag_map";
pub const QUALITY_REVIEW: &str = "quality_review";
pub const SYNTHESIZE_MISSING: &str = "synthesize_missing";
pub const PATCH_STATIC: &str = "patch_static";
pub const PATCH_RUNTIME: &str = "patch_runtime";
pub const SCHEMA_REPAIR: &str = "schema_repair";

const DEFAULTS: &[(&str, &str)] = &[
    (
        CONCEPT_ANALYSIS,
        "You are the concept analyst for a reproduction project.\n\
         Build a high-level structural and conceptual map of the document from the \
         excerpts below. They were fetched from a heading index; do not assume any \
         other content exists.\n\n{chunks}\n\n\
         Reply with a single JSON object:\n\
         {\"structure_map\": [{\"section\": str, \"summary\": str}],\n \
         \"method_components\": [{\"name\": str, \"responsibility\": str}],\n \
         \"implementation_map\": [{\"claim\": str, \"code_requirement\": str, \"component\": str}],\n \
         \"reproduction_roadmap\": [str]}\n\
         Every implementation_map.component must name one of method_components. \
         All four lists must be non-empty.\n",
    ),
    (
        ALGORITHM_ANALYSIS,
        "You are the algorithm analyst for a reproduction project.\n\
         Extract every low-level technical detail from the excerpts below: \
         pseudocode, equations, architectures, and all hyperparameters. Cite the \
         heading of the excerpt each item came from.\n\n{chunks}\n\n{references}\
         Reply with a single JSON object:\n\
         {\"pseudocode_items\": [{\"label\": str, \"text\": str, \"source_chunk\": str}],\n \
         \"equations\": [{\"id\": str, \"expression\": str, \"variables\": [str], \"source_chunk\": str}],\n \
         \"architectures\": [{\"name\": str, \"layers\": [str], \"source_chunk\": str}],\n \
         \"hyperparameters\": [{\"name\": str, \"value\": str, \"source_chunk\": str}]}\n\
         source_chunk must be the exact heading of one excerpt. Hyperparameter \
         names must be unique.\n",
    ),
    (
        BLUEPRINT_SYNTHESIS,
        "You are the code planning agent. Synthesize one implementation blueprint \
         from the two analysis schemas below. Where they disagree on technical \
         detail, the algorithm schema wins.\n\nBLUEPRINT-SYNTHESIS\n\n\
         ## Conceptual analysis\n{concept}\n\n## Algorithmic analysis\n{algorithm}\n\n{extra}\
         Reply with a single JSON object:\n\
         {\"file_hierarchy\": [{\"path\": str, \"priority\": int, \"description\": str}],\n \
         \"component_specs\": {path: {\"components\": [{\"kind\": \"class\"|\"function\"|\"constant\"|\"manifest\", \"name\": str, \"signature\": str, \"purpose\": str}], \"linked_items\": [str], \"depends_on\": [path]}},\n \
         \"verification_protocol\": {\"experimental_setup\": str, \"target_metrics\": [{\"name\": str, \"value\": str}], \"success_criteria\": [str], \"entry_command\": str},\n \
         \"execution_environment\": {\"dependencies\": [{\"name\": str, \"version\": str}], \"hardware_notes\": str},\n \
         \"staged_plan\": [{\"name\": str, \"files\": [path], \"check\": str}]}\n\
         linked_items must reference pseudocode labels or equation ids from the \
         algorithmic analysis. Stages must cover every planned file exactly once. \
         The entry_command may use {scale} for the configured scale factor.\n",
    ),
    (
        NEXT_TARGET,
        "SELECT-NEXT-TARGET\n\
         Pick the next file to implement. Eligible files (all internal \
         dependencies already implemented):\n{eligible}\n\
         Implemented so far: {implemented}\n\
         Reply with JSON: {\"next\": \"<path>\"}\n",
    ),
    (
        GENERATE_FILE,
        "You are the coding agent. Implement exactly one file of the planned \
         repository.\n\nTARGET-FILE: {target}\n\n## Blueprint\n{blueprint}\n\n\
         ## Target specification\n{spec}\n\n## Repository memory\n{memory}\n\n{retrieval}\
         Write the complete contents of {target}. Reply with a single fenced \
         code block and nothing else.\n",
    ),
    (
        SUMMARIZE_FILE,
        "You are the summarization agent. Extract the structural essence of the \
         file just generated.\n\nSUMMARIZE-FILE: {file}\n\n```\n{text}\n```\n\n\
         Reply with a single JSON object:\n\
         {\"purpose\": str,\n \
         \"public_interface\": [{\"kind\": \"class\"|\"function\"|\"constant\", \"name\": str, \"signature\": str, \"purpose\": str}],\n \
         \"afferent\": [{\"module\": str, \"symbols\": [str]}],\n \
         \"efferent_predicted\": [path]}\n\
         afferent must list only modules actually imported by the file text. \
         efferent_predicted lists planned files expected to import this one.\n",
    ),
    (
        RAG_FILTER,
        "You are the reference mining agent.\n\nRAG-FILTER-REPO: {repo}\n\n\
         The planned repository:\n{hierarchy}\n\nCandidate source files:\n{files}\n\n\
         Select the files most relevant to the planned work. Reply with JSON: \
         {\"files\": [path]}\n",
    ),
    (
        RAG_UNDERSTAND,
        "You are the reference mining agent. Summarize this reference source \
         file.\n\nRAG-UNDERSTAND: {file}\n\n```\n{text}\n```\n\n\
         Reply with JSON: {\"purpose\": str, \"concepts\": [str], \
         \"public_interface\": [{\"kind\": str, \"name\": str, \"signature\": str, \"purpose\": str}]}\n",
    ),
    (
        RAG_MAP,
        "You are the reference mining agent. Map the summarized reference file to \
         planned files it could inform.\n\nRAG-MAP: {file}\n\n\
         ## Reference summary\n{summary}\n\n## Planned files\n{hierarchy}\n\n\
         Reply with JSON: {\"tuples\": [{\"target_file\": path, \
         \"relation_type\": \"direct-implementation\"|\"partial-pattern\"|\"utility\"|\"conceptual\", \
         \"confidence\": number, \"snippets\": [{\"start_line\": int, \"end_line\": int}], \
         \"usage_notes\": str}]}\n",
    ),
    (
        QUALITY_REVIEW,
        "You are the static analysis agent. Assess the quality of this file.\n\n\
         QUALITY-FILE: {file}\n\n```\n{text}\n```\n\n\
         Reply with JSON: {\"score\": number between 0 and 1, \
         \"issues\": [{\"location\": str, \"description\": str, \"suggestion\": str}]}\n",
    ),
    (
        SYNTHESIZE_MISSING,
        "You are the modification agent. The planned file below is missing from \
         the repository; write it from its specification.\n\n\
         SYNTHESIZE-FILE: {file}\n\n## Specification\n{spec}\n\n\
         Reply with a single fenced code block containing the complete file.\n",
    ),
    (
        PATCH_STATIC,
        "You are the modification agent. Fix the issue below with a minimal \
         line-level patch.\n\nPATCH-REQUEST static\n\nISSUE-FILE: {file}\n\
         Issue: {issue}\n\n## Current contents (numbered)\n{numbered}\n\n\
         Reply with JSON: {\"patches\": [{\"file\": path, \
         \"edits\": [{\"start\": int, \"end\": int, \"replacement\": str}], \
         \"rationale\": str}]}\n\
         Line numbers are 1-based and inclusive; use end = start - 1 to insert \
         before start. Edits must not overlap.\n",
    ),
    (
        PATCH_RUNTIME,
        "You are the sandbox repair agent. The run below failed; produce minimal \
         line-level patches.\n\nPATCH-REQUEST runtime\n\nCommand: {command}\n\n\
         ## Parsed error records\n{errors}\n\n## Stderr\n{stderr}\n\n\
         ## Involved files (numbered)\n{numbered}\n\n\
         Reply with JSON: {\"patches\": [{\"file\": path, \
         \"edits\": [{\"start\": int, \"end\": int, \"replacement\": str}], \
         \"rationale\": str}]}\n\
         Line numbers are 1-based and inclusive; use end = start - 1 to insert \
         before start. Edits must not overlap.\n",
    ),
    (
        SCHEMA_REPAIR,
        "\nREPAIR-ATTEMPT {attempt}\nYour previous reply was rejected:\n{problems}\n\
         Reply again, following the required format exactly.\n",
    ),
];

/// Template store: compiled-in defaults plus optional per-id overrides.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let templates = DEFAULTS
            .iter()
            .map(|(id, text)| (id.to_string(), text.to_string()))
            .collect();
        Self { templates }
    }
}

impl TemplateSet {
    /// Loads `<id>.txt` overrides from a directory on top of the defaults.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::default();
        if dir.is_dir() {
            for entry in std::fs::read_dir(dir)? {
                let entry = entry?;
                let path = entry.path();
                if path.extension().and_then(|e| e.to_str()) == Some("txt") {
                    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                        let text = std::fs::read_to_string(&path)?;
                        set.templates.insert(stem.to_string(), text);
                    }
                }
            }
        }
        Ok(set)
    }

    pub fn get(&self, id: &str) -> &str {
        self.templates
            .get(id)
            .unwrap_or_else(|| panic!("unknown template id `{id}`"))
    }

    /// Renders a template by substituting `{key}` slots.
    ///
    /// Unused slots in `vars` are ignored; unknown slots in the template are
    /// left verbatim (the blueprint synthesis template legitimately carries
    /// a literal `{scale}`).
    pub fn render(&self, id: &str, vars: &[(&str, &str)]) -> String {
        let mut text = self.get(id).to_string();
        for (key, value) in vars {
            text = text.replace(&format!("{{{key}}}"), value);
        }
        text
    }
}
