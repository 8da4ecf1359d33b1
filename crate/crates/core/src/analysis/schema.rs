//! Structured outputs of the two analysis agents, with validation.

use serde::{Deserialize, Serialize};

use crate::doc_index::ContentIndex;

/// High-level structural and conceptual map of the document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ConceptSchema {
    pub structure_map: Vec<StructureMapEntry>,
    pub method_components: Vec<MethodComponent>,
    pub implementation_map: Vec<ImplementationMapEntry>,
    pub reproduction_roadmap: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct StructureMapEntry {
    pub section: String,
    pub summary: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct MethodComponent {
    pub name: String,
    pub responsibility: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ImplementationMapEntry {
    pub claim: String,
    pub code_requirement: String,
    /// Name of the method component this requirement belongs to.
    pub component: String,
}

/// Low-level technical detail: pseudocode, equations, architectures,
/// hyperparameters — each citing the index chunk it came from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct AlgorithmSchema {
    #[serde(default)]
    pub pseudocode_items: Vec<PseudocodeItem>,
    #[serde(default)]
    pub equations: Vec<EquationItem>,
    #[serde(default)]
    pub architectures: Vec<ArchitectureItem>,
    #[serde(default)]
    pub hyperparameters: Vec<HyperparameterItem>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PseudocodeItem {
    pub label: String,
    pub text: String,
    pub source_chunk: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct EquationItem {
    pub id: String,
    pub expression: String,
    #[serde(default)]
    pub variables: Vec<String>,
    pub source_chunk: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ArchitectureItem {
    pub name: String,
    pub layers: Vec<String>,
    pub source_chunk: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct HyperparameterItem {
    pub name: String,
    pub value: String,
    pub source_chunk: String,
}

/// Validates the concept schema invariants; returns problems (empty = valid).
pub fn validate_concept(schema: &ConceptSchema) -> Vec<String> {
    let mut problems = Vec::new();
    if schema.structure_map.is_empty() {
        problems.push("structure_map is empty".to_string());
    }
    if schema.method_components.is_empty() {
        problems.push("method_components is empty".to_string());
    }
    if schema.implementation_map.is_empty() {
        problems.push("implementation_map is empty".to_string());
    }
    if schema.reproduction_roadmap.is_empty() {
        problems.push("reproduction_roadmap is empty".to_string());
    }
    for component in &schema.method_components {
        let referenced = schema
            .implementation_map
            .iter()
            .any(|e| e.component == component.name);
        if !referenced {
            problems.push(format!(
                "method component `{}` is not referenced by any implementation_map entry",
                component.name
            ));
        }
    }
    for entry in &schema.implementation_map {
        let known = schema
            .method_components
            .iter()
            .any(|c| c.name == entry.component);
        if !known {
            problems.push(format!(
                "implementation_map entry references unknown component `{}`",
                entry.component
            ));
        }
    }
    problems
}

/// Validates the algorithm schema against the index it was built from.
pub fn validate_algorithm(schema: &AlgorithmSchema, index: &ContentIndex) -> Vec<String> {
    let mut problems = Vec::new();
    let mut check_chunk = |what: &str, chunk: &str| {
        if index.find_heading(chunk).is_none() {
            problems.push(format!("{what} cites unknown chunk `{chunk}`"));
        }
    };
    for item in &schema.pseudocode_items {
        check_chunk(&format!("pseudocode `{}`", item.label), &item.source_chunk);
    }
    for item in &schema.equations {
        check_chunk(&format!("equation `{}`", item.id), &item.source_chunk);
    }
    for item in &schema.architectures {
        check_chunk(&format!("architecture `{}`", item.name), &item.source_chunk);
    }
    for item in &schema.hyperparameters {
        check_chunk(
            &format!("hyperparameter `{}`", item.name),
            &item.source_chunk,
        );
    }

    let mut names = std::collections::BTreeSet::new();
    for item in &schema.hyperparameters {
        if !names.insert(item.name.as_str()) {
            problems.push(format!("duplicate hyperparameter `{}`", item.name));
        }
    }
    let mut ids = std::collections::BTreeSet::new();
    for label in schema
        .pseudocode_items
        .iter()
        .map(|p| p.label.as_str())
        .chain(schema.equations.iter().map(|e| e.id.as_str()))
    {
        if !ids.insert(label) {
            problems.push(format!("duplicate algorithm item id `{label}`"));
        }
    }
    problems
}
