//! The implementation blueprint: the structured specification distilled from
//! the source document that drives generation and verification.
//!
//! A blueprint is self-contained: the pseudocode and equation items that
//! component specs link to are embedded in the blueprint itself, so the
//! validity of every link can be checked without the analysis schemas.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub const BLUEPRINT_SCHEMA_VERSION: u32 = 1;

/// A planned file with its implementation priority.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PlannedFile {
    pub path: String,
    pub priority: u32,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentKind {
    Class,
    Function,
    Constant,
    Manifest,
}

/// One class/function/constant declaration inside a component spec.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ComponentDecl {
    pub kind: ComponentKind,
    pub name: String,
    #[serde(default)]
    pub signature: String,
    #[serde(default)]
    pub purpose: String,
}

/// Per-file specification: declared components, links into the algorithm
/// item table, and the internal files this one imports from.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct ComponentSpec {
    #[serde(default)]
    pub components: Vec<ComponentDecl>,
    #[serde(default)]
    pub linked_items: Vec<String>,
    #[serde(default)]
    pub depends_on: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmItemKind {
    Pseudocode,
    Equation,
}

/// A pseudocode box or equation carried verbatim from the analysis phase.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct AlgorithmItem {
    pub kind: AlgorithmItemKind,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Metric {
    pub name: String,
    pub value: String,
}

/// Formal plan for validating the implementation.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct VerificationProtocol {
    #[serde(default)]
    pub experimental_setup: String,
    #[serde(default)]
    pub target_metrics: Vec<Metric>,
    #[serde(default)]
    pub success_criteria: Vec<String>,
    /// Entry command template; `{scale}` is substituted with the configured
    /// scale-down factor at execution time.
    #[serde(default)]
    pub entry_command: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Dependency {
    pub name: String,
    #[serde(default)]
    pub version: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct ExecutionEnvironment {
    #[serde(default)]
    pub dependencies: Vec<Dependency>,
    #[serde(default)]
    pub hardware_notes: String,
}

/// One stage of the phased implementation roadmap.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Stage {
    pub name: String,
    pub files: Vec<String>,
    #[serde(default)]
    pub check: String,
}

/// Five-section machine-readable specification driving phases 2 and 3.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Blueprint {
    pub schema_version: u32,
    pub file_hierarchy: Vec<PlannedFile>,
    pub component_specs: BTreeMap<String, ComponentSpec>,
    pub algorithm_items: BTreeMap<String, AlgorithmItem>,
    pub verification_protocol: VerificationProtocol,
    pub execution_environment: ExecutionEnvironment,
    pub staged_plan: Vec<Stage>,
}

/// One invariant violation found by [`validate_blueprint`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Violation {
    pub code: String,
    pub message: String,
}

/// Validation report; empty iff the blueprint satisfies every invariant.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl Blueprint {
    pub fn file_set(&self) -> BTreeSet<&str> {
        self.file_hierarchy.iter().map(|f| f.path.as_str()).collect()
    }

    pub fn contains_file(&self, path: &str) -> bool {
        self.file_hierarchy.iter().any(|f| f.path == path)
    }

    /// Position of a file in the hierarchy (document order).
    pub fn hierarchy_index(&self, path: &str) -> Option<usize> {
        self.file_hierarchy.iter().position(|f| f.path == path)
    }

    /// Index of the stage containing a file.
    pub fn stage_index(&self, path: &str) -> Option<usize> {
        self.staged_plan
            .iter()
            .position(|s| s.files.iter().any(|f| f == path))
    }

    pub fn spec_for(&self, path: &str) -> Option<&ComponentSpec> {
        self.component_specs.get(path)
    }

    /// Deterministic serialization used for prompts and artifacts.
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("blueprint serializes")
    }
}

/// Checks every blueprint invariant and reports all violations.
pub fn validate_blueprint(blueprint: &Blueprint) -> ValidationReport {
    let mut violations = Vec::new();
    let files = blueprint.file_set();

    let mut seen = BTreeSet::new();
    for file in &blueprint.file_hierarchy {
        if !seen.insert(file.path.as_str()) {
            violations.push(Violation {
                code: "duplicate-file".into(),
                message: format!("file `{}` appears twice in the hierarchy", file.path),
            });
        }
    }

    for (path, spec) in &blueprint.component_specs {
        if !files.contains(path.as_str()) {
            violations.push(Violation {
                code: "orphan-spec".into(),
                message: format!("component spec `{path}` has no file in the hierarchy"),
            });
        }
        for item in &spec.linked_items {
            if !blueprint.algorithm_items.contains_key(item) {
                violations.push(Violation {
                    code: "unknown-item".into(),
                    message: format!("spec `{path}` links unknown algorithm item `{item}`"),
                });
            }
        }
        for dep in &spec.depends_on {
            if !files.contains(dep.as_str()) {
                violations.push(Violation {
                    code: "unknown-dependency".into(),
                    message: format!("spec `{path}` depends on `{dep}` which is not planned"),
                });
            }
        }
    }

    let mut staged: BTreeMap<&str, &str> = BTreeMap::new();
    for (i, stage) in blueprint.staged_plan.iter().enumerate() {
        for file in &stage.files {
            if !files.contains(file.as_str()) {
                violations.push(Violation {
                    code: "unknown-staged-file".into(),
                    message: format!("stage `{}` lists unplanned file `{file}`", stage.name),
                });
            }
            if let Some(previous) = staged.insert(file.as_str(), stage.name.as_str()) {
                violations.push(Violation {
                    code: "stage-overlap".into(),
                    message: format!(
                        "file `{file}` appears in stages `{previous}` and `{}` (stage {i})",
                        stage.name
                    ),
                });
            }
        }
    }
    for file in &files {
        if !staged.contains_key(file) {
            violations.push(Violation {
                code: "unstaged-file".into(),
                message: format!("file `{file}` is not covered by any stage"),
            });
        }
    }

    ValidationReport { violations }
}
