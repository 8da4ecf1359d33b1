use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use super::*;
use crate::blueprint::{
    ComponentSpec, ExecutionEnvironment, PlannedFile, Stage, VerificationProtocol,
    BLUEPRINT_SCHEMA_VERSION,
};
use crate::coderag::{Augmentation, RelationType, Snippet};
use crate::gateway::{BackoffConfig, Playbook, PlaybookRule, RoleBudgets, ScriptedProvider};
use crate::tokens::CharQuotient;

fn gateway_with(rules: Vec<PlaybookRule>) -> LlmGateway {
    let provider = ScriptedProvider::from_playbook(Playbook { rules }, Path::new(".")).unwrap();
    LlmGateway::live(
        Box::new(provider),
        RoleBudgets::default(),
        BackoffConfig {
            attempts: 1,
            base_delay_ms: 1,
        },
        Arc::new(CharQuotient::default()),
    )
}

/// Blueprint from (path, depends_on) pairs, one stage per file in order.
fn blueprint_of(files: &[(&str, &[&str])]) -> Blueprint {
    let mut component_specs = BTreeMap::new();
    let mut hierarchy = Vec::new();
    let mut stages = Vec::new();
    for (i, (path, deps)) in files.iter().enumerate() {
        hierarchy.push(PlannedFile {
            path: path.to_string(),
            priority: i as u32 + 1,
            description: format!("module {path}"),
        });
        component_specs.insert(
            path.to_string(),
            ComponentSpec {
                components: vec![],
                linked_items: vec![],
                depends_on: deps.iter().map(|d| d.to_string()).collect(),
            },
        );
        stages.push(Stage {
            name: format!("stage-{}", i + 1),
            files: vec![path.to_string()],
            check: String::new(),
        });
    }
    Blueprint {
        schema_version: BLUEPRINT_SCHEMA_VERSION,
        file_hierarchy: hierarchy,
        component_specs,
        algorithm_items: BTreeMap::new(),
        verification_protocol: VerificationProtocol::default(),
        execution_environment: ExecutionEnvironment::default(),
        staged_plan: stages,
    }
}

fn entry(file: &str, efferent: &[&str]) -> MemoryEntry {
    MemoryEntry {
        file: file.to_string(),
        purpose: format!("purpose of {file}"),
        public_interface: vec![],
        dependency_edges: DependencyEdges {
            afferent: vec![],
            efferent_predicted: efferent.iter().map(|s| s.to_string()).collect(),
        },
    }
}

fn memory_of(entries: Vec<MemoryEntry>) -> CodeMemory {
    let mut memory = CodeMemory::new();
    for e in entries {
        memory = update_memory(memory, e).unwrap();
    }
    memory
}

fn tokenizer() -> CharQuotient {
    CharQuotient::default()
}

#[test]
fn empty_memory_selects_nothing() {
    let blueprint = blueprint_of(&[("a.py", &[])]);
    let selection =
        select_relevant_memory(&CodeMemory::new(), "a.py", &blueprint, 1_000, &tokenizer());
    assert!(selection.entries.is_empty());
    assert!(!selection.truncated);
}

#[test]
fn selection_filters_to_declared_dependencies() {
    let blueprint = blueprint_of(&[
        ("a.py", &[]),
        ("b.py", &[]),
        ("c.py", &[]),
        ("d.py", &["a.py", "b.py"]),
    ]);
    let memory = memory_of(vec![entry("a.py", &[]), entry("b.py", &[]), entry("c.py", &[])]);
    let selection = select_relevant_memory(&memory, "d.py", &blueprint, 10_000, &tokenizer());
    let files: Vec<&str> = selection.entries.iter().map(|e| e.file.as_str()).collect();
    assert_eq!(files, vec!["a.py", "b.py"]);
}

#[test]
fn predictors_rank_after_dependencies() {
    let blueprint = blueprint_of(&[
        ("a.py", &[]),
        ("b.py", &[]),
        ("c.py", &["b.py"]),
    ]);
    // a.py predicted c.py as a consumer but is not a declared dependency.
    let memory = memory_of(vec![entry("a.py", &["c.py"]), entry("b.py", &[])]);
    let selection = select_relevant_memory(&memory, "c.py", &blueprint, 10_000, &tokenizer());
    let files: Vec<&str> = selection.entries.iter().map(|e| e.file.as_str()).collect();
    assert_eq!(files, vec!["b.py", "a.py"]);
}

#[test]
fn budget_truncation_keeps_top_ranked_entries() {
    // 50 entries: the target depends on the first five; the rest predict it.
    let mut files: Vec<(String, Vec<&str>)> = Vec::new();
    for i in 0..50 {
        files.push((format!("m{i:02}.py", i = i), vec![]));
    }
    let mut spec_files: Vec<(&str, &[&str])> = files
        .iter()
        .map(|(p, _)| (p.as_str(), [].as_slice()))
        .collect();
    let deps: Vec<&str> = files.iter().take(5).map(|(p, _)| p.as_str()).collect();
    let target_deps: &[&str] = &deps;
    spec_files.push(("target.py", target_deps));
    let blueprint = blueprint_of(&spec_files);

    let mut entries = Vec::new();
    for (path, _) in &files {
        entries.push(entry(path, &["target.py"]));
    }
    let memory = memory_of(entries);

    // Budget sized for roughly three rendered entries.
    let one_entry_tokens = tokenizer().count(&super::render_memory_entry(&entry("m00.py", &["target.py"])));
    let budget = one_entry_tokens * 3 + 2;
    let selection = select_relevant_memory(&memory, "target.py", &blueprint, budget, &tokenizer());
    assert!(selection.truncated);
    assert!(!selection.entries.is_empty());
    // Hand-ranked oracle: dependencies in hierarchy order come first.
    let files_selected: Vec<&str> = selection.entries.iter().map(|e| e.file.as_str()).collect();
    let expected: Vec<&str> = deps.iter().take(files_selected.len()).copied().collect();
    assert_eq!(files_selected, expected);
}

#[test]
fn first_file_context_has_zero_summaries() {
    let blueprint = blueprint_of(&[("a.py", &[]), ("b.py", &["a.py"])]);
    let ctx = formulate_context(
        &blueprint,
        &CodeMemory::new(),
        "a.py",
        None,
        None,
        &CodememConfig::default(),
        &TemplateSet::default(),
        &tokenizer(),
    )
    .unwrap();
    assert!(ctx.selection.entries.is_empty());
    assert!(ctx.rendered_prompt.contains("no files implemented yet"));
    assert!(ctx.token_count <= CodememConfig::default().context_budget);
}

#[test]
fn mid_run_context_embeds_exactly_the_dependencies() {
    let blueprint = blueprint_of(&[
        ("a.py", &[]),
        ("b.py", &[]),
        ("c.py", &[]),
        ("d.py", &[]),
        ("e.py", &["a.py", "b.py", "c.py"]),
    ]);
    let memory = memory_of(vec![
        entry("a.py", &[]),
        entry("b.py", &[]),
        entry("c.py", &[]),
        entry("d.py", &[]),
    ]);
    let ctx = formulate_context(
        &blueprint,
        &memory,
        "e.py",
        None,
        None,
        &CodememConfig::default(),
        &TemplateSet::default(),
        &tokenizer(),
    )
    .unwrap();
    assert_eq!(ctx.selection.entries.len(), 3);
    assert!(ctx.rendered_prompt.contains("### a.py"));
    assert!(!ctx.rendered_prompt.contains("### d.py"));
}

#[test]
fn retrieval_augmentation_appears_in_the_prompt() {
    let blueprint = blueprint_of(&[("a.py", &[])]);
    let augmentation = Augmentation {
        source_file: "ref/adam.py".into(),
        relation_type: RelationType::DirectImplementation,
        confidence: 0.9,
        snippets: vec![Snippet {
            path: "ref/adam.py".into(),
            start_line: 1,
            end_line: 2,
            text: "def update(w, g):\n    return w - 0.1 * g".into(),
        }],
        usage_notes: "adapt the update rule".into(),
    };
    let ctx = formulate_context(
        &blueprint,
        &CodeMemory::new(),
        "a.py",
        Some(augmentation),
        None,
        &CodememConfig::default(),
        &TemplateSet::default(),
        &tokenizer(),
    )
    .unwrap();
    assert!(ctx.rendered_prompt.contains("## Reference material"));
    assert!(ctx.rendered_prompt.contains("ref/adam.py"));
    assert!(ctx.rendered_prompt.contains("adapt the update rule"));
}

#[test]
fn oversized_base_context_is_rejected() {
    let blueprint = blueprint_of(&[("a.py", &[])]);
    let cfg = CodememConfig {
        context_budget: 10,
        retry_budget: 0,
    };
    let err = formulate_context(
        &blueprint,
        &CodeMemory::new(),
        "a.py",
        None,
        None,
        &cfg,
        &TemplateSet::default(),
        &tokenizer(),
    )
    .unwrap_err();
    assert!(matches!(err, CodememError::BudgetExceeded { .. }));
}

#[test]
fn unknown_target_is_rejected() {
    let blueprint = blueprint_of(&[("a.py", &[])]);
    let err = formulate_context(
        &blueprint,
        &CodeMemory::new(),
        "ghost.py",
        None,
        None,
        &CodememConfig::default(),
        &TemplateSet::default(),
        &tokenizer(),
    )
    .unwrap_err();
    assert!(matches!(err, CodememError::UnknownTarget(_)));
}

fn context_for(blueprint: &Blueprint, target: &str) -> GenerationContext {
    formulate_context(
        blueprint,
        &CodeMemory::new(),
        target,
        None,
        None,
        &CodememConfig::default(),
        &TemplateSet::default(),
        &tokenizer(),
    )
    .unwrap()
}

#[test]
fn generation_extracts_only_the_fenced_code() {
    let blueprint = blueprint_of(&[("a.py", &[])]);
    let gateway = gateway_with(vec![PlaybookRule {
        role: Role::Coder,
        contains: None,
        replies: vec!["Sure, here it is:\n```python\nprint('ok')\n```\nHope that helps!".into()],
        reply_files: vec![],
    }]);
    let dir = tempfile::tempdir().unwrap();
    let (path, text) = generate_file(
        &context_for(&blueprint, "a.py"),
        &gateway,
        dir.path(),
        &CodememConfig::default(),
    )
    .unwrap();
    assert_eq!(text, "print('ok')\n");
    assert_eq!(std::fs::read_to_string(path).unwrap(), "print('ok')\n");
}

#[test]
fn empty_replies_exhaust_into_empty_generation() {
    let blueprint = blueprint_of(&[("a.py", &[])]);
    let gateway = gateway_with(vec![PlaybookRule {
        role: Role::Coder,
        contains: None,
        replies: vec!["".into()],
        reply_files: vec![],
    }]);
    let dir = tempfile::tempdir().unwrap();
    let cfg = CodememConfig {
        context_budget: 16_000,
        retry_budget: 1,
    };
    let err = generate_file(&context_for(&blueprint, "a.py"), &gateway, dir.path(), &cfg)
        .unwrap_err();
    match err {
        CodememError::EmptyGeneration { attempts, .. } => assert_eq!(attempts, 2),
        other => panic!("expected empty generation, got {other}"),
    }
}

const CLASS_FILE: &str = "from config import get_config\n\nclass Runner:\n    def start(self):\n        pass\n\n    def stop(self):\n        pass\n";

#[test]
fn summary_lists_the_class_with_its_methods() {
    // Lexical oracle over the fixture text: one class, two defs, one import.
    let defs: Vec<&str> = CLASS_FILE
        .lines()
        .filter(|l| l.trim_start().starts_with("def "))
        .collect();
    assert_eq!(defs.len(), 2);
    assert!(CLASS_FILE.contains("from config import"));

    let blueprint = blueprint_of(&[("config.py", &[]), ("runner.py", &["config.py"])]);
    let memory = memory_of(vec![entry("config.py", &["runner.py"])]);
    let reply = serde_json::json!({
        "purpose": "runs the experiment",
        "public_interface": [
            {"kind": "class", "name": "Runner", "signature": "Runner()", "purpose": "lifecycle: start(), stop()"}
        ],
        "afferent": [{"module": "config", "symbols": ["get_config"]}],
        "efferent_predicted": [],
    })
    .to_string();
    let gateway = gateway_with(vec![PlaybookRule {
        role: Role::Summarizer,
        contains: None,
        replies: vec![reply],
        reply_files: vec![],
    }]);
    let (entry, warnings) = summarize_file(
        "runner.py",
        CLASS_FILE,
        &gateway,
        &blueprint,
        &memory,
        &CodememConfig::default(),
        &TemplateSet::default(),
    )
    .unwrap();
    assert_eq!(entry.public_interface.len(), 1);
    assert_eq!(entry.public_interface[0].name, "Runner");
    assert_eq!(entry.dependency_edges.afferent[0].module, "config");
    assert!(warnings.is_empty());
}

#[test]
fn file_without_imports_gets_empty_afferent_list() {
    let blueprint = blueprint_of(&[("util.py", &[])]);
    let reply = serde_json::json!({
        "purpose": "helpers",
        "public_interface": [],
        "afferent": [],
        "efferent_predicted": [],
    })
    .to_string();
    let gateway = gateway_with(vec![PlaybookRule {
        role: Role::Summarizer,
        contains: None,
        replies: vec![reply],
        reply_files: vec![],
    }]);
    let (entry, _) = summarize_file(
        "util.py",
        "X = 1\n",
        &gateway,
        &blueprint,
        &CodeMemory::new(),
        &CodememConfig::default(),
        &TemplateSet::default(),
    )
    .unwrap();
    assert!(entry.dependency_edges.afferent.is_empty());
}

#[test]
fn claimed_phantom_import_is_rejected_then_repaired() {
    let blueprint = blueprint_of(&[("util.py", &[])]);
    let bad = serde_json::json!({
        "purpose": "helpers",
        "public_interface": [],
        "afferent": [{"module": "os", "symbols": []}],
        "efferent_predicted": [],
    })
    .to_string();
    let good = serde_json::json!({
        "purpose": "helpers",
        "public_interface": [],
        "afferent": [],
        "efferent_predicted": [],
    })
    .to_string();
    let gateway = gateway_with(vec![PlaybookRule {
        role: Role::Summarizer,
        contains: None,
        replies: vec![bad, good],
        reply_files: vec![],
    }]);
    let (entry, _) = summarize_file(
        "util.py",
        "X = 1\n",
        &gateway,
        &blueprint,
        &CodeMemory::new(),
        &CodememConfig::default(),
        &TemplateSet::default(),
    )
    .unwrap();
    assert!(entry.dependency_edges.afferent.is_empty());
    // Two gateway calls: initial reply rejected, repair accepted.
    assert_eq!(gateway.records().len(), 2);
}

#[test]
fn missed_consumer_predictions_are_reported_not_rewritten() {
    let blueprint = blueprint_of(&[("config.py", &[]), ("app.py", &["config.py"])]);
    // config.py predicted nobody.
    let memory = memory_of(vec![entry("config.py", &[])]);
    let reply = serde_json::json!({
        "purpose": "app",
        "public_interface": [],
        "afferent": [{"module": "config", "symbols": []}],
        "efferent_predicted": [],
    })
    .to_string();
    let gateway = gateway_with(vec![PlaybookRule {
        role: Role::Summarizer,
        contains: None,
        replies: vec![reply],
        reply_files: vec![],
    }]);
    let before = memory.entries["config.py"].clone();
    let (_, warnings) = summarize_file(
        "app.py",
        "import config\n",
        &gateway,
        &blueprint,
        &memory,
        &CodememConfig::default(),
        &TemplateSet::default(),
    )
    .unwrap();
    assert!(warnings.iter().any(|w| w.contains("did not predict")));
    assert_eq!(memory.entries["config.py"], before);
}

#[test]
fn memory_grows_by_exactly_one() {
    let m0 = CodeMemory::new();
    let m1 = update_memory(m0, entry("a.py", &[])).unwrap();
    assert_eq!(m1.len(), 1);
    assert_eq!(m1.generation_order, vec!["a.py"]);
    let err = update_memory(m1.clone(), entry("a.py", &[])).unwrap_err();
    assert!(matches!(err, CodememError::DuplicateFile(_)));
    assert_eq!(m1.len(), 1);
}

fn done_gateway() -> LlmGateway {
    gateway_with(vec![PlaybookRule {
        role: Role::Planner,
        contains: None,
        replies: vec!["{\"next\": \"auto\"}".into()],
        reply_files: vec![],
    }])
}

#[test]
fn linear_chain_selects_the_successor() {
    let blueprint = blueprint_of(&[("a.py", &[]), ("b.py", &["a.py"]), ("c.py", &["b.py"])]);
    let memory = memory_of(vec![entry("a.py", &[])]);
    let next = select_next_target(&memory, &blueprint, &done_gateway(), &TemplateSet::default())
        .unwrap();
    assert_eq!(next.target.as_deref(), Some("b.py"));
}

#[test]
fn all_done_returns_done_without_a_model_call() {
    let blueprint = blueprint_of(&[("a.py", &[])]);
    let memory = memory_of(vec![entry("a.py", &[])]);
    let gateway = done_gateway();
    let next =
        select_next_target(&memory, &blueprint, &gateway, &TemplateSet::default()).unwrap();
    assert_eq!(next.target, None);
    assert!(gateway.records().is_empty());
}

#[test]
fn cyclic_blueprint_aborts() {
    let blueprint = blueprint_of(&[("a.py", &["b.py"]), ("b.py", &["a.py"])]);
    let err = select_next_target(
        &CodeMemory::new(),
        &blueprint,
        &done_gateway(),
        &TemplateSet::default(),
    )
    .unwrap_err();
    match err {
        CodememError::CyclicDependency { remaining } => {
            assert_eq!(remaining, vec!["a.py", "b.py"]);
        }
        other => panic!("expected cycle, got {other}"),
    }
}

#[test]
fn valid_model_suggestion_is_honored() {
    let blueprint = blueprint_of(&[("a.py", &[]), ("b.py", &[]), ("c.py", &["a.py", "b.py"])]);
    let gateway = gateway_with(vec![PlaybookRule {
        role: Role::Planner,
        contains: None,
        replies: vec!["{\"next\": \"b.py\"}".into()],
        reply_files: vec![],
    }]);
    let next = select_next_target(
        &CodeMemory::new(),
        &blueprint,
        &gateway,
        &TemplateSet::default(),
    )
    .unwrap();
    assert_eq!(next.target.as_deref(), Some("b.py"));
    assert!(!next.overridden);
}

#[test]
fn invalid_suggestion_is_overridden_by_topological_order() {
    let blueprint = blueprint_of(&[("a.py", &[]), ("b.py", &["a.py"])]);
    // Model suggests b.py whose dependency a.py is unimplemented.
    let gateway = gateway_with(vec![PlaybookRule {
        role: Role::Planner,
        contains: None,
        replies: vec!["{\"next\": \"b.py\"}".into()],
        reply_files: vec![],
    }]);
    let next = select_next_target(
        &CodeMemory::new(),
        &blueprint,
        &gateway,
        &TemplateSet::default(),
    )
    .unwrap();
    assert_eq!(next.target.as_deref(), Some("a.py"));
    assert!(next.overridden);
}

/// Independent Kahn's-algorithm oracle over the blueprint dependency graph,
/// with the same (stage, hierarchy) tiebreak.
fn kahn_order(blueprint: &Blueprint) -> Vec<String> {
    let mut done: Vec<String> = Vec::new();
    let mut remaining: Vec<&str> = blueprint
        .file_hierarchy
        .iter()
        .map(|f| f.path.as_str())
        .collect();
    while !remaining.is_empty() {
        let mut ready: Vec<&str> = remaining
            .iter()
            .copied()
            .filter(|p| {
                blueprint
                    .spec_for(p)
                    .map(|s| s.depends_on.iter().all(|d| done.iter().any(|x| x == d)))
                    .unwrap_or(true)
            })
            .collect();
        assert!(!ready.is_empty(), "oracle found a cycle");
        ready.sort_by_key(|p| {
            (
                blueprint.stage_index(p).unwrap_or(usize::MAX),
                blueprint.hierarchy_index(p).unwrap_or(usize::MAX),
            )
        });
        let pick = ready[0].to_string();
        remaining.retain(|p| *p != pick);
        done.push(pick);
    }
    done
}

#[test]
fn dag_midpoint_matches_the_topological_oracle() {
    let blueprint = blueprint_of(&[
        ("base.py", &[]),
        ("io.py", &["base.py"]),
        ("math.py", &["base.py"]),
        ("model.py", &["math.py"]),
        ("train.py", &["model.py", "io.py"]),
    ]);
    let oracle = kahn_order(&blueprint);
    // Walk the first three oracle steps, then ask for the next target.
    let mut memory = CodeMemory::new();
    for file in oracle.iter().take(3) {
        memory = update_memory(memory, entry(file, &[])).unwrap();
    }
    let next = select_next_target(&memory, &blueprint, &done_gateway(), &TemplateSet::default())
        .unwrap();
    assert_eq!(next.target.as_deref(), Some(oracle[3].as_str()));
}

#[test]
fn scan_imports_handles_plain_and_from_forms() {
    let text = "import json\nimport os, sys\nfrom config import get_config\nfrom a.b import c as d\n  import textwrap\nx = 'import fake'\n";
    let imports = super::scan_imports(text);
    for module in ["json", "os", "sys", "config", "a.b", "textwrap"] {
        assert!(imports.contains(module), "missing {module}");
    }
    assert!(!imports.contains("fake"));
}

#[test]
fn module_paths_resolve_nested_packages() {
    assert_eq!(super::module_to_path("config"), "config.py");
    assert_eq!(super::module_to_path("src.model"), "src/model.py");
}

proptest::proptest! {
    #[test]
    fn memory_updates_are_monotone(names in proptest::collection::vec("[a-z]{1,8}", 1..20)) {
        let mut memory = CodeMemory::new();
        let mut inserted = std::collections::BTreeSet::new();
        for name in names {
            let file = format!("{name}.py");
            let before = memory.len();
            match update_memory(memory.clone(), entry(&file, &[])) {
                Ok(next) => {
                    proptest::prop_assert!(inserted.insert(file));
                    proptest::prop_assert_eq!(next.len(), before + 1);
                    memory = next;
                }
                Err(CodememError::DuplicateFile(_)) => {
                    proptest::prop_assert!(inserted.contains(&file));
                }
                Err(other) => return Err(proptest::test_runner::TestCaseError::fail(other.to_string())),
            }
        }
        proptest::prop_assert_eq!(memory.generation_order.len(), memory.len());
    }
}
