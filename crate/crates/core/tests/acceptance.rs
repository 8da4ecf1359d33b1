//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Every criterion runs offline against the bundled fixtures and the replay
//! gateway. Setting `REPOGEN_REGEN_FIXTURES=1` re-records the end-to-end
//! transcripts and golden artifacts from the scripted playbook before the
//! replay checks run.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;
use std::time::{Duration, Instant};

use repogen_core::blueprint::{
    Blueprint, ComponentDecl, ComponentKind, ComponentSpec, ExecutionEnvironment, PlannedFile,
    Stage, VerificationProtocol, BLUEPRINT_SCHEMA_VERSION,
};
use repogen_core::codemem::{run_generation, CodeMemory, CodememConfig, CodememError};
use repogen_core::coderag::{retrieve, RagIndex, RelationType, RelationshipTuple, TupleContext};
use repogen_core::doc_index::{build_index, parse_document, query_index, ContentIndex, DocFormat};
use repogen_core::gateway::{
    BackoffConfig, GatewayMode, LlmGateway, PromptRequest, Provider, ProviderFailure, Role,
    RoleBudgets, TranscriptRecord,
};
use repogen_core::paths::{normalize_line_endings, sha256_hex, tree_digest};
use repogen_core::pipeline::{resume, run_pipeline, Phase, PipelineConfig, ProviderKind, RunStatus};
use repogen_core::templates::TemplateSet;
use repogen_core::tokens::{CharQuotient, TokenCounter};
use repogen_core::verify::{
    audit_is_confined, check_locality, read_audit_log, refine_loop, LoopStatus, ProcessSandbox,
    VerifierConfig,
};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn regen_requested() -> bool {
    std::env::var_os("REPOGEN_REGEN_FIXTURES").is_some()
}

fn copy_tree(from: &Path, to: &Path) {
    if to.exists() {
        std::fs::remove_dir_all(to).unwrap();
    }
    std::fs::create_dir_all(to).unwrap();
    for entry in walkdir::WalkDir::new(from) {
        let entry = entry.unwrap();
        let rel = entry.path().strip_prefix(from).unwrap();
        if rel.as_os_str().is_empty() {
            continue;
        }
        let dest = to.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&dest).unwrap();
        } else {
            std::fs::create_dir_all(dest.parent().unwrap()).unwrap();
            std::fs::copy(entry.path(), &dest).unwrap();
        }
    }
}

fn assert_trees_identical(actual: &Path, golden: &Path, label: &str) {
    let list = |root: &Path| -> BTreeMap<String, Vec<u8>> {
        walkdir::WalkDir::new(root)
            .into_iter()
            .map(|e| e.unwrap())
            .filter(|e| e.file_type().is_file())
            .map(|e| {
                let rel = e
                    .path()
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .replace('\\', "/");
                (rel, std::fs::read(e.path()).unwrap())
            })
            .collect()
    };
    let actual_files = list(actual);
    let golden_files = list(golden);
    let actual_names: BTreeSet<&String> = actual_files.keys().collect();
    let golden_names: BTreeSet<&String> = golden_files.keys().collect();
    assert_eq!(actual_names, golden_names, "{label}: file sets differ");
    for (name, bytes) in &golden_files {
        assert_eq!(
            &actual_files[name], bytes,
            "{label}: contents of `{name}` differ from golden"
        );
    }
}

fn replay_config(workspace: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        input: fixtures().join("e2e/toy_paper.md"),
        workspace: workspace.to_path_buf(),
        ..PipelineConfig::default()
    };
    cfg.gateway.mode = GatewayMode::Replay;
    cfg.gateway.transcript_dir = Some(fixtures().join("e2e/transcripts"));
    cfg.rag.enabled = true;
    cfg.verifier.scale_down = 2;
    cfg.verifier.timeout_secs = 30;
    cfg
}

fn record_config(workspace: &Path) -> PipelineConfig {
    let mut cfg = replay_config(workspace);
    cfg.gateway.mode = GatewayMode::Record;
    cfg.gateway.transcript_dir = None;
    cfg.gateway.provider.kind = ProviderKind::Scripted;
    cfg.gateway.provider.playbook = Some(fixtures().join("e2e/playbook.json"));
    cfg.gateway.backoff = BackoffConfig {
        attempts: 1,
        base_delay_ms: 1,
    };
    cfg
}

fn regenerate_fixtures() {
    let workspace = tempfile::tempdir().unwrap();
    let report = run_pipeline(record_config(workspace.path())).expect("record run failed");
    assert_eq!(report.status, RunStatus::Clean, "record run must be clean");

    let e2e = fixtures().join("e2e");
    copy_tree(&workspace.path().join("transcripts"), &e2e.join("transcripts"));
    copy_tree(&workspace.path().join("repo"), &e2e.join("golden/repo"));
    for artifact in ["report.json", "blueprint.json"] {
        std::fs::copy(workspace.path().join(artifact), e2e.join("golden").join(artifact))
            .unwrap();
    }
    let usage = serde_json::to_string_pretty(&report.usage).unwrap();
    std::fs::write(e2e.join("golden/usage.json"), usage + "\n").unwrap();
    println!("regenerated e2e fixtures under {}", e2e.display());
}

struct E2eRun {
    workspace: tempfile::TempDir,
    report: repogen_core::RunReport,
    elapsed: Duration,
}

fn run_replay() -> E2eRun {
    let workspace = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let report = run_pipeline(replay_config(workspace.path())).expect("replay run failed");
    E2eRun {
        workspace,
        report,
        elapsed: started.elapsed(),
    }
}

struct E2eSuite {
    first: E2eRun,
    second: E2eRun,
}

static E2E: LazyLock<E2eSuite> = LazyLock::new(|| {
    if regen_requested() {
        regenerate_fixtures();
    }
    E2eSuite {
        first: run_replay(),
        second: run_replay(),
    }
});

#[test]
fn criterion_1_end_to_end_replay() {
    let run = &E2E.first;
    assert_eq!(run.report.status, RunStatus::Clean);
    assert!(
        run.elapsed < Duration::from_secs(60),
        "replay took {:?}, budget is 60s",
        run.elapsed
    );

    let golden_repo = fixtures().join("e2e/golden/repo");
    assert_trees_identical(&run.workspace.path().join("repo"), &golden_repo, "e2e repo");
    let repo_files = walkdir::WalkDir::new(&golden_repo)
        .into_iter()
        .filter(|e| e.as_ref().unwrap().file_type().is_file())
        .count();
    assert_eq!(repo_files, 9, "golden repository must hold nine files");

    // Blueprint snapshot and usage accounting both match the audited run.
    let blueprint_bytes = std::fs::read(run.workspace.path().join("blueprint.json")).unwrap();
    let golden_blueprint = std::fs::read(fixtures().join("e2e/golden/blueprint.json")).unwrap();
    assert_eq!(blueprint_bytes, golden_blueprint, "blueprint.json differs from golden");
    let golden_usage: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("e2e/golden/usage.json")).unwrap())
            .unwrap();
    let actual_usage = serde_json::to_value(&run.report.usage).unwrap();
    assert_eq!(actual_usage, golden_usage, "usage totals differ from golden accounting");

    println!(
        "ACCEPTANCE 1 PASS — end-to-end replay: 9-file repo matches golden byte-for-byte in {:?}",
        run.elapsed
    );
}

fn doc_fixtures() -> Vec<PathBuf> {
    let mut docs: Vec<PathBuf> = std::fs::read_dir(fixtures().join("docs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    docs.push(fixtures().join("e2e/toy_paper.md"));
    docs.sort();
    docs
}

#[test]
fn criterion_2_segmentation_round_trip() {
    let docs = doc_fixtures();
    assert_eq!(docs.len(), 10, "expected ten fixture documents");

    let mut total_queries = 0usize;
    for path in &docs {
        let raw = std::fs::read_to_string(path).unwrap();
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("txt") => DocFormat::Plain,
            _ => DocFormat::Markdown,
        };
        let doc = parse_document(&raw, format).unwrap();
        let index = build_index(&doc);

        // Round trip and span coverage.
        assert_eq!(
            index.full_text(),
            normalize_line_endings(&raw),
            "{}: chunk concatenation differs from normalized input",
            path.display()
        );
        assert!(
            index.check_invariants(doc.elements.len()).is_empty(),
            "{}: spans do not tile the block range",
            path.display()
        );

        // Five exact-heading queries per document.
        let headings: Vec<(usize, String)> = index
            .chunks
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.synthetic_heading)
            .map(|(i, c)| (i, c.heading.clone()))
            .collect();
        assert!(
            headings.len() >= 5,
            "{}: needs at least five headings",
            path.display()
        );
        for (owner, heading) in headings.iter().take(5) {
            let hits = query_index(&index, heading, 5);
            assert_eq!(
                hits.first().map(|h| h.chunk),
                Some(*owner),
                "{}: exact query `{heading}` did not rank its owner first",
                path.display()
            );
            total_queries += 1;
        }
    }
    assert_eq!(total_queries, 50);
    println!("ACCEPTANCE 2 PASS — segmentation round-trip on 10 docs; 50/50 exact-heading queries rank the owner first");
}

/// Scripted provider for the 50-file synthetic project: deterministic
/// bodies, chain dependencies, and metadata-only summaries.
struct SyntheticProvider {
    bodies: BTreeMap<String, String>,
    deps: BTreeMap<String, Vec<String>>,
}

impl Provider for SyntheticProvider {
    fn send(&self, request: &PromptRequest) -> Result<String, ProviderFailure> {
        match request.role {
            Role::Planner => {
                let next = request
                    .rendered_text
                    .lines()
                    .find_map(|l| l.strip_prefix("- "))
                    .ok_or_else(|| ProviderFailure("no eligible list in prompt".into()))?;
                Ok(format!("{{\"next\": \"{next}\"}}"))
            }
            Role::Coder => {
                let target = request
                    .rendered_text
                    .lines()
                    .find_map(|l| l.strip_prefix("TARGET-FILE: "))
                    .ok_or_else(|| ProviderFailure("no target marker".into()))?;
                let body = self
                    .bodies
                    .get(target)
                    .ok_or_else(|| ProviderFailure(format!("unknown target {target}")))?;
                Ok(format!("```python\n{body}```\n"))
            }
            Role::Summarizer => {
                let file = request
                    .rendered_text
                    .lines()
                    .find_map(|l| l.strip_prefix("SUMMARIZE-FILE: "))
                    .ok_or_else(|| ProviderFailure("no summarize marker".into()))?;
                let afferent: Vec<serde_json::Value> = self
                    .deps
                    .get(file)
                    .map(|deps| {
                        deps.iter()
                            .map(|d| {
                                serde_json::json!({
                                    "module": d.trim_end_matches(".py"),
                                    "symbols": [],
                                })
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                let reply = serde_json::json!({
                    "purpose": format!("synthetic block {file}"),
                    "public_interface": [],
                    "afferent": afferent,
                    "efferent_predicted": [],
                });
                Ok(reply.to_string())
            }
            other => Err(ProviderFailure(format!("unexpected role {other}"))),
        }
    }

    fn name(&self) -> &str {
        "synthetic"
    }
}

fn synthetic_blueprint(file_count: usize) -> Blueprint {
    let name = |i: usize| format!("mod_{i:02}.py");
    let mut component_specs = BTreeMap::new();
    let mut hierarchy = Vec::new();
    for i in 0..file_count {
        hierarchy.push(PlannedFile {
            path: name(i),
            priority: i as u32 + 1,
            description: format!("synthetic block {i}"),
        });
        let depends_on = if i == 0 { vec![] } else { vec![name(i - 1)] };
        component_specs.insert(
            name(i),
            ComponentSpec {
                components: vec![ComponentDecl {
                    kind: ComponentKind::Function,
                    name: format!("helper_{i:02}"),
                    signature: format!("helper_{i:02}(a, b)"),
                    purpose: "synthetic helper".into(),
                }],
                linked_items: vec![],
                depends_on,
            },
        );
    }
    Blueprint {
        schema_version: BLUEPRINT_SCHEMA_VERSION,
        file_hierarchy: hierarchy,
        component_specs,
        algorithm_items: BTreeMap::new(),
        verification_protocol: VerificationProtocol::default(),
        execution_environment: ExecutionEnvironment::default(),
        staged_plan: vec![Stage {
            name: "all".into(),
            files: (0..file_count).map(name).collect(),
            check: String::new(),
        }],
    }
}

fn synthetic_body(index: usize, dep: Option<&str>, target_tokens: u64) -> String {
    let tokenizer = CharQuotient::default();
    let mut body = String::new();
    if let Some(dep) = dep {
        body.push_str(&format!("import {}\n\n", dep.trim_end_matches(".py")));
    }
    let mut j = 0usize;
    while tokenizer.count(&body) < target_tokens {
        body.push_str(&format!(
            "def helper_{index:02}_{j}(a, b):\n    return a * {index} + b * {j}\n\n"
        ));
        j += 1;
    }
    body
}

fn whitespace_ngrams(text: &str, n: usize) -> BTreeSet<String> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() < n {
        return BTreeSet::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].join(" ")).collect()
}

#[test]
fn criterion_3_context_compression() {
    const FILES: usize = 50;
    const BUDGET: u64 = 16_000;
    let tokenizer = CharQuotient::default();
    let blueprint = synthetic_blueprint(FILES);
    let blueprint_tokens = tokenizer.count(&blueprint.to_json_pretty());

    // Size bodies so the naive baseline (blueprint + all prior raw sources)
    // crosses the budget exactly at file 8.
    let low = (BUDGET - blueprint_tokens) as f64 / 7.0;
    let high = (BUDGET - blueprint_tokens) as f64 / 6.0;
    let target = ((low + high) / 2.0) as u64;

    let name = |i: usize| format!("mod_{i:02}.py");
    let mut bodies = BTreeMap::new();
    let mut deps = BTreeMap::new();
    for i in 0..FILES {
        let dep = (i > 0).then(|| name(i - 1));
        bodies.insert(name(i), synthetic_body(i, dep.as_deref(), target));
        deps.insert(name(i), dep.into_iter().collect::<Vec<_>>());
    }

    let workspace = tempfile::tempdir().unwrap();
    let gateway = LlmGateway::record(
        Box::new(SyntheticProvider {
            bodies: bodies.clone(),
            deps,
        }),
        workspace.path().join("transcripts/generation.jsonl"),
        RoleBudgets::default(),
        BackoffConfig {
            attempts: 1,
            base_delay_ms: 1,
        },
        std::sync::Arc::new(CharQuotient::default()),
    );
    let outcome = run_generation(
        &blueprint,
        &gateway,
        None,
        &Default::default(),
        &workspace.path().join("repo"),
        Some(&workspace.path().join("memory")),
        &CodememConfig::default(),
        &TemplateSet::default(),
    )
    .expect("synthetic generation failed");
    assert_eq!(outcome.steps, FILES);
    assert!(outcome.max_context_tokens <= BUDGET);

    // Verified from transcripts: every coder context fits the budget and
    // shares no 12-token n-gram with any previously generated file.
    let records: Vec<TranscriptRecord> = gateway.records();
    let coder_records: Vec<&TranscriptRecord> =
        records.iter().filter(|r| r.role == Role::Coder).collect();
    assert_eq!(coder_records.len(), FILES);

    let order = &outcome.memory.generation_order;
    for (step, record) in coder_records.iter().enumerate() {
        assert!(
            record.prompt_tokens <= BUDGET,
            "step {step}: context of {} tokens exceeds the budget",
            record.prompt_tokens
        );
        let context_grams = whitespace_ngrams(&record.prompt_text, 12);
        for prior in &order[..step] {
            let source_grams = whitespace_ngrams(&bodies[prior], 12);
            assert!(
                context_grams.is_disjoint(&source_grams),
                "step {step}: context leaks a 12-token n-gram of `{prior}`"
            );
        }
    }

    // The naive baseline exceeds the budget from file 8 onward.
    let mut cumulative = 0u64;
    for (step, file) in order.iter().enumerate() {
        let naive = blueprint_tokens + cumulative;
        let position = step + 1;
        if position < 8 {
            assert!(
                naive <= BUDGET,
                "naive baseline at file {position} is {naive}, expected within budget"
            );
        } else {
            assert!(
                naive > BUDGET,
                "naive baseline at file {position} is {naive}, expected over budget"
            );
        }
        cumulative += tokenizer.count(&bodies[file]);
    }

    println!(
        "ACCEPTANCE 3 PASS — context compression: 50 contexts ≤ {BUDGET} tokens (max {}), zero source n-grams; naive baseline exceeds budget from file 8",
        outcome.max_context_tokens
    );
}

#[test]
fn criterion_4_dependency_soundness() {
    let run = &E2E.first;
    let blueprint: Blueprint = serde_json::from_str(
        &std::fs::read_to_string(run.workspace.path().join("blueprint.json")).unwrap(),
    )
    .unwrap();
    let total = blueprint.file_hierarchy.len();

    // Exactly N steps for N files, observable from the memory snapshots.
    let mut snapshots: Vec<PathBuf> = std::fs::read_dir(run.workspace.path().join("memory"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    snapshots.sort();
    assert_eq!(snapshots.len(), total);

    for (step, snapshot) in snapshots.iter().enumerate() {
        let memory: CodeMemory =
            serde_json::from_str(&std::fs::read_to_string(snapshot).unwrap()).unwrap();
        assert_eq!(memory.generation_order.len(), step + 1);
        let target = memory.generation_order.last().unwrap();
        let implemented: BTreeSet<&String> =
            memory.generation_order[..step].iter().collect();
        let spec = blueprint.spec_for(target).unwrap();
        for dep in &spec.depends_on {
            assert!(
                implemented.contains(dep),
                "step {}: `{target}` generated before its dependency `{dep}`",
                step + 1
            );
        }
    }

    // The generation transcript shows exactly N coder calls.
    let transcript = fixtures().join("e2e/transcripts/generation.jsonl");
    let coder_calls = std::fs::read_to_string(transcript)
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"role\":\"coder\""))
        .count();
    assert_eq!(coder_calls, total);

    // For this fixture the scripted choices follow the staged plan exactly.
    let final_memory: CodeMemory =
        serde_json::from_str(&std::fs::read_to_string(snapshots.last().unwrap()).unwrap())
            .unwrap();
    let staged_order: Vec<String> = blueprint
        .staged_plan
        .iter()
        .flat_map(|s| s.files.iter().cloned())
        .collect();
    assert_eq!(final_memory.generation_order, staged_order);

    // A deliberately cyclic blueprint aborts with CyclicDependency.
    let mut cyclic = synthetic_blueprint(2);
    cyclic
        .component_specs
        .get_mut("mod_00.py")
        .unwrap()
        .depends_on = vec!["mod_01.py".into()];
    let dir = tempfile::tempdir().unwrap();
    let empty_transcript = dir.path().join("generation.jsonl");
    std::fs::write(&empty_transcript, "").unwrap();
    let gateway = LlmGateway::replay(
        empty_transcript,
        RoleBudgets::default(),
        std::sync::Arc::new(CharQuotient::default()),
    )
    .unwrap();
    let err = run_generation(
        &cyclic,
        &gateway,
        None,
        &Default::default(),
        &dir.path().join("repo"),
        None,
        &CodememConfig::default(),
        &TemplateSet::default(),
    )
    .unwrap_err();
    assert!(matches!(err, CodememError::CyclicDependency { .. }));

    println!("ACCEPTANCE 4 PASS — dependency soundness: deps precede targets at every step, exactly {total} steps, cycles abort");
}

#[test]
fn criterion_5_rag_contracts() {
    // Per-target ordering and retrieve maximality on a constructed index.
    let tuple = |source: &str, target: &str, confidence: f64| RelationshipTuple {
        source_file: source.to_string(),
        target_file: target.to_string(),
        relation_type: RelationType::Utility,
        confidence,
        context: TupleContext::default(),
    };
    let index = RagIndex::from_tuples(
        vec![
            tuple("c.py", "optim.py", 0.55),
            tuple("a.py", "optim.py", 0.91),
            tuple("b.py", "optim.py", 0.91),
            tuple("d.py", "model.py", 0.30),
        ],
        vec![],
    );
    for target in ["optim.py", "model.py"] {
        let tuples = index.tuples_for(target);
        assert!(
            tuples.windows(2).all(|p| p[0].confidence >= p[1].confidence),
            "per-target list for {target} is not confidence-descending"
        );
        let max = tuples
            .iter()
            .map(|t| t.confidence)
            .fold(f64::NEG_INFINITY, f64::max);
        let augmentation = retrieve(&index, target).unwrap();
        assert_eq!(augmentation.confidence, max, "retrieve not maximal for {target}");
    }
    // Equal confidences break ties toward the smaller source path.
    assert_eq!(retrieve(&index, "optim.py").unwrap().source_file, "a.py");

    // Empty-index runs are byte-identical to retrieval-disabled runs.
    let ws_disabled = tempfile::tempdir().unwrap();
    let mut cfg = replay_config(ws_disabled.path());
    cfg.rag.enabled = false;
    let report = run_pipeline(cfg).expect("retrieval-disabled replay failed");
    assert_eq!(report.status, RunStatus::Clean);
    let enabled_digest = tree_digest(&E2E.first.workspace.path().join("repo")).unwrap();
    let disabled_digest = tree_digest(&ws_disabled.path().join("repo")).unwrap();
    assert_eq!(
        enabled_digest, disabled_digest,
        "empty-index run differs from retrieval-disabled run"
    );

    println!("ACCEPTANCE 5 PASS — RAG contracts: confidence-descending lists, maximal retrieval, zero-index degradation");
}

struct FaultCase {
    name: &'static str,
    workspace: tempfile::TempDir,
    status: LoopStatus,
    executes: usize,
    terminal_iteration: usize,
    max_iter: u32,
    locality_ok: bool,
    patches: usize,
}

fn run_fault_case(
    name: &'static str,
    files: &[(&str, &str)],
    rules: Vec<repogen_core::gateway::PlaybookRule>,
    entry: &str,
    max_iter: u32,
) -> FaultCase {
    let workspace = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(workspace.path().join("repo")).unwrap();
    for (file, text) in files {
        std::fs::write(workspace.path().join("repo").join(file), text).unwrap();
    }
    let blueprint = {
        let paths: Vec<&str> = files.iter().map(|(f, _)| *f).collect();
        let mut specs = BTreeMap::new();
        for path in &paths {
            specs.insert(path.to_string(), ComponentSpec::default());
        }
        Blueprint {
            schema_version: BLUEPRINT_SCHEMA_VERSION,
            file_hierarchy: paths
                .iter()
                .enumerate()
                .map(|(i, p)| PlannedFile {
                    path: p.to_string(),
                    priority: i as u32 + 1,
                    description: String::new(),
                })
                .collect(),
            component_specs: specs,
            algorithm_items: BTreeMap::new(),
            verification_protocol: VerificationProtocol::default(),
            execution_environment: ExecutionEnvironment::default(),
            staged_plan: vec![Stage {
                name: "all".into(),
                files: paths.iter().map(|p| p.to_string()).collect(),
                check: String::new(),
            }],
        }
    };
    let provider = repogen_core::gateway::ScriptedProvider::from_playbook(
        repogen_core::gateway::Playbook { rules },
        Path::new("."),
    )
    .unwrap();
    let gateway = LlmGateway::live(
        Box::new(provider),
        RoleBudgets::default(),
        BackoffConfig {
            attempts: 1,
            base_delay_ms: 1,
        },
        std::sync::Arc::new(CharQuotient::default()),
    );
    let sandbox = ProcessSandbox::new(
        workspace.path().to_path_buf(),
        workspace.path().join("sandbox_audit.jsonl"),
    );
    let cfg = VerifierConfig {
        max_iter,
        timeout_secs: 20,
        entry_override: Some(entry.to_string()),
        ..VerifierConfig::default()
    };
    let result = refine_loop(
        &sandbox,
        Path::new("repo"),
        &blueprint,
        &gateway,
        &cfg,
        &TemplateSet::default(),
    )
    .expect("refine loop failed");

    let locality_ok = result
        .applied
        .iter()
        .all(|p| check_locality(&p.before, &p.after, &p.instruction));
    FaultCase {
        name,
        workspace,
        status: result.status,
        executes: result.executes,
        terminal_iteration: result.iterations.last().map(|i| i.index).unwrap_or(0),
        max_iter,
        locality_ok,
        patches: result.applied.len(),
    }
}

fn rule(contains: &str, reply: &str) -> repogen_core::gateway::PlaybookRule {
    repogen_core::gateway::PlaybookRule {
        role: Role::Verifier,
        contains: Some(contains.to_string()),
        replies: vec![reply.to_string()],
        reply_files: vec![],
    }
}

#[allow(clippy::vec_init_then_push)]
static FAULTS: LazyLock<Vec<FaultCase>> = LazyLock::new(|| {
    let mut cases = Vec::new();

    // Fault class 1: variable name typo.
    cases.push(run_fault_case(
        "name-typo",
        &[("app.py", "value = 41\nresult = vaule + 1\nprint(result)\n")],
        vec![rule(
            "NameError",
            r#"{"patches": [{"file": "app.py", "edits": [{"start": 2, "end": 2, "replacement": "result = value + 1"}], "rationale": "fix variable typo"}]}"#,
        )],
        "python3 app.py",
        5,
    ));

    // Fault class 2: missing dependency (import of a nonexistent module).
    cases.push(run_fault_case(
        "missing-dependency",
        &[(
            "app.py",
            "import jsonn\n\nprint(jsonn.dumps({\"ok\": True}))\n",
        )],
        vec![rule(
            "ModuleNotFoundError",
            r#"{"patches": [{"file": "app.py", "edits": [{"start": 1, "end": 1, "replacement": "import json"}, {"start": 3, "end": 3, "replacement": "print(json.dumps({\"ok\": True}))"}], "rationale": "the stdlib module is json"}]}"#,
        )],
        "python3 app.py",
        5,
    ));

    // Fault class 3: wrong command-line argument baked into the runner.
    cases.push(run_fault_case(
        "wrong-cli-argument",
        &[(
            "app.py",
            "import argparse\n\nARGS = [\"--nsteps\", \"2\"]\n\nparser = argparse.ArgumentParser(prog=\"app.py\")\nparser.add_argument(\"--steps\", type=int, default=1)\nargs = parser.parse_args(ARGS)\nprint(sum(range(args.steps)))\n",
        )],
        vec![rule(
            "unrecognized arguments",
            r#"{"patches": [{"file": "app.py", "edits": [{"start": 3, "end": 3, "replacement": "ARGS = [\"--steps\", \"2\"]"}], "rationale": "the flag is --steps"}]}"#,
        )],
        "python3 app.py",
        5,
    ));

    // Combined fixture: all three fault classes in one repository.
    cases.push(run_fault_case(
        "combined-three-faults",
        &[(
            "app.py",
            "import jsonn\n\nARGS = [\"--nsteps\", \"2\"]\n\n\ndef parse(argv):\n    import argparse\n    parser = argparse.ArgumentParser(prog=\"app.py\")\n    parser.add_argument(\"--steps\", type=int, default=1)\n    return parser.parse_args(argv)\n\n\ndef compute(steps):\n    total = 0\n    for i in range(steps):\n        total += i\n    return totl\n\n\ndef main():\n    args = parse(ARGS)\n    print(jsonn.dumps({\"total\": compute(args.steps)}))\n\n\nif __name__ == \"__main__\":\n    main()\n",
        )],
        vec![
            rule(
                "ModuleNotFoundError",
                r#"{"patches": [{"file": "app.py", "edits": [{"start": 1, "end": 1, "replacement": "import json"}, {"start": 22, "end": 22, "replacement": "    print(json.dumps({\"total\": compute(args.steps)}))"}], "rationale": "use the stdlib json module"}]}"#,
            ),
            rule(
                "unrecognized arguments",
                r#"{"patches": [{"file": "app.py", "edits": [{"start": 3, "end": 3, "replacement": "ARGS = [\"--steps\", \"2\"]"}], "rationale": "the flag is --steps"}]}"#,
            ),
            rule(
                "NameError",
                r#"{"patches": [{"file": "app.py", "edits": [{"start": 17, "end": 17, "replacement": "    return total"}], "rationale": "fix accumulator typo"}]}"#,
            ),
        ],
        "python3 app.py",
        5,
    ));

    // Unfixable fixture: the scripted patch applies but never helps.
    cases.push(run_fault_case(
        "unfixable",
        &[(
            "app.py",
            "# marker\nraise RuntimeError('always broken')\n",
        )],
        vec![rule(
            "RuntimeError",
            r##"{"patches": [{"file": "app.py", "edits": [{"start": 1, "end": 1, "replacement": "# still broken"}], "rationale": "cosmetic"}]}"##,
        )],
        "python3 app.py",
        5,
    ));

    cases
});

#[test]
fn criterion_6_verification_repair() {
    let cases = &*FAULTS;
    for case in cases {
        assert!(case.locality_ok, "{}: patch locality violated", case.name);
        match case.name {
            "unfixable" => {
                assert_eq!(case.status, LoopStatus::MaxIterations, "{}", case.name);
                assert_eq!(
                    case.executes, case.max_iter as usize,
                    "{}: expected exactly max_iter executions",
                    case.name
                );
            }
            "combined-three-faults" => {
                assert_eq!(case.status, LoopStatus::Clean, "{}", case.name);
                assert!(
                    case.terminal_iteration <= 5,
                    "{}: clean only at iteration {}",
                    case.name,
                    case.terminal_iteration
                );
                assert!(case.patches >= 3);
            }
            _ => {
                assert_eq!(case.status, LoopStatus::Clean, "{}", case.name);
                assert!(
                    case.terminal_iteration <= 5,
                    "{}: clean only at iteration {}",
                    case.name,
                    case.terminal_iteration
                );
            }
        }
    }
    let single_faults = cases
        .iter()
        .filter(|c| matches!(c.name, "name-typo" | "missing-dependency" | "wrong-cli-argument"));
    for case in single_faults {
        assert_eq!(
            case.terminal_iteration, 1,
            "{}: single fault should be clean at iteration 1",
            case.name
        );
    }
    println!("ACCEPTANCE 6 PASS — verification repair: three fault classes fixed (single ≤ 1 iteration, combined ≤ 5), unfixable stops at max_iter, locality holds on every patch");
}

#[test]
fn criterion_7_sandbox_confinement() {
    let mut audits = 0usize;
    let mut records_total = 0usize;

    for run in [&E2E.first, &E2E.second] {
        let audit = run.workspace.path().join("sandbox_audit.jsonl");
        let records = read_audit_log(&audit).unwrap();
        assert!(!records.is_empty(), "e2e audit log must not be empty");
        assert!(
            audit_is_confined(&records, run.workspace.path()),
            "e2e sandbox operation escaped the workspace root"
        );
        audits += 1;
        records_total += records.len();
    }
    for case in &*FAULTS {
        let audit = case.workspace.path().join("sandbox_audit.jsonl");
        let records = read_audit_log(&audit).unwrap();
        assert!(
            audit_is_confined(&records, case.workspace.path()),
            "{}: sandbox operation escaped the workspace root",
            case.name
        );
        audits += 1;
        records_total += records.len();
    }
    println!("ACCEPTANCE 7 PASS — sandbox confinement: {records_total} audited operations across {audits} workspaces, zero outside the root");
}

#[test]
fn criterion_8_determinism_and_resume() {
    // Replaying the same transcripts twice yields identical report digests.
    let report_a = std::fs::read(E2E.first.workspace.path().join("report.json")).unwrap();
    let report_b = std::fs::read(E2E.second.workspace.path().join("report.json")).unwrap();
    assert_eq!(
        sha256_hex(&report_a),
        sha256_hex(&report_b),
        "report.json digests differ between replays"
    );
    let golden_report = std::fs::read(fixtures().join("e2e/golden/report.json")).unwrap();
    assert_eq!(
        sha256_hex(&report_a),
        sha256_hex(&golden_report),
        "report.json differs from the golden run"
    );

    // Kill-and-resume after each phase boundary reproduces the final tree.
    let golden_repo_digest = tree_digest(&fixtures().join("e2e/golden/repo")).unwrap();
    for phase in [Phase::Indexed, Phase::Blueprinted, Phase::Generated] {
        let workspace = tempfile::tempdir().unwrap();
        let mut cfg = replay_config(workspace.path());
        cfg.stop_after = Some(phase);
        let partial = run_pipeline(cfg).expect("partial run failed");
        assert_eq!(partial.status, RunStatus::Partial);

        let resumed = resume(workspace.path()).expect("resume failed");
        assert_eq!(resumed.status, RunStatus::Clean);
        let digest = tree_digest(&workspace.path().join("repo")).unwrap();
        assert_eq!(
            digest, golden_repo_digest,
            "resume after {} produced a different final tree",
            phase.name()
        );
        let report = std::fs::read(workspace.path().join("report.json")).unwrap();
        assert_eq!(
            sha256_hex(&report),
            sha256_hex(&golden_report),
            "resume after {} produced a different report",
            phase.name()
        );

        // Resuming the finished workspace is a no-op reprint.
        let noop = resume(workspace.path()).expect("no-op resume failed");
        assert_eq!(noop.status, RunStatus::Clean);
    }

    // Tampering with a checkpointed artifact is detected.
    {
        let workspace = tempfile::tempdir().unwrap();
        let mut cfg = replay_config(workspace.path());
        cfg.stop_after = Some(Phase::Blueprinted);
        run_pipeline(cfg).expect("partial run failed");
        let blueprint_path = workspace.path().join("blueprint.json");
        let mut text = std::fs::read_to_string(&blueprint_path).unwrap();
        text.push('\n');
        std::fs::write(&blueprint_path, text).unwrap();
        let err = resume(workspace.path()).unwrap_err();
        assert!(matches!(
            err,
            repogen_core::pipeline::PipelineError::DigestMismatch { .. }
        ));
    }

    println!("ACCEPTANCE 8 PASS — determinism & resume: identical report digests across replays; kill-and-resume matches the golden tree at every boundary");
}

// Context-discipline spot check kept alongside the acceptance criteria: no
// analysis prompt exceeds its role budget, straight from the transcripts.
#[test]
fn analysis_prompts_respect_budgets() {
    let _ = &*E2E;
    let budgets = RoleBudgets::default();
    for session in ["concept", "algorithm", "planner"] {
        let path = fixtures().join(format!("e2e/transcripts/{session}.jsonl"));
        for line in std::fs::read_to_string(path).unwrap().lines() {
            let record: TranscriptRecord = serde_json::from_str(line).unwrap();
            assert!(record.prompt_tokens <= budgets.budget_for(record.role));
        }
    }
    println!("ACCEPTANCE × PASS — analysis prompts stay within their role budgets");
}

// Keep the fixture index honest: the toy paper parses into the structures
// the golden transcripts assume.
#[test]
fn toy_paper_has_expected_structure() {
    let raw = std::fs::read_to_string(fixtures().join("e2e/toy_paper.md")).unwrap();
    let doc = parse_document(&raw, DocFormat::Markdown).unwrap();
    let index: ContentIndex = build_index(&doc);
    for heading in [
        "3.1. Model Architecture",
        "3.2. Training Procedure",
        "3.3. Objective",
        "4.2. Hyperparameters",
    ] {
        assert!(
            index.find_heading(heading).is_some(),
            "missing heading `{heading}`"
        );
    }
    let algorithm_boxes = doc
        .elements
        .iter()
        .filter(|b| b.kind == repogen_core::doc_index::BlockKind::Pseudocode)
        .count();
    assert_eq!(algorithm_boxes, 1, "toy paper must contain one algorithm box");
    let hyper_chunk = index.find_heading("4.2. Hyperparameters").unwrap();
    let rows = hyper_chunk
        .content_text()
        .lines()
        .filter(|l| l.starts_with('|') && !l.contains("---") && !l.contains("name"))
        .count();
    assert_eq!(rows, 5, "toy paper must list five hyperparameters");

    // A partial keyword still ranks the owning section first.
    let hits = query_index(&index, "Model Architecture", 3);
    assert_eq!(hits[0].heading, "3.1. Model Architecture");
}

// The recorded analysis replies carry the golden schema shapes: four method
// components and five hyperparameters, each citing a real chunk.
#[test]
fn analysis_transcripts_match_the_golden_schemas() {
    let _ = &*E2E;
    let read_reply = |session: &str| -> serde_json::Value {
        let path = fixtures().join(format!("e2e/transcripts/{session}.jsonl"));
        let line = std::fs::read_to_string(path).unwrap();
        let record: TranscriptRecord =
            serde_json::from_str(line.lines().next().unwrap()).unwrap();
        serde_json::from_str(&record.reply_text).unwrap()
    };

    let concept = read_reply("concept");
    assert_eq!(concept["method_components"].as_array().unwrap().len(), 4);

    let algorithm = read_reply("algorithm");
    let hyperparameters = algorithm["hyperparameters"].as_array().unwrap();
    assert_eq!(hyperparameters.len(), 5);

    let raw = std::fs::read_to_string(fixtures().join("e2e/toy_paper.md")).unwrap();
    let index = build_index(&parse_document(&raw, DocFormat::Markdown).unwrap());
    for item in hyperparameters {
        let chunk = item["source_chunk"].as_str().unwrap();
        assert!(
            index.find_heading(chunk).is_some(),
            "hyperparameter cites unknown chunk `{chunk}`"
        );
    }
    assert_eq!(algorithm["pseudocode_items"].as_array().unwrap().len(), 1);
}
