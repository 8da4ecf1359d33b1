//! Three-phase document-to-repository synthesis pipeline.
//!
//! The library turns a technical document into a runnable code repository
//! through three orchestrated phases:
//!
//! 1. **Blueprint distillation** — [`doc_index`] parses the document into a
//!    heading-keyed chunk index; the [`analysis`] agents read it through
//!    targeted queries and distill a machine-readable [`blueprint::Blueprint`].
//! 2. **Memory-driven generation** — [`codemem`] generates files one at a
//!    time, carrying a compressed repository memory instead of raw code
//!    history; [`coderag`] optionally injects reference snippets mined from
//!    local repositories.
//! 3. **Closed-loop verification** — [`verify`] statically checks the result
//!    against the blueprint, then runs it in a path-confined sandbox and
//!    applies line-level patches until execution is clean or an iteration
//!    budget is exhausted.
//!
//! All model traffic flows through the [`gateway`], which supports live,
//! record, and deterministic replay modes. The [`pipeline`] module wires the
//! phases into a single checkpointed run driven by a config file.

pub mod analysis;
pub mod blueprint;
pub mod codemem;
pub mod coderag;
pub mod doc_index;
pub mod gateway;
pub mod paths;
pub mod pipeline;
pub mod reply;
pub mod templates;
pub mod tokens;
pub mod verify;

pub use blueprint::{Blueprint, ValidationReport};
pub use doc_index::{ContentIndex, DocFormat, SourceDocument};
pub use gateway::{GatewayMode, LlmGateway, PromptRequest, Role, UsageReport};
pub use pipeline::{resume, run_pipeline, PipelineConfig, RunReport, RunStatus};
