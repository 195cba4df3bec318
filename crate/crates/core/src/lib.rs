//! Synthesis of multi-turn, multi-step tool-calling dialogues from generated
//! tool graphs.
//!
//! Stages: [`forge`] builds a tool pool and dependency graph, [`sampler`]
//! extracts workflows and goals, [`planner`] compiles plans with parameter
//! provenance, [`engine`] realizes them as transcripts, [`hardener`] adds
//! variation and recoverable failures, and [`quality`] measures the result.
//! [`pipeline`] wires the stages together with on-disk artifacts.

pub mod engine;
pub mod forge;
pub mod gateway;
pub mod graph;
pub mod hardener;
pub mod knowledge;
pub mod pipeline;
pub mod planner;
pub mod prompts;
pub mod quality;
pub mod sampler;
pub mod schema;
pub mod text;
pub mod util;

pub use engine::{DialogueTranscript, Engine, EngineSettings, MemoryState, Turn, TurnKind};
pub use gateway::{Gateway, GatewayError, GatewayMode, GatewaySettings};
pub use graph::{Edge, EdgeValidation, ToolGraph};
pub use hardener::{Hardener, InjectionConfig, InjectionMode};
pub use pipeline::{Pipeline, PipelineConfig, PipelineError, StageName};
pub use planner::{DialoguePlan, Marker, PlanStep, Planner, PlannerSettings, StepRole};
pub use sampler::{GoalRecord, PatternType, Sampler, SamplerSettings, WorkflowSample};
pub use schema::{
    dedup_signature, flatten_output_names, parse_tool_spec, validate_call_args, ParamSchema, SchemaError, ToolPool,
    ToolSpec, TypeTag, ValidationReport, Violation, ViolationKind,
};
