//! Evaluation harness for measuring how robust a vision-language model is to
//! visual context granularity.
//!
//! A run compares a model's corpus score on full images (`P_whole`) with its
//! score when each sample is replaced by its best-performing patch from an
//! n x n grid (`P_patch,n`). The Patch Context Robustness Index,
//!
//! ```text
//! PCRI_n = 1 - P_patch,n / P_whole
//! ```
//!
//! is near zero for context-robust models, negative when the surrounding
//! scene distracts (a patch beats the full image), and positive when the task
//! needs global context. Results are only interpreted when `P_whole` clears
//! the dataset's chance floor by `max(delta, 2 * SE)`, with the standard
//! error estimated by a nonparametric bootstrap over samples.
//!
//! Modules mirror the pipeline: [`ingest`] loads manifests and images,
//! [`patcher`] plans and cuts grid views, [`adapters`] obtain model
//! responses (live endpoint, replay cache, or synthetic oracle), [`metrics`]
//! scores them, [`engine`] computes the index and its gate, and [`report`]
//! renders the output bundle. [`pipeline`] wires the stages together.

pub mod adapters;
pub mod engine;
pub mod ingest;
pub mod metrics;
pub mod patcher;
pub mod pipeline;
pub mod report;
pub mod types;

pub use types::{
    normalize_answer, GateVerdict, GridSpec, InterpretationLabel, Pcri, PcriResult, PixelRect,
    Sample, ScoredRecord, SyntheticScene, TaskType, View, ViewKind,
};
