//! Attention-head probing and inference-time intervention.
//!
//! The pipeline captures per-head activations of a small decoder-only
//! transformer over labeled question/answer pairs, trains linear or MLP probes
//! on window-averaged activations, selects the top-K heads by held-out
//! accuracy, and steers those heads along mass-mean-shift directions at
//! inference. [`eval`] scores the result on multiple-choice benchmarks and
//! measures next-token drift against the unsteered model.

pub mod capture;
pub mod container;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod intervention;
pub mod math;
pub mod model;
pub mod pipeline;
pub mod probe;
pub mod tokenizer;

pub use capture::{capture_dataset, capture_windows, render_pair, CaptureConfig, HeadActivationSet, QaPair};
pub use dataset::{load_mc_dataset, McFormat, McQuestion};
pub use error::{Error, Result};
pub use eval::{drift, mc1, mc2, score_answer, EvalReport, Scorer};
pub use intervention::{build_plan, compute_direction, compute_sigma, DirectionMode, DirectionSpec, InterventionPlan, InterventionScope};
pub use model::{load_model, CapturedActivations, HeadId, Model, ModelConfig};
pub use probe::{probe_gradient, probe_predict, rank_heads, train_probe, HeadScore, ProbeKind, ProbeParams, ProbeTrainConfig};
pub use tokenizer::{ByteTokenizer, Tokenizer};
pub use fixture::{make_synthetic_fixture, Fixture, FixtureSpec};
pub use pipeline::{run_pipeline, run_sweep, PipelineConfig, SweepGrid};
