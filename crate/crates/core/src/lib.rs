//! Shapley-value explanations of black-box text models over user-defined
//! word groups, with deletion/insertion fidelity curves.

pub mod attribution;
pub mod clock;
pub mod evaluator;
pub mod fidelity;
pub mod model_client;
pub mod perturbation;
pub mod segmentation;
pub mod session;
pub mod task_store;

pub use attribution::{explain, AttributionError, AttributionResult, ExplainOptions, Progress};
pub use clock::Clock;
pub use evaluator::{EvaluatorSpec, Operator};
pub use fidelity::{evaluate_fidelity, FidelityReport, PerturbationCurve};
pub use model_client::{effective_sample_cap, MockModelSpec, ModelSpec};
pub use perturbation::{render_coalition, CoalitionMask};
pub use segmentation::{
    preset_segmentation, tokenize_words, GroupId, PresetLevel, Segmentation, TokenizedText,
};
pub use session::Session;
pub use task_store::{ExplanationRecord, Task, TaskStore};
