//! KernelSHAP over word groups.
//!
//! [`explain`] chooses a sample cap, plans coalitions, renders and scores each
//! one through the model and evaluator, and solves the constrained regression
//! for one Shapley value per group.

pub mod sampling;
pub mod wls;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use futures::{StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sampling::{binomial, kernel_weight, sample_coalitions, SamplePlan};
pub use wls::{solve_wls, CoalitionSample, RIDGE};

use crate::clock::Clock;
use crate::evaluator::EvaluatorSpec;
use crate::model_client::{effective_sample_cap, ModelError, ModelSpec, PromptScorer, ScoreError};
use crate::perturbation::{render_coalition, PerturbationError};
use crate::segmentation::{tokenize_words, GroupId, Segmentation, SegmentationError};
use crate::task_store::Task;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttributionError {
    #[error("kernel weight is undefined for coalition size {size} of {groups}")]
    DegenerateSize { groups: usize, size: usize },
    #[error("sample cap {cap} is below the minimum of {} for {groups} groups", groups + 2)]
    CapBelowFloor { groups: usize, cap: usize },
    #[error("sample mask has {found} bits, expected {expected}")]
    SampleShape { expected: usize, found: usize },
    #[error("normal equations are singular even with ridge (eigenvalues in [{min_eigenvalue:e}, {max_eigenvalue:e}])")]
    SingularSystem { min_eigenvalue: f64, max_eigenvalue: f64 },
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Perturbation(#[from] PerturbationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("coalition {mask} failed: {source}")]
    Coalition { mask: String, source: ScoreError },
    #[error("time budget of {budget_s}s exhausted after {completed} of {total} coalitions")]
    BudgetExhausted {
        budget_s: f64,
        completed: usize,
        total: usize,
    },
}

impl AttributionError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            AttributionError::DegenerateSize { .. }
            | AttributionError::SampleShape { .. }
            | AttributionError::SingularSystem { .. } => "numerical",
            AttributionError::CapBelowFloor { .. } => "cap_below_floor",
            AttributionError::Segmentation(SegmentationError::InputMismatch { .. }) => "input_mismatch",
            AttributionError::Segmentation(_) => "invalid_segmentation",
            AttributionError::Perturbation(_) => "invalid_template",
            AttributionError::Model(e) => e.code(),
            AttributionError::Coalition { source, .. } => source.code(),
            AttributionError::BudgetExhausted { .. } => "budget_exhausted",
        }
    }
}

/// Coalitions scored so far out of the planned total.
#[derive(Debug, Default)]
pub struct Progress {
    done: AtomicUsize,
    total: AtomicUsize,
}

impl Progress {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn done(&self) -> usize {
        self.done.load(Ordering::SeqCst)
    }

    pub fn total(&self) -> usize {
        self.total.load(Ordering::SeqCst)
    }

    /// Adds `n` coalitions to the planned total; `done` never goes back.
    pub(crate) fn plan(&self, n: usize) {
        self.total.fetch_add(n, Ordering::SeqCst);
    }

    pub(crate) fn tick(&self) {
        self.done.fetch_add(1, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone)]
pub struct ExplainOptions {
    pub seed: u64,
    /// Further lowers the budget-derived sample cap.
    pub max_samples: Option<usize>,
    /// Coalitions scored concurrently; the model's rate limiter still applies.
    pub concurrency: usize,
    pub clock: Clock,
    pub progress: Option<Arc<Progress>>,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_samples: None,
            concurrency: 16,
            clock: Clock::System,
            progress: None,
        }
    }
}

impl ExplainOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: ModelSpec,
    pub evaluator: EvaluatorSpec,
    pub seed: u64,
    pub votes_per_prompt: usize,
    /// 2·M + 2048.
    pub library_cap: usize,
    /// floor(t_max · r_API / votes).
    pub budget_cap: usize,
    pub sample_cap: usize,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub group_ids: Vec<GroupId>,
    /// Shapley value per group, aligned with `group_ids`.
    pub phi: Vec<f64>,
    /// f(∅): probability with every group removed.
    pub base_value: f64,
    /// f(x): probability of the unperturbed input.
    pub full_value: f64,
    pub n_samples_used: usize,
    pub exact: bool,
    pub provenance: Provenance,
}

impl AttributionResult {
    /// |Σφ − (f(x) − f(∅))|.
    pub fn efficiency_gap(&self) -> f64 {
        let sum: f64 = self.phi.iter().sum();
        (sum - (self.full_value - self.base_value)).abs()
    }

    pub fn phi_of(&self, id: GroupId) -> Option<f64> {
        self.group_ids
            .iter()
            .position(|g| *g == id)
            .map(|pos| self.phi[pos])
    }

    /// Checks that this result was computed over `seg`'s groups.
    pub fn matches(&self, seg: &Segmentation) -> bool {
        self.group_ids == seg.group_ids()
    }
}

/// Scores each prompt in order, at most `concurrency` at a time, within the
/// model's time budget. The returned probabilities line up with `prompts`.
pub(crate) async fn score_prompts(
    scorer: &PromptScorer,
    prompts: &[(String, String)],
    concurrency: usize,
    budget_s: f64,
    progress: Option<&Progress>,
) -> Result<Vec<f64>, AttributionError> {
    let completed = AtomicUsize::new(0);
    let completed_ref = &completed;
    let jobs: Vec<_> = prompts
        .iter()
        .map(|(label, prompt)| {
            let completed = completed_ref;
            async move {
                let p = scorer
                    .probability(prompt)
                    .await
                    .map_err(|source| AttributionError::Coalition {
                        mask: label.clone(),
                        source,
                    })?;
                completed.fetch_add(1, Ordering::SeqCst);
                if let Some(progress) = progress {
                    progress.tick();
                }
                Ok::<f64, AttributionError>(p)
            }
        })
        .collect();
    let work = futures::stream::iter(jobs)
        .buffered(concurrency.max(1))
        .try_collect::<Vec<f64>>();
    match tokio::time::timeout(Duration::from_secs_f64(budget_s), work).await {
        Ok(result) => result,
        Err(_) => Err(AttributionError::BudgetExhausted {
            budget_s,
            completed: completed.load(Ordering::SeqCst),
            total: prompts.len(),
        }),
    }
}

/// Shapley values of `seg`'s groups for `task` under `scorer`.
pub async fn explain(
    task: &Task,
    seg: &Segmentation,
    scorer: &PromptScorer,
    options: &ExplainOptions,
) -> Result<AttributionResult, AttributionError> {
    let started_at = options.clock.now();
    let tokens = tokenize_words(&task.input)?;
    seg.check_input(&tokens)?;
    let groups = seg.len();

    let logical = task.evaluator.operator.is_logical();
    let model = task.model.with_evaluator_votes(logical);
    let mut cap = effective_sample_cap(groups, &model)?;
    if let Some(limit) = options.max_samples {
        if limit < groups + 2 {
            return Err(AttributionError::CapBelowFloor { groups, cap: limit });
        }
        cap = cap.min(limit);
    }

    let plan = sample_coalitions(groups, cap, options.seed)?;
    let prompts = plan
        .masks
        .iter()
        .map(|mask| {
            render_coalition(&task.template, &tokens, seg, mask).map(|p| (mask.to_string(), p))
        })
        .collect::<Result<Vec<_>, _>>()?;

    if let Some(progress) = &options.progress {
        progress.plan(prompts.len());
    }
    let probabilities = score_prompts(
        scorer,
        &prompts,
        options.concurrency,
        model.time_budget_s,
        options.progress.as_deref(),
    )
    .await?;

    let base_value = probabilities[0];
    let full_value = probabilities[1];
    let samples: Vec<CoalitionSample> = plan
        .masks
        .into_iter()
        .zip(plan.weights)
        .zip(&probabilities)
        .skip(2)
        .map(|((mask, kernel_weight), &probability)| CoalitionSample {
            mask,
            kernel_weight,
            probability,
        })
        .collect();
    let phi = solve_wls(&samples, groups, full_value, base_value)?;

    Ok(AttributionResult {
        group_ids: seg.group_ids(),
        phi,
        base_value,
        full_value,
        n_samples_used: probabilities.len(),
        exact: plan.exact,
        provenance: Provenance {
            votes_per_prompt: model.votes_per_prompt,
            library_cap: 2 * groups + crate::model_client::LIBRARY_SAMPLE_ALLOWANCE,
            budget_cap: model.budget_sample_limit(),
            model,
            evaluator: task.evaluator.clone(),
            seed: options.seed,
            sample_cap: cap,
            started_at,
            finished_at: options.clock.now(),
        },
    })
}
