//! Deletion and insertion curves over the share of words perturbed.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{score_prompts, AttributionError, AttributionResult, ExplainOptions};
use crate::model_client::PromptScorer;
use crate::perturbation::{render_coalition, CoalitionMask};
use crate::segmentation::{tokenize_words, GroupId, Segmentation};
use crate::task_store::Task;

/// Floor on the normalizer |f(x) − f(∅)|.
pub const AUC_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FidelityError {
    #[error("attribution does not match the segmentation's groups")]
    ResultMismatch,
    #[error("group order must list every group exactly once")]
    InvalidOrder,
    #[error(transparent)]
    Attribution(#[from] AttributionError),
}

impl FidelityError {
    pub fn code(&self) -> &'static str {
        match self {
            FidelityError::ResultMismatch => "result_mismatch",
            FidelityError::InvalidOrder => "invalid_order",
            FidelityError::Attribution(e) => e.code(),
        }
    }
}

impl From<crate::segmentation::SegmentationError> for FidelityError {
    fn from(e: crate::segmentation::SegmentationError) -> Self {
        FidelityError::Attribution(e.into())
    }
}

impl From<crate::perturbation::PerturbationError> for FidelityError {
    fn from(e: crate::perturbation::PerturbationError) -> Self {
        FidelityError::Attribution(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Deletion,
    Insertion,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Deletion => "deletion",
            Direction::Insertion => "insertion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    /// Share of words removed (deletion) or inserted (insertion).
    pub x: f64,
    /// f(x) − f(xᵏ), signed.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    pub direction: Direction,
    pub points: Vec<CurvePoint>,
    pub auc: f64,
    pub group_order: Vec<GroupId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub deletion: PerturbationCurve,
    pub insertion: PerturbationCurve,
    /// (deletion AUC + (1 − insertion AUC)) / 2.
    pub score: f64,
}

impl FidelityReport {
    pub fn new(deletion: PerturbationCurve, insertion: PerturbationCurve) -> Self {
        let score = combined_score(deletion.auc, insertion.auc);
        Self {
            deletion,
            insertion,
            score,
        }
    }

    /// `direction,k,x,y` rows, deletion first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("direction,k,x,y\n");
        for curve in [&self.deletion, &self.insertion] {
            for p in &curve.points {
                let _ = writeln!(out, "{},{},{},{}", curve.direction.as_str(), p.k, p.x, p.y);
            }
        }
        out
    }
}

pub fn combined_score(deletion_auc: f64, insertion_auc: f64) -> f64 {
    (deletion_auc + (1.0 - insertion_auc)) / 2.0
}

/// Groups by descending φ; equal values put the smaller id first.
pub fn attribution_order(result: &AttributionResult) -> Vec<GroupId> {
    let mut order: Vec<(GroupId, f64)> = result
        .group_ids
        .iter()
        .copied()
        .zip(result.phi.iter().copied())
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().map(|(id, _)| id).collect()
}

/// Share of words in the first `k` groups of `order`.
pub fn word_weighted_x(seg: &Segmentation, order: &[GroupId], k: usize) -> Result<f64, FidelityError> {
    let mut words = 0usize;
    for id in order.iter().take(k) {
        words += seg.group(*id)?.len();
    }
    Ok(words as f64 / seg.token_count() as f64)
}

/// Trapezoid area of |y| / D over x, clamped to [0, 1], with
/// D = max(|f(x) − f(∅)|, ε).
pub fn curve_auc(points: &[CurvePoint], full_value: f64, base_value: f64) -> f64 {
    let scale = (full_value - base_value).abs().max(AUC_EPSILON);
    let area: f64 = points
        .windows(2)
        .map(|w| (w[1].x - w[0].x) * (w[0].y.abs() + w[1].y.abs()) / 2.0)
        .sum();
    (area / scale).clamp(0.0, 1.0)
}

fn check_order(seg: &Segmentation, order: &[GroupId]) -> Result<(), FidelityError> {
    let given: BTreeSet<GroupId> = order.iter().copied().collect();
    let expected: BTreeSet<GroupId> = seg.group_ids().into_iter().collect();
    if given != expected || order.len() != seg.len() {
        return Err(FidelityError::InvalidOrder);
    }
    Ok(())
}

/// Curve for an arbitrary group order: step k removes (deletion) or keeps
/// only (insertion) the first k groups of `order`.
pub async fn perturbation_curve(
    task: &Task,
    seg: &Segmentation,
    scorer: &PromptScorer,
    direction: Direction,
    order: &[GroupId],
    options: &ExplainOptions,
) -> Result<PerturbationCurve, FidelityError> {
    check_order(seg, order)?;
    let tokens = tokenize_words(&task.input)?;
    seg.check_input(&tokens)?;
    let groups = seg.len();

    let positions: Vec<usize> = order
        .iter()
        .map(|id| seg.position_of(*id))
        .collect::<Result<_, _>>()?;
    let mut prompts = Vec::with_capacity(groups + 1);
    for k in 0..=groups {
        let top = positions[..k].iter().copied();
        let mask = match direction {
            Direction::Deletion => CoalitionMask::from_members(groups, top).complement(),
            Direction::Insertion => CoalitionMask::from_members(groups, top),
        };
        let prompt = render_coalition(&task.template, &tokens, seg, &mask)?;
        prompts.push((mask.to_string(), prompt));
    }

    let budget = task
        .model
        .with_evaluator_votes(task.evaluator.operator.is_logical())
        .time_budget_s;
    if let Some(progress) = &options.progress {
        progress.plan(prompts.len());
    }
    let probs = score_prompts(
        scorer,
        &prompts,
        options.concurrency,
        budget,
        options.progress.as_deref(),
    )
    .await?;

    let (full_value, base_value) = match direction {
        Direction::Deletion => (probs[0], probs[groups]),
        Direction::Insertion => (probs[groups], probs[0]),
    };
    let mut points = Vec::with_capacity(groups + 1);
    for (k, p) in probs.iter().enumerate() {
        points.push(CurvePoint {
            k,
            x: word_weighted_x(seg, order, k)?,
            y: full_value - p,
        });
    }
    let auc = curve_auc(&points, full_value, base_value);
    Ok(PerturbationCurve {
        direction,
        points,
        auc,
        group_order: order.to_vec(),
    })
}

pub async fn deletion_curve(
    task: &Task,
    seg: &Segmentation,
    result: &AttributionResult,
    scorer: &PromptScorer,
    options: &ExplainOptions,
) -> Result<PerturbationCurve, FidelityError> {
    if !result.matches(seg) {
        return Err(FidelityError::ResultMismatch);
    }
    let order = attribution_order(result);
    perturbation_curve(task, seg, scorer, Direction::Deletion, &order, options).await
}

pub async fn insertion_curve(
    task: &Task,
    seg: &Segmentation,
    result: &AttributionResult,
    scorer: &PromptScorer,
    options: &ExplainOptions,
) -> Result<PerturbationCurve, FidelityError> {
    if !result.matches(seg) {
        return Err(FidelityError::ResultMismatch);
    }
    let order = attribution_order(result);
    perturbation_curve(task, seg, scorer, Direction::Insertion, &order, options).await
}

/// Both curves and the combined score for one explanation.
pub async fn evaluate_fidelity(
    task: &Task,
    seg: &Segmentation,
    result: &AttributionResult,
    scorer: &PromptScorer,
    options: &ExplainOptions,
) -> Result<FidelityReport, FidelityError> {
    let deletion = deletion_curve(task, seg, result, scorer, options).await?;
    let insertion = insertion_curve(task, seg, result, scorer, options).await?;
    Ok(FidelityReport::new(deletion, insertion))
}
