//! Turning free-text model responses into booleans.
//!
//! String operators are pure. Logical operators ask an external NLI judge,
//! which answers `{"label": "entailment" | "neutral" | "contradiction"}` for a
//! `{"premise", "hypothesis"}` pair.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_client::http::{post_json_with_retry, RetryPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluatorError {
    #[error("invalid evaluator: {0}")]
    InvalidSpec(String),
    #[error("NLI judge failed: {0}")]
    NliEndpoint(String),
    #[error("cannot aggregate an empty vote list")]
    EmptyVotes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operator {
    Contains,
    Equals,
    StartsWith,
    EndsWith,
    Entails,
    Contradicts,
    SemanticallyEquals,
}

impl Operator {
    pub const ALL: [Operator; 7] = [
        Operator::Contains,
        Operator::Equals,
        Operator::StartsWith,
        Operator::EndsWith,
        Operator::Entails,
        Operator::Contradicts,
        Operator::SemanticallyEquals,
    ];

    /// Logical operators go through the NLI judge and use a single response.
    pub fn is_logical(self) -> bool {
        matches!(
            self,
            Operator::Entails | Operator::Contradicts | Operator::SemanticallyEquals
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvaluatorSpec {
    pub operator: Operator,
    pub target_answer: String,
    #[serde(default)]
    pub case_sensitive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli_endpoint: Option<String>,
}

impl EvaluatorSpec {
    pub fn new(operator: Operator, target_answer: impl Into<String>) -> Self {
        Self {
            operator,
            target_answer: target_answer.into(),
            case_sensitive: false,
            nli_endpoint: None,
        }
    }

    pub fn validate(&self) -> Result<(), EvaluatorError> {
        if self.target_answer.trim().is_empty() {
            return Err(EvaluatorError::InvalidSpec(
                "target_answer must not be empty".into(),
            ));
        }
        if self.operator.is_logical() && self.nli_endpoint.is_none() {
            return Err(EvaluatorError::InvalidSpec(format!(
                "{:?} requires nli_endpoint",
                self.operator
            )));
        }
        Ok(())
    }

    /// Stable identity used in cache keys.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("evaluator spec serializes")
    }
}

/// Applies a string operator. Returns `None` for logical operators.
pub fn evaluate_string(spec: &EvaluatorSpec, response: &str) -> Option<bool> {
    let (response, target) = if spec.case_sensitive {
        (response.trim().to_string(), spec.target_answer.trim().to_string())
    } else {
        (
            response.trim().to_lowercase(),
            spec.target_answer.trim().to_lowercase(),
        )
    };
    let result = match spec.operator {
        Operator::Contains => response.contains(&target),
        Operator::Equals => response == target,
        Operator::StartsWith => response.starts_with(&target),
        Operator::EndsWith => response.ends_with(&target),
        _ => return None,
    };
    Some(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

#[derive(Debug, Serialize)]
struct NliRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Debug, Deserialize)]
struct NliResponse {
    label: NliLabel,
}

/// Client for the external NLI judge.
#[derive(Debug, Clone)]
pub struct NliJudge {
    http: reqwest::Client,
    endpoint: String,
    retry: RetryPolicy,
}

impl NliJudge {
    pub fn new(http: reqwest::Client, endpoint: impl Into<String>) -> Self {
        Self {
            http,
            endpoint: endpoint.into(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub async fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliLabel, EvaluatorError> {
        let body = NliRequest { premise, hypothesis };
        let reply: NliResponse = post_json_with_retry(&self.http, &self.endpoint, None, &body, &self.retry, None)
            .await
            .map_err(|e| EvaluatorError::NliEndpoint(e.to_string()))?;
        Ok(reply.label)
    }
}

/// An evaluator spec bound to whatever it needs to run.
#[derive(Debug, Clone)]
pub struct Evaluator {
    spec: EvaluatorSpec,
    judge: Option<NliJudge>,
}

impl Evaluator {
    pub fn new(spec: EvaluatorSpec, http: &reqwest::Client) -> Result<Self, EvaluatorError> {
        spec.validate()?;
        let judge = match (&spec.nli_endpoint, spec.operator.is_logical()) {
            (Some(url), true) => Some(NliJudge::new(http.clone(), url.clone())),
            _ => None,
        };
        Ok(Self { spec, judge })
    }

    pub fn spec(&self) -> &EvaluatorSpec {
        &self.spec
    }

    pub async fn evaluate(&self, response: &str) -> Result<bool, EvaluatorError> {
        if let Some(result) = evaluate_string(&self.spec, response) {
            return Ok(result);
        }
        let judge = self
            .judge
            .as_ref()
            .ok_or_else(|| EvaluatorError::InvalidSpec("missing NLI judge".into()))?;
        let response = response.trim();
        let target = self.spec.target_answer.trim();
        match self.spec.operator {
            Operator::Entails => Ok(judge.classify(response, target).await? == NliLabel::Entailment),
            Operator::Contradicts => {
                Ok(judge.classify(response, target).await? == NliLabel::Contradiction)
            }
            Operator::SemanticallyEquals => {
                if judge.classify(response, target).await? != NliLabel::Entailment {
                    return Ok(false);
                }
                Ok(judge.classify(target, response).await? == NliLabel::Entailment)
            }
            _ => unreachable!("string operators handled above"),
        }
    }
}

/// Fraction of true votes.
pub fn aggregate(votes: &[bool]) -> Result<f64, EvaluatorError> {
    if votes.is_empty() {
        return Err(EvaluatorError::EmptyVotes);
    }
    let yes = votes.iter().filter(|&&v| v).count();
    Ok(yes as f64 / votes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(op: Operator, target: &str) -> EvaluatorSpec {
        EvaluatorSpec::new(op, target)
    }

    #[test]
    fn contains_substring() {
        assert_eq!(
            evaluate_string(&spec(Operator::Contains, "no"), "The answer is no."),
            Some(true)
        );
    }

    #[test]
    fn equals_folds_case_and_trims() {
        assert_eq!(
            evaluate_string(&spec(Operator::Equals, "Paris"), "  paris\n"),
            Some(true)
        );
        let mut strict = spec(Operator::Equals, "Paris");
        strict.case_sensitive = true;
        assert_eq!(evaluate_string(&strict, "paris"), Some(false));
    }

    #[test]
    fn starts_and_ends() {
        assert_eq!(evaluate_string(&spec(Operator::StartsWith, "yes"), "Yes, it is"), Some(true));
        assert_eq!(evaluate_string(&spec(Operator::EndsWith, "yes"), "Yes, it is"), Some(false));
        assert_eq!(evaluate_string(&spec(Operator::EndsWith, "is"), "Yes, it is "), Some(true));
    }

    #[test]
    fn logical_operators_are_not_string_operators() {
        assert_eq!(evaluate_string(&spec(Operator::Entails, "x"), "x"), None);
    }

    #[test]
    fn validation() {
        assert!(spec(Operator::Contains, " ").validate().is_err());
        assert!(spec(Operator::Entails, "x").validate().is_err());
        let mut ok = spec(Operator::Entails, "x");
        ok.nli_endpoint = Some("http://localhost:1/nli".into());
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn aggregates_votes() {
        assert_eq!(aggregate(&[true; 10]).unwrap(), 1.0);
        let mut v = vec![true; 7];
        v.extend([false; 3]);
        assert_eq!(aggregate(&v).unwrap(), 0.7);
        assert_eq!(aggregate(&[false]).unwrap(), 0.0);
        assert_eq!(aggregate(&[]), Err(EvaluatorError::EmptyVotes));
    }

    proptest! {
        #[test]
        fn contains_is_implied(response in ".{0,24}", target in "[a-zA-Z ]{1,6}", cs in any::<bool>()) {
            prop_assume!(!target.trim().is_empty());
            let mut s = spec(Operator::Contains, &target);
            s.case_sensitive = cs;
            let contains = evaluate_string(&s, &response).unwrap();
            for op in [Operator::Equals, Operator::StartsWith, Operator::EndsWith] {
                s.operator = op;
                if evaluate_string(&s, &response).unwrap() {
                    prop_assert!(contains);
                }
            }
        }

        #[test]
        fn aggregate_is_bounded_and_order_free(mut votes in proptest::collection::vec(any::<bool>(), 1..40)) {
            let p = aggregate(&votes).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            votes.reverse();
            prop_assert_eq!(aggregate(&votes).unwrap(), p);
            votes.sort();
            prop_assert_eq!(aggregate(&votes).unwrap(), p);
        }
    }
}
