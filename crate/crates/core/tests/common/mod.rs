#![allow(dead_code)]

use std::collections::BTreeSet;

use chrono::{TimeZone, Utc};
use grain_attr_core::evaluator::{EvaluatorSpec, Operator};
use grain_attr_core::model_client::{MockModel, MockModelSpec, ModelSpec};
use grain_attr_core::perturbation::{render_coalition, CoalitionMask};
use grain_attr_core::segmentation::{tokenize_words, Group, GroupId, Segmentation};
use grain_attr_core::task_store::Task;

/// Brute-force Shapley values of a coalition game over masks.
pub fn shapley_oracle(groups: usize, value: impl Fn(&CoalitionMask) -> f64) -> Vec<f64> {
    grain_attr_testkit::oracle::shapley_values(groups, |bits| value(&mask_of(groups, bits)))
}

pub fn mask_of(groups: usize, bits: u64) -> CoalitionMask {
    CoalitionMask::new((0..groups).map(|j| bits & (1 << j) != 0).collect())
}

/// A task whose input is the given word chunks, one group per chunk.
pub fn chunked_task(chunks: &[&str], mock: MockModelSpec, votes: usize) -> (Task, Segmentation) {
    let input = chunks.join(" ");
    let mut model = ModelSpec::mock(mock);
    model.votes_per_prompt = votes;
    model.time_budget_s = 1e6;
    model.rate_limit_rps = 1e3;
    let task = Task {
        id: "t1".into(),
        template: "Q: {input}\nA:".into(),
        input,
        evaluator: EvaluatorSpec::new(Operator::Contains, "yes"),
        model,
        created_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
    };
    let tokens = tokenize_words(&task.input).unwrap();
    let mut groups = Vec::new();
    let mut next = 0;
    for (i, chunk) in chunks.iter().enumerate() {
        let n = chunk.split_whitespace().count();
        groups.push(Group {
            id: GroupId(i as u32),
            label: None,
            token_indices: (next..next + n).collect::<BTreeSet<_>>(),
        });
        next += n;
    }
    let seg = Segmentation::from_groups(&tokens, groups).unwrap();
    (task, seg)
}

/// v(S) for a mock-model task, computed by rendering and scoring directly.
pub fn mock_value(task: &Task, seg: &Segmentation) -> impl Fn(&CoalitionMask) -> f64 {
    let tokens = tokenize_words(&task.input).unwrap();
    let model = MockModel::new(task.model.mock.clone().unwrap());
    let votes = task.model.votes_per_prompt;
    let template = task.template.clone();
    let seg = seg.clone();
    move |mask| {
        let prompt = render_coalition(&template, &tokens, &seg, mask).unwrap();
        model.probability(&prompt, votes)
    }
}

pub fn keywords(pairs: &[(&str, f64)]) -> std::collections::BTreeMap<String, f64> {
    pairs.iter().map(|(k, w)| (k.to_string(), *w)).collect()
}
