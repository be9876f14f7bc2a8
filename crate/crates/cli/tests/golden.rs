mod common;

use grain_attr_core::model_client::MockModel;
use grain_attr_core::perturbation::{render_coalition, CoalitionMask};
use grain_attr_core::task_store::{from_document, DocumentKind, ExplanationRecord};
use grain_attr_testkit::oracle::shapley_values;

#[test]
fn restaurant_goldens_are_byte_identical() {
    let n = common::check_goldens(std::env::var_os("BLESS").is_some()).unwrap();
    assert_eq!(n, 11);
}

#[test]
fn golden_phi_matches_brute_force() {
    for variant in ["sentence", "refined"] {
        let path = common::golden_dir().join(format!("{variant}.explanation.json"));
        let record: ExplanationRecord =
            from_document(DocumentKind::Explanation, &std::fs::read_to_string(path).unwrap()).unwrap();
        assert!(record.attribution.exact);
        let m = record.segmentation.len();
        let model = MockModel::new(record.task.model.mock.clone().unwrap());
        let votes = record.task.model.votes_per_prompt;
        let truth = shapley_values(m, |bits| {
            let mask = CoalitionMask::new((0..m).map(|j| bits & (1 << j) != 0).collect());
            let prompt = render_coalition(&record.task.template, &record.tokens, &record.segmentation, &mask).unwrap();
            model.probability(&prompt, votes)
        });
        for (got, want) in record.attribution.phi.iter().zip(&truth) {
            assert!((got - want).abs() < 1e-6, "{variant}: {:?} vs {truth:?}", record.attribution.phi);
        }
    }
}

#[test]
fn refined_groups_win_the_comparison() {
    let text = std::fs::read_to_string(common::golden_dir().join("compare.txt")).unwrap();
    assert!(text.ends_with("winner: fixtures/restaurant/refined.groups.json\n"), "{text}");
}
