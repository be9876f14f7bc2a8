use grain_attr_core::evaluator::{Evaluator, EvaluatorError, EvaluatorSpec, NliJudge, NliLabel, Operator};
use grain_attr_testkit::{StubConfig, StubServer};

fn nli_stub() -> StubServer {
    StubServer::spawn(
        StubConfig::default()
            .with_nli("It is raining.", "The ground is wet.", "entailment")
            .with_nli("The ground is wet.", "It is raining.", "neutral")
            .with_nli("It is sunny.", "It is raining.", "contradiction")
            .with_nli("Paris is the capital.", "The capital is Paris.", "entailment")
            .with_nli("The capital is Paris.", "Paris is the capital.", "entailment"),
    )
}

fn evaluator(stub: &StubServer, op: Operator, target: &str) -> Evaluator {
    let mut spec = EvaluatorSpec::new(op, target);
    spec.nli_endpoint = Some(stub.nli_url());
    Evaluator::new(spec, &reqwest::Client::new()).unwrap()
}

#[tokio::test]
async fn judge_reads_labels() {
    let stub = nli_stub();
    let judge = NliJudge::new(reqwest::Client::new(), stub.nli_url());
    assert_eq!(
        judge.classify("It is raining.", "The ground is wet.").await.unwrap(),
        NliLabel::Entailment
    );
    assert_eq!(judge.classify("x", "y").await.unwrap(), NliLabel::Neutral);
    let sent = stub.nli_requests();
    assert_eq!(sent[0].body["premise"], "It is raining.");
    assert_eq!(sent[0].body["hypothesis"], "The ground is wet.");
}

#[tokio::test]
async fn logical_operator_truth_table() {
    let stub = nli_stub();
    let cases = [
        (Operator::Entails, "It is raining.", "The ground is wet.", true),
        (Operator::Entails, "The ground is wet.", "It is raining.", false),
        (Operator::Entails, "It is sunny.", "It is raining.", false),
        (Operator::Contradicts, "It is sunny.", "It is raining.", true),
        (Operator::Contradicts, "It is raining.", "The ground is wet.", false),
        (Operator::SemanticallyEquals, "Paris is the capital.", "The capital is Paris.", true),
        (Operator::SemanticallyEquals, "It is raining.", "The ground is wet.", false),
        (Operator::SemanticallyEquals, "  Paris is the capital.\n", "The capital is Paris.", true),
    ];
    for (op, response, target, expected) in cases {
        let got = evaluator(&stub, op, target).evaluate(response).await.unwrap();
        assert_eq!(got, expected, "{op:?} {response:?} {target:?}");
    }
}

#[tokio::test]
async fn one_way_entailment_short_circuits() {
    let stub = nli_stub();
    let e = evaluator(&stub, Operator::SemanticallyEquals, "It is raining.");
    assert!(!e.evaluate("The ground is wet.").await.unwrap());
    assert_eq!(stub.nli_requests().len(), 1);
}

#[tokio::test]
async fn string_operators_never_call_the_judge() {
    let stub = nli_stub();
    let e = evaluator(&stub, Operator::Contains, "rain");
    assert!(e.evaluate("It is raining.").await.unwrap());
    assert!(stub.nli_requests().is_empty());
}

#[test]
fn logical_operator_without_endpoint_is_invalid() {
    let spec = EvaluatorSpec::new(Operator::Entails, "x");
    assert!(matches!(
        Evaluator::new(spec, &reqwest::Client::new()),
        Err(EvaluatorError::InvalidSpec(_))
    ));
}

#[tokio::test]
async fn unreachable_judge_is_an_endpoint_error() {
    let mut spec = EvaluatorSpec::new(Operator::Entails, "x");
    spec.nli_endpoint = Some("http://127.0.0.1:9/nli".into());
    let judge = NliJudge::new(reqwest::Client::new(), "http://127.0.0.1:9/nli").with_retry(
        grain_attr_core::model_client::RetryPolicy {
            max_retries: 0,
            initial_backoff: std::time::Duration::from_millis(1),
            request_timeout: std::time::Duration::from_secs(2),
        },
    );
    assert!(matches!(judge.classify("a", "b").await, Err(EvaluatorError::NliEndpoint(_))));
}
