//! Acceptance gate: one line per criterion, nonzero exit if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use grain_attr_core::attribution::{explain, kernel_weight, AttributionResult, ExplainOptions};
use grain_attr_core::evaluator::{Evaluator, EvaluatorSpec, Operator};
use grain_attr_core::fidelity::{attribution_order, evaluate_fidelity, perturbation_curve, Direction};
use grain_attr_core::model_client::{
    effective_sample_cap, HttpChatClient, Interaction, MockModelSpec, ModelError, ModelSpec, RateLimiter,
    ResponseSource, VoteMode,
};
use grain_attr_core::segmentation::{tokenize_words, Group, GroupId, Segmentation};
use grain_attr_core::task_store::Task;
use grain_attr_core::{Clock, Session};
use grain_attr_testkit::oracle;
use grain_attr_testkit::{StubConfig, StubServer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Outcome + 'a>);

fn keyword(j: usize) -> String {
    format!("w{j}x")
}

/// One group per chunk; chunk j holds `keyword(j)` plus `filler[j]` extra words.
fn task_with(filler: &[usize], mock: MockModelSpec, votes: usize) -> (Task, Segmentation) {
    let chunks: Vec<String> = filler
        .iter()
        .enumerate()
        .map(|(j, &extra)| {
            let mut words = vec![keyword(j)];
            words.extend((0..extra).map(|_| "pad".to_string()));
            words.join(" ")
        })
        .collect();
    let mut model = ModelSpec::mock(mock);
    model.votes_per_prompt = votes;
    model.rate_limit_rps = 1e4;
    model.time_budget_s = 1e4;
    let task = Task {
        id: "acceptance".into(),
        template: "Q: {input}\nA:".into(),
        input: chunks.join(" "),
        evaluator: EvaluatorSpec::new(Operator::Contains, "yes"),
        model,
        created_at: chrono::DateTime::UNIX_EPOCH,
    };
    let tokens = tokenize_words(&task.input).unwrap();
    let mut next = 0;
    let groups = filler
        .iter()
        .enumerate()
        .map(|(j, &extra)| {
            let indices: BTreeSet<usize> = (next..next + 1 + extra).collect();
            next += 1 + extra;
            Group {
                id: GroupId(j as u32),
                label: None,
                token_indices: indices,
            }
        })
        .collect();
    let seg = Segmentation::from_groups(&tokens, groups).unwrap();
    (task, seg)
}

fn options(seed: u64) -> ExplainOptions {
    ExplainOptions {
        clock: Clock::Fixed(chrono::DateTime::UNIX_EPOCH),
        ..ExplainOptions::with_seed(seed)
    }
}

async fn run_explain(task: &Task, seg: &Segmentation, opts: &ExplainOptions) -> AttributionResult {
    let session = Session::new();
    let scorer = session.scorer(task).unwrap();
    explain(task, seg, &scorer, opts).await.unwrap()
}

/// Mock keyword weights in units of 1/20, with the analytic value in the same units.
struct UnitGame {
    bias: i64,
    weights: Vec<i64>,
    pairs: Vec<(usize, usize, i64)>,
}

impl UnitGame {
    fn mock(&self) -> MockModelSpec {
        MockModelSpec {
            bias: self.bias as f64 / 20.0,
            keyword_weights: self
                .weights
                .iter()
                .enumerate()
                .map(|(j, &w)| (keyword(j), w as f64 / 20.0))
                .collect(),
            interactions: self
                .pairs
                .iter()
                .map(|&(a, b, w)| Interaction {
                    all_of: vec![keyword(a), keyword(b)],
                    weight: w as f64 / 20.0,
                })
                .collect(),
            votes: VoteMode::Proportional,
            ..Default::default()
        }
    }

    fn value(&self, bits: u64) -> f64 {
        let has = |j: usize| bits & (1 << j) != 0;
        let mut units = self.bias;
        for (j, w) in self.weights.iter().enumerate() {
            if has(j) {
                units += w;
            }
        }
        for &(a, b, w) in &self.pairs {
            if has(a) && has(b) {
                units += w;
            }
        }
        units.clamp(0, 20) as f64 / 20.0
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

async fn exact_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut runs = 0;
    for m in 2..=8usize {
        let filler: Vec<usize> = (0..m).map(|_| rng.random_range(0..3)).collect();
        let additive = UnitGame {
            bias: 1,
            weights: (0..m).map(|_| rng.random_range(0..=2)).collect(),
            pairs: vec![],
        };
        let interaction = UnitGame {
            bias: 2,
            weights: (0..m).map(|_| rng.random_range(0..=2)).collect(),
            pairs: vec![(0, 1, 3), (m - 1, 0, -2)],
        };
        for game in [&additive, &interaction] {
            let (task, seg) = task_with(&filler, game.mock(), 20);
            let result = run_explain(&task, &seg, &options(0)).await;
            if !result.exact {
                return Err(format!("M={m} did not run in exact mode"));
            }
            let truth = oracle::shapley_values(m, |b| game.value(b));
            worst = worst.max(max_abs_diff(&result.phi, &truth));
            runs += 1;
        }

        let majority = MockModelSpec {
            keyword_weights: (0..m).map(|j| (keyword(j), 1.0 / m as f64)).collect(),
            threshold: ((m / 2) as f64 + 0.5) / m as f64,
            votes: VoteMode::Threshold,
            ..Default::default()
        };
        let (task, seg) = task_with(&filler, majority, 10);
        let result = run_explain(&task, &seg, &options(0)).await;
        let truth = oracle::shapley_values(m, |b| if 2 * b.count_ones() as usize > m { 1.0 } else { 0.0 });
        worst = worst.max(max_abs_diff(&result.phi, &truth));
        runs += 1;
    }
    let elapsed = start.elapsed();
    if worst > 1e-6 {
        return Err(format!("max |phi - oracle| = {worst:e}"));
    }
    if elapsed > Duration::from_secs(30) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!("{runs} runs, max err {worst:.1e}, {:.1}s", elapsed.as_secs_f64()))
}

async fn efficiency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst = 0.0f64;
    let mut sampled = 0;
    for run in 0..200 {
        let m = rng.random_range(2..=30usize);
        let filler: Vec<usize> = (0..m).map(|_| rng.random_range(0..3)).collect();
        let mock = MockModelSpec {
            bias: rng.random_range(0.0..0.3),
            keyword_weights: (0..m).map(|j| (keyword(j), rng.random_range(-0.05..0.15))).collect(),
            interactions: (0..3)
                .map(|_| Interaction {
                    all_of: vec![keyword(rng.random_range(0..m)), keyword(rng.random_range(0..m))],
                    weight: rng.random_range(-0.2..0.3),
                })
                .collect(),
            votes: VoteMode::Sampled,
            ..Default::default()
        };
        let (task, seg) = task_with(&filler, mock, 5);
        let mut opts = options(run);
        opts.max_samples = Some(rng.random_range(m + 2..=m + 2 + 400));
        let result = run_explain(&task, &seg, &opts).await;
        if !result.exact {
            sampled += 1;
        }
        worst = worst.max(result.efficiency_gap());
    }
    if worst > 1e-6 {
        return Err(format!("max efficiency gap {worst:e}"));
    }
    Ok(format!("200 runs ({sampled} sampled), max gap {worst:.1e}"))
}

fn kernel() -> Outcome {
    let k42 = kernel_weight(4, 2).map_err(|e| e.to_string())?;
    let k21 = kernel_weight(2, 1).map_err(|e| e.to_string())?;
    if k42 != 0.125 || k21 != 0.5 {
        return Err(format!("kernel_weight(4,2)={k42}, kernel_weight(2,1)={k21}"));
    }
    let mut checked = 0;
    for m in 2..=12usize {
        for s in 1..m {
            let w = kernel_weight(m, s).unwrap();
            if w != kernel_weight(m, m - s).unwrap() {
                return Err(format!("asymmetric at M={m}, s={s}"));
            }
            let want = oracle::kernel(m as u64, s as u64);
            if (w - want).abs() > 1e-15 * want {
                return Err(format!("M={m}, s={s}: {w} vs {want}"));
            }
            checked += 1;
        }
    }
    if kernel_weight(5, 0).is_ok() || kernel_weight(5, 5).is_ok() {
        return Err("empty and full coalitions must have no finite weight".into());
    }
    Ok(format!("{checked} (M, s) pairs"))
}

fn budget_grid() -> Outcome {
    // (t_max seconds, rate numerator, rate denominator, votes)
    let budgets = [
        (600, 4, 1, 10),
        (600, 1, 1, 1),
        (60, 1, 2, 10),
        (3600, 10, 1, 5),
        (10, 1, 1, 10),
        (1, 1, 4, 1),
        (900, 5, 2, 3),
        (30, 7, 1, 1),
        (100_000, 100, 1, 1),
        (120, 3, 4, 7),
    ];
    let mut checked = 0;
    for m in [1u64, 3, 8, 20, 100] {
        for &(t, num, den, votes) in &budgets {
            let mut spec = ModelSpec::mock(MockModelSpec::default());
            spec.time_budget_s = t as f64;
            spec.rate_limit_rps = num as f64 / den as f64;
            spec.votes_per_prompt = votes as usize;
            let want = oracle::sample_cap(m, t, num, den, votes);
            let affordable = t * num / (den * votes);
            let got = effective_sample_cap(m as usize, &spec);
            let ok = if want >= m + 2 {
                got == Ok(want as usize)
            } else {
                matches!(got, Err(ModelError::BudgetTooSmall { affordable: a, .. }) if a as u64 == affordable)
            };
            if !ok {
                return Err(format!("M={m} t={t} r={num}/{den} votes={votes}: got {got:?}, want {want}"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} combinations"))
}

async fn curve_endpoints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut runs = 0;
    for m in 1..=8usize {
        for _ in 0..3 {
            let filler: Vec<usize> = (0..m).map(|_| rng.random_range(0..4)).collect();
            let game = UnitGame {
                bias: 1,
                weights: (0..m).map(|_| rng.random_range(0..=2)).collect(),
                pairs: if m > 1 { vec![(0, m - 1, 2)] } else { vec![] },
            };
            let (task, seg) = task_with(&filler, game.mock(), 20);
            let session = Session::new();
            let scorer = session.scorer(&task).unwrap();
            let opts = options(0);
            let result = explain(&task, &seg, &scorer, &opts).await.unwrap();
            let report = evaluate_fidelity(&task, &seg, &result, &scorer, &opts).await.unwrap();
            let del = &report.deletion.points;
            let ins = &report.insertion.points;
            if (del[0].x, del[0].y) != (0.0, 0.0) {
                return Err(format!("deletion starts at ({}, {})", del[0].x, del[0].y));
            }
            let last = ins.last().unwrap();
            if (last.x, last.y) != (1.0, 0.0) {
                return Err(format!("insertion ends at ({}, {})", last.x, last.y));
            }
            let total: usize = filler.iter().map(|f| f + 1).sum();
            for curve in [&report.deletion, &report.insertion] {
                let mut words = 0;
                for (k, point) in curve.points.iter().enumerate() {
                    if k > 0 {
                        words += filler[curve.group_order[k - 1].0 as usize] + 1;
                    }
                    if point.x != words as f64 / total as f64 {
                        return Err(format!("x grid off at k={k}: {}", point.x));
                    }
                }
            }
            runs += 1;
        }
    }

    // groups sized 3:1
    let game = UnitGame {
        bias: 1,
        weights: vec![4, 8],
        pairs: vec![],
    };
    let (task, seg) = task_with(&[2, 0], game.mock(), 20);
    let session = Session::new();
    let scorer = session.scorer(&task).unwrap();
    let opts = options(0);
    let result = explain(&task, &seg, &scorer, &opts).await.unwrap();
    let report = evaluate_fidelity(&task, &seg, &result, &scorer, &opts).await.unwrap();
    let xs: Vec<f64> = report.deletion.points.iter().map(|p| p.x).collect();
    if xs != [0.0, 0.25, 1.0] {
        return Err(format!("3:1 grid is {xs:?}, want [0, 0.25, 1]"));
    }
    let other = perturbation_curve(&task, &seg, &scorer, Direction::Deletion, &[GroupId(0), GroupId(1)], &opts)
        .await
        .unwrap();
    let xs: Vec<f64> = other.points.iter().map(|p| p.x).collect();
    if xs != [0.0, 0.75, 1.0] {
        return Err(format!("3:1 grid is {xs:?}, want [0, 0.75, 1]"));
    }
    Ok(format!("{runs} runs plus 3:1 grid"))
}

async fn ordering() -> Outcome {
    let game = UnitGame {
        bias: 1,
        weights: vec![2, 9, 5],
        pairs: vec![],
    };
    let (task, seg) = task_with(&[1, 0, 2], game.mock(), 20);
    let session = Session::new();
    let scorer = session.scorer(&task).unwrap();
    let opts = options(0);
    let result = explain(&task, &seg, &scorer, &opts).await.unwrap();
    let best = attribution_order(&result);
    let best_auc = perturbation_curve(&task, &seg, &scorer, Direction::Deletion, &best, &opts)
        .await
        .unwrap()
        .auc;
    let ids = [GroupId(0), GroupId(1), GroupId(2)];
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut max_auc = f64::MIN;
    for p in perms {
        let order: Vec<GroupId> = p.iter().map(|&i| ids[i]).collect();
        let auc = perturbation_curve(&task, &seg, &scorer, Direction::Deletion, &order, &opts)
            .await
            .unwrap()
            .auc;
        max_auc = max_auc.max(auc);
    }
    if best_auc < max_auc {
        return Err(format!("phi order AUC {best_auc} < best {max_auc}"));
    }

    let base = evaluate_fidelity(&task, &seg, &result, &scorer, &opts).await.unwrap().score;
    for c in [1e-3, 0.5, 2.0, 1e3] {
        let mut scaled = result.clone();
        scaled.phi.iter_mut().for_each(|p| *p *= c);
        let score = evaluate_fidelity(&task, &seg, &scaled, &scorer, &opts).await.unwrap().score;
        if score != base {
            return Err(format!("score {score} under scale {c}, expected {base}"));
        }
    }
    Ok(format!("deletion AUC {best_auc:.4} is the max of 6; score {base:.4} scale-invariant"))
}

async fn convergence() -> Outcome {
    let m = 20usize;
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.005..0.045)).collect();
    let bias = 0.02;
    let votes = 10usize;
    let mock = MockModelSpec {
        bias,
        keyword_weights: weights.iter().enumerate().map(|(j, &w)| (keyword(j), w)).collect(),
        votes: VoteMode::Proportional,
        ..Default::default()
    };
    // the mock sums weights in keyword order, then rounds to the vote grid
    let sorted: BTreeMap<String, (usize, f64)> =
        weights.iter().enumerate().map(|(j, &w)| (keyword(j), (j, w))).collect();
    let value = |bits: u64| {
        let mut score = bias;
        for (j, w) in sorted.values() {
            if bits & (1 << j) != 0 {
                score += w;
            }
        }
        let score = score.clamp(0.0, 1.0);
        (score * votes as f64).round().clamp(0.0, votes as f64) / votes as f64
    };
    let truth = oracle::shapley_values(m, value);

    let (task, seg) = task_with(&vec![0; m], mock, votes);
    let session = Session::new();
    let scorer = session.scorer(&task).unwrap();
    let mut errors = Vec::new();
    for cap in [48usize, 104, 552] {
        let mut total = 0.0;
        for seed in 0..20u64 {
            let mut opts = options(seed);
            opts.max_samples = Some(cap);
            let result = explain(&task, &seg, &scorer, &opts).await.unwrap();
            let mae: f64 = result.phi.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / m as f64;
            total += mae;
        }
        errors.push(total / 20.0);
    }
    let summary = format!("MAE {:.5} > {:.5} > {:.5}", errors[0], errors[1], errors[2]);
    if errors[0] > errors[1] && errors[1] > errors[2] {
        Ok(summary)
    } else {
        Err(summary)
    }
}

#[derive(Deserialize)]
struct NliFact {
    premise: String,
    hypothesis: String,
    label: String,
}

#[derive(Deserialize)]
struct EvalCase {
    operator: Operator,
    target: String,
    response: String,
    #[serde(default)]
    case_sensitive: bool,
    expected: bool,
}

#[derive(Deserialize)]
struct EvalFixture {
    nli: Vec<NliFact>,
    cases: Vec<EvalCase>,
}

async fn evaluator_table() -> Outcome {
    let fixture: EvalFixture = serde_json::from_str(include_str!("fixtures/evaluator_cases.json")).unwrap();
    let mut config = StubConfig::default();
    for fact in &fixture.nli {
        config = config.with_nli(&fact.premise, &fact.hypothesis, &fact.label);
    }
    let stub = StubServer::spawn(config);
    let http = reqwest::Client::new();
    let operators: BTreeSet<String> = fixture.cases.iter().map(|c| format!("{:?}", c.operator)).collect();
    if fixture.cases.len() != 30 || operators.len() != Operator::ALL.len() {
        return Err(format!("fixture has {} cases over {} operators", fixture.cases.len(), operators.len()));
    }
    for (i, case) in fixture.cases.iter().enumerate() {
        let mut spec = EvaluatorSpec::new(case.operator, case.target.clone());
        spec.case_sensitive = case.case_sensitive;
        if case.operator.is_logical() {
            spec.nli_endpoint = Some(stub.nli_url());
        }
        let got = Evaluator::new(spec, &http)
            .map_err(|e| e.to_string())?
            .evaluate(&case.response)
            .await
            .map_err(|e| e.to_string())?;
        if got != case.expected {
            return Err(format!("case {i} ({:?} {:?} on {:?}) gave {got}", case.operator, case.target, case.response));
        }
    }
    Ok(format!("30 cases, {} NLI calls", stub.nli_requests().len()))
}

async fn rate_cap() -> Outcome {
    let rate = 100.0;
    let stub = StubServer::spawn(StubConfig::default());
    let mut spec = ModelSpec::http(stub.base_url(), "stub");
    spec.rate_limit_rps = rate;
    let client = Arc::new(
        HttpChatClient::new(reqwest::Client::new(), &spec, Arc::new(RateLimiter::new(rate))).map_err(|e| e.to_string())?,
    );
    let handles: Vec<_> = (0..500)
        .map(|i| {
            let client = client.clone();
            tokio::spawn(async move { client.sample_responses(&format!("prompt {i}"), 1).await })
        })
        .collect();
    for h in handles {
        h.await.map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
    }
    let sent = stub.chat_requests().len();
    let worst = stub.max_chat_requests_in(Duration::from_secs(1));
    let limit = rate.ceil() as usize;
    if sent != 500 || worst > limit {
        return Err(format!("{sent} requests, busiest 1s window {worst} > {limit}"));
    }
    Ok(format!("500 requests, busiest 1s window {worst} <= {limit}"))
}

fn goldens() -> Outcome {
    let n = common::check_goldens(false)?;
    Ok(format!("{n} files byte-identical"))
}

fn main() {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let criteria: Vec<Criterion> = vec![
        ("exact-mode Shapley oracle (3 mocks, M=2..8)", Box::new(|| runtime.block_on(exact_oracle()))),
        ("efficiency on 200 sampled runs", Box::new(|| runtime.block_on(efficiency()))),
        ("kernel formula and symmetry", Box::new(kernel)),
        ("budget arithmetic grid", Box::new(budget_grid)),
        ("curve endpoints and word-fraction grid", Box::new(|| runtime.block_on(curve_endpoints()))),
        ("ordering optimality and rescaling", Box::new(|| runtime.block_on(ordering()))),
        ("sampled-mode convergence", Box::new(|| runtime.block_on(convergence()))),
        ("evaluator truth tables", Box::new(|| runtime.block_on(evaluator_table()))),
        ("rate-cap honesty", Box::new(|| runtime.block_on(rate_cap()))),
        ("end-to-end CLI golden", Box::new(goldens)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS  {:>2}  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:>2}  {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
