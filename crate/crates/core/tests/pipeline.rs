//! Groundtruth and report behaviour over the bundled demo data and over
//! simulated logs with planted effects.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use karma_core::analysis::{
    analyze, build_groundtruth, effort_analysis, expertise_analysis, mirror_judgment, parse_subscribers,
    player_accuracy, report_from_stats, AnalysisError, AnalysisInputs, Estimate,
};
use karma_core::corpus::{read_corpus, Corpus};
use karma_core::game::{read_judgments, read_questionnaires, MemoryLog, SteppingClock};
use karma_core::inference::logistic_fit;
use karma_core::pairing::PairPlan;
use karma_core::simulate::{simulate_players, PlayerModel, PreferenceModel};
use karma_core::stats::{predictor_accuracy, read_pair_stats, write_pair_stats, Majority, Predictor};
use karma_core::{GameHost, Report};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn demo(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo").join(name)
}

fn reader(name: &str) -> BufReader<File> {
    BufReader::new(File::open(demo(name)).unwrap())
}

fn demo_inputs() -> AnalysisInputs {
    AnalysisInputs {
        judgments: read_judgments(reader("judgments.jsonl")).unwrap(),
        questionnaires: read_questionnaires(reader("questionnaires.jsonl")).unwrap(),
        plan: PairPlan::read(reader("plan.json")).unwrap(),
        corpus: Corpus::new(read_corpus(reader("corpus.json")).unwrap()).unwrap(),
        subscribers: parse_subscribers(reader("subscribers.csv")).unwrap(),
    }
}

fn json(report: &Report) -> serde_json::Value {
    serde_json::to_value(report).unwrap()
}

#[test]
fn pair_stats_table_reproduces_the_report() {
    let inputs = demo_inputs();
    let report = analyze(&inputs).unwrap();
    let mut buf = Vec::new();
    write_pair_stats(&report.pair_stats, &mut buf).unwrap();
    let stats = read_pair_stats(buf.as_slice()).unwrap();
    assert_eq!(stats, report.pair_stats);
    let again = report_from_stats(stats, &inputs).unwrap();
    assert_eq!(json(&again), json(&report));
}

#[test]
fn demo_report_is_consistent() {
    let inputs = demo_inputs();
    let report = analyze(&inputs).unwrap();
    let stats = &report.pair_stats;
    assert_eq!(report.pairs_judged, stats.len());
    assert_eq!(stats.iter().map(|s| s.n_raters as usize).sum::<usize>(), inputs.judgments.len());

    // Strata exclude exactly the pairs whose correctness is undefined.
    for p in [Predictor::Reddit, Predictor::Imgur] {
        let defined = stats.iter().filter(|s| s.correct(p).is_some()).count() as u64;
        let in_strata: u64 = report.balance_effect.types.iter().map(|t| if p == Predictor::Reddit { t.reddit.n } else { t.imgur.n }).sum();
        assert_eq!(in_strata, defined);
    }
    let ties: u64 = report.balance_effect.types.iter().map(|t| t.majority_ties).sum();
    assert_eq!(ties, stats.iter().filter(|s| s.majority == Majority::Tie).count() as u64);

    // Players who prefer the higher-scoring side more often when it is far
    // ahead make high-agreement pairs easier to call.
    for p in [Predictor::Reddit, Predictor::Imgur] {
        let fit = report.agreement_effect.get(p).fit.value().expect("estimable on demo data");
        assert!(fit.predict(0.8) > fit.predict(0.0), "{p:?}: {fit:?}");
    }
    assert_eq!(report.references.judgments, 20_674);
}

#[test]
fn mirrored_placement_changes_nothing_but_sides() {
    let inputs = demo_inputs();
    let mut plan = inputs.plan.clone();
    for p in &mut plan.pairs {
        std::mem::swap(&mut p.left, &mut p.right);
    }
    let judgments: Vec<_> = inputs.judgments.iter().map(mirror_judgment).collect();
    let a = build_groundtruth(&inputs.judgments, &inputs.plan, &inputs.corpus).unwrap();
    let b = build_groundtruth(&judgments, &plan, &inputs.corpus).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.votes_left, x.votes_right), (y.votes_right, y.votes_left));
        assert_eq!(x.kappa, y.kappa);
        assert_eq!(x.reddit_correct, y.reddit_correct);
        assert_eq!(x.imgur_correct, y.imgur_correct);
    }
    let pa = player_accuracy(&inputs.judgments, &inputs.plan, &inputs.corpus).unwrap();
    let pb = player_accuracy(&judgments, &plan, &inputs.corpus).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn integrity_failures() {
    let inputs = demo_inputs();
    assert!(build_groundtruth(&[], &inputs.plan, &inputs.corpus).unwrap().is_empty());

    let mut foreign = inputs.judgments[..10].to_vec();
    foreign[3].pair_id = "elsewhere-000".into();
    assert!(matches!(
        build_groundtruth(&foreign, &inputs.plan, &inputs.corpus),
        Err(AnalysisError::UnknownPair(_))
    ));
    assert!(matches!(
        build_groundtruth(&inputs.judgments[..9], &inputs.plan, &inputs.corpus),
        Err(AnalysisError::IncompleteSession { count: 9, .. })
    ));
}

fn simulate(model: &PlayerModel, sessions: usize, seed: u64) -> MemoryLog {
    let inputs = demo_inputs();
    simulate_players(&inputs.plan, &inputs.corpus, model, sessions, seed).unwrap()
}

#[test]
fn planted_heavy_user_advantage_is_detected() {
    let model = PlayerModel {
        prediction_skill: 0.55,
        heavy_bonus: 0.3,
        questionnaire_rate: 1.0,
        ..PlayerModel::coin()
    };
    let log = simulate(&model, 600, 4);
    let e = expertise_analysis(&log.judgments, &log.questionnaires);
    let heavy = e.tests.iter().find(|t| t.label == "usage: heavy > nonuser").unwrap();
    assert_eq!(heavy.significant, Some(true), "{heavy:?}");
    let casual = e.tests.iter().find(|t| t.label == "usage: casual > nonuser").unwrap();
    assert_eq!(casual.significant, Some(false), "{casual:?}");
    assert_eq!(e.m, e.tests.iter().filter(|t| t.result.value().is_some()).count());
}

#[test]
fn planted_slow_wrong_answers_are_detected() {
    let mut model = PlayerModel::coin();
    model.timing.incorrect_delay_ms = 10_000.0;
    let log = simulate(&model, 200, 5);
    let effort = effort_analysis(&log.judgments);
    let t = effort.test.value().unwrap();
    assert!(t.p < 0.01, "{t:?}");
    assert!(t.mean_b > t.mean_a + 5.0);
    assert_eq!(effort.histogram.iter().map(|h| h.total).sum::<u64>(), log.judgments.len() as u64);

    let flat = effort_analysis(&simulate(&PlayerModel::coin(), 200, 5).judgments);
    assert!(flat.test.value().unwrap().p > 0.001);
}

#[test]
fn coin_flip_players_split_votes_evenly() {
    let log = simulate(&PlayerModel::coin(), 800, 6);
    let inputs = demo_inputs();
    let stats = build_groundtruth(&log.judgments, &inputs.plan, &inputs.corpus).unwrap();
    let (left, total) = stats
        .iter()
        .fold((0u64, 0u64), |(l, n), s| (l + s.votes_left as u64, n + s.n_raters as u64));
    let share = left as f64 / total as f64;
    let sd = (0.25 / total as f64).sqrt();
    assert!((share - 0.5).abs() < 4.0 * sd, "left share {share}");
}

#[test]
fn oracle_players_are_unanimous_and_always_right() {
    let inputs = demo_inputs();
    let log = simulate(&PlayerModel::oracle(), 300, 7);
    let stats = build_groundtruth(&log.judgments, &inputs.plan, &inputs.corpus).unwrap();
    let acc = predictor_accuracy(&stats, Predictor::Reddit).unwrap();
    assert_eq!(acc.correct, acc.n);
    assert!(stats.iter().filter(|s| s.n_raters >= 2).all(|s| s.kappa == Some(1.0)));
    assert!(log.judgments.iter().all(|j| j.prediction_correct));
}

#[test]
fn preference_model_recovers_planted_coefficients() {
    // Each vote goes to the higher side with probability logistic(0.2 + 2Δ).
    let model = PlayerModel {
        preference: PreferenceModel::Logistic { intercept: 0.2, slope: 2.0 },
        ..PlayerModel::coin()
    };
    let log = simulate(&model, 400, 8);
    let inputs = demo_inputs();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for j in &log.judgments {
        let pair = inputs.plan.pair(&j.pair_id).unwrap().resolve(&inputs.corpus).unwrap();
        let (l, r) = (pair.left, pair.right);
        if l.percentile == r.percentile {
            continue;
        }
        let higher_left = l.percentile > r.percentile;
        x.push((l.percentile - r.percentile).abs());
        y.push((j.preference == karma_core::Choice::Left) == higher_left);
    }
    let fit = logistic_fit(&x, &y).unwrap();
    assert!((fit.slope - 2.0).abs() < 3.0 * fit.slope_se, "{fit:?}");
}

#[test]
fn logistic_fit_recovers_coefficients_within_three_standard_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<bool> = x.iter().map(|&v| rng.random_bool(1.0 / (1.0 + (-(0.4 + 1.2 * v)).exp()))).collect();
    let fit = logistic_fit(&x, &y).unwrap();
    assert!((fit.slope - 1.2).abs() < 3.0 * fit.slope_se, "{fit:?}");
    assert!(fit.p_value < 1e-6);
}

#[test]
fn sessions_spread_evenly_over_subreddits() {
    let inputs = demo_inputs();
    let mut host = GameHost::new(
        inputs.plan.clone(),
        inputs.corpus.clone(),
        MemoryLog::default(),
        SteppingClock { now_ms: 0, step_ms: 1 },
        10,
    )
    .unwrap();
    let trials = 10_000;
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    for _ in 0..trials {
        let s = host.start_session(None).unwrap();
        *counts.entry(s.subreddit.clone()).or_default() += 1;
        host.remove_session(&s.session_id);
    }
    let k = inputs.plan.subreddits().len() as f64;
    let p = 1.0 / k;
    let sd = (trials as f64 * p * (1.0 - p)).sqrt();
    assert_eq!(counts.len(), 8);
    for (sub, c) in counts {
        assert!((c as f64 - trials as f64 * p).abs() < 3.0 * sd, "{sub}: {c}");
    }
}

#[test]
fn not_estimable_sections_do_not_abort_the_report() {
    let mut inputs = demo_inputs();
    inputs.questionnaires.clear();
    let report = analyze(&inputs).unwrap();
    assert_eq!(report.expertise.respondents, 0);
    assert!(report.expertise.tests.iter().all(|t| matches!(t.result, Estimate::NotEstimable(_))));
    assert_eq!(report.expertise.m, 0);
}
