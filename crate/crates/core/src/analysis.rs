//! The replication pipeline: groundtruth from the judgment log, every
//! effect analysis, and the report tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusEntry};
use crate::game::{higher_side, Answers, Judgment, QuestionnaireResponse, Tenure, Usage, YesNo, ROUNDS_PER_GAME};
use crate::inference::{
    bonferroni, logistic_fit, ols_fit, welch_t_test, Direction, LogisticResult, OlsResult, Tails,
    TestResult,
};
use crate::pairing::{PairPlan, PairType, PairingError};
use crate::stats::{
    correctness_counts, predictor_accuracy, predictor_agreement, t_interval_half_width, tally_pair, Accuracy,
    PairStats, Predictor, PredictorAgreement, StatsError,
};

/// Family-wise error rate for the expertise battery.
pub const EXPERTISE_ALPHA: f64 = 0.05;
/// Response-time histogram: one-second bins `[0, 1)` … `[29, 30)` and an
/// overflow bin for everything from 30 s up.
pub const HISTOGRAM_CAP_S: u32 = 30;
/// Reported interval half-widths never exceed this.
pub const MAX_HALF_WIDTH: f64 = 0.5;

#[derive(Error, Debug)]
pub enum AnalysisError {
    #[error("session {session_id} has {count} judgments in the log, expected {expected}")]
    IncompleteSession {
        session_id: String,
        count: usize,
        expected: usize,
    },
    #[error("judgment references pair {0:?}, which is not in the plan")]
    UnknownPair(String),
    #[error("judgment for pair {pair_id:?} is filed under subreddit {got:?}, plan says {expected:?}")]
    SubredditMismatch {
        pair_id: String,
        expected: String,
        got: String,
    },
    #[error("no subscriber count for subreddit {0:?}")]
    MissingSubscribers(String),
    #[error("bad subscribers row {line}: {message}")]
    BadSubscribersRow { line: u64, message: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl AnalysisError {
    pub fn is_io(&self) -> bool {
        match self {
            AnalysisError::Io(_) => true,
            AnalysisError::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            AnalysisError::Json(e) => e.is_io(),
            _ => false,
        }
    }
}

pub type Result<T, E = AnalysisError> = std::result::Result<T, E>;

/// A statistic that may not be computable on the data at hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimate<T> {
    Estimated(T),
    NotEstimable(String),
}

impl<T> Estimate<T> {
    pub fn from_result<E: Display>(r: std::result::Result<T, E>) -> Self {
        match r {
            Ok(v) => Estimate::Estimated(v),
            Err(e) => Estimate::NotEstimable(e.to_string()),
        }
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            Estimate::Estimated(v) => Some(v),
            Estimate::NotEstimable(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerPredictor<T> {
    pub reddit: T,
    pub imgur: T,
}

impl<T> PerPredictor<T> {
    pub fn build(mut f: impl FnMut(Predictor) -> T) -> Self {
        PerPredictor {
            reddit: f(Predictor::Reddit),
            imgur: f(Predictor::Imgur),
        }
    }

    pub fn get(&self, p: Predictor) -> &T {
        match p {
            Predictor::Reddit => &self.reddit,
            Predictor::Imgur => &self.imgur,
        }
    }
}

/// Accuracy of a stratum with a Student-t interval on its 0/1 outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub correct: u64,
    pub n: u64,
    pub accuracy: Option<f64>,
    pub ci_half_width: Option<f64>,
}

impl Stratum {
    pub fn from_counts(correct: u64, n: u64) -> Self {
        let accuracy = (n > 0).then(|| correct as f64 / n as f64);
        Stratum {
            correct,
            n,
            accuracy,
            ci_half_width: accuracy.and_then(|p| t_interval_half_width(p, n)).map(|h| h.min(MAX_HALF_WIDTH)),
        }
    }
}

// ---------------------------------------------------------------------------
// Groundtruth

/// Checks log integrity and tallies every judged pair, in plan order.
pub fn build_groundtruth(judgments: &[Judgment], plan: &PairPlan, corpus: &Corpus) -> Result<Vec<PairStats>> {
    let mut per_session: BTreeMap<&str, usize> = BTreeMap::new();
    let mut per_pair: BTreeMap<&str, Vec<&Judgment>> = BTreeMap::new();
    for j in judgments {
        let pair = plan.pair(&j.pair_id).ok_or_else(|| AnalysisError::UnknownPair(j.pair_id.clone()))?;
        if pair.subreddit != j.subreddit {
            return Err(AnalysisError::SubredditMismatch {
                pair_id: j.pair_id.clone(),
                expected: pair.subreddit.clone(),
                got: j.subreddit.clone(),
            });
        }
        *per_session.entry(&j.session_id).or_default() += 1;
        per_pair.entry(&j.pair_id).or_default().push(j);
    }
    if let Some((id, &count)) = per_session.iter().find(|(_, &c)| c != ROUNDS_PER_GAME) {
        return Err(AnalysisError::IncompleteSession {
            session_id: id.to_string(),
            count,
            expected: ROUNDS_PER_GAME,
        });
    }
    let mut out = Vec::with_capacity(per_pair.len());
    for p in &plan.pairs {
        if let Some(js) = per_pair.get(p.pair_id.as_str()) {
            out.push(tally_pair(js.iter().copied(), &p.resolve(corpus)?)?);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Agreement and balance

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessPoint {
    pub pair_id: String,
    pub x: f64,
    pub correct: bool,
}

fn correctness_points(stats: &[PairStats], predictor: Predictor, x: impl Fn(&PairStats) -> Option<f64>) -> Vec<CorrectnessPoint> {
    stats
        .iter()
        .filter_map(|s| {
            Some(CorrectnessPoint {
                pair_id: s.pair_id.clone(),
                x: x(s)?,
                correct: s.correct(predictor)?,
            })
        })
        .collect()
}

fn fit_points(points: &[CorrectnessPoint]) -> Estimate<LogisticResult> {
    let x: Vec<f64> = points.iter().map(|p| p.x).collect();
    let y: Vec<bool> = points.iter().map(|p| p.correct).collect();
    Estimate::from_result(logistic_fit(&x, &y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessFit {
    pub points: Vec<CorrectnessPoint>,
    pub fit: Estimate<LogisticResult>,
}

/// Predictor correctness against per-pair agreement κ.
pub fn agreement_effect(stats: &[PairStats]) -> PerPredictor<CorrectnessFit> {
    PerPredictor::build(|p| {
        let points = correctness_points(stats, p, |s| s.kappa);
        CorrectnessFit {
            fit: fit_points(&points),
            points,
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRow {
    pub pair_type: PairType,
    pub pairs: u64,
    pub majority_ties: u64,
    pub reddit: Stratum,
    pub imgur: Stratum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaKappaRow {
    pub pair_id: String,
    pub pair_type: PairType,
    pub delta: f64,
    pub kappa: Option<f64>,
    pub reddit_correct: Option<bool>,
    pub imgur_correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceEffect {
    /// One row per permitted pair type, in canonical order.
    pub types: Vec<TypeRow>,
    pub delta_fits: PerPredictor<CorrectnessFit>,
    pub delta_kappa: Vec<DeltaKappaRow>,
}

pub fn balance_effect(stats: &[PairStats]) -> BalanceEffect {
    let types = PairType::ALL
        .iter()
        .map(|&t| {
            let of_type: Vec<&PairStats> = stats.iter().filter(|s| s.pair_type == t).collect();
            let stratum = |p| {
                let (c, n) = correctness_counts(of_type.iter().copied(), p);
                Stratum::from_counts(c, n)
            };
            TypeRow {
                pair_type: t,
                pairs: of_type.len() as u64,
                majority_ties: of_type
                    .iter()
                    .filter(|s| s.majority == crate::stats::Majority::Tie)
                    .count() as u64,
                reddit: stratum(Predictor::Reddit),
                imgur: stratum(Predictor::Imgur),
            }
        })
        .collect();
    let delta_fits = PerPredictor::build(|p| {
        let points = correctness_points(stats, p, |s| Some(s.delta));
        CorrectnessFit {
            fit: fit_points(&points),
            points,
        }
    });
    let delta_kappa = stats
        .iter()
        .map(|s| DeltaKappaRow {
            pair_id: s.pair_id.clone(),
            pair_type: s.pair_type,
            delta: s.delta,
            kappa: s.kappa,
            reddit_correct: s.reddit_correct,
            imgur_correct: s.imgur_correct,
        })
        .collect();
    BalanceEffect {
        types,
        delta_fits,
        delta_kappa,
    }
}

// ---------------------------------------------------------------------------
// Subreddit size

/// Reads `subreddit,subscribers_millions` rows.
pub fn parse_subscribers<R: Read>(reader: R) -> Result<BTreeMap<String, f64>> {
    #[derive(Deserialize)]
    struct Row {
        subreddit: String,
        subscribers_millions: f64,
    }
    let mut out = BTreeMap::new();
    let mut rdr = csv::Reader::from_reader(reader);
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => AnalysisError::Csv(e),
            _ => AnalysisError::BadSubscribersRow {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            },
        })?;
        if !(row.subscribers_millions.is_finite() && row.subscribers_millions >= 0.0) {
            return Err(AnalysisError::BadSubscribersRow {
                line: 0,
                message: format!("{}: subscriber count must be a nonnegative number", row.subreddit),
            });
        }
        if out.insert(row.subreddit.clone(), row.subscribers_millions).is_some() {
            return Err(AnalysisError::BadSubscribersRow {
                line: 0,
                message: format!("duplicate subreddit {:?}", row.subreddit),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubredditPoint {
    pub predictor: Predictor,
    pub subreddit: String,
    pub subscribers_millions: f64,
    pub correct: u64,
    pub n: u64,
    pub accuracy: Option<f64>,
    pub ci_half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubredditEffect {
    /// Sorted by predictor, then subreddit.
    pub points: Vec<SubredditPoint>,
    pub fits: PerPredictor<Estimate<OlsResult>>,
}

/// Per-subreddit accuracy regressed on community size (millions).
pub fn subreddit_effect(stats: &[PairStats], subscribers: &BTreeMap<String, f64>) -> Result<SubredditEffect> {
    let subs: BTreeSet<&str> = stats.iter().map(|s| s.subreddit.as_str()).collect();
    for s in &subs {
        if !subscribers.contains_key(*s) {
            return Err(AnalysisError::MissingSubscribers(s.to_string()));
        }
    }
    let mut points = Vec::new();
    for p in Predictor::ALL {
        for &sub in &subs {
            let (c, n) = correctness_counts(stats.iter().filter(|s| s.subreddit == sub), p);
            let st = Stratum::from_counts(c, n);
            points.push(SubredditPoint {
                predictor: p,
                subreddit: sub.to_string(),
                subscribers_millions: subscribers[sub],
                correct: c,
                n,
                accuracy: st.accuracy,
                ci_half_width: st.ci_half_width,
            });
        }
    }
    let fits = PerPredictor::build(|p| fit_subreddit_points(&points, p));
    Ok(SubredditEffect { points, fits })
}

/// OLS over the points of one predictor that have an accuracy.
pub fn fit_subreddit_points(points: &[SubredditPoint], predictor: Predictor) -> Estimate<OlsResult> {
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.predictor == predictor)
        .filter_map(|p| Some((p.subscribers_millions, p.accuracy?)))
        .unzip();
    if x.len() < 3 {
        return Estimate::NotEstimable(format!("need at least 3 subreddits with eligible pairs, got {}", x.len()));
    }
    Estimate::from_result(ols_fit(&x, &y))
}

// ---------------------------------------------------------------------------
// Individual players

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerAccuracy {
    pub judgments: u64,
    /// Preferred side is the higher-scoring post.
    pub preference: Accuracy,
    /// Predicted side is the higher-scoring post.
    pub prediction: Accuracy,
}

fn pair_scores(j: &Judgment, plan: &PairPlan, corpus: &Corpus) -> Result<(i64, i64)> {
    let p = plan.pair(&j.pair_id).ok_or_else(|| AnalysisError::UnknownPair(j.pair_id.clone()))?;
    let r = p.resolve(corpus)?;
    Ok((r.left.score(), r.right.score()))
}

pub fn player_accuracy(judgments: &[Judgment], plan: &PairPlan, corpus: &Corpus) -> Result<Estimate<PlayerAccuracy>> {
    if judgments.is_empty() {
        return Ok(Estimate::NotEstimable("empty judgment log".into()));
    }
    let (mut pref, mut pred) = (0u64, 0u64);
    for j in judgments {
        let (l, r) = pair_scores(j, plan, corpus)?;
        let higher = higher_side(l, r);
        pref += (higher == Some(j.preference)) as u64;
        pred += (higher == Some(j.prediction)) as u64;
    }
    let n = judgments.len() as u64;
    let acc = |c| Accuracy::from_counts(c, n).expect("nonempty").capped();
    Ok(Estimate::Estimated(PlayerAccuracy {
        judgments: n,
        preference: acc(pref),
        prediction: acc(pred),
    }))
}

trait Capped {
    fn capped(self) -> Self;
}

impl Capped for Accuracy {
    fn capped(mut self) -> Self {
        self.ci_half_width = self.ci_half_width.min(MAX_HALF_WIDTH);
        self
    }
}

// ---------------------------------------------------------------------------
// Expertise

/// Heavy, long-tenured users who vote, including on new posts.
pub fn is_poweruser(a: &Answers) -> bool {
    a.q_usage == Usage::Heavy && a.q_tenure == Tenure::OverYear && a.q_votes == YesNo::Yes && a.q_votes_new == YesNo::Yes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertiseTest {
    pub label: String,
    pub group_a: String,
    pub group_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub result: Estimate<TestResult>,
    /// Set only for estimable tests.
    pub adjusted_threshold: Option<f64>,
    pub significant: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertiseAnalysis {
    pub respondents: usize,
    pub powerusers: usize,
    pub attentive_powerusers: usize,
    pub alpha: f64,
    /// Number of estimable tests; the Bonferroni divisor.
    pub m: usize,
    pub tests: Vec<ExpertiseTest>,
}

/// Per-session prediction accuracy.
pub fn session_accuracies(judgments: &[Judgment]) -> BTreeMap<&str, f64> {
    let mut counts: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
    for j in judgments {
        let e = counts.entry(j.session_id.as_str()).or_default();
        e.0 += j.prediction_correct as u32;
        e.1 += 1;
    }
    counts.into_iter().map(|(k, (c, n))| (k, c as f64 / n as f64)).collect()
}

type GroupFn = Box<dyn Fn(&Answers) -> bool>;

fn battery() -> Vec<(String, String, GroupFn, String, GroupFn)> {
    let mut out: Vec<(String, String, GroupFn, String, GroupFn)> = Vec::new();
    macro_rules! question {
        ($q:ident, $name:literal, $first:expr, $second:expr, $nonuser:expr, $fname:literal, $sname:literal) => {{
            out.push((
                format!("{}: {} > nonuser", $name, $fname),
                $fname.to_string(),
                Box::new(|a: &Answers| a.$q == $first),
                "nonuser".to_string(),
                Box::new(|a: &Answers| a.$q == $nonuser),
            ));
            out.push((
                format!("{}: {} > nonuser", $name, $sname),
                $sname.to_string(),
                Box::new(|a: &Answers| a.$q == $second),
                "nonuser".to_string(),
                Box::new(|a: &Answers| a.$q == $nonuser),
            ));
            out.push((
                format!("{}: {} > {}", $name, $fname, $sname),
                $fname.to_string(),
                Box::new(|a: &Answers| a.$q == $first),
                $sname.to_string(),
                Box::new(|a: &Answers| a.$q == $second),
            ));
        }};
    }
    question!(q_usage, "usage", Usage::Heavy, Usage::Casual, Usage::NonUser, "heavy", "casual");
    question!(q_tenure, "tenure", Tenure::OverYear, Tenure::UnderYear, Tenure::NonUser, "over_year", "under_year");
    question!(q_attention, "attention", YesNo::Yes, YesNo::No, YesNo::NonUser, "yes", "no");
    question!(q_votes, "votes", YesNo::Yes, YesNo::No, YesNo::NonUser, "yes", "no");
    question!(q_votes_new, "votes_new", YesNo::Yes, YesNo::No, YesNo::NonUser, "yes", "no");

    let pu_groups: [(&str, GroupFn); 3] = [
        ("poweruser", Box::new(is_poweruser)),
        ("attentive poweruser", Box::new(|a: &Answers| is_poweruser(a) && a.q_attention == YesNo::Yes)),
        ("inattentive poweruser", Box::new(|a: &Answers| is_poweruser(a) && a.q_attention == YesNo::No)),
    ];
    for (name, f) in pu_groups {
        let f: std::rc::Rc<dyn Fn(&Answers) -> bool> = f.into();
        let g = f.clone();
        out.push((
            format!("{name} > non-poweruser"),
            name.to_string(),
            Box::new(move |a: &Answers| f(a)),
            "non-poweruser".to_string(),
            Box::new(|a: &Answers| !is_poweruser(a)),
        ));
        out.push((
            format!("{name} > all-nonuser"),
            name.to_string(),
            Box::new(move |a: &Answers| g(a)),
            "all-nonuser".to_string(),
            Box::new(|a: &Answers| *a == Answers::nonuser()),
        ));
    }
    out
}

/// One-tailed Welch tests of per-session accuracy across questionnaire
/// groups, Bonferroni-corrected over the estimable tests.
pub fn expertise_analysis(judgments: &[Judgment], questionnaires: &[QuestionnaireResponse]) -> ExpertiseAnalysis {
    let acc = session_accuracies(judgments);
    let joined: Vec<(&Answers, f64)> = questionnaires
        .iter()
        .filter_map(|q| Some((&q.answers, *acc.get(q.session_id.as_str())?)))
        .collect();
    let group = |f: &GroupFn| -> Vec<f64> { joined.iter().filter(|(a, _)| f(a)).map(|(_, x)| *x).collect() };

    let mut tests: Vec<ExpertiseTest> = battery()
        .into_iter()
        .map(|(label, a_name, fa, b_name, fb)| {
            let (a, b) = (group(&fa), group(&fb));
            let result = if a.len() < 2 || b.len() < 2 {
                Estimate::NotEstimable(format!("groups have {} and {} sessions; need at least 2 each", a.len(), b.len()))
            } else {
                Estimate::from_result(welch_t_test(&a, &b, Tails::One, Some(Direction::GreaterA)))
            };
            ExpertiseTest {
                label,
                group_a: a_name,
                group_b: b_name,
                n_a: a.len(),
                n_b: b.len(),
                result,
                adjusted_threshold: None,
                significant: None,
            }
        })
        .collect();

    let ps: Vec<f64> = tests.iter().filter_map(|t| t.result.value().map(|r| r.p)).collect();
    let flags = bonferroni(&ps, EXPERTISE_ALPHA).expect("alpha is a valid constant");
    let mut flags = flags.into_iter();
    for t in tests.iter_mut().filter(|t| t.result.value().is_some()) {
        let f = flags.next().expect("one flag per estimable test");
        t.adjusted_threshold = Some(f.adjusted_threshold);
        t.significant = Some(f.significant);
    }
    let powerusers = joined.iter().filter(|(a, _)| is_poweruser(a)).count();
    let attentive_powerusers = joined
        .iter()
        .filter(|(a, _)| is_poweruser(a) && a.q_attention == YesNo::Yes)
        .count();
    ExpertiseAnalysis {
        respondents: joined.len(),
        powerusers,
        attentive_powerusers,
        alpha: EXPERTISE_ALPHA,
        m: ps.len(),
        tests,
    }
}

// ---------------------------------------------------------------------------
// Effort

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin: u32,
    pub lower_s: u32,
    /// Absent for the overflow bin.
    pub upper_s: Option<u32>,
    pub correct: u64,
    pub incorrect: u64,
    pub total: u64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffortAnalysis {
    pub judgments: u64,
    /// Response seconds, correct (a) against incorrect (b), two-tailed.
    pub test: Estimate<TestResult>,
    pub histogram: Vec<HistogramBin>,
    /// Per-bin accuracy against bin index, over non-empty bins.
    pub accuracy_trend: Estimate<OlsResult>,
}

/// Seconds from showing a pair to the prediction click.
pub fn response_seconds(j: &Judgment) -> f64 {
    j.response_ms() as f64 / 1000.0
}

pub fn effort_analysis(judgments: &[Judgment]) -> EffortAnalysis {
    let (correct, incorrect): (Vec<&Judgment>, Vec<&Judgment>) = judgments.iter().partition(|j| j.prediction_correct);
    let secs = |v: &[&Judgment]| v.iter().map(|j| response_seconds(j)).collect::<Vec<_>>();
    let (a, b) = (secs(&correct), secs(&incorrect));
    let test = if a.len() < 2 || b.len() < 2 {
        Estimate::NotEstimable(format!("{} correct and {} incorrect judgments; need at least 2 each", a.len(), b.len()))
    } else {
        Estimate::from_result(welch_t_test(&a, &b, Tails::Two, None))
    };

    let mut histogram: Vec<HistogramBin> = (0..=HISTOGRAM_CAP_S)
        .map(|b| HistogramBin {
            bin: b,
            lower_s: b,
            upper_s: (b < HISTOGRAM_CAP_S).then_some(b + 1),
            correct: 0,
            incorrect: 0,
            total: 0,
            accuracy: None,
        })
        .collect();
    for j in judgments {
        let b = ((j.response_ms() / 1000) as u32).min(HISTOGRAM_CAP_S) as usize;
        let h = &mut histogram[b];
        h.total += 1;
        if j.prediction_correct {
            h.correct += 1;
        } else {
            h.incorrect += 1;
        }
    }
    for h in &mut histogram {
        h.accuracy = (h.total > 0).then(|| h.correct as f64 / h.total as f64);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = histogram
        .iter()
        .filter_map(|h| Some((h.bin as f64, h.accuracy?)))
        .unzip();
    let accuracy_trend = if x.len() < 3 {
        Estimate::NotEstimable(format!("need at least 3 non-empty bins, got {}", x.len()))
    } else {
        Estimate::from_result(ols_fit(&x, &y))
    };
    EffortAnalysis {
        judgments: judgments.len() as u64,
        test,
        histogram,
        accuracy_trend,
    }
}

// ---------------------------------------------------------------------------
// Dataset and questionnaire summaries

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub subreddit: String,
    pub judgments: u64,
    pub pairs: u64,
    pub images: u64,
}

pub fn dataset_summary(judgments: &[Judgment], plan: &PairPlan) -> Vec<DatasetRow> {
    let mut rows: Vec<DatasetRow> = plan
        .subreddits()
        .into_iter()
        .map(|sub| {
            let pairs: Vec<_> = plan.pairs_in(&sub).collect();
            let images: BTreeSet<&str> = pairs.iter().flat_map(|p| [p.left.as_str(), p.right.as_str()]).collect();
            DatasetRow {
                judgments: judgments.iter().filter(|j| j.subreddit == sub).count() as u64,
                pairs: pairs.len() as u64,
                images: images.len() as u64,
                subreddit: sub,
            }
        })
        .collect();
    let images: BTreeSet<&str> = plan.pairs.iter().flat_map(|p| [p.left.as_str(), p.right.as_str()]).collect();
    rows.push(DatasetRow {
        subreddit: "Total".into(),
        judgments: judgments.len() as u64,
        pairs: plan.pairs.len() as u64,
        images: images.len() as u64,
    });
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRow {
    pub question: String,
    pub answer: String,
    pub count: u64,
    /// Of all respondents; absent when nobody responded.
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireSummary {
    pub sessions: u64,
    pub respondents: u64,
    pub completion_rate: Option<f64>,
    pub answers: Vec<AnswerRow>,
}

fn answer_label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn questionnaire_summary(judgments: &[Judgment], questionnaires: &[QuestionnaireResponse]) -> QuestionnaireSummary {
    let sessions = judgments.iter().map(|j| j.session_id.as_str()).collect::<BTreeSet<_>>().len() as u64;
    let respondents = questionnaires.len() as u64;
    let mut answers = Vec::new();
    let mut push = |question: &str, values: Vec<String>, pick: &dyn Fn(&Answers) -> String| {
        for v in values {
            let count = questionnaires.iter().filter(|q| pick(&q.answers) == v).count() as u64;
            answers.push(AnswerRow {
                question: question.into(),
                answer: v,
                count,
                percent: (respondents > 0).then(|| 100.0 * count as f64 / respondents as f64),
            });
        }
    };
    let yn = || [YesNo::Yes, YesNo::No, YesNo::NonUser].iter().map(answer_label).collect::<Vec<_>>();
    push(
        "q_usage",
        [Usage::Heavy, Usage::Casual, Usage::NonUser].iter().map(answer_label).collect(),
        &|a| answer_label(&a.q_usage),
    );
    push(
        "q_tenure",
        [Tenure::OverYear, Tenure::UnderYear, Tenure::NonUser].iter().map(answer_label).collect(),
        &|a| answer_label(&a.q_tenure),
    );
    push("q_attention", yn(), &|a| answer_label(&a.q_attention));
    push("q_votes", yn(), &|a| answer_label(&a.q_votes));
    push("q_votes_new", yn(), &|a| answer_label(&a.q_votes_new));
    QuestionnaireSummary {
        sessions,
        respondents,
        completion_rate: (sessions > 0).then(|| respondents as f64 / sessions as f64),
        answers,
    }
}

// ---------------------------------------------------------------------------
// Report

/// Figures from the original human study. They depend on its players and
/// are carried as annotations only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub note: String,
    pub reddit_accuracy: f64,
    pub reddit_ci_half_width: f64,
    pub imgur_accuracy: f64,
    pub imgur_ci_half_width: f64,
    pub preference_accuracy: f64,
    pub prediction_accuracy: f64,
    pub predictor_match_rate: f64,
    pub score_views_r2: f64,
    pub effort_p: f64,
    pub effort_mean_correct_s: f64,
    pub effort_mean_incorrect_s: f64,
    pub judgments: u64,
    pub players: u64,
    pub questionnaire_respondents: u64,
    pub pairs: u64,
    pub images: u64,
    pub powerusers: u64,
    pub attentive_powerusers: u64,
}

impl Default for References {
    fn default() -> Self {
        References {
            note: "values observed in the original human study; not reproducible by simulation and never asserted".into(),
            reddit_accuracy: 0.680,
            reddit_ci_half_width: 0.046,
            imgur_accuracy: 0.647,
            imgur_ci_half_width: 0.047,
            preference_accuracy: 0.540,
            prediction_accuracy: 0.606,
            predictor_match_rate: 0.863,
            score_views_r2: 0.80,
            effort_p: 0.419,
            effort_mean_correct_s: 22.0,
            effort_mean_incorrect_s: 26.0,
            judgments: 20_674,
            players: 2_660,
            questionnaire_respondents: 2_083,
            pairs: 400,
            images: 325,
            powerusers: 174,
            attentive_powerusers: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub pairs_judged: usize,
    pub dataset_summary: Vec<DatasetRow>,
    pub questionnaire_summary: QuestionnaireSummary,
    pub overall_accuracy: PerPredictor<Estimate<Accuracy>>,
    pub predictor_agreement: Estimate<PredictorAgreement>,
    pub agreement_effect: PerPredictor<CorrectnessFit>,
    pub subreddit_effect: SubredditEffect,
    pub balance_effect: BalanceEffect,
    pub player_accuracy: Estimate<PlayerAccuracy>,
    pub expertise: ExpertiseAnalysis,
    pub effort: EffortAnalysis,
    pub references: References,
    #[serde(skip)]
    pub pair_stats: Vec<PairStats>,
}

/// Everything the pipeline reads.
#[derive(Debug, Clone)]
pub struct AnalysisInputs {
    pub judgments: Vec<Judgment>,
    pub questionnaires: Vec<QuestionnaireResponse>,
    pub plan: PairPlan,
    pub corpus: Corpus,
    pub subscribers: BTreeMap<String, f64>,
}

pub fn analyze(inputs: &AnalysisInputs) -> Result<Report> {
    let stats = build_groundtruth(&inputs.judgments, &inputs.plan, &inputs.corpus)?;
    report_from_stats(stats, inputs)
}

/// Builds the report from an already computed groundtruth table.
pub fn report_from_stats(stats: Vec<PairStats>, inputs: &AnalysisInputs) -> Result<Report> {
    let AnalysisInputs {
        judgments,
        questionnaires,
        plan,
        corpus,
        subscribers,
    } = inputs;
    let mut seen = BTreeSet::new();
    let entries: Vec<&CorpusEntry> = plan
        .pairs
        .iter()
        .flat_map(|p| [&p.left, &p.right])
        .filter(|id| seen.insert(id.as_str()))
        .filter_map(|id| corpus.get(id))
        .collect();
    Ok(Report {
        pairs_judged: stats.len(),
        dataset_summary: dataset_summary(judgments, plan),
        questionnaire_summary: questionnaire_summary(judgments, questionnaires),
        overall_accuracy: PerPredictor::build(|p| {
            Estimate::from_result(predictor_accuracy(&stats, p).map(|a| a.capped()))
        }),
        predictor_agreement: Estimate::from_result(predictor_agreement(&stats, &entries)),
        agreement_effect: agreement_effect(&stats),
        subreddit_effect: subreddit_effect(&stats, subscribers)?,
        balance_effect: balance_effect(&stats),
        player_accuracy: player_accuracy(judgments, plan, corpus)?,
        expertise: expertise_analysis(judgments, questionnaires),
        effort: effort_analysis(judgments),
        references: References::default(),
        pair_stats: stats,
    })
}

/// Files written by [`emit_report`], besides `report.json` and
/// `pair_stats.csv`.
pub const REPORT_TABLES: [&str; 10] = [
    "table1.csv",
    "table2.csv",
    "fig2_reddit.csv",
    "fig2_imgur.csv",
    "fig3_points.csv",
    "fig4_types.csv",
    "fig5_reddit.csv",
    "fig5_imgur.csv",
    "fig6_hist.csv",
    "fig7_delta_kappa.csv",
];

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TypeCsvRow {
    pair_type: PairType,
    pairs: u64,
    majority_ties: u64,
    reddit_correct: u64,
    reddit_n: u64,
    reddit_accuracy: Option<f64>,
    reddit_ci_half_width: Option<f64>,
    imgur_correct: u64,
    imgur_n: u64,
    imgur_accuracy: Option<f64>,
    imgur_ci_half_width: Option<f64>,
}

#[derive(Serialize)]
struct HistCsvRow {
    bin: u32,
    lower_s: u32,
    upper_s: Option<u32>,
    correct: u64,
    incorrect: u64,
    total: u64,
    accuracy: Option<f64>,
}

/// `pair_id,<x_name>,correct,fitted`; `fitted` is empty without a fit.
fn write_fit_csv(path: &Path, f: &CorrectnessFit, x_name: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["pair_id", x_name, "correct", "fitted"])?;
    for p in &f.points {
        w.write_record([
            p.pair_id.clone(),
            p.x.to_string(),
            (p.correct as u8).to_string(),
            f.fit.value().map(|r| r.predict(p.x).to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json`, `pair_stats.csv` and the figure/table files.
pub fn emit_report(report: &Report, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut f = BufWriter::new(File::create(out_dir.join("report.json"))?);
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n")?;
    f.flush()?;

    crate::stats::write_pair_stats(&report.pair_stats, BufWriter::new(File::create(out_dir.join("pair_stats.csv"))?))?;
    write_csv(&out_dir.join("table1.csv"), &report.dataset_summary)?;
    write_csv(&out_dir.join("table2.csv"), &report.questionnaire_summary.answers)?;
    for p in Predictor::ALL {
        write_fit_csv(&out_dir.join(format!("fig2_{p}.csv")), report.agreement_effect.get(p), "kappa")?;
        write_fit_csv(&out_dir.join(format!("fig5_{p}.csv")), report.balance_effect.delta_fits.get(p), "delta")?;
    }
    write_csv(&out_dir.join("fig3_points.csv"), &report.subreddit_effect.points)?;
    write_csv(
        &out_dir.join("fig4_types.csv"),
        report.balance_effect.types.iter().map(|t| TypeCsvRow {
            pair_type: t.pair_type,
            pairs: t.pairs,
            majority_ties: t.majority_ties,
            reddit_correct: t.reddit.correct,
            reddit_n: t.reddit.n,
            reddit_accuracy: t.reddit.accuracy,
            reddit_ci_half_width: t.reddit.ci_half_width,
            imgur_correct: t.imgur.correct,
            imgur_n: t.imgur.n,
            imgur_accuracy: t.imgur.accuracy,
            imgur_ci_half_width: t.imgur.ci_half_width,
        }),
    )?;
    write_csv(
        &out_dir.join("fig6_hist.csv"),
        report.effort.histogram.iter().map(|h| HistCsvRow {
            bin: h.bin,
            lower_s: h.lower_s,
            upper_s: h.upper_s,
            correct: h.correct,
            incorrect: h.incorrect,
            total: h.total,
            accuracy: h.accuracy,
        }),
    )?;
    write_csv(&out_dir.join("fig7_delta_kappa.csv"), &report.balance_effect.delta_kappa)?;
    Ok(())
}

/// Deterministic per-judgment flip of left/right placement, for checking
/// that nothing downstream depends on which side an image was shown on.
pub fn mirror_judgment(j: &Judgment) -> Judgment {
    Judgment {
        preference: j.preference.flip(),
        prediction: j.prediction.flip(),
        ..j.clone()
    }
}
