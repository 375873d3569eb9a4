//! Groundtruth aggregation: per-pair vote tallies, majority, agreement,
//! score-percentile gap and predictor correctness, plus accuracy intervals.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::corpus::CorpusEntry;
use crate::game::{Choice, Judgment};
use crate::pairing::{Pair, PairType};

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959964;

#[derive(Error, Debug)]
pub enum StatsError {
    #[error("judgment for pair {got:?} passed while tallying {expected:?}")]
    ForeignJudgment { expected: String, got: String },
    #[error("pair {0:?} has no judgments")]
    NoJudgments(String),
    #[error("agreement needs at least 2 raters, got {0}")]
    TooFewRaters(u32),
    #[error("no pairs with defined {0} correctness")]
    EmptyDenominator(Predictor),
    #[error("correlation needs at least 3 entries with views, got {0}")]
    TooFewEntries(usize),
    #[error("pair stats table: {0}")]
    Table(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Predictor {
    Reddit,
    Imgur,
}

impl Predictor {
    pub const ALL: [Predictor; 2] = [Predictor::Reddit, Predictor::Imgur];

    pub fn name(self) -> &'static str {
        match self {
            Predictor::Reddit => "reddit",
            Predictor::Imgur => "imgur",
        }
    }
}

impl std::fmt::Display for Predictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Majority {
    Left,
    Right,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    Left,
    Right,
    Tie,
    Unknown,
}

impl Winner {
    fn compare<T: Ord>(left: Option<T>, right: Option<T>) -> Winner {
        use std::cmp::Ordering::*;
        match (left, right) {
            (Some(l), Some(r)) => match l.cmp(&r) {
                Greater => Winner::Left,
                Less => Winner::Right,
                Equal => Winner::Tie,
            },
            _ => Winner::Unknown,
        }
    }

    fn agrees(self, majority: Majority) -> Option<bool> {
        match (self, majority) {
            (_, Majority::Tie) | (Winner::Tie | Winner::Unknown, _) => None,
            (Winner::Left, m) => Some(m == Majority::Left),
            (Winner::Right, m) => Some(m == Majority::Right),
        }
    }
}

/// Aggregated groundtruth for one pair. Serializes as one row of the
/// pair-stats table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub pair_id: String,
    pub subreddit: String,
    pub pair_type: PairType,
    #[serde(rename = "n")]
    pub n_raters: u32,
    #[serde(rename = "votes_l")]
    pub votes_left: u32,
    #[serde(rename = "votes_r")]
    pub votes_right: u32,
    pub majority: Majority,
    /// Absent with fewer than two raters.
    pub kappa: Option<f64>,
    pub delta: f64,
    pub reddit_winner: Winner,
    pub imgur_winner: Winner,
    pub reddit_correct: Option<bool>,
    pub imgur_correct: Option<bool>,
}

impl PairStats {
    pub fn correct(&self, predictor: Predictor) -> Option<bool> {
        match predictor {
            Predictor::Reddit => self.reddit_correct,
            Predictor::Imgur => self.imgur_correct,
        }
    }

    pub fn winner(&self, predictor: Predictor) -> Winner {
        match predictor {
            Predictor::Reddit => self.reddit_winner,
            Predictor::Imgur => self.imgur_winner,
        }
    }
}

/// Per-pair agreement for a binary forced choice: the observed fraction of
/// concordant rater pairs, rescaled so that 0.5 (chance) maps to 0.
pub fn fleiss_kappa_pair(votes_left: u32, votes_right: u32) -> Result<f64, StatsError> {
    let n = votes_left as u64 + votes_right as u64;
    if n < 2 {
        return Err(StatsError::TooFewRaters(n as u32));
    }
    let (a, b) = (votes_left as u64, votes_right as u64);
    let concordant = a * a.saturating_sub(1) + b * b.saturating_sub(1);
    // 2·P_o − 1 as a single rounding of an exact integer ratio.
    let pairs = n * (n - 1);
    Ok((2 * concordant as i64 - pairs as i64) as f64 / pairs as f64)
}

/// Tallies one pair's preference votes against its corpus entries.
pub fn tally_pair<'j, I>(judgments: I, pair: &Pair<'_>) -> Result<PairStats, StatsError>
where
    I: IntoIterator<Item = &'j Judgment>,
{
    let (mut left, mut right) = (0u32, 0u32);
    for j in judgments {
        if j.pair_id != pair.pair_id {
            return Err(StatsError::ForeignJudgment {
                expected: pair.pair_id.to_string(),
                got: j.pair_id.clone(),
            });
        }
        match j.preference {
            Choice::Left => left += 1,
            Choice::Right => right += 1,
        }
    }
    let n = left + right;
    if n == 0 {
        return Err(StatsError::NoJudgments(pair.pair_id.to_string()));
    }
    let majority = match left.cmp(&right) {
        std::cmp::Ordering::Greater => Majority::Left,
        std::cmp::Ordering::Less => Majority::Right,
        std::cmp::Ordering::Equal => Majority::Tie,
    };
    let reddit_winner = Winner::compare(Some(pair.left.score()), Some(pair.right.score()));
    let imgur_winner = Winner::compare(pair.left.views, pair.right.views);
    Ok(PairStats {
        pair_id: pair.pair_id.to_string(),
        subreddit: pair.subreddit.to_string(),
        pair_type: pair.pair_type,
        n_raters: n,
        votes_left: left,
        votes_right: right,
        majority,
        kappa: (n >= 2).then(|| fleiss_kappa_pair(left, right)).transpose()?,
        delta: (pair.left.percentile - pair.right.percentile).abs(),
        reddit_winner,
        imgur_winner,
        reddit_correct: reddit_winner.agrees(majority),
        imgur_correct: imgur_winner.agrees(majority),
    })
}

/// Normal-approximation half-width `z * sqrt(p(1-p)/n)`.
pub fn binomial_ci(p: f64, n: u64, z: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p) && n >= 1);
    z * (p * (1.0 - p) / n as f64).sqrt()
}

/// 95% Student-t half-width for the mean of `n` 0/1 outcomes with sample
/// proportion `p`, using the sample standard deviation (n - 1 divisor).
/// Undefined below two observations.
pub fn t_interval_half_width(p: f64, n: u64) -> Option<f64> {
    if n < 2 {
        return None;
    }
    let df = (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, df).ok()?.inverse_cdf(0.975);
    Some(t * (p * (1.0 - p) / df).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: u64,
    pub n: u64,
    pub accuracy: f64,
    pub ci_half_width: f64,
}

impl Accuracy {
    pub fn from_counts(correct: u64, n: u64) -> Option<Accuracy> {
        (n > 0).then(|| {
            let p = correct as f64 / n as f64;
            Accuracy {
                correct,
                n,
                accuracy: p,
                ci_half_width: binomial_ci(p, n, Z95),
            }
        })
    }
}

/// Counts (correct, eligible) over pairs where the predictor's correctness
/// is defined.
pub fn correctness_counts<'a, I>(stats: I, predictor: Predictor) -> (u64, u64)
where
    I: IntoIterator<Item = &'a PairStats>,
{
    stats
        .into_iter()
        .filter_map(|s| s.correct(predictor))
        .fold((0, 0), |(c, n), ok| (c + ok as u64, n + 1))
}

/// Fraction of pairs where the predictor picks the majority-preferred
/// side. Majority ties and undecided predictors are excluded.
pub fn predictor_accuracy(stats: &[PairStats], predictor: Predictor) -> Result<Accuracy, StatsError> {
    let (correct, n) = correctness_counts(stats, predictor);
    Accuracy::from_counts(correct, n).ok_or(StatsError::EmptyDenominator(predictor))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorAgreement {
    pub matched: u64,
    pub compared: u64,
    pub match_rate: f64,
    pub r_squared: f64,
    pub entries: usize,
}

fn log_scale(x: f64) -> f64 {
    (1.0 + x.max(0.0)).log10()
}

/// Pearson correlation by centered sums. `None` when either side is constant.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// How often the two predictors pick the same side, and how strongly
/// log-scaled scores and views correlate across `entries`.
pub fn predictor_agreement(
    stats: &[PairStats],
    entries: &[&CorpusEntry],
) -> Result<PredictorAgreement, StatsError> {
    let decided = |w: Winner| matches!(w, Winner::Left | Winner::Right);
    let (matched, compared) = stats
        .iter()
        .filter(|s| decided(s.reddit_winner) && decided(s.imgur_winner))
        .fold((0u64, 0u64), |(m, c), s| (m + (s.reddit_winner == s.imgur_winner) as u64, c + 1));
    let (scores, views): (Vec<f64>, Vec<f64>) = entries
        .iter()
        .filter_map(|e| e.views.map(|v| (log_scale(e.score() as f64), log_scale(v as f64))))
        .unzip();
    if scores.len() < 3 {
        return Err(StatsError::TooFewEntries(scores.len()));
    }
    let r = pearson_r(&scores, &views).unwrap_or(0.0);
    Ok(PredictorAgreement {
        matched,
        compared,
        match_rate: if compared > 0 { matched as f64 / compared as f64 } else { 0.0 },
        r_squared: r * r,
        entries: scores.len(),
    })
}

pub fn write_pair_stats<W: Write>(stats: &[PairStats], writer: W) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in stats {
        w.serialize(s)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_pair_stats<R: Read>(reader: R) -> Result<Vec<PairStats>, StatsError> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
