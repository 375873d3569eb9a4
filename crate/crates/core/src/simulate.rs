//! Synthetic players for desk-scale, deterministic end-to-end runs.
//!
//! Every simulated session goes through [`GameHost`], so the no-repeat,
//! ten-round and completed-only persistence rules apply exactly as they do
//! for a live service.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::game::{
    higher_side, Answers, Choice, GameError, GameHost, MemoryLog, NextStep, SteppingClock, Tenure, Usage, YesNo,
    ROUNDS_PER_GAME,
};
use crate::pairing::PairPlan;

/// 2017-03-01T00:00:00Z; simulated timestamps start here.
pub const SIM_EPOCH_MS: i64 = 1_488_326_400_000;

#[derive(Error, Debug)]
pub enum SimulationError {
    #[error("invalid player model: {0}")]
    BadModel(String),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// How a player picks the image they prefer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PreferenceModel {
    Coin,
    /// Prefers the higher-percentile side with probability `1 - noise`,
    /// otherwise flips a coin.
    FollowPercentile { noise: f64 },
    /// P(prefer higher-scoring side) = logistic(intercept + slope * delta).
    Logistic { intercept: f64, slope: f64 },
    /// P(prefer left) per pair id.
    PerPair {
        p_left: BTreeMap<String, f64>,
        #[serde(default = "half")]
        default: f64,
    },
}

fn half() -> f64 {
    0.5
}

/// Relative answer frequencies, in enum order (e.g. heavy, casual, nonuser).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerWeights {
    pub usage: [f64; 3],
    pub tenure: [f64; 3],
    pub attention: [f64; 3],
    pub votes: [f64; 3],
    pub votes_new: [f64; 3],
}

impl Default for AnswerWeights {
    /// Response counts observed in the original questionnaire.
    fn default() -> Self {
        AnswerWeights {
            usage: [1294.0, 724.0, 144.0],
            tenure: [1815.0, 202.0, 145.0],
            attention: [606.0, 1227.0, 329.0],
            votes: [1371.0, 643.0, 148.0],
            votes_new: [279.0, 1674.0, 209.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timing {
    /// Means of exponentially distributed delays.
    pub pref_mean_ms: f64,
    pub pred_mean_ms: f64,
    /// Added to the prediction delay of incorrect predictions.
    pub incorrect_delay_ms: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            pref_mean_ms: 9_000.0,
            pred_mean_ms: 13_000.0,
            incorrect_delay_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerModel {
    pub preference: PreferenceModel,
    /// Probability of predicting the higher-scoring side.
    #[serde(default = "half")]
    pub prediction_skill: f64,
    /// Added to `prediction_skill` for players answering heavy usage.
    #[serde(default)]
    pub heavy_bonus: f64,
    #[serde(default = "default_questionnaire_rate")]
    pub questionnaire_rate: f64,
    #[serde(default)]
    pub answers: AnswerWeights,
    #[serde(default)]
    pub timing: Timing,
    /// Chance a session switches subreddit part-way and restarts.
    #[serde(default)]
    pub abandon_prob: f64,
}

fn default_questionnaire_rate() -> f64 {
    0.783
}

impl PlayerModel {
    /// Always prefers and predicts the higher-scoring side.
    pub fn oracle() -> Self {
        PlayerModel {
            preference: PreferenceModel::FollowPercentile { noise: 0.0 },
            prediction_skill: 1.0,
            ..Self::coin()
        }
    }

    pub fn coin() -> Self {
        PlayerModel {
            preference: PreferenceModel::Coin,
            prediction_skill: 0.5,
            heavy_bonus: 0.0,
            questionnaire_rate: default_questionnaire_rate(),
            answers: AnswerWeights::default(),
            timing: Timing::default(),
            abandon_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(SimulationError::BadModel(format!("{name} = {p} is not a probability")))
            }
        };
        prob("prediction_skill", self.prediction_skill)?;
        prob("questionnaire_rate", self.questionnaire_rate)?;
        prob("abandon_prob", self.abandon_prob)?;
        if !(-1.0..=1.0).contains(&self.heavy_bonus) {
            return Err(SimulationError::BadModel(format!("heavy_bonus = {} out of [-1, 1]", self.heavy_bonus)));
        }
        match &self.preference {
            PreferenceModel::Coin => {}
            PreferenceModel::FollowPercentile { noise } => prob("noise", *noise)?,
            PreferenceModel::Logistic { intercept, slope } => {
                if !intercept.is_finite() || !slope.is_finite() {
                    return Err(SimulationError::BadModel("logistic coefficients must be finite".into()));
                }
            }
            PreferenceModel::PerPair { p_left, default } => {
                prob("default", *default)?;
                for (k, v) in p_left {
                    prob(k, *v)?;
                }
            }
        }
        let w = &self.answers;
        for (name, ws) in [
            ("usage", w.usage),
            ("tenure", w.tenure),
            ("attention", w.attention),
            ("votes", w.votes),
            ("votes_new", w.votes_new),
        ] {
            if ws.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || ws.iter().sum::<f64>() <= 0.0 {
                return Err(SimulationError::BadModel(format!("answer weights for {name} must be nonnegative with a positive sum")));
            }
        }
        for (name, v) in [
            ("pref_mean_ms", self.timing.pref_mean_ms),
            ("pred_mean_ms", self.timing.pred_mean_ms),
            ("incorrect_delay_ms", self.timing.incorrect_delay_ms),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimulationError::BadModel(format!("{name} must be a nonnegative number")));
            }
        }
        Ok(())
    }
}

fn pick3(rng: &mut ChaCha8Rng, w: [f64; 3]) -> usize {
    let u = rng.random::<f64>() * w.iter().sum::<f64>();
    if u < w[0] {
        0
    } else if u < w[0] + w[1] {
        1
    } else {
        2
    }
}

/// Draws a consistent answer set: a usage non-user answers non-user
/// everywhere; other players answer non-user on a question only in excess
/// of the usage non-user share.
fn draw_answers(rng: &mut ChaCha8Rng, w: &AnswerWeights) -> Answers {
    let usage = [Usage::Heavy, Usage::Casual, Usage::NonUser][pick3(rng, w.usage)];
    if usage == Usage::NonUser {
        return Answers::nonuser();
    }
    let base = w.usage[2] / w.usage.iter().sum::<f64>();
    let mut conditional = |ws: [f64; 3]| {
        let total = ws.iter().sum::<f64>();
        let non = ((ws[2] / total - base) / (1.0 - base)).max(0.0);
        let users = ws[0] + ws[1];
        let adj = if users > 0.0 {
            [ws[0] / users * (1.0 - non), ws[1] / users * (1.0 - non), non]
        } else {
            [0.0, 0.0, 1.0]
        };
        pick3(rng, adj)
    };
    let tenure = [Tenure::OverYear, Tenure::UnderYear, Tenure::NonUser][conditional(w.tenure)];
    let yn = [YesNo::Yes, YesNo::No, YesNo::NonUser];
    let attention = yn[conditional(w.attention)];
    let votes = yn[conditional(w.votes)];
    let votes_new = yn[conditional(w.votes_new)];
    Answers {
        q_usage: usage,
        q_tenure: tenure,
        q_attention: attention,
        q_votes: votes,
        q_votes_new: votes_new,
    }
}

fn exp_ms(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    // 1 - u lies in (0, 1], so the log is finite.
    (-(1.0 - rng.random::<f64>()).ln() * mean).round() as u64
}

fn choose(rng: &mut ChaCha8Rng, p_higher: f64, higher: Option<Choice>) -> Choice {
    match higher {
        Some(h) if rng.random_bool(p_higher.clamp(0.0, 1.0)) => h,
        Some(h) => h.flip(),
        None => {
            if rng.random_bool(0.5) {
                Choice::Left
            } else {
                Choice::Right
            }
        }
    }
}

/// Plays `n_sessions` complete games. The same inputs always produce the
/// same logs.
pub fn simulate_players(
    plan: &PairPlan,
    corpus: &Corpus,
    model: &PlayerModel,
    n_sessions: usize,
    seed: u64,
) -> Result<MemoryLog, SimulationError> {
    model.validate()?;
    let clock = SteppingClock {
        now_ms: SIM_EPOCH_MS,
        step_ms: 1_000,
    };
    let mut host = GameHost::new(plan.clone(), corpus.clone(), MemoryLog::default(), clock, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let subreddits = host.subreddits();

    for _ in 0..n_sessions {
        let answers = draw_answers(&mut rng, &model.answers);
        let answers_given = rng.random_bool(model.questionnaire_rate);
        let mut skill = model.prediction_skill;
        if answers_given && answers.q_usage == Usage::Heavy {
            skill = (skill + model.heavy_bonus).clamp(0.0, 1.0);
        }
        let mut abandon_at = rng
            .random_bool(model.abandon_prob)
            .then(|| rng.random_range(1..ROUNDS_PER_GAME));

        let mut start = host.start_session(None)?;
        let mut round = start.round.clone();
        let mut played = 0;
        loop {
            if abandon_at == Some(played) {
                abandon_at = None;
                let target = &subreddits[rng.random_range(0..subreddits.len())];
                start = host.switch_subreddit(&start.session_id, target)?;
                round = start.round.clone();
                played = 0;
            }
            let pair = plan
                .pair(&round.pair_id)
                .expect("host serves plan pairs")
                .resolve(corpus)
                .map_err(GameError::from)?;
            let (l, r) = (pair.left, pair.right);
            let higher_score = higher_side(l.score(), r.score());
            let pref = match &model.preference {
                PreferenceModel::Coin => choose(&mut rng, 0.5, higher_score),
                PreferenceModel::FollowPercentile { noise } => {
                    let higher_pct = if l.percentile > r.percentile {
                        Some(Choice::Left)
                    } else if r.percentile > l.percentile {
                        Some(Choice::Right)
                    } else {
                        None
                    };
                    choose(&mut rng, 1.0 - noise / 2.0, higher_pct)
                }
                PreferenceModel::Logistic { intercept, slope } => {
                    let delta = (l.percentile - r.percentile).abs();
                    choose(&mut rng, crate::inference::sigmoid(intercept + slope * delta), higher_score)
                }
                PreferenceModel::PerPair { p_left, default } => {
                    let p = p_left.get(&round.pair_id).copied().unwrap_or(*default);
                    choose(&mut rng, p, Some(Choice::Left))
                }
            };
            let pred = choose(&mut rng, skill, higher_score);
            let pref_ms = exp_ms(&mut rng, model.timing.pref_mean_ms);
            let mut pred_ms = exp_ms(&mut rng, model.timing.pred_mean_ms);
            if higher_score != Some(pred) {
                pred_ms += model.timing.incorrect_delay_ms.round() as u64;
            }
            host.submit_preference(&start.session_id, &round.pair_id, pref, pref_ms)?;
            let outcome = host.submit_prediction(&start.session_id, &round.pair_id, pred, pred_ms)?;
            played += 1;
            match outcome.next {
                NextStep::Round(next) => round = next,
                NextStep::Questionnaire => break,
            }
        }
        host.submit_questionnaire(&start.session_id, answers_given.then_some(answers))?;
        host.remove_session(&start.session_id);
    }
    Ok(host.into_sink())
}
