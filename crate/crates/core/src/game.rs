//! Session state machine for one player's game: preference question,
//! prediction question, reveal, ten rounds, questionnaire.
//!
//! Judgments reach the durable log only when a session completes its tenth
//! round; an abandoned or restarted session leaves no trace in the log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::pairing::{PairPlan, PairingError, PlanPair, Scheduler};

pub const ROUNDS_PER_GAME: usize = 10;
pub const REVEAL_MS: u64 = 3000;

pub const JUDGMENT_LOG: &str = "judgments.jsonl";
pub const QUESTIONNAIRE_LOG: &str = "questionnaires.jsonl";

#[derive(Error, Debug)]
pub enum GameError {
    #[error("expected phase {expected:?} but session is in {actual:?}")]
    BadPhase { expected: Phase, actual: Phase },
    #[error("pair {got:?} is not the current pair ({expected:?})")]
    StalePair { expected: String, got: String },
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown subreddit {requested:?}; valid subreddits: {}", valid.join(", "))]
    UnknownSubreddit { requested: String, valid: Vec<String> },
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error("failed to persist: {0}")]
    Persist(#[from] io::Error),
    #[error("log record: {0}")]
    Record(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    #[serde(rename = "L", alias = "left", alias = "Left")]
    Left,
    #[serde(rename = "R", alias = "right", alias = "Right")]
    Right,
}

impl Choice {
    pub fn flip(self) -> Choice {
        match self {
            Choice::Left => Choice::Right,
            Choice::Right => Choice::Left,
        }
    }
}

/// `Some(side)` with the strictly higher score, `None` on a tie.
pub fn higher_side(left_score: i64, right_score: i64) -> Option<Choice> {
    use std::cmp::Ordering::*;
    match left_score.cmp(&right_score) {
        Greater => Some(Choice::Left),
        Less => Some(Choice::Right),
        Equal => None,
    }
}

/// A pick is correct only when its side scored strictly higher; ties are
/// never correct.
pub fn prediction_correct(choice: Choice, left_score: i64, right_score: i64) -> bool {
    higher_side(left_score, right_score) == Some(choice)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    AwaitPreference,
    AwaitPrediction,
    Reveal,
    Questionnaire,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub session_id: String,
    pub pair_id: String,
    pub subreddit: String,
    pub preference: Choice,
    pub prediction: Choice,
    pub pref_ms: u64,
    pub pred_ms: u64,
    pub prediction_correct: bool,
    pub ts: i64,
}

impl Judgment {
    pub fn response_ms(&self) -> u64 {
        self.pref_ms + self.pred_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Usage {
    Heavy,
    Casual,
    #[serde(rename = "nonuser")]
    NonUser,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tenure {
    OverYear,
    UnderYear,
    #[serde(rename = "nonuser")]
    NonUser,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YesNo {
    Yes,
    No,
    #[serde(rename = "nonuser")]
    NonUser,
}

/// Usage questionnaire answers, one per question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answers {
    pub q_usage: Usage,
    pub q_tenure: Tenure,
    pub q_attention: YesNo,
    pub q_votes: YesNo,
    pub q_votes_new: YesNo,
}

impl Answers {
    pub fn nonuser() -> Self {
        Answers {
            q_usage: Usage::NonUser,
            q_tenure: Tenure::NonUser,
            q_attention: YesNo::NonUser,
            q_votes: YesNo::NonUser,
            q_votes_new: YesNo::NonUser,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireResponse {
    pub session_id: String,
    #[serde(flatten)]
    pub answers: Answers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct PendingRound {
    preference: Choice,
    pref_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub subreddit: String,
    /// Number of completed rounds.
    pub round_index: usize,
    pub phase: Phase,
    pub served: Vec<String>,
    pub judgments: Vec<Judgment>,
    pub started_at: i64,
    pending: Option<PendingRound>,
}

impl Session {
    pub fn current_pair(&self) -> Option<&str> {
        match self.phase {
            Phase::AwaitPreference | Phase::AwaitPrediction | Phase::Reveal => {
                self.served.last().map(String::as_str)
            }
            _ => None,
        }
    }

    fn guard(&self, expected: Phase, pair_id: &str) -> Result<(), GameError> {
        if self.phase != expected {
            return Err(GameError::BadPhase {
                expected,
                actual: self.phase,
            });
        }
        let current = self.served.last().map(String::as_str).unwrap_or("");
        if current != pair_id {
            return Err(GameError::StalePair {
                expected: current.to_string(),
                got: pair_id.to_string(),
            });
        }
        Ok(())
    }

    pub fn correct_predictions(&self) -> usize {
        self.judgments.iter().filter(|j| j.prediction_correct).count()
    }
}

/// Title and image of one side, with nothing that reveals popularity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideView {
    pub title: String,
    pub image_url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPayload {
    /// 1-based round number.
    pub index: usize,
    pub pair_id: String,
    pub left: SideView,
    pub right: SideView,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStart {
    pub session_id: String,
    pub subreddit: String,
    pub round: RoundPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reveal {
    pub left_score: i64,
    pub right_score: i64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextStep {
    Round(RoundPayload),
    Questionnaire,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionOutcome {
    pub reveal: Reveal,
    pub advance_after_ms: u64,
    pub next: NextStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub correct_predictions: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Durable destination for completed sessions.
pub trait LogSink {
    /// Appends one session's judgments as a single unit.
    fn append_judgments(&mut self, batch: &[Judgment]) -> io::Result<()>;
    fn append_questionnaire(&mut self, response: &QuestionnaireResponse) -> io::Result<()>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryLog {
    pub judgments: Vec<Judgment>,
    pub questionnaires: Vec<QuestionnaireResponse>,
}

impl LogSink for MemoryLog {
    fn append_judgments(&mut self, batch: &[Judgment]) -> io::Result<()> {
        self.judgments.extend_from_slice(batch);
        Ok(())
    }

    fn append_questionnaire(&mut self, response: &QuestionnaireResponse) -> io::Result<()> {
        self.questionnaires.push(response.clone());
        Ok(())
    }
}

/// Append-only line-delimited logs in a data directory.
///
/// Each batch is serialized up front and written with a single
/// `write_all`. Opening a directory drops any trailing torn batch left by a
/// crash mid-append.
#[derive(Debug)]
pub struct FileLog {
    dir: PathBuf,
    judgments: File,
    questionnaires: File,
}

impl FileLog {
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let judgments = open_log(&dir.join(JUDGMENT_LOG))?;
        let questionnaires = open_log(&dir.join(QUESTIONNAIRE_LOG))?;
        let mut log = FileLog {
            dir,
            judgments,
            questionnaires,
        };
        log.recover()?;
        Ok(log)
    }

    /// Truncates both logs, for runs that regenerate them from scratch.
    pub fn create(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        File::create(dir.join(JUDGMENT_LOG))?;
        File::create(dir.join(QUESTIONNAIRE_LOG))?;
        Self::open(dir)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn recover(&mut self) -> io::Result<()> {
        let keep = complete_batches_len(&mut self.judgments)?;
        self.judgments.set_len(keep)?;
        let keep = complete_lines_len(&mut self.questionnaires)?;
        self.questionnaires.set_len(keep)?;
        self.judgments.seek(SeekFrom::End(0))?;
        self.questionnaires.seek(SeekFrom::End(0))?;
        Ok(())
    }
}

fn open_log(path: &Path) -> io::Result<File> {
    OpenOptions::new().read(true).append(true).create(true).open(path)
}

fn complete_lines_len(file: &mut File) -> io::Result<u64> {
    file.seek(SeekFrom::Start(0))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    Ok(buf.iter().rposition(|&b| b == b'\n').map_or(0, |i| i as u64 + 1))
}

/// Byte length of the prefix made of whole ten-judgment session batches.
fn complete_batches_len(file: &mut File) -> io::Result<u64> {
    file.seek(SeekFrom::Start(0))?;
    let mut reader = BufReader::new(&mut *file);
    let mut offset = 0u64;
    let mut good = 0u64;
    let mut batch_session: Option<String> = None;
    let mut batch_len = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 || !line.ends_with('\n') {
            break;
        }
        offset += n as u64;
        let Ok(j) = serde_json::from_str::<Judgment>(&line) else {
            break;
        };
        if batch_session.as_deref() != Some(j.session_id.as_str()) {
            if batch_len != 0 {
                break;
            }
            batch_session = Some(j.session_id);
        }
        batch_len += 1;
        if batch_len == ROUNDS_PER_GAME {
            good = offset;
            batch_len = 0;
            batch_session = None;
        }
    }
    Ok(good)
}

fn to_lines<T: Serialize>(records: &[T]) -> io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

impl LogSink for FileLog {
    fn append_judgments(&mut self, batch: &[Judgment]) -> io::Result<()> {
        let buf = to_lines(batch)?;
        self.judgments.write_all(&buf)?;
        self.judgments.sync_data()
    }

    fn append_questionnaire(&mut self, response: &QuestionnaireResponse) -> io::Result<()> {
        let buf = to_lines(std::slice::from_ref(response))?;
        self.questionnaires.write_all(&buf)?;
        self.questionnaires.sync_data()
    }
}

pub fn write_jsonl<T: Serialize, W: Write>(records: &[T], mut writer: W) -> io::Result<()> {
    writer.write_all(&to_lines(records)?)?;
    writer.flush()
}

fn read_jsonl<T: for<'de> Deserialize<'de>, R: Read>(reader: R) -> Result<Vec<T>, GameError> {
    let mut out = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn read_judgments<R: Read>(reader: R) -> Result<Vec<Judgment>, GameError> {
    read_jsonl(reader)
}

pub fn read_questionnaires<R: Read>(reader: R) -> Result<Vec<QuestionnaireResponse>, GameError> {
    read_jsonl(reader)
}

pub trait Clock {
    /// Milliseconds since the unix epoch.
    fn now_ms(&mut self) -> i64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&mut self) -> i64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0)
    }
}

/// Deterministic clock for simulation: advances by `step_ms` per reading.
#[derive(Debug, Clone, Copy)]
pub struct SteppingClock {
    pub now_ms: i64,
    pub step_ms: i64,
}

impl Clock for SteppingClock {
    fn now_ms(&mut self) -> i64 {
        let t = self.now_ms;
        self.now_ms += self.step_ms;
        t
    }
}

/// In-memory sessions and pair scheduler, as saved between restarts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HostSnapshot {
    pub sessions: BTreeMap<String, Session>,
    pub scheduler: Scheduler,
}

/// Runs every session against one plan. Operations on a host must be
/// serialized; the caller owns the locking.
pub struct GameHost<S: LogSink, C: Clock = SystemClock> {
    plan: PairPlan,
    corpus: Corpus,
    scheduler: Scheduler,
    rng: ChaCha8Rng,
    sessions: BTreeMap<String, Session>,
    sink: S,
    clock: C,
}

impl<S: LogSink, C: Clock> GameHost<S, C> {
    pub fn new(plan: PairPlan, corpus: Corpus, sink: S, clock: C, seed: u64) -> Result<Self, GameError> {
        if plan.pairs.is_empty() {
            return Err(GameError::Validation("plan has no pairs".into()));
        }
        plan.check_against(&corpus)?;
        Ok(Self {
            plan,
            corpus,
            scheduler: Scheduler::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            sessions: BTreeMap::new(),
            sink,
            clock,
        })
    }

    pub fn plan(&self) -> &PairPlan {
        &self.plan
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn into_sink(self) -> S {
        self.sink
    }

    pub fn session(&self, session_id: &str) -> Option<&Session> {
        self.sessions.get(session_id)
    }

    /// Forgets a session, typically once it is done.
    pub fn remove_session(&mut self, session_id: &str) -> Option<Session> {
        self.sessions.remove(session_id)
    }

    pub fn subreddits(&self) -> Vec<String> {
        self.plan.subreddits()
    }

    pub fn snapshot(&self) -> HostSnapshot {
        HostSnapshot {
            sessions: self.sessions.clone(),
            scheduler: self.scheduler.clone(),
        }
    }

    pub fn restore(&mut self, snapshot: HostSnapshot) {
        self.sessions = snapshot.sessions;
        self.scheduler = snapshot.scheduler;
    }

    fn check_subreddit(&self, requested: &str) -> Result<(), GameError> {
        let valid = self.plan.subreddits();
        if valid.iter().any(|s| s == requested) {
            Ok(())
        } else {
            Err(GameError::UnknownSubreddit {
                requested: requested.to_string(),
                valid,
            })
        }
    }

    fn round_payload(&self, pair: &PlanPair, index: usize) -> Result<RoundPayload, GameError> {
        let resolved = pair.resolve(&self.corpus)?;
        let side = |e: &crate::corpus::CorpusEntry| SideView {
            title: e.post.title.clone(),
            image_url: e.post.image_url.clone(),
        };
        Ok(RoundPayload {
            index,
            pair_id: pair.pair_id.clone(),
            left: side(resolved.left),
            right: side(resolved.right),
        })
    }

    fn new_session(&mut self, subreddit: String) -> Result<SessionStart, GameError> {
        let session_id = loop {
            let id = format!("{:016x}", self.rng.random::<u64>());
            if !self.sessions.contains_key(&id) {
                break id;
            }
        };
        let pair = self
            .scheduler
            .next_pair(&self.plan, &[], &subreddit, &mut self.rng)?
            .clone();
        let round = self.round_payload(&pair, 1)?;
        let session = Session {
            session_id: session_id.clone(),
            subreddit: subreddit.clone(),
            round_index: 0,
            phase: Phase::AwaitPreference,
            served: vec![pair.pair_id],
            judgments: Vec::new(),
            started_at: self.clock.now_ms(),
            pending: None,
        };
        self.sessions.insert(session_id.clone(), session);
        Ok(SessionStart {
            session_id,
            subreddit,
            round,
        })
    }

    /// Starts a session on the requested subreddit, or a uniformly random
    /// one from the plan.
    pub fn start_session(&mut self, requested: Option<&str>) -> Result<SessionStart, GameError> {
        let subreddit = match requested {
            Some(s) => {
                self.check_subreddit(s)?;
                s.to_string()
            }
            None => {
                let subs = self.plan.subreddits();
                subs[self.rng.random_range(0..subs.len())].clone()
            }
        };
        self.new_session(subreddit)
    }

    fn session_mut(&mut self, session_id: &str) -> Result<&mut Session, GameError> {
        self.sessions
            .get_mut(session_id)
            .ok_or_else(|| GameError::UnknownSession(session_id.to_string()))
    }

    pub fn submit_preference(
        &mut self,
        session_id: &str,
        pair_id: &str,
        choice: Choice,
        response_ms: u64,
    ) -> Result<(), GameError> {
        let session = self.session_mut(session_id)?;
        session.guard(Phase::AwaitPreference, pair_id)?;
        session.pending = Some(PendingRound {
            preference: choice,
            pref_ms: response_ms,
        });
        session.phase = Phase::AwaitPrediction;
        Ok(())
    }

    pub fn submit_prediction(
        &mut self,
        session_id: &str,
        pair_id: &str,
        choice: Choice,
        response_ms: u64,
    ) -> Result<PredictionOutcome, GameError> {
        let session = self
            .sessions
            .get(session_id)
            .ok_or_else(|| GameError::UnknownSession(session_id.to_string()))?;
        session.guard(Phase::AwaitPrediction, pair_id)?;
        let pending = session.pending.expect("preference recorded in AwaitPrediction");
        let plan_pair = self
            .plan
            .pair(pair_id)
            .ok_or_else(|| PairingError::UnknownPost(pair_id.to_string()))?;
        let pair = plan_pair.resolve(&self.corpus)?;
        let (left_score, right_score) = (pair.left.score(), pair.right.score());
        let correct = prediction_correct(choice, left_score, right_score);
        let judgment = Judgment {
            session_id: session_id.to_string(),
            pair_id: pair_id.to_string(),
            subreddit: session.subreddit.clone(),
            preference: pending.preference,
            prediction: choice,
            pref_ms: pending.pref_ms,
            pred_ms: response_ms,
            prediction_correct: correct,
            ts: self.clock.now_ms(),
        };
        let finished = session.round_index + 1 == ROUNDS_PER_GAME;

        // Everything fallible happens before the session is touched.
        let next = if finished {
            let mut batch = session.judgments.clone();
            batch.push(judgment.clone());
            self.sink.append_judgments(&batch)?;
            None
        } else {
            let served = session.served.clone();
            let subreddit = session.subreddit.clone();
            let next = self
                .scheduler
                .next_pair(&self.plan, &served, &subreddit, &mut self.rng)?
                .clone();
            let payload = self.round_payload(&next, session.round_index + 2)?;
            Some((next.pair_id, payload))
        };

        let session = self.sessions.get_mut(session_id).expect("checked above");
        session.pending = None;
        session.judgments.push(judgment);
        session.round_index += 1;
        session.phase = Phase::Reveal;
        let next = match next {
            Some((pid, payload)) => {
                session.served.push(pid);
                session.phase = Phase::AwaitPreference;
                NextStep::Round(payload)
            }
            None => {
                session.phase = Phase::Questionnaire;
                NextStep::Questionnaire
            }
        };
        Ok(PredictionOutcome {
            reveal: Reveal {
                left_score,
                right_score,
                correct,
            },
            advance_after_ms: REVEAL_MS,
            next,
        })
    }

    /// Discards the session, unrecorded, and starts a fresh one.
    pub fn switch_subreddit(&mut self, session_id: &str, subreddit: &str) -> Result<SessionStart, GameError> {
        let session = self
            .sessions
            .get(session_id)
            .ok_or_else(|| GameError::UnknownSession(session_id.to_string()))?;
        if session.phase == Phase::Done {
            return Err(GameError::BadPhase {
                expected: Phase::AwaitPreference,
                actual: Phase::Done,
            });
        }
        self.check_subreddit(subreddit)?;
        let start = self.new_session(subreddit.to_string())?;
        self.sessions.remove(session_id);
        Ok(start)
    }

    pub fn submit_questionnaire(
        &mut self,
        session_id: &str,
        answers: Option<Answers>,
    ) -> Result<SessionSummary, GameError> {
        let session = self
            .sessions
            .get(session_id)
            .ok_or_else(|| GameError::UnknownSession(session_id.to_string()))?;
        if session.phase != Phase::Questionnaire {
            return Err(GameError::BadPhase {
                expected: Phase::Questionnaire,
                actual: session.phase,
            });
        }
        if let Some(answers) = answers {
            self.sink.append_questionnaire(&QuestionnaireResponse {
                session_id: session_id.to_string(),
                answers,
            })?;
        }
        let session = self.sessions.get_mut(session_id).expect("checked above");
        session.phase = Phase::Done;
        let correct = session.correct_predictions();
        Ok(SessionSummary {
            correct_predictions: correct,
            total: ROUNDS_PER_GAME,
            accuracy: correct as f64 / ROUNDS_PER_GAME as f64,
        })
    }
}

impl GameHost<FileLog, SystemClock> {
    pub fn with_file_log(plan: PairPlan, corpus: Corpus, data_dir: &Path, seed: u64) -> Result<Self, GameError> {
        let sink = FileLog::open(data_dir)?;
        Self::new(plan, corpus, sink, SystemClock, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{compute_percentiles, Post};
    use crate::pairing::{generate_plan, PlanConfig};

    fn fixture() -> (PairPlan, Corpus) {
        let posts: Vec<Post> = ["funny", "aww"]
            .iter()
            .flat_map(|s| {
                (0..200).map(move |i| Post {
                    id: format!("{s}{i}"),
                    subreddit: s.to_string(),
                    title: format!("{s} #{i}"),
                    image_url: format!("https://i.imgur.com/{s}{i}.jpg"),
                    score: 10 * i + 3,
                    created_at: i,
                })
            })
            .collect();
        let corpus = Corpus::new(compute_percentiles(&posts, 100).unwrap().entries).unwrap();
        let plan = generate_plan(&corpus, &PlanConfig::default()).unwrap();
        (plan, corpus)
    }

    fn host() -> GameHost<MemoryLog, SteppingClock> {
        let (plan, corpus) = fixture();
        GameHost::new(
            plan,
            corpus,
            MemoryLog::default(),
            SteppingClock { now_ms: 0, step_ms: 1000 },
            7,
        )
        .unwrap()
    }

    fn play_round(h: &mut GameHost<MemoryLog, SteppingClock>, sid: &str, pick: Choice) -> PredictionOutcome {
        let pair = h.session(sid).unwrap().current_pair().unwrap().to_string();
        h.submit_preference(sid, &pair, pick, 1200).unwrap();
        h.submit_prediction(sid, &pair, pick, 800).unwrap()
    }

    #[test]
    fn explicit_and_unknown_subreddit() {
        let mut h = host();
        let s = h.start_session(Some("funny")).unwrap();
        assert_eq!(s.subreddit, "funny");
        assert_eq!(s.round.index, 1);
        match h.start_session(Some("nonexistent")).unwrap_err() {
            GameError::UnknownSubreddit { valid, .. } => assert_eq!(valid, ["aww", "funny"]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn preference_then_prediction() {
        let mut h = host();
        let s = h.start_session(None).unwrap();
        let sid = &s.session_id;
        h.submit_preference(sid, &s.round.pair_id, Choice::Left, 100).unwrap();
        assert_eq!(h.session(sid).unwrap().phase, Phase::AwaitPrediction);
        let before = h.session(sid).unwrap().clone();
        let err = h.submit_preference(sid, &s.round.pair_id, Choice::Left, 100).unwrap_err();
        assert!(matches!(err, GameError::BadPhase { .. }));
        assert_eq!(h.session(sid).unwrap(), &before);
    }

    #[test]
    fn stale_pair_rejected() {
        let mut h = host();
        let s = h.start_session(None).unwrap();
        let sid = s.session_id.clone();
        let mut old_pairs = Vec::new();
        for _ in 0..3 {
            old_pairs.push(h.session(&sid).unwrap().current_pair().unwrap().to_string());
            play_round(&mut h, &sid, Choice::Left);
        }
        // Round 4 is in progress; round 3's pair is stale.
        let before = h.session(&sid).unwrap().clone();
        let err = h.submit_preference(&sid, &old_pairs[2], Choice::Left, 1).unwrap_err();
        assert!(matches!(err, GameError::StalePair { .. }));
        assert_eq!(h.session(&sid).unwrap(), &before);
    }

    #[test]
    fn correctness_by_score() {
        assert!(prediction_correct(Choice::Left, 5000, 40));
        assert!(!prediction_correct(Choice::Right, 5000, 40));
        assert!(!prediction_correct(Choice::Left, 7, 7));
        assert!(!prediction_correct(Choice::Right, 7, 7));
    }

    #[test]
    fn full_game_persists_once() {
        let mut h = host();
        let s = h.start_session(None).unwrap();
        let sid = s.session_id.clone();
        for round in 1..=ROUNDS_PER_GAME {
            assert!(h.sink().judgments.is_empty(), "persisted early at round {round}");
            let out = play_round(&mut h, &sid, Choice::Left);
            assert_eq!(out.advance_after_ms, 3000);
            if round < ROUNDS_PER_GAME {
                match out.next {
                    NextStep::Round(r) => assert_eq!(r.index, round + 1),
                    NextStep::Questionnaire => panic!("early questionnaire"),
                }
            } else {
                assert_eq!(out.next, NextStep::Questionnaire);
            }
        }
        let session = h.session(&sid).unwrap();
        assert_eq!(session.phase, Phase::Questionnaire);
        assert_eq!(h.sink().judgments.len(), 10);
        let mut seen = session.served.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 10);
        for j in &h.sink().judgments {
            let p = h.plan().pair(&j.pair_id).unwrap().resolve(h.corpus()).unwrap();
            assert_eq!(j.prediction_correct, prediction_correct(j.prediction, p.left.score(), p.right.score()));
        }
    }

    #[test]
    fn switch_discards_partial_game() {
        let mut h = host();
        let s = h.start_session(Some("funny")).unwrap();
        for _ in 0..7 {
            play_round(&mut h, &s.session_id, Choice::Right);
        }
        let fresh = h.switch_subreddit(&s.session_id, "aww").unwrap();
        assert!(h.session(&s.session_id).is_none());
        let ns = h.session(&fresh.session_id).unwrap();
        assert_eq!(ns.round_index, 0);
        assert_eq!(ns.subreddit, "aww");
        assert!(h.sink().judgments.is_empty());

        // Same subreddit still restarts.
        let again = h.switch_subreddit(&fresh.session_id, "aww").unwrap();
        assert_ne!(again.session_id, fresh.session_id);
        assert!(h.switch_subreddit(&again.session_id, "nope").is_err());
        assert!(h.session(&again.session_id).is_some());
    }

    #[test]
    fn questionnaire_flow() {
        let mut h = host();
        let s = h.start_session(None).unwrap();
        let sid = s.session_id.clone();
        assert!(matches!(
            h.submit_questionnaire(&sid, None),
            Err(GameError::BadPhase { .. })
        ));
        for _ in 0..10 {
            play_round(&mut h, &sid, Choice::Left);
        }
        let answers = Answers {
            q_usage: Usage::Heavy,
            ..Answers::nonuser()
        };
        let summary = h.submit_questionnaire(&sid, Some(answers)).unwrap();
        let expected = h.session(&sid).unwrap().correct_predictions();
        assert_eq!(summary.correct_predictions, expected);
        assert_eq!(summary.accuracy, expected as f64 / 10.0);
        assert_eq!(h.session(&sid).unwrap().phase, Phase::Done);
        assert!(h.switch_subreddit(&sid, "aww").is_err());

        let mut buf = Vec::new();
        write_jsonl(&h.sink().questionnaires, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"q_usage\":\"heavy\""), "{text}");
        assert!(text.contains("\"q_tenure\":\"nonuser\""), "{text}");
        let back = read_questionnaires(&buf[..]).unwrap();
        assert_eq!(back[0].answers.q_usage, Usage::Heavy);
    }

    #[test]
    fn skipped_questionnaire_still_summarizes() {
        let mut h = host();
        let s = h.start_session(None).unwrap();
        for _ in 0..10 {
            play_round(&mut h, &s.session_id, Choice::Left);
        }
        let summary = h.submit_questionnaire(&s.session_id, None).unwrap();
        assert_eq!(summary.total, 10);
        assert!(h.sink().questionnaires.is_empty());
        assert_eq!(h.sink().judgments.len(), 10);
    }

    #[test]
    fn judgment_wire_format() {
        let j = Judgment {
            session_id: "s".into(),
            pair_id: "p".into(),
            subreddit: "aww".into(),
            preference: Choice::Left,
            prediction: Choice::Right,
            pref_ms: 1,
            pred_ms: 2,
            prediction_correct: true,
            ts: 3,
        };
        let text = serde_json::to_string(&j).unwrap();
        assert_eq!(
            text,
            r#"{"session_id":"s","pair_id":"p","subreddit":"aww","preference":"L","prediction":"R","pref_ms":1,"pred_ms":2,"prediction_correct":true,"ts":3}"#
        );
    }

    fn judgment(session: &str, i: usize) -> Judgment {
        Judgment {
            session_id: session.into(),
            pair_id: format!("p{i}"),
            subreddit: "aww".into(),
            preference: Choice::Left,
            prediction: Choice::Left,
            pref_ms: 1,
            pred_ms: 1,
            prediction_correct: false,
            ts: 0,
        }
    }

    #[test]
    fn file_log_recovers_torn_batch() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut log = FileLog::open(dir.path()).unwrap();
            let batch: Vec<_> = (0..10).map(|i| judgment("a", i)).collect();
            log.append_judgments(&batch).unwrap();
        }
        // Simulate a crash halfway through the next batch.
        let path = dir.path().join(JUDGMENT_LOG);
        let mut torn = to_lines(&(0..10).map(|i| judgment("b", i)).collect::<Vec<_>>()).unwrap();
        torn.truncate(torn.len() / 2);
        OpenOptions::new().append(true).open(&path).unwrap().write_all(&torn).unwrap();

        let mut log = FileLog::open(dir.path()).unwrap();
        let got = read_judgments(File::open(&path).unwrap()).unwrap();
        assert_eq!(got.len(), 10);
        assert!(got.iter().all(|j| j.session_id == "a"));

        log.append_judgments(&(0..10).map(|i| judgment("c", i)).collect::<Vec<_>>()).unwrap();
        let got = read_judgments(File::open(&path).unwrap()).unwrap();
        assert_eq!(got.len(), 20);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut h = host();
        let s = h.start_session(None).unwrap();
        play_round(&mut h, &s.session_id, Choice::Left);
        let snap = h.snapshot();
        let text = serde_json::to_string(&snap).unwrap();
        let back: HostSnapshot = serde_json::from_str(&text).unwrap();
        assert_eq!(back, snap);
        let mut h2 = host();
        h2.restore(back);
        let pair = h2.session(&s.session_id).unwrap().current_pair().unwrap().to_string();
        h2.submit_preference(&s.session_id, &pair, Choice::Left, 5).unwrap();
    }
}
