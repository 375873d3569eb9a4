//! Pairwise preference game and the analysis pipeline behind it.
//!
//! Data flows corpus → pairing → game → stats/inference → analysis. The
//! [`api`] module maps the game onto a JSON request/response protocol and
//! [`simulate`] plays it with synthetic players.

pub mod analysis;
pub mod api;
pub mod corpus;
pub mod game;
pub mod inference;
pub mod pairing;
pub mod simulate;
pub mod stats;

pub use analysis::{AnalysisError, AnalysisInputs, Estimate, Report};
pub use api::{route, ApiEnvelope, ErrorCode};
pub use corpus::{Bin, Corpus, CorpusEntry, CorpusError, Post};
pub use game::{Choice, GameError, GameHost, Judgment, Phase, QuestionnaireResponse, Session};
pub use inference::{InferenceError, LogisticResult, OlsResult, TestResult};
pub use pairing::{Pair, PairPlan, PairType, PairingError, PlanConfig, PlanPair, TypeMix};
pub use simulate::{PlayerModel, SimulationError};
pub use stats::{PairStats, Predictor, StatsError};

use thiserror::Error;

/// Any failure from the library, for callers that only need to tell bad
/// input from a failed read or write.
#[derive(Error, Debug)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

impl Error {
    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        fn json_io(e: &serde_json::Error) -> bool {
            e.is_io()
        }
        match self {
            Error::Corpus(CorpusError::Io(_)) | Error::Pairing(PairingError::Io(_)) => true,
            Error::Corpus(CorpusError::Document(e)) | Error::Pairing(PairingError::Document(e)) => json_io(e),
            Error::Game(GameError::Persist(_)) | Error::Simulation(SimulationError::Game(GameError::Persist(_))) => true,
            Error::Game(GameError::Record(e)) => json_io(e),
            Error::Stats(StatsError::Table(e)) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            Error::Analysis(e) => e.is_io(),
            _ => false,
        }
    }
}
