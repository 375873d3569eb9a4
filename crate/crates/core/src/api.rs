//! JSON request/response protocol over a [`GameHost`].
//!
//! [`route`] is transport-agnostic: the HTTP service hands it the method,
//! path and raw body and writes back the status and envelope it returns.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::game::{Answers, Choice, Clock, GameError, GameHost, LogSink, NextStep, SessionStart};
use crate::pairing::PairingError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    BadPhase,
    UnknownSession,
    UnknownSubreddit,
    StalePair,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

/// Exactly one of `data` and `error` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEnvelope {
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

impl ApiEnvelope {
    pub fn data(data: Value) -> Self {
        ApiEnvelope {
            ok: true,
            data: Some(data),
            error: None,
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiEnvelope {
            ok: false,
            data: None,
            error: Some(ApiError {
                code,
                message: message.into(),
            }),
        }
    }

    pub fn code(&self) -> Option<ErrorCode> {
        self.error.as_ref().map(|e| e.code)
    }
}

/// Envelope code and HTTP status for a game error.
pub fn classify(err: &GameError) -> (u16, ErrorCode) {
    match err {
        GameError::BadPhase { .. } => (409, ErrorCode::BadPhase),
        GameError::StalePair { .. } => (409, ErrorCode::StalePair),
        GameError::UnknownSession(_) => (404, ErrorCode::UnknownSession),
        GameError::UnknownSubreddit { .. } | GameError::Pairing(PairingError::UnknownSubreddit { .. }) => {
            (400, ErrorCode::UnknownSubreddit)
        }
        GameError::Validation(_) => (400, ErrorCode::Validation),
        // Server-side faults; the code set is closed, so they travel as
        // VALIDATION with a 5xx status.
        GameError::Pairing(_) | GameError::Persist(_) | GameError::Record(_) => (500, ErrorCode::Validation),
    }
}

fn game_error(err: GameError) -> (u16, ApiEnvelope) {
    let (status, code) = classify(&err);
    (status, ApiEnvelope::error(code, err.to_string()))
}

fn validation(status: u16, message: impl Into<String>) -> (u16, ApiEnvelope) {
    (status, ApiEnvelope::error(ErrorCode::Validation, message))
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct StartBody {
    subreddit: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceBody {
    pair_id: String,
    choice: Choice,
    response_ms: u64,
}

#[derive(Deserialize)]
struct SwitchBody {
    subreddit: String,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct QuestionnaireBody {
    answers: Option<Answers>,
}

fn parse<T: for<'de> Deserialize<'de>>(body: &[u8], empty_ok: Option<T>) -> Result<T, (u16, ApiEnvelope)> {
    if body.iter().all(u8::is_ascii_whitespace) {
        if let Some(v) = empty_ok {
            return Ok(v);
        }
    }
    serde_json::from_slice(body).map_err(|e| validation(400, format!("bad request body: {e}")))
}

fn session_payload(s: SessionStart) -> Value {
    json!({
        "session_id": s.session_id,
        "subreddit": s.subreddit,
        "round": s.round,
        "question": "preference",
    })
}

fn display_name(subreddit: &str) -> String {
    format!("/r/{subreddit}")
}

/// Handles one request.
pub fn route<S: LogSink, C: Clock>(
    host: &mut GameHost<S, C>,
    method: &str,
    path: &str,
    body: &[u8],
) -> (u16, ApiEnvelope) {
    let path = path.split('?').next().unwrap_or("");
    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    match (method, segments.as_slice()) {
        ("GET", ["api", "subreddits"]) => {
            let list: Vec<Value> = host
                .subreddits()
                .into_iter()
                .map(|s| json!({ "display_name": display_name(&s), "name": s }))
                .collect();
            (200, ApiEnvelope::data(Value::Array(list)))
        }
        ("POST", ["api", "session"]) => {
            let body: StartBody = match parse(body, Some(StartBody::default())) {
                Ok(b) => b,
                Err(e) => return e,
            };
            match host.start_session(body.subreddit.as_deref()) {
                Ok(s) => (200, ApiEnvelope::data(session_payload(s))),
                Err(e) => game_error(e),
            }
        }
        ("POST", ["api", "session", id, action]) => session_action(host, id, action, body),
        (_, ["api", ..]) => validation(404, format!("no endpoint {method} {path}")),
        _ => validation(404, format!("not found: {path}")),
    }
}

fn session_action<S: LogSink, C: Clock>(
    host: &mut GameHost<S, C>,
    id: &str,
    action: &str,
    body: &[u8],
) -> (u16, ApiEnvelope) {
    let result = match action {
        "preference" => {
            let b: ChoiceBody = match parse(body, None) {
                Ok(b) => b,
                Err(e) => return e,
            };
            host.submit_preference(id, &b.pair_id, b.choice, b.response_ms)
                .map(|()| json!({ "question": "prediction" }))
        }
        "prediction" => {
            let b: ChoiceBody = match parse(body, None) {
                Ok(b) => b,
                Err(e) => return e,
            };
            host.submit_prediction(id, &b.pair_id, b.choice, b.response_ms).map(|o| {
                let next = match o.next {
                    NextStep::Round(r) => json!(r),
                    NextStep::Questionnaire => json!("questionnaire"),
                };
                json!({
                    "reveal": o.reveal,
                    "advance_after_ms": o.advance_after_ms,
                    "next": next,
                })
            })
        }
        "subreddit" => {
            let b: SwitchBody = match parse(body, None) {
                Ok(b) => b,
                Err(e) => return e,
            };
            host.switch_subreddit(id, &b.subreddit).map(session_payload)
        }
        "questionnaire" => {
            let b: QuestionnaireBody = match parse(body, Some(QuestionnaireBody::default())) {
                Ok(b) => b,
                Err(e) => return e,
            };
            host.submit_questionnaire(id, b.answers).map(|s| json!({ "summary": s }))
        }
        other => return validation(404, format!("unknown session action {other:?}")),
    };
    match result {
        Ok(data) => (200, ApiEnvelope::data(data)),
        Err(e) => game_error(e),
    }
}

/// Keys that must never appear in a payload sent before the reveal.
pub const FORBIDDEN_PRE_REVEAL_KEYS: [&str; 6] = ["score", "percentile", "bin", "views", "left_score", "right_score"];

/// Every object key in `v`, recursively.
pub fn object_keys(v: &Value) -> Vec<String> {
    let mut out = Vec::new();
    fn walk(v: &Value, out: &mut Vec<String>) {
        match v {
            Value::Object(m) => {
                for (k, v) in m {
                    out.push(k.clone());
                    walk(v, out);
                }
            }
            Value::Array(a) => a.iter().for_each(|v| walk(v, out)),
            _ => {}
        }
    }
    walk(v, &mut out);
    out
}

/// True when `v` carries any popularity field.
pub fn leaks_popularity(v: &Value) -> bool {
    object_keys(v).iter().any(|k| FORBIDDEN_PRE_REVEAL_KEYS.contains(&k.as_str()))
}
