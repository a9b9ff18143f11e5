//! Session planning and the rating-study service.
//!
//! [`StudyService`] holds all protocol state and is usable without a
//! network; [`http`] exposes it as a JSON API.

pub mod config;
pub mod http;
pub mod plan;
pub mod rater;
pub mod store;

use thiserror::Error;

pub use config::{Clock, ManualClock, ServiceConfig, SystemClock};
pub use plan::{plan_sessions, session_id, SessionPlan};
pub use rater::{authorize_session_start, Decision, DenyReason, Denial, RaterState, Rules};
pub use store::{Event, NextItem, RatingReceipt, RatingSubmission, StartOutcome, StudyService};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("io error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("session plan: {0}")]
    Plan(String),
    #[error("event log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("unknown rater `{0}`")]
    UnknownRater(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown stimulus `{0}`")]
    UnknownStimulus(String),
    #[error("rater `{subject_id}` already finished session `{session_id}`")]
    SessionCompleted { subject_id: String, session_id: String },
    #[error("rater `{0}` has no session in progress")]
    NoActiveSession(String),
    #[error("session `{session_id}` is not in progress for rater `{subject_id}`")]
    NotActive { subject_id: String, session_id: String },
    #[error("stimulus `{stimulus_id}` is not part of session `{session_id}`")]
    OutOfSession { stimulus_id: String, session_id: String },
    #[error("stimulus `{stimulus_id}` is ahead of the session; next is position {expected}")]
    OutOfOrder { stimulus_id: String, expected: usize },
    #[error("malformed rating: {0}")]
    Malformed(String),
    #[error("score {q} outside [{lo}, {hi}]")]
    ScoreOutOfRange { q: f64, lo: f64, hi: f64 },
    #[error("study opened read-only")]
    ReadOnly,
    #[error(transparent)]
    Export(#[from] crate::subjective::SubjectiveError),
}

impl StudyError {
    /// Stable machine-readable code for API responses.
    pub fn code(&self) -> &'static str {
        match self {
            StudyError::Io(..) | StudyError::Log { .. } | StudyError::Export(_) | StudyError::ReadOnly => "internal",
            StudyError::Config(_) => "config",
            StudyError::Plan(_) => "plan",
            StudyError::UnknownRater(_) => "unknown-rater",
            StudyError::UnknownSession(_) => "unknown-session",
            StudyError::UnknownStimulus(_) => "unknown-stimulus",
            StudyError::SessionCompleted { .. } => "completed",
            StudyError::NoActiveSession(_) => "no-active-session",
            StudyError::NotActive { .. } => "not-active",
            StudyError::OutOfSession { .. } => "out-of-session",
            StudyError::OutOfOrder { .. } => "out-of-order",
            StudyError::Malformed(_) => "malformed",
            StudyError::ScoreOutOfRange { .. } => "score-out-of-range",
        }
    }
}
