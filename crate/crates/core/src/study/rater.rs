//! Per-rater session bookkeeping and the start rules.

use chrono::{DateTime, Duration, FixedOffset, NaiveTime, Utc};
use serde::{Deserialize, Serialize};

use super::StudyError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletedSession {
    pub session_id: String,
    pub finished_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurrentSession {
    pub session_id: String,
    /// Index of the next unrated stimulus.
    pub position: usize,
    pub started_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterState {
    pub subject_id: String,
    pub completed_sessions: Vec<CompletedSession>,
    pub current_session: Option<CurrentSession>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenyReason {
    InProgress,
    DailyCap,
    Break,
}

impl DenyReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DenyReason::InProgress => "in-progress",
            DenyReason::DailyCap => "daily-cap",
            DenyReason::Break => "break",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Denial {
    pub reason: DenyReason,
    /// Seconds until a start could succeed; absent for `in-progress`.
    pub retry_after_s: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    /// `resumed` is set when the requested session is already in progress.
    Allow { resumed: bool },
    Deny(Denial),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rules {
    pub break_duration: Duration,
    pub daily_cap: usize,
    pub timezone: FixedOffset,
}

impl Default for Rules {
    fn default() -> Self {
        Self {
            break_duration: Duration::minutes(30),
            daily_cap: 3,
            timezone: FixedOffset::east_opt(0).expect("UTC"),
        }
    }
}

fn ceil_seconds(d: Duration) -> i64 {
    let ms = d.num_milliseconds().max(0);
    (ms + 999) / 1000
}

impl Rules {
    fn local_day(&self, t: DateTime<Utc>) -> chrono::NaiveDate {
        t.with_timezone(&self.timezone).date_naive()
    }

    /// Start of the next calendar day in the study timezone.
    pub fn next_midnight(&self, now: DateTime<Utc>) -> DateTime<Utc> {
        let tomorrow = self.local_day(now).succ_opt().expect("date in range");
        tomorrow
            .and_time(NaiveTime::MIN)
            .and_local_timezone(self.timezone)
            .single()
            .expect("fixed offsets are unambiguous")
            .with_timezone(&Utc)
    }
}

impl RaterState {
    pub fn new(subject_id: &str) -> Self {
        Self {
            subject_id: subject_id.into(),
            completed_sessions: Vec::new(),
            current_session: None,
        }
    }

    pub fn has_completed(&self, session_id: &str) -> bool {
        self.completed_sessions.iter().any(|c| c.session_id == session_id)
    }

    pub fn last_finished(&self) -> Option<DateTime<Utc>> {
        self.completed_sessions.iter().map(|c| c.finished_at).max()
    }

    /// Sessions finished on the calendar day containing `now`.
    pub fn sessions_on_day(&self, now: DateTime<Utc>, rules: &Rules) -> usize {
        let day = rules.local_day(now);
        self.completed_sessions
            .iter()
            .filter(|c| rules.local_day(c.finished_at) == day)
            .count()
    }

    /// Remaining break, if any.
    pub fn break_remaining(&self, now: DateTime<Utc>, rules: &Rules) -> Option<Duration> {
        let left = self.last_finished()? + rules.break_duration - now;
        (left > Duration::zero()).then_some(left)
    }
}

/// Decide whether `rater` may start `session_id` at `now`.
///
/// Checks run in order: another session in progress, the daily cap, then
/// the break. A request for the session already in progress is allowed as a
/// resume. Restarting a finished session is an error.
pub fn authorize_session_start(
    rater: &RaterState,
    session_id: &str,
    now: DateTime<Utc>,
    rules: &Rules,
) -> Result<Decision, StudyError> {
    if let Some(cur) = &rater.current_session {
        if cur.session_id == session_id {
            return Ok(Decision::Allow { resumed: true });
        }
        return Ok(Decision::Deny(Denial {
            reason: DenyReason::InProgress,
            retry_after_s: None,
        }));
    }
    if rater.has_completed(session_id) {
        return Err(StudyError::SessionCompleted {
            subject_id: rater.subject_id.clone(),
            session_id: session_id.into(),
        });
    }
    let brk = rater.break_remaining(now, rules);
    if rater.sessions_on_day(now, rules) >= rules.daily_cap {
        let wait = (rules.next_midnight(now) - now).max(brk.unwrap_or_else(Duration::zero));
        return Ok(Decision::Deny(Denial {
            reason: DenyReason::DailyCap,
            retry_after_s: Some(ceil_seconds(wait)),
        }));
    }
    if let Some(left) = brk {
        return Ok(Decision::Deny(Denial {
            reason: DenyReason::Break,
            retry_after_s: Some(ceil_seconds(left)),
        }));
    }
    Ok(Decision::Allow { resumed: false })
}
