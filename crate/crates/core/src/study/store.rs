//! Durable study state: an append-only event log plus periodic snapshots.
//!
//! Every state change is first appended to `events.jsonl` and only then
//! applied in memory, so replaying the log rebuilds exactly the state that
//! was acknowledged. `snapshot.json` records the state after its first
//! `events` log entries; recovery loads it and replays the remainder. A torn
//! final line, the signature of a crash mid-append, is cut off on open.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::config::{Clock, ServiceConfig};
use super::plan::{plan_sessions, session_id, SessionPlan, Slot};
use super::rater::{authorize_session_start, CompletedSession, CurrentSession, Decision, RaterState, Rules};
use super::StudyError;
use crate::dataset::StimulusSet;
use crate::subjective::{write_ratings_csv, DistortionVector, RatingRecord, DISTORTION_TYPES};

pub const EVENT_LOG: &str = "events.jsonl";
pub const SNAPSHOT: &str = "snapshot.json";
pub const PLAN: &str = "plan.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RaterRegistered {
        subject_id: String,
        at: DateTime<Utc>,
    },
    SessionStarted {
        subject_id: String,
        session_id: String,
        at: DateTime<Utc>,
    },
    RatingRecorded {
        record: RatingRecord,
        position: usize,
        superseded: bool,
    },
    SessionFinished {
        subject_id: String,
        session_id: String,
        at: DateTime<Utc>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreState {
    pub raters: BTreeMap<String, RaterState>,
    /// subject_id -> stimulus_id -> latest record.
    pub ratings: BTreeMap<String, BTreeMap<String, RatingRecord>>,
    /// Number of log events folded into this state.
    pub events: usize,
}

impl StoreState {
    fn apply(&mut self, event: &Event) {
        self.events += 1;
        match event {
            Event::RaterRegistered { subject_id, .. } => {
                self.raters
                    .entry(subject_id.clone())
                    .or_insert_with(|| RaterState::new(subject_id));
            }
            Event::SessionStarted {
                subject_id,
                session_id,
                at,
            } => {
                if let Some(r) = self.raters.get_mut(subject_id) {
                    r.current_session = Some(CurrentSession {
                        session_id: session_id.clone(),
                        position: 0,
                        started_at: *at,
                    });
                }
            }
            Event::RatingRecorded { record, position, .. } => {
                if let Some(cur) = self
                    .raters
                    .get_mut(&record.subject_id)
                    .and_then(|r| r.current_session.as_mut())
                {
                    if cur.position == *position {
                        cur.position += 1;
                    }
                }
                self.ratings
                    .entry(record.subject_id.clone())
                    .or_default()
                    .insert(record.stimulus_id.clone(), record.clone());
            }
            Event::SessionFinished {
                subject_id,
                session_id,
                at,
            } => {
                if let Some(r) = self.raters.get_mut(subject_id) {
                    r.current_session = None;
                    r.completed_sessions.push(CompletedSession {
                        session_id: session_id.clone(),
                        finished_at: *at,
                    });
                }
            }
        }
    }

    pub fn rating_count(&self) -> usize {
        self.ratings.values().map(BTreeMap::len).sum()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    state: StoreState,
}

struct EventLog {
    path: PathBuf,
    file: File,
    sync: bool,
}

impl EventLog {
    fn append(&mut self, event: &Event) -> Result<(), StudyError> {
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        let io = |e| StudyError::Io(self.path.display().to_string(), e);
        self.file.write_all(&line).map_err(io)?;
        if self.sync {
            self.file.sync_data().map_err(io)?;
        }
        Ok(())
    }
}

/// Read every complete event, truncating a torn last line.
fn read_log(path: &Path, repair: bool) -> Result<Vec<Event>, StudyError> {
    let io = |e| StudyError::Io(path.display().to_string(), e);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = BufReader::new(File::open(path).map_err(io)?);
    let mut events = Vec::new();
    let mut good_len = 0u64;
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(io)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if !buf.ends_with('\n') {
            tracing::warn!(path = %path.display(), line = line_no, "dropping torn final log line");
            if repair {
                let f = OpenOptions::new().write(true).open(path).map_err(io)?;
                f.set_len(good_len).map_err(io)?;
            }
            break;
        }
        let ev = serde_json::from_str::<Event>(buf.trim_end()).map_err(|e| StudyError::Log {
            line: line_no,
            message: e.to_string(),
        })?;
        events.push(ev);
        good_len += n as u64;
    }
    Ok(events)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StudyError> {
    let tmp = path.with_extension("tmp");
    let io = |e| StudyError::Io(path.display().to_string(), e);
    let mut f = File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSubmission {
    pub subject_id: String,
    pub stimulus_id: String,
    pub q: f64,
    pub d: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartOutcome {
    pub session_id: String,
    pub position: usize,
    pub total: usize,
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextItem {
    pub session_id: String,
    pub stimulus_id: String,
    pub video_url: String,
    pub audio_url: String,
    pub position: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingReceipt {
    pub stimulus_id: String,
    pub session_id: String,
    /// Next unrated position after this submission.
    pub position: usize,
    pub total: usize,
    pub superseded: bool,
    pub session_finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterStatus {
    pub subject_id: String,
    pub current_session: Option<CurrentSession>,
    pub completed_sessions: Vec<String>,
    pub daily_sessions_used: usize,
    pub daily_cap: usize,
    pub break_remaining_s: Option<i64>,
}

struct Media {
    video: String,
    audio: String,
}

pub struct StudyService {
    config: ServiceConfig,
    rules: Rules,
    plan: SessionPlan,
    slots: BTreeMap<String, Slot>,
    media: BTreeMap<String, Media>,
    state: StoreState,
    /// None for a read-only replay.
    log: Option<EventLog>,
    dir: PathBuf,
    clock: Arc<dyn Clock>,
}

impl StudyService {
    /// Open or create a study in `dir`. The session plan is created on first
    /// open and reused afterwards; it must still match `set`.
    pub fn open(
        dir: &Path,
        set: &StimulusSet,
        config: ServiceConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, StudyError> {
        Self::open_inner(dir, set, config, clock, true)
    }

    /// Rebuild the state of an existing study without writing anything.
    /// Mutating calls fail with [`StudyError::ReadOnly`].
    pub fn open_read_only(dir: &Path, set: &StimulusSet, config: ServiceConfig) -> Result<Self, StudyError> {
        if !dir.join(PLAN).exists() {
            return Err(StudyError::Plan(format!("no {PLAN} in {}", dir.display())));
        }
        Self::open_inner(dir, set, config, Arc::new(super::config::SystemClock), false)
    }

    fn open_inner(
        dir: &Path,
        set: &StimulusSet,
        config: ServiceConfig,
        clock: Arc<dyn Clock>,
        writable: bool,
    ) -> Result<Self, StudyError> {
        config.validate()?;
        if writable {
            fs::create_dir_all(dir).map_err(|e| StudyError::Io(dir.display().to_string(), e))?;
        }
        let plan_path = dir.join(PLAN);
        let plan = if plan_path.exists() {
            SessionPlan::load(&plan_path)?
        } else {
            let plan = plan_sessions(set, config.max_per_session, config.plan_seed)?;
            plan.write(&plan_path)?;
            plan
        };
        plan.check(set)?;

        let snap_path = dir.join(SNAPSHOT);
        let mut state = if snap_path.exists() {
            let text = fs::read_to_string(&snap_path).map_err(|e| StudyError::Io(snap_path.display().to_string(), e))?;
            serde_json::from_str::<Snapshot>(&text)
                .map_err(|e| StudyError::Log {
                    line: 0,
                    message: format!("snapshot: {e}"),
                })?
                .state
        } else {
            StoreState::default()
        };
        let log_path = dir.join(EVENT_LOG);
        let events = read_log(&log_path, writable)?;
        if events.len() < state.events {
            return Err(StudyError::Log {
                line: events.len(),
                message: format!("snapshot covers {} events but the log holds {}", state.events, events.len()),
            });
        }
        for ev in &events[state.events..] {
            state.apply(ev);
        }
        tracing::info!(events = events.len(), raters = state.raters.len(), ratings = state.rating_count(), "study state recovered");

        let log = if writable {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&log_path)
                .map_err(|e| StudyError::Io(log_path.display().to_string(), e))?;
            Some(EventLog {
                path: log_path,
                file,
                sync: config.sync_writes,
            })
        } else {
            None
        };
        let base = config.media_base_url.trim_end_matches('/').to_string();
        let media = set
            .stimuli
            .iter()
            .map(|s| {
                (
                    s.stimulus_id.clone(),
                    Media {
                        video: format!("{base}/{}", s.video_uri),
                        audio: format!("{base}/{}", s.audio_uri),
                    },
                )
            })
            .collect();
        Ok(Self {
            rules: Rules {
                break_duration: config.break_duration(),
                daily_cap: config.daily_cap,
                timezone: config.timezone(),
            },
            slots: plan.slots(),
            plan,
            media,
            state,
            log,
            dir: dir.to_path_buf(),
            config,
            clock,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn plan(&self) -> &SessionPlan {
        &self.plan
    }

    pub fn state(&self) -> &StoreState {
        &self.state
    }

    pub fn rater(&self, subject_id: &str) -> Option<&RaterState> {
        self.state.raters.get(subject_id)
    }

    fn commit(&mut self, event: Event) -> Result<(), StudyError> {
        self.log.as_mut().ok_or(StudyError::ReadOnly)?.append(&event)?;
        self.state.apply(&event);
        if self.config.snapshot_every > 0 && self.state.events % self.config.snapshot_every == 0 {
            self.snapshot()?;
        }
        Ok(())
    }

    pub fn snapshot(&mut self) -> Result<(), StudyError> {
        if self.log.is_none() {
            return Err(StudyError::ReadOnly);
        }
        let json = serde_json::to_vec(&Snapshot {
            state: self.state.clone(),
        })
        .expect("snapshot serializes");
        write_atomic(&self.dir.join(SNAPSHOT), &json)
    }

    /// Returns false when the rater already existed.
    pub fn register(&mut self, subject_id: &str) -> Result<bool, StudyError> {
        if subject_id.trim().is_empty() {
            return Err(StudyError::Malformed("empty subject_id".into()));
        }
        if self.state.raters.contains_key(subject_id) {
            return Ok(false);
        }
        self.commit(Event::RaterRegistered {
            subject_id: subject_id.into(),
            at: self.clock.now(),
        })?;
        Ok(true)
    }

    fn session_index(&self, session: &str) -> Result<usize, StudyError> {
        self.plan
            .index_of(session)
            .ok_or_else(|| StudyError::UnknownSession(session.into()))
    }

    fn known_rater(&self, subject_id: &str) -> Result<&RaterState, StudyError> {
        self.state
            .raters
            .get(subject_id)
            .ok_or_else(|| StudyError::UnknownRater(subject_id.into()))
    }

    /// Apply the start rules and, if allowed, mark the session started.
    pub fn start_session(&mut self, subject_id: &str, session: &str) -> Result<Result<StartOutcome, super::Denial>, StudyError> {
        let index = self.session_index(session)?;
        let now = self.clock.now();
        let rater = self.known_rater(subject_id)?;
        let total = self.plan.sessions[index].len();
        match authorize_session_start(rater, session, now, &self.rules)? {
            Decision::Deny(d) => {
                tracing::info!(subject_id, session, reason = d.reason.as_str(), "session start denied");
                Ok(Err(d))
            }
            Decision::Allow { resumed: true } => {
                let position = rater.current_session.as_ref().map_or(0, |c| c.position);
                Ok(Ok(StartOutcome {
                    session_id: session.into(),
                    position,
                    total,
                    resumed: true,
                }))
            }
            Decision::Allow { resumed: false } => {
                self.commit(Event::SessionStarted {
                    subject_id: subject_id.into(),
                    session_id: session.into(),
                    at: now,
                })?;
                Ok(Ok(StartOutcome {
                    session_id: session.into(),
                    position: 0,
                    total,
                    resumed: false,
                }))
            }
        }
    }

    fn active_session(&self, subject_id: &str, session: &str) -> Result<(usize, &CurrentSession), StudyError> {
        let index = self.session_index(session)?;
        let rater = self.known_rater(subject_id)?;
        match &rater.current_session {
            Some(cur) if cur.session_id == session => Ok((index, cur)),
            _ if rater.has_completed(session) => Err(StudyError::SessionCompleted {
                subject_id: subject_id.into(),
                session_id: session.into(),
            }),
            _ => Err(StudyError::NotActive {
                subject_id: subject_id.into(),
                session_id: session.into(),
            }),
        }
    }

    /// The next unrated stimulus of the rater's active session.
    pub fn next(&self, subject_id: &str, session: &str) -> Result<NextItem, StudyError> {
        let (index, cur) = self.active_session(subject_id, session)?;
        let ids = &self.plan.sessions[index];
        let stimulus_id = ids[cur.position.min(ids.len() - 1)].clone();
        let media = &self.media[&stimulus_id];
        Ok(NextItem {
            session_id: session.into(),
            video_url: media.video.clone(),
            audio_url: media.audio.clone(),
            stimulus_id,
            position: cur.position,
            total: ids.len(),
        })
    }

    /// Store one rating. The stimulus must be the next one in the rater's
    /// active session or one already rated in it (a revisit, latest wins).
    /// Rating the last stimulus finishes the session.
    pub fn record_rating(&mut self, sub: &RatingSubmission) -> Result<RatingReceipt, StudyError> {
        if sub.d.len() != DISTORTION_TYPES {
            return Err(StudyError::Malformed(format!(
                "d must hold {DISTORTION_TYPES} entries, got {}",
                sub.d.len()
            )));
        }
        let scale = self.config.scale;
        if !scale.contains(sub.q) {
            return Err(StudyError::ScoreOutOfRange {
                q: sub.q,
                lo: scale.lo,
                hi: scale.hi,
            });
        }
        let rater = self.known_rater(&sub.subject_id)?;
        let cur = rater
            .current_session
            .clone()
            .ok_or_else(|| StudyError::NoActiveSession(sub.subject_id.clone()))?;
        let slot = *self
            .slots
            .get(&sub.stimulus_id)
            .ok_or_else(|| StudyError::UnknownStimulus(sub.stimulus_id.clone()))?;
        if session_id(slot.session) != cur.session_id {
            return Err(StudyError::OutOfSession {
                stimulus_id: sub.stimulus_id.clone(),
                session_id: cur.session_id,
            });
        }
        if slot.position > cur.position {
            return Err(StudyError::OutOfOrder {
                stimulus_id: sub.stimulus_id.clone(),
                expected: cur.position,
            });
        }
        let superseded = self
            .state
            .ratings
            .get(&sub.subject_id)
            .is_some_and(|m| m.contains_key(&sub.stimulus_id));
        if superseded {
            tracing::info!(subject_id = %sub.subject_id, stimulus_id = %sub.stimulus_id, "rating superseded by a newer submission");
        }
        let mut d = DistortionVector::default();
        d.0.copy_from_slice(&sub.d);
        let now = self.clock.now();
        self.commit(Event::RatingRecorded {
            record: RatingRecord {
                subject_id: sub.subject_id.clone(),
                stimulus_id: sub.stimulus_id.clone(),
                q: sub.q,
                d,
                timestamp: now,
                session_id: cur.session_id.clone(),
            },
            position: slot.position,
            superseded,
        })?;
        let total = self.plan.sessions[slot.session].len();
        let position = if slot.position == cur.position { cur.position + 1 } else { cur.position };
        let finished = position == total;
        if finished {
            self.commit(Event::SessionFinished {
                subject_id: sub.subject_id.clone(),
                session_id: cur.session_id.clone(),
                at: now,
            })?;
        }
        Ok(RatingReceipt {
            stimulus_id: sub.stimulus_id.clone(),
            session_id: cur.session_id,
            position,
            total,
            superseded,
            session_finished: finished,
        })
    }

    pub fn status(&self, subject_id: &str) -> Result<RaterStatus, StudyError> {
        let r = self.known_rater(subject_id)?;
        let now = self.clock.now();
        Ok(RaterStatus {
            subject_id: subject_id.into(),
            current_session: r.current_session.clone(),
            completed_sessions: r.completed_sessions.iter().map(|c| c.session_id.clone()).collect(),
            daily_sessions_used: r.sessions_on_day(now, &self.rules),
            daily_cap: self.rules.daily_cap,
            break_remaining_s: r
                .break_remaining(now, &self.rules)
                .map(|d| (d.num_milliseconds() + 999) / 1000),
        })
    }

    /// All stored ratings ordered by subject, then planned session and position.
    pub fn records(&self) -> Vec<&RatingRecord> {
        let mut out: Vec<(&str, Slot, &RatingRecord)> = self
            .state
            .ratings
            .iter()
            .flat_map(|(subject, m)| m.values().map(move |r| (subject.as_str(), r)))
            .map(|(s, r)| (s, self.slots[&r.stimulus_id], r))
            .collect();
        out.sort_by(|a, b| (a.0, a.1.session, a.1.position).cmp(&(b.0, b.1.session, b.1.position)));
        out.into_iter().map(|(_, _, r)| r).collect()
    }

    pub fn export_ratings(&self, writer: impl Write) -> Result<(), StudyError> {
        write_ratings_csv(writer, self.records())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::config::ManualClock;
    use crate::study::rater::DenyReason;
    use crate::synthetic::synthetic_manifest;
    use chrono::{Duration, TimeZone};

    fn setup(dir: &Path) -> (StudyService, Arc<ManualClock>, StimulusSet) {
        let set = synthetic_manifest(6, &["AA"], 0);
        let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2025, 3, 3, 9, 0, 0).unwrap()));
        let cfg = ServiceConfig {
            max_per_session: 3,
            utc_offset_minutes: Some(0),
            sync_writes: false,
            snapshot_every: 4,
            ..Default::default()
        };
        let svc = StudyService::open(dir, &set, cfg, clock.clone()).unwrap();
        (svc, clock, set)
    }

    fn rate(svc: &mut StudyService, who: &str, id: &str, q: f64) -> Result<RatingReceipt, StudyError> {
        svc.record_rating(&RatingSubmission {
            subject_id: who.into(),
            stimulus_id: id.into(),
            q,
            d: vec![false; 12],
        })
    }

    #[test]
    fn full_session_flow() {
        let dir = tempfile::tempdir().unwrap();
        let (mut svc, clock, _) = setup(dir.path());
        assert!(svc.register("a").unwrap());
        assert!(!svc.register("a").unwrap());
        assert!(matches!(rate(&mut svc, "a", "AA_src0000", 3.0), Err(StudyError::NoActiveSession(_))));

        let start = svc.start_session("a", "s01").unwrap().unwrap();
        assert_eq!((start.position, start.total, start.resumed), (0, 3, false));
        let ids = svc.plan().sessions[0].clone();
        let other = svc.plan().sessions[1][0].clone();
        assert!(matches!(rate(&mut svc, "a", &other, 3.0), Err(StudyError::OutOfSession { .. })));
        assert!(matches!(rate(&mut svc, "a", &ids[1], 3.0), Err(StudyError::OutOfOrder { expected: 0, .. })));
        assert!(matches!(
            svc.record_rating(&RatingSubmission {
                subject_id: "a".into(),
                stimulus_id: ids[0].clone(),
                q: 3.0,
                d: vec![false; 11]
            }),
            Err(StudyError::Malformed(_))
        ));
        assert!(matches!(rate(&mut svc, "a", &ids[0], 5.5), Err(StudyError::ScoreOutOfRange { .. })));

        assert_eq!(svc.next("a", "s01").unwrap().stimulus_id, ids[0]);
        let r = rate(&mut svc, "a", &ids[0], 3.0).unwrap();
        assert_eq!((r.position, r.superseded), (1, false));
        // revisit keeps the position and replaces the record
        let r = rate(&mut svc, "a", &ids[0], 4.0).unwrap();
        assert_eq!((r.position, r.superseded), (1, true));
        rate(&mut svc, "a", &ids[1], 2.0).unwrap();
        clock.advance(Duration::minutes(5));
        let r = rate(&mut svc, "a", &ids[2], 1.0).unwrap();
        assert!(r.session_finished);
        let state = svc.rater("a").unwrap();
        assert!(state.current_session.is_none());
        assert_eq!(state.completed_sessions[0].finished_at, clock.now());

        let denied = svc.start_session("a", "s02").unwrap().unwrap_err();
        assert_eq!(denied.reason, DenyReason::Break);
        assert_eq!(denied.retry_after_s, Some(1800));
        assert!(matches!(svc.start_session("a", "s01"), Err(StudyError::SessionCompleted { .. })));

        let mut csv = Vec::new();
        svc.export_ratings(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains(&format!("a,{},4,", ids[0])));
    }

    #[test]
    fn replay_matches_live_state() {
        let dir = tempfile::tempdir().unwrap();
        let (mut svc, _clock, set) = setup(dir.path());
        svc.register("a").unwrap();
        svc.register("b").unwrap();
        svc.start_session("a", "s01").unwrap().unwrap();
        svc.start_session("b", "s02").unwrap().unwrap();
        let a_ids = svc.plan().sessions[0].clone();
        for id in &a_ids[..2] {
            rate(&mut svc, "a", id, 2.5).unwrap();
        }
        let b_first = svc.plan().sessions[1][0].clone();
        rate(&mut svc, "b", &b_first, 1.5).unwrap();
        let mut before = Vec::new();
        svc.export_ratings(&mut before).unwrap();
        let state = svc.state().clone();
        drop(svc);

        // torn write at the end of the log
        let log = dir.path().join(EVENT_LOG);
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(br#"{"event":"rater_regis"#).unwrap();
        drop(f);

        let clock = Arc::new(ManualClock::new(Utc::now()));
        let cfg = ServiceConfig {
            max_per_session: 3,
            utc_offset_minutes: Some(0),
            sync_writes: false,
            ..Default::default()
        };
        let svc = StudyService::open(dir.path(), &set, cfg, clock).unwrap();
        assert!(dir.path().join(SNAPSHOT).exists());
        assert_eq!(svc.state(), &state);
        let mut after = Vec::new();
        svc.export_ratings(&mut after).unwrap();
        assert_eq!(before, after);
    }
}
