//! Service configuration, read from TOML or JSON.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Duration, FixedOffset, Local, Offset, Utc};
use serde::{Deserialize, Serialize};

use super::plan::DEFAULT_MAX_PER_SESSION;
use super::StudyError;
use crate::subjective::{DistortionLabels, RawScale, DISTORTION_TYPES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub scale: RawScale,
    pub break_minutes: i64,
    pub daily_cap: usize,
    /// Offset of the study timezone from UTC. Unset means the server's
    /// local offset at startup.
    pub utc_offset_minutes: Option<i32>,
    pub distortion_labels: Vec<String>,
    pub max_per_session: usize,
    pub plan_seed: u64,
    /// Directory served under `/media`.
    pub media_root: Option<PathBuf>,
    pub media_base_url: String,
    /// Write a snapshot after this many logged events.
    pub snapshot_every: usize,
    /// fsync every appended event.
    pub sync_writes: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            scale: RawScale::default(),
            break_minutes: 30,
            daily_cap: 3,
            utc_offset_minutes: None,
            distortion_labels: DistortionLabels::default().0,
            max_per_session: DEFAULT_MAX_PER_SESSION,
            plan_seed: 0,
            media_root: None,
            media_base_url: "/media".into(),
            snapshot_every: 1000,
            sync_writes: true,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, StudyError> {
        let text = fs::read_to_string(path).map_err(|e| StudyError::Io(path.display().to_string(), e))?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| StudyError::Config(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| StudyError::Config(e.to_string()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        RawScale::new(self.scale.lo, self.scale.hi).map_err(|e| StudyError::Config(e.to_string()))?;
        if self.break_minutes < 0 {
            return Err(StudyError::Config("break_minutes must not be negative".into()));
        }
        if self.daily_cap < 1 {
            return Err(StudyError::Config("daily_cap must be at least 1".into()));
        }
        if self.max_per_session < 1 {
            return Err(StudyError::Config("max_per_session must be at least 1".into()));
        }
        if self.distortion_labels.len() != DISTORTION_TYPES {
            return Err(StudyError::Config(format!(
                "expected {DISTORTION_TYPES} distortion labels, got {}",
                self.distortion_labels.len()
            )));
        }
        if let Some(m) = self.utc_offset_minutes {
            if FixedOffset::east_opt(m * 60).is_none() {
                return Err(StudyError::Config(format!("utc_offset_minutes {m} is out of range")));
            }
        }
        Ok(())
    }

    pub fn timezone(&self) -> FixedOffset {
        match self.utc_offset_minutes.and_then(|m| FixedOffset::east_opt(m * 60)) {
            Some(tz) => tz,
            None => Local::now().offset().fix(),
        }
    }

    pub fn break_duration(&self) -> Duration {
        Duration::minutes(self.break_minutes)
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn set(&self, t: DateTime<Utc>) {
        *self.0.lock().expect("clock lock") = t;
    }

    pub fn advance(&self, d: Duration) {
        *self.0.lock().expect("clock lock") += d;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().expect("clock lock")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        fs::write(&t, "break_minutes = 10\nutc_offset_minutes = 120\n[scale]\nlo = 1.0\nhi = 9.0\n").unwrap();
        let j = dir.path().join("c.json");
        fs::write(&j, r#"{"break_minutes": 10, "utc_offset_minutes": 120, "scale": {"lo": 1.0, "hi": 9.0}}"#).unwrap();
        let a = ServiceConfig::load(&t).unwrap();
        assert_eq!(a, ServiceConfig::load(&j).unwrap());
        assert_eq!(a.daily_cap, 3);
        assert_eq!(a.timezone().local_minus_utc(), 7200);
    }

    #[test]
    fn rejects_bad_labels() {
        let cfg = ServiceConfig {
            distortion_labels: vec!["x".into(); 11],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(StudyError::Config(_))));
    }
}
