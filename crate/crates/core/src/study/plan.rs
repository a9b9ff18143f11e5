//! Splitting a stimulus set into rating sessions.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StudyError;
use crate::dataset::StimulusSet;

pub const DEFAULT_MAX_PER_SESSION: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    /// Stimulus ids per session, in presentation order.
    pub sessions: Vec<Vec<String>>,
    pub max_per_session: usize,
    pub shuffle_seed: u64,
}

/// Where a stimulus sits in a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub session: usize,
    pub position: usize,
}

pub fn session_id(index: usize) -> String {
    format!("s{:02}", index + 1)
}

impl SessionPlan {
    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn session_ids(&self) -> Vec<String> {
        (0..self.sessions.len()).map(session_id).collect()
    }

    pub fn index_of(&self, session: &str) -> Option<usize> {
        let n: usize = session.strip_prefix('s')?.parse().ok()?;
        (n >= 1 && n <= self.sessions.len() && session_id(n - 1) == session).then(|| n - 1)
    }

    pub fn slots(&self) -> BTreeMap<String, Slot> {
        let mut out = BTreeMap::new();
        for (session, ids) in self.sessions.iter().enumerate() {
            for (position, id) in ids.iter().enumerate() {
                out.insert(id.clone(), Slot { session, position });
            }
        }
        out
    }

    /// The plan is a disjoint cover of `set` and respects its cap.
    pub fn check(&self, set: &StimulusSet) -> Result<(), StudyError> {
        if let Some(i) = self.sessions.iter().position(|s| s.len() > self.max_per_session) {
            return Err(StudyError::Plan(format!(
                "session {} holds {} stimuli, cap is {}",
                session_id(i),
                self.sessions[i].len(),
                self.max_per_session
            )));
        }
        let mut seen = BTreeSet::new();
        for id in self.sessions.iter().flatten() {
            if !seen.insert(id.as_str()) {
                return Err(StudyError::Plan(format!("stimulus `{id}` planned twice")));
            }
        }
        let wanted: BTreeSet<&str> = set.stimuli.iter().map(|s| s.stimulus_id.as_str()).collect();
        if seen != wanted {
            let missing = wanted.difference(&seen).count();
            let extra = seen.difference(&wanted).count();
            return Err(StudyError::Plan(format!(
                "plan does not match the manifest ({missing} missing, {extra} unknown)"
            )));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), StudyError> {
        let json = serde_json::to_string_pretty(self).expect("plan serializes");
        fs::write(path, json + "\n").map_err(|e| StudyError::Io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self, StudyError> {
        let text = fs::read_to_string(path).map_err(|e| StudyError::Io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| StudyError::Plan(format!("{}: {e}", path.display())))
    }
}

/// Shuffle the set with `seed` and cut it into `ceil(n / max_per_session)`
/// sessions whose sizes differ by at most one.
pub fn plan_sessions(set: &StimulusSet, max_per_session: usize, seed: u64) -> Result<SessionPlan, StudyError> {
    if max_per_session < 1 {
        return Err(StudyError::Plan("max_per_session must be at least 1".into()));
    }
    if set.is_empty() {
        return Err(StudyError::Plan("cannot plan sessions for an empty set".into()));
    }
    let mut ids: Vec<String> = set.stimuli.iter().map(|s| s.stimulus_id.clone()).collect();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = ids.len();
    let count = n.div_ceil(max_per_session);
    let (base, extra) = (n / count, n % count);
    let mut sessions = Vec::with_capacity(count);
    let mut rest = ids.as_slice();
    for i in 0..count {
        let size = base + usize::from(i < extra);
        let (head, tail) = rest.split_at(size);
        sessions.push(head.to_vec());
        rest = tail;
    }
    Ok(SessionPlan {
        sessions,
        max_per_session,
        shuffle_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::synthetic_manifest;

    #[test]
    fn balanced_split() {
        let set = synthetic_manifest(201, &["AA"], 0);
        let plan = plan_sessions(&set, 200, 1).unwrap();
        let sizes: Vec<usize> = plan.sessions.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![101, 100]);
        plan.check(&set).unwrap();

        let set = synthetic_manifest(200, &["AA"], 0);
        assert_eq!(plan_sessions(&set, 200, 1).unwrap().sessions.len(), 1);
        assert!(plan_sessions(&set, 0, 1).is_err());
    }

    #[test]
    fn session_ids_round_trip() {
        let set = synthetic_manifest(30, &["AA"], 0);
        let plan = plan_sessions(&set, 7, 0).unwrap();
        assert_eq!(plan.len(), 5);
        for (i, id) in plan.session_ids().iter().enumerate() {
            assert_eq!(plan.index_of(id), Some(i));
        }
        assert_eq!(plan.index_of("s06"), None);
        assert_eq!(plan.index_of("s1"), None);
        assert_eq!(plan.index_of("x01"), None);
    }
}
