//! Stimulus manifests and content-disjoint cross-validation folds.
//!
//! A manifest is JSONL: an optional first-line header object
//! `{"_header": {"declared_counts": {...}}}` followed by one [`Stimulus`]
//! per line.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate stimulus_id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown difficulty `{value}` (expected Easy, Medium or Hard)")]
    UnknownDifficulty { line: usize, value: String },
    #[error("line {line}: {message}")]
    Invariant { line: usize, message: String },
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("{sources} distinct sources cannot fill {k} folds")]
    TooFewSources { sources: usize, k: usize },
    #[error("fold plan: {0}")]
    FoldPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Easy" => Ok(Difficulty::Easy),
            "Medium" => Ok(Difficulty::Medium),
            "Hard" => Ok(Difficulty::Hard),
            other => Err(other.to_string()),
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Difficulty::Easy => "Easy",
            Difficulty::Medium => "Medium",
            Difficulty::Hard => "Hard",
        };
        f.write_str(s)
    }
}

/// One generated talking-human video together with its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub stimulus_id: String,
    /// Shared source portrait/audio content. Folds are keyed on this.
    pub source_id: String,
    pub video_uri: String,
    pub audio_uri: String,
    pub source_image_uri: String,
    pub generator_label: String,
    pub difficulty: Difficulty,
    /// Number of on-screen subjects.
    pub subject_count: u32,
    pub duration_s: f64,
}

/// Generated / attempted counts for one generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeclaredCount {
    pub generated: usize,
    pub attempted: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_counts: Option<BTreeMap<String, DeclaredCount>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StimulusSet {
    pub stimuli: Vec<Stimulus>,
    pub declared_counts: Option<BTreeMap<String, DeclaredCount>>,
}

impl StimulusSet {
    pub fn new(stimuli: Vec<Stimulus>) -> Self {
        Self {
            stimuli,
            declared_counts: None,
        }
    }

    pub fn len(&self) -> usize {
        self.stimuli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimuli.is_empty()
    }

    pub fn get(&self, stimulus_id: &str) -> Option<&Stimulus> {
        self.stimuli.iter().find(|s| s.stimulus_id == stimulus_id)
    }

    /// Distinct source ids in sorted order.
    pub fn source_ids(&self) -> BTreeSet<&str> {
        self.stimuli.iter().map(|s| s.source_id.as_str()).collect()
    }

    /// stimulus_id -> source_id.
    pub fn source_map(&self) -> BTreeMap<String, String> {
        self.stimuli
            .iter()
            .map(|s| (s.stimulus_id.clone(), s.source_id.clone()))
            .collect()
    }

    pub fn counts_by_label(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.stimuli {
            *counts.entry(s.generator_label.as_str()).or_insert(0) += 1;
        }
        counts
    }

    /// Serialize to the manifest format. Inverse of [`parse_manifest`].
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(declared) = &self.declared_counts {
            let header = serde_json::json!({
                "_header": ManifestHeader { declared_counts: Some(declared.clone()) }
            });
            out.push_str(&header.to_string());
            out.push('\n');
        }
        for s in &self.stimuli {
            out.push_str(&serde_json::to_string(s).expect("stimulus serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_manifest(&self, path: &Path) -> Result<(), DatasetError> {
        let mut file = fs::File::create(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(self.to_jsonl().as_bytes())
            .map_err(|source| DatasetError::Io {
                path: path.display().to_string(),
                source,
            })
    }
}

fn check_stimulus(s: &Stimulus, line: usize) -> Result<(), DatasetError> {
    if s.stimulus_id.is_empty() {
        return Err(DatasetError::Invariant {
            line,
            message: "empty stimulus_id".into(),
        });
    }
    if s.subject_count < 1 {
        return Err(DatasetError::Invariant {
            line,
            message: format!("stimulus `{}` has subject_count 0", s.stimulus_id),
        });
    }
    if !(s.duration_s.is_finite() && s.duration_s > 0.0) {
        return Err(DatasetError::Invariant {
            line,
            message: format!(
                "stimulus `{}` has non-positive duration {}",
                s.stimulus_id, s.duration_s
            ),
        });
    }
    Ok(())
}

/// Parse manifest text. Line numbers in errors are 1-based.
pub fn parse_manifest(reader: impl BufRead) -> Result<StimulusSet, DatasetError> {
    let mut set = StimulusSet::default();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DatasetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if let Some(header) = value.get("_header") {
            if !set.stimuli.is_empty() || set.declared_counts.is_some() {
                return Err(DatasetError::Parse {
                    line: line_no,
                    message: "header object must be the first line".into(),
                });
            }
            let header: ManifestHeader =
                serde_json::from_value(header.clone()).map_err(|e| DatasetError::Parse {
                    line: line_no,
                    message: format!("bad header: {e}"),
                })?;
            set.declared_counts = header.declared_counts;
            continue;
        }
        // Difficulty gets its own error kind rather than a generic serde message.
        if let Some(d) = value.get("difficulty").and_then(|d| d.as_str()) {
            if d.parse::<Difficulty>().is_err() {
                return Err(DatasetError::UnknownDifficulty {
                    line: line_no,
                    value: d.to_string(),
                });
            }
        }
        let stimulus: Stimulus =
            serde_json::from_value(value).map_err(|e| DatasetError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        check_stimulus(&stimulus, line_no)?;
        if !seen.insert(stimulus.stimulus_id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: stimulus.stimulus_id,
            });
        }
        set.stimuli.push(stimulus);
    }
    Ok(set)
}

pub fn load_manifest(path: &Path) -> Result<StimulusSet, DatasetError> {
    let file = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let set = parse_manifest(BufReader::new(file))?;
    if set.is_empty() {
        tracing::warn!(path = %path.display(), "manifest contains no stimuli");
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    CountMismatch {
        generator_label: String,
        expected: usize,
        found: usize,
    },
    MissingMedia {
        stimulus_id: String,
        field: String,
        uri: String,
    },
    DuplicateId {
        stimulus_id: String,
    },
    InvalidSubjectCount {
        stimulus_id: String,
    },
    InvalidDuration {
        stimulus_id: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub total_stimuli: usize,
    pub counts_by_label: BTreeMap<String, usize>,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn count_mismatches(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| matches!(f, Finding::CountMismatch { .. }))
    }
}

/// Validate metadata only. Media URIs are flagged when empty.
pub fn validate_manifest(set: &StimulusSet) -> ValidationReport {
    validate_inner(set, None)
}

/// Like [`validate_manifest`], also checking that media files exist under
/// `media_root` (relative URIs) or at their absolute path.
pub fn validate_manifest_with_media(set: &StimulusSet, media_root: &Path) -> ValidationReport {
    validate_inner(set, Some(media_root))
}

fn validate_inner(set: &StimulusSet, media_root: Option<&Path>) -> ValidationReport {
    let mut report = ValidationReport {
        total_stimuli: set.len(),
        counts_by_label: set
            .counts_by_label()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        findings: Vec::new(),
    };

    if let Some(declared) = &set.declared_counts {
        for (label, count) in declared {
            let found = report.counts_by_label.get(label).copied().unwrap_or(0);
            if found != count.generated {
                report.findings.push(Finding::CountMismatch {
                    generator_label: label.clone(),
                    expected: count.generated,
                    found,
                });
            }
        }
        for (label, &found) in &report.counts_by_label {
            if !declared.contains_key(label) {
                report.findings.push(Finding::CountMismatch {
                    generator_label: label.clone(),
                    expected: 0,
                    found,
                });
            }
        }
    }

    let mut seen = HashSet::new();
    for s in &set.stimuli {
        if !seen.insert(s.stimulus_id.as_str()) {
            report.findings.push(Finding::DuplicateId {
                stimulus_id: s.stimulus_id.clone(),
            });
        }
        if s.subject_count < 1 {
            report.findings.push(Finding::InvalidSubjectCount {
                stimulus_id: s.stimulus_id.clone(),
            });
        }
        if !(s.duration_s.is_finite() && s.duration_s > 0.0) {
            report.findings.push(Finding::InvalidDuration {
                stimulus_id: s.stimulus_id.clone(),
            });
        }
        for (field, uri) in [
            ("video_uri", &s.video_uri),
            ("audio_uri", &s.audio_uri),
            ("source_image_uri", &s.source_image_uri),
        ] {
            let missing = match media_root {
                _ if uri.is_empty() => true,
                Some(root) => !root.join(uri).exists(),
                None => false,
            };
            if missing {
                report.findings.push(Finding::MissingMedia {
                    stimulus_id: s.stimulus_id.clone(),
                    field: field.to_string(),
                    uri: uri.clone(),
                });
            }
        }
    }
    report
}

/// Assignment of source ids to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, source_id: &str) -> Option<usize> {
        self.assignment.get(source_id).copied()
    }

    /// Source ids per fold, each sorted.
    pub fn folds(&self) -> Vec<Vec<&str>> {
        let mut folds = vec![Vec::new(); self.k];
        for (source, &fold) in &self.assignment {
            folds[fold].push(source.as_str());
        }
        folds
    }

    /// Stimulus ids per fold, resolved through a stimulus -> source map.
    /// Stimuli whose source is not in the plan are dropped.
    pub fn stimulus_folds<'a>(
        &self,
        stimulus_sources: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Vec<BTreeSet<String>> {
        let mut folds = vec![BTreeSet::new(); self.k];
        for (stimulus, source) in stimulus_sources {
            if let Some(f) = self.fold_of(source) {
                folds[f].insert(stimulus.to_string());
            }
        }
        folds
    }

    pub fn check(&self) -> Result<(), DatasetError> {
        if self.k < 2 {
            return Err(DatasetError::InvalidK(self.k));
        }
        if let Some((source, fold)) = self.assignment.iter().find(|(_, &f)| f >= self.k) {
            return Err(DatasetError::FoldPlan(format!(
                "source `{source}` assigned to fold {fold} but k = {}",
                self.k
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fold plan serializes")
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let plan: FoldPlan = serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        plan.check()?;
        Ok(plan)
    }
}

/// Partition distinct source ids into `k` folds of near-equal size.
///
/// Sources are sorted, shuffled with a seeded ChaCha8 stream and dealt
/// round-robin, so fold sizes differ by at most one.
pub fn make_folds(set: &StimulusSet, k: usize, seed: u64) -> Result<FoldPlan, DatasetError> {
    if k < 2 {
        return Err(DatasetError::InvalidK(k));
    }
    let mut sources: Vec<&str> = set.source_ids().into_iter().collect();
    if sources.len() < k {
        return Err(DatasetError::TooFewSources {
            sources: sources.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sources.shuffle(&mut rng);
    let assignment = sources
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), i % k))
        .collect();
    Ok(FoldPlan {
        k,
        seed,
        assignment,
    })
}
