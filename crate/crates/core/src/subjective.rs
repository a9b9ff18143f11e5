//! Raw ratings to per-stimulus MOS and distortion labels.
//!
//! Pipeline order: subject screening on raw scores, per-subject z-scoring of
//! the retained subjects, one global min-max rescale of every retained z to
//! [0, 5], then per-stimulus averaging and strict-majority distortion voting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DISTORTION_TYPES: usize = 12;

#[derive(Debug, Error)]
pub enum SubjectiveError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("subject `{subject_id}` is degenerate: {reason}")]
    Degenerate { subject_id: String, reason: String },
    #[error("cannot rescale: all {0} z-scores are identical")]
    FlatScores(usize),
    #[error("no ratings to process")]
    Empty,
    #[error("invalid raw scale [{lo}, {hi}]")]
    InvalidScale { lo: f64, hi: f64 },
}

/// Which of the twelve distortion types a rater marked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DistortionVector(pub [bool; DISTORTION_TYPES]);

impl DistortionVector {
    pub fn from_bits(bits: &[u8]) -> Result<Self, String> {
        if bits.len() != DISTORTION_TYPES {
            return Err(format!(
                "distortion vector needs {DISTORTION_TYPES} entries, got {}",
                bits.len()
            ));
        }
        let mut out = [false; DISTORTION_TYPES];
        for (slot, &b) in out.iter_mut().zip(bits) {
            *slot = match b {
                0 => false,
                1 => true,
                other => return Err(format!("distortion entry must be 0 or 1, got {other}")),
            };
        }
        Ok(Self(out))
    }

    pub fn bits(&self) -> [u8; DISTORTION_TYPES] {
        self.0.map(u8::from)
    }

    pub fn count_set(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Display names for the twelve distortion columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionLabels(pub Vec<String>);

impl Default for DistortionLabels {
    fn default() -> Self {
        let mut labels: Vec<String> = (1..=DISTORTION_TYPES).map(|i| format!("D{i:02}")).collect();
        labels[10] = "speaker mismatch".into();
        labels[11] = "static background".into();
        Self(labels)
    }
}

/// Bounds of the raw rating scale; default is a continuous [0, 5] slider.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawScale {
    pub lo: f64,
    pub hi: f64,
}

impl Default for RawScale {
    fn default() -> Self {
        Self { lo: 0.0, hi: 5.0 }
    }
}

impl RawScale {
    pub fn new(lo: f64, hi: f64) -> Result<Self, SubjectiveError> {
        if lo.is_finite() && hi.is_finite() && lo < hi {
            Ok(Self { lo, hi })
        } else {
            Err(SubjectiveError::InvalidScale { lo, hi })
        }
    }

    pub fn contains(&self, q: f64) -> bool {
        q.is_finite() && q >= self.lo && q <= self.hi
    }
}

impl FromStr for RawScale {
    type Err = String;

    /// Parses `lo,hi`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lo, hi) = s
            .split_once(',')
            .ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
        let lo: f64 = lo.trim().parse().map_err(|e| format!("bad lo: {e}"))?;
        let hi: f64 = hi.trim().parse().map_err(|e| format!("bad hi: {e}"))?;
        RawScale::new(lo, hi).map_err(|e| e.to_string())
    }
}

impl fmt::Display for RawScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.lo, self.hi)
    }
}

/// One subject's evaluation of one stimulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub subject_id: String,
    pub stimulus_id: String,
    pub q: f64,
    pub d: DistortionVector,
    pub timestamp: DateTime<Utc>,
    pub session_id: String,
}

fn distortion_headers() -> impl Iterator<Item = String> {
    (1..=DISTORTION_TYPES).map(|i| format!("d{i:02}"))
}

pub fn ratings_header() -> Vec<String> {
    let mut h = vec!["subject_id".to_string(), "stimulus_id".into(), "q".into()];
    h.extend(distortion_headers());
    h.push("timestamp".into());
    h.push("session_id".into());
    h
}

/// Read the ratings CSV. Header row required; scores outside `scale` are rejected.
pub fn read_ratings_csv(
    reader: impl Read,
    scale: RawScale,
) -> Result<Vec<RatingRecord>, SubjectiveError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize, SubjectiveError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| SubjectiveError::Row {
                row: 0,
                message: format!("missing column `{name}`"),
            })
    };
    let subject = col("subject_id")?;
    let stimulus = col("stimulus_id")?;
    let q_col = col("q")?;
    let d_cols = distortion_headers()
        .map(|h| col(&h))
        .collect::<Result<Vec<_>, _>>()?;
    let ts_col = col("timestamp")?;
    let session = col("session_id")?;

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let bad = |message: String| SubjectiveError::Row { row, message };
        let q: f64 = field(q_col)
            .parse()
            .map_err(|e| bad(format!("bad q `{}`: {e}", field(q_col))))?;
        if !scale.contains(q) {
            return Err(bad(format!("q = {q} outside raw scale [{}, {}]", scale.lo, scale.hi)));
        }
        let bits = d_cols
            .iter()
            .map(|&c| field(c).parse::<u8>().map_err(|e| bad(format!("bad distortion bit: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let d = DistortionVector::from_bits(&bits).map_err(bad)?;
        let timestamp = DateTime::parse_from_rfc3339(field(ts_col))
            .map_err(|e| bad(format!("bad timestamp `{}`: {e}", field(ts_col))))?
            .with_timezone(&Utc);
        out.push(RatingRecord {
            subject_id: field(subject).to_string(),
            stimulus_id: field(stimulus).to_string(),
            q,
            d,
            timestamp,
            session_id: field(session).to_string(),
        });
    }
    Ok(out)
}

pub fn write_ratings_csv<'a>(
    writer: impl Write,
    records: impl IntoIterator<Item = &'a RatingRecord>,
) -> Result<(), SubjectiveError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(ratings_header())?;
    for r in records {
        let mut row = vec![r.subject_id.clone(), r.stimulus_id.clone(), r.q.to_string()];
        row.extend(r.d.bits().iter().map(|b| b.to_string()));
        row.push(r.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Millis, true));
        row.push(r.session_id.clone());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectStats {
    pub subject_id: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (divisor n - 1). Zero when n < 2.
    pub std: f64,
}

impl SubjectStats {
    pub fn from_scores(subject_id: &str, scores: &[f64]) -> Self {
        let n = scores.len();
        let mean = if n == 0 {
            0.0
        } else {
            scores.iter().sum::<f64>() / n as f64
        };
        let std = if n < 2 {
            0.0
        } else {
            (scores.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self {
            subject_id: subject_id.to_string(),
            n,
            mean,
            std,
        }
    }
}

/// z-scores for one subject's raw ratings, in input order.
pub fn zscore_subject(subject_id: &str, scores: &[f64]) -> Result<Vec<f64>, SubjectiveError> {
    let stats = SubjectStats::from_scores(subject_id, scores);
    if stats.n < 2 {
        return Err(SubjectiveError::Degenerate {
            subject_id: subject_id.into(),
            reason: format!("only {} rating(s); at least 2 needed", stats.n),
        });
    }
    if stats.std <= 0.0 {
        return Err(SubjectiveError::Degenerate {
            subject_id: subject_id.into(),
            reason: "zero variance (constant rater)".into(),
        });
    }
    Ok(scores.iter().map(|q| (q - stats.mean) / stats.std).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerateSubject {
    pub subject_id: String,
    pub reason: String,
}

/// Key: (subject_id, stimulus_id).
pub type RatingKey = (String, String);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ZScores {
    pub scores: BTreeMap<RatingKey, f64>,
    pub degenerate: Vec<DegenerateSubject>,
}

fn by_subject<'a>(ratings: &'a [RatingRecord]) -> BTreeMap<&'a str, Vec<&'a RatingRecord>> {
    let mut map: BTreeMap<&str, Vec<&RatingRecord>> = BTreeMap::new();
    for r in ratings {
        map.entry(r.subject_id.as_str()).or_default().push(r);
    }
    map
}

fn by_stimulus<'a>(ratings: &'a [RatingRecord]) -> BTreeMap<&'a str, Vec<&'a RatingRecord>> {
    let mut map: BTreeMap<&str, Vec<&RatingRecord>> = BTreeMap::new();
    for r in ratings {
        map.entry(r.stimulus_id.as_str()).or_default().push(r);
    }
    map
}

/// Per-subject z-scoring. Degenerate subjects are listed and left out.
pub fn zscore_normalize(ratings: &[RatingRecord]) -> ZScores {
    let mut out = ZScores::default();
    for (subject, rows) in by_subject(ratings) {
        let qs: Vec<f64> = rows.iter().map(|r| r.q).collect();
        match zscore_subject(subject, &qs) {
            Ok(z) => {
                for (r, z) in rows.iter().zip(z) {
                    out.scores
                        .insert((r.subject_id.clone(), r.stimulus_id.clone()), z);
                }
            }
            Err(SubjectiveError::Degenerate { subject_id, reason }) => {
                tracing::warn!(subject = %subject_id, %reason, "excluding degenerate subject");
                out.degenerate.push(DegenerateSubject { subject_id, reason });
            }
            Err(e) => unreachable!("zscore_subject only fails as degenerate: {e}"),
        }
    }
    out
}

/// Outlier-counter thresholds for rater screening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningConfig {
    /// Lower and upper kurtosis bounds for treating a score distribution as normal.
    pub normal_kurtosis: (f64, f64),
    /// Multiplier applied to the standard deviation when normal.
    pub normal_factor: f64,
    /// Multiplier applied otherwise.
    pub non_normal_factor: f64,
    /// Reject only if (P + Q) / N exceeds this.
    pub outlier_ratio: f64,
    /// ... and |P - Q| / (P + Q) is below this.
    pub symmetry_ratio: f64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            normal_kurtosis: (2.0, 4.0),
            normal_factor: 2.0,
            non_normal_factor: 20f64.sqrt(),
            outlier_ratio: 0.05,
            symmetry_ratio: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectCounters {
    pub n: usize,
    /// Ratings above the per-stimulus upper bound.
    pub p: usize,
    /// Ratings below the per-stimulus lower bound.
    pub q: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub reason: String,
    pub counters: Option<SubjectCounters>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScreeningOutcome {
    pub retained: BTreeSet<String>,
    pub rejected: BTreeMap<String, Rejection>,
    pub counters: BTreeMap<String, SubjectCounters>,
}

/// Kurtosis-gated outlier-counter screening on raw scores.
///
/// For each stimulus with at least two raters: mean, sample std, and
/// kurtosis m4 / m2^2. Scores strictly outside mean +- r * std count as
/// P (above) or Q (below) for the rater, with r = 2 when the kurtosis lies
/// in [2, 4] and sqrt(20) otherwise. A rater is rejected when
/// (P + Q) / N > 0.05 and |P - Q| / (P + Q) < 0.3.
pub fn screen_subjects(ratings: &[RatingRecord], config: &ScreeningConfig) -> ScreeningOutcome {
    let mut counters: BTreeMap<String, SubjectCounters> = by_subject(ratings)
        .into_iter()
        .map(|(s, rows)| {
            (
                s.to_string(),
                SubjectCounters {
                    n: rows.len(),
                    p: 0,
                    q: 0,
                },
            )
        })
        .collect();

    if counters.len() >= 2 {
        for rows in by_stimulus(ratings).values() {
            let n = rows.len();
            if n < 2 {
                continue;
            }
            let nf = n as f64;
            let mean = rows.iter().map(|r| r.q).sum::<f64>() / nf;
            let m2 = rows.iter().map(|r| (r.q - mean).powi(2)).sum::<f64>() / nf;
            let m4 = rows.iter().map(|r| (r.q - mean).powi(4)).sum::<f64>() / nf;
            if m2 <= 0.0 {
                continue;
            }
            let std = (m2 * nf / (nf - 1.0)).sqrt();
            let kurtosis = m4 / (m2 * m2);
            let (lo_k, hi_k) = config.normal_kurtosis;
            let factor = if (lo_k..=hi_k).contains(&kurtosis) {
                config.normal_factor
            } else {
                config.non_normal_factor
            };
            let upper = mean + factor * std;
            let lower = mean - factor * std;
            for r in rows {
                let c = counters.get_mut(&r.subject_id).expect("subject counted");
                if r.q > upper {
                    c.p += 1;
                } else if r.q < lower {
                    c.q += 1;
                }
            }
        }
    }

    let mut outcome = ScreeningOutcome::default();
    for (subject, c) in &counters {
        let outliers = c.p + c.q;
        let reject = outliers > 0
            && (outliers as f64 / c.n as f64) > config.outlier_ratio
            && ((c.p as f64 - c.q as f64).abs() / outliers as f64) < config.symmetry_ratio;
        if reject {
            outcome.rejected.insert(
                subject.clone(),
                Rejection {
                    reason: format!(
                        "outlier screening: P={} Q={} N={} ({:.3} outside bounds)",
                        c.p,
                        c.q,
                        c.n,
                        outliers as f64 / c.n as f64
                    ),
                    counters: Some(c.clone()),
                },
            );
        } else {
            outcome.retained.insert(subject.clone());
        }
    }
    outcome.counters = counters;
    outcome
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleBounds {
    pub z_min: f64,
    pub z_max: f64,
}

/// Global min-max map of every value onto [0, 5].
pub fn rescale_to_0_5<K: Ord + Clone>(
    z: &BTreeMap<K, f64>,
) -> Result<(BTreeMap<K, f64>, RescaleBounds), SubjectiveError> {
    let (z_min, z_max) = z
        .values()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if z.is_empty() {
        return Err(SubjectiveError::Empty);
    }
    if z_max <= z_min {
        return Err(SubjectiveError::FlatScores(z.len()));
    }
    let span = z_max - z_min;
    let out = z
        .iter()
        .map(|(k, &v)| {
            let s = if v == z_max {
                5.0
            } else {
                5.0 * (v - z_min) / span
            };
            (k.clone(), s)
        })
        .collect();
    Ok((out, RescaleBounds { z_min, z_max }))
}

/// Arithmetic mean of rescaled scores per stimulus.
pub fn compute_mos(rescaled: &BTreeMap<RatingKey, f64>) -> BTreeMap<String, (f64, usize)> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for ((_, stimulus), &v) in rescaled {
        let e = acc.entry(stimulus.clone()).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (sum, n))| (k, ((sum / n as f64).clamp(0.0, 5.0), n)))
        .collect()
}

/// Bit k is set iff strictly more than half of the vectors set it.
pub fn vote_distortions<'a>(votes: impl IntoIterator<Item = &'a DistortionVector>) -> DistortionVector {
    let mut counts = [0usize; DISTORTION_TYPES];
    let mut raters = 0usize;
    for v in votes {
        raters += 1;
        for (c, &b) in counts.iter_mut().zip(&v.0) {
            *c += usize::from(b);
        }
    }
    DistortionVector(counts.map(|c| 2 * c > raters))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosRow {
    pub mos: f64,
    pub n_ratings: usize,
    pub labels: DistortionVector,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubjectiveTable {
    pub rows: BTreeMap<String, MosRow>,
    pub retained_subjects: BTreeSet<String>,
    pub rejected_subjects: BTreeSet<String>,
}

impl SubjectiveTable {
    pub fn mos(&self, stimulus_id: &str) -> Option<f64> {
        self.rows.get(stimulus_id).map(|r| r.mos)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn total_distortion_instances(&self) -> usize {
        self.rows.values().map(|r| r.labels.count_set()).sum()
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<(), SubjectiveError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["stimulus_id".to_string(), "mos".into(), "n_ratings".into()];
        header.extend(distortion_headers());
        wtr.write_record(&header)?;
        for (id, row) in &self.rows {
            let mut rec = vec![id.clone(), row.mos.to_string(), row.n_ratings.to_string()];
            rec.extend(row.labels.bits().iter().map(|b| b.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Read `mos.csv`. Subject sets are not stored in the file and come back empty.
    pub fn read_csv(reader: impl Read) -> Result<Self, SubjectiveError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| SubjectiveError::Row {
                    row: 0,
                    message: format!("missing column `{name}`"),
                })
        };
        let id_col = col("stimulus_id")?;
        let mos_col = col("mos")?;
        let n_col = headers.iter().position(|h| h.trim() == "n_ratings");
        let d_cols: Vec<Option<usize>> = distortion_headers()
            .map(|h| headers.iter().position(|x| x.trim() == h))
            .collect();
        let mut table = SubjectiveTable::default();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec?;
            let bad = |message: String| SubjectiveError::Row { row, message };
            let get = |c: usize| rec.get(c).unwrap_or("").trim();
            let mos: f64 = get(mos_col).parse().map_err(|e| bad(format!("bad mos: {e}")))?;
            let n_ratings = match n_col {
                Some(c) => get(c).parse().map_err(|e| bad(format!("bad n_ratings: {e}")))?,
                None => 0,
            };
            let mut labels = DistortionVector::default();
            for (slot, c) in labels.0.iter_mut().zip(&d_cols) {
                if let Some(c) = c {
                    *slot = get(*c) == "1";
                }
            }
            table.rows.insert(
                get(id_col).to_string(),
                MosRow {
                    mos,
                    n_ratings,
                    labels,
                },
            );
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessConfig {
    pub scale: RawScale,
    pub screening: Option<ScreeningConfig>,
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self {
            scale: RawScale::default(),
            screening: Some(ScreeningConfig::default()),
        }
    }
}

/// Processing diagnostics, written as `report.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessReport {
    pub rows_consumed: usize,
    pub superseded_duplicates: usize,
    pub screening_applied: bool,
    pub retained_subjects: Vec<String>,
    pub rejected_subjects: BTreeMap<String, Rejection>,
    pub degenerate_subjects: Vec<DegenerateSubject>,
    pub rescale_bounds: Option<RescaleBounds>,
    /// Stimuli left with no retained rating; not in the table.
    pub excluded_stimuli: Vec<String>,
    pub stimuli: usize,
    pub distortion_instances: usize,
}

/// Run the full chain: dedupe, screen, z-score, rescale, average, vote.
pub fn process_ratings(
    ratings: &[RatingRecord],
    config: &ProcessConfig,
) -> Result<(SubjectiveTable, ProcessReport), SubjectiveError> {
    if ratings.is_empty() {
        return Err(SubjectiveError::Empty);
    }
    let mut report = ProcessReport {
        rows_consumed: ratings.len(),
        screening_applied: config.screening.is_some(),
        ..Default::default()
    };

    // Latest submission per (subject, stimulus) wins.
    let mut latest: BTreeMap<RatingKey, &RatingRecord> = BTreeMap::new();
    for r in ratings {
        let key = (r.subject_id.clone(), r.stimulus_id.clone());
        match latest.get(&key) {
            Some(prev) if prev.timestamp > r.timestamp => {}
            _ => {
                latest.insert(key, r);
            }
        }
    }
    report.superseded_duplicates = ratings.len() - latest.len();
    let deduped: Vec<RatingRecord> = latest.values().map(|r| (*r).clone()).collect();

    let all_stimuli: BTreeSet<String> = deduped.iter().map(|r| r.stimulus_id.clone()).collect();

    let (mut retained, mut rejected) = match &config.screening {
        Some(cfg) => {
            let outcome = screen_subjects(&deduped, cfg);
            (outcome.retained, outcome.rejected)
        }
        None => (
            deduped.iter().map(|r| r.subject_id.clone()).collect(),
            BTreeMap::new(),
        ),
    };

    let kept: Vec<RatingRecord> = deduped
        .into_iter()
        .filter(|r| retained.contains(&r.subject_id))
        .collect();
    let z = zscore_normalize(&kept);
    for d in &z.degenerate {
        retained.remove(&d.subject_id);
        rejected.insert(
            d.subject_id.clone(),
            Rejection {
                reason: format!("degenerate: {}", d.reason),
                counters: None,
            },
        );
    }
    report.degenerate_subjects = z.degenerate.clone();

    let (rescaled, bounds) = rescale_to_0_5(&z.scores)?;
    report.rescale_bounds = Some(bounds);

    let mos = compute_mos(&rescaled);
    let mut votes: BTreeMap<&str, Vec<&DistortionVector>> = BTreeMap::new();
    for r in kept.iter().filter(|r| retained.contains(&r.subject_id)) {
        votes.entry(r.stimulus_id.as_str()).or_default().push(&r.d);
    }

    let mut table = SubjectiveTable {
        retained_subjects: retained.clone(),
        rejected_subjects: rejected.keys().cloned().collect(),
        ..Default::default()
    };
    for (stimulus, (mos, n)) in mos {
        let labels = vote_distortions(votes.get(stimulus.as_str()).into_iter().flatten().copied());
        table.rows.insert(
            stimulus,
            MosRow {
                mos,
                n_ratings: n,
                labels,
            },
        );
    }
    report.excluded_stimuli = all_stimuli
        .into_iter()
        .filter(|s| !table.rows.contains_key(s))
        .collect();
    report.retained_subjects = retained.into_iter().collect();
    report.rejected_subjects = rejected;
    report.stimuli = table.len();
    report.distortion_instances = table.total_distortion_instances();
    Ok((table, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn rec(subject: &str, stimulus: &str, q: f64) -> RatingRecord {
        RatingRecord {
            subject_id: subject.into(),
            stimulus_id: stimulus.into(),
            q,
            d: DistortionVector::default(),
            timestamp: Utc.with_ymd_and_hms(2025, 6, 1, 12, 0, 0).unwrap(),
            session_id: "s01".into(),
        }
    }

    #[test]
    fn zscore_of_one_two_three() {
        let z = zscore_subject("a", &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(z, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_rater_is_degenerate() {
        assert!(matches!(
            zscore_subject("a", &[5.0, 5.0, 5.0]),
            Err(SubjectiveError::Degenerate { .. })
        ));
        assert!(matches!(
            zscore_subject("a", &[3.0]),
            Err(SubjectiveError::Degenerate { .. })
        ));
        let ratings = vec![rec("a", "x", 5.0), rec("a", "y", 5.0), rec("b", "x", 1.0), rec("b", "y", 2.0)];
        let z = zscore_normalize(&ratings);
        assert_eq!(z.degenerate.len(), 1);
        assert_eq!(z.degenerate[0].subject_id, "a");
        assert_eq!(z.scores.len(), 2);
    }

    #[test]
    fn rescale_endpoints() {
        let z: BTreeMap<u8, f64> = [(0, -2.0), (1, 0.0), (2, 2.0)].into();
        let (r, b) = rescale_to_0_5(&z).unwrap();
        assert_eq!(r.values().copied().collect::<Vec<_>>(), vec![0.0, 2.5, 5.0]);
        assert_eq!(b, RescaleBounds { z_min: -2.0, z_max: 2.0 });
        let flat: BTreeMap<u8, f64> = [(0, 1.0), (1, 1.0)].into();
        assert!(matches!(rescale_to_0_5(&flat), Err(SubjectiveError::FlatScores(2))));
    }

    #[test]
    fn mos_is_mean() {
        let r: BTreeMap<RatingKey, f64> = [
            (("a".into(), "x".into()), 2.0),
            (("b".into(), "x".into()), 3.0),
        ]
        .into();
        assert_eq!(compute_mos(&r)["x"], (2.5, 2));
    }

    fn votes(n: usize, flagged: usize) -> Vec<DistortionVector> {
        (0..n)
            .map(|i| {
                let mut v = DistortionVector::default();
                v.0[3] = i < flagged;
                v
            })
            .collect()
    }

    #[test]
    fn strict_majority() {
        assert!(vote_distortions(&votes(40, 21)).0[3]);
        assert!(!vote_distortions(&votes(40, 20)).0[3]);
        assert!(vote_distortions(&votes(1, 1)).0[3]);
        assert!(!vote_distortions(&votes(1, 1)).0[2]);
    }

    #[test]
    fn mean_rater_retained() {
        let mut ratings = Vec::new();
        for j in 0..20 {
            let stim = format!("s{j}");
            ratings.push(rec("lo", &stim, 1.0 + (j % 3) as f64));
            ratings.push(rec("hi", &stim, 2.0 + (j % 3) as f64));
            ratings.push(rec("mid", &stim, 1.5 + (j % 3) as f64));
        }
        let out = screen_subjects(&ratings, &ScreeningConfig::default());
        assert_eq!(out.counters["mid"].p + out.counters["mid"].q, 0);
        assert!(out.retained.contains("mid"));
    }

    #[test]
    fn single_subject_screening_is_noop() {
        let ratings = vec![rec("a", "x", 1.0), rec("a", "y", 4.0)];
        let out = screen_subjects(&ratings, &ScreeningConfig::default());
        assert_eq!(out.retained.len(), 1);
        assert!(out.rejected.is_empty());
    }

    #[test]
    fn ratings_csv_round_trip_and_bounds() {
        let mut r = rec("a", "x", 3.25);
        r.d.0[0] = true;
        r.d.0[11] = true;
        let mut buf = Vec::new();
        write_ratings_csv(&mut buf, [&r]).unwrap();
        let back = read_ratings_csv(buf.as_slice(), RawScale::default()).unwrap();
        assert_eq!(back, vec![r]);
        let err = read_ratings_csv(buf.as_slice(), RawScale::new(0.0, 3.0).unwrap());
        assert!(matches!(err, Err(SubjectiveError::Row { row: 2, .. })));
    }

    #[test]
    fn malformed_distortion_bits() {
        assert!(DistortionVector::from_bits(&[0; 11]).is_err());
        assert!(DistortionVector::from_bits(&[2; 12]).is_err());
    }

    #[test]
    fn raw_scale_parse() {
        assert_eq!("1,10".parse::<RawScale>().unwrap(), RawScale { lo: 1.0, hi: 10.0 });
        assert!("5,1".parse::<RawScale>().is_err());
    }

    #[test]
    fn pipeline_bounds_and_duplicates() {
        let mut ratings = Vec::new();
        for (s, offset) in [("a", 0.0), ("b", 0.5), ("c", 1.0)] {
            for j in 0..5 {
                ratings.push(rec(s, &format!("x{j}"), j as f64 * 0.5 + offset));
            }
        }
        let mut late = rec("a", "x0", 4.0);
        late.timestamp = late.timestamp + chrono::Duration::minutes(5);
        ratings.push(late);
        let (table, report) = process_ratings(&ratings, &ProcessConfig::default()).unwrap();
        assert_eq!(report.superseded_duplicates, 1);
        assert_eq!(table.len(), 5);
        assert!(table.rows.values().all(|r| (0.0..=5.0).contains(&r.mos) && r.n_ratings == 3));
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let back = SubjectiveTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows, table.rows);
    }

    #[test]
    fn mos_of_all_global_max_is_five() {
        // Subjects rate x at their maximum and the rest identically, so x holds
        // the global max z for every subject.
        let mut ratings = Vec::new();
        for s in ["a", "b", "c"] {
            ratings.push(rec(s, "top", 5.0));
            ratings.push(rec(s, "y", 1.0));
            ratings.push(rec(s, "z", 1.0));
        }
        let (table, _) = process_ratings(&ratings, &ProcessConfig::default()).unwrap();
        assert_eq!(table.mos("top"), Some(5.0));
        assert_eq!(table.mos("y"), Some(0.0));
    }
}
