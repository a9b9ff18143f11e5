//! Synthetic manifests and rating studies for tests, examples and `e2e`.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{DeclaredCount, Difficulty, Stimulus, StimulusSet};
use crate::subjective::{DistortionVector, RatingRecord, RawScale, DISTORTION_TYPES};

/// Generator labels with (generated, attempted) counts of the reference
/// multi-talker collection.
pub const REFERENCE_GENERATORS: [(&str, usize, usize); 15] = [
    ("DR", 400, 400),
    ("HG", 399, 400),
    ("HD", 393, 400),
    ("UT", 400, 400),
    ("HY", 400, 400),
    ("OA", 400, 400),
    ("HL", 341, 400),
    ("WL", 397, 400),
    ("JV", 375, 400),
    ("LS", 364, 400),
    ("MT", 243, 400),
    ("ST", 360, 400),
    ("AT", 399, 400),
    ("M1", 249, 400),
    ("SC", 372, 400),
];

pub fn source_id(i: usize) -> String {
    format!("src{i:04}")
}

fn stimulus(label: &str, source: usize, rng: &mut ChaCha8Rng) -> Stimulus {
    let src = source_id(source);
    let difficulty = match source % 3 {
        0 => Difficulty::Easy,
        1 => Difficulty::Medium,
        _ => Difficulty::Hard,
    };
    Stimulus {
        stimulus_id: format!("{label}_{src}"),
        source_id: src.clone(),
        video_uri: format!("videos/{label}/{src}.mp4"),
        audio_uri: format!("audio/{src}.wav"),
        source_image_uri: format!("portraits/{src}.png"),
        generator_label: label.to_string(),
        difficulty,
        subject_count: 1 + (source % 3) as u32,
        duration_s: rng.random_range(4.0..16.0),
    }
}

/// Every generator applied to every source.
pub fn synthetic_manifest(sources: usize, generators: &[&str], seed: u64) -> StimulusSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stimuli = Vec::with_capacity(sources * generators.len());
    for label in generators {
        for s in 0..sources {
            stimuli.push(stimulus(label, s, &mut rng));
        }
    }
    StimulusSet::new(stimuli)
}

/// 400 sources, 15 generators, with the per-generator success counts of the
/// reference collection (5,492 stimuli) and matching declared counts.
pub fn reference_shaped_manifest(seed: u64) -> StimulusSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stimuli = Vec::new();
    let mut declared = BTreeMap::new();
    for (label, generated, attempted) in REFERENCE_GENERATORS {
        let mut sources: Vec<usize> = (0..attempted).collect();
        sources.shuffle(&mut rng);
        let mut kept = sources[..generated].to_vec();
        kept.sort_unstable();
        for s in kept {
            stimuli.push(stimulus(label, s, &mut rng));
        }
        declared.insert(label.to_string(), DeclaredCount { generated, attempted });
    }
    StimulusSet {
        stimuli,
        declared_counts: Some(declared),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub raters: usize,
    /// Raters answering uniformly at random.
    pub adversarial: usize,
    /// Per-rating noise of consistent raters, uniform in +-noise.
    pub noise: f64,
    /// Per-rater offset, uniform in +-bias.
    pub bias: f64,
    pub scale: RawScale,
    pub seed: u64,
    /// Probability a consistent rater flags a present distortion.
    pub hit_rate: f64,
    /// Probability a consistent rater flags an absent distortion.
    pub false_alarm_rate: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            raters: 20,
            adversarial: 0,
            noise: 0.4,
            bias: 0.3,
            scale: RawScale::default(),
            seed: 0,
            hit_rate: 0.85,
            false_alarm_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticStudy {
    pub ratings: Vec<RatingRecord>,
    /// Latent quality per stimulus on the raw scale.
    pub quality: BTreeMap<String, f64>,
    /// Latent distortions per stimulus.
    pub distortions: BTreeMap<String, DistortionVector>,
    pub adversarial_ids: Vec<String>,
}

pub fn rater_id(i: usize) -> String {
    format!("rater{i:02}")
}

/// Latent quality: a generator effect plus a source effect plus noise,
/// mapped inside the raw scale. Both effects are centered so the set as a
/// whole sits around the middle of the scale.
pub fn latent_quality(set: &StimulusSet, scale: RawScale, seed: u64) -> BTreeMap<String, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157_4c54);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let span = scale.hi - scale.lo;
    let mut effects = |keys: Vec<&String>, width: f64| {
        let mut m: BTreeMap<String, f64> = keys
            .into_iter()
            .map(|k| (k.clone(), rng.random_range(-width..width)))
            .collect();
        let mean = m.values().sum::<f64>() / m.len().max(1) as f64;
        m.values_mut().for_each(|v| *v -= mean);
        m
    };
    let generators: BTreeSet<&String> =
        set.stimuli.iter().map(|s| &s.generator_label).collect();
    let generator_effect = effects(generators.into_iter().collect(), 0.25);
    let sources: BTreeSet<&String> = set.stimuli.iter().map(|s| &s.source_id).collect();
    let source_effect = effects(sources.into_iter().collect(), 0.1);
    set.stimuli
        .iter()
        .map(|s| {
            let e: f64 = 0.12 * normal.sample(&mut rng);
            let g = generator_effect[&s.generator_label];
            let c = source_effect[&s.source_id];
            let unit = (0.5 + g + c + e).clamp(0.1, 0.9);
            (s.stimulus_id.clone(), scale.lo + unit * span)
        })
        .collect()
}

/// Simulate every rater scoring every stimulus, with session ids following
/// manifest order in blocks of 200.
pub fn simulate_study(set: &StimulusSet, cfg: &StudyConfig) -> SyntheticStudy {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let quality = latent_quality(set, cfg.scale, cfg.seed);
    let span = cfg.scale.hi - cfg.scale.lo;

    let distortions: BTreeMap<String, DistortionVector> = set
        .stimuli
        .iter()
        .map(|s| {
            let q = (quality[&s.stimulus_id] - cfg.scale.lo) / span;
            let mut d = DistortionVector::default();
            for bit in d.0.iter_mut() {
                *bit = rng.random_bool((0.6 * (1.0 - q)).clamp(0.0, 1.0) * 0.5);
            }
            (s.stimulus_id.clone(), d)
        })
        .collect();

    let total = cfg.raters + cfg.adversarial;
    let adversarial_ids: Vec<String> = (cfg.raters..total).map(rater_id).collect();
    let start: DateTime<Utc> = Utc.with_ymd_and_hms(2025, 3, 3, 9, 0, 0).unwrap();
    let mut ratings = Vec::with_capacity(total * set.len());
    for r in 0..total {
        let subject = rater_id(r);
        let adversarial = r >= cfg.raters;
        let bias = rng.random_range(-cfg.bias..=cfg.bias) * span / 5.0;
        for (j, s) in set.stimuli.iter().enumerate() {
            let q = if adversarial {
                rng.random_range(cfg.scale.lo..=cfg.scale.hi)
            } else {
                let noise = rng.random_range(-cfg.noise..=cfg.noise) * span / 5.0;
                (quality[&s.stimulus_id] + bias + noise).clamp(cfg.scale.lo, cfg.scale.hi)
            };
            let truth = &distortions[&s.stimulus_id];
            let mut d = DistortionVector::default();
            for k in 0..DISTORTION_TYPES {
                d.0[k] = if adversarial {
                    rng.random_bool(0.5)
                } else if truth.0[k] {
                    rng.random_bool(cfg.hit_rate)
                } else {
                    rng.random_bool(cfg.false_alarm_rate)
                };
            }
            ratings.push(RatingRecord {
                subject_id: subject.clone(),
                stimulus_id: s.stimulus_id.clone(),
                q,
                d,
                timestamp: start + Duration::seconds((r * set.len() + j) as i64 * 20),
                session_id: format!("s{:02}", j / 200 + 1),
            });
        }
    }
    SyntheticStudy {
        ratings,
        quality,
        distortions,
        adversarial_ids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_shape_totals() {
        let set = reference_shaped_manifest(1);
        assert_eq!(set.len(), 5492);
        assert_eq!(set.source_ids().len(), 400);
        assert!(crate::dataset::validate_manifest(&set).is_valid());
    }

    #[test]
    fn study_is_seeded() {
        let set = synthetic_manifest(5, &["AA", "BB"], 3);
        let cfg = StudyConfig { raters: 3, ..Default::default() };
        let a = simulate_study(&set, &cfg);
        let b = simulate_study(&set, &cfg);
        assert_eq!(a.ratings, b.ratings);
        assert_eq!(a.ratings.len(), 30);
        assert!(a.ratings.iter().all(|r| cfg.scale.contains(r.q)));
    }
}
