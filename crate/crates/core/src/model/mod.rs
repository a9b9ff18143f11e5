//! The four-branch quality model: feature extraction behind pluggable
//! backends, identity consistency, fusion and the regression head.

pub mod backends;
pub mod cache;
pub mod features;
pub mod frames;
pub mod identity;
pub mod regressor;
pub mod remote;
pub mod stub;
pub mod train;

use rayon::prelude::*;
use thiserror::Error;

pub use backends::{BackendInfo, BackendOptions, BackendRegistry, BackendSet, StubDims};
pub use cache::{FeatureCache, FeatureRecord};
pub use features::{fuse, FeatureBundle, FeatureTensor};
pub use frames::{sample_frames, FrameSampleSet, ManifestProbe, MediaInfo, MediaProbe};
pub use identity::identity_consistency;
pub use regressor::{gradient_check, predict, Activation, RegressorParams};
pub use train::{train, TrainConfig, TrainOutput, TrainedModel};

use crate::dataset::{Stimulus, StimulusSet};
use backends::{HumanFeatureExtractor, SyncExtractor};

/// Audio and video durations further apart than this get a warning.
pub const SYNC_DURATION_TOLERANCE_S: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("backend `{backend}` unavailable: {reason}")]
    BackendMissing { backend: String, reason: String },
    #[error("stimulus `{stimulus_id}`: {message}")]
    Media { stimulus_id: String, message: String },
    #[error("stimulus `{0}`: no face found in the reference portrait")]
    NoReferenceFace(String),
    #[error("stimulus `{stimulus_id}`: missing feature component {component}")]
    MissingComponent {
        stimulus_id: String,
        component: &'static str,
    },
    #[error("stimulus `{0}`: non-finite feature value")]
    NonFinite(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },
    #[error("remote backbone {endpoint}: {message}")]
    Remote { endpoint: String, message: String },
    #[error("io error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("stale feature cache: {0}")]
    StaleCache(String),
}

/// Frame-averaged human features over the sampled video frames (reference excluded).
pub fn extract_human(
    extractor: &dyn HumanFeatureExtractor,
    stimulus: &Stimulus,
    samples: &FrameSampleSet,
) -> Result<Vec<f64>, ModelError> {
    let frames = samples.video_frames();
    if frames.is_empty() {
        return Err(ModelError::Media {
            stimulus_id: stimulus.stimulus_id.clone(),
            message: "no sampled frames".into(),
        });
    }
    let mut sum: Option<Vec<f64>> = None;
    for frame in frames {
        let f = extractor.extract_frame(stimulus, frame)?;
        match &mut sum {
            None => sum = Some(f),
            Some(acc) => {
                if acc.len() != f.len() {
                    return Err(ModelError::Shape(format!(
                        "human features changed size from {} to {} at frame {}",
                        acc.len(),
                        f.len(),
                        frame.index
                    )));
                }
                acc.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
            }
        }
    }
    let mut mean = sum.expect("at least one frame");
    let l = frames.len() as f64;
    mean.iter_mut().for_each(|v| *v /= l);
    Ok(mean)
}

/// Synchrony features plus a warning when audio and video lengths disagree.
pub fn extract_sync(
    extractor: &dyn SyncExtractor,
    stimulus: &Stimulus,
    info: &MediaInfo,
) -> Result<(Vec<f64>, Option<String>), ModelError> {
    let f = extractor.extract(stimulus)?;
    let warning = info.audio_duration_s.and_then(|a| {
        let gap = (a - info.video_duration_s).abs();
        (gap > SYNC_DURATION_TOLERANCE_S).then(|| {
            format!(
                "audio ({a:.2} s) and video ({:.2} s) durations differ by {gap:.2} s",
                info.video_duration_s
            )
        })
    });
    Ok((f, warning))
}

/// All four features for one stimulus.
pub fn extract_bundle(
    stimulus: &Stimulus,
    backends: &BackendSet,
    probe: &dyn MediaProbe,
) -> Result<FeatureBundle, ModelError> {
    let info = probe.probe(stimulus)?;
    let samples = sample_frames(stimulus, &info)?;
    let f_g = backends.global.extract(stimulus)?;
    let f_h = extract_human(backends.human.as_ref(), stimulus, &samples)?;
    let f_i = identity_consistency(
        backends.face.as_ref(),
        stimulus,
        &samples,
        stimulus.subject_count as usize,
    )?;
    let (f_s, warning) = extract_sync(backends.sync.as_ref(), stimulus, &info)?;
    if let Some(w) = &warning {
        tracing::warn!(stimulus = %stimulus.stimulus_id, "{w}");
    }
    Ok(FeatureBundle {
        stimulus_id: stimulus.stimulus_id.clone(),
        f_g: Some(f_g),
        f_h: Some(FeatureTensor::vector(f_h)),
        f_i: Some(f_i),
        f_s: Some(FeatureTensor::vector(f_s)),
        warnings: warning.into_iter().collect(),
    })
}

/// Extract features for every stimulus in parallel, reusing records of a
/// previous cache when it was written by the same backend versions.
pub fn extract_all(
    set: &StimulusSet,
    backends: &BackendSet,
    probe: &dyn MediaProbe,
    previous: Option<&FeatureCache>,
) -> Result<FeatureCache, ModelError> {
    let versions = backends.versions();
    let reusable = previous.filter(|c| c.matches(&versions));
    if previous.is_some() && reusable.is_none() {
        tracing::info!("backend versions changed; feature cache invalidated");
    }
    let records = set
        .stimuli
        .par_iter()
        .map(|s| {
            if let Some(r) = reusable.and_then(|c| c.records.get(&s.stimulus_id)) {
                if r.source_id == s.source_id {
                    return Ok(r.clone());
                }
            }
            let b = extract_bundle(s, backends, probe)?;
            let to_tensor = |t: Option<FeatureTensor>| t.expect("extract_bundle fills every component");
            Ok(FeatureRecord {
                stimulus_id: s.stimulus_id.clone(),
                source_id: s.source_id.clone(),
                backends: versions.clone(),
                f_g: to_tensor(b.f_g),
                f_h: to_tensor(b.f_h),
                f_i: b.f_i.expect("extract_bundle fills f_i"),
                f_s: to_tensor(b.f_s),
                warnings: b.warnings,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let mut cache = FeatureCache::new(&backends.name, versions);
    cache.records = records.into_iter().map(|r| (r.stimulus_id.clone(), r)).collect();
    Ok(cache)
}
