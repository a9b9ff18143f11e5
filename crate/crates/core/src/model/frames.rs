use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dataset::Stimulus;

/// One element of a sampled sequence. Index 0 is the source portrait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: usize,
    /// Presentation time in the video; `None` for the reference portrait.
    pub time_s: Option<f64>,
    pub uri: String,
}

impl Frame {
    pub fn is_reference(&self) -> bool {
        self.time_s.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSampleSet {
    pub stimulus_id: String,
    /// `frames[0]` is the reference portrait, `frames[1..=L]` video frames at 1 fps.
    pub frames: Vec<Frame>,
}

impl FrameSampleSet {
    /// Number of sampled video frames, excluding the reference.
    pub fn sampled(&self) -> usize {
        self.frames.len().saturating_sub(1)
    }

    pub fn reference(&self) -> &Frame {
        &self.frames[0]
    }

    pub fn video_frames(&self) -> &[Frame] {
        &self.frames[1..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediaInfo {
    pub video_duration_s: f64,
    pub audio_duration_s: Option<f64>,
}

/// Source of container-level media facts. Decoding is left to backends.
pub trait MediaProbe: Send + Sync {
    fn probe(&self, stimulus: &Stimulus) -> Result<MediaInfo, ModelError>;
}

/// Takes durations from the manifest instead of opening the files.
#[derive(Debug, Clone, Copy, Default)]
pub struct ManifestProbe;

impl MediaProbe for ManifestProbe {
    fn probe(&self, stimulus: &Stimulus) -> Result<MediaInfo, ModelError> {
        if !(stimulus.duration_s.is_finite() && stimulus.duration_s > 0.0) {
            return Err(ModelError::Media {
                stimulus_id: stimulus.stimulus_id.clone(),
                message: format!("undecodable duration {}", stimulus.duration_s),
            });
        }
        Ok(MediaInfo {
            video_duration_s: stimulus.duration_s,
            audio_duration_s: None,
        })
    }
}

/// Sample one frame per second at t = 0, 1, ..., floor(duration) - 1 and
/// prepend the source portrait as frame 0.
pub fn sample_frames(stimulus: &Stimulus, info: &MediaInfo) -> Result<FrameSampleSet, ModelError> {
    let duration = info.video_duration_s;
    if !duration.is_finite() || duration < 1.0 {
        return Err(ModelError::Media {
            stimulus_id: stimulus.stimulus_id.clone(),
            message: format!("video of {duration} s is shorter than one sampling interval"),
        });
    }
    let count = duration.floor() as usize;
    let mut frames = Vec::with_capacity(count + 1);
    frames.push(Frame {
        index: 0,
        time_s: None,
        uri: stimulus.source_image_uri.clone(),
    });
    frames.extend((0..count).map(|i| Frame {
        index: i + 1,
        time_s: Some(i as f64),
        uri: stimulus.video_uri.clone(),
    }));
    Ok(FrameSampleSet {
        stimulus_id: stimulus.stimulus_id.clone(),
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Difficulty;

    fn stim(duration_s: f64) -> Stimulus {
        Stimulus {
            stimulus_id: "x".into(),
            source_id: "s".into(),
            video_uri: "v.mp4".into(),
            audio_uri: "a.wav".into(),
            source_image_uri: "p.png".into(),
            generator_label: "DR".into(),
            difficulty: Difficulty::Easy,
            subject_count: 1,
            duration_s,
        }
    }

    fn sample(d: f64) -> Result<FrameSampleSet, ModelError> {
        let s = stim(d);
        sample_frames(&s, &MediaInfo { video_duration_s: d, audio_duration_s: None })
    }

    #[test]
    fn ten_point_four_seconds() {
        let set = sample(10.4).unwrap();
        assert_eq!(set.sampled(), 10);
        assert_eq!(set.frames.len(), 11);
        assert!(set.reference().is_reference());
        assert_eq!(set.reference().uri, "p.png");
        assert_eq!(set.frames[10].time_s, Some(9.0));
    }

    #[test]
    fn boundaries() {
        assert!(sample(0.5).is_err());
        assert_eq!(sample(1.0).unwrap().sampled(), 1);
        assert!(ManifestProbe.probe(&stim(0.0)).is_err());
    }
}
