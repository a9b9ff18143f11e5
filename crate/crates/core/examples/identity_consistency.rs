//! Identity consistency of a few stimuli under the drifting stub face
//! pipeline: longer clips drift further from the portrait.

use evaltalker::dataset::{Difficulty, Stimulus};
use evaltalker::model::stub::stub_faces;
use evaltalker::model::{identity_consistency, sample_frames, ManifestProbe, MediaProbe, StubDims};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let faces = stub_faces(11, StubDims::default());
    for (n, subjects, duration_s) in [(1, 1, 2.0), (2, 2, 4.5), (3, 3, 8.0)] {
        let stim = Stimulus {
            stimulus_id: format!("clip{n}"),
            source_id: format!("src{n}"),
            video_uri: format!("clip{n}.mp4"),
            audio_uri: format!("clip{n}.wav"),
            source_image_uri: format!("clip{n}.png"),
            generator_label: "G1".into(),
            difficulty: Difficulty::Medium,
            subject_count: subjects,
            duration_s,
        };
        let samples = sample_frames(&stim, &ManifestProbe.probe(&stim)?)?;
        let score = identity_consistency(&faces, &stim, &samples, subjects as usize)?;
        println!(
            "{}: {subjects} subjects, {} frames, consistency {score:.4}",
            stim.stimulus_id,
            samples.sampled()
        );
    }
    Ok(())
}
