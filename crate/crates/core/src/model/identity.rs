//! Identity consistency between reference-portrait faces and video faces.

use super::backends::{BoundingBox, FacePipeline};
use super::frames::FrameSampleSet;
use super::ModelError;
use crate::dataset::Stimulus;

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Average of an N x L similarity grid. `None` (face not found) counts as 0
/// but stays in the denominator.
pub fn average_similarity(grid: &[Vec<Option<f64>>]) -> f64 {
    let terms: usize = grid.iter().map(Vec::len).sum();
    if terms == 0 {
        return 0.0;
    }
    let sum: f64 = grid.iter().flatten().map(|s| s.unwrap_or(0.0)).sum();
    (sum / terms as f64).clamp(-1.0, 1.0)
}

fn squared_distance(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.centroid();
    let (bx, by) = b.centroid();
    (ax - bx).powi(2) + (ay - by).powi(2)
}

/// Greedy nearest-centroid assignment of `current` boxes to `reference` boxes.
///
/// The globally closest unmatched pair is taken first; equal distances go to
/// the pair whose reference box has the smaller x, then the smaller current x.
/// Returns, per reference box, the index of its matched current box.
pub fn match_faces(reference: &[BoundingBox], current: &[BoundingBox]) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(reference.len() * current.len());
    for (r, rb) in reference.iter().enumerate() {
        for (c, cb) in current.iter().enumerate() {
            pairs.push((squared_distance(rb, cb), r, c));
        }
    }
    pairs.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(reference[a.1].x.total_cmp(&reference[b.1].x))
            .then(current[a.2].x.total_cmp(&current[b.2].x))
    });
    let mut assigned = vec![None; reference.len()];
    let mut used = vec![false; current.len()];
    for (_, r, c) in pairs {
        if assigned[r].is_none() && !used[c] {
            assigned[r] = Some(c);
            used[c] = true;
        }
    }
    assigned
}

/// Per-subject, per-frame similarity grid (N rows, L columns).
///
/// The reference frame must contain at least one face. Subjects are the
/// `subject_count` largest reference faces, ordered left to right; declared
/// subjects with no reference face get an all-`None` row.
pub fn similarity_grid(
    pipeline: &dyn FacePipeline,
    stimulus: &Stimulus,
    samples: &FrameSampleSet,
    subject_count: usize,
) -> Result<Vec<Vec<Option<f64>>>, ModelError> {
    if subject_count == 0 {
        return Err(ModelError::Shape("subject_count must be at least 1".into()));
    }
    let reference = samples.reference();
    let mut ref_boxes = pipeline.locate(stimulus, reference)?;
    if ref_boxes.is_empty() {
        return Err(ModelError::NoReferenceFace(stimulus.stimulus_id.clone()));
    }
    ref_boxes.sort_by(|a, b| b.area().total_cmp(&a.area()));
    ref_boxes.truncate(subject_count);
    ref_boxes.sort_by(|a, b| a.x.total_cmp(&b.x));

    let ref_embeddings = ref_boxes
        .iter()
        .map(|b| {
            let aligned = pipeline.align(stimulus, reference, b)?;
            pipeline.embed(stimulus, &aligned)
        })
        .collect::<Result<Vec<_>, ModelError>>()?;

    let frames = samples.video_frames();
    let mut grid = vec![vec![None; frames.len()]; subject_count];
    for (col, frame) in frames.iter().enumerate() {
        let boxes = pipeline.locate(stimulus, frame)?;
        for (subject, matched) in match_faces(&ref_boxes, &boxes).into_iter().enumerate() {
            if let Some(c) = matched {
                let aligned = pipeline.align(stimulus, frame, &boxes[c])?;
                let emb = pipeline.embed(stimulus, &aligned)?;
                grid[subject][col] = Some(cosine_similarity(&ref_embeddings[subject], &emb));
            }
        }
    }
    Ok(grid)
}

/// Mean cosine similarity between each subject's reference face and that
/// subject's face in every sampled frame, over N subjects and L frames.
pub fn identity_consistency(
    pipeline: &dyn FacePipeline,
    stimulus: &Stimulus,
    samples: &FrameSampleSet,
    subject_count: usize,
) -> Result<f64, ModelError> {
    let grid = similarity_grid(pipeline, stimulus, samples, subject_count)?;
    Ok(average_similarity(&grid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64) -> BoundingBox {
        BoundingBox { x, y, w: 10.0, h: 10.0 }
    }

    #[test]
    fn two_by_two_grid() {
        let grid = vec![vec![Some(1.0), Some(1.0)], vec![Some(0.5), Some(0.5)]];
        assert_eq!(average_similarity(&grid), 0.75);
    }

    #[test]
    fn missing_face_counts_as_zero() {
        let grid = vec![vec![Some(1.0), None]];
        assert_eq!(average_similarity(&grid), 0.5);
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
        assert!((cosine_similarity(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&[1.0, 0.0], &[-3.0, 0.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn matching_follows_positions() {
        let reference = [bx(0.0, 0.0), bx(100.0, 0.0)];
        let current = [bx(98.0, 3.0), bx(4.0, -2.0), bx(300.0, 0.0)];
        assert_eq!(match_faces(&reference, &current), vec![Some(1), Some(0)]);
        assert_eq!(match_faces(&reference, &[bx(90.0, 0.0)]), vec![None, Some(0)]);
    }

    #[test]
    fn equidistant_tie_goes_to_left_reference() {
        let reference = [bx(0.0, 0.0), bx(100.0, 0.0)];
        let current = [bx(50.0, 0.0)];
        assert_eq!(match_faces(&reference, &current), vec![Some(0), None]);
    }
}
