//! Deterministic stand-ins for the pretrained backbones.
//!
//! Hash stubs derive every value from a ChaCha8 stream seeded by
//! SHA-256(backend id, seed, stimulus id, ...), so outputs depend only on
//! those keys. The oracle set fills the global feature with the stimulus MOS,
//! giving the training harness a signal that outweighs the noise branches.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::backends::{
    AlignedFace, BackendInfo, BackendSet, BoundingBox, FacePipeline, GlobalQualityExtractor,
    HumanFeatureExtractor, StubDims, SyncExtractor,
};
use super::features::FeatureTensor;
use super::frames::Frame;
use super::ModelError;
use crate::dataset::Stimulus;

const STUB_VERSION: &str = "1";

fn keyed_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(seed)
}

/// `len` values uniform in [-1, 1), fixed by the key parts.
pub fn hash_vector(len: usize, parts: &[&[u8]]) -> Vec<f64> {
    let mut rng = keyed_rng(parts);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

#[derive(Debug, Clone)]
pub struct HashGlobal {
    pub seed: u64,
    pub rows: usize,
    pub dim: usize,
}

impl GlobalQualityExtractor for HashGlobal {
    fn info(&self) -> BackendInfo {
        BackendInfo::new("hash-global", STUB_VERSION)
    }

    fn extract(&self, stimulus: &Stimulus) -> Result<FeatureTensor, ModelError> {
        let data = hash_vector(
            self.rows * self.dim,
            &[b"global", &self.seed.to_le_bytes(), stimulus.stimulus_id.as_bytes()],
        );
        FeatureTensor::new(vec![self.rows, self.dim], data)
    }
}

#[derive(Debug, Clone)]
pub struct HashHuman {
    pub seed: u64,
    pub dim: usize,
}

impl HumanFeatureExtractor for HashHuman {
    fn info(&self) -> BackendInfo {
        BackendInfo::new("hash-human", STUB_VERSION)
    }

    fn extract_frame(&self, stimulus: &Stimulus, frame: &Frame) -> Result<Vec<f64>, ModelError> {
        Ok(hash_vector(
            self.dim,
            &[
                b"human",
                &self.seed.to_le_bytes(),
                stimulus.stimulus_id.as_bytes(),
                &(frame.index as u64).to_le_bytes(),
            ],
        ))
    }
}

#[derive(Debug, Clone)]
pub struct HashSync {
    pub seed: u64,
    pub dim: usize,
}

impl SyncExtractor for HashSync {
    fn info(&self) -> BackendInfo {
        BackendInfo::new("hash-sync", STUB_VERSION)
    }

    fn extract(&self, stimulus: &Stimulus) -> Result<Vec<f64>, ModelError> {
        Ok(hash_vector(
            self.dim,
            &[b"sync", &self.seed.to_le_bytes(), stimulus.stimulus_id.as_bytes()],
        ))
    }
}

/// Places one face per declared subject at a fixed horizontal slot with
/// small keyed jitter. Embeddings are a per-(source, subject) identity
/// vector plus a per-stimulus amount of frame-keyed drift.
#[derive(Debug, Clone)]
pub struct StubFaces {
    pub seed: u64,
    pub dim: usize,
    /// Upper bound on the drift magnitude added to video-frame embeddings.
    pub max_drift: f64,
    /// Probability that a subject's face is not found in a video frame.
    pub drop_rate: f64,
}

const SLOT_WIDTH: f64 = 200.0;

impl StubFaces {
    fn frame_key(frame: &Frame) -> [u8; 8] {
        (frame.index as u64).to_le_bytes()
    }
}

impl FacePipeline for StubFaces {
    fn info(&self) -> BackendInfo {
        BackendInfo::new("stub-faces", STUB_VERSION)
    }

    fn locate(&self, stimulus: &Stimulus, frame: &Frame) -> Result<Vec<BoundingBox>, ModelError> {
        let mut rng = keyed_rng(&[
            b"locate",
            &self.seed.to_le_bytes(),
            stimulus.stimulus_id.as_bytes(),
            &Self::frame_key(frame),
        ]);
        let mut boxes = Vec::new();
        for n in 0..stimulus.subject_count {
            let jitter_x: f64 = rng.random_range(-5.0..5.0);
            let jitter_y: f64 = rng.random_range(-5.0..5.0);
            let dropped = rng.random_bool(self.drop_rate.clamp(0.0, 1.0));
            if dropped && !frame.is_reference() {
                continue;
            }
            boxes.push(BoundingBox {
                x: n as f64 * SLOT_WIDTH + 60.0 + jitter_x,
                y: 50.0 + jitter_y,
                w: 80.0,
                h: 80.0,
            });
        }
        Ok(boxes)
    }

    fn align(
        &self,
        _stimulus: &Stimulus,
        frame: &Frame,
        bbox: &BoundingBox,
    ) -> Result<AlignedFace, ModelError> {
        Ok(AlignedFace {
            frame: frame.clone(),
            bbox: *bbox,
            payload: Vec::new(),
        })
    }

    fn embed(&self, stimulus: &Stimulus, face: &AlignedFace) -> Result<Vec<f64>, ModelError> {
        let subject = (face.bbox.centroid().0 / SLOT_WIDTH).floor().max(0.0) as u64;
        let identity = hash_vector(
            self.dim,
            &[
                b"identity",
                &self.seed.to_le_bytes(),
                stimulus.source_id.as_bytes(),
                &subject.to_le_bytes(),
            ],
        );
        if face.frame.is_reference() {
            return Ok(unit(identity));
        }
        let drift = self.max_drift
            * hash_vector(1, &[b"drift", &self.seed.to_le_bytes(), stimulus.stimulus_id.as_bytes()])[0]
                .abs();
        let noise = hash_vector(
            self.dim,
            &[
                b"frame-noise",
                &self.seed.to_le_bytes(),
                stimulus.stimulus_id.as_bytes(),
                &subject.to_le_bytes(),
                &Self::frame_key(&face.frame),
            ],
        );
        let identity = unit(identity);
        let noise = unit(noise);
        Ok(unit(
            identity
                .iter()
                .zip(&noise)
                .map(|(a, b)| a + drift * b)
                .collect(),
        ))
    }
}

/// Global extractor whose every channel is the stimulus MOS.
#[derive(Debug, Clone)]
pub struct OracleGlobal {
    pub inner: HashGlobal,
    pub mos: Arc<BTreeMap<String, f64>>,
}

impl GlobalQualityExtractor for OracleGlobal {
    fn info(&self) -> BackendInfo {
        BackendInfo::new("oracle-global", STUB_VERSION)
    }

    fn extract(&self, stimulus: &Stimulus) -> Result<FeatureTensor, ModelError> {
        let mos = *self
            .mos
            .get(&stimulus.stimulus_id)
            .ok_or_else(|| ModelError::BackendMissing {
                backend: "oracle".into(),
                reason: format!("no MOS for stimulus `{}`", stimulus.stimulus_id),
            })?;
        let mut t = self.inner.extract(stimulus)?;
        let c = t.channels();
        for row in t.data.chunks_exact_mut(c) {
            row.iter_mut().for_each(|v| *v = mos);
        }
        Ok(t)
    }
}

pub fn stub_faces(seed: u64, dims: StubDims) -> StubFaces {
    StubFaces {
        seed,
        dim: dims.face,
        max_drift: 0.6,
        drop_rate: 0.02,
    }
}

/// The `stub` set: pure noise features.
pub fn hash_backends(seed: u64, dims: StubDims) -> BackendSet {
    BackendSet {
        name: "stub".into(),
        global: Arc::new(HashGlobal {
            seed,
            rows: dims.global_rows,
            dim: dims.global,
        }),
        human: Arc::new(HashHuman {
            seed,
            dim: dims.human,
        }),
        face: Arc::new(stub_faces(seed, dims)),
        sync: Arc::new(HashSync {
            seed,
            dim: dims.sync,
        }),
    }
}

/// The `oracle` set: hash stubs with MOS planted in the global feature.
pub fn oracle_backends(seed: u64, dims: StubDims, mos: BTreeMap<String, f64>) -> BackendSet {
    let mut set = hash_backends(seed, dims);
    set.name = "oracle".into();
    set.global = Arc::new(OracleGlobal {
        inner: HashGlobal {
            seed,
            rows: dims.global_rows,
            dim: dims.global,
        },
        mos: Arc::new(mos),
    });
    set
}
