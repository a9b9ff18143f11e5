//! Extractor interfaces and the registry that selects implementations.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::features::FeatureTensor;
use super::frames::Frame;
use super::remote::RemoteConfig;
use super::ModelError;
use crate::dataset::Stimulus;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BackendInfo {
    pub id: String,
    pub version: String,
}

impl BackendInfo {
    pub fn new(id: impl Into<String>, version: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            version: version.into(),
        }
    }
}

impl fmt::Display for BackendInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.id, self.version)
    }
}

/// Spatio-temporal quality representation of the whole video.
pub trait GlobalQualityExtractor: Send + Sync {
    fn info(&self) -> BackendInfo;
    fn extract(&self, stimulus: &Stimulus) -> Result<FeatureTensor, ModelError>;
}

/// Per-frame human body representation.
pub trait HumanFeatureExtractor: Send + Sync {
    fn info(&self) -> BackendInfo;
    fn extract_frame(&self, stimulus: &Stimulus, frame: &Frame) -> Result<Vec<f64>, ModelError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn centroid(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }
}

/// A face crop after landmark alignment, ready for embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedFace {
    pub frame: Frame,
    pub bbox: BoundingBox,
    /// Backend-specific payload (aligned pixels, landmarks, ...). Stubs leave it empty.
    #[serde(default)]
    pub payload: Vec<f32>,
}

/// Body segmentation + face localization, alignment and embedding.
pub trait FacePipeline: Send + Sync {
    fn info(&self) -> BackendInfo;
    /// Face boxes found in a frame, in any order.
    fn locate(&self, stimulus: &Stimulus, frame: &Frame) -> Result<Vec<BoundingBox>, ModelError>;
    fn align(
        &self,
        stimulus: &Stimulus,
        frame: &Frame,
        bbox: &BoundingBox,
    ) -> Result<AlignedFace, ModelError>;
    fn embed(&self, stimulus: &Stimulus, face: &AlignedFace) -> Result<Vec<f64>, ModelError>;
}

/// Audio-visual synchrony features from a multimodal model's last hidden state.
pub trait SyncExtractor: Send + Sync {
    fn info(&self) -> BackendInfo;
    fn extract(&self, stimulus: &Stimulus) -> Result<Vec<f64>, ModelError>;
}

/// One implementation of each of the four interfaces.
#[derive(Clone)]
pub struct BackendSet {
    pub name: String,
    pub global: Arc<dyn GlobalQualityExtractor>,
    pub human: Arc<dyn HumanFeatureExtractor>,
    pub face: Arc<dyn FacePipeline>,
    pub sync: Arc<dyn SyncExtractor>,
}

impl fmt::Debug for BackendSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendSet")
            .field("name", &self.name)
            .field("versions", &self.versions())
            .finish()
    }
}

impl BackendSet {
    pub fn versions(&self) -> BTreeMap<String, BackendInfo> {
        BTreeMap::from([
            ("global".to_string(), self.global.info()),
            ("human".to_string(), self.human.info()),
            ("face".to_string(), self.face.info()),
            ("sync".to_string(), self.sync.info()),
        ])
    }
}

/// Feature dimensions declared by the stub backends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StubDims {
    /// Temporal rows of the global feature map before pooling.
    pub global_rows: usize,
    pub global: usize,
    pub human: usize,
    pub sync: usize,
    /// Embedding size of the face stub.
    pub face: usize,
}

impl Default for StubDims {
    fn default() -> Self {
        Self {
            global_rows: 4,
            global: 16,
            human: 16,
            sync: 16,
            face: 32,
        }
    }
}

/// Everything a registry constructor may need.
#[derive(Debug, Clone, Default)]
pub struct BackendOptions {
    pub seed: u64,
    pub dims: StubDims,
    /// stimulus_id -> MOS, required by the oracle set.
    pub mos: Option<BTreeMap<String, f64>>,
    pub remote: Option<RemoteConfig>,
}

type Constructor = Box<dyn Fn(&BackendOptions) -> Result<BackendSet, ModelError> + Send + Sync>;

/// Named backend-set constructors.
pub struct BackendRegistry {
    entries: BTreeMap<String, Constructor>,
}

impl fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// `stub`, `oracle` and `real`.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register("stub", |o| Ok(super::stub::hash_backends(o.seed, o.dims)));
        r.register("oracle", |o| {
            let mos = o.mos.clone().ok_or_else(|| ModelError::BackendMissing {
                backend: "oracle".into(),
                reason: "the oracle set needs a MOS table".into(),
            })?;
            Ok(super::stub::oracle_backends(o.seed, o.dims, mos))
        });
        r.register("real", |o| {
            let cfg = o.remote.clone().ok_or_else(|| ModelError::BackendMissing {
                backend: "real".into(),
                reason: "no remote backbone endpoints configured".into(),
            })?;
            super::remote::remote_backends(&cfg)
        });
        r
    }

    pub fn register(
        &mut self,
        name: &str,
        ctor: impl Fn(&BackendOptions) -> Result<BackendSet, ModelError> + Send + Sync + 'static,
    ) {
        self.entries.insert(name.to_string(), Box::new(ctor));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn build(&self, name: &str, options: &BackendOptions) -> Result<BackendSet, ModelError> {
        let ctor = self.entries.get(name).ok_or_else(|| ModelError::BackendMissing {
            backend: name.to_string(),
            reason: format!(
                "not registered (known: {})",
                self.names().collect::<Vec<_>>().join(", ")
            ),
        })?;
        ctor(options)
    }
}
