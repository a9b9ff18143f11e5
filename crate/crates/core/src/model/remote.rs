//! Adapter shells for externally hosted backbones.
//!
//! Each backbone is reached through a [`Transport`] that posts one JSON
//! request and receives one JSON response. Requests carry a `task` tag:
//!
//! | task          | request fields        | response                         |
//! |---------------|-----------------------|----------------------------------|
//! | `global`      | `video`               | `{"shape": [T, C], "features"}`  |
//! | `human`       | `frame`               | `{"dim", "features"}`            |
//! | `face_locate` | `frame`               | `{"boxes": [{x, y, w, h}, ...]}` |
//! | `face_embed`  | `frame`, `box`        | `{"dim", "features"}`            |
//! | `sync`        | `video`, `audio`      | `{"dim", "features"}`            |
//!
//! `frame` is `{"uri", "time_s"}` with `time_s: null` for the source
//! portrait. `features` is a flat float array; `dim` (or the product of
//! `shape`) must equal its length. The sync response is the last hidden
//! state of the multimodal model, pooled by the server to one vector.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backends::{
    AlignedFace, BackendInfo, BackendSet, BoundingBox, FacePipeline, GlobalQualityExtractor,
    HumanFeatureExtractor, SyncExtractor,
};
use super::features::FeatureTensor;
use super::frames::Frame;
use super::ModelError;
use crate::dataset::Stimulus;

pub trait Transport: Send + Sync {
    fn call(&self, endpoint: &str, request: &Value) -> Result<Value, ModelError>;
}

/// JSON over HTTP POST.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for HttpTransport {
    fn call(&self, endpoint: &str, request: &Value) -> Result<Value, ModelError> {
        let remote = |e: ureq::Error| ModelError::Remote {
            endpoint: endpoint.to_string(),
            message: e.to_string(),
        };
        self.agent
            .post(endpoint)
            .send_json(request)
            .map_err(remote)?
            .body_mut()
            .read_json::<Value>()
            .map_err(remote)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub endpoint: String,
    pub request: Value,
    pub response: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureFile {
    pub exchanges: Vec<Exchange>,
}

/// Replays recorded exchanges; any unrecorded request is an error.
#[derive(Debug, Clone, Default)]
pub struct FixtureTransport {
    fixtures: FixtureFile,
}

impl FixtureTransport {
    pub fn new(fixtures: FixtureFile) -> Self {
        Self { fixtures }
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path).map_err(|e| ModelError::Io(path.display().to_string(), e))?;
        let fixtures = serde_json::from_str(&text)
            .map_err(|e| ModelError::Format(format!("{}: {e}", path.display())))?;
        Ok(Self { fixtures })
    }
}

impl Transport for FixtureTransport {
    fn call(&self, endpoint: &str, request: &Value) -> Result<Value, ModelError> {
        self.fixtures
            .exchanges
            .iter()
            .find(|x| x.endpoint == endpoint && &x.request == request)
            .map(|x| x.response.clone())
            .ok_or_else(|| ModelError::Remote {
                endpoint: endpoint.to_string(),
                message: format!("no recorded response for {request}"),
            })
    }
}

/// Forwards to an inner transport and keeps every exchange, for capturing fixtures.
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<Vec<Exchange>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn fixtures(&self) -> FixtureFile {
        FixtureFile {
            exchanges: self.log.lock().expect("recording lock").clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let text = serde_json::to_string_pretty(&self.fixtures()).expect("fixtures serialize");
        fs::write(path, text).map_err(|e| ModelError::Io(path.display().to_string(), e))
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn call(&self, endpoint: &str, request: &Value) -> Result<Value, ModelError> {
        let response = self.inner.call(endpoint, request)?;
        self.log.lock().expect("recording lock").push(Exchange {
            endpoint: endpoint.to_string(),
            request: request.clone(),
            response: response.clone(),
        });
        Ok(response)
    }
}

/// Endpoints and version labels of the four hosted backbones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub global: Option<RemoteEndpoint>,
    pub human: Option<RemoteEndpoint>,
    pub face: Option<RemoteEndpoint>,
    pub sync: Option<RemoteEndpoint>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_timeout_s() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEndpoint {
    pub url: String,
    /// Reported in feature caches; bump it when the hosted weights change.
    pub version: String,
}

#[derive(Debug, Deserialize)]
struct VectorResponse {
    #[serde(default)]
    dim: Option<usize>,
    #[serde(default)]
    shape: Option<Vec<usize>>,
    features: Vec<f64>,
}

fn parse_vector(endpoint: &str, value: Value) -> Result<FeatureTensor, ModelError> {
    let bad = |message: String| ModelError::Remote {
        endpoint: endpoint.to_string(),
        message,
    };
    let resp: VectorResponse =
        serde_json::from_value(value).map_err(|e| bad(format!("malformed response: {e}")))?;
    let shape = match (resp.shape, resp.dim) {
        (Some(shape), _) => shape,
        (None, Some(dim)) => vec![dim],
        (None, None) => vec![resp.features.len()],
    };
    let t = FeatureTensor::new(shape, resp.features).map_err(|e| bad(e.to_string()))?;
    if !t.is_finite() {
        return Err(bad("non-finite feature value".into()));
    }
    Ok(t)
}

fn frame_json(frame: &Frame) -> Value {
    json!({ "uri": frame.uri, "time_s": frame.time_s })
}

/// One hosted backbone reached through a transport.
#[derive(Clone)]
pub struct RemoteBackbone {
    pub id: String,
    pub endpoint: RemoteEndpoint,
    pub transport: Arc<dyn Transport>,
}

impl RemoteBackbone {
    fn info(&self) -> BackendInfo {
        BackendInfo::new(self.id.clone(), self.endpoint.version.clone())
    }

    fn call(&self, request: Value) -> Result<Value, ModelError> {
        self.transport.call(&self.endpoint.url, &request)
    }
}

pub struct RemoteGlobal(pub RemoteBackbone);

impl GlobalQualityExtractor for RemoteGlobal {
    fn info(&self) -> BackendInfo {
        self.0.info()
    }

    fn extract(&self, stimulus: &Stimulus) -> Result<FeatureTensor, ModelError> {
        let v = self.0.call(json!({ "task": "global", "video": stimulus.video_uri }))?;
        parse_vector(&self.0.endpoint.url, v)
    }
}

pub struct RemoteHuman(pub RemoteBackbone);

impl HumanFeatureExtractor for RemoteHuman {
    fn info(&self) -> BackendInfo {
        self.0.info()
    }

    fn extract_frame(&self, _stimulus: &Stimulus, frame: &Frame) -> Result<Vec<f64>, ModelError> {
        let v = self.0.call(json!({ "task": "human", "frame": frame_json(frame) }))?;
        Ok(parse_vector(&self.0.endpoint.url, v)?.data)
    }
}

pub struct RemoteFaces(pub RemoteBackbone);

#[derive(Debug, Deserialize)]
struct BoxesResponse {
    boxes: Vec<BoundingBox>,
}

impl FacePipeline for RemoteFaces {
    fn info(&self) -> BackendInfo {
        self.0.info()
    }

    fn locate(&self, _stimulus: &Stimulus, frame: &Frame) -> Result<Vec<BoundingBox>, ModelError> {
        let v = self.0.call(json!({ "task": "face_locate", "frame": frame_json(frame) }))?;
        let resp: BoxesResponse = serde_json::from_value(v).map_err(|e| ModelError::Remote {
            endpoint: self.0.endpoint.url.clone(),
            message: format!("malformed response: {e}"),
        })?;
        Ok(resp.boxes)
    }

    /// Alignment runs server-side together with embedding.
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

    fn embed(&self, _stimulus: &Stimulus, face: &AlignedFace) -> Result<Vec<f64>, ModelError> {
        let v = self.0.call(json!({
            "task": "face_embed",
            "frame": frame_json(&face.frame),
            "box": face.bbox,
        }))?;
        Ok(parse_vector(&self.0.endpoint.url, v)?.data)
    }
}

pub struct RemoteSync(pub RemoteBackbone);

impl SyncExtractor for RemoteSync {
    fn info(&self) -> BackendInfo {
        self.0.info()
    }

    fn extract(&self, stimulus: &Stimulus) -> Result<Vec<f64>, ModelError> {
        let v = self.0.call(json!({
            "task": "sync",
            "video": stimulus.video_uri,
            "audio": stimulus.audio_uri,
        }))?;
        Ok(parse_vector(&self.0.endpoint.url, v)?.data)
    }
}

fn require<'a>(slot: &'a Option<RemoteEndpoint>, name: &str) -> Result<&'a RemoteEndpoint, ModelError> {
    slot.as_ref().ok_or_else(|| ModelError::BackendMissing {
        backend: format!("real/{name}"),
        reason: format!("no endpoint configured for the {name} backbone"),
    })
}

/// The `real` set over any transport.
pub fn remote_backends_with(
    cfg: &RemoteConfig,
    transport: Arc<dyn Transport>,
) -> Result<BackendSet, ModelError> {
    let backbone = |id: &str, ep: &RemoteEndpoint| RemoteBackbone {
        id: id.to_string(),
        endpoint: ep.clone(),
        transport: transport.clone(),
    };
    Ok(BackendSet {
        name: "real".into(),
        global: Arc::new(RemoteGlobal(backbone("remote-global", require(&cfg.global, "global")?))),
        human: Arc::new(RemoteHuman(backbone("remote-human", require(&cfg.human, "human")?))),
        face: Arc::new(RemoteFaces(backbone("remote-face", require(&cfg.face, "face")?))),
        sync: Arc::new(RemoteSync(backbone("remote-sync", require(&cfg.sync, "sync")?))),
    })
}

/// The `real` set over HTTP.
pub fn remote_backends(cfg: &RemoteConfig) -> Result<BackendSet, ModelError> {
    let transport = Arc::new(HttpTransport::new(Duration::from_secs(cfg.timeout_s)));
    remote_backends_with(cfg, transport)
}

/// Endpoint URL -> configured version, for diagnostics.
pub fn endpoint_versions(cfg: &RemoteConfig) -> BTreeMap<String, String> {
    [&cfg.global, &cfg.human, &cfg.face, &cfg.sync]
        .into_iter()
        .flatten()
        .map(|e| (e.url.clone(), e.version.clone()))
        .collect()
}
