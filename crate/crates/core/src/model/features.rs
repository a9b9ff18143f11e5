use serde::{Deserialize, Serialize};

use super::ModelError;

/// Dense feature tensor, row-major, last axis is the channel axis.
///
/// A scalar has `shape == []`, a plain vector `shape == [C]`, a per-clip
/// feature map e.g. `[T, C]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ModelError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ModelError::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn channels(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Global average pooling: mean over every axis except the channel axis.
    /// Scalars and vectors pool to themselves.
    pub fn gap(&self) -> Vec<f64> {
        if self.shape.len() <= 1 {
            return self.data.clone();
        }
        let c = self.channels();
        if c == 0 {
            return Vec::new();
        }
        let rows = self.data.len() / c;
        let mut out = vec![0.0; c];
        for row in self.data.chunks_exact(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= rows as f64);
        out
    }
}

/// The four per-stimulus features that feed the regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub stimulus_id: String,
    /// Global video quality.
    pub f_g: Option<FeatureTensor>,
    /// Human body features averaged over sampled frames.
    pub f_h: Option<FeatureTensor>,
    /// Identity consistency in [-1, 1].
    pub f_i: Option<f64>,
    /// Audio-visual synchrony.
    pub f_s: Option<FeatureTensor>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FeatureBundle {
    pub fn fuse(&self) -> Result<Vec<f64>, ModelError> {
        fuse(self)
    }
}

/// Pool each component and concatenate in the order G, H, I, S.
pub fn fuse(bundle: &FeatureBundle) -> Result<Vec<f64>, ModelError> {
    let missing = |name: &'static str| ModelError::MissingComponent {
        stimulus_id: bundle.stimulus_id.clone(),
        component: name,
    };
    let g = bundle.f_g.as_ref().ok_or_else(|| missing("f_g"))?;
    let h = bundle.f_h.as_ref().ok_or_else(|| missing("f_h"))?;
    let i = bundle.f_i.ok_or_else(|| missing("f_i"))?;
    let s = bundle.f_s.as_ref().ok_or_else(|| missing("f_s"))?;

    let mut fused = g.gap();
    fused.extend(h.gap());
    fused.extend(FeatureTensor::scalar(i).gap());
    fused.extend(s.gap());
    if fused.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite(bundle.stimulus_id.clone()));
    }
    Ok(fused)
}
