//! Two fully connected layers mapping the fused feature to a score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

pub const DEFAULT_HIDDEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `q = w2 . act(W1 x + b1) + b2`. `w1` is row-major, `hidden x input_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl RegressorParams {
    pub fn zeros(input_dim: usize, hidden: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            hidden,
            activation,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
    pub fn init(input_dim: usize, hidden: usize, activation: Activation, seed: u64) -> Result<Self, ModelError> {
        if input_dim == 0 || hidden == 0 {
            return Err(ModelError::Shape(format!(
                "regressor needs non-zero dimensions, got input {input_dim}, hidden {hidden}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(input_dim, hidden, activation);
        let a1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        p.w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..a1));
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        p.w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..a2));
        Ok(p)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let ok = self.w1.len() == self.hidden * self.input_dim
            && self.b1.len() == self.hidden
            && self.w2.len() == self.hidden;
        if ok {
            Ok(())
        } else {
            Err(ModelError::Shape(format!(
                "inconsistent regressor: input {}, hidden {}, |W1| {}, |b1| {}, |w2| {}",
                self.input_dim,
                self.hidden,
                self.w1.len(),
                self.b1.len(),
                self.w2.len()
            )))
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// All parameters flattened as W1, b1, w2, b2.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.parameter_count());
        v.extend(&self.w1);
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn unflatten(&mut self, v: &[f64]) {
        let (w1, rest) = v.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, rest) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
    }

    fn pre_activations(&self, x: &[f64]) -> Vec<f64> {
        self.w1
            .chunks_exact(self.input_dim)
            .zip(&self.b1)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn forward_unchecked(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let z = self.pre_activations(x);
        let q = z
            .iter()
            .zip(&self.w2)
            .map(|(z, w)| w * self.activation.apply(*z))
            .sum::<f64>()
            + self.b2;
        (q, z)
    }

    /// Accumulates `scale * d q / d theta` into `grad` (flattened layout).
    fn accumulate_output_grad(&self, x: &[f64], z: &[f64], scale: f64, grad: &mut [f64]) {
        let (gw1, rest) = grad.split_at_mut(self.w1.len());
        let (gb1, rest) = rest.split_at_mut(self.hidden);
        let (gw2, gb2) = rest.split_at_mut(self.hidden);
        for j in 0..self.hidden {
            let a = self.activation.apply(z[j]);
            gw2[j] += scale * a;
            let dz = scale * self.w2[j] * self.activation.derivative(z[j]);
            if dz != 0.0 {
                gb1[j] += dz;
                let row = &mut gw1[j * self.input_dim..(j + 1) * self.input_dim];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += dz * v;
                }
            }
        }
        gb2[0] += scale;
    }
}

pub fn predict(fused: &[f64], params: &RegressorParams) -> Result<f64, ModelError> {
    params.check()?;
    if fused.len() != params.input_dim {
        return Err(ModelError::Shape(format!(
            "fused feature has {} values, regressor expects {}",
            fused.len(),
            params.input_dim
        )));
    }
    let (q, _) = params.forward_unchecked(fused);
    if !q.is_finite() {
        return Err(ModelError::Shape("non-finite prediction".into()));
    }
    Ok(q)
}

/// Mean squared error over a batch and its gradient (flattened layout).
pub fn mse_and_gradient(
    params: &RegressorParams,
    inputs: &[Vec<f64>],
    targets: &[f64],
) -> Result<(f64, Vec<f64>), ModelError> {
    params.check()?;
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(ModelError::Shape(format!(
            "{} inputs vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let n = inputs.len() as f64;
    let mut grad = vec![0.0; params.parameter_count()];
    let mut loss = 0.0;
    for (x, &t) in inputs.iter().zip(targets) {
        if x.len() != params.input_dim {
            return Err(ModelError::Shape(format!(
                "input has {} values, regressor expects {}",
                x.len(),
                params.input_dim
            )));
        }
        let (q, z) = params.forward_unchecked(x);
        let r = q - t;
        loss += r * r / n;
        params.accumulate_output_grad(x, &z, 2.0 * r / n, &mut grad);
    }
    Ok((loss, grad))
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Central finite differences of the squared error at one sample.
pub fn numeric_gradient(params: &RegressorParams, fused: &[f64], target: f64, step: f64) -> Result<Vec<f64>, ModelError> {
    let theta = params.flatten();
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(theta.len());
    let loss = |p: &RegressorParams| -> Result<f64, ModelError> {
        let q = predict(fused, p)?;
        Ok((q - target).powi(2))
    };
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + step;
        probe.unflatten(&t);
        let plus = loss(&probe)?;
        t[i] = theta[i] - step;
        probe.unflatten(&t);
        let minus = loss(&probe)?;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Max relative error between a supplied analytic gradient and central
/// finite differences.
pub fn compare_gradient(
    analytic: &[f64],
    params: &RegressorParams,
    fused: &[f64],
    target: f64,
) -> Result<f64, ModelError> {
    let numeric = numeric_gradient(params, fused, target, 1e-5)?;
    if numeric.len() != analytic.len() {
        return Err(ModelError::Shape(format!(
            "gradient has {} entries, expected {}",
            analytic.len(),
            numeric.len()
        )));
    }
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max))
}

/// Max relative error of the analytic squared-error gradient against
/// central differences with step 1e-5.
pub fn gradient_check(params: &RegressorParams, fused: &[f64], target: f64) -> Result<f64, ModelError> {
    let (_, analytic) = mse_and_gradient(params, &[fused.to_vec()], &[target])?;
    compare_gradient(&analytic, params, fused, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_network() {
        let mut p = RegressorParams::zeros(5, 3, Activation::Relu);
        p.b2 = 2.5;
        assert_eq!(predict(&[1.0, -2.0, 3.0, 0.0, 9.0], &p).unwrap(), 2.5);
    }

    #[test]
    fn one_dim_identity() {
        let p = RegressorParams {
            input_dim: 1,
            hidden: 1,
            activation: Activation::Relu,
            w1: vec![1.0],
            b1: vec![0.0],
            w2: vec![1.0],
            b2: 0.0,
        };
        assert_eq!(predict(&[3.0], &p).unwrap(), 3.0);
    }

    #[test]
    fn shape_mismatch() {
        let p = RegressorParams::zeros(4, 2, Activation::Relu);
        assert!(matches!(predict(&[1.0], &p), Err(ModelError::Shape(_))));
        assert!(RegressorParams::init(0, 8, Activation::Relu, 0).is_err());
    }

    #[test]
    fn flatten_round_trip() {
        let p = RegressorParams::init(3, 4, Activation::Relu, 9).unwrap();
        let mut q = RegressorParams::zeros(3, 4, Activation::Relu);
        q.unflatten(&p.flatten());
        assert_eq!(p, q);
    }

    #[test]
    fn zero_gradient_at_minimum() {
        // Identity activation keeps every unit in its linear region.
        let p = RegressorParams::init(3, 4, Activation::Identity, 1).unwrap();
        let x = [0.3, -0.2, 0.9];
        let target = predict(&x, &p).unwrap();
        let (_, g) = mse_and_gradient(&p, &[x.to_vec()], &[target]).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        let n = numeric_gradient(&p, &x, target, 1e-5).unwrap();
        assert!(n.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn corrupted_gradient_fails_check() {
        let p = RegressorParams::init(3, 4, Activation::Relu, 2).unwrap();
        let x = [0.3, -0.2, 0.9];
        let (_, mut g) = mse_and_gradient(&p, &[x.to_vec()], &[1.0]).unwrap();
        assert!(compare_gradient(&g, &p, &x, 1.0).unwrap() < 1e-5);
        g[5] += 1.0;
        assert!(compare_gradient(&g, &p, &x, 1.0).unwrap() > 1e-2);
    }
}
