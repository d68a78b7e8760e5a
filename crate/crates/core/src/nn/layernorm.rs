use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNormParams {
    /// `gamma = 1`, `beta = 0`.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full([channels], 1.0),
            beta: Tensor::zeros([channels]),
            eps: DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

impl ParamSet for LayerNormParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("gamma".into(), &mut self.gamma), ("beta".into(), &mut self.beta)]
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormGrads {
    pub input: Tensor,
    pub params: LayerNormParams,
}

fn check(x: &Tensor, p: &LayerNormParams) -> Result<usize> {
    let c = p.channels();
    ensure!(p.eps > 0.0, "layer norm epsilon must be positive");
    ensure!(p.beta.len() == c, "layer norm gamma/beta lengths differ");
    ensure!(x.last_dim() == c, "layer norm over {c} channels got {:?}", x.shape());
    Ok(c)
}

/// Mean and reciprocal standard deviation of one row.
fn moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

pub fn layernorm_fwd(x: &Tensor, p: &LayerNormParams) -> Result<Tensor> {
    let c = check(x, p)?;
    let mut y = x.clone();
    if c == 0 {
        return Ok(y);
    }
    let (g, b) = (p.gamma.data(), p.beta.data());
    for row in y.data_mut().chunks_mut(c) {
        let (mean, rstd) = moments(row, p.eps);
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * rstd * g[k] + b[k];
        }
    }
    Ok(y)
}

pub fn layernorm_vjp(x: &Tensor, p: &LayerNormParams, dy: &Tensor) -> Result<LayerNormGrads> {
    let c = check(x, p)?;
    ensure!(dy.shape() == x.shape(), "layer norm upstream gradient shape mismatch");
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let mut grads = p.zeroed();
    if c == 0 {
        return Ok(LayerNormGrads { input: dx, params: grads });
    }
    let g = p.gamma.data();
    let mut xhat = vec![0.0; c];
    let mut dxhat = vec![0.0; c];
    for ((row, grow), out) in x
        .data()
        .chunks(c)
        .zip(dy.data().chunks(c))
        .zip(dx.data_mut().chunks_mut(c))
    {
        let (mean, rstd) = moments(row, p.eps);
        for k in 0..c {
            xhat[k] = (row[k] - mean) * rstd;
            dxhat[k] = grow[k] * g[k];
            grads.gamma.data_mut()[k] += grow[k] * xhat[k];
            grads.beta.data_mut()[k] += grow[k];
        }
        let n = c as f64;
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
        for k in 0..c {
            out[k] = rstd * (dxhat[k] - mean_d - xhat[k] * mean_dx);
        }
    }
    Ok(LayerNormGrads { input: dx, params: grads })
}
