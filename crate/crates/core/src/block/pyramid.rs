//! Multi-level value maps built from the current query features.

use serde::{Deserialize, Serialize};

use super::config::{DownsampleMode, ItsaConfig};
use crate::deform::ValueMapSet;
use crate::error::{ensure, Result};
use crate::nn::{
    conv1x1_maxpool_fwd, conv1x1_maxpool_vjp, conv3x3s2_fwd, conv3x3s2_vjp, ConvParams,
    LinearParams,
};
use crate::params::ParamSet;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Weights of one downsampling stage, shared by all tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DownsampleParams {
    Conv3x3(ConvParams),
    Conv1x1MaxPool(LinearParams),
}

impl DownsampleParams {
    pub fn init(mode: DownsampleMode, channels: usize, rng: &mut RngState) -> Self {
        match mode {
            DownsampleMode::Conv3x3 => Self::Conv3x3(ConvParams::init(channels, channels, rng)),
            DownsampleMode::Conv1x1MaxPool => {
                Self::Conv1x1MaxPool(LinearParams::init(channels, channels, rng))
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Self::Conv3x3(p) => conv3x3s2_fwd(x, p),
            Self::Conv1x1MaxPool(p) => conv1x1_maxpool_fwd(x, p),
        }
    }

    /// Returns `(d input, d params)`.
    pub fn vjp(&self, x: &Tensor, dy: &Tensor) -> Result<(Tensor, Self)> {
        Ok(match self {
            Self::Conv3x3(p) => {
                let g = conv3x3s2_vjp(x, p, dy)?;
                (g.input, Self::Conv3x3(g.params))
            }
            Self::Conv1x1MaxPool(p) => {
                let g = conv1x1_maxpool_vjp(x, p, dy)?;
                (g.input, Self::Conv1x1MaxPool(g.params))
            }
        })
    }
}

impl ParamSet for DownsampleParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        match self {
            Self::Conv3x3(p) => p.tensors(),
            Self::Conv1x1MaxPool(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            Self::Conv3x3(p) => p.tensors_mut(),
            Self::Conv1x1MaxPool(p) => p.tensors_mut(),
        }
    }
}

/// Level 0 holds the per-task slices of `x_c`; level `l` downsamples level
/// `l - 1` of the same task with `downsample[l - 1]`.
pub fn build_pyramid(
    x_c: &Tensor,
    cfg: &ItsaConfig,
    downsample: &[DownsampleParams],
) -> Result<ValueMapSet> {
    let (t, h) = (cfg.tasks, cfg.height);
    ensure!(
        x_c.rank() == 3 && x_c.dim(0) == t * h && x_c.dim(1) == cfg.width,
        "pyramid input must be ({}, {}, C'), got {:?}",
        t * h,
        cfg.width,
        x_c.shape()
    );
    ensure!(
        downsample.len() + 1 == cfg.levels,
        "{} levels need {} downsampling stages, got {}",
        cfg.levels,
        cfg.levels - 1,
        downsample.len()
    );
    let mut maps: Vec<Tensor> = (0..t).map(|k| x_c.slice_rows(k * h, h)).collect::<Result<_>>()?;
    for (l, stage) in downsample.iter().enumerate() {
        for k in 0..t {
            let next = stage.forward(&maps[l * t + k])?;
            maps.push(next);
        }
    }
    ValueMapSet::new(maps, t, cfg.levels)
}

/// Backpropagates value-map gradients to `x_c` and the downsampling weights.
pub fn pyramid_vjp(
    values: &ValueMapSet,
    downsample: &[DownsampleParams],
    d_maps: &[Tensor],
) -> Result<(Tensor, Vec<DownsampleParams>)> {
    let (t, levels) = (values.tasks(), values.levels());
    ensure!(d_maps.len() == values.len(), "one gradient per value map expected");
    ensure!(downsample.len() + 1 == levels, "downsampling stages do not match levels");
    let mut grads: Vec<Tensor> = d_maps.to_vec();
    let mut d_stages: Vec<DownsampleParams> = downsample.iter().map(|s| s.zeroed()).collect();
    for l in (1..levels).rev() {
        for k in 0..t {
            let (dx, dp) = downsample[l - 1].vjp(values.map(l - 1, k), &grads[l * t + k])?;
            grads[(l - 1) * t + k].add_assign(&dx)?;
            d_stages[l - 1].accumulate(&dp);
        }
    }
    let level0: Vec<&Tensor> = grads[..t].iter().collect();
    Ok((Tensor::concat(&level0, 0)?, d_stages))
}
