use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::halved;

/// How pyramid levels are produced from the level above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleMode {
    /// 3x3 convolution, stride 2, padding 1.
    Conv3x3,
    /// 1x1 convolution followed by 2x2 max-pooling.
    Conv1x1MaxPool,
}

/// Row index used by the positional code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeRows {
    /// Rows numbered over the whole `T*H` stack.
    Global,
    /// Rows restart at zero for every task.
    PerTask,
}

/// Which gradients the `lambda` multiplier applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradScaleScope {
    /// Everything flowing back through the deformable attention call.
    Module,
    /// Only the offset-head parameters.
    OffsetHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItsaConfig {
    pub tasks: usize,
    pub height: usize,
    pub width: usize,
    /// Feature channels `C` of every task map.
    pub channels: usize,
    /// Positional channels `c` appended before the first refinement step.
    pub pe_channels: usize,
    pub heads: usize,
    /// Sampling points per head and value map.
    pub points: usize,
    pub levels: usize,
    pub steps: usize,
    pub lambda: f64,
    pub dropout: f64,
    pub ffn_factor: usize,
    pub seed: u64,
    pub positional_encoding: bool,
    pub pe_rows: PeRows,
    pub downsample: DownsampleMode,
    pub grad_scale_scope: GradScaleScope,
    pub mhsa_heads: usize,
    /// Adds a `C`-channel sinusoidal code to the baseline's queries.
    pub mhsa_positional_encoding: bool,
}

impl Default for ItsaConfig {
    fn default() -> Self {
        Self {
            tasks: 4,
            height: 56,
            width: 56,
            channels: 256,
            pe_channels: 24,
            heads: 4,
            points: 16,
            levels: 3,
            steps: 3,
            lambda: 100.0,
            dropout: 0.1,
            ffn_factor: 4,
            seed: 0,
            positional_encoding: true,
            pe_rows: PeRows::Global,
            downsample: DownsampleMode::Conv3x3,
            grad_scale_scope: GradScaleScope::Module,
            mhsa_heads: 4,
            mhsa_positional_encoding: false,
        }
    }
}

impl ItsaConfig {
    /// `C' = C + c` with the positional code enabled, otherwise `C`.
    pub fn model_channels(&self) -> usize {
        self.channels + self.active_pe_channels()
    }

    pub fn active_pe_channels(&self) -> usize {
        if self.positional_encoding {
            self.pe_channels
        } else {
            0
        }
    }

    pub fn queries(&self) -> usize {
        self.tasks * self.height * self.width
    }

    pub fn value_maps(&self) -> usize {
        self.tasks * self.levels
    }

    /// Spatial size of each pyramid level.
    pub fn level_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(self.height, self.width)];
        for _ in 1..self.levels {
            let (h, w) = *dims.last().unwrap();
            dims.push((halved(h), halved(w)));
        }
        dims
    }

    /// Value tokens over all tasks and levels.
    pub fn value_tokens(&self) -> usize {
        self.tasks * self.level_dims().iter().map(|(h, w)| h * w).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.tasks >= 1, "tasks must be at least 1");
        ensure!(self.height >= 1 && self.width >= 1, "height and width must be at least 1");
        ensure!(self.channels >= 1, "channels must be at least 1");
        ensure!(
            !self.positional_encoding || self.pe_channels % 4 == 0,
            "pe_channels must be divisible by 4, got {}",
            self.pe_channels
        );
        ensure!(self.heads >= 1, "heads must be at least 1");
        let c = self.model_channels();
        ensure!(
            c % self.heads == 0,
            "model channels C' = {c} must be divisible by heads = {}",
            self.heads
        );
        ensure!(self.points >= 1, "points must be at least 1");
        ensure!((1..=3).contains(&self.levels), "levels must be 1, 2 or 3, got {}", self.levels);
        ensure!(self.steps >= 1, "steps must be at least 1");
        ensure!(
            self.lambda > 0.0 && self.lambda.is_finite(),
            "lambda must be positive, got {}",
            self.lambda
        );
        ensure!((0.0..1.0).contains(&self.dropout), "dropout must be in [0, 1), got {}", self.dropout);
        ensure!(self.ffn_factor >= 1, "ffn_factor must be at least 1");
        ensure!(self.mhsa_heads >= 1, "mhsa_heads must be at least 1");
        ensure!(
            self.channels % self.mhsa_heads == 0,
            "channels = {} must be divisible by mhsa_heads = {}",
            self.channels,
            self.mhsa_heads
        );
        ensure!(
            !self.mhsa_positional_encoding || self.channels % 4 == 0,
            "the baseline positional code needs channels divisible by 4"
        );
        Ok(())
    }
}
