//! Global multi-head self-attention over all task queries, followed by a
//! residual connection, layer norm and an MLP.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ItsaConfig, PeRows};
use crate::error::{ensure, Result};
use crate::gemm::{gemm, MatMut, MatRef};
use crate::nn::{
    gelu_fwd, layernorm_fwd, linear_fwd, sinusoidal_pe_tasks, softmax_in_place, LayerNormParams,
    LinearParams, ROW_CHUNK,
};
use crate::params::{prefixed, prefixed_mut, ParamSet};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhsaBaselineParams {
    pub heads: usize,
    /// `C -> 3C`, output laid out as `[q | k | v]`.
    pub qkv: LinearParams,
    pub out_proj: LinearParams,
    pub norm: LayerNormParams,
    pub mlp_in: LinearParams,
    pub mlp_out: LinearParams,
}

impl MhsaBaselineParams {
    pub fn init(cfg: &ItsaConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let mut rng = RngState::new(cfg.seed).substream(1);
        Ok(Self {
            heads: cfg.mhsa_heads,
            qkv: LinearParams::init(c, 3 * c, &mut rng),
            out_proj: LinearParams::init(c, c, &mut rng),
            norm: LayerNormParams::new(c),
            mlp_in: LinearParams::init(c, cfg.ffn_factor * c, &mut rng),
            mlp_out: LinearParams::init(cfg.ffn_factor * c, c, &mut rng),
        })
    }

    pub fn channels(&self) -> usize {
        self.out_proj.out_features()
    }

    fn validate(&self) -> Result<()> {
        let c = self.channels();
        ensure!(self.heads >= 1 && c % self.heads == 0, "channels {c} not divisible by heads {}", self.heads);
        ensure!(
            self.qkv.in_features() == c && self.qkv.out_features() == 3 * c,
            "qkv projection must map {c} to {}",
            3 * c
        );
        ensure!(self.out_proj.in_features() == c, "output projection must take {c} channels");
        Ok(())
    }
}

impl ParamSet for MhsaBaselineParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<_> = prefixed("qkv", self.qkv.tensors()).collect();
        out.extend(prefixed("out_proj", self.out_proj.tensors()));
        out.extend(prefixed("norm", self.norm.tensors()));
        out.extend(prefixed("mlp_in", self.mlp_in.tensors()));
        out.extend(prefixed("mlp_out", self.mlp_out.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<_> = prefixed_mut("qkv", self.qkv.tensors_mut()).collect();
        out.extend(prefixed_mut("out_proj", self.out_proj.tensors_mut()));
        out.extend(prefixed_mut("norm", self.norm.tensors_mut()));
        out.extend(prefixed_mut("mlp_in", self.mlp_in.tensors_mut()));
        out.extend(prefixed_mut("mlp_out", self.mlp_out.tensors_mut()));
        out
    }
}

/// `MLP(LN(x + MHSA(x)))` for `x` of shape `(N, C)`.
///
/// Scores are formed one block of query rows at a time, so the full `N x N`
/// matrix is never held in memory.
pub fn mhsa_queries_fwd(x: &Tensor, p: &MhsaBaselineParams) -> Result<Tensor> {
    p.validate()?;
    let c = p.channels();
    ensure!(x.rank() == 2 && x.dim(1) == c, "mhsa expects (N, {c}), got {:?}", x.shape());
    let n = x.dim(0);
    let qkv = linear_fwd(x, &p.qkv)?;
    let (heads, dh) = (p.heads, c / p.heads);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut attended = Tensor::try_zeros([n, c])?;
    let src = qkv.data();
    let stride = 3 * c;
    attended
        .data_mut()
        .par_chunks_mut(ROW_CHUNK * c)
        .enumerate()
        .for_each(|(chunk, out)| {
            let r0 = chunk * ROW_CHUNK;
            let rows = out.len() / c;
            let mut scores = vec![0.0; rows * n];
            for h in 0..heads {
                let q = MatRef {
                    data: &src[r0 * stride + h * dh..],
                    rows,
                    cols: dh,
                    row_stride: stride,
                    col_stride: 1,
                };
                let k = MatRef { data: &src[c + h * dh..], rows: n, cols: dh, row_stride: stride, col_stride: 1 };
                let v = MatRef { data: &src[2 * c + h * dh..], rows: n, cols: dh, row_stride: stride, col_stride: 1 };
                gemm(scale, q, k.t(), 0.0, MatMut::rm(&mut scores, rows, n));
                scores.chunks_mut(n).for_each(softmax_in_place);
                let o = MatMut { data: &mut out[h * dh..], rows, cols: dh, row_stride: c, col_stride: 1 };
                gemm(1.0, MatRef::rm(&scores, rows, n), v, 0.0, o);
            }
        });
    let attn = linear_fwd(&attended, &p.out_proj)?;
    let normed = layernorm_fwd(&x.add(&attn)?, &p.norm)?;
    linear_fwd(&gelu_fwd(&linear_fwd(&normed, &p.mlp_in)?), &p.mlp_out)
}

/// Baseline block on `T` task maps of shape `(H, W, C)`; output `(T*H, W, C)`.
pub fn mhsa_block_fwd(
    features: &[Tensor],
    p: &MhsaBaselineParams,
    cfg: &ItsaConfig,
) -> Result<Tensor> {
    ensure!(features.len() == cfg.tasks, "expected {} task maps, got {}", cfg.tasks, features.len());
    for (t, f) in features.iter().enumerate() {
        ensure!(
            f.shape() == [cfg.height, cfg.width, cfg.channels],
            "task {t} map has shape {:?}, expected ({}, {}, {})",
            f.shape(),
            cfg.height,
            cfg.width,
            cfg.channels
        );
    }
    let refs: Vec<&Tensor> = features.iter().collect();
    let mut x = Tensor::concat(&refs, 0)?;
    if cfg.mhsa_positional_encoding {
        let pe = sinusoidal_pe_tasks(
            cfg.tasks,
            cfg.height,
            cfg.width,
            cfg.channels,
            cfg.pe_rows == PeRows::PerTask,
        )?;
        x.add_assign(&pe)?;
    }
    let y = mhsa_queries_fwd(&x.reshape([cfg.queries(), cfg.channels])?, p)?;
    y.reshape([cfg.tasks * cfg.height, cfg.width, cfg.channels])
}
