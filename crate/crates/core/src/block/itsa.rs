//! The deformable ITSA interaction block.
//!
//! Task maps are stacked along the height axis and extended with a
//! positional code. Each refinement step then builds a value pyramid from
//! the current features, runs deformable attention with every query attending
//! to every task and level, and applies dropout, a residual connection,
//! layer norm and a feed-forward network. After the last step the positional
//! channels are dropped and a linear layer plus layer norm produce the output.

use serde::{Deserialize, Serialize};

use super::config::{GradScaleScope, ItsaConfig, PeRows};
use super::pyramid::{build_pyramid, pyramid_vjp, DownsampleParams};
use crate::deform::{
    def_attn_fwd, def_attn_vjp, grad_scale_fwd, grad_scale_vjp, make_reference_points,
    DefAttnParams, GradScale, ReferencePoints, ValueMapSet,
};
use crate::error::{ensure, Result};
use crate::nn::{
    dropout, dropout_vjp, gelu_fwd, gelu_vjp, layernorm_fwd, layernorm_vjp, linear_fwd,
    linear_vjp, sinusoidal_pe_tasks, DropoutMask, LayerNormParams, LinearParams, Mode,
};
use crate::params::{prefixed, prefixed_mut, ParamSet};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    /// One stage per pyramid level below the full-resolution one.
    pub downsample: Vec<DownsampleParams>,
    pub attn: DefAttnParams,
    pub norm: LayerNormParams,
    pub ffn_in: LinearParams,
    pub ffn_out: LinearParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItsaParams {
    pub steps: Vec<StepParams>,
    /// `C -> C`, applied after the positional channels are removed.
    pub smlp: LinearParams,
    pub smlp_norm: LayerNormParams,
}

impl ItsaParams {
    pub fn init(cfg: &ItsaConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.model_channels();
        let mut rng = RngState::new(cfg.seed);
        let steps = (0..cfg.steps)
            .map(|_| {
                let downsample = (1..cfg.levels)
                    .map(|_| DownsampleParams::init(cfg.downsample, c, &mut rng))
                    .collect();
                let attn = DefAttnParams::init(
                    c,
                    cfg.heads,
                    cfg.value_maps(),
                    cfg.points,
                    (cfg.height, cfg.width),
                    &mut rng,
                )?;
                Ok(StepParams {
                    downsample,
                    attn,
                    norm: LayerNormParams::new(c),
                    ffn_in: LinearParams::init(c, cfg.ffn_factor * c, &mut rng),
                    ffn_out: LinearParams::init(cfg.ffn_factor * c, c, &mut rng),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            steps,
            smlp: LinearParams::init(cfg.channels, cfg.channels, &mut rng),
            smlp_norm: LayerNormParams::new(cfg.channels),
        })
    }
}

impl ParamSet for StepParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<_> = self
            .downsample
            .iter()
            .enumerate()
            .flat_map(|(i, d)| prefixed(&format!("downsample{}", i + 1), d.tensors()))
            .collect();
        out.extend(prefixed("attn", self.attn.tensors()));
        out.extend(prefixed("norm", self.norm.tensors()));
        out.extend(prefixed("ffn_in", self.ffn_in.tensors()));
        out.extend(prefixed("ffn_out", self.ffn_out.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<_> = self
            .downsample
            .iter_mut()
            .enumerate()
            .flat_map(|(i, d)| prefixed_mut(&format!("downsample{}", i + 1), d.tensors_mut()))
            .collect();
        out.extend(prefixed_mut("attn", self.attn.tensors_mut()));
        out.extend(prefixed_mut("norm", self.norm.tensors_mut()));
        out.extend(prefixed_mut("ffn_in", self.ffn_in.tensors_mut()));
        out.extend(prefixed_mut("ffn_out", self.ffn_out.tensors_mut()));
        out
    }
}

impl ParamSet for ItsaParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<_> = self
            .steps
            .iter()
            .enumerate()
            .flat_map(|(i, s)| prefixed(&format!("step{i}"), s.tensors()))
            .collect();
        out.extend(prefixed("smlp", self.smlp.tensors()));
        out.extend(prefixed("smlp_norm", self.smlp_norm.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<_> = self
            .steps
            .iter_mut()
            .enumerate()
            .flat_map(|(i, s)| prefixed_mut(&format!("step{i}"), s.tensors_mut()))
            .collect();
        out.extend(prefixed_mut("smlp", self.smlp.tensors_mut()));
        out.extend(prefixed_mut("smlp_norm", self.smlp_norm.tensors_mut()));
        out
    }
}

/// Intermediates of one refinement step, all as `(T*H*W, ...)` matrices.
#[derive(Debug, Clone)]
pub struct StepTape {
    /// Step input `X_c`.
    pub input: Tensor,
    pub values: ValueMapSet,
    pub mask: DropoutMask,
    /// `X_c + Dropout(attn)`
    pub residual: Tensor,
    /// `LN(residual)`
    pub normed: Tensor,
    /// FFN pre-activation.
    pub hidden: Tensor,
}

#[derive(Debug, Clone)]
pub struct ItsaTape {
    pub refs: ReferencePoints,
    pub steps: Vec<StepTape>,
    /// Final features with the positional channels removed, `(N, C)`.
    pub trimmed: Tensor,
    /// sMLP linear output before its layer norm.
    pub projected: Tensor,
}

#[derive(Debug, Clone)]
pub struct ItsaGrads {
    pub features: Vec<Tensor>,
    pub params: ItsaParams,
}

fn check_features(features: &[Tensor], cfg: &ItsaConfig) -> Result<()> {
    ensure!(
        features.len() == cfg.tasks,
        "expected {} task maps, got {}",
        cfg.tasks,
        features.len()
    );
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
    Ok(())
}

/// Task maps stacked along height, with the positional code appended:
/// `(T*H, W, C')`.
pub fn initial_queries(features: &[Tensor], cfg: &ItsaConfig) -> Result<Tensor> {
    cfg.validate()?;
    check_features(features, cfg)?;
    let refs: Vec<&Tensor> = features.iter().collect();
    let stacked = Tensor::concat(&refs, 0)?;
    if !cfg.positional_encoding || cfg.pe_channels == 0 {
        return Ok(stacked);
    }
    let pe = sinusoidal_pe_tasks(
        cfg.tasks,
        cfg.height,
        cfg.width,
        cfg.pe_channels,
        cfg.pe_rows == PeRows::PerTask,
    )?;
    Tensor::concat(&[&stacked, &pe], 2)
}

fn check_params(params: &ItsaParams, cfg: &ItsaConfig) -> Result<()> {
    ensure!(
        params.steps.len() == cfg.steps,
        "parameters hold {} refinement steps, config asks for {}",
        params.steps.len(),
        cfg.steps
    );
    ensure!(
        params.smlp.in_features() == cfg.channels && params.smlp.out_features() == cfg.channels,
        "sMLP must map {} channels to {}",
        cfg.channels,
        cfg.channels
    );
    Ok(())
}

fn run(
    features: &[Tensor],
    params: &ItsaParams,
    cfg: &ItsaConfig,
    mode: Mode,
    rng: &mut RngState,
    mut tape: Option<&mut ItsaTape>,
) -> Result<Tensor> {
    check_params(params, cfg)?;
    let (n, c_model) = (cfg.queries(), cfg.model_channels());
    let grid = [cfg.tasks * cfg.height, cfg.width, c_model];
    let scale = GradScale::new(cfg.lambda)?;
    let refs = make_reference_points(cfg.tasks, cfg.height, cfg.width, cfg.levels)?;
    let mut x = initial_queries(features, cfg)?.reshape([n, c_model])?;
    for step in &params.steps {
        let values = build_pyramid(&x.clone().reshape(grid)?, cfg, &step.downsample)?;
        let attn = grad_scale_fwd(&def_attn_fwd(&x, &values, &refs, &step.attn)?, &scale);
        let (dropped, mask) = dropout(&attn, cfg.dropout, mode, rng)?;
        let residual = x.add(&dropped)?;
        let normed = layernorm_fwd(&residual, &step.norm)?;
        let hidden = linear_fwd(&normed, &step.ffn_in)?;
        let out = linear_fwd(&gelu_fwd(&hidden), &step.ffn_out)?;
        if let Some(t) = tape.as_deref_mut() {
            t.steps.push(StepTape { input: x, values, mask, residual, normed, hidden });
        }
        x = out;
    }
    let trimmed = x.narrow(1, 0, cfg.channels)?;
    let projected = linear_fwd(&trimmed, &params.smlp)?;
    let y = layernorm_fwd(&projected, &params.smlp_norm)?;
    if let Some(t) = tape {
        t.refs = refs;
        t.trimmed = trimmed;
        t.projected = projected;
    }
    y.reshape([cfg.tasks * cfg.height, cfg.width, cfg.channels])
}

/// Output `(T*H, W, C)` for `T` task maps of shape `(H, W, C)`.
pub fn itsa_block_fwd(
    features: &[Tensor],
    params: &ItsaParams,
    cfg: &ItsaConfig,
    mode: Mode,
    rng: &mut RngState,
) -> Result<Tensor> {
    run(features, params, cfg, mode, rng, None)
}

/// Forward pass that also records what [`itsa_block_vjp`] needs.
pub fn itsa_block_fwd_taped(
    features: &[Tensor],
    params: &ItsaParams,
    cfg: &ItsaConfig,
    mode: Mode,
    rng: &mut RngState,
) -> Result<(Tensor, ItsaTape)> {
    let mut tape = ItsaTape {
        refs: ReferencePoints { points: Tensor::zeros([0, 0, 2]) },
        steps: Vec::with_capacity(cfg.steps),
        trimmed: Tensor::zeros([0]),
        projected: Tensor::zeros([0]),
    };
    let y = run(features, params, cfg, mode, rng, Some(&mut tape))?;
    Ok((y, tape))
}

/// Gradients for the task maps and every parameter. With
/// [`GradScaleScope::Module`] everything that flows back through the
/// deformable attention call is multiplied by `lambda`.
pub fn itsa_block_vjp(
    tape: &ItsaTape,
    params: &ItsaParams,
    cfg: &ItsaConfig,
    dy: &Tensor,
) -> Result<ItsaGrads> {
    check_params(params, cfg)?;
    ensure!(tape.steps.len() == cfg.steps, "tape does not match the configured step count");
    let (n, c, c_model) = (cfg.queries(), cfg.channels, cfg.model_channels());
    ensure!(dy.len() == n * c, "upstream gradient has {} scalars, expected {}", dy.len(), n * c);
    let scale = GradScale::new(cfg.lambda)?;
    let dy = dy.clone().reshape([n, c])?;
    let mut grads = params.zeroed();

    let norm = layernorm_vjp(&tape.projected, &params.smlp_norm, &dy)?;
    grads.smlp_norm = norm.params;
    let smlp = linear_vjp(&tape.trimmed, &params.smlp, &norm.input)?;
    grads.smlp = smlp.params;

    let mut dx = Tensor::zeros([n, c_model]);
    for (row, g) in dx.data_mut().chunks_mut(c_model).zip(smlp.input.data().chunks(c)) {
        row[..c].copy_from_slice(g);
    }

    for (i, (st, sp)) in tape.steps.iter().zip(&params.steps).enumerate().rev() {
        let g = &mut grads.steps[i];
        let act = gelu_fwd(&st.hidden);
        let ffn_out = linear_vjp(&act, &sp.ffn_out, &dx)?;
        g.ffn_out = ffn_out.params;
        let d_hidden = gelu_vjp(&st.hidden, &ffn_out.input)?;
        let ffn_in = linear_vjp(&st.normed, &sp.ffn_in, &d_hidden)?;
        g.ffn_in = ffn_in.params;
        let ln = layernorm_vjp(&st.residual, &sp.norm, &ffn_in.input)?;
        g.norm = ln.params;

        let mut d_input = ln.input.clone();
        let mut d_attn = dropout_vjp(&st.mask, &ln.input)?;
        if cfg.grad_scale_scope == GradScaleScope::Module {
            d_attn = grad_scale_vjp(&d_attn, &scale);
        }
        let attn = def_attn_vjp(&st.input, &st.values, &tape.refs, &sp.attn, &d_attn)?;
        g.attn = attn.params;
        if cfg.grad_scale_scope == GradScaleScope::OffsetHead {
            g.attn.offset_head.scale_all(scale.lambda());
        }
        d_input.add_assign(&attn.queries)?;
        let (d_pyramid, d_stages) = pyramid_vjp(&st.values, &sp.downsample, &attn.values)?;
        g.downsample = d_stages;
        d_input.add_assign(&d_pyramid.reshape([n, c_model])?)?;
        dx = d_input;
    }

    let dx = dx.narrow(1, 0, c)?.reshape([cfg.tasks * cfg.height, cfg.width, c])?;
    let features = (0..cfg.tasks)
        .map(|t| dx.slice_rows(t * cfg.height, cfg.height))
        .collect::<Result<_>>()?;
    Ok(ItsaGrads { features, params: grads })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ItsaConfig {
        ItsaConfig {
            tasks: 2,
            height: 4,
            width: 3,
            channels: 8,
            pe_channels: 4,
            heads: 2,
            points: 4,
            levels: 2,
            steps: 2,
            ..ItsaConfig::default()
        }
    }

    fn features(cfg: &ItsaConfig, seed: u64) -> Vec<Tensor> {
        let mut rng = RngState::new(seed);
        (0..cfg.tasks)
            .map(|_| Tensor::from_fn([cfg.height, cfg.width, cfg.channels], |_| rng.uniform(-1.0, 1.0)))
            .collect()
    }

    #[test]
    fn output_shape() {
        let cfg = ItsaConfig { tasks: 4, height: 8, width: 8, channels: 16, steps: 1, ..small_cfg() };
        let params = ItsaParams::init(&cfg).unwrap();
        let y = itsa_block_fwd(&features(&cfg, 1), &params, &cfg, Mode::Eval, &mut RngState::new(0)).unwrap();
        assert_eq!(y.shape(), &[32, 8, 16]);
        assert!(y.all_finite());
    }

    #[test]
    fn eval_is_deterministic() {
        let cfg = small_cfg();
        let params = ItsaParams::init(&cfg).unwrap();
        let f = features(&cfg, 2);
        let a = itsa_block_fwd(&f, &params, &cfg, Mode::Eval, &mut RngState::new(0)).unwrap();
        let b = itsa_block_fwd(&f, &params, &cfg, Mode::Eval, &mut RngState::new(99)).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn taped_forward_matches_plain_forward() {
        let cfg = small_cfg();
        let params = ItsaParams::init(&cfg).unwrap();
        let f = features(&cfg, 3);
        let a = itsa_block_fwd(&f, &params, &cfg, Mode::Train, &mut RngState::new(5)).unwrap();
        let (b, tape) = itsa_block_fwd_taped(&f, &params, &cfg, Mode::Train, &mut RngState::new(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(tape.steps.len(), 2);
        assert!(tape.steps[0].mask.factors.is_some());
    }

    #[test]
    fn pe_channels_are_appended() {
        let cfg = small_cfg();
        let x = initial_queries(&features(&cfg, 4), &cfg).unwrap();
        assert_eq!(x.shape(), &[8, 3, 12]);
        // row 0, col 0 positional code: sin 0, cos 0 pairs
        assert_eq!(&x.data()[8..12], &[0.0, 1.0, 0.0, 1.0]);
        let off = ItsaConfig { positional_encoding: false, ..cfg.clone() };
        assert_eq!(initial_queries(&features(&cfg, 4), &off).unwrap().shape(), &[8, 3, 8]);
    }

    #[test]
    fn rejects_inconsistent_tasks() {
        let cfg = small_cfg();
        let params = ItsaParams::init(&cfg).unwrap();
        let mut f = features(&cfg, 5);
        f[1] = Tensor::zeros([4, 4, 8]);
        assert!(itsa_block_fwd(&f, &params, &cfg, Mode::Eval, &mut RngState::new(0)).is_err());
        assert!(itsa_block_fwd(&f[..1], &params, &cfg, Mode::Eval, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn lambda_scales_only_attention_side_gradients() {
        let cfg = ItsaConfig { steps: 1, dropout: 0.0, ..small_cfg() };
        let mut params = ItsaParams::init(&cfg).unwrap();
        params.perturb(&mut RngState::new(8), 0.05);
        let f = features(&cfg, 6);
        let (y, tape) = itsa_block_fwd_taped(&f, &params, &cfg, Mode::Eval, &mut RngState::new(0)).unwrap();
        let dy = y.map(|v| v.sin());
        let base = itsa_block_vjp(&tape, &params, &ItsaConfig { lambda: 1.0, ..cfg.clone() }, &dy).unwrap();
        let scaled = itsa_block_vjp(&tape, &params, &ItsaConfig { lambda: 100.0, ..cfg.clone() }, &dy).unwrap();
        let (a, b) = (&base.params.steps[0], &scaled.params.steps[0]);
        for ((name, ga), (_, gb)) in a.tensors().into_iter().zip(b.tensors()) {
            let factor = if name.starts_with("attn") || name.starts_with("downsample") { 100.0 } else { 1.0 };
            for (x, y) in ga.data().iter().zip(gb.data()) {
                assert!((x * factor - y).abs() <= 1e-9 * (1.0 + y.abs()), "{name}");
            }
        }
        let only_offsets = ItsaConfig { lambda: 100.0, grad_scale_scope: GradScaleScope::OffsetHead, ..cfg };
        let o = itsa_block_vjp(&tape, &params, &only_offsets, &dy).unwrap();
        let off = &o.params.steps[0].attn;
        assert_eq!(off.offset_head.weight, base.params.steps[0].attn.offset_head.weight.scale(100.0));
        assert_eq!(off.weight_head.weight, base.params.steps[0].attn.weight_head.weight);
    }
}
