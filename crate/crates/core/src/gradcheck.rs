//! Finite-difference oracle for the hand-written backward passes.
//!
//! Every check projects the op output onto a random direction `r`, so the
//! scalar `<r, f(x)>` has gradient `vjp(r)`. Central differences of that scalar
//! are compared against the analytic gradient for each input and each
//! parameter tensor.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::block::{
    itsa_block_fwd, itsa_block_fwd_taped, itsa_block_vjp, DownsampleParams, GradScaleScope,
    ItsaConfig, ItsaParams,
};
use crate::deform::{
    def_attn_fwd, def_attn_vjp, grad_scale_fwd, grad_scale_vjp, make_reference_points,
    sampling_locations, DefAttnParams, GradScale, ReferencePoints, ValueMapSet,
};
use crate::error::{ensure, Error, Result};
use crate::nn::{
    bilinear_sample_fwd, bilinear_sample_vjp, conv1x1_maxpool_fwd, conv1x1_maxpool_vjp,
    conv3x3s2_fwd, conv3x3s2_vjp, dropout, dropout_vjp, gelu_fwd, gelu_vjp, halved,
    layernorm_fwd, layernorm_vjp, linear_fwd, linear_vjp, softmax_fwd, softmax_vjp, ConvParams,
    LayerNormParams, LinearParams, Mode,
};
use crate::params::ParamSet;
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const PRIMITIVE_TOLERANCE: f64 = 1e-5;
pub const BLOCK_TOLERANCE: f64 = 1e-4;
const MAX_RESAMPLES: u64 = 200;

/// Central differences of a scalar function, one coordinate at a time.
pub fn central_diff_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, eps: f64) -> Result<Tensor> {
    try_central_diff(|t| Ok(f(t)), x, eps)
}

fn try_central_diff(
    mut f: impl FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    ensure!(eps > 0.0 && eps.is_finite(), "eps must be positive, got {eps}");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape().to_vec());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::OracleFailure(format!(
                "function is not finite at coordinate {i} ({plus}, {minus})"
            )));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// `max |a - n| / max(|a|_inf, |n|_inf)`, zero when both vanish.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic.max_abs().max(numeric.max_abs());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Linear,
    Softmax,
    Layernorm,
    Conv3x3s2,
    Conv1x1Maxpool,
    Dropout,
    Gelu,
    BilinearSample,
    DefAttn,
    GradScale,
    ItsaBlock,
}

impl Target {
    pub const ALL: [Target; 11] = [
        Target::Linear,
        Target::Softmax,
        Target::Layernorm,
        Target::Conv3x3s2,
        Target::Conv1x1Maxpool,
        Target::Dropout,
        Target::Gelu,
        Target::BilinearSample,
        Target::DefAttn,
        Target::GradScale,
        Target::ItsaBlock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::Linear => "linear",
            Target::Softmax => "softmax",
            Target::Layernorm => "layernorm",
            Target::Conv3x3s2 => "conv3x3s2",
            Target::Conv1x1Maxpool => "conv1x1_maxpool",
            Target::Dropout => "dropout",
            Target::Gelu => "gelu",
            Target::BilinearSample => "bilinear_sample",
            Target::DefAttn => "def_attn",
            Target::GradScale => "grad_scale",
            Target::ItsaBlock => "itsa_block",
        }
    }

    pub fn default_tolerance(self) -> f64 {
        match self {
            Target::ItsaBlock => BLOCK_TOLERANCE,
            _ => PRIMITIVE_TOLERANCE,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("no gradcheck target named {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub eps: f64,
    /// Falls back to [`Target::default_tolerance`].
    pub tolerance: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { seed: 0, eps: DEFAULT_EPS, tolerance: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub target: String,
    /// `(group, max relative error)` in a fixed order.
    pub groups: Vec<(String, f64)>,
    pub tolerance: f64,
    pub passed: bool,
    pub seed: u64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

struct Checker {
    eps: f64,
    groups: Vec<(String, f64)>,
}

impl Checker {
    fn input(
        &mut self,
        name: impl Into<String>,
        x: &Tensor,
        analytic: &Tensor,
        f: impl Fn(&Tensor) -> Result<f64>,
    ) -> Result<()> {
        let numeric = try_central_diff(f, x, self.eps)?;
        self.groups.push((name.into(), relative_error(analytic, &numeric)));
        Ok(())
    }

    /// `divisor(name)` returns the factor the analytic gradient is divided by,
    /// or `None` to leave the group out.
    fn params<P: ParamSet>(
        &mut self,
        prefix: &str,
        p: &P,
        analytic: &P,
        f: impl Fn(&P) -> Result<f64>,
        divisor: impl Fn(&str) -> Option<f64>,
    ) -> Result<()> {
        let grads = analytic.tensors();
        for (i, (name, value)) in p.tensors().into_iter().enumerate() {
            let Some(d) = divisor(&name) else { continue };
            let numeric = try_central_diff(
                |t| {
                    let mut probe = p.clone();
                    *probe.tensors_mut()[i].1 = t.clone();
                    f(&probe)
                },
                value,
                self.eps,
            )?;
            let err = relative_error(&grads[i].1.scale(1.0 / d), &numeric);
            let full = if prefix.is_empty() { name } else { format!("{prefix}.{name}") };
            self.groups.push((full, err));
        }
        Ok(())
    }
}

fn random(shape: impl Into<Vec<usize>>, rng: &mut RngState, amplitude: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform(-amplitude, amplitude))
}

fn project(y: Result<Tensor>, r: &Tensor) -> Result<f64> {
    y?.dot(r)
}

/// Distance of `v` to the nearest integer.
fn frac_distance(v: f64) -> f64 {
    (v - v.round()).abs()
}

/// Whether every pixel-space sampling coordinate stays at least `margin`
/// normalized units (scaled to each map) away from a cell boundary.
fn samples_clear(locs: &Tensor, dims: &[(usize, usize)], margin: f64) -> bool {
    let maps = dims.len();
    let points = locs.dim(3);
    locs.data().chunks(2).enumerate().all(|(i, uv)| {
        let (h, w) = dims[(i / points) % maps];
        let y = uv[0] * h as f64 - 0.5;
        let x = uv[1] * w as f64 - 0.5;
        frac_distance(y) >= margin * h as f64 && frac_distance(x) >= margin * w as f64
    })
}

/// Smallest gap between the two largest entries of every 2x2 pooling window
/// that holds more than one entry.
fn pool_gap(z: &Tensor) -> f64 {
    let (h, w, c) = (z.dim(0), z.dim(1), z.dim(2));
    let d = z.data();
    let mut gap = f64::INFINITY;
    for oy in 0..halved(h) {
        for ox in 0..halved(w) {
            for ch in 0..c {
                let mut vals: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .filter(|(dy, dx)| 2 * oy + dy < h && 2 * ox + dx < w)
                    .map(|(dy, dx)| d[((2 * oy + dy) * w + 2 * ox + dx) * c + ch])
                    .collect();
                if vals.len() > 1 {
                    vals.sort_by(|a, b| b.total_cmp(a));
                    gap = gap.min(vals[0] - vals[1]);
                }
            }
        }
    }
    gap
}

/// Runs the oracle against the analytic backward pass of `target`.
///
/// `cfg` sizes `def_attn` and `itsa_block` and supplies `lambda` for
/// `grad_scale`; the other targets use small fixed shapes.
pub fn check(target: Target, cfg: &ItsaConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    cfg.validate()?;
    ensure!(opts.eps > 0.0 && opts.eps.is_finite(), "eps must be positive, got {}", opts.eps);
    let tolerance = opts.tolerance.unwrap_or_else(|| target.default_tolerance());
    ensure!(tolerance > 0.0, "tolerance must be positive, got {tolerance}");
    let mut rng = RngState::new(opts.seed);
    let mut ck = Checker { eps: opts.eps, groups: Vec::new() };
    let all = |_: &str| Some(1.0);
    match target {
        Target::Linear => {
            let p = LinearParams::init(3, 2, &mut rng);
            let x = random([4, 3], &mut rng, 1.0);
            let r = random([4, 2], &mut rng, 1.0);
            let g = linear_vjp(&x, &p, &r)?;
            ck.input("input", &x, &g.input, |x| project(linear_fwd(x, &p), &r))?;
            ck.params("", &p, &g.params, |p| project(linear_fwd(&x, p), &r), all)?;
        }
        Target::Softmax => {
            let x = random([2, 3, 4], &mut rng, 2.0);
            let r = random([2, 3, 4], &mut rng, 1.0);
            let y = softmax_fwd(&x, 2)?;
            let dx = softmax_vjp(&y, &r, 2)?;
            ck.input("input", &x, &dx, |x| project(softmax_fwd(x, 2), &r))?;
        }
        Target::Layernorm => {
            let mut p = LayerNormParams::new(4);
            p.perturb(&mut rng, 0.5);
            let x = random([2, 3, 4], &mut rng, 1.0);
            let r = random([2, 3, 4], &mut rng, 1.0);
            let g = layernorm_vjp(&x, &p, &r)?;
            ck.input("input", &x, &g.input, |x| project(layernorm_fwd(x, &p), &r))?;
            ck.params("", &p, &g.params, |p| project(layernorm_fwd(&x, p), &r), all)?;
        }
        Target::Conv3x3s2 => {
            let p = ConvParams::init(3, 2, &mut rng);
            let x = random([5, 4, 3], &mut rng, 1.0);
            let r = random([3, 2, 2], &mut rng, 1.0);
            let g = conv3x3s2_vjp(&x, &p, &r)?;
            ck.input("input", &x, &g.input, |x| project(conv3x3s2_fwd(x, &p), &r))?;
            ck.params("", &p, &g.params, |p| project(conv3x3s2_fwd(&x, p), &r), all)?;
        }
        Target::Conv1x1Maxpool => {
            let (p, x) = resample(&mut rng, |rng| {
                let p = LinearParams::init(3, 2, rng);
                let x = random([5, 4, 3], rng, 1.0);
                let margin = 2.0 * opts.eps * p.weight.max_abs().max(x.max_abs()).max(1.0);
                let ok = pool_gap(&linear_fwd(&x, &p)?) >= margin;
                Ok(ok.then_some((p, x)))
            })?;
            let r = random([3, 2, 2], &mut rng, 1.0);
            let g = conv1x1_maxpool_vjp(&x, &p, &r)?;
            ck.input("input", &x, &g.input, |x| project(conv1x1_maxpool_fwd(x, &p), &r))?;
            ck.params("", &p, &g.params, |p| project(conv1x1_maxpool_fwd(&x, p), &r), all)?;
        }
        Target::Dropout => {
            // A fixed mask: every evaluation replays the same draws.
            let mask_rng = rng.substream(7);
            let x = random([2, 3, 4], &mut rng, 1.0);
            let r = random([2, 3, 4], &mut rng, 1.0);
            let run = |x: &Tensor| dropout(x, 0.3, Mode::Train, &mut mask_rng.clone());
            let (_, mask) = run(&x)?;
            let dx = dropout_vjp(&mask, &r)?;
            ck.input("input", &x, &dx, |x| project(run(x).map(|(y, _)| y), &r))?;
        }
        Target::Gelu => {
            let x = random([2, 3, 4], &mut rng, 3.0);
            let r = random([2, 3, 4], &mut rng, 1.0);
            let dx = gelu_vjp(&x, &r)?;
            ck.input("input", &x, &dx, |x| project(Ok(gelu_fwd(x)), &r))?;
        }
        Target::BilinearSample => {
            let map = random([4, 3, 2], &mut rng, 1.0);
            let pts = resample(&mut rng, |rng| {
                let pts = Tensor::from_fn([6, 2], |_| rng.uniform(-0.1, 1.1));
                let locs = pts.clone().reshape([6, 1, 1, 1, 2])?;
                Ok(samples_clear(&locs, &[(4, 3)], 2.0 * opts.eps).then_some(pts))
            })?;
            let r = random([6, 2], &mut rng, 1.0);
            let g = bilinear_sample_vjp(&map, &pts, &r)?;
            ck.input("map", &map, &g.map, |m| project(bilinear_sample_fwd(m, &pts), &r))?;
            ck.input("points", &pts, &g.pts, |p| project(bilinear_sample_fwd(&map, p), &r))?;
        }
        Target::GradScale => {
            let scale = GradScale::new(cfg.lambda)?;
            let x = random([2, 3, 4], &mut rng, 1.0);
            let r = random([2, 3, 4], &mut rng, 1.0);
            let dx = grad_scale_vjp(&r, &scale).scale(1.0 / scale.lambda());
            ck.input("input", &x, &dx, |x| project(Ok(grad_scale_fwd(x, &scale)), &r))?;
        }
        Target::DefAttn => check_def_attn(cfg, opts, &mut rng, &mut ck)?,
        Target::ItsaBlock => check_block(cfg, opts, &mut ck)?,
    }
    let passed = !ck.groups.is_empty() && ck.groups.iter().all(|(_, e)| *e < tolerance);
    Ok(GradCheckReport {
        target: target.name().to_string(),
        groups: ck.groups,
        tolerance,
        passed,
        seed: opts.seed,
    })
}

/// Draws until `draw` accepts.
fn resample<T>(
    rng: &mut RngState,
    mut draw: impl FnMut(&mut RngState) -> Result<Option<T>>,
) -> Result<T> {
    for _ in 0..MAX_RESAMPLES {
        if let Some(v) = draw(rng)? {
            return Ok(v);
        }
    }
    Err(Error::OracleFailure(format!(
        "no probe clear of non-differentiable points after {MAX_RESAMPLES} draws"
    )))
}

fn map_dims(cfg: &ItsaConfig) -> Vec<(usize, usize)> {
    cfg.level_dims().into_iter().flat_map(|d| std::iter::repeat(d).take(cfg.tasks)).collect()
}

/// Sampling coordinates move by at most `eps * max(|W_off|, |q|, 1)` when a
/// single query, weight or bias scalar is nudged by `eps`.
fn attn_clear(
    queries: &Tensor,
    refs: &ReferencePoints,
    p: &DefAttnParams,
    dims: &[(usize, usize)],
    eps: f64,
) -> Result<bool> {
    let reach = p.offset_head.weight.max_abs().max(queries.max_abs()).max(1.0);
    let locs = sampling_locations(queries, refs, p)?;
    Ok(samples_clear(&locs, dims, 2.0 * eps * reach))
}

fn check_def_attn(
    cfg: &ItsaConfig,
    opts: &GradCheckOptions,
    rng: &mut RngState,
    ck: &mut Checker,
) -> Result<()> {
    let c = cfg.model_channels();
    let dims = map_dims(cfg);
    let refs = make_reference_points(cfg.tasks, cfg.height, cfg.width, cfg.levels)?;
    let (q, maps, p) = resample(rng, |rng| {
        let mut p = DefAttnParams::init(c, cfg.heads, cfg.value_maps(), cfg.points, (cfg.height, cfg.width), rng)?;
        p.perturb(rng, 0.1);
        let q = random([cfg.queries(), c], rng, 0.5);
        let maps: Vec<Tensor> = dims.iter().map(|&(h, w)| random([h, w, c], rng, 1.0)).collect();
        Ok(attn_clear(&q, &refs, &p, &dims, opts.eps)?.then_some((q, maps, p)))
    })?;
    let values = ValueMapSet::new(maps.clone(), cfg.tasks, cfg.levels)?;
    let r = random([cfg.queries(), c], rng, 1.0);
    let g = def_attn_vjp(&q, &values, &refs, &p, &r)?;
    ck.input("queries", &q, &g.queries, |q| project(def_attn_fwd(q, &values, &refs, &p), &r))?;
    for (i, m) in maps.iter().enumerate() {
        let name = format!("values.level{}.task{}", i / cfg.tasks, i % cfg.tasks);
        ck.input(name, m, &g.values[i], |m| {
            let mut swapped = maps.clone();
            swapped[i] = m.clone();
            let v = ValueMapSet::new(swapped, cfg.tasks, cfg.levels)?;
            project(def_attn_fwd(&q, &v, &refs, &p), &r)
        })?;
    }
    ck.params("", &p, &g.params, |p| project(def_attn_fwd(&q, &values, &refs, p), &r), |_| Some(1.0))
}

fn block_probe_clear(
    features: &[Tensor],
    params: &ItsaParams,
    cfg: &ItsaConfig,
    eps: f64,
) -> Result<bool> {
    let (_, tape) = itsa_block_fwd_taped(features, params, cfg, Mode::Eval, &mut RngState::new(0))?;
    let dims = map_dims(cfg);
    for (st, sp) in tape.steps.iter().zip(&params.steps) {
        if !attn_clear(&st.input, &tape.refs, &sp.attn, &dims, eps)? {
            return Ok(false);
        }
        for (l, stage) in sp.downsample.iter().enumerate() {
            let DownsampleParams::Conv1x1MaxPool(lin) = stage else { continue };
            for t in 0..cfg.tasks {
                let x = st.values.map(l, t);
                let margin = 2.0 * eps * lin.weight.max_abs().max(x.max_abs()).max(1.0);
                if pool_gap(&linear_fwd(x, lin)?) < margin {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// With `lambda != 1` under the module scope, only groups whose every
/// gradient path crosses exactly one scaled attention call have a uniform
/// factor: the last step's attention and downsampling (`lambda`) and the
/// groups after it (`1`). Earlier steps and the task maps are left out.
fn block_divisor(cfg: &ItsaConfig, name: &str) -> Option<f64> {
    let lambda = cfg.lambda;
    match cfg.grad_scale_scope {
        GradScaleScope::OffsetHead => {
            Some(if name.contains(".attn.offset_head.") { lambda } else { 1.0 })
        }
        GradScaleScope::Module if lambda == 1.0 => Some(1.0),
        GradScaleScope::Module => {
            let last = format!("step{}.", cfg.steps - 1);
            if name.starts_with("smlp") {
                Some(1.0)
            } else if let Some(rest) = name.strip_prefix(&last) {
                Some(if rest.starts_with("attn") || rest.starts_with("downsample") { lambda } else { 1.0 })
            } else {
                None
            }
        }
    }
}

fn check_block(cfg: &ItsaConfig, opts: &GradCheckOptions, ck: &mut Checker) -> Result<()> {
    let cfg = ItsaConfig { seed: opts.seed, ..cfg.clone() };
    let mut rng = RngState::new(opts.seed).substream(11);
    let base = ItsaParams::init(&cfg)?;
    let (features, params) = resample(&mut rng, |rng| {
        let mut params = base.clone();
        params.perturb(rng, 0.05);
        let features: Vec<Tensor> =
            (0..cfg.tasks).map(|_| random([cfg.height, cfg.width, cfg.channels], rng, 1.0)).collect();
        Ok(block_probe_clear(&features, &params, &cfg, opts.eps)?.then_some((features, params)))
    })?;
    let r = random([cfg.tasks * cfg.height, cfg.width, cfg.channels], &mut rng, 1.0);
    let fwd = |f: &[Tensor], p: &ItsaParams| {
        project(itsa_block_fwd(f, p, &cfg, Mode::Eval, &mut RngState::new(0)), &r)
    };
    let (_, tape) = itsa_block_fwd_taped(&features, &params, &cfg, Mode::Eval, &mut RngState::new(0))?;
    let g = itsa_block_vjp(&tape, &params, &cfg, &r)?;
    let features_comparable = cfg.lambda == 1.0 || cfg.grad_scale_scope == GradScaleScope::OffsetHead;
    if features_comparable {
        for (t, x) in features.iter().enumerate() {
            ck.input(format!("features.task{t}"), x, &g.features[t], |x| {
                let mut swapped = features.clone();
                swapped[t] = x.clone();
                fwd(&swapped, &params)
            })?;
        }
    }
    ck.params("", &params, &g.params, |p| fwd(&features, p), |name| block_divisor(&cfg, name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::from_fn([3, 4], |i| i as f64 * 0.3 - 1.0);
        let g = central_diff_grad(|t| t.sum(), &x, 1e-5).unwrap();
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn half_square_norm_has_identity_gradient() {
        let x = Tensor::from_fn([5], |i| i as f64 - 2.0);
        let g = central_diff_grad(|t| 0.5 * t.dot(t).unwrap(), &x, 1e-5).unwrap();
        assert!(g.sub(&x).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn non_finite_output_is_an_oracle_failure() {
        let x = Tensor::zeros([2]);
        let e = central_diff_grad(|_| f64::NAN, &x, 1e-5).unwrap_err();
        assert!(matches!(e, Error::OracleFailure(_)));
        assert!(central_diff_grad(|t| t.sum(), &x, 0.0).is_err());
    }

    #[test]
    fn target_names_round_trip() {
        for t in Target::ALL {
            assert_eq!(t.name().parse::<Target>().unwrap(), t);
        }
        assert!(matches!("matmul".parse::<Target>(), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn linear_passes_at_tight_tolerance() {
        let opts = GradCheckOptions { tolerance: Some(1e-6), ..Default::default() };
        let r = check(Target::Linear, &ItsaConfig::default(), &opts).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn grad_scale_with_large_lambda() {
        let cfg = ItsaConfig { lambda: 100.0, ..ItsaConfig::default() };
        let opts = GradCheckOptions { tolerance: Some(1e-6), ..Default::default() };
        assert!(check(Target::GradScale, &cfg, &opts).unwrap().passed);
    }

    #[test]
    fn block_divisor_under_module_scope() {
        let cfg = ItsaConfig { steps: 2, lambda: 10.0, ..ItsaConfig::default() };
        assert_eq!(block_divisor(&cfg, "step1.attn.value_proj.weight"), Some(10.0));
        assert_eq!(block_divisor(&cfg, "step1.ffn_in.weight"), Some(1.0));
        assert_eq!(block_divisor(&cfg, "step0.attn.value_proj.weight"), None);
        assert_eq!(block_divisor(&cfg, "smlp.weight"), Some(1.0));
    }
}
