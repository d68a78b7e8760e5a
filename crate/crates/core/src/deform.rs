//! Multi-head deformable attention over a set of task/level value maps.
//!
//! Every query predicts, per head, `K` sampling offsets around its reference
//! point in each of the `T*L` value maps, plus one attention logit per sample.
//! Logits are normalized with a softmax over all `T*L*K` samples of a head,
//! and the head's channel slice of the projected value maps is bilinearly
//! sampled and mixed with those weights.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::{linear_fwd, linear_vjp, softmax_in_place, BilinearTap, LinearParams, ROW_CHUNK};
use crate::params::{prefixed, prefixed_mut, ParamSet};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapMeta {
    pub task: usize,
    pub level: usize,
    pub height: usize,
    pub width: usize,
}

/// The flattened multi-task pyramid, ordered level-major then task.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMapSet {
    maps: Vec<Tensor>,
    meta: Vec<MapMeta>,
    tasks: usize,
    levels: usize,
}

impl ValueMapSet {
    /// `maps[l * tasks + t]` is the `(H_l, W_l, C)` map of task `t` at level `l`.
    pub fn new(maps: Vec<Tensor>, tasks: usize, levels: usize) -> Result<Self> {
        ensure!(tasks >= 1 && levels >= 1, "value maps need at least one task and level");
        ensure!(
            maps.len() == tasks * levels,
            "expected {} value maps for {tasks} tasks x {levels} levels, got {}",
            tasks * levels,
            maps.len()
        );
        let channels = maps[0].last_dim();
        let mut meta = Vec::with_capacity(maps.len());
        for (i, m) in maps.iter().enumerate() {
            let (level, task) = (i / tasks, i % tasks);
            ensure!(m.rank() == 3, "value map {i} must be (H, W, C), got {:?}", m.shape());
            ensure!(m.dim(0) >= 1 && m.dim(1) >= 1, "value map {i} has empty extent");
            ensure!(m.dim(2) == channels, "value map {i} has {} channels, expected {channels}", m.dim(2));
            let first = &maps[level * tasks];
            ensure!(
                m.dim(0) == first.dim(0) && m.dim(1) == first.dim(1),
                "tasks disagree on the spatial size of level {level}"
            );
            meta.push(MapMeta { task, level, height: m.dim(0), width: m.dim(1) });
        }
        Ok(Self { maps, meta, tasks, levels })
    }

    pub fn maps(&self) -> &[Tensor] {
        &self.maps
    }

    pub fn into_maps(self) -> Vec<Tensor> {
        self.maps
    }

    pub fn meta(&self) -> &[MapMeta] {
        &self.meta
    }

    pub fn map(&self, level: usize, task: usize) -> &Tensor {
        &self.maps[level * self.tasks + task]
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn channels(&self) -> usize {
        self.maps[0].last_dim()
    }

    /// Total number of value tokens across all maps.
    pub fn token_count(&self) -> usize {
        self.meta.iter().map(|m| m.height * m.width).sum()
    }

    /// `(token_count, C)` matrix: every level's task maps flattened and stacked.
    pub fn flatten(&self) -> Tensor {
        let parts: Vec<Tensor> = self.maps.iter().map(|m| m.clone().as_matrix()).collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::concat(&refs, 0).expect("maps share a channel count")
    }
}

/// Cell-centre reference point of every query, repeated for every value map.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoints {
    /// `(T*H*W, T*L, 2)` normalized `(row, col)` coordinates.
    pub points: Tensor,
}

impl ReferencePoints {
    pub fn queries(&self) -> usize {
        self.points.dim(0)
    }

    pub fn maps(&self) -> usize {
        self.points.dim(1)
    }
}

pub fn make_reference_points(
    tasks: usize,
    height: usize,
    width: usize,
    levels: usize,
) -> Result<ReferencePoints> {
    ensure!(
        tasks >= 1 && height >= 1 && width >= 1 && levels >= 1,
        "reference points need positive sizes"
    );
    let maps = tasks * levels;
    let nq = tasks * height * width;
    let mut points = Tensor::zeros([nq, maps, 2]);
    for (q, row) in points.data_mut().chunks_mut(maps * 2).enumerate() {
        let (h, w) = ((q / width) % height, q % width);
        let centre = [(h as f64 + 0.5) / height as f64, (w as f64 + 0.5) / width as f64];
        for p in row.chunks_mut(2) {
            p.copy_from_slice(&centre);
        }
    }
    Ok(ReferencePoints { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefAttnParams {
    pub heads: usize,
    pub points: usize,
    /// `C -> C`
    pub value_proj: LinearParams,
    /// `C -> heads * maps * points * 2`
    pub offset_head: LinearParams,
    /// `C -> heads * maps * points`
    pub weight_head: LinearParams,
    /// `C -> C`
    pub output_proj: LinearParams,
}

impl DefAttnParams {
    /// Value/output projections drawn uniformly; offset and weight heads start
    /// with zero weights. Offset biases place each head's `points` samples on
    /// a square grid spanning two cells of the finest map either side of the
    /// reference point, rotated by `2*pi*head/heads`; attention starts uniform.
    pub fn init(
        channels: usize,
        heads: usize,
        maps: usize,
        points: usize,
        finest: (usize, usize),
        rng: &mut RngState,
    ) -> Result<Self> {
        ensure!(heads >= 1 && points >= 1 && maps >= 1, "heads, maps and points must be positive");
        ensure!(channels % heads == 0, "{channels} channels not divisible by {heads} heads");
        let samples = heads * maps * points;
        let value_proj = LinearParams::init(channels, channels, rng);
        let output_proj = LinearParams::init(channels, channels, rng);
        let mut offset_head = LinearParams::zeros(channels, samples * 2);
        let weight_head = LinearParams::zeros(channels, samples);

        let side = (points as f64).sqrt().ceil() as usize;
        let bias = offset_head.bias.data_mut();
        for h in 0..heads {
            let (sin, cos) = (2.0 * PI * h as f64 / heads as f64).sin_cos();
            for j in 0..maps {
                for k in 0..points {
                    let grid = |i: usize| {
                        if side > 1 { 2.0 * i as f64 / (side - 1) as f64 - 1.0 } else { 0.0 }
                    };
                    let (a, b) = (grid(k / side), grid(k % side));
                    let (r, c) = (a * cos - b * sin, a * sin + b * cos);
                    let at = ((h * maps + j) * points + k) * 2;
                    bias[at] = 2.0 * r / finest.0 as f64;
                    bias[at + 1] = 2.0 * c / finest.1 as f64;
                }
            }
        }
        Ok(Self { heads, points, value_proj, offset_head, weight_head, output_proj })
    }

    pub fn channels(&self) -> usize {
        self.value_proj.out_features()
    }

    /// Number of value maps the heads were sized for.
    pub fn maps(&self) -> usize {
        self.weight_head.out_features() / (self.heads * self.points)
    }

    fn validate(&self) -> Result<()> {
        let c = self.channels();
        ensure!(self.heads >= 1 && self.points >= 1, "heads and points must be positive");
        ensure!(c % self.heads == 0, "{c} channels not divisible by {} heads", self.heads);
        for (name, l) in [
            ("value_proj", &self.value_proj),
            ("offset_head", &self.offset_head),
            ("weight_head", &self.weight_head),
            ("output_proj", &self.output_proj),
        ] {
            ensure!(l.in_features() == c, "{name} expects {} inputs, not {c}", l.in_features());
        }
        ensure!(self.output_proj.out_features() == c, "output_proj must map back to {c} channels");
        let per_map = self.heads * self.points;
        ensure!(
            self.weight_head.out_features() % per_map == 0
                && self.offset_head.out_features() == 2 * self.weight_head.out_features(),
            "offset/weight heads are not sized heads x maps x points"
        );
        Ok(())
    }
}

impl ParamSet for DefAttnParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        prefixed("value_proj", self.value_proj.tensors())
            .chain(prefixed("offset_head", self.offset_head.tensors()))
            .chain(prefixed("weight_head", self.weight_head.tensors()))
            .chain(prefixed("output_proj", self.output_proj.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        prefixed_mut("value_proj", self.value_proj.tensors_mut())
            .chain(prefixed_mut("offset_head", self.offset_head.tensors_mut()))
            .chain(prefixed_mut("weight_head", self.weight_head.tensors_mut()))
            .chain(prefixed_mut("output_proj", self.output_proj.tensors_mut()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DefAttnGrads {
    pub queries: Tensor,
    pub values: Vec<Tensor>,
    pub params: DefAttnParams,
}

/// Forward intermediates shared by the forward and backward passes.
struct Plan {
    nq: usize,
    channels: usize,
    heads: usize,
    points: usize,
    maps: usize,
    dims: Vec<(usize, usize)>,
    projected: Vec<Tensor>,
    offsets: Tensor,
    logits: Tensor,
}

impl Plan {
    fn samples_per_head(&self) -> usize {
        self.maps * self.points
    }

    fn head_dim(&self) -> usize {
        self.channels / self.heads
    }
}

fn plan(
    queries: &Tensor,
    values: &ValueMapSet,
    refs: &ReferencePoints,
    p: &DefAttnParams,
) -> Result<Plan> {
    p.validate()?;
    let c = p.channels();
    ensure!(queries.last_dim() == c, "queries have {} channels, attention expects {c}", queries.last_dim());
    ensure!(values.channels() == c, "value maps have {} channels, attention expects {c}", values.channels());
    let nq = queries.outer_len();
    let maps = values.len();
    ensure!(
        p.maps() == maps,
        "attention heads are sized for {} maps but {maps} were given",
        p.maps()
    );
    ensure!(
        refs.queries() == nq && refs.maps() == maps && refs.points.dim(2) == 2,
        "reference points {:?} do not match {nq} queries x {maps} maps",
        refs.points.shape()
    );
    let q = queries.clone().as_matrix();
    let projected = values
        .maps()
        .iter()
        .map(|m| linear_fwd(m, &p.value_proj))
        .collect::<Result<Vec<_>>>()?;
    Ok(Plan {
        nq,
        channels: c,
        heads: p.heads,
        points: p.points,
        maps,
        dims: values.meta().iter().map(|m| (m.height, m.width)).collect(),
        projected,
        offsets: linear_fwd(&q, &p.offset_head)?,
        logits: linear_fwd(&q, &p.weight_head)?,
    })
}

/// Stencil of sample `(head, map, point)` for query `q`.
#[inline]
fn tap(plan: &Plan, refs: &ReferencePoints, q: usize, h: usize, j: usize, k: usize) -> BilinearTap {
    let r = &refs.points.data()[(q * plan.maps + j) * 2..];
    let per_q = plan.heads * plan.samples_per_head() * 2;
    let o = &plan.offsets.data()[q * per_q + ((h * plan.maps + j) * plan.points + k) * 2..];
    let (height, width) = plan.dims[j];
    BilinearTap::new(r[0] + o[0], r[1] + o[1], height, width)
}

/// Softmaxed weights of head `h` for query `q` written into `buf`.
#[inline]
fn head_weights(plan: &Plan, q: usize, h: usize, buf: &mut [f64]) {
    let s = plan.samples_per_head();
    let start = (q * plan.heads + h) * s;
    buf.copy_from_slice(&plan.logits.data()[start..start + s]);
    softmax_in_place(buf);
}

/// Concatenated head outputs before the output projection, `(Nq, C)`.
fn aggregate(plan: &Plan, refs: &ReferencePoints) -> Result<Tensor> {
    let (c, dh, s) = (plan.channels, plan.head_dim(), plan.samples_per_head());
    let mut out = Tensor::try_zeros([plan.nq, c])?;
    out.data_mut()
        .par_chunks_mut(ROW_CHUNK * c)
        .enumerate()
        .for_each(|(chunk, rows)| {
            let n = rows.len() / c;
            let q0 = chunk * ROW_CHUNK;
            let mut weights = vec![0.0; n * s];
            for h in 0..plan.heads {
                for (r, w) in weights.chunks_mut(s).enumerate() {
                    head_weights(plan, q0 + r, h, w);
                }
                for j in 0..plan.maps {
                    let map = plan.projected[j].data();
                    for (r, row) in rows.chunks_mut(c).enumerate() {
                        let out_h = &mut row[h * dh..(h + 1) * dh];
                        for k in 0..plan.points {
                            let t = tap(plan, refs, q0 + r, h, j, k);
                            t.accumulate(map, c, h * dh, weights[r * s + j * plan.points + k], out_h);
                        }
                    }
                }
            }
        });
    Ok(out)
}

pub fn def_attn_fwd(
    queries: &Tensor,
    values: &ValueMapSet,
    refs: &ReferencePoints,
    p: &DefAttnParams,
) -> Result<Tensor> {
    let plan = plan(queries, values, refs, p)?;
    let heads = aggregate(&plan, refs)?;
    linear_fwd(&heads, &p.output_proj)?.reshape(queries.shape().to_vec())
}

/// Softmaxed attention weights, `(Nq, heads, maps * points)`.
pub fn attention_weights(
    queries: &Tensor,
    values: &ValueMapSet,
    refs: &ReferencePoints,
    p: &DefAttnParams,
) -> Result<Tensor> {
    let plan = plan(queries, values, refs, p)?;
    let s = plan.samples_per_head();
    let mut out = Tensor::zeros([plan.nq, plan.heads, s]);
    for (i, w) in out.data_mut().chunks_mut(s).enumerate() {
        head_weights(&plan, i / plan.heads, i % plan.heads, w);
    }
    Ok(out)
}

/// Normalized sampling locations `ref + offset`, `(Nq, heads, maps, points, 2)`.
pub fn sampling_locations(
    queries: &Tensor,
    refs: &ReferencePoints,
    p: &DefAttnParams,
) -> Result<Tensor> {
    p.validate()?;
    let q = queries.clone().as_matrix();
    let (nq, maps) = (q.dim(0), p.maps());
    ensure!(refs.queries() == nq && refs.maps() == maps, "reference points do not match queries");
    let offsets = linear_fwd(&q, &p.offset_head)?;
    let mut out = offsets.reshape([nq, p.heads, maps, p.points, 2])?;
    let r = refs.points.data();
    for (i, v) in out.data_mut().chunks_mut(2).enumerate() {
        let qi = i / (p.heads * maps * p.points);
        let j = (i / p.points) % maps;
        v[0] += r[(qi * maps + j) * 2];
        v[1] += r[(qi * maps + j) * 2 + 1];
    }
    Ok(out)
}

pub fn def_attn_vjp(
    queries: &Tensor,
    values: &ValueMapSet,
    refs: &ReferencePoints,
    p: &DefAttnParams,
    dy: &Tensor,
) -> Result<DefAttnGrads> {
    ensure!(dy.shape() == queries.shape(), "upstream gradient must match the query shape");
    let plan = plan(queries, values, refs, p)?;
    let heads = aggregate(&plan, refs)?;
    let dy = dy.clone().as_matrix();
    let out_grads = linear_vjp(&heads, &p.output_proj, &dy)?;
    let d_heads = out_grads.input;

    let (c, dh, s) = (plan.channels, plan.head_dim(), plan.samples_per_head());
    let mut d_proj: Vec<Tensor> = plan.projected.iter().map(|m| Tensor::zeros(m.shape().to_vec())).collect();
    let mut d_offsets = Tensor::zeros(plan.offsets.shape().to_vec());
    let mut d_logits = Tensor::zeros(plan.logits.shape().to_vec());
    let mut weights = vec![0.0; s];
    let mut d_weights = vec![0.0; s];
    for q in 0..plan.nq {
        for h in 0..plan.heads {
            head_weights(&plan, q, h, &mut weights);
            let g = &d_heads.data()[q * c + h * dh..q * c + (h + 1) * dh];
            for j in 0..plan.maps {
                let map = plan.projected[j].data();
                let dmap = d_proj[j].data_mut();
                for k in 0..plan.points {
                    let t = tap(&plan, refs, q, h, j, k);
                    let a = weights[j * plan.points + k];
                    let (mut da, mut du, mut dv) = (0.0, 0.0, 0.0);
                    for n in 0..4 {
                        let base = t.idx[n] * c + h * dh;
                        let cell = &map[base..base + dh];
                        let proj: f64 = cell.iter().zip(g).map(|(x, y)| x * y).sum();
                        da += t.weight[n] * proj;
                        du += t.d_row[n] * proj;
                        dv += t.d_col[n] * proj;
                        let wa = a * t.weight[n];
                        if wa != 0.0 {
                            dmap[base..base + dh].iter_mut().zip(g).for_each(|(x, y)| *x += wa * y);
                        }
                    }
                    d_weights[j * plan.points + k] = da;
                    let at = q * plan.heads * s * 2 + ((h * plan.maps + j) * plan.points + k) * 2;
                    d_offsets.data_mut()[at] = a * du;
                    d_offsets.data_mut()[at + 1] = a * dv;
                }
            }
            let dot: f64 = weights.iter().zip(&d_weights).map(|(a, b)| a * b).sum();
            let dl = &mut d_logits.data_mut()[(q * plan.heads + h) * s..(q * plan.heads + h + 1) * s];
            for i in 0..s {
                dl[i] = weights[i] * (d_weights[i] - dot);
            }
        }
    }

    let qm = queries.clone().as_matrix();
    let off = linear_vjp(&qm, &p.offset_head, &d_offsets)?;
    let wgt = linear_vjp(&qm, &p.weight_head, &d_logits)?;
    let mut d_queries = off.input;
    d_queries.add_assign(&wgt.input)?;

    let mut value_proj = p.value_proj.zeroed();
    let mut d_values = Vec::with_capacity(plan.maps);
    for (m, dm) in values.maps().iter().zip(&d_proj) {
        let g = linear_vjp(m, &p.value_proj, dm)?;
        value_proj.accumulate(&g.params);
        d_values.push(g.input);
    }

    Ok(DefAttnGrads {
        queries: d_queries.reshape(queries.shape().to_vec())?,
        values: d_values,
        params: DefAttnParams {
            heads: p.heads,
            points: p.points,
            value_proj,
            offset_head: off.params,
            weight_head: wgt.params,
            output_proj: out_grads.params,
        },
    })
}

/// Backward-only gradient multiplier; the forward pass is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradScale {
    lambda: f64,
}

impl GradScale {
    pub fn new(lambda: f64) -> Result<Self> {
        ensure!(lambda > 0.0 && lambda.is_finite(), "gradient scale must be positive, got {lambda}");
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

pub fn grad_scale_fwd(x: &Tensor, _scale: &GradScale) -> Tensor {
    x.clone()
}

pub fn grad_scale_vjp(dy: &Tensor, scale: &GradScale) -> Tensor {
    dy.scale(scale.lambda)
}
