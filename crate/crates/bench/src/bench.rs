//! Forward-pass latency measurement for the two interaction blocks.

use std::hash::{DefaultHasher, Hasher};
use std::time::Instant;

use itsa_core::block::{itsa_block_fwd, mhsa_block_fwd};
use itsa_core::flops::{flops, CostReport, Mechanism};
use itsa_core::nn::Mode;
use itsa_core::{ItsaConfig, ItsaParams, MhsaBaselineParams, RngState, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::spec::RunSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub precision: String,
    pub threads: usize,
    pub warmup_iters: usize,
    pub measured_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mechanism: Mechanism,
    pub latency_median_s: f64,
    pub latency_min_s: f64,
    pub samples_s: Vec<f64>,
    /// Hash of the output bit patterns.
    pub output_digest: String,
    /// FLOPs model for the same config, with the median latency attached.
    pub cost: CostReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub config: ItsaConfig,
    pub environment: Environment,
    pub timings: Vec<Timing>,
    #[serde(skip)]
    pub outputs: Vec<(Mechanism, Tensor)>,
}

impl BenchResult {
    pub fn timing(&self, m: Mechanism) -> Option<&Timing> {
        self.timings.iter().find(|t| t.mechanism == m)
    }

    pub fn output(&self, m: Mechanism) -> Option<&Tensor> {
        self.outputs.iter().find(|(k, _)| *k == m).map(|(_, t)| t)
    }
}

pub fn digest(t: &Tensor) -> String {
    let mut h = DefaultHasher::new();
    for d in t.shape() {
        h.write_usize(*d);
    }
    for v in t.data() {
        h.write_u64(v.to_bits());
    }
    format!("{:016x}", h.finish())
}

/// Checks that every tensor the run would allocate has a representable size
/// and fits in the address space.
pub fn preflight(cfg: &ItsaConfig, mechanisms: &[Mechanism]) -> Result<()> {
    let cm = cfg.model_channels();
    let wide = cm.max(cfg.ffn_factor * cm).max(3 * cfg.channels).max(cfg.ffn_factor * cfg.channels);
    let too_big = |what: &str| {
        BenchError::Resource(format!("{what} is too large for this machine (tasks={}, height={}, width={})", cfg.tasks, cfg.height, cfg.width))
    };
    let queries = cfg
        .tasks
        .checked_mul(cfg.height)
        .and_then(|v| v.checked_mul(cfg.width))
        .ok_or_else(|| too_big("tasks*height*width"))?;
    let widest = queries.checked_mul(wide).ok_or_else(|| too_big("queries x hidden width"))?;
    let samples = queries
        .checked_mul(cfg.heads * cfg.value_maps() * cfg.points * 3)
        .ok_or_else(|| too_big("sampling offsets and weights"))?;
    let limit = isize::MAX as usize / 8 / 16;
    for (what, n) in [("queries x hidden width", widest), ("sampling offsets and weights", samples)] {
        if n > limit {
            return Err(too_big(what));
        }
    }
    if mechanisms.contains(&Mechanism::Mhsa) {
        let block = queries.checked_mul(128).ok_or_else(|| too_big("attention score block"))?;
        if block > limit {
            return Err(too_big("attention score block"));
        }
    }
    Ok(())
}

fn features(cfg: &ItsaConfig) -> Vec<Tensor> {
    let mut rng = RngState::new(cfg.seed).substream(2);
    (0..cfg.tasks)
        .map(|_| Tensor::from_fn([cfg.height, cfg.width, cfg.channels], |_| rng.uniform(-1.0, 1.0)))
        .collect()
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn time<F: FnMut() -> itsa_core::Result<Tensor>>(
    warmup: usize,
    iters: usize,
    mut f: F,
) -> Result<(Tensor, Vec<f64>)> {
    let mut out = None;
    for _ in 0..warmup {
        out = Some(f()?);
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        let y = f()?;
        samples.push(start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
        out = Some(y);
    }
    let out = out.ok_or_else(|| BenchError::Config("no iterations requested".into()))?;
    Ok((out, samples))
}

fn measure(spec: &RunSpec, cfg: &ItsaConfig, mechanisms: &[Mechanism]) -> Result<BenchResult> {
    preflight(cfg, mechanisms)?;
    let x = features(cfg);
    let mut timings = Vec::new();
    let mut outputs = Vec::new();
    for &m in mechanisms {
        let (y, mut samples) = match m {
            Mechanism::Itsa => {
                let p = ItsaParams::init(cfg)?;
                time(spec.warmup_iters, spec.measured_iters, || {
                    itsa_block_fwd(&x, &p, cfg, Mode::Eval, &mut RngState::new(cfg.seed))
                })?
            }
            Mechanism::Mhsa => {
                let p = MhsaBaselineParams::init(cfg)?;
                time(spec.warmup_iters, spec.measured_iters, || mhsa_block_fwd(&x, &p, cfg))?
            }
        };
        let raw = samples.clone();
        samples.sort_by(f64::total_cmp);
        let mut cost = flops(m, cfg)?;
        cost.latency_seconds = Some(median(&samples));
        timings.push(Timing {
            mechanism: m,
            latency_median_s: median(&samples),
            latency_min_s: samples[0],
            samples_s: raw,
            output_digest: digest(&y),
            cost,
        });
        outputs.push((m, y));
    }
    Ok(BenchResult {
        config: cfg.clone(),
        environment: Environment {
            precision: "f64".into(),
            threads: spec.threads,
            warmup_iters: spec.warmup_iters,
            measured_iters: spec.measured_iters,
        },
        timings,
        outputs,
    })
}

/// Runs `f` on a dedicated pool with `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| BenchError::Resource(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

/// Both mechanisms see identical input tensors built from the seed.
pub fn run_bench(spec: &RunSpec) -> Result<BenchResult> {
    spec.validate()?;
    let mechanisms = spec.mechanism.mechanisms();
    with_threads(spec.threads, || measure(spec, &spec.config, &mechanisms))?
}

/// Latency of a single mechanism at `cfg` under the timing settings of `spec`.
pub fn run_single(spec: &RunSpec, cfg: &ItsaConfig, m: Mechanism) -> Result<Timing> {
    let r = with_threads(spec.threads, || measure(spec, cfg, &[m]))??;
    Ok(r.timings.into_iter().next().expect("one mechanism timed"))
}
