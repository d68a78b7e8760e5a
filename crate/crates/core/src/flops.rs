//! Closed-form FLOP counts for the ITSA block and the global-MHSA baseline.
//!
//! Conventions: one multiply-accumulate is 2 FLOPs; softmax costs 5 FLOPs per
//! element (exp 4, divide 1); a max-pool comparison costs 1. Bias adds,
//! residual adds, dropout, layer norm and activations are not counted.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::block::{DownsampleMode, ItsaConfig};
use crate::error::{ensure, Error, Result};

pub const SOFTMAX_FLOPS_PER_ELEMENT: u64 = 5;
pub const MAC_FLOPS: u64 = 2;
/// 4-tap bilinear blend per channel: 4 multiplies and 4 adds.
pub const BILINEAR_FLOPS_PER_CHANNEL: u64 = 8;
pub const MAXPOOL_COMPARES: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Itsa,
    Mhsa,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Itsa => "itsa",
            Self::Mhsa => "mhsa",
        })
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "itsa" => Ok(Self::Itsa),
            "mhsa" => Ok(Self::Mhsa),
            other => Err(Error::InvalidArgument(format!("unknown mechanism {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub mechanism: Mechanism,
    pub config: ItsaConfig,
    pub flops_total: u64,
    pub flops_breakdown: BTreeMap<String, u64>,
    pub latency_seconds: Option<f64>,
}

impl CostReport {
    fn from_breakdown(mechanism: Mechanism, cfg: &ItsaConfig, breakdown: BTreeMap<String, u64>) -> Self {
        Self {
            mechanism,
            config: cfg.clone(),
            flops_total: breakdown.values().sum(),
            flops_breakdown: breakdown,
            latency_seconds: None,
        }
    }

    /// ITSA: cost of one refinement step. MHSA: the whole block.
    pub fn per_step_subtotal(&self) -> u64 {
        match self.mechanism {
            Mechanism::Mhsa => self.flops_total,
            Mechanism::Itsa => {
                let once = self.flops_breakdown.get("smlp").copied().unwrap_or(0);
                (self.flops_total - once) / self.config.steps as u64
            }
        }
    }
}

fn u(x: usize) -> u64 {
    x as u64
}

pub fn flops_mhsa(cfg: &ItsaConfig) -> Result<CostReport> {
    cfg.validate()?;
    let n = u(cfg.queries());
    let c = u(cfg.channels);
    let m = u(cfg.mhsa_heads);
    let f = u(cfg.ffn_factor);
    let b = BTreeMap::from([
        ("qkv_proj".to_string(), 3 * MAC_FLOPS * n * c * c),
        ("attn_scores".to_string(), MAC_FLOPS * n * n * c),
        ("softmax".to_string(), SOFTMAX_FLOPS_PER_ELEMENT * n * n * m),
        ("attn_weighted_sum".to_string(), MAC_FLOPS * n * n * c),
        ("output_proj".to_string(), MAC_FLOPS * n * c * c),
        ("mlp".to_string(), 2 * MAC_FLOPS * n * c * (f * c)),
    ]);
    Ok(CostReport::from_breakdown(Mechanism::Mhsa, cfg, b))
}

/// Per-step entries are already multiplied by the number of steps.
pub fn flops_itsa(cfg: &ItsaConfig) -> Result<CostReport> {
    cfg.validate()?;
    let nq = u(cfg.queries());
    let cm = u(cfg.model_channels());
    let (m, k, t, l) = (u(cfg.heads), u(cfg.points), u(cfg.tasks), u(cfg.levels));
    let dh = cm / m;
    let per_head = t * l * k;
    let samples = nq * m * per_head;
    let dims = cfg.level_dims();

    let pyramid: u64 = (1..dims.len())
        .map(|lv| {
            let (ho, wo) = (u(dims[lv].0), u(dims[lv].1));
            let (hi, wi) = (u(dims[lv - 1].0), u(dims[lv - 1].1));
            match cfg.downsample {
                DownsampleMode::Conv3x3 => MAC_FLOPS * t * ho * wo * cm * cm * 9,
                DownsampleMode::Conv1x1MaxPool => {
                    MAC_FLOPS * t * hi * wi * cm * cm + MAXPOOL_COMPARES * t * ho * wo * cm
                }
            }
        })
        .sum();

    let s = u(cfg.steps);
    let step = [
        ("offset_weight_heads", MAC_FLOPS * nq * cm * (m * per_head * 3)),
        ("softmax", SOFTMAX_FLOPS_PER_ELEMENT * nq * m * per_head),
        ("value_proj", MAC_FLOPS * u(cfg.value_tokens()) * cm * cm),
        ("sampling", BILINEAR_FLOPS_PER_CHANNEL * dh * samples),
        ("aggregation", MAC_FLOPS * samples * dh),
        ("output_proj", MAC_FLOPS * nq * cm * cm),
        ("pyramid", pyramid),
        ("ffn", 2 * MAC_FLOPS * nq * cm * (u(cfg.ffn_factor) * cm)),
    ];
    let mut b: BTreeMap<String, u64> = step.into_iter().map(|(k, v)| (k.to_string(), v * s)).collect();
    let c = u(cfg.channels);
    b.insert("smlp".to_string(), MAC_FLOPS * nq * c * c);
    Ok(CostReport::from_breakdown(Mechanism::Itsa, cfg, b))
}

pub fn flops(mechanism: Mechanism, cfg: &ItsaConfig) -> Result<CostReport> {
    match mechanism {
        Mechanism::Itsa => flops_itsa(cfg),
        Mechanism::Mhsa => flops_mhsa(cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Task count `T`.
    Tasks,
    /// Square resolution `H = W`.
    Resolution,
}

pub fn scaling_curve(
    mechanism: Mechanism,
    cfg: &ItsaConfig,
    axis: SweepAxis,
    values: &[usize],
) -> Result<Vec<CostReport>> {
    ensure!(!values.is_empty(), "sweep range must not be empty");
    values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            match axis {
                SweepAxis::Tasks => c.tasks = v,
                SweepAxis::Resolution => {
                    c.height = v;
                    c.width = v;
                }
            }
            flops(mechanism, &c)
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    ensure!(xs.len() == ys.len() && xs.len() >= 2, "need at least two matching points");
    ensure!(
        xs.iter().chain(ys).all(|v| *v > 0.0 && v.is_finite()),
        "log-log fit needs positive finite values"
    );
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    ensure!(sxx > 0.0, "x values must not all be equal");
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Slope of `flops_total` along a sweep.
pub fn curve_slope(values: &[usize], reports: &[CostReport]) -> Result<f64> {
    let xs: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let ys: Vec<f64> = reports.iter().map(|r| r.flops_total as f64).collect();
    loglog_slope(&xs, &ys)
}
