//! Structural ablation sweeps: pyramid depth, downsampling, positional code
//! and refinement steps.

use itsa_core::flops::{flops_itsa, CostReport, Mechanism};
use itsa_core::{DownsampleMode, ItsaConfig};
use serde::{Deserialize, Serialize};

use crate::bench::run_single;
use crate::error::Result;
use crate::spec::RunSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub setting: String,
    pub value_tokens: usize,
    pub model_channels: usize,
    pub per_step_flops: u64,
    pub cost: CostReport,
}

/// `(axis, setting, config)` for every sweep point around `base`.
pub fn ablation_points(base: &ItsaConfig) -> Vec<(String, String, ItsaConfig)> {
    let mut out = Vec::new();
    for levels in 1..=3 {
        out.push(("levels".into(), levels.to_string(), ItsaConfig { levels, ..base.clone() }));
    }
    for (name, mode) in [("conv3x3", DownsampleMode::Conv3x3), ("conv1x1_maxpool", DownsampleMode::Conv1x1MaxPool)] {
        out.push(("downsample".into(), name.into(), ItsaConfig { downsample: mode, ..base.clone() }));
    }
    for (name, on) in [("on", true), ("off", false)] {
        out.push((
            "positional_encoding".into(),
            name.into(),
            ItsaConfig { positional_encoding: on, ..base.clone() },
        ));
    }
    for steps in [1, 3] {
        out.push(("steps".into(), steps.to_string(), ItsaConfig { steps, ..base.clone() }));
    }
    out
}

/// FLOPs for every sweep point; with `measure_latency` each ITSA point is
/// also timed under the spec's iteration settings.
pub fn run_ablation_suite(spec: &RunSpec, measure_latency: bool) -> Result<Vec<AblationRow>> {
    spec.validate()?;
    ablation_points(&spec.config)
        .into_iter()
        .map(|(axis, setting, cfg)| {
            cfg.validate()?;
            let mut cost = flops_itsa(&cfg)?;
            if measure_latency {
                cost.latency_seconds = Some(run_single(spec, &cfg, Mechanism::Itsa)?.latency_median_s);
            }
            Ok(AblationRow {
                axis,
                setting,
                value_tokens: cfg.value_tokens(),
                model_channels: cfg.model_channels(),
                per_step_flops: cost.per_step_subtotal(),
                cost,
            })
        })
        .collect()
}
