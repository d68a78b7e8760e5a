//! Run specification: defaults, flat JSON config files and flag overrides.

use std::path::{Path, PathBuf};

use itsa_core::flops::Mechanism;
use itsa_core::{DownsampleMode, GradScaleScope, ItsaConfig, PeRows};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Bench,
    Flops,
    Gradcheck,
    Ablate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismSel {
    Itsa,
    Mhsa,
    Both,
}

impl MechanismSel {
    pub fn mechanisms(self) -> Vec<Mechanism> {
        match self {
            Self::Itsa => vec![Mechanism::Itsa],
            Self::Mhsa => vec![Mechanism::Mhsa],
            Self::Both => vec![Mechanism::Itsa, Mechanism::Mhsa],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub mode: RunMode,
    pub config: ItsaConfig,
    pub mechanism: MechanismSel,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub threads: usize,
    pub format: Format,
    pub out: Option<PathBuf>,
    /// Gradcheck target name; all targets when unset.
    pub target: Option<String>,
}

/// Every key a config file may hold. All optional; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub tasks: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub channels: Option<usize>,
    pub pe_channels: Option<usize>,
    pub heads: Option<usize>,
    pub points: Option<usize>,
    pub levels: Option<usize>,
    pub steps: Option<usize>,
    pub lambda: Option<f64>,
    pub dropout: Option<f64>,
    pub ffn_factor: Option<usize>,
    pub seed: Option<u64>,
    pub positional_encoding: Option<bool>,
    pub pe_rows: Option<PeRows>,
    pub downsample: Option<DownsampleMode>,
    pub grad_scale_scope: Option<GradScaleScope>,
    pub mhsa_heads: Option<usize>,
    pub mhsa_positional_encoding: Option<bool>,
    pub mechanism: Option<MechanismSel>,
    pub warmup_iters: Option<usize>,
    pub measured_iters: Option<usize>,
    pub threads: Option<usize>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
    pub target: Option<String>,
}

macro_rules! merge {
    ($dst:ident, $src:ident; $($field:ident),*) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )*
    };
}

impl Overrides {
    /// Fields set in `other` win.
    pub fn merge(&mut self, other: &Overrides) {
        merge!(self, other; tasks, height, width, channels, pe_channels, heads, points, levels,
            steps, lambda, dropout, ffn_factor, seed, positional_encoding, pe_rows, downsample,
            grad_scale_scope, mhsa_heads, mhsa_positional_encoding, mechanism, warmup_iters,
            measured_iters, threads, format, out, target);
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            BenchError::Config(m) => BenchError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Paper hyperparameters (`C = 256`, `c = 24`, 4 heads, 16 points, 3 levels,
/// 3 steps, `lambda = 100`, dropout 0.1) at `T = 4`, `56 x 56`.
pub fn default_config(mode: RunMode) -> ItsaConfig {
    let paper = ItsaConfig::default();
    match mode {
        RunMode::Gradcheck => ItsaConfig {
            tasks: 2,
            height: 4,
            width: 4,
            channels: 8,
            pe_channels: 4,
            heads: 2,
            points: 4,
            levels: 2,
            steps: 1,
            lambda: 1.0,
            ..paper
        },
        _ => paper,
    }
}

/// Defaults for `mode`, then the config file, then flags.
pub fn parse_config(mode: RunMode, file: Option<&Path>, flags: &Overrides) -> Result<RunSpec> {
    let mut o = match file {
        Some(p) => Overrides::from_file(p)?,
        None => Overrides::default(),
    };
    o.merge(flags);
    build_spec(mode, &o)
}

pub fn build_spec(mode: RunMode, o: &Overrides) -> Result<RunSpec> {
    let mut c = default_config(mode);
    macro_rules! take {
        ($($field:ident),*) => { $( if let Some(v) = o.$field.clone() { c.$field = v; } )* };
    }
    take!(tasks, height, width, channels, pe_channels, heads, points, levels, steps, lambda,
        dropout, ffn_factor, seed, positional_encoding, pe_rows, downsample, grad_scale_scope,
        mhsa_heads, mhsa_positional_encoding);
    c.validate()?;
    let spec = RunSpec {
        mode,
        config: c,
        mechanism: o.mechanism.unwrap_or(MechanismSel::Both),
        warmup_iters: o.warmup_iters.unwrap_or(1),
        measured_iters: o.measured_iters.unwrap_or(5),
        threads: o.threads.unwrap_or(1),
        format: o.format.unwrap_or(Format::Json),
        out: o.out.clone(),
        target: o.target.clone(),
    };
    spec.validate()?;
    Ok(spec)
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let bad = |key: &str, msg: String| Err(BenchError::Config(format!("{key}: {msg}")));
        if self.threads == 0 {
            return bad("threads", "must be at least 1".into());
        }
        if matches!(self.mode, RunMode::Bench | RunMode::Ablate) {
            if self.measured_iters < 3 {
                return bad("measured_iters", format!("must be at least 3, got {}", self.measured_iters));
            }
            if self.warmup_iters < 1 {
                return bad("warmup_iters", "must be at least 1".into());
            }
        }
        if let Some(t) = &self.target {
            t.parse::<itsa_core::gradcheck::Target>()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_paper_defaults() {
        let s = build_spec(RunMode::Bench, &Overrides::from_json("{}").unwrap()).unwrap();
        let c = &s.config;
        assert_eq!((c.channels, c.pe_channels, c.heads, c.points, c.levels, c.steps), (256, 24, 4, 16, 3, 3));
        assert_eq!((c.lambda, c.dropout), (100.0, 0.1));
        assert_eq!(c.model_channels(), 280);
    }

    #[test]
    fn indivisible_model_channels_rejected() {
        let o = Overrides::from_json(r#"{"channels": 257}"#).unwrap();
        let e = build_spec(RunMode::Flops, &o).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("281"));
    }

    #[test]
    fn unknown_key_names_the_key() {
        let e = Overrides::from_json(r#"{"levls": 2}"#).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("levls"));
    }

    #[test]
    fn flags_override_file() {
        let mut file = Overrides::from_json(r#"{"levels": 3, "tasks": 2}"#).unwrap();
        file.merge(&Overrides { levels: Some(2), ..Default::default() });
        let s = build_spec(RunMode::Flops, &file).unwrap();
        assert_eq!((s.config.levels, s.config.tasks), (2, 2));
    }

    #[test]
    fn too_few_iterations() {
        let o = Overrides { measured_iters: Some(2), ..Default::default() };
        assert!(build_spec(RunMode::Bench, &o).is_err());
        assert!(build_spec(RunMode::Flops, &o).is_ok());
    }
}
