use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use itsa_core::flops::{flops, Mechanism};
use itsa_core::gradcheck::{check, GradCheckOptions, Target};
use itsa_core::{DownsampleMode, GradScaleScope, PeRows};
use itsa_bench::{
    emit_report, parse_config, run_ablation_suite, run_bench, BenchError, Format, MechanismSel,
    Overrides, Report, Result, RunMode,
};

#[derive(Parser)]
#[command(name = "itsa-bench", version, about = "Latency, FLOPs, gradient checks and ablations for ITSA vs. MHSA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time forward passes of the selected mechanisms.
    Bench(Common),
    /// Closed-form FLOPs breakdown.
    Flops(Common),
    /// Finite-difference check of the backward passes.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Single target (default: all registered targets).
        #[arg(long)]
        target: Option<String>,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Relative-error threshold (default: per-target).
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Sweep pyramid levels, downsampling, positional code and steps.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Also time every sweep point.
        #[arg(long)]
        latency: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Itsa,
    Mhsa,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum DownsampleArg {
    Conv3x3,
    Conv1x1Maxpool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PeRowsArg {
    Global,
    PerTask,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Module,
    OffsetHead,
}

#[derive(Args)]
struct Common {
    /// Flat JSON config; flags take precedence over its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    pe_channels: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    mhsa_heads: Option<usize>,
    /// Disable the positional code of the ITSA block.
    #[arg(long)]
    no_pe: bool,
    /// Add a positional code to the MHSA baseline input.
    #[arg(long)]
    mhsa_pe: bool,
    #[arg(long, value_enum)]
    pe_rows: Option<PeRowsArg>,
    #[arg(long, value_enum)]
    downsample: Option<DownsampleArg>,
    #[arg(long, value_enum)]
    grad_scale_scope: Option<ScopeArg>,
    #[arg(long, value_enum)]
    mechanism: Option<MechanismArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Measured iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            tasks: self.tasks,
            height: self.height,
            width: self.width,
            channels: self.channels,
            pe_channels: self.pe_channels,
            heads: self.heads,
            points: self.points,
            levels: self.levels,
            steps: self.steps,
            lambda: self.lambda,
            dropout: self.dropout,
            seed: self.seed,
            mhsa_heads: self.mhsa_heads,
            positional_encoding: self.no_pe.then_some(false),
            mhsa_positional_encoding: self.mhsa_pe.then_some(true),
            pe_rows: self.pe_rows.map(|p| match p {
                PeRowsArg::Global => PeRows::Global,
                PeRowsArg::PerTask => PeRows::PerTask,
            }),
            downsample: self.downsample.map(|d| match d {
                DownsampleArg::Conv3x3 => DownsampleMode::Conv3x3,
                DownsampleArg::Conv1x1Maxpool => DownsampleMode::Conv1x1MaxPool,
            }),
            grad_scale_scope: self.grad_scale_scope.map(|s| match s {
                ScopeArg::Module => GradScaleScope::Module,
                ScopeArg::OffsetHead => GradScaleScope::OffsetHead,
            }),
            mechanism: self.mechanism.map(|m| match m {
                MechanismArg::Itsa => MechanismSel::Itsa,
                MechanismArg::Mhsa => MechanismSel::Mhsa,
                MechanismArg::Both => MechanismSel::Both,
            }),
            measured_iters: self.iters,
            warmup_iters: self.warmup,
            threads: self.threads,
            format: self.format.map(|f| match f {
                FormatArg::Json => Format::Json,
                FormatArg::Csv => Format::Csv,
            }),
            out: self.out.clone(),
            ..Overrides::default()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bench(common) => {
            let spec = parse_config(RunMode::Bench, common.config.as_deref(), &common.overrides())?;
            let result = run_bench(&spec)?;
            if let (Some(i), Some(m)) = (result.timing(Mechanism::Itsa), result.timing(Mechanism::Mhsa)) {
                eprintln!(
                    "median latency: itsa {:.4} s, mhsa {:.4} s, ratio {:.2}",
                    i.latency_median_s,
                    m.latency_median_s,
                    m.latency_median_s / i.latency_median_s
                );
            }
            emit_report(&Report::Bench(result), spec.format, spec.out.as_deref())
        }
        Command::Flops(common) => {
            let spec = parse_config(RunMode::Flops, common.config.as_deref(), &common.overrides())?;
            let reports = spec
                .mechanism
                .mechanisms()
                .into_iter()
                .map(|m| flops(m, &spec.config))
                .collect::<itsa_core::Result<Vec<_>>>()?;
            emit_report(&Report::Flops(reports), spec.format, spec.out.as_deref())
        }
        Command::Gradcheck { common, target, seeds, tolerance } => {
            let mut o = common.overrides();
            o.target = target;
            let spec = parse_config(RunMode::Gradcheck, common.config.as_deref(), &o)?;
            let targets = match &spec.target {
                Some(t) => vec![t.parse::<Target>()?],
                None => Target::ALL.to_vec(),
            };
            let mut reports = Vec::new();
            for t in targets {
                for s in 0..seeds.max(1) {
                    let opts = GradCheckOptions { seed: spec.config.seed + s, tolerance, ..Default::default() };
                    let r = check(t, &spec.config, &opts)?;
                    eprintln!(
                        "{} {:<16} seed {:<4} max rel. error {:.3e} (tol {:.0e})",
                        if r.passed { "PASS" } else { "FAIL" },
                        r.target,
                        r.seed,
                        r.max_error(),
                        r.tolerance
                    );
                    reports.push(r);
                }
            }
            let failed = reports.iter().filter(|r| !r.passed).count();
            emit_report(&Report::Gradcheck(reports), spec.format, spec.out.as_deref())?;
            if failed > 0 {
                return Err(BenchError::Check(format!("{failed} gradient checks exceeded tolerance")));
            }
            Ok(())
        }
        Command::Ablate { common, latency } => {
            let spec = parse_config(RunMode::Ablate, common.config.as_deref(), &common.overrides())?;
            let rows = run_ablation_suite(&spec, latency)?;
            emit_report(&Report::Ablation(rows), spec.format, spec.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("itsa-bench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
