//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::time::Instant;

use itsa_bench::report::render;
use itsa_bench::{parse_config, run_bench, Format, MechanismSel, Overrides, Report, RunMode};
use itsa_core::block::{itsa_block_fwd, mhsa_queries_fwd};
use itsa_core::deform::{attention_weights, def_attn_fwd, make_reference_points, DefAttnParams, ValueMapSet};
use itsa_core::flops::{curve_slope, flops_itsa, flops_mhsa, scaling_curve, Mechanism, SweepAxis};
use itsa_core::gradcheck::{check, GradCheckOptions, Target};
use itsa_core::nn::{bilinear_sample_fwd, LinearParams, Mode};
use itsa_core::{ItsaConfig, ItsaParams, MhsaBaselineParams, ParamSet, RngState, Tensor};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn random(shape: impl Into<Vec<usize>>, rng: &mut RngState, a: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform(-a, a))
}

fn gradcheck_config() -> ItsaConfig {
    ItsaConfig {
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
        ..ItsaConfig::default()
    }
}

fn gradient_correctness() -> Outcome {
    let cfg = gradcheck_config();
    let mut worst = Vec::new();
    let mut failures = Vec::new();
    let mut runs = 0;
    for target in Target::ALL {
        let mut max: f64 = 0.0;
        for seed in [11, 22, 33] {
            let opts = GradCheckOptions { seed, eps: 1e-5, tolerance: None };
            match check(target, &cfg, &opts) {
                Ok(r) => {
                    runs += 1;
                    max = max.max(r.max_error());
                    if !r.passed {
                        failures.push(format!("{target}/seed {seed}"));
                    }
                }
                Err(e) => failures.push(format!("{target}/seed {seed}: {e}")),
            }
        }
        worst.push(format!("{target} {max:.1e}"));
    }
    let detail = format!(
        "{runs} checks (tol 1e-5, block 1e-4); max rel. error per target: {}{}",
        worst.join(", "),
        if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
    );
    outcome(failures.is_empty(), detail)
}

/// Bilinear read with border clamping, written out independently of the library.
fn sample_reference(map: &Tensor, u: f64, v: f64) -> Vec<f64> {
    let (h, w, c) = (map.dim(0), map.dim(1), map.dim(2));
    let y = (u * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let x = (v * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |r: usize, s: usize, k: usize| map.data()[(r * w + s) * c + k];
    (0..c)
        .map(|k| {
            (1.0 - fy) * ((1.0 - fx) * at(y0, x0, k) + fx * at(y0, x1, k))
                + fy * ((1.0 - fx) * at(y1, x0, k) + fx * at(y1, x1, k))
        })
        .collect()
}

fn zero_init_degeneracy() -> Outcome {
    let (tasks, h, w, levels, c, heads, points) = (3, 6, 5, 3, 12, 3, 4);
    let mut rng = RngState::new(2);
    let mut dims: Vec<(usize, usize)> = vec![(h, w)];
    for _ in 1..levels {
        let (a, b) = *dims.last().unwrap();
        dims.push((a.div_ceil(2), b.div_ceil(2)));
    }
    let maps: Vec<Tensor> = dims
        .iter()
        .flat_map(|&d| std::iter::repeat(d).take(tasks))
        .map(|(a, b)| random([a, b, c], &mut rng, 1.0))
        .collect();
    let values = ValueMapSet::new(maps.clone(), tasks, levels).unwrap();
    let refs = make_reference_points(tasks, h, w, levels).unwrap();
    let mut p = DefAttnParams::init(c, heads, tasks * levels, points, (h, w), &mut rng).unwrap();
    p.offset_head = LinearParams::zeros(c, p.offset_head.out_features());
    p.weight_head = LinearParams::zeros(c, p.weight_head.out_features());
    p.value_proj = LinearParams::identity(c);
    p.output_proj = LinearParams::identity(c);
    let q = random([tasks * h * w, c], &mut rng, 1.0);
    let y = def_attn_fwd(&q, &values, &refs, &p).unwrap();
    let mut err: f64 = 0.0;
    for qi in 0..tasks * h * w {
        let (r, s) = ((qi / w) % h, qi % w);
        let (u, v) = ((r as f64 + 0.5) / h as f64, (s as f64 + 0.5) / w as f64);
        let mut mean = vec![0.0; c];
        for m in &maps {
            for (acc, x) in mean.iter_mut().zip(sample_reference(m, u, v)) {
                *acc += x * points as f64;
            }
        }
        for k in 0..c {
            let expect = mean[k] / (tasks * levels * points) as f64;
            err = err.max((y.data()[qi * c + k] - expect).abs());
        }
    }
    outcome(err <= 1e-9, format!("max |def_attn - uniform reference mean| = {err:.2e} (tol 1e-9)"))
}

fn normalization() -> Outcome {
    let (tasks, h, w, levels, c, heads, points) = (4, 10, 25, 3, 16, 4, 16);
    let mut rng = RngState::new(3);
    let cfg = ItsaConfig { tasks, height: h, width: w, levels, ..ItsaConfig::default() };
    let maps: Vec<Tensor> = cfg
        .level_dims()
        .into_iter()
        .flat_map(|d| std::iter::repeat(d).take(tasks))
        .map(|(a, b)| random([a, b, c], &mut rng, 1.0))
        .collect();
    let values = ValueMapSet::new(maps, tasks, levels).unwrap();
    let refs = make_reference_points(tasks, h, w, levels).unwrap();
    let mut p = DefAttnParams::init(c, heads, tasks * levels, points, (h, w), &mut rng).unwrap();
    p.perturb(&mut rng, 3.0);
    let q = random([tasks * h * w, c], &mut rng, 5.0);
    let wts = attention_weights(&q, &values, &refs, &p).unwrap();
    let per_head = tasks * levels * points;
    let err = wts
        .data()
        .chunks(per_head)
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    outcome(
        err <= 1e-12,
        format!("{} queries x {heads} heads, max |sum - 1| = {err:.2e} (tol 1e-12)", tasks * h * w),
    )
}

fn bilinear_exactness() -> Outcome {
    let (h, w) = (7, 5);
    let mut rng = RngState::new(4);
    let map = random([h, w, 3], &mut rng, 10.0);
    let centres = Tensor::from_fn([h * w, 2], |i| {
        let cell = i / 2;
        if i % 2 == 0 {
            ((cell / w) as f64 + 0.5) / h as f64
        } else {
            ((cell % w) as f64 + 0.5) / w as f64
        }
    });
    let y = bilinear_sample_fwd(&map, &centres).unwrap();
    let exact = y.data().iter().zip(map.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    let (top, bottom) = (0.5 / h as f64, (h as f64 - 0.5) / h as f64);
    let (left, right) = (0.5 / w as f64, (w as f64 - 0.5) / w as f64);
    let pairs = [
        ((-0.3, 0.5), (top, 0.5)),
        ((1.4, 0.37), (bottom, 0.37)),
        ((0.61, -2.0), (0.61, left)),
        ((0.2, 1.01), (0.2, right)),
        ((-1.0, 7.0), (top, right)),
        ((0.02, 0.03), (top, left)),
    ];
    let outside: Vec<f64> = pairs.iter().flat_map(|(a, _)| [a.0, a.1]).collect();
    let clamped: Vec<f64> = pairs.iter().flat_map(|(_, b)| [b.0, b.1]).collect();
    let a = bilinear_sample_fwd(&map, &Tensor::new([pairs.len(), 2], outside).unwrap()).unwrap();
    let b = bilinear_sample_fwd(&map, &Tensor::new([pairs.len(), 2], clamped).unwrap()).unwrap();
    let edges = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    outcome(
        exact && edges,
        format!("7x5 centres bit-exact: {exact}; {} out-of-range points equal clamped edge: {edges}", pairs.len()),
    )
}

fn shape_contract() -> Outcome {
    let mut bad = Vec::new();
    let mut n = 0;
    for tasks in [1, 2, 3] {
        for height in [1, 4, 7] {
            for width in [2, 3, 8] {
                for channels in [4, 12] {
                    n += 1;
                    let cfg = ItsaConfig {
                        tasks, height, width, channels,
                        pe_channels: 4, heads: 2, points: 4, levels: 3, steps: 2,
                        ..ItsaConfig::default()
                    };
                    let p = ItsaParams::init(&cfg).unwrap();
                    let mut rng = RngState::new(n);
                    let f: Vec<Tensor> = (0..tasks).map(|_| random([height, width, channels], &mut rng, 1.0)).collect();
                    let y = itsa_block_fwd(&f, &p, &cfg, Mode::Eval, &mut RngState::new(0)).unwrap();
                    if y.shape() != [tasks * height, width, channels] {
                        bad.push(format!("{:?}", (tasks, height, width, channels)));
                    }
                }
            }
        }
    }
    outcome(bad.is_empty(), format!("{n} configs produce (T*H, W, C){}", if bad.is_empty() { String::new() } else { format!("; wrong: {}", bad.join(" ")) }))
}

fn flops_scaling() -> Outcome {
    let base = ItsaConfig { tasks: 4, height: 56, width: 56, channels: 256, heads: 4, mhsa_heads: 4, points: 16, levels: 3, steps: 1, ..ItsaConfig::default() };
    let t: Vec<usize> = (1..=8).collect();
    let at32 = ItsaConfig { height: 32, width: 32, ..base.clone() };
    let mhsa_curve = scaling_curve(Mechanism::Mhsa, &at32, SweepAxis::Tasks, &t).unwrap();
    let slope = curve_slope(&t, &mhsa_curve).unwrap();
    let core: Vec<f64> = mhsa_curve
        .iter()
        .map(|r| (r.flops_breakdown["attn_scores"] + r.flops_breakdown["softmax"] + r.flops_breakdown["attn_weighted_sum"]) as f64)
        .collect();
    let xs: Vec<f64> = t.iter().map(|&v| v as f64).collect();
    let core_slope = itsa_core::flops::loglog_slope(&xs, &core).unwrap();
    let slope_ok = (1.9..=2.1).contains(&slope);

    let small = flops_itsa(&at32).unwrap();
    let large = flops_itsa(&ItsaConfig { height: 64, width: 64, ..base.clone() }).unwrap();
    let worst_growth = small
        .flops_breakdown
        .iter()
        .filter(|(_, v)| **v > 0)
        .map(|(k, v)| large.flops_breakdown[k] as f64 / *v as f64)
        .fold(0.0, f64::max);
    let linear_ok = worst_growth <= 4.2;

    let itsa = flops_itsa(&base).unwrap().flops_total as f64;
    let mhsa = flops_mhsa(&base).unwrap().flops_total as f64;
    let ratio = mhsa / itsa;
    let ratio_ok = (8.0..=40.0).contains(&ratio);
    outcome(
        slope_ok && linear_ok && ratio_ok,
        format!(
            "MHSA slope over T=1..8 at 32x32: {slope:.3} (need [1.9, 2.1]; attention-core terms alone {core_slope:.3}); \
             largest ITSA term growth for 4x queries: {worst_growth:.3} (quadratic would be 16); \
             flops_mhsa/flops_itsa at T=4, 56x56: {mhsa:.3e}/{itsa:.3e} = {ratio:.2} (need [8, 40])"
        ),
    )
}

fn latency() -> Outcome {
    let o = Overrides {
        tasks: Some(4),
        height: Some(56),
        width: Some(56),
        channels: Some(256),
        steps: Some(1),
        levels: Some(3),
        threads: Some(1),
        warmup_iters: Some(1),
        measured_iters: Some(3),
        mechanism: Some(MechanismSel::Both),
        ..Overrides::default()
    };
    let spec = parse_config(RunMode::Bench, None, &o).unwrap();
    let r = run_bench(&spec).unwrap();
    let i = r.timing(Mechanism::Itsa).unwrap().latency_median_s;
    let m = r.timing(Mechanism::Mhsa).unwrap().latency_median_s;
    let ratio = m / i;
    outcome(ratio >= 5.0, format!("median forward, 1 thread: itsa {i:.3} s, mhsa {m:.3} s, speed-up {ratio:.2}x (need >= 5x)"))
}

fn determinism() -> Outcome {
    let o = Overrides {
        tasks: Some(2),
        height: Some(12),
        width: Some(10),
        channels: Some(32),
        pe_channels: Some(8),
        steps: Some(2),
        threads: Some(1),
        measured_iters: Some(3),
        seed: Some(77),
        ..Overrides::default()
    };
    let spec = parse_config(RunMode::Bench, None, &o).unwrap();
    let a = run_bench(&spec).unwrap();
    let b = run_bench(&spec).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same_outputs = a.outputs.len() == 2
        && a.outputs.iter().zip(&b.outputs).all(|((ka, ta), (kb, tb))| ka == kb && ta.shape() == tb.shape() && bits(ta) == bits(tb));
    let strip = |r| {
        render(&Report::Bench(r), Format::Csv)
            .unwrap()
            .lines()
            .map(|l| l.split(',').take(11).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
    };
    let same_rows = strip(a) == strip(b);
    outcome(same_outputs && same_rows, format!("bit-identical outputs: {same_outputs}; identical CSV rows without latency: {same_rows}"))
}

fn baseline_sanity() -> Outcome {
    let cfg = ItsaConfig { tasks: 3, height: 5, width: 4, channels: 16, mhsa_heads: 4, mhsa_positional_encoding: false, ..ItsaConfig::default() };
    let p = MhsaBaselineParams::init(&cfg).unwrap();
    let n = cfg.queries();
    let mut rng = RngState::new(9);
    let x = random([n, 16], &mut rng, 2.0);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.below(i + 1));
    }
    let xp = Tensor::from_fn([n, 16], |i| x.data()[perm[i / 16] * 16 + i % 16]);
    let y = mhsa_queries_fwd(&x, &p).unwrap();
    let yp = mhsa_queries_fwd(&xp, &p).unwrap();
    let err = (0..n * 16).map(|i| (yp.data()[i] - y.data()[perm[i / 16] * 16 + i % 16]).abs()).fold(0.0, f64::max);
    outcome(err <= 1e-9, format!("{n} permuted queries, max deviation {err:.2e} (tol 1e-9)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", gradient_correctness),
        ("zero-init degeneracy", zero_init_degeneracy),
        ("attention normalization", normalization),
        ("bilinear exactness", bilinear_exactness),
        ("shape contract", shape_contract),
        ("FLOPs scaling", flops_scaling),
        ("latency reduction", latency),
        ("determinism", determinism),
        ("baseline sanity", baseline_sanity),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {} {name}: {} ({:.1} s)", i + 1, o.detail, start.elapsed().as_secs_f64());
        if !o.passed {
            failed.push(i + 1);
        }
    }
    println!("[SKIP] 10 prediction quality: needs full dataset training, not run");
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
