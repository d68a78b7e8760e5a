use itsa_core::block::{
    itsa_block_fwd, itsa_block_fwd_taped, mhsa_block_fwd, mhsa_queries_fwd,
};
use itsa_core::nn::{LinearParams, Mode};
use itsa_core::{ItsaConfig, ItsaParams, MhsaBaselineParams, RngState, Tensor};
use proptest::prelude::*;

fn features(cfg: &ItsaConfig, rng: &mut RngState, amplitude: f64) -> Vec<Tensor> {
    (0..cfg.tasks)
        .map(|_| Tensor::from_fn([cfg.height, cfg.width, cfg.channels], |_| rng.uniform(-amplitude, amplitude)))
        .collect()
}

#[test]
fn zero_init_step_averages_across_tasks() {
    let cfg = ItsaConfig {
        tasks: 3,
        height: 4,
        width: 5,
        channels: 8,
        pe_channels: 4,
        heads: 2,
        points: 4,
        levels: 1,
        steps: 1,
        lambda: 1.0,
        dropout: 0.0,
        ..ItsaConfig::default()
    };
    let mut params = ItsaParams::init(&cfg).unwrap();
    let c = cfg.model_channels();
    let attn = &mut params.steps[0].attn;
    attn.offset_head.bias.fill(0.0);
    attn.value_proj = LinearParams::identity(c);
    attn.output_proj = LinearParams::identity(c);
    let f = features(&cfg, &mut RngState::new(1), 1.0);
    let (_, tape) = itsa_block_fwd_taped(&f, &params, &cfg, Mode::Train, &mut RngState::new(2)).unwrap();
    let x = tape.steps[0].input.data();
    let normed = tape.steps[0].normed.data();
    let plane = cfg.height * cfg.width;
    let eps = params.steps[0].norm.eps;
    for q in 0..cfg.queries() {
        let cell = q % plane;
        let pre: Vec<f64> = (0..c)
            .map(|k| {
                let mean = (0..cfg.tasks).map(|t| x[(t * plane + cell) * c + k]).sum::<f64>() / cfg.tasks as f64;
                x[q * c + k] + mean
            })
            .collect();
        let mu = pre.iter().sum::<f64>() / c as f64;
        let var = pre.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / c as f64;
        for k in 0..c {
            let expect = (pre[k] - mu) / (var + eps).sqrt();
            assert!((normed[q * c + k] - expect).abs() < 1e-9, "query {q} channel {k}");
        }
    }
}

fn config_strategy() -> impl Strategy<Value = ItsaConfig> {
    (1usize..4, 1usize..7, 1usize..7, prop_oneof![Just(4usize), Just(8)], prop_oneof![Just(0usize), Just(4)])
        .prop_flat_map(|(tasks, height, width, channels, pe)| {
            let cm = channels + pe;
            let heads: Vec<usize> = (1..=cm).filter(|m| cm % m == 0 && *m <= 4).collect();
            (
                Just((tasks, height, width, channels, pe)),
                proptest::sample::select(heads),
                1usize..5,
                1usize..4,
                1usize..3,
                any::<u64>(),
                prop_oneof![Just(1.0f64), Just(100.0)],
            )
        })
        .prop_map(|((tasks, height, width, channels, pe), heads, points, levels, steps, seed, scale)| ItsaConfig {
            tasks,
            height,
            width,
            channels,
            pe_channels: pe,
            positional_encoding: pe > 0,
            heads,
            points,
            levels,
            steps,
            seed,
            lambda: scale,
            ffn_factor: 2,
            ..ItsaConfig::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn outputs_are_finite(cfg in config_strategy(), amplitude in 0.01f64..20.0) {
        let params = ItsaParams::init(&cfg).unwrap();
        let f = features(&cfg, &mut RngState::new(cfg.seed ^ 1), amplitude);
        let y = itsa_block_fwd(&f, &params, &cfg, Mode::Train, &mut RngState::new(cfg.seed)).unwrap();
        prop_assert_eq!(y.shape(), &[cfg.tasks * cfg.height, cfg.width, cfg.channels][..]);
        prop_assert!(y.all_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mhsa_is_permutation_equivariant(n in 1usize..40, seed in any::<u64>()) {
        let cfg = ItsaConfig { channels: 8, mhsa_heads: 2, seed, ..ItsaConfig::default() };
        let p = MhsaBaselineParams::init(&cfg).unwrap();
        let mut rng = RngState::new(seed);
        let x = Tensor::from_fn([n, 8], |_| rng.uniform(-2.0, 2.0));
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let xp = Tensor::from_fn([n, 8], |i| x.data()[perm[i / 8] * 8 + i % 8]);
        let y = mhsa_queries_fwd(&x, &p).unwrap();
        let yp = mhsa_queries_fwd(&xp, &p).unwrap();
        for i in 0..n {
            for k in 0..8 {
                prop_assert!((yp.data()[i * 8 + k] - y.data()[perm[i] * 8 + k]).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn shape_contract_grid() {
    for tasks in [1, 2, 3] {
        for height in [1, 3, 5] {
            for width in [2, 4, 7] {
                for channels in [4, 8] {
                    let cfg = ItsaConfig {
                        tasks, height, width, channels,
                        pe_channels: 4, heads: 2, points: 2, levels: 3, steps: 1,
                        ..ItsaConfig::default()
                    };
                    let params = ItsaParams::init(&cfg).unwrap();
                    let f = features(&cfg, &mut RngState::new(0), 1.0);
                    let y = itsa_block_fwd(&f, &params, &cfg, Mode::Eval, &mut RngState::new(0)).unwrap();
                    assert_eq!(y.shape(), &[tasks * height, width, channels]);
                    let m = mhsa_block_fwd(&f, &MhsaBaselineParams::init(&cfg).unwrap(), &cfg).unwrap();
                    assert_eq!(m.shape(), &[tasks * height, width, channels]);
                }
            }
        }
    }
}

#[test]
fn train_mode_dropout_is_reproducible_from_the_rng() {
    let cfg = ItsaConfig { tasks: 2, height: 3, width: 3, channels: 8, pe_channels: 4, heads: 2, points: 2, levels: 2, steps: 2, ..ItsaConfig::default() };
    let params = ItsaParams::init(&cfg).unwrap();
    let f = features(&cfg, &mut RngState::new(3), 1.0);
    let a = itsa_block_fwd(&f, &params, &cfg, Mode::Train, &mut RngState::new(7)).unwrap();
    let b = itsa_block_fwd(&f, &params, &cfg, Mode::Train, &mut RngState::new(7)).unwrap();
    let c = itsa_block_fwd(&f, &params, &cfg, Mode::Train, &mut RngState::new(8)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
