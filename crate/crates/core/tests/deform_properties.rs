use itsa_core::deform::{
    attention_weights, def_attn_fwd, make_reference_points, DefAttnParams, ValueMapSet,
};
use itsa_core::nn::{bilinear_sample_fwd, linear_fwd, LinearParams};
use itsa_core::{ParamSet, RngState, Tensor};
use proptest::prelude::*;

fn random(shape: impl Into<Vec<usize>>, rng: &mut RngState, a: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform(-a, a))
}

fn level_maps(tasks: usize, h: usize, w: usize, levels: usize, c: usize, rng: &mut RngState) -> Vec<Tensor> {
    let mut dims = vec![(h, w)];
    for _ in 1..levels {
        let (a, b) = *dims.last().unwrap();
        dims.push((a.div_ceil(2), b.div_ceil(2)));
    }
    dims.iter()
        .flat_map(|&(a, b)| (0..tasks).map(move |_| (a, b)))
        .map(|(a, b)| random([a, b, c], rng, 1.0))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn head_weights_sum_to_one(
        tasks in 1usize..4, h in 1usize..6, w in 1usize..6, levels in 1usize..4,
        heads in 1usize..4, points in 1usize..6, seed in any::<u64>(),
    ) {
        let mut rng = RngState::new(seed);
        let c = 4 * heads;
        let maps = level_maps(tasks, h, w, levels, c, &mut rng);
        let values = ValueMapSet::new(maps, tasks, levels).unwrap();
        let refs = make_reference_points(tasks, h, w, levels).unwrap();
        let mut p = DefAttnParams::init(c, heads, tasks * levels, points, (h, w), &mut rng).unwrap();
        p.perturb(&mut rng, 2.0);
        let q = random([tasks * h * w, c], &mut rng, 3.0);
        let wts = attention_weights(&q, &values, &refs, &p).unwrap();
        prop_assert_eq!(wts.shape(), &[tasks * h * w, heads, tasks * levels * points][..]);
        for row in wts.data().chunks(tasks * levels * points) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let y = def_attn_fwd(&q, &values, &refs, &p).unwrap();
        prop_assert_eq!(y.shape(), &[tasks * h * w, c][..]);
        prop_assert!(y.all_finite());
    }

    #[test]
    fn linear_in_values_for_fixed_queries(
        tasks in 1usize..3, h in 1usize..5, w in 1usize..5, levels in 1usize..4, seed in any::<u64>(),
    ) {
        let mut rng = RngState::new(seed);
        let (c, heads, points) = (8, 2, 3);
        let refs = make_reference_points(tasks, h, w, levels).unwrap();
        let mut p = DefAttnParams::init(c, heads, tasks * levels, points, (h, w), &mut rng).unwrap();
        p.perturb(&mut rng, 0.3);
        p.value_proj.bias.fill(0.0);
        p.output_proj.bias.fill(0.0);
        let q = random([tasks * h * w, c], &mut rng, 1.0);
        let a = level_maps(tasks, h, w, levels, c, &mut rng);
        let b = level_maps(tasks, h, w, levels, c, &mut rng);
        let sum: Vec<Tensor> = a.iter().zip(&b).map(|(x, y)| x.add(y).unwrap()).collect();
        let f = |m: Vec<Tensor>| def_attn_fwd(&q, &ValueMapSet::new(m, tasks, levels).unwrap(), &refs, &p).unwrap();
        let lhs = f(sum);
        let rhs = f(a).add(&f(b)).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-9);
    }

    #[test]
    fn bilinear_is_linear_between_adjacent_centres(
        h in 2usize..8, w in 2usize..8, t in 0.0f64..1.0, seed in any::<u64>(),
    ) {
        let mut rng = RngState::new(seed);
        let map = random([h, w, 3], &mut rng, 1.0);
        let (r, c) = (rng.below(h), rng.below(w - 1));
        let u = (r as f64 + 0.5) / h as f64;
        let v = (c as f64 + 0.5 + t) / w as f64;
        let y = bilinear_sample_fwd(&map, &Tensor::new([1, 2], vec![u, v]).unwrap()).unwrap();
        for ch in 0..3 {
            let a = map.data()[(r * w + c) * 3 + ch];
            let b = map.data()[(r * w + c + 1) * 3 + ch];
            prop_assert!((y.data()[ch] - (a + t * (b - a))).abs() <= 1e-12);
        }
    }
}

#[test]
fn single_map_single_point_reads_the_reference_cell() {
    let mut rng = RngState::new(4);
    let (h, w, c) = (3, 5, 6);
    let map = random([h, w, c], &mut rng, 1.0);
    let values = ValueMapSet::new(vec![map.clone()], 1, 1).unwrap();
    let refs = make_reference_points(1, h, w, 1).unwrap();
    let mut p = DefAttnParams::init(c, 1, 1, 1, (h, w), &mut rng).unwrap();
    p.offset_head.bias.fill(0.0);
    let q = random([h * w, c], &mut rng, 1.0);
    let y = def_attn_fwd(&q, &values, &refs, &p).unwrap();
    let flat = map.reshape([h * w, c]).unwrap();
    let expect = linear_fwd(&linear_fwd(&flat, &p.value_proj).unwrap(), &p.output_proj).unwrap();
    assert!(y.sub(&expect).unwrap().max_abs() < 1e-12);
}

#[test]
fn zero_heads_with_identity_projections_average_across_tasks_and_levels() {
    let mut rng = RngState::new(5);
    let (tasks, h, w, levels, c) = (3, 4, 4, 2, 4);
    let maps = level_maps(tasks, h, w, levels, c, &mut rng);
    let values = ValueMapSet::new(maps.clone(), tasks, levels).unwrap();
    let refs = make_reference_points(tasks, h, w, levels).unwrap();
    let mut p = DefAttnParams::init(c, 2, tasks * levels, 4, (h, w), &mut rng).unwrap();
    p.offset_head.bias.fill(0.0);
    p.value_proj = LinearParams::identity(c);
    p.output_proj = LinearParams::identity(c);
    let q = random([tasks * h * w, c], &mut rng, 1.0);
    let y = def_attn_fwd(&q, &values, &refs, &p).unwrap();
    for qi in 0..tasks * h * w {
        let (r, col) = ((qi / w) % h, qi % w);
        let pt = Tensor::new([1, 2], vec![(r as f64 + 0.5) / h as f64, (col as f64 + 0.5) / w as f64]).unwrap();
        let mut mean = vec![0.0; c];
        for m in &maps {
            let s = bilinear_sample_fwd(m, &pt).unwrap();
            for (a, b) in mean.iter_mut().zip(s.data()) {
                *a += b / maps.len() as f64;
            }
        }
        for (a, b) in y.data()[qi * c..(qi + 1) * c].iter().zip(&mean) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
