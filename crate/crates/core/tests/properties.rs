mod common;

use paramspec::autodiff::{AttentionShape, Graph, Var};
use paramspec::halluc::{lid_all, ClusterSet, PointCloud};
use paramspec::model::{MaskSpec, MlpStyle, TransformerWeights};
use paramspec::surgery::{build_mask, mask_count, rank_vectors};
use paramspec::tensor::{matmul, matmul_wide};
use paramspec::{stats, ActivationKind, Tensor};
use proptest::prelude::*;

use common::{small_model, RefModel};

fn style_and_act() -> impl Strategy<Value = (MlpStyle, ActivationKind)> {
    prop_oneof![
        Just((MlpStyle::TwoMatrix, ActivationKind::Gelu)),
        Just((MlpStyle::TwoMatrix, ActivationKind::Relu)),
        Just((MlpStyle::ThreeMatrixGated, ActivationKind::Silu)),
    ]
}

fn tokens() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..16, 1..=8)
}

fn mask_sets() -> impl Strategy<Value = Vec<Vec<usize>>> {
    // Layer 0 stays empty: the small model skips one layer.
    prop::collection::btree_set(0usize..64, 0..40)
        .prop_map(|s| vec![Vec::new(), s.into_iter().collect()])
}

fn max_rel_gap(a: &[f32], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - y).abs())
        .fold(0.0, f64::max)
        / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn masked_logits_match_reference(
        (style, act) in style_and_act(),
        seed in 0u64..1000,
        toks in tokens(),
        sets in mask_sets(),
    ) {
        let w = small_model(style, act, seed);
        let reference = RefModel::from_weights(&w).run(&toks, &sets);
        let mask = MaskSpec::new(sets, 1, 64).unwrap();
        let out = w.forward(&toks, Some(&mask), false).unwrap();
        for (t, row) in reference.logits.iter().enumerate() {
            let gap = max_rel_gap(out.logits_at(0, t), row);
            prop_assert!(gap < 1e-4, "position {t}: relative gap {gap}");
        }
    }

    #[test]
    fn relabeling_units_keeps_logits(
        seed in 0u64..1000,
        toks in tokens(),
        perm in Just((0..64).collect::<Vec<usize>>()).prop_shuffle(),
        layer in 0usize..2,
    ) {
        let w = small_model(MlpStyle::TwoMatrix, ActivationKind::Gelu, seed);
        let mut p = w.clone();
        p.permute_mlp_units(layer, &perm).unwrap();
        let a = w.forward(&toks, None, false).unwrap();
        let b = p.forward(&toks, None, false).unwrap();
        prop_assert_eq!(a.logits.data(), b.logits.data());
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in 0u64..1000, (style, act) in style_and_act()) {
        let w = small_model(style, act, seed);
        let back = TransformerWeights::from_bytes(&w.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back, w);
    }
}

proptest! {
    #[test]
    fn ranking_orders_by_gap_then_index(
        pairs in prop::collection::vec((-4i8..4, -4i8..4), 0..40),
    ) {
        // Small integers force plenty of ties.
        let a: Vec<f32> = pairs.iter().map(|p| f32::from(p.0) / 4.0).collect();
        let b: Vec<f32> = pairs.iter().map(|p| f32::from(p.1) / 4.0).collect();
        let order = rank_vectors(&a, &b).unwrap();
        let gap = |j: usize| (i32::from(pairs[j].0) - i32::from(pairs[j].1)).abs();
        let mut expected: Vec<usize> = (0..pairs.len()).collect();
        for i in 0..expected.len() {
            for j in i + 1..expected.len() {
                let (x, y) = (expected[i], expected[j]);
                if gap(y) > gap(x) || (gap(y) == gap(x) && y < x) {
                    expected.swap(i, j);
                }
            }
        }
        prop_assert_eq!(order, expected);
    }

    #[test]
    fn mask_count_rounds_half_up(k in 0.0f64..=1.0, n in 1usize..5000) {
        let c = mask_count(k, n);
        prop_assert!(c <= n);
        if k > 0.0 {
            prop_assert!(c >= 1);
            let exact = k * n as f64;
            prop_assert!(c == 1 || (c as f64 - exact).abs() <= 0.5 + 1e-9);
        } else {
            prop_assert_eq!(c, 0);
        }
    }

    #[test]
    fn larger_ratios_nest_masks(
        perms in prop::collection::vec(Just((0..50).collect::<Vec<usize>>()).prop_shuffle(), 4),
        k1 in 0.0f64..=1.0,
        k2 in 0.0f64..=1.0,
        skip in 0usize..4,
    ) {
        let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
        let small = build_mask(&perms, lo, skip).unwrap();
        let large = build_mask(&perms, hi, skip).unwrap();
        prop_assert!(small.is_subset_of(&large));
        for l in 0..skip {
            prop_assert!(large.layer(l).is_empty());
        }
        for l in skip..4 {
            prop_assert_eq!(large.layer(l).len(), mask_count(hi, 50));
        }
    }

    #[test]
    fn matmul_matches_triple_loop(
        (r, k, c) in (1usize..=8, 1usize..=8, 1usize..=8),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f32> = (0..r * k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f32> = (0..k * c).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ta = Tensor::new(vec![r, k], a.clone()).unwrap();
        let tb = Tensor::new(vec![k, c], b.clone()).unwrap();
        let fast = matmul(&ta, &tb).unwrap();
        let wide = matmul_wide(&ta, &tb).unwrap();
        for i in 0..r {
            for j in 0..c {
                let want: f64 = (0..k).map(|t| f64::from(a[i * k + t]) * f64::from(b[t * c + j])).sum();
                prop_assert!((f64::from(fast.data()[i * c + j]) - want).abs() < 1e-5);
                prop_assert_eq!(wide.data()[i * c + j], want as f32);
            }
        }
    }

    #[test]
    fn spearman_matches_rank_difference_formula(
        perm in Just((0..12).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 1.5).collect();
        let y: Vec<f64> = perm.iter().map(|&p| p as f64).collect();
        let n = 12.0;
        let d2: f64 = perm.iter().enumerate().map(|(i, &p)| ((i as f64) - p as f64).powi(2)).sum();
        let want = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
        let got = stats::spearman(&x, &y).unwrap();
        prop_assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn semantic_entropy_ignores_order_and_is_bounded(
        texts in prop::collection::vec(prop::sample::select(vec!["Red", "red ", "blue", "Blue.", "green", "teal"]), 1..30),
        seed in any::<u64>(),
    ) {
        use rand::{seq::SliceRandom, SeedableRng};
        let h = ClusterSet::from_texts(texts.iter().copied()).semantic_entropy().unwrap();
        let mut shuffled = texts.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let h2 = ClusterSet::from_texts(shuffled.iter().copied()).semantic_entropy().unwrap();
        prop_assert_eq!(h, h2);
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (texts.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn lid_ignores_rotation_translation_and_scale(
        seed in any::<u64>(),
        angle in 0.0f64..std::f64::consts::TAU,
        shift in prop::array::uniform3(-50.0f64..50.0),
        scale in 0.01f64..100.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let (s, c) = angle.sin_cos();
        let moved: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let rot = [c * r[0] - s * r[1], s * r[0] + c * r[1], r[2]];
                (0..3).map(|i| rot[i] * scale + shift[i]).collect()
            })
            .collect();
        let a = lid_all(&PointCloud::from_rows(&rows).unwrap(), 10).unwrap();
        let b = lid_all(&PointCloud::from_rows(&moved).unwrap(), 10).unwrap();
        for (x, y) in a.iter().zip(&b) {
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-6 * x.abs().max(1.0)),
                _ => prop_assert_eq!(x.is_some(), y.is_some()),
            }
        }
    }
}

/// Central finite differences of a scalar graph against its backward pass.
fn check_gradients(params: Vec<Tensor>, build: impl Fn(&mut Graph<'_>, &[Var]) -> Var) -> Result<(), TestCaseError> {
    let eval = |ps: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let out = build(&mut g, &vars);
        f64::from(g.value(out).item().unwrap())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = build(&mut g, &vars);
    g.backward(out).unwrap();
    let h = 1e-2f32;
    for (pi, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).expect("every input reaches the loss").clone();
        for i in 0..params[pi].len() {
            let mut plus = params.clone();
            plus[pi].data_mut()[i] += h;
            let mut minus = params.clone();
            minus[pi].data_mut()[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * f64::from(h));
            let an = f64::from(analytic.data()[i]);
            prop_assert!(
                (fd - an).abs() <= 2e-3 + 2e-2 * an.abs(),
                "input {pi} element {i}: analytic {an} vs numeric {fd}"
            );
        }
    }
    Ok(())
}

fn tensor_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.5f32..1.5, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn activation_kind() -> impl Strategy<Value = ActivationKind> {
    prop_oneof![Just(ActivationKind::Gelu), Just(ActivationKind::Silu), Just(ActivationKind::Relu)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mlp_ops_gradients_match_differences(
        x in tensor_strategy(3, 5),
        gain in prop::collection::vec(0.5f32..1.5, 5),
        bias in prop::collection::vec(-0.5f32..0.5, 5),
        w in tensor_strategy(5, 6),
        up in tensor_strategy(5, 6),
        kind in activation_kind(),
        targets in prop::collection::vec(prop::option::of(0usize..6), 3),
    ) {
        // Relu kinks make differences unreliable near zero; shift away from them.
        prop_assume!(kind != ActivationKind::Relu || x.data().iter().all(|v| v.abs() > 0.05));
        prop_assume!(targets.iter().any(Option::is_some));
        let params = vec![x, Tensor::vector(gain), Tensor::vector(bias), w, up];
        check_gradients(params, |g, v| {
            let n = g.layer_norm(v[0], v[1], v[2]).unwrap();
            let pre = g.matmul(n, v[3]).unwrap();
            let a = g.activation(pre, kind).unwrap();
            let lin = g.matmul_wide(n, v[4]).unwrap();
            let m = g.mul(a, lin).unwrap();
            g.cross_entropy(m, &targets).unwrap()
        })?;
    }

    #[test]
    fn attention_gradients_match_differences(
        q in tensor_strategy(6, 4),
        k in tensor_strategy(6, 4),
        v in tensor_strategy(6, 4),
        emb in tensor_strategy(5, 4),
        ids in prop::collection::vec(0usize..5, 6),
        targets in prop::collection::vec(0usize..4, 6),
    ) {
        let shape = AttentionShape { batch: 2, seq: 3, heads: 2 };
        let targets: Vec<Option<usize>> = targets.into_iter().map(Some).collect();
        check_gradients(vec![q, k, v, emb], |g, p| {
            let e = g.embedding(p[3], &ids).unwrap();
            let qe = g.add(p[0], e).unwrap();
            let o = g.causal_attention(qe, p[1], p[2], shape).unwrap();
            g.cross_entropy(o, &targets).unwrap()
        })?;
    }
}
