use std::collections::BTreeSet;

use proptest::prelude::*;
use proxydml::bounds::{
    normalize_config, random_constant_norm_config, sample_nca, sample_triplets, verify_nca_bound,
    verify_ordinal_preservation, verify_ranking_expectation_bound, verify_total_loss_bound, verify_triplet_bound,
    SurrogateLoss,
};
use proxydml::data::{generate_synthetic, split_zero_shot, SynthConfig};
use proxydml::embedding::{squared_distance, ModelConfig};
use proxydml::eval::{kmeans, nmi, recall_at_k};
use proxydml::losses::{log_sum_exp, nca_loss, ranking_loss};
use proxydml::proxies::{fractional_preassign, proxy_approx_error, DistanceKind};
use proxydml::trainer::{init_run, train, EvalConfig, LossKind, TrainConfig, Trainer};

fn vecs(n: impl Into<prop::collection::SizeRange>, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, dim), n)
}

proptest! {
    #[test]
    fn nmi_is_permutation_invariant(
        pairs in prop::collection::vec((0..6usize, 0..6usize), 1..50),
        perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let relabeled: Vec<usize> = a.iter().map(|&x| perm[x]).collect();
        prop_assert!((nmi(&a, &b).unwrap() - nmi(&relabeled, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn nmi_is_symmetric_and_bounded(pairs in prop::collection::vec((0..6usize, 0..6usize), 1..50)) {
        let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let ab = nmi(&a, &b).unwrap();
        prop_assert!((ab - nmi(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((nmi(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recall_is_monotone_in_k(emb in vecs(2..30, 3), labels in prop::collection::vec(0..4usize, 30)) {
        let labels = &labels[..emb.len()];
        let ks: Vec<usize> = (1..emb.len()).collect();
        let r = recall_at_k(&emb, labels, &ks).unwrap();
        let values: Vec<f64> = r.recall_at.values().copied().collect();
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn kmeans_inertia_never_increases(points in vecs(3..40, 2), k in 1..4usize, seed in 0..100u64) {
        let r = kmeans(&points, k.min(points.len()), seed, 50).unwrap();
        prop_assert!(r.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0)));
    }

    #[test]
    fn squared_distance_expands(a in prop::collection::vec(-10.0..10.0f64, 5), b in prop::collection::vec(-10.0..10.0f64, 5)) {
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        let expanded = dot(&a, &a) + dot(&b, &b) - 2.0 * dot(&a, &b);
        let d = squared_distance(&a, &b).unwrap();
        prop_assert!((d - expanded).abs() <= 1e-9 * d.abs().max(dot(&a, &a) + dot(&b, &b)).max(1.0));
    }

    #[test]
    fn ranking_against_equal_norm_proxies_is_scale_invariant(
        x in prop::collection::vec(-3.0..3.0f64, 3),
        py in prop::collection::vec(-3.0..3.0f64, 3),
        pz in prop::collection::vec(-3.0..3.0f64, 3),
        scales in prop::collection::vec(0.01..100.0f64, 5),
    ) {
        let n = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assume!(n(&py) > 1e-3 && n(&pz) > 1e-3);
        // Give both proxies the same norm.
        let pz: Vec<f64> = pz.iter().map(|v| v * n(&py) / n(&pz)).collect();
        let sign = |s: f64| {
            let xs: Vec<f64> = x.iter().map(|v| v * s).collect();
            let gap = squared_distance(&xs, &py).unwrap() - squared_distance(&xs, &pz).unwrap();
            if gap.abs() < 1e-9 * s * s.max(1.0) { 0 } else { gap.signum() as i32 }
        };
        let base = sign(1.0);
        prop_assume!(base != 0);
        for s in scales {
            prop_assert_eq!(sign(s), base);
        }
    }

    #[test]
    fn nca_log_sum_exp_agrees_with_naive_form(
        a in prop::collection::vec(-2.0..2.0f64, 3),
        p in prop::collection::vec(-2.0..2.0f64, 3),
        negs in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 3), 1..6),
    ) {
        let d = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let naive = -((-d(&a, &p)).exp() / negs.iter().map(|z| (-d(&a, z)).exp()).sum::<f64>()).ln();
        let v = nca_loss(&a, &p, &negs).unwrap().value;
        prop_assert!((v - naive).abs() <= 1e-9 * naive.abs().max(1.0));
    }

    #[test]
    fn ranking_loss_survives_monotone_transforms(dxy in 0.0..10.0f64, dxz in 0.0..10.0f64) {
        let base = ranking_loss(dxy, dxz);
        prop_assert_eq!(ranking_loss(dxy.sqrt(), dxz.sqrt()), base);
        prop_assert_eq!(ranking_loss(dxy.exp(), dxz.exp()), base);
        prop_assert_eq!(ranking_loss(3.0 * dxy + 1.0, 3.0 * dxz + 1.0), base);
        prop_assert!(log_sum_exp(&[dxy, dxz]) >= dxy.max(dxz));
    }

    #[test]
    fn approx_error_does_not_grow_with_more_proxies(
        points in vecs(1..20, 3),
        proxies in vecs(1..6, 3),
        extra in prop::collection::vec(-5.0..5.0f64, 3),
    ) {
        let before = proxy_approx_error(&points, &proxies, DistanceKind::SquaredEuclidean).unwrap().epsilon;
        let mut more = proxies.clone();
        more.push(extra);
        let after = proxy_approx_error(&points, &more, DistanceKind::SquaredEuclidean).unwrap().epsilon;
        prop_assert!(after <= before);
    }

    #[test]
    fn full_ratio_static_map_is_injective(labels in 2..40usize, extra in 0.0..2.0f64, seed in 0..1000u64) {
        let fa = fractional_preassign(labels, 1.0 + extra, seed).unwrap();
        let distinct: BTreeSet<_> = fa.label_to_proxy.iter().collect();
        prop_assert_eq!(distinct.len(), labels);
    }

    #[test]
    fn zero_shot_splits_share_no_class(classes in 2..30usize, frac in 0.05..0.95f64, seed in 0..1000u64) {
        let cfg = SynthConfig { num_classes: classes, points_per_class: 2, ambient_dim: 2, seed, ..Default::default() };
        let ds = generate_synthetic(&cfg).unwrap();
        if let Ok((_, _, spec)) = split_zero_shot(&ds, frac, seed, false) {
            prop_assert!(spec.train_class_ids.is_disjoint(&spec.test_class_ids));
            prop_assert_eq!(spec.train_class_ids.len() + spec.test_class_ids.len(), classes);
        }
    }

    #[test]
    fn normalize_config_is_idempotent(emb in vecs(1..10, 4), prox in vecs(1..5, 4)) {
        let n = |v: &Vec<f64>| v.iter().map(|a| a * a).sum::<f64>();
        prop_assume!(emb.iter().chain(&prox).all(|v| n(v) > 1e-6));
        let once = normalize_config(&emb, &prox).unwrap();
        let twice = normalize_config(&once.unit_embeddings, &once.unit_proxies).unwrap();
        for (a, b) in once.unit_embeddings.iter().zip(&twice.unit_embeddings) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() < 1e-15);
            }
        }
        prop_assert!((twice.n_x - 1.0).abs() < 1e-12 && (twice.n_p - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// All theorem-backed checks on random constant-norm configurations.
    #[test]
    fn bounds_hold_on_constant_norm_configs(
        seed in any::<u64>(),
        classes in 2..5usize,
        per_class in 2..5usize,
        dim in 2..6usize,
        spread in 0.0..1.5f64,
        margin in 0.0..2.0f64,
    ) {
        let c = random_constant_norm_config(seed, classes, per_class, dim, spread);
        let view = c.view();
        let trip = sample_triplets(&c.labels, 20, seed).unwrap();
        let nca = sample_nca(&c.labels, 20, 3, seed).unwrap();
        let reports = [
            verify_ordinal_preservation(&view, &trip).unwrap(),
            verify_ranking_expectation_bound(&view, &trip).unwrap(),
            verify_nca_bound(&view, &nca).unwrap(),
            verify_triplet_bound(&view, &trip, margin).unwrap(),
            verify_total_loss_bound(&view, &c.labels, SurrogateLoss::Triplet { margin }, None, None, None).unwrap(),
            verify_total_loss_bound(&view, &c.labels, SurrogateLoss::Nca, None, None, None).unwrap(),
        ];
        for r in &reports {
            prop_assert_eq!(r.precondition_failures, 0, "{}", r.bound_name);
            prop_assert_eq!(r.violations, 0, "{} slack {}", r.bound_name, r.max_slack);
            prop_assert!(r.max_slack >= -1e-9);
        }
    }
}

fn synthetic_split(seed: u64) -> (proxydml::data::Dataset, proxydml::data::Dataset) {
    let ds = generate_synthetic(&SynthConfig {
        num_classes: 6,
        points_per_class: 10,
        ambient_dim: 8,
        seed,
        ..Default::default()
    })
    .unwrap();
    let (tr, te, _) = split_zero_shot(&ds, 0.5, seed, false).unwrap();
    (tr, te)
}

#[test]
fn proxy_nca_references_one_positive_and_all_other_proxies() {
    let (tr, te) = synthetic_split(3);
    let cfg = TrainConfig { steps: 25, eval_every: 100, batch_size: 8, ..Default::default() };
    let mcfg = ModelConfig { embed_dim: 4, ..Default::default() };
    let out = train(&cfg, &mcfg, &EvalConfig::default(), &tr, &te).unwrap();
    let p = out.proxies.len();
    assert_eq!(out.stats.anchors, 25 * 8);
    assert_eq!(out.stats.positive_proxy_refs, out.stats.anchors);
    assert_eq!(out.stats.negative_proxy_refs, out.stats.anchors * (p - 1));
    assert_eq!(out.stats.sampled_triplets, 0);
}

#[test]
fn static_assignment_is_fixed_through_training() {
    let (tr, te) = synthetic_split(4);
    let cfg = TrainConfig { steps: 40, eval_every: 10, proxy_ratio: 0.5, ..Default::default() };
    let mcfg = ModelConfig { embed_dim: 4, ..Default::default() };
    let (model, proxies) = init_run(&cfg, &mcfg, &tr).unwrap();
    let before = proxies.label_to_proxy.clone();
    let mut trainer = Trainer::new(cfg, EvalConfig::default(), model, proxies, &tr, &te).unwrap();
    for _ in 0..40 {
        trainer.step().unwrap();
        assert_eq!(trainer.proxies().label_to_proxy, before);
    }
}

#[test]
fn loss_decreases_on_separable_data() {
    for loss_kind in [LossKind::ProxyNca, LossKind::ProxyTriplet, LossKind::NcaBatch] {
        let (tr, te) = synthetic_split(5);
        let cfg = TrainConfig { loss_kind, steps: 300, eval_every: 1000, ..Default::default() };
        let mcfg = ModelConfig { embed_dim: 4, ..Default::default() };
        let out = train(&cfg, &mcfg, &EvalConfig::default(), &tr, &te).unwrap();
        let losses: Vec<f64> = out.records.iter().filter(|r| !r.is_eval()).map(|r| r.loss).collect();
        let tenth = losses.len() / 10;
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        assert!(
            mean(&losses[losses.len() - tenth..]) < mean(&losses[..tenth]),
            "{loss_kind:?}"
        );
    }
}

#[test]
fn identical_configs_give_identical_runs() {
    let (tr, te) = synthetic_split(6);
    let cfg = TrainConfig { steps: 30, eval_every: 10, ..Default::default() };
    let mcfg = ModelConfig { embed_dim: 4, seed: 2, ..Default::default() };
    let strip = |cfg: &TrainConfig| {
        let out = train(cfg, &mcfg, &EvalConfig::default(), &tr, &te).unwrap();
        let recs: Vec<_> = out.records.into_iter().map(|mut r| { r.wall_clock_ms = 0; r }).collect();
        (out.model, out.proxies, recs)
    };
    assert_eq!(strip(&cfg), strip(&cfg));
}
