use std::sync::Arc;

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use netguard_core::augmentation::{filter_synthetic, fit_generator, identify_minorities, synthesize, GeneratorConfig};
use netguard_core::classifier::{train_logistic, Classifier, LogisticConfig, LogisticModel, MlpModel};
use netguard_core::dataset::{Dataset, FeatureDescriptor, FeatureSchema, FlowRecord};
use netguard_core::gmm::{fit_gmm, GmmConfig};
use netguard_core::metrics::{class_drift, classification_report, emd_1d, w2_1d};
use netguard_core::selection::{clue_select, coreset_select, select_priors, uncertainty_select};

fn samples() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 1..40)
}

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, center: &[f64], scale: f64) -> Vec<f64> {
    (0..n)
        .flat_map(|_| center.iter().map(|&c| c + scale * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distances_are_metrics(a in samples(), b in samples(), c in samples()) {
        for dist in [emd_1d::<f64>, w2_1d::<f64>] {
            let ab = dist(&a, &b).unwrap();
            let ba = dist(&b, &a).unwrap();
            let bc = dist(&b, &c).unwrap();
            let ac = dist(&a, &c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert!(dist(&a, &a).unwrap().abs() < 1e-9);
            let mut shuffled = a.clone();
            shuffled.reverse();
            prop_assert!(dist(&a, &shuffled).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn distinct_multisets_have_positive_distance(a in samples(), extra in -100.0f64..100.0) {
        let mut b = a.clone();
        b.push(extra);
        let mut sa = a.clone();
        sa.sort_by(f64::total_cmp);
        let mut sb = b.clone();
        sb.sort_by(f64::total_cmp);
        let same_distribution = sa.iter().all(|&v| v == extra);
        prop_assert_eq!(emd_1d(&a, &b).unwrap() > 0.0, !same_distribution);
    }

    #[test]
    fn adding_a_constant_keeps_the_selection(
        scores in prop::collection::vec(-50.0f64..50.0, 1..200),
        shift in -1e3f64..1e3,
        fraction in 0.01f64..1.0,
        seed in any::<u64>(),
    ) {
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let a = select_priors(&scores, fraction, seed).unwrap();
        let b = select_priors(&shifted, fraction, seed).unwrap();
        let (mut sa, mut sb) = (a.selected.clone(), b.selected.clone());
        sa.sort_unstable();
        sb.sort_unstable();
        // exact shifts can merge nearly tied scores; compare only when rounding preserved order
        let order_kept = scores.iter().zip(&shifted).all(|(x, _)| {
            scores.iter().zip(&shifted).all(|(y, sy)| (x < y) == ((x + shift) < *sy))
        });
        if order_kept {
            prop_assert_eq!(sa, sb);
        }
    }

    #[test]
    fn selected_scores_dominate(
        scores in prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0, 2.0, -3.0]), 1..150),
        fraction in 0.01f64..1.0,
        seed in any::<u64>(),
    ) {
        let r = select_priors(&scores, fraction, seed).unwrap();
        prop_assert!(r.is_valid());
        prop_assert_eq!(r.selected.len(), ((fraction * scores.len() as f64 + 1e-9).floor() as usize).max(1));
        let min_sel = r.selected.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
        let max_rest = (0..scores.len())
            .filter(|i| !r.selected.contains(i))
            .map(|i| scores[i])
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_sel >= max_rest);
    }

    #[test]
    fn every_strategy_returns_a_valid_report(n in 5usize..80, budget in 1usize..20, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_vec((n, 3), gaussian_rows(&mut rng, n, &[0.0, 1.0, 2.0], 1.0)).unwrap();
        let model = MlpModel::<f64>::new(3, &[8], vec!["a".into(), "b".into(), "c".into()], seed).unwrap();
        let budget = budget.min(n);
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let reports = [
            select_priors(&scores, budget as f64 / n as f64, seed).unwrap(),
            coreset_select(x.view(), budget, seed).unwrap(),
        ];
        for r in &reports {
            prop_assert!(r.is_valid(), "{:?}", r.strategy);
        }
        // an untrained network cannot drive uncertainty-based strategies
        prop_assert!(uncertainty_select(&model, x.view(), budget, seed).is_err());
        prop_assert!(clue_select(&model, x.view(), budget, seed).is_err());
    }

    #[test]
    fn report_is_consistent(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 1..300),
        benign in prop::option::of(0usize..5),
    ) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let classes: Vec<String> = (0..5).map(|k| format!("k{k}")).collect();
        let r = classification_report(&t, &p, &classes, benign).unwrap();
        let present: Vec<f64> = r.per_class.iter().filter(|s| s.support > 0).map(|s| s.f1).collect();
        prop_assert_eq!(r.macro_f1, present.iter().sum::<f64>() / present.len() as f64);
        for rate in [r.fnr, r.fpr, r.accuracy, r.macro_f1] {
            prop_assert!((0.0..=1.0).contains(&rate));
        }
        for (k, row) in r.confusion.iter().enumerate() {
            prop_assert_eq!(row.iter().sum::<usize>(), t.iter().filter(|&&l| l == k).count());
        }
    }

    #[test]
    fn probabilities_are_distributions(seed in 0u64..500, scale in 0.0f64..1e3) {
        let model = MlpModel::<f64>::new(4, &[10, 10], vec!["a".into(), "b".into(), "c".into()], seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((20, 4), |_| scale * rng.sample::<f64, _>(StandardNormal));
        let p = model.predict_proba(x.view()).unwrap();
        for row in p.rows() {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn variances_respect_the_floor(seed in 0u64..500, floor in 1e-4f64..1e-1, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = gaussian_rows(&mut rng, 60, &[0.0, 0.0], 1e-3);
        rows.extend(gaussian_rows(&mut rng, 60, &[1.0, 0.0], 1.0));
        let x = Array2::from_shape_vec((120, 2), rows).unwrap();
        let g = fit_gmm(x.view(), &GmmConfig { k, seed, variance_floor: floor, ..GmmConfig::default() }).unwrap();
        prop_assert!(g.variances.iter().flatten().all(|&v| v >= floor));
        let total: f64 = g.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn single_component_fit_ignores_row_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows = gaussian_rows(&mut rng, 200, &[1.0, -2.0, 0.5], 0.7);
    let x = Array2::from_shape_vec((200, 3), rows).unwrap();
    let mut order: Vec<usize> = (0..200).collect();
    order.reverse();
    let xp = x.select(ndarray::Axis(0), &order);
    let cfg = GmmConfig { k: 1, ..GmmConfig::default() };
    let (a, b) = (fit_gmm(x.view(), &cfg).unwrap(), fit_gmm(xp.view(), &cfg).unwrap());
    for c in 0..3 {
        assert!((a.means[0][c] - b.means[0][c]).abs() < 1e-12);
        assert!((a.variances[0][c] - b.variances[0][c]).abs() < 1e-12);
    }
}

#[test]
fn separated_mixture_fit_ignores_row_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rows = Vec::new();
    for center in [[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]] {
        rows.extend(gaussian_rows(&mut rng, 150, &center, 0.5));
    }
    let x = Array2::from_shape_vec((450, 2), rows).unwrap();
    let order: Vec<usize> = (0..450).map(|i| (i * 7) % 450).collect();
    let xp = x.select(ndarray::Axis(0), &order);
    let cfg = GmmConfig { k: 3, seed: 4, tol: 1e-10, ..GmmConfig::default() };
    let (a, b) = (fit_gmm(x.view(), &cfg).unwrap(), fit_gmm(xp.view(), &cfg).unwrap());
    assert!((a.fit.final_avg_log_likelihood - b.fit.final_avg_log_likelihood).abs() < 1e-6);
    let key = |g: &netguard_core::Gmm| {
        let mut v: Vec<(i64, i64)> = g.means.iter().map(|m| ((m[0] * 1e4) as i64, (m[1] * 1e4) as i64)).collect();
        v.sort_unstable();
        v
    };
    let (ka, kb) = (key(&a), key(&b));
    for (p, q) in ka.iter().zip(&kb) {
        assert!((p.0 - q.0).abs() <= 1 && (p.1 - q.1).abs() <= 1, "{ka:?} vs {kb:?}");
    }
}

fn labeled_schema() -> Arc<FeatureSchema> {
    Arc::new(
        FeatureSchema::new(
            vec![FeatureDescriptor::categorical("Proto", ["TCP", "UDP"]), FeatureDescriptor::continuous("x"), FeatureDescriptor::continuous("y")],
            "Label",
            vec!["Benign".into(), "A".into(), "B".into()],
            "Benign",
        )
        .unwrap(),
    )
}

fn gaussian_class(rng: &mut ChaCha8Rng, class: usize, center: [f64; 2], n: usize) -> Vec<FlowRecord> {
    (0..n)
        .map(|_| {
            let proto = f64::from(u8::from(rng.random::<f64>() < 0.3));
            let x = center[0] + 0.1 * rng.sample::<f64, _>(StandardNormal);
            let y = center[1] + 0.1 * rng.sample::<f64, _>(StandardNormal);
            FlowRecord::new(vec![proto, x, y], Some(class))
        })
        .collect()
}

#[test]
fn synthetic_class_stays_closer_to_its_own_real_data() {
    let schema = labeled_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let centers = [[0.2, 0.2], [0.8, 0.3], [0.4, 0.9]];
    let fit_set: Vec<FlowRecord> = (0..3).flat_map(|c| gaussian_class(&mut rng, c, centers[c], 300)).collect();
    let fit_ds = Dataset::labeled(schema.clone(), fit_set).unwrap();
    let generator = fit_generator(&fit_ds, &[1], &GeneratorConfig { seed: 1, ..GeneratorConfig::default() }).unwrap();
    let synthetic = synthesize(&generator, 1, 1000, 2).unwrap().continuous_matrix::<f64>();
    let fresh: Vec<Array2<f64>> = (0..3)
        .map(|c| Dataset::labeled(schema.clone(), gaussian_class(&mut rng, c, centers[c], 1000)).unwrap().continuous_matrix())
        .collect();
    for f in 0..2 {
        let col = |m: &Array2<f64>| m.column(f).to_vec();
        let own = emd_1d(&col(&synthetic), &col(&fresh[1])).unwrap();
        for other in [0, 2] {
            let cross = emd_1d(&col(&fresh[1]), &col(&fresh[other])).unwrap();
            assert!(own < cross, "feature {f}: {own} vs class {other} {cross}");
        }
    }
}

#[test]
fn minority_fractions_and_filter_counts() {
    let schema = labeled_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut records = gaussian_class(&mut rng, 0, [0.2, 0.2], 500);
    records.extend(gaussian_class(&mut rng, 1, [0.8, 0.3], 20));
    records.extend(gaussian_class(&mut rng, 2, [0.4, 0.9], 60));
    let ds = Dataset::labeled(schema, records).unwrap();
    let report = identify_minorities(&ds, 0.05).unwrap();
    assert!((report.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let expected: Vec<usize> = (0..3).filter(|&c| report.fractions[c] < 0.05).collect();
    assert_eq!(report.minorities, expected);

    let benign: Vec<bool> = ds.labels().unwrap().iter().map(|&l| l == 0).collect();
    let filter: LogisticModel<f64> = train_logistic(ds.encode::<f64>().view(), &benign, &LogisticConfig::default()).unwrap();
    let generator = fit_generator(&ds, &[1, 2], &GeneratorConfig::default()).unwrap();
    let batch = Dataset::concat(&[&synthesize(&generator, 1, 60, 1).unwrap(), &synthesize(&generator, 2, 60, 2).unwrap()]).unwrap();
    let (retained, counts) = filter_synthetic(&batch, &filter, 0.5).unwrap();
    assert_eq!(counts.values().map(|c| c.retained).sum::<usize>(), retained.len());
    for c in counts.values() {
        assert!(c.retained <= c.generated);
    }
}

#[test]
fn normalized_drift_lies_in_unit_interval() {
    let schema = labeled_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut src = Vec::new();
    let mut tgt = Vec::new();
    for (c, shift) in [(0, 0.05), (1, 0.4), (2, 0.4)] {
        src.extend(gaussian_class(&mut rng, c, [0.3, 0.3], 100));
        tgt.extend(gaussian_class(&mut rng, c, [0.3 + shift, 0.3], 100));
    }
    let (src, tgt) = (Dataset::labeled(schema.clone(), src).unwrap(), Dataset::labeled(schema, tgt).unwrap());
    let labels = tgt.labels().unwrap();
    let report = class_drift(&src, &tgt, &labels).unwrap();
    let norm: Vec<f64> = report.classes.iter().filter_map(|c| c.normalized_emd).collect();
    assert!(norm.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(norm.iter().any(|&v| v == 1.0));
}
