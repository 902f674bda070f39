use std::collections::BTreeSet;

use ocularage_core::dataman::AgeGroup;
use ocularage_core::eval::{
    classification_metrics, evaluate_outputs, grad_cam, regression_metrics, saliency_map, EvalDocument,
};
use ocularage_core::multitask::MultiTaskOutput;
use ocularage_core::nnet::{OcularNet, Tensor, Topology, Widths};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn group() -> impl Strategy<Value = AgeGroup> {
    prop_oneof![Just(AgeGroup::Young), Just(AgeGroup::Old)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn confusion_is_permutation_invariant(pairs in prop::collection::vec((group(), group()), 1..100), seed in any::<u64>()) {
        let (p, t): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (ps, ts): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        prop_assert_eq!(
            classification_metrics(&p, &t).unwrap().confusion,
            classification_metrics(&ps, &ts).unwrap().confusion
        );
    }

    #[test]
    fn regression_invariants(pairs in prop::collection::vec((-5.0f64..25.0, 4u32..=16), 1..100)) {
        let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        let r = regression_metrics(&pred, &truth).unwrap();
        prop_assert!(r.rmse >= r.mae);
        prop_assert!(r.within_1yr <= r.within_2yr);
    }

    #[test]
    fn reports_validate_and_round_trip(
        rows in prop::collection::vec((-6.0f64..6.0, -6.0f64..6.0, 0.0f64..20.0, 4u32..=16), 1..80),
    ) {
        let outputs: Vec<MultiTaskOutput> = rows.iter().map(|r| MultiTaskOutput::new([r.0, r.1], r.2)).collect();
        let ages: Vec<u32> = rows.iter().map(|r| r.3).collect();
        let report = evaluate_outputs(&outputs, &ages).unwrap();
        report.validate().unwrap();
        prop_assert_eq!(report.age_bins.bins.iter().map(|b| b.n).sum::<usize>(), rows.len());
        let doc = EvalDocument::new("m", "eye", report, None);
        prop_assert_eq!(EvalDocument::from_json(&doc.to_json()).unwrap(), doc);
    }

    #[test]
    fn grad_cam_is_non_negative(k in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let acts: Vec<f64> = (0..k * 12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grads: Vec<f64> = (0..k * 12).map(|_| rng.random_range(-1.0..1.0)).collect();
        prop_assert!(grad_cam(&acts, &grads, k, 3, 4).iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn unknown_report_fields_rejected() {
    let outputs = vec![MultiTaskOutput::new([0.2, -0.1], 7.0)];
    let doc = EvalDocument::new("m", "eye", evaluate_outputs(&outputs, &[6]).unwrap(), None);
    let mut v: serde_json::Value = serde_json::from_str(&doc.to_json()).unwrap();
    v["extra"] = serde_json::json!(1);
    assert!(EvalDocument::from_json(&v.to_string()).is_err());
    let mut bumped: serde_json::Value = serde_json::from_str(&doc.to_json()).unwrap();
    bumped["schema_version"] = serde_json::json!(99);
    assert!(EvalDocument::from_json(&bumped.to_string()).is_err());
}

fn toy_net() -> OcularNet {
    let topo = Topology::ocular_with(
        1,
        16,
        20,
        &Widths {
            stem: 4,
            stages: vec![6],
            neck: 8,
        },
    );
    OcularNet::init(topo, 12).unwrap()
}

#[test]
fn saliency_ignores_non_target_bias() {
    let mut net = toy_net();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::from_fn(&[1, 1, 16, 20], |_| rng.random_range(-1.0f32..1.0));
    let before = saliency_map(&net, &x, AgeGroup::Old).unwrap();
    net.cls_head.layers[0].params[1].data_mut()[AgeGroup::Young.index()] += 3.5;
    let after = saliency_map(&net, &x, AgeGroup::Old).unwrap();
    assert_eq!(before, after);
    assert_eq!((after.width(), after.height()), (20, 16));
    assert!(after.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn leakage_check_names_the_subject() {
    let train: BTreeSet<String> = ["a", "b"].into_iter().map(String::from).collect();
    let err = ocularage_core::eval::check_leakage(&train, ["c", "b"]).unwrap_err();
    assert!(err.to_string().contains('b'));
}
