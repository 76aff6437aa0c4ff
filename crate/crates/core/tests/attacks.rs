use std::collections::BTreeSet;

use fedzz_core::attacks::{
    dynamic_label_flip, most_confused_class, msimba_poison, static_label_flip, train_surrogate, AttackConfig,
    AttackKind, Attacker,
};
use fedzz_core::data::{generate_synthetic, train_test_split};
use fedzz_core::nn::{self, ModelSpec, ParamVector};
use proptest::prelude::*;

fn config(kind: AttackKind, malicious: &[usize]) -> AttackConfig {
    AttackConfig {
        kind,
        malicious_clients: malicious.iter().copied().collect::<BTreeSet<_>>(),
        poison_rate: if kind == AttackKind::Msimba { 0.015 } else { 1.0 },
        epsilon: 0.3,
        max_queries: 50,
    }
}

#[test]
fn surrogate_learns_separable_data() {
    let data = generate_synthetic(10, 20, 5000, 4.0, 8).unwrap();
    let (train, test) = train_test_split(&data, 0.2, 9).unwrap();
    let spec = ModelSpec::softmax(20, 10).unwrap();
    let surrogate = train_surrogate(&train, &spec, 10).unwrap();
    let acc = nn::accuracy(&surrogate, &spec, &test).unwrap();
    assert!(acc > 80.0, "surrogate accuracy {acc}");
}

#[test]
fn queries_increase_most_confused_flips() {
    let data = generate_synthetic(10, 20, 2000, 3.0, 1).unwrap();
    let spec = ModelSpec::softmax(20, 10).unwrap();
    let model = train_surrogate(&data, &spec, 2).unwrap();
    let predict = |x: &[f64]| nn::forward(&model, &spec, x).unwrap();
    let bounds = data.feature_range();
    let flips = |queries: usize| {
        (0..50)
            .filter(|&r| {
                let (x, y) = (data.row(r), data.label(r));
                let target = most_confused_class(&predict(x), y);
                let poisoned = msimba_poison(x, y, predict, 0.3, queries, bounds, r as u64);
                nn::argmax(&predict(&poisoned)) == target
            })
            .count()
    };
    let (none, many) = (flips(0), flips(200));
    assert!(many > none, "{many} flips with queries vs {none} without");
}

#[test]
fn dynamic_flip_differs_from_prediction() {
    let data = generate_synthetic(10, 20, 500, 3.0, 3).unwrap();
    let spec = ModelSpec::softmax(20, 10).unwrap();
    let surrogate = train_surrogate(&data, &spec, 4).unwrap();
    for r in 0..100 {
        let probs = nn::forward(&surrogate, &spec, data.row(r)).unwrap();
        let flipped = dynamic_label_flip(data.row(r), &surrogate, &spec).unwrap();
        assert_ne!(flipped, nn::argmax(&probs));
        assert!(probs.iter().all(|&p| p >= probs[flipped]));
    }
    let zero = ParamVector::zeros(spec.param_count());
    assert_eq!(dynamic_label_flip(data.row(0), &zero, &spec).unwrap(), 0);
}

#[test]
fn dlf_relabels_only_malicious_clients() {
    let data = generate_synthetic(10, 20, 300, 3.0, 3).unwrap();
    let spec = ModelSpec::softmax(20, 10).unwrap();
    let surrogate = train_surrogate(&data, &spec, 4).unwrap();
    let model = nn::init_model(&spec, 0);
    let att = Attacker::new(config(AttackKind::DpaDlf, &[2]), spec.clone(), Some(surrogate.clone()), 64).unwrap();
    let out = att.apply(2, &data, &model, 1, 5).unwrap();
    assert_eq!(out.features(), data.features());
    for r in 0..data.len() {
        assert_eq!(out.label(r), dynamic_label_flip(data.row(r), &surrogate, &spec).unwrap());
    }
    assert_eq!(att.apply(3, &data, &model, 1, 5).unwrap(), data);
}

#[test]
fn msimba_touches_features_only_and_is_deterministic() {
    let data = generate_synthetic(10, 20, 300, 3.0, 6).unwrap();
    let spec = ModelSpec::softmax(20, 10).unwrap();
    let model = train_surrogate(&data, &spec, 1).unwrap();
    let att = Attacker::new(config(AttackKind::Msimba, &[0]), spec, None, 64).unwrap();
    let a = att.apply(0, &data, &model, 4, 9).unwrap();
    assert_eq!(a, att.apply(0, &data, &model, 4, 9).unwrap());
    assert_eq!(a.labels(), data.labels());
    // 300 rows in batches of 64 -> 5 batches -> at most 5 changed rows
    let changed = (0..data.len()).filter(|&r| a.row(r) != data.row(r)).count();
    assert!((1..=5).contains(&changed), "{changed} rows changed");
    let (lo, hi) = data.feature_range();
    assert!(a.features().iter().all(|&v| (lo..=hi).contains(&v)));
}

#[test]
fn attack_config_validation() {
    assert!(config(AttackKind::DpaSlf, &[3]).validate(4).is_ok());
    assert!(config(AttackKind::DpaSlf, &[4]).validate(4).is_err());
    let mut bad = config(AttackKind::Msimba, &[0]);
    bad.epsilon = 0.0;
    assert!(bad.validate(4).is_err());
    assert_eq!("dpa_slf".parse::<AttackKind>().unwrap(), AttackKind::DpaSlf);
    assert!("bogus".parse::<AttackKind>().is_err());
}

proptest! {
    #[test]
    fn static_flip_is_in_range_and_involutive_for_even_classes(half in 1usize..40, y in 0usize..80) {
        let classes = 2 * half;
        let y = y % classes;
        let f = static_label_flip(y, classes).unwrap();
        prop_assert!(f < classes);
        prop_assert_eq!(static_label_flip(f, classes).unwrap(), y);
    }

    #[test]
    fn static_flip_odd_classes_stays_in_range(half in 1usize..40, y in 0usize..81) {
        let classes = 2 * half + 1;
        let y = y % classes;
        prop_assert!(static_label_flip(y, classes).unwrap() < classes);
    }
}
