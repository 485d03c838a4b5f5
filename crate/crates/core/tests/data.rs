use std::fs;

use spml_core::data::{
    generate, generate_confusing, generate_overlap_groups, load_manifest, read_features, Ambiguity,
    Dataset, SynthConfig,
};
use spml_core::math::RandomSource;
use spml_core::Error;

fn config(ambiguity: Ambiguity) -> SynthConfig {
    SynthConfig {
        base_classes: 4,
        train_per_class: 2000,
        val_per_class: 5,
        test_per_class: 5,
        dim: 6,
        ambiguity,
        seed: 21,
        ..SynthConfig::default()
    }
}

fn first_member_share(ds: &Dataset, group: usize) -> Vec<f64> {
    let labels = ds.train.manifest.single_labels();
    let bases = ds.num_classes() / group;
    (0..bases)
        .map(|b| {
            let of_base: Vec<_> = labels.iter().filter(|&&y| y / group == b).collect();
            of_base.iter().filter(|&&&y| y == b * group).count() as f64 / of_base.len() as f64
        })
        .collect()
}

#[test]
fn twin_marginals_are_balanced() {
    let ds = generate_confusing(&config(Ambiguity::ConfusingSplit)).unwrap();
    for share in first_member_share(&ds, 2) {
        assert!((share - 0.5).abs() <= 0.03, "{share}");
    }
    let pairs = generate_overlap_groups(&config(Ambiguity::OverlapGroups { group_size: 2 })).unwrap();
    for share in first_member_share(&pairs, 2) {
        assert!((share - 0.5).abs() <= 0.03, "{share}");
    }
}

#[test]
fn cluster_means_converge_to_centres() {
    let cfg = config(Ambiguity::ConfusingSplit);
    let ds = generate(&cfg).unwrap();
    let mut centre_rng = RandomSource::new(cfg.seed).fork(0);
    let n = cfg.train_per_class as f64;
    for base in 0..cfg.base_classes {
        let centre = centre_rng.gaussian_sample(0.0, cfg.center_scale, cfg.dim).unwrap();
        for (d, &mu) in centre.iter().enumerate() {
            let rows = base * cfg.train_per_class..(base + 1) * cfg.train_per_class;
            let mean = rows.map(|r| ds.train.features.get(r, d)).sum::<f64>() / n;
            assert!((mean - mu).abs() <= 3.0 * cfg.cluster_std / n.sqrt(), "base {base} dim {d}");
        }
    }
}

#[test]
fn group_sizes() {
    let mut cfg = config(Ambiguity::OverlapGroups { group_size: 1 });
    cfg.train_per_class = 10;
    let single = generate(&cfg).unwrap();
    for (train, base) in single.train.manifest.label_sets().iter().zip(0..) {
        assert_eq!(train, &vec![base / 10]);
    }
    assert!(single.test.manifest.label_sets().iter().all(|s| s.len() == 1));

    cfg.base_classes = 2;
    cfg.ambiguity = Ambiguity::OverlapGroups { group_size: 3 };
    let triples = generate(&cfg).unwrap();
    assert_eq!(triples.num_classes(), 6);
    assert!(triples.test.manifest.label_sets().iter().all(|s| s.len() == 3));
    assert!(matches!(
        generate_confusing(&cfg),
        Err(Error::Config(_))
    ));
}

#[test]
fn confusing_layout() {
    let mut cfg = config(Ambiguity::ConfusingSplit);
    cfg.train_per_class = 3;
    let ds = generate(&cfg).unwrap();
    assert_eq!(ds.num_classes(), 8);
    let tests = ds.test.manifest.label_sets();
    assert_eq!(tests[cfg.test_per_class], vec![2, 3]);
    for s in &tests {
        assert_eq!(s.len(), 2);
        assert_eq!(s[0] / 2, s[1] / 2);
    }
    assert!(ds.val.manifest.label_sets().iter().all(|s| s.len() == 1));
    assert_eq!(generate(&cfg).unwrap(), ds);
}

#[test]
fn dataset_save_and_load() {
    let mut cfg = config(Ambiguity::ConfusingSplit);
    cfg.train_per_class = 5;
    let ds = generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let [train, val, test] = ds.save(dir.path()).unwrap();
    let back = Dataset::load(&train, &val, &test).unwrap();
    assert_eq!(back.train.features, ds.train.features);
    assert_eq!(back.test.manifest.records, ds.test.manifest.records);
    assert_eq!(back.train.manifest.true_label_sets(), ds.train.manifest.true_label_sets());
}

#[test]
fn malformed_inputs_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.spmf");
    fs::write(&empty, b"").unwrap();
    assert!(matches!(read_features(&empty), Err(Error::Format { .. })));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"version": 1, "name": "x", "split": "train", "features": "f.spmf",
        "num_classes": 3, "records": [{"id": 0, "labels": [0, 1]}]}"#)
    .unwrap();
    let err = load_manifest(&bad).unwrap_err();
    assert!(matches!(err, Error::Format { .. }));
    assert_eq!(err.exit_code(), 3);

    fs::write(&bad, "not json").unwrap();
    assert!(matches!(load_manifest(&bad), Err(Error::Format { .. })));
}
