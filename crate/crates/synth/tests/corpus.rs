use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use gres_synth::pnm::{read_pgm, read_ppm};
use gres_synth::semantics::{satisfying_subsets, Denotation};
use gres_synth::{
    build_dataset, generate_split, read_manifest, verify, DatasetConfig, Kind, Mix, Split,
};

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn thousand_samples_are_sound() {
    let cfg = DatasetConfig {
        train: 1000,
        val: 0,
        ..DatasetConfig::default()
    };
    let samples = generate_split(2024, Split::Train, &cfg).unwrap();
    assert_eq!(samples.len(), 1000);
    for s in &samples {
        verify(&s.scene, &s.expression).unwrap();
        let subsets = satisfying_subsets(&s.expression.expr, &s.scene);
        if s.expression.kind.is_no_target() {
            assert!(subsets.is_empty(), "{}", s.expression.text);
            assert_eq!(s.expression.expr.denote(&s.scene), Denotation::Empty);
            assert!(
                s.expression.expr.is_relevant(&s.scene),
                "{}",
                s.expression.text
            );
            assert!(s.mask.data.iter().all(|&b| !b));
        } else {
            assert_eq!(subsets, vec![s.expression.target_ids.clone()]);
            assert!(s.mask.count() > 0);
        }
        assert!((2..=6).contains(&s.scene.objects.len()));
    }
    // every phenomenon shows up
    for k in Kind::ALL {
        assert!(
            samples.iter().any(|s| s.expression.kind == k),
            "{k} missing"
        );
    }
}

#[test]
fn dataset_is_byte_identical_per_seed_and_readable() {
    let cfg = DatasetConfig {
        train: 10,
        val: 6,
        ..DatasetConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    build_dataset(a.path(), &cfg, 7).unwrap();
    build_dataset(b.path(), &cfg, 7).unwrap();
    build_dataset(c.path(), &cfg, 8).unwrap();
    let ta = tree_bytes(a.path());
    assert_eq!(ta, tree_bytes(b.path()));
    assert_ne!(ta, tree_bytes(c.path()));

    let rows = read_manifest(&a.path().join("train/manifest.tsv")).unwrap();
    assert_eq!(rows.len(), 10);
    for row in &rows {
        let img = read_ppm(&row.image_path).unwrap();
        let mask = read_pgm(&row.mask_path).unwrap();
        assert_eq!((img.height, img.width), (48, 48));
        assert_eq!(row.no_target, mask.is_empty());
    }
    assert_eq!(
        read_manifest(&a.path().join("val/manifest.tsv"))
            .unwrap()
            .len(),
        6
    );
}

#[test]
fn kind_mixture_within_one_sample() {
    let mix: Mix = "single=0.5,multi=0.2,notarget=0.3".parse().unwrap();
    let cfg = DatasetConfig {
        train: 0,
        val: 33,
        mix,
        ..DatasetConfig::default()
    };
    let samples = generate_split(3, Split::Val, &cfg).unwrap();
    let single = samples
        .iter()
        .filter(|s| s.expression.kind == Kind::Single)
        .count();
    let nt = samples.iter().filter(|s| s.no_target()).count();
    let multi = samples.len() - single - nt;
    for (got, w) in [(single, 0.5), (multi, 0.2), (nt, 0.3)] {
        assert!((got as f64 - w * 33.0).abs() <= 1.0, "{got} vs {w}");
    }
}

#[test]
fn train_and_val_scenes_are_disjoint() {
    let cfg = DatasetConfig {
        train: 60,
        val: 30,
        ..DatasetConfig::default()
    };
    let train = generate_split(1, Split::Train, &cfg).unwrap();
    let val = generate_split(1, Split::Val, &cfg).unwrap();
    for v in &val {
        assert!(train
            .iter()
            .all(|t| t.scene.seed != v.scene.seed && t.scene.objects != v.scene.objects));
    }
}
