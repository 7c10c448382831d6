use std::collections::BTreeSet;
use std::fs;

use metaforge::dataio::{
    build_task_dataset, dedup, stratified_split, MutationRecord, Scaler, SplitOptions, TaskDataset,
};
use metaforge::mutenc::Mutation;
use proptest::prelude::*;

fn record(i: usize, target: f64, source: &str) -> MutationRecord {
    MutationRecord {
        sequence: "ACDEFGHIKLMNPQRSTVWY".into(),
        mutations: vec![Mutation { original: 'A', position: 1, replacement: "CDEFGHIKLMNPQRSTVWY".chars().nth(i % 19).unwrap() }],
        target,
        source: source.into(),
        task: "t".into(),
    }
}

proptest! {
    #[test]
    fn split_partitions_and_hits_the_train_count(
        targets in prop::collection::vec(-100.0f64..100.0, 10..300),
        ratio in 0.1f64..0.95,
        bins in 1usize..10,
        seed in any::<u64>(),
    ) {
        let items: Vec<(usize, f64)> = targets.iter().copied().enumerate().collect();
        let (train, test) = stratified_split(&items, |x| x.1, ratio, bins, seed).unwrap();
        prop_assert_eq!(train.len(), (ratio * items.len() as f64).round() as usize);
        prop_assert_eq!(train.len() + test.len(), items.len());
        let a: BTreeSet<usize> = train.iter().map(|x| x.0).collect();
        let b: BTreeSet<usize> = test.iter().map(|x| x.0).collect();
        prop_assert!(a.is_disjoint(&b));
        let again = stratified_split(&items, |x| x.1, ratio, bins, seed).unwrap();
        prop_assert_eq!(again.0, train);
    }

    #[test]
    fn scaler_round_trips_and_standardises(values in prop::collection::vec(-1e3f64..1e3, 2..64)) {
        let spread = values.iter().cloned().fold(f64::MIN, f64::max) - values.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-3);
        let s = Scaler::fit("src", &values).unwrap();
        let z: Vec<f64> = values.iter().map(|&v| s.transform(v)).collect();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-9);
        for (&v, &zi) in values.iter().zip(&z) {
            prop_assert!((s.inverse(zi) - v).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }

    #[test]
    fn dedup_keeps_first_of_each_key(picks in prop::collection::vec(0usize..19, 1..60)) {
        let recs: Vec<MutationRecord> = picks.iter().enumerate().map(|(i, &p)| record(p, i as f64, "s")).collect();
        let out = dedup(recs.clone());
        let distinct: BTreeSet<usize> = picks.iter().copied().collect();
        prop_assert_eq!(out.len(), distinct.len());
        for r in &out {
            let first = recs.iter().find(|x| x.key() == r.key()).unwrap();
            prop_assert_eq!(first.target, r.target);
        }
    }
}

#[test]
fn constant_source_is_degenerate() {
    assert!(Scaler::fit("flat", &[2.0, 2.0, 2.0]).is_err());
    assert!(Scaler::fit("single", &[2.0]).is_err());
}

#[test]
fn dataset_directory_round_trips() {
    let recs: Vec<MutationRecord> = (0..19).map(|i| record(i, i as f64 * 0.7, if i % 2 == 0 { "a" } else { "b" })).collect();
    let ds = TaskDataset::from_records("t", &recs, 3, SplitOptions::default()).unwrap();
    assert_eq!(ds.train.len(), 15);
    assert_eq!(ds.scalers.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    ds.write_dir(dir.path()).unwrap();
    let back = TaskDataset::read_dir(dir.path()).unwrap();
    assert_eq!(back.train.len(), ds.train.len());
    assert_eq!(back.test.len(), ds.test.len());
    for (x, y) in back.train.iter().zip(&ds.train) {
        assert_eq!(x.key(), y.key());
        assert!((x.target - y.target).abs() < 1e-12);
    }
}

#[test]
fn every_row_is_accepted_or_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("raw.csv");
    let mut text = String::from("sequence,mutation,target,source,task\n");
    for i in 0..19 {
        text += &format!("ACDEFGHIKLMNPQRSTVWY,A1{},{},s,t\n", "CDEFGHIKLMNPQRSTVWY".chars().nth(i).unwrap(), i);
    }
    text += "ACDEFGHIKLMNPQRSTVWY,A1C,5,s,t\n";
    text += "ACDEFGHIKLMNPQRSTVWY,G1C,5,s,t\n";
    text += "ACDEFGHIKLMNPQRSTVWY,A2C,NaN,s,t\n";
    text += "ACDEFGHIKLMNPQRSTVWY,A3C,1,s,other\n";
    fs::write(&path, text).unwrap();
    let (ds, log) = build_task_dataset(&[path], "t", 0, SplitOptions::default()).unwrap();
    assert_eq!(log.input_rows, 23);
    assert_eq!(ds.len(), 19);
    assert_eq!(log.rejections.len(), 4);
    assert_eq!(ds.len() + log.rejections.len(), log.input_rows);
}
