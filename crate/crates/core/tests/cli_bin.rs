mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use metaforge::evalkit::{RunReport, SyntheticFamily};

const TINY_TOML: &str = "trials = 2\n[net]\nmax_len = 40\nd_model = 8\nn_heads = 2\nn_layers = 1\nff_dim = 16\n\
                         [maml]\nepochs = 2\n[finetune]\nepochs = 1\n";

fn metaforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metaforge"))
        .args(args)
        .env_remove("METAFORGE_SEED")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Ingests three synthetic tasks and writes a small config.
fn workspace(records: usize) -> (tempfile::TempDir, PathBuf, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let family = SyntheticFamily {
        records_per_task: records,
        ..SyntheticFamily::default()
    };
    for i in 0..3 {
        let task = format!("task{i}");
        let raw = tmp.path().join(format!("{task}.csv"));
        common::write_raw_task(&raw, &family, i, &task);
        let o = metaforge(&["ingest", p(&raw), "--out", p(&data.join(&task)), "--seed", "1"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let config = tmp.path().join("run.toml");
    fs::write(&config, TINY_TOML).unwrap();
    (tmp, data, config)
}

fn reports(dir: &Path) -> Vec<RunReport> {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn help_exits_zero_for_every_command() {
    for cmd in [&["--help"][..], &["ingest", "--help"], &["train", "--help"], &["eval", "--help"], &["encode", "--help"], &["report", "--help"]] {
        let o = metaforge(cmd);
        assert_eq!(o.status.code(), Some(0), "{cmd:?}");
        assert!(!o.stdout.is_empty());
    }
}

#[test]
fn ingest_is_repeatable_and_reports_missing_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("t.csv");
    common::write_raw_task(&raw, &SyntheticFamily { records_per_task: 40, ..SyntheticFamily::default() }, 0, "t");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = metaforge(&["ingest", p(&raw), "--out", p(out), "--seed", "3"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["train.csv", "test.csv", "scalers.json", "rejects.log"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "sequence,mutation,source\nMKV,K2A,s\n").unwrap();
    let o = metaforge(&["ingest", p(&bad), "--out", p(&tmp.path().join("c"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("target"), "{}", stderr(&o));
}

#[test]
fn train_protocols_and_eval() {
    let (tmp, data, config) = workspace(60);
    let cross = tmp.path().join("cross");
    let o = metaforge(&["train", "--data", p(&data), "--config", p(&config), "--exclude-task", "task1", "--seed", "5", "--out", p(&cross)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = reports(&cross);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].target_task, "task1");
    assert_eq!(r[0].seeds, vec![5, 6]);
    assert!(cross.join("checkpoint-5.mfck").is_file() && cross.join("checkpoint-6.mfck").is_file());
    assert!(fs::read_to_string(cross.join("train_log.jsonl")).unwrap().lines().count() >= 4);

    let pooled = tmp.path().join("pooled");
    let o = metaforge(&["train", "--data", p(&data), "--config", p(&config), "--pooled", "--out", p(&pooled)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = reports(&pooled);
    assert_eq!(r.len(), 3);
    assert!(r.iter().all(|x| x.checkpoint_hash == r[0].checkpoint_hash));

    let ft = tmp.path().join("ft");
    let o = metaforge(&["train", "--data", p(&data), "--config", p(&config), "--protocol", "finetune", "--task", "task0", "--out", p(&ft)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(reports(&ft)[0].train_size, 48);

    let o = metaforge(&["eval", "--checkpoint", p(&cross.join("checkpoint-5.mfck")), "--data", p(&data), "--task", "task1", "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: RunReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report.seeds, vec![9, 10, 11]);
    assert!(report.nmse_mean.is_finite());

    let o = metaforge(&["report", p(&cross.join("report.json")), p(&pooled.join("report.json"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("cross_task/enhanced"));

    let corrupt = tmp.path().join("corrupt.mfck");
    let mut bytes = fs::read(cross.join("checkpoint-5.mfck")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(&corrupt, bytes).unwrap();
    let o = metaforge(&["eval", "--checkpoint", p(&corrupt), "--data", p(&data), "--task", "task1"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let o = metaforge(&["train", "--data", p(&data), "--config", p(&config), "--out", p(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn undersized_task_exits_three_naming_it() {
    let (tmp, data, config) = workspace(15);
    let o = metaforge(&["train", "--data", p(&data), "--config", p(&config), "--exclude-task", "task0", "--out", p(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("task1") || stderr(&o).contains("task2"), "{}", stderr(&o));
}

#[test]
fn encode_shows_both_encodings() {
    let o = metaforge(&["encode", "--seq", "SSGGSSILDRAVIEHNLLSAS", "--mut", "R10A"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("[CLS] S S G G S S I L D [SEP] R [SEP] A [SEP] A V I E H N L L S A S"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("standard:") && l.contains("[UNK]")), "{text}");

    let o = metaforge(&["encode", "--seq", "SSGGSSILDRAVIEHNLLSAS", "--mut", "K10A"]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
}
