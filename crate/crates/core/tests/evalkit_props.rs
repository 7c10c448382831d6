mod common;

use metaforge::dataio::TaskDataset;
use metaforge::evalkit::{
    aggregate, mean_and_variance, nmse, run_cross_task, run_finetune, run_finetune_pooled, run_pooled,
    Protocol, ProtocolConfig, SyntheticFamily,
};
use metaforge::metatrain::{FinetuneConfig, InnerOptimizer, MamlConfig};
use metaforge::mutenc::EncoderMode;
use proptest::prelude::*;

fn small_family() -> Vec<TaskDataset> {
    let fam = SyntheticFamily {
        records_per_task: 60,
        ..SyntheticFamily::default()
    };
    fam.datasets("task", 0..3).unwrap()
}

fn quick_config(trials: usize) -> ProtocolConfig {
    ProtocolConfig {
        net: common::tiny_net(),
        maml: MamlConfig {
            epochs: 2,
            meta_batch: 2,
            inner_steps: 2,
            inner_optimizer: InnerOptimizer::Sgd,
            ..MamlConfig::default()
        },
        finetune: FinetuneConfig {
            epochs: 1,
            ..FinetuneConfig::default()
        },
        encoder: EncoderMode::Enhanced,
        trials,
        seed: 11,
        config_hash: "abc".into(),
    }
}

proptest! {
    #[test]
    fn nmse_is_invariant_under_shared_affine_maps(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
        a in 0.1f64..10.0,
        b in -50.0f64..50.0,
    ) {
        let (pred, truth): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (_, var) = mean_and_variance(&truth);
        prop_assume!(var > 1e-2);
        let base = nmse(&pred, &truth).unwrap();
        let p2: Vec<f64> = pred.iter().map(|x| a * x + b).collect();
        let t2: Vec<f64> = truth.iter().map(|x| a * x + b).collect();
        prop_assert!((nmse(&p2, &t2).unwrap() - base).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn nmse_ignores_joint_permutation(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
        rot in 0usize..40,
    ) {
        let (pred, truth): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let (_, var) = mean_and_variance(&truth);
        prop_assume!(var > 1e-2);
        let mut shuffled = pairs.clone();
        shuffled.rotate_left(rot % pairs.len());
        shuffled.reverse();
        let (p2, t2): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
        let x = nmse(&pred, &truth).unwrap();
        prop_assert!((nmse(&p2, &t2).unwrap() - x).abs() <= 1e-12 * x.max(1.0));
    }

    #[test]
    fn mean_predictor_scores_one(truth in prop::collection::vec(-10.0f64..10.0, 2..40)) {
        let (mean, var) = mean_and_variance(&truth);
        prop_assume!(var > 1e-6);
        let v = nmse(&vec![mean; truth.len()], &truth).unwrap();
        prop_assert!((v - 1.0).abs() < 1e-9);
    }
}

#[test]
fn cross_task_excludes_target_and_reports_each_trial() {
    let all = small_family();
    let (report, models) = run_cross_task(&all, "task1", &quick_config(3)).unwrap();
    assert_eq!(report.protocol, Protocol::CrossTask);
    assert_eq!(report.trial_nmse.len(), 3);
    assert_eq!(report.seeds, vec![11, 12, 13]);
    assert_eq!(report.config_hash, "abc");
    assert_eq!(models.len(), 3);
    for m in &models {
        assert!(!m.outcome.task_draws.contains_key("task1"));
        assert!(!m.outcome.task_draws.is_empty());
    }
    let expected: usize = all.iter().filter(|d| d.task != "task1").map(|d| d.train.len()).sum();
    assert_eq!(report.train_size, expected);
}

#[test]
fn cross_task_needs_two_other_tasks() {
    let all = small_family();
    assert!(run_cross_task(&all[..2], "task0", &quick_config(1)).is_err());
    assert!(run_cross_task(&all, "missing", &quick_config(1)).is_err());
}

#[test]
fn pooled_reports_share_one_checkpoint() {
    let all = small_family();
    let (reports, model) = run_pooled(&all, &quick_config(2)).unwrap();
    assert_eq!(reports.len(), 3);
    let hash = model.checkpoint.hash().unwrap();
    for r in &reports {
        assert_eq!(r.checkpoint_hash.as_deref(), Some(hash.as_str()));
        assert_eq!(r.trial_nmse.len(), 2);
    }
}

#[test]
fn single_trial_has_zero_variance() {
    let all = small_family();
    let (report, _) = run_finetune(&all, "task2", &quick_config(1)).unwrap();
    assert_eq!(report.trial_nmse.len(), 1);
    assert_eq!(report.nmse_variance, 0.0);
    assert_eq!(report.train_size, all[2].train.len());
}

#[test]
fn aggregate_builds_task_by_method_rows() {
    let all = small_family();
    let cfg = quick_config(3);
    let mut reports = run_pooled(&all, &cfg).unwrap().0;
    reports.extend(run_finetune_pooled(&all, &cfg).unwrap().0);
    let standard = ProtocolConfig {
        encoder: EncoderMode::Standard,
        net: metaforge::net::NetConfig { max_len: 64, ..common::tiny_net() },
        ..cfg
    };
    reports.extend(run_pooled(&all, &standard).unwrap().0);
    let mut tampered = reports.clone();
    for r in &mut tampered {
        r.nmse_mean = -1.0;
    }
    let table = aggregate(&tampered);
    assert_eq!(table.rows.len(), 9);
    for (row, r) in table.rows.iter().zip({
        let mut sorted = reports.clone();
        sorted.sort_by(|a, b| {
            a.target_task
                .cmp(&b.target_task)
                .then(format!("{}/{}", a.protocol.as_str(), a.encoder_mode).cmp(&format!("{}/{}", b.protocol.as_str(), b.encoder_mode)))
        });
        sorted
    }) {
        assert_eq!(row.task, r.target_task);
        assert_eq!(row.trials, 3);
        let (m, v) = mean_and_variance(&r.trial_nmse);
        assert!((row.nmse_mean - m).abs() < 1e-12);
        assert!((row.nmse_variance - v).abs() < 1e-12);
    }
    let text = table.to_text();
    assert!(text.contains("pooled_meta/standard") && text.contains("finetune_pooled/enhanced"));
}
