use std::path::{Path, PathBuf};

use crn::baselines::ModelKind;
use crn::harness::{
    emit_plot, load_checkpoint, read_metrics, resume_training, run_eval, run_training, MetricRow, MetricsWriter,
    RunConfig, STAGES,
};
use crn::Error;

fn tiny(dir: &Path, model: ModelKind, iterations: u64) -> RunConfig {
    let text = format!(
        "model = {model}\nseed = 5\nn = 3\nk = 6\nbatch = 2\niterations = {iterations}\neval_every = 4\n\
         eval_episodes = 3\ncheckpoint_every = 6\noutput_dir = {}\nenc_hidden1 = 8\nenc_hidden2 = 6\n\
         edge_feat_dim = 3\nbelief_dim = 5\ndec_hidden = 7\nattn_hidden = 4\npred_hidden = 4\n\
         proj_hidden = 6\nbit_embed_dim = 2\n",
        dir.display()
    );
    RunConfig::parse(&text, "tiny").unwrap()
}

fn quiet() -> impl FnMut(&crn::harness::Trainer, &crn::model::IterationMetrics, Option<&crn::harness::EpisodeMetrics>)
{
    |_, _, _| {}
}

#[test]
fn identical_seeds_give_identical_metrics_files() {
    let root = tempfile::tempdir().unwrap();
    let a = tiny(&root.path().join("a"), ModelKind::Crn, 8);
    let b = tiny(&root.path().join("b"), ModelKind::Crn, 8);
    run_training(&a, &mut quiet()).unwrap();
    run_training(&b, &mut quiet()).unwrap();
    let fa = std::fs::read(a.output_dir.join("metrics.csv")).unwrap();
    let fb = std::fs::read(b.output_dir.join("metrics.csv")).unwrap();
    assert_eq!(fa, fb);
}

#[test]
fn metrics_row_count_and_layout() {
    let root = tempfile::tempdir().unwrap();
    let cfg = tiny(root.path(), ModelKind::Lstm, 12);
    let summary = run_training(&cfg, &mut quiet()).unwrap();
    let rows = read_metrics(&summary.metrics_path).unwrap();
    let blocks = (cfg.iterations / cfg.eval_every) as usize;
    assert_eq!(rows.len(), cfg.iterations as usize + blocks * cfg.k);
    let train: Vec<&MetricRow> = rows.iter().filter(|r| !r.is_eval()).collect();
    assert_eq!(train.len(), 12);
    assert!(train.iter().enumerate().all(|(i, r)| r.train_iter == i as u64 + 1));
    for r in &rows {
        assert_eq!(r.model, "lstm");
        assert_eq!(r.seed, 5);
        assert!((0.0..=1.0).contains(&r.edge_acc_full));
        assert!((0.0..=1.0).contains(&r.edge_acc_lower));
    }
    let eval_iters: Vec<u64> = rows.iter().filter(|r| r.episode_step == 1).map(|r| r.train_iter).collect();
    assert_eq!(eval_iters, vec![4, 8, 12]);
    let last = summary.final_eval.unwrap();
    assert_eq!(last.edge_acc_full.len(), cfg.k);
    assert!(last.recon_loss.iter().all(|&x| x == 0.0));
    for name in ["config.txt", "final.ckpt", "checkpoint_000006.ckpt", "checkpoint_000012.ckpt"] {
        assert!(root.path().join(name).exists(), "{name} missing");
    }
    let stored = std::fs::read_to_string(root.path().join("config.txt")).unwrap();
    assert_eq!(RunConfig::parse(&stored, "stored").unwrap(), cfg);
}

#[test]
fn resumed_run_reproduces_uninterrupted_run() {
    let root = tempfile::tempdir().unwrap();
    let straight = tiny(&root.path().join("straight"), ModelKind::Crn, 12);
    run_training(&straight, &mut quiet()).unwrap();

    let split = tiny(&root.path().join("split"), ModelKind::Crn, 6);
    let first = run_training(&split, &mut quiet()).unwrap();
    resume_training(&first.checkpoint_path, Some(12), &mut quiet()).unwrap();

    let read = |c: &RunConfig| std::fs::read(c.output_dir.join("metrics.csv")).unwrap();
    assert_eq!(read(&straight), read(&split));
    let (a, _) = load_checkpoint(&straight.output_dir.join("final.ckpt")).unwrap();
    let (b, _) = load_checkpoint(&split.output_dir.join("final.ckpt")).unwrap();
    assert_eq!(a.iteration, 12);
    assert_eq!(b.iteration, 12);
    for ((_, pa), (_, pb)) in a.model.store.iter().zip(b.model.store.iter()) {
        assert_eq!(pa.value, pb.value, "{}", pa.name);
    }
    assert_eq!(a.adam.t, b.adam.t);
}

#[test]
fn resume_from_older_checkpoint_drops_newer_rows() {
    let root = tempfile::tempdir().unwrap();
    let straight = tiny(&root.path().join("straight"), ModelKind::CrnSupervised, 12);
    run_training(&straight, &mut quiet()).unwrap();
    let other = tiny(&root.path().join("other"), ModelKind::CrnSupervised, 12);
    run_training(&other, &mut quiet()).unwrap();
    resume_training(&other.output_dir.join("checkpoint_000006.ckpt"), None, &mut quiet()).unwrap();
    let read = |c: &RunConfig| std::fs::read(c.output_dir.join("metrics.csv")).unwrap();
    assert_eq!(read(&straight), read(&other));
}

#[test]
fn checkpoint_round_trip_and_eval_match_training_eval() {
    let root = tempfile::tempdir().unwrap();
    let cfg = tiny(root.path(), ModelKind::Crn, 8);
    let summary = run_training(&cfg, &mut quiet()).unwrap();
    let again = run_eval(&summary.checkpoint_path, None).unwrap();
    assert_eq!(Some(again), summary.final_eval);
}

#[test]
fn mismatched_config_is_rejected() {
    let root = tempfile::tempdir().unwrap();
    let cfg = tiny(root.path(), ModelKind::Crn, 4);
    let summary = run_training(&cfg, &mut quiet()).unwrap();
    let mut wrong = cfg.clone();
    wrong.n = 4;
    let err = run_eval(&summary.checkpoint_path, Some(&wrong)).unwrap_err();
    assert!(matches!(err, Error::ConfigMismatch(_)), "{err}");
    assert!(err.to_string().contains('n'), "{err}");
    let mut other_model = cfg.clone();
    other_model.model = ModelKind::Lstm;
    assert!(matches!(
        run_eval(&summary.checkpoint_path, Some(&other_model)),
        Err(Error::ConfigMismatch(_))
    ));
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let root = tempfile::tempdir().unwrap();
    let cfg = tiny(root.path(), ModelKind::Crn, 4);
    let summary = run_training(&cfg, &mut quiet()).unwrap();
    let bytes = std::fs::read(&summary.checkpoint_path).unwrap();
    let cut = root.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&cut), Err(Error::Checkpoint(_))));
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    let magic = root.path().join("magic.ckpt");
    std::fs::write(&magic, bad).unwrap();
    assert!(matches!(load_checkpoint(&magic), Err(Error::Checkpoint(_))));
}

#[test]
fn unwritable_output_directory_fails() {
    let root = tempfile::tempdir().unwrap();
    let blocker = root.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = tiny(&blocker.join("sub"), ModelKind::Crn, 2);
    assert!(matches!(run_training(&cfg, &mut quiet()), Err(Error::Io(_))));
}

/// Synthetic eval rows: `blocks` evaluations spread over `total` iterations.
fn synthetic(path: &Path, model: &str, seed: u64, total: u64, blocks: u64, k: usize) -> PathBuf {
    let mut w = MetricsWriter::create(path).unwrap();
    for b in 1..=blocks {
        let iter = b * total / blocks;
        for step in 1..=k {
            w.write(&MetricRow {
                model: model.into(),
                train_iter: iter,
                episode_step: step,
                edge_acc_full: 0.5 + 0.4 * (iter as f64 / total as f64) * (step as f64 / k as f64),
                edge_acc_lower: 0.5,
                recon_loss: 0.6,
                dec_loss: 0.4,
                seed,
            })
            .unwrap();
        }
    }
    w.flush().unwrap();
    path.to_path_buf()
}

fn csv_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(String::from)
        .collect()
}

#[test]
fn one_model_gives_four_stage_curves() {
    let root = tempfile::tempdir().unwrap();
    let input = synthetic(&root.path().join("m.csv"), "crn", 0, 20_000, 40, 10);
    let out = root.path().join("plots");
    emit_plot(&[input], &out).unwrap();
    let lines = csv_lines(&out.join("stages_crn.csv"));
    assert_eq!(lines.len(), STAGES * 10);
    let stages: std::collections::BTreeSet<&str> = lines.iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(stages.len(), 4);
    let svg = std::fs::read_to_string(out.join("stages_crn.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("stroke-width=\"2\"").count(), 4 + 4, "4 curves plus 4 legend marks");
}

#[test]
fn four_models_give_four_comparison_curves() {
    let root = tempfile::tempdir().unwrap();
    let mut inputs = Vec::new();
    for (i, kind) in ModelKind::ALL.iter().enumerate() {
        for seed in 0..2 {
            let p = root.path().join(format!("{i}_{seed}.csv"));
            inputs.push(synthetic(&p, kind.as_str(), seed, 1000, 4, 5));
        }
    }
    let out = root.path().join("plots");
    let outputs = emit_plot(&inputs, &out).unwrap();
    assert!(outputs.files.iter().all(|f| f.exists()));
    let lines = csv_lines(&out.join("comparison.csv"));
    assert_eq!(lines.len(), 4 * 5);
    let models: std::collections::BTreeSet<&str> = lines.iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(models.len(), 4);
    assert!(lines.iter().all(|l| l.split(',').nth(1) == Some("1000")));
    let svg = std::fs::read_to_string(out.join("comparison.svg")).unwrap();
    assert_eq!(svg.matches("stroke-width=\"2\"").count(), 4 + 4);
    for kind in ModelKind::ALL {
        assert!(svg.contains(kind.as_str()));
    }
}

#[test]
fn malformed_metrics_file_reports_line_and_writes_nothing() {
    let root = tempfile::tempdir().unwrap();
    let good = synthetic(&root.path().join("good.csv"), "crn", 0, 100, 2, 3);
    let bad = root.path().join("bad.csv");
    let mut text = std::fs::read_to_string(&good).unwrap();
    text.push_str("crn,100,4,0.5,0.5\n");
    std::fs::write(&bad, text).unwrap();
    let out = root.path().join("plots");
    let msg = emit_plot(&[good, bad], &out).unwrap_err().to_string();
    assert!(msg.contains("line 8"), "{msg}");
    assert!(!out.exists());
}

#[test]
fn training_metrics_files_are_plottable() {
    let root = tempfile::tempdir().unwrap();
    let cfg = tiny(&root.path().join("run"), ModelKind::CrnZeroBelief, 8);
    let summary = run_training(&cfg, &mut quiet()).unwrap();
    let out = root.path().join("plots");
    emit_plot(&[summary.metrics_path], &out).unwrap();
    assert_eq!(csv_lines(&out.join("training_curve.csv")).len(), 2);
}

#[test]
fn non_finite_loss_aborts_with_iteration() {
    let root = tempfile::tempdir().unwrap();
    let cfg = tiny(root.path(), ModelKind::Crn, 4);
    let mut trainer = crn::harness::Trainer::new(cfg).unwrap();
    trainer.step().unwrap();
    let id = trainer.model.store.id("decoder/out/b").unwrap();
    trainer.model.store.get_mut(id).value.fill(f32::NAN);
    match trainer.step() {
        Err(Error::NonFiniteLoss { iteration, .. }) => assert_eq!(iteration, 2),
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}
