//! Integration tests for the experiment harness: configuration layering,
//! artifact schemas, rerun determinism, dataset plumbing, and the `smaml`
//! binary's exit-code contract.

use std::path::Path;
use std::process::Command;

use smaml_cli::{compare_methods, metrics_columns, run_experiment, RunConfig};
use smaml_core::meta::{Method, Order};
use smaml_core::model::{Activation, ParamKind, ParamSet};

/// A small, fast configuration used as the base of most tests.
fn tiny_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.ways = 2;
    cfg.shots = 1;
    cfg.query = 2;
    cfg.inner_steps = 2;
    cfg.episodes = 2;
    cfg.eval_every = 1;
    cfg.eval_tasks = 2;
    cfg.task_batch = 1;
    cfg.hidden = vec![4];
    cfg.seed = 3;
    cfg.out = Some(out.to_path_buf());
    cfg
}

/// Splits a CSV file into header cells and per-row cells.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .expect("csv has a header line")
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    (header, rows)
}

/// Asserts two metrics CSVs agree cell-for-cell on every column except the
/// wall-clock `sec_per_iter` columns (comparison files prefix the name).
fn assert_csv_equal_except_timing(a: &Path, b: &Path) {
    let (header_a, rows_a) = read_csv(a);
    let (header_b, rows_b) = read_csv(b);
    assert_eq!(header_a, header_b, "headers differ");
    assert_eq!(rows_a.len(), rows_b.len(), "row counts differ");
    for (i, (ra, rb)) in rows_a.iter().zip(&rows_b).enumerate() {
        assert_eq!(ra.len(), rb.len(), "row {i} lengths differ");
        for (j, (ca, cb)) in ra.iter().zip(rb).enumerate() {
            if header_a[j].ends_with("sec_per_iter") {
                continue;
            }
            assert_eq!(ca, cb, "row {i}, column '{}' differs", header_a[j]);
        }
    }
}

/// Writes one binary (P5) PGM image with single-byte samples.
fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) {
    assert_eq!(pixels.len(), width * height);
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, bytes).unwrap();
}

/// A 4-class folder dataset of 2x3 images, 4 images per class, with pixel
/// patterns that differ across classes.
fn write_folder_fixture(root: &Path) {
    for (c, class) in ["ant", "bee", "cat", "dog"].iter().enumerate() {
        for i in 0..4u8 {
            let base = 40 * (c as u8 + 1);
            let pixels: Vec<u8> = (0..6).map(|p| base.wrapping_add(7 * i + p)).collect();
            write_pgm(&root.join(class).join(format!("img{i}.pgm")), 2, 3, &pixels);
        }
    }
}

#[test]
fn flags_override_config_files_which_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("base.cfg");
    std::fs::write(
        &file,
        "# comment lines and blanks are ignored\n\nepisodes = 50\nmethod = maml\nhidden = 8,4\n",
    )
    .unwrap();

    let mut cfg = RunConfig::default();
    cfg.apply_file(&file).unwrap();
    assert_eq!(cfg.episodes, 50);
    assert_eq!(cfg.method, Method::Maml);
    assert_eq!(cfg.hidden, vec![8, 4]);
    // Untouched keys keep their defaults.
    assert_eq!(cfg.seed, RunConfig::default().seed);

    // A later flag wins over the file.
    cfg.apply_kv("episodes", "3").unwrap();
    assert_eq!(cfg.episodes, 3);
}

#[test]
fn unknown_or_malformed_config_input_is_rejected_with_context() {
    let mut cfg = RunConfig::default();
    let err = cfg.apply_kv("warp-speed", "9").unwrap_err();
    assert!(err.to_string().contains("warp-speed"), "{err}");

    let err = cfg.apply_kv("episodes", "many").unwrap_err();
    assert!(err.to_string().contains("episodes"), "{err}");

    // File errors carry the path and the 1-based line number.
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.cfg");
    std::fs::write(&file, "episodes = 5\nnot a key value line\n").unwrap();
    let err = cfg.apply_file(&file).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("bad.cfg") && msg.contains(":2"), "{msg}");
}

#[test]
fn config_echo_round_trips_through_the_file_parser() {
    let original = RunConfig {
        method: Method::FoMaml,
        order: Some(Order::First),
        ways: 3,
        shots: 2,
        query: 4,
        inner_steps: 2,
        alpha: 0.05,
        beta: 0.002,
        episodes: 9,
        eval_every: 3,
        eval_tasks: 4,
        task_batch: 2,
        seed: 99,
        dataset: "sinusoid".into(),
        scenario: Some("gaussian:gaussian-wide".into()),
        split: 0.25,
        split_classes: Some("/tmp/classes.txt".into()),
        kernel_mu: 0.5,
        kernel_lambda: 2.0,
        hidden: vec![8, 4],
        activation: Activation::Tanh,
        out: Some("/tmp/run-out".into()),
    };
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("echo.cfg");
    std::fs::write(&file, original.echo()).unwrap();

    let mut parsed = RunConfig::default();
    parsed.apply_file(&file).unwrap();
    assert_eq!(parsed, original);
}

#[test]
fn a_tiny_run_writes_all_three_artifacts_with_a_consistent_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let summary = run_experiment(&cfg).unwrap();

    // One row per evaluation point: episodes 2, eval_every 1 -> 2 rows.
    assert_eq!(summary.rows.len(), 2);
    assert_eq!(summary.rows[0].iter, 1);
    assert_eq!(summary.rows[1].iter, 2);

    let (header, rows) = read_csv(&summary.csv_path);
    assert_eq!(header, metrics_columns(cfg.inner_steps));
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row.len(), header.len());
        // grad_norm_step_* cells are finite and nonnegative.
        for (cell, name) in row.iter().zip(&header) {
            if name.starts_with("grad_norm_step_") {
                let v: f64 = cell.parse().unwrap();
                assert!(v.is_finite() && v >= 0.0, "{name} = {cell}");
            }
        }
    }

    // The echoed config is itself loadable and reproduces the effective
    // configuration (the method-default order becomes explicit).
    let mut echoed = RunConfig::default();
    echoed.apply_file(&summary.config_path).unwrap();
    let mut expected = cfg.clone();
    expected.order = Some(expected.effective_order());
    assert_eq!(echoed, expected);

    // The checkpoint loads back bit-for-bit.
    let loaded = ParamSet::load_checkpoint(&summary.checkpoint_path).unwrap();
    assert!(loaded.bitwise_eq(&summary.final_params));
}

#[test]
fn rerunning_a_config_reproduces_everything_except_the_timing_column() {
    let dir = tempfile::tempdir().unwrap();
    let mut first = tiny_config(&dir.path().join("first"));
    first.episodes = 3;
    let mut second = first.clone();
    second.out = Some(dir.path().join("second"));

    let a = run_experiment(&first).unwrap();
    let b = run_experiment(&second).unwrap();

    assert_csv_equal_except_timing(&a.csv_path, &b.csv_path);
    assert_eq!(
        std::fs::read(&a.checkpoint_path).unwrap(),
        std::fs::read(&b.checkpoint_path).unwrap(),
        "checkpoints must be bitwise identical"
    );
    assert!(a.final_params.bitwise_eq(&b.final_params));
}

#[test]
fn scenarios_train_on_one_family_and_label_rows_with_the_eval_family() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.scenario = Some("gaussian:gaussian-wide".into());
    let summary = run_experiment(&cfg).unwrap();
    for row in &summary.rows {
        assert_eq!(row.eval_family, "gaussian(dim=16;scale=3;spread=1)");
    }
}

#[test]
fn malformed_or_shape_incompatible_scenarios_are_rejected() {
    let dir = tempfile::tempdir().unwrap();

    // Classification features (16 columns) cannot evaluate on a univariate
    // regression family.
    let mut cfg = tiny_config(dir.path());
    cfg.scenario = Some("gaussian:sinusoid".into());
    let err = run_experiment(&cfg).unwrap_err();
    assert!(err.to_string().contains("shape-incompatible"), "{err}");

    let mut cfg = tiny_config(dir.path());
    cfg.scenario = Some("gaussian-wide".into());
    let err = run_experiment(&cfg).unwrap_err();
    assert!(err.to_string().contains("TRAIN:TEST"), "{err}");

    let mut cfg = tiny_config(dir.path());
    cfg.scenario = Some("bogus:gaussian".into());
    assert!(run_experiment(&cfg).is_err());
}

#[test]
fn folder_datasets_run_end_to_end_under_both_spellings() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_folder_fixture(&data);

    let mut colon = tiny_config(&dir.path().join("colon"));
    colon.dataset = format!("folder:{}", data.display());
    colon.query = 1;
    colon.episodes = 1;
    let a = run_experiment(&colon).unwrap();

    // Evaluation rows are labeled with the held-out class split.
    let label = &a.rows[0].eval_family;
    assert!(
        label.starts_with("folder(") && label.contains("meta-test"),
        "unexpected eval label {label:?}"
    );

    // The legacy key=value spelling selects the same dataset and produces
    // the same trained parameters.
    let mut equals = colon.clone();
    equals.dataset = format!("folder={}", data.display());
    equals.out = Some(dir.path().join("equals"));
    let b = run_experiment(&equals).unwrap();
    assert!(a.final_params.bitwise_eq(&b.final_params));
    assert_eq!(
        std::fs::read(&a.checkpoint_path).unwrap(),
        std::fs::read(&b.checkpoint_path).unwrap()
    );
}

#[test]
fn folder_class_list_splits_are_honored() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_folder_fixture(&data);
    let list = dir.path().join("train-classes.txt");
    std::fs::write(&list, "# meta-train side\nbee\ndog\n").unwrap();

    let mut cfg = tiny_config(&dir.path().join("run"));
    cfg.dataset = format!("folder:{}", data.display());
    cfg.split_classes = Some(list);
    cfg.query = 1;
    cfg.episodes = 1;
    // Runs cleanly: both sides of the split have the 2 classes the episode
    // shape needs.
    run_experiment(&cfg).unwrap();
}

#[test]
fn plain_method_checkpoints_are_tagged_unconstrained() {
    let dir = tempfile::tempdir().unwrap();

    let mut maml = tiny_config(&dir.path().join("maml"));
    maml.method = Method::Maml;
    let summary = run_experiment(&maml).unwrap();
    let loaded = ParamSet::load_checkpoint(&summary.checkpoint_path).unwrap();
    assert!(loaded
        .entries()
        .iter()
        .all(|e| e.kind == ParamKind::Euclidean));

    let smaml = tiny_config(&dir.path().join("smaml"));
    let summary = run_experiment(&smaml).unwrap();
    let loaded = ParamSet::load_checkpoint(&summary.checkpoint_path).unwrap();
    assert!(loaded
        .entries()
        .iter()
        .any(|e| e.kind == ParamKind::Stiefel));
}

#[test]
fn regression_families_report_the_query_loss_as_the_score() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.dataset = "sinusoid".into();
    cfg.shots = 4;
    let summary = run_experiment(&cfg).unwrap();
    for row in &summary.rows {
        assert_eq!(row.eval_family, "sinusoid");
        assert_eq!(row.query_acc_mean, row.meta_loss);
        assert!(row.meta_loss.is_finite());
    }
}

#[test]
fn comparisons_merge_per_method_column_blocks_over_shared_eval_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let summary = compare_methods(&cfg, &[Method::Maml, Method::Smaml]).unwrap();

    let (header, rows) = read_csv(&summary.csv_path);
    let mut expected = vec!["iter".to_string()];
    for method in ["maml", "smaml"] {
        for col in metrics_columns(cfg.inner_steps) {
            if col == "iter" || col == "eval_family" {
                continue;
            }
            expected.push(format!("{method}_{col}"));
        }
    }
    expected.push("eval_family".into());
    assert_eq!(header, expected);
    assert_eq!(rows.len(), 2);

    // Each method also keeps its full per-run artifacts.
    for method in ["maml", "smaml"] {
        for file in ["config.txt", "metrics.csv", "checkpoint.txt"] {
            assert!(dir.path().join(method).join(file).is_file(), "{method}/{file}");
        }
    }

    let ratio = summary.sec_per_iter_ratio.expect("both methods ran");
    assert!(ratio.is_finite() && ratio > 0.0);

    // Without both a smaml and a maml run there is no ratio to report.
    let other = tiny_config(&dir.path().join("fo"));
    let summary = compare_methods(&other, &[Method::Maml, Method::FoMaml]).unwrap();
    assert!(summary.sec_per_iter_ratio.is_none());
}

#[test]
fn comparisons_reject_degenerate_method_lists() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    assert!(compare_methods(&cfg, &[]).is_err());
    assert!(compare_methods(&cfg, &[Method::Smaml]).is_err());
    let err = compare_methods(&cfg, &[Method::Maml, Method::Maml]).unwrap_err();
    assert!(err.to_string().contains("more than once"), "{err}");
}

/// Runs the compiled `smaml` binary with the given arguments.
fn smaml(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_smaml"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn binary_reports_usage_and_exits_zero_on_help() {
    let out = smaml(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("run") && text.contains("compare"), "{text}");
}

#[test]
fn binary_exit_codes_distinguish_usage_from_io_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out_flag = dir.path().join("out");

    // Usage errors exit 2: unknown flag, missing output directory, bad
    // method name, bad order/method combination.
    assert_eq!(smaml(&["run", "--definitely-not-a-flag"]).status.code(), Some(2));
    assert_eq!(smaml(&["run"]).status.code(), Some(2));
    let bad_method = smaml(&["run", "--method", "bogus", "--out", out_flag.to_str().unwrap()]);
    assert_eq!(bad_method.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_method.stderr).contains("bogus"));
    let contradiction = smaml(&[
        "run",
        "--method",
        "fomaml",
        "--order",
        "second",
        "--out",
        out_flag.to_str().unwrap(),
    ]);
    assert_eq!(contradiction.status.code(), Some(2));

    // I/O and data errors exit 3.
    let missing = smaml(&[
        "run",
        "--dataset",
        "folder:/definitely/not/a/real/path",
        "--out",
        out_flag.to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn binary_runs_a_tiny_experiment_and_honors_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let file = dir.path().join("base.cfg");
    // The file asks for 5 episodes; the flag overrides it down to 1.
    std::fs::write(
        &file,
        "episodes = 5\neval-every = 1\neval-tasks = 2\ntask-batch = 1\n\
         ways = 2\nquery = 2\ninner-steps = 1\nhidden = 4\n",
    )
    .unwrap();

    let output = smaml(&[
        "run",
        "--config",
        file.to_str().unwrap(),
        "--episodes",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    assert!(String::from_utf8_lossy(&output.stdout).contains("wrote"));

    let echoed = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echoed.contains("episodes = 1"), "{echoed}");
    let (_, rows) = read_csv(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 1);
    assert!(out.join("checkpoint.txt").is_file());
}
