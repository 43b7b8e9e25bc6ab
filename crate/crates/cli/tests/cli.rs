use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clap::Parser;
use tasktransfer_cli::commands::StageOutcome;
use tasktransfer_cli::{run, Cli};

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tasktransfer"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("TASKTRANSFER_SEED")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stage(dir: &Path, args: &[&str]) -> StageOutcome {
    let mut argv = vec!["tasktransfer", "--out", dir.to_str().unwrap()];
    argv.extend_from_slice(args);
    run(Cli::try_parse_from(argv).unwrap(), &Default::default()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    fs::create_dir_all(dir).unwrap();
    let p = dir.join("test.conf");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn missing_artifacts_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in ["sample", "build-dataset", "train-transfer", "report"] {
        let o = bin(tmp.path(), &[cmd]);
        assert_eq!(code(&o), 3, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&bin(tmp.path(), &["select", "goto the red ball"])), 3);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_key = write_config(tmp.path(), "plan.kk = 3\n");
    let o = bin(tmp.path(), &["train-base", "--config", &bad_key]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("plan.kk"));

    let infeasible = write_config(tmp.path(), "plan.k = 20\nplan.p = 10\n");
    assert_eq!(code(&bin(tmp.path(), &["train-base", "--config", &infeasible])), 2);
    assert_eq!(code(&bin(tmp.path(), &["grid", "--backend", "linear"])), 2);
    assert_eq!(code(&bin(tmp.path(), &["select", "dance with the red ball"])), 2);
    let env = Command::new(env!("CARGO_BIN_EXE_tasktransfer"))
        .args(["grid", "--out"])
        .arg(tmp.path())
        .env("TASKTRANSFER_PLAN_K", "many")
        .output()
        .unwrap();
    assert_eq!(code(&env), 2);
}

#[test]
fn tied_samples_exit_4_and_divergence_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("samples.csv"),
        "base_instruction,transfer_instruction,n_steps,success_rate,seed\n\
         goto the red ball,pickup the red ball,100,0.500000,1\n\
         goto the blue key,pickup the red ball,100,0.500000,2\n",
    )
    .unwrap();
    assert_eq!(code(&bin(tmp.path(), &["build-dataset"])), 4);
    assert!(!tmp.path().join("dataset.csv").exists());

    let cfg = write_config(tmp.path(), "classifier.learning_rate = 1e300\n");
    assert_eq!(code(&bin(tmp.path(), &["train-transfer", "--synthetic", "--config", &cfg])), 5);
}

#[test]
fn small_pipeline_force_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "plan.k = 2\nplan.p = 2\nplan.n_adapt_steps = 2000\n");
    let trained = stage(&dir, &["train-base", "--config", &cfg]);
    assert_eq!((trained.computed, trained.reused), (2, 0));

    let sampled = stage(&dir, &["sample", "--config", &cfg]);
    let samples = fs::read_to_string(dir.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 4, "{samples}");
    assert!(samples.lines().skip(1).all(|l| l.split(',').nth(3).unwrap().split('.').nth(1).unwrap().len() == 6));
    // 4 transfer + 2 * 20 holdout + 2 scratch cells
    assert_eq!(sampled.computed, 4 + 2 * 20 + 2);

    // a finished stage is guarded
    let o = bin(&dir, &["sample", "--config", &cfg]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));

    // losing the summary files resumes from the per-cell records
    fs::remove_file(dir.join("samples.csv")).unwrap();
    fs::remove_file(dir.join("cells/transfer").read_dir().unwrap().next().unwrap().unwrap().path()).unwrap();
    let before = fs::read(dir.join("curves.csv")).unwrap();
    let resumed = stage(&dir, &["sample", "--config", &cfg]);
    assert_eq!((resumed.computed, resumed.reused), (1, sampled.computed - 1));
    assert_eq!(fs::read_to_string(dir.join("samples.csv")).unwrap(), samples);
    assert_eq!(fs::read(dir.join("curves.csv")).unwrap(), before);

    let forced = stage(&dir, &["sample", "--config", &cfg, "--force"]);
    assert_eq!(forced.reused, 0);
    assert_eq!(fs::read_to_string(dir.join("samples.csv")).unwrap(), samples);

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["stages"]["sample"]["outputs"]["samples.csv"].is_string());
    let cells = manifest["stages"]["sample"]["cells"].as_object().unwrap();
    assert_eq!(cells.len(), 46);
    assert!(cells.values().all(|v| v == "done"));
}

#[test]
fn report_writes_one_svg_per_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "plan.k = 4\nplan.p = 4\nplan.n_adapt_steps = 3000\nplan.holdout_grid = false\n");
    for s in ["train-base", "sample", "report"] {
        stage(&dir, &[s, "--config", &cfg]);
    }
    for dim in ["verb", "object", "color"] {
        let svg = fs::read_to_string(dir.join(format!("report/{dim}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let csv = fs::read_to_string(dir.join(format!("report/match_curves_{dim}.csv"))).unwrap();
        assert!(csv.starts_with("step,matching,differing,overall,scratch\n"));
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("report/summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_object().unwrap().len(), 3);

    // without a holdout grid the classifier is scored on held-out beta groups
    stage(&dir, &["build-dataset", "--config", &cfg]);
    stage(&dir, &["train-transfer", "--config", &cfg]);
    let t: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("transfer_summary.json")).unwrap()).unwrap();
    assert_eq!(t["holdout_source"], "beta_split");
    let pred = fs::read_to_string(dir.join("predictions.csv")).unwrap();
    assert!(pred.starts_with("z_x,z_i,z_j,probability,label,correct\n"));

    let o = bin(&dir, &["select", "pickup the green key"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.contains("wins")).count(), 4, "{text}");
}

#[test]
fn grid_skips_infeasible_cells_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = write_config(
        tmp.path(),
        "grid.k_values = 4\ngrid.p_values = 4, 20\ngrid.runs = 2\nplan.n_adapt_steps = 3000\n",
    );
    let first = stage(&dir, &["grid", "--config", &cfg]);
    assert_eq!(first.computed, 2);
    assert!(first.lines.iter().any(|l| l.starts_with("warning: k=4 p=20 skipped")));
    let grid = fs::read_to_string(dir.join("accuracy_grid.csv")).unwrap();
    let rows: Vec<&str> = grid.lines().collect();
    assert_eq!(rows[0], "k,p,runs,mean,std,status");
    assert!(rows[1].starts_with("4,4,2,") && rows[1].ends_with(",ok"), "{grid}");
    assert!(rows[2].starts_with("4,20,0,,,skipped"), "{grid}");

    fs::remove_file(dir.join("accuracy_grid.csv")).unwrap();
    let again = stage(&dir, &["grid", "--config", &cfg]);
    assert_eq!((again.computed, again.reused), (0, 2));
    assert_eq!(fs::read_to_string(dir.join("accuracy_grid.csv")).unwrap(), grid);
}
