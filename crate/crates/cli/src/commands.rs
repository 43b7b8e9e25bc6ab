//! One function per pipeline stage. Stages communicate only through files
//! in the run directory.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tasktransfer::adaptation::{
    build_dataset, group_curves, mean_final_success, read_curves, read_dataset, read_samples, run_cell,
    run_grid, run_scratch_baselines, train_base, train_base_policies, write_curves, write_dataset,
    write_samples, AdaptationSample, ComparisonRecord, Curve, Dimension, ExperimentPlan, MatchCurves,
};
use tasktransfer::instructions::{parse, Instruction};
use tasktransfer::learner::{load_snapshot, save_snapshot, PolicySnapshot};
use tasktransfer::seed::{derive_seed, run_seed};
use tasktransfer::transfer::{
    accuracy, save_model, select_best, shuffled_labels, synthetic_split, train_classifier, write_predictions,
    ClassifierConfig, RankedBase, TransferModel,
};

use crate::artifacts::{cell_id, read_cell, slug, write_atomic, CellRecord, Manifest, RunDir};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::plot::match_chart;

pub struct Context {
    pub cfg: RunConfig,
    pub dir: RunDir,
    pub force: bool,
    pub synthetic: bool,
}

/// What a stage did, for the terminal and for tests.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageOutcome {
    pub lines: Vec<String>,
    pub computed: usize,
    pub reused: usize,
}

impl Context {
    pub fn new(cfg: RunConfig, force: bool, synthetic: bool) -> Self {
        let dir = RunDir::new(&cfg.out);
        Context {
            cfg,
            dir,
            force,
            synthetic,
        }
    }

    fn plan_from_config(&self, k: usize, p: usize, seed: u64) -> Result<ExperimentPlan, CliError> {
        Ok(ExperimentPlan::sample(
            k,
            p,
            self.cfg.plan.n_adapt_steps,
            seed,
            self.cfg.env,
            self.cfg.train.clone(),
            self.cfg.plan.adapt_epsilon_decay_steps,
        )?)
    }

    fn load_plan(&self) -> Result<ExperimentPlan, CliError> {
        let p = self.dir.require("plan.json")?;
        serde_json::from_slice(&fs::read(&p)?)
            .map_err(|e| CliError::Missing(format!("unreadable {}: {e}", p.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

// ---------------------------------------------------------------- train-base

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BaseCell {
    instruction: Instruction,
    converged: bool,
    final_success_rate: f64,
    train_steps_used: usize,
    seed: u64,
}

pub fn train_base_cmd(ctx: &Context) -> Result<StageOutcome, CliError> {
    let dir = &ctx.dir;
    dir.guard("base_policies.csv", ctx.force)?;
    let plan = ctx.plan_from_config(ctx.cfg.plan.k, ctx.cfg.plan.p, ctx.cfg.seed)?;
    fs::create_dir_all(&dir.root)?;
    let plan_path = dir.path("plan.json");
    if plan_path.exists() && !ctx.force {
        let old = ctx.load_plan()?;
        if old != plan {
            return Err(CliError::Exists(plan_path));
        }
    }
    if ctx.force {
        for sub in ["snapshots", "base_stats", "cells/base"] {
            let _ = fs::remove_dir_all(dir.path(sub));
        }
    }
    for sub in ["snapshots", "base_stats", "cells/base"] {
        fs::create_dir_all(dir.path(sub))?;
    }
    dir.write_config("train-base", &ctx.cfg)?;
    write_json(&plan_path, &plan)?;

    let results: Vec<Result<(BaseCell, bool), CliError>> = plan
        .alpha
        .par_iter()
        .map(|instr| {
            let cell_path = dir.cells("base").join(format!("{}.json", slug(instr)));
            if let Some(cell) = read_cell::<BaseCell>(&cell_path) {
                if cell.seed == plan.base_seed(instr) && dir.snapshot(instr).exists() {
                    return Ok((cell, true));
                }
            }
            let outcome = train_base::<f64>(&plan, instr)?;
            save_snapshot(&outcome.snapshot, &dir.snapshot(instr))?;
            outcome.stats.write_csv(create(&dir.base_stats(instr))?)?;
            let cell = BaseCell {
                instruction: *instr,
                converged: outcome.converged,
                final_success_rate: outcome.snapshot.final_success_rate,
                train_steps_used: outcome.snapshot.train_steps_used,
                seed: outcome.snapshot.seed,
            };
            write_atomic(&cell_path, &serde_json::to_vec(&cell)?)?;
            Ok((cell, false))
        })
        .collect();

    let mut out = StageOutcome::default();
    let mut cells = BTreeMap::new();
    let mut rows = Vec::new();
    for r in results {
        let (cell, reused) = r?;
        if reused {
            out.reused += 1;
        } else {
            out.computed += 1;
        }
        cells.insert(
            slug(&cell.instruction),
            if cell.converged { "done".to_string() } else { "done: not converged".to_string() },
        );
        rows.push(cell);
    }

    let mut w = csv::Writer::from_writer(create(&dir.path("base_policies.csv"))?);
    w.write_record(["instruction", "converged", "final_success_rate", "train_steps", "seed"])?;
    for c in &rows {
        w.write_record([
            c.instruction.render(),
            (c.converged as u8).to_string(),
            format!("{:.6}", c.final_success_rate),
            c.train_steps_used.to_string(),
            c.seed.to_string(),
        ])?;
        out.lines.push(format!(
            "{:<24} converged={} success={:.3} steps={}",
            c.instruction.render(),
            c.converged,
            c.final_success_rate,
            c.train_steps_used
        ));
    }
    w.flush()?;
    drop(w);

    let mut outputs: Vec<String> = vec!["plan.json".into(), "base_policies.csv".into()];
    for i in &plan.alpha {
        outputs.push(format!("snapshots/{}.bin", slug(i)));
        outputs.push(format!("base_stats/{}.csv", slug(i)));
    }
    let converged = rows.iter().filter(|c| c.converged).count();
    let notes = vec![format!("{converged} of {} base policies converged", rows.len())];
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    Manifest::record(dir, "train_base", &ctx.cfg, &refs, cells, notes)?;
    if converged == 0 {
        return Err(CliError::Degenerate(format!("none of the {} base policies converged", rows.len())));
    }
    Ok(out)
}

/// Converged base snapshots listed in `base_policies.csv`, in alpha order.
fn load_bases(ctx: &Context, plan: &ExperimentPlan) -> Result<Vec<PolicySnapshot<f64>>, CliError> {
    let listing = ctx.dir.require("base_policies.csv")?;
    let mut reader = csv::Reader::from_path(&listing)?;
    let mut converged = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.get(1) == Some("1") {
            converged.push(parse(rec.get(0).unwrap_or(""))?);
        }
    }
    plan.alpha
        .iter()
        .filter(|i| converged.contains(i))
        .map(|i| {
            let p = ctx.dir.snapshot(i);
            if !p.exists() {
                return Err(CliError::Missing(format!("snapshot {}", p.display())));
            }
            Ok(load_snapshot::<f64>(&p)?)
        })
        .collect()
}

// -------------------------------------------------------------------- sample

#[derive(Clone, Copy)]
enum CellKind {
    Transfer,
    Holdout,
    Scratch,
}

impl CellKind {
    fn name(self) -> &'static str {
        match self {
            CellKind::Transfer => "transfer",
            CellKind::Holdout => "holdout",
            CellKind::Scratch => "scratch",
        }
    }

    fn files(self) -> (&'static str, &'static str) {
        match self {
            CellKind::Transfer => ("samples.csv", "curves.csv"),
            CellKind::Holdout => ("holdout_samples.csv", "holdout_curves.csv"),
            CellKind::Scratch => ("scratch_samples.csv", "scratch_curves.csv"),
        }
    }
}

pub fn sample_cmd(ctx: &Context) -> Result<StageOutcome, CliError> {
    let dir = &ctx.dir;
    let plan = ctx.load_plan()?;
    let bases = load_bases(ctx, &plan)?;
    if bases.is_empty() {
        return Err(CliError::Degenerate("no converged base policies to sample from".into()));
    }
    dir.guard("samples.csv", ctx.force)?;
    if ctx.force {
        let _ = fs::remove_dir_all(dir.path("cells/transfer"));
        let _ = fs::remove_dir_all(dir.path("cells/holdout"));
        let _ = fs::remove_dir_all(dir.path("cells/scratch"));
    }
    dir.write_config("sample", &ctx.cfg)?;

    let mut kinds = vec![(CellKind::Transfer, plan.beta.clone())];
    if ctx.cfg.plan.holdout_grid {
        kinds.push((CellKind::Holdout, plan.holdout()));
    }
    if ctx.cfg.plan.scratch_baselines {
        kinds.push((CellKind::Scratch, plan.beta.clone()));
    }

    let mut out = StageOutcome::default();
    let mut statuses = BTreeMap::new();
    let mut outputs = Vec::new();
    for (kind, transfers) in kinds {
        let cell_dir = dir.cells(kind.name());
        fs::create_dir_all(&cell_dir)?;
        let jobs: Vec<(Option<&PolicySnapshot<f64>>, Instruction)> = match kind {
            CellKind::Scratch => transfers.iter().map(|&t| (None, t)).collect(),
            _ => bases
                .iter()
                .flat_map(|b| transfers.iter().map(move |&t| (Some(b), t)))
                .collect(),
        };
        let results: Vec<(String, Result<(AdaptationSample, bool), CliError>)> = jobs
            .par_iter()
            .map(|&(base, transfer)| {
                let id = cell_id(base.map(|b| &b.instruction), &transfer);
                let path = cell_dir.join(format!("{id}.json"));
                let seed = match base {
                    Some(b) => plan.adapt_seed(&b.instruction, &transfer),
                    None => plan.scratch_seed(&transfer),
                };
                if let Some(cell) = read_cell::<CellRecord>(&path) {
                    if cell.seed == seed && cell.n_steps == plan.n_adapt_steps {
                        return (id, Ok((cell.into(), true)));
                    }
                }
                let result = (|| {
                    let sample = match base {
                        Some(b) => run_cell(&plan, b, transfer)?,
                        None => run_scratch_baselines::<f64>(
                            &[transfer],
                            plan.n_adapt_steps,
                            &plan.env_config,
                            &plan.adapt_config(),
                            plan.master_seed,
                        )?
                        .remove(0),
                    };
                    write_atomic(&path, &serde_json::to_vec(&CellRecord::from(&sample))?)?;
                    Ok((sample, false))
                })();
                (id, result)
            })
            .collect();

        let mut samples = Vec::new();
        for (id, r) in results {
            let key = format!("{}/{id}", kind.name());
            match r {
                Ok((s, reused)) => {
                    if reused {
                        out.reused += 1;
                    } else {
                        out.computed += 1;
                    }
                    samples.push(s);
                    statuses.insert(key, "done".to_string());
                }
                Err(e @ CliError::Io(_)) => return Err(e),
                Err(e) => {
                    statuses.insert(key, format!("failed: {e}"));
                }
            }
        }
        samples.sort_by_key(|s| s.sort_key());
        let (sf, cf) = kind.files();
        write_samples(create(&dir.path(sf))?, &samples)?;
        write_curves(create(&dir.path(cf))?, &samples)?;
        outputs.push(sf);
        outputs.push(cf);
        out.lines.push(format!("{}: {} samples", kind.name(), samples.len()));
    }
    let failed = statuses.values().filter(|s| s.starts_with("failed")).count();
    out.lines
        .push(format!("{} cells computed, {} reused, {failed} failed", out.computed, out.reused));
    Manifest::record(dir, "sample", &ctx.cfg, &outputs, statuses, vec![])?;
    Ok(out)
}

// ------------------------------------------------------------- build-dataset

fn samples_with_curves(dir: &RunDir, samples: &str, curves: &str) -> Result<Vec<AdaptationSample>, CliError> {
    let mut s = read_samples(File::open(dir.require(samples)?)?)?;
    let path = dir.path(curves);
    if path.exists() {
        let mut c = read_curves(File::open(path)?)?;
        for x in s.iter_mut() {
            x.curve = c.remove(&(x.base, x.transfer)).unwrap_or_default();
        }
    }
    Ok(s)
}

pub fn build_dataset_cmd(ctx: &Context) -> Result<StageOutcome, CliError> {
    let dir = &ctx.dir;
    let samples = read_samples(File::open(dir.require("samples.csv")?)?)?;
    dir.guard("dataset.csv", ctx.force)?;
    dir.write_config("build-dataset", &ctx.cfg)?;
    let records = build_dataset(&samples);
    if records.is_empty() {
        return Err(CliError::Degenerate(
            "no comparison records: every pair of bases tied on every transfer instruction".into(),
        ));
    }
    write_dataset(create(&dir.path("dataset.csv"))?, &records)?;
    let mut out = StageOutcome::default();
    out.lines.push(format!("dataset.csv: {} records", records.len()));
    let mut outputs = vec!["dataset.csv"];
    let mut notes = vec![];
    let holdout = dir.path("holdout_samples.csv");
    if holdout.exists() {
        let held = build_dataset(&read_samples(File::open(holdout)?)?);
        write_dataset(create(&dir.path("holdout_dataset.csv"))?, &held)?;
        outputs.push("holdout_dataset.csv");
        out.lines.push(format!("holdout_dataset.csv: {} records", held.len()));
        if held.is_empty() {
            notes.push("holdout dataset is empty (all ties)".to_string());
        }
    }
    Manifest::record(dir, "build_dataset", &ctx.cfg, &outputs, BTreeMap::new(), notes)?;
    Ok(out)
}

// ------------------------------------------------------------ train-transfer

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    /// `samples` or `synthetic`.
    pub source: String,
    /// `holdout` (unseen transfer instructions), `beta_split` (held-out
    /// comparison groups of the training instructions) or `synthetic`.
    pub holdout_source: String,
    pub train_records: usize,
    pub eval_records: usize,
    pub runs: usize,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Label-shuffled control, synthetic mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_accuracies: Option<Vec<f64>>,
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Splits records by comparison group: roughly a fifth of the groups go to
/// the evaluation side.
fn group_split(records: &[ComparisonRecord], seed: u64) -> (Vec<ComparisonRecord>, Vec<ComparisonRecord>) {
    use rand::seq::SliceRandom;
    let group = |r: &ComparisonRecord| (r.z_x, r.z_i.min(r.z_j), r.z_i.max(r.z_j));
    let mut groups: Vec<_> = records.iter().map(group).collect();
    groups.sort();
    groups.dedup();
    groups.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let n_eval = (groups.len() / 5).max(1).min(groups.len().saturating_sub(1));
    let held: std::collections::BTreeSet<_> = groups[..n_eval].iter().copied().collect();
    let (eval, train): (Vec<_>, Vec<_>) = records.iter().partition(|r| held.contains(&group(r)));
    (train, eval)
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

pub fn train_transfer_cmd(ctx: &Context) -> Result<StageOutcome, CliError> {
    let dir = &ctx.dir;
    let cfg = &ctx.cfg;
    let (source, holdout_source, train, eval, control) = if ctx.synthetic {
        let (train, eval) = synthetic_split(200, 100, derive_seed(cfg.seed, "synthetic", None, None));
        let control = (
            shuffled_labels(&train, derive_seed(cfg.seed, "shuffle-train", None, None)),
            shuffled_labels(&eval, derive_seed(cfg.seed, "shuffle-eval", None, None)),
        );
        ("synthetic", "synthetic", train, eval, Some(control))
    } else {
        let records = read_dataset(File::open(dir.require("dataset.csv")?)?)?;
        let held_path = dir.path("holdout_dataset.csv");
        let held = if held_path.exists() {
            read_dataset(File::open(held_path)?)?
        } else {
            Vec::new()
        };
        if held.is_empty() {
            let (train, eval) = group_split(&records, derive_seed(cfg.seed, "beta-split", None, None));
            ("samples", "beta_split", train, eval, None)
        } else {
            ("samples", "holdout", records, held, None)
        }
    };
    if eval.is_empty() {
        return Err(CliError::Degenerate("no evaluation records".into()));
    }
    fs::create_dir_all(&dir.root)?;
    dir.guard("transfer_summary.json", ctx.force)?;
    dir.write_config("train-transfer", cfg)?;

    let run_cfg = |r: usize| ClassifierConfig {
        seed: run_seed(cfg.seed, "classifier", r),
        ..cfg.classifier.clone()
    };
    let runs: Vec<Result<(TransferModel<f64>, Vec<f64>, f64), CliError>> = (0..cfg.transfer_runs)
        .into_par_iter()
        .map(|r| {
            let (model, report) = train_classifier::<f64>(&train, &run_cfg(r))?;
            let acc = accuracy(&model, &eval);
            Ok((model, report.step_loss, acc))
        })
        .collect();
    let runs: Vec<_> = runs.into_iter().collect::<Result<_, _>>()?;
    let accuracies: Vec<f64> = runs.iter().map(|r| round6(r.2)).collect();
    let (mean, std) = mean_std(&accuracies);

    let control_accuracies = match &control {
        Some((ctrain, ceval)) => Some(
            (0..cfg.transfer_runs)
                .into_par_iter()
                .map(|r| {
                    let (m, _) = train_classifier::<f64>(ctrain, &run_cfg(r))?;
                    Ok(round6(accuracy(&m, ceval)))
                })
                .collect::<Result<Vec<f64>, CliError>>()?,
        ),
        None => None,
    };

    let (model, losses, _) = &runs[0];
    save_model(model, &run_cfg(0), &dir.path("model.bin"))?;
    write_predictions(create(&dir.path("predictions.csv"))?, model, &eval)?;
    let mut w = csv::Writer::from_writer(create(&dir.path("classifier_loss.csv"))?);
    w.write_record(["step", "loss"])?;
    for (s, l) in losses.iter().enumerate() {
        w.write_record([(s + 1).to_string(), format!("{l:.6}")])?;
    }
    w.flush()?;
    drop(w);

    let summary = TransferSummary {
        source: source.into(),
        holdout_source: holdout_source.into(),
        train_records: train.len(),
        eval_records: eval.len(),
        runs: cfg.transfer_runs,
        accuracies,
        mean: round6(mean),
        std: round6(std),
        control_accuracies,
    };
    write_json(&dir.path("transfer_summary.json"), &summary)?;
    let outputs = ["model.bin", "predictions.csv", "classifier_loss.csv", "transfer_summary.json"];
    let mut notes = vec![];
    if holdout_source == "beta_split" {
        notes.push("no holdout grid; accuracy measured on held-out comparison groups of beta".into());
    }
    Manifest::record(dir, "train_transfer", cfg, &outputs, BTreeMap::new(), notes)?;
    let mut out = StageOutcome::default();
    out.lines.push(format!(
        "{holdout_source} accuracy {mean:.2} ± {std:.2} over {} runs ({} train / {} eval records)",
        cfg.transfer_runs,
        train.len(),
        eval.len()
    ));
    if let Some(c) = &summary.control_accuracies {
        out.lines.push(format!("label-shuffled control accuracy {:.2}", mean_std(c).0));
    }
    Ok(out)
}

// ---------------------------------------------------------------------- grid

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub accuracy: f64,
    pub converged_bases: usize,
    pub train_records: usize,
    pub eval_records: usize,
    pub seed: u64,
}

/// Base training, beta and holdout sampling, dataset construction and one
/// classifier, all in memory.
pub fn run_pipeline(cfg: &RunConfig, k: usize, p: usize, seed: u64) -> Result<PipelineResult, CliError> {
    let plan = ExperimentPlan::sample(
        k,
        p,
        cfg.plan.n_adapt_steps,
        seed,
        cfg.env,
        cfg.train.clone(),
        cfg.plan.adapt_epsilon_decay_steps,
    )?;
    let bases: Vec<PolicySnapshot<f64>> = train_base_policies::<f64>(&plan)?
        .into_iter()
        .filter(|b| b.converged)
        .map(|b| b.snapshot)
        .collect();
    let train = build_dataset(&run_grid(&plan, &bases, &plan.beta).samples);
    let eval = build_dataset(&run_grid(&plan, &bases, &plan.holdout()).samples);
    if eval.is_empty() {
        return Err(CliError::Degenerate("holdout comparisons are all ties".into()));
    }
    let ccfg = ClassifierConfig {
        seed: derive_seed(seed, "classifier", None, None),
        ..cfg.classifier.clone()
    };
    let (model, _) = train_classifier::<f64>(&train, &ccfg)?;
    Ok(PipelineResult {
        accuracy: round6(accuracy(&model, &eval)),
        converged_bases: bases.len(),
        train_records: train.len(),
        eval_records: eval.len(),
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub k: usize,
    pub p: usize,
    pub accuracies: Vec<f64>,
    pub status: String,
}

impl GridCell {
    pub fn mean_std(&self) -> Option<(f64, f64)> {
        (!self.accuracies.is_empty()).then(|| mean_std(&self.accuracies))
    }
}

pub fn grid_seed(master: u64, k: usize, p: usize, run: usize) -> u64 {
    run_seed(master, &format!("grid-k{k}-p{p}"), run)
}

pub fn grid_cmd(ctx: &Context) -> Result<StageOutcome, CliError> {
    let dir = &ctx.dir;
    let cfg = &ctx.cfg;
    fs::create_dir_all(&dir.root)?;
    dir.guard("accuracy_grid.csv", ctx.force)?;
    let cell_dir = dir.cells("grid");
    if ctx.force {
        let _ = fs::remove_dir_all(&cell_dir);
    }
    fs::create_dir_all(&cell_dir)?;
    dir.write_config("grid", cfg)?;

    let feasible = |k: usize, p: usize| k + p < tasktransfer::instructions::NUM_INSTRUCTIONS;
    let mut jobs = Vec::new();
    for &k in &cfg.grid.k_values {
        for &p in &cfg.grid.p_values {
            if feasible(k, p) {
                jobs.extend((0..cfg.grid.runs).map(|r| (k, p, r)));
            }
        }
    }
    let results: Vec<((usize, usize, usize), Result<(PipelineResult, bool), CliError>)> = jobs
        .par_iter()
        .map(|&(k, p, r)| {
            let seed = grid_seed(cfg.seed, k, p, r);
            let path = cell_dir.join(format!("k{k}_p{p}_r{r}.json"));
            if let Some(done) = read_cell::<PipelineResult>(&path) {
                if done.seed == seed {
                    return ((k, p, r), Ok((done, true)));
                }
            }
            let res = run_pipeline(cfg, k, p, seed).and_then(|pr| {
                write_atomic(&path, &serde_json::to_vec(&pr)?)?;
                Ok((pr, false))
            });
            ((k, p, r), res)
        })
        .collect();

    let mut out = StageOutcome::default();
    let mut statuses = BTreeMap::new();
    let mut by_cell: BTreeMap<(usize, usize), (Vec<f64>, Vec<String>)> = BTreeMap::new();
    for ((k, p, r), res) in results {
        let entry = by_cell.entry((k, p)).or_default();
        match res {
            Ok((pr, reused)) => {
                if reused {
                    out.reused += 1;
                } else {
                    out.computed += 1;
                }
                entry.0.push(pr.accuracy);
                statuses.insert(format!("k{k}_p{p}_r{r}"), "done".to_string());
            }
            Err(e @ CliError::Io(_)) => return Err(e),
            Err(e) => {
                entry.1.push(format!("run {r}: {e}"));
                statuses.insert(format!("k{k}_p{p}_r{r}"), format!("failed: {e}"));
            }
        }
    }

    let mut cells = Vec::new();
    for &k in &cfg.grid.k_values {
        for &p in &cfg.grid.p_values {
            let cell = if !feasible(k, p) {
                GridCell {
                    k,
                    p,
                    accuracies: vec![],
                    status: format!("skipped: k + p = {} leaves no holdout instruction", k + p),
                }
            } else {
                let (accs, errs) = by_cell.remove(&(k, p)).unwrap_or_default();
                let status = if errs.is_empty() {
                    "ok".to_string()
                } else if accs.is_empty() {
                    format!("failed: {}", errs.join("; "))
                } else {
                    format!("partial: {} of {} runs failed", errs.len(), cfg.grid.runs)
                };
                GridCell {
                    k,
                    p,
                    accuracies: accs,
                    status,
                }
            };
            if cell.status.starts_with("skipped") {
                out.lines.push(format!("warning: k={k} p={p} {}", cell.status));
            }
            cells.push(cell);
        }
    }

    let mut w = csv::Writer::from_writer(create(&dir.path("accuracy_grid.csv"))?);
    w.write_record(["k", "p", "runs", "mean", "std", "status"])?;
    for c in &cells {
        let (m, s) = c
            .mean_std()
            .map_or((String::new(), String::new()), |(m, s)| (format!("{m:.6}"), format!("{s:.6}")));
        w.write_record([c.k.to_string(), c.p.to_string(), c.accuracies.len().to_string(), m, s, c.status.clone()])?;
    }
    w.flush()?;
    drop(w);

    let trend = trend_report(cfg, &cells);
    write_json(&dir.path("grid_report.json"), &trend)?;
    out.lines.extend(table_lines(cfg, &cells));
    out.lines.push(format!(
        "trend (reported, not enforced): rising along p in {}/{} rows, along k in {}/{} columns",
        trend.rows_rising, trend.rows_checked, trend.cols_rising, trend.cols_checked
    ));
    Manifest::record(dir, "grid", cfg, &["accuracy_grid.csv", "grid_report.json"], statuses, vec![])?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub rows_checked: usize,
    /// Rows (fixed k) whose mean accuracy never falls as p grows.
    pub rows_rising: usize,
    pub cols_checked: usize,
    pub cols_rising: usize,
}

fn nondecreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] >= w[0])
}

fn trend_report(cfg: &RunConfig, cells: &[GridCell]) -> TrendReport {
    let mean = |k: usize, p: usize| {
        cells
            .iter()
            .find(|c| c.k == k && c.p == p)
            .and_then(|c| c.mean_std())
            .map(|m| m.0)
    };
    let mut t = TrendReport {
        rows_checked: 0,
        rows_rising: 0,
        cols_checked: 0,
        cols_rising: 0,
    };
    for &k in &cfg.grid.k_values {
        let row: Vec<f64> = cfg.grid.p_values.iter().filter_map(|&p| mean(k, p)).collect();
        if row.len() >= 2 {
            t.rows_checked += 1;
            t.rows_rising += nondecreasing(&row) as usize;
        }
    }
    for &p in &cfg.grid.p_values {
        let col: Vec<f64> = cfg.grid.k_values.iter().filter_map(|&k| mean(k, p)).collect();
        if col.len() >= 2 {
            t.cols_checked += 1;
            t.cols_rising += nondecreasing(&col) as usize;
        }
    }
    t
}

fn table_lines(cfg: &RunConfig, cells: &[GridCell]) -> Vec<String> {
    let mut lines = vec![];
    let mut header = format!("{:>6}", "k \\ p");
    for p in &cfg.grid.p_values {
        header.push_str(&format!("{p:>14}"));
    }
    lines.push(header);
    for &k in &cfg.grid.k_values {
        let mut line = format!("{k:>6}");
        for &p in &cfg.grid.p_values {
            let text = cells
                .iter()
                .find(|c| c.k == k && c.p == p)
                .and_then(|c| c.mean_std())
                .map_or("-".to_string(), |(m, s)| format!("{m:.2} ±{s:.2}"));
            line.push_str(&format!("{text:>14}"));
        }
        lines.push(line);
    }
    lines
}

// -------------------------------------------------------------------- report

fn curves_csv(m: &MatchCurves) -> String {
    let mut steps: Vec<usize> = m.overall.iter().map(|p| p.0).collect();
    for c in [&m.matching, &m.differing, &m.scratch].into_iter().flatten() {
        steps.extend(c.iter().map(|p| p.0));
    }
    steps.sort_unstable();
    steps.dedup();
    let at = |c: Option<&Curve>, s: usize| {
        c.and_then(|c| c.iter().find(|p| p.0 == s))
            .map_or(String::new(), |p| format!("{:.6}", p.1))
    };
    let mut out = String::from("step,matching,differing,overall,scratch\n");
    for s in steps {
        out.push_str(&format!(
            "{s},{},{},{},{}\n",
            at(m.matching.as_ref(), s),
            at(m.differing.as_ref(), s),
            at(Some(&m.overall), s),
            at(m.scratch.as_ref(), s)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub n_matching: usize,
    pub n_differing: usize,
    pub mean_final_matching: Option<f64>,
    pub mean_final_differing: Option<f64>,
    pub empty_partition: bool,
}

pub fn report_cmd(ctx: &Context) -> Result<StageOutcome, CliError> {
    let dir = &ctx.dir;
    dir.require("curves.csv")?;
    let samples = samples_with_curves(dir, "samples.csv", "curves.csv")?;
    let scratch = if dir.path("scratch_samples.csv").exists() {
        samples_with_curves(dir, "scratch_samples.csv", "scratch_curves.csv")?
    } else {
        Vec::new()
    };
    dir.guard("report/summary.json", ctx.force)?;
    fs::create_dir_all(dir.path("report"))?;
    dir.write_config("report", &ctx.cfg)?;

    let mut out = StageOutcome::default();
    let mut summary = BTreeMap::new();
    let mut outputs = vec![];
    for d in Dimension::ALL {
        let m = group_curves(&samples, d, &scratch)?;
        let name = d.name();
        fs::write(dir.path(&format!("report/match_curves_{name}.csv")), curves_csv(&m))?;
        fs::write(dir.path(&format!("report/{name}.svg")), match_chart(&m))?;
        outputs.push(format!("report/match_curves_{name}.csv"));
        outputs.push(format!("report/{name}.svg"));
        let (fm, fd) = mean_final_success(&samples, d);
        let round = |x: Option<f64>| x.map(round6);
        summary.insert(
            name.to_string(),
            DimensionSummary {
                n_matching: m.n_matching,
                n_differing: m.n_differing,
                mean_final_matching: round(fm),
                mean_final_differing: round(fd),
                empty_partition: m.has_empty_partition(),
            },
        );
        let show = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        out.lines.push(format!(
            "{name:<6} same {} (n={})  different {} (n={})",
            show(fm),
            m.n_matching,
            show(fd),
            m.n_differing
        ));
    }
    write_json(&dir.path("report/summary.json"), &summary)?;
    outputs.push("report/summary.json".into());
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    Manifest::record(dir, "report", &ctx.cfg, &refs, BTreeMap::new(), vec![])?;
    Ok(out)
}

// -------------------------------------------------------------------- select

pub fn select_cmd(
    ctx: &Context,
    instruction: &str,
    model: Option<PathBuf>,
    snapshots: Option<PathBuf>,
) -> Result<(Vec<RankedBase>, StageOutcome), CliError> {
    let z_x = parse(instruction)?;
    let model_path = model.unwrap_or_else(|| ctx.dir.path("model.bin"));
    let snap_dir = snapshots.unwrap_or_else(|| ctx.dir.path("snapshots"));
    if !model_path.exists() {
        return Err(CliError::Missing(format!("model {}", model_path.display())));
    }
    if !snap_dir.is_dir() {
        return Err(CliError::Missing(format!("snapshot directory {}", snap_dir.display())));
    }
    let (model, _) = tasktransfer::transfer::load_model::<f64>(&model_path)?;
    let mut files: Vec<PathBuf> = fs::read_dir(&snap_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Missing(format!("no snapshots in {}", snap_dir.display())));
    }
    let bases: Vec<Instruction> = files
        .iter()
        .map(|f| load_snapshot::<f64>(f).map(|s| s.instruction))
        .collect::<Result<_, _>>()?;
    let ranked = select_best(&model, &z_x, &bases)?;
    let mut out = StageOutcome::default();
    out.lines.push(format!("best base policies for \"{z_x}\":"));
    for (n, r) in ranked.iter().enumerate() {
        out.lines.push(format!(
            "{:>3}. {:<24} wins {}  mean p {:.6}",
            n + 1,
            r.instruction.render(),
            r.wins,
            r.mean_probability
        ));
    }
    Ok((ranked, out))
}
