use std::fs;
use std::path::{Path, PathBuf};

use imc_core::em::em_train;
use imc_core::gating::{sample_with, GatingNet};
use imc_core::metrics::{
    behavior_entropy, counts_by_start, expected_conditional_entropy, mode_fit_diagnostic, success_rate,
    test_log_likelihood, BehaviorCounts, MetricsReport,
};
use imc_core::synth::{gen_multibranch, gen_obstacle_demos, rollout, save_trajectories, Trajectory};
use imc_core::{dataset, train, Dataset, ExpertSet, ImcError, Result, SavedModel, TrainConfig};
use rayon::prelude::*;

use crate::experiment::{fnv1a_hex, io_error, Algorithm, ExperimentConfig, Generated, TaskSpec};

pub const DATASET_FILE: &str = "dataset.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MODEL_FILE: &str = "model.json";
pub const HISTORY_FILE: &str = "history.csv";

/// How a training run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainOutcome {
    Converged,
    MaxIters,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

/// Training split of the task.
pub fn make_dataset(task: &TaskSpec) -> Result<Dataset> {
    match task {
        TaskSpec::Multibranch { n, seed, .. } => {
            let bt = task.branch_task()?.expect("multibranch task");
            gen_multibranch(&bt, *n, *seed)
        }
        TaskSpec::Obstacle {
            demos_per_behavior,
            jitter_sd,
            seed,
            ..
        } => {
            let course = task.course().expect("obstacle task");
            Ok(gen_obstacle_demos(&course, *demos_per_behavior, *jitter_sd, *seed)?.0)
        }
    }
}

/// Held-out split drawn from the evaluation seed.
fn make_test_set(task: &TaskSpec, eval_seed: u64) -> Result<Dataset> {
    match task {
        TaskSpec::Multibranch { n_test, .. } => {
            let bt = task.branch_task()?.expect("multibranch task");
            gen_multibranch(&bt, *n_test, eval_seed)
        }
        TaskSpec::Obstacle {
            demos_per_behavior,
            jitter_sd,
            ..
        } => {
            let course = task.course().expect("obstacle task");
            Ok(gen_obstacle_demos(&course, *demos_per_behavior, *jitter_sd, eval_seed)?.0)
        }
    }
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    create_dir(out)?;
    let data = make_dataset(&cfg.task)?;
    let path = out.join(DATASET_FILE);
    let mut bytes = Vec::new();
    data.write_csv(&mut bytes)?;
    fs::write(&path, &bytes).map_err(|e| io_error(&path, e))?;
    let mut manifest = cfg.clone();
    manifest.out_dir = None;
    manifest.generated = Some(Generated {
        dataset: DATASET_FILE.into(),
        rows: data.len(),
        obs_dim: data.obs_dim(),
        act_dim: data.act_dim(),
        checksum: fnv1a_hex(&bytes),
    });
    let mpath = out.join(MANIFEST_FILE);
    fs::write(&mpath, manifest.to_toml()?).map_err(|e| io_error(&mpath, e))?;
    Ok(path)
}

pub fn load_task_dataset(cfg: &ExperimentConfig, path: &Path) -> Result<Dataset> {
    dataset::load_dataset_auto(path, Some(cfg.task.n_behaviors()))
}

/// Trains, distills the gating network and returns the model with its outcome.
pub fn fit(algorithm: Algorithm, data: &Dataset, config: &TrainConfig) -> Result<(SavedModel, TrainOutcome)> {
    let model = match algorithm {
        Algorithm::Imc | Algorithm::ImcSingle => {
            let mut c = config.clone();
            if algorithm == Algorithm::ImcSingle {
                c.n_components = 1;
            }
            let mut m = train(data, &c)?;
            m.distill_gating(data)?;
            SavedModel::Imc(m)
        }
        Algorithm::Em => {
            let mut m = em_train(data, config)?;
            m.distill_gating(data)?;
            SavedModel::Em(m)
        }
    };
    let outcome = if model.converged() {
        TrainOutcome::Converged
    } else {
        TrainOutcome::MaxIters
    };
    Ok((model, outcome))
}

pub fn cmd_train(cfg: &ExperimentConfig, data_path: &Path, out: &Path) -> Result<TrainOutcome> {
    let data = load_task_dataset(cfg, data_path)?;
    let (model, outcome) = fit(cfg.algorithm, &data, &cfg.train)?;
    create_dir(out)?;
    model.save(out.join(MODEL_FILE))?;
    let hist = out.join(HISTORY_FILE);
    match &model {
        SavedModel::Imc(m) => m.save_history(&hist)?,
        SavedModel::Em(m) => m.save_history(&hist)?,
    }
    Ok(outcome)
}

fn gating_of(model: &SavedModel) -> Result<&GatingNet> {
    model
        .gating()
        .ok_or_else(|| ImcError::InvalidInput("model has no gating network; train it first".into()))
}

fn check_dims(experts: &ExpertSet, obs_dim: usize, act_dim: usize) -> Result<()> {
    if experts.obs_dim() != obs_dim || experts.act_dim() != act_dim {
        return Err(ImcError::DimensionMismatch(format!(
            "model maps {} -> {}, task needs {} -> {}",
            experts.obs_dim(),
            experts.act_dim(),
            obs_dim,
            act_dim
        )));
    }
    Ok(())
}

/// Metrics of `model` on the task. Obstacle tasks also return the rollouts.
pub fn evaluate(model: &SavedModel, cfg: &ExperimentConfig) -> Result<(MetricsReport, Option<Vec<Trajectory>>)> {
    let experts = model.experts();
    let g = gating_of(model)?;
    let eval = &cfg.eval;
    let mut report = MetricsReport::default();
    let test = make_test_set(&cfg.task, eval.eval_seed)?;
    check_dims(experts, test.obs_dim(), test.act_dim())?;
    let mut trajectories = None;
    match &cfg.task {
        TaskSpec::Obstacle { .. } => {
            let course = cfg.task.course().expect("obstacle task");
            let horizon = eval.horizon.unwrap_or(course.horizon);
            let trajs = rollout(
                |o, rng| Ok(sample_with(experts, g, o, rng, eval.deterministic)?.1),
                &course,
                eval.n_rollouts,
                horizon,
                eval.eval_seed,
            )?;
            let flags: Vec<bool> = trajs.iter().map(|t| t.success).collect();
            let b = course.n_behaviors();
            let counts = BehaviorCounts::from_trajectories(&trajs, b);
            report.push("success_rate", success_rate(&flags)?);
            report.push("behavior_entropy", behavior_entropy(&counts).unwrap_or(f64::NAN));
            let per_start = counts_by_start(&trajs, b);
            report.push(
                "expected_conditional_entropy",
                expected_conditional_entropy(&per_start).unwrap_or(f64::NAN),
            );
            for (i, c) in counts.counts.iter().enumerate() {
                report.push(&format!("behavior_{i}_count"), *c as f64);
            }
            trajectories = Some(trajs);
        }
        TaskSpec::Multibranch { .. } => {
            let bt = cfg.task.branch_task()?.expect("multibranch task");
            if bt.n_branches() >= 2 {
                let fit = mode_fit_diagnostic(
                    |o, rng| Ok(sample_with(experts, g, &[o], rng, eval.deterministic)?.1[0]),
                    &bt,
                    eval.n_probe,
                    eval.eval_seed,
                )?;
                report.push("mean_nearest_distance", fit.mean_nearest_distance);
                report.push("mode_averaging", if fit.averaging { 1.0 } else { 0.0 });
            }
        }
    }
    report.push("test_log_likelihood", test_log_likelihood(experts, g, &test)?);
    Ok((report, trajectories))
}

pub fn cmd_eval(cfg: &ExperimentConfig, model_path: &Path, out: &Path) -> Result<MetricsReport> {
    let model = SavedModel::load(model_path)?;
    let (report, trajs) = evaluate(&model, cfg)?;
    create_dir(out)?;
    report.save(out.join("metrics.csv"), out.join("metrics.json"))?;
    if let Some(t) = trajs {
        save_trajectories(&t, out.join("trajectories.csv"))?;
    }
    Ok(report)
}

const COMPARE_METRICS: [&str; 5] = [
    "success_rate",
    "behavior_entropy",
    "expected_conditional_entropy",
    "test_log_likelihood",
    "mean_nearest_distance",
];

struct Cell {
    algorithm: Algorithm,
    k: usize,
    seed: u64,
}

struct CellResult {
    status: &'static str,
    iterations: usize,
    report: MetricsReport,
}

fn run_cell(cell: &Cell, data: &Dataset, cfg: &ExperimentConfig) -> Result<CellResult> {
    let mut tc = cfg.train.clone();
    tc.n_components = cell.k;
    tc.seed = cell.seed;
    match fit(cell.algorithm, data, &tc) {
        Ok((model, outcome)) => {
            let iterations = match &model {
                SavedModel::Imc(m) => m.history.len(),
                SavedModel::Em(m) => m.history.len(),
            };
            let (report, _) = evaluate(&model, cfg)?;
            Ok(CellResult {
                status: match outcome {
                    TrainOutcome::Converged => "converged",
                    TrainOutcome::MaxIters => "max-iters",
                },
                iterations,
                report,
            })
        }
        Err(e) if e.is_collapse() => Ok(CellResult {
            status: "collapse",
            iterations: 0,
            report: MetricsReport::default(),
        }),
        Err(e) => Err(e),
    }
}

/// IMC and EM on one dataset for every `(K, seed)` of the grid. Rows are
/// ordered by seed, then K, then algorithm.
pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let data = make_dataset(&cfg.task)?;
    let mut cells = Vec::new();
    for &seed in &cfg.compare.seeds {
        for &k in &cfg.compare.components {
            for algorithm in [Algorithm::Imc, Algorithm::Em] {
                cells.push(Cell { algorithm, k, seed });
            }
        }
    }
    let results: Vec<Result<CellResult>> = cells.par_iter().map(|c| run_cell(c, &data, cfg)).collect();
    create_dir(out)?;
    let path = out.join("compare.csv");
    let file = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header = vec!["algorithm", "n_components", "seed", "status", "iterations"];
    header.extend(COMPARE_METRICS);
    w.write_record(&header)?;
    for (cell, res) in cells.iter().zip(results) {
        let res = res?;
        let mut row = vec![
            cell.algorithm.name().to_string(),
            cell.k.to_string(),
            cell.seed.to_string(),
            res.status.to_string(),
            res.iterations.to_string(),
        ];
        for m in COMPARE_METRICS {
            row.push(format!("{:?}", res.report.get(m).unwrap_or(f64::NAN)));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| io_error(&path, e))?;
    Ok(path)
}
