//! Expectation maximization for the same mixture of experts.
//!
//! The gating during training is a per-sample table `p(z|o_n)`; the M-step
//! sets it to the posterior exactly and refits each expert with the
//! posterior as sample weights.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::config::TrainConfig;
use crate::curriculum::Responsibilities;
use crate::dataset::Dataset;
use crate::error::{ImcError, Result};
use crate::experts::ExpertSet;
use crate::gating::{fit_gating_targets, GatingNet, GatingOptions};
use crate::nn::OptimizerState;
use crate::numeric::{lse_unchecked, row_log_normalize};

#[derive(Debug, Clone, PartialEq)]
pub struct EmModel {
    pub experts: ExpertSet,
    /// `log p(z|o_n)`, one row per training sample.
    pub log_gating_table: DMatrix<f64>,
    pub config: TrainConfig,
    /// Marginal log-likelihood after each iteration.
    pub history: Vec<f64>,
    pub converged: bool,
    pub dead_components: Vec<usize>,
    pub gating: Option<GatingNet>,
}

impl EmModel {
    pub fn gating_table(&self) -> DMatrix<f64> {
        self.log_gating_table.map(f64::exp)
    }

    /// Distills the final gating table into a network over observations.
    pub fn distill_gating(&mut self, data: &Dataset) -> Result<()> {
        let g = fit_gating_targets(&self.gating_table(), &data.observations, &GatingOptions::from(&self.config))?;
        self.gating = Some(g);
        Ok(())
    }

    pub fn write_history_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "marginal_log_likelihood"])?;
        for (i, ll) in self.history.iter().enumerate() {
            w.write_record([(i + 1).to_string(), format!("{ll:?}")])?;
        }
        w.flush().map_err(|e| ImcError::io("<history>", e))?;
        Ok(())
    }

    pub fn save_history(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| ImcError::io(path, e))?;
        self.write_history_csv(std::io::BufWriter::new(f))
    }
}

/// Uniform `1/K` table.
pub fn uniform_log_gating(n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, k, -(k as f64).ln())
}

fn joint(experts: &ExpertSet, log_gating_table: &DMatrix<f64>, data: &Dataset) -> Result<DMatrix<f64>> {
    let ld = experts.log_density_matrix(data)?;
    if ld.shape() != log_gating_table.shape() {
        return Err(ImcError::DimensionMismatch(format!(
            "gating table {:?} vs densities {:?}",
            log_gating_table.shape(),
            ld.shape()
        )));
    }
    Ok(ld + log_gating_table)
}

/// Posterior `q(z|o_n, a_n) ∝ p_z(a_n|o_n) p(z|o_n)`.
pub fn em_e_step(experts: &ExpertSet, log_gating_table: &DMatrix<f64>, data: &Dataset) -> Result<Responsibilities> {
    let (log_q, _) = row_log_normalize(&joint(experts, log_gating_table, data)?)?;
    Ok(Responsibilities { log_q })
}

/// `sum_n log sum_z p(z|o_n) p_z(a_n|o_n)`.
pub fn marginal_log_likelihood(experts: &ExpertSet, log_gating_table: &DMatrix<f64>, data: &Dataset) -> Result<f64> {
    let j = joint(experts, log_gating_table, data)?;
    Ok(j.row_iter().map(|r| lse_unchecked(r.iter().copied())).sum())
}

/// Refits every live expert with posterior weights and returns the new
/// gating table (the posterior itself) and the dead components.
pub fn em_m_step(
    experts: &mut ExpertSet,
    q: &Responsibilities,
    data: &Dataset,
    optimizers: &mut [Option<OptimizerState>],
    config: &TrainConfig,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let weights = q.probs();
    let frozen: Vec<bool> = weights.column_iter().map(|c| !(c.sum() > 0.0)).collect();
    let dead: Vec<usize> = frozen.iter().enumerate().filter(|(_, f)| **f).map(|(z, _)| z).collect();
    if dead.len() == weights.ncols() {
        return Err(ImcError::TrainingCollapse { iteration: 0 });
    }
    experts.fit_weighted(
        data,
        &weights,
        &frozen,
        optimizers,
        config.expert_steps_per_m,
        config.ridge_lambda,
    )?;
    Ok((q.log_q.clone(), dead))
}

/// Trains from a seeded expert initialization and a uniform gating table.
pub fn em_train(data: &Dataset, config: &TrainConfig) -> Result<EmModel> {
    config.validate()?;
    data.validate()?;
    let experts = ExpertSet::init(config, data.obs_dim(), data.act_dim())?;
    em_train_from(data, config, experts)
}

/// [`em_train`] starting from the given experts.
pub fn em_train_from(data: &Dataset, config: &TrainConfig, mut experts: ExpertSet) -> Result<EmModel> {
    config.validate()?;
    let k = config.n_components;
    if experts.n_components() != k {
        return Err(ImcError::InvalidInput(format!("{} experts for {k} components", experts.n_components())));
    }
    let mut log_gt = uniform_log_gating(data.len(), k);
    let mut optimizers = experts.new_optimizers(config.expert_lr);
    let mut history = Vec::new();
    let mut dead_all: Vec<usize> = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut converged = false;
    for it in 0..config.max_iters {
        let mut step = || -> Result<f64> {
            let q = em_e_step(&experts, &log_gt, data)?;
            let (gt, dead) = em_m_step(&mut experts, &q, data, &mut optimizers, config)?;
            log_gt = gt;
            for z in dead {
                if !dead_all.contains(&z) {
                    dead_all.push(z);
                }
            }
            marginal_log_likelihood(&experts, &log_gt, data)
        };
        let ll = step().map_err(|e| match e {
            ImcError::TrainingCollapse { .. } => ImcError::TrainingCollapse { iteration: it },
            e => e.at_iteration(it),
        })?;
        history.push(ll);
        let stop = (ll - prev).abs() <= config.stop_threshold(prev);
        prev = ll;
        if stop {
            converged = true;
            break;
        }
    }
    Ok(EmModel {
        experts,
        log_gating_table: log_gt,
        config: config.clone(),
        history,
        converged,
        dead_components: dead_all,
        gating: None,
    })
}
