//! Curriculum-based training of a mixture of experts.
//!
//! Each iteration tightens the bound (responsibilities from the row-normalized
//! curricula), recomputes every component's unnormalized curriculum
//! `log p~(n|z) = log p_z(a_n|o_n) / eta + log q(z|n)`, and refits every
//! expert by weighted maximum likelihood with those curriculum weights.
//! Training stops once the bound `eta * log sum_{n,z} p~(n|z)` stops moving.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;

use crate::config::{BatchSize, TrainConfig};
use crate::curriculum::{LogCurriculum, MixtureWeights, Responsibilities};
use crate::dataset::Dataset;
use crate::error::{ImcError, Result};
use crate::experts::{fit_linear_weighted, fit_neural_weighted, ExpertSet, GaussianExpert, MeanModel};
use crate::gating::{fit_gating, GatingNet};
use crate::nn::OptimizerState;
use crate::numeric::{lse_unchecked, row_log_normalize, weighted_log};
use crate::rng::{substream, Rng, Stream};

/// A component counts as active in the history when its mixture weight
/// exceeds this.
pub const ACTIVE_MASS: f64 = 1e-3;

const SMOOTHING: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lower_bound: f64,
    pub objective_j: f64,
    pub kl_term: f64,
    pub component_mass: Vec<f64>,
}

impl IterationRecord {
    pub fn active_components(&self) -> usize {
        self.component_mass.iter().filter(|&&m| m > ACTIVE_MASS).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImcModel {
    pub experts: ExpertSet,
    pub log_curriculum: LogCurriculum,
    pub config: TrainConfig,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    /// Components whose curriculum mass vanished; their experts were frozen.
    pub dead_components: Vec<usize>,
    pub gating: Option<GatingNet>,
}

impl ImcModel {
    /// Fits the gating network to the final curricula.
    pub fn distill_gating(&mut self, data: &Dataset) -> Result<()> {
        self.gating = Some(fit_gating(&self.log_curriculum, &data.observations, &self.config)?);
        Ok(())
    }

    pub fn mixture_weights(&self) -> Result<MixtureWeights> {
        mixture_weights(&self.log_curriculum)
    }

    /// Columns `iteration, lower_bound, objective_j, kl_term, active_components`.
    pub fn write_history_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "lower_bound", "objective_j", "kl_term", "active_components"])?;
        for r in &self.history {
            w.write_record([
                r.iteration.to_string(),
                format!("{:?}", r.lower_bound),
                format!("{:?}", r.objective_j),
                format!("{:?}", r.kl_term),
                r.active_components().to_string(),
            ])?;
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

/// `J`, `L(psi, q)` and `eta * E[KL(p(z|o,a) || q(z|o,a))]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub j: f64,
    pub l: f64,
    pub kl_term: f64,
}

/// Responsibilities that make the bound tight: each row of the curriculum,
/// normalized over components.
pub fn e_step(lc: &LogCurriculum) -> Result<Responsibilities> {
    let (log_q, _) = row_log_normalize(&lc.log_weights)?;
    Ok(Responsibilities { log_q })
}

/// `log p~(n|z) = log_density[n, z] / eta + log q(z|n)`.
pub fn curricula_from_log_density(
    log_density: &DMatrix<f64>,
    q: &Responsibilities,
    eta: f64,
    iteration: usize,
) -> Result<LogCurriculum> {
    if !(eta > 0.0) {
        return Err(ImcError::InvalidInput("eta must be positive".into()));
    }
    if log_density.shape() != q.log_q.shape() {
        return Err(ImcError::DimensionMismatch(format!(
            "log density {:?} vs responsibilities {:?}",
            log_density.shape(),
            q.log_q.shape()
        )));
    }
    let log_weights = log_density.zip_map(&q.log_q, |ld, lq| {
        if lq == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            ld / eta + lq
        }
    });
    LogCurriculum::from_log_weights(log_weights, iteration)
}

/// Curriculum update for all components against the current experts.
pub fn m_step_curricula(
    experts: &ExpertSet,
    data: &Dataset,
    q: &Responsibilities,
    eta: f64,
    prev_iteration: usize,
) -> Result<LogCurriculum> {
    let ld = experts.log_density_matrix(data)?;
    curricula_from_log_density(&ld, q, eta, prev_iteration + 1)
}

/// Components with no finite curriculum weight.
pub fn dead_components(lc: &LogCurriculum) -> Vec<usize> {
    lc.log_column_mass()
        .iter()
        .enumerate()
        .filter(|(_, m)| **m == f64::NEG_INFINITY)
        .map(|(z, _)| z)
        .collect()
}

/// Weighted maximum-likelihood refit of every live expert, with per-component
/// weights `p~(n|z)` rescaled so each column's maximum is one. Returns the
/// frozen (dead) components.
pub fn m_step_experts(
    experts: &mut ExpertSet,
    data: &Dataset,
    lc: &LogCurriculum,
    optimizers: &mut [Option<OptimizerState>],
    config: &TrainConfig,
) -> Result<Vec<usize>> {
    let dead = dead_components(lc);
    if dead.len() == lc.n_components() {
        return Err(ImcError::TrainingCollapse { iteration: lc.iteration });
    }
    let mut frozen = vec![false; lc.n_components()];
    for &z in &dead {
        frozen[z] = true;
    }
    let weights = lc.max_normalized_weights();
    experts.fit_weighted(
        data,
        &weights,
        &frozen,
        optimizers,
        config.expert_steps_per_m,
        config.ridge_lambda,
    )?;
    Ok(dead)
}

/// `eta * log sum_{n,z} p~(n|z)`.
pub fn lower_bound(lc: &LogCurriculum, eta: f64) -> Result<f64> {
    let total = lse_unchecked(lc.log_weights.iter().copied());
    if total == f64::NEG_INFINITY {
        return Err(ImcError::InvalidInput("curriculum has no finite weight".into()));
    }
    Ok(eta * total)
}

/// `p(z)` proportional to each component's total curriculum mass.
pub fn mixture_weights(lc: &LogCurriculum) -> Result<MixtureWeights> {
    let col = lc.log_column_mass();
    let total = lse_unchecked(col.iter().copied());
    if total == f64::NEG_INFINITY {
        return Err(ImcError::InvalidInput("curriculum has no finite weight".into()));
    }
    Ok(MixtureWeights {
        p_z: col.map(|m| (m - total).exp()),
    })
}

/// Direct evaluation of `J(psi)`, `L(psi, q)` and the expected-KL gap, where
/// `psi` is given by the curricula `lc` and the expert log densities.
pub fn objective_terms(
    lc: &LogCurriculum,
    log_density: &DMatrix<f64>,
    q: &Responsibilities,
    eta: f64,
) -> Result<ObjectiveTerms> {
    let (n, k) = lc.log_weights.shape();
    if log_density.shape() != (n, k) || q.log_q.shape() != (n, k) {
        return Err(ImcError::DimensionMismatch(
            "curriculum, log density and responsibilities differ in shape".into(),
        ));
    }
    let total = lse_unchecked(lc.log_weights.iter().copied());
    if total == f64::NEG_INFINITY {
        return Err(ImcError::InvalidInput("curriculum has no finite weight".into()));
    }
    // log p(z) p(n|z)
    let log_joint = lc.log_weights.map(|v| v - total);
    let log_pz: Vec<f64> = log_joint
        .column_iter()
        .map(|c| lse_unchecked(c.iter().copied()))
        .collect();
    let log_pn: Vec<f64> = log_joint
        .row_iter()
        .map(|r| lse_unchecked(r.iter().copied()))
        .collect();

    let mut fit = 0.0;
    let mut cond_entropy = 0.0; // sum_z p(z) H(n|z)
    let mut cross_q = 0.0; // sum p(n, z) log q(z|n)
    let mut kl = 0.0;
    for z in 0..k {
        for r in 0..n {
            let lj = log_joint[(r, z)];
            let pj = lj.exp();
            if pj == 0.0 {
                continue;
            }
            fit += pj * log_density[(r, z)];
            cond_entropy -= pj * (lj - log_pz[z]);
            cross_q += weighted_log(pj, q.log_q[(r, z)]);
            kl += pj * ((lj - log_pn[r]) - q.log_q[(r, z)]);
        }
    }
    let h_z: f64 = -log_pz.iter().map(|&l| weighted_log(l.exp(), l)).sum::<f64>();
    let h_n: f64 = -log_pn.iter().map(|&l| weighted_log(l.exp(), l)).sum::<f64>();
    let l = fit + eta * cross_q + eta * cond_entropy + eta * h_z;
    let j = fit + eta * h_n;
    Ok(ObjectiveTerms {
        j,
        l,
        kl_term: eta * kl,
    })
}

/// [`objective_terms`] for a trained model on its training data.
pub fn evaluate_objective(model: &ImcModel, data: &Dataset, q: &Responsibilities) -> Result<ObjectiveTerms> {
    let ld = model.experts.log_density_matrix(data)?;
    objective_terms(&model.log_curriculum, &ld, q, model.config.eta)
}

/// Step-by-step driver for the training loop.
pub struct ImcTrainer<'a> {
    data: &'a Dataset,
    config: TrainConfig,
    experts: ExpertSet,
    lc: LogCurriculum,
    optimizers: Vec<Option<OptimizerState>>,
    history: Vec<IterationRecord>,
    dead: Vec<usize>,
    prev_bound: f64,
    smoothed_bound: Option<f64>,
    batch_rng: Rng,
    converged: bool,
}

impl<'a> ImcTrainer<'a> {
    pub fn new(data: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        data.validate()?;
        let experts = ExpertSet::init(&config, data.obs_dim(), data.act_dim())?;
        Self::with_experts(data, config, experts)
    }

    /// Starts from the given experts instead of a seeded initialization.
    pub fn with_experts(data: &'a Dataset, config: TrainConfig, experts: ExpertSet) -> Result<Self> {
        config.validate()?;
        if experts.n_components() != config.n_components {
            return Err(ImcError::InvalidInput(format!(
                "{} experts for {} components",
                experts.n_components(),
                config.n_components
            )));
        }
        if let BatchSize::Rows(b) = config.batch_size {
            if b > data.len() {
                return Err(ImcError::InvalidInput(format!(
                    "batch size {b} exceeds {} samples",
                    data.len()
                )));
            }
        }
        let optimizers = experts.new_optimizers(config.expert_lr);
        Ok(ImcTrainer {
            data,
            lc: LogCurriculum::uniform(data.len(), config.n_components),
            batch_rng: substream(config.seed, Stream::Batches, 0),
            config,
            experts,
            optimizers,
            history: Vec::new(),
            dead: Vec::new(),
            prev_bound: f64::NEG_INFINITY,
            smoothed_bound: None,
            converged: false,
        })
    }

    pub fn experts(&self) -> &ExpertSet {
        &self.experts
    }

    pub fn log_curriculum(&self) -> &LogCurriculum {
        &self.lc
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Responsibilities the next iteration will start from.
    pub fn responsibilities(&self) -> Result<Responsibilities> {
        e_step(&self.lc)
    }

    /// Snapshot of the current state as a model.
    pub fn model(&self) -> ImcModel {
        ImcModel {
            experts: self.experts.clone(),
            log_curriculum: self.lc.clone(),
            config: self.config.clone(),
            history: self.history.clone(),
            converged: self.converged,
            dead_components: self.dead.clone(),
            gating: None,
        }
    }

    pub fn into_model(self) -> ImcModel {
        ImcModel {
            experts: self.experts,
            log_curriculum: self.lc,
            config: self.config,
            history: self.history,
            converged: self.converged,
            dead_components: self.dead,
            gating: None,
        }
    }

    fn batch_rows(&mut self) -> Option<Vec<usize>> {
        match self.config.batch_size {
            BatchSize::Full => None,
            BatchSize::Rows(b) => {
                let mut idx = index::sample(&mut self.batch_rng, self.data.len(), b).into_vec();
                idx.sort_unstable();
                Some(idx)
            }
        }
    }

    /// One E-step / curriculum M-step / expert M-step cycle. Returns whether
    /// the stopping criterion fired.
    pub fn step(&mut self) -> Result<bool> {
        let iteration = self.lc.iteration;
        let rows = self.batch_rows();
        self.step_inner(rows.as_deref()).map_err(|e| e.at_iteration(iteration))
    }

    fn step_inner(&mut self, rows: Option<&[usize]>) -> Result<bool> {
        let eta = self.config.eta;
        let iteration = self.lc.iteration;
        let batch_data;
        let (data, lc_rows) = match rows {
            None => (self.data, self.lc.clone()),
            Some(idx) => {
                batch_data = self.data.select_rows(idx);
                let sub = LogCurriculum {
                    log_weights: self.lc.log_weights.select_rows(idx),
                    iteration,
                };
                (&batch_data, sub)
            }
        };

        let q = e_step(&lc_rows)?;
        let ld = self.experts.log_density_matrix(data)?;
        let new_lc = curricula_from_log_density(&ld, &q, eta, iteration + 1)?;
        if dead_components(&new_lc).len() == new_lc.n_components() {
            return Err(ImcError::TrainingCollapse { iteration: iteration + 1 });
        }
        let terms = objective_terms(&new_lc, &ld, &q, eta)?;
        let bound = lower_bound(&new_lc, eta)?;
        let mass = mixture_weights(&new_lc)?;

        let dead = m_step_experts(&mut self.experts, data, &new_lc, &mut self.optimizers, &self.config)?;
        for z in dead {
            if !self.dead.contains(&z) {
                self.dead.push(z);
            }
        }

        match rows {
            None => self.lc = new_lc,
            Some(idx) => {
                for (i, &r) in idx.iter().enumerate() {
                    self.lc.log_weights.set_row(r, &new_lc.log_weights.row(i));
                }
                self.lc.iteration = iteration + 1;
            }
        }

        self.history.push(IterationRecord {
            iteration: iteration + 1,
            lower_bound: bound,
            objective_j: terms.j,
            kl_term: terms.kl_term,
            component_mass: mass.p_z.iter().copied().collect(),
        });

        let tracked = match rows {
            None => bound,
            Some(_) => {
                let s = match self.smoothed_bound {
                    None => bound,
                    Some(prev) => SMOOTHING * prev + (1.0 - SMOOTHING) * bound,
                };
                self.smoothed_bound = Some(s);
                s
            }
        };
        let delta = (tracked - self.prev_bound).abs();
        let stop = delta <= self.config.stop_threshold(self.prev_bound);
        self.prev_bound = tracked;
        if stop {
            self.converged = true;
        }
        Ok(stop)
    }

    /// Iterates until convergence or `max_iters`.
    pub fn run(&mut self) -> Result<()> {
        while self.history.len() < self.config.max_iters {
            if self.step()? {
                break;
            }
        }
        Ok(())
    }
}

/// Full training run. Uses mini-batches when `config.batch_size` says so.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<ImcModel> {
    let mut trainer = ImcTrainer::new(data, config.clone())?;
    trainer.run()?;
    Ok(trainer.into_model())
}

/// Mini-batch training; `batch_size` rows are sampled without replacement
/// each iteration and only their curriculum rows are updated.
pub fn train_minibatch(data: &Dataset, config: &TrainConfig, batch_size: usize) -> Result<ImcModel> {
    let mut cfg = config.clone();
    cfg.batch_size = BatchSize::Rows(batch_size);
    train(data, &cfg)
}

/// Closed-form single-expert curriculum `p(n) ∝ p(a_n|o_n)^(1/eta)`.
pub fn single_expert_curriculum(log_density: &DVector<f64>, eta: f64) -> DVector<f64> {
    let scaled = log_density / eta;
    let lse = lse_unchecked(scaled.iter().copied());
    scaled.map(|v| (v - lse).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleExpertFit {
    pub expert: GaussianExpert,
    pub curriculum: DVector<f64>,
    /// Objective `E_p[log p(a|o)] + eta * H(p)` after each iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Alternates the closed-form curriculum and the weighted refit of one expert.
pub fn train_single_expert(data: &Dataset, config: &TrainConfig) -> Result<SingleExpertFit> {
    let mut cfg = config.clone();
    cfg.n_components = 1;
    cfg.validate()?;
    data.validate()?;
    let mut expert = match ExpertSet::init(&cfg, data.obs_dim(), data.act_dim())? {
        ExpertSet::Independent(mut e) => e.remove(0),
        ExpertSet::MultiHead { .. } => {
            return Err(ImcError::InvalidInput(
                "single-expert training needs a linear or single-head expert".into(),
            ))
        }
    };
    let mut opt = match &expert.mean {
        MeanModel::Neural(p) => Some(OptimizerState::adam(cfg.expert_lr, p)),
        MeanModel::Linear(_) => None,
    };
    let mut history = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut curriculum = DVector::from_element(data.len(), 1.0 / data.len() as f64);
    let mut converged = false;
    for it in 0..cfg.max_iters {
        let ld = expert.log_density_rows(&data.observations, &data.actions)?;
        curriculum = single_expert_curriculum(&ld, cfg.eta);
        let max = curriculum.max();
        let w = curriculum.map(|p| p / max);
        match (&mut expert.mean, opt.as_mut()) {
            (MeanModel::Linear(lin), _) => {
                *lin = fit_linear_weighted(&data.observations, &data.actions, &w, cfg.ridge_lambda)
                    .map_err(|e| e.at_iteration(it))?;
            }
            (MeanModel::Neural(p), Some(opt)) => {
                fit_neural_weighted(p, None, &data.observations, &data.actions, &w, cfg.expert_steps_per_m, opt)
                    .map_err(|e| e.at_iteration(it))?;
            }
            (MeanModel::Neural(_), None) => unreachable!("optimizer created for neural experts"),
        }
        let ld_new = expert.log_density_rows(&data.observations, &data.actions)?;
        let objective = single_expert_objective(&curriculum, &ld_new, cfg.eta);
        history.push(objective);
        let stop = (objective - prev).abs() <= cfg.stop_threshold(prev);
        prev = objective;
        if stop {
            converged = true;
            break;
        }
    }
    Ok(SingleExpertFit {
        expert,
        curriculum,
        history,
        converged,
    })
}

/// `sum_n p(n) log p(a_n|o_n) - eta * sum_n p(n) log p(n)`.
pub fn single_expert_objective(curriculum: &DVector<f64>, log_density: &DVector<f64>, eta: f64) -> f64 {
    curriculum
        .iter()
        .zip(log_density.iter())
        .map(|(&p, &ld)| weighted_log(p, ld) - eta * crate::numeric::xlogx(p))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng as _;
    use std::f64::consts::LN_2;

    fn random_instance(rng: &mut Rng, n: usize, k: usize) -> (DMatrix<f64>, Responsibilities) {
        let ld = DMatrix::from_fn(n, k, |_, _| rng.random_range(-4.0..0.0));
        let raw = DMatrix::from_fn(n, k, |_, _| rng.random_range(0.05..1.0));
        let mut q = raw.clone();
        for mut row in q.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        (ld, Responsibilities::from_probs(&q).unwrap())
    }

    #[test]
    fn e_step_uniform_initialization() {
        let q = e_step(&LogCurriculum::uniform(5, 3)).unwrap().probs();
        assert!(q.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn e_step_direct_normalization() {
        let lc = LogCurriculum::from_log_weights(DMatrix::from_row_slice(1, 2, &[0.0, 3f64.ln()]), 0).unwrap();
        let q = e_step(&lc).unwrap().probs();
        assert!((q[(0, 0)] - 0.25).abs() < 1e-15 && (q[(0, 1)] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn e_step_matches_brute_force() {
        let mut rng = seeded_rng(21);
        let lw = DMatrix::from_fn(20, 4, |_, _| rng.random_range(-5.0..5.0));
        let q = e_step(&LogCurriculum::from_log_weights(lw.clone(), 0).unwrap()).unwrap().probs();
        for r in 0..20 {
            let s: f64 = (0..4).map(|z| lw[(r, z)].exp()).sum();
            for z in 0..4 {
                assert!((q[(r, z)] - lw[(r, z)].exp() / s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn e_step_degenerate_row() {
        let lw = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]);
        let err = e_step(&LogCurriculum::from_log_weights(lw, 0).unwrap()).unwrap_err();
        assert!(matches!(err, ImcError::DegenerateRow { row: 1 }));
    }

    #[test]
    fn curriculum_update_examples() {
        let q = Responsibilities::from_probs(&DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        let lc = curricula_from_log_density(&DMatrix::from_element(1, 1, 0.0), &q, 1.0, 0).unwrap();
        assert_eq!(lc.log_weights[(0, 0)], 0.0);
        assert_eq!(lc.iteration, 0);

        let q = Responsibilities::from_probs(&DMatrix::from_row_slice(1, 2, &[0.5, 0.5])).unwrap();
        let lc = curricula_from_log_density(&DMatrix::from_row_slice(1, 2, &[-2.0, -2.0]), &q, 2.0, 0).unwrap();
        assert!((lc.log_weights[(0, 0)] - (-1.0 - LN_2)).abs() < 1e-12);

        // zero responsibility stays exactly zero
        let q = Responsibilities { log_q: DMatrix::from_row_slice(1, 2, &[0.0, f64::NEG_INFINITY]) };
        let lc = curricula_from_log_density(&DMatrix::from_row_slice(1, 2, &[-1.0, -1.0]), &q, 0.5, 0).unwrap();
        assert_eq!(lc.log_weights[(0, 1)], f64::NEG_INFINITY);
    }

    #[test]
    fn eta_one_uniform_q_is_proportional_to_density() {
        let mut rng = seeded_rng(22);
        let ld = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-3.0..0.0));
        let q = Responsibilities::uniform(6, 2);
        let lc = curricula_from_log_density(&ld, &q, 1.0, 0).unwrap();
        for z in 0..2 {
            let col = ld.column(z).into_owned();
            let want = single_expert_curriculum(&col, 1.0);
            let got_lw = lc.log_weights.column(z).into_owned();
            let got = single_expert_curriculum(&got_lw, 1.0);
            assert!((want - got).abs().max() < 1e-12);
        }
    }

    #[test]
    fn lower_bound_examples() {
        assert_eq!(lower_bound(&LogCurriculum::uniform(1, 1), 1.0).unwrap(), 0.0);
        let l = lower_bound(&LogCurriculum::uniform(2, 2), 2.0).unwrap();
        assert!((l - 2.0 * 4f64.ln()).abs() < 1e-12);
        let lw = DMatrix::from_element(2, 2, f64::NEG_INFINITY);
        assert!(lower_bound(&LogCurriculum { log_weights: lw, iteration: 0 }, 1.0).is_err());
    }

    #[test]
    fn mixture_weight_examples() {
        let lw = DMatrix::from_row_slice(2, 2, &[0.0, 3f64.ln(), 0.0, 3f64.ln()]);
        let pz = mixture_weights(&LogCurriculum::from_log_weights(lw, 0).unwrap()).unwrap().p_z;
        assert!((pz[0] - 0.25).abs() < 1e-15 && (pz[1] - 0.75).abs() < 1e-15);
        let pz = mixture_weights(&LogCurriculum::uniform(3, 1)).unwrap().p_z;
        assert_eq!(pz.as_slice(), &[1.0]);
    }

    #[test]
    fn tight_after_e_step_and_kl_positive_otherwise() {
        let mut rng = seeded_rng(23);
        for _ in 0..20 {
            let (ld, q) = random_instance(&mut rng, 8, 3);
            let lc = curricula_from_log_density(&ld, &q, 0.7, 0).unwrap();
            let tight = e_step(&lc).unwrap();
            let t = objective_terms(&lc, &ld, &tight, 0.7).unwrap();
            assert!(t.kl_term.abs() < 1e-12);
            assert!((t.j - t.l).abs() < 1e-9);

            let t2 = objective_terms(&lc, &ld, &Responsibilities::uniform(8, 3), 0.7).unwrap();
            assert!(t2.kl_term > 0.0);
            assert!((t2.j - t.j).abs() < 1e-9, "J does not depend on q");
            assert!((t2.l + t2.kl_term - t2.j).abs() < 1e-9);
        }
    }

    #[test]
    fn lower_bound_equals_direct_l_for_optimal_curricula() {
        let mut rng = seeded_rng(24);
        for _ in 0..20 {
            let (ld, q) = random_instance(&mut rng, 6, 2);
            let lc = curricula_from_log_density(&ld, &q, 0.3, 0).unwrap();
            let t = objective_terms(&lc, &ld, &q, 0.3).unwrap();
            assert!((t.l - lower_bound(&lc, 0.3).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_component_is_eta_invariant_under_uniform_q() {
        let mut rng = seeded_rng(25);
        let ld = DMatrix::from_fn(15, 4, |_, _| rng.random_range(-5.0..0.0));
        let q = Responsibilities::uniform(15, 4);
        let argmax = |eta: f64| -> Vec<usize> {
            let lc = curricula_from_log_density(&ld, &q, eta, 0).unwrap();
            e_step(&lc)
                .unwrap()
                .log_q
                .row_iter()
                .map(|r| r.transpose().argmax().0)
                .collect()
        };
        assert_eq!(argmax(0.1), argmax(1.0));
        assert_eq!(argmax(1.0), argmax(25.0));
    }

    #[test]
    fn single_expert_curriculum_examples() {
        let c = single_expert_curriculum(&DVector::from_element(4, -1.3), 0.5);
        assert!(c.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let c = single_expert_curriculum(&DVector::from_vec(vec![0.2f64.ln(), 0.8f64.ln()]), 1.0);
        assert!((c[0] - 0.2).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
    }
}
