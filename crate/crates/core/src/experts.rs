//! Conditional Gaussian experts `N(a | mu(o), sigma^2 I)` with a fixed
//! variance and either an affine or an MLP mean.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::config::{ExpertKind, TrainConfig};
use crate::dataset::Dataset;
use crate::error::{ImcError, Result};
use crate::nn::{self, Activation, MlpParams, OptimizerState};
use crate::rng::{substream, Rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub enum MeanModel {
    /// `mu(o) = W [o; 1]`, `W` is `d_a x (d_o + 1)`.
    Linear(DMatrix<f64>),
    Neural(MlpParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianExpert {
    pub mean: MeanModel,
    sigma_sq: f64,
}

/// Loss before and after a gradient fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub loss_before: f64,
    pub loss_after: f64,
}

fn gaussian_log_norm(d_a: usize, sigma_sq: f64) -> f64 {
    -0.5 * d_a as f64 * (2.0 * PI * sigma_sq).ln()
}

fn linear_means(w: &DMatrix<f64>, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d_o = w.ncols() - 1;
    if inputs.ncols() != d_o {
        return Err(ImcError::DimensionMismatch(format!(
            "linear expert expects {d_o} inputs, got {}",
            inputs.ncols()
        )));
    }
    let mut out = inputs * w.columns(0, d_o).transpose();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(w[(j, d_o)]);
    }
    Ok(out)
}

/// Row-wise log density given precomputed means.
fn log_density_rows(means: &DMatrix<f64>, actions: &DMatrix<f64>, sigma_sq: f64) -> DVector<f64> {
    let norm = gaussian_log_norm(actions.ncols(), sigma_sq);
    DVector::from_fn(actions.nrows(), |r, _| {
        let sq: f64 = (0..actions.ncols())
            .map(|c| (actions[(r, c)] - means[(r, c)]).powi(2))
            .sum();
        norm - sq / (2.0 * sigma_sq)
    })
}

impl GaussianExpert {
    pub fn new(mean: MeanModel, sigma_sq: f64) -> Result<Self> {
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(ImcError::InvalidInput(format!("sigma_sq must be positive, got {sigma_sq}")));
        }
        if let MeanModel::Neural(p) = &mean {
            p.validate()?;
            if p.n_heads != 1 {
                return Err(ImcError::InvalidInput(
                    "a standalone expert needs a single-head network".into(),
                ));
            }
        }
        Ok(GaussianExpert { mean, sigma_sq })
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn act_dim(&self) -> usize {
        match &self.mean {
            MeanModel::Linear(w) => w.nrows(),
            MeanModel::Neural(p) => p.output_dim(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match &self.mean {
            MeanModel::Linear(w) => w.ncols() - 1,
            MeanModel::Neural(p) => p.input_dim(),
        }
    }

    /// Means for each row of `inputs`.
    pub fn means(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.mean {
            MeanModel::Linear(w) => linear_means(w, inputs),
            MeanModel::Neural(p) => p.forward(inputs, None),
        }
    }

    pub fn mean(&self, o: &[f64]) -> Result<Vec<f64>> {
        let m = self.means(&DMatrix::from_row_slice(1, o.len(), o))?;
        Ok(m.iter().copied().collect())
    }

    pub fn log_density(&self, o: &[f64], a: &[f64]) -> Result<f64> {
        let mu = self.mean(o)?;
        if a.len() != mu.len() {
            return Err(ImcError::DimensionMismatch(format!(
                "action has {} entries, expert produces {}",
                a.len(),
                mu.len()
            )));
        }
        let sq: f64 = a.iter().zip(&mu).map(|(x, m)| (x - m).powi(2)).sum();
        Ok(gaussian_log_norm(a.len(), self.sigma_sq) - sq / (2.0 * self.sigma_sq))
    }

    /// `log p(a_n | o_n)` for every row of the dataset.
    pub fn log_density_rows(&self, observations: &DMatrix<f64>, actions: &DMatrix<f64>) -> Result<DVector<f64>> {
        let means = self.means(observations)?;
        if means.ncols() != actions.ncols() {
            return Err(ImcError::DimensionMismatch("action width differs from expert output".into()));
        }
        Ok(log_density_rows(&means, actions, self.sigma_sq))
    }

    /// Draws `mu(o) + sigma * eps`. With `deterministic` the mean is returned
    /// and no randomness is consumed.
    pub fn sample_action(&self, o: &[f64], rng: &mut Rng, deterministic: bool) -> Result<Vec<f64>> {
        let mut mu = self.mean(o)?;
        if !deterministic {
            let sd = self.sigma_sq.sqrt();
            for m in &mut mu {
                let eps: f64 = rng.sample(StandardNormal);
                *m += sd * eps;
            }
        }
        Ok(mu)
    }
}

/// Minimizer of `sum_n w_n ||W [o_n; 1] - a_n||^2 + lambda ||W||_F^2`.
pub fn fit_linear_weighted(
    x: &DMatrix<f64>,
    a: &DMatrix<f64>,
    w: &DVector<f64>,
    ridge_lambda: f64,
) -> Result<DMatrix<f64>> {
    let (n, d_o) = x.shape();
    if a.nrows() != n || w.len() != n {
        return Err(ImcError::DimensionMismatch(format!(
            "{n} inputs, {} targets, {} weights",
            a.nrows(),
            w.len()
        )));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(ImcError::InvalidInput("weights must be finite and non-negative".into()));
    }
    if !(w.sum() > 0.0) {
        return Err(ImcError::InvalidInput("weights sum to zero".into()));
    }
    if ridge_lambda.is_nan() || ridge_lambda < 0.0 {
        return Err(ImcError::InvalidInput("ridge_lambda must be non-negative".into()));
    }
    let p = d_o + 1;
    let d_a = a.ncols();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DMatrix::<f64>::zeros(p, d_a);
    let mut row = vec![1.0; p];
    for r in 0..n {
        let wr = w[r];
        if wr == 0.0 {
            continue;
        }
        for j in 0..d_o {
            row[j] = x[(r, j)];
        }
        for i in 0..p {
            let wi = wr * row[i];
            for j in 0..p {
                gram[(i, j)] += wi * row[j];
            }
            for c in 0..d_a {
                rhs[(i, c)] += wi * a[(r, c)];
            }
        }
    }
    for i in 0..p {
        gram[(i, i)] += ridge_lambda;
    }
    let chol = gram.clone().cholesky().ok_or(ImcError::RankDeficient)?;
    if ridge_lambda == 0.0 {
        let l = chol.l_dirty();
        let diag: Vec<f64> = (0..p).map(|i| l[(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > max * 1e-7) {
            return Err(ImcError::RankDeficient);
        }
    }
    Ok(chol.solve(&rhs).transpose())
}

/// Runs `steps` optimizer steps on the weighted squared error of one expert
/// mean (or one head of a shared network). Weights are used as given.
pub fn fit_neural_weighted(
    net: &mut MlpParams,
    head: Option<usize>,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    w: &DVector<f64>,
    steps: usize,
    opt: &mut OptimizerState,
) -> Result<FitReport> {
    if !(w.sum() > 0.0) {
        return Err(ImcError::InvalidInput("weights sum to zero".into()));
    }
    let mut loss_before = None;
    for step in 0..steps {
        let (loss, grads) = nn::weighted_sq_loss_grad(net, inputs, targets, w, head)?;
        if !loss.is_finite() {
            return Err(ImcError::Divergence { step });
        }
        loss_before.get_or_insert(loss);
        opt.step(net, &grads)?;
    }
    let (loss_after, _) = nn::weighted_sq_loss_grad(net, inputs, targets, w, head)?;
    if !loss_after.is_finite() {
        return Err(ImcError::Divergence { step: steps });
    }
    Ok(FitReport {
        loss_before: loss_before.unwrap_or(loss_after),
        loss_after,
    })
}

/// The `K` component experts of a mixture.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpertSet {
    /// Separate parameters per component.
    Independent(Vec<GaussianExpert>),
    /// One network whose output holds a `d_a`-wide head per component.
    MultiHead { net: MlpParams, sigma_sq: f64 },
}

impl ExpertSet {
    /// Seeded initialization. Each component draws from its own stream.
    pub fn init(config: &TrainConfig, obs_dim: usize, act_dim: usize) -> Result<Self> {
        let k = config.n_components;
        let seed = config.seed;
        match &config.expert_kind {
            ExpertKind::Linear => {
                let experts = (0..k)
                    .map(|z| {
                        let mut rng = substream(seed, Stream::ExpertInit, z as u64);
                        let noise = config.init_noise;
                        let w = DMatrix::from_fn(act_dim, obs_dim + 1, |_, _| {
                            if noise > 0.0 {
                                rng.random_range(-noise..noise)
                            } else {
                                0.0
                            }
                        });
                        GaussianExpert::new(MeanModel::Linear(w), config.sigma_sq)
                    })
                    .collect::<Result<_>>()?;
                Ok(ExpertSet::Independent(experts))
            }
            ExpertKind::SingleHead { hidden } => {
                let sizes = layer_sizes(obs_dim, hidden, act_dim);
                let experts = (0..k)
                    .map(|z| {
                        let mut rng = substream(seed, Stream::ExpertInit, z as u64);
                        let p = MlpParams::new_random(&sizes, config.activation, 1, &mut rng)?;
                        GaussianExpert::new(MeanModel::Neural(p), config.sigma_sq)
                    })
                    .collect::<Result<_>>()?;
                Ok(ExpertSet::Independent(experts))
            }
            ExpertKind::MultiHead { hidden } => {
                let sizes = layer_sizes(obs_dim, hidden, k * act_dim);
                let mut rng = substream(seed, Stream::ExpertInit, 0);
                let net = MlpParams::new_random(&sizes, config.activation, k, &mut rng)?;
                Ok(ExpertSet::MultiHead {
                    net,
                    sigma_sq: config.sigma_sq,
                })
            }
        }
    }

    pub fn n_components(&self) -> usize {
        match self {
            ExpertSet::Independent(e) => e.len(),
            ExpertSet::MultiHead { net, .. } => net.n_heads,
        }
    }

    pub fn sigma_sq(&self) -> f64 {
        match self {
            ExpertSet::Independent(e) => e[0].sigma_sq,
            ExpertSet::MultiHead { sigma_sq, .. } => *sigma_sq,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            ExpertSet::Independent(e) => e[0].obs_dim(),
            ExpertSet::MultiHead { net, .. } => net.input_dim(),
        }
    }

    pub fn act_dim(&self) -> usize {
        match self {
            ExpertSet::Independent(e) => e[0].act_dim(),
            ExpertSet::MultiHead { net, .. } => net.head_dim(),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, ExpertSet::Independent(e) if e.iter().all(|x| matches!(x.mean, MeanModel::Linear(_))))
    }

    /// Means of component `k` for each input row.
    pub fn means(&self, k: usize, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            ExpertSet::Independent(e) => e
                .get(k)
                .ok_or_else(|| ImcError::InvalidInput(format!("component {k} out of range")))?
                .means(inputs),
            // a one-component set is a plain single-head network
            ExpertSet::MultiHead { net, .. } if net.n_heads == 1 => {
                if k != 0 {
                    return Err(ImcError::InvalidInput(format!("component {k} out of range")));
                }
                net.forward(inputs, None)
            }
            ExpertSet::MultiHead { net, .. } => net.forward(inputs, Some(k)),
        }
    }

    pub fn mean(&self, k: usize, o: &[f64]) -> Result<Vec<f64>> {
        let m = self.means(k, &DMatrix::from_row_slice(1, o.len(), o))?;
        Ok(m.iter().copied().collect())
    }

    /// `N x K` matrix of `log p_k(a_n | o_n)`.
    pub fn log_density_matrix(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let k = self.n_components();
        let mut out = DMatrix::zeros(data.len(), k);
        match self {
            ExpertSet::Independent(experts) => {
                for (z, e) in experts.iter().enumerate() {
                    out.set_column(z, &e.log_density_rows(&data.observations, &data.actions)?);
                }
            }
            ExpertSet::MultiHead { net, sigma_sq } => {
                let all = net.forward_all(&data.observations)?;
                let d = net.head_dim();
                if d != data.act_dim() {
                    return Err(ImcError::DimensionMismatch("head width differs from action width".into()));
                }
                for z in 0..k {
                    let means = all.columns(z * d, d).into_owned();
                    out.set_column(z, &log_density_rows(&means, &data.actions, *sigma_sq));
                }
            }
        }
        Ok(out)
    }

    pub fn sample_action(&self, k: usize, o: &[f64], rng: &mut Rng, deterministic: bool) -> Result<Vec<f64>> {
        let mut mu = self.mean(k, o)?;
        if !deterministic {
            let sd = self.sigma_sq().sqrt();
            for m in &mut mu {
                let eps: f64 = rng.sample(StandardNormal);
                *m += sd * eps;
            }
        }
        Ok(mu)
    }

    /// Fresh optimizer state per trainable parameter set (empty for linear experts).
    pub fn new_optimizers(&self, lr: f64) -> Vec<Option<OptimizerState>> {
        match self {
            ExpertSet::Independent(e) => e
                .iter()
                .map(|x| match &x.mean {
                    MeanModel::Neural(p) => Some(OptimizerState::adam(lr, p)),
                    MeanModel::Linear(_) => None,
                })
                .collect(),
            ExpertSet::MultiHead { net, .. } => vec![Some(OptimizerState::adam(lr, net))],
        }
    }

    /// Weighted M-step for every component. `weights` is `N x K`; columns
    /// flagged in `frozen` are left untouched.
    pub fn fit_weighted(
        &mut self,
        data: &Dataset,
        weights: &DMatrix<f64>,
        frozen: &[bool],
        optimizers: &mut [Option<OptimizerState>],
        steps: usize,
        ridge_lambda: f64,
    ) -> Result<()> {
        match self {
            ExpertSet::Independent(experts) => {
                let fit_one = |(z, (e, opt)): (usize, (&mut GaussianExpert, &mut Option<OptimizerState>))| -> Result<()> {
                    if frozen[z] {
                        return Ok(());
                    }
                    let w = weights.column(z).into_owned();
                    match (&mut e.mean, opt) {
                        (MeanModel::Linear(lin), _) => {
                            *lin = fit_linear_weighted(&data.observations, &data.actions, &w, ridge_lambda)?;
                        }
                        (MeanModel::Neural(p), Some(opt)) => {
                            fit_neural_weighted(p, None, &data.observations, &data.actions, &w, steps, opt)?;
                        }
                        (MeanModel::Neural(_), None) => {
                            return Err(ImcError::InvalidInput("missing optimizer for neural expert".into()))
                        }
                    }
                    Ok(())
                };
                #[cfg(feature = "parallel")]
                {
                    use rayon::prelude::*;
                    experts
                        .par_iter_mut()
                        .zip(optimizers.par_iter_mut())
                        .enumerate()
                        .try_for_each(fit_one)
                }
                #[cfg(not(feature = "parallel"))]
                {
                    experts.iter_mut().zip(optimizers.iter_mut()).enumerate().try_for_each(fit_one)
                }
            }
            ExpertSet::MultiHead { net, .. } => {
                let mut w = weights.clone();
                for (z, &f) in frozen.iter().enumerate() {
                    if f {
                        w.column_mut(z).fill(0.0);
                    }
                }
                let opt = optimizers
                    .get_mut(0)
                    .and_then(Option::as_mut)
                    .ok_or_else(|| ImcError::InvalidInput("missing optimizer for shared network".into()))?;
                for step in 0..steps {
                    let (loss, grads) = nn::weighted_sq_loss_grad_heads(net, &data.observations, &data.actions, &w)?;
                    if !loss.is_finite() {
                        return Err(ImcError::Divergence { step });
                    }
                    opt.step(net, &grads)?;
                }
                Ok(())
            }
        }
    }
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = Vec::with_capacity(hidden.len() + 2);
    s.push(input);
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

/// Default activation for expert networks.
pub const DEFAULT_ACTIVATION: Activation = Activation::Tanh;
