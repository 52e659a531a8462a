//! Parametric gating `g(z|o)` distilled from curricula, plus full-mixture
//! density evaluation and sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::config::TrainConfig;
use crate::curriculum::LogCurriculum;
use crate::error::{ImcError, Result};
use crate::experts::ExpertSet;
use crate::nn::{self, Activation, MlpParams, OptimizerKind, OptimizerState};
use crate::numeric::lse_unchecked;
use crate::rng::{substream, Rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct GatingNet {
    /// Logit network with one output per component.
    pub net: MlpParams,
    /// Fingerprint of the targets the network was fitted to (0 if untrained).
    pub trained_on: u64,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Settings for [`fit_gating_targets`].
#[derive(Debug, Clone, PartialEq)]
pub struct GatingOptions {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl From<&TrainConfig> for GatingOptions {
    fn from(c: &TrainConfig) -> Self {
        GatingOptions {
            hidden: c.gating_hidden.clone(),
            activation: c.activation,
            epochs: c.gating_epochs,
            lr: c.gating_lr,
            optimizer: OptimizerKind::adam(),
            seed: c.seed,
        }
    }
}

fn layer_sizes(obs_dim: usize, hidden: &[usize], k: usize) -> Vec<usize> {
    let mut s = Vec::with_capacity(hidden.len() + 2);
    s.push(obs_dim);
    s.extend_from_slice(hidden);
    s.push(k);
    s
}

/// FNV-1a over the shape and the bit patterns of the entries.
pub fn fingerprint(m: &DMatrix<f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: [u8; 8]| {
        for b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat((m.nrows() as u64).to_le_bytes());
    eat((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        eat(v.to_bits().to_le_bytes());
    }
    h
}

impl GatingNet {
    /// All-zero weights: uniform predictions everywhere.
    pub fn zeros(obs_dim: usize, n_components: usize, hidden: &[usize], activation: Activation) -> Result<Self> {
        Ok(GatingNet {
            net: MlpParams::zeros(&layer_sizes(obs_dim, hidden, n_components), activation, 1)?,
            trained_on: 0,
            loss_before: 0.0,
            loss_after: 0.0,
        })
    }

    pub fn random(obs_dim: usize, n_components: usize, hidden: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        Ok(GatingNet {
            net: MlpParams::new_random(&layer_sizes(obs_dim, hidden, n_components), activation, 1, rng)?,
            trained_on: 0,
            loss_before: 0.0,
            loss_after: 0.0,
        })
    }

    pub fn n_components(&self) -> usize {
        self.net.output_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// `log g(z|o_n)` for each row of `observations`.
    pub fn log_predict_rows(&self, observations: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(nn::log_softmax_rows(&self.net.forward(observations, None)?))
    }

    pub fn predict_rows(&self, observations: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.log_predict_rows(observations)?.map(f64::exp))
    }

    /// Cross-entropy of the network against `targets`.
    pub fn loss(&self, observations: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
        Ok(nn::weighted_xent_loss_grad(&self.net, observations, targets)?.0)
    }
}

/// `g(z|o)`, a probability vector over components.
pub fn gating_predict(g: &GatingNet, o: &[f64]) -> Result<DVector<f64>> {
    let x = DMatrix::from_row_slice(1, o.len(), o);
    Ok(g.predict_rows(&x)?.row(0).transpose())
}

/// Cross-entropy distillation of the curricula: target weights are
/// `exp(log p~ - max)` with the maximum taken over the whole matrix.
pub fn fit_gating(lc: &LogCurriculum, observations: &DMatrix<f64>, config: &TrainConfig) -> Result<GatingNet> {
    let max = lc.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(ImcError::InvalidInput("curriculum has no finite weight".into()));
    }
    let targets = lc.log_weights.map(|v| (v - max).exp());
    let mut g = fit_gating_targets(&targets, observations, &GatingOptions::from(config))?;
    g.trained_on = fingerprint(&lc.log_weights);
    Ok(g)
}

/// Full-batch optimization of `-sum_n sum_z T[n, z] log g(z|o_n)` for the
/// given non-negative targets.
pub fn fit_gating_targets(targets: &DMatrix<f64>, observations: &DMatrix<f64>, opts: &GatingOptions) -> Result<GatingNet> {
    if targets.nrows() != observations.nrows() {
        return Err(ImcError::DimensionMismatch(format!(
            "{} target rows vs {} observations",
            targets.nrows(),
            observations.nrows()
        )));
    }
    let mut rng = substream(opts.seed, Stream::GatingInit, 0);
    let mut g = GatingNet::random(observations.ncols(), targets.ncols(), &opts.hidden, opts.activation, &mut rng)?;
    let mut opt = OptimizerState::new(opts.optimizer, opts.lr, &g.net);
    let mut loss_before = None;
    for step in 0..opts.epochs {
        let (loss, grads) = nn::weighted_xent_loss_grad(&g.net, observations, targets)?;
        if !loss.is_finite() {
            return Err(ImcError::Divergence { step });
        }
        loss_before.get_or_insert(loss);
        opt.step(&mut g.net, &grads)?;
    }
    let loss_after = g.loss(observations, targets)?;
    if !loss_after.is_finite() || !g.net.is_finite() {
        return Err(ImcError::Divergence { step: opts.epochs });
    }
    g.loss_before = loss_before.unwrap_or(loss_after);
    g.loss_after = loss_after;
    g.trained_on = fingerprint(targets);
    Ok(g)
}

fn check_components(experts: &ExpertSet, g: &GatingNet) -> Result<()> {
    if experts.n_components() != g.n_components() {
        return Err(ImcError::DimensionMismatch(format!(
            "{} experts vs {} gating outputs",
            experts.n_components(),
            g.n_components()
        )));
    }
    Ok(())
}

/// `log sum_z g(z|o) p_z(a|o)`.
pub fn mixture_log_density(experts: &ExpertSet, g: &GatingNet, o: &[f64], a: &[f64]) -> Result<f64> {
    check_components(experts, g)?;
    let x = DMatrix::from_row_slice(1, o.len(), o);
    let y = DMatrix::from_row_slice(1, a.len(), a);
    Ok(mixture_log_density_rows(experts, g, &x, &y)?[0])
}

/// Row-wise [`mixture_log_density`].
pub fn mixture_log_density_rows(
    experts: &ExpertSet,
    g: &GatingNet,
    observations: &DMatrix<f64>,
    actions: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_components(experts, g)?;
    let data = crate::dataset::Dataset::new(observations.clone(), actions.clone())?;
    let ld = experts.log_density_matrix(&data)?;
    let lg = g.log_predict_rows(observations)?;
    let joint = ld + lg;
    Ok(DVector::from_iterator(
        joint.nrows(),
        joint.row_iter().map(|r| lse_unchecked(r.iter().copied())),
    ))
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical(p: &DVector<f64>, rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the cumulative sum
    p.iter().rposition(|&pi| pi > 0.0).unwrap_or(p.len() - 1)
}

/// `z ~ g(z|o)`, then `a ~ p_z(a|o)`.
pub fn sample(experts: &ExpertSet, g: &GatingNet, o: &[f64], rng: &mut Rng) -> Result<(usize, Vec<f64>)> {
    sample_with(experts, g, o, rng, false)
}

/// Like [`sample`]; with `deterministic` the chosen expert's mean is returned.
pub fn sample_with(
    experts: &ExpertSet,
    g: &GatingNet,
    o: &[f64],
    rng: &mut Rng,
    deterministic: bool,
) -> Result<(usize, Vec<f64>)> {
    check_components(experts, g)?;
    let p = gating_predict(g, o)?;
    let z = sample_categorical(&p, rng);
    Ok((z, experts.sample_action(z, o, rng, deterministic)?))
}
