//! Small fully-connected networks with hand-written backpropagation.
//!
//! Two losses are supported: the per-sample weighted squared error used to
//! fit expert means, and the weighted cross-entropy used to distill the
//! gating network. Both return exact analytic gradients.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ImcError, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Weights and biases of a feed-forward network. Hidden layers use
/// `activation`; the output layer is affine. With `n_heads > 1` the output is
/// split into `n_heads` equal-width heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    /// `weights[l]` has shape `layer_sizes[l + 1] x layer_sizes[l]`.
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub activation: Activation,
    pub n_heads: usize,
}

/// Gradient (or any other per-parameter quantity) with the same layout as
/// [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        MlpGrads {
            weights: p.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: p.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn same_shape(&self, p: &MlpParams) -> bool {
        self.weights.len() == p.weights.len()
            && self.biases.len() == p.biases.len()
            && self.weights.iter().zip(&p.weights).all(|(a, b)| a.shape() == b.shape())
            && self.biases.iter().zip(&p.biases).all(|(a, b)| a.len() == b.len())
    }
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases.
    pub fn new_random(
        layer_sizes: &[usize],
        activation: Activation,
        n_heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut p = Self::zeros(layer_sizes, activation, n_heads)?;
        for w in &mut p.weights {
            let limit = (6.0 / (w.nrows() + w.ncols()) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(p)
    }

    pub fn zeros(layer_sizes: &[usize], activation: Activation, n_heads: usize) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(ImcError::InvalidInput(format!(
                "layer sizes {layer_sizes:?} need an input and output width, all positive"
            )));
        }
        if n_heads == 0 || !layer_sizes[layer_sizes.len() - 1].is_multiple_of(n_heads) {
            return Err(ImcError::InvalidInput(format!(
                "output width {} is not divisible into {n_heads} heads",
                layer_sizes[layer_sizes.len() - 1]
            )));
        }
        let weights = layer_sizes
            .windows(2)
            .map(|w| DMatrix::zeros(w[1], w[0]))
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| DVector::zeros(n)).collect();
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
            n_heads,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 1]
    }

    pub fn head_dim(&self) -> usize {
        self.output_dim() / self.n_heads
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }

    /// Mutable access to the `idx`-th scalar parameter in [`MlpParams::iter`] order.
    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if idx < w.len() {
                return &mut w.as_mut_slice()[idx];
            }
            idx -= w.len();
            if idx < b.len() {
                return &mut b.as_mut_slice()[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes_ok = self.weights.len() + 1 == self.layer_sizes.len()
            && self.biases.len() == self.weights.len()
            && self.weights.iter().enumerate().all(|(l, w)| {
                w.shape() == (self.layer_sizes[l + 1], self.layer_sizes[l])
                    && self.biases[l].len() == self.layer_sizes[l + 1]
            });
        if !shapes_ok {
            return Err(ImcError::DimensionMismatch(
                "network layers do not chain".into(),
            ));
        }
        if self.n_heads == 0 || !self.output_dim().is_multiple_of(self.n_heads) {
            return Err(ImcError::DimensionMismatch("bad head count".into()));
        }
        if !self.is_finite() {
            return Err(ImcError::InvalidInput("non-finite network parameter".into()));
        }
        Ok(())
    }

    fn check_input(&self, inputs: &DMatrix<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(ImcError::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                inputs.ncols()
            )));
        }
        Ok(())
    }

    /// Outputs of the selected head (`B x head_dim`). `head` must be given
    /// exactly when the network has more than one head.
    pub fn forward(&self, inputs: &DMatrix<f64>, head: Option<usize>) -> Result<DMatrix<f64>> {
        let out = self.forward_all(inputs)?;
        match (self.n_heads, head) {
            (1, None) => Ok(out),
            (1, Some(_)) => Err(ImcError::InvalidInput(
                "head index given for a single-head network".into(),
            )),
            (_, None) => Err(ImcError::InvalidInput(
                "multi-head network needs a head index".into(),
            )),
            (h, Some(k)) if k >= h => Err(ImcError::InvalidInput(format!(
                "head {k} out of range for {h} heads"
            ))),
            (_, Some(k)) => {
                let d = self.head_dim();
                Ok(out.columns(k * d, d).into_owned())
            }
        }
    }

    /// Full output (`B x output_dim`), all heads side by side.
    pub fn forward_all(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(inputs)?;
        let mut acts = self.forward_cache(inputs);
        Ok(acts.pop().expect("at least one layer"))
    }

    /// Layer outputs: `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    fn forward_cache(&self, inputs: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(inputs.clone());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = &acts[l] * w.transpose();
            for (j, mut col) in z.column_iter_mut().enumerate() {
                col.add_scalar_mut(b[j]);
            }
            if l < last {
                let act = self.activation;
                z.apply(|v| *v = act.apply(*v));
            }
            acts.push(z);
        }
        acts
    }

    fn backward(&self, acts: &[DMatrix<f64>], d_out: DMatrix<f64>) -> MlpGrads {
        let n_layers = self.weights.len();
        let mut grads = MlpGrads::zeros_like(self);
        let mut dz = d_out;
        for l in (0..n_layers).rev() {
            grads.weights[l] = dz.transpose() * &acts[l];
            grads.biases[l] = DVector::from_iterator(dz.ncols(), dz.column_iter().map(|c| c.sum()));
            if l > 0 {
                let mut da = &dz * &self.weights[l];
                let act = self.activation;
                da.zip_apply(&acts[l], |g, y| *g *= act.grad_from_output(y));
                dz = da;
            }
        }
        grads
    }
}

fn check_weights<'a>(w: impl Iterator<Item = &'a f64>) -> Result<()> {
    for &v in w {
        if !v.is_finite() || v < 0.0 {
            return Err(ImcError::InvalidInput(format!(
                "sample weights must be finite and non-negative, found {v}"
            )));
        }
    }
    Ok(())
}

/// `sum_n w_n * ||mu(o_n) - a_n||^2` for one head, with its gradient.
pub fn weighted_sq_loss_grad(
    params: &MlpParams,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    sample_weights: &DVector<f64>,
    head: Option<usize>,
) -> Result<(f64, MlpGrads)> {
    let head_idx = match (params.n_heads, head) {
        (1, None) => 0,
        (h, Some(k)) if h > 1 && k < h => k,
        _ => {
            return Err(ImcError::InvalidInput(format!(
                "head {head:?} invalid for a {}-head network",
                params.n_heads
            )))
        }
    };
    let mut w = DMatrix::zeros(inputs.nrows(), params.n_heads);
    w.set_column(head_idx, sample_weights);
    weighted_sq_loss_grad_heads(params, inputs, targets, &w)
}

/// Joint squared loss over all heads: `sum_n sum_h W[n, h] * ||mu_h(o_n) - a_n||^2`.
pub fn weighted_sq_loss_grad_heads(
    params: &MlpParams,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    head_weights: &DMatrix<f64>,
) -> Result<(f64, MlpGrads)> {
    params.check_input(inputs)?;
    let n = inputs.nrows();
    let d = params.head_dim();
    if targets.shape() != (n, d) || head_weights.shape() != (n, params.n_heads) {
        return Err(ImcError::DimensionMismatch(format!(
            "targets {:?} / weights {:?} do not match {n} rows, head width {d}, {} heads",
            targets.shape(),
            head_weights.shape(),
            params.n_heads
        )));
    }
    check_weights(head_weights.iter())?;
    let acts = params.forward_cache(inputs);
    let out = &acts[acts.len() - 1];
    let mut d_out = DMatrix::zeros(n, params.output_dim());
    let mut loss = 0.0;
    for h in 0..params.n_heads {
        for r in 0..n {
            let w = head_weights[(r, h)];
            if w == 0.0 {
                continue;
            }
            for c in 0..d {
                let resid = out[(r, h * d + c)] - targets[(r, c)];
                loss += w * resid * resid;
                d_out[(r, h * d + c)] = 2.0 * w * resid;
            }
        }
    }
    Ok((loss, params.backward(&acts, d_out)))
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let lse = crate::numeric::lse_unchecked(row.iter().copied());
        row.add_scalar_mut(-lse);
    }
    out
}

/// `-sum_n sum_z T[n, z] * log softmax(f(o_n))_z` with its gradient. Targets
/// need not be normalized.
pub fn weighted_xent_loss_grad(
    params: &MlpParams,
    inputs: &DMatrix<f64>,
    target_weights: &DMatrix<f64>,
) -> Result<(f64, MlpGrads)> {
    params.check_input(inputs)?;
    if params.n_heads != 1 {
        return Err(ImcError::InvalidInput("cross-entropy needs a single-head network".into()));
    }
    if target_weights.shape() != (inputs.nrows(), params.output_dim()) {
        return Err(ImcError::DimensionMismatch(format!(
            "target weights {:?} vs expected ({}, {})",
            target_weights.shape(),
            inputs.nrows(),
            params.output_dim()
        )));
    }
    check_weights(target_weights.iter())?;
    let acts = params.forward_cache(inputs);
    let log_g = log_softmax_rows(&acts[acts.len() - 1]);
    let mut loss = 0.0;
    let mut d_out = DMatrix::zeros(inputs.nrows(), params.output_dim());
    for r in 0..inputs.nrows() {
        let row_mass: f64 = target_weights.row(r).sum();
        if row_mass == 0.0 {
            continue;
        }
        for z in 0..params.output_dim() {
            let t = target_weights[(r, z)];
            if t > 0.0 {
                loss -= t * log_g[(r, z)];
            }
            d_out[(r, z)] = row_mass * log_g[(r, z)].exp() - t;
        }
    }
    Ok((loss, params.backward(&acts, d_out)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step_count: u64,
    first: MlpGrads,
    second: MlpGrads,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, params: &MlpParams) -> Self {
        OptimizerState {
            kind,
            lr,
            step_count: 0,
            first: MlpGrads::zeros_like(params),
            second: MlpGrads::zeros_like(params),
        }
    }

    pub fn adam(lr: f64, params: &MlpParams) -> Self {
        Self::new(OptimizerKind::adam(), lr, params)
    }

    pub fn sgd(lr: f64, params: &MlpParams) -> Self {
        Self::new(OptimizerKind::Sgd, lr, params)
    }

    /// One descent step on `params` along `grads`.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads) -> Result<()> {
        if !grads.same_shape(params) || !self.first.same_shape(params) {
            return Err(ImcError::DimensionMismatch(
                "gradient/optimizer shapes do not match parameters".into(),
            ));
        }
        self.step_count += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.weights.iter_mut().zip(&grads.weights) {
                    p.zip_apply(g, |p, g| *p -= lr * g);
                }
                for (p, g) in params.biases.iter_mut().zip(&grads.biases) {
                    p.zip_apply(g, |p, g| *p -= lr * g);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step_count as f64;
                let c1 = 1.0 - beta1.powf(t);
                let c2 = 1.0 - beta2.powf(t);
                let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                };
                for l in 0..params.weights.len() {
                    update(
                        params.weights[l].as_mut_slice(),
                        grads.weights[l].as_slice(),
                        self.first.weights[l].as_mut_slice(),
                        self.second.weights[l].as_mut_slice(),
                    );
                    update(
                        params.biases[l].as_mut_slice(),
                        grads.biases[l].as_slice(),
                        self.first.biases[l].as_mut_slice(),
                        self.second.biases[l].as_mut_slice(),
                    );
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn random_matrix(rng: &mut Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
    }

    /// Layer-by-layer re-evaluation with explicit loops.
    fn reference_forward(p: &MlpParams, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), p.output_dim());
        for r in 0..x.nrows() {
            let mut h: Vec<f64> = x.row(r).iter().copied().collect();
            for (l, (w, b)) in p.weights.iter().zip(&p.biases).enumerate() {
                let mut next = vec![0.0; w.nrows()];
                for i in 0..w.nrows() {
                    let mut s = b[i];
                    for j in 0..w.ncols() {
                        s += w[(i, j)] * h[j];
                    }
                    next[i] = if l + 1 < p.weights.len() { p.activation.apply(s) } else { s };
                }
                h = next;
            }
            for (c, v) in h.into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        out
    }

    fn max_rel_err(analytic: &MlpGrads, numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / (a.abs().max(n.abs()).max(1e-6)))
            .fold(0.0, f64::max)
    }

    fn finite_difference(p: &MlpParams, loss: impl Fn(&MlpParams) -> f64) -> Vec<f64> {
        let h = 1e-5;
        let mut q = p.clone();
        (0..p.num_params())
            .map(|i| {
                let orig = *q.param_mut(i);
                *q.param_mut(i) = orig + h;
                let plus = loss(&q);
                *q.param_mut(i) = orig - h;
                let minus = loss(&q);
                *q.param_mut(i) = orig;
                (plus - minus) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = MlpParams::zeros(&[3, 5, 2], Activation::Tanh, 1).unwrap();
        let x = random_matrix(&mut seeded_rng(1), 4, 3, 2.0);
        assert!(p.forward(&x, None).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_layer() {
        let mut p = MlpParams::zeros(&[3, 3], Activation::Tanh, 1).unwrap();
        p.weights[0] = DMatrix::identity(3, 3);
        let x = random_matrix(&mut seeded_rng(2), 5, 3, 2.0);
        assert_eq!(p.forward(&x, None).unwrap(), x);
    }

    #[test]
    fn forward_matches_reference() {
        for (seed, act) in [(3, Activation::Tanh), (4, Activation::Relu)] {
            let mut rng = seeded_rng(seed);
            let p = MlpParams::new_random(&[3, 7, 5, 4], act, 2, &mut rng).unwrap();
            let mut p = p;
            for b in &mut p.biases {
                b.apply(|v| *v = rng.random_range(-0.5..0.5));
            }
            let x = random_matrix(&mut rng, 6, 3, 1.5);
            let got = p.forward_all(&x).unwrap();
            let want = reference_forward(&p, &x);
            assert!((got - want).abs().max() < 1e-12);
        }
    }

    #[test]
    fn head_contract() {
        let p = MlpParams::zeros(&[2, 6], Activation::Tanh, 3).unwrap();
        let x = DMatrix::zeros(1, 2);
        assert!(p.forward(&x, None).is_err());
        assert!(p.forward(&x, Some(3)).is_err());
        assert_eq!(p.forward(&x, Some(2)).unwrap().shape(), (1, 2));
        let single = MlpParams::zeros(&[2, 2], Activation::Tanh, 1).unwrap();
        assert!(single.forward(&x, Some(0)).is_err());
        assert!(single.forward(&DMatrix::zeros(1, 3), None).is_err());
        assert!(MlpParams::zeros(&[2, 5], Activation::Tanh, 2).is_err());
    }

    #[test]
    fn sq_loss_zero_weights_and_optimum() {
        let mut rng = seeded_rng(5);
        let p = MlpParams::new_random(&[2, 4, 1], Activation::Tanh, 1, &mut rng).unwrap();
        let x = random_matrix(&mut rng, 5, 2, 1.0);
        let a = random_matrix(&mut rng, 5, 1, 1.0);
        let (loss, g) = weighted_sq_loss_grad(&p, &x, &a, &DVector::zeros(5), None).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);

        let x1 = x.rows(0, 1).into_owned();
        let a1 = p.forward(&x1, None).unwrap();
        let (loss, g) =
            weighted_sq_loss_grad(&p, &x1, &a1, &DVector::from_element(1, 1.0), None).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn sq_loss_rejects_negative_weight() {
        let p = MlpParams::zeros(&[1, 1], Activation::Tanh, 1).unwrap();
        let err = weighted_sq_loss_grad(
            &p,
            &DMatrix::zeros(2, 1),
            &DMatrix::zeros(2, 1),
            &DVector::from_vec(vec![1.0, -0.1]),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, ImcError::InvalidInput(_)));
    }

    #[test]
    fn sq_loss_gradient_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = seeded_rng(100 + seed);
            let act = if seed % 2 == 0 { Activation::Tanh } else { Activation::Relu };
            let heads = 1 + (seed % 3) as usize;
            let mut p = MlpParams::new_random(&[2, 5, 4, 2 * heads], act, heads, &mut rng).unwrap();
            for b in &mut p.biases {
                b.apply(|v| *v = rng.random_range(-0.3..0.3));
            }
            let x = random_matrix(&mut rng, 7, 2, 1.0);
            let a = random_matrix(&mut rng, 7, 2, 1.0);
            let w = DVector::from_fn(7, |_, _| rng.random_range(0.0..2.0));
            let head = (heads > 1).then_some(seed as usize % heads);
            let (_, g) = weighted_sq_loss_grad(&p, &x, &a, &w, head).unwrap();
            let fd = finite_difference(&p, |q| {
                weighted_sq_loss_grad(q, &x, &a, &w, head).unwrap().0
            });
            let err = max_rel_err(&g, &fd);
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn xent_degenerate_single_output() {
        let mut rng = seeded_rng(6);
        let p = MlpParams::new_random(&[2, 3, 1], Activation::Tanh, 1, &mut rng).unwrap();
        let x = random_matrix(&mut rng, 4, 2, 1.0);
        let t = DMatrix::from_element(4, 1, 0.7);
        let (loss, g) = weighted_xent_loss_grad(&p, &x, &t).unwrap();
        assert!(loss.abs() < 1e-15);
        assert!(g.max_abs() < 1e-15);
    }

    #[test]
    fn xent_uniform_targets_uniform_logits_have_zero_output_gradient() {
        let mut rng = seeded_rng(7);
        let mut p = MlpParams::new_random(&[2, 4, 3], Activation::Tanh, 1, &mut rng).unwrap();
        p.weights[1].fill(0.0);
        p.biases[1].fill(0.0);
        let x = random_matrix(&mut rng, 5, 2, 1.0);
        let t = DMatrix::from_element(5, 3, 1.0);
        let (_, g) = weighted_xent_loss_grad(&p, &x, &t).unwrap();
        assert!(g.weights[1].abs().max() < 1e-14);
        assert!(g.biases[1].abs().max() < 1e-14);
    }

    #[test]
    fn xent_gradient_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = seeded_rng(200 + seed);
            let act = if seed % 2 == 0 { Activation::Tanh } else { Activation::Relu };
            let mut p = MlpParams::new_random(&[3, 6, 4], act, 1, &mut rng).unwrap();
            for b in &mut p.biases {
                b.apply(|v| *v = rng.random_range(-0.3..0.3));
            }
            let x = random_matrix(&mut rng, 8, 3, 1.0);
            let mut t = DMatrix::from_fn(8, 4, |_, _| rng.random_range(0.0..3.0));
            t.row_mut(3).fill(0.0);
            let (_, g) = weighted_xent_loss_grad(&p, &x, &t).unwrap();
            let fd = finite_difference(&p, |q| weighted_xent_loss_grad(q, &x, &t).unwrap().0);
            let err = max_rel_err(&g, &fd);
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn losses_are_deterministic() {
        let mut rng = seeded_rng(8);
        let p = MlpParams::new_random(&[2, 8, 3], Activation::Tanh, 1, &mut rng).unwrap();
        let x = random_matrix(&mut rng, 10, 2, 1.0);
        let t = DMatrix::from_fn(10, 3, |_, _| rng.random_range(0.0..1.0));
        let a = weighted_xent_loss_grad(&p, &x, &t).unwrap();
        let b = weighted_xent_loss_grad(&p, &x, &t).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn multi_head_with_identity_trunk_matches_single_heads() {
        let mut rng = seeded_rng(9);
        let singles: Vec<MlpParams> = (0..3)
            .map(|_| {
                let mut p = MlpParams::new_random(&[2, 2], Activation::Tanh, 1, &mut rng).unwrap();
                p.biases[0].apply(|v| *v = rng.random_range(-1.0..1.0));
                p
            })
            .collect();
        let mut multi = MlpParams::zeros(&[2, 6], Activation::Tanh, 3).unwrap();
        for (k, s) in singles.iter().enumerate() {
            multi.weights[0].rows_mut(2 * k, 2).copy_from(&s.weights[0]);
            multi.biases[0].rows_mut(2 * k, 2).copy_from(&s.biases[0]);
        }
        let x = random_matrix(&mut rng, 5, 2, 1.0);
        for (k, s) in singles.iter().enumerate() {
            assert_eq!(multi.forward(&x, Some(k)).unwrap(), s.forward(&x, None).unwrap());
        }
    }

    #[test]
    fn optimizer_fixed_point_and_sgd_definition() {
        let mut p = MlpParams::zeros(&[1, 1], Activation::Tanh, 1).unwrap();
        p.weights[0][(0, 0)] = 0.3;
        let before = p.clone();
        let mut adam = OptimizerState::adam(0.1, &p);
        let zero = MlpGrads::zeros_like(&p);
        adam.step(&mut p, &zero).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step_count, 1);

        let mut sgd = OptimizerState::sgd(0.1, &p);
        let mut g = MlpGrads::zeros_like(&p);
        g.weights[0][(0, 0)] = 1.0;
        sgd.step(&mut p, &g).unwrap();
        assert!((p.weights[0][(0, 0)] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn optimizer_rejects_shape_mismatch() {
        let mut p = MlpParams::zeros(&[2, 1], Activation::Tanh, 1).unwrap();
        let other = MlpParams::zeros(&[3, 1], Activation::Tanh, 1).unwrap();
        let mut opt = OptimizerState::sgd(0.1, &p);
        assert!(opt.step(&mut p, &MlpGrads::zeros_like(&other)).is_err());
    }

    #[test]
    fn sgd_on_convex_quadratic_decreases_monotonically() {
        let mut rng = seeded_rng(10);
        let x = random_matrix(&mut rng, 20, 3, 1.0);
        let a = random_matrix(&mut rng, 20, 1, 1.0);
        let w = DVector::from_element(20, 1.0);
        let mut p = MlpParams::zeros(&[3, 1], Activation::Tanh, 1).unwrap();
        // curvature of sum_n ||W x_n + b - a_n||^2 is 2 * lambda_max(X1^T X1)
        let x1 = x.clone().insert_column(3, 1.0);
        let curvature = 2.0 * (x1.transpose() * &x1).symmetric_eigenvalues().max();
        let mut opt = OptimizerState::sgd(1.0 / curvature, &p);
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let (loss, g) = weighted_sq_loss_grad(&p, &x, &a, &w, None).unwrap();
            assert!(loss < prev);
            prev = loss;
            opt.step(&mut p, &g).unwrap();
        }
    }
}
