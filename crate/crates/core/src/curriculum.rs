//! Log-domain containers for curricula, responsibilities and mixture weights.

use nalgebra::{DMatrix, DVector};

use crate::error::{ImcError, Result};

/// Unnormalized per-sample, per-component curriculum weights, stored as
/// `log p~(o_n, a_n | z)` in an `N x K` matrix. `-inf` means weight zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LogCurriculum {
    pub log_weights: DMatrix<f64>,
    pub iteration: usize,
}

impl LogCurriculum {
    /// All weights one.
    pub fn uniform(n: usize, k: usize) -> Self {
        LogCurriculum {
            log_weights: DMatrix::zeros(n, k),
            iteration: 0,
        }
    }

    pub fn from_log_weights(log_weights: DMatrix<f64>, iteration: usize) -> Result<Self> {
        let lc = LogCurriculum {
            log_weights,
            iteration,
        };
        lc.validate()?;
        Ok(lc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.log_weights.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(ImcError::InvalidInput(
                "log curriculum contains NaN or +inf".into(),
            ));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.log_weights.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.log_weights.ncols()
    }

    /// `log sum_n p~(o_n, a_n | z)` per component.
    pub fn log_column_mass(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_components(),
            self.log_weights
                .column_iter()
                .map(|c| crate::numeric::lse_unchecked(c.iter().copied())),
        )
    }

    /// Per-component expert weights `exp(log p~ - max_n log p~)`. Columns with
    /// no finite entry come back all zero.
    pub fn max_normalized_weights(&self) -> DMatrix<f64> {
        let mut w = self.log_weights.clone();
        for mut col in w.column_iter_mut() {
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                col.fill(0.0);
            } else {
                col.apply(|v| *v = (*v - max).exp());
            }
        }
        w
    }
}

/// Row-stochastic posterior over components, stored as `log q(z | o_n, a_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub log_q: DMatrix<f64>,
}

impl Responsibilities {
    /// Uniform `1/K` responsibilities.
    pub fn uniform(n: usize, k: usize) -> Self {
        Responsibilities {
            log_q: DMatrix::from_element(n, k, -(k as f64).ln()),
        }
    }

    /// From probabilities; rows must sum to one.
    pub fn from_probs(q: &DMatrix<f64>) -> Result<Self> {
        for (n, row) in q.row_iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (row.sum() - 1.0).abs() > 1e-9 {
                return Err(ImcError::InvalidInput(format!(
                    "responsibility row {n} is not a probability vector"
                )));
            }
        }
        Ok(Responsibilities {
            log_q: q.map(f64::ln),
        })
    }

    pub fn probs(&self) -> DMatrix<f64> {
        self.log_q.map(f64::exp)
    }

    pub fn n_samples(&self) -> usize {
        self.log_q.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.log_q.ncols()
    }
}

/// Mixture weights `p(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights {
    pub p_z: DVector<f64>,
}
