//! JSON documents for trained models.
//!
//! Matrices are stored row-major with explicit shapes. Floats use the
//! shortest representation that parses back to the same bits; non-finite
//! values are written as the strings `"inf"`, `"-inf"` and `"nan"`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::curriculum::LogCurriculum;
use crate::em::EmModel;
use crate::error::{ImcError, Result};
use crate::experts::{ExpertSet, GaussianExpert, MeanModel};
use crate::gating::GatingNet;
use crate::imc::{ImcModel, IterationRecord};
use crate::nn::{Activation, MlpParams};

pub const FORMAT_VERSION: u32 = 1;

/// Serde adapter for `f64` fields that may hold infinities or NaN.
pub mod float_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
struct F(#[serde(with = "float_repr")] f64);

fn floats(it: impl Iterator<Item = f64>) -> Vec<F> {
    it.map(F).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatrixDoc {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl MatrixDoc {
    fn from(m: &DMatrix<f64>) -> Self {
        MatrixDoc {
            rows: m.nrows(),
            cols: m.ncols(),
            data: floats(m.transpose().iter().copied()),
        }
    }

    fn into_matrix(self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(ImcError::InvalidInput(format!(
                "matrix declares {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_iterator(self.rows, self.cols, self.data.into_iter().map(|f| f.0)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MlpDoc {
    layer_sizes: Vec<usize>,
    activation: Activation,
    n_heads: usize,
    weights: Vec<MatrixDoc>,
    biases: Vec<Vec<F>>,
}

impl MlpDoc {
    fn from(p: &MlpParams) -> Self {
        MlpDoc {
            layer_sizes: p.layer_sizes.clone(),
            activation: p.activation,
            n_heads: p.n_heads,
            weights: p.weights.iter().map(MatrixDoc::from).collect(),
            biases: p.biases.iter().map(|b| floats(b.iter().copied())).collect(),
        }
    }

    fn into_params(self) -> Result<MlpParams> {
        let p = MlpParams {
            layer_sizes: self.layer_sizes,
            weights: self.weights.into_iter().map(MatrixDoc::into_matrix).collect::<Result<_>>()?,
            biases: self
                .biases
                .into_iter()
                .map(|b| DVector::from_iterator(b.len(), b.into_iter().map(|f| f.0)))
                .collect(),
            activation: self.activation,
            n_heads: self.n_heads,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum MeanDoc {
    Linear { weights: MatrixDoc },
    Neural { net: MlpDoc },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum ExpertsDoc {
    Independent {
        #[serde(with = "float_repr")]
        sigma_sq: f64,
        means: Vec<MeanDoc>,
    },
    MultiHead {
        #[serde(with = "float_repr")]
        sigma_sq: f64,
        net: MlpDoc,
    },
}

impl ExpertsDoc {
    fn from(e: &ExpertSet) -> Self {
        match e {
            ExpertSet::Independent(experts) => ExpertsDoc::Independent {
                sigma_sq: e.sigma_sq(),
                means: experts
                    .iter()
                    .map(|x| match &x.mean {
                        MeanModel::Linear(w) => MeanDoc::Linear { weights: MatrixDoc::from(w) },
                        MeanModel::Neural(p) => MeanDoc::Neural { net: MlpDoc::from(p) },
                    })
                    .collect(),
            },
            ExpertSet::MultiHead { net, sigma_sq } => ExpertsDoc::MultiHead {
                sigma_sq: *sigma_sq,
                net: MlpDoc::from(net),
            },
        }
    }

    fn into_experts(self) -> Result<ExpertSet> {
        match self {
            ExpertsDoc::Independent { sigma_sq, means } => Ok(ExpertSet::Independent(
                means
                    .into_iter()
                    .map(|m| {
                        let mean = match m {
                            MeanDoc::Linear { weights } => MeanModel::Linear(weights.into_matrix()?),
                            MeanDoc::Neural { net } => MeanModel::Neural(net.into_params()?),
                        };
                        GaussianExpert::new(mean, sigma_sq)
                    })
                    .collect::<Result<_>>()?,
            )),
            ExpertsDoc::MultiHead { sigma_sq, net } => Ok(ExpertSet::MultiHead {
                net: net.into_params()?,
                sigma_sq,
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GatingDoc {
    net: MlpDoc,
    trained_on: u64,
    #[serde(with = "float_repr")]
    loss_before: f64,
    #[serde(with = "float_repr")]
    loss_after: f64,
}

impl GatingDoc {
    fn from(g: &GatingNet) -> Self {
        GatingDoc {
            net: MlpDoc::from(&g.net),
            trained_on: g.trained_on,
            loss_before: g.loss_before,
            loss_after: g.loss_after,
        }
    }

    fn into_gating(self) -> Result<GatingNet> {
        Ok(GatingNet {
            net: self.net.into_params()?,
            trained_on: self.trained_on,
            loss_before: self.loss_before,
            loss_after: self.loss_after,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordDoc {
    iteration: usize,
    #[serde(with = "float_repr")]
    lower_bound: f64,
    #[serde(with = "float_repr")]
    objective_j: f64,
    #[serde(with = "float_repr")]
    kl_term: f64,
    component_mass: Vec<F>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "kebab-case")]
enum Body {
    Imc {
        log_curriculum: MatrixDoc,
        curriculum_iteration: usize,
        history: Vec<RecordDoc>,
    },
    Em {
        log_gating_table: MatrixDoc,
        history: Vec<F>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDoc {
    format_version: u32,
    obs_dim: usize,
    act_dim: usize,
    n_components: usize,
    config: TrainConfig,
    converged: bool,
    dead_components: Vec<usize>,
    experts: ExpertsDoc,
    gating: Option<GatingDoc>,
    #[serde(flatten)]
    body: Body,
}

/// A trained model of either algorithm.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Imc(ImcModel),
    Em(EmModel),
}

impl SavedModel {
    pub fn experts(&self) -> &ExpertSet {
        match self {
            SavedModel::Imc(m) => &m.experts,
            SavedModel::Em(m) => &m.experts,
        }
    }

    pub fn gating(&self) -> Option<&GatingNet> {
        match self {
            SavedModel::Imc(m) => m.gating.as_ref(),
            SavedModel::Em(m) => m.gating.as_ref(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        match self {
            SavedModel::Imc(m) => &m.config,
            SavedModel::Em(m) => &m.config,
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            SavedModel::Imc(m) => m.converged,
            SavedModel::Em(m) => m.converged,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let experts = self.experts();
        let (body, converged, dead) = match self {
            SavedModel::Imc(m) => (
                Body::Imc {
                    log_curriculum: MatrixDoc::from(&m.log_curriculum.log_weights),
                    curriculum_iteration: m.log_curriculum.iteration,
                    history: m
                        .history
                        .iter()
                        .map(|r| RecordDoc {
                            iteration: r.iteration,
                            lower_bound: r.lower_bound,
                            objective_j: r.objective_j,
                            kl_term: r.kl_term,
                            component_mass: floats(r.component_mass.iter().copied()),
                        })
                        .collect(),
                },
                m.converged,
                m.dead_components.clone(),
            ),
            SavedModel::Em(m) => (
                Body::Em {
                    log_gating_table: MatrixDoc::from(&m.log_gating_table),
                    history: floats(m.history.iter().copied()),
                },
                m.converged,
                m.dead_components.clone(),
            ),
        };
        let doc = ModelDoc {
            format_version: FORMAT_VERSION,
            obs_dim: experts.obs_dim(),
            act_dim: experts.act_dim(),
            n_components: experts.n_components(),
            config: self.config().clone(),
            converged,
            dead_components: dead,
            experts: ExpertsDoc::from(experts),
            gating: self.gating().map(GatingDoc::from),
            body,
        };
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(ImcError::InvalidInput(format!("unsupported model format {}", doc.format_version)));
        }
        doc.config.validate()?;
        let experts = doc.experts.into_experts()?;
        if experts.n_components() != doc.n_components
            || experts.obs_dim() != doc.obs_dim
            || experts.act_dim() != doc.act_dim
        {
            return Err(ImcError::DimensionMismatch("expert shapes disagree with the declared dimensions".into()));
        }
        let gating = doc.gating.map(GatingDoc::into_gating).transpose()?;
        if let Some(g) = &gating {
            if g.n_components() != doc.n_components || g.obs_dim() != doc.obs_dim {
                return Err(ImcError::DimensionMismatch("gating shape disagrees with the experts".into()));
            }
        }
        let check_table = |m: &DMatrix<f64>| -> Result<()> {
            if m.ncols() != doc.n_components {
                return Err(ImcError::DimensionMismatch(format!(
                    "table has {} columns for {} components",
                    m.ncols(),
                    doc.n_components
                )));
            }
            Ok(())
        };
        Ok(match doc.body {
            Body::Imc {
                log_curriculum,
                curriculum_iteration,
                history,
            } => {
                let lw = log_curriculum.into_matrix()?;
                check_table(&lw)?;
                SavedModel::Imc(ImcModel {
                    experts,
                    log_curriculum: LogCurriculum::from_log_weights(lw, curriculum_iteration)?,
                    config: doc.config,
                    history: history
                        .into_iter()
                        .map(|r| IterationRecord {
                            iteration: r.iteration,
                            lower_bound: r.lower_bound,
                            objective_j: r.objective_j,
                            kl_term: r.kl_term,
                            component_mass: r.component_mass.into_iter().map(|f| f.0).collect(),
                        })
                        .collect(),
                    converged: doc.converged,
                    dead_components: doc.dead_components,
                    gating,
                })
            }
            Body::Em { log_gating_table, history } => {
                let t = log_gating_table.into_matrix()?;
                check_table(&t)?;
                SavedModel::Em(EmModel {
                    experts,
                    log_gating_table: t,
                    config: doc.config,
                    history: history.into_iter().map(|f| f.0).collect(),
                    converged: doc.converged,
                    dead_components: doc.dead_components,
                    gating,
                })
            }
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| ImcError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ImcError::io(path, e))?;
        Self::from_json(&text)
    }
}
