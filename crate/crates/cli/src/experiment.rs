//! Experiment files: a TOML document with `[task]`, `[train]`, `[eval]` and
//! `[compare]` sections.

use std::path::{Path, PathBuf};

use imc_core::synth::{BranchTask, ObstacleCourse};
use imc_core::{ImcError, Result, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Imc,
    Em,
    /// IMC restricted to one component.
    ImcSingle,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Imc => "imc",
            Algorithm::Em => "em",
            Algorithm::ImcSingle => "imc-single",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSpec {
    Multibranch {
        n_branches: usize,
        #[serde(default = "one")]
        half_width: f64,
        #[serde(default = "half")]
        amplitude: f64,
        noise_sd: f64,
        n: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        seed: u64,
    },
    Obstacle {
        #[serde(default = "two")]
        n_rows: usize,
        demos_per_behavior: usize,
        jitter_sd: f64,
        seed: u64,
        #[serde(default)]
        course: Option<ObstacleCourse>,
    },
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn two() -> usize {
    2
}
fn default_n_test() -> usize {
    1000
}

impl TaskSpec {
    pub fn branch_task(&self) -> Result<Option<BranchTask>> {
        match self {
            TaskSpec::Multibranch {
                n_branches,
                half_width,
                amplitude,
                noise_sd,
                ..
            } => Ok(Some(
                BranchTask::with_half_width(*n_branches, *half_width, *noise_sd)?.with_amplitude(*amplitude),
            )),
            TaskSpec::Obstacle { .. } => Ok(None),
        }
    }

    /// The explicit course if given, otherwise the default course with `n_rows` rows.
    pub fn course(&self) -> Option<ObstacleCourse> {
        match self {
            TaskSpec::Obstacle { n_rows, course, .. } => {
                Some(course.clone().unwrap_or_else(|| ObstacleCourse::new(*n_rows)))
            }
            TaskSpec::Multibranch { .. } => None,
        }
    }

    pub fn n_behaviors(&self) -> usize {
        match self {
            TaskSpec::Multibranch { n_branches, .. } => *n_branches,
            TaskSpec::Obstacle { .. } => self.course().map_or(0, |c| c.n_behaviors()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub n_rollouts: usize,
    pub horizon: Option<usize>,
    pub eval_seed: u64,
    /// Execute expert means instead of sampling the Gaussian noise.
    pub deterministic: bool,
    pub n_probe: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            n_rollouts: 400,
            horizon: None,
            eval_seed: 0,
            deterministic: true,
            n_probe: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSpec {
    pub components: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for CompareSpec {
    fn default() -> Self {
        CompareSpec {
            components: vec![1, 2, 4],
            seeds: vec![0],
        }
    }
}

/// What `generate` produced; written into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generated {
    pub dataset: String,
    pub rows: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    /// FNV-1a of the dataset file bytes, hex.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub task: TaskSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub compare: CompareSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated: Option<Generated>,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Imc
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ImcError::InvalidInput(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ImcError::InvalidInput(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.task.branch_task()?;
        if let Some(c) = self.task.course() {
            c.validate()?;
        }
        if self.eval.n_rollouts == 0 || self.eval.n_probe == 0 {
            return Err(ImcError::InvalidInput("n_rollouts and n_probe must be positive".into()));
        }
        if self.compare.components.contains(&0) {
            return Err(ImcError::InvalidInput("compare.components must be positive".into()));
        }
        Ok(())
    }

    /// `--out` wins over `out_dir`; the fallback is `./out`.
    pub fn resolve_out(&self, cli_out: Option<&Path>) -> PathBuf {
        cli_out
            .map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> ImcError {
    ImcError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}
