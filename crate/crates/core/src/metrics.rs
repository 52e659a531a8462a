//! Evaluation metrics: normalized behavior entropy, success rate, a
//! mode-averaging diagnostic and held-out log-likelihood.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;

use crate::dataset::Dataset;
use crate::error::{ImcError, Result};
use crate::experts::ExpertSet;
use crate::gating::{mixture_log_density_rows, GatingNet};
use crate::rng::{substream, Rng, Stream};
use crate::synth::{BranchTask, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorCounts {
    pub counts: Vec<u64>,
}

impl BehaviorCounts {
    pub fn new(counts: Vec<u64>) -> Self {
        BehaviorCounts { counts }
    }

    /// Behaviors of the successful trajectories; others are skipped.
    pub fn from_trajectories<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>, n_behaviors: usize) -> Self {
        let mut counts = vec![0; n_behaviors];
        for t in trajectories {
            if let (true, Some(b)) = (t.success, t.behavior) {
                if b < n_behaviors {
                    counts[b] += 1;
                }
            }
        }
        BehaviorCounts { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// `-sum_b p(b) log_B p(b)` with `B = counts.len()`.
pub fn behavior_entropy(c: &BehaviorCounts) -> Result<f64> {
    let b = c.counts.len();
    if b < 2 {
        return Err(ImcError::InvalidInput("entropy needs at least two behaviors".into()));
    }
    let total = c.total();
    if total == 0 {
        return Err(ImcError::InvalidInput("behavior counts are all zero".into()));
    }
    // summing in sorted order makes the result exactly permutation invariant
    let mut counts: Vec<u64> = c.counts.iter().copied().filter(|&k| k > 0).collect();
    counts.sort_unstable();
    let h: f64 = counts
        .iter()
        .map(|&k| {
            let p = k as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    Ok((h / (b as f64).ln()).clamp(0.0, 1.0))
}

/// Mean of the per-start entropies.
pub fn expected_conditional_entropy(per_start: &[BehaviorCounts]) -> Result<f64> {
    if per_start.is_empty() {
        return Err(ImcError::InvalidInput("no start groups".into()));
    }
    let mut sum = 0.0;
    for c in per_start {
        sum += behavior_entropy(c)?;
    }
    Ok(sum / per_start.len() as f64)
}

/// Groups successful trajectories by start before counting behaviors.
pub fn counts_by_start(trajectories: &[Trajectory], n_behaviors: usize) -> Vec<BehaviorCounts> {
    let mut groups: BTreeMap<usize, Vec<&Trajectory>> = BTreeMap::new();
    for t in trajectories {
        groups.entry(t.start_id).or_default().push(t);
    }
    groups
        .into_values()
        .map(|g| BehaviorCounts::from_trajectories(g, n_behaviors))
        .collect()
}

pub fn success_rate(flags: &[bool]) -> Result<f64> {
    if flags.is_empty() {
        return Err(ImcError::InvalidInput("no rollouts".into()));
    }
    Ok(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeFit {
    /// Mean distance to branch `b` over the samples whose nearest branch is `b`
    /// (`NaN` when no sample picked it).
    pub per_branch_residual: Vec<f64>,
    /// Share of samples nearest to each branch.
    pub branch_share: Vec<f64>,
    pub mean_nearest_distance: f64,
    pub averaging: bool,
}

/// Probes `sampler` at `n_probe` observations drawn uniformly from `[-1, 1]`
/// and measures how far the returned actions are from the branch curves.
pub fn mode_fit_diagnostic<F>(mut sampler: F, task: &BranchTask, n_probe: usize, seed: u64) -> Result<ModeFit>
where
    F: FnMut(f64, &mut Rng) -> Result<f64>,
{
    if task.n_branches() < 2 {
        return Err(ImcError::InvalidInput("mode diagnostic needs two branches".into()));
    }
    if n_probe == 0 {
        return Err(ImcError::InvalidInput("n_probe must be positive".into()));
    }
    let mut rng = substream(seed, Stream::Rollout, u64::from(u32::MAX));
    let b = task.n_branches();
    let mut sum = vec![0.0; b];
    let mut count = vec![0usize; b];
    let mut total = 0.0;
    for _ in 0..n_probe {
        let o: f64 = rng.random_range(-1.0..=1.0);
        let a = sampler(o, &mut rng)?;
        let (nearest, d) = task.nearest_branch(o, a);
        sum[nearest] += d;
        count[nearest] += 1;
        total += d;
    }
    let mean = total / n_probe as f64;
    Ok(ModeFit {
        per_branch_residual: sum.iter().zip(&count).map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 }).collect(),
        branch_share: count.iter().map(|&c| c as f64 / n_probe as f64).collect(),
        mean_nearest_distance: mean,
        averaging: mean > 0.25 * task.gap(),
    })
}

/// Mean mixture log-density over the rows of `data`.
pub fn test_log_likelihood(experts: &ExpertSet, gating: &GatingNet, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(ImcError::InvalidInput("empty dataset".into()));
    }
    let ll = mixture_log_density_rows(experts, gating, &data.observations, &data.actions)?;
    Ok(ll.mean())
}

/// Ordered `metric -> value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub entries: Vec<(String, f64)>,
}

impl MetricsReport {
    pub fn push(&mut self, name: &str, value: f64) {
        self.entries.push((name.to_string(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["metric", "value"])?;
        for (k, v) in &self.entries {
            w.write_record([k.as_str(), &format!("{v:?}")])?;
        }
        w.flush().map_err(|e| ImcError::io("<report>", e))?;
        Ok(())
    }

    /// A flat JSON object; non-finite values become `null`.
    pub fn to_json(&self) -> Result<String> {
        let mut map = serde_json::Map::new();
        for (k, v) in &self.entries {
            let val = serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, serde_json::Value::Number);
            map.insert(k.clone(), val);
        }
        Ok(serde_json::to_string_pretty(&serde_json::Value::Object(map))?)
    }

    pub fn save(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        let (c, j) = (csv_path.as_ref(), json_path.as_ref());
        let f = std::fs::File::create(c).map_err(|e| ImcError::io(c, e))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        std::fs::write(j, self.to_json()? + "\n").map_err(|e| ImcError::io(j, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_examples() {
        assert_eq!(behavior_entropy(&BehaviorCounts::new(vec![3, 3, 3, 3])).unwrap(), 1.0);
        assert_eq!(behavior_entropy(&BehaviorCounts::new(vec![0, 7, 0, 0])).unwrap(), 0.0);
        let h = behavior_entropy(&BehaviorCounts::new(vec![2, 2, 0, 0])).unwrap();
        assert!((h - 0.5).abs() < 1e-15);
        assert!(behavior_entropy(&BehaviorCounts::new(vec![0, 0])).is_err());
    }

    #[test]
    fn entropy_is_permutation_invariant_and_maximal_at_uniform() {
        let a = behavior_entropy(&BehaviorCounts::new(vec![5, 1, 3, 0])).unwrap();
        let b = behavior_entropy(&BehaviorCounts::new(vec![0, 3, 5, 1])).unwrap();
        assert_eq!(a, b);
        assert!(a < 1.0);
    }

    #[test]
    fn conditional_entropy_examples() {
        let det = vec![BehaviorCounts::new(vec![4, 0]), BehaviorCounts::new(vec![0, 4])];
        assert_eq!(expected_conditional_entropy(&det).unwrap(), 0.0);
        let uni = vec![BehaviorCounts::new(vec![2, 2]), BehaviorCounts::new(vec![5, 5])];
        assert_eq!(expected_conditional_entropy(&uni).unwrap(), 1.0);
        let mixed = vec![BehaviorCounts::new(vec![4, 0]), BehaviorCounts::new(vec![1, 1])];
        assert_eq!(expected_conditional_entropy(&mixed).unwrap(), 0.5);
        assert!(expected_conditional_entropy(&[]).is_err());
    }

    #[test]
    fn success_rate_examples() {
        assert_eq!(success_rate(&[true, true]).unwrap(), 1.0);
        assert_eq!(success_rate(&[false, false]).unwrap(), 0.0);
        assert_eq!(success_rate(&[true, false, true, true]).unwrap(), 0.75);
        assert!(success_rate(&[]).is_err());
    }

    #[test]
    fn diagnostic_on_constructed_samplers() {
        let task = BranchTask::new(2, 0.0).unwrap();
        let on_mode = mode_fit_diagnostic(|o, _| Ok(task.branch_value(0, o)), &task, 200, 1).unwrap();
        assert!(on_mode.mean_nearest_distance < 1e-12 && !on_mode.averaging);
        let mid = mode_fit_diagnostic(
            |o, _| Ok(0.5 * (task.branch_value(0, o) + task.branch_value(1, o))),
            &task,
            200,
            1,
        )
        .unwrap();
        assert!((mid.mean_nearest_distance - task.gap() / 2.0).abs() < 1e-12);
        assert!(mid.averaging);
    }

    #[test]
    fn report_formats() {
        let mut r = MetricsReport::default();
        r.push("success_rate", 0.75);
        r.push("test_log_likelihood", f64::NAN);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "metric,value\nsuccess_rate,0.75\ntest_log_likelihood,NaN\n");
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["success_rate"], 0.75);
        assert!(v["test_log_likelihood"].is_null());
    }
}
