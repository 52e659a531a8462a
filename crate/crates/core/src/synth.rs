//! Seeded multimodal datasets and a kinematic obstacle course.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{ImcError, Result};
use crate::rng::{substream, Rng, Stream};

/// `a = amplitude * sin(2 pi o) + offset_b + noise`, with `o ~ U[-1, 1]` and
/// the branch `b` uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchTask {
    pub offsets: Vec<f64>,
    pub noise_sd: f64,
    pub amplitude: f64,
}

impl BranchTask {
    /// `n_branches` offsets evenly spaced over `[-1, 1]` (a single branch sits at 0).
    pub fn new(n_branches: usize, noise_sd: f64) -> Result<Self> {
        Self::with_half_width(n_branches, 1.0, noise_sd)
    }

    /// Offsets evenly spaced over `[-half_width, half_width]`.
    pub fn with_half_width(n_branches: usize, half_width: f64, noise_sd: f64) -> Result<Self> {
        if n_branches == 0 {
            return Err(ImcError::InvalidInput("need at least one branch".into()));
        }
        let offsets = if n_branches == 1 {
            vec![0.0]
        } else {
            let step = 2.0 * half_width / (n_branches - 1) as f64;
            (0..n_branches).map(|b| -half_width + step * b as f64).collect()
        };
        let t = BranchTask {
            offsets,
            noise_sd,
            amplitude: 0.5,
        };
        t.validate()?;
        Ok(t)
    }

    /// Two flat branches `gap` apart, symmetric about zero.
    pub fn two_branch(gap: f64, noise_sd: f64) -> Result<Self> {
        let mut t = Self::with_half_width(2, gap / 2.0, noise_sd)?;
        t.amplitude = 0.0;
        t.validate()?;
        Ok(t)
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.offsets.is_empty() || self.offsets.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ImcError::InvalidInput("branch offsets must be strictly increasing".into()));
        }
        if !(self.noise_sd >= 0.0) || !self.amplitude.is_finite() {
            return Err(ImcError::InvalidInput("noise_sd must be non-negative".into()));
        }
        Ok(())
    }

    pub fn n_branches(&self) -> usize {
        self.offsets.len()
    }

    /// Smallest distance between adjacent branches (`inf` for one branch).
    pub fn gap(&self) -> f64 {
        self.offsets
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Noise-free action of branch `b` at `o`.
    pub fn branch_value(&self, b: usize, o: f64) -> f64 {
        self.amplitude * (2.0 * PI * o).sin() + self.offsets[b]
    }

    /// Index and distance of the closest branch curve to `a` at `o`.
    pub fn nearest_branch(&self, o: f64, a: f64) -> (usize, f64) {
        (0..self.n_branches())
            .map(|b| (b, (a - self.branch_value(b, o)).abs()))
            .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
    }
}

pub fn gen_multibranch(task: &BranchTask, n: usize, seed: u64) -> Result<Dataset> {
    task.validate()?;
    let mut rng = substream(seed, Stream::Generator, 0);
    let noise = Normal::new(0.0, task.noise_sd).map_err(|e| ImcError::InvalidInput(e.to_string()))?;
    let mut obs = DMatrix::zeros(n, 1);
    let mut act = DMatrix::zeros(n, 1);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let o: f64 = rng.random_range(-1.0..=1.0);
        let b = rng.random_range(0..task.n_branches());
        let eps = if task.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        obs[(i, 0)] = o;
        act[(i, 0)] = task.branch_value(b, o) + eps;
        labels.push(b as i64);
    }
    Dataset::new(obs, act)?.with_behaviors(labels, task.n_branches())
}

/// Start at the bottom, reach `y = finish_y`, pass each row of obstacles on
/// the left or right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleCourse {
    pub obstacles: Vec<[f64; 2]>,
    pub obstacle_radius: f64,
    pub starts: Vec<[f64; 2]>,
    pub finish_y: f64,
    pub step_len: f64,
    pub horizon: usize,
    /// Horizontal distance of the demonstrated passages from the obstacle centers.
    pub passage_offset: f64,
}

impl Default for ObstacleCourse {
    fn default() -> Self {
        Self::new(2)
    }
}

impl ObstacleCourse {
    /// `n_rows` obstacles evenly spaced on `x = 0.5` between start and finish.
    pub fn new(n_rows: usize) -> Self {
        ObstacleCourse {
            obstacles: (0..n_rows)
                .map(|i| [0.5, (i + 1) as f64 / (n_rows + 1) as f64])
                .collect(),
            obstacle_radius: 0.12,
            starts: vec![[0.5, 0.0]],
            finish_y: 1.0,
            step_len: 0.08,
            horizon: 60,
            passage_offset: 0.3,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.obstacles.len()
    }

    pub fn n_behaviors(&self) -> usize {
        1 << self.n_rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.obstacles.is_empty() || self.n_rows() > 16 {
            return Err(ImcError::InvalidInput("need between 1 and 16 obstacle rows".into()));
        }
        if self.obstacles.windows(2).any(|w| !(w[1][1] > w[0][1])) {
            return Err(ImcError::InvalidInput("obstacle rows must be ordered bottom to top".into()));
        }
        if !(self.obstacle_radius > 0.0) || !(self.step_len > 0.0) || self.horizon == 0 {
            return Err(ImcError::InvalidInput("radius, step_len and horizon must be positive".into()));
        }
        if !(self.passage_offset > self.obstacle_radius) {
            return Err(ImcError::InvalidInput("passages must clear the obstacles".into()));
        }
        if self.starts.is_empty() {
            return Err(ImcError::InvalidInput("need a start position".into()));
        }
        Ok(())
    }

    /// Whether the segment `p -> q` enters any obstacle.
    pub fn segment_collides(&self, p: [f64; 2], q: [f64; 2]) -> bool {
        self.obstacles
            .iter()
            .any(|&c| segment_point_distance(p, q, c) < self.obstacle_radius)
    }

    /// Waypoints of a noise-free demonstration of `behavior` from `start`,
    /// with `lateral[i]` added to the passage offset at row `i`.
    pub fn waypoints(&self, start: [f64; 2], behavior: usize, lateral: &[f64]) -> Vec<[f64; 2]> {
        let mut pts = vec![start];
        let margin = 0.5 * self.obstacle_radius;
        for (i, c) in self.obstacles.iter().enumerate() {
            let sign = if behavior >> i & 1 == 1 { 1.0 } else { -1.0 };
            let x = c[0] + sign * (self.passage_offset + lateral.get(i).copied().unwrap_or(0.0));
            pts.push([x, c[1] - margin]);
            pts.push([x, c[1] + margin]);
        }
        let last = pts[pts.len() - 1];
        pts.push([last[0], self.finish_y]);
        pts
    }
}

fn segment_point_distance(p: [f64; 2], q: [f64; 2], c: [f64; 2]) -> f64 {
    let d = [q[0] - p[0], q[1] - p[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((c[0] - p[0]) * d[0] + (c[1] - p[1]) * d[1]) / len2).clamp(0.0, 1.0)
    };
    let x = p[0] + t * d[0] - c[0];
    let y = p[1] + t * d[1] - c[1];
    (x * x + y * y).sqrt()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Points spaced `step` apart in arc length along a polyline, ending at its
/// last vertex.
pub fn resample_polyline(pts: &[[f64; 2]], step: f64) -> Vec<[f64; 2]> {
    let mut out = vec![pts[0]];
    let mut carry = 0.0; // arc length travelled since the last emitted point
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let seg = dist(a, b);
        let mut s = step - carry;
        while s <= seg {
            let t = s / seg;
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            s += step;
        }
        carry = seg - (s - step);
    }
    let last = pts[pts.len() - 1];
    if dist(out[out.len() - 1], last) > 1e-12 {
        out.push(last);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<[f64; 2]>,
    pub success: bool,
    pub behavior: Option<usize>,
    /// Step at which the path first entered an obstacle.
    pub collision_step: Option<usize>,
    pub start_id: usize,
}

/// Left/right choice per obstacle row (row 0 is the least significant bit),
/// or `None` when some row was never crossed.
pub fn classify_behavior(states: &[[f64; 2]], course: &ObstacleCourse) -> Option<usize> {
    let mut behavior = 0;
    for (i, c) in course.obstacles.iter().enumerate() {
        let crossing = states.windows(2).find(|w| w[0][1] < c[1] && w[1][1] >= c[1])?;
        let (p, q) = (crossing[0], crossing[1]);
        let t = (c[1] - p[1]) / (q[1] - p[1]);
        let x = p[0] + t * (q[0] - p[0]);
        if x > c[0] {
            behavior |= 1 << i;
        }
    }
    Some(behavior)
}

/// Demonstrations for every behavior from every start, `demos_per_behavior`
/// each. Rows are `(current position, next position)`.
pub fn gen_obstacle_demos(
    course: &ObstacleCourse,
    demos_per_behavior: usize,
    jitter_sd: f64,
    seed: u64,
) -> Result<(Dataset, Vec<Trajectory>)> {
    course.validate()?;
    if !(jitter_sd >= 0.0) {
        return Err(ImcError::InvalidInput("jitter_sd must be non-negative".into()));
    }
    let mut rng = substream(seed, Stream::Jitter, 0);
    let normal = Normal::new(0.0, jitter_sd).map_err(|e| ImcError::InvalidInput(e.to_string()))?;
    let mut demos = Vec::new();
    for (s, &start) in course.starts.iter().enumerate() {
        for beh in 0..course.n_behaviors() {
            for _ in 0..demos_per_behavior {
                let states = jittered_demo(course, start, beh, jitter_sd, &normal, &mut rng);
                demos.push(Trajectory {
                    states,
                    success: true,
                    behavior: Some(beh),
                    collision_step: None,
                    start_id: s,
                });
            }
        }
    }
    let n: usize = demos.iter().map(|d| d.states.len() - 1).sum();
    let mut obs = DMatrix::zeros(n, 2);
    let mut act = DMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    let mut starts = Vec::with_capacity(n);
    let mut r = 0;
    for d in &demos {
        for w in d.states.windows(2) {
            obs[(r, 0)] = w[0][0];
            obs[(r, 1)] = w[0][1];
            act[(r, 0)] = w[1][0];
            act[(r, 1)] = w[1][1];
            labels.push(d.behavior.unwrap_or(0) as i64);
            starts.push(d.start_id as i64);
            r += 1;
        }
    }
    let data = Dataset::new(obs, act)?
        .with_behaviors(labels, course.n_behaviors())?
        .with_start_ids(starts)?;
    Ok((data, demos))
}

fn jittered_demo(
    course: &ObstacleCourse,
    start: [f64; 2],
    behavior: usize,
    jitter_sd: f64,
    normal: &Normal<f64>,
    rng: &mut Rng,
) -> Vec<[f64; 2]> {
    const MAX_TRIES: usize = 1000;
    for _ in 0..MAX_TRIES {
        let lateral: Vec<f64> = (0..course.n_rows())
            .map(|_| if jitter_sd > 0.0 { normal.sample(rng) } else { 0.0 })
            .collect();
        let states = resample_polyline(&course.waypoints(start, behavior, &lateral), course.step_len);
        let clear = states.windows(2).all(|w| !course.segment_collides(w[0], w[1]));
        if clear && classify_behavior(&states, course) == Some(behavior) {
            return states;
        }
    }
    resample_polyline(&course.waypoints(start, behavior, &[]), course.step_len)
}

/// Closed-loop simulation: the policy maps the current position to a target,
/// and the agent moves toward it by at most `step_len`. Rollout `i` starts
/// from `course.starts[i % starts]` and draws from its own random stream.
pub fn rollout<F>(mut policy: F, course: &ObstacleCourse, n_rollouts: usize, horizon: usize, seed: u64) -> Result<Vec<Trajectory>>
where
    F: FnMut(&[f64], &mut Rng) -> Result<Vec<f64>>,
{
    course.validate()?;
    let mut out = Vec::with_capacity(n_rollouts);
    for i in 0..n_rollouts {
        let mut rng = substream(seed, Stream::Rollout, i as u64);
        let start_id = i % course.starts.len();
        let mut p = course.starts[start_id];
        let mut states = vec![p];
        let mut success = false;
        let mut collision_step = None;
        for t in 0..horizon {
            let target = policy(&p, &mut rng)?;
            if target.len() != 2 || !target.iter().all(|v| v.is_finite()) {
                return Err(ImcError::InvalidInput(format!("policy returned {target:?}")));
            }
            let d = [target[0] - p[0], target[1] - p[1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let scale = if len > course.step_len { course.step_len / len } else { 1.0 };
            let next = [p[0] + scale * d[0], p[1] + scale * d[1]];
            states.push(next);
            if course.segment_collides(p, next) {
                collision_step = Some(t);
                break;
            }
            p = next;
            if p[1] >= course.finish_y {
                success = true;
                break;
            }
        }
        out.push(Trajectory {
            behavior: classify_behavior(&states, course),
            states,
            success,
            collision_step,
            start_id,
        });
    }
    Ok(out)
}

/// Columns `rollout_id, step, x, y, success, behavior` (behavior empty for none).
pub fn write_trajectories_csv<W: Write>(trajectories: &[Trajectory], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rollout_id", "step", "x", "y", "success", "behavior"])?;
    for (id, t) in trajectories.iter().enumerate() {
        let beh = t.behavior.map(|b| b.to_string()).unwrap_or_default();
        for (step, s) in t.states.iter().enumerate() {
            w.write_record([
                id.to_string(),
                step.to_string(),
                format!("{:?}", s[0]),
                format!("{:?}", s[1]),
                t.success.to_string(),
                beh.clone(),
            ])?;
        }
    }
    w.flush().map_err(|e| ImcError::io("<trajectories>", e))?;
    Ok(())
}

pub fn save_trajectories(trajectories: &[Trajectory], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| ImcError::io(path, e))?;
    write_trajectories_csv(trajectories, std::io::BufWriter::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_single_branch_lies_on_curve() {
        let task = BranchTask::new(1, 0.0).unwrap();
        let d = gen_multibranch(&task, 50, 3).unwrap();
        for r in 0..50 {
            let o = d.observations[(r, 0)];
            assert_eq!(d.actions[(r, 0)], 0.5 * (2.0 * PI * o).sin());
        }
    }

    #[test]
    fn branch_frequencies_balanced() {
        let task = BranchTask::new(2, 0.1).unwrap();
        let d = gen_multibranch(&task, 10_000, 4).unwrap();
        let ones = d.behavior_labels.unwrap().iter().filter(|&&b| b == 1).count();
        assert!((ones as f64 / 1e4 - 0.5).abs() < 0.02);
    }

    #[test]
    fn offsets_evenly_spaced() {
        let t = BranchTask::new(3, 0.1).unwrap();
        assert_eq!(t.offsets, vec![-1.0, 0.0, 1.0]);
        assert_eq!(t.gap(), 1.0);
        let t = BranchTask::two_branch(1.0, 0.05).unwrap();
        assert_eq!(t.offsets, vec![-0.5, 0.5]);
        assert_eq!(t.amplitude, 0.0);
    }

    #[test]
    fn generator_is_deterministic() {
        let task = BranchTask::new(2, 0.1).unwrap();
        assert_eq!(gen_multibranch(&task, 100, 9).unwrap(), gen_multibranch(&task, 100, 9).unwrap());
        assert_ne!(gen_multibranch(&task, 100, 9).unwrap(), gen_multibranch(&task, 100, 10).unwrap());
    }

    #[test]
    fn single_row_demos_are_mirror_images() {
        let course = ObstacleCourse::new(1);
        let (_, demos) = gen_obstacle_demos(&course, 1, 0.0, 0).unwrap();
        assert_eq!(demos.len(), 2);
        let (l, r) = (&demos[0].states, &demos[1].states);
        assert_eq!(l.len(), r.len());
        for (a, b) in l.iter().zip(r) {
            assert!((a[0] - 0.5 + (b[0] - 0.5)).abs() < 1e-12);
            assert!((a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn demos_have_uniform_behaviors_and_replay() {
        let course = ObstacleCourse::default();
        let (data, demos) = gen_obstacle_demos(&course, 5, 0.03, 1).unwrap();
        assert_eq!(demos.len(), 20);
        let mut counts = [0; 4];
        for d in &demos {
            counts[d.behavior.unwrap()] += 1;
            assert_eq!(classify_behavior(&d.states, &course), d.behavior);
            for w in d.states.windows(2) {
                assert!(dist(w[0], w[1]) <= course.step_len + 1e-9);
            }
            let mut step = 0;
            let replay = rollout(
                |_, _| {
                    step += 1;
                    let s = d.states[step.min(d.states.len() - 1)];
                    Ok(s.to_vec())
                },
                &course,
                1,
                course.horizon,
                0,
            )
            .unwrap();
            assert!(replay[0].success);
            assert_eq!(replay[0].behavior, d.behavior);
        }
        assert_eq!(counts, [5; 4]);
        assert_eq!(data.n_behaviors, Some(4));
    }

    #[test]
    fn standing_still_fails_without_behavior() {
        let course = ObstacleCourse::default();
        let t = rollout(|o, _| Ok(o.to_vec()), &course, 2, 60, 0).unwrap();
        assert!(t.iter().all(|t| !t.success && t.behavior.is_none() && t.collision_step.is_none()));
    }

    #[test]
    fn straight_line_hits_first_obstacle() {
        let course = ObstacleCourse::default();
        let t = rollout(|o, _| Ok(vec![o[0], o[1] + 1.0]), &course, 1, 60, 0).unwrap();
        assert!(!t[0].success);
        // the obstacle's lower edge is at 1/3 - 0.12 = 0.2133; step 2 moves 0.16 -> 0.24
        assert_eq!(t[0].collision_step, Some(2));
    }

    #[test]
    fn behavior_encoding() {
        let course = ObstacleCourse::default();
        let path = |xs: [f64; 2]| vec![[0.5, 0.0], [xs[0], 0.3], [xs[0], 0.4], [xs[1], 0.6], [xs[1], 0.7], [xs[1], 1.0]];
        assert_eq!(classify_behavior(&path([0.2, 0.2]), &course), Some(0));
        assert_eq!(classify_behavior(&path([0.8, 0.2]), &course), Some(1));
        assert_eq!(classify_behavior(&path([0.2, 0.8]), &course), Some(2));
        assert_eq!(classify_behavior(&path([0.2, 0.8])[..3], &course), None);
    }

    #[test]
    fn resampling_keeps_step_length() {
        let pts = resample_polyline(&[[0.0, 0.0], [0.0, 0.25], [0.3, 0.25]], 0.1);
        for w in pts.windows(2) {
            assert!(dist(w[0], w[1]) <= 0.1 + 1e-12);
        }
        assert_eq!(pts[pts.len() - 1], [0.3, 0.25]);
    }
}
