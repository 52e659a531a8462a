//! Browser bindings. Each export trains a small model from scratch and
//! returns a JSON string for the page to draw.

use imc_core::gating::sample_with;
use imc_core::metrics::{behavior_entropy, success_rate, BehaviorCounts};
use imc_core::synth::{gen_multibranch, gen_obstacle_demos, rollout, BranchTask, ObstacleCourse};
use imc_core::{em_train, train, ExpertKind, ExpertSet, TrainConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const GRID: usize = 101;

#[derive(Serialize)]
pub struct BranchFit {
    /// `[o, a]` per sample.
    pub points: Vec<[f64; 2]>,
    /// Component with the largest curriculum weight for each sample.
    pub owner: Vec<usize>,
    /// That weight, scaled so each component's heaviest sample is 1.
    pub weight: Vec<f64>,
    pub grid: Vec<f64>,
    /// Expert means on `grid`, one curve per component.
    pub imc: Vec<Vec<f64>>,
    pub em: Vec<Vec<f64>>,
    pub iterations: usize,
}

fn curves(experts: &ExpertSet, grid: &[f64]) -> Result<Vec<Vec<f64>>, String> {
    (0..experts.n_components())
        .map(|k| {
            grid.iter()
                .map(|&o| experts.mean(k, &[o]).map(|m| m[0]).map_err(|e| e.to_string()))
                .collect()
        })
        .collect()
}

/// Linear experts on the one-dimensional branch task, IMC next to EM.
pub fn branch_fit(n_branches: usize, eta: f64, n_components: usize, seed: u64) -> Result<BranchFit, String> {
    let task = BranchTask::new(n_branches, 0.05).map_err(|e| e.to_string())?;
    let data = gen_multibranch(&task, 300, seed).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        eta,
        n_components,
        expert_kind: ExpertKind::Linear,
        max_iters: 100,
        seed,
        ..TrainConfig::default()
    };
    let imc = train(&data, &config).map_err(|e| e.to_string())?;
    let em = em_train(&data, &config).map_err(|e| e.to_string())?;

    let lw = &imc.log_curriculum.log_weights;
    let col_max: Vec<f64> = lw.column_iter().map(|c| c.max()).collect();
    let mut owner = Vec::with_capacity(data.len());
    let mut weight = Vec::with_capacity(data.len());
    for row in lw.row_iter() {
        let (k, w) = row
            .iter()
            .enumerate()
            .map(|(k, v)| (k, (v - col_max[k]).exp()))
            .fold((0, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
        owner.push(k);
        weight.push(if w.is_finite() { w } else { 0.0 });
    }
    let points = (0..data.len())
        .map(|n| [data.observations[(n, 0)], data.actions[(n, 0)]])
        .collect();
    let grid: Vec<f64> = (0..GRID).map(|i| -1.0 + 2.0 * i as f64 / (GRID - 1) as f64).collect();
    Ok(BranchFit {
        points,
        owner,
        weight,
        imc: curves(&imc.experts, &grid)?,
        em: curves(&em.experts, &grid)?,
        grid,
        iterations: imc.history.len(),
    })
}

#[derive(Serialize)]
pub struct CourseRun {
    pub course: ObstacleCourse,
    pub paths: Vec<Vec<[f64; 2]>>,
    pub success: Vec<bool>,
    pub behavior: Vec<Option<usize>>,
    pub success_rate: f64,
    pub behavior_entropy: Option<f64>,
}

/// Trains a small mixture on the two-row course and rolls it out.
pub fn course_run(eta: f64, n_components: usize, seed: u64, n_rollouts: usize) -> Result<CourseRun, String> {
    let course = ObstacleCourse::new(2);
    let (data, _) = gen_obstacle_demos(&course, 10, 0.02, seed).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        eta,
        n_components,
        expert_kind: ExpertKind::MultiHead { hidden: vec![32, 32] },
        expert_lr: 3e-3,
        max_iters: 40,
        gating_hidden: vec![16],
        gating_epochs: 150,
        seed,
        ..TrainConfig::default()
    };
    let mut model = train(&data, &config).map_err(|e| e.to_string())?;
    model.distill_gating(&data).map_err(|e| e.to_string())?;
    let g = model.gating.as_ref().expect("gating was just fitted");
    let experts = &model.experts;
    let trajs = rollout(
        |o, rng| Ok(sample_with(experts, g, o, rng, true)?.1),
        &course,
        n_rollouts,
        course.horizon,
        seed,
    )
    .map_err(|e| e.to_string())?;
    let success: Vec<bool> = trajs.iter().map(|t| t.success).collect();
    let counts = BehaviorCounts::from_trajectories(&trajs, course.n_behaviors());
    Ok(CourseRun {
        success_rate: success_rate(&success).map_err(|e| e.to_string())?,
        behavior_entropy: behavior_entropy(&counts).ok(),
        behavior: trajs.iter().map(|t| t.behavior).collect(),
        paths: trajs.into_iter().map(|t| t.states).collect(),
        success,
        course,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    let v = r.map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = branchFit)]
pub fn branch_fit_js(n_branches: usize, eta: f64, n_components: usize, seed: u32) -> Result<String, JsValue> {
    to_js(branch_fit(n_branches, eta, n_components, u64::from(seed)))
}

#[wasm_bindgen(js_name = courseRun)]
pub fn course_run_js(eta: f64, n_components: usize, seed: u32, n_rollouts: usize) -> Result<String, JsValue> {
    to_js(course_run(eta, n_components, u64::from(seed), n_rollouts))
}
