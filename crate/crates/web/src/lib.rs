use serde_json::json;
use smallworld::coalesce::{count_law, kingman_row, CoalescenceExperiment, ExperimentPlan, StartSet};
use smallworld::green::solve_bigworld_green;
use smallworld::stats::{ks_distance, limit_law_meeting, total_variation, EmpiricalDistribution, MeetingStart};
use smallworld::topology::TorusSpec;
use smallworld::walk::{
    GraphMode, PassageKind, StartSpec, TimeModel, WalkExperiment, WalkKernel, DEFAULT_HORIZON_FACTOR,
};
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn green_even(beta: f64) -> Result<f64, JsValue> {
    Ok(solve_bigworld_green(1, beta).map_err(err)?.g_bigworld_even)
}

/// `G_B(0)` for the one-dimensional big world on a grid of `beta`,
/// with the elementary lower bound `1 / (1 - beta^2)`.
#[wasm_bindgen]
pub fn green_curve(points: usize) -> Result<String, JsValue> {
    let points = points.clamp(2, 400);
    let mut rows = Vec::with_capacity(points);
    for i in 0..points {
        let beta = 0.02 + 0.96 * i as f64 / (points - 1) as f64;
        let g = solve_bigworld_green(1, beta).map_err(err)?.g_bigworld;
        rows.push(json!({"beta": beta, "G": g, "lower": 1.0 / (1.0 - beta * beta)}));
    }
    Ok(json!({ "rows": rows }).to_string())
}

/// Histogram of `T_L / (2L)` from the antipodal start on a fresh graph
/// per replica, next to the exponential density with mean `G^ev_B(0)`.
#[wasm_bindgen]
pub fn meeting_histogram(half_side: u32, beta: f64, replicas: usize, seed: u64, bins: usize) -> Result<String, JsValue> {
    let spec = TorusSpec::nearest(1, half_side).map_err(err)?;
    let exp = WalkExperiment {
        spec,
        kernel: WalkKernel::simple(&spec, beta).map_err(err)?,
        time_model: TimeModel::Continuous,
        kind: PassageKind::Meeting,
        start: StartSpec::Distant,
        graph_mode: GraphMode::Annealed,
        replicas: replicas.clamp(1, 200_000),
        master_seed: seed,
        horizon_factor: DEFAULT_HORIZON_FACTOR,
    };
    let samples = exp.run().map_err(err)?;
    let theta = green_even(beta)?;
    let law = limit_law_meeting(MeetingStart::Distant, theta).map_err(err)?;
    let emp = EmpiricalDistribution::new(samples.iter().map(|s| (s.rescaled, s.censored)));
    let bins = bins.clamp(5, 200);
    let upper = 5.0 * theta;
    let width = upper / bins as f64;
    let mut counts = vec![0usize; bins];
    for s in samples.iter().filter(|s| !s.censored && s.rescaled < upper) {
        counts[(s.rescaled / width) as usize] += 1;
    }
    let n = samples.len() as f64;
    let hist: Vec<_> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let mid = (i as f64 + 0.5) * width;
            json!({"left": i as f64 * width, "density": c as f64 / (n * width), "limit": (-mid / theta).exp() / theta})
        })
        .collect();
    Ok(json!({
        "G_even": theta,
        "width": width,
        "bins": hist,
        "mean": emp.mean(),
        "ks": ks_distance(&emp, &law).map_err(err)?,
        "censored": emp.censored(),
    })
    .to_string())
}

/// Block counts of coalescing walks at rescaled time `t` against the
/// Kingman law.
#[wasm_bindgen]
pub fn kingman_comparison(half_side: u32, beta: f64, n: usize, t: f64, replicas: usize, seed: u64) -> Result<String, JsValue> {
    let spec = TorusSpec::nearest(1, half_side).map_err(err)?;
    let plan = ExperimentPlan::new(&spec, n, green_even(beta)?, "fixed point", vec![t]).map_err(err)?;
    let exp = CoalescenceExperiment {
        spec,
        kernel: WalkKernel::simple(&spec, beta).map_err(err)?,
        time_model: TimeModel::Continuous,
        starts: StartSet::Spread,
        plan: plan.clone(),
        graph_mode: GraphMode::Annealed,
        replicas: replicas.clamp(1, 50_000),
        master_seed: seed,
        stop_at_grid_end: true,
    };
    let trajectories = exp.run().map_err(err)?;
    let (empirical, censored) = count_law(&trajectories, n, plan.s_l, t);
    let kingman = kingman_row(n, t).map_err(err)?;
    Ok(json!({
        "empirical": empirical,
        "kingman": kingman,
        "tv": total_variation(&empirical, &kingman),
        "censored": censored,
    })
    .to_string())
}
