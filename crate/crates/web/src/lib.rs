//! Browser bindings. Every export returns a JSON string.

use acdc::engine::{self, world, RunConfig};
use acdc::genome::{perturb_singular_values, singular_values, Matrix, ModelGenome};
use acdc::metrics::{select_task_force, ResponseMatrix, SelectionStrategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Config for the in-browser run: the default synthetic world, scaled down.
pub fn demo_config(generations: u32, seed: u32) -> RunConfig {
    RunConfig {
        generations: u64::from(generations.max(1)),
        active_models: 12,
        offspring_per_gen: 6,
        active_tasks: 60,
        task_interval: 5,
        seed_tasks: 20,
        init_tasks: 10,
        n_gen_tasks: 20,
        taskforce_size: 6,
        run_seed: u64::from(seed),
        ..RunConfig::default()
    }
}

/// Runs the synthetic coevolution loop and compares the selected task force
/// with the seed models on 200 held-out probes.
#[wasm_bindgen]
pub fn run_coevolution(generations: u32, seed: u32) -> Result<String, JsValue> {
    run_coevolution_json(generations, seed).map_err(|e| JsValue::from_str(&e))
}

pub fn run_coevolution_json(generations: u32, seed: u32) -> Result<String, String> {
    let config = demo_config(generations, seed);
    let providers = world::build_providers(&config).map_err(err)?;
    let (state, _) = engine::initialize(&config, &providers).map_err(err)?;
    let seeds: Vec<ModelGenome> = state
        .archive
        .iter()
        .map(|s| state.genomes[&s.genome_id].clone())
        .collect();
    let state = engine::continue_run(state, &config, &providers, |_, _| Ok(())).map_err(err)?;
    let (tf, _) = engine::final_task_force(&state, &config, &providers).map_err(err)?;
    let probes = world::holdout_probes(&config, 200, u64::from(seed));
    let tf_genomes: Vec<&ModelGenome> = tf.member_ids.iter().map(|id| &state.genomes[id]).collect();
    let seed_refs: Vec<&ModelGenome> = seeds.iter().collect();
    let history: Vec<_> = state
        .history
        .iter()
        .map(|r| {
            json!({
                "generation": r.generation,
                "new_models": r.new_models,
                "active_coverage": r.active_coverage,
                "best_fitness": r.best_fitness,
                "active_tasks": r.active_tasks,
                "vendi": r.task_phase.as_ref().map(|p| p.vendi_global),
            })
        })
        .collect();
    Ok(json!({
        "history": history,
        "task_force": tf.member_ids.iter().map(|id| id.to_string()).collect::<Vec<_>>(),
        "task_force_coverage": world::probe_coverage(&tf_genomes, &probes),
        "seed_coverage": world::probe_coverage(&seed_refs, &probes),
        "global_tasks": state.tasks.global.len(),
    })
    .to_string())
}

/// Coverage reached by each selection strategy for task forces of size
/// 1..=models on a random response matrix whose models differ in skill.
#[wasm_bindgen]
pub fn strategy_curves(models: u32, questions: u32, seed: u32) -> Result<String, JsValue> {
    strategy_curves_json(models, questions, seed).map_err(|e| JsValue::from_str(&e))
}

pub fn strategy_curves_json(models: u32, questions: u32, seed: u32) -> Result<String, String> {
    let (n, q) = (models.clamp(1, 64) as usize, questions.clamp(1, 2000) as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    // Each question belongs to a topic; each model is strong on a few topics.
    let topics = 8;
    let topic_of: Vec<usize> = (0..q).map(|_| rng.random_range(0..topics)).collect();
    let rows: Vec<Vec<bool>> = (0..n)
        .map(|_| {
            let skill: Vec<f64> = (0..topics).map(|_| rng.random::<f64>().powi(3)).collect();
            topic_of.iter().map(|&t| rng.random::<f64>() < skill[t]).collect()
        })
        .collect();
    let m = ResponseMatrix::from_rows(rows).map_err(err)?;
    let mut curves = serde_json::Map::new();
    for (name, strategy) in [
        ("coverage", SelectionStrategy::Coverage),
        ("fitness", SelectionStrategy::Fitness),
        ("random", SelectionStrategy::Random),
    ] {
        let ys: Vec<f64> = (1..=n)
            .map(|k| select_task_force(&m, k, strategy, u64::from(seed)).map(|tf| tf.achieved_coverage))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        curves.insert(name.into(), json!(ys));
    }
    Ok(serde_json::Value::Object(curves).to_string())
}

/// Singular values of a random Gaussian matrix before and after perturbing
/// the leading `k` of them with N(0, sigma) noise.
#[wasm_bindgen]
pub fn mutation_spectrum(rows: u32, cols: u32, k: u32, sigma: f64, seed: u32) -> Result<String, JsValue> {
    mutation_spectrum_json(rows, cols, k, sigma, seed).map_err(|e| JsValue::from_str(&e))
}

pub fn mutation_spectrum_json(rows: u32, cols: u32, k: u32, sigma: f64, seed: u32) -> Result<String, String> {
    let (r, c) = (rows.clamp(1, 64) as usize, cols.clamp(1, 64) as usize);
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(err("sigma must be a finite non-negative number"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    let w = Matrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
    let before = singular_values(&w).ok_or_else(|| err("decomposition failed"))?;
    let count = (k as usize).min(r.min(c));
    let normal = Normal::new(0.0, sigma).map_err(err)?;
    let deltas: Vec<f64> = (0..count).map(|_| normal.sample(&mut rng)).collect();
    let mutated = if r.min(c) <= 1 {
        w.clone()
    } else {
        perturb_singular_values(&w, &deltas).ok_or_else(|| err("decomposition failed"))?
    };
    let after = singular_values(&mutated).ok_or_else(|| err("decomposition failed"))?;
    let change = (&mutated - &w).norm() / w.norm().max(f64::MIN_POSITIVE);
    Ok(json!({
        "before": before,
        "after": after,
        "perturbed": if r.min(c) <= 1 { 0 } else { count },
        "relative_change": change,
    })
    .to_string())
}
