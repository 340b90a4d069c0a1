//! Runs the synthetic world and compares the selected task force with the
//! seed models on held-out probes.
//!
//! cargo run --release -p acdc-core --example synthetic_world -- [runs]

use acdc::engine::{self, world, RunConfig};
use acdc::genome::ModelGenome;

fn main() {
    let runs: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut wins = 0;
    for seed in 0..runs {
        let config = RunConfig {
            generations: 30,
            active_models: 16,
            offspring_per_gen: 8,
            active_tasks: 100,
            task_interval: 5,
            taskforce_size: 8,
            run_seed: seed,
            ..Default::default()
        };
        let providers = world::build_providers(&config).expect("providers");
        let started = std::time::Instant::now();
        let (state, _) = engine::initialize(&config, &providers).expect("init");
        let seeds: Vec<ModelGenome> = state
            .archive
            .iter()
            .map(|s| state.genomes[&s.genome_id].clone())
            .collect();
        let state = engine::continue_run(state, &config, &providers, |_, _| Ok(())).expect("run");
        let (tf, _) = engine::final_task_force(&state, &config, &providers).expect("task force");

        let probes = world::holdout_probes(&config, 200, seed);
        let tf_genomes: Vec<&ModelGenome> = tf.member_ids.iter().map(|id| &state.genomes[id]).collect();
        let seed_refs: Vec<&ModelGenome> = seeds.iter().collect();
        let ours = world::probe_coverage(&tf_genomes, &probes);
        let base = world::probe_coverage(&seed_refs, &probes);
        let zero_gens = state.history.iter().filter(|r| r.new_models == 0).count();
        if ours > base {
            wins += 1;
        }
        println!(
            "seed {seed}: task force {ours:.3} vs seeds {base:.3}, {} tasks, {zero_gens} generations without new models, {:.2}s",
            state.tasks.global.len(),
            started.elapsed().as_secs_f64()
        );
    }
    println!("{wins}/{runs} runs beat the seed models");
}
