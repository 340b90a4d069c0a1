use acdc::engine::RunConfig;
use acdc::metrics::SelectionStrategy;
use acdc_cli::config::{parse_config_str, serialize_config};
use proptest::prelude::*;

fn config() -> impl Strategy<Value = RunConfig> {
    (
        (1u64..500, 1usize..64, 1usize..32, 1usize..1000, 1u64..20, 0usize..50),
        (0usize..100, 0usize..50, 1usize..16, any::<u32>().prop_map(u64::from)),
        (-2.0f64..2.0, 0.001f64..3.0, 1usize..512, 0.0f64..5.0, 0.0f64..=1.0),
        (1usize..8, -1e4f64..1e4, any::<bool>(), 0.0f64..=1.0, 0.0f64..=1.0, 0u32..6),
        prop_oneof![
            Just(SelectionStrategy::Coverage),
            Just(SelectionStrategy::Fitness),
            Just(SelectionStrategy::Random)
        ],
    )
        .prop_map(|(a, b, c, d, strategy)| {
            let mut cfg = RunConfig {
                generations: a.0,
                active_models: a.1,
                offspring_per_gen: a.2,
                active_tasks: a.3,
                task_interval: a.4,
                n_gen_tasks: a.5,
                seed_tasks: b.0,
                init_tasks: b.1,
                taskforce_size: b.2,
                run_seed: b.3,
                taskforce_strategy: strategy,
                ..RunConfig::default()
            };
            cfg.crossover.mu = c.0;
            cfg.crossover.sigma = c.1;
            cfg.mutation.k = c.2;
            cfg.mutation.sigma = c.3;
            cfg.mutation.rate = c.4;
            cfg.dns.k = d.0;
            cfg.dns.alpha_dom = d.1;
            cfg.dns.use_difficulty_weights = d.2;
            cfg.task.threshold = d.3;
            cfg.task.novel_probability = d.4;
            cfg.task.max_reflections = d.5;
            cfg
        })
}

proptest! {
    #[test]
    fn parse_inverts_serialize(cfg in config()) {
        prop_assume!(cfg.validate().is_ok());
        let text = serialize_config(&cfg);
        prop_assert_eq!(parse_config_str(&text, "generated").unwrap(), cfg);
    }
}
