use std::collections::BTreeMap;

use acdc::genome::{crossover, mutate_svd, task_vector, GenomeId, Matrix, ModelGenome, MutationParams};
use acdc::metrics::{coverage, vendi_score, ResponseMatrix};
use acdc::population::{
    difficulty_weights, dns_archive_update, dns_novelty_score, DifficultyWeights, DnsParams, ScoredSolution,
    SkillVector,
};
use acdc::taskspace::{apply_replacement, commit_tasks, impossible_gate, ImpossibleOutcome, TaskArchives};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pool_strategy() -> impl Strategy<Value = (Vec<Vec<bool>>, Vec<f64>)> {
    (1usize..=12).prop_flat_map(|t| {
        (
            prop::collection::vec(prop::collection::vec(any::<bool>(), t), 1..=8),
            prop::collection::vec(0.01f64..5.0, t),
        )
    })
}

fn solutions(rows: &[Vec<bool>]) -> Vec<ScoredSolution> {
    rows.iter()
        .enumerate()
        .map(|(i, b)| ScoredSolution::new(GenomeId(i as u64), SkillVector::new(b.clone(), 0)).unwrap())
        .collect()
}

fn genome(values: &[f64], id: u64) -> ModelGenome {
    let mut tensors = BTreeMap::new();
    tensors.insert("a".to_string(), Matrix::from_row_slice(3, 4, &values[..12]));
    tensors.insert("b".to_string(), Matrix::from_row_slice(1, 4, &values[12..16]));
    ModelGenome::new(GenomeId(id), tensors)
}

fn genome_values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 16)
}

proptest! {
    #[test]
    fn dns_scores_ignore_weight_scale((rows, w) in pool_strategy(), c in 0.01f64..100.0, k in 1usize..4) {
        let pool = solutions(&rows);
        let params = DnsParams { k, ..DnsParams::default() };
        let a = DifficultyWeights { w: w.clone() };
        let b = DifficultyWeights { w: w.iter().map(|x| x * c).collect() };
        for s in &pool {
            let x = dns_novelty_score(s, &pool, &a, &params).unwrap();
            let y = dns_novelty_score(s, &pool, &b, &params).unwrap();
            prop_assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn unique_bit_never_lowers_novelty((rows, w) in pool_strategy(), pick in any::<prop::sample::Index>()) {
        let pool = solutions(&rows);
        let i = pick.index(pool.len());
        let subject = &pool[i];
        let fitter: Vec<&ScoredSolution> = pool.iter().filter(|s| s.fitness > subject.fitness).collect();
        let Some(t) = (0..w.len()).find(|&t| !subject.skill.bits[t] && fitter.iter().all(|s| !s.skill.bits[t])) else {
            return Ok(());
        };
        let weights = DifficultyWeights { w };
        let params = DnsParams::default();
        let before = dns_novelty_score(subject, &pool, &weights, &params).unwrap();
        // Score the extended subject against the original competitors, keeping
        // its fitness so the set of fitter solutions is unchanged.
        let mut bits = subject.skill.bits.clone();
        bits[t] = true;
        let extended = ScoredSolution { skill: SkillVector::new(bits, 0), ..subject.clone() };
        let after = dns_novelty_score(&extended, &pool, &weights, &params).unwrap();
        prop_assert!(after >= before, "{after} < {before}");
    }

    #[test]
    fn archive_update_keeps_the_fittest((rows, w) in pool_strategy(), m in 1usize..6, split in any::<prop::sample::Index>()) {
        let pool = solutions(&rows);
        let cut = split.index(pool.len() + 1);
        let (archive, candidates) = pool.split_at(cut);
        let kept = dns_archive_update(archive, candidates, m, &DifficultyWeights { w }, &DnsParams::default()).unwrap();
        let best = pool.iter().map(|s| s.fitness).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(kept.len() <= m && kept.len() == m.min(pool.len()));
        prop_assert_eq!(kept[0].fitness, best);
    }

    #[test]
    fn difficulty_weights_are_fail_fractions((rows, _) in pool_strategy()) {
        let w = difficulty_weights(&rows).unwrap();
        for (j, x) in w.w.iter().enumerate() {
            let fails = rows.iter().filter(|r| !r[j]).count();
            prop_assert_eq!(*x, fails as f64 / rows.len() as f64);
        }
    }

    #[test]
    fn coverage_dominates_each_member((rows, _) in pool_strategy(), mask in 1u32..256) {
        let m = ResponseMatrix::from_rows(rows.clone()).unwrap();
        let members: Vec<usize> = (0..rows.len()).filter(|i| mask >> i & 1 == 1).collect();
        prop_assume!(!members.is_empty());
        let ids: Vec<GenomeId> = members.iter().map(|&i| m.model_ids[i]).collect();
        let c = coverage(&m, Some(&ids)).unwrap();
        for &i in &members {
            prop_assert!(c >= m.row_mean(i));
        }
        let all = coverage(&m, None).unwrap();
        prop_assert!(all >= c);
    }

    #[test]
    fn vendi_is_bounded_and_order_free(vs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..7), seed in any::<u64>()) {
        prop_assume!(vs.iter().all(|v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6));
        let n = vs.len() as f64;
        let a = vendi_score(&vs).unwrap();
        prop_assert!(a >= 1.0 - 1e-9 && a <= n + 1e-9, "{a} outside [1, {n}]");
        let mut shuffled = vs.clone();
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut ChaCha8Rng::seed_from_u64(seed));
        let b = vendi_score(&shuffled).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn crossover_is_a_weighted_mean(base in genome_values(), x in genome_values(), y in genome_values(), w1 in 0.01f64..3.0, w2 in 0.01f64..3.0) {
        let (base, p1, p2) = (genome(&base, 0), genome(&x, 1), genome(&y, 2));
        let child = crossover(&p1, &p2, &base, w1, w2, 1e-3, GenomeId(3)).unwrap();
        let tc = task_vector(&child, &base).unwrap();
        let (t1, t2) = (task_vector(&p1, &base).unwrap(), task_vector(&p2, &base).unwrap());
        for (name, m) in &tc.tensors {
            for ((c, a), b) in m.iter().zip(t1.tensors[name].iter()).zip(t2.tensors[name].iter()) {
                prop_assert!(*c >= a.min(*b) - 1e-12 && *c <= a.max(*b) + 1e-12);
            }
        }
        let swapped = crossover(&p2, &p1, &base, w2, w1, 1e-3, GenomeId(3)).unwrap();
        prop_assert_eq!(child.tensors, swapped.tensors);
    }

    #[test]
    fn self_crossover_is_identity(base in genome_values(), x in genome_values(), w1 in -3.0f64..3.0, w2 in 0.5f64..3.0) {
        prop_assume!((w1 + w2).abs() >= 1e-3);
        let (base, p) = (genome(&base, 0), genome(&x, 1));
        let child = crossover(&p, &p, &base, w1, w2, 1e-3, GenomeId(2)).unwrap();
        let (tc, tp) = (task_vector(&child, &base).unwrap(), task_vector(&p, &base).unwrap());
        for (name, m) in &tc.tensors {
            prop_assert!((m - &tp.tensors[name]).amax() <= 1e-12);
        }
    }

    #[test]
    fn mutation_keeps_schema(x in genome_values(), sigma in 0.0f64..3.0, rate in 0.0f64..=1.0, seed in any::<u64>()) {
        let g = genome(&x, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = MutationParams { k: 2, sigma, rate };
        let m = mutate_svd(&g, &params, &mut rng).unwrap();
        prop_assert_eq!(m.genome.shape_schema(), g.shape_schema());
        prop_assert_eq!(&m.genome.tensors["b"], &g.tensors["b"]);
        let still = mutate_svd(&g, &MutationParams { rate: 0.0, ..params }, &mut rng).unwrap();
        prop_assert_eq!(still.genome.tensors, g.tensors);
    }

    #[test]
    fn impossible_replacement_keeps_active_size(n in 2usize..12, pick in any::<prop::sample::Index>(), q in 2usize..8) {
        // A chain of tasks, each the parent of the next.
        let mut archives = TaskArchives::new(q);
        let records: Vec<_> = (0..n)
            .map(|i| {
                let mut c: acdc::taskspace::CandidateTask = acdc::taskspace::SeedTask {
                    name: format!("t{i}"),
                    description: String::new(),
                    capability: String::new(),
                    difficulty: 2,
                    instruction: format!("task {i}"),
                    scorer: acdc::oracles::ScorerSpec::ExactMatch { expected: "x".into() },
                }
                .into();
                if i > 0 {
                    c.parent_id = Some(acdc::taskspace::TaskId(i as u64 - 1));
                    c.adaptation_kind = acdc::taskspace::AdaptationKind::Harder;
                }
                c.into_record(acdc::taskspace::TaskId(i as u64), vec![1.0], 1)
            })
            .collect();
        commit_tasks(&mut archives, records).unwrap();
        let before = archives.active.len();
        let id = archives.active[pick.index(before)];
        if let ImpossibleOutcome::Replace { with } = impossible_gate(id, &[false, false], &archives) {
            prop_assert!(!archives.is_active(with));
            apply_replacement(&mut archives, id, with).unwrap();
        }
        prop_assert_eq!(archives.active.len(), before);
        prop_assert!(archives.check().is_ok());
    }
}
