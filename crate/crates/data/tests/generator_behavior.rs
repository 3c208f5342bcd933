//! Statistical and determinism properties of the synthetic generator.

use dtrn_data::{
    generate, generate_split, sequence_target_stats, validate_instances, GeneratorConfig,
    LatentWorld, Split,
};

fn base_config() -> GeneratorConfig {
    GeneratorConfig {
        n_tasks: 2,
        n_seqs: 2,
        n_sparse: 3,
        n_users: 40,
        n_items: 40,
        latent_dim: 4,
        n_instances: 1000,
        n_test_instances: 0,
        seed: 11,
        dim: 8,
        seq_length_means: vec![4.0, 3.0],
        max_lens: vec![8, 8],
        task_bias: vec![0.0, 0.0],
        noise_vocab: 13,
        task_behavior_weights: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
        task_conflict: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    }
}

#[test]
fn same_seed_gives_bitwise_identical_files() {
    let mut cfg = base_config();
    cfg.n_instances = 200;
    cfg.n_test_instances = 50;
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let out_a = generate(&cfg, dir_a.path()).unwrap();
    let out_b = generate(&cfg, dir_b.path()).unwrap();
    for (a, b) in [
        (&out_a.schema_path, &out_b.schema_path),
        (&out_a.train_path, &out_b.train_path),
        (out_a.test_path.as_ref().unwrap(), out_b.test_path.as_ref().unwrap()),
    ] {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}

#[test]
fn different_seeds_differ() {
    let mut cfg = base_config();
    cfg.n_instances = 100;
    let world = LatentWorld::build(&cfg).unwrap();
    let (a, _) = generate_split(&cfg, &world, Split::Train);
    cfg.seed = 12;
    let world_b = LatentWorld::build(&cfg).unwrap();
    let (b, _) = generate_split(&cfg, &world_b, Split::Train);
    assert_ne!(a, b);
}

#[test]
fn train_and_test_splits_are_distinct() {
    let mut cfg = base_config();
    cfg.n_instances = 100;
    cfg.n_test_instances = 100;
    let world = LatentWorld::build(&cfg).unwrap();
    let (train, _) = generate_split(&cfg, &world, Split::Train);
    let (test, _) = generate_split(&cfg, &world, Split::Test);
    assert_ne!(train, test);
}

/// Orthogonal task directions and no history coupling: labels of the two
/// tasks should be (near) uncorrelated over a large sample.
#[test]
fn orthogonal_tasks_without_history_terms_decorrelate_labels() {
    let mut cfg = base_config();
    cfg.n_instances = 50_000;
    cfg.task_behavior_weights = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
    let world = LatentWorld::build(&cfg).unwrap();
    let (instances, _) = generate_split(&cfg, &world, Split::Train);
    let n = instances.len() as f64;
    let p0 = instances.iter().filter(|i| i.labels[0] == 1).count() as f64 / n;
    let p1 = instances.iter().filter(|i| i.labels[1] == 1).count() as f64 / n;
    let p01 = instances.iter().filter(|i| i.labels[0] == 1 && i.labels[1] == 1).count() as f64 / n;
    let rho = (p01 - p0 * p1) / (p0 * (1.0 - p0) * p1 * (1.0 - p1)).sqrt();
    assert!(rho.abs() < 0.05, "label correlation {rho}");
}

/// Empirical positive rates must track the mean of the sigmoid scores the
/// labels were drawn from (binomial noise only).
#[test]
fn positive_rates_match_score_distribution() {
    let mut cfg = base_config();
    cfg.n_instances = 50_000;
    cfg.task_bias = vec![0.0, -2.0];
    let world = LatentWorld::build(&cfg).unwrap();
    let (instances, probs) = generate_split(&cfg, &world, Split::Train);
    let n = instances.len() as f64;
    for t in 0..cfg.n_tasks {
        let implied = probs.iter().map(|row| row[t]).sum::<f64>() / n;
        let actual = instances.iter().filter(|i| i.labels[t] == 1).count() as f64 / n;
        assert!(
            (actual - implied).abs() <= 0.2 * implied,
            "task {t}: implied {implied}, actual {actual}"
        );
    }
}

/// Raising A[0][0] with everything else fixed must not decrease the (0,0)
/// co-occurrence statistic: 3 levels, 5 seeds each.
#[test]
fn cooccurrence_statistic_monotone_in_task_behavior_weight() {
    let levels = [0.0, 1.5, 3.0];
    for seed in 1..=5u64 {
        let mut prev = -1.0f64;
        for &level in &levels {
            let mut cfg = base_config();
            cfg.seed = seed;
            cfg.n_instances = 4000;
            cfg.task_behavior_weights[0][0] = level;
            let world = LatentWorld::build(&cfg).unwrap();
            let (instances, _) = generate_split(&cfg, &world, Split::Train);
            let stats = sequence_target_stats(&instances, &cfg.schema());
            let value = stats[0][0].expect("task 0 has positives");
            assert!(
                value >= prev,
                "seed {seed}: stat dropped from {prev} to {value} at level {level}"
            );
            prev = value;
        }
    }
}

/// The statistic matches an independently written counting pass exactly.
#[test]
fn stats_match_brute_force_oracle() {
    let mut cfg = base_config();
    cfg.n_instances = 100;
    let world = LatentWorld::build(&cfg).unwrap();
    let (instances, _) = generate_split(&cfg, &world, Split::Train);
    let schema = cfg.schema();
    validate_instances(&instances, &schema).unwrap();
    let stats = sequence_target_stats(&instances, &schema);
    for t in 0..schema.n_tasks {
        for b in 0..schema.n_seqs {
            let mut positives = 0usize;
            let mut total = 0.0f64;
            for inst in &instances {
                if inst.labels[t] != 1 {
                    continue;
                }
                positives += 1;
                let mut count = 0.0;
                for &id in &inst.seqs[b] {
                    if id == inst.target {
                        count += 1.0;
                    }
                }
                total += count;
            }
            let expected = (positives > 0).then(|| total / positives as f64);
            assert_eq!(stats[t][b], expected, "entry ({t},{b})");
        }
    }
}
