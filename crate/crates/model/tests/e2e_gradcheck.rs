//! End-to-end finite-difference validation of the training gradient on a
//! toy model: every parameter tensor is sampled and checked against central
//! differences through the full forward pass.

use std::time::Instant;

use dtrn_data::{FeatureSchema, Instance, MiniBatch};
use dtrn_model::{Dtrn, HeadKind, ModelConfig, Site};
use dtrn_tensor::gradcheck::{max_grad_err, sample_coords, CheckCfg};
use dtrn_tensor::{Graph, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_schema() -> FeatureSchema {
    FeatureSchema {
        n_sparse: 2,
        n_seqs: 2,
        n_tasks: 2,
        vocab: vec![5, 6],
        seq_vocab: vec![7, 7],
        max_len: vec![3, 3],
        dim: 8,
    }
}

fn toy_batch(schema: &FeatureSchema) -> MiniBatch {
    let instances = vec![
        Instance { sparse: vec![0, 3], seqs: vec![vec![1, 2, 6], vec![3]], labels: vec![1, 0], target: 2 },
        Instance { sparse: vec![4, 0], seqs: vec![vec![5], vec![1, 2, 4]], labels: vec![0, 0], target: 5 },
        Instance { sparse: vec![2, 5], seqs: vec![vec![], vec![2, 2]], labels: vec![1, 1], target: 1 },
        Instance { sparse: vec![1, 1], seqs: vec![vec![4, 6], vec![6]], labels: vec![0, 1], target: 4 },
    ];
    MiniBatch::build(&instances, schema)
}

fn toy_config() -> ModelConfig {
    ModelConfig {
        d_f: 16,
        expert_hidden: 8,
        tower_hidden: 6,
        n_experts: 2,
        ..ModelConfig::default()
    }
}

fn check(cfg: ModelConfig, seed: u64) -> (f64, usize) {
    let schema = toy_schema();
    let batch = toy_batch(&schema);
    let model = Dtrn::new(schema, cfg).unwrap();
    let mut store: ParamStore<f64> = ParamStore::new();
    model.register(&mut store, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let coords = sample_coords(&store, 1, &mut rng);
    let n = coords.len();
    assert!(n >= 20, "want at least 20 sampled coordinates, got {n}");
    // Steps of 1e-3 down to 1e-6 can straddle a ReLU kink somewhere in a
    // composition this deep. The loss evaluates deterministically to ~1e-16
    // noise, so at h = 1e-7 central differences keep roundoff near 1e-9 on
    // the derivative, far below the tolerance.
    let cfg = CheckCfg { h: 1e-7, ..CheckCfg::default() };
    let worst = max_grad_err(&mut store, &coords, &cfg, |g, store| {
        let out = model.forward(g, store, &batch).expect("forward");
        Ok(out.loss)
    })
    .unwrap();
    assert!(
        worst.err <= 1e-4,
        "gradient mismatch at {}[{}]: analytic {} vs numeric {} (rel err {})",
        worst.param,
        worst.coord,
        worst.analytic,
        worst.numeric,
        worst.err
    );
    (worst.err, n)
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let start = Instant::now();
    let (err, n) = check(toy_config(), 307);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "check took {elapsed:?}");
    println!("checked {n} coordinates, max relative error {err:.3e} in {elapsed:?}");
}

#[test]
fn gradients_hold_for_every_head_kind() {
    for kind in [HeadKind::Mmoe, HeadKind::Ple, HeadKind::Aitm] {
        let cfg = ModelConfig { head: kind, ..toy_config() };
        check(cfg, 311);
    }
}

#[test]
fn gradients_hold_for_every_injection_site() {
    for site in [Site::Qkv, Site::Ffn1, Site::Ffn2] {
        let cfg = ModelConfig { injection_site: site, ..toy_config() };
        check(cfg, 313);
    }
}

#[test]
fn gradients_hold_without_refinement_or_conditioning() {
    check(ModelConfig { use_trm: false, ..toy_config() }, 317);
    check(ModelConfig { use_tim: false, ..toy_config() }, 331);
}
