//! Bitwise reproducibility: same seed, same construction order, same bits.

use dtrn_tensor::{adam_step, stream_rng, AdamConfig, Graph, ParamStore, Tensor};

fn train_run(seed: u64, steps: usize) -> Vec<u32> {
    let mut rng = stream_rng(seed, 0);
    let mut store = ParamStore::<f32>::new();
    let w1 = store
        .add("w1", Tensor::uniform(&[3, 4], -0.5, 0.5, &mut rng))
        .unwrap();
    let w2 = store
        .add("w2", Tensor::uniform(&[4, 1], -0.5, 0.5, &mut rng))
        .unwrap();
    let x = Tensor::uniform(&[6, 3], -1.0, 1.0, &mut rng);
    let y = Tensor::from_vec(vec![6, 1], vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
    let cfg = AdamConfig::default();
    for _ in 0..steps {
        store.zero_grads();
        let mut g = Graph::new();
        let xl = g.constant(x.clone());
        let w1l = g.param(&store, w1);
        let w2l = g.param(&store, w2);
        let h = g.matmul(xl, w1l).unwrap();
        let h = g.relu(h).unwrap();
        let z = g.matmul(h, w2l).unwrap();
        let yl = g.constant(y.clone());
        let loss = g.bce_with_logits(z, yl).unwrap();
        g.backward(loss, &mut store).unwrap();
        adam_step(&mut store, &cfg).unwrap();
    }
    store
        .iter()
        .flat_map(|p| p.value().data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn identical_seeds_give_identical_bits_after_training() {
    assert_eq!(train_run(7, 5), train_run(7, 5));
}

#[test]
fn different_seeds_diverge() {
    assert_ne!(train_run(7, 5), train_run(8, 5));
}
