//! Mini-batch training: seeded shuffle, one pass per epoch (no instance is
//! revisited unless epochs > 1), Adam updates, per-batch loss history.

use dtrn_data::{Instance, KvFile, MiniBatch};
use dtrn_model::Dtrn;
use dtrn_tensor::{adam_step, AdamConfig, Graph, ParamStore, Real};
use rand::Rng;

use crate::error::CliError;

/// Shuffle streams must not collide with the generator's instance streams,
/// which occupy low numbers and `1 << 40` upward.
const SHUFFLE_STREAM_BASE: u64 = 1 << 20;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, batch_size: 256, epochs: 1, seed: 17 }
    }
}

impl TrainConfig {
    pub fn from_kv(kv: &KvFile) -> Result<Self, CliError> {
        let d = Self::default();
        let cfg = Self {
            lr: kv.opt_f64("lr", d.lr)?,
            batch_size: kv.opt_usize("batch_size", d.batch_size)?,
            epochs: kv.opt_usize("epochs", d.epochs)?,
            seed: match kv.get("seed") {
                Some(_) => kv.require_u64("seed")?,
                None => d.seed,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// lr = 0 is legal and freezes the parameters (a do-nothing optimizer);
    /// negative or non-finite rates are rejected.
    pub fn validate(&self) -> Result<(), CliError> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(CliError::train(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(CliError::train("batch_size must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(CliError::train("epochs must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// One entry per processed mini-batch, in order.
    pub loss_history: Vec<f64>,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("batch,loss\n");
        for (i, l) in self.loss_history.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }
}

/// Instance visit order for one epoch: a seeded Fisher-Yates permutation.
pub(crate) fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = dtrn_tensor::stream_rng(seed, SHUFFLE_STREAM_BASE + epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

pub fn train<T: Real>(
    model: &Dtrn,
    store: &mut ParamStore<T>,
    instances: &[Instance],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(CliError::train("no training instances"));
    }
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut history = Vec::new();
    let mut batch_index = 0usize;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, instances.len());
        for chunk in order.chunks(cfg.batch_size) {
            // The tensor engine already rejects non-finite values at the op
            // that produces them; this context pins down which batch did it.
            let at = |e: CliError| {
                CliError::train(format!("batch {batch_index} (epoch {epoch}): {e}"))
            };
            let picked: Vec<Instance> = chunk.iter().map(|&i| instances[i].clone()).collect();
            let batch = MiniBatch::build(&picked, model.schema());
            let mut g: Graph<T> = Graph::new();
            let out = model.forward(&mut g, store, &batch).map_err(|e| at(e.into()))?;
            let loss = g.value(out.loss).data()[0].as_f64();
            if !loss.is_finite() {
                return Err(at(CliError::train(format!("non-finite loss {loss}"))));
            }
            history.push(loss);
            store.zero_grads();
            g.backward(out.loss, store).map_err(|e| at(e.into()))?;
            adam_step(store, &adam).map_err(|e| at(e.into()))?;
            batch_index += 1;
        }
    }
    Ok(TrainOutcome { loss_history: history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dtrn_data::FeatureSchema;
    use dtrn_model::ModelConfig;

    fn tiny_schema() -> FeatureSchema {
        FeatureSchema {
            n_sparse: 2,
            n_seqs: 2,
            n_tasks: 2,
            vocab: vec![4, 6],
            seq_vocab: vec![6, 6],
            max_len: vec![3, 3],
            dim: 4,
        }
    }

    fn tiny_instances() -> Vec<Instance> {
        vec![
            Instance { sparse: vec![0, 3], seqs: vec![vec![1, 2], vec![3]], labels: vec![1, 0], target: 2 },
            Instance { sparse: vec![3, 0], seqs: vec![vec![5], vec![1, 2, 4]], labels: vec![0, 0], target: 5 },
            Instance { sparse: vec![2, 5], seqs: vec![vec![], vec![2]], labels: vec![1, 1], target: 1 },
            Instance { sparse: vec![1, 1], seqs: vec![vec![4], vec![5]], labels: vec![0, 1], target: 4 },
            Instance { sparse: vec![0, 2], seqs: vec![vec![2, 2], vec![]], labels: vec![1, 0], target: 2 },
        ]
    }

    fn tiny_model() -> Dtrn {
        let cfg = ModelConfig { d_f: 8, expert_hidden: 4, tower_hidden: 4, ..ModelConfig::default() };
        Dtrn::new(tiny_schema(), cfg).unwrap()
    }

    fn snapshot(store: &ParamStore<f32>) -> Vec<Vec<f32>> {
        store.iter().map(|p| p.value().data().to_vec()).collect()
    }

    #[test]
    fn epoch_order_is_a_permutation_and_differs_across_epochs() {
        let a = epoch_order(7, 0, 100);
        let b = epoch_order(7, 1, 100);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(a, b);
        assert_eq!(a, epoch_order(7, 0, 100));
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let model = tiny_model();
        let mut store: ParamStore<f32> = ParamStore::new();
        model.register(&mut store, 3).unwrap();
        let before = snapshot(&store);
        let cfg = TrainConfig { lr: 0.0, batch_size: 2, ..TrainConfig::default() };
        let out = train(&model, &mut store, &tiny_instances(), &cfg).unwrap();
        assert_eq!(out.loss_history.len(), 3);
        assert_eq!(snapshot(&store), before);
    }

    #[test]
    fn same_seed_and_config_reproduce_parameters_bitwise() {
        let run = || {
            let model = tiny_model();
            let mut store: ParamStore<f32> = ParamStore::new();
            model.register(&mut store, 3).unwrap();
            let cfg = TrainConfig { batch_size: 2, epochs: 2, ..TrainConfig::default() };
            let out = train(&model, &mut store, &tiny_instances(), &cfg).unwrap();
            (snapshot(&store), out.loss_history)
        };
        let (pa, ha) = run();
        let (pb, hb) = run();
        assert_eq!(pa, pb);
        assert_eq!(ha, hb);
    }

    #[test]
    fn one_epoch_processes_each_instance_exactly_once() {
        let model = tiny_model();
        let mut store: ParamStore<f32> = ParamStore::new();
        model.register(&mut store, 3).unwrap();
        let cfg = TrainConfig { batch_size: 2, ..TrainConfig::default() };
        let out = train(&model, &mut store, &tiny_instances(), &cfg).unwrap();
        // 5 instances in batches of 2: three batches, final one short.
        assert_eq!(out.loss_history.len(), 3);
    }

    #[test]
    fn corrupted_parameters_abort_with_a_batch_index() {
        let model = tiny_model();
        let mut store: ParamStore<f32> = ParamStore::new();
        model.register(&mut store, 3).unwrap();
        let id = store.id("head.trunk.w1").unwrap();
        store.value_mut(id).data_mut()[0] = f32::NAN;
        let cfg = TrainConfig { batch_size: 8, ..TrainConfig::default() };
        let err = train(&model, &mut store, &tiny_instances(), &cfg).unwrap_err();
        assert!(err.to_string().contains("batch 0"), "{err}");
    }

    #[test]
    fn invalid_train_configs_are_rejected() {
        assert!(TrainConfig { lr: -0.1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        let kv = KvFile::parse("lr=0.5\nbatch_size=4\nepochs=2\nseed=9\n").unwrap();
        let cfg = TrainConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.lr, 0.5);
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let out = TrainOutcome { loss_history: vec![1.5, 0.75] };
        assert_eq!(out.history_csv(), "batch,loss\n0,1.5\n1,0.75\n");
    }
}
