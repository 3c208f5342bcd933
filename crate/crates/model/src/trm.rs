//! Task representation refinement: each task passes its raw bottom input
//! through a private gate `r = raw * sigmoid(MLP_t(raw))`.
//!
//! Gate values live in (0, 1), so refinement only attenuates components;
//! task t's gate parameters receive gradient from task t's loss alone.

use dtrn_tensor::{Graph, NodeId, ParamStore, Real};

use crate::error::ModelError;
use crate::init::{add_filled, add_uniform, add_zeros, fan_in_bound, param_node};

/// Output-bias init; sigmoid(2) ~ 0.88, so gates start nearly open and
/// refinement begins close to the identity, as with LSTM forget gates.
const GATE_BIAS_INIT: f64 = 2.0;

#[derive(Clone, Debug)]
pub struct Trm {
    input_dim: usize,
    hidden: usize,
    n_tasks: usize,
}

impl Trm {
    pub fn new(input_dim: usize, hidden: usize, n_tasks: usize) -> Self {
        Self { input_dim, hidden, n_tasks }
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<(), ModelError> {
        for t in 0..self.n_tasks {
            add_uniform(store, seed, &format!("trm.task{t}.w1"), &[self.input_dim, self.hidden], fan_in_bound(self.input_dim))?;
            add_zeros(store, &format!("trm.task{t}.b1"), &[self.hidden])?;
            add_uniform(store, seed, &format!("trm.task{t}.w2"), &[self.hidden, self.input_dim], fan_in_bound(self.hidden))?;
            add_filled(store, &format!("trm.task{t}.b2"), &[self.input_dim], GATE_BIAS_INIT)?;
        }
        Ok(())
    }

    /// `[batch, input_dim]` refined representation for one task.
    pub fn refine<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        task: usize,
        raw: NodeId,
    ) -> Result<NodeId, ModelError> {
        if task >= self.n_tasks {
            return Err(ModelError::config(format!(
                "task {task} out of range, {} tasks configured",
                self.n_tasks
            )));
        }
        let w1 = param_node(g, store, &format!("trm.task{task}.w1"))?;
        let b1 = param_node(g, store, &format!("trm.task{task}.b1"))?;
        let w2 = param_node(g, store, &format!("trm.task{task}.w2"))?;
        let b2 = param_node(g, store, &format!("trm.task{task}.b2"))?;
        let h = g.matmul(raw, w1)?;
        let h = g.add(h, b1)?;
        let h = g.relu(h)?;
        let o = g.matmul(h, w2)?;
        let o = g.add(o, b2)?;
        let gate = g.sigmoid(o)?;
        Ok(g.mul(raw, gate)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dtrn_tensor::Tensor;
    use rand::SeedableRng;

    #[test]
    fn refinement_matches_scalar_oracle() {
        let trm = Trm::new(3, 2, 1);
        let mut store: ParamStore<f64> = ParamStore::new();
        trm.register(&mut store, 7).unwrap();
        let raw_data = vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.25];
        let mut g: Graph<f64> = Graph::new();
        let raw = g.constant(Tensor::from_vec(vec![2, 3], raw_data.clone()).unwrap());
        let out = trm.refine(&mut g, &store, 0, raw).unwrap();

        let grab = |name: &str| store.value(store.id(name).unwrap()).data().to_vec();
        let w1 = grab("trm.task0.w1");
        let b1 = grab("trm.task0.b1");
        let w2 = grab("trm.task0.w2");
        let b2 = grab("trm.task0.b2");
        for row in 0..2 {
            let x = &raw_data[row * 3..row * 3 + 3];
            let mut h = vec![0.0f64; 2];
            for j in 0..2 {
                let mut s = b1[j];
                for i in 0..3 {
                    s += x[i] * w1[i * 2 + j];
                }
                h[j] = s.max(0.0);
            }
            for i in 0..3 {
                let mut s = b2[i];
                for j in 0..2 {
                    s += h[j] * w2[j * 3 + i];
                }
                let gate = 1.0 / (1.0 + (-s).exp());
                let expect = x[i] * gate;
                let got = g.value(out).data()[row * 3 + i];
                assert!((got - expect).abs() < 1e-12, "row {row} col {i}: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn gate_attenuates_magnitudes() {
        let trm = Trm::new(4, 2, 2);
        let mut store: ParamStore<f32> = ParamStore::new();
        trm.register(&mut store, 11).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let raw_t = Tensor::uniform(&[5, 4], -2.0, 2.0, &mut rng);
        let raw_data = raw_t.data().to_vec();
        let mut g: Graph<f32> = Graph::new();
        let raw = g.constant(raw_t);
        let out = trm.refine(&mut g, &store, 1, raw).unwrap();
        for (o, r) in g.value(out).data().iter().zip(&raw_data) {
            assert!(o.abs() < r.abs() || *r == 0.0);
            assert!(o.signum() == r.signum() || *o == 0.0);
        }
    }

    #[test]
    fn tasks_have_disjoint_gate_parameters() {
        let trm = Trm::new(3, 2, 2);
        let mut store: ParamStore<f64> = ParamStore::new();
        trm.register(&mut store, 7).unwrap();
        let mut g: Graph<f64> = Graph::new();
        let raw = g.constant(Tensor::filled(&[2, 3], 0.7));
        let out = trm.refine(&mut g, &store, 0, raw).unwrap();
        let loss = g.sum_all(out).unwrap();
        g.backward(loss, &mut store).unwrap();
        let w1_other = store.id("trm.task1.w1").unwrap();
        assert!(store.grad(w1_other).iter().all(|&x| x == 0.0));
        let w1_own = store.id("trm.task0.w1").unwrap();
        assert!(store.grad(w1_own).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn out_of_range_task_rejected() {
        let trm = Trm::new(3, 2, 2);
        let mut store: ParamStore<f32> = ParamStore::new();
        trm.register(&mut store, 7).unwrap();
        let mut g: Graph<f32> = Graph::new();
        let raw = g.constant(Tensor::zeros(&[1, 3]));
        assert!(trm.refine(&mut g, &store, 2, raw).is_err());
    }
}
