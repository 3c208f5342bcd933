//! Pluggable multi-task prediction heads. Every head consumes one refined
//! representation per task and produces one logit column per task.
//!
//! `share_bottom` runs a single trunk shared by all tasks; `mmoe` mixes a
//! pool of shared experts through per-task softmax gates; `ple` adds one
//! task-private expert to the shared pool; `aitm` passes information along
//! user-declared task chains through an attention fusion.

use dtrn_tensor::{Graph, NodeId, ParamStore, Real};

use crate::config::{HeadKind, ModelConfig};
use crate::error::ModelError;
use crate::init::{add_uniform, add_zeros, fan_in_bound, param_node};

#[derive(Clone, Debug)]
pub struct MtlHead {
    kind: HeadKind,
    input_dim: usize,
    n_tasks: usize,
    n_experts: usize,
    expert_hidden: usize,
    tower_hidden: usize,
    parents: Vec<Option<usize>>,
    order: Vec<usize>,
}

/// Two-layer MLP applied through the graph: `relu(x W1 + b1) W2 + b2`.
fn mlp2<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId, ModelError> {
    let w1 = param_node(g, store, &format!("{prefix}.w1"))?;
    let b1 = param_node(g, store, &format!("{prefix}.b1"))?;
    let w2 = param_node(g, store, &format!("{prefix}.w2"))?;
    let b2 = param_node(g, store, &format!("{prefix}.b2"))?;
    let h = g.matmul(x, w1)?;
    let h = g.add(h, b1)?;
    let h = g.relu(h)?;
    let o = g.matmul(h, w2)?;
    Ok(g.add(o, b2)?)
}

fn register_mlp2<T: Real>(
    store: &mut ParamStore<T>,
    seed: u64,
    prefix: &str,
    d_in: usize,
    d_hidden: usize,
    d_out: usize,
) -> Result<(), ModelError> {
    add_uniform(store, seed, &format!("{prefix}.w1"), &[d_in, d_hidden], fan_in_bound(d_in))?;
    add_zeros(store, &format!("{prefix}.b1"), &[d_hidden])?;
    add_uniform(store, seed, &format!("{prefix}.w2"), &[d_hidden, d_out], fan_in_bound(d_hidden))?;
    add_zeros(store, &format!("{prefix}.b2"), &[d_out])?;
    Ok(())
}

/// Convex mixture of expert outputs under per-row gate weights.
/// `experts` are `[batch, width]` nodes, `gate` is `[batch, n_experts]`
/// with rows on the simplex.
pub(crate) fn mix_experts<T: Real>(
    g: &mut Graph<T>,
    experts: &[NodeId],
    gate: NodeId,
    batch: usize,
    width: usize,
) -> Result<NodeId, ModelError> {
    let stacked = g.concat_last(experts)?;
    let stacked = g.reshape(stacked, &[batch, experts.len(), width])?;
    let gate3 = g.reshape(gate, &[batch, 1, experts.len()])?;
    let mixed = g.bmm_nn(gate3, stacked)?;
    Ok(g.reshape(mixed, &[batch, width])?)
}

impl MtlHead {
    pub fn from_config(
        cfg: &ModelConfig,
        input_dim: usize,
        n_tasks: usize,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            kind: cfg.head,
            input_dim,
            n_tasks,
            n_experts: cfg.n_experts,
            expert_hidden: cfg.expert_hidden,
            tower_hidden: cfg.tower_hidden,
            parents: cfg.aitm_parents(n_tasks)?,
            order: cfg.aitm_order(n_tasks)?,
        })
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<(), ModelError> {
        let (d_in, eh, th) = (self.input_dim, self.expert_hidden, self.tower_hidden);
        match self.kind {
            HeadKind::ShareBottom => {
                register_mlp2(store, seed, "head.trunk", d_in, eh, eh)?;
                for t in 0..self.n_tasks {
                    register_mlp2(store, seed, &format!("head.tower{t}"), eh, th, 1)?;
                }
            }
            HeadKind::Mmoe => {
                for j in 0..self.n_experts {
                    register_mlp2(store, seed, &format!("head.expert{j}"), d_in, eh, eh)?;
                }
                for t in 0..self.n_tasks {
                    add_uniform(store, seed, &format!("head.gate{t}.w"), &[d_in, self.n_experts], fan_in_bound(d_in))?;
                    add_zeros(store, &format!("head.gate{t}.b"), &[self.n_experts])?;
                    register_mlp2(store, seed, &format!("head.tower{t}"), eh, th, 1)?;
                }
            }
            HeadKind::Ple => {
                for j in 0..self.n_experts {
                    register_mlp2(store, seed, &format!("head.shared{j}"), d_in, eh, eh)?;
                }
                for t in 0..self.n_tasks {
                    register_mlp2(store, seed, &format!("head.specific{t}"), d_in, eh, eh)?;
                    add_uniform(store, seed, &format!("head.gate{t}.w"), &[d_in, self.n_experts + 1], fan_in_bound(d_in))?;
                    add_zeros(store, &format!("head.gate{t}.b"), &[self.n_experts + 1])?;
                    register_mlp2(store, seed, &format!("head.tower{t}"), eh, th, 1)?;
                }
            }
            HeadKind::Aitm => {
                for t in 0..self.n_tasks {
                    register_mlp2(store, seed, &format!("head.tower_in{t}"), d_in, eh, th)?;
                    if self.parents[t].is_some() {
                        add_uniform(store, seed, &format!("head.transfer{t}.w"), &[th, th], fan_in_bound(th))?;
                        add_zeros(store, &format!("head.transfer{t}.b"), &[th])?;
                    }
                    add_uniform(store, seed, &format!("head.out{t}.w"), &[th, 1], fan_in_bound(th))?;
                    add_zeros(store, &format!("head.out{t}.b"), &[1])?;
                }
                for m in ["wq", "wk", "wv"] {
                    add_uniform(store, seed, &format!("head.ait.{m}"), &[th, th], fan_in_bound(th))?;
                }
            }
        }
        Ok(())
    }

    fn gate<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        task: usize,
        input: NodeId,
    ) -> Result<NodeId, ModelError> {
        let w = param_node(g, store, &format!("head.gate{task}.w"))?;
        let b = param_node(g, store, &format!("head.gate{task}.b"))?;
        let logits = g.matmul(input, w)?;
        let logits = g.add(logits, b)?;
        Ok(g.softmax(logits)?)
    }

    fn tower<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        task: usize,
        input: NodeId,
    ) -> Result<NodeId, ModelError> {
        mlp2(g, store, &format!("head.tower{task}"), input)
    }

    /// Attention fusion over the transferred parent state and the task's own
    /// tower output, shared projection weights across tasks.
    fn ait_fuse<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        candidates: &[NodeId],
        batch: usize,
    ) -> Result<NodeId, ModelError> {
        let th = self.tower_hidden;
        let wq = param_node(g, store, "head.ait.wq")?;
        let wk = param_node(g, store, "head.ait.wk")?;
        let wv = param_node(g, store, "head.ait.wv")?;
        let scale = 1.0 / (th as f64).sqrt();
        let mut scores = Vec::with_capacity(candidates.len());
        let mut values = Vec::with_capacity(candidates.len());
        for &u in candidates {
            let q = g.matmul(u, wq)?;
            let k = g.matmul(u, wk)?;
            let v = g.matmul(u, wv)?;
            let qk = g.mul(q, k)?;
            let s = g.sum_last(qk)?;
            let s = g.reshape(s, &[batch, 1])?;
            scores.push(g.scale(s, scale)?);
            values.push(v);
        }
        let score_mat = g.concat_last(&scores)?;
        let weights = g.softmax(score_mat)?;
        mix_experts(g, &values, weights, batch, th)
    }

    /// One `[batch, 1]` logit node per task, in task order.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        refined: &[NodeId],
        batch: usize,
    ) -> Result<Vec<NodeId>, ModelError> {
        if refined.len() != self.n_tasks {
            return Err(ModelError::config(format!(
                "{} refined inputs for {} tasks",
                refined.len(),
                self.n_tasks
            )));
        }
        match self.kind {
            HeadKind::ShareBottom => {
                let mut logits = Vec::with_capacity(self.n_tasks);
                for t in 0..self.n_tasks {
                    let z = mlp2(g, store, "head.trunk", refined[t])?;
                    logits.push(self.tower(g, store, t, z)?);
                }
                Ok(logits)
            }
            HeadKind::Mmoe => {
                let mut logits = Vec::with_capacity(self.n_tasks);
                for t in 0..self.n_tasks {
                    let experts: Vec<NodeId> = (0..self.n_experts)
                        .map(|j| mlp2(g, store, &format!("head.expert{j}"), refined[t]))
                        .collect::<Result<_, _>>()?;
                    let gate = self.gate(g, store, t, refined[t])?;
                    let mixed = mix_experts(g, &experts, gate, batch, self.expert_hidden)?;
                    logits.push(self.tower(g, store, t, mixed)?);
                }
                Ok(logits)
            }
            HeadKind::Ple => {
                let mut logits = Vec::with_capacity(self.n_tasks);
                for t in 0..self.n_tasks {
                    let mut experts: Vec<NodeId> = (0..self.n_experts)
                        .map(|j| mlp2(g, store, &format!("head.shared{j}"), refined[t]))
                        .collect::<Result<_, _>>()?;
                    experts.push(mlp2(g, store, &format!("head.specific{t}"), refined[t])?);
                    let gate = self.gate(g, store, t, refined[t])?;
                    let mixed = mix_experts(g, &experts, gate, batch, self.expert_hidden)?;
                    logits.push(self.tower(g, store, t, mixed)?);
                }
                Ok(logits)
            }
            HeadKind::Aitm => {
                let mut fused: Vec<Option<NodeId>> = vec![None; self.n_tasks];
                for &t in &self.order {
                    let p_t = mlp2(g, store, &format!("head.tower_in{t}"), refined[t])?;
                    let z_t = match self.parents[t] {
                        None => p_t,
                        Some(parent) => {
                            let z_parent = fused[parent].expect("parents precede children in topological order");
                            let w = param_node(g, store, &format!("head.transfer{t}.w"))?;
                            let b = param_node(g, store, &format!("head.transfer{t}.b"))?;
                            let transferred = g.matmul(z_parent, w)?;
                            let transferred = g.add(transferred, b)?;
                            self.ait_fuse(g, store, &[transferred, p_t], batch)?
                        }
                    };
                    fused[t] = Some(z_t);
                }
                let mut logits = Vec::with_capacity(self.n_tasks);
                for t in 0..self.n_tasks {
                    let z = fused[t].expect("every task fused");
                    let w = param_node(g, store, &format!("head.out{t}.w"))?;
                    let b = param_node(g, store, &format!("head.out{t}.b"))?;
                    let o = g.matmul(z, w)?;
                    logits.push(g.add(o, b)?);
                }
                Ok(logits)
            }
        }
    }
}
