//! Full model assembly: embeddings, per-(task, behavior) interest extraction,
//! per-task refinement, and a pluggable multi-task head.
//!
//! The loss is the unweighted sum of per-task mean binary cross-entropies.
//! A dropped task still produces logits and its own loss node, but does not
//! contribute to the total.

use dtrn_data::{FeatureSchema, MiniBatch};
use dtrn_tensor::{Graph, NodeId, ParamStore, Real, Tensor};

use crate::config::ModelConfig;
use crate::embedding::EmbeddingBank;
use crate::error::ModelError;
use crate::heads::MtlHead;
use crate::hypernet::{Conditioning, HyperNet};
use crate::transformer::{ConditionalTransformer, SeqInput};
use crate::trm::Trm;

pub struct Dtrn {
    schema: FeatureSchema,
    cfg: ModelConfig,
    embeddings: EmbeddingBank,
    transformer: ConditionalTransformer,
    hyper: Option<HyperNet>,
    trm: Option<Trm>,
    head: MtlHead,
}

/// Graph nodes produced by one forward pass.
pub struct ForwardOut {
    /// `interests[t][b]`: `[batch, d]` interest of task t in behavior b.
    pub interests: Vec<Vec<NodeId>>,
    /// Per-task concatenation over behaviors, `[batch, M * d]`.
    pub task_interests: Vec<NodeId>,
    /// Raw bottom representation per task, `[batch, bottom_width]`.
    pub raws: Vec<NodeId>,
    /// Refined representation per task (equals `raws` without refinement).
    pub refined: Vec<NodeId>,
    /// One `[batch, 1]` logit column per task.
    pub logits: Vec<NodeId>,
    /// Mean binary cross-entropy per task.
    pub task_losses: Vec<NodeId>,
    /// Sum of task losses over tasks that contribute to training.
    pub loss: NodeId,
}

impl Dtrn {
    pub fn new(schema: FeatureSchema, cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate(&schema)?;
        let d = schema.dim;
        let transformer = ConditionalTransformer::new(
            d,
            cfg.heads,
            cfg.d_f,
            cfg.enc_layers,
            cfg.dec_layers,
        )?;
        let hyper = cfg.use_tim.then(|| {
            HyperNet::new(
                d,
                cfg.d_f,
                cfg.resolved_hyper_hidden(d),
                cfg.enc_layers,
                cfg.dec_layers,
                cfg.injection_site,
            )
        });
        let bottom = (schema.n_sparse + schema.n_seqs) * d;
        let trm = cfg
            .use_trm
            .then(|| Trm::new(bottom, cfg.resolved_trm_hidden(bottom), schema.n_tasks));
        let head = MtlHead::from_config(&cfg, bottom, schema.n_tasks)?;
        let embeddings = EmbeddingBank::new(schema.clone());
        Ok(Self { schema, cfg, embeddings, transformer, hyper, trm, head })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Width of the raw per-task bottom representation.
    pub fn bottom_width(&self) -> usize {
        (self.schema.n_sparse + self.schema.n_seqs) * self.schema.dim
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<(), ModelError> {
        self.embeddings.register(store, seed)?;
        self.transformer.register(store, seed)?;
        if let Some(h) = &self.hyper {
            h.register(store, seed)?;
        }
        if let Some(t) = &self.trm {
            t.register(store, seed)?;
        }
        self.head.register(store, seed)?;
        Ok(())
    }

    /// Interest rows of empty sequences forced to exact zero.
    fn zero_empty<T: Real>(
        &self,
        g: &mut Graph<T>,
        interest: NodeId,
        seq: &SeqInput,
    ) -> Result<NodeId, ModelError> {
        if !seq.any_empty() {
            return Ok(interest);
        }
        let d = self.schema.dim;
        let b = seq.batch;
        let mut ind = Tensor::zeros(&[b, d]);
        for r in 0..b {
            if !seq.empty_rows[r] {
                for c in 0..d {
                    ind.data_mut()[r * d + c] = T::one();
                }
            }
        }
        let ind = g.constant(ind);
        let masked = g.mul(interest, ind)?;
        // Adding zero normalizes any -0.0 left by the mask product.
        let zeros = g.constant(Tensor::zeros(&[b, d]));
        Ok(g.add(masked, zeros)?)
    }

    fn extract_interest<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        seq: &SeqInput,
        target: NodeId,
        cond: Option<&Conditioning>,
    ) -> Result<NodeId, ModelError> {
        let enc = self.transformer.encode(g, store, seq, cond)?;
        let dec = self.transformer.decode(g, store, target, enc, seq, cond)?;
        self.zero_empty(g, dec, seq)
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        batch: &MiniBatch,
    ) -> Result<ForwardOut, ModelError> {
        let (n_tasks, n_seqs, n_sparse) = (self.schema.n_tasks, self.schema.n_seqs, self.schema.n_sparse);
        let b = batch.batch;
        if b == 0 {
            return Err(ModelError::config("empty mini-batch"));
        }

        let mut sparse_nodes = Vec::with_capacity(n_sparse);
        for i in 0..n_sparse {
            sparse_nodes.push(self.embeddings.embed_sparse(g, store, i, &batch.sparse[i])?);
        }
        let mut seqs = Vec::with_capacity(n_seqs);
        let mut target_nodes = Vec::with_capacity(n_seqs);
        for bi in 0..n_seqs {
            let sb = &batch.seqs[bi];
            let x = self.embeddings.embed_sequence(g, store, bi, sb)?;
            seqs.push(SeqInput::new(x, b, sb.max_len, sb.mask.clone())?);
            target_nodes.push(self.embeddings.embed_target(g, store, bi, &batch.targets)?);
        }

        let mut interests: Vec<Vec<NodeId>> = Vec::with_capacity(n_tasks);
        match &self.hyper {
            Some(hyper) => {
                for t in 0..n_tasks {
                    let mut row = Vec::with_capacity(n_seqs);
                    for bi in 0..n_seqs {
                        let pair = self.embeddings.type_pair(g, store, t, bi)?;
                        let cond = hyper.conditioning(g, store, pair)?;
                        row.push(self.extract_interest(g, store, &seqs[bi], target_nodes[bi], Some(&cond))?);
                    }
                    interests.push(row);
                }
            }
            None => {
                // Without conditioning the extraction is task-independent;
                // run it once per behavior and share the node across tasks.
                let shared: Vec<NodeId> = (0..n_seqs)
                    .map(|bi| self.extract_interest(g, store, &seqs[bi], target_nodes[bi], None))
                    .collect::<Result<_, _>>()?;
                for _ in 0..n_tasks {
                    interests.push(shared.clone());
                }
            }
        }

        let mut task_interests = Vec::with_capacity(n_tasks);
        let mut raws = Vec::with_capacity(n_tasks);
        let mut refined = Vec::with_capacity(n_tasks);
        for t in 0..n_tasks {
            let ti = g.concat_last(&interests[t])?;
            task_interests.push(ti);
            let mut parts = sparse_nodes.clone();
            parts.push(ti);
            let raw = g.concat_last(&parts)?;
            raws.push(raw);
            let r = match &self.trm {
                Some(trm) => trm.refine(g, store, t, raw)?,
                None => raw,
            };
            refined.push(r);
        }

        let logits = self.head.forward(g, store, &refined, b)?;

        let mut task_losses = Vec::with_capacity(n_tasks);
        for t in 0..n_tasks {
            let labels: Vec<T> = batch.labels[t].iter().map(|&y| T::of(y as f64)).collect();
            let labels = g.constant(Tensor::from_vec(vec![b, 1], labels)?);
            task_losses.push(g.bce_with_logits(logits[t], labels)?);
        }
        let active: Vec<usize> = (0..n_tasks).filter(|&t| self.cfg.drop_task != Some(t)).collect();
        if active.is_empty() {
            return Err(ModelError::config("every task is excluded from the loss"));
        }
        let mut loss = task_losses[active[0]];
        for &t in &active[1..] {
            loss = g.add(loss, task_losses[t])?;
        }

        Ok(ForwardOut { interests, task_interests, raws, refined, logits, task_losses, loss })
    }
}
