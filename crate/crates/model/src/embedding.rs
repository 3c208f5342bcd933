//! Embedding bank: sparse-id tables, per-behavior sequence tables, and the
//! task/behavior type tables feeding the hypernetwork.

use dtrn_data::{FeatureSchema, SequenceBatch};
use dtrn_tensor::{Graph, NodeId, ParamStore, Real};

use crate::error::ModelError;
use crate::init::{add_uniform, fan_in_bound};

/// Table names and lookup builders. All tables live in the `ParamStore`
/// under the `embed.` prefix; shapes are dictated by the schema.
#[derive(Clone, Debug)]
pub struct EmbeddingBank {
    schema: FeatureSchema,
}

impl EmbeddingBank {
    pub fn new(schema: FeatureSchema) -> Self {
        Self { schema }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn sparse_table(i: usize) -> String {
        format!("embed.sparse_{i}")
    }

    pub fn seq_table(b: usize) -> String {
        format!("embed.seq_{b}")
    }

    pub const TASK_TABLE: &'static str = "embed.task";
    pub const BEHAVIOR_TABLE: &'static str = "embed.behavior";

    /// Registers every table; init uniform in [-1/sqrt(d), 1/sqrt(d)].
    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<(), ModelError> {
        let d = self.schema.dim;
        let bound = fan_in_bound(d);
        for (i, &k) in self.schema.vocab.iter().enumerate() {
            add_uniform(store, seed, &Self::sparse_table(i), &[k, d], bound)?;
        }
        for (b, &k) in self.schema.seq_vocab.iter().enumerate() {
            add_uniform(store, seed, &Self::seq_table(b), &[k, d], bound)?;
        }
        add_uniform(store, seed, Self::TASK_TABLE, &[self.schema.n_tasks, d], bound)?;
        add_uniform(store, seed, Self::BEHAVIOR_TABLE, &[self.schema.n_seqs, d], bound)?;
        Ok(())
    }

    fn table<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        name: &str,
    ) -> Result<NodeId, ModelError> {
        let id = store
            .id(name)
            .ok_or_else(|| ModelError::config(format!("parameter `{name}` not registered")))?;
        Ok(g.param(store, id))
    }

    /// Rows of sparse feature i for a batch: `[batch, d]`.
    pub fn embed_sparse<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        i: usize,
        ids: &[usize],
    ) -> Result<NodeId, ModelError> {
        let t = self.table(g, store, &Self::sparse_table(i))?;
        Ok(g.gather_rows(t, ids)?)
    }

    /// Flattened sequence embedding `[batch * max_len, d]`; padded slots
    /// carry the pad row and are excluded downstream via the mask.
    pub fn embed_sequence<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        b: usize,
        batch: &SequenceBatch,
    ) -> Result<NodeId, ModelError> {
        let t = self.table(g, store, &Self::seq_table(b))?;
        Ok(g.gather_rows(t, &batch.ids)?)
    }

    /// The target item embedded through behavior b's vocabulary: `[batch, d]`.
    pub fn embed_target<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        b: usize,
        targets: &[usize],
    ) -> Result<NodeId, ModelError> {
        let t = self.table(g, store, &Self::seq_table(b))?;
        Ok(g.gather_rows(t, targets)?)
    }

    /// Concatenated type embedding `[T_i ; BS_b]` of shape `[1, 2d]`, the
    /// hypernetwork's conditioning input.
    pub fn type_pair<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        task: usize,
        behavior: usize,
    ) -> Result<NodeId, ModelError> {
        if task >= self.schema.n_tasks || behavior >= self.schema.n_seqs {
            return Err(ModelError::config(format!(
                "type_pair ({task}, {behavior}) out of range"
            )));
        }
        let tt = self.table(g, store, Self::TASK_TABLE)?;
        let bt = self.table(g, store, Self::BEHAVIOR_TABLE)?;
        let ti = g.gather_rows(tt, &[task])?;
        let bs = g.gather_rows(bt, &[behavior])?;
        Ok(g.concat_last(&[ti, bs])?)
    }
}
