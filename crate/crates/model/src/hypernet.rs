//! Hypernetwork: two-layer MLPs mapping the `[T_i ; BS_b]` type pair to
//! conditional parameters for one injection site family.
//!
//! Output layers are zero-initialized, so a freshly built hypernetwork is
//! exactly neutral: CLN scale 1 and shift 0, residual weight factors 1.
//! Parameter count is independent of the number of tasks and behaviors.

use std::collections::BTreeMap;

use dtrn_tensor::{Graph, NodeId, ParamStore, Real, Tensor};

use crate::config::Site;
use crate::error::ModelError;
use crate::init::{add_uniform, add_zeros, fan_in_bound, param_node};

/// Conditional nodes for one (task, behavior) pair, keyed by site name.
/// CLN sites store `{key}.gamma` / `{key}.beta` nodes of shape `[1, d]`;
/// residual sites store `{key}` multiplicative factors `1 + delta` already
/// reshaped to the target weight's shape.
#[derive(Clone, Debug, Default)]
pub struct Conditioning {
    entries: BTreeMap<String, NodeId>,
}

impl Conditioning {
    fn insert(&mut self, key: String, node: NodeId) {
        self.entries.insert(key, node);
    }

    pub fn get(&self, key: &str) -> Result<NodeId, ModelError> {
        self.entries
            .get(key)
            .copied()
            .ok_or_else(|| ModelError::config(format!("no conditioning entry for site `{key}`")))
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }
}

#[derive(Clone, Debug)]
pub struct HyperNet {
    d: usize,
    d_f: usize,
    hidden: usize,
    enc_layers: usize,
    dec_layers: usize,
    site: Site,
}

impl HyperNet {
    pub fn new(
        d: usize,
        d_f: usize,
        hidden: usize,
        enc_layers: usize,
        dec_layers: usize,
        site: Site,
    ) -> Self {
        Self { d, d_f, hidden, enc_layers, dec_layers, site }
    }

    fn blocks(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in 0..self.enc_layers {
            out.push(format!("enc{l}"));
        }
        for l in 0..self.dec_layers {
            out.push(format!("dec{l}"));
        }
        out
    }

    /// (site key, flat output width) pairs for this injection site.
    fn outputs(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for blk in self.blocks() {
            match self.site {
                Site::Ln => {
                    out.push((format!("{blk}_ln1.gamma"), self.d));
                    out.push((format!("{blk}_ln1.beta"), self.d));
                    out.push((format!("{blk}_ln2.gamma"), self.d));
                    out.push((format!("{blk}_ln2.beta"), self.d));
                }
                Site::Qkv => {
                    for m in ["q", "k", "v"] {
                        out.push((format!("{blk}_attn_{m}"), self.d * self.d));
                    }
                }
                Site::Ffn1 => {
                    out.push((format!("{blk}_ffn_w1"), self.d * self.d_f));
                    out.push((format!("{blk}_ffn_b1"), self.d_f));
                }
                Site::Ffn2 => {
                    out.push((format!("{blk}_ffn_w2"), self.d_f * self.d));
                    out.push((format!("{blk}_ffn_b2"), self.d));
                }
            }
        }
        out
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<(), ModelError> {
        let in_w = 2 * self.d;
        for (key, out_w) in self.outputs() {
            add_uniform(store, seed, &format!("hyper.{key}.h_w"), &[in_w, self.hidden], fan_in_bound(in_w))?;
            add_zeros(store, &format!("hyper.{key}.h_b"), &[self.hidden])?;
            // Zero output layer: neutral conditioning at init.
            add_zeros(store, &format!("hyper.{key}.o_w"), &[self.hidden, out_w])?;
            add_zeros(store, &format!("hyper.{key}.o_b"), &[out_w])?;
        }
        Ok(())
    }

    fn mlp<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        key: &str,
        input: NodeId,
    ) -> Result<NodeId, ModelError> {
        let h_w = param_node(g, store, &format!("hyper.{key}.h_w"))?;
        let h_b = param_node(g, store, &format!("hyper.{key}.h_b"))?;
        let o_w = param_node(g, store, &format!("hyper.{key}.o_w"))?;
        let o_b = param_node(g, store, &format!("hyper.{key}.o_b"))?;
        let h = g.matmul(input, h_w)?;
        let h = g.add(h, h_b)?;
        let h = g.relu(h)?;
        let o = g.matmul(h, o_w)?;
        Ok(g.add(o, o_b)?)
    }

    /// `1 + mlp(pair)` as a `[1, width]` node.
    fn one_plus<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        key: &str,
        input: NodeId,
        width: usize,
    ) -> Result<NodeId, ModelError> {
        let raw = self.mlp(g, store, key, input)?;
        let ones = g.constant(Tensor::filled(&[1, width], T::one()));
        Ok(g.add(raw, ones)?)
    }

    /// Builds every conditional node for one (t, b) pair from its type-pair
    /// embedding (`[1, 2d]`).
    pub fn conditioning<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        pair: NodeId,
    ) -> Result<Conditioning, ModelError> {
        let mut cond = Conditioning::default();
        for blk in self.blocks() {
            match self.site {
                Site::Ln => {
                    for ln in ["ln1", "ln2"] {
                        let gkey = format!("{blk}_{ln}.gamma");
                        let gamma = self.one_plus(g, store, &gkey, pair, self.d)?;
                        cond.insert(gkey, gamma);
                        let bkey = format!("{blk}_{ln}.beta");
                        let beta = self.mlp(g, store, &bkey, pair)?;
                        cond.insert(bkey, beta);
                    }
                }
                Site::Qkv => {
                    for m in ["q", "k", "v"] {
                        let key = format!("{blk}_attn_{m}");
                        let factor = self.one_plus(g, store, &key, pair, self.d * self.d)?;
                        let factor = g.reshape(factor, &[self.d, self.d])?;
                        cond.insert(key, factor);
                    }
                }
                Site::Ffn1 => {
                    let wkey = format!("{blk}_ffn_w1");
                    let wf = self.one_plus(g, store, &wkey, pair, self.d * self.d_f)?;
                    let wf = g.reshape(wf, &[self.d, self.d_f])?;
                    cond.insert(wkey, wf);
                    let bkey = format!("{blk}_ffn_b1");
                    let bf = self.one_plus(g, store, &bkey, pair, self.d_f)?;
                    let bf = g.reshape(bf, &[self.d_f])?;
                    cond.insert(bkey, bf);
                }
                Site::Ffn2 => {
                    let wkey = format!("{blk}_ffn_w2");
                    let wf = self.one_plus(g, store, &wkey, pair, self.d_f * self.d)?;
                    let wf = g.reshape(wf, &[self.d_f, self.d])?;
                    cond.insert(wkey, wf);
                    let bkey = format!("{blk}_ffn_b2");
                    let bf = self.one_plus(g, store, &bkey, pair, self.d)?;
                    let bf = g.reshape(bf, &[self.d])?;
                    cond.insert(bkey, bf);
                }
            }
        }
        Ok(cond)
    }
}
