//! Conditional Transformer for interest extraction: multi-head self-attention
//! encoder over one behavior sequence, single-query cross-attention decoder
//! driven by the target item, with conditional layer norm and optional
//! residual weight injection at one site.
//!
//! Padded positions are excluded through the attention mask and never mix
//! into real positions; layer norm and the FFN act per row. An empty row
//! keeps a sentinel key at position 0 so softmax stays well defined; its
//! decoder output is discarded by the caller.

use dtrn_tensor::{Graph, NodeId, ParamStore, Real};


use crate::error::ModelError;
use crate::hypernet::Conditioning;
use crate::init::{add_filled, add_uniform, add_zeros, fan_in_bound, param_node};

/// One embedded behavior sequence ready for attention.
pub struct SeqInput {
    /// `[batch * len, d]` position embeddings.
    pub x: NodeId,
    pub batch: usize,
    pub len: usize,
    /// `batch * len` entries, true where the position holds a real item or
    /// the sentinel of an empty row.
    pub attn_mask: Vec<bool>,
    /// Per-row flag for sequences with no real items.
    pub empty_rows: Vec<bool>,
}

impl SeqInput {
    /// `data_mask` is true exactly at real item positions. Rows without any
    /// real item get position 0 unmasked as a sentinel.
    pub fn new(x: NodeId, batch: usize, len: usize, data_mask: Vec<bool>) -> Result<Self, ModelError> {
        if data_mask.len() != batch * len {
            return Err(ModelError::config(format!(
                "sequence mask has {} entries, expected {}",
                data_mask.len(),
                batch * len
            )));
        }
        let mut attn_mask = data_mask;
        let mut empty_rows = vec![false; batch];
        for r in 0..batch {
            let row = &mut attn_mask[r * len..(r + 1) * len];
            if row.iter().all(|&m| !m) {
                empty_rows[r] = true;
                row[0] = true;
            }
        }
        Ok(Self { x, batch, len, attn_mask, empty_rows })
    }

    pub fn any_empty(&self) -> bool {
        self.empty_rows.iter().any(|&e| e)
    }
}

#[derive(Clone, Debug)]
pub struct ConditionalTransformer {
    d: usize,
    h: usize,
    d_f: usize,
    enc_layers: usize,
    dec_layers: usize,
}

impl ConditionalTransformer {
    pub fn new(
        d: usize,
        h: usize,
        d_f: usize,
        enc_layers: usize,
        dec_layers: usize,
    ) -> Result<Self, ModelError> {
        if d % h != 0 {
            return Err(ModelError::config(format!(
                "head count {h} must divide embedding dim {d}"
            )));
        }
        Ok(Self { d, h, d_f, enc_layers, dec_layers })
    }

    fn head_dim(&self) -> usize {
        self.d / self.h
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

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<(), ModelError> {
        let dp = self.head_dim();
        for blk in self.blocks() {
            for i in 0..self.h {
                add_uniform(store, seed, &format!("tim.{blk}.attn.wq{i}"), &[self.d, dp], fan_in_bound(self.d))?;
                add_uniform(store, seed, &format!("tim.{blk}.attn.wk{i}"), &[self.d, dp], fan_in_bound(self.d))?;
                add_uniform(store, seed, &format!("tim.{blk}.attn.wv{i}"), &[self.d, dp], fan_in_bound(self.d))?;
            }
            add_uniform(store, seed, &format!("tim.{blk}.attn.wo"), &[self.d, self.d], fan_in_bound(self.d))?;
            add_uniform(store, seed, &format!("tim.{blk}.ffn.w1"), &[self.d, self.d_f], fan_in_bound(self.d))?;
            add_zeros(store, &format!("tim.{blk}.ffn.b1"), &[self.d_f])?;
            add_uniform(store, seed, &format!("tim.{blk}.ffn.w2"), &[self.d_f, self.d], fan_in_bound(self.d_f))?;
            add_zeros(store, &format!("tim.{blk}.ffn.b2"), &[self.d])?;
            for ln in ["ln1", "ln2"] {
                add_filled(store, &format!("tim.{blk}.{ln}.gamma"), &[self.d], 1.0)?;
                add_zeros(store, &format!("tim.{blk}.{ln}.beta"), &[self.d])?;
            }
        }
        Ok(())
    }

    /// Conditional factor for one residual weight, if this site injects it.
    fn factor<T: Real>(
        &self,
        cond: Option<&Conditioning>,
        key: &str,
        g: &mut Graph<T>,
        base: NodeId,
    ) -> Result<NodeId, ModelError> {
        match cond {
            Some(c) if c.has(key) => {
                let f = c.get(key)?;
                Ok(g.mul(base, f)?)
            }
            _ => Ok(base),
        }
    }

    /// Per-head effective projection: base weight times the matching column
    /// slice of the full `[d, d]` factor.
    fn head_weight<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        cond: Option<&Conditioning>,
        name: &str,
        key: &str,
        head: usize,
    ) -> Result<NodeId, ModelError> {
        let base = param_node(g, store, name)?;
        match cond {
            Some(c) if c.has(key) => {
                let full = c.get(key)?;
                let dp = self.head_dim();
                let slice = g.slice_cols(full, head * dp, dp)?;
                Ok(g.mul(base, slice)?)
            }
            _ => Ok(base),
        }
    }

    /// `γ_tb · γ_l · (x - μ)/δ + β_tb + β_l`, with the conditional pieces
    /// present only for the `ln` injection site. `blk` names the layer
    /// ("enc0", "dec1", ...), `ln` the site within it ("ln1" or "ln2").
    pub fn cln<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        blk: &str,
        ln: &str,
        x: NodeId,
        cond: Option<&Conditioning>,
    ) -> Result<NodeId, ModelError> {
        let gamma_l = param_node(g, store, &format!("tim.{blk}.{ln}.gamma"))?;
        let beta_l = param_node(g, store, &format!("tim.{blk}.{ln}.beta"))?;
        let xn = g.normalize_rows(x)?;
        let mut y = g.mul(xn, gamma_l)?;
        let gkey = format!("{blk}_{ln}.gamma");
        if let Some(c) = cond {
            if c.has(&gkey) {
                let gamma_tb = c.get(&gkey)?;
                let gamma_tb = g.reshape(gamma_tb, &[self.d])?;
                y = g.mul(y, gamma_tb)?;
            }
        }
        y = g.add(y, beta_l)?;
        let bkey = format!("{blk}_{ln}.beta");
        if let Some(c) = cond {
            if c.has(&bkey) {
                let beta_tb = c.get(&bkey)?;
                let beta_tb = g.reshape(beta_tb, &[self.d])?;
                y = g.add(y, beta_tb)?;
            }
        }
        Ok(y)
    }

    /// Position-wise feed-forward `relu(x W1 + b1) W2 + b2` with optional
    /// conditional weight factors.
    pub fn ffn<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        blk: &str,
        x: NodeId,
        cond: Option<&Conditioning>,
    ) -> Result<NodeId, ModelError> {
        let w1 = param_node(g, store, &format!("tim.{blk}.ffn.w1"))?;
        let w1 = self.factor(cond, &format!("{blk}_ffn_w1"), g, w1)?;
        let b1 = param_node(g, store, &format!("tim.{blk}.ffn.b1"))?;
        let b1 = self.factor(cond, &format!("{blk}_ffn_b1"), g, b1)?;
        let w2 = param_node(g, store, &format!("tim.{blk}.ffn.w2"))?;
        let w2 = self.factor(cond, &format!("{blk}_ffn_w2"), g, w2)?;
        let b2 = param_node(g, store, &format!("tim.{blk}.ffn.b2"))?;
        let b2 = self.factor(cond, &format!("{blk}_ffn_b2"), g, b2)?;
        let h = g.matmul(x, w1)?;
        let h = g.add(h, b1)?;
        let h = g.relu(h)?;
        let o = g.matmul(h, w2)?;
        Ok(g.add(o, b2)?)
    }

    /// Masked multi-head self-attention over the sequence; `x` is the
    /// `[batch * len, d]` input and the result has the same shape.
    pub fn self_attention<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        blk: &str,
        x: NodeId,
        seq: &SeqInput,
        cond: Option<&Conditioning>,
    ) -> Result<NodeId, ModelError> {
        let mask = self.self_mask(seq);
        self.self_attention_masked(g, store, blk, x, seq, &mask, cond)
    }

    fn self_attention_masked<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        blk: &str,
        x: NodeId,
        seq: &SeqInput,
        mask: &[bool],
        cond: Option<&Conditioning>,
    ) -> Result<NodeId, ModelError> {
        let (b, l, dp) = (seq.batch, seq.len, self.head_dim());
        let scale = 1.0 / (dp as f64).sqrt();
        let mut heads = Vec::with_capacity(self.h);
        for i in 0..self.h {
            let wq = self.head_weight(g, store, cond, &format!("tim.{blk}.attn.wq{i}"), &format!("{blk}_attn_q"), i)?;
            let wk = self.head_weight(g, store, cond, &format!("tim.{blk}.attn.wk{i}"), &format!("{blk}_attn_k"), i)?;
            let wv = self.head_weight(g, store, cond, &format!("tim.{blk}.attn.wv{i}"), &format!("{blk}_attn_v"), i)?;
            let q = g.matmul(x, wq)?;
            let q = g.reshape(q, &[b, l, dp])?;
            let k = g.matmul(x, wk)?;
            let k = g.reshape(k, &[b, l, dp])?;
            let v = g.matmul(x, wv)?;
            let v = g.reshape(v, &[b, l, dp])?;
            let scores = g.bmm_nt(q, k)?;
            let scores = g.scale(scores, scale)?;
            let weights = g.softmax_masked(scores, mask)?;
            heads.push(g.bmm_nn(weights, v)?);
        }
        let cat = g.concat_last(&heads)?;
        let cat = g.reshape(cat, &[b * l, self.d])?;
        let wo = param_node(g, store, &format!("tim.{blk}.attn.wo"))?;
        Ok(g.matmul(cat, wo)?)
    }

    /// Single-query attention from `query` (`[batch, d]`) over the encoded
    /// sequence, masked to real positions.
    pub fn cross_attention<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        blk: &str,
        query: NodeId,
        enc_out: NodeId,
        seq: &SeqInput,
        cond: Option<&Conditioning>,
    ) -> Result<NodeId, ModelError> {
        let (b, l, dp) = (seq.batch, seq.len, self.head_dim());
        let scale = 1.0 / (dp as f64).sqrt();
        let mut heads = Vec::with_capacity(self.h);
        for i in 0..self.h {
            let wq = self.head_weight(g, store, cond, &format!("tim.{blk}.attn.wq{i}"), &format!("{blk}_attn_q"), i)?;
            let wk = self.head_weight(g, store, cond, &format!("tim.{blk}.attn.wk{i}"), &format!("{blk}_attn_k"), i)?;
            let wv = self.head_weight(g, store, cond, &format!("tim.{blk}.attn.wv{i}"), &format!("{blk}_attn_v"), i)?;
            let q = g.matmul(query, wq)?;
            let q = g.reshape(q, &[b, 1, dp])?;
            let k = g.matmul(enc_out, wk)?;
            let k = g.reshape(k, &[b, l, dp])?;
            let v = g.matmul(enc_out, wv)?;
            let v = g.reshape(v, &[b, l, dp])?;
            let scores = g.bmm_nt(q, k)?;
            let scores = g.scale(scores, scale)?;
            let weights = g.softmax_masked(scores, &seq.attn_mask)?;
            let out = g.bmm_nn(weights, v)?;
            heads.push(out);
        }
        let cat = g.concat_last(&heads)?;
        let cat = g.reshape(cat, &[b, self.d])?;
        let wo = param_node(g, store, &format!("tim.{blk}.attn.wo"))?;
        Ok(g.matmul(cat, wo)?)
    }

    /// Full #query x #key mask for self-attention: a query may attend to
    /// exactly the unmasked key positions of its own row.
    fn self_mask(&self, seq: &SeqInput) -> Vec<bool> {
        let (b, l) = (seq.batch, seq.len);
        let mut mask = vec![false; b * l * l];
        for bi in 0..b {
            for kj in 0..l {
                if seq.attn_mask[bi * l + kj] {
                    for qj in 0..l {
                        mask[bi * l * l + qj * l + kj] = true;
                    }
                }
            }
        }
        mask
    }

    /// Encoder stack: `[batch * len, d]` contextual representations.
    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        seq: &SeqInput,
        cond: Option<&Conditioning>,
    ) -> Result<NodeId, ModelError> {
        let mask = self.self_mask(seq);
        let mut x = seq.x;
        for l in 0..self.enc_layers {
            let blk = format!("enc{l}");
            let attn = self.self_attention_masked(g, store, &blk, x, seq, &mask, cond)?;
            let res = g.add(x, attn)?;
            let y = self.cln(g, store, &blk, "ln1", res, cond)?;
            let f = self.ffn(g, store, &blk, y, cond)?;
            let res2 = g.add(y, f)?;
            x = self.cln(g, store, &blk, "ln2", res2, cond)?;
        }
        Ok(x)
    }

    /// Decoder stack: `[batch, d]` interest vector for the target item.
    pub fn decode<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        target: NodeId,
        enc_out: NodeId,
        seq: &SeqInput,
        cond: Option<&Conditioning>,
    ) -> Result<NodeId, ModelError> {
        let mut q = target;
        for l in 0..self.dec_layers {
            let blk = format!("dec{l}");
            let attn = self.cross_attention(g, store, &blk, q, enc_out, seq, cond)?;
            let res = g.add(q, attn)?;
            let y = self.cln(g, store, &blk, "ln1", res, cond)?;
            let f = self.ffn(g, store, &blk, y, cond)?;
            let res2 = g.add(y, f)?;
            q = self.cln(g, store, &blk, "ln2", res2, cond)?;
        }
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dtrn_tensor::Tensor;
    use rand::SeedableRng;

    fn build(d: usize, h: usize) -> ConditionalTransformer {
        ConditionalTransformer::new(d, h, 2 * d, 1, 1).unwrap()
    }

    fn random_input<T: Real>(g: &mut Graph<T>, rows: usize, d: usize, seed: u64) -> NodeId {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        g.constant(Tensor::uniform(&[rows, d], -1.0, 1.0, &mut rng))
    }

    #[test]
    fn encode_and_decode_shapes() {
        let tf = build(8, 2);
        let mut store: ParamStore<f32> = ParamStore::new();
        tf.register(&mut store, 3).unwrap();
        let mut g: Graph<f32> = Graph::new();
        let x = random_input(&mut g, 3 * 4, 8, 1);
        let seq = SeqInput::new(x, 3, 4, vec![true; 12]).unwrap();
        let enc = tf.encode(&mut g, &store, &seq, None).unwrap();
        assert_eq!(g.value(enc).shape(), &[12, 8]);
        let target = random_input(&mut g, 3, 8, 2);
        let dec = tf.decode(&mut g, &store, target, enc, &seq, None).unwrap();
        assert_eq!(g.value(dec).shape(), &[3, 8]);
    }

    #[test]
    fn indivisible_head_count_rejected() {
        assert!(ConditionalTransformer::new(8, 3, 16, 1, 1).is_err());
    }

    #[test]
    fn empty_row_gets_sentinel() {
        let mut g: Graph<f32> = Graph::new();
        let x = random_input(&mut g, 4, 2, 1);
        let mut mask = vec![true, true, false, false];
        mask[2] = false;
        let seq = SeqInput::new(x, 2, 2, mask).unwrap();
        assert_eq!(seq.empty_rows, vec![false, true]);
        assert_eq!(seq.attn_mask, vec![true, true, true, false]);
        assert!(seq.any_empty());
    }

    #[test]
    fn mask_length_validated() {
        let mut g: Graph<f32> = Graph::new();
        let x = random_input(&mut g, 4, 2, 1);
        assert!(SeqInput::new(x, 2, 2, vec![true; 3]).is_err());
    }

    /// Changing values at masked positions must not move any real output:
    /// real queries put exactly zero attention weight on masked keys.
    #[test]
    fn padded_positions_do_not_leak() {
        let tf = build(4, 2);
        let mut store: ParamStore<f64> = ParamStore::new();
        tf.register(&mut store, 5).unwrap();
        let mask = vec![true, true, false, true, true, true];
        let run = |pad_value: f64| -> (Vec<f64>, Vec<f64>) {
            let mut g: Graph<f64> = Graph::new();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
            let mut t = Tensor::uniform(&[6, 4], -1.0, 1.0, &mut rng);
            for c in 0..4 {
                t.data_mut()[2 * 4 + c] = pad_value;
            }
            let x = g.constant(t);
            let seq = SeqInput::new(x, 2, 3, mask.clone()).unwrap();
            let enc = tf.encode(&mut g, &store, &seq, None).unwrap();
            let target = {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
                g.constant(Tensor::uniform(&[2, 4], -1.0, 1.0, &mut rng))
            };
            let dec = tf.decode(&mut g, &store, target, enc, &seq, None).unwrap();
            (g.value(dec).data().to_vec(), g.value(enc).data().to_vec())
        };
        let (dec_a, enc_a) = run(0.25);
        let (dec_b, enc_b) = run(-7.5);
        assert_eq!(dec_a, dec_b);
        // Real encoder rows match bitwise; only the padded row may differ.
        for r in [0usize, 1, 3, 4, 5] {
            assert_eq!(enc_a[r * 4..(r + 1) * 4], enc_b[r * 4..(r + 1) * 4], "row {r}");
        }
        assert_ne!(enc_a[2 * 4..3 * 4], enc_b[2 * 4..3 * 4]);
    }
}
