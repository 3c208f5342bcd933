//! Feature schema: the contract between a dataset file and a model.

use std::path::Path;

use crate::error::DataError;
use crate::kv::KvFile;

/// Shapes of everything the embedding layer must provide.
///
/// Invariants (checked by `validate`): every cardinality is at least 1,
/// `dim >= 1`, `n_tasks >= 1`, `n_seqs >= 1`, every `max_len >= 1`.
/// Sequence id 0 is the reserved pad index in every sequence vocabulary;
/// real item ids start at 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSchema {
    /// Count of sparse id features (N).
    pub n_sparse: usize,
    /// Count of behavior-sequence types (M).
    pub n_seqs: usize,
    /// Count of tasks (T).
    pub n_tasks: usize,
    /// Cardinality of each sparse feature, length `n_sparse`.
    pub vocab: Vec<usize>,
    /// Cardinality of each sequence vocabulary (pad row included), length `n_seqs`.
    pub seq_vocab: Vec<usize>,
    /// Batch-time length cap per sequence type, length `n_seqs`.
    pub max_len: Vec<usize>,
    /// Embedding dimension d.
    pub dim: usize,
}

impl FeatureSchema {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |key: &str, detail: &str| {
            Err(DataError::BadValue {
                key: key.into(),
                detail: detail.into(),
            })
        };
        if self.n_sparse == 0 {
            return bad("n_sparse", "need at least one sparse feature");
        }
        if self.n_seqs == 0 {
            return bad("n_seqs", "need at least one behavior sequence");
        }
        if self.n_tasks == 0 {
            return bad("n_tasks", "need at least one task");
        }
        if self.dim == 0 {
            return bad("dim", "embedding dimension must be positive");
        }
        if self.vocab.len() != self.n_sparse {
            return bad("vocab", "one entry per sparse feature required");
        }
        if self.seq_vocab.len() != self.n_seqs || self.max_len.len() != self.n_seqs {
            return bad("seq_vocab", "one entry per sequence type required");
        }
        if let Some(i) = self.vocab.iter().position(|&k| k == 0) {
            return bad(&format!("vocab_{i}"), "cardinality must be positive");
        }
        // Pad row 0 plus at least one real id.
        if let Some(i) = self.seq_vocab.iter().position(|&k| k < 2) {
            return bad(&format!("seq_vocab_{i}"), "need pad row plus one real id");
        }
        if let Some(i) = self.max_len.iter().position(|&l| l == 0) {
            return bad(&format!("max_len_{i}"), "max_len must be positive");
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self, DataError> {
        let n_sparse = kv.require_usize("n_sparse")?;
        let n_seqs = kv.require_usize("n_seqs")?;
        let schema = Self {
            n_sparse,
            n_seqs,
            n_tasks: kv.require_usize("n_tasks")?,
            vocab: indexed(kv, "vocab", n_sparse)?,
            seq_vocab: indexed(kv, "seq_vocab", n_seqs)?,
            max_len: indexed(kv, "max_len", n_seqs)?,
            dim: kv.require_usize("dim")?,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.push("n_sparse", self.n_sparse).unwrap();
        kv.push("n_seqs", self.n_seqs).unwrap();
        kv.push("n_tasks", self.n_tasks).unwrap();
        kv.push("dim", self.dim).unwrap();
        for (i, k) in self.vocab.iter().enumerate() {
            kv.push(&format!("vocab_{i}"), k).unwrap();
        }
        for (i, k) in self.seq_vocab.iter().enumerate() {
            kv.push(&format!("seq_vocab_{i}"), k).unwrap();
        }
        for (i, l) in self.max_len.iter().enumerate() {
            kv.push(&format!("max_len_{i}"), l).unwrap();
        }
        kv
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        Self::from_kv(&KvFile::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        self.to_kv().write(path)
    }
}

fn indexed(kv: &KvFile, prefix: &str, n: usize) -> Result<Vec<usize>, DataError> {
    (0..n)
        .map(|i| kv.require_usize(&format!("{prefix}_{i}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureSchema {
        FeatureSchema {
            n_sparse: 2,
            n_seqs: 2,
            n_tasks: 3,
            vocab: vec![10, 21],
            seq_vocab: vec![21, 21],
            max_len: vec![5, 4],
            dim: 8,
        }
    }

    #[test]
    fn kv_round_trip() {
        let schema = sample();
        let text = schema.to_kv().render();
        assert_eq!(FeatureSchema::from_kv(&KvFile::parse(&text).unwrap()).unwrap(), schema);
    }

    #[test]
    fn missing_indexed_key_is_named() {
        let mut kv = sample().to_kv();
        let text = kv.render().replace("max_len_1=4\n", "");
        kv = KvFile::parse(&text).unwrap();
        let err = FeatureSchema::from_kv(&kv).unwrap_err();
        assert!(err.to_string().contains("max_len_1"), "{err}");
    }

    #[test]
    fn zero_dim_rejected() {
        let mut schema = sample();
        schema.dim = 0;
        assert!(schema.validate().is_err());
    }

    #[test]
    fn seq_vocab_must_cover_pad_and_one_id() {
        let mut schema = sample();
        schema.seq_vocab[1] = 1;
        let err = schema.validate().unwrap_err();
        assert!(err.to_string().contains("seq_vocab_1"), "{err}");
    }

    #[test]
    fn zero_max_len_rejected() {
        let mut schema = sample();
        schema.max_len[0] = 0;
        assert!(schema.validate().is_err());
    }
}
