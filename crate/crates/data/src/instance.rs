//! Instances, dataset files (one JSON object per line), and mini-batching.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::schema::FeatureSchema;

/// One training example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    /// Sparse feature ids, length N.
    pub sparse: Vec<usize>,
    /// Behavior histories, oldest first, length M. Ids are 1-based (0 is pad).
    pub seqs: Vec<Vec<usize>>,
    /// Binary labels, length T.
    pub labels: Vec<u8>,
    /// Id of the candidate item being scored.
    pub target: usize,
}

impl Instance {
    /// Checks ids and labels against the schema. `index` names the offender
    /// in error messages.
    pub fn validate(&self, schema: &FeatureSchema, index: usize) -> Result<(), DataError> {
        let fail = |detail: String| Err(DataError::Instance { index, detail });
        if self.sparse.len() != schema.n_sparse {
            return fail(format!(
                "expected {} sparse ids, got {}",
                schema.n_sparse,
                self.sparse.len()
            ));
        }
        if self.seqs.len() != schema.n_seqs {
            return fail(format!(
                "expected {} sequences, got {}",
                schema.n_seqs,
                self.seqs.len()
            ));
        }
        if self.labels.len() != schema.n_tasks {
            return fail(format!(
                "expected {} labels, got {}",
                schema.n_tasks,
                self.labels.len()
            ));
        }
        for (i, (&id, &k)) in self.sparse.iter().zip(&schema.vocab).enumerate() {
            if id >= k {
                return fail(format!("sparse feature {i}: id {id} out of range (vocab {k})"));
            }
        }
        for (b, (seq, &k)) in self.seqs.iter().zip(&schema.seq_vocab).enumerate() {
            for &id in seq {
                if id == 0 || id >= k {
                    return fail(format!(
                        "sequence {b}: id {id} out of range (pad 0 reserved, vocab {k})"
                    ));
                }
            }
        }
        for (t, &y) in self.labels.iter().enumerate() {
            if y > 1 {
                return fail(format!("label {t}: {y} is not 0/1"));
            }
        }
        // The target is embedded through every sequence vocabulary.
        for (b, &k) in schema.seq_vocab.iter().enumerate() {
            if self.target == 0 || self.target >= k {
                return fail(format!(
                    "target {} out of range for sequence vocab {b} ({k})",
                    self.target
                ));
            }
        }
        Ok(())
    }
}

/// Reads a JSON-lines dataset. Parse errors name the 1-based line.
pub fn read_instances(path: &Path) -> Result<Vec<Instance>, DataError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: Instance = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: i + 1,
            detail: e.to_string(),
        })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn write_instances(path: &Path, instances: &[Instance]) -> Result<(), DataError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for inst in instances {
        // Field order is fixed by the struct, so output is deterministic.
        serde_json::to_writer(&mut w, inst).map_err(|e| DataError::Parse {
            line: 0,
            detail: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Validates every instance against the schema.
pub fn validate_instances(instances: &[Instance], schema: &FeatureSchema) -> Result<(), DataError> {
    for (i, inst) in instances.iter().enumerate() {
        inst.validate(schema, i)?;
    }
    Ok(())
}

/// One behavior sequence across a batch, padded to `max_len`.
///
/// `mask[r * max_len + j]` is true iff position j of row r holds a real id;
/// equivalently iff `j < lengths[r]`. Padded slots hold id 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceBatch {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
}

impl SequenceBatch {
    /// Gathers behavior `b` of each instance. Sequences longer than
    /// `max_len` keep their most recent (last) `max_len` items.
    pub fn build(instances: &[Instance], b: usize, max_len: usize) -> Self {
        let rows = instances.len();
        let mut ids = vec![0usize; rows * max_len];
        let mut mask = vec![false; rows * max_len];
        let mut lengths = Vec::with_capacity(rows);
        for (r, inst) in instances.iter().enumerate() {
            let seq = &inst.seqs[b];
            let keep = seq.len().min(max_len);
            let tail = &seq[seq.len() - keep..];
            for (j, &id) in tail.iter().enumerate() {
                ids[r * max_len + j] = id;
                mask[r * max_len + j] = true;
            }
            lengths.push(keep);
        }
        Self { ids, mask, lengths, max_len }
    }

    pub fn rows(&self) -> usize {
        self.lengths.len()
    }
}

/// A batch of instances in model-ready layout.
#[derive(Clone, Debug)]
pub struct MiniBatch {
    /// One id column per sparse feature, each of length `batch`.
    pub sparse: Vec<Vec<usize>>,
    /// One padded batch per behavior type.
    pub seqs: Vec<SequenceBatch>,
    /// `labels[t][r]` for task t, row r.
    pub labels: Vec<Vec<u8>>,
    /// Target item id per row.
    pub targets: Vec<usize>,
    pub batch: usize,
}

impl MiniBatch {
    /// Instances must already satisfy the schema (see `validate_instances`).
    pub fn build(instances: &[Instance], schema: &FeatureSchema) -> Self {
        let batch = instances.len();
        let sparse = (0..schema.n_sparse)
            .map(|i| instances.iter().map(|inst| inst.sparse[i]).collect())
            .collect();
        let seqs = (0..schema.n_seqs)
            .map(|b| SequenceBatch::build(instances, b, schema.max_len[b]))
            .collect();
        let labels = (0..schema.n_tasks)
            .map(|t| instances.iter().map(|inst| inst.labels[t]).collect())
            .collect();
        let targets = instances.iter().map(|inst| inst.target).collect();
        Self { sparse, seqs, labels, targets, batch }
    }
}
