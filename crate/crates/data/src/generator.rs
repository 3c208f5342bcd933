//! Seeded synthetic-world generator.
//!
//! A latent factor space of dimension k holds user vectors, item vectors,
//! and one unit direction per task whose pairwise cosines are prescribed by
//! the task-conflict matrix C (Gram factorization, exact up to roundoff).
//! Behavior histories are drawn with item probability proportional to
//! exp(affinity) along a behavior-mixed direction, and labels are Bernoulli
//! draws of a sigmoid score that couples the user-item affinity along the
//! task direction with history/target overlap counts weighted by A[t][b].
//! Every instance consumes only its own RNG substream derived from
//! (seed, split, index), so output is independent of generation order.

use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};

use crate::error::DataError;
use crate::instance::{write_instances, Instance};
use crate::kv::{join_f64, join_usize, KvFile};
use crate::schema::FeatureSchema;

/// Substream index 0 builds the latent world; instances start at 1.
const WORLD_STREAM: u64 = 0;
const TRAIN_STREAM_BASE: u64 = 1;
const TEST_STREAM_BASE: u64 = 1 << 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Full description of a synthetic dataset. Matrix keys are one row per
/// line: `task_behavior_weights_<t>` (length M) and `task_conflict_<t>`
/// (length T).
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub n_tasks: usize,
    pub n_seqs: usize,
    /// Sparse feature count; feature 0 is the user id, feature 1 the target
    /// item id, the rest uninformative noise ids.
    pub n_sparse: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub latent_dim: usize,
    pub n_instances: usize,
    pub n_test_instances: usize,
    pub seed: u64,
    /// Embedding dimension recorded in the emitted schema.
    pub dim: usize,
    /// Poisson mean of each behavior's history length, length M.
    pub seq_length_means: Vec<f64>,
    /// Batch-time cap per behavior recorded in the schema, length M.
    pub max_lens: Vec<usize>,
    /// Additive per-task score offset, length T. Large negative values make
    /// a task sparse.
    pub task_bias: Vec<f64>,
    /// Cardinality of each noise sparse feature.
    pub noise_vocab: usize,
    /// A, T rows of length M.
    pub task_behavior_weights: Vec<Vec<f64>>,
    /// C, T rows of length T: requested cosines between task directions.
    pub task_conflict: Vec<Vec<f64>>,
}

impl GeneratorConfig {
    pub fn from_kv(kv: &KvFile) -> Result<Self, DataError> {
        let n_tasks = kv.require_usize("n_tasks")?;
        let n_seqs = kv.require_usize("n_seqs")?;
        let cfg = Self {
            n_tasks,
            n_seqs,
            n_sparse: kv.opt_usize("n_sparse", 2)?,
            n_users: kv.require_usize("n_users")?,
            n_items: kv.require_usize("n_items")?,
            latent_dim: kv.require_usize("latent_dim")?,
            n_instances: kv.require_usize("n_instances")?,
            n_test_instances: kv.opt_usize("n_test_instances", 0)?,
            seed: kv.require_u64("seed")?,
            dim: kv.require_usize("dim")?,
            seq_length_means: kv.require_f64_list("seq_length_means")?,
            max_lens: kv.require_usize_list("max_lens")?,
            task_bias: match kv.get("task_bias") {
                Some(_) => kv.require_f64_list("task_bias")?,
                None => vec![0.0; n_tasks],
            },
            noise_vocab: kv.opt_usize("noise_vocab", 50)?,
            task_behavior_weights: matrix_rows(kv, "task_behavior_weights", n_tasks, n_seqs)?,
            task_conflict: matrix_rows(kv, "task_conflict", n_tasks, n_tasks)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        Self::from_kv(&KvFile::read(path)?)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.push("n_tasks", self.n_tasks).unwrap();
        kv.push("n_seqs", self.n_seqs).unwrap();
        kv.push("n_sparse", self.n_sparse).unwrap();
        kv.push("n_users", self.n_users).unwrap();
        kv.push("n_items", self.n_items).unwrap();
        kv.push("latent_dim", self.latent_dim).unwrap();
        kv.push("n_instances", self.n_instances).unwrap();
        kv.push("n_test_instances", self.n_test_instances).unwrap();
        kv.push("seed", self.seed).unwrap();
        kv.push("dim", self.dim).unwrap();
        kv.push("seq_length_means", join_f64(&self.seq_length_means)).unwrap();
        kv.push("max_lens", join_usize(&self.max_lens)).unwrap();
        kv.push("task_bias", join_f64(&self.task_bias)).unwrap();
        kv.push("noise_vocab", self.noise_vocab).unwrap();
        for (t, row) in self.task_behavior_weights.iter().enumerate() {
            kv.push(&format!("task_behavior_weights_{t}"), join_f64(row)).unwrap();
        }
        for (t, row) in self.task_conflict.iter().enumerate() {
            kv.push(&format!("task_conflict_{t}"), join_f64(row)).unwrap();
        }
        kv
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let config = |detail: String| Err(DataError::Config { detail });
        if self.n_tasks == 0 || self.n_seqs == 0 {
            return config("need at least one task and one behavior".into());
        }
        if self.n_sparse < 2 {
            return config("n_sparse must be >= 2 (user id and target id)".into());
        }
        if self.n_users == 0 || self.n_items == 0 || self.noise_vocab == 0 {
            return config("vocabulary sizes must be positive".into());
        }
        if self.dim == 0 || self.n_instances == 0 {
            return config("dim and n_instances must be positive".into());
        }
        if self.latent_dim < self.n_tasks {
            return config(format!(
                "latent_dim {} cannot hold {} task directions (need latent_dim >= n_tasks)",
                self.latent_dim, self.n_tasks
            ));
        }
        if self.seq_length_means.len() != self.n_seqs || self.max_lens.len() != self.n_seqs {
            return config("seq_length_means and max_lens need one entry per behavior".into());
        }
        if self.seq_length_means.iter().any(|&m| !m.is_finite() || m < 0.0) {
            return config("seq_length_means must be finite and >= 0".into());
        }
        if self.max_lens.iter().any(|&l| l == 0) {
            return config("max_lens entries must be positive".into());
        }
        if self.task_bias.len() != self.n_tasks {
            return config("task_bias needs one entry per task".into());
        }
        if self.task_bias.iter().any(|b| !b.is_finite()) {
            return config("task_bias must be finite".into());
        }
        for (t, row) in self.task_behavior_weights.iter().enumerate() {
            if row.len() != self.n_seqs {
                return config(format!("task_behavior_weights_{t} needs {} entries", self.n_seqs));
            }
            if row.iter().any(|a| !a.is_finite()) {
                return config(format!("task_behavior_weights_{t} must be finite"));
            }
        }
        if self.task_behavior_weights.len() != self.n_tasks {
            return config("task_behavior_weights needs one row per task".into());
        }
        if self.task_conflict.len() != self.n_tasks {
            return config("task_conflict needs one row per task".into());
        }
        for (t, row) in self.task_conflict.iter().enumerate() {
            if row.len() != self.n_tasks {
                return config(format!("task_conflict_{t} needs {} entries", self.n_tasks));
            }
            if (row[t] - 1.0).abs() > 1e-9 {
                return config(format!("task_conflict diagonal entry {t} must be 1"));
            }
            for (s, &c) in row.iter().enumerate() {
                if !c.is_finite() || (c - self.task_conflict[s][t]).abs() > 1e-9 {
                    return config("task_conflict must be finite and symmetric".into());
                }
            }
        }
        Ok(())
    }

    /// The schema the generated files follow.
    pub fn schema(&self) -> FeatureSchema {
        let mut vocab = vec![self.n_users, self.n_items + 1];
        vocab.extend(std::iter::repeat(self.noise_vocab).take(self.n_sparse - 2));
        FeatureSchema {
            n_sparse: self.n_sparse,
            n_seqs: self.n_seqs,
            n_tasks: self.n_tasks,
            vocab,
            // Item ids are 1..=n_items in every behavior vocabulary; 0 pads.
            seq_vocab: vec![self.n_items + 1; self.n_seqs],
            max_len: self.max_lens.clone(),
            dim: self.dim,
        }
    }
}

fn matrix_rows(
    kv: &KvFile,
    prefix: &str,
    rows: usize,
    _cols: usize,
) -> Result<Vec<Vec<f64>>, DataError> {
    (0..rows)
        .map(|t| kv.require_f64_list(&format!("{prefix}_{t}")))
        .collect()
}

/// Latent factors behind a dataset. Row-major `n x k` storage.
#[derive(Clone, Debug)]
pub struct LatentWorld {
    pub user_factors: Vec<f64>,
    pub item_factors: Vec<f64>,
    /// T rows; row t has unit norm and `dot(row s, row t) == C[s][t]`.
    pub task_directions: Vec<f64>,
    pub latent_dim: usize,
}

impl LatentWorld {
    /// Deterministic build from the config seed (substream 0).
    pub fn build(cfg: &GeneratorConfig) -> Result<Self, DataError> {
        cfg.validate()?;
        let k = cfg.latent_dim;
        let chol = cholesky(&cfg.task_conflict).ok_or_else(|| DataError::Config {
            detail: "task_conflict is not a positive-definite cosine matrix".into(),
        })?;
        let mut task_directions = vec![0.0; cfg.n_tasks * k];
        for t in 0..cfg.n_tasks {
            task_directions[t * k..t * k + cfg.n_tasks].copy_from_slice(&chol[t]);
        }
        let mut rng = dtrn_tensor::stream_rng(cfg.seed, WORLD_STREAM);
        let normal = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n).map(|_| StandardNormal.sample(rng)).collect()
        };
        let user_factors = normal(&mut rng, cfg.n_users * k);
        let item_factors = normal(&mut rng, cfg.n_items * k);
        Ok(Self { user_factors, item_factors, task_directions, latent_dim: k })
    }

    fn user(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.latent_dim..(u + 1) * self.latent_dim]
    }

    /// Item ids are 1-based; row of the item behind id `id`.
    fn item(&self, id: usize) -> &[f64] {
        let i = id - 1;
        &self.item_factors[i * self.latent_dim..(i + 1) * self.latent_dim]
    }

    fn direction(&self, t: usize) -> &[f64] {
        &self.task_directions[t * self.latent_dim..(t + 1) * self.latent_dim]
    }

    /// Mixed direction steering behavior b: sum over tasks of A[t][b] * dir_t.
    fn behavior_direction(&self, cfg: &GeneratorConfig, b: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.latent_dim];
        for t in 0..cfg.n_tasks {
            let a = cfg.task_behavior_weights[t][b];
            for (wj, dj) in w.iter_mut().zip(self.direction(t)) {
                *wj += a * dj;
            }
        }
        w
    }

    /// Pre-sigmoid label score for task t given target and full histories.
    pub fn score(
        &self,
        cfg: &GeneratorConfig,
        user: usize,
        target: usize,
        seqs: &[Vec<usize>],
        t: usize,
    ) -> f64 {
        let u = self.user(user);
        let v = self.item(target);
        let dir = self.direction(t);
        let mut s = cfg.task_bias[t];
        for j in 0..self.latent_dim {
            s += u[j] * dir[j] * v[j];
        }
        for (b, seq) in seqs.iter().enumerate() {
            let count = seq.iter().filter(|&&id| id == target).count() as f64;
            s += cfg.task_behavior_weights[t][b] * count;
        }
        s
    }

    /// Softmax weights over items along `u (.) w`; uniform when w is zero.
    fn item_weights(&self, cfg: &GeneratorConfig, user: usize, w: &[f64]) -> Vec<f64> {
        let u = self.user(user);
        let uw: Vec<f64> = u.iter().zip(w).map(|(a, b)| a * b).collect();
        let mut logits = Vec::with_capacity(cfg.n_items);
        for i in 0..cfg.n_items {
            let row = &self.item_factors[i * self.latent_dim..(i + 1) * self.latent_dim];
            logits.push(uw.iter().zip(row).map(|(a, b)| a * b).sum::<f64>());
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        logits.iter().map(|&l| (l - max).exp()).collect()
    }
}

fn cholesky(c: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = c.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = c[i][j];
            for p in 0..j {
                sum -= l[i][p] * l[j][p];
            }
            if i == j {
                // A tiny pivot means (near-)duplicate directions; reject.
                if sum <= 1e-10 {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

/// Draws the instances of one split together with each instance's per-task
/// positive probability (the sigmoid scores the labels were drawn from).
pub fn generate_split(
    cfg: &GeneratorConfig,
    world: &LatentWorld,
    split: Split,
) -> (Vec<Instance>, Vec<Vec<f64>>) {
    let (base, count) = match split {
        Split::Train => (TRAIN_STREAM_BASE, cfg.n_instances),
        Split::Test => (TEST_STREAM_BASE, cfg.n_test_instances),
    };
    let behavior_dirs: Vec<Vec<f64>> =
        (0..cfg.n_seqs).map(|b| world.behavior_direction(cfg, b)).collect();
    // Targets are drawn along the mean behavior direction so that history
    // overlap actually occurs at desk scale.
    let mut target_dir = vec![0.0; cfg.latent_dim];
    for w in &behavior_dirs {
        for (tj, wj) in target_dir.iter_mut().zip(w) {
            *tj += wj / cfg.n_seqs as f64;
        }
    }
    let mut instances = Vec::with_capacity(count);
    let mut probs = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = dtrn_tensor::stream_rng(cfg.seed, base + i as u64);
        let user = rng.gen_range(0..cfg.n_users);
        let mut sparse = vec![user, 0];
        for _ in 2..cfg.n_sparse {
            sparse.push(rng.gen_range(0..cfg.noise_vocab));
        }
        let target_weights = world.item_weights(cfg, user, &target_dir);
        let target = 1 + WeightedIndex::new(&target_weights).unwrap().sample(&mut rng);
        sparse[1] = target;
        let mut seqs = Vec::with_capacity(cfg.n_seqs);
        for b in 0..cfg.n_seqs {
            let mean = cfg.seq_length_means[b];
            let len = if mean > 0.0 {
                Poisson::new(mean).unwrap().sample(&mut rng) as usize
            } else {
                0
            };
            let mut seq = Vec::with_capacity(len);
            if len > 0 {
                let weights = world.item_weights(cfg, user, &behavior_dirs[b]);
                let dist = WeightedIndex::new(&weights).unwrap();
                for _ in 0..len {
                    seq.push(1 + dist.sample(&mut rng));
                }
            }
            seqs.push(seq);
        }
        let mut labels = Vec::with_capacity(cfg.n_tasks);
        let mut p_row = Vec::with_capacity(cfg.n_tasks);
        for t in 0..cfg.n_tasks {
            let p = sigmoid(world.score(cfg, user, target, &seqs, t));
            labels.push(u8::from(rng.gen::<f64>() < p));
            p_row.push(p);
        }
        instances.push(Instance { sparse, seqs, labels, target });
        probs.push(p_row);
    }
    (instances, probs)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
pub struct GenerateOutput {
    pub schema_path: PathBuf,
    pub train_path: PathBuf,
    pub test_path: Option<PathBuf>,
}

/// Generates schema + train split (+ test split when requested) into `out`.
pub fn generate(cfg: &GeneratorConfig, out: &Path) -> Result<GenerateOutput, DataError> {
    let world = LatentWorld::build(cfg)?;
    std::fs::create_dir_all(out)?;
    let schema_path = out.join("schema.kv");
    cfg.schema().write(&schema_path)?;
    let train_path = out.join("train.jsonl");
    let (train, _) = generate_split(cfg, &world, Split::Train);
    write_instances(&train_path, &train)?;
    let test_path = if cfg.n_test_instances > 0 {
        let path = out.join("test.jsonl");
        let (test, _) = generate_split(cfg, &world, Split::Test);
        write_instances(&path, &test)?;
        Some(path)
    } else {
        None
    };
    Ok(GenerateOutput { schema_path, train_path, test_path })
}
