//! Ablation suites: named model variants trained over a seed list, reported
//! as per-task mean and standard deviation of AUC and LogLoss. The report is
//! a pure function of (suite, seeds): jobs may run in parallel but results
//! are collected in job order and every training run is single-threaded.

use std::path::{Path, PathBuf};

use dtrn_data::{read_instances, validate_instances, FeatureSchema, Instance, KvFile};
use dtrn_model::{Dtrn, HeadKind, ModelConfig, Site};
use dtrn_tensor::ParamStore;
use rayon::prelude::*;

use crate::error::CliError;
use crate::eval::evaluate;
use crate::metrics::TaskMetrics;
use crate::train::{train, TrainConfig};

/// One named configuration: a component selection plus optional overrides,
/// written `name[:key=value]*`, e.g. `dtrn:head=mmoe:site=qkv:drop=1`.
#[derive(Clone, Debug)]
pub struct VariantSpec {
    pub label: String,
    use_tim: bool,
    use_trm: bool,
    head: Option<HeadKind>,
    site: Option<Site>,
    drop_task: Option<usize>,
}

impl VariantSpec {
    pub fn parse(token: &str) -> Result<Self, CliError> {
        let mut parts = token.split(':');
        let name = parts.next().unwrap_or_default();
        let (use_tim, use_trm) = match name {
            "baseline" => (false, false),
            "tim" => (true, false),
            "trm" => (false, true),
            "dtrn" => (true, true),
            other => {
                return Err(CliError::suite(format!(
                    "unknown variant `{other}` (expected baseline|tim|trm|dtrn)"
                )))
            }
        };
        let mut spec = Self {
            label: token.to_string(),
            use_tim,
            use_trm,
            head: None,
            site: None,
            drop_task: None,
        };
        for opt in parts {
            let (key, value) = opt.split_once('=').ok_or_else(|| {
                CliError::suite(format!("variant option `{opt}` is not key=value"))
            })?;
            match key {
                "head" => spec.head = Some(HeadKind::parse(value)?),
                "site" => spec.site = Some(Site::parse(value)?),
                "drop" => {
                    spec.drop_task = Some(value.parse().map_err(|_| {
                        CliError::suite(format!("variant option drop=`{value}` is not a task id"))
                    })?)
                }
                other => {
                    return Err(CliError::suite(format!(
                        "unknown variant option `{other}` (expected head|site|drop)"
                    )))
                }
            }
        }
        Ok(spec)
    }

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        cfg.use_tim = self.use_tim;
        cfg.use_trm = self.use_trm;
        if let Some(h) = self.head {
            cfg.head = h;
        }
        if let Some(s) = self.site {
            cfg.injection_site = s;
        }
        cfg.drop_task = self.drop_task;
        cfg
    }
}

/// Parsed suite file. Data paths are resolved relative to the suite file's
/// directory; model and training keys share the same flat key-value file.
#[derive(Clone, Debug)]
pub struct Suite {
    pub schema: PathBuf,
    pub train_data: PathBuf,
    pub test_data: PathBuf,
    pub variants: Vec<VariantSpec>,
    pub base_model: ModelConfig,
    pub train_cfg: TrainConfig,
}

impl Suite {
    pub fn from_kv(kv: &KvFile, dir: &Path) -> Result<Self, CliError> {
        let resolve = |key: &str| -> Result<PathBuf, CliError> {
            let raw = Path::new(kv.require(key)?).to_path_buf();
            Ok(if raw.is_absolute() { raw } else { dir.join(raw) })
        };
        let tokens = kv.require("variants")?;
        let variants: Vec<VariantSpec> = tokens
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(VariantSpec::parse)
            .collect::<Result<_, _>>()?;
        if variants.is_empty() {
            return Err(CliError::suite("variants list is empty"));
        }
        Ok(Self {
            schema: resolve("schema")?,
            train_data: resolve("train_data")?,
            test_data: resolve("test_data")?,
            variants,
            base_model: ModelConfig::from_kv(kv)?,
            train_cfg: TrainConfig::from_kv(kv)?,
        })
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Self::from_kv(&KvFile::read(path)?, &dir)
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: String,
    pub auc_mean: Vec<f64>,
    pub auc_sd: Vec<f64>,
    pub logloss_mean: Vec<f64>,
    pub logloss_sd: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub tasks: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant");
        for t in 0..self.tasks {
            out.push_str(&format!(
                ",auc{t}_mean,auc{t}_sd,logloss{t}_mean,logloss{t}_sd"
            ));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.variant);
            for t in 0..self.tasks {
                out.push_str(&format!(
                    ",{},{},{},{}",
                    row.auc_mean[t], row.auc_sd[t], row.logloss_mean[t], row.logloss_sd[t]
                ));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains one variant with one seed and evaluates it on the test split.
fn run_job(
    schema: &FeatureSchema,
    suite: &Suite,
    variant: &VariantSpec,
    seed: u64,
    train_set: &[Instance],
    test_set: &[Instance],
) -> Result<Vec<TaskMetrics>, CliError> {
    let cfg = variant.apply(&suite.base_model);
    let model = Dtrn::new(schema.clone(), cfg)?;
    let mut store: ParamStore<f32> = ParamStore::new();
    model.register(&mut store, seed)?;
    let tc = TrainConfig { seed, ..suite.train_cfg.clone() };
    train(&model, &mut store, train_set, &tc)?;
    evaluate(&model, &store, test_set, suite.train_cfg.batch_size)
}

pub fn run_suite(suite: &Suite, seeds: &[u64]) -> Result<AblationReport, CliError> {
    if seeds.is_empty() {
        return Err(CliError::suite("need at least one seed"));
    }
    let schema = FeatureSchema::read(&suite.schema)?;
    let train_set = read_instances(&suite.train_data)?;
    validate_instances(&train_set, &schema)?;
    let test_set = read_instances(&suite.test_data)?;
    validate_instances(&test_set, &schema)?;

    let jobs: Vec<(usize, u64)> = suite
        .variants
        .iter()
        .enumerate()
        .flat_map(|(vi, _)| seeds.iter().map(move |&s| (vi, s)))
        .collect();
    let results: Vec<Vec<TaskMetrics>> = jobs
        .par_iter()
        .map(|&(vi, seed)| run_job(&schema, suite, &suite.variants[vi], seed, &train_set, &test_set))
        .collect::<Result<_, _>>()?;

    let n_seeds = seeds.len();
    let rows = suite
        .variants
        .iter()
        .enumerate()
        .map(|(vi, v)| {
            let runs = &results[vi * n_seeds..(vi + 1) * n_seeds];
            let mut row = AblationRow {
                variant: v.label.clone(),
                auc_mean: Vec::new(),
                auc_sd: Vec::new(),
                logloss_mean: Vec::new(),
                logloss_sd: Vec::new(),
            };
            for t in 0..schema.n_tasks {
                let aucs: Vec<f64> = runs.iter().map(|r| r[t].auc).collect();
                let lls: Vec<f64> = runs.iter().map(|r| r[t].logloss).collect();
                let (am, asd) = mean_sd(&aucs);
                let (lm, lsd) = mean_sd(&lls);
                row.auc_mean.push(am);
                row.auc_sd.push(asd);
                row.logloss_mean.push(lm);
                row.logloss_sd.push(lsd);
            }
            row
        })
        .collect();
    Ok(AblationReport { tasks: schema.n_tasks, rows })
}

/// Mean and sample standard deviation (zero for a single value).
fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_grammar() {
        let v = VariantSpec::parse("dtrn:head=mmoe:site=qkv:drop=1").unwrap();
        let cfg = v.apply(&ModelConfig::default());
        assert!(cfg.use_tim && cfg.use_trm);
        assert_eq!(cfg.head, HeadKind::Mmoe);
        assert_eq!(cfg.injection_site, Site::Qkv);
        assert_eq!(cfg.drop_task, Some(1));

        let b = VariantSpec::parse("baseline").unwrap().apply(&ModelConfig::default());
        assert!(!b.use_tim && !b.use_trm);
        let t = VariantSpec::parse("tim").unwrap().apply(&ModelConfig::default());
        assert!(t.use_tim && !t.use_trm);
        let r = VariantSpec::parse("trm").unwrap().apply(&ModelConfig::default());
        assert!(!r.use_tim && r.use_trm);
    }

    #[test]
    fn unknown_variants_and_options_are_rejected() {
        assert!(VariantSpec::parse("everything").is_err());
        assert!(VariantSpec::parse("dtrn:speed=11").is_err());
        assert!(VariantSpec::parse("dtrn:drop=soon").is_err());
        assert!(VariantSpec::parse("dtrn:head").is_err());
    }

    #[test]
    fn suite_requires_variants_and_resolves_paths() {
        let kv = KvFile::parse(
            "schema=schema.kv\ntrain_data=train.jsonl\ntest_data=test.jsonl\nvariants=baseline,dtrn\nlr=0.01\n",
        )
        .unwrap();
        let suite = Suite::from_kv(&kv, Path::new("/tmp/suitedir")).unwrap();
        assert_eq!(suite.schema, Path::new("/tmp/suitedir/schema.kv"));
        assert_eq!(suite.variants.len(), 2);
        assert_eq!(suite.train_cfg.lr, 0.01);

        let empty = KvFile::parse(
            "schema=s\ntrain_data=a\ntest_data=b\nvariants=\n",
        )
        .unwrap();
        assert!(Suite::from_kv(&empty, Path::new(".")).is_err());
    }

    #[test]
    fn mean_sd_matches_hand_computation() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // Sample variance of 1..4 is 5/3.
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let (m1, s1) = mean_sd(&[7.0]);
        assert_eq!((m1, s1), (7.0, 0.0));
    }
}
