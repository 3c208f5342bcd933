//! Checkpoint bundle: the parameter file plus a `<ckpt>.meta` sidecar that
//! carries everything needed to rebuild the model (schema and model config,
//! prefixed `schema.` / `model.`, plus the training seed).

use std::path::{Path, PathBuf};

use dtrn_data::{FeatureSchema, KvFile};
use dtrn_model::{Dtrn, ModelConfig};
use dtrn_tensor::{checkpoint, ParamStore};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn meta_path(ckpt: &Path) -> PathBuf {
    let mut os = ckpt.as_os_str().to_os_string();
    os.push(".meta");
    PathBuf::from(os)
}

/// Hex digest identifying a (schema, model config) pair.
pub fn config_hash(schema: &FeatureSchema, cfg: &ModelConfig) -> String {
    let mut h = Sha256::new();
    h.update(schema.to_kv().render().as_bytes());
    h.update(cfg.to_kv().render().as_bytes());
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_bundle(
    ckpt: &Path,
    store: &ParamStore<f32>,
    schema: &FeatureSchema,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<(), CliError> {
    checkpoint::save(store, ckpt)?;
    let mut meta = KvFile::new();
    for (key, value) in kv_pairs(&schema.to_kv()) {
        push(&mut meta, &format!("schema.{key}"), &value)?;
    }
    for (key, value) in kv_pairs(&cfg.to_kv()) {
        push(&mut meta, &format!("model.{key}"), &value)?;
    }
    push(&mut meta, "train.seed", &seed.to_string())?;
    meta.write(&meta_path(ckpt))?;
    Ok(())
}

pub struct Bundle {
    pub model: Dtrn,
    pub store: ParamStore<f32>,
    pub seed: u64,
    pub config_hash: String,
}

pub fn load_bundle(ckpt: &Path) -> Result<Bundle, CliError> {
    let meta = KvFile::read(&meta_path(ckpt)).map_err(|e| {
        CliError::checkpoint(format!("cannot read sidecar {}: {e}", meta_path(ckpt).display()))
    })?;
    let schema = FeatureSchema::from_kv(&strip_prefix(&meta, "schema.")?)?;
    let cfg = ModelConfig::from_kv(&strip_prefix(&meta, "model.")?)?;
    let seed = meta.require_u64("train.seed")?;
    let hash = config_hash(&schema, &cfg);
    let model = Dtrn::new(schema, cfg)?;
    let mut store = ParamStore::new();
    model.register(&mut store, seed)?;
    checkpoint::load_into(&mut store, ckpt)?;
    Ok(Bundle { model, store, seed, config_hash: hash })
}

fn kv_pairs(kv: &KvFile) -> Vec<(String, String)> {
    kv.keys()
        .map(|k| (k.to_string(), kv.get(k).unwrap().to_string()))
        .collect()
}

fn strip_prefix(kv: &KvFile, prefix: &str) -> Result<KvFile, CliError> {
    let mut out = KvFile::new();
    for (key, value) in kv_pairs(kv) {
        if let Some(rest) = key.strip_prefix(prefix) {
            push(&mut out, rest, &value)?;
        }
    }
    Ok(out)
}

fn push(kv: &mut KvFile, key: &str, value: &str) -> Result<(), CliError> {
    kv.push(key, value)?;
    Ok(())
}
