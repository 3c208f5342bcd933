//! Model configuration: architecture knobs plus the ablation switches.

use std::path::Path;

use dtrn_data::{FeatureSchema, KvFile};

use crate::error::ModelError;

/// Where the hypernetwork's conditional information enters the Transformer.
/// `Ln` is the primary design (conditional layer normalization); the other
/// three modulate the named weights through `W (.) (1 + delta)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Site {
    Ln,
    Qkv,
    Ffn1,
    Ffn2,
}

impl Site {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        match text {
            "ln" => Ok(Site::Ln),
            "qkv" => Ok(Site::Qkv),
            "ffn1" => Ok(Site::Ffn1),
            "ffn2" => Ok(Site::Ffn2),
            other => Err(ModelError::config(format!(
                "unknown injection_site `{other}` (expected ln|qkv|ffn1|ffn2)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Site::Ln => "ln",
            Site::Qkv => "qkv",
            Site::Ffn1 => "ffn1",
            Site::Ffn2 => "ffn2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    ShareBottom,
    Mmoe,
    Ple,
    Aitm,
}

impl HeadKind {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        match text {
            "share_bottom" => Ok(HeadKind::ShareBottom),
            "mmoe" => Ok(HeadKind::Mmoe),
            "ple" => Ok(HeadKind::Ple),
            "aitm" => Ok(HeadKind::Aitm),
            other => Err(ModelError::config(format!(
                "unknown head `{other}` (expected share_bottom|mmoe|ple|aitm)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::ShareBottom => "share_bottom",
            HeadKind::Mmoe => "mmoe",
            HeadKind::Ple => "ple",
            HeadKind::Aitm => "aitm",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Attention head count h; must divide the embedding dimension.
    pub heads: usize,
    /// FFN hidden width d_f.
    pub d_f: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Hypernetwork hidden width; `None` resolves to 2d.
    pub hyper_hidden: Option<usize>,
    pub injection_site: Site,
    /// Refinement-gate hidden width; `None` resolves to max(1, D/4).
    pub trm_hidden: Option<usize>,
    pub head: HeadKind,
    pub n_experts: usize,
    pub expert_hidden: usize,
    pub tower_hidden: usize,
    /// Task chains for the aitm head, e.g. `0>1;0>2>3`. Empty string means
    /// the natural chain 0>1>...>T-1.
    pub aitm_chains: String,
    /// Conditioned interest extraction on/off (off = one shared interest per
    /// behavior, the unconditioned baseline bottom).
    pub use_tim: bool,
    /// Per-task refinement gate on/off.
    pub use_trm: bool,
    /// Remove one task: its loss term is dropped and its tower untrained.
    pub drop_task: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            heads: 2,
            d_f: 32,
            enc_layers: 1,
            dec_layers: 1,
            hyper_hidden: None,
            injection_site: Site::Ln,
            trm_hidden: None,
            head: HeadKind::ShareBottom,
            n_experts: 3,
            expert_hidden: 32,
            tower_hidden: 16,
            aitm_chains: String::new(),
            use_tim: true,
            use_trm: true,
            drop_task: None,
        }
    }
}

impl ModelConfig {
    pub fn from_kv(kv: &KvFile) -> Result<Self, ModelError> {
        let d = Self::default();
        let cfg = Self {
            heads: kv.opt_usize("heads", d.heads)?,
            d_f: kv.opt_usize("d_f", d.d_f)?,
            enc_layers: kv.opt_usize("enc_layers", d.enc_layers)?,
            dec_layers: kv.opt_usize("dec_layers", d.dec_layers)?,
            hyper_hidden: match kv.get("hyper_hidden") {
                Some(_) => Some(kv.require_usize("hyper_hidden")?),
                None => None,
            },
            injection_site: Site::parse(&kv.opt_str("injection_site", "ln"))?,
            trm_hidden: match kv.get("trm_hidden") {
                Some(_) => Some(kv.require_usize("trm_hidden")?),
                None => None,
            },
            head: HeadKind::parse(&kv.opt_str("head", "share_bottom"))?,
            n_experts: kv.opt_usize("n_experts", d.n_experts)?,
            expert_hidden: kv.opt_usize("expert_hidden", d.expert_hidden)?,
            tower_hidden: kv.opt_usize("tower_hidden", d.tower_hidden)?,
            aitm_chains: kv.opt_str("aitm_chains", ""),
            use_tim: parse_bool(kv, "use_tim", true)?,
            use_trm: parse_bool(kv, "use_trm", true)?,
            drop_task: match kv.get("drop_task") {
                Some(_) => Some(kv.require_usize("drop_task")?),
                None => None,
            },
        };
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self, ModelError> {
        Self::from_kv(&KvFile::read(path)?)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.push("heads", self.heads).unwrap();
        kv.push("d_f", self.d_f).unwrap();
        kv.push("enc_layers", self.enc_layers).unwrap();
        kv.push("dec_layers", self.dec_layers).unwrap();
        if let Some(h) = self.hyper_hidden {
            kv.push("hyper_hidden", h).unwrap();
        }
        kv.push("injection_site", self.injection_site.name()).unwrap();
        if let Some(h) = self.trm_hidden {
            kv.push("trm_hidden", h).unwrap();
        }
        kv.push("head", self.head.name()).unwrap();
        kv.push("n_experts", self.n_experts).unwrap();
        kv.push("expert_hidden", self.expert_hidden).unwrap();
        kv.push("tower_hidden", self.tower_hidden).unwrap();
        if !self.aitm_chains.is_empty() {
            kv.push("aitm_chains", &self.aitm_chains).unwrap();
        }
        kv.push("use_tim", self.use_tim).unwrap();
        kv.push("use_trm", self.use_trm).unwrap();
        if let Some(t) = self.drop_task {
            kv.push("drop_task", t).unwrap();
        }
        kv
    }

    /// Checks compatibility with a schema and resolves derived quantities.
    pub fn validate(&self, schema: &FeatureSchema) -> Result<(), ModelError> {
        schema.validate()?;
        if self.heads == 0 || schema.dim % self.heads != 0 {
            return Err(ModelError::config(format!(
                "heads {} must divide embedding dim {}",
                self.heads, schema.dim
            )));
        }
        if self.d_f == 0 || self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(ModelError::config("d_f, enc_layers, dec_layers must be positive"));
        }
        if self.hyper_hidden == Some(0) || self.trm_hidden == Some(0) {
            return Err(ModelError::config("hidden widths must be positive"));
        }
        if matches!(self.head, HeadKind::Mmoe | HeadKind::Ple) && self.n_experts == 0 {
            return Err(ModelError::config("n_experts must be >= 1"));
        }
        if self.expert_hidden == 0 || self.tower_hidden == 0 {
            return Err(ModelError::config("expert_hidden and tower_hidden must be positive"));
        }
        if let Some(t) = self.drop_task {
            if t >= schema.n_tasks {
                return Err(ModelError::config(format!(
                    "drop_task {t} out of range for {} tasks",
                    schema.n_tasks
                )));
            }
        }
        if self.head == HeadKind::Aitm {
            self.aitm_parents(schema.n_tasks)?;
        }
        Ok(())
    }

    pub fn resolved_hyper_hidden(&self, d: usize) -> usize {
        self.hyper_hidden.unwrap_or(2 * d)
    }

    pub fn resolved_trm_hidden(&self, bottom_width: usize) -> usize {
        self.trm_hidden.unwrap_or_else(|| (bottom_width / 4).max(1))
    }

    /// Parses the aitm chains into a parent-per-task table. Every task has
    /// at most one predecessor and the edges must form a forest.
    pub fn aitm_parents(&self, n_tasks: usize) -> Result<Vec<Option<usize>>, ModelError> {
        let spec = if self.aitm_chains.is_empty() {
            (0..n_tasks).map(|t| t.to_string()).collect::<Vec<_>>().join(">")
        } else {
            self.aitm_chains.clone()
        };
        let mut parent: Vec<Option<usize>> = vec![None; n_tasks];
        for chain in spec.split(';') {
            let ids: Vec<usize> = chain
                .split('>')
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|_| {
                        ModelError::config(format!("aitm_chains: bad task id `{}`", s.trim()))
                    })
                })
                .collect::<Result<_, _>>()?;
            for pair in ids.windows(2) {
                let (p, c) = (pair[0], pair[1]);
                if p >= n_tasks || c >= n_tasks {
                    return Err(ModelError::config(format!(
                        "aitm_chains: task id out of range in `{chain}`"
                    )));
                }
                match parent[c] {
                    None => parent[c] = Some(p),
                    Some(prev) if prev == p => {}
                    Some(prev) => {
                        return Err(ModelError::config(format!(
                            "aitm_chains: task {c} has two predecessors ({prev} and {p})"
                        )))
                    }
                }
            }
        }
        // Reject cycles by walking each task's ancestor path.
        for start in 0..n_tasks {
            let mut slow = start;
            let mut steps = 0;
            while let Some(p) = parent[slow] {
                slow = p;
                steps += 1;
                if steps > n_tasks {
                    return Err(ModelError::config("aitm_chains: cycle detected"));
                }
            }
        }
        Ok(parent)
    }

    /// Task evaluation order such that predecessors come first.
    pub fn aitm_order(&self, n_tasks: usize) -> Result<Vec<usize>, ModelError> {
        let parent = self.aitm_parents(n_tasks)?;
        let mut order = Vec::with_capacity(n_tasks);
        let mut placed = vec![false; n_tasks];
        while order.len() < n_tasks {
            let before = order.len();
            for t in 0..n_tasks {
                if !placed[t] && parent[t].map_or(true, |p| placed[p]) {
                    placed[t] = true;
                    order.push(t);
                }
            }
            if order.len() == before {
                return Err(ModelError::config("aitm_chains: cycle detected"));
            }
        }
        Ok(order)
    }
}

fn parse_bool(kv: &KvFile, key: &str, default: bool) -> Result<bool, ModelError> {
    match kv.get(key) {
        None => Ok(default),
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        Some(other) => Err(ModelError::config(format!(
            "key `{key}`: expected true|false, got `{other}`"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_kv() {
        let cfg = ModelConfig::default();
        let text = cfg.to_kv().render();
        let again = ModelConfig::from_kv(&KvFile::parse(&text).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn explicit_values_round_trip() {
        let cfg = ModelConfig {
            heads: 4,
            hyper_hidden: Some(12),
            trm_hidden: Some(7),
            injection_site: Site::Qkv,
            head: HeadKind::Aitm,
            aitm_chains: "0>1;0>2>3".into(),
            use_tim: false,
            drop_task: Some(2),
            ..ModelConfig::default()
        };
        let text = cfg.to_kv().render();
        let again = ModelConfig::from_kv(&KvFile::parse(&text).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_site_and_head_rejected() {
        let kv = KvFile::parse("injection_site=everywhere\n").unwrap();
        assert!(ModelConfig::from_kv(&kv).is_err());
        let kv = KvFile::parse("head=tower_of_babel\n").unwrap();
        assert!(ModelConfig::from_kv(&kv).is_err());
    }

    #[test]
    fn heads_must_divide_dim() {
        let schema = FeatureSchema {
            n_sparse: 1,
            n_seqs: 1,
            n_tasks: 2,
            vocab: vec![5],
            seq_vocab: vec![5],
            max_len: vec![3],
            dim: 6,
        };
        let cfg = ModelConfig { heads: 4, ..ModelConfig::default() };
        assert!(cfg.validate(&schema).is_err());
    }

    #[test]
    fn chain_parsing() {
        let cfg = ModelConfig {
            head: HeadKind::Aitm,
            aitm_chains: "0>1;0>2>3".into(),
            ..ModelConfig::default()
        };
        let parents = cfg.aitm_parents(4).unwrap();
        assert_eq!(parents, vec![None, Some(0), Some(0), Some(2)]);
        let order = cfg.aitm_order(4).unwrap();
        let pos = |t: usize| order.iter().position(|&x| x == t).unwrap();
        assert!(pos(0) < pos(1) && pos(0) < pos(2) && pos(2) < pos(3));
    }

    #[test]
    fn default_chain_is_linear() {
        let cfg = ModelConfig { head: HeadKind::Aitm, ..ModelConfig::default() };
        assert_eq!(cfg.aitm_parents(3).unwrap(), vec![None, Some(0), Some(1)]);
    }

    #[test]
    fn double_parent_rejected() {
        let cfg = ModelConfig {
            head: HeadKind::Aitm,
            aitm_chains: "0>2;1>2".into(),
            ..ModelConfig::default()
        };
        assert!(cfg.aitm_parents(3).is_err());
    }

    #[test]
    fn cycle_rejected() {
        let cfg = ModelConfig {
            head: HeadKind::Aitm,
            aitm_chains: "0>1>0".into(),
            ..ModelConfig::default()
        };
        assert!(cfg.aitm_parents(2).is_err());
    }
}
