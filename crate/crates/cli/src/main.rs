use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use dtrn_cli::{
    bundle, evaluate, export_csv, report_csv, run_suite, train, ExportKind, Suite, TrainConfig,
};
use dtrn_data::{
    generate, read_instances, sequence_target_stats, stats_to_csv, validate_instances,
    FeatureSchema, GeneratorConfig, KvFile,
};
use dtrn_model::{Dtrn, ModelConfig};
use dtrn_tensor::ParamStore;

#[derive(Parser)]
#[command(name = "dtrn", about = "Task-specific bottom representation networks on synthetic multi-task data")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset (schema.kv, train.jsonl, test.jsonl).
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoint, sidecar, and loss history.
    Train {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint: per-task AUC and LogLoss as CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train every suite variant over a seed list and report mean/sd metrics.
    Ablate {
        #[arg(long)]
        suite: PathBuf,
        /// Comma-separated seed list, e.g. 1,2,3.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Sequence/target co-occurrence statistics of a dataset.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export interest or bottom representations for external visualization.
    Export {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// interest|bottom
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Generate { config, out } => {
            let cfg = GeneratorConfig::read(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let result = generate(&cfg, &out)?;
            println!(
                "wrote {} and {}{}",
                result.schema_path.display(),
                result.train_path.display(),
                result
                    .test_path
                    .map(|p| format!(" and {}", p.display()))
                    .unwrap_or_default()
            );
        }
        Cmd::Train { schema, data, config, out } => {
            let schema = FeatureSchema::read(&schema)?;
            let instances = read_instances(&data)?;
            validate_instances(&instances, &schema)?;
            let kv = KvFile::read(&config)?;
            let model_cfg = ModelConfig::from_kv(&kv)?;
            let train_cfg = TrainConfig::from_kv(&kv)?;
            let model = Dtrn::new(schema.clone(), model_cfg.clone())?;
            let mut store: ParamStore<f32> = ParamStore::new();
            model.register(&mut store, train_cfg.seed)?;
            let started = Instant::now();
            let outcome = train(&model, &mut store, &instances, &train_cfg)?;
            bundle::save_bundle(&out, &store, &schema, &model_cfg, train_cfg.seed)?;
            let history = out.with_extension("loss.csv");
            std::fs::write(&history, outcome.history_csv())?;
            println!(
                "trained {} batches in {:.1}s, final loss {:.4}; wrote {} and {}",
                outcome.loss_history.len(),
                started.elapsed().as_secs_f64(),
                outcome.loss_history.last().copied().unwrap_or(f64::NAN),
                out.display(),
                history.display()
            );
        }
        Cmd::Eval { ckpt, data, report } => {
            let b = bundle::load_bundle(&ckpt)?;
            let instances = read_instances(&data)?;
            validate_instances(&instances, b.model.schema())?;
            let started = Instant::now();
            let metrics = evaluate(&b.model, &b.store, &instances, 512)?;
            let csv = report_csv(&metrics, b.seed, &b.config_hash, started.elapsed().as_millis());
            std::fs::write(&report, &csv)?;
            for (t, m) in metrics.iter().enumerate() {
                println!("task {t}: auc {:.4} logloss {:.4}", m.auc, m.logloss);
            }
            println!("wrote {}", report.display());
        }
        Cmd::Ablate { suite, seeds, report } => {
            let seeds = parse_seeds(&seeds)?;
            let suite = Suite::read(&suite)?;
            let result = run_suite(&suite, &seeds)?;
            std::fs::write(&report, result.to_csv())?;
            println!(
                "ran {} variants x {} seeds; wrote {}",
                result.rows.len(),
                seeds.len(),
                report.display()
            );
        }
        Cmd::Stats { data, out } => {
            let instances = read_instances(&data)?;
            let first = instances
                .first()
                .ok_or_else(|| anyhow::anyhow!("dataset {} is empty", data.display()))?;
            // Only the task/behavior counts matter for the statistic; the
            // vocabulary fields are placeholders.
            let schema = FeatureSchema {
                n_sparse: first.sparse.len(),
                n_seqs: first.seqs.len(),
                n_tasks: first.labels.len(),
                vocab: vec![1; first.sparse.len()],
                seq_vocab: vec![1; first.seqs.len()],
                max_len: vec![1; first.seqs.len()],
                dim: 1,
            };
            let stats = sequence_target_stats(&instances, &schema);
            std::fs::write(&out, stats_to_csv(&stats))?;
            println!("wrote {}", out.display());
        }
        Cmd::Export { ckpt, data, kind, out } => {
            let b = bundle::load_bundle(&ckpt)?;
            let instances = read_instances(&data)?;
            validate_instances(&instances, b.model.schema())?;
            let kind = ExportKind::parse(&kind)?;
            let csv = export_csv(&b.model, &b.store, &instances, kind, 512)?;
            std::fs::write(&out, csv)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn parse_seeds(text: &str) -> anyhow::Result<Vec<u64>> {
    let seeds: Result<Vec<u64>, _> = text
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect();
    let seeds = seeds.map_err(|_| anyhow::anyhow!("bad seed list `{text}`"))?;
    if seeds.is_empty() {
        anyhow::bail!("bad seed list `{text}`");
    }
    Ok(seeds)
}
