//! Batched inference: per-task probability scores and the metrics report.

use dtrn_data::{Instance, MiniBatch};
use dtrn_model::Dtrn;
use dtrn_tensor::{Graph, ParamStore, Real};

use crate::error::CliError;
use crate::metrics::{auc, logloss, TaskMetrics};

/// Per-task positive probabilities, `scores[t][i]` aligned with `instances`.
pub fn score_dataset<T: Real>(
    model: &Dtrn,
    store: &ParamStore<T>,
    instances: &[Instance],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>, CliError> {
    if batch_size == 0 {
        return Err(CliError::train("batch_size must be >= 1"));
    }
    let n_tasks = model.schema().n_tasks;
    let mut scores = vec![Vec::with_capacity(instances.len()); n_tasks];
    for chunk in instances.chunks(batch_size) {
        let batch = MiniBatch::build(chunk, model.schema());
        let mut g: Graph<T> = Graph::new();
        let out = model.forward(&mut g, store, &batch)?;
        for t in 0..n_tasks {
            for &z in g.value(out.logits[t]).data() {
                scores[t].push(sigmoid(z.as_f64()));
            }
        }
    }
    Ok(scores)
}

pub fn evaluate<T: Real>(
    model: &Dtrn,
    store: &ParamStore<T>,
    instances: &[Instance],
    batch_size: usize,
) -> Result<Vec<TaskMetrics>, CliError> {
    if instances.is_empty() {
        return Err(CliError::metric("no evaluation instances"));
    }
    let scores = score_dataset(model, store, instances, batch_size)?;
    let n_tasks = model.schema().n_tasks;
    let mut report = Vec::with_capacity(n_tasks);
    for t in 0..n_tasks {
        let labels: Vec<u8> = instances.iter().map(|i| i.labels[t]).collect();
        report.push(TaskMetrics {
            auc: auc(&scores[t], &labels)?,
            logloss: logloss(&scores[t], &labels)?,
        });
    }
    Ok(report)
}

/// `task,auc,logloss` rows plus run identity columns.
pub fn report_csv(metrics: &[TaskMetrics], seed: u64, config_hash: &str, wall_ms: u128) -> String {
    let mut out = String::from("task,auc,logloss,seed,config_hash,wall_ms\n");
    for (t, m) in metrics.iter().enumerate() {
        out.push_str(&format!("{t},{},{},{seed},{config_hash},{wall_ms}\n", m.auc, m.logloss));
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
