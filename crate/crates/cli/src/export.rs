//! Representation export for external visualization. Rows are
//! `(instance, task, behavior-or-'-', components...)`; interest vectors are
//! one per (task, behavior) pair, bottom vectors one per task.

use dtrn_data::{Instance, MiniBatch};
use dtrn_model::Dtrn;
use dtrn_tensor::{Graph, ParamStore, Real};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportKind {
    /// `[batch, d]` interest of every (task, behavior) pair: T*M*n rows.
    Interest,
    /// Refined per-task bottom representation of width D: T*n rows.
    Bottom,
}

impl ExportKind {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        match text {
            "interest" => Ok(ExportKind::Interest),
            "bottom" => Ok(ExportKind::Bottom),
            other => Err(CliError::suite(format!(
                "unknown export kind `{other}` (expected interest|bottom)"
            ))),
        }
    }
}

pub fn export_csv<T: Real>(
    model: &Dtrn,
    store: &ParamStore<T>,
    instances: &[Instance],
    kind: ExportKind,
    batch_size: usize,
) -> Result<String, CliError> {
    if batch_size == 0 {
        return Err(CliError::train("batch_size must be >= 1"));
    }
    let schema = model.schema();
    let width = match kind {
        ExportKind::Interest => schema.dim,
        ExportKind::Bottom => model.bottom_width(),
    };
    let mut out = String::from("instance,task,behavior");
    for c in 0..width {
        out.push_str(&format!(",c{c}"));
    }
    out.push('\n');
    let mut base = 0usize;
    for chunk in instances.chunks(batch_size) {
        let batch = MiniBatch::build(chunk, schema);
        let mut g: Graph<T> = Graph::new();
        let fwd = model.forward(&mut g, store, &batch)?;
        for row in 0..chunk.len() {
            for t in 0..schema.n_tasks {
                match kind {
                    ExportKind::Interest => {
                        for b in 0..schema.n_seqs {
                            let data = g.value(fwd.interests[t][b]).data();
                            push_row(&mut out, base + row, t, Some(b), &data[row * width..(row + 1) * width]);
                        }
                    }
                    ExportKind::Bottom => {
                        let data = g.value(fwd.refined[t]).data();
                        push_row(&mut out, base + row, t, None, &data[row * width..(row + 1) * width]);
                    }
                }
            }
        }
        base += chunk.len();
    }
    Ok(out)
}

fn push_row<T: Real>(out: &mut String, instance: usize, task: usize, behavior: Option<usize>, v: &[T]) {
    match behavior {
        Some(b) => out.push_str(&format!("{instance},{task},{b}")),
        None => out.push_str(&format!("{instance},{task},-")),
    }
    for x in v {
        out.push_str(&format!(",{}", x.as_f64()));
    }
    out.push('\n');
}

/// Parses the numeric body of an export back into (task, vector) pairs.
pub fn parse_export(csv: &str) -> Result<Vec<(usize, Vec<f64>)>, CliError> {
    let mut rows = Vec::new();
    for (i, line) in csv.lines().enumerate().skip(1) {
        let mut fields = line.split(',');
        let _instance = fields.next();
        let task: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| CliError::suite(format!("export line {i}: bad task field")))?;
        let _behavior = fields.next();
        let vector: Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let vector = vector.map_err(|_| CliError::suite(format!("export line {i}: bad component")))?;
        rows.push((task, vector));
    }
    Ok(rows)
}

/// Mean distance between per-task centroids over all task pairs.
pub fn centroid_distance(rows: &[(usize, Vec<f64>)]) -> f64 {
    let n_tasks = rows.iter().map(|(t, _)| t + 1).max().unwrap_or(0);
    if n_tasks < 2 || rows.is_empty() {
        return 0.0;
    }
    let width = rows[0].1.len();
    let mut sums = vec![vec![0.0; width]; n_tasks];
    let mut counts = vec![0usize; n_tasks];
    for (t, v) in rows {
        counts[*t] += 1;
        for (s, x) in sums[*t].iter_mut().zip(v) {
            *s += x;
        }
    }
    let centroids: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s.iter().map(|x| x / c.max(1) as f64).collect())
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..n_tasks {
        for b in a + 1..n_tasks {
            let d2: f64 = centroids[a]
                .iter()
                .zip(&centroids[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            total += d2.sqrt();
            pairs += 1;
        }
    }
    total / pairs as f64
}
