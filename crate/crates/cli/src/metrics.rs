//! Ranking metrics. `auc` is the Mann-Whitney statistic with average ranks
//! for ties, which equals the exhaustive pairwise estimator (ties worth one
//! half) exactly: both numerators are half-integers, so no rounding occurs.

use crate::error::CliError;

/// Probability that a random positive outscores a random negative.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, CliError> {
    let (n_pos, n_neg) = class_counts(scores, labels)?;
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut pos_rank_sum = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // Tied run occupies 1-based ranks i+1..=j; each member gets the mean.
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            if labels[k] == 1 {
                pos_rank_sum += avg;
            }
        }
        i = j;
    }
    let min_sum = (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok((pos_rank_sum - min_sum) / (n_pos * n_neg) as f64)
}

/// Brute-force estimator comparing every positive to every negative.
pub fn auc_pairwise(scores: &[f64], labels: &[u8]) -> Result<f64, CliError> {
    let (n_pos, n_neg) = class_counts(scores, labels)?;
    let mut wins = 0usize;
    let mut ties = 0usize;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj == 1 {
                continue;
            }
            if scores[i] > scores[j] {
                wins += 1;
            } else if scores[i] == scores[j] {
                ties += 1;
            }
        }
    }
    Ok((wins as f64 + 0.5 * ties as f64) / (n_pos * n_neg) as f64)
}

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
pub fn logloss(scores: &[f64], labels: &[u8]) -> Result<f64, CliError> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(CliError::metric(format!(
            "logloss needs matching non-empty scores and labels, got {} and {}",
            scores.len(),
            labels.len()
        )));
    }
    let mut sum = 0.0;
    for (&p, &y) in scores.iter().zip(labels) {
        if !p.is_finite() {
            return Err(CliError::metric("non-finite score"));
        }
        let p = p.clamp(1e-7, 1.0 - 1e-7);
        sum -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(sum / scores.len() as f64)
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), CliError> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(CliError::metric(format!(
            "auc needs matching non-empty scores and labels, got {} and {}",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(CliError::metric("non-finite score"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CliError::metric(
            "auc is undefined when only one class is present",
        ));
    }
    Ok((n_pos, n_neg))
}

#[derive(Clone, Copy, Debug)]
pub struct TaskMetrics {
    pub auc: f64,
    pub logloss: f64,
}
