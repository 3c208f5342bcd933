//! Sequence/target co-occurrence statistics: how often the target item
//! appears in each behavior sequence, averaged over the positives of each
//! task. This is the dataset-side fingerprint of task-behavior correlation.

use crate::instance::Instance;
use crate::schema::FeatureSchema;

/// Entry (t, b) is the mean, over instances with label t = 1, of the number
/// of times the target occurs in behavior sequence b (full stored history,
/// not the batch-truncated view). `None` when task t has no positives.
pub fn sequence_target_stats(
    instances: &[Instance],
    schema: &FeatureSchema,
) -> Vec<Vec<Option<f64>>> {
    let t_n = schema.n_tasks;
    let b_n = schema.n_seqs;
    let mut sums = vec![vec![0.0f64; b_n]; t_n];
    let mut positives = vec![0usize; t_n];
    for inst in instances {
        let counts: Vec<f64> = inst
            .seqs
            .iter()
            .map(|seq| seq.iter().filter(|&&id| id == inst.target).count() as f64)
            .collect();
        for t in 0..t_n {
            if inst.labels[t] == 1 {
                positives[t] += 1;
                for b in 0..b_n {
                    sums[t][b] += counts[b];
                }
            }
        }
    }
    (0..t_n)
        .map(|t| {
            (0..b_n)
                .map(|b| (positives[t] > 0).then(|| sums[t][b] / positives[t] as f64))
                .collect()
        })
        .collect()
}

/// CSV with header `task,behavior,avg_count`; absent entries leave the
/// value field empty.
pub fn stats_to_csv(stats: &[Vec<Option<f64>>]) -> String {
    let mut out = String::from("task,behavior,avg_count\n");
    for (t, row) in stats.iter().enumerate() {
        for (b, entry) in row.iter().enumerate() {
            match entry {
                Some(v) => out.push_str(&format!("{t},{b},{v}\n")),
                None => out.push_str(&format!("{t},{b},\n")),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(t: usize, m: usize) -> FeatureSchema {
        FeatureSchema {
            n_sparse: 1,
            n_seqs: m,
            n_tasks: t,
            vocab: vec![10],
            seq_vocab: vec![10; m],
            max_len: vec![4; m],
            dim: 2,
        }
    }

    fn inst(target: usize, seqs: Vec<Vec<usize>>, labels: Vec<u8>) -> Instance {
        Instance { sparse: vec![0], seqs, labels, target }
    }

    #[test]
    fn every_history_holding_target_once_gives_ones() {
        let s = schema(2, 2);
        let data = vec![
            inst(3, vec![vec![3, 1], vec![2, 3]], vec![1, 1]),
            inst(5, vec![vec![5], vec![5, 4]], vec![1, 1]),
        ];
        let stats = sequence_target_stats(&data, &s);
        for row in &stats {
            for entry in row {
                assert_eq!(*entry, Some(1.0));
            }
        }
    }

    #[test]
    fn empty_histories_give_zeros() {
        let s = schema(1, 2);
        let data = vec![inst(3, vec![vec![], vec![]], vec![1])];
        assert_eq!(sequence_target_stats(&data, &s), vec![vec![Some(0.0), Some(0.0)]]);
    }

    #[test]
    fn task_without_positives_is_absent() {
        let s = schema(2, 1);
        let data = vec![inst(3, vec![vec![3]], vec![1, 0])];
        let stats = sequence_target_stats(&data, &s);
        assert_eq!(stats[0][0], Some(1.0));
        assert_eq!(stats[1][0], None);
    }

    #[test]
    fn only_positive_instances_count() {
        let s = schema(1, 1);
        let data = vec![
            inst(2, vec![vec![2, 2]], vec![1]),
            inst(2, vec![vec![2, 2, 2, 2]], vec![0]),
            inst(2, vec![vec![]], vec![1]),
        ];
        // Positives contribute counts 2 and 0.
        assert_eq!(sequence_target_stats(&data, &s), vec![vec![Some(1.0)]]);
    }

    #[test]
    fn csv_layout_and_absent_entries() {
        let stats = vec![vec![Some(1.5), None]];
        let csv = stats_to_csv(&stats);
        assert_eq!(csv, "task,behavior,avg_count\n0,0,1.5\n0,1,\n");
    }
}
