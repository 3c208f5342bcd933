//! End-to-end runs of the `dtrn` binary: the full generate / stats / train /
//! eval / export / ablate pipeline on a small dataset, plus failure modes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dtrn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtrn"))
        .args(args)
        .output()
        .expect("spawn dtrn")
}

fn ok(args: &[&str]) -> String {
    let out = dtrn(args);
    assert!(
        out.status.success(),
        "dtrn {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fails(args: &[&str]) -> String {
    let out = dtrn(args);
    assert!(!out.status.success(), "dtrn {args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const GEN: &str = "\
n_tasks=2
n_seqs=2
n_users=30
n_items=40
latent_dim=4
n_instances=300
n_test_instances=120
seed=5
dim=8
seq_length_means=3,2
max_lens=6,6
task_behavior_weights_0=1.0,0.2
task_behavior_weights_1=0.2,1.0
task_conflict_0=1.0,-0.4
task_conflict_1=-0.4,1.0
";

const TRAIN: &str = "\
lr=0.005
batch_size=64
epochs=1
seed=11
d_f=16
expert_hidden=8
tower_hidden=8
";

struct Pipeline {
    dir: tempfile::TempDir,
}

impl Pipeline {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write(&dir.path().join("gen.kv"), GEN);
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn generate(&self) {
        ok(&["generate", "--config", &self.arg("gen.kv"), "--out", &self.arg("data")]);
    }

    fn train(&self) {
        write(&self.path("train.kv"), TRAIN);
        ok(&[
            "train",
            "--schema", &self.arg("data/schema.kv"),
            "--data", &self.arg("data/train.jsonl"),
            "--config", &self.arg("train.kv"),
            "--out", &self.arg("model.ckpt"),
        ]);
    }
}

#[test]
fn generate_stats_train_eval_export_round_trip() {
    let p = Pipeline::new();
    p.generate();
    assert!(p.path("data/schema.kv").exists());
    assert!(p.path("data/train.jsonl").exists());
    assert!(p.path("data/test.jsonl").exists());

    ok(&["stats", "--data", &p.arg("data/train.jsonl"), "--out", &p.arg("stats.csv")]);
    let stats = std::fs::read_to_string(p.path("stats.csv")).unwrap();
    let lines: Vec<&str> = stats.trim_end().lines().collect();
    assert_eq!(lines[0], "task,behavior,avg_count");
    assert_eq!(lines.len(), 1 + 2 * 2);

    p.train();
    assert!(p.path("model.ckpt").exists());
    assert!(p.path("model.ckpt.meta").exists());
    let history = std::fs::read_to_string(p.path("model.loss.csv")).unwrap();
    assert!(history.starts_with("batch,loss\n"));
    // 300 instances in batches of 64: five batches.
    assert_eq!(history.trim_end().lines().count(), 1 + 5);

    ok(&[
        "eval",
        "--ckpt", &p.arg("model.ckpt"),
        "--data", &p.arg("data/test.jsonl"),
        "--report", &p.arg("eval.csv"),
    ]);
    let report = std::fs::read_to_string(p.path("eval.csv")).unwrap();
    let lines: Vec<&str> = report.trim_end().lines().collect();
    assert_eq!(lines[0], "task,auc,logloss,seed,config_hash,wall_ms");
    assert_eq!(lines.len(), 3);

    for (kind, rows) in [("interest", 2 * 2 * 120), ("bottom", 2 * 120)] {
        ok(&[
            "export",
            "--ckpt", &p.arg("model.ckpt"),
            "--data", &p.arg("data/test.jsonl"),
            "--kind", kind,
            "--out", &p.arg("export.csv"),
        ]);
        let export = std::fs::read_to_string(p.path("export.csv")).unwrap();
        assert_eq!(export.trim_end().lines().count(), 1 + rows, "kind {kind}");
    }
}

#[test]
fn generate_is_deterministic_and_train_checkpoints_are_bitwise_equal() {
    let p = Pipeline::new();
    ok(&["generate", "--config", &p.arg("gen.kv"), "--out", &p.arg("a")]);
    ok(&["generate", "--config", &p.arg("gen.kv"), "--out", &p.arg("b")]);
    for name in ["schema.kv", "train.jsonl", "test.jsonl"] {
        let a = std::fs::read(p.path("a").join(name)).unwrap();
        let b = std::fs::read(p.path("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }

    write(&p.path("train.kv"), TRAIN);
    for out in ["m1.ckpt", "m2.ckpt"] {
        ok(&[
            "train",
            "--schema", &p.arg("a/schema.kv"),
            "--data", &p.arg("a/train.jsonl"),
            "--config", &p.arg("train.kv"),
            "--out", &p.arg(out),
        ]);
    }
    let m1 = std::fs::read(p.path("m1.ckpt")).unwrap();
    let m2 = std::fs::read(p.path("m2.ckpt")).unwrap();
    assert_eq!(m1, m2, "checkpoints differ between identical runs");
}

#[test]
fn ablate_writes_a_report_with_one_row_per_variant() {
    let p = Pipeline::new();
    p.generate();
    write(
        &p.path("suite.kv"),
        "schema=data/schema.kv\n\
         train_data=data/train.jsonl\n\
         test_data=data/test.jsonl\n\
         variants=baseline,dtrn\n\
         lr=0.005\nbatch_size=64\nepochs=1\n\
         d_f=16\nexpert_hidden=8\ntower_hidden=8\n",
    );
    ok(&[
        "ablate",
        "--suite", &p.arg("suite.kv"),
        "--seeds", "1,2",
        "--report", &p.arg("ablation.csv"),
    ]);
    let report = std::fs::read_to_string(p.path("ablation.csv")).unwrap();
    let lines: Vec<&str> = report.trim_end().lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("variant,auc0_mean,auc0_sd,logloss0_mean,logloss0_sd,auc1_mean"));
    assert!(lines[1].starts_with("baseline,"));
    assert!(lines[2].starts_with("dtrn,"));

    // Identical inputs reproduce the report byte for byte.
    ok(&[
        "ablate",
        "--suite", &p.arg("suite.kv"),
        "--seeds", "1,2",
        "--report", &p.arg("ablation2.csv"),
    ]);
    let again = std::fs::read_to_string(p.path("ablation2.csv")).unwrap();
    assert_eq!(report, again);
}

#[test]
fn failures_exit_nonzero_with_a_diagnostic() {
    let p = Pipeline::new();
    let err = fails(&["generate", "--config", &p.arg("missing.kv"), "--out", &p.arg("data")]);
    assert!(err.contains("error:"), "{err}");

    p.generate();
    p.train();
    let err = fails(&[
        "export",
        "--ckpt", &p.arg("model.ckpt"),
        "--data", &p.arg("data/test.jsonl"),
        "--kind", "everything",
        "--out", &p.arg("x.csv"),
    ]);
    assert!(err.contains("unknown export kind"), "{err}");

    write(&p.path("bad_suite.kv"), "schema=s\ntrain_data=a\ntest_data=b\nvariants=warp\n");
    let err = fails(&[
        "ablate",
        "--suite", &p.arg("bad_suite.kv"),
        "--seeds", "1",
        "--report", &p.arg("r.csv"),
    ]);
    assert!(err.contains("unknown variant"), "{err}");

    let err = fails(&[
        "ablate",
        "--suite", &p.arg("bad_suite.kv"),
        "--seeds", "one,two",
        "--report", &p.arg("r.csv"),
    ]);
    assert!(err.contains("bad seed list"), "{err}");
}
