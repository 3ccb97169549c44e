use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use radstruct::cli::Manifest;

const TINY: &str = r#"{
  "corpus": { "n_reports": 40 },
  "model": { "max_seq_len": 512, "hidden_dim": 8, "n_layers": 1, "n_heads": 2, "ff_dim": 16, "dropout_rate": 0.0 },
  "pretrain": { "batch_size": 8, "max_steps": 4 },
  "experiment": {
    "finetune": { "epochs": 1, "batch_size": 16, "learning_rate": 0.001, "validation_fraction": 0.0 },
    "tasks": ["Density", "BPE"],
    "seq_len_grid": [32, 128]
  },
  "k_folds": 2
}"#;

struct Run {
    _tmp: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

impl Run {
    fn new(config: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("config.json");
        fs::write(&path, config).unwrap();
        let out = tmp.path().join("out");
        Run { _tmp: tmp, config: path, out }
    }

    fn exec(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_radstruct"))
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .env("EXP_OUTPUT_DIR", &self.out)
            .env("RUST_LOG", "error")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let o = self.exec(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    }

    fn manifest(&self, stage: &str) -> Manifest {
        Manifest::load(&self.out.join(stage)).unwrap().expect("manifest")
    }

    fn prepare(&self) {
        for stage in ["generate", "train-tokenizer", "pretrain"] {
            self.ok(&[stage]);
        }
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_is_idempotent_and_seed_sensitive() {
    let run = Run::new(TINY);
    run.ok(&["generate"]);
    let first = run.manifest("generate");
    run.ok(&["generate"]);
    assert_eq!(first, run.manifest("generate"));
    assert_eq!(first.outputs.len(), 1);
    assert!(first.inputs.is_empty());

    let o = run.exec(&["generate", "--seed", "3"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--force"));
    run.ok(&["generate", "--seed", "3", "--force"]);
    assert_ne!(first.outputs, run.manifest("generate").outputs);
}

#[test]
fn missing_inputs_fail_with_the_path() {
    let run = Run::new(TINY);
    let o = run.exec(&["pretrain"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing input"), "{}", stderr(&o));
    assert!(stderr(&o).contains("corpus.jsonl"));

    let o = run.exec(&["compare", "--run", "/nope/a", "--run", "/nope/b"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/nope/a/reports.json"));
}

#[test]
fn invalid_configs_are_rejected_before_any_work() {
    for bad in [
        r#"{"k_folds": 1}"#,
        r#"{"kfolds": 5}"#,
        r#"{"model": {"hidden_dim": 10, "n_heads": 4}}"#,
        r#"{"experiment": {"ablation_fraction": 0.0}}"#,
        r#"{"experiment": {"seq_len_grid": [1024]}}"#,
        "not json",
    ] {
        let run = Run::new(bad);
        let o = run.exec(&["generate"]);
        assert!(!o.status.success(), "{bad} was accepted");
        assert!(!run.out.exists(), "{bad} produced output");
    }
    let run = Run::new(TINY);
    let o = run.exec(&["generate", "--ablation", "1.5"]);
    assert!(!o.status.success());
}

#[test]
fn full_pipeline_writes_manifested_outputs() {
    let run = Run::new(TINY);
    run.prepare();
    let pre = run.manifest("pretrain");
    assert_eq!(pre.inputs.len(), 2);
    assert!(pre.outputs.contains_key("encoder.ckpt"));
    assert!(pre.outputs.contains_key("pretrain_log.csv"));

    run.ok(&["finetune", "--task", "segmentation", "--variant", "seg-noaux"]);
    assert!(run.out.join("finetune/segmentation-noaux.ckpt").exists());
    let o = run.exec(&["finetune", "--task", "segmentation", "--variant", "field-noseg", "--force"]);
    assert!(!o.status.success());

    let o = run.exec(&["evaluate"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--variant"));

    for v in ["field-seg", "field-noseg"] {
        run.ok(&["evaluate", "--variant", v]);
    }
    let dir = run.out.join("evaluate/field-seg");
    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("variant,task,fold,n_items,accuracy,gf1"));
    assert_eq!(lines.count(), 2 * 2);
    for f in ["fold_0.csv", "fold_1.csv", "predictions.jsonl", "reports.json", "summary.md"] {
        assert!(dir.join(f).exists(), "{f}");
        assert!(run.manifest("evaluate/field-seg").outputs.contains_key(f));
    }

    let a = dir.display().to_string();
    let b = run.out.join("evaluate/field-noseg").display().to_string();
    run.ok(&["compare", "--run", &a, "--run", &b, "--name", "routing"]);
    let csv = fs::read_to_string(run.out.join("compare/routing/Density.csv")).unwrap();
    assert!(csv.starts_with("group1,group2,stat,pval,pval_corrected,reject\n"));
    assert!(csv.contains("field-seg,field-noseg,"));
    assert!(fs::read_to_string(run.out.join("compare/routing/comparison.md")).unwrap().contains("## BPE (mcnemar)"));

    run.ok(&["compare", "--run", &a, "--run", &a, "--name", "self", "--test", "utest"]);
    let own = fs::read_to_string(run.out.join("compare/self/Density.csv")).unwrap();
    assert!(own.lines().nth(1).unwrap().ends_with(",false"));
}

#[test]
fn sweep_and_ablation_runs() {
    let run = Run::new(TINY);
    run.prepare();
    run.ok(&["sweep"]);
    let sweep = fs::read_to_string(run.out.join("sweep/sweep.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * 2);
    assert!(rows[0].starts_with("Density,FindingsProcedureNotes,32,"));

    run.ok(&["evaluate", "--variant", "seg-aux", "--ablation", "0.5"]);
    let reports = fs::read_to_string(run.out.join("evaluate/seg-aux-ablation-0.5/reports.json")).unwrap();
    assert!(reports.contains("\"task\":\"Segmentation\""));
}

#[test]
fn evaluation_is_reproducible_across_thread_counts() {
    let run = Run::new(TINY);
    run.prepare();
    let read = |p: &Path| fs::read(p).unwrap();
    run.ok(&["evaluate", "--variant", "seg-aux", "--jobs", "1"]);
    let dir = run.out.join("evaluate/seg-aux");
    let first = (read(&dir.join("metrics.csv")), read(&dir.join("predictions.jsonl")));
    run.ok(&["evaluate", "--variant", "seg-aux", "--jobs", "3"]);
    assert_eq!(first, (read(&dir.join("metrics.csv")), read(&dir.join("predictions.jsonl"))));
}
