use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3

[data]
n_train = 60
n_val = 12
n_test = 12

[model]
hidden = 12
embed_dim = 12
embed_word_dim = 8
value_visual_dim = 8
value_hidden = 8
value_mlp = [12]

[embed]
epochs = 2

[policy]
epochs = 3

[value]
epochs = 2

[rl]
max_stages = 2
full_rl_epochs = 1

[decode]
beam = 3
"#;

fn lacap(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_lacap"))
        .args(args)
        .arg("--config")
        .arg(dir.join("run.toml"))
        .arg("--out")
        .arg(dir.join("run"))
        .output()
        .expect("binary runs");
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = lacap(dir, args);
    assert!(
        out.status.success(),
        "lacap {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn the_full_pipeline_runs_from_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.toml"), TINY).unwrap();
    let run = dir.join("run");

    let missing = lacap(dir, &["train-embed"]);
    assert_eq!(missing.status.code(), Some(2));
    let err = String::from_utf8_lossy(&missing.stderr);
    assert!(err.contains("lacap gen-data"), "{err}");

    ok(dir, &["gen-data"]);
    for f in ["vocab.json", "train.jsonl", "val.jsonl", "test.jsonl"] {
        assert!(run.join("data").join(f).exists(), "{f}");
    }
    let err = String::from_utf8(lacap(dir, &["pretrain-value"]).stderr).unwrap();
    assert!(err.contains("lacap pretrain-policy"), "{err}");

    ok(dir, &["train-embed"]);
    ok(dir, &["pretrain-policy"]);
    ok(dir, &["pretrain-value"]);
    ok(dir, &["pretrain-value", "--variant", "hid-VN"]);
    ok(dir, &["train-rl"]);
    for f in ["embed.lacp", "policy.lacp", "value.lacp", "value_hid_vn.lacp", "rl_policy.lacp", "rl_value.lacp", "rl_log.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert!(run.join("rl").join("stage_01_policy.lacp").exists());

    ok(dir, &["caption", "--lambda", "1", "--beam", "1"]);
    let beam = std::fs::read(run.join("captions.jsonl")).unwrap();
    ok(dir, &["caption", "--greedy"]);
    let greedy = std::fs::read(run.join("captions.jsonl")).unwrap();
    assert_eq!(beam, greedy);
    assert_eq!(beam.iter().filter(|&&b| b == b'\n').count(), 12);

    ok(dir, &["caption", "--variant", "SL-RawVN", "--trace"]);
    let first: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(run.join("captions.jsonl")).unwrap().lines().next().unwrap())
            .unwrap();
    let trace = first["trace"].as_array().unwrap();
    assert_eq!(trace.len(), first["caption"].as_array().unwrap().len());
    assert!(trace[0]["value"].is_number());

    let table = ok(dir, &["evaluate"]);
    assert!(table.contains("Full-model") && table.contains("hid-VN"), "{table}");
    let csv = std::fs::read_to_string(run.join("report.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("bleu4"));
    let err = String::from_utf8(lacap(dir, &["evaluate", "--variant", "hid-Im-VN"]).stderr).unwrap();
    assert!(err.contains("--variant hid-Im-VN"), "{err}");

    ok(dir, &["sweep"]);
    assert_eq!(std::fs::read_to_string(run.join("sweep_lambda.csv")).unwrap().lines().count(), 12);
    assert_eq!(std::fs::read_to_string(run.join("sweep_beam.csv")).unwrap().lines().count(), 6);

    ok(dir, &["gradcheck", "--seeds", "2"]);
    assert!(run.join("gradcheck.csv").exists());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifests").join("train-rl.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train-rl");
    assert_eq!(manifest["seed"], 3);
    assert!(manifest["git_describe"].is_string());
    assert_eq!(manifest["config"]["data"]["n_train"], 60);
    assert!(manifest["metrics"]["stages_run"].is_number());
    for cmd in ["gen-data", "train-embed", "pretrain-policy", "pretrain-value", "caption", "evaluate", "sweep", "gradcheck"] {
        assert!(run.join("manifests").join(format!("{cmd}.json")).exists(), "{cmd}");
    }
}

#[test]
fn retraining_a_stage_reproduces_its_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.toml"), TINY).unwrap();
    ok(dir, &["gen-data"]);
    ok(dir, &["pretrain-policy", "--seed", "9"]);
    let first = std::fs::read(dir.join("run").join("policy.lacp")).unwrap();
    ok(dir, &["pretrain-policy", "--seed", "9"]);
    assert_eq!(first, std::fs::read(dir.join("run").join("policy.lacp")).unwrap());
    ok(dir, &["pretrain-policy", "--seed", "10"]);
    assert_ne!(first, std::fs::read(dir.join("run").join("policy.lacp")).unwrap());
}

#[test]
fn bad_configs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.toml"), "[data]\nn_trian = 5\n").unwrap();
    let out = lacap(dir, &["gen-data"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_trian"));
}
