use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONF: &str = "\
data.grid_size = 48
data.patch_size = 8
data.time_steps = 4
data.folds = 3
net.hidden_dim = 4
net.refine_hidden = 4
train.epochs = 2
train.steps_per_epoch = 3
eval.curve_points = 4
";

fn hiercrop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiercrop"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hiercrop(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.conf"), CONF).unwrap();
    dir
}

fn full_run(dir: &Path) {
    ok(dir, &["gen-data", "-c", "run.conf", "--seed", "7"]);
    ok(dir, &["train", "-c", "run.conf", "--seed", "7"]);
    ok(dir, &["eval", "-c", "run.conf", "--seed", "7"]);
    ok(dir, &["coverage-curve", "-c", "run.conf", "--seed", "7"]);
    ok(dir, &["occlusion-report", "-c", "run.conf", "--seed", "7"]);
}

#[test]
fn param_counts() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(ok(p, &["param-count", "--cell", "star", "--in", "4", "--hidden", "64"]), "41600\n");
    assert_eq!(ok(p, &["param-count", "--cell", "gru", "--in", "4", "--hidden", "64"]), "117696\n");
    assert_eq!(ok(p, &["param-count", "--cell", "lstm", "--in", "4", "--hidden", "64"]), "156928\n");
}

#[test]
fn gen_data_is_bitwise_reproducible() {
    let a = workdir();
    let b = workdir();
    for d in [&a, &b] {
        ok(d.path(), &["gen-data", "-c", "run.conf", "--seed", "7"]);
    }
    for f in ["data/synthetic.hcds", "data/synthetic.hierarchy.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    ok(a.path(), &["gen-data", "-c", "run.conf", "--seed", "8"]);
    assert_ne!(
        fs::read(a.path().join("data/synthetic.hcds")).unwrap(),
        fs::read(b.path().join("data/synthetic.hcds")).unwrap()
    );
}

#[test]
fn runs_are_reproducible_and_echo_their_config() {
    let a = workdir();
    let b = workdir();
    full_run(a.path());
    full_run(b.path());
    let artifacts = [
        "runs/report/train_log.tsv",
        "runs/report/summary.txt",
        "runs/report/level3_classes.tsv",
        "runs/report/level3_confusion.csv",
        "runs/report/coverage_curve.tsv",
        "runs/report/occlusion.tsv",
        "runs/model.hckpt",
    ];
    for f in artifacts {
        let x = fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f}");
        let text = String::from_utf8_lossy(&x);
        assert!(text.contains("seed = 7") || text.contains("seed: 7") || text.contains("config.seed 7"), "{f}");
    }
    let log = fs::read_to_string(a.path().join("runs/report/train_log.tsv")).unwrap();
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 3);
    let summary = fs::read_to_string(a.path().join("runs/report/summary.txt")).unwrap();
    assert!(summary.contains("aggregation: field_majority"));
    assert!(summary.contains("config.train.epochs: 2"));
}

#[test]
fn no_majority_vote_is_flagged() {
    let d = workdir();
    let p = d.path();
    ok(p, &["gen-data", "-c", "run.conf"]);
    ok(p, &["train", "-c", "run.conf"]);
    let out = ok(p, &["eval", "-c", "run.conf", "--no-majority-vote"]);
    assert!(out.starts_with("aggregation: none\n"));
    let summary = fs::read_to_string(p.join("runs/report/summary.txt")).unwrap();
    assert!(summary.contains("aggregation: none"));
    assert!(summary.contains("config.eval.majority_vote: false"));
}

#[test]
fn flags_override_the_file() {
    let d = workdir();
    let p = d.path();
    fs::write(p.join("seeded.conf"), format!("{CONF}seed = 1\n")).unwrap();
    ok(p, &["gen-data", "-c", "seeded.conf", "--seed", "2", "--dataset", "x/two.hcds"]);
    ok(p, &["gen-data", "-c", "run.conf", "--set", "seed=2", "--dataset", "x/ref.hcds"]);
    let h = fs::read_to_string(p.join("x/two.hierarchy.csv")).unwrap();
    assert!(h.contains("# seed = 2"));
    assert_eq!(fs::read(p.join("x/two.hcds")).unwrap().len(), fs::read(p.join("x/ref.hcds")).unwrap().len());
}

#[test]
fn coverage_curve_modes() {
    let d = workdir();
    let p = d.path();
    ok(p, &["gen-data", "-c", "run.conf"]);
    ok(p, &["train", "-c", "run.conf"]);
    let restrict = ok(p, &["coverage-curve", "-c", "run.conf"]);
    assert_eq!(restrict.lines().count(), 1 + 3 * 5);
    ok(p, &["train", "-c", "run.conf", "--set", "net.stages=1", "--checkpoint", "runs/one.hckpt"]);
    let retrain = ok(p, &["coverage-curve", "-c", "run.conf", "--checkpoints", "runs/one.hckpt,runs/model.hckpt"]);
    let levels: Vec<&str> = retrain.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(levels.iter().filter(|&&l| l == "1").count(), 5);
    assert_eq!(levels.iter().filter(|&&l| l == "3").count(), 5);
}

#[test]
fn exit_codes_and_prefixes() {
    let d = workdir();
    let p = d.path();
    let cases: [(&[&str], i32, &str); 5] = [
        (&["eval", "-c", "run.conf", "--set", "bogus=1"], 2, "config error:"),
        (&["eval", "--config", "missing.conf"], 2, "config error:"),
        (&["eval", "-c", "run.conf", "--dataset", "nope.hcds"], 3, "data error:"),
        (&["gen-data", "-c", "run.conf", "--set", "data.patch_size=7"], 2, "config error:"),
        (&["train", "-c", "run.conf", "--set", "train.base_lr=1e200", "--dataset", "d.hcds"], 4, "numeric error:"),
    ];
    ok(p, &["gen-data", "-c", "run.conf", "--dataset", "d.hcds"]);
    for (args, code, prefix) in cases {
        let out = hiercrop(p, args);
        assert_eq!(out.status.code(), Some(code), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.lines().any(|l| l.starts_with(prefix)), "{args:?}: {err}");
    }
    fs::write(p.join("d.hcds"), b"garbage").unwrap();
    let out = hiercrop(p, &["eval", "-c", "run.conf", "--dataset", "d.hcds"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gradcheck_passes() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["gradcheck", "--cell", "star"]);
    assert_eq!(out.lines().count(), 4);
}

#[test]
fn help_documents_config_keys() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["--help"]);
    for key in ["train.balance", "eval.majority_vote", "data.zipf_exponent", "paths.report_dir"] {
        assert!(out.contains(key), "{key}");
    }
}
