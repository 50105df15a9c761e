use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cre_cli::manifest::{read_manifest, sha256_hex};
use cre_core::landscape::{percentile, LabeledDataset};
use cre_core::policy::{PolicyParams, PolicyShape};

const SMALL: &[&str] = &[
    "--set",
    "data.size=600",
    "--set",
    "policy.pretrain.epochs=2",
    "--set",
    "optimize.rounds=1",
    "--set",
    "optimize.proposals=32",
    "--set",
    "greedy.rounds=2",
    "--set",
    "surrogate.rounds=20",
];

fn cre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cre"))
        .args(args)
        .args(SMALL)
        .env_remove("CRE_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = cre(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Pipeline {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Pipeline {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        ok(&["gen-data", "--out", p(&root.join("data"))]);
        Pipeline { _tmp: tmp, root }
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

#[test]
fn gen_data_is_deterministic_and_partitions_by_percentile() {
    let a = Pipeline::new();
    let b = Pipeline::new();
    for f in ["dataset.csv", "dataset.manifest.json", "partition_hard.csv", "dataset.fasta"] {
        assert_eq!(fs::read(a.dir("data").join(f)).unwrap(), fs::read(b.dir("data").join(f)).unwrap(), "{f}");
    }
    let full = LabeledDataset::read_csv(fs::File::open(a.dir("data/dataset.csv")).unwrap()).unwrap();
    assert_eq!(full.len(), 600);
    let hard = LabeledDataset::read_csv(fs::File::open(a.dir("data/partition_hard.csv")).unwrap()).unwrap();
    let mut sorted = full.fitness();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (percentile(&sorted, 20.0), percentile(&sorted, 40.0));
    let expected: Vec<_> = full
        .records
        .iter()
        .filter(|r| r.fitness >= lo && r.fitness < hi)
        .cloned()
        .collect();
    assert_eq!(hard.records, expected);
    let m = read_manifest(&a.dir("data/gen-data.manifest.json")).unwrap();
    let bytes = fs::read(a.dir("data/dataset.csv")).unwrap();
    assert_eq!(m.outputs["dataset"].sha256, sha256_hex(&bytes));
}

#[test]
fn usage_errors_exit_two() {
    let out = cre(&["gen-data", "--config", "/no/such/config.toml", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/config.toml"));
    assert_eq!(cre(&["gen-data", "--out", "/tmp/x", "--set", "optimize.entropy_coef=-1"]).status.code(), Some(2));
    assert_eq!(cre(&["frobnicate"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        cre(&["report", "--out", p(tmp.path())]).status.code(),
        Some(2),
        "empty report input"
    );
    assert_eq!(
        cre(&["pretrain", "--data", p(&tmp.path().join("missing")), "--out", p(tmp.path())])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn config_file_and_env_var() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[data]\nsize = 300\nseed = 9\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cre"))
        .args(["gen-data", "--out", p(&tmp.path().join("d"))])
        .env("CRE_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    let m = read_manifest(&tmp.path().join("d/gen-data.manifest.json")).unwrap();
    assert_eq!(m.config.data.size, 300);
    assert_eq!(m.config.data.seed, 9);
}

#[test]
fn pretrain_with_zero_lr_returns_initialization() {
    let pl = Pipeline::new();
    ok(&[
        "pretrain",
        "--data",
        p(&pl.dir("data")),
        "--out",
        p(&pl.dir("pre")),
        "--set",
        "policy.pretrain.lr=0",
    ]);
    let ckpt = PolicyParams::from_json(&fs::read_to_string(pl.dir("pre/policy.json")).unwrap()).unwrap();
    assert_eq!(ckpt, PolicyParams::init(PolicyShape::default(), 0).unwrap());
    let curve = fs::read_to_string(pl.dir("pre/pretrain_curve.csv")).unwrap();
    assert!(curve.starts_with("epoch,nll,nll_per_base\n"));
    for line in curve.lines().skip(1) {
        assert!(line.split(',').skip(1).all(|v| v.parse::<f64>().unwrap().is_finite()));
    }
}

#[test]
fn surrogate_roles_and_optimize_chain() {
    let pl = Pipeline::new();
    let data = pl.dir("data");
    ok(&["pretrain", "--data", p(&data), "--out", p(&pl.dir("pre"))]);
    ok(&["fit-surrogate", "--data", p(&data), "--out", p(&pl.dir("sur"))]);
    let eval = fs::read_to_string(pl.dir("sur/surrogate_eval.csv")).unwrap();
    assert!(eval.starts_with("split,n,pearson,mae,rmse,baseline_mae\n"));

    ok(&["infer-roles", "--model", p(&pl.dir("sur/model.json")), "--data", p(&data), "--out", p(&pl.dir("roles"))]);
    let roles = fs::read_to_string(pl.dir("roles/role_table.csv")).unwrap();
    assert_eq!(roles.lines().count(), 17);
    ok(&[
        "infer-roles",
        "--alpha",
        "0",
        "--model",
        p(&pl.dir("sur/model.json")),
        "--data",
        p(&data),
        "--out",
        p(&pl.dir("roles0")),
    ]);
    let zero = fs::read_to_string(pl.dir("roles0/role_table.csv")).unwrap();
    assert!(zero.lines().skip(1).all(|l| l.ends_with(",neutral,0.0")));

    let ckpt = pl.dir("pre/policy.json");
    let table = pl.dir("roles/role_table.csv");
    let opt = |out: &str, extra: &[&str]| {
        let mut args = vec!["optimize", "--data", p(&data), "--checkpoint", p(&ckpt), "--roles", p(&table)];
        let out = pl.dir(out);
        args.extend(["--out", p(&out)]);
        args.extend(extra);
        ok(&args);
    };
    opt("opt", &[]);
    let log = fs::read_to_string(pl.dir("opt/run_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2, "one round, one row");
    let m = read_manifest(&pl.dir("opt/optimize.manifest.json")).unwrap();
    for key in ["checkpoint", "roles", "dataset", "dataset_manifest"] {
        assert!(m.inputs.contains_key(key), "{key}");
    }
    assert_eq!(
        m.inputs["checkpoint"].sha256,
        sha256_hex(&fs::read(pl.dir("pre/policy.json")).unwrap())
    );

    ok(&["fit-surrogate", "--offline", "--data", p(&data), "--out", p(&pl.dir("osur"))]);
    opt("off", &["--mode", "offline-mbo", "--model", p(&pl.dir("osur/model.json"))]);
    let proposals = fs::read_to_string(pl.dir("off/proposals.csv")).unwrap();
    assert!(proposals.starts_with("sequence,guide_score,oracle_score\n"));
    assert!(proposals.lines().skip(1).all(|l| !l.ends_with(',')));
    let out = cre(&[
        "optimize",
        "--mode",
        "offline-mbo",
        "--data",
        p(&data),
        "--checkpoint",
        p(&pl.dir("pre/policy.json")),
        "--roles",
        p(&pl.dir("roles/role_table.csv")),
        "--out",
        p(&pl.dir("bad")),
    ]);
    assert_eq!(out.status.code(), Some(2), "offline mode without a model");

    ok(&["optimize", "--greedy", "--data", p(&data), "--out", p(&pl.dir("greedy"))]);
    ok(&[
        "report",
        "--out",
        p(&pl.dir("rep")),
        &format!("taco={}", p(&pl.dir("opt/run_log.csv"))),
        &format!("greedy={}", p(&pl.dir("greedy/run_log.csv"))),
        &format!("offline={}", p(&pl.dir("off/run_log.csv"))),
        "--roles",
        &format!("a={}", p(&pl.dir("roles/role_table.csv"))),
        "--roles",
        &format!("b={}", p(&pl.dir("roles0/role_table.csv"))),
    ]);
    for f in ["report.csv", "top.svg", "diversity.svg", "offline_gap.svg", "role_venn.csv"] {
        assert!(pl.dir("rep").join(f).exists(), "{f}");
    }

    ok(&[
        "evaluate",
        "--fasta",
        p(&pl.dir("opt/proposals.fasta")),
        "--scores",
        p(&pl.dir("opt/proposals.csv")),
        "--column",
        "guide_score",
        "--out",
        p(&pl.dir("eval")),
    ]);
    let metrics = fs::read_to_string(pl.dir("eval/metrics.csv")).unwrap();
    assert!(metrics.starts_with("top,medium,diversity,emb_similarity\n"));
    assert_eq!(metrics.lines().count(), 2);
}
