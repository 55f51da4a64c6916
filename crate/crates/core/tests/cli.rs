use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fedgpl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedgpl"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL: &[&str] = &[
    "--rounds",
    "2",
    "--set",
    "synth.nodes=120",
    "--set",
    "synth.feature_dim=8",
    "--set",
    "d=16",
    "--set",
    "max_samples=18",
];

fn with<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(tail).copied().collect()
}

#[test]
fn account_prints_table() {
    let o = fedgpl(&["account", "--preset", "table7"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for needle in [
        "21,800",
        "23,800",
        "81,600",
        "45,600",
        "fedgpl_client_params 800",
    ] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }
    let json = fedgpl(&["account", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["fedgpl_client_params"], 800);
}

#[test]
fn unknown_preset_and_missing_config_fail() {
    let o = fedgpl(&["account", "--preset", "nope"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown preset"));
    let o = fedgpl(&["run", "--config", "/nonexistent/fedgpl.conf"]);
    assert_eq!(o.status.code(), Some(1));
    let o = fedgpl(&["run", "--set", "rounds"]);
    assert_eq!(o.status.code(), Some(1));
    let o = fedgpl(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_is_reproducible_and_checkpoint_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = fedgpl(&with(&["run", "--out", out.to_str().unwrap()], SMALL));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["rounds.csv", "tau.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    let final_acc = report["final_acc"].as_f64().unwrap();

    let ck = a.join("checkpoint.bin");
    let o = fedgpl(&with(
        &["eval", "--checkpoint", ck.to_str().unwrap()],
        SMALL,
    ));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mean_line = text.lines().last().unwrap();
    let acc: f64 = mean_line.split(',').nth(2).unwrap().parse().unwrap();
    assert!((acc - final_acc).abs() < 1e-6, "{acc} vs {final_acc}");
}

#[test]
fn config_file_and_partition_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("exp.conf");
    fs::write(
        &conf,
        "# small\nsynth.nodes = 90\nclients_per_task = 2\ntasks = node, graph\n",
    )
    .unwrap();
    let out = dir.path().join("parts");
    let o = fedgpl(&[
        "partition",
        "--config",
        conf.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for level in ["node", "graph"] {
        assert!(Path::new(&out.join(format!("partition_{level}.tsv"))).exists());
    }
    assert!(!out.join("partition_edge.tsv").exists());
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = fedgpl(&with(
        &[
            "sweep",
            "--sweep",
            "alpha_n=0.3,0.7",
            "--out",
            out.to_str().unwrap(),
        ],
        SMALL,
    ));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(out.join("alpha_n=0.3").join("rounds.csv").exists());
}
