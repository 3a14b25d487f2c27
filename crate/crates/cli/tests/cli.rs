//! End-to-end tests of the graphpar binary: exit codes, determinism, and the
//! equivalence/audit workflow.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn graphpar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphpar"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_profile(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("profile.json");
    let mut beta = Vec::new();
    for gpus in 2..=4 {
        beta.push(format!(
            r#"{{"collective": "gp-ag", "gpus": {gpus}, "coeff": {}}}"#,
            3e-7 * gpus as f64
        ));
        beta.push(format!(
            r#"{{"collective": "gp-a2a", "gpus": {gpus}, "coeff": {}}}"#,
            8e-8 / gpus as f64
        ));
    }
    fs::write(
        &path,
        format!(
            r#"{{"d": 8, "element_bytes": 8, "alpha_1": 2e-9, "beta": [{}]}}"#,
            beta.join(",")
        ),
    )
    .unwrap();
    path
}

#[test]
fn generate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.el", "b.el"] {
        let out = graphpar(
            dir.path(),
            &[
                "generate", "--kind", "erdos-renyi", "--nodes", "100", "--avg-degree", "5",
                "--seed", "42", "--output", name,
            ],
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = fs::read(dir.path().join("a.el")).unwrap();
    let b = fs::read(dir.path().join("b.el")).unwrap();
    assert_eq!(a, b);
    assert!(!a.is_empty());
}

#[test]
fn generate_zero_degree_graph_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let out = graphpar(
        dir.path(),
        &[
            "generate", "--kind", "power-law", "--nodes", "10", "--avg-degree", "0", "--seed",
            "1", "--output", "z.el",
        ],
    );
    assert!(out.status.success());
    assert!(stdout(&out).contains("edges 0"));
}

#[test]
fn verify_passes_for_both_strategies_and_bincsr() {
    let dir = tempfile::tempdir().unwrap();
    let gen = graphpar(
        dir.path(),
        &[
            "generate", "--kind", "erdos-renyi", "--nodes", "64", "--avg-degree", "4", "--seed",
            "3", "--output", "g.bcsr", "--format", "bincsr",
        ],
    );
    assert!(gen.status.success(), "{}", stderr(&gen));
    for (strategy, p) in [("single", "1"), ("gp-ag", "2"), ("gp-ag", "4"), ("gp-a2a", "2"), ("gp-a2a", "4")] {
        let out = graphpar(
            dir.path(),
            &[
                "verify", "--graph", "g.bcsr", "--format", "bincsr", "--dim", "8", "--heads",
                "4", "-p", p, "--strategy", strategy, "--seed", "5",
            ],
        );
        assert!(
            out.status.success(),
            "strategy {strategy} p={p}: {}\n{}",
            stdout(&out),
            stderr(&out)
        );
        assert!(stdout(&out).contains("RESULT: PASS"));
    }
}

#[test]
fn verify_single_worker_census_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    graphpar(
        dir.path(),
        &[
            "generate", "--kind", "erdos-renyi", "--nodes", "16", "--avg-degree", "3", "--seed",
            "2", "--output", "g.el",
        ],
    );
    let out = graphpar(
        dir.path(),
        &["verify", "--graph", "g.el", "--dim", "4", "--heads", "2", "-p", "1", "--seed", "1"],
    );
    assert!(out.status.success());
    assert!(stdout(&out).contains("collective census: (empty)"));
}

#[test]
fn verify_rejects_indivisible_heads_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    graphpar(
        dir.path(),
        &[
            "generate", "--kind", "erdos-renyi", "--nodes", "12", "--avg-degree", "2", "--seed",
            "2", "--output", "g.el",
        ],
    );
    let out = graphpar(
        dir.path(),
        &[
            "verify", "--graph", "g.el", "--dim", "6", "--heads", "3", "-p", "2", "--strategy",
            "gp-a2a", "--seed", "1",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("h not divisible by p"));
}

#[test]
fn duplicate_edges_fail_with_exit_3_and_line_number() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("dup.el"), "0 1\n1 2\n0 1\n").unwrap();
    let out = graphpar(
        dir.path(),
        &["verify", "--graph", "dup.el", "--dim", "4", "--heads", "1", "-p", "1", "--seed", "0"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn bench_emits_csv_and_honors_empty_kernel_list() {
    let dir = tempfile::tempdir().unwrap();
    graphpar(
        dir.path(),
        &[
            "generate", "--kind", "erdos-renyi", "--nodes", "200", "--avg-degree", "4", "--seed",
            "2", "--output", "g.el",
        ],
    );
    let out = graphpar(
        dir.path(),
        &[
            "bench", "--graph", "g.el", "--dim", "8", "--heads", "2", "--runs", "2", "--warmup",
            "1", "--kernels", "mm,spmm,sddmm",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("kernel,nodes,edges,dim,heads,runs,mean_s,min_s\n"));
    assert_eq!(text.lines().count(), 4);

    let empty = graphpar(
        dir.path(),
        &["bench", "--graph", "g.el", "--kernels", "", "--dim", "8", "--heads", "1"],
    );
    assert!(empty.status.success());
    assert_eq!(stdout(&empty).lines().count(), 1, "header-only CSV");
}

#[test]
fn plan_selects_and_reports_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let profile = write_profile(dir.path());
    let out = graphpar(
        dir.path(),
        &[
            "plan", "--nodes", "100000", "--edges", "10000000", "--max-gpus", "4", "--profile",
            profile.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["plan"]["strategy"], "gp-a2a");
    assert_eq!(doc["plan"]["gpus"], 4);
    assert_eq!(doc["candidates"].as_array().unwrap().len(), 6);

    // Tiny budget: nothing is feasible, plan falls back to a single worker.
    let fallback = graphpar(
        dir.path(),
        &[
            "plan", "--nodes", "100000", "--edges", "100", "--max-gpus", "4", "--profile",
            profile.to_str().unwrap(),
        ],
    );
    assert!(fallback.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&fallback)).unwrap();
    assert_eq!(doc["plan"]["strategy"], "single");
    assert_eq!(doc["plan"]["gpus"], 1);
    assert!(stderr(&fallback).contains("no feasible"));

    let single = graphpar(
        dir.path(),
        &[
            "plan", "--nodes", "1000", "--edges", "1000", "--max-gpus", "1", "--profile",
            profile.to_str().unwrap(),
        ],
    );
    let doc: serde_json::Value = serde_json::from_str(&stdout(&single)).unwrap();
    assert_eq!(doc["plan"]["strategy"], "single");
}

#[test]
fn plan_adapts_to_the_dataset() {
    // One binary, two measured profiles and graph-stat blocks: the dense
    // proteins-like workload favors the all-gather strategy at 8 workers,
    // the sparser products-like workload the all-to-all strategy.
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, ag8: f64, a2a8: f64| {
        let mut beta = Vec::new();
        for gpus in 2..=8 {
            let (ag, a2a) = if gpus == 8 { (ag8, a2a8) } else { (1e-4, 1e-4) };
            beta.push(format!(
                r#"{{"collective": "gp-ag", "gpus": {gpus}, "coeff": {ag}}}"#
            ));
            beta.push(format!(
                r#"{{"collective": "gp-a2a", "gpus": {gpus}, "coeff": {a2a}}}"#
            ));
        }
        let path = dir.path().join(name);
        fs::write(
            &path,
            format!(
                r#"{{"d": 128, "element_bytes": 8, "alpha_1": 2e-9, "beta": [{}]}}"#,
                beta.join(",")
            ),
        )
        .unwrap();
        path
    };
    // proteins-like: ~132K nodes, 79M edges (k ~ 1.2e-6).
    let proteins = write("proteins.json", 4e-7, 6e-7);
    // products-like: ~2.4M nodes, 123M edges (k ~ 1.0e-7).
    let products = write("products.json", 9e-8, 6e-8);
    let run = |profile: &Path, nodes: &str, edges: &str| -> serde_json::Value {
        let out = graphpar(
            dir.path(),
            &[
                "plan", "--nodes", nodes, "--edges", edges, "--max-gpus", "8", "--profile",
                profile.to_str().unwrap(),
            ],
        );
        assert!(out.status.success(), "{}", stderr(&out));
        serde_json::from_str(&stdout(&out)).unwrap()
    };
    let plan_proteins = run(&proteins, "132000", "79000000");
    assert_eq!(plan_proteins["plan"]["strategy"], "gp-ag");
    assert_eq!(plan_proteins["plan"]["gpus"], 8);
    let plan_products = run(&products, "2400000", "123000000");
    assert_eq!(plan_products["plan"]["strategy"], "gp-a2a");
    assert_eq!(plan_products["plan"]["gpus"], 8);
}

#[test]
fn plan_names_missing_profile_entries() {
    let dir = tempfile::tempdir().unwrap();
    let profile = write_profile(dir.path());
    let out = graphpar(
        dir.path(),
        &[
            "plan", "--nodes", "1000", "--edges", "1000", "--max-gpus", "8", "--profile",
            profile.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("5 gpus"), "{}", stderr(&out));
}

fn write_labels(dir: &Path, n: usize, classes: usize) {
    let mut text = String::new();
    for i in 0..n {
        text.push_str(&format!("{i} {}\n", i % classes));
    }
    fs::write(dir.join("labels.txt"), text).unwrap();
}

#[test]
fn train_loss_logs_agree_across_strategies() {
    let dir = tempfile::tempdir().unwrap();
    graphpar(
        dir.path(),
        &[
            "generate", "--kind", "erdos-renyi", "--nodes", "20", "--avg-degree", "3", "--seed",
            "4", "--output", "g.el",
        ],
    );
    write_labels(dir.path(), 20, 2);
    for (strategy, p, log) in [
        ("single", "1", "single.csv"),
        ("gp-ag", "2", "ag.csv"),
        ("gp-a2a", "2", "a2a.csv"),
    ] {
        let out = graphpar(
            dir.path(),
            &[
                "train", "--graph", "g.el", "--labels", "labels.txt", "--dim", "8", "--heads",
                "2", "--layers", "2", "-p", p, "--strategy", strategy, "--steps", "10", "--lr",
                "0.05", "--seed", "7", "--loss-log", log, "--checkpoint", "m.ckpt",
            ],
        );
        assert!(out.status.success(), "{strategy}: {}", stderr(&out));
    }
    let parse = |name: &str| -> Vec<f64> {
        fs::read_to_string(dir.path().join(name))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect()
    };
    let single = parse("single.csv");
    assert_eq!(single.len(), 10);
    for name in ["ag.csv", "a2a.csv"] {
        let other = parse(name);
        for (a, b) in single.iter().zip(&other) {
            assert!((a - b).abs() < 1e-6, "{name}: {a} vs {b}");
        }
    }
}

#[test]
fn train_zero_steps_keeps_initialization_and_zero_lr_keeps_loss() {
    let dir = tempfile::tempdir().unwrap();
    graphpar(
        dir.path(),
        &[
            "generate", "--kind", "erdos-renyi", "--nodes", "12", "--avg-degree", "2", "--seed",
            "4", "--output", "g.el",
        ],
    );
    write_labels(dir.path(), 12, 2);
    let base = [
        "train", "--graph", "g.el", "--labels", "labels.txt", "--dim", "4", "--heads", "2",
        "--layers", "1", "--seed", "9",
    ];
    // steps=0 checkpoints the initialization regardless of the learning rate.
    for (lr, ckpt) in [("0.5", "i1.ckpt"), ("0.0", "i2.ckpt")] {
        let mut args = base.to_vec();
        args.extend(["--steps", "0", "--lr", lr, "--checkpoint", ckpt, "--loss-log", "l0.csv"]);
        let out = graphpar(dir.path(), &args);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let i1 = fs::read(dir.path().join("i1.ckpt")).unwrap();
    let i2 = fs::read(dir.path().join("i2.ckpt")).unwrap();
    assert_eq!(i1, i2);
    assert_eq!(fs::read_to_string(dir.path().join("l0.csv")).unwrap(), "step,loss\n");

    // One real step changes the parameters.
    let mut args = base.to_vec();
    args.extend(["--steps", "1", "--lr", "0.5", "--checkpoint", "i3.ckpt", "--loss-log", "l1.csv"]);
    assert!(graphpar(dir.path(), &args).status.success());
    assert_ne!(i1, fs::read(dir.path().join("i3.ckpt")).unwrap());

    // lr = 0: the loss log is constant.
    let mut args = base.to_vec();
    args.extend(["--steps", "5", "--lr", "0.0", "--checkpoint", "i4.ckpt", "--loss-log", "l5.csv"]);
    assert!(graphpar(dir.path(), &args).status.success());
    let losses: Vec<String> = fs::read_to_string(dir.path().join("l5.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().to_string())
        .collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.iter().all(|l| l == &losses[0]));
}

#[test]
fn train_auto_uses_profile_for_strategy_selection() {
    let dir = tempfile::tempdir().unwrap();
    graphpar(
        dir.path(),
        &[
            "generate", "--kind", "erdos-renyi", "--nodes", "16", "--avg-degree", "3", "--seed",
            "4", "--output", "g.el",
        ],
    );
    write_labels(dir.path(), 16, 2);
    let profile = write_profile(dir.path());
    let out = graphpar(
        dir.path(),
        &[
            "train", "--graph", "g.el", "--labels", "labels.txt", "--dim", "8", "--heads", "4",
            "--layers", "1", "-p", "2", "--strategy", "auto", "--steps", "2", "--lr", "0.1",
            "--seed", "3", "--profile", profile.to_str().unwrap(), "--loss-log", "auto.csv",
            "--checkpoint", "auto.ckpt",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("auto-selected strategy"), "{}", stdout(&out));

    // auto without a profile is a usage error.
    let missing = graphpar(
        dir.path(),
        &[
            "train", "--graph", "g.el", "--labels", "labels.txt", "--strategy", "auto",
            "--steps", "1", "--lr", "0.1",
        ],
    );
    assert_eq!(missing.status.code(), Some(2));
}
