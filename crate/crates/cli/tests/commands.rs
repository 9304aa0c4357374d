//! Command contracts: exit codes, bisection, determinism, sweeps, exports.

use std::path::Path;
use std::process::Command as Process;

use clap::Parser;
use tverify::bench::{workload_work, OPERATORS};
use tverify::commands::*;
use tverify::Cli;
use tverify_core::{load_embedding, load_model, Embedding, VerGraph};

fn gen(dir: &Path, extra: &[&str]) -> (String, String) {
    let mut argv = vec!["tverify", "gen", "--embed", "8", "--length", "4", "--heads", "2", "--out-dir"];
    let d = dir.to_str().unwrap();
    argv.push(d);
    argv.extend_from_slice(extra);
    let Command::Gen(a) = Cli::parse_from(argv).command else { unreachable!() };
    let (m, i) = cmd_gen(&a).unwrap();
    (m.to_str().unwrap().into(), i.to_str().unwrap().into())
}

fn binary(args: &[&str]) -> i32 {
    Process::new(env!("CARGO_BIN_EXE_tverify"))
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn exit_codes_follow_contract() {
    let dir = tempfile::tempdir().unwrap();
    let (m, i) = gen(dir.path(), &[]);
    let verify = |eps: &str| binary(&["verify", "--model", &m, "--input", &i, "--eps", eps]);
    assert_eq!(verify("0"), 0);
    assert_eq!(verify("1e6"), 1);
    assert_eq!(binary(&["verify", "--model", &m, "--input", "/no/such/input.json", "--eps", "0"]), 2);
    assert_eq!(binary(&["verify", "--model", &m, "--input", &i, "--eps", "-1"]), 2);
    assert_eq!(binary(&["verify", "--model", &m, "--input", &i, "--eps", "0", "--norm", "l7"]), 2);
}

#[test]
fn report_written_and_modes_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (m, i) = gen(dir.path(), &["--seed", "4", "--layers", "2"]);
    for eps in ["0", "0.001", "0.01", "0.05", "0.3"] {
        for norm in ["linf", "l2", "l1"] {
            let mut flags = Vec::new();
            for mode in ["--fused", "--naive"] {
                let out = dir.path().join(format!("r{mode}.json"));
                let argv = [
                    "tverify", "verify", "--model", &m, "--input", &i, "--eps", eps, "--norm", norm, mode, "--out",
                    out.to_str().unwrap(),
                ];
                let Command::Verify(a) = Cli::parse_from(argv).command else { unreachable!() };
                let r = cmd_verify(&a).unwrap();
                let back: tverify::VerifyReport =
                    serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
                assert_eq!(back.verified, r.verified);
                assert_eq!(r.samples[0].verified, r.verified);
                flags.push(r.verified);
            }
            assert_eq!(flags[0], flags[1], "eps {eps} norm {norm}");
        }
    }
}

fn maxeps(m: &str, i: &str, tol: &str, eps_max: &str) -> anyhow::Result<tverify::verify::MaxEpsilon> {
    let argv = ["tverify", "maxeps", "--model", m, "--input", i, "--tol", tol, "--eps-max", eps_max];
    let Command::Maxeps(a) = Cli::parse_from(argv).command else { unreachable!() };
    cmd_maxeps(&a)
}

#[test]
fn bisection_properties() {
    let dir = tempfile::tempdir().unwrap();
    let (m, i) = gen(dir.path(), &["--seed", "2"]);
    let coarse = maxeps(&m, &i, "0.002", "1").unwrap();
    let fine = maxeps(&m, &i, "0.001", "1").unwrap();
    assert!(coarse.failed_at.is_some());
    assert!((coarse.epsilon - fine.epsilon).abs() <= 0.002);
    assert!(fine.bisection_calls as f64 <= (1.0f64 / 0.001).log2().ceil());
    // clamped below the radius
    let low = fine.epsilon / 2.0;
    let clamped = maxeps(&m, &i, "0.001", &low.to_string()).unwrap();
    assert_eq!(clamped.epsilon, low);
    assert_eq!(clamped.failed_at, None);
}

#[test]
fn misclassified_input_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (m, i) = gen(dir.path(), &["--seed", "3"]);
    let mut e: Embedding<f64> = load_embedding(&i).unwrap();
    e.label = Some(1 - e.label.unwrap());
    let wrong = dir.path().join("wrong.json");
    tverify_core::model::save_embedding(&e, &wrong, tverify_core::model::TensorStorage::Inline).unwrap();
    let err = maxeps(&m, wrong.to_str().unwrap(), "0.001", "1").unwrap_err();
    assert!(format!("{err:#}").contains("misclassified input"));
    assert_eq!(binary(&["verify", "--model", &m, "--input", wrong.to_str().unwrap(), "--eps", "0"]), 1);
}

#[test]
fn tune_trace_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let argv = [
            "tverify", "tune", "--pattern", "GEMM", "--shape", "128,1025,128", "--seed", "9", "--out",
            out.to_str().unwrap(),
        ];
        let Command::Tune(a) = Cli::parse_from(argv).command else { unreachable!() };
        cmd_tune(&a).unwrap();
        (std::fs::read(&out).unwrap(), std::fs::read(trace_path(&out)).unwrap())
    };
    let (a, ta) = run("a.json");
    let (b, tb) = run("b.json");
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert_eq!(String::from_utf8(ta).unwrap().lines().count(), 83);
    let code = binary(&["tune", "--pattern", "ELEMENTWISE_MUL", "--shape", "4,100000", "--out", "/tmp/never.json"]);
    assert_eq!(code, 2);
}

#[test]
fn length_sweep_and_weight_ratio_column() {
    let argv = ["tverify", "bench", "--length-sweep", "--wall-budget", "0"];
    let Command::Bench(a) = Cli::parse_from(argv).command else { unreachable!() };
    let rows = cmd_bench(&a).unwrap();
    let lengths: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.length).collect();
    assert_eq!(lengths.into_iter().collect::<Vec<_>>(), vec![2, 4, 8, 16, 32, 64, 128]);
    assert!(rows.iter().all(|r| r.sweep == "length" && r.embed_dim == 128));
    for r in rows.iter().filter(|r| r.operator == "linear") {
        assert_eq!(r.weight_load_ratio, Some(0.5));
        assert_eq!(r.bound_load_ratio, Some(0.5));
    }
    for r in &rows {
        assert!(OPERATORS.contains(&r.operator.as_str()) || r.operator == "total");
        assert!(r.fused_cost <= r.naive_cost, "{r:?}");
        assert!(r.naive_wall_seconds.is_none());
    }
}

#[test]
fn bench_times_small_workloads() {
    let argv = ["tverify", "bench", "--lengths", "2", "--embeds", "64", "--wall-budget", "100000000"];
    let Command::Bench(a) = Cli::parse_from(argv).command else { unreachable!() };
    let rows = cmd_bench(&a).unwrap();
    assert!(rows.iter().any(|r| r.sweep == "embed"));
    for r in rows.iter().filter(|r| r.operator != "total") {
        let w = r.workload.unwrap();
        assert!(workload_work(&w) <= 100_000_000);
        assert!(r.naive_wall_seconds.is_some() && r.fused_wall_seconds.is_some());
    }
}

#[test]
fn gen_is_seeded_and_round_trips() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ma, ia) = gen(a.path(), &["--seed", "7"]);
    let (mb, _) = gen(b.path(), &["--seed", "7"]);
    let (mc, _) = gen(c.path(), &["--seed", "8", "--inline"]);
    let read = |p: &str| std::fs::read(Path::new(p).with_file_name("model.bin")).unwrap();
    assert_eq!(read(&ma), read(&mb));
    let sa = load_model::<f64>(&ma).unwrap();
    let sc = load_model::<f64>(&mc).unwrap();
    assert_ne!(sa.layers[0].wq, sc.layers[0].wq);
    assert!(!Path::new(&mc).with_file_name("model.bin").exists());
    let e: Embedding<f64> = load_embedding(&ia).unwrap();
    let logits = sa.forward(&e.data).unwrap();
    let l = e.label.unwrap();
    assert!(logits.data().iter().all(|&v| v <= logits.data()[l]));
}

#[test]
fn exported_graph_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let (m, _) = gen(dir.path(), &[]);
    for fused in [false, true] {
        let out = dir.path().join(format!("g{fused}.json"));
        let mut argv = vec!["tverify", "export-graph", "--model", &m, "--out", out.to_str().unwrap()];
        if fused {
            argv.push("--fused");
        }
        let Command::ExportGraph(a) = Cli::parse_from(argv).command else { unreachable!() };
        cmd_export_graph(&a).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        let g = VerGraph::<f64>::from_json(&doc).unwrap();
        let spec = load_model::<f64>(&m).unwrap();
        if !fused {
            assert_eq!(g.nodes().len(), spec.config.graph_node_count());
        }
    }
}
