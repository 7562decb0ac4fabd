use std::path::Path;
use std::process::{Command, Output};

use clap::CommandFactory;
use lsr_cli::Cli;

fn lsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsr"))
        .args(args)
        .env_remove("LSR_THREADS")
        .output()
        .expect("spawn lsr")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_fixture(dir: &Path) {
    std::fs::write(
        dir.join("run.trec"),
        "q Q0 d2 1 3.0 t\nq Q0 d1 2 2.0 t\nq Q0 d3 3 1.0 t\n",
    )
    .unwrap();
    std::fs::write(dir.join("q.qrels"), "q 0 d1 2\nq 0 d2 1\n").unwrap();
}

#[test]
fn eval_prints_hand_fixture_value() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let o = lsr(&[
        "eval",
        "--run",
        p(&dir.path().join("run.trec")),
        "--qrels",
        p(&dir.path().join("q.qrels")),
        "--metric",
        "ndcg@10",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "0.7967\n");
}

#[test]
fn eval_json_is_parseable() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let o = lsr(&[
        "--json",
        "eval",
        "--run",
        p(&dir.path().join("run.trec")),
        "--qrels",
        p(&dir.path().join("q.qrels")),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["value"].as_f64().unwrap() - 0.79670).abs() < 1e-4);
    assert_eq!(v["report"]["evaluated"], 1);
}

#[test]
fn missing_index_is_a_usage_error() {
    let o = lsr(&["search", "--queries", "q.spv1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--index"));
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let o = lsr(&[
        "search",
        "--index",
        p(&dir.path().join("absent.lsri")),
        "--queries",
        "q",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(o.stdout.is_empty());

    let bad = dir.path().join("bad.lsri");
    std::fs::write(&bad, b"not an index").unwrap();
    let o = lsr(&["search", "--index", p(&bad), "--queries", "q"]);
    assert_eq!(o.status.code(), Some(2));

    let o = lsr(&["search", "--index", p(&bad), "--queries", "q", "--heap-factor", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    let o = lsr(&["search", "--index", p(&bad), "--queries", "q", "--two-step"]);
    assert_eq!(o.status.code(), Some(1));
    let o = lsr(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_lists_every_flag() {
    let mut cmd = Cli::command();
    cmd.build();
    for sub in cmd.get_subcommands().filter(|s| s.get_name() != "help") {
        let name = sub.get_name().to_string();
        let o = lsr(&[&name, "--help"]);
        assert_eq!(o.status.code(), Some(0));
        let help = stdout(&o);
        for arg in sub.get_arguments() {
            if let Some(long) = arg.get_long() {
                assert!(help.contains(&format!("--{long}")), "{name} --help lacks --{long}");
            }
        }
    }
}

#[test]
fn pipeline_synth_index_search_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth = lsr(&[
        "synth",
        "--out-dir",
        p(d),
        "--docs",
        "600",
        "--queries",
        "12",
        "--vocab-size",
        "3000",
        "--doc-nnz",
        "60",
        "--query-nnz",
        "20",
        "--overlap",
        "0.5",
    ]);
    assert_eq!(
        synth.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&synth.stderr)
    );

    for (kd, name) in [("1000", "main.lsri"), ("100", "s1.lsri")] {
        let o = lsr(&[
            "index",
            "--vectors",
            p(&d.join("docs.spv1")),
            "--k-d",
            kd,
            "--out",
            p(&d.join(name)),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }

    let run = d.join("run.trec");
    let o = lsr(&[
        "search",
        "--index",
        p(&d.join("main.lsri")),
        "--queries",
        p(&d.join("queries.spv1")),
        "--k",
        "1000",
        "--query-cut",
        "500",
        "--heap-factor",
        "2.5",
        "--out",
        p(&run),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let trec = std::fs::read_to_string(&run).unwrap();
    assert!(trec.lines().all(|l| l.split_whitespace().count() == 6));

    // identical inputs give identical payloads, also with more threads
    let to_stdout = |threads: &str| {
        lsr(&[
            "search",
            "--index",
            p(&d.join("main.lsri")),
            "--queries",
            p(&d.join("queries.spv1")),
            "--k",
            "1000",
            "--threads",
            threads,
        ])
    };
    let a = to_stdout("1");
    let b = to_stdout("3");
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout(&a), trec);

    let o = lsr(&[
        "eval",
        "--run",
        p(&run),
        "--qrels",
        p(&d.join("qrels.txt")),
        "--metric",
        "ndcg@10",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let ndcg: f64 = stdout(&o).trim().parse().unwrap();
    assert!(ndcg > 0.5, "ndcg {ndcg}");

    let two = d.join("two.trec");
    let o = lsr(&[
        "search",
        "--index",
        p(&d.join("main.lsri")),
        "--queries",
        p(&d.join("queries.spv1")),
        "--two-step",
        "--stage1",
        "10,100",
        "--stage1-k",
        "1000",
        "--stage1-index",
        p(&d.join("s1.lsri")),
        "--k",
        "10",
        "--out",
        p(&two),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let o = lsr(&[
        "--json",
        "bench",
        "--index",
        p(&d.join("main.lsri")),
        "--queries",
        p(&d.join("queries.spv1")),
        "--k",
        "10",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["repetitions"], 3);
    assert_eq!(v["samples_ns"].as_array().unwrap().len(), 36);

    let o = lsr(&[
        "bench",
        "--engine",
        "bm25",
        "--docs",
        p(&d.join("doc_tokens.jsonl")),
        "--queries",
        p(&d.join("query_tokens.jsonl")),
        "--repetitions",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let o = lsr(&[
        "--json",
        "explain",
        "--index",
        p(&d.join("main.lsri")),
        "--queries",
        p(&d.join("queries.spv1")),
        "--query-id",
        "q00",
        "--doc-id",
        "d000",
        "--top",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["terms"].as_array().unwrap().len() <= 5);
}

#[test]
fn aggregate_writes_vectors_from_logits() {
    use lsr_core::formats::{read_all_vectors, LogitWriter};
    use lsr_core::sparse::{saturate, LogitMatrix};

    let dir = tempfile::tempdir().unwrap();
    let logits = dir.path().join("x.lgt1");
    let mut w = LogitWriter::new(std::fs::File::create(&logits).unwrap(), 3).unwrap();
    w.write(
        "a",
        &LogitMatrix::from_rows(&[vec![0.0, 1.0, -2.0], vec![3.0, -1.0, 0.5]]).unwrap(),
    )
    .unwrap();
    w.finish().unwrap();
    for ext in ["spv1", "jsonl"] {
        let out = dir.path().join(format!("x.{ext}"));
        let o = lsr(&["aggregate", "--logits", p(&logits), "--out", p(&out), "--prune", "2"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let (_, recs) = read_all_vectors(&out, None, Some(3)).unwrap();
        assert_eq!(recs[0].1.terms(), &[0, 1]);
        assert_eq!(recs[0].1.weights(), &[saturate(3.0), saturate(1.0)]);
    }
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("lsr.toml");
    std::fs::write(
        &cfg,
        "[synth]\ndoc_count = 50\nquery_count = 3\nvocab_size = 500\nmean_doc_nnz = 20\nmean_query_nnz = 5\n",
    )
    .unwrap();
    let o = lsr(&[
        "--json",
        "--config",
        p(&cfg),
        "synth",
        "--out-dir",
        p(d),
        "--queries",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["spec"]["doc_count"], 50);
    assert_eq!(v["spec"]["query_count"], 4);

    std::fs::write(&cfg, "[search]\nbogus = 1\n").unwrap();
    let o = lsr(&["--config", p(&cfg), "eval", "--run", "r"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn loss_commands() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("teacher.jsonl");
    std::fs::write(&t, "{\"qid\":\"q\",\"docids\":[\"a\",\"b\"],\"teacher\":[10,-10]}\n").unwrap();
    let o = lsr(&["--json", "loss", "--teacher", p(&t), "--temperature", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["kld"].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-4);

    let o = lsr(&["--json", "loss", "--toy", "--epochs", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["final_flops"].as_f64().unwrap() < v["initial_flops"].as_f64().unwrap());

    let o = lsr(&["loss"]);
    assert_eq!(o.status.code(), Some(1));
}
