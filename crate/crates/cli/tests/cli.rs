use std::path::Path;
use std::process::{Command, Output};

use nicsim_cli::plot::{render_svg, PlotOptions};
use nicsim_cli::read_rows;
use nicsim_core::harness::{run_experiment, ExperimentConfig, ResultRow};
use nicsim_core::{AlgorithmKind, Mode};

fn nicsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nicsim")).args(args).env_remove("NICSIM_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn row(platform: &str, mode: Mode, n: usize) -> ResultRow {
    let cfg = ExperimentConfig { warmup: 2, iterations: 10, ..ExperimentConfig::new(platform, mode, AlgorithmKind::Dissemination, n) };
    ResultRow::new(&cfg, &run_experiment(&cfg).unwrap())
}

fn by_class<'a>(doc: &'a roxmltree::Document, tag: &str, class: &str) -> Vec<roxmltree::Node<'a, 'a>> {
    doc.descendants().filter(|n| n.has_tag_name(tag) && n.attribute("class") == Some(class)).collect()
}

#[test]
fn plot_draws_one_line_per_series() {
    let rows: Vec<ResultRow> = [Mode::Host, Mode::NicCollective]
        .into_iter()
        .flat_map(|m| [2, 4, 8, 16].map(|n| row("myrinet-lanai-xp", m, n)))
        .collect();
    let svg = render_svg(&rows, &PlotOptions::default()).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let root = doc.root_element();
    assert_eq!(root.attribute("version"), Some("1.1"));
    assert!(root.attribute("viewBox").is_some());
    assert_eq!(by_class(&doc, "polyline", "series").len(), 2);
    assert_eq!(by_class(&doc, "g", "xtick").len(), 4);
    assert_eq!(by_class(&doc, "circle", "marker").len(), 8);
    assert!(by_class(&doc, "line", "reference").is_empty());
    assert!(by_class(&doc, "polyline", "model").is_empty());
}

#[test]
fn plot_single_point_is_a_marker() {
    let svg = render_svg(&[row("myrinet-lanai-xp", Mode::Host, 8)], &PlotOptions::default()).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert!(by_class(&doc, "polyline", "series").is_empty());
    assert_eq!(by_class(&doc, "circle", "marker").len(), 1);
}

#[test]
fn plot_overlay_and_reference() {
    let rows: Vec<ResultRow> = [2, 4, 8].map(|n| row("quadrics-elan3", Mode::ElanChain, n)).to_vec();
    let svg = render_svg(&rows, &PlotOptions { model_overlay: true, ..Default::default() }).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let model = by_class(&doc, "polyline", "model");
    assert_eq!(model.len(), 1);
    assert!(model[0].attribute("stroke-dasharray").is_some());
    assert_eq!(model[0].attribute("points").unwrap().split_whitespace().count(), 3);
    assert_eq!(by_class(&doc, "line", "reference").len(), 1);

    let plain = render_svg(&rows, &PlotOptions { reference_line: Some(false), ..Default::default() }).unwrap();
    let doc = roxmltree::Document::parse(&plain).unwrap();
    assert!(by_class(&doc, "line", "reference").is_empty());
}

#[test]
fn plot_rejects_mixed_platforms() {
    let rows = vec![row("myrinet-lanai-xp", Mode::Host, 4), row("myrinet-lanai-9.1", Mode::Host, 4)];
    assert!(render_svg(&rows, &PlotOptions::default()).is_err());
    assert!(render_svg(&[], &PlotOptions::default()).is_err());
}

#[test]
fn sweep_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let svg = dir.path().join("plot.svg");
    let out = nicsim(&[
        "sweep", "--platforms", "quadrics-elan3", "--modes", "all", "--n", "2..8:pow2", "--warmup", "1",
        "--iterations", "5", "--out", csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = read_rows(&csv).unwrap();
    assert_eq!(rows.len(), 4 * 3);
    let keys: Vec<_> = rows.iter().map(ResultRow::sort_key).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);

    let out = nicsim(&["plot", "--in", csv.to_str().unwrap(), "--out", svg.to_str().unwrap(), "--model-overlay"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&svg).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert_eq!(by_class(&doc, "polyline", "series").len(), 4);
    assert_eq!(by_class(&doc, "line", "reference").len(), 1);
}

#[test]
fn run_writes_trace_and_respects_seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let out = nicsim(&["run", "--n", "4", "--iterations", "3", "--warmup", "0", "--trace-out", trace.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("time_ns,kind,src,dst,group,round,seq,action"));
    // 4 ranks, 2 rounds, 3 barriers, each packet sent and received.
    assert_eq!(text.lines().count() - 1, 4 * 2 * 3 * 2);

    let seed_of = |o: &Output| {
        let s = stdout(o);
        let mut lines = s.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let col = header.iter().position(|h| *h == "seed").unwrap();
        lines.next().unwrap().split(',').nth(col).unwrap().to_string()
    };
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 21, "n": 4, "iterations": 5}"#).unwrap();
    let with_env = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_nicsim")).args(args).env("NICSIM_SEED", "7").output().unwrap()
    };
    assert_eq!(seed_of(&with_env(&["run", "--n", "4", "--iterations", "5"])), "7");
    assert_eq!(seed_of(&with_env(&["run", "--config", cfg.to_str().unwrap()])), "21");
    assert_eq!(seed_of(&with_env(&["run", "--config", cfg.to_str().unwrap(), "--seed", "3"])), "3");
    assert_eq!(seed_of(&nicsim(&["run", "--n", "4", "--iterations", "5"])), "0");
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"platfrom": "quadrics-elan3"}"#).unwrap();
    let out = nicsim(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("did you mean `platform`"), "{}", stderr(&out));

    std::fs::write(&cfg, "{\n  \"n\": \"eight\"\n}").unwrap();
    let out = nicsim(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    for args in [
        &["run", "--mode", "elan-chain"][..],
        &["run", "--platform", "myrinet-lanai-10"],
        &["run", "--loss-prob", "1.5"],
        &["model", "--platform", "quadrics-elan3", "--n", "1"],
        &["schedule", "--alg", "gb1", "--n", "8"],
        &["run", "--config", "/nonexistent/cfg.json"],
    ] {
        let out = nicsim(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).starts_with("nicsim: "));
    }
}

#[test]
fn fit_recovers_model_constants_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("samples.csv");
    let truth = nicsim_core::analytic::builtin_params("myrinet-lanai-xp").unwrap();
    let mut text = String::from("n,latency_us\n");
    for n in [2usize, 4, 8, 16, 32] {
        let l = nicsim_core::analytic::predict_latency(&truth, n).unwrap();
        text.push_str(&format!("{n},{l}\n"));
    }
    std::fs::write(&csv, text).unwrap();
    let out = nicsim(&["fit", "--in", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let p = &v["params"];
    // Only t_init + t_adj is identifiable from latencies.
    let base = p["t_init"].as_f64().unwrap() + p["t_adj"].as_f64().unwrap();
    assert!((base - 3.60 - 3.84).abs() < 1e-9);
    assert!((p["t_trig"].as_f64().unwrap() - 3.50).abs() < 1e-9);

    std::fs::write(&csv, "n,latency_us\n4,7.0\n").unwrap();
    assert_eq!(nicsim(&["fit", "--in", csv.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn schedule_command_prints_rounds() {
    let out = nicsim(&["schedule", "--alg", "ds", "--n", "5", "--rank", "0"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["num_steps"], 3);
    assert_eq!(v["schedules"].as_array().unwrap().len(), 1);
    assert_eq!(v["alg"], "ds");
}

#[test]
fn compare_reports_every_applicable_mode() {
    let out = nicsim(&["compare", "--platform", "quadrics-elan3", "--iterations", "20"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["comparison"]["results"].as_array().unwrap().len(), 4);
    assert!(v["comparison"]["host_over_collective"].as_f64().unwrap() > 1.0);
}

#[test]
fn model_examples_are_exact() {
    for (platform, display) in [("myrinet-lanai-xp", "38.94µs"), ("quadrics-elan3", "22.13µs")] {
        let out = nicsim(&["model", "--platform", platform, "--n", "1024"]);
        let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
        assert_eq!(v["display"], display);
    }
    assert!(Path::new(env!("CARGO_BIN_EXE_nicsim")).exists());
}
