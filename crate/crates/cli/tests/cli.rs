//! End-to-end tests against the compiled binary: exit codes, file formats,
//! and run-to-run determinism.

use std::path::Path;
use std::process::{Command, Output};

fn symts(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symts"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn synth_writes_the_advertised_grid() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&symts(
        dir.path(),
        &["synth", "linear", "--n", "10", "--out", "lin.csv"],
    ));
    let text = read(dir.path(), "lin.csv");
    assert!(text.starts_with("# symts-series v1\n"));
    assert!(text.contains("t,value\n"));
    assert!(text.contains("\n9,9\n"));
    let rows = text.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 11, "header plus 10 points");
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        assert_ok(&symts(
            dir.path(),
            &[
                "synth", "sine", "--n", "30", "--noise", "0.2", "--seed", "5", "--out", name,
            ],
        ));
    }
    assert_eq!(read(dir.path(), "a.csv"), read(dir.path(), "b.csv"));
}

#[test]
fn fit_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&symts(
        dir.path(),
        &["synth", "linear", "--n", "24", "--out", "lin.csv"],
    ));
    for out in ["r1", "r2"] {
        assert_ok(&symts(
            dir.path(),
            &[
                "fit",
                "--input",
                "lin.csv",
                "--mode",
                "no_pvn",
                "--seed",
                "7",
                "--out",
                out,
                "--set",
                "window=24",
                "--set",
                "search.iterations=40",
                "--set",
                "search.c=0.05",
            ],
        ));
    }
    assert_eq!(
        read(dir.path(), "r1/fit.json"),
        read(dir.path(), "r2/fit.json")
    );
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = symts(dir.path(), &["fit", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_input_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = symts(
        dir.path(),
        &["fit", "--input", "nope.csv", "--mode", "no_pvn"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "1,a\n").unwrap();
    let out = symts(
        dir.path(),
        &["fit", "--input", "bad.csv", "--mode", "no_pvn"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));
}

#[test]
fn unordered_timestamps_are_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("dup.csv"), "0,1\n0,2\n").unwrap();
    let out = symts(
        dir.path(),
        &["fit", "--input", "dup.csv", "--mode", "no_pvn"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("increasing"), "{}", stderr(&out));
}

#[test]
fn network_modes_fail_fast_without_weights() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&symts(
        dir.path(),
        &["synth", "linear", "--n", "60", "--out", "lin.csv"],
    ));
    for mode in ["full", "no_ps", "no_re", "no_sas"] {
        let out = symts(
            dir.path(),
            &["evaluate", "--input", "lin.csv", "--mode", mode],
        );
        assert_eq!(out.status.code(), Some(1), "mode {mode}: {}", stderr(&out));
        assert!(stderr(&out).contains("--model"), "{}", stderr(&out));
    }
}

#[test]
fn evaluate_reports_are_byte_identical_and_structured() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&symts(
        dir.path(),
        &["synth", "sine-plus-trend", "--n", "48", "--out", "s.csv"],
    ));
    let args = |out: &'static str| {
        vec![
            "evaluate",
            "--input",
            "s.csv",
            "--mode",
            "no_pvn",
            "--seed",
            "3",
            "--workers",
            "2",
            "--out",
            out,
            "--set",
            "window=12",
            "--set",
            "train_fraction=0.3",
            "--set",
            "search.iterations=20",
        ]
    };
    assert_ok(&symts(dir.path(), &args("e1")));
    assert_ok(&symts(dir.path(), &args("e2")));
    let r1 = read(dir.path(), "e1/report.jsonl");
    assert_eq!(r1, read(dir.path(), "e2/report.jsonl"));

    let lines: Vec<&str> = r1.lines().collect();
    // 48 points at window 12 = 4 windows; floor(0.3*4).max(1) = 1 train, 3 test.
    assert_eq!(lines.len(), 1 + 3 + 1, "header, three rows, summary");
    assert!(lines[0].contains("\"format\":\"symts-report\""));
    assert!(lines[0].contains("\"mode\":\"no_pvn\""));
    assert!(lines[1].contains("\"index\":1"));
    assert!(lines[4].contains("\"summary\":true"));
    for line in &lines {
        assert!(!line.contains("elapsed"), "timings leaked into {line}");
    }
}

#[test]
fn flags_override_config_file_and_set_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&symts(
        dir.path(),
        &["synth", "linear", "--n", "24", "--out", "lin.csv"],
    ));
    std::fs::write(
        dir.path().join("run.conf"),
        "# base settings\nseed = 1\nreward.eta = 0.9\nsearch.iterations = 25\n",
    )
    .unwrap();
    assert_ok(&symts(
        dir.path(),
        &[
            "fit",
            "--input",
            "lin.csv",
            "--mode",
            "no_pvn",
            "--config",
            "run.conf",
            "--seed",
            "2",
            "--out",
            "r",
            "--set",
            "seed=3",
            "--set",
            "window=24",
        ],
    ));
    let text = read(dir.path(), "r/fit.json");
    assert!(
        text.contains("\"seed\":3"),
        "--set wins over --seed and file"
    );
    assert!(text.contains("\"eta\":0.9"), "file value survives");
    assert!(text.contains("\"iterations_per_episode\":25"), "{text}");
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&symts(
        dir.path(),
        &["synth", "linear", "--n", "24", "--out", "lin.csv"],
    ));
    let out = symts(
        dir.path(),
        &[
            "fit",
            "--input",
            "lin.csv",
            "--mode",
            "no_pvn",
            "--set",
            "serach.c=1",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("serach.c"), "{}", stderr(&out));
}

#[test]
fn extrapolate_rejects_short_series() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&symts(
        dir.path(),
        &["synth", "linear", "--n", "20", "--out", "lin.csv"],
    ));
    let out = symts(
        dir.path(),
        &[
            "extrapolate",
            "--input",
            "lin.csv",
            "--mode",
            "no_pvn",
            "--fit-length",
            "30",
            "--horizon",
            "6",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn train_then_fit_round_trips_the_model() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&symts(
        dir.path(),
        &["synth", "sine-plus-trend", "--n", "60", "--out", "s.csv"],
    ));
    assert_ok(&symts(
        dir.path(),
        &[
            "train",
            "--input",
            "s.csv",
            "--mode",
            "full",
            "--seed",
            "4",
            "--out",
            "tr",
            "--set",
            "window=12",
            "--set",
            "train_fraction=0.25",
            "--set",
            "rounds=1",
            "--set",
            "search.iterations=15",
            "--set",
            "train.epochs=1",
            "--set",
            "net.embed_dim=4",
            "--set",
            "net.hidden_dim=4",
        ],
    ));
    assert!(dir.path().join("tr/weights.bin").exists());
    assert!(dir.path().join("tr/library.txt").exists());
    let report = read(dir.path(), "tr/train.json");
    assert!(report.contains("\"format\":\"symts-train\""));

    // The trained artifacts drive a full-mode fit: window length must match
    // the series the encoder was sized for.
    assert_ok(&symts(
        dir.path(),
        &["synth", "sine-plus-trend", "--n", "12", "--out", "w.csv"],
    ));
    assert_ok(&symts(
        dir.path(),
        &[
            "fit",
            "--input",
            "w.csv",
            "--mode",
            "full",
            "--seed",
            "4",
            "--out",
            "f",
            "--model",
            "tr/weights.bin",
            "--library",
            "tr/library.txt",
            "--set",
            "window=12",
            "--set",
            "search.iterations=15",
        ],
    ));
    assert!(read(dir.path(), "f/fit.json").contains("\"mode\":\"full\""));
}

#[test]
fn train_rejects_the_networkless_mode() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&symts(
        dir.path(),
        &["synth", "linear", "--n", "60", "--out", "lin.csv"],
    ));
    let out = symts(
        dir.path(),
        &["train", "--input", "lin.csv", "--mode", "no_pvn"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_compares_modes_and_prints_ratios() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&symts(
        dir.path(),
        &["synth", "sine-plus-trend", "--n", "48", "--out", "s.csv"],
    ));
    assert_ok(&symts(
        dir.path(),
        &[
            "train",
            "--input",
            "s.csv",
            "--mode",
            "full",
            "--seed",
            "4",
            "--out",
            "tr",
            "--set",
            "window=12",
            "--set",
            "train_fraction=0.25",
            "--set",
            "rounds=1",
            "--set",
            "search.iterations=10",
            "--set",
            "train.epochs=1",
            "--set",
            "net.embed_dim=4",
            "--set",
            "net.hidden_dim=4",
        ],
    ));
    let out = symts(
        dir.path(),
        &[
            "bench",
            "--input",
            "s.csv",
            "--mode",
            "full",
            "--model",
            "tr/weights.bin",
            "--seed",
            "3",
            "--out",
            "bn",
            "--modes",
            "full,no_re",
            "--set",
            "window=12",
            "--set",
            "train_fraction=0.3",
            "--set",
            "search.iterations=10",
        ],
    );
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    let steps_line = text
        .lines()
        .find(|l| l.starts_with("steps ratio"))
        .expect("steps ratio line");
    let atc_line = text
        .lines()
        .find(|l| l.starts_with("atc ratio"))
        .expect("atc ratio line");
    let ratio: f64 = steps_line
        .rsplit(':')
        .next()
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(
        ratio > 1.0,
        "uniform rollouts must simulate more: {steps_line}"
    );
    let _: f64 = atc_line.rsplit(':').next().unwrap().trim().parse().unwrap();
    let jsonl = read(dir.path(), "bn/bench.jsonl");
    assert!(jsonl.contains("\"format\":\"symts-bench\""));
    assert!(jsonl.contains("\"steps_ratio\""));
    assert!(
        !jsonl.contains("atc_seconds") && !jsonl.contains("elapsed"),
        "wall-clock leaked into bench.jsonl"
    );
}

#[test]
fn no_pvn_never_requires_a_model() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&symts(
        dir.path(),
        &["synth", "linear", "--n", "24", "--out", "lin.csv"],
    ));
    // Pass a model path that does not exist: no_pvn must not try to load it.
    assert_ok(&symts(
        dir.path(),
        &[
            "fit",
            "--input",
            "lin.csv",
            "--mode",
            "no_pvn",
            "--model",
            "ghost.bin",
            "--out",
            "r",
            "--set",
            "window=24",
            "--set",
            "search.iterations=20",
        ],
    ));
}

#[test]
fn curve_table_covers_every_point() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&symts(
        dir.path(),
        &["synth", "linear", "--n", "24", "--out", "lin.csv"],
    ));
    assert_ok(&symts(
        dir.path(),
        &[
            "fit",
            "--input",
            "lin.csv",
            "--mode",
            "no_pvn",
            "--curve",
            "--out",
            "r",
            "--set",
            "window=24",
            "--set",
            "search.iterations=40",
            "--set",
            "search.c=0.05",
        ],
    ));
    let curve = read(dir.path(), "r/curve.csv");
    assert!(curve.starts_with("# symts-curve v1\n"));
    let rows = curve.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 25, "header plus 24 points");
}
