//! End-to-end CLI tests: exit codes and a full pipeline run through the
//! compiled binary.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn mswe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mswe"))
        .args(args)
        .output()
        .expect("failed to spawn mswe binary")
}

fn assert_exit(out: &Output, code: i32, args: &[&str]) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "mswe {:?}: expected exit {code}, got {:?}\nstderr: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_ok(args: &[&str]) -> Output {
    let out = mswe(args);
    assert_exit(&out, 0, args);
    out
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Workspace { _dir: dir, root }
    }

    fn path(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into_owned()
    }

    /// Small deterministic corpus with two loose word clusters.
    fn write_corpus(&self) -> String {
        let mut text = String::new();
        for i in 0..40 {
            let words: Vec<String> = (0..15)
                .map(|j| format!("w{:02}", (i * 3 + j * 7) % 18))
                .collect();
            text.push_str(&words.join(" "));
            text.push('\n');
        }
        let path = self.path("corpus.txt");
        fs::write(&path, text).unwrap();
        path
    }
}

#[test]
fn usage_error_exits_2() {
    let out = mswe(&["train", "--no-such-flag"]);
    assert_exit(&out, 2, &["train", "--no-such-flag"]);
}

#[test]
fn mswe_variant_without_topics_exits_2() {
    let ws = Workspace::new();
    let corpus = ws.write_corpus();
    run_ok(&["build-vocab", "--input", &corpus, "--output", &ws.path("vocab.tsv")]);
    let args = [
        "train", "--input", corpus.as_str(), "--vocab", &ws.path("vocab.tsv"),
        "--output", &ws.path("out"), "--variant", "mswe2",
    ];
    let out = mswe(&args);
    assert_exit(&out, 2, &args);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--topics"));
}

#[test]
fn missing_input_file_exits_1() {
    let ws = Workspace::new();
    let args = [
        "build-vocab", "--input", &ws.path("absent.txt"), "--output", &ws.path("vocab.tsv"),
    ];
    let out = mswe(&args);
    assert_exit(&out, 1, &args);
}

#[test]
fn avgc_on_context_free_dataset_exits_2() {
    let ws = Workspace::new();
    let corpus = ws.write_corpus();
    run_ok(&["build-vocab", "--input", &corpus, "--output", &ws.path("vocab.tsv")]);
    run_ok(&[
        "train-lda", "--input", &corpus, "--vocab", &ws.path("vocab.tsv"),
        "--output", &ws.path("topics.txt"), "--num-topics", "2",
    ]);
    run_ok(&[
        "train", "--input", &corpus, "--vocab", &ws.path("vocab.tsv"),
        "--output", &ws.path("model"), "--variant", "mswe2",
        "--topics", &ws.path("topics.txt"), "--dim", "8", "--epochs", "1",
    ]);
    fs::write(ws.path("pairs.tsv"), "w00\tw01\t5.0\nw02\tw03\t1.0\n").unwrap();
    let args = [
        "eval-sim", "--model", &ws.path("model"), "--dataset", &ws.path("pairs.tsv"),
        "--metric", "avgc",
    ];
    let out = mswe(&args);
    assert_exit(&out, 2, &args);
}

#[test]
fn preprocess_normalizes_case_numbers_and_punctuation() {
    let ws = Workspace::new();
    fs::write(ws.path("raw.txt"), "The Bank, 42 dogs.\nPrices rose 3.5% !!\n").unwrap();
    run_ok(&["preprocess", "--input", &ws.path("raw.txt"), "--output", &ws.path("tok.txt")]);
    let got = fs::read_to_string(ws.path("tok.txt")).unwrap();
    assert_eq!(got, "the bank 0 dogs\nprices rose 0\n");
}

#[test]
fn full_pipeline_trains_and_evaluates() {
    let ws = Workspace::new();
    let corpus = ws.write_corpus();
    run_ok(&["build-vocab", "--input", &corpus, "--output", &ws.path("vocab.tsv")]);
    run_ok(&[
        "train-lda", "--input", &corpus, "--vocab", &ws.path("vocab.tsv"),
        "--output", &ws.path("topics.txt"), "--num-topics", "3", "--seed", "2",
    ]);
    run_ok(&[
        "train", "--input", &corpus, "--vocab", &ws.path("vocab.tsv"),
        "--output", &ws.path("model"), "--variant", "mswe1",
        "--topics", &ws.path("topics.txt"), "--dim", "8", "--epochs", "2",
        "--seed", "6", "--export-vectors", &ws.path("vectors.txt"),
    ]);

    // Word-vector export: header then one row per vocabulary entry.
    let vectors = fs::read_to_string(ws.path("vectors.txt")).unwrap();
    let mut lines = vectors.lines();
    assert_eq!(lines.next().unwrap(), "19 8");
    assert_eq!(lines.count(), 19);

    fs::write(ws.path("pairs.tsv"), "w00\tw01\t9.0\nw02\tw10\t4.0\nw05\tw17\t1.0\n").unwrap();
    let sim_args = [
        "eval-sim", "--model", &ws.path("model"), "--dataset", &ws.path("pairs.tsv"),
        "--metric", "avg", "--out", &ws.path("sim.json"),
    ];
    let out = run_ok(&sim_args);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("rho_x100="), "missing summary line:\n{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.path("sim.json")).unwrap()).unwrap();
    assert_eq!(report["pair_count"], 3);

    fs::write(ws.path("analogy.txt"), ": toy\nw00 w01 w02 w03\n: gram1-toy\nw04 w05 w06 w07\n")
        .unwrap();
    run_ok(&[
        "eval-analogy", "--model", &ws.path("model"), "--dataset", &ws.path("analogy.txt"),
        "--out", &ws.path("analogy.json"),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.path("analogy.json")).unwrap()).unwrap();
    assert_eq!(report["total"], 2);
}
