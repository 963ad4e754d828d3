//! End-to-end checks of the `textsimp` binary: exit codes, file formats,
//! and agreement between the command-line surface and the library.

use std::io::Write as _;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use textsimp_core::checkpoint::Checkpoint;
use textsimp_core::model::Model;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_textsimp")
}

const MAIN_SRC: &str = "the old cat sat on the mat today\n\
                        a very small dog ran far away\n\
                        birds can fly very high above\n\
                        the sun is very hot today\n";
const MAIN_TGT: &str = "the cat sat\na dog ran\nbirds fly high\nthe sun is hot\n";
const DEV_SRC: &str = "the old cat sat on the mat today\nbirds can fly very high above\n";
const DEV_TGT: &str = "the cat sat\nbirds fly high\n";

fn write(dir: &Path, name: &str, content: &str) {
    std::fs::write(dir.join(name), content).unwrap();
}

fn setup_corpus(dir: &Path) {
    write(dir, "main.src", MAIN_SRC);
    write(dir, "main.tgt", MAIN_TGT);
    write(dir, "dev.src", DEV_SRC);
    write(dir, "dev.tgt", DEV_TGT);
    write(
        dir,
        "toy.conf",
        "model.hidden_size = 8\n\
         model.embedding_size = 6\n\
         train.schedule = static\n\
         train.mixing_ratio = 1:0:0\n\
         train.steps = 20\n\
         train.batch_size = 2\n\
         train.seed = 3\n\
         train.out_dir = out\n\
         data.main.train_src = main.src\n\
         data.main.train_tgt = main.tgt\n\
         data.main.dev_src = dev.src\n\
         data.main.dev_tgt = dev.tgt\n",
    );
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_piped(dir: &Path, args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(bin())
        .current_dir(dir)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary spawns");
    child
        .stdin
        .as_mut()
        .unwrap()
        .write_all(stdin.as_bytes())
        .unwrap();
    child.wait_with_output().expect("binary finishes")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn train_toy(dir: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--config", "toy.conf"];
    args.extend_from_slice(extra);
    let out = run_in(dir, &args);
    assert_eq!(code(&out), 0, "train failed: {}", stderr(&out));
}

#[test]
fn bad_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    let out = run_in(dir.path(), &["train", "--config", "toy.conf", "foo=1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("foo"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["decode", "--bogus", "x"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_decode_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    train_toy(dir.path(), &[]);
    assert!(dir.path().join("out/best.ckpt").exists());
    assert!(dir.path().join("out/last.ckpt").exists());

    let history = std::fs::read_to_string(dir.path().join("out/history.csv")).unwrap();
    assert!(history.starts_with("step,task,loss,penalty\n"));
    assert_eq!(history.lines().count(), 21, "header + one row per step");

    let out = run_in(
        dir.path(),
        &[
            "decode",
            "--model",
            "out/best.ckpt",
            "--input",
            "dev.src",
            "--output",
            "hyp.txt",
        ],
    );
    assert_eq!(code(&out), 0, "decode failed: {}", stderr(&out));
    let hyp = std::fs::read_to_string(dir.path().join("hyp.txt")).unwrap();
    assert_eq!(hyp.lines().count(), DEV_SRC.lines().count());

    let out = run_in(
        dir.path(),
        &[
            "evaluate",
            "--source",
            "dev.src",
            "--output",
            "hyp.txt",
            "--refs",
            "dev.tgt",
            "--per-sentence",
            "scores.csv",
        ],
    );
    assert_eq!(code(&out), 0, "evaluate failed: {}", stderr(&out));
    let report = stdout(&out);
    for key in [
        "sentences = ",
        "references = ",
        "sari = ",
        "sari_add = ",
        "sari_keep = ",
        "sari_del = ",
        "bleu = ",
        "fkgl = ",
        "match_exact = ",
        "match_rouge_l = ",
    ] {
        assert!(report.contains(key), "report lacks {key:?}:\n{report}");
    }
    let csv = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    assert!(csv.starts_with("index,sari,sari_add,sari_keep,sari_del,rouge_l,exact_match\n"));
    assert_eq!(csv.lines().count(), 1 + DEV_SRC.lines().count());
}

#[test]
fn identity_evaluation_matches_known_scores() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    let out = run_in(
        dir.path(),
        &[
            "evaluate",
            "--source",
            "main.src",
            "--output",
            "main.src",
            "--refs",
            "main.src",
        ],
    );
    assert_eq!(code(&out), 0);
    let report = stdout(&out);
    assert!(report.contains("sari = 33.333333"), "{report}");
    assert!(report.contains("bleu = 100.000000"), "{report}");
    assert!(report.contains("match_exact = 100.000000"), "{report}");
}

#[test]
fn beam_one_equals_greedy_library_decode() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    train_toy(dir.path(), &[]);

    let out = run_in(
        dir.path(),
        &[
            "decode",
            "--model",
            "out/best.ckpt",
            "--input",
            "dev.src",
            "--beam",
            "1",
        ],
    );
    assert_eq!(code(&out), 0, "decode failed: {}", stderr(&out));
    let cli_lines: Vec<String> = stdout(&out).lines().map(str::to_string).collect();

    let ckpt = Checkpoint::load(&dir.path().join("out/best.ckpt")).unwrap();
    let cfg = ckpt.model_config().unwrap();
    let vocab = ckpt.vocab().unwrap();
    let store = ckpt.store("main").unwrap();
    let model = Model::new(&cfg, &store);
    let lib_lines: Vec<String> = DEV_SRC
        .lines()
        .map(|l| {
            let toks: Vec<String> = l.split_whitespace().map(str::to_string).collect();
            model.greedy(&toks, &vocab, 60).tokens.join(" ")
        })
        .collect();
    assert_eq!(cli_lines, lib_lines);
}

#[test]
fn empty_input_gives_empty_output_and_exit_0() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    train_toy(dir.path(), &[]);
    write(dir.path(), "empty.txt", "");
    let out = run_in(
        dir.path(),
        &[
            "decode",
            "--model",
            "out/last.ckpt",
            "--input",
            "empty.txt",
            "--output",
            "empty.out",
        ],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert_eq!(std::fs::read(dir.path().join("empty.out")).unwrap(), b"");
}

#[test]
fn tampered_checkpoint_reports_shape_conflict() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    train_toy(dir.path(), &[]);

    let mut ckpt = Checkpoint::load(&dir.path().join("out/last.ckpt")).unwrap();
    ckpt.meta
        .insert("model.vocab_size".into(), "999".into());
    ckpt.save(&dir.path().join("tampered.ckpt")).unwrap();

    let out = run_in(
        dir.path(),
        &[
            "decode",
            "--model",
            "tampered.ckpt",
            "--input",
            "dev.src",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("shape conflict"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn misaligned_evaluation_reports_both_counts() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    write(dir.path(), "short.txt", "just one line\n");
    let out = run_in(
        dir.path(),
        &[
            "evaluate",
            "--source",
            "main.src",
            "--output",
            "main.src",
            "--refs",
            "short.txt",
        ],
    );
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains('4') && err.contains('1'), "stderr: {err}");
}

#[test]
fn evaluate_from_pipe_matches_evaluate_from_file() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    let from_file = run_in(
        dir.path(),
        &[
            "evaluate",
            "--source",
            "main.src",
            "--output",
            "main.tgt",
            "--refs",
            "dev.tgt,main.tgt",
        ],
    );
    // same output text arriving on stdin instead of from the file
    let from_pipe = run_piped(
        dir.path(),
        &[
            "evaluate",
            "--source",
            "main.src",
            "--output",
            "-",
            "--refs",
            "dev.tgt,main.tgt",
        ],
        MAIN_TGT,
    );
    assert_eq!(code(&from_file), 1, "refs misaligned in both runs");
    assert_eq!(stderr(&from_file), stderr(&from_pipe));

    let from_file = run_in(
        dir.path(),
        &["evaluate", "--source", "main.src", "--output", "main.tgt", "--refs", "main.tgt"],
    );
    let from_pipe = run_piped(
        dir.path(),
        &["evaluate", "--source", "main.src", "--output", "-", "--refs", "main.tgt"],
        MAIN_TGT,
    );
    assert_eq!(code(&from_file), 0);
    assert_eq!(stdout(&from_file), stdout(&from_pipe));
}

#[test]
fn extra_reference_file_changes_sari() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    // a second reference set that differs from the first
    write(
        dir.path(),
        "alt.tgt",
        "the cat sat down\nthe dog ran\nbirds fly\nthe sun is hot today\n",
    );
    let one = run_in(
        dir.path(),
        &["evaluate", "--source", "main.src", "--output", "main.tgt", "--refs", "main.tgt"],
    );
    let two = run_in(
        dir.path(),
        &[
            "evaluate",
            "--source",
            "main.src",
            "--output",
            "main.tgt",
            "--refs",
            "main.tgt,alt.tgt",
        ],
    );
    assert_eq!(code(&one), 0);
    assert_eq!(code(&two), 0);
    let sari_line = |s: &str| {
        s.lines()
            .find(|l| l.starts_with("sari = "))
            .unwrap()
            .to_string()
    };
    assert_ne!(
        sari_line(&stdout(&one)),
        sari_line(&stdout(&two)),
        "fractional reference counts must move the keep/add scores"
    );
}

#[test]
fn trace_report_prints_exact_counts() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "hand.csv",
        "round,arm,reward,p_0,p_1,p_2\n\
         0,0,-1.0,0.4,0.3,0.3\n\
         1,0,-0.9,0.4,0.3,0.3\n\
         2,1,-0.8,0.4,0.3,0.3\n\
         3,2,-0.7,0.4,0.3,0.3\n\
         4,0,-0.6,0.4,0.3,0.3\n",
    );
    let out = run_in(
        dir.path(),
        &["trace-report", "--trace", "hand.csv", "--fraction", "1.0"],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let report = stdout(&out);
    assert!(report.contains("rounds = 5"), "{report}");
    assert!(report.contains("arm_0_count = 3"), "{report}");
    assert!(report.contains("arm_1_count = 1"), "{report}");
    assert!(report.contains("arm_2_count = 1"), "{report}");
    assert!(report.contains("tail_ratio = 3:1:1"), "{report}");
}

#[test]
fn malformed_trace_row_exits_nonzero_with_row_number() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "bad.csv",
        "round,arm,reward,p_0,p_1\n0,1,-1.0,0.5,0.5\n1,oops,-1.0,0.5,0.5\n",
    );
    let out = run_in(dir.path(), &["trace-report", "--trace", "bad.csv"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("row 3"), "stderr: {}", stderr(&out));
}

#[test]
fn dynamic_run_emits_trace_usable_by_ratio_schedule() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    write(dir.path(), "entail.src", MAIN_SRC);
    write(dir.path(), "entail.tgt", MAIN_TGT);
    train_toy(
        dir.path(),
        &[
            "schedule=dynamic",
            "rounds=4",
            "n_s=2",
            "train.out_dir=dyn",
            "data.entail.train_src=entail.src",
            "data.entail.train_tgt=entail.tgt",
        ],
    );
    assert!(dir.path().join("dyn/trace.csv").exists());

    let report = run_in(dir.path(), &["trace-report", "--trace", "dyn/trace.csv"]);
    assert_eq!(code(&report), 0, "stderr: {}", stderr(&report));
    assert!(stdout(&report).contains("rounds = 4"));

    // feed the recorded trace back in as a static mixing ratio
    train_toy(
        dir.path(),
        &[
            "schedule=ratio_from_trace",
            "trace_file=dyn/trace.csv",
            "trace_fraction=1.0",
            "steps=4",
            "train.out_dir=replay",
            "data.entail.train_src=entail.src",
            "data.entail.train_tgt=entail.tgt",
        ],
    );
    assert!(dir.path().join("replay/last.ckpt").exists());
}

#[test]
fn same_seed_repeats_the_run_exactly() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    train_toy(dir.path(), &["train.out_dir=a"]);
    train_toy(dir.path(), &["train.out_dir=b"]);
    let a = std::fs::read(dir.path().join("a/history.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/history.csv")).unwrap();
    assert_eq!(a, b);
    let a = std::fs::read(dir.path().join("a/last.ckpt")).unwrap();
    let b = std::fs::read(dir.path().join("b/last.ckpt")).unwrap();
    assert_eq!(a, b);
}
