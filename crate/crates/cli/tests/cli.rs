//! End-to-end tests of the `tweetnet` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tweetnet"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn write(path: &Path, contents: &str) {
    std::fs::write(path, contents).unwrap();
}

/// Fast training configuration used across the CLI tests.
fn quick_train_config(dir: &Path, extra: &str) -> PathBuf {
    let corpus = fixture("toy32.tsv");
    let config = dir.join("run.config");
    write(
        &config,
        &format!(
            "corpus = {}\ndev_corpus = {}\nout_dir = {}\n\
             conv1_window = 2\nconv1_maps = 2\nconv2_window = 2\nconv2_maps = 3\n\
             d_char = 2\nd_word = 8\nlstm_hidden = 6\nmax_word_len = 12\nmax_sent_len = 12\n\
             batch_size = 4\nmax_epochs = 60\npatience = 60\nseed = 7\n{extra}",
            corpus.display(),
            corpus.display(),
            dir.join("out").display(),
        ),
    );
    config
}

const TABLE_EXAMPLES: [&str; 5] = [
    "@kirstiealley my dentist is great but she's expensive...=(",
    "I'm not dead despite rumours to the contrary.",
    "laptop charger is broken - unless a little cricket set up home inside it overnight. typical at the worst possible time.",
    "My throat is killing me, and While I got a decent night's sleep last night, I still feel like I'm about to fall over.",
    "@lonedog bwahahah...you are amazing! However, it was quite the letdown.",
];

#[test]
fn preprocess_applies_rules_and_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.tsv");
    let output = dir.path().join("out.tsv");
    let rows: String = TABLE_EXAMPLES
        .iter()
        .map(|t| format!("-\t{t}\n"))
        .collect();
    write(&input, &rows);

    let result = binary()
        .args(["preprocess", "--input"])
        .arg(&input)
        .arg("--output")
        .arg(&output)
        .args(["--rules", "on"])
        .output()
        .unwrap();
    assert!(result.status.success(), "{}", stderr(&result));

    let out = stdout(&result);
    assert!(out.contains("rules_applied_tweets = 5"), "{out}");
    for rule in ["R11 = 1", "R12 = 1", "R13 = 1", "R14 = 1", "R15 = 1"] {
        assert!(out.contains(rule), "{out}");
    }

    // normalized forms of the five rule outputs
    let written = std::fs::read_to_string(&output).unwrap();
    let expected = "-\tshe's expensive =(\tR11\n\
                    -\ti'm not dead\tR12\n\
                    -\tlaptop charger is broken\tR13\n\
                    -\ti still feel like i'm about to fall over\tR14\n\
                    -\tit was quite the letdown\tR15\n";
    assert_eq!(written, expected);
}

#[test]
fn preprocess_is_idempotent_on_its_own_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.tsv");
    let once = dir.path().join("once.tsv");
    let twice = dir.path().join("twice.tsv");
    let mut rows: String = TABLE_EXAMPLES
        .iter()
        .map(|t| format!("-\t{t}\n"))
        .collect();
    rows.push_str("1\tCOOOOOL stuff http://t.co/x @you :)\n");
    write(&input, &rows);

    for (src, dst) in [(&input, &once), (&once, &twice)] {
        let result = binary()
            .args(["preprocess", "--input"])
            .arg(src)
            .arg("--output")
            .arg(dst)
            .args(["--rules", "on"])
            .output()
            .unwrap();
        assert!(result.status.success(), "{}", stderr(&result));
    }
    assert_eq!(
        std::fs::read_to_string(&once).unwrap(),
        std::fs::read_to_string(&twice).unwrap()
    );
}

#[test]
fn preprocess_with_rules_off_only_normalizes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.tsv");
    let output = dir.path().join("out.tsv");
    write(&input, "1\tGREAT day but sad night\n");

    let result = binary()
        .args(["preprocess", "--input"])
        .arg(&input)
        .arg("--output")
        .arg(&output)
        .args(["--rules", "off"])
        .output()
        .unwrap();
    assert!(result.status.success());
    assert!(stdout(&result).contains("rules_applied_tweets = 0"));
    assert_eq!(
        std::fs::read_to_string(&output).unwrap(),
        "1\tgreat day but sad night\n"
    );
}

#[test]
fn stats_prints_summary_table() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.tsv");
    write(&input, "1\tab cd\n0\tlonger sentence here\n");
    let result = binary()
        .args(["stats", "--input"])
        .arg(&input)
        .args(["--rules", "off"])
        .output()
        .unwrap();
    assert!(result.status.success());
    let out = stdout(&result);
    assert!(out.contains("N = 2"), "{out}");
    assert!(out.contains("c = 2"), "{out}");
    assert!(out.contains("l_w = 3"), "{out}");
    assert!(out.contains("l_c = 8"), "{out}");
}

#[test]
fn train_writes_artifacts_and_predict_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_train_config(dir.path(), "");
    let out_dir = dir.path().join("out");

    let result = binary()
        .args(["train", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(result.status.success(), "{}", stderr(&result));
    let summary = stdout(&result);
    assert!(summary.contains("best_dev_accuracy = 1"), "{summary}");

    for artifact in [
        "model.twnt",
        "report.tsv",
        "resolved.config",
        "summary.txt",
        "word.vocab",
        "char.vocab",
    ] {
        assert!(out_dir.join(artifact).exists(), "missing {artifact}");
    }

    // the resolved config reproduces the run
    let resolved = out_dir.join("resolved.config");
    let rerun_out = dir.path().join("rerun");
    let rerun = binary()
        .args(["train", "--config"])
        .arg(&resolved)
        .arg("--out")
        .arg(&rerun_out)
        .output()
        .unwrap();
    assert!(rerun.status.success(), "{}", stderr(&rerun));
    assert_eq!(
        std::fs::read_to_string(out_dir.join("report.tsv")).unwrap(),
        std::fs::read_to_string(rerun_out.join("report.tsv")).unwrap()
    );

    // eval on the training corpus: the overfit model scores perfectly
    let eval = binary()
        .args(["eval", "--checkpoint"])
        .arg(out_dir.join("model.twnt"))
        .arg("--input")
        .arg(fixture("toy32.tsv"))
        .output()
        .unwrap();
    assert!(eval.status.success(), "{}", stderr(&eval));
    assert!(stdout(&eval).contains("accuracy = 1"), "{}", stdout(&eval));

    // prediction is deterministic and matches the training label
    let predict = |text: &str| {
        let out = binary()
            .args(["predict", "--checkpoint"])
            .arg(out_dir.join("model.twnt"))
            .args(["--text", text])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        stdout(&out)
    };
    let first = predict("love this great phone so much :)");
    let second = predict("love this great phone so much :)");
    assert_eq!(first, second);
    assert!(first.starts_with("1\t"), "{first}");

    let negative = predict("hate this broken phone so much =(");
    assert!(negative.starts_with("0\t"), "{negative}");
}

#[test]
fn predict_skips_empty_lines_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_train_config(dir.path(), "max_epochs = 2\npatience = 2\n");
    let out_dir = dir.path().join("out");
    let result = binary()
        .args(["train", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(result.status.success(), "{}", stderr(&result));

    let batch = dir.path().join("batch.txt");
    write(&batch, "love this great phone\n\n   \nhate this awful day\n");
    let out = binary()
        .args(["predict", "--checkpoint"])
        .arg(out_dir.join("model.twnt"))
        .arg("--input")
        .arg(&batch)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 2, "{}", stdout(&out));
    assert!(stderr(&out).contains("skipped 2"), "{}", stderr(&out));
}

#[test]
fn missing_vectors_fail_config_validation_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.config");
    write(
        &config,
        &format!(
            "corpus = {}\nembeddings = glove200\n",
            fixture("toy32.tsv").display()
        ),
    );
    let result = binary()
        .args(["train", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2), "{}", stderr(&result));
    assert!(stderr(&result).contains("vectors"), "{}", stderr(&result));
}

#[test]
fn malformed_corpus_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("bad.tsv");
    write(&corpus, "1\tok\n0\tbad\textra\tcolumns\n");
    let config = dir.path().join("run.config");
    write(
        &config,
        &format!("corpus = {}\nmax_epochs = 1\n", corpus.display()),
    );
    let result = binary()
        .args(["train", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(3), "{}", stderr(&result));
}

#[test]
fn cv_prints_fold_table_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_train_config(
        dir.path(),
        "max_epochs = 2\npatience = 2\ndev_fraction = 0.15\n",
    );
    let result = binary()
        .args(["cv", "--k", "3", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(result.status.success(), "{}", stderr(&result));
    let out = stdout(&result);
    assert_eq!(
        out.lines().filter(|l| l.starts_with(char::is_numeric)).count(),
        3,
        "{out}"
    );
    assert!(out.contains("mean = "), "{out}");
    assert!(out.contains("stdev = "), "{out}");
    assert!(dir.path().join("out/cv.tsv").exists());
}

#[test]
fn oversized_k_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_train_config(dir.path(), "max_epochs = 1\n");
    let result = binary()
        .args(["cv", "--k", "64", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2), "{}", stderr(&result));
}
