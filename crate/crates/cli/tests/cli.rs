//! End-to-end tests of the binary: fixture estimation against hand
//! numbers, artifact determinism, and the exit-code contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

/// 4-row fixture whose doubly robust scores are hand-computable with
/// mu0 = 1, mu1 = 2, p = 0.5: the effect estimate is exactly 1 with
/// standard error exactly 1.
const FIXTURE: &str = "y,t,x1,x2\n\
                       1,1,0.1,0.9\n\
                       3,1,0.4,0.2\n\
                       0,0,0.5,0.5\n\
                       2,0,0.8,0.3\n";

/// Affine two-head network with zero weights and biases (1, 1):
/// mu0(x) = 1, mu1(x) = 1 + 1 = 2 for every x.
const JOINT_MODEL: &str = "deepinfer-network v1\n\
                           input_dim 2\n\
                           output_dim 2\n\
                           hidden_widths\n\
                           dropout_rates\n\
                           clamp none\n\
                           layer 0 out 2 in 2\n\
                           w 0 0\n\
                           w 0 0\n\
                           b 1 1\n\
                           end\n";

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepinfer"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary should run")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

/// Parses the named column of the first data row with the given estimand.
fn report_field(dir: &Path, estimand: &str, column: usize) -> f64 {
    let text = fs::read_to_string(dir.join("out/report.csv")).expect("report.csv exists");
    let row = text
        .lines()
        .find(|l| l.starts_with(&format!("{},", estimand)))
        .unwrap_or_else(|| panic!("no {} row in {}", estimand, text));
    row.split(',').nth(column).expect("column exists").parse().expect("numeric field")
}

#[test]
fn advise_prints_the_recommended_shape() {
    let dir = tempdir().unwrap();
    let output = run_in(dir.path(), &["advise", "n=10000", "d=20", "beta=21"]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("H=802"), "stdout: {}", stdout);
    assert!(stdout.contains("L=10"), "stdout: {}", stdout);

    let bad = run_in(dir.path(), &["advise", "n=10000"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn ate_on_the_fixture_matches_the_hand_computation() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("fixture.csv"), FIXTURE).unwrap();
    fs::write(dir.path().join("joint.txt"), JOINT_MODEL).unwrap();
    fs::write(
        dir.path().join("run.toml"),
        r#"
[data]
path = "fixture.csv"
outcome = "y"
treatment = "t"

[nuisance]
joint_model = "joint.txt"
propensity_rate = 0.5
"#,
    )
    .unwrap();

    let output = run_in(dir.path(), &["ate", "--config", "run.toml", "--out", "out"]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    assert!(stdout_of(&output).contains("loaded 4 rows"));

    let estimate = report_field(dir.path(), "ate", 1);
    let std_error = report_field(dir.path(), "ate", 2);
    let ci_lower = report_field(dir.path(), "ate", 3);
    assert!((estimate - 1.0).abs() < 1e-12, "estimate {}", estimate);
    assert!((std_error - 1.0).abs() < 1e-12, "std error {}", std_error);
    assert!((ci_lower - (1.0 - 1.959963984540054)).abs() < 1e-9, "ci lower {}", ci_lower);

    let manifest = fs::read_to_string(dir.path().join("out/manifest.txt")).unwrap();
    assert!(manifest.contains("command ate"));
    assert!(manifest.contains("config_sha256 "));
    assert!(dir.path().join("out/summary.txt").exists());
}

#[test]
fn profit_and_policy_match_the_hand_numbers() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("fixture.csv"), FIXTURE).unwrap();
    fs::write(dir.path().join("joint.txt"), JOINT_MODEL).unwrap();
    fs::write(
        dir.path().join("run.toml"),
        r#"
margin = 2.0
cost = 0.5

[data]
path = "fixture.csv"

[nuisance]
joint_model = "joint.txt"
propensity_rate = 0.5

[policy]
covariate = 0
threshold = 0.25
grid_start = 0.25
grid_stop = 0.75
grid_step = 0.25
"#,
    )
    .unwrap();

    // Per-row policy gains are 2 * (psi1 - psi0) - 0.5 = (-2.5, 5.5, 5.5,
    // -2.5) and x1 = (0.1, 0.4, 0.5, 0.8); the 0.25 cutoff treats the
    // last three rows.
    let output = run_in(dir.path(), &["profit", "--config", "run.toml", "--out", "out"]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let profit = report_field(dir.path(), "profit", 1);
    let edge = report_field(dir.path(), "profit_difference", 1);
    assert!((profit - 4.125).abs() < 1e-12, "profit {}", profit);
    assert!((edge - 2.125).abs() < 1e-12, "profit difference {}", edge);

    let output = run_in(dir.path(), &["policy", "--config", "run.toml", "--out", "pol"]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let curve = fs::read_to_string(dir.path().join("pol/policy_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4, "header plus three grid points:\n{}", curve);
    let summary = fs::read_to_string(dir.path().join("pol/summary.txt")).unwrap();
    let selected: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("selected_threshold "))
        .expect("summary names the selected threshold")
        .parse()
        .unwrap();
    assert!((selected - 0.25).abs() < 1e-12, "selected {}", selected);
    let gain: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("selected_gain "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((gain - 2.125).abs() < 1e-12, "gain {}", gain);
}

#[test]
fn tot_and_decomp_run_on_the_fixture() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("fixture.csv"), FIXTURE).unwrap();
    fs::write(dir.path().join("joint.txt"), JOINT_MODEL).unwrap();
    fs::write(
        dir.path().join("run.toml"),
        r#"
[data]
path = "fixture.csv"

[nuisance]
joint_model = "joint.txt"
propensity_rate = 0.5
"#,
    )
    .unwrap();

    let output = run_in(dir.path(), &["tot", "--config", "run.toml", "--out", "out"]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let tot = report_field(dir.path(), "tot", 1);
    assert!((tot - 1.0).abs() < 1e-12, "tot {}", tot);

    let output = run_in(dir.path(), &["decomp", "--config", "run.toml", "--out", "dec"]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let text = fs::read_to_string(dir.path().join("dec/report.csv")).unwrap();
    let value = |name: &str| -> f64 {
        text.lines()
            .find(|l| l.starts_with(&format!("{},", name)))
            .unwrap_or_else(|| panic!("no {} row", name))
            .split(',')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    let gap = value("outcome_gap");
    let cov = value("outcome_gap_covariate_part");
    let eff = value("outcome_gap_outcome_part");
    assert!((gap - (cov + eff)).abs() < 1e-12, "{} vs {} + {}", gap, cov, eff);
}

#[test]
fn runs_are_deterministic_modulo_the_manifest_timestamp() {
    let dir = tempdir().unwrap();
    fs::write(
        dir.path().join("sim.toml"),
        r#"
[dgp]
d = 2
n = 120

[simulate]
reps = 3
nuisance = "oracle"
propensity = "oracle"
"#,
    )
    .unwrap();

    let first = run_in(dir.path(), &["simulate", "--config", "sim.toml", "--out", "a", "--seed", "5"]);
    assert!(first.status.success(), "stderr: {}", stderr_of(&first));
    let second = run_in(dir.path(), &["simulate", "--config", "sim.toml", "--out", "b", "--seed", "5"]);
    assert!(second.status.success(), "stderr: {}", stderr_of(&second));

    let rows_a = fs::read(dir.path().join("a/reps.csv")).unwrap();
    let rows_b = fs::read(dir.path().join("b/reps.csv")).unwrap();
    assert_eq!(rows_a, rows_b);
    assert_eq!(
        fs::read(dir.path().join("a/summary.txt")).unwrap(),
        fs::read(dir.path().join("b/summary.txt")).unwrap()
    );

    let strip_stamp = |path: &Path| -> String {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("timestamp_unix"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(
        strip_stamp(&dir.path().join("a/manifest.txt")),
        strip_stamp(&dir.path().join("b/manifest.txt"))
    );

    // Four data rows: header plus one per rep.
    let text = String::from_utf8(rows_a).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("rep,tau_hat,std_error,ci_lower,ci_upper,covered\n"));
}

#[test]
fn train_writes_model_files_that_reload() {
    let dir = tempdir().unwrap();
    // y = 1 + t exactly, so the joint fit should land near mu0 = 1 and an
    // effect head of 1.
    let mut csv = String::from("y,t,x1\n");
    for i in 0..60 {
        let t = i % 2;
        let x = 0.01 + 0.016 * i as f64;
        csv.push_str(&format!("{},{},{}\n", 1 + t, t, x));
    }
    fs::write(dir.path().join("train.csv"), csv).unwrap();
    fs::write(
        dir.path().join("train.toml"),
        r#"
[data]
path = "train.csv"

[architecture]
hidden = [4]

[train]
target = "joint"
epochs = 400
batch_size = 16
learning_rate = 0.05
validation_fraction = 0.0
"#,
    )
    .unwrap();

    let output = run_in(dir.path(), &["train", "--config", "train.toml", "--out", "fit", "--seed", "1"]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let model_path = dir.path().join("fit/model_joint.txt");
    let model = fs::read_to_string(&model_path).unwrap();
    assert!(model.starts_with("deepinfer-network v1"));
    let summary = fs::read_to_string(dir.path().join("fit/train_summary.txt")).unwrap();
    assert!(summary.contains("joint_training_loss "));
    assert!(summary.contains("joint_epochs_run 400"));

    // Reuse the saved model as the nuisance source for an effect estimate.
    fs::write(
        dir.path().join("ate.toml"),
        r#"
[data]
path = "train.csv"

[nuisance]
joint_model = "fit/model_joint.txt"
"#,
    )
    .unwrap();
    let output = run_in(
        dir.path(),
        &["ate", "--config", "ate.toml", "--out", "est", "--randomized"],
    );
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let text = fs::read_to_string(dir.path().join("est/report.csv")).unwrap();
    let estimate: f64 =
        text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((estimate - 1.0).abs() < 0.2, "estimate {}", estimate);
}

#[test]
fn config_problems_exit_with_code_2() {
    let dir = tempdir().unwrap();

    // No [data] section configured at all.
    let output = run_in(dir.path(), &["ate"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).starts_with("error: config:"), "{}", stderr_of(&output));

    // Missing config file.
    let output = run_in(dir.path(), &["ate", "--config", "missing.toml"]);
    assert_eq!(output.status.code(), Some(2));

    // Unparseable config file.
    fs::write(dir.path().join("bad.toml"), "not = [valid").unwrap();
    let output = run_in(dir.path(), &["ate", "--config", "bad.toml"]);
    assert_eq!(output.status.code(), Some(2));

    // Unknown key.
    fs::write(dir.path().join("typo.toml"), "sede = 3").unwrap();
    let output = run_in(dir.path(), &["ate", "--config", "typo.toml"]);
    assert_eq!(output.status.code(), Some(2));

    // Library-level configuration error: a degenerate placebo fraction.
    fs::write(
        dir.path().join("placebo.toml"),
        r#"
[dgp]
d = 2
n = 50

[placebo]
fraction = 1.0
nuisance = "oracle"
"#,
    )
    .unwrap();
    let output = run_in(dir.path(), &["placebo", "--config", "placebo.toml", "--out", "p"]);
    assert_eq!(output.status.code(), Some(2), "stderr: {}", stderr_of(&output));
    assert!(stderr_of(&output).starts_with("error: config:"));
}

#[test]
fn data_problems_exit_with_code_3() {
    let dir = tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        r#"
[data]
path = "nope.csv"

[nuisance]
propensity_rate = 0.5
fit = "joint"
"#,
    )
    .unwrap();
    let output = run_in(dir.path(), &["ate", "--config", "run.toml", "--out", "out"]);
    assert_eq!(output.status.code(), Some(3), "stderr: {}", stderr_of(&output));
    assert!(stderr_of(&output).starts_with("error: data:"));

    // A non-binary treatment value is reported with its file line.
    fs::write(dir.path().join("bad.csv"), "y,t,x1\n1,1,0.5\n2,2,0.25\n").unwrap();
    fs::write(
        dir.path().join("bad.toml"),
        r#"
[data]
path = "bad.csv"

[nuisance]
propensity_rate = 0.5
"#,
    )
    .unwrap();
    let output = run_in(dir.path(), &["ate", "--config", "bad.toml", "--out", "out"]);
    assert_eq!(output.status.code(), Some(3), "stderr: {}", stderr_of(&output));
    assert!(stderr_of(&output).contains("line 3"), "stderr: {}", stderr_of(&output));
}

#[test]
fn numeric_problems_exit_with_code_4() {
    let dir = tempdir().unwrap();
    // All-zero outcomes with an all-zero nuisance model make every score
    // zero: the plug-in variance is degenerate.
    fs::write(dir.path().join("zero.csv"), "y,t,x1,x2\n0,1,0.1,0.9\n0,1,0.4,0.2\n0,0,0.5,0.5\n0,0,0.8,0.3\n")
        .unwrap();
    let zero_model = JOINT_MODEL.replace("b 1 1", "b 0 0");
    fs::write(dir.path().join("zero.txt"), zero_model).unwrap();
    fs::write(
        dir.path().join("run.toml"),
        r#"
[data]
path = "zero.csv"

[nuisance]
joint_model = "zero.txt"
propensity_rate = 0.5
"#,
    )
    .unwrap();
    let output = run_in(dir.path(), &["ate", "--config", "run.toml", "--out", "out"]);
    assert_eq!(output.status.code(), Some(4), "stderr: {}", stderr_of(&output));
    assert!(stderr_of(&output).starts_with("error: numeric:"), "{}", stderr_of(&output));
}
