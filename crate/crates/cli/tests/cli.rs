use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn efnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_efnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small, fast run configuration.
fn write_config(dir: &Path, model: &str) -> PathBuf {
    let config = dir.join(format!("{model}.json"));
    let text = format!(
        r#"{{
  "model": "{model}",
  "data": {{ "synthetic": {{ "rows": 400, "seed": 4 }} }},
  "train": {{ "max_epochs": 6, "patience": 2 }},
  "gbdt": {{ "rounds": 8 }},
  "seed": 5
}}"#
    );
    fs::write(&config, text).unwrap();
    config
}

fn train(dir: &Path, model: &str, out: &str) -> PathBuf {
    let config = write_config(dir, model);
    let out = dir.join(out);
    let result = efnet(&["train", "--config", path(&config), "--out", path(&out)]);
    assert!(result.status.success(), "{}", stderr(&result));
    out
}

fn single_error_line(out: &Output, code: &str, status: i32) -> String {
    assert_eq!(out.status.code(), Some(status), "{}", stderr(out));
    let err = stderr(out);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with(&format!("error[{code}]: ")), "{err}");
    err
}

#[test]
fn train_writes_fixed_layout_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = train(dir.path(), "efnet", "a");
    let b = train(dir.path(), "efnet", "b");
    for file in ["bundle.json", "train_log.csv", "report.json", "report.txt", "confusion.csv", "test.csv"] {
        assert!(a.join(file).is_file(), "{file} missing");
    }
    for file in ["report.json", "report.txt", "confusion.csv", "train_log.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let log = fs::read_to_string(a.join("train_log.csv")).unwrap();
    assert!(log.starts_with("member,epoch,train_loss,val_loss,val_accuracy\nefnet,1,"));
}

#[test]
fn ensemble_report_lists_members() {
    let dir = TempDir::new().unwrap();
    let out = train(dir.path(), "ensemble", "run");
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.starts_with("model: ensemble"));
    assert!(report.contains("member: efnet"));
    assert!(report.contains("member: gbdt"));
    let inspect = efnet(&["inspect", "--bundle", path(&out.join("bundle.json"))]);
    assert!(inspect.status.success());
    let text = String::from_utf8(inspect.stdout).unwrap();
    assert!(text.contains("members           efnet, gbdt"), "{text}");
}

#[test]
fn evaluate_on_saved_test_split_reproduces_report() {
    let dir = TempDir::new().unwrap();
    let run = train(dir.path(), "gbdt", "run");
    let eval_dir = dir.path().join("eval");
    let out = efnet(&[
        "evaluate",
        "--bundle",
        path(&run.join("bundle.json")),
        "--data",
        path(&run.join("test.csv")),
        "--out",
        path(&eval_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for file in ["report.json", "report.txt", "confusion.csv"] {
        assert_eq!(fs::read(run.join(file)).unwrap(), fs::read(eval_dir.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn evaluate_ignores_row_order() {
    let dir = TempDir::new().unwrap();
    let run = train(dir.path(), "baseline", "run");
    let text = fs::read_to_string(run.join("test.csv")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1..].reverse();
    let shuffled = dir.path().join("reversed.csv");
    fs::write(&shuffled, lines.join("\n") + "\n").unwrap();
    let bundle = run.join("bundle.json");
    let a = efnet(&["evaluate", "--bundle", path(&bundle), "--data", path(&run.join("test.csv"))]);
    let b = efnet(&["evaluate", "--bundle", path(&bundle), "--data", path(&shuffled)]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn single_row_evaluation_has_no_auroc() {
    let dir = TempDir::new().unwrap();
    let run = train(dir.path(), "efnet", "run");
    let text = fs::read_to_string(run.join("test.csv")).unwrap();
    let one = dir.path().join("one.csv");
    fs::write(&one, text.lines().take(2).collect::<Vec<_>>().join("\n") + "\n").unwrap();
    let eval = dir.path().join("eval");
    let out = efnet(&[
        "evaluate",
        "--bundle",
        path(&run.join("bundle.json")),
        "--data",
        path(&one),
        "--out",
        path(&eval),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_like::Report = serde_like::parse(&fs::read_to_string(eval.join("report.json")).unwrap());
    assert!(report.accuracy == 0.0 || report.accuracy == 1.0);
    assert!(report.auroc_absent);
}

/// Minimal field extraction so the test does not need a JSON dependency.
mod serde_like {
    pub struct Report {
        pub accuracy: f64,
        pub auroc_absent: bool,
    }

    pub fn parse(text: &str) -> Report {
        let field = |name: &str| {
            let start = text.find(&format!("\"{name}\": ")).unwrap() + name.len() + 4;
            let rest = &text[start..];
            rest[..rest.find([',', '\n']).unwrap()].trim().to_string()
        };
        Report {
            accuracy: field("accuracy").parse().unwrap(),
            auroc_absent: field("auroc_macro") == "null",
        }
    }
}

#[test]
fn predict_appends_probabilities_and_handles_unseen_tokens() {
    let dir = TempDir::new().unwrap();
    let run = train(dir.path(), "ensemble", "run");
    let test = fs::read_to_string(run.join("test.csv")).unwrap();
    let header = test.lines().next().unwrap();
    let columns: Vec<&str> = header.split(',').collect();
    // drop the target column and inject an unseen complaint
    let target = columns.iter().position(|c| *c == "disposition").unwrap();
    let complaint = columns.iter().position(|c| *c == "chiefcomplaint").unwrap();
    let mut reader = csv_lines(&test);
    let mut out_rows = vec![columns
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, c)| c.to_string())
        .collect::<Vec<_>>()];
    for mut row in reader.drain(1..) {
        row[complaint] = "zzqx never seen before".into();
        row.remove(target);
        out_rows.push(row);
    }
    let input = dir.path().join("input.csv");
    fs::write(&input, out_rows.iter().map(|r| quote_row(r)).collect::<Vec<_>>().join("\n") + "\n").unwrap();
    let predictions = dir.path().join("pred.csv");
    let out = efnet(&[
        "predict",
        "--bundle",
        path(&run.join("bundle.json")),
        "--data",
        path(&input),
        "--out",
        path(&predictions),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&predictions).unwrap();
    let rows = csv_lines(&text);
    let head = &rows[0];
    let first_p = head.iter().position(|c| c.starts_with("p_")).unwrap();
    assert_eq!(head.last().unwrap(), "predicted");
    assert_eq!(rows.len(), out_rows.len());
    for row in &rows[1..] {
        let probs: Vec<f64> = row[first_p..row.len() - 1].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(probs.len(), 8);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

/// Splits simple CSV text produced by the tool (quoted fields, no newlines).
fn csv_lines(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|line| {
            let mut fields = Vec::new();
            let mut cur = String::new();
            let mut quoted = false;
            let mut chars = line.chars().peekable();
            while let Some(c) = chars.next() {
                match c {
                    '"' if quoted && chars.peek() == Some(&'"') => {
                        cur.push('"');
                        chars.next();
                    }
                    '"' => quoted = !quoted,
                    ',' if !quoted => fields.push(std::mem::take(&mut cur)),
                    c => cur.push(c),
                }
            }
            fields.push(cur);
            fields
        })
        .collect()
}

fn quote_row(row: &[String]) -> String {
    row.iter()
        .map(|f| {
            if f.contains([',', '"']) {
                format!("\"{}\"", f.replace('"', "\"\""))
            } else {
                f.clone()
            }
        })
        .collect::<Vec<_>>()
        .join(",")
}

#[test]
fn generate_respects_rows_and_imbalance() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("data.csv");
    let out = efnet(&[
        "generate",
        "--rows",
        "1000",
        "--imbalance",
        "9,1,1,1,1,1,1,1",
        "--seed",
        "2",
        "--out",
        path(&csv),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = csv_lines(&fs::read_to_string(&csv).unwrap());
    assert_eq!(rows.len(), 1001);
    let target = rows[0].iter().position(|c| c == "disposition").unwrap();
    let admitted = rows[1..].iter().filter(|r| r[target] == "admitted").count();
    assert_eq!(admitted, 563);
}

#[test]
fn missing_schema_names_the_path() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let out = efnet(&["train", "--schema", "/no/such/schema.json", "--out", path(&out_dir)]);
    let err = single_error_line(&out, "E_DATA", 3);
    assert!(err.contains("/no/such/schema.json"), "{err}");
    assert!(!out_dir.exists());
}

#[test]
fn usage_errors_exit_two() {
    single_error_line(&efnet(&["train", "--model", "forest"]), "E_USAGE", 2);
    single_error_line(&efnet(&["frobnicate"]), "E_USAGE", 2);
    single_error_line(&efnet(&["train", "--data", "x.csv", "--rows", "10"]), "E_USAGE", 2);
}

#[test]
fn unlabelled_evaluation_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let run = train(dir.path(), "gbdt", "run");
    let text = fs::read_to_string(run.join("test.csv")).unwrap();
    let rows = csv_lines(&text);
    let target = rows[0].iter().position(|c| c == "disposition").unwrap();
    let stripped: Vec<String> = rows
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.remove(target);
            quote_row(&r)
        })
        .collect();
    let input = dir.path().join("unlabelled.csv");
    fs::write(&input, stripped.join("\n") + "\n").unwrap();
    let out = efnet(&["evaluate", "--bundle", path(&run.join("bundle.json")), "--data", path(&input)]);
    let err = single_error_line(&out, "E_DATA", 3);
    assert!(err.contains("disposition"), "{err}");
}

#[test]
fn divergent_training_is_a_numeric_error() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("c.json");
    fs::write(&config, r#"{"train": {"learning_rate": 1e200}, "data": {"synthetic": {"rows": 200}}}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = efnet(&["train", "--config", path(&config), "--out", path(&out_dir)]);
    single_error_line(&out, "E_NUMERIC", 4);
    assert!(!out_dir.exists());
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("c.json");
    fs::write(&config, r#"{"epochs": 3}"#).unwrap();
    single_error_line(&efnet(&["train", "--config", path(&config)]), "E_USAGE", 2);
}
