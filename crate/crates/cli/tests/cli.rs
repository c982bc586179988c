use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const LEXICON: &str = "not\t-2\ngood\t1\nfilm\t0.5\nfun\t1.5\nboring\t-1\n";

const CORPUS: &str = r#"{"id":"a","trees":["(S (RB not) (JJ good))"],"split":"train"}
{"id":"b","trees":["(S (NP (DT the) (NN film)) (VP (VBZ is) (ADJP (RB not) (JJ good))))"],"split":"test"}
{"id":"c","trees":["(S (NP (DT the) (NN film)) (VP (VBZ was) (JJ fun)))","(S (ADJP (RB not) (JJ boring)))"],"split":"train"}
{"id":"d","trees":["(S (NP (PRP it)) (VP (VBZ is) (ADJP (RB not) (ADJP (JJ fun) (CC or) (JJ good)))))"],"split":"test"}
"#;

struct Env {
    dir: TempDir,
}

impl Env {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("lex.tsv"), LEXICON).unwrap();
        std::fs::write(dir.path().join("corpus.jsonl"), CORPUS).unwrap();
        Env { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn linear(&self) -> String {
        format!("builtin-linear:{}", self.path("lex.tsv").display())
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_lstree")).args(args).current_dir(self.dir.path()).output().unwrap()
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json_lines(text: &str) -> Vec<serde_json::Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn values_match_lexicon_weights() {
    let env = Env::new();
    let corpus = env.write("one.jsonl", "{\"id\":\"x\",\"trees\":[\"(S (NP (DT the) (NN film)) (VP (VBD was) (JJ fun)))\"]}\n");
    let out = env.run(&["values", "--corpus", p(&corpus), "--model", &env.linear()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = json_lines(&stdout(&out));
    assert_eq!(lines.len(), 1);
    let psi: Vec<f64> = lines[0]["psi"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let expected = [0.0, 0.5, 0.0, 1.5];
    for (a, b) in psi.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12, "{psi:?}");
    }
    assert!(lines[0]["residual_norm"].as_f64().unwrap() < 1e-12);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let env = Env::new();
    for cmd in [
        vec!["values", "--model", "builtin-negation"],
        vec!["interactions", "--model", "builtin-negation", "--render"],
        vec!["diagnose", "--model", "builtin-negation", "--iterations", "500", "--seed", "7"],
    ] {
        let mut args = cmd.clone();
        args.extend(["--corpus", "corpus.jsonl"]);
        let a = env.run(&args);
        let b = env.run(&args);
        assert!(a.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&a.stderr));
        assert!(!a.stdout.is_empty());
        assert_eq!(a.stdout, b.stdout, "{cmd:?}");
    }
}

#[test]
fn linear_render_has_zero_intensity_off_the_leaves() {
    let env = Env::new();
    let out = env.run(&["interactions", "--corpus", "corpus.jsonl", "--model", &env.linear(), "--render"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut checked = 0;
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let span: Vec<usize> = line.split('[').nth(1).unwrap().split(')').next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        if span[1] - span[0] > 1 {
            assert!(line.ends_with("intensity=+0.000"), "{line}");
            checked += 1;
        }
    }
    assert!(checked > 5);
}

#[test]
fn distance_mode_only_changes_the_score_columns() {
    let env = Env::new();
    let run = |mode: &str| {
        let out = env.run(&["interactions", "--corpus", "corpus.jsonl", "--model", "builtin-negation", "--distance", mode]);
        assert!(out.status.success());
        json_lines(&stdout(&out))
    };
    let (signed, absolute, both) = (run("signed"), run("absolute"), run("both"));
    assert_eq!(signed.len(), absolute.len());
    for ((s, a), b) in signed.iter().zip(&absolute).zip(&both) {
        for key in ["instance", "node", "span", "label", "leaf"] {
            assert_eq!(s[key], a[key]);
        }
        assert!(s["absolute"].is_null() && a["signed"].is_null());
        assert_eq!(s["signed"], b["signed"]);
        assert_eq!(a["absolute"], b["absolute"]);
    }
    // the root of [not, good] carries the dominant signed score
    let root = &both[0];
    assert_eq!(root["instance"], "a");
    assert!((root["signed"].as_f64().unwrap() + 4.0 / 3.0).abs() < 1e-12);
}

#[test]
fn empty_corpus_warns_and_succeeds() {
    let env = Env::new();
    let corpus = env.write("empty.jsonl", "\n");
    let out = env.run(&["values", "--corpus", p(&corpus), "--model", &env.linear()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no instances"));
}

#[test]
fn malformed_line_names_its_number() {
    let env = Env::new();
    let text: Vec<&str> = CORPUS.lines().collect();
    let corpus = env.write("bad.jsonl", &format!("{}\n{}\n{{\"id\": 3, oops\n{}\n", text[0], text[1], text[2]));
    let out = env.run(&["values", "--corpus", p(&corpus), "--model", &env.linear()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
}

#[test]
fn bad_tree_is_skipped_with_exit_one() {
    let env = Env::new();
    let corpus = env.write("partial.jsonl", "{\"id\":\"ok\",\"trees\":[\"(S (A a) (B b))\"]}\n{\"id\":\"broken\",\"trees\":[\"(S (A a)\"]}\n");
    let out = env.run(&["values", "--corpus", p(&corpus), "--model", &env.linear()]);
    assert_eq!(out.status.code(), Some(1));
    let lines = json_lines(&stdout(&out));
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["instance"], "ok");
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"broken\""));
}

#[test]
fn configuration_errors_exit_two() {
    let env = Env::new();
    let cases: [&[&str]; 4] = [
        &["values", "--corpus", "missing.jsonl", "--model", "builtin-negation"],
        &["values", "--corpus", "corpus.jsonl", "--model", "nonsense"],
        &["values", "--corpus", "corpus.jsonl", "--model", "builtin-linear:nope.tsv"],
        &["analyze", "--corpus", "corpus.jsonl", "--model", "builtin-negation"],
    ];
    for args in cases {
        assert_eq!(env.run(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn diagnose_requires_split_tags() {
    let env = Env::new();
    let corpus = env.write("nosplit.jsonl", "{\"id\":\"u\",\"trees\":[\"(S (A a) (B b))\"]}\n");
    let out = env.run(&["diagnose", "--corpus", p(&corpus), "--model", "builtin-negation"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("split"));
}

#[test]
fn diagnose_identical_sides_gives_p_near_one() {
    let env = Env::new();
    let mut text = String::new();
    for split in ["train", "test"] {
        for rec in CORPUS.lines() {
            let mut v: serde_json::Value = serde_json::from_str(rec).unwrap();
            v["id"] = format!("{}-{split}", v["id"].as_str().unwrap()).into();
            v["split"] = split.into();
            text.push_str(&format!("{v}\n"));
        }
    }
    let corpus = env.write("mirror.jsonl", &text);
    let out = env.run(&["diagnose", "--corpus", p(&corpus), "--model", "builtin-negation", "--iterations", "1000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = json_lines(&stdout(&out));
    assert_eq!(lines[0]["kind"], "overfit");
    assert_eq!(lines[0]["stat_observed"].as_f64().unwrap(), 0.0);
    assert!(lines[0]["p_value"].as_f64().unwrap() > 0.99);
}

#[test]
fn analyze_reports_ten_depths_and_unit_correlation() {
    let env = Env::new();
    let out = env.run(&["analyze", "--corpus", "corpus.jsonl", "--model", &env.linear(), "--out", "analysis.jsonl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    assert!(table.contains("mean correlation with linear coefficients: 1.000"), "{table}");
    let lines = json_lines(&std::fs::read_to_string(env.path("analysis.jsonl")).unwrap());
    let summary = lines.iter().find(|l| l["kind"] == "nonlinearity_summary").unwrap();
    let depths = summary["average_top_depth"].as_array().unwrap();
    assert_eq!(depths.len(), 10);
    let depths: Vec<f64> = depths.iter().map(|d| d.as_f64().unwrap()).collect();
    assert!(depths.windows(2).all(|w| w[0] <= w[1]), "{depths:?}");
    assert_eq!(depths[..2], [1.0, 1.0]);
    let not = lines.iter().find(|l| l["kind"] == "adversative" && l["marker"] == "not").unwrap();
    assert!(not["ratio_parent"].as_f64().unwrap().abs() < 1e-8);
    let whereas = lines.iter().find(|l| l["marker"] == "whereas").unwrap();
    assert_eq!(whereas["count"], 0);
    assert!(whereas["ratio_self"].is_null());
}

#[test]
fn custom_markers() {
    let env = Env::new();
    let out = env.run(&["analyze", "--corpus", "corpus.jsonl", "--model", "builtin-negation", "--coefficients", "lex.tsv", "--markers", "not good,fun"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = json_lines(&stdout(&out));
    let rows: Vec<_> = lines.iter().filter(|l| l["kind"] == "adversative").collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["marker"], "not good");
    assert_eq!(rows[0]["count"], 2);
    assert!(rows[0]["ratio_self"].as_f64().unwrap() > 1.0);
}
