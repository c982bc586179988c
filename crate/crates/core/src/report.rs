//! Output formats.
//!
//! Line-delimited JSON is written by hand so every float carries exactly 17
//! significant digits (`-1.3333333333333333e0`), which keeps golden files
//! bit-stable across platforms.

use std::fmt::Write as _;

use crate::analysis::{AdversativeReport, NonlinearityReport, OverfitDiagnostic};
use crate::solver::{AttributionResult, DistanceMode, InteractionReport};
use crate::tree::ParseTree;

/// Float with 17 significant digits, valid as a JSON number.
pub fn fmt_f64(x: f64) -> String {
    debug_assert!(x.is_finite());
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "null".to_owned(), fmt_f64)
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn json_list<T>(xs: &[T], f: impl Fn(&T) -> String) -> String {
    let items: Vec<String> = xs.iter().map(f).collect();
    format!("[{}]", items.join(","))
}

pub fn attribution_line(instance: &str, tokens: &[String], result: &AttributionResult) -> String {
    format!(
        r#"{{"instance":{},"tokens":{},"psi":{},"residual_norm":{},"condition_estimate":{},"min_norm_fallback":{}}}"#,
        json_str(instance),
        json_list(tokens, |t| json_str(t)),
        json_list(&result.psi, |x| fmt_f64(*x)),
        fmt_f64(result.residual_norm),
        if result.condition_estimate.is_finite() { fmt_f64(result.condition_estimate) } else { "null".into() },
        result.min_norm_fallback,
    )
}

/// One line per node in preorder. A score not selected by the report's mode
/// is emitted as `null`.
pub fn interaction_lines(instance: &str, report: &InteractionReport) -> Vec<String> {
    let mode = report.mode;
    report
        .nodes
        .iter()
        .map(|n| {
            format!(
                r#"{{"instance":{},"node":{},"span":[{},{}],"label":{},"leaf":{},"synthetic":{},"signed":{},"absolute":{}}}"#,
                json_str(instance),
                n.node,
                n.span.0,
                n.span.1,
                n.label.as_deref().map_or_else(|| "null".to_owned(), json_str),
                n.leaf,
                n.synthetic,
                fmt_opt(mode.signed().then_some(n.signed)),
                fmt_opt(mode.absolute().then_some(n.absolute)),
            )
        })
        .collect()
}

/// Indented tree with each node's score and its intensity in [-1, 1]
/// (score over the largest magnitude in the instance). Uses the signed score
/// unless the mode is `Absolute`.
pub fn render_tree(tree: &ParseTree, report: &InteractionReport) -> String {
    let use_abs = report.mode == DistanceMode::Absolute;
    let score = |i: usize| if use_abs { report.nodes[i].absolute } else { report.nodes[i].signed };
    let max = (0..report.nodes.len()).map(|i| score(i).abs()).fold(0.0, f64::max);
    // round-off residue would otherwise print as -0.000000
    let floor = 1e-12 * max.max(1.0);
    let score = |i: usize| if score(i).abs() <= floor { 0.0 } else { score(i) };
    let mut out = String::new();
    let mut stack = vec![(tree.root_id(), 0usize)];
    while let Some((id, indent)) = stack.pop() {
        let node = &tree.nodes()[id];
        let s = score(id);
        let intensity = if max > 0.0 { s / max } else { 0.0 };
        let label = node.label.as_deref().unwrap_or(if node.synthetic { "<root>" } else { "-" });
        let _ = writeln!(
            out,
            "{:indent$}{label} [{},{}) \"{}\"  score={s:+.6} intensity={intensity:+.3}",
            "",
            node.span.0,
            node.span.1,
            tree.span_text(id),
            indent = indent * 2
        );
        for &c in node.children.iter().rev() {
            stack.push((c, indent + 1));
        }
    }
    out
}

pub fn nonlinearity_lines(report: &NonlinearityReport) -> Vec<String> {
    let mut lines: Vec<String> = report
        .rows
        .iter()
        .map(|r| {
            format!(
                r#"{{"kind":"nonlinearity","instance":{},"correlation":{},"missing_words":{},"top_node_depths":{}}}"#,
                json_str(&r.id),
                fmt_opt(r.correlation),
                json_list(&r.missing_words, |w| json_str(w)),
                json_list(&r.top_node_depths, |d| d.to_string()),
            )
        })
        .collect();
    lines.push(format!(
        r#"{{"kind":"nonlinearity_summary","mean_correlation":{},"correlated_instances":{},"average_top_depth":{}}}"#,
        fmt_opt(report.mean_correlation),
        report.correlated_instances,
        json_list(&report.average_top_depth, |x| fmt_f64(*x)),
    ));
    lines
}

pub fn adversative_lines(report: &AdversativeReport) -> Vec<String> {
    let mut lines = vec![format!(r#"{{"kind":"generic_node","average_score":{}}}"#, fmt_f64(report.generic_average))];
    lines.extend(report.rows.iter().map(|r| {
        format!(
            r#"{{"kind":"adversative","marker":{},"count":{},"ratio_self":{},"ratio_parent":{}}}"#,
            json_str(&r.marker),
            r.count,
            fmt_opt(r.ratio_self),
            fmt_opt(r.ratio_parent),
        )
    }));
    lines
}

pub fn overfit_line(d: &OverfitDiagnostic) -> String {
    format!(
        r#"{{"kind":"overfit","stat_observed":{},"p_value":{},"iterations":{},"n_train":{},"n_test":{},"mean_variance_train":{},"mean_variance_test":{}}}"#,
        fmt_f64(d.stat_observed),
        fmt_f64(d.p_value),
        d.iterations,
        d.n_train,
        d.n_test,
        fmt_f64(d.mean_variance_train),
        fmt_f64(d.mean_variance_test),
    )
}

/// Human-readable summary tables for `analyze`.
pub fn analysis_table(nl: &NonlinearityReport, adv: &AdversativeReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "mean correlation with linear coefficients: {} ({} of {} instances)",
        nl.mean_correlation.map_or_else(|| "undefined".into(), |c| format!("{c:.3}")),
        nl.correlated_instances,
        nl.rows.len()
    );
    let _ = writeln!(out, "{:>4}  {:>10}", "k", "avg depth");
    for (k, d) in nl.average_top_depth.iter().enumerate() {
        let _ = writeln!(out, "{:>4}  {:>10.3}", k + 1, d);
    }
    let _ = writeln!(out, "\ngeneric node average score: {:.6}", adv.generic_average);
    let _ = writeln!(out, "{:<14} {:>6} {:>10} {:>10}", "marker", "count", "self", "parent");
    let cell = |x: Option<f64>| x.map_or_else(|| "-".to_owned(), |v| format!("{v:.3}"));
    for r in &adv.rows {
        let _ = writeln!(out, "{:<14} {:>6} {:>10} {:>10}", r.marker, r.count, cell(r.ratio_self), cell(r.ratio_parent));
    }
    out
}

pub fn overfit_table(d: &OverfitDiagnostic) -> String {
    format!(
        "train instances {:>6}   mean variance {:.6}\ntest instances  {:>6}   mean variance {:.6}\nobserved difference {:+.6}\np-value {:.6} ({} permutations)\n",
        d.n_train, d.mean_variance_train, d.n_test, d.mean_variance_test, d.stat_observed, d.p_value, d.iterations
    )
}
