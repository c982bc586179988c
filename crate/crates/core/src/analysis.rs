//! Corpus-level analyses over attribution and interaction results.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::Split;
use crate::solver::InteractionReport;
use crate::{Error, Result};

/// Adversative words and phrases.
pub const DEFAULT_MARKERS: [&str; 10] =
    ["not", "but", "yet", "though", "although", "even though", "whereas", "except", "despite", "in spite of"];

/// Everything the analyses need about one scored instance.
#[derive(Debug, Clone)]
pub struct AnalyzedInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub psi: Vec<f64>,
    pub interactions: InteractionReport,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearityRow {
    pub id: String,
    /// Pearson correlation of `psi` with the reference coefficients; `None`
    /// when either side has zero variance.
    pub correlation: Option<f64>,
    /// Words absent from the coefficient table (scored as 0).
    pub missing_words: Vec<String>,
    /// Depth of the k-th node ranked by absolute score, for k = 1..=K.
    pub top_node_depths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearityReport {
    pub rows: Vec<NonlinearityRow>,
    /// Mean over rows with a defined correlation.
    pub mean_correlation: Option<f64>,
    pub correlated_instances: usize,
    /// Entry `k - 1` is the corpus mean of each instance's average depth over
    /// its top-k nodes.
    pub average_top_depth: Vec<f64>,
}

/// Pearson correlation; `None` if either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.len() < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if flat(a, saa) || flat(b, sbb) {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Sum of squared deviations indistinguishable from rounding noise.
fn flat(xs: &[f64], ss: f64) -> bool {
    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs())) * 1e-12;
    ss <= xs.len() as f64 * scale * scale
}

/// Node ids ordered by absolute score, largest first. Scores within
/// round-off of zero count as zero. Ties go to the shallower node, then to
/// preorder.
pub fn rank_nodes(report: &InteractionReport) -> Vec<usize> {
    let max = report.nodes.iter().map(|n| n.absolute).fold(0.0, f64::max);
    let floor = 1e-12 * max.max(1.0);
    let key = |i: usize| {
        let a = report.nodes[i].absolute;
        if a <= floor { 0.0 } else { a }
    };
    let mut ids: Vec<usize> = (0..report.nodes.len()).collect();
    ids.sort_by(|&a, &b| {
        key(b).total_cmp(&key(a)).then(report.nodes[a].depth.cmp(&report.nodes[b].depth)).then(a.cmp(&b))
    });
    ids
}

/// Correlation with a reference linear model and depth of the top-ranked
/// interaction nodes. Every occurrence of a word gets that word's coefficient;
/// lookup is case-insensitive.
pub fn nonlinearity_report(instances: &[AnalyzedInstance], coefficients: &HashMap<String, f64>, top_k: usize) -> NonlinearityReport {
    let coefficients: HashMap<String, f64> = coefficients.iter().map(|(k, v)| (k.to_lowercase(), *v)).collect();
    let rows: Vec<NonlinearityRow> = instances
        .iter()
        .map(|inst| {
            let mut missing = Vec::new();
            let reference: Vec<f64> = inst
                .tokens
                .iter()
                .map(|t| {
                    coefficients.get(&t.to_lowercase()).copied().unwrap_or_else(|| {
                        if !missing.contains(t) {
                            missing.push(t.clone());
                        }
                        0.0
                    })
                })
                .collect();
            let depths = rank_nodes(&inst.interactions)
                .into_iter()
                .take(top_k)
                .map(|id| inst.interactions.nodes[id].depth)
                .collect();
            NonlinearityRow {
                id: inst.id.clone(),
                correlation: pearson(&inst.psi, &reference),
                missing_words: missing,
                top_node_depths: depths,
            }
        })
        .collect();

    let defined: Vec<f64> = rows.iter().filter_map(|r| r.correlation).collect();
    let mean_correlation = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);

    let average_top_depth = (1..=top_k)
        .map(|k| {
            let per_instance: Vec<f64> = rows
                .iter()
                .filter(|r| !r.top_node_depths.is_empty())
                .map(|r| {
                    let top = &r.top_node_depths[..k.min(r.top_node_depths.len())];
                    top.iter().sum::<usize>() as f64 / top.len() as f64
                })
                .collect();
            if per_instance.is_empty() {
                0.0
            } else {
                per_instance.iter().sum::<f64>() / per_instance.len() as f64
            }
        })
        .collect();

    NonlinearityReport { rows, mean_correlation, correlated_instances: defined.len(), average_top_depth }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversativeRow {
    pub marker: String,
    /// Nodes whose span is exactly the marker.
    pub count: usize,
    /// Mean absolute score of matched nodes over the generic-node mean.
    pub ratio_self: Option<f64>,
    /// Same for the parents of matched nodes.
    pub ratio_parent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversativeReport {
    /// Mean absolute score over every node (leaves included) of every instance.
    pub generic_average: f64,
    pub rows: Vec<AdversativeRow>,
}

/// A node matches a marker when its words equal the marker's words,
/// case-insensitively. Syntactic labels are ignored.
pub fn adversative_report(instances: &[AnalyzedInstance], markers: &[&str]) -> AdversativeReport {
    let (mut total, mut count) = (0.0, 0usize);
    for inst in instances {
        for n in &inst.interactions.nodes {
            total += n.absolute;
            count += 1;
        }
    }
    let generic_average = if count == 0 { 0.0 } else { total / count as f64 };

    let rows = markers
        .iter()
        .map(|marker| {
            let words: Vec<String> = marker.split_whitespace().map(str::to_lowercase).collect();
            let mut own = Vec::new();
            let mut parents = Vec::new();
            for inst in instances {
                for n in &inst.interactions.nodes {
                    let (lo, hi) = n.span;
                    if hi - lo != words.len() || !inst.tokens[lo..hi].iter().zip(&words).all(|(t, w)| t.to_lowercase() == *w) {
                        continue;
                    }
                    own.push(n.absolute);
                    if let Some(p) = n.parent {
                        parents.push(inst.interactions.nodes[p].absolute);
                    }
                }
            }
            let ratio = |xs: &[f64]| {
                (!xs.is_empty() && generic_average > 0.0)
                    .then(|| xs.iter().sum::<f64>() / xs.len() as f64 / generic_average)
            };
            AdversativeRow {
                marker: marker.to_string(),
                count: own.len(),
                ratio_self: ratio(&own),
                ratio_parent: ratio(&parents),
            }
        })
        .collect();
    AdversativeReport { generic_average, rows }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverfitDiagnostic {
    /// Mean per-instance variance on train minus the same on test.
    pub stat_observed: f64,
    pub p_value: f64,
    pub iterations: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub mean_variance_train: f64,
    pub mean_variance_test: f64,
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

/// Permutation test on the variance of absolute interaction scores.
pub fn overfit_test(train: &[InteractionReport], test: &[InteractionReport], iterations: usize, seed: u64) -> Result<OverfitDiagnostic> {
    let scores = |rs: &[InteractionReport]| rs.iter().map(InteractionReport::absolute_scores).collect::<Vec<_>>();
    overfit_test_scores(&scores(train), &scores(test), iterations, seed)
}

/// Same as [`overfit_test`] on raw per-instance score lists. Instances with
/// fewer than two scores are dropped.
pub fn overfit_test_scores(train: &[Vec<f64>], test: &[Vec<f64>], iterations: usize, seed: u64) -> Result<OverfitDiagnostic> {
    if iterations < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 permutations, got {iterations}")));
    }
    let stats = |side: &str, xs: &[Vec<f64>]| -> Result<Vec<f64>> {
        let kept: Vec<f64> = xs.iter().filter(|s| s.len() >= 2).map(|s| variance(s)).collect();
        if kept.len() < xs.len() {
            log::warn!("{} {side} instance(s) with fewer than 2 nodes excluded", xs.len() - kept.len());
        }
        if kept.len() < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 {side} instances, got {}", kept.len())));
        }
        Ok(kept)
    };
    let train = stats("train", train)?;
    let test = stats("test", test)?;
    let (mean_train, mean_test) = (mean(&train), mean(&test));
    let observed = mean_train - mean_test;
    let p_value = permutation_p_value(&train, &test, iterations, seed);
    Ok(OverfitDiagnostic {
        stat_observed: observed,
        p_value,
        iterations,
        n_train: train.len(),
        n_test: test.len(),
        mean_variance_train: mean_train,
        mean_variance_test: mean_test,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-sided permutation p-value for a difference in means, with add-one
/// smoothing. Permutation `k` draws from its own ChaCha stream, so the result
/// does not depend on how iterations are split across threads. The pool is
/// sorted first so only the two multisets matter.
pub fn permutation_p_value(a: &[f64], b: &[f64], iterations: usize, seed: u64) -> f64 {
    let observed = (mean(a) - mean(b)).abs();
    let mut pool: Vec<f64> = a.iter().chain(b).copied().collect();
    pool.sort_by(f64::total_cmp);
    let n_a = a.len();
    let scale = pool.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let slack = 1e-12 * scale;
    let extreme = (0..iterations as u64)
        .into_par_iter()
        .filter(|&k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            let mut shuffled = pool.clone();
            shuffled.shuffle(&mut rng);
            let stat = mean(&shuffled[..n_a]) - mean(&shuffled[n_a..]);
            stat.abs() + slack >= observed
        })
        .count();
    (1 + extreme) as f64 / (1 + iterations) as f64
}
