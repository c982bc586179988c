//! Least squares over parse-tree subsets and per-node interaction scores.
//!
//! The LS-Tree value is the coefficient vector of the best additive fit
//! `v(S) ~ sum_{i in S} psi_i` over the node subsets of a tree. Interaction at
//! node `j` compares two fits: one with the rows of `j`'s strict ancestors
//! deleted (`beta_gt`), and one with `j` deleted as well (`beta_ge`).
//!
//! [`detect_interactions`] walks the tree top-down. A child's "ancestors
//! deleted" fit is exactly its parent's "parent and ancestors deleted" fit, so
//! each non-leaf node costs one rank-one downdate of the parent's inverse Gram
//! matrix plus one coefficient update:
//!
//! ```text
//! A_j^-1   = A_i^-1 + A_i^-1 x xᵀ A_i^-1 / (1 - xᵀ A_i^-1 x)
//! beta_ge  = beta_gt - A_j^-1 x (y_j - xᵀ beta_gt)
//! ```
//!
//! Leaves skip the update. Deleting a leaf and its ancestors leaves the word's
//! column empty; the minimum-norm solution sets that coefficient to zero and
//! keeps the rest, so the signed leaf score is `v(leaf)` itself.
//!
//! Distances: the absolute score is the Euclidean norm of
//! `beta_gt - beta_ge`, the signed score is the sum of its entries.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::oracle::CharacteristicTable;
use crate::tree::{DesignMatrix, ParseTree};
use crate::{Error, Result, WordSet};

/// Largest `d` accepted by [`solve_general_ls`].
pub const GENERAL_LS_MAX_D: usize = 20;
/// Largest `d` accepted by [`banzhaf_bruteforce`].
pub const BANZHAF_MAX_D: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionResult {
    /// One importance score per word.
    pub psi: Vec<f64>,
    /// Weighted residual 2-norm of the fit.
    pub residual_norm: f64,
    /// Ratio of extreme eigenvalues of the (weighted) Gram matrix.
    pub condition_estimate: f64,
    /// The Gram matrix was singular and the minimum-norm solution was used.
    pub min_norm_fallback: bool,
}

/// Solves `min_psi sum_r w_r (v(S_r) - sum_{i in S_r} psi_i)^2` over the rows
/// of `x`. Weights default to one.
pub fn solve_lstree(table: &CharacteristicTable, x: &DesignMatrix, weights: Option<&[f64]>) -> Result<AttributionResult> {
    let (n, d) = (x.rows(), x.cols());
    if table.d() != d {
        return Err(Error::DimensionMismatch { expected: d, found: table.d() });
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: w.len() });
        }
        if let Some(bad) = w.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!("row weights must be positive, got {bad}")));
        }
    }
    let y = row_targets(table, x)?;
    let w = weights.map_or_else(|| DVector::from_element(n, 1.0), DVector::from_column_slice);

    // scale rows by sqrt(w) so the weighted problem is an ordinary one
    let sw = w.map(f64::sqrt);
    let mut xw = x.matrix.clone();
    for (r, s) in sw.iter().enumerate() {
        xw.row_mut(r).scale_mut(*s);
    }
    let yw = y.component_mul(&sw);
    let gram = xw.transpose() * &xw;
    let rhs = xw.transpose() * &yw;

    let (psi, min_norm_fallback) = match gram.clone().cholesky() {
        Some(chol) => (chol.solve(&rhs), false),
        None => {
            log::warn!("singular Gram matrix; using the minimum-norm solution");
            (min_norm_lstsq(&xw, &yw), true)
        }
    };
    let residual_norm = (&xw * &psi - &yw).norm();
    Ok(AttributionResult {
        psi: psi.iter().copied().collect(),
        residual_norm,
        condition_estimate: condition_number(&gram),
        min_norm_fallback,
    })
}

/// Coefficients of a least-squares fit over an arbitrary subset collection.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    /// One coefficient per word.
    pub words: Vec<f64>,
    /// Constant term; zero when fitted without one.
    pub intercept: f64,
}

/// Fits `v(S) ~ [c +] sum_{i in S} beta_i` over every subset stored in
/// `table` (the empty set included). Rank-deficient systems get the
/// minimum-norm solution.
pub fn solve_general_ls(table: &CharacteristicTable, with_intercept: bool) -> Result<LinearFit> {
    let d = table.d();
    if d > GENERAL_LS_MAX_D {
        return Err(Error::TooLarge { what: "dense subset regression", d, limit: GENERAL_LS_MAX_D });
    }
    let mut rows: Vec<(&WordSet, f64)> = table.iter().collect();
    rows.sort_by(|a, b| a.0.cmp(b.0));
    let offset = usize::from(with_intercept);
    let mut a = DMatrix::zeros(rows.len(), d + offset);
    let mut y = DVector::zeros(rows.len());
    for (r, (s, v)) in rows.iter().enumerate() {
        if with_intercept {
            a[(r, 0)] = 1.0;
        }
        for i in s.iter() {
            a[(r, i + offset)] = 1.0;
        }
        y[r] = *v;
    }
    let beta = min_norm_lstsq(&a, &y);
    Ok(LinearFit {
        words: beta.iter().skip(offset).copied().collect(),
        intercept: if with_intercept { beta[0] } else { 0.0 },
    })
}

/// Banzhaf value by enumeration:
/// `phi_i = 2^-(d-1) * sum_{S not containing i} [v(S + i) - v(S)]`.
/// `table` must hold every subset of its universe.
pub fn banzhaf_bruteforce(table: &CharacteristicTable) -> Result<Vec<f64>> {
    let d = table.d();
    if d > BANZHAF_MAX_D {
        return Err(Error::TooLarge { what: "Banzhaf enumeration", d, limit: BANZHAF_MAX_D });
    }
    let mut values = vec![0.0; 1 << d];
    for (mask, v) in values.iter_mut().enumerate() {
        *v = table.value(&WordSet::from_mask(d, mask as u64))?;
    }
    let scale = 1.0 / (1u64 << d.saturating_sub(1)) as f64;
    Ok((0..d)
        .map(|i| {
            let bit = 1usize << i;
            let total: f64 = (0..values.len()).filter(|m| m & bit == 0).map(|m| values[m | bit] - values[m]).sum();
            total * scale
        })
        .collect())
}

/// Which distance the caller cares about. Both scores are always computed;
/// the mode only selects what gets emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMode {
    Signed,
    Absolute,
    #[default]
    Both,
}

impl DistanceMode {
    pub fn signed(self) -> bool {
        matches!(self, DistanceMode::Signed | DistanceMode::Both)
    }
    pub fn absolute(self) -> bool {
        matches!(self, DistanceMode::Absolute | DistanceMode::Both)
    }
}

impl FromStr for DistanceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(DistanceMode::Signed),
            "absolute" => Ok(DistanceMode::Absolute),
            "both" => Ok(DistanceMode::Both),
            _ => Err(Error::InvalidArgument(format!("unknown distance {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeScore {
    /// Preorder index.
    pub node: usize,
    pub parent: Option<usize>,
    pub span: (usize, usize),
    pub label: Option<String>,
    pub leaf: bool,
    pub synthetic: bool,
    pub depth: usize,
    pub signed: f64,
    pub absolute: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionReport {
    /// One entry per node, in preorder.
    pub nodes: Vec<NodeScore>,
    pub mode: DistanceMode,
    /// Nodes whose inverse was rebuilt directly because the rank-one
    /// denominator was too small.
    pub fallback_nodes: Vec<usize>,
    /// Largest `|A_j^-1 * gram_j - I|` seen, when verification is enabled.
    pub max_state_error: Option<f64>,
}

impl InteractionReport {
    pub fn absolute_scores(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.absolute).collect()
    }
    pub fn signed_scores(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.signed).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DetectOptions {
    pub mode: DistanceMode,
    /// Rebuild every intermediate Gram matrix and record how far the carried
    /// inverse is from it.
    pub verify: bool,
    /// Visit children right-to-left. Scores must not change.
    pub reverse_children: bool,
    /// Rank-one denominators smaller than this times `trace(A_i^-1)` trigger a
    /// direct re-solve.
    pub tolerance: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions { mode: DistanceMode::Both, verify: false, reverse_children: false, tolerance: 1e-10 }
    }
}

pub fn detect_interactions(
    table: &CharacteristicTable,
    tree: &ParseTree,
    x: &DesignMatrix,
    mode: DistanceMode,
) -> Result<InteractionReport> {
    detect_interactions_with(table, tree, x, DetectOptions { mode, ..DetectOptions::default() })
}

pub fn detect_interactions_with(
    table: &CharacteristicTable,
    tree: &ParseTree,
    x: &DesignMatrix,
    opts: DetectOptions,
) -> Result<InteractionReport> {
    check_shapes(table, tree, x)?;
    let y = row_targets(table, x)?;
    let gram = x.matrix.transpose() * &x.matrix;
    let chol = gram.clone().cholesky().ok_or_else(|| {
        Error::InvalidArgument("design matrix of a normalized tree must have a positive definite Gram matrix".into())
    })?;
    let beta = chol.solve(&(x.matrix.transpose() * &y));
    let a_inv = chol.inverse();

    let mut walk = Walk {
        tree,
        x,
        y: &y,
        opts,
        depths: tree.depths(),
        scores: vec![None; tree.len()],
        fallback: Vec::new(),
        max_state_error: opts.verify.then_some(0.0),
    };
    walk.visit(tree.root_id(), &a_inv, &beta)?;

    let depths = &walk.depths;
    let nodes = walk
        .scores
        .iter()
        .enumerate()
        .map(|(id, s)| {
            let (signed, absolute) = s.expect("every node visited");
            node_score(tree, id, depths[id], signed, absolute)
        })
        .collect();
    Ok(InteractionReport { nodes, mode: opts.mode, fallback_nodes: walk.fallback, max_state_error: walk.max_state_error })
}

struct Walk<'a> {
    tree: &'a ParseTree,
    x: &'a DesignMatrix,
    y: &'a DVector<f64>,
    opts: DetectOptions,
    depths: Vec<usize>,
    scores: Vec<Option<(f64, f64)>>,
    fallback: Vec<usize>,
    max_state_error: Option<f64>,
}

impl Walk<'_> {
    /// `a_inv` and `beta_gt` describe the fit with `j`'s strict ancestors deleted.
    fn visit(&mut self, j: usize, a_inv: &DMatrix<f64>, beta_gt: &DVector<f64>) -> Result<()> {
        let node = &self.tree.nodes()[j];
        let yj = self.y[j];
        if node.is_leaf() {
            self.scores[j] = Some((yj, yj.abs()));
            return Ok(());
        }
        let xj = self.x.matrix.row(j).transpose();
        let u = a_inv * &xj;
        let denom = 1.0 - xj.dot(&u);
        let a_inv_j = if denom.abs() < self.opts.tolerance * a_inv.trace().abs() {
            log::debug!("rank-one denominator {denom:e} at node {j}; solving directly");
            self.fallback.push(j);
            let gram = self.reduced_gram(j);
            match gram.clone().cholesky() {
                Some(c) => c.inverse(),
                None => pseudo_inverse(&gram),
            }
        } else {
            a_inv + (&u * u.transpose()) / denom
        };
        if let Some(worst) = self.max_state_error {
            let gram = self.reduced_gram(j);
            let err = (&a_inv_j * gram - DMatrix::identity(self.x.cols(), self.x.cols())).amax();
            self.max_state_error = Some(worst.max(err));
        }
        let resid = yj - xj.dot(beta_gt);
        let beta_ge = beta_gt - &a_inv_j * &xj * resid;
        let diff = beta_gt - &beta_ge;
        self.scores[j] = Some((diff.sum(), diff.norm()));

        let mut children = node.children.clone();
        if self.opts.reverse_children {
            children.reverse();
        }
        for c in children {
            self.visit(c, &a_inv_j, &beta_ge)?;
        }
        Ok(())
    }

    /// Gram matrix of the rows left after deleting `j` and its ancestors.
    fn reduced_gram(&self, j: usize) -> DMatrix<f64> {
        let deleted = deleted_rows(self.tree, j, true);
        let kept = select_rows(&self.x.matrix, &deleted);
        kept.transpose() * kept
    }
}

/// Interaction scores computed by explicitly re-solving both row-deleted
/// systems at every node with minimum-norm least squares. Cubic per node;
/// meant for verification on small trees.
pub fn detect_interactions_direct(
    table: &CharacteristicTable,
    tree: &ParseTree,
    x: &DesignMatrix,
    mode: DistanceMode,
) -> Result<InteractionReport> {
    check_shapes(table, tree, x)?;
    let y = row_targets(table, x)?;
    let depths = tree.depths();
    let mut nodes = Vec::with_capacity(tree.len());
    for (j, &depth) in depths.iter().enumerate() {
        let fit = |including_self: bool| {
            let deleted = deleted_rows(tree, j, including_self);
            let a = select_rows(&x.matrix, &deleted);
            let b = DVector::from_iterator(
                a.nrows(),
                y.iter().enumerate().filter(|(r, _)| !deleted[*r]).map(|(_, v)| *v),
            );
            min_norm_lstsq(&a, &b)
        };
        let diff = fit(false) - fit(true);
        nodes.push(node_score(tree, j, depth, diff.sum(), diff.norm()));
    }
    Ok(InteractionReport { nodes, mode, fallback_nodes: Vec::new(), max_state_error: None })
}

fn node_score(tree: &ParseTree, id: usize, depth: usize, signed: f64, absolute: f64) -> NodeScore {
    let n = &tree.nodes()[id];
    NodeScore {
        node: id,
        parent: n.parent,
        span: n.span,
        label: n.label.clone(),
        leaf: n.is_leaf(),
        synthetic: n.synthetic,
        depth,
        signed,
        absolute,
    }
}

fn check_shapes(table: &CharacteristicTable, tree: &ParseTree, x: &DesignMatrix) -> Result<()> {
    if x.rows() != tree.len() {
        return Err(Error::DimensionMismatch { expected: tree.len(), found: x.rows() });
    }
    if x.cols() != tree.d() {
        return Err(Error::DimensionMismatch { expected: tree.d(), found: x.cols() });
    }
    if table.d() != tree.d() {
        return Err(Error::DimensionMismatch { expected: tree.d(), found: table.d() });
    }
    Ok(())
}

/// `v` of each row's subset.
fn row_targets(table: &CharacteristicTable, x: &DesignMatrix) -> Result<DVector<f64>> {
    let d = x.cols();
    let mut y = DVector::zeros(x.rows());
    for r in 0..x.rows() {
        let subset = WordSet::from_indices(d, (0..d).filter(|&i| x.get(r, i)));
        y[r] = table.value(&subset)?;
    }
    Ok(y)
}

/// Marks `j`'s strict ancestors, and `j` itself if asked.
fn deleted_rows(tree: &ParseTree, j: usize, including_self: bool) -> Vec<bool> {
    let mut deleted = vec![false; tree.len()];
    for a in tree.ancestors(j) {
        deleted[a] = true;
    }
    deleted[j] = including_self;
    deleted
}

fn select_rows(m: &DMatrix<f64>, deleted: &[bool]) -> DMatrix<f64> {
    let kept: Vec<usize> = (0..m.nrows()).filter(|&r| !deleted[r]).collect();
    m.select_rows(kept.iter())
}

/// Minimum-norm least-squares solution of `a * x = b` via SVD.
pub(crate) fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let eps = svd_cutoff(&svd.singular_values, a.nrows(), a.ncols());
    svd.solve(b, eps).expect("u and v were computed")
}

fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let eps = svd_cutoff(&svd.singular_values, m.nrows(), m.ncols());
    svd.pseudo_inverse(eps).expect("u and v were computed")
}

fn svd_cutoff(sv: &DVector<f64>, rows: usize, cols: usize) -> f64 {
    let max = sv.iter().copied().fold(0.0, f64::max);
    (max * rows.max(cols) as f64 * f64::EPSILON).max(f64::MIN_POSITIVE)
}

fn condition_number(gram: &DMatrix<f64>) -> f64 {
    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
