//! Bracketed constituency trees and the word-subset system they induce.
//!
//! Trees are normalized on construction: unary chains collapse into their
//! lowest node (keeping the topmost label), so every node covers a distinct
//! word subset. Node ids are preorder indices and the root is always id 0.

use nalgebra::DMatrix;

use crate::{Error, Result, WordSet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub index: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub subset: WordSet,
    /// Half-open word range covered by the node.
    pub span: (usize, usize),
    pub label: Option<String>,
    /// Set on the node introduced by [`merge_sentences`] above several sentences.
    pub synthetic: bool,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    nodes: Vec<TreeNode>,
    tokens: Vec<Token>,
}

impl ParseTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Result<&TreeNode> {
        self.nodes.get(id).ok_or(Error::UnknownNode(id))
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn root_id(&self) -> usize {
        0
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.surface.clone()).collect()
    }

    /// Number of words.
    pub fn d(&self) -> usize {
        self.tokens.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf node covering word `i`.
    pub fn leaf_of(&self, i: usize) -> Option<&TreeNode> {
        self.nodes.iter().find(|n| n.is_leaf() && n.span == (i, i + 1))
    }

    /// Strict ancestors of `id`, nearest first.
    pub fn ancestors(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.nodes[id].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p].parent;
        }
        out
    }

    /// Words covered by `id`, space-joined.
    pub fn span_text(&self, id: usize) -> String {
        let (lo, hi) = self.nodes[id].span;
        self.tokens[lo..hi].iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ")
    }

    /// Height of a node: 1 for leaves, otherwise one more than the deepest child.
    pub fn depth(&self, id: usize) -> Result<usize> {
        self.node(id)?;
        Ok(self.depths()[id])
    }

    /// Depth of every node, indexed by node id.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![1; self.nodes.len()];
        // children always have larger preorder ids than their parent
        for id in (0..self.nodes.len()).rev() {
            if let Some(m) = self.nodes[id].children.iter().map(|&c| depth[c]).max() {
                depth[id] = m + 1;
            }
        }
        depth
    }

    /// Bracketed form. Leaves render as `(TAG word)`, or as the bare word if
    /// they carry no label.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_node(0, &mut out);
        out
    }

    fn render_node(&self, id: usize, out: &mut String) {
        let node = &self.nodes[id];
        if node.is_leaf() {
            let word = escape(&self.tokens[node.span.0].surface);
            match &node.label {
                Some(l) => {
                    out.push('(');
                    out.push_str(&escape(l));
                    out.push(' ');
                    out.push_str(&word);
                    out.push(')');
                }
                None => out.push_str(&word),
            }
            return;
        }
        out.push('(');
        if let Some(l) = &node.label {
            out.push_str(&escape(l));
        }
        for &c in &node.children {
            out.push(' ');
            self.render_node(c, out);
        }
        out.push(')');
    }

    /// Panics if a structural invariant is broken. Used by tests.
    pub fn check_invariants(&self) {
        let d = self.d();
        assert_eq!(self.nodes[0].parent, None);
        assert_eq!(self.nodes[0].subset, WordSet::full(d));
        let mut leaf_words = vec![false; d];
        for (id, n) in self.nodes.iter().enumerate() {
            assert_eq!(n.id, id);
            assert!(!n.subset.is_empty());
            assert_eq!(n.subset, WordSet::span(d, n.span.0, n.span.1));
            if n.is_leaf() {
                assert_eq!(n.span.1, n.span.0 + 1);
                assert!(!leaf_words[n.span.0]);
                leaf_words[n.span.0] = true;
            } else {
                assert!(n.children.len() >= 2, "unary node {id} survived normalization");
                let mut lo = n.span.0;
                for &c in &n.children {
                    assert_eq!(self.nodes[c].parent, Some(id));
                    assert_eq!(self.nodes[c].span.0, lo);
                    lo = self.nodes[c].span.1;
                }
                assert_eq!(lo, n.span.1);
            }
        }
        assert!(leaf_words.iter().all(|&b| b));
        for (i, t) in self.tokens.iter().enumerate() {
            assert_eq!(t.index, i);
        }
    }

    /// Builds a tree from nested word groups, mainly for tests and benchmarks.
    /// Every internal node must have at least two children.
    pub fn from_shape(shape: &Shape) -> Result<ParseTree> {
        fn to_raw(s: &Shape) -> Raw {
            match s {
                Shape::Word(w) => Raw::Word(w.clone()),
                Shape::Node(ch) => Raw::Inner { label: None, children: ch.iter().map(to_raw).collect() },
            }
        }
        build(&to_raw(shape))
    }
}

/// Random tree over `d` words named `w0, w1, ...`. Each internal node splits
/// its range into two parts, or three with probability `ternary`.
pub fn random_tree<R: rand::Rng + ?Sized>(d: usize, ternary: f64, rng: &mut R) -> ParseTree {
    assert!(d >= 1);
    fn grow<R: rand::Rng + ?Sized>(lo: usize, hi: usize, ternary: f64, rng: &mut R) -> Shape {
        if hi - lo == 1 {
            return Shape::Word(format!("w{lo}"));
        }
        let parts = if hi - lo >= 3 && rng.random_bool(ternary) { 3 } else { 2 };
        let mut cuts: Vec<usize> = Vec::new();
        while cuts.len() < parts - 1 {
            let c = rng.random_range(lo + 1..hi);
            if !cuts.contains(&c) {
                cuts.push(c);
            }
        }
        cuts.sort_unstable();
        let mut bounds = vec![lo];
        bounds.extend(cuts);
        bounds.push(hi);
        Shape::Node(bounds.windows(2).map(|w| grow(w[0], w[1], ternary, rng)).collect())
    }
    ParseTree::from_shape(&grow(0, d, ternary, rng)).expect("nonempty shape")
}

/// Unlabelled tree skeleton.
#[derive(Debug, Clone)]
pub enum Shape {
    Word(String),
    Node(Vec<Shape>),
}

/// Rows are nodes in preorder, columns are words.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub row_order: Vec<usize>,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn get(&self, row: usize, word: usize) -> bool {
        self.matrix[(row, word)] != 0.0
    }
}

pub fn design_matrix(tree: &ParseTree) -> DesignMatrix {
    let n = tree.len();
    let d = tree.d();
    let mut matrix = DMatrix::zeros(n, d);
    for (r, node) in tree.nodes().iter().enumerate() {
        for i in node.span.0..node.span.1 {
            matrix[(r, i)] = 1.0;
        }
    }
    DesignMatrix { matrix, row_order: (0..n).collect() }
}

/// Puts several sentence trees under one synthetic root. Word indices of tree
/// `k` follow those of tree `k - 1`. A single tree is returned unchanged.
pub fn merge_sentences(trees: &[ParseTree]) -> Result<ParseTree> {
    match trees {
        [] => return Err(Error::NothingToMerge),
        [t] => return Ok(t.clone()),
        _ => {}
    }
    let total: usize = trees.iter().map(ParseTree::d).sum();
    let mut nodes = vec![TreeNode {
        id: 0,
        parent: None,
        children: Vec::new(),
        subset: WordSet::full(total),
        span: (0, total),
        label: None,
        synthetic: true,
    }];
    let mut tokens = Vec::with_capacity(total);
    let mut word_offset = 0;
    for t in trees {
        let node_offset = nodes.len();
        nodes[0].children.push(node_offset);
        for n in t.nodes() {
            let span = (n.span.0 + word_offset, n.span.1 + word_offset);
            nodes.push(TreeNode {
                id: n.id + node_offset,
                parent: Some(n.parent.map_or(0, |p| p + node_offset)),
                children: n.children.iter().map(|c| c + node_offset).collect(),
                subset: WordSet::span(total, span.0, span.1),
                span,
                label: n.label.clone(),
                synthetic: n.synthetic,
            });
        }
        for tok in t.tokens() {
            tokens.push(Token { index: tok.index + word_offset, surface: tok.surface.clone() });
        }
        word_offset += t.d();
    }
    Ok(ParseTree { nodes, tokens })
}

/// Parses a Penn-Treebank-style bracketed tree, e.g.
/// `(S (NP (DT the) (NN film)) (VP (VBZ works)))`.
///
/// An outer unlabelled wrapper `( (S ...) )` is accepted, bare words may
/// appear as children, and `-LRB-`/`-RRB-` style escapes are decoded in
/// both labels and words.
pub fn parse_ptb(text: &str) -> Result<ParseTree> {
    let lexemes = lex(text);
    if lexemes.is_empty() {
        return Err(Error::EmptyTree);
    }
    let mut pos = 0;
    let raw = parse_raw(&lexemes, &mut pos, text.len())?;
    if let Some(extra) = lexemes.get(pos) {
        return Err(Error::Parse { offset: extra.offset, message: "trailing input after tree".into() });
    }
    build(&raw)
}

#[derive(Debug)]
enum Raw {
    Word(String),
    Inner { label: Option<String>, children: Vec<Raw> },
}

#[derive(Debug, PartialEq)]
enum Kind<'a> {
    Open,
    Close,
    Atom(&'a str),
}

struct Lexeme<'a> {
    kind: Kind<'a>,
    offset: usize,
}

fn lex(text: &str) -> Vec<Lexeme<'_>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Lexeme { kind: Kind::Atom(&text[s..i]), offset: s });
            }
            match c {
                '(' => out.push(Lexeme { kind: Kind::Open, offset: i }),
                ')' => out.push(Lexeme { kind: Kind::Close, offset: i }),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Lexeme { kind: Kind::Atom(&text[s..]), offset: s });
    }
    out
}

fn parse_raw(lx: &[Lexeme<'_>], pos: &mut usize, end: usize) -> Result<Raw> {
    let Some(first) = lx.get(*pos) else {
        return Err(Error::Parse { offset: end, message: "unexpected end of input".into() });
    };
    match first.kind {
        Kind::Atom(a) => {
            *pos += 1;
            Ok(Raw::Word(unescape(a)))
        }
        Kind::Close => Err(Error::Parse { offset: first.offset, message: "unbalanced ')'".into() }),
        Kind::Open => {
            let open_at = first.offset;
            *pos += 1;
            let label = match lx.get(*pos).map(|l| &l.kind) {
                Some(Kind::Atom(a)) => {
                    *pos += 1;
                    Some(unescape(a))
                }
                _ => None,
            };
            let mut children = Vec::new();
            loop {
                match lx.get(*pos) {
                    None => {
                        return Err(Error::Parse {
                            offset: end,
                            message: format!("unclosed '(' opened at offset {open_at}"),
                        })
                    }
                    Some(Lexeme { kind: Kind::Close, .. }) => {
                        *pos += 1;
                        break;
                    }
                    Some(_) => children.push(parse_raw(lx, pos, end)?),
                }
            }
            if children.is_empty() {
                return Err(Error::Parse { offset: open_at, message: "constituent without children".into() });
            }
            Ok(Raw::Inner { label, children })
        }
    }
}

fn build(raw: &Raw) -> Result<ParseTree> {
    let mut b = Builder { nodes: Vec::new(), words: Vec::new() };
    b.add(raw, None, None);
    if b.words.is_empty() {
        return Err(Error::EmptyTree);
    }
    let d = b.words.len();
    for n in &mut b.nodes {
        n.subset = WordSet::span(d, n.span.0, n.span.1);
    }
    let tokens = b.words.into_iter().enumerate().map(|(index, surface)| Token { index, surface }).collect();
    Ok(ParseTree { nodes: b.nodes, tokens })
}

struct Builder {
    nodes: Vec<TreeNode>,
    words: Vec<String>,
}

impl Builder {
    /// `inherited` is the topmost label of a unary chain ending here.
    fn add(&mut self, raw: &Raw, parent: Option<usize>, inherited: Option<&str>) -> usize {
        match raw {
            Raw::Word(w) => {
                let i = self.words.len();
                self.words.push(w.clone());
                self.push(parent, inherited.map(str::to_owned), (i, i + 1))
            }
            Raw::Inner { label, children } => {
                let label = inherited.or(label.as_deref());
                if let [only] = children.as_slice() {
                    return self.add(only, parent, label);
                }
                let id = self.push(parent, label.map(str::to_owned), (self.words.len(), 0));
                for c in children {
                    let cid = self.add(c, Some(id), None);
                    self.nodes[id].children.push(cid);
                }
                self.nodes[id].span.1 = self.words.len();
                id
            }
        }
    }

    fn push(&mut self, parent: Option<usize>, label: Option<String>, span: (usize, usize)) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            id,
            parent,
            children: Vec::new(),
            subset: WordSet::empty(0),
            span,
            label,
            synthetic: false,
        });
        id
    }
}

const ESCAPES: [(&str, &str); 6] =
    [("-LRB-", "("), ("-RRB-", ")"), ("-LSB-", "["), ("-RSB-", "]"), ("-LCB-", "{"), ("-RCB-", "}")];

fn unescape(atom: &str) -> String {
    ESCAPES.iter().find(|(e, _)| *e == atom).map_or_else(|| atom.to_owned(), |(_, s)| (*s).to_owned())
}

fn escape(s: &str) -> String {
    match s {
        "(" => "-LRB-".into(),
        ")" => "-RRB-".into(),
        _ => s.to_owned(),
    }
}
