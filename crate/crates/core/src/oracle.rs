//! Black-box model contract and characteristic-function tables.
//!
//! An [`Oracle`] scores a token sequence in which some positions are masked.
//! [`populate`] evaluates it once on the empty mask and once per tree node and
//! stores `v(S) = f(S) - f(empty)` in a [`CharacteristicTable`].

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::tree::ParseTree;
use crate::{Error, Result, WordSet};

pub const DEFAULT_MASK_TOKEN: &str = "[PAD]";

/// How masked positions are presented to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    /// Replace masked tokens with a placeholder, keeping positions.
    #[default]
    Pad,
    /// Drop masked tokens.
    Delete,
}

impl FromStr for MaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pad" => Ok(MaskMode::Pad),
            "delete" => Ok(MaskMode::Delete),
            _ => Err(Error::InvalidArgument(format!("unknown mask mode {s:?}"))),
        }
    }
}

/// Which class's log-probability the model reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassIndex {
    /// The model's argmax on the full sentence, fixed once per instance.
    #[default]
    Auto,
    Fixed(i64),
}

impl FromStr for ClassIndex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(ClassIndex::Auto);
        }
        s.parse()
            .map(ClassIndex::Fixed)
            .map_err(|_| Error::InvalidArgument(format!("class index must be an integer or 'auto', got {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelQuery {
    pub tokens: Vec<String>,
    pub keep: Vec<bool>,
}

impl ModelQuery {
    pub fn new(tokens: Vec<String>, keep: Vec<bool>) -> Result<Self> {
        if tokens.len() != keep.len() {
            return Err(Error::DimensionMismatch { expected: tokens.len(), found: keep.len() });
        }
        Ok(ModelQuery { tokens, keep })
    }

    pub fn subset(tokens: &[String], subset: &WordSet) -> Self {
        ModelQuery { tokens: tokens.to_vec(), keep: subset.to_mask() }
    }

    pub fn is_full(&self) -> bool {
        self.keep.iter().all(|&k| k)
    }

    /// Present tokens with their positions.
    pub fn present(&self) -> impl Iterator<Item = (usize, &str)> {
        self.tokens.iter().zip(&self.keep).enumerate().filter(|(_, (_, &k))| k).map(|(i, (t, _))| (i, t.as_str()))
    }

    /// The sequence a model actually sees under `mode`.
    pub fn masked_tokens(&self, mode: MaskMode, placeholder: &str) -> Vec<String> {
        match mode {
            MaskMode::Pad => self
                .tokens
                .iter()
                .zip(&self.keep)
                .map(|(t, &k)| if k { t.clone() } else { placeholder.to_owned() })
                .collect(),
            MaskMode::Delete => self.present().map(|(_, t)| t.to_owned()).collect(),
        }
    }
}

/// A model that maps a masked sentence to the log-probability of one class.
pub trait Oracle: Send {
    fn name(&self) -> &str;

    /// Scores every query. On failure, `Error::Oracle::query` is the position
    /// of the offending query within `queries`.
    fn evaluate_batch(&mut self, queries: &[ModelQuery]) -> Result<Vec<f64>>;

    fn evaluate(&mut self, query: &ModelQuery) -> Result<f64> {
        Ok(self.evaluate_batch(std::slice::from_ref(query))?[0])
    }

    /// Called before the queries of a new instance.
    fn begin_instance(&mut self) {}
}

impl<O: Oracle + ?Sized> Oracle for Box<O> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn evaluate_batch(&mut self, queries: &[ModelQuery]) -> Result<Vec<f64>> {
        (**self).evaluate_batch(queries)
    }
    fn begin_instance(&mut self) {
        (**self).begin_instance()
    }
}

/// Reads a `word<TAB>weight` file. Keys are lowercased; blank lines and lines
/// starting with `#` are skipped.
pub fn load_lexicon(path: &Path) -> Result<HashMap<String, f64>> {
    let text = fs::read_to_string(path)?;
    parse_lexicon(&text)
}

pub fn parse_lexicon(text: &str) -> Result<HashMap<String, f64>> {
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (word, weight) = line
            .split_once('\t')
            .ok_or_else(|| Error::Corpus { line: n + 1, message: "expected word<TAB>weight".into() })?;
        let weight: f64 = weight
            .trim()
            .parse()
            .map_err(|_| Error::Corpus { line: n + 1, message: format!("bad weight {weight:?}") })?;
        if !weight.is_finite() {
            return Err(Error::Corpus { line: n + 1, message: "non-finite weight".into() });
        }
        out.insert(word.to_lowercase(), weight);
    }
    Ok(out)
}

/// Bag-of-words model: the score is the sum of the weights of present words.
#[derive(Debug, Clone)]
pub struct BuiltinLinear {
    lexicon: HashMap<String, f64>,
}

impl BuiltinLinear {
    pub fn new(lexicon: HashMap<String, f64>) -> Self {
        BuiltinLinear { lexicon: lexicon.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect() }
    }

    pub fn weight(&self, word: &str) -> Option<f64> {
        self.lexicon.get(&word.to_lowercase()).copied()
    }

    pub fn lexicon(&self) -> &HashMap<String, f64> {
        &self.lexicon
    }

    pub fn score(&self, query: &ModelQuery) -> f64 {
        query.present().filter_map(|(_, t)| self.weight(t)).sum()
    }
}

impl Oracle for BuiltinLinear {
    fn name(&self) -> &str {
        "builtin-linear"
    }
    fn evaluate_batch(&mut self, queries: &[ModelQuery]) -> Result<Vec<f64>> {
        Ok(queries.iter().map(|q| self.score(q)).collect())
    }
}

/// Nonlinear reference model. Each present polarity word contributes its sign
/// (+1 or -1), flipped once if any present negator occurs before it. Negators
/// carry no polarity of their own.
#[derive(Debug, Clone)]
pub struct BuiltinNegation {
    polarity: HashMap<String, f64>,
    negators: Vec<String>,
}

pub const DEFAULT_NEGATORS: [&str; 5] = ["not", "n't", "no", "never", "nothing"];

const DEFAULT_POLARITY: [(&str, f64); 12] = [
    ("good", 1.0),
    ("great", 1.0),
    ("fun", 1.0),
    ("heartwarming", 1.0),
    ("entertaining", 1.0),
    ("funny", 1.0),
    ("bad", -1.0),
    ("boring", -1.0),
    ("dull", -1.0),
    ("awful", -1.0),
    ("worst", -1.0),
    ("mess", -1.0),
];

impl Default for BuiltinNegation {
    fn default() -> Self {
        Self::new(
            DEFAULT_POLARITY.iter().map(|&(w, p)| (w.to_owned(), p)).collect(),
            DEFAULT_NEGATORS.iter().map(|s| s.to_string()).collect(),
        )
    }
}

impl BuiltinNegation {
    /// Only the sign of each lexicon weight is used.
    pub fn new(lexicon: HashMap<String, f64>, negators: Vec<String>) -> Self {
        let negators: Vec<String> = negators.into_iter().map(|n| n.to_lowercase()).collect();
        let polarity = lexicon
            .into_iter()
            .map(|(k, v)| (k.to_lowercase(), if v == 0.0 { 0.0 } else { v.signum() }))
            .filter(|(k, _)| !negators.contains(k))
            .collect();
        BuiltinNegation { polarity, negators }
    }

    pub fn score(&self, query: &ModelQuery) -> f64 {
        let mut negated = false;
        let mut total = 0.0;
        for (_, t) in query.present() {
            let t = t.to_lowercase();
            if self.negators.contains(&t) {
                negated = true;
            } else if let Some(p) = self.polarity.get(&t) {
                total += if negated { -p } else { *p };
            }
        }
        total
    }
}

impl Oracle for BuiltinNegation {
    fn name(&self) -> &str {
        "builtin-negation"
    }
    fn evaluate_batch(&mut self, queries: &[ModelQuery]) -> Result<Vec<f64>> {
        Ok(queries.iter().map(|q| self.score(q)).collect())
    }
}

/// Memoizes another oracle. Misses within one batch are forwarded together.
pub struct CachingOracle<O> {
    inner: O,
    cache: HashMap<ModelQuery, f64>,
    backend_queries: usize,
}

impl<O: Oracle> CachingOracle<O> {
    pub fn new(inner: O) -> Self {
        CachingOracle { inner, cache: HashMap::new(), backend_queries: 0 }
    }

    /// Number of queries forwarded to the wrapped oracle so far.
    pub fn backend_queries(&self) -> usize {
        self.backend_queries
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn into_inner(self) -> O {
        self.inner
    }

    pub fn clear(&mut self) {
        self.cache.clear();
    }
}

impl<O: Oracle> Oracle for CachingOracle<O> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn evaluate_batch(&mut self, queries: &[ModelQuery]) -> Result<Vec<f64>> {
        let mut misses: Vec<usize> = Vec::new();
        for (k, q) in queries.iter().enumerate() {
            if !self.cache.contains_key(q) && !misses.iter().any(|&m| queries[m] == *q) {
                misses.push(k);
            }
        }
        if !misses.is_empty() {
            let batch: Vec<ModelQuery> = misses.iter().map(|&k| queries[k].clone()).collect();
            let scores = self.inner.evaluate_batch(&batch).map_err(|e| match e {
                Error::Oracle { query: Some(p), message } => Error::Oracle { query: Some(misses[p as usize] as u64), message },
                other => other,
            })?;
            self.backend_queries += batch.len();
            for (q, s) in batch.into_iter().zip(scores) {
                self.cache.insert(q, s);
            }
        }
        Ok(queries.iter().map(|q| self.cache[q]).collect())
    }

    fn begin_instance(&mut self) {
        self.inner.begin_instance()
    }
}

/// Cached values of the characteristic function for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicTable {
    d: usize,
    /// `f(empty)`.
    pub base: f64,
    values: HashMap<WordSet, f64>,
}

impl CharacteristicTable {
    pub fn new(d: usize, base: f64) -> Self {
        let mut values = HashMap::new();
        values.insert(WordSet::empty(d), 0.0);
        CharacteristicTable { d, base, values }
    }

    /// Builds a table directly from `v` values. `v(empty)` is forced to zero.
    pub fn from_values(d: usize, values: impl IntoIterator<Item = (WordSet, f64)>) -> Self {
        let mut t = Self::new(d, 0.0);
        for (s, v) in values {
            t.insert(s, v);
        }
        t.values.insert(WordSet::empty(d), 0.0);
        t
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn insert(&mut self, subset: WordSet, v: f64) {
        assert_eq!(subset.universe(), self.d);
        self.values.insert(subset, v);
    }

    pub fn get(&self, subset: &WordSet) -> Option<f64> {
        self.values.get(subset).copied()
    }

    pub fn value(&self, subset: &WordSet) -> Result<f64> {
        self.get(subset).ok_or_else(|| Error::MissingSubset(subset.to_string()))
    }

    /// Number of stored subsets, including the empty set.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = (&WordSet, f64)> {
        self.values.iter().map(|(s, &v)| (s, v))
    }

    /// Multiplies every value by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        CharacteristicTable {
            d: self.d,
            base: self.base,
            values: self.values.iter().map(|(s, v)| (s.clone(), v * c)).collect(),
        }
    }
}

/// Evaluates `oracle` on the empty subset and every node of `tree` in one batch.
pub fn populate(oracle: &mut dyn Oracle, tree: &ParseTree) -> Result<CharacteristicTable> {
    let tokens = tree.surfaces();
    let d = tree.d();
    let mut queries = Vec::with_capacity(tree.len() + 1);
    queries.push(ModelQuery::subset(&tokens, &WordSet::empty(d)));
    queries.extend(tree.nodes().iter().map(|n| ModelQuery::subset(&tokens, &n.subset)));

    let describe = |pos: usize| {
        if pos == 0 {
            "empty subset".to_owned()
        } else {
            let n = &tree.nodes()[pos - 1];
            format!("node {} span [{},{})", n.id, n.span.0, n.span.1)
        }
    };

    oracle.begin_instance();
    let scores = oracle.evaluate_batch(&queries).map_err(|e| match e {
        Error::Oracle { query: Some(p), message } => {
            Error::Oracle { query: Some(p), message: format!("{}: {message}", describe(p as usize)) }
        }
        other => other,
    })?;
    if scores.len() != queries.len() {
        return Err(Error::DimensionMismatch { expected: queries.len(), found: scores.len() });
    }
    for (p, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::NonFinite { value: *s, context: describe(p) });
        }
    }
    let mut table = CharacteristicTable::new(d, scores[0]);
    for (n, s) in tree.nodes().iter().zip(&scores[1..]) {
        table.insert(n.subset.clone(), s - scores[0]);
    }
    Ok(table)
}

/// Which model to run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleSpec {
    BuiltinLinear { lexicon: PathBuf },
    BuiltinNegation { lexicon: Option<PathBuf> },
    External { command: String },
}

impl FromStr for OracleSpec {
    type Err = Error;
    /// `builtin-linear:PATH`, `builtin-negation[:PATH]` or `exec:CMD`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        match (kind, arg) {
            ("builtin-linear", Some(p)) if !p.is_empty() => Ok(OracleSpec::BuiltinLinear { lexicon: p.into() }),
            ("builtin-linear", _) => Err(Error::InvalidArgument("builtin-linear needs a lexicon path".into())),
            ("builtin-negation", None) => Ok(OracleSpec::BuiltinNegation { lexicon: None }),
            ("builtin-negation", Some(p)) => Ok(OracleSpec::BuiltinNegation { lexicon: Some(p.into()) }),
            ("exec", Some(c)) if !c.trim().is_empty() => Ok(OracleSpec::External { command: c.to_owned() }),
            ("exec", _) => Err(Error::InvalidArgument("exec: needs a command".into())),
            _ => Err(Error::InvalidArgument(format!("unknown model spec {s:?}"))),
        }
    }
}

impl OracleSpec {
    pub fn build(&self, config: &ExternalConfig) -> Result<Box<dyn Oracle>> {
        Ok(match self {
            OracleSpec::BuiltinLinear { lexicon } => Box::new(BuiltinLinear::new(load_lexicon(lexicon)?)),
            OracleSpec::BuiltinNegation { lexicon: None } => Box::new(BuiltinNegation::default()),
            OracleSpec::BuiltinNegation { lexicon: Some(p) } => Box::new(BuiltinNegation::new(
                load_lexicon(p)?,
                DEFAULT_NEGATORS.iter().map(|s| s.to_string()).collect(),
            )),
            OracleSpec::External { command } => Box::new(ExternalOracle::spawn(command, config.clone())?),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExternalConfig {
    pub mask_mode: MaskMode,
    pub mask_token: String,
    pub class_index: ClassIndex,
    /// Per-response wait before the process is considered hung.
    pub timeout: Duration,
    /// Session restarts allowed per batch after a crash or hang.
    pub max_restarts: usize,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        ExternalConfig {
            mask_mode: MaskMode::Pad,
            mask_token: DEFAULT_MASK_TOKEN.to_owned(),
            class_index: ClassIndex::Auto,
            timeout: Duration::from_secs(60),
            max_restarts: 2,
        }
    }
}

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Outgoing<'a> {
    Hello { version: u32 },
    Eval { id: u64, tokens: &'a [String], keep: Vec<u8>, class_index: Option<i64> },
    Bye,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Incoming {
    Hello {
        version: u32,
        #[serde(default)]
        model: Option<String>,
    },
    Score {
        id: u64,
        score: f64,
        /// Class actually scored; lets `auto` pin the argmax class.
        #[serde(default)]
        class_index: Option<i64>,
    },
    Error {
        #[serde(default)]
        id: Option<u64>,
        message: String,
    },
    Bye,
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    model: String,
}

enum SessionFailure {
    /// Process died, hung, or the pipe broke; worth a restart.
    Crash(String),
    /// The model answered but the answer is unusable.
    Fatal(Error),
}

impl Session {
    fn start(command: &str, timeout: Duration) -> std::result::Result<Session, SessionFailure> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| SessionFailure::Fatal(Error::oracle(None, format!("cannot launch {command:?}: {e}"))))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut s = Session { child, stdin, lines, model: String::new() };
        s.send(&Outgoing::Hello { version: PROTOCOL_VERSION })?;
        match s.recv(timeout)? {
            Incoming::Hello { version: PROTOCOL_VERSION, model } => {
                s.model = model.unwrap_or_else(|| "external".into());
                log::debug!("external model {:?} ready", s.model);
                Ok(s)
            }
            Incoming::Hello { version, .. } => Err(SessionFailure::Fatal(Error::oracle(
                None,
                format!("adapter speaks protocol version {version}, expected {PROTOCOL_VERSION}"),
            ))),
            other => Err(SessionFailure::Fatal(Error::oracle(None, format!("expected hello, got {other:?}")))),
        }
    }

    fn send(&mut self, msg: &Outgoing<'_>) -> std::result::Result<(), SessionFailure> {
        let mut line = serde_json::to_string(msg).expect("serializable message");
        line.push('\n');
        self.stdin.write_all(line.as_bytes()).map_err(|e| SessionFailure::Crash(format!("write failed: {e}")))
    }

    fn flush(&mut self) -> std::result::Result<(), SessionFailure> {
        self.stdin.flush().map_err(|e| SessionFailure::Crash(format!("flush failed: {e}")))
    }

    fn recv(&mut self, timeout: Duration) -> std::result::Result<Incoming, SessionFailure> {
        self.flush()?;
        loop {
            let line = match self.lines.recv_timeout(timeout) {
                Ok(Ok(l)) => l,
                Ok(Err(e)) => return Err(SessionFailure::Crash(format!("read failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(SessionFailure::Crash(format!("no response within {timeout:?}")))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(SessionFailure::Crash("adapter closed its output".into()))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            return serde_json::from_str(&line).map_err(|e| {
                SessionFailure::Fatal(Error::oracle(None, format!("malformed adapter line {line:?}: {e}")))
            });
        }
    }

    fn close(mut self) {
        let _ = self.send(&Outgoing::Bye);
        let _ = self.flush();
        drop(self.stdin);
        for _ in 0..20 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Model served by a child process over the line-delimited JSON protocol.
///
/// All queries of a batch are written before any response is read; responses
/// are matched by id and may arrive in any order. In `pad` mode the `tokens`
/// field carries the placeholder at masked positions, in `delete` mode it
/// carries the original tokens; `keep` is always the mask.
pub struct ExternalOracle {
    command: String,
    config: ExternalConfig,
    session: Option<Session>,
    model: String,
    next_id: u64,
    /// `None` until the instance's class is resolved under `ClassIndex::Auto`.
    pinned_class: Option<Option<i64>>,
}

impl ExternalOracle {
    pub fn spawn(command: &str, config: ExternalConfig) -> Result<Self> {
        let session = match Session::start(command, config.timeout) {
            Ok(s) => s,
            Err(SessionFailure::Crash(m)) => return Err(Error::oracle(None, m)),
            Err(SessionFailure::Fatal(e)) => return Err(e),
        };
        let model = session.model.clone();
        Ok(ExternalOracle { command: command.to_owned(), config, session: Some(session), model, next_id: 0, pinned_class: None })
    }

    pub fn model_name(&self) -> &str {
        &self.model
    }

    fn class_for_batch(&self) -> Option<i64> {
        match self.config.class_index {
            ClassIndex::Fixed(c) => Some(c),
            ClassIndex::Auto => self.pinned_class.flatten(),
        }
    }

    fn run(&mut self, queries: &[ModelQuery], class: Option<i64>) -> std::result::Result<Vec<(f64, Option<i64>)>, SessionFailure> {
        if self.session.is_none() {
            let s = Session::start(&self.command, self.config.timeout)?;
            self.model = s.model.clone();
            self.session = Some(s);
        }
        let session = self.session.as_mut().expect("session present");
        let first_id = self.next_id;
        self.next_id += queries.len() as u64;
        for (k, q) in queries.iter().enumerate() {
            let tokens = match self.config.mask_mode {
                MaskMode::Pad => q.masked_tokens(MaskMode::Pad, &self.config.mask_token),
                MaskMode::Delete => q.tokens.clone(),
            };
            session.send(&Outgoing::Eval {
                id: first_id + k as u64,
                tokens: &tokens,
                keep: q.keep.iter().map(|&b| b as u8).collect(),
                class_index: class,
            })?;
        }
        let mut results: Vec<Option<(f64, Option<i64>)>> = vec![None; queries.len()];
        let mut remaining = queries.len();
        let mut first_error: Option<Error> = None;
        let mut answered = vec![false; queries.len()];
        while remaining > 0 {
            let msg = session.recv(self.config.timeout)?;
            let (id, outcome) = match msg {
                Incoming::Score { id, score, class_index } => (id, Ok((score, class_index))),
                Incoming::Error { id: Some(id), message } => (id, Err(message)),
                Incoming::Error { id: None, message } => {
                    return Err(SessionFailure::Fatal(Error::oracle(None, format!("adapter error: {message}"))))
                }
                Incoming::Bye => return Err(SessionFailure::Crash("adapter said bye mid-batch".into())),
                Incoming::Hello { .. } => continue,
            };
            let Some(pos) = id.checked_sub(first_id).map(|p| p as usize).filter(|&p| p < queries.len()) else {
                log::warn!("ignoring response for unknown id {id}");
                continue;
            };
            if answered[pos] {
                log::warn!("duplicate response for id {id}");
                continue;
            }
            answered[pos] = true;
            remaining -= 1;
            match outcome {
                Ok(r) => results[pos] = Some(r),
                Err(message) => {
                    if first_error.is_none() {
                        first_error = Some(Error::oracle(Some(pos as u64), format!("id {id}: {message}")));
                    }
                }
            }
        }
        if let Some(e) = first_error {
            return Err(SessionFailure::Fatal(e));
        }
        Ok(results.into_iter().map(|r| r.expect("all answered")).collect())
    }

    fn run_with_restarts(&mut self, queries: &[ModelQuery], class: Option<i64>) -> Result<Vec<(f64, Option<i64>)>> {
        let mut attempt = 0;
        loop {
            match self.run(queries, class) {
                Ok(r) => return Ok(r),
                Err(SessionFailure::Fatal(e)) => return Err(e),
                Err(SessionFailure::Crash(m)) => {
                    if let Some(s) = self.session.take() {
                        s.kill();
                    }
                    if attempt >= self.config.max_restarts {
                        return Err(Error::oracle(None, format!("{m} (after {attempt} restarts)")));
                    }
                    attempt += 1;
                    log::warn!("external model failed ({m}); restarting, attempt {attempt}");
                }
            }
        }
    }
}

impl Oracle for ExternalOracle {
    fn name(&self) -> &str {
        &self.model
    }

    fn evaluate_batch(&mut self, queries: &[ModelQuery]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; queries.len()];
        let mut rest: Vec<usize> = (0..queries.len()).collect();
        if self.config.class_index == ClassIndex::Auto && self.pinned_class.is_none() && !queries.is_empty() {
            // resolve the class on the full sentence before anything else
            let full = queries.iter().position(ModelQuery::is_full);
            let probe = full.map_or_else(
                || ModelQuery { tokens: queries[0].tokens.clone(), keep: vec![true; queries[0].tokens.len()] },
                |p| queries[p].clone(),
            );
            let r = self.run_with_restarts(std::slice::from_ref(&probe), None).map_err(|e| match e {
                Error::Oracle { message, .. } => Error::Oracle { query: full.map(|p| p as u64), message },
                other => other,
            })?;
            self.pinned_class = Some(r[0].1);
            if let Some(p) = full {
                out[p] = r[0].0;
                rest.retain(|&k| k != p);
            }
        }
        if rest.is_empty() {
            return Ok(out);
        }
        let batch: Vec<ModelQuery> = rest.iter().map(|&k| queries[k].clone()).collect();
        let class = self.class_for_batch();
        let r = self.run_with_restarts(&batch, class).map_err(|e| match e {
            Error::Oracle { query: Some(p), message } => Error::Oracle { query: Some(rest[p as usize] as u64), message },
            other => other,
        })?;
        for (k, (s, _)) in rest.into_iter().zip(r) {
            out[k] = s;
        }
        Ok(out)
    }

    fn begin_instance(&mut self) {
        self.pinned_class = None;
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        if let Some(s) = self.session.take() {
            s.close();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::parse_ptb;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    fn linear(pairs: &[(&str, f64)]) -> BuiltinLinear {
        BuiltinLinear::new(pairs.iter().map(|&(w, v)| (w.to_owned(), v)).collect())
    }

    #[test]
    fn linear_scores() {
        let mut m = linear(&[("good", 1.0), ("not", -2.0)]);
        let q = |keep: [bool; 2]| ModelQuery::new(toks(&["not", "good"]), keep.to_vec()).unwrap();
        assert_eq!(m.evaluate(&q([true, true])).unwrap(), -1.0);
        assert_eq!(m.evaluate(&q([false, false])).unwrap(), 0.0);
    }

    #[test]
    fn negation_scores() {
        let mut m = BuiltinNegation::default();
        let q = |keep: [bool; 2]| ModelQuery::new(toks(&["not", "good"]), keep.to_vec()).unwrap();
        assert_eq!(m.evaluate(&q([true, true])).unwrap(), -1.0);
        assert_eq!(m.evaluate(&q([false, true])).unwrap(), 1.0);
        assert_eq!(m.evaluate(&q([true, false])).unwrap(), 0.0);
        assert_eq!(m.evaluate(&q([false, false])).unwrap(), 0.0);
        // negator after the polarity word does not flip it
        let after = ModelQuery::new(toks(&["good", "not"]), vec![true, true]).unwrap();
        assert_eq!(m.evaluate(&after).unwrap(), 1.0);
    }

    #[test]
    fn query_masking() {
        let q = ModelQuery::new(toks(&["a", "b", "c"]), vec![true, false, true]).unwrap();
        assert_eq!(q.masked_tokens(MaskMode::Pad, "[PAD]"), toks(&["a", "[PAD]", "c"]));
        assert_eq!(q.masked_tokens(MaskMode::Delete, "[PAD]"), toks(&["a", "c"]));
        assert!(ModelQuery::new(toks(&["a"]), vec![]).is_err());
    }

    #[test]
    fn populate_linear() {
        let tree = parse_ptb("(X (A w1) (B w2))").unwrap();
        let mut m = linear(&[("w1", 1.0), ("w2", -2.0)]);
        let t = populate(&mut m, &tree).unwrap();
        assert_eq!(t.len(), tree.len() + 1);
        assert_eq!(t.get(&WordSet::from_indices(2, [0])), Some(1.0));
        assert_eq!(t.get(&WordSet::from_indices(2, [1])), Some(-2.0));
        assert_eq!(t.get(&WordSet::full(2)), Some(-1.0));
        assert_eq!(t.get(&WordSet::empty(2)), Some(0.0));
    }

    #[test]
    fn populate_negation() {
        let tree = parse_ptb("(X (RB not) (JJ good))").unwrap();
        let t = populate(&mut BuiltinNegation::default(), &tree).unwrap();
        assert_eq!(t.get(&WordSet::from_indices(2, [0])), Some(0.0));
        assert_eq!(t.get(&WordSet::from_indices(2, [1])), Some(1.0));
        assert_eq!(t.get(&WordSet::full(2)), Some(-1.0));
    }

    #[test]
    fn base_is_subtracted() {
        struct Offset;
        impl Oracle for Offset {
            fn name(&self) -> &str {
                "offset"
            }
            fn evaluate_batch(&mut self, qs: &[ModelQuery]) -> Result<Vec<f64>> {
                Ok(qs.iter().map(|q| -0.7 + q.present().count() as f64).collect())
            }
        }
        let tree = parse_ptb("(X (A a) (B b) (C c))").unwrap();
        let t = populate(&mut Offset, &tree).unwrap();
        assert_eq!(t.base, -0.7);
        assert!((t.get(&WordSet::full(3)).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_is_rejected() {
        struct Nan;
        impl Oracle for Nan {
            fn name(&self) -> &str {
                "nan"
            }
            fn evaluate_batch(&mut self, qs: &[ModelQuery]) -> Result<Vec<f64>> {
                Ok(qs.iter().map(|q| if q.is_full() { f64::NAN } else { 0.0 }).collect())
            }
        }
        let tree = parse_ptb("(X (A a) (B b))").unwrap();
        match populate(&mut Nan, &tree) {
            Err(Error::NonFinite { context, .. }) => assert!(context.contains("node 0")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cache_is_coherent() {
        let tree = parse_ptb("(S (NP (DT the) (NN film)) (VP (RB not) (JJ good)))").unwrap();
        let mut m = CachingOracle::new(BuiltinNegation::default());
        let a = populate(&mut m, &tree).unwrap();
        assert_eq!(m.backend_queries(), tree.len() + 1);
        let b = populate(&mut m, &tree).unwrap();
        assert_eq!(m.backend_queries(), tree.len() + 1);
        assert_eq!(a, b);
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(
            "builtin-linear:lex.tsv".parse::<OracleSpec>().unwrap(),
            OracleSpec::BuiltinLinear { lexicon: "lex.tsv".into() }
        );
        assert_eq!("builtin-negation".parse::<OracleSpec>().unwrap(), OracleSpec::BuiltinNegation { lexicon: None });
        assert_eq!(
            "exec:python3 adapter.py --x".parse::<OracleSpec>().unwrap(),
            OracleSpec::External { command: "python3 adapter.py --x".into() }
        );
        assert!("builtin-linear".parse::<OracleSpec>().is_err());
        assert!("exec:".parse::<OracleSpec>().is_err());
        assert!("torch".parse::<OracleSpec>().is_err());
        assert_eq!("auto".parse::<ClassIndex>().unwrap(), ClassIndex::Auto);
        assert_eq!("3".parse::<ClassIndex>().unwrap(), ClassIndex::Fixed(3));
        assert_eq!("delete".parse::<MaskMode>().unwrap(), MaskMode::Delete);
    }

    #[test]
    fn lexicon_format() {
        let lex = parse_lexicon("# comment\nGood\t1.5\nnot\t-2\n\n").unwrap();
        assert_eq!(lex["good"], 1.5);
        assert_eq!(lex["not"], -2.0);
        match parse_lexicon("good 1\n") {
            Err(Error::Corpus { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wire_messages() {
        let toks = toks(&["a", "[PAD]"]);
        let s = serde_json::to_string(&Outgoing::Eval { id: 7, tokens: &toks, keep: vec![1, 0], class_index: None })
            .unwrap();
        assert_eq!(s, r#"{"type":"eval","id":7,"tokens":["a","[PAD]"],"keep":[1,0],"class_index":null}"#);
        assert_eq!(serde_json::to_string(&Outgoing::Hello { version: 1 }).unwrap(), r#"{"type":"hello","version":1}"#);
        assert_eq!(serde_json::to_string(&Outgoing::Bye).unwrap(), r#"{"type":"bye"}"#);
        let m: Incoming = serde_json::from_str(r#"{"type":"score","id":3,"score":-0.5}"#).unwrap();
        assert!(matches!(m, Incoming::Score { id: 3, score, class_index: None } if score == -0.5));
        let m: Incoming = serde_json::from_str(r#"{"type":"error","id":4,"message":"boom"}"#).unwrap();
        assert!(matches!(m, Incoming::Error { id: Some(4), .. }));
    }
}
