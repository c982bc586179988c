//! Line-delimited instance records.
//!
//! One JSON object per line:
//! `{"id": "...", "trees": ["(S ...)", ...], "split": "train"|"test", "label": 1}`.
//! `split` and `label` are optional. Blank lines are skipped.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::tree::{merge_sentences, parse_ptb, ParseTree};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub id: String,
    pub trees: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<i64>,
}

impl InstanceRecord {
    /// Parses every sentence and joins them under one synthetic root when
    /// there is more than one.
    pub fn parse_tree(&self) -> Result<ParseTree> {
        let trees = self.trees.iter().map(|t| parse_ptb(t)).collect::<Result<Vec<_>>>()?;
        merge_sentences(&trees)
    }
}

/// Reads every record. Any malformed line fails the whole read, naming the
/// 1-based line number.
pub fn read_corpus(reader: impl BufRead) -> Result<Vec<InstanceRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord =
            serde_json::from_str(&line).map_err(|e| Error::Corpus { line: lineno, message: e.to_string() })?;
        if rec.trees.is_empty() {
            return Err(Error::Corpus { line: lineno, message: "record has no trees".into() });
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_records() {
        let text = r#"{"id":"a","trees":["(S (A x) (B y))"],"split":"train","label":1}

{"id":"b","trees":["(A x)","(B y)"]}
"#;
        let recs = read_corpus(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].split, Some(Split::Train));
        assert_eq!(recs[0].label, Some(1));
        assert_eq!(recs[1].split, None);
        let t = recs[1].parse_tree().unwrap();
        assert!(t.root().synthetic);
        assert_eq!(t.d(), 2);
    }

    #[test]
    fn malformed_line_is_named() {
        let text = "{\"id\":\"a\",\"trees\":[\"(A x)\"]}\n{\"id\":\"b\",\"trees\":[\"(A x)\"]}\n{\"id\":\"c\",\"trees\":\n";
        match read_corpus(text.as_bytes()) {
            Err(Error::Corpus { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match read_corpus("{\"id\":\"a\",\"trees\":[]}".as_bytes()) {
            Err(Error::Corpus { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(read_corpus("{\"id\":\"a\",\"trees\":[\"(A x)\"],\"split\":\"dev\"}".as_bytes()).is_err());
    }

    #[test]
    fn empty_corpus() {
        assert!(read_corpus("".as_bytes()).unwrap().is_empty());
    }
}
