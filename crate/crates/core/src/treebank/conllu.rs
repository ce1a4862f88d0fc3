//! CoNLL-U reading and writing.
//!
//! Comments and multiword-token ranges are skipped, as are empty nodes
//! (decimal ids). A sentence with any malformed token line, a head out of
//! range or a head structure that is not a tree rooted at 0 is rejected as a
//! whole; the rejection records the offending line number and loading
//! continues with the next sentence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::tree::is_arborescence;

use super::{Result, TreebankError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: BTreeMap<String, String>,
    /// 0 is ROOT; otherwise the 1-based position of the head word.
    pub head: usize,
    pub deprel: String,
    pub deps: String,
    pub misc: String,
}

impl Token {
    /// A token with only the fields the parser uses; the others are `_`.
    pub fn new(form: &str, upos: &str, head: usize, deprel: &str) -> Self {
        Token {
            form: form.to_string(),
            lemma: "_".into(),
            upos: upos.to_string(),
            xpos: "_".into(),
            feats: BTreeMap::new(),
            head,
            deprel: deprel.to_string(),
            deps: "_".into(),
            misc: "_".into(),
        }
    }

    pub fn with_feats(mut self, feats: &[(&str, &str)]) -> Self {
        for (k, v) in feats {
            self.feats.insert(k.to_string(), v.to_string());
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub language: String,
    pub tokens: Vec<Token>,
    /// Comment lines without the leading `#`, kept for output.
    pub comments: Vec<String>,
}

impl Sentence {
    pub fn new(language: &str, tokens: Vec<Token>) -> Self {
        Sentence {
            language: language.to_string(),
            tokens,
            comments: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    pub fn forms(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.form.as_str())
    }

    /// Value of a `sent_id = ...` comment, if any.
    pub fn sent_id(&self) -> Option<&str> {
        self.comments.iter().find_map(|c| {
            let (k, v) = c.split_once('=')?;
            (k.trim() == "sent_id").then(|| v.trim())
        })
    }
}

/// Why a sentence was dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based line number of the offending line (or of the sentence start).
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub sentences: Vec<Sentence>,
    pub rejected: Vec<Rejection>,
}

impl LoadReport {
    pub fn rejected_count(&self) -> usize {
        self.rejected.len()
    }
}

/// Whether sentences whose heads are not a tree are rejected. Gold data
/// must be trees; greedy parser output may contain cycles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TreeCheck {
    #[default]
    Require,
    Skip,
}

pub fn load_conllu(path: impl AsRef<Path>, language: &str) -> Result<LoadReport> {
    load_conllu_with(path, language, TreeCheck::Require)
}

pub fn load_conllu_with(path: impl AsRef<Path>, language: &str, check: TreeCheck) -> Result<LoadReport> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TreebankError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let text = String::from_utf8(bytes).map_err(|e| TreebankError::Encoding {
        path: path.display().to_string(),
        offset: e.utf8_error().valid_up_to(),
    })?;
    let report = parse_conllu_with(&text, language, check);
    for r in &report.rejected {
        log::warn!("{}:{}: sentence rejected: {}", path.display(), r.line, r.reason);
    }
    Ok(report)
}

struct Block {
    start: usize,
    comments: Vec<String>,
    tokens: Vec<Token>,
    lines: Vec<usize>,
    error: Option<Rejection>,
}

impl Block {
    fn new(start: usize) -> Self {
        Block {
            start,
            comments: Vec::new(),
            tokens: Vec::new(),
            lines: Vec::new(),
            error: None,
        }
    }

    fn fail(&mut self, line: usize, reason: String) {
        if self.error.is_none() {
            self.error = Some(Rejection { line, reason });
        }
    }

    fn finish(self, language: &str, check: TreeCheck, report: &mut LoadReport) {
        if let Some(err) = self.error {
            report.rejected.push(err);
            return;
        }
        if self.tokens.is_empty() {
            return;
        }
        let n = self.tokens.len();
        let heads: Vec<usize> = self.tokens.iter().map(|t| t.head).collect();
        if let Some(bad) = heads.iter().position(|&h| h > n) {
            report.rejected.push(Rejection {
                line: self.lines[bad],
                reason: format!("head {} out of range for {n} tokens", heads[bad]),
            });
            return;
        }
        if check == TreeCheck::Require && !is_arborescence(&heads) {
            report.rejected.push(Rejection {
                line: self.start,
                reason: "heads do not form a tree rooted at 0".into(),
            });
            return;
        }
        report.sentences.push(Sentence {
            language: language.to_string(),
            tokens: self.tokens,
            comments: self.comments,
        });
    }
}

/// Parses CoNLL-U text. Never fails: problems are reported per sentence.
pub fn parse_conllu(text: &str, language: &str) -> LoadReport {
    parse_conllu_with(text, language, TreeCheck::Require)
}

pub fn parse_conllu_with(text: &str, language: &str, check: TreeCheck) -> LoadReport {
    let mut report = LoadReport::default();
    let mut block: Option<Block> = None;

    for (idx, raw) in text.split('\n').enumerate() {
        let lineno = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if let Some(b) = block.take() {
                b.finish(language, check, &mut report);
            }
            continue;
        }
        let b = block.get_or_insert_with(|| Block::new(lineno));
        if let Some(comment) = line.strip_prefix('#') {
            if b.tokens.is_empty() {
                b.comments.push(comment.to_string());
            }
            continue;
        }
        if b.error.is_some() {
            continue;
        }
        match parse_token_line(line, b.tokens.len() + 1) {
            Ok(Some(token)) => {
                b.tokens.push(token);
                b.lines.push(lineno);
            }
            Ok(None) => {}
            Err(reason) => b.fail(lineno, reason),
        }
    }
    if let Some(b) = block.take() {
        b.finish(language, check, &mut report);
    }
    report
}

fn parse_token_line(line: &str, expected_id: usize) -> std::result::Result<Option<Token>, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 10 {
        return Err(format!("expected 10 tab-separated columns, found {}", cols.len()));
    }
    let id = cols[0];
    if id.contains('-') || id.contains('.') {
        return Ok(None);
    }
    let id: usize = id.parse().map_err(|_| format!("invalid token id {id:?}"))?;
    if id != expected_id {
        return Err(format!("token id {id} out of sequence, expected {expected_id}"));
    }
    let form = cols[1];
    if form.is_empty() {
        return Err("empty word form".into());
    }
    let head: usize = cols[6]
        .parse()
        .map_err(|_| format!("non-integer head {:?}", cols[6]))?;
    if cols[7].is_empty() {
        return Err("empty dependency label".into());
    }
    Ok(Some(Token {
        form: form.to_string(),
        lemma: cols[2].to_string(),
        upos: cols[3].to_string(),
        xpos: cols[4].to_string(),
        feats: parse_feats(cols[5])?,
        head,
        deprel: cols[7].to_string(),
        deps: cols[8].to_string(),
        misc: cols[9].to_string(),
    }))
}

fn parse_feats(field: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut feats = BTreeMap::new();
    if field == "_" {
        return Ok(feats);
    }
    for item in field.split('|') {
        match item.split_once('=') {
            Some((k, v)) if !k.is_empty() && !v.is_empty() => {
                feats.insert(k.to_string(), v.to_string());
            }
            _ => return Err(format!("malformed feature {item:?}")),
        }
    }
    Ok(feats)
}

fn format_feats(feats: &BTreeMap<String, String>) -> String {
    if feats.is_empty() {
        return "_".into();
    }
    feats
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("|")
}

/// Serializes sentences as CoNLL-U, one blank line after each sentence.
pub fn to_conllu(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        write_sentence(&mut out, s);
    }
    out
}

pub fn write_sentence(out: &mut String, s: &Sentence) {
    for c in &s.comments {
        let _ = writeln!(out, "#{c}");
    }
    for (i, t) in s.tokens.iter().enumerate() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            i + 1,
            t.form,
            t.lemma,
            t.upos,
            t.xpos,
            format_feats(&t.feats),
            t.head,
            t.deprel,
            t.deps,
            t.misc
        );
    }
    out.push('\n');
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "1\tAla\tAla\tPROPN\t_\tCase=Nom|Number=Sing\t2\tnsubj\t_\t_\n\
                           2\tśpi\tspać\tVERB\t_\t_\t0\troot\t_\t_\n\n";

    #[test]
    fn minimal_sentence() {
        let r = parse_conllu(MINIMAL, "pl");
        assert!(r.rejected.is_empty());
        assert_eq!(r.sentences.len(), 1);
        let s = &r.sentences[0];
        assert_eq!(s.heads(), vec![2, 0]);
        assert_eq!(s.tokens[1].form, "śpi");
        assert_eq!(s.tokens[0].feats["Case"], "Nom");
        assert_eq!(s.language, "pl");
    }

    #[test]
    fn comments_do_not_add_tokens() {
        let text = format!("# sent_id = 1\n# text = Ala śpi\n{MINIMAL}");
        let r = parse_conllu(&text, "pl");
        assert_eq!(r.sentences[0].len(), 2);
        assert_eq!(r.sentences[0].comments, vec![" sent_id = 1", " text = Ala śpi"]);
    }

    #[test]
    fn two_cycle_is_rejected_and_counted() {
        let text = "1\ta\t_\tX\t_\t_\t2\tdep\t_\t_\n2\tb\t_\tX\t_\t_\t1\tdep\t_\t_\n\n";
        let r = parse_conllu(&format!("{text}{MINIMAL}"), "x");
        assert_eq!(r.rejected_count(), 1);
        assert_eq!(r.rejected[0].line, 1);
        assert_eq!(r.sentences.len(), 1);
        let r = parse_conllu_with(&format!("{text}{MINIMAL}"), "x", TreeCheck::Skip);
        assert_eq!(r.rejected_count(), 0);
        assert_eq!(r.sentences[0].heads(), vec![2, 1]);
    }

    #[test]
    fn malformed_heads_reported_with_line_numbers() {
        let text = "1\ta\t_\tX\t_\t_\tx\tdep\t_\t_\n\n1\ta\t_\tX\t_\t_\t7\tdep\t_\t_\n\n";
        let r = parse_conllu(text, "x");
        assert_eq!(r.rejected_count(), 2);
        assert_eq!(r.rejected[0].line, 1);
        assert!(r.rejected[0].reason.contains("non-integer head"));
        assert_eq!(r.rejected[1].line, 3);
        assert!(r.rejected[1].reason.contains("out of range"));
    }

    #[test]
    fn multiword_ranges_and_empty_nodes_are_skipped() {
        let text = "1-2\tdella\t_\t_\t_\t_\t_\t_\t_\t_\n\
                    1\tdi\t_\tADP\t_\t_\t2\tcase\t_\t_\n\
                    2\tla\t_\tDET\t_\t_\t0\troot\t_\t_\n\
                    2.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\n";
        let r = parse_conllu(text, "it");
        assert_eq!(r.sentences[0].len(), 2);
    }

    #[test]
    fn round_trip_preserves_token_fields() {
        let r = parse_conllu(&format!("# text = Ala śpi\n{MINIMAL}"), "pl");
        let text = to_conllu(&r.sentences);
        let again = parse_conllu(&text, "pl");
        assert_eq!(r.sentences, again.sentences);
        assert_eq!(text, to_conllu(&again.sentences));
    }

    #[test]
    fn crlf_line_endings_are_accepted() {
        let r = parse_conllu(&MINIMAL.replace('\n', "\r\n"), "pl");
        assert_eq!(r.sentences.len(), 1);
        assert_eq!(r.sentences[0].tokens[1].misc, "_");
    }
}
