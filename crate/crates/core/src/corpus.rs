//! Sentence/token data model and CoNLL-U ingestion.
//!
//! The toolkit never tags or parses text itself; every corpus enters through
//! [`ingest_conllu`]. The PTB tag of a token is its XPOS column when that is
//! filled, otherwise its UPOS column. All ten CoNLL-U columns are kept so that
//! [`write_conllu`] reproduces well-formed input byte for byte.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::BufRead;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Penn Treebank tag inventory, including punctuation tags.
pub const PTB_TAGS: &[&str] = &[
    "CC", "CD", "DT", "EX", "FW", "IN", "JJ", "JJR", "JJS", "LS", "MD", "NN", "NNS", "NNP", "NNPS",
    "PDT", "POS", "PRP", "PRP$", "RB", "RBR", "RBS", "RP", "SYM", "TO", "UH", "VB", "VBD", "VBG",
    "VBN", "VBP", "VBZ", "WDT", "WP", "WP$", "WRB", "ADD", "AFX", "HYPH", "NFP", "XX", "GW", "-LRB-",
    "-RRB-", "``", "''", ",", ".", ":", "$", "#", "_SP",
];

const REPARSE_COMMENT: &str = "# reparse_needed = true";

/// NFC-normalized, lower-cased surface used for every lexical comparison.
pub fn fold(surface: &str) -> String {
    surface.nfc().collect::<String>().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: String,
    /// 1-based head index, `Some(0)` for the root, `None` when unannotated.
    pub head: Option<usize>,
    pub deprel: String,
    pub deps: String,
    pub misc: String,
}

impl Token {
    pub fn new(surface: &str, pos: &str, head: Option<usize>, deprel: &str) -> Self {
        Token {
            surface: surface.to_string(),
            lemma: "_".to_string(),
            upos: "_".to_string(),
            xpos: pos.to_string(),
            feats: "_".to_string(),
            head,
            deprel: deprel.to_string(),
            deps: "_".to_string(),
            misc: "_".to_string(),
        }
    }

    /// The PTB tag: XPOS when present, UPOS otherwise.
    pub fn pos(&self) -> &str {
        if self.xpos != "_" && !self.xpos.is_empty() {
            &self.xpos
        } else {
            &self.upos
        }
    }

    pub fn pos_is_known(&self) -> bool {
        PTB_TAGS.contains(&self.pos())
    }

    pub fn folded(&self) -> String {
        fold(&self.surface)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub id: String,
    pub tokens: Vec<Token>,
    pub source: String,
    /// Comment lines (including the leading `#`) in input order.
    pub comments: Vec<String>,
    /// True when `id` was synthesized as `<source>:<ordinal>` rather than read
    /// from a `sent_id` comment.
    pub id_assigned: bool,
    /// Set when in-span dependency arcs were invalidated by reordering.
    pub reparse_needed: bool,
}

impl AnnotatedSentence {
    pub fn new(id: &str, source: &str, tokens: Vec<Token>) -> Self {
        AnnotatedSentence {
            id: id.to_string(),
            tokens,
            source: source.to_string(),
            comments: Vec::new(),
            id_assigned: false,
            reparse_needed: false,
        }
    }

    /// Builds a sentence from slash-tagged text: `word/TAG` or
    /// `word/TAG/head/deprel` per whitespace-separated token.
    pub fn from_tagged(id: &str, text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, item) in text.split_whitespace().enumerate() {
            let parts: Vec<&str> = item.split('/').collect();
            let n = parts.len();
            let token = if n >= 4 && parts[n - 2].parse::<usize>().is_ok() {
                let head = parts[n - 2].parse::<usize>().ok();
                Token::new(&parts[..n - 3].join("/"), parts[n - 3], head, parts[n - 1])
            } else if n >= 2 {
                Token::new(&parts[..n - 1].join("/"), parts[n - 1], None, "_")
            } else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("token `{item}` has no tag"),
                });
            };
            tokens.push(token);
        }
        if tokens.is_empty() {
            return Err(Error::Empty("tagged sentence"));
        }
        Ok(AnnotatedSentence::new(id, "tagged", tokens))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Surfaces joined by single spaces.
    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn mark_reparse_needed(&mut self) {
        if !self.reparse_needed {
            self.reparse_needed = true;
            self.comments.push(REPARSE_COMMENT.to_string());
        }
    }

    /// Copy under a new explicit id.
    pub fn duplicate_as(&self, new_id: &str) -> Self {
        let mut copy = self.clone();
        copy.id = new_id.to_string();
        copy.id_assigned = false;
        copy
    }

    /// Keeps the first `keep` tokens. Arcs pointing past the cut are cleared.
    pub fn truncate(&mut self, keep: usize) {
        self.tokens.truncate(keep);
        for token in &mut self.tokens {
            if matches!(token.head, Some(h) if h > keep) {
                token.head = None;
                token.deprel = "_".to_string();
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    sentences: Vec<AnnotatedSentence>,
    token_total: u64,
}

impl Corpus {
    pub fn new() -> Self {
        Corpus::default()
    }

    pub fn from_sentences(sentences: Vec<AnnotatedSentence>) -> Self {
        let token_total = sentences.iter().map(|s| s.len() as u64).sum();
        Corpus {
            sentences,
            token_total,
        }
    }

    pub fn sentences(&self) -> &[AnnotatedSentence] {
        &self.sentences
    }

    pub fn into_sentences(self) -> Vec<AnnotatedSentence> {
        self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_total(&self) -> u64 {
        self.token_total
    }

    pub fn push(&mut self, sentence: AnnotatedSentence) {
        self.token_total += sentence.len() as u64;
        self.sentences.push(sentence);
    }

    pub fn get(&self, id: &str) -> Option<&AnnotatedSentence> {
        self.sentences.iter().find(|s| s.id == id)
    }

    pub fn concat(mut self, other: Corpus) -> Corpus {
        self.token_total += other.token_total;
        self.sentences.extend(other.sentences);
        self
    }

    /// One utterance per line, tokens separated by single spaces.
    pub fn to_plain_text(&self) -> String {
        let mut out = String::new();
        for sentence in &self.sentences {
            out.push_str(&sentence.text());
            out.push('\n');
        }
        out
    }
}

/// Exact token count of a corpus.
pub fn token_count(corpus: &Corpus) -> u64 {
    corpus.sentences.iter().map(|s| s.len() as u64).sum()
}

/// Parses a CoNLL-U stream. `source` names the stream and prefixes synthesized
/// sentence ids.
pub fn ingest_conllu<R: BufRead>(reader: R, source: &str) -> Result<Corpus> {
    let mut corpus = Corpus::new();
    let mut seen_ids = HashSet::new();
    let mut pending = PendingSentence::default();

    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = index + 1;
        let line = line.strip_suffix('\r').unwrap_or(&line);

        if line.trim().is_empty() {
            if let Some(sentence) = pending.finish(source, corpus.len() + 1)? {
                if !seen_ids.insert(sentence.id.clone()) {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("duplicate sentence id `{}`", sentence.id),
                    });
                }
                corpus.push(sentence);
            }
            continue;
        }

        if line.starts_with('#') {
            pending.comment(line);
            continue;
        }

        let columns: Vec<&str> = line.split('\t').collect();
        if columns.len() != 10 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 10 tab-separated columns, found {}", columns.len()),
            });
        }

        // Multiword ranges and empty nodes carry no tags of their own.
        if columns[0].contains('-') || columns[0].contains('.') {
            continue;
        }
        if columns[0].parse::<usize>().is_err() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("token id `{}` is not an integer", columns[0]),
            });
        }

        let head = match columns[6] {
            "_" => None,
            raw => Some(raw.parse::<usize>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("head `{raw}` is not an integer"),
            })?),
        };

        pending.tokens.push(Token {
            surface: columns[1].to_string(),
            lemma: columns[2].to_string(),
            upos: columns[3].to_string(),
            xpos: columns[4].to_string(),
            feats: columns[5].to_string(),
            head,
            deprel: columns[7].to_string(),
            deps: columns[8].to_string(),
            misc: columns[9].to_string(),
        });
        pending.lines.push(line_no);
    }

    if let Some(sentence) = pending.finish(source, corpus.len() + 1)? {
        if !seen_ids.insert(sentence.id.clone()) {
            return Err(Error::Parse {
                line: 0,
                message: format!("duplicate sentence id `{}`", sentence.id),
            });
        }
        corpus.push(sentence);
    }

    Ok(corpus)
}

#[derive(Default)]
struct PendingSentence {
    comments: Vec<String>,
    tokens: Vec<Token>,
    lines: Vec<usize>,
}

impl PendingSentence {
    fn comment(&mut self, line: &str) {
        self.comments.push(line.to_string());
    }

    fn finish(&mut self, source: &str, ordinal: usize) -> Result<Option<AnnotatedSentence>> {
        let comments = std::mem::take(&mut self.comments);
        let tokens = std::mem::take(&mut self.tokens);
        let lines = std::mem::take(&mut self.lines);
        if tokens.is_empty() {
            // Comments without tokens (e.g. document headers) are dropped.
            return Ok(None);
        }

        let count = tokens.len();
        for (token, line) in tokens.iter().zip(&lines) {
            if let Some(head) = token.head {
                if head > count {
                    return Err(Error::Parse {
                        line: *line,
                        message: format!("head {head} outside sentence of {count} tokens"),
                    });
                }
            }
        }

        let explicit_id = comments.iter().find_map(|c| comment_value(c, "sent_id"));
        let reparse_needed = comments.iter().any(|c| c == REPARSE_COMMENT);
        let (id, id_assigned) = match explicit_id {
            Some(id) => (id.to_string(), false),
            None => (format!("{source}:{ordinal}"), true),
        };

        Ok(Some(AnnotatedSentence {
            id,
            tokens,
            source: source.to_string(),
            comments,
            id_assigned,
            reparse_needed,
        }))
    }
}

fn comment_value<'a>(comment: &'a str, key: &str) -> Option<&'a str> {
    let body = comment.strip_prefix('#')?.trim_start();
    let rest = body.strip_prefix(key)?.trim_start();
    let value = rest.strip_prefix('=')?.trim();
    Some(value)
}

/// Serializes a corpus back to CoNLL-U. Token ids are renumbered 1..n.
pub fn write_conllu(corpus: &Corpus) -> String {
    let mut out = String::new();
    for sentence in corpus.sentences() {
        let has_id_comment = sentence
            .comments
            .iter()
            .any(|c| comment_value(c, "sent_id").is_some());
        if !has_id_comment && !sentence.id_assigned {
            let _ = writeln!(out, "# sent_id = {}", sentence.id);
        }
        for comment in &sentence.comments {
            if comment_value(comment, "sent_id").is_some() {
                let _ = writeln!(out, "# sent_id = {}", sentence.id);
            } else {
                out.push_str(comment);
                out.push('\n');
            }
        }
        for (i, t) in sentence.tokens.iter().enumerate() {
            let head = t.head.map_or_else(|| "_".to_string(), |h| h.to_string());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                i + 1,
                t.surface,
                t.lemma,
                t.upos,
                t.xpos,
                t.feats,
                head,
                t.deprel,
                t.deps,
                t.misc
            );
        }
        out.push('\n');
    }
    out
}
