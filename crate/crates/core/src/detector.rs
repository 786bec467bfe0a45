//! Detectors for the AANN construction and its related phenomena.
//!
//! AANN and DT ANN are found by a pattern over the PTB tag sequence:
//!
//! ```text
//! DT (RB* ADJ CC*)+ NUM ((TO|CC) CD)* NOUN+
//!   ADJ  = JJ | JJR | JJS
//!   NUM  = CD | CD CD | ADJ | NN          (ADJ/NN only for numeral proxies)
//!   NOUN = NNS | NNPS | NN NNS | (NN|NNS) IN NNS
//! ```
//!
//! Matching is leftmost-longest and non-overlapping; scanning resumes after
//! the last token of each match. The other detectors read dependency arcs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Corpus, Token};
use crate::error::{Error, Result};

pub const INDEFINITE_ARTICLES: &[&str] = &["a", "an", "another"];

/// Adjectives and nouns that may stand in the numeral slot.
pub const NUMERAL_PROXIES: &[&str] = &["few", "dozen", "couple", "several", "many", "more"];

const SINGULAR_VERB_FORMS: &[&str] = &["is", "was", "has", "does"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PhenomenonKind {
    Aann,
    DtAnn,
    IndefPluralNp,
    MeasureSingular,
    ArticleAdjFollower,
    ArticleNumFollower,
}

impl PhenomenonKind {
    pub const ALL: [PhenomenonKind; 6] = [
        PhenomenonKind::Aann,
        PhenomenonKind::DtAnn,
        PhenomenonKind::IndefPluralNp,
        PhenomenonKind::MeasureSingular,
        PhenomenonKind::ArticleAdjFollower,
        PhenomenonKind::ArticleNumFollower,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PhenomenonKind::Aann => "AANN",
            PhenomenonKind::DtAnn => "DT_ANN",
            PhenomenonKind::IndefPluralNp => "INDEF_PLURAL_NP",
            PhenomenonKind::MeasureSingular => "MEASURE_SINGULAR",
            PhenomenonKind::ArticleAdjFollower => "ARTICLE_ADJ_FOLLOWER",
            PhenomenonKind::ArticleNumFollower => "ARTICLE_NUM_FOLLOWER",
        }
    }
}

impl fmt::Display for PhenomenonKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhenomenonKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.trim().to_ascii_uppercase().replace('-', "_");
        PhenomenonKind::ALL
            .into_iter()
            .find(|k| k.as_str() == normalized)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown phenomenon `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Article,
    Adjective,
    Numeral,
    Noun,
}

impl Slot {
    pub fn as_str(self) -> &'static str {
        match self {
            Slot::Article => "article",
            Slot::Adjective => "adjective",
            Slot::Numeral => "numeral",
            Slot::Noun => "noun",
        }
    }
}

/// Inclusive range of 0-based token indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenRange {
    pub start: usize,
    pub end: usize,
}

impl TokenRange {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        TokenRange { start, end }
    }

    pub fn single(index: usize) -> Self {
        TokenRange::new(index, index)
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, other: &TokenRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstructionMatch {
    pub kind: PhenomenonKind,
    pub sentence_id: String,
    pub span: TokenRange,
    pub slots: BTreeMap<Slot, TokenRange>,
    /// For DT ANN matches: the determiner is indefinite, so the same span is
    /// also an AANN.
    #[serde(default)]
    pub also_aann: bool,
}

impl ConstructionMatch {
    pub fn slot(&self, slot: Slot) -> Option<TokenRange> {
        self.slots.get(&slot).copied()
    }

    /// Folded surface of a slot group, tokens joined by spaces.
    pub fn slot_surface(&self, sentence: &AnnotatedSentence, slot: Slot) -> Option<String> {
        let range = self.slot(slot)?;
        let words: Vec<String> = range
            .indices()
            .filter_map(|i| sentence.tokens.get(i))
            .map(Token::folded)
            .collect();
        Some(words.join(" "))
    }
}

fn is_adjective(tag: &str) -> bool {
    matches!(tag, "JJ" | "JJR" | "JJS")
}

fn is_plural_noun(tag: &str) -> bool {
    matches!(tag, "NNS" | "NNPS")
}

fn is_indefinite(token: &Token) -> bool {
    INDEFINITE_ARTICLES.contains(&token.folded().as_str())
}

fn is_proxy(token: &Token) -> bool {
    NUMERAL_PROXIES.contains(&token.folded().as_str())
}

/// One complete parse of the tag pattern starting at a determiner.
#[derive(Debug, Clone, Copy)]
struct PatternParse {
    /// First token of the numeral group.
    numeral_start: usize,
    /// First token of the noun groups.
    noun_start: usize,
    /// Last token of the match.
    end: usize,
}

/// Exclusive end positions of every complete `(RB* ADJ CC*)+` run from `from`,
/// longest first.
fn adjective_group_ends(tags: &[&str], from: usize) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut frontier = vec![from];
    while let Some(start) = frontier.pop() {
        let mut i = start;
        while i < tags.len() && tags[i] == "RB" {
            i += 1;
        }
        if i >= tags.len() || !is_adjective(tags[i]) {
            continue;
        }
        let mut j = i + 1;
        loop {
            if !ends.contains(&j) {
                ends.push(j);
                frontier.push(j);
            }
            if j < tags.len() && tags[j] == "CC" {
                j += 1;
            } else {
                break;
            }
        }
    }
    ends.sort_unstable_by(|a, b| b.cmp(a));
    ends
}

/// Exclusive ends of the numeral group starting at `from`, longest first,
/// paired with whether the head token is a non-CD word (adjective or NN).
fn numeral_group_ends(tags: &[&str], from: usize) -> Vec<(usize, bool)> {
    let mut heads = Vec::new();
    if from < tags.len() {
        if tags[from] == "CD" {
            heads.push((from + 1, false));
            if from + 1 < tags.len() && tags[from + 1] == "CD" {
                heads.push((from + 2, false));
            }
        } else if is_adjective(tags[from]) || tags[from] == "NN" {
            heads.push((from + 1, true));
        }
    }
    let mut ends = Vec::new();
    for (head_end, word_head) in heads {
        ends.push((head_end, word_head));
        let mut i = head_end;
        while i + 1 < tags.len() && matches!(tags[i], "TO" | "CC") && tags[i + 1] == "CD" {
            i += 2;
            ends.push((i, word_head));
        }
    }
    ends.sort_unstable_by(|a, b| b.0.cmp(&a.0));
    ends
}

/// Exclusive ends of a single noun group at `from`, with whether it has the
/// `X IN NNS` shape.
fn noun_group_ends(tags: &[&str], from: usize) -> Vec<(usize, bool)> {
    let mut ends = Vec::new();
    let tag = |i: usize| tags.get(i).copied().unwrap_or("");
    if is_plural_noun(tag(from)) {
        ends.push((from + 1, false));
    }
    if tag(from) == "NN" && tag(from + 1) == "NNS" {
        ends.push((from + 2, false));
    }
    if matches!(tag(from), "NN" | "NNS") && tag(from + 1) == "IN" && tag(from + 2) == "NNS" {
        ends.push((from + 3, true));
    }
    ends
}

fn parse_at(tokens: &[Token], tags: &[&str], start: usize, indefinite_only: bool) -> Option<PatternParse> {
    if tags[start] != "DT" {
        return None;
    }
    if indefinite_only && !is_indefinite(&tokens[start]) {
        return None;
    }

    let mut best: Option<PatternParse> = None;
    for adj_end in adjective_group_ends(tags, start + 1) {
        for (num_end, word_head) in numeral_group_ends(tags, adj_end) {
            // Noun groups repeat one or more times; collect every reachable end.
            let mut reach: Vec<(usize, bool)> = Vec::new();
            let mut frontier: Vec<(usize, bool)> = vec![(num_end, false)];
            while let Some((pos, prep_first)) = frontier.pop() {
                for (next, prep) in noun_group_ends(tags, pos) {
                    let first_prep = if pos == num_end { prep } else { prep_first };
                    if !reach.iter().any(|r| r.0 == next && r.1 == first_prep) {
                        reach.push((next, first_prep));
                        frontier.push((next, first_prep));
                    }
                }
            }
            reach.sort_unstable_by(|a, b| b.0.cmp(&a.0));
            for (noun_end, prep_first) in reach {
                if word_head && !numeral_word_allowed(tokens, start, adj_end, num_end, prep_first) {
                    continue;
                }
                let candidate = PatternParse {
                    numeral_start: adj_end,
                    noun_start: num_end,
                    end: noun_end - 1,
                };
                if best.is_none_or(|b| candidate.end > b.end) {
                    best = Some(candidate);
                }
            }
        }
    }
    best
}

/// Whether a non-CD word may fill the numeral slot at `numeral`.
fn numeral_word_allowed(
    tokens: &[Token],
    start: usize,
    numeral: usize,
    noun_start: usize,
    prep_noun_first: bool,
) -> bool {
    let word = &tokens[numeral];
    if is_proxy(word) {
        if word.folded() == "more" {
            // "more" only follows another numeral or proxy: "a few more inches".
            return tokens[start + 1..numeral]
                .iter()
                .any(|t| t.pos() == "CD" || (is_proxy(t) && t.folded() != "more"));
        }
        return true;
    }
    // "an awful last couple of days": the quantity sits in an `X IN NNS` noun
    // group headed by a proxy, and an adjective fills the numeral position.
    prep_noun_first && is_adjective(word.pos()) && is_proxy(&tokens[noun_start])
}

fn detect_pattern(sentence: &AnnotatedSentence, indefinite_only: bool) -> Vec<ConstructionMatch> {
    let tokens = &sentence.tokens;
    let tags: Vec<&str> = tokens.iter().map(Token::pos).collect();
    let mut matches = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match parse_at(tokens, &tags, i, indefinite_only) {
            Some(parse) => {
                let indefinite = is_indefinite(&tokens[i]);
                let mut slots = BTreeMap::new();
                slots.insert(Slot::Article, TokenRange::single(i));
                slots.insert(Slot::Adjective, TokenRange::new(i + 1, parse.numeral_start - 1));
                slots.insert(Slot::Numeral, TokenRange::new(parse.numeral_start, parse.noun_start - 1));
                slots.insert(Slot::Noun, TokenRange::new(parse.noun_start, parse.end));
                matches.push(ConstructionMatch {
                    kind: if indefinite_only {
                        PhenomenonKind::Aann
                    } else {
                        PhenomenonKind::DtAnn
                    },
                    sentence_id: sentence.id.clone(),
                    span: TokenRange::new(i, parse.end),
                    slots,
                    also_aann: !indefinite_only && indefinite,
                });
                i = parse.end + 1;
            }
            None => i += 1,
        }
    }
    matches
}

/// Article + adjective group + numeral group + plural noun group, with the
/// article restricted to a/an/another.
pub fn detect_aann(sentence: &AnnotatedSentence) -> Vec<ConstructionMatch> {
    detect_pattern(sentence, true)
}

/// The AANN pattern with any determiner. Matches with an indefinite
/// determiner carry `also_aann`.
pub fn detect_dt_ann(sentence: &AnnotatedSentence) -> Vec<ConstructionMatch> {
    detect_pattern(sentence, false)
}

fn head_of(tokens: &[Token], index: usize) -> Option<usize> {
    match tokens[index].head {
        Some(h) if h >= 1 && h <= tokens.len() => Some(h - 1),
        _ => None,
    }
}

fn covering(ranges: &[usize]) -> TokenRange {
    let start = *ranges.iter().min().expect("nonempty");
    let end = *ranges.iter().max().expect("nonempty");
    TokenRange::new(start, end)
}

/// "a few plums", "a couple days": an indefinite determiner attached to a
/// plural noun either directly (`det`) or through a `quantmod` on a word that
/// is itself a `nummod` of the plural noun.
pub fn detect_indef_plural_np(sentence: &AnnotatedSentence) -> Vec<ConstructionMatch> {
    let tokens = &sentence.tokens;
    let mut matches = Vec::new();
    for (d, det) in tokens.iter().enumerate() {
        if !is_indefinite(det) {
            continue;
        }
        let Some(head) = head_of(tokens, d) else {
            continue;
        };
        let mut slots = BTreeMap::new();
        slots.insert(Slot::Article, TokenRange::single(d));
        let mut members = vec![d];

        if det.deprel == "det" && is_plural_noun(tokens[head].pos()) {
            let modifiers: Vec<usize> = (0..tokens.len())
                .filter(|&i| tokens[i].deprel == "amod" && head_of(tokens, i) == Some(head))
                .filter(|&i| i > d.min(head) && i < d.max(head))
                .collect();
            if !modifiers.is_empty() {
                slots.insert(Slot::Adjective, covering(&modifiers));
                members.extend(&modifiers);
            }
            slots.insert(Slot::Noun, TokenRange::single(head));
            members.push(head);
        } else if det.deprel == "quantmod" && tokens[head].deprel == "nummod" {
            let Some(noun) = head_of(tokens, head) else {
                continue;
            };
            if !is_plural_noun(tokens[noun].pos()) {
                continue;
            }
            slots.insert(Slot::Numeral, TokenRange::single(head));
            slots.insert(Slot::Noun, TokenRange::single(noun));
            members.extend([head, noun]);
        } else {
            continue;
        }

        matches.push(ConstructionMatch {
            kind: PhenomenonKind::IndefPluralNp,
            sentence_id: sentence.id.clone(),
            span: covering(&members),
            slots,
            also_aann: false,
        });
    }
    matches
}

fn is_singular_verb(token: &Token) -> bool {
    token.pos() == "VBZ" || SINGULAR_VERB_FORMS.contains(&token.folded().as_str())
}

/// "five dollars is plenty": a plural noun with a cardinal `nummod` that is the
/// `nsubj` of a singular verb.
pub fn detect_measure_singular(sentence: &AnnotatedSentence) -> Vec<ConstructionMatch> {
    let tokens = &sentence.tokens;
    let mut matches = Vec::new();
    for (n, noun) in tokens.iter().enumerate() {
        if !is_plural_noun(noun.pos()) || noun.deprel != "nsubj" {
            continue;
        }
        let Some(verb) = head_of(tokens, n) else {
            continue;
        };
        if !is_singular_verb(&tokens[verb]) {
            continue;
        }
        let cardinals: Vec<usize> = (0..tokens.len())
            .filter(|&i| {
                tokens[i].pos() == "CD" && tokens[i].deprel == "nummod" && head_of(tokens, i) == Some(n)
            })
            .collect();
        if cardinals.is_empty() {
            continue;
        }
        let mut slots = BTreeMap::new();
        slots.insert(Slot::Numeral, covering(&cardinals));
        slots.insert(Slot::Noun, TokenRange::single(n));
        let mut members = cardinals;
        members.extend([n, verb]);
        matches.push(ConstructionMatch {
            kind: PhenomenonKind::MeasureSingular,
            sentence_id: sentence.id.clone(),
            span: covering(&members),
            slots,
            also_aann: false,
        });
    }
    matches
}

fn article_followers(sentence: &AnnotatedSentence, numeral: bool) -> Vec<ConstructionMatch> {
    let tokens = &sentence.tokens;
    let (kind, slot) = if numeral {
        (PhenomenonKind::ArticleNumFollower, Slot::Numeral)
    } else {
        (PhenomenonKind::ArticleAdjFollower, Slot::Adjective)
    };
    tokens
        .windows(2)
        .enumerate()
        .filter(|(_, pair)| is_indefinite(&pair[0]))
        .filter(|(_, pair)| {
            if numeral {
                pair[1].pos() == "CD"
            } else {
                is_adjective(pair[1].pos())
            }
        })
        .map(|(i, _)| {
            let mut slots = BTreeMap::new();
            slots.insert(Slot::Article, TokenRange::single(i));
            slots.insert(slot, TokenRange::single(i + 1));
            ConstructionMatch {
                kind,
                sentence_id: sentence.id.clone(),
                span: TokenRange::new(i, i + 1),
                slots,
                also_aann: false,
            }
        })
        .collect()
}

/// Indefinite article followed by JJ/JJR/JJS and by CD, in one sentence.
pub fn article_modifier_followers(sentence: &AnnotatedSentence) -> (u64, u64) {
    let mut adj = 0;
    let mut num = 0;
    for pair in sentence.tokens.windows(2) {
        if !is_indefinite(&pair[0]) {
            continue;
        }
        let tag = pair[1].pos();
        if is_adjective(tag) {
            adj += 1;
        } else if tag == "CD" {
            num += 1;
        }
    }
    (adj, num)
}

/// Corpus-wide `(adj_count, num_count)` of indefinite-article bigrams.
pub fn count_article_modifier_followers(corpus: &Corpus) -> (u64, u64) {
    corpus
        .sentences()
        .iter()
        .map(article_modifier_followers)
        .fold((0, 0), |(a, n), (da, dn)| (a + da, n + dn))
}

pub fn detect(sentence: &AnnotatedSentence, kind: PhenomenonKind) -> Vec<ConstructionMatch> {
    match kind {
        PhenomenonKind::Aann => detect_aann(sentence),
        PhenomenonKind::DtAnn => detect_dt_ann(sentence),
        PhenomenonKind::IndefPluralNp => detect_indef_plural_np(sentence),
        PhenomenonKind::MeasureSingular => detect_measure_singular(sentence),
        PhenomenonKind::ArticleAdjFollower => article_followers(sentence, false),
        PhenomenonKind::ArticleNumFollower => article_followers(sentence, true),
    }
}

/// All matches of the requested kinds in sentence order, then span start.
pub fn detect_all(corpus: &Corpus, kinds: &[PhenomenonKind]) -> Vec<ConstructionMatch> {
    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();
    let mut all = Vec::new();
    for sentence in corpus.sentences() {
        let mut found: Vec<ConstructionMatch> =
            kinds.iter().flat_map(|&k| detect(sentence, k)).collect();
        found.sort_by_key(|m| (m.span.start, m.kind));
        all.extend(found);
    }
    all
}

/// JSON Lines record for one match, including slot surfaces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchRecord {
    #[serde(flatten)]
    pub matched: ConstructionMatch,
    pub surfaces: BTreeMap<Slot, String>,
    pub text: String,
}

pub fn matches_to_jsonl(corpus: &Corpus, matches: &[ConstructionMatch]) -> Result<String> {
    let mut out = String::new();
    for m in matches {
        let sentence = corpus
            .get(&m.sentence_id)
            .ok_or_else(|| Error::UnknownSentence(m.sentence_id.clone()))?;
        let surfaces = m
            .slots
            .iter()
            .map(|(slot, range)| {
                let words: Vec<&str> = range
                    .indices()
                    .map(|i| sentence.tokens[i].surface.as_str())
                    .collect();
                (*slot, words.join(" "))
            })
            .collect();
        let text = m
            .span
            .indices()
            .map(|i| sentence.tokens[i].surface.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let record = MatchRecord {
            matched: m.clone(),
            surfaces,
            text,
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_matches_jsonl(input: &str) -> Result<Vec<ConstructionMatch>> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<MatchRecord>(line)
                .map(|r| r.matched)
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}
