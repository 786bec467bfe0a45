//! Unigram estimator and interpolated modified Kneser-Ney n-gram models.
//!
//! All probabilities are natural-log internally. ARPA files are written in
//! log10 as the format requires.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOKENIZER_TAG: &str = "ws-lower";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

const ARPA_FLOOR: f64 = -99.0;
const FALLBACK_DISCOUNT: f64 = 0.75;

/// Lower-cases, splits punctuation off as separate tokens, and splits on
/// whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
        } else if c.is_alphanumeric() || c == '_' {
            word.push(c);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

pub trait LanguageModel {
    fn tokenizer_tag(&self) -> &str;

    /// Natural-log probability of each token given the context and the
    /// tokens before it.
    fn token_logprobs(&self, tokens: &[String], context: &[String]) -> Vec<f64>;

    fn logprob_sequence(&self, tokens: &[String], context: &[String]) -> f64 {
        self.token_logprobs(tokens, context).iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnigramModel {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
    pub alpha: f64,
    pub tokenizer_tag: String,
}

impl UnigramModel {
    pub fn train<I, S>(tokens: I, alpha: f64, tokenizer_tag: &str) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("smoothing alpha {alpha} must be finite and >= 0")));
        }
        let mut counts = BTreeMap::new();
        let mut total = 0u64;
        for token in tokens {
            *counts.entry(token.as_ref().to_string()).or_insert(0) += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::Empty("unigram training stream"));
        }
        Ok(UnigramModel {
            counts,
            total,
            alpha,
            tokenizer_tag: tokenizer_tag.to_string(),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    fn denominator(&self) -> f64 {
        self.total as f64 + self.alpha * (self.counts.len() as f64 + 1.0)
    }

    pub fn prob(&self, token: &str) -> f64 {
        let count = self.counts.get(token).copied().unwrap_or(0) as f64;
        (count + self.alpha) / self.denominator()
    }

    /// Mass of the single unknown-token bucket.
    pub fn unknown_prob(&self) -> f64 {
        self.alpha / self.denominator()
    }

    pub fn logprob(&self, token: &str) -> f64 {
        self.prob(token).ln()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "#unigram\ttokenizer_tag={}\talpha={}\ttotal={}\n",
            self.tokenizer_tag, self.alpha, self.total
        );
        for (token, count) in &self.counts {
            let _ = writeln!(out, "{token}\t{count}");
        }
        out
    }

    pub fn from_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line?,
            None => return Err(Error::Empty("unigram model file")),
        };
        let mut fields = header.split('\t');
        if fields.next() != Some("#unigram") {
            return Err(Error::Parse {
                line: 1,
                message: "missing `#unigram` header".into(),
            });
        }
        let mut tag = None;
        let mut alpha = None;
        let mut declared_total = None;
        for field in fields {
            let bad = || Error::Parse {
                line: 1,
                message: format!("bad header field `{field}`"),
            };
            let (key, value) = field.split_once('=').ok_or_else(bad)?;
            match key {
                "tokenizer_tag" => tag = Some(value.to_string()),
                "alpha" => alpha = Some(value.parse::<f64>().map_err(|_| bad())?),
                "total" => declared_total = Some(value.parse::<u64>().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        let mut counts = BTreeMap::new();
        let mut total = 0u64;
        for (i, line) in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parse_err = || Error::Parse {
                line: i + 1,
                message: format!("expected `token<TAB>count`, got `{line}`"),
            };
            let (token, count) = line.rsplit_once('\t').ok_or_else(parse_err)?;
            let count: u64 = count.parse().map_err(|_| parse_err())?;
            total += count;
            counts.insert(token.to_string(), count);
        }
        if declared_total.is_some_and(|t| t != total) {
            return Err(Error::Parse {
                line: 1,
                message: format!("header total {} disagrees with counts sum {total}", declared_total.unwrap_or(0)),
            });
        }
        if total == 0 {
            return Err(Error::Empty("unigram model file"));
        }
        Ok(UnigramModel {
            counts,
            total,
            alpha: alpha.unwrap_or(1.0),
            tokenizer_tag: tag.unwrap_or_else(|| TOKENIZER_TAG.to_string()),
        })
    }
}

impl LanguageModel for UnigramModel {
    fn tokenizer_tag(&self) -> &str {
        &self.tokenizer_tag
    }

    fn token_logprobs(&self, tokens: &[String], _context: &[String]) -> Vec<f64> {
        tokens.iter().map(|t| self.logprob(t)).collect()
    }
}

/// Discounts for one order. `fallback` is set when the closed-form estimate
/// was unusable and the fixed value was substituted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discounts {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub fallback: bool,
}

impl Discounts {
    fn fixed() -> Self {
        Discounts {
            d1: FALLBACK_DISCOUNT,
            d2: FALLBACK_DISCOUNT,
            d3: FALLBACK_DISCOUNT,
            fallback: true,
        }
    }

    /// Closed-form estimate from count-of-counts t1..t4.
    pub fn from_count_of_counts(t: [u64; 4]) -> Self {
        if t.iter().any(|&x| x == 0) {
            return Self::fixed();
        }
        let [t1, t2, t3, t4] = t.map(|x| x as f64);
        let y = t1 / (t1 + 2.0 * t2);
        let d1 = 1.0 - 2.0 * y * t2 / t1;
        let d2 = 2.0 - 3.0 * y * t3 / t2;
        let d3 = 3.0 - 4.0 * y * t4 / t3;
        let valid = [(d1, 1.0), (d2, 2.0), (d3, 3.0)]
            .iter()
            .all(|&(d, max)| d > 0.0 && d <= max);
        if valid {
            Discounts { d1, d2, d3, fallback: false }
        } else {
            Self::fixed()
        }
    }

    pub fn for_count(&self, count: u64) -> f64 {
        match count {
            0 => 0.0,
            1 => self.d1,
            2 => self.d2,
            _ => self.d3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    prob: f64,
    backoff: f64,
}

/// Interpolated modified Kneser-Ney model stored in backoff form: each
/// observed n-gram holds its final conditional log-probability and, when it
/// is a context, its log backoff weight.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    tokenizer_tag: String,
    discounts: Vec<Discounts>,
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    tables: Vec<HashMap<Vec<u32>, Entry>>,
}

const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;

impl NGramModel {
    /// Trains on utterances of already-tokenized words. Each utterance is
    /// wrapped in `<s>` ... `</s>`.
    pub fn train(utterances: &[Vec<String>], order: usize, tokenizer_tag: &str) -> Result<Self> {
        if !(2..=4).contains(&order) {
            return Err(Error::InvalidArgument(format!("n-gram order {order} not in 2..=4")));
        }
        let token_total: usize = utterances.iter().map(Vec::len).sum();
        if token_total < order {
            return Err(Error::InsufficientTokens {
                requested: order as u64,
                available: token_total as u64,
            });
        }

        let mut vocab = vec![BOS.to_string(), EOS.to_string(), UNK.to_string()];
        let mut ids: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let mut raw: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
        let mut padded = Vec::new();
        for utterance in utterances {
            if utterance.is_empty() {
                continue;
            }
            padded.clear();
            padded.push(BOS_ID);
            for word in utterance {
                let next = vocab.len() as u32;
                let id = *ids.entry(word.clone()).or_insert_with(|| {
                    vocab.push(word.clone());
                    next
                });
                padded.push(if id == BOS_ID { UNK_ID } else { id });
            }
            padded.push(EOS_ID);
            for end in 1..padded.len() {
                for k in 1..=order.min(end + 1) {
                    *raw[k - 1].entry(padded[end + 1 - k..=end].to_vec()).or_insert(0) += 1;
                }
            }
        }

        // Adjusted counts: raw at the top order and for n-grams anchored at
        // <s>, distinct left extensions otherwise.
        let mut adjusted: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
        adjusted[order - 1] = raw[order - 1].clone();
        for k in (1..order).rev() {
            let mut continuation: HashMap<&[u32], u64> = HashMap::new();
            for gram in raw[k].keys() {
                *continuation.entry(&gram[1..]).or_insert(0) += 1;
            }
            for (gram, &count) in &raw[k - 1] {
                let value = if gram[0] == BOS_ID {
                    count
                } else {
                    continuation.get(gram.as_slice()).copied().unwrap_or(0)
                };
                adjusted[k - 1].insert(gram.clone(), value);
            }
        }

        let discounts: Vec<Discounts> = adjusted
            .iter()
            .map(|table| {
                let mut t = [0u64; 4];
                for &a in table.values() {
                    if (1..=4).contains(&a) {
                        t[a as usize - 1] += 1;
                    }
                }
                Discounts::from_count_of_counts(t)
            })
            .collect();

        // Per-context totals and discounted mass, keyed by context.
        struct ContextStats {
            total: f64,
            discounted: f64,
        }
        let stats: Vec<HashMap<&[u32], ContextStats>> = adjusted
            .iter()
            .zip(&discounts)
            .map(|(table, d)| {
                let mut by_context: HashMap<&[u32], ContextStats> = HashMap::new();
                for (gram, &a) in table {
                    let s = by_context.entry(&gram[..gram.len() - 1]).or_insert(ContextStats {
                        total: 0.0,
                        discounted: 0.0,
                    });
                    s.total += a as f64;
                    s.discounted += d.for_count(a);
                }
                by_context
            })
            .collect();

        let mut model = NGramModel {
            order,
            tokenizer_tag: tokenizer_tag.to_string(),
            discounts: discounts.clone(),
            vocab,
            ids,
            tables: vec![HashMap::new(); order],
        };

        // Unigrams interpolate with a uniform distribution over every
        // predictable type plus <unk>.
        let root = &stats[0][&[][..]];
        let gamma_root = root.discounted / root.total;
        let mut predictable = adjusted[0].len();
        if !adjusted[0].contains_key(&vec![UNK_ID]) {
            predictable += 1;
        }
        let uniform = gamma_root / predictable as f64;
        for (gram, &a) in &adjusted[0] {
            let p = (a as f64 - discounts[0].for_count(a)) / root.total + uniform;
            model.tables[0].insert(gram.clone(), Entry { prob: p.ln(), backoff: 0.0 });
        }
        model.tables[0].entry(vec![UNK_ID]).or_insert(Entry {
            prob: uniform.ln(),
            backoff: 0.0,
        });
        model.tables[0].insert(
            vec![BOS_ID],
            Entry {
                prob: f64::NEG_INFINITY,
                backoff: 0.0,
            },
        );

        for k in 2..=order {
            for (context, s) in &stats[k - 1] {
                let entry = model.tables[k - 2]
                    .get_mut(*context)
                    .expect("every context is an observed lower-order n-gram");
                entry.backoff = (s.discounted / s.total).ln();
            }
            let d = discounts[k - 1];
            let mut level = HashMap::with_capacity(adjusted[k - 1].len());
            for (gram, &a) in &adjusted[k - 1] {
                let s = &stats[k - 1][&gram[..k - 1]];
                let gamma = s.discounted / s.total;
                let lower = model.lookup(&gram[1..]).exp();
                let p = (a as f64 - d.for_count(a)) / s.total + gamma * lower;
                level.insert(gram.clone(), Entry { prob: p.ln(), backoff: 0.0 });
            }
            model.tables[k - 1] = level;
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discounts(&self) -> &[Discounts] {
        &self.discounts
    }

    /// Predictable vocabulary, excluding `<s>` and including `<unk>`.
    pub fn vocabulary(&self) -> Vec<&str> {
        let mut words: Vec<&str> = self.tables[0]
            .keys()
            .filter(|g| g[0] != BOS_ID)
            .map(|g| self.vocab[g[0] as usize].as_str())
            .collect();
        words.sort_unstable();
        words
    }

    pub fn ngram_count(&self, k: usize) -> usize {
        self.tables.get(k.wrapping_sub(1)).map_or(0, HashMap::len)
    }

    fn id(&self, word: &str) -> u32 {
        match self.ids.get(word) {
            Some(&id) if id != BOS_ID && self.tables[0].contains_key(&vec![id]) => id,
            _ => UNK_ID,
        }
    }

    fn context_id(&self, word: &str) -> u32 {
        match self.ids.get(word) {
            Some(&id) if id == BOS_ID || self.tables[0].contains_key(&vec![id]) => id,
            _ => UNK_ID,
        }
    }

    /// ln p(last | rest) by backoff over the stored tables.
    fn lookup(&self, gram: &[u32]) -> f64 {
        let k = gram.len();
        if let Some(entry) = self.tables[k - 1].get(gram) {
            return entry.prob;
        }
        if k == 1 {
            return self.tables[0][&vec![UNK_ID]].prob;
        }
        let backoff = self.tables[k - 2].get(&gram[..k - 1]).map_or(0.0, |e| e.backoff);
        backoff + self.lookup(&gram[1..])
    }

    /// ln p(word | history); the history is used as given (callers add `<s>`).
    pub fn conditional_logprob(&self, word: &str, history: &[&str]) -> f64 {
        let mut gram: Vec<u32> = history
            .iter()
            .skip(history.len().saturating_sub(self.order - 1))
            .map(|w| self.context_id(w))
            .collect();
        gram.push(self.id(word));
        // A non-initial <s> cannot start an observed n-gram.
        if let Some(pos) = gram.iter().rposition(|&id| id == BOS_ID) {
            gram.drain(..pos);
        }
        self.lookup(&gram)
    }

    pub fn to_arpa(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# aann-ngram version=1 order={} tokenizer_tag={}", self.order, self.tokenizer_tag);
        for (k, d) in self.discounts.iter().enumerate() {
            let _ = writeln!(
                out,
                "# discounts order={} d1={} d2={} d3={} fallback={}",
                k + 1,
                d.d1,
                d.d2,
                d.d3,
                d.fallback
            );
        }
        out.push_str("\n\\data\\\n");
        for (k, table) in self.tables.iter().enumerate() {
            let _ = writeln!(out, "ngram {}={}", k + 1, table.len());
        }
        let log10 = |ln: f64| {
            if ln.is_finite() {
                ln / std::f64::consts::LN_10
            } else {
                ARPA_FLOOR
            }
        };
        for (k, table) in self.tables.iter().enumerate() {
            let _ = write!(out, "\n\\{}-grams:\n", k + 1);
            let mut rows: Vec<(String, &Entry)> = table
                .iter()
                .map(|(gram, e)| {
                    let words: Vec<&str> = gram.iter().map(|&id| self.vocab[id as usize].as_str()).collect();
                    (words.join(" "), e)
                })
                .collect();
            rows.sort_by(|a, b| a.0.cmp(&b.0));
            for (words, e) in rows {
                if k + 1 < self.order && e.backoff != 0.0 {
                    let _ = writeln!(out, "{}\t{}\t{}", log10(e.prob), words, log10(e.backoff));
                } else {
                    let _ = writeln!(out, "{}\t{}", log10(e.prob), words);
                }
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn from_arpa<R: BufRead>(reader: R) -> Result<Self> {
        let mut tokenizer_tag = TOKENIZER_TAG.to_string();
        let mut discounts: BTreeMap<usize, Discounts> = BTreeMap::new();
        let mut declared: BTreeMap<usize, usize> = BTreeMap::new();
        let mut section: Option<usize> = None;
        let mut in_data = false;
        let mut vocab = vec![BOS.to_string(), EOS.to_string(), UNK.to_string()];
        let mut ids: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let mut tables: Vec<HashMap<Vec<u32>, Entry>> = Vec::new();
        let from_log10 = |v: f64| {
            if v <= ARPA_FLOOR {
                f64::NEG_INFINITY
            } else {
                v * std::f64::consts::LN_10
            }
        };

        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            let err = |message: String| Error::Parse { line: line_no, message };
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(comment) = trimmed.strip_prefix('#') {
                if section.is_none() && !in_data {
                    for field in comment.split_whitespace() {
                        if let Some(tag) = field.strip_prefix("tokenizer_tag=") {
                            tokenizer_tag = tag.to_string();
                        }
                    }
                    if comment.trim_start().starts_with("discounts") {
                        let mut values: HashMap<&str, &str> = HashMap::new();
                        for field in comment.split_whitespace().skip(1) {
                            if let Some((k, v)) = field.split_once('=') {
                                values.insert(k, v);
                            }
                        }
                        let num = |key: &str| -> Result<f64> {
                            values
                                .get(key)
                                .and_then(|v| v.parse().ok())
                                .ok_or_else(|| err(format!("discount line lacks `{key}`")))
                        };
                        let order = num("order")? as usize;
                        discounts.insert(
                            order,
                            Discounts {
                                d1: num("d1")?,
                                d2: num("d2")?,
                                d3: num("d3")?,
                                fallback: values.get("fallback") == Some(&"true"),
                            },
                        );
                    }
                }
                continue;
            }
            if trimmed == "\\data\\" {
                in_data = true;
                continue;
            }
            if trimmed == "\\end\\" {
                break;
            }
            if let Some(rest) = trimmed.strip_prefix("ngram ") {
                let (k, n) = rest
                    .split_once('=')
                    .and_then(|(k, n)| Some((k.trim().parse().ok()?, n.trim().parse().ok()?)))
                    .ok_or_else(|| err(format!("bad count line `{trimmed}`")))?;
                declared.insert(k, n);
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('\\').and_then(|r| r.strip_suffix("-grams:")) {
                let k: usize = rest.parse().map_err(|_| err(format!("bad section header `{trimmed}`")))?;
                if k != tables.len() + 1 {
                    return Err(err(format!("section {k} out of order")));
                }
                tables.push(HashMap::new());
                section = Some(k);
                continue;
            }
            let Some(k) = section else {
                return Err(err(format!("unexpected line `{trimmed}`")));
            };
            let mut fields = trimmed.split('\t');
            let prob: f64 = fields
                .next()
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| err("missing log-probability".into()))?;
            let words: Vec<&str> = fields
                .next()
                .ok_or_else(|| err("missing n-gram".into()))?
                .split_whitespace()
                .collect();
            if words.len() != k {
                return Err(err(format!("expected {k} words, found {}", words.len())));
            }
            let backoff = match fields.next() {
                Some(v) => from_log10(v.trim().parse().map_err(|_| err(format!("bad backoff `{v}`")))?),
                None => 0.0,
            };
            let gram: Vec<u32> = words
                .iter()
                .map(|w| {
                    let next = vocab.len() as u32;
                    *ids.entry((*w).to_string()).or_insert_with(|| {
                        vocab.push((*w).to_string());
                        next
                    })
                })
                .collect();
            tables[k - 1].insert(
                gram,
                Entry {
                    prob: from_log10(prob),
                    backoff,
                },
            );
        }

        let order = tables.len();
        if !(2..=4).contains(&order) {
            return Err(Error::Parse {
                line: 0,
                message: format!("ARPA model has order {order}, expected 2..=4"),
            });
        }
        for (k, n) in &declared {
            if tables.get(k - 1).map(HashMap::len) != Some(*n) {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("declared {n} {k}-grams but read a different number"),
                });
            }
        }
        tables[0].entry(vec![UNK_ID]).or_insert(Entry {
            prob: ARPA_FLOOR * std::f64::consts::LN_10,
            backoff: 0.0,
        });
        let discounts = (1..=order)
            .map(|k| discounts.get(&k).copied().unwrap_or_else(Discounts::fixed))
            .collect();
        Ok(NGramModel {
            order,
            tokenizer_tag,
            discounts,
            vocab,
            ids,
            tables,
        })
    }
}

impl LanguageModel for NGramModel {
    fn tokenizer_tag(&self) -> &str {
        &self.tokenizer_tag
    }

    fn token_logprobs(&self, tokens: &[String], context: &[String]) -> Vec<f64> {
        let mut history: Vec<&str> = Vec::with_capacity(1 + context.len() + tokens.len());
        history.push(BOS);
        history.extend(context.iter().map(String::as_str));
        tokens
            .iter()
            .map(|token| {
                let lp = self.conditional_logprob(token, &history);
                history.push(token);
                lp
            })
            .collect()
    }
}
