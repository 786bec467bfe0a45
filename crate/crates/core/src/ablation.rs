//! Corpus manipulations: removal, counterfactual reordering, frequency
//! balancing, random control removal, token-parity upsampling and the
//! slot-variability split.
//!
//! Every operation returns an [`AblationManifest`] listing exactly what it did,
//! in order. [`replay`] re-applies a manifest to the source corpus without
//! consulting any random generator, so manifests are portable.
//!
//! Seeded operations draw from `ChaCha8Rng::seed_from_u64(seed)` (rand_chacha
//! 0.3) and shuffle with `rand 0.8`'s `SliceRandom::shuffle`; upsampling draws
//! indices with `Rng::gen_range`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Corpus};
use crate::detector::{article_modifier_followers, ConstructionMatch, Slot, TokenRange};
use crate::error::{Error, Result};

const MANIFEST_FORMAT: &str = "aann-ablation-manifest";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Removed,
    Replaced,
    Duplicated,
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CounterfactualVariant {
    Anan,
    Naan,
}

impl CounterfactualVariant {
    /// Slot groups in their new left-to-right order.
    pub fn slot_order(self) -> [Slot; 4] {
        match self {
            CounterfactualVariant::Anan => [Slot::Article, Slot::Numeral, Slot::Adjective, Slot::Noun],
            CounterfactualVariant::Naan => [Slot::Numeral, Slot::Adjective, Slot::Article, Slot::Noun],
        }
    }
}

impl fmt::Display for CounterfactualVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CounterfactualVariant::Anan => "ANAN",
            CounterfactualVariant::Naan => "NAAN",
        })
    }
}

impl FromStr for CounterfactualVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ANAN" => Ok(CounterfactualVariant::Anan),
            "NAAN" => Ok(CounterfactualVariant::Naan),
            _ => Err(Error::InvalidArgument(format!("unknown counterfactual variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RecordDetail {
    Removal {
        tokens: u64,
        reason: String,
    },
    /// `order[k]` is the old index of the token now at `span.start + k`.
    Reorder {
        variant: CounterfactualVariant,
        span: TokenRange,
        order: Vec<usize>,
    },
    Duplicate {
        new_id: String,
        tokens: u64,
    },
    Truncate {
        new_id: String,
        kept_tokens: u64,
        original_tokens: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub action: Action,
    pub sentence_id: String,
    pub detail: RecordDetail,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AblationManifest {
    pub seed: u64,
    pub operations: Vec<ManifestRecord>,
    pub source_token_total: u64,
    pub result_token_total: u64,
    /// Named integers describing the run (overshoot, bigram counts, ...).
    pub stats: BTreeMap<String, i64>,
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    format: String,
    version: u32,
    seed: u64,
    source_token_total: u64,
    result_token_total: u64,
    #[serde(default)]
    stats: BTreeMap<String, i64>,
}

impl AblationManifest {
    /// Manifest with no operations; replays to the source itself.
    pub fn new(seed: u64, source: &Corpus) -> Self {
        AblationManifest {
            seed,
            operations: Vec::new(),
            source_token_total: source.token_total(),
            result_token_total: source.token_total(),
            stats: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.operations.is_empty()
    }

    pub fn count(&self, action: Action) -> usize {
        self.operations.iter().filter(|r| r.action == action).count()
    }

    pub fn stat(&self, key: &str) -> Option<i64> {
        self.stats.get(key).copied()
    }

    /// Sequential composition: `self` applied first, then `next`.
    pub fn then(mut self, next: AblationManifest) -> AblationManifest {
        self.operations.extend(next.operations);
        self.result_token_total = next.result_token_total;
        for (key, value) in next.stats {
            *self.stats.entry(key).or_insert(0) += value;
        }
        self
    }

    /// Header line followed by one record per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let header = ManifestHeader {
            format: MANIFEST_FORMAT.to_string(),
            version: MANIFEST_VERSION,
            seed: self.seed,
            source_token_total: self.source_token_total,
            result_token_total: self.result_token_total,
            stats: self.stats.clone(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for record in &self.operations {
            out.push_str(&serde_json::to_string(record)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(input: &str) -> Result<Self> {
        let mut lines = input
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(Error::Empty("manifest"))?;
        let header: ManifestHeader = serde_json::from_str(first).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported manifest {} v{}", header.format, header.version),
            });
        }
        let operations = lines
            .map(|(i, line)| {
                serde_json::from_str(line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<ManifestRecord>>>()?;
        Ok(AblationManifest {
            seed: header.seed,
            operations,
            source_token_total: header.source_token_total,
            result_token_total: header.result_token_total,
            stats: header.stats,
        })
    }
}

/// Working copy of a corpus that supports removal by id and appends.
struct Workspace {
    slots: Vec<Option<AnnotatedSentence>>,
    index: HashMap<String, usize>,
}

impl Workspace {
    fn new(corpus: &Corpus) -> Self {
        let slots: Vec<Option<AnnotatedSentence>> =
            corpus.sentences().iter().cloned().map(Some).collect();
        let index = slots
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_ref().expect("fresh").id.clone(), i))
            .collect();
        Workspace { slots, index }
    }

    fn get(&self, id: &str) -> Result<&AnnotatedSentence> {
        self.index
            .get(id)
            .and_then(|&i| self.slots[i].as_ref())
            .ok_or_else(|| Error::UnknownSentence(id.to_string()))
    }

    fn get_mut(&mut self, id: &str) -> Result<&mut AnnotatedSentence> {
        match self.index.get(id) {
            Some(&i) => self.slots[i]
                .as_mut()
                .ok_or_else(|| Error::UnknownSentence(id.to_string())),
            None => Err(Error::UnknownSentence(id.to_string())),
        }
    }

    fn remove(&mut self, id: &str) -> Result<AnnotatedSentence> {
        let i = self
            .index
            .remove(id)
            .ok_or_else(|| Error::UnknownSentence(id.to_string()))?;
        self.slots[i]
            .take()
            .ok_or_else(|| Error::UnknownSentence(id.to_string()))
    }

    fn append(&mut self, sentence: AnnotatedSentence) -> Result<()> {
        if self.index.contains_key(&sentence.id) {
            return Err(Error::Replay(format!("sentence id `{}` already present", sentence.id)));
        }
        self.index.insert(sentence.id.clone(), self.slots.len());
        self.slots.push(Some(sentence));
        Ok(())
    }

    fn apply(&mut self, record: &ManifestRecord) -> Result<()> {
        match &record.detail {
            RecordDetail::Removal { .. } => {
                self.remove(&record.sentence_id)?;
            }
            RecordDetail::Reorder { span, order, .. } => {
                let sentence = self.get_mut(&record.sentence_id)?;
                apply_reorder(sentence, *span, order)?;
            }
            RecordDetail::Duplicate { new_id, .. } => {
                let copy = self.get(&record.sentence_id)?.duplicate_as(new_id);
                self.append(copy)?;
            }
            RecordDetail::Truncate {
                new_id, kept_tokens, ..
            } => {
                let mut copy = self.get(&record.sentence_id)?.duplicate_as(new_id);
                copy.truncate(*kept_tokens as usize);
                self.append(copy)?;
            }
        }
        Ok(())
    }

    fn into_corpus(self) -> Corpus {
        Corpus::from_sentences(self.slots.into_iter().flatten().collect())
    }
}

/// Re-applies a manifest to its source corpus.
pub fn replay(manifest: &AblationManifest, source: &Corpus) -> Result<Corpus> {
    if source.token_total() != manifest.source_token_total {
        return Err(Error::Replay(format!(
            "source holds {} tokens, manifest expects {}",
            source.token_total(),
            manifest.source_token_total
        )));
    }
    let mut work = Workspace::new(source);
    for record in &manifest.operations {
        work.apply(record)?;
    }
    let result = work.into_corpus();
    if result.token_total() != manifest.result_token_total {
        return Err(Error::Replay(format!(
            "replay produced {} tokens, manifest records {}",
            result.token_total(),
            manifest.result_token_total
        )));
    }
    Ok(result)
}

fn finish(work: Workspace, mut manifest: AblationManifest) -> (Corpus, AblationManifest) {
    let corpus = work.into_corpus();
    manifest.result_token_total = corpus.token_total();
    (corpus, manifest)
}

fn remove_ids<'a>(
    corpus: &Corpus,
    ids: impl IntoIterator<Item = &'a str>,
    reason: &str,
    seed: u64,
) -> Result<(Corpus, AblationManifest)> {
    let mut manifest = AblationManifest::new(seed, corpus);
    let mut work = Workspace::new(corpus);
    for id in ids {
        let removed = work.remove(id)?;
        manifest.operations.push(ManifestRecord {
            action: Action::Removed,
            sentence_id: id.to_string(),
            detail: RecordDetail::Removal {
                tokens: removed.len() as u64,
                reason: reason.to_string(),
            },
        });
    }
    Ok(finish(work, manifest))
}

/// Deletes every utterance holding at least one of `matches`, whole.
pub fn remove_matches(corpus: &Corpus, matches: &[ConstructionMatch]) -> Result<(Corpus, AblationManifest)> {
    let known: HashSet<&str> = corpus.sentences().iter().map(|s| s.id.as_str()).collect();
    let mut reasons: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for m in matches {
        if !known.contains(m.sentence_id.as_str()) {
            return Err(Error::UnknownSentence(m.sentence_id.clone()));
        }
        reasons
            .entry(m.sentence_id.as_str())
            .or_default()
            .insert(m.kind.to_string());
    }
    // Removal follows corpus order so manifests are independent of match order.
    let mut manifest = AblationManifest::new(0, corpus);
    let mut work = Workspace::new(corpus);
    for sentence in corpus.sentences() {
        let Some(kinds) = reasons.get(sentence.id.as_str()) else {
            continue;
        };
        work.remove(&sentence.id)?;
        manifest.operations.push(ManifestRecord {
            action: Action::Removed,
            sentence_id: sentence.id.clone(),
            detail: RecordDetail::Removal {
                tokens: sentence.len() as u64,
                reason: format!("match:{}", kinds.iter().cloned().collect::<Vec<_>>().join("+")),
            },
        });
    }
    Ok(finish(work, manifest))
}

/// Permutes tokens of `span` so that old index `order[k]` lands at
/// `span.start + k`. Arcs with both ends inside the span are dropped; arcs
/// entering the span from outside follow the moved token.
pub fn apply_reorder(sentence: &mut AnnotatedSentence, span: TokenRange, order: &[usize]) -> Result<()> {
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if span.end >= sentence.len() || sorted != span.indices().collect::<Vec<_>>() {
        return Err(Error::InvalidArgument(format!(
            "reorder of {}..={} in `{}` is not a permutation of the span",
            span.start, span.end, sentence.id
        )));
    }

    // 1-based old position -> 1-based new position.
    let mut new_position: Vec<usize> = (0..=sentence.len()).collect();
    for (k, &old) in order.iter().enumerate() {
        new_position[old + 1] = span.start + k + 1;
    }
    let inside = |pos1: usize| pos1 >= span.start + 1 && pos1 <= span.end + 1;

    let old_tokens = sentence.tokens.clone();
    for (i, token) in sentence.tokens.iter_mut().enumerate() {
        let source = if span.indices().contains(&i) {
            order[i - span.start]
        } else {
            i
        };
        *token = old_tokens[source].clone();
        if let Some(head) = token.head {
            if head == 0 {
                continue;
            }
            if inside(source + 1) && inside(head) {
                token.head = None;
                token.deprel = "_".to_string();
            } else {
                token.head = Some(new_position[head]);
            }
        }
    }
    sentence.mark_reparse_needed();
    Ok(())
}

/// Token order that realizes `variant` for an AANN match, as old indices.
pub fn counterfactual_order(m: &ConstructionMatch, variant: CounterfactualVariant) -> Result<Vec<usize>> {
    let mut order = Vec::with_capacity(m.span.len());
    for slot in variant.slot_order() {
        let range = m.slot(slot).ok_or(Error::MissingSlot {
            sentence_id: m.sentence_id.clone(),
            start: m.span.start,
            end: m.span.end,
            slot: slot.as_str(),
        })?;
        order.extend(range.indices());
    }
    let mut sorted = order.clone();
    sorted.sort_unstable();
    if sorted != m.span.indices().collect::<Vec<_>>() {
        return Err(Error::InvalidArgument(format!(
            "slots of match {}..={} in `{}` do not tile its span",
            m.span.start, m.span.end, m.sentence_id
        )));
    }
    Ok(order)
}

/// Slot ranges after a match has been reordered into `variant`.
pub fn counterfactual_slots(m: &ConstructionMatch, variant: CounterfactualVariant) -> Result<BTreeMap<Slot, TokenRange>> {
    let mut next = m.span.start;
    let mut slots = BTreeMap::new();
    for slot in variant.slot_order() {
        let range = m.slot(slot).ok_or(Error::MissingSlot {
            sentence_id: m.sentence_id.clone(),
            start: m.span.start,
            end: m.span.end,
            slot: slot.as_str(),
        })?;
        slots.insert(slot, TokenRange::new(next, next + range.len() - 1));
        next += range.len();
    }
    Ok(slots)
}

/// Rewrites every matched span into the ANAN or NAAN word order.
pub fn replace_with_counterfactual(
    corpus: &Corpus,
    matches: &[ConstructionMatch],
    variant: CounterfactualVariant,
) -> Result<(Corpus, AblationManifest)> {
    let mut by_sentence: HashMap<&str, Vec<&ConstructionMatch>> = HashMap::new();
    for m in matches {
        by_sentence.entry(m.sentence_id.as_str()).or_default().push(m);
    }
    let known: HashSet<&str> = corpus.sentences().iter().map(|s| s.id.as_str()).collect();
    if let Some(unknown) = by_sentence.keys().find(|id| !known.contains(*id)) {
        return Err(Error::UnknownSentence(unknown.to_string()));
    }

    let mut manifest = AblationManifest::new(0, corpus);
    let mut work = Workspace::new(corpus);
    for sentence in corpus.sentences() {
        let Some(found) = by_sentence.get_mut(sentence.id.as_str()) else {
            continue;
        };
        found.sort_by_key(|m| m.span.start);
        for m in found.iter() {
            let order = counterfactual_order(m, variant)?;
            let record = ManifestRecord {
                action: Action::Replaced,
                sentence_id: sentence.id.clone(),
                detail: RecordDetail::Reorder {
                    variant,
                    span: m.span,
                    order,
                },
            };
            work.apply(&record)?;
            manifest.operations.push(record);
        }
    }
    Ok(finish(work, manifest))
}

/// Removes random utterances with indefinite-article + adjective bigrams until
/// the corpus holds no more a+ADJ than a+NUM bigrams.
///
/// Only utterances with more a+ADJ than a+NUM bigrams are candidates. After
/// the balance point is crossed, removed utterances are restored (latest
/// first) whenever that keeps the balance, so no single removal is redundant.
pub fn balance_article_modifiers(corpus: &Corpus, seed: u64) -> Result<(Corpus, AblationManifest)> {
    let counts: Vec<(u64, u64)> = corpus.sentences().iter().map(article_modifier_followers).collect();
    let adj_total: u64 = counts.iter().map(|c| c.0).sum();
    let num_total: u64 = counts.iter().map(|c| c.1).sum();
    let mut excess = adj_total as i64 - num_total as i64;

    let mut candidates: Vec<usize> = (0..counts.len())
        .filter(|&i| counts[i].0 > counts[i].1)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);

    let net = |i: usize| counts[i].0 as i64 - counts[i].1 as i64;
    let mut removed = Vec::new();
    for &i in &candidates {
        if excess <= 0 {
            break;
        }
        excess -= net(i);
        removed.push(i);
    }
    let mut kept_back = HashSet::new();
    for &i in removed.iter().rev() {
        if excess + net(i) <= 0 {
            excess += net(i);
            kept_back.insert(i);
        }
    }
    removed.retain(|i| !kept_back.contains(i));

    let ids: Vec<&str> = removed.iter().map(|&i| corpus.sentences()[i].id.as_str()).collect();
    let (result, mut manifest) = remove_ids(corpus, ids, "balance", seed)?;
    let removed_adj: u64 = removed.iter().map(|&i| counts[i].0).sum();
    let removed_num: u64 = removed.iter().map(|&i| counts[i].1).sum();
    manifest.stats.insert("adj_before".into(), adj_total as i64);
    manifest.stats.insert("num_before".into(), num_total as i64);
    manifest.stats.insert("removed_adj_bigrams".into(), removed_adj as i64);
    manifest.stats.insert("removed_num_bigrams".into(), removed_num as i64);
    manifest.stats.insert("adj_after".into(), (adj_total - removed_adj) as i64);
    manifest.stats.insert("num_after".into(), (num_total - removed_num) as i64);
    if excess > 0 {
        manifest.stats.insert("unbalanced_excess".into(), excess);
    }
    Ok((result, manifest))
}

/// Removes random unprotected utterances until at least `target_tokens` tokens
/// are gone. The overshoot is recorded under the `overshoot` stat.
pub fn random_control_removal(
    corpus: &Corpus,
    protected: &[ConstructionMatch],
    target_tokens: u64,
    seed: u64,
) -> Result<(Corpus, AblationManifest)> {
    let protected_ids: HashSet<&str> = protected.iter().map(|m| m.sentence_id.as_str()).collect();
    let mut eligible: Vec<&AnnotatedSentence> = corpus
        .sentences()
        .iter()
        .filter(|s| !protected_ids.contains(s.id.as_str()))
        .collect();
    let available: u64 = eligible.iter().map(|s| s.len() as u64).sum();
    if target_tokens > available {
        return Err(Error::InsufficientTokens {
            requested: target_tokens,
            available,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    let mut removed_tokens = 0u64;
    let mut ids = Vec::new();
    for sentence in eligible {
        if removed_tokens >= target_tokens {
            break;
        }
        removed_tokens += sentence.len() as u64;
        ids.push(sentence.id.as_str());
    }
    let (result, mut manifest) = remove_ids(corpus, ids, "control", seed)?;
    manifest.stats.insert("target_tokens".into(), target_tokens as i64);
    manifest.stats.insert("removed_tokens".into(), removed_tokens as i64);
    manifest
        .stats
        .insert("overshoot".into(), (removed_tokens - target_tokens) as i64);
    Ok((result, manifest))
}

/// Appends uniformly sampled (with replacement) copies of non-excluded
/// utterances until the corpus holds exactly `target_tokens` tokens; the last
/// copy is truncated when it would overshoot.
pub fn upsample_to_parity<F>(
    corpus: &Corpus,
    excluded: F,
    target_tokens: u64,
    seed: u64,
) -> Result<(Corpus, AblationManifest)>
where
    F: Fn(&AnnotatedSentence) -> bool,
{
    let current = corpus.token_total();
    if target_tokens < current {
        return Err(Error::TargetBelowCurrent {
            target: target_tokens,
            current,
        });
    }
    let mut manifest = AblationManifest::new(seed, corpus);
    if target_tokens == current {
        return Ok((corpus.clone(), manifest));
    }

    let eligible: Vec<&AnnotatedSentence> = corpus.sentences().iter().filter(|s| !excluded(s)).collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleUtterances);
    }

    let mut ids: HashSet<String> = corpus.sentences().iter().map(|s| s.id.clone()).collect();
    let mut work = Workspace::new(corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = current;
    let mut counter = 0u64;
    while total < target_tokens {
        let pick = eligible[rng.gen_range(0..eligible.len())];
        let new_id = loop {
            counter += 1;
            let candidate = format!("{}#dup{}", pick.id, counter);
            if ids.insert(candidate.clone()) {
                break candidate;
            }
        };
        let remaining = target_tokens - total;
        let length = pick.len() as u64;
        let record = if length <= remaining {
            ManifestRecord {
                action: Action::Duplicated,
                sentence_id: pick.id.clone(),
                detail: RecordDetail::Duplicate { new_id, tokens: length },
            }
        } else {
            ManifestRecord {
                action: Action::Truncated,
                sentence_id: pick.id.clone(),
                detail: RecordDetail::Truncate {
                    new_id,
                    kept_tokens: remaining,
                    original_tokens: length,
                },
            }
        };
        total += length.min(remaining);
        work.apply(&record)?;
        manifest.operations.push(record);
    }
    Ok(finish(work, manifest))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TripleStats {
    pub utterances: usize,
    pub distinct_triples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitStats {
    pub high: TripleStats,
    pub low: TripleStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariabilitySplit {
    pub high: BTreeSet<String>,
    pub low: BTreeSet<String>,
    pub triple_stats: SplitStats,
}

/// (adjective, numeral, noun) surfaces of a match, case-folded.
pub type SlotTriple = (String, String, String);

/// Splits AANN utterances into a low-variability half (the most frequent
/// slot triples) and a high-variability half (the long tail).
///
/// Triples are ranked by utterance count, descending, ties broken
/// lexicographically. The low half takes whole triples from the top of the
/// ranking until it holds `floor(n / 2)` utterances; the triple straddling that
/// boundary is divided at random (seeded) and everything after it goes high.
pub fn split_by_variability(corpus: &Corpus, matches: &[ConstructionMatch], seed: u64) -> Result<VariabilitySplit> {
    if matches.is_empty() {
        return Err(Error::Empty("match list"));
    }
    let mut triple_of: BTreeMap<String, SlotTriple> = BTreeMap::new();
    let mut sentence_order: Vec<String> = Vec::new();
    for m in matches {
        if triple_of.contains_key(&m.sentence_id) {
            continue;
        }
        let sentence = corpus
            .get(&m.sentence_id)
            .ok_or_else(|| Error::UnknownSentence(m.sentence_id.clone()))?;
        let surface = |slot: Slot| {
            m.slot_surface(sentence, slot).ok_or(Error::MissingSlot {
                sentence_id: m.sentence_id.clone(),
                start: m.span.start,
                end: m.span.end,
                slot: slot.as_str(),
            })
        };
        let triple = (surface(Slot::Adjective)?, surface(Slot::Numeral)?, surface(Slot::Noun)?);
        triple_of.insert(m.sentence_id.clone(), triple);
        sentence_order.push(m.sentence_id.clone());
    }

    let mut groups: BTreeMap<&SlotTriple, Vec<&str>> = BTreeMap::new();
    for id in &sentence_order {
        groups.entry(&triple_of[id]).or_default().push(id.as_str());
    }
    let mut ranked: Vec<(&SlotTriple, Vec<&str>)> = groups.into_iter().collect();
    ranked.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(b.0)));

    let total = sentence_order.len();
    let low_target = total / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut low = BTreeSet::new();
    let mut high = BTreeSet::new();
    let mut low_triples = 0;
    let mut high_triples = 0;
    let mut boundary_passed = false;

    for (_, mut ids) in ranked {
        let room = low_target - low.len();
        if !boundary_passed && ids.len() <= room {
            low.extend(ids.iter().map(|s| s.to_string()));
            low_triples += 1;
            if ids.len() == room {
                boundary_passed = true;
            }
            continue;
        }
        if !boundary_passed {
            boundary_passed = true;
            if room > 0 {
                ids.shuffle(&mut rng);
                low.extend(ids[..room].iter().map(|s| s.to_string()));
                low_triples += 1;
                ids.drain(..room);
            }
        }
        high.extend(ids.iter().map(|s| s.to_string()));
        high_triples += 1;
    }

    Ok(VariabilitySplit {
        triple_stats: SplitStats {
            high: TripleStats {
                utterances: high.len(),
                distinct_triples: high_triples,
            },
            low: TripleStats {
                utterances: low.len(),
                distinct_triples: low_triples,
            },
        },
        high,
        low,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::write_conllu;
    use crate::detector::{count_article_modifier_followers, detect_aann, detect_all, PhenomenonKind};

    fn tagged(id: &str, text: &str) -> AnnotatedSentence {
        AnnotatedSentence::from_tagged(id, text).unwrap()
    }

    fn filler(id: &str, n: usize) -> AnnotatedSentence {
        let text: Vec<String> = (0..n).map(|i| format!("w{i}/NN")).collect();
        tagged(id, &text.join(" "))
    }

    fn aann_corpus() -> Corpus {
        Corpus::from_sentences(vec![
            tagged("s1", "we/PRP had/VBD a/DT/6/det whopping/JJ/6/amod ninety/CD/6/nummod LMs/NNS/2/dobj"),
            filler("s2", 4),
            tagged("s3", "a/DT fine/JJ eighteen/CD months/NNS"),
            filler("s4", 3),
        ])
    }

    #[test]
    fn remove_matches_drops_whole_utterances() {
        let mut sentences: Vec<AnnotatedSentence> = (0..10).map(|i| filler(&format!("f{i}"), 3)).collect();
        for i in [1, 4, 7] {
            sentences[i] = tagged(&format!("f{i}"), "a/DT nice/JJ two/CD days/NNS");
        }
        let corpus = Corpus::from_sentences(sentences);
        let matches = detect_all(&corpus, &[PhenomenonKind::Aann]);
        let (result, manifest) = remove_matches(&corpus, &matches).unwrap();
        assert_eq!(result.len(), 7);
        assert_eq!(manifest.count(Action::Removed), 3);
        assert!(detect_all(&result, &[PhenomenonKind::Aann]).is_empty());
    }

    #[test]
    fn remove_nothing_is_identity() {
        let corpus = aann_corpus();
        let (result, manifest) = remove_matches(&corpus, &[]).unwrap();
        assert_eq!(result, corpus);
        assert!(manifest.is_empty());
    }

    #[test]
    fn unknown_sentence_is_an_error() {
        let corpus = aann_corpus();
        let mut m = detect_aann(&corpus.sentences()[0]).remove(0);
        m.sentence_id = "missing".into();
        assert!(matches!(remove_matches(&corpus, &[m]), Err(Error::UnknownSentence(_))));
    }

    #[test]
    fn anan_and_naan_reorder() {
        let corpus = aann_corpus();
        let matches = detect_all(&corpus, &[PhenomenonKind::Aann]);
        let (anan, _) = replace_with_counterfactual(&corpus, &matches, CounterfactualVariant::Anan).unwrap();
        assert_eq!(anan.sentences()[0].text(), "we had a ninety whopping LMs");
        let (naan, _) = replace_with_counterfactual(&corpus, &matches, CounterfactualVariant::Naan).unwrap();
        assert_eq!(naan.sentences()[0].text(), "we had ninety whopping a LMs");
        assert_eq!(naan.token_total(), corpus.token_total());
        assert!(naan.sentences()[0].reparse_needed);
        // In-span arcs dropped, tags travel with tokens.
        let s = &naan.sentences()[0];
        assert_eq!(s.tokens[4].surface, "a");
        assert_eq!(s.tokens[4].pos(), "DT");
        assert_eq!(s.tokens[4].head, None);
        assert_eq!(s.tokens[5].head, Some(2));
    }

    #[test]
    fn anan_swapped_back_is_original() {
        let corpus = aann_corpus();
        let matches = detect_all(&corpus, &[PhenomenonKind::Aann]);
        let (anan, _) = replace_with_counterfactual(&corpus, &matches, CounterfactualVariant::Anan).unwrap();
        for m in &matches {
            let slots = counterfactual_slots(m, CounterfactualVariant::Anan).unwrap();
            let order: Vec<usize> = [Slot::Article, Slot::Adjective, Slot::Numeral, Slot::Noun]
                .iter()
                .flat_map(|slot| slots[slot].indices())
                .collect();
            let mut sentence = anan.get(&m.sentence_id).unwrap().clone();
            apply_reorder(&mut sentence, m.span, &order).unwrap();
            assert_eq!(sentence.text(), corpus.get(&m.sentence_id).unwrap().text());
        }
    }

    #[test]
    fn missing_slot_is_reported() {
        let corpus = aann_corpus();
        let mut m = detect_aann(&corpus.sentences()[0]).remove(0);
        m.slots.remove(&Slot::Numeral);
        let err = replace_with_counterfactual(&corpus, &[m], CounterfactualVariant::Anan).unwrap_err();
        assert!(matches!(err, Error::MissingSlot { slot: "numeral", .. }));
    }

    #[test]
    fn balance_already_balanced_is_identity() {
        let corpus = Corpus::from_sentences(vec![
            tagged("a", "a/DT big/JJ dog/NN"),
            tagged("b", "a/DT 3/CD dogs/NNS"),
        ]);
        let (result, manifest) = balance_article_modifiers(&corpus, 1).unwrap();
        assert_eq!(result, corpus);
        assert!(manifest.is_empty());
    }

    #[test]
    fn balance_five_against_two() {
        let mut sentences = Vec::new();
        for i in 0..5 {
            sentences.push(tagged(&format!("adj{i}"), "a/DT big/JJ dog/NN"));
        }
        for i in 0..2 {
            sentences.push(tagged(&format!("num{i}"), "a/DT 3/CD dogs/NNS"));
        }
        let corpus = Corpus::from_sentences(sentences);
        let (result, manifest) = balance_article_modifiers(&corpus, 9).unwrap();
        assert_eq!(manifest.count(Action::Removed), 3);
        assert_eq!(count_article_modifier_followers(&result), (2, 2));
    }

    #[test]
    fn balance_is_minimal() {
        // Mixed utterances: nets of +3, +1, +1, -1.
        let corpus = Corpus::from_sentences(vec![
            tagged("x", "a/DT big/JJ a/DT red/JJ a/DT old/JJ dog/NN"),
            tagged("y", "a/DT big/JJ dog/NN"),
            tagged("z", "an/DT old/JJ cat/NN"),
            tagged("n", "a/DT 3/CD dogs/NNS and/CC a/DT 4/CD cats/NNS"),
        ]);
        for seed in 0..20 {
            let (result, manifest) = balance_article_modifiers(&corpus, seed).unwrap();
            let (adj, num) = count_article_modifier_followers(&result);
            assert!(adj <= num, "seed {seed}");
            for record in &manifest.operations {
                let restored = corpus.get(&record.sentence_id).unwrap();
                let (a, n) = article_modifier_followers(restored);
                assert!(adj + a > num + n, "seed {seed}: {} is redundant", record.sentence_id);
            }
        }
    }

    #[test]
    fn control_removal_overshoot() {
        let corpus = Corpus::from_sentences((0..4).map(|i| filler(&format!("u{i}"), 5)).collect());
        let (result, manifest) = random_control_removal(&corpus, &[], 12, 3).unwrap();
        assert_eq!(manifest.count(Action::Removed), 3);
        assert_eq!(manifest.stat("overshoot"), Some(3));
        assert_eq!(result.token_total(), 5);
    }

    #[test]
    fn control_removal_target_zero_is_identity() {
        let corpus = aann_corpus();
        let (result, manifest) = random_control_removal(&corpus, &[], 0, 3).unwrap();
        assert_eq!(result, corpus);
        assert!(manifest.is_empty());
    }

    #[test]
    fn control_removal_respects_protection() {
        let corpus = aann_corpus();
        let protected = detect_all(&corpus, &[PhenomenonKind::Aann]);
        let err = random_control_removal(&corpus, &protected, 8, 0).unwrap_err();
        assert!(matches!(err, Error::InsufficientTokens { available: 7, .. }));
        let (result, _) = random_control_removal(&corpus, &protected, 7, 0).unwrap();
        assert_eq!(detect_all(&result, &[PhenomenonKind::Aann]).len(), 2);
    }

    fn ninety_token_corpus() -> Corpus {
        let mut sentences: Vec<AnnotatedSentence> =
            (0..16).map(|i| tagged(&format!("x{i}"), "a/DT nice/JJ two/CD days/NNS ok/UH")).collect();
        sentences.push(filler("eligible", 10));
        Corpus::from_sentences(sentences)
    }

    #[test]
    fn upsample_exact_fit() {
        let corpus = ninety_token_corpus();
        assert_eq!(corpus.token_total(), 90);
        let excluded = |s: &AnnotatedSentence| s.id != "eligible";
        let (result, manifest) = upsample_to_parity(&corpus, excluded, 100, 5).unwrap();
        assert_eq!(result.token_total(), 100);
        assert_eq!(manifest.count(Action::Duplicated), 1);
        assert_eq!(manifest.count(Action::Truncated), 0);
    }

    #[test]
    fn upsample_truncates_last_copy() {
        let corpus = ninety_token_corpus();
        let excluded = |s: &AnnotatedSentence| s.id != "eligible";
        let (result, manifest) = upsample_to_parity(&corpus, excluded, 97, 5).unwrap();
        assert_eq!(result.token_total(), 97);
        assert_eq!(manifest.count(Action::Truncated), 1);
        match &manifest.operations[0].detail {
            RecordDetail::Truncate { kept_tokens, .. } => assert_eq!(*kept_tokens, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn upsample_identity_and_errors() {
        let corpus = ninety_token_corpus();
        let (result, manifest) = upsample_to_parity(&corpus, |_| false, 90, 1).unwrap();
        assert_eq!(result, corpus);
        assert!(manifest.is_empty());
        assert!(matches!(
            upsample_to_parity(&corpus, |_| true, 95, 1),
            Err(Error::NoEligibleUtterances)
        ));
        assert!(matches!(
            upsample_to_parity(&corpus, |_| false, 80, 1),
            Err(Error::TargetBelowCurrent { .. })
        ));
    }

    #[test]
    fn manifests_replay_and_serialize() {
        let corpus = aann_corpus();
        let matches = detect_all(&corpus, &[PhenomenonKind::Aann]);
        let (step1, m1) = replace_with_counterfactual(&corpus, &matches, CounterfactualVariant::Naan).unwrap();
        let (step2, m2) = random_control_removal(&step1, &matches, 3, 4).unwrap();
        let (step3, m3) = upsample_to_parity(&step2, |_| false, corpus.token_total() + 2, 4).unwrap();
        let manifest = m1.then(m2).then(m3);
        let text = manifest.to_jsonl().unwrap();
        let reread = AblationManifest::from_jsonl(&text).unwrap();
        assert_eq!(reread, manifest);
        let replayed = replay(&reread, &corpus).unwrap();
        assert_eq!(write_conllu(&replayed), write_conllu(&step3));
    }

    fn variability_corpus(counts: &[(&str, usize)]) -> (Corpus, Vec<ConstructionMatch>) {
        let mut sentences = Vec::new();
        let mut n = 0;
        for (adj, count) in counts {
            for _ in 0..*count {
                sentences.push(tagged(&format!("v{n}"), &format!("a/DT {adj}/JJ five/CD days/NNS")));
                n += 1;
            }
        }
        let corpus = Corpus::from_sentences(sentences);
        let matches = detect_all(&corpus, &[PhenomenonKind::Aann]);
        (corpus, matches)
    }

    #[test]
    fn variability_worked_example() {
        let (corpus, matches) = variability_corpus(&[("x", 6), ("y", 3), ("z", 2), ("w", 1)]);
        let split = split_by_variability(&corpus, &matches, 0).unwrap();
        assert_eq!(split.low.len(), 6);
        assert_eq!(split.high.len(), 6);
        assert_eq!(split.triple_stats.low.distinct_triples, 1);
        assert_eq!(split.triple_stats.high.distinct_triples, 3);
        assert!(split.low.iter().all(|id| corpus.get(id).unwrap().tokens[1].surface == "x"));
    }

    #[test]
    fn variability_single_triple() {
        let (corpus, matches) = variability_corpus(&[("x", 7)]);
        let split = split_by_variability(&corpus, &matches, 0).unwrap();
        assert_eq!((split.low.len(), split.high.len()), (3, 4));
        assert_eq!(split.triple_stats.low.distinct_triples, 1);
        assert_eq!(split.triple_stats.high.distinct_triples, 1);
    }

    #[test]
    fn variability_needs_matches() {
        assert!(split_by_variability(&Corpus::new(), &[], 0).is_err());
    }
}
