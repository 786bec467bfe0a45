//! SLOR scoring of stimulus suites and the four-way corruption accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ngram::{LanguageModel, UnigramModel};
use crate::stimuli::{Corruption, StimulusItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKey {
    Wellformed,
    OrderSwap,
    NoArticle,
    NoModifier,
    NoNumeral,
}

impl VariantKey {
    pub const ALL: [VariantKey; 5] = [
        VariantKey::Wellformed,
        VariantKey::OrderSwap,
        VariantKey::NoArticle,
        VariantKey::NoModifier,
        VariantKey::NoNumeral,
    ];

    pub const CORRUPTIONS: [VariantKey; 4] = [
        VariantKey::OrderSwap,
        VariantKey::NoArticle,
        VariantKey::NoModifier,
        VariantKey::NoNumeral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKey::Wellformed => "wellformed",
            VariantKey::OrderSwap => "order_swap",
            VariantKey::NoArticle => "no_article",
            VariantKey::NoModifier => "no_modifier",
            VariantKey::NoNumeral => "no_numeral",
        }
    }
}

impl From<Corruption> for VariantKey {
    fn from(c: Corruption) -> Self {
        match c {
            Corruption::OrderSwap => VariantKey::OrderSwap,
            Corruption::NoArticle => VariantKey::NoArticle,
            Corruption::NoModifier => VariantKey::NoModifier,
            Corruption::NoNumeral => VariantKey::NoNumeral,
        }
    }
}

impl fmt::Display for VariantKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant key `{s}`")))
    }
}

/// Sequence of construction tokens for one variant of an item.
pub fn variant_tokens(item: &StimulusItem, key: VariantKey) -> Option<Vec<String>> {
    match key {
        VariantKey::Wellformed => Some(item.well_formed()),
        VariantKey::OrderSwap => item.corruption(Corruption::OrderSwap).map(<[String]>::to_vec),
        VariantKey::NoArticle => item.corruption(Corruption::NoArticle).map(<[String]>::to_vec),
        VariantKey::NoModifier => item.corruption(Corruption::NoModifier).map(<[String]>::to_vec),
        VariantKey::NoNumeral => item.corruption(Corruption::NoNumeral).map(<[String]>::to_vec),
    }
}

/// One line of the log-prob exchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbRecord {
    pub item_id: String,
    pub variant_key: VariantKey,
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<f64>,
    pub tokenizer_tag: String,
}

impl LogProbRecord {
    pub fn total(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }
}

/// Log-prob records indexed by (item, variant).
#[derive(Debug, Clone, Default)]
pub struct LogProbSource {
    records: BTreeMap<(String, VariantKey), LogProbRecord>,
    pub warnings: Vec<String>,
}

impl LogProbSource {
    pub fn from_records(records: impl IntoIterator<Item = LogProbRecord>) -> Self {
        let mut source = LogProbSource::default();
        for record in records {
            source.insert(record);
        }
        source
    }

    fn insert(&mut self, record: LogProbRecord) {
        self.records.insert((record.item_id.clone(), record.variant_key), record);
    }

    pub fn get(&self, item_id: &str, key: VariantKey) -> Option<&LogProbRecord> {
        self.records.get(&(item_id.to_string(), key))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &LogProbRecord> {
        self.records.values()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for record in self.records.values() {
            out.push_str(&serde_json::to_string(record)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Reads the JSONL exchange format. Duplicate keys keep the last record and
/// add a warning.
pub fn import_external_logprobs<R: BufRead>(reader: R) -> Result<LogProbSource> {
    let mut source = LogProbSource::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogProbRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.tokens.len() != record.token_logprobs.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "{} tokens but {} log-probs",
                    record.tokens.len(),
                    record.token_logprobs.len()
                ),
            });
        }
        if record.tokens.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty token sequence".into(),
            });
        }
        if record.token_logprobs.iter().any(|lp| !lp.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                message: "non-finite log-prob".into(),
            });
        }
        let key = (record.item_id.clone(), record.variant_key);
        if source.records.contains_key(&key) {
            let warning = format!(
                "line {line_no}: duplicate record for ({}, {}); keeping the later one",
                key.0, key.1
            );
            log::warn!("{warning}");
            source.warnings.push(warning);
        }
        source.insert(record);
    }
    Ok(source)
}

pub fn slor(logp_model: f64, logp_unigram: f64, length: usize) -> Result<f64> {
    if length == 0 {
        return Err(Error::InvalidArgument("SLOR needs a construction of at least one token".into()));
    }
    Ok((logp_model - logp_unigram) / length as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Length-normalized log-odds against the unigram model.
    #[default]
    Slor,
    /// Raw summed model log-probability, for models without unigram statistics.
    LogProb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantScore {
    pub score: f64,
    pub logprob_model: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob_unigram: Option<f64>,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub item_id: String,
    pub mode: ScoreMode,
    pub scores: BTreeMap<VariantKey, VariantScore>,
}

impl ScoreRecord {
    pub fn score(&self, key: VariantKey) -> Option<f64> {
        self.scores.get(&key).map(|s| s.score)
    }
}

/// Scores every variant of every item. In SLOR mode the unigram model is
/// required and must share the records' tokenization.
pub fn score_suite(
    suite: &[StimulusItem],
    source: &LogProbSource,
    unigram: Option<&UnigramModel>,
    mode: ScoreMode,
) -> Result<Vec<ScoreRecord>> {
    let unigram = match mode {
        ScoreMode::Slor => Some(unigram.ok_or_else(|| {
            Error::InvalidArgument("SLOR scoring requires a unigram model".into())
        })?),
        ScoreMode::LogProb => None,
    };

    let missing: Vec<(String, String)> = suite
        .iter()
        .flat_map(|item| {
            VariantKey::ALL
                .into_iter()
                .filter(|&key| source.get(&item.id, key).is_none())
                .map(|key| (item.id.clone(), key.to_string()))
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLogProbs(missing));
    }

    if let Some(unigram) = unigram {
        let tags: BTreeSet<&str> = suite
            .iter()
            .flat_map(|item| VariantKey::ALL.into_iter().filter_map(|k| source.get(&item.id, k)))
            .map(|r| r.tokenizer_tag.as_str())
            .collect();
        if let Some(other) = tags.iter().find(|&&t| t != unigram.tokenizer_tag) {
            return Err(Error::TokenizerMismatch {
                records: (*other).to_string(),
                unigram: unigram.tokenizer_tag.clone(),
            });
        }
    }

    suite
        .iter()
        .map(|item| {
            let mut scores = BTreeMap::new();
            for key in VariantKey::ALL {
                let record = source.get(&item.id, key).expect("checked above");
                let length = record.tokens.len();
                let logprob_model = record.total();
                let (score, logprob_unigram) = match unigram {
                    Some(u) => {
                        let lp_u: f64 = record.tokens.iter().map(|t| u.logprob(t)).sum();
                        (slor(logprob_model, lp_u, length)?, Some(lp_u))
                    }
                    None => (logprob_model, None),
                };
                if !score.is_finite() {
                    return Err(Error::Record {
                        record: 0,
                        message: format!("non-finite score for ({}, {key})", item.id),
                    });
                }
                scores.insert(
                    key,
                    VariantScore {
                        score,
                        logprob_model,
                        logprob_unigram,
                        length,
                    },
                );
            }
            Ok(ScoreRecord {
                item_id: item.id.clone(),
                mode,
                scores,
            })
        })
        .collect()
}

/// Log-prob records for a suite under an in-process model. The prefix and
/// each construction sequence are tokenized with `tokenize`; only the
/// construction tokens are scored.
pub fn model_logprob_records<M, F>(suite: &[StimulusItem], model: &M, tokenize: F) -> Result<Vec<LogProbRecord>>
where
    M: LanguageModel + ?Sized,
    F: Fn(&str) -> Vec<String>,
{
    let mut records = Vec::with_capacity(suite.len() * VariantKey::ALL.len());
    for item in suite {
        let context = tokenize(&item.prefix);
        for key in VariantKey::ALL {
            let surface = variant_tokens(item, key).ok_or_else(|| Error::Stimulus {
                item: item.id.clone(),
                message: format!("no `{key}` sequence; generate corruptions first"),
            })?;
            let tokens = tokenize(&surface.join(" "));
            if tokens.is_empty() {
                return Err(Error::Stimulus {
                    item: item.id.clone(),
                    message: format!("`{key}` sequence tokenizes to nothing"),
                });
            }
            let token_logprobs = model.token_logprobs(&tokens, &context);
            records.push(LogProbRecord {
                item_id: item.id.clone(),
                variant_key: key,
                tokens,
                token_logprobs,
                tokenizer_tag: model.tokenizer_tag().to_string(),
            });
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// Well-formed score strictly greater than the corruption's.
    #[default]
    Strict,
    /// Ratio of well-formed to corruption score strictly greater than one.
    LiteralRatio,
}

impl Comparison {
    pub fn wins(self, wellformed: f64, corruption: f64) -> bool {
        match self {
            Comparison::Strict => wellformed > corruption,
            Comparison::LiteralRatio => wellformed / corruption > 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_items: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub mean_wellformed_score: f64,
    pub win_rates: BTreeMap<VariantKey, f64>,
    pub mode: ScoreMode,
    pub comparison: Comparison,
}

pub fn item_correct(record: &ScoreRecord, comparison: Comparison) -> Result<bool> {
    let wellformed = record.score(VariantKey::Wellformed);
    let mut correct = true;
    for key in VariantKey::CORRUPTIONS {
        match (wellformed, record.score(key)) {
            (Some(w), Some(c)) => correct &= comparison.wins(w, c),
            _ => {
                return Err(Error::MissingLogProbs(
                    VariantKey::ALL
                        .into_iter()
                        .filter(|k| record.score(*k).is_none())
                        .map(|k| (record.item_id.clone(), k.to_string()))
                        .collect(),
                ))
            }
        }
    }
    Ok(correct)
}

pub fn evaluate_accuracy(records: &[ScoreRecord], comparison: Comparison) -> Result<EvaluationReport> {
    if records.is_empty() {
        return Err(Error::Empty("score records"));
    }
    let mut correct = 0usize;
    let mut wins: BTreeMap<VariantKey, usize> = VariantKey::CORRUPTIONS.iter().map(|&k| (k, 0)).collect();
    let mut wellformed_sum = 0.0;
    for record in records {
        if item_correct(record, comparison)? {
            correct += 1;
        }
        let w = record.score(VariantKey::Wellformed).expect("checked by item_correct");
        wellformed_sum += w;
        for key in VariantKey::CORRUPTIONS {
            if comparison.wins(w, record.score(key).expect("checked by item_correct")) {
                *wins.get_mut(&key).expect("initialized") += 1;
            }
        }
    }
    let n = records.len();
    Ok(EvaluationReport {
        n_items: n,
        correct,
        accuracy: correct as f64 / n as f64,
        mean_wellformed_score: wellformed_sum / n as f64,
        win_rates: wins.into_iter().map(|(k, w)| (k, w as f64 / n as f64)).collect(),
        mode: records[0].mode,
        comparison,
    })
}

/// One row of the flat plotting table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub condition: String,
    pub model: String,
    pub report: EvaluationReport,
}

pub fn report_tsv(rows: &[ReportRow]) -> String {
    let mut out = String::from(
        "condition\tmodel\tmode\tn_items\tmean_wellformed_score\taccuracy\torder_swap\tno_article\tno_modifier\tno_numeral\n",
    );
    for row in rows {
        let r = &row.report;
        let mode = match r.mode {
            ScoreMode::Slor => "slor",
            ScoreMode::LogProb => "logprob",
        };
        let rate = |k: VariantKey| r.win_rates.get(&k).copied().unwrap_or(f64::NAN);
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            row.condition,
            row.model,
            mode,
            r.n_items,
            r.mean_wellformed_score,
            r.accuracy,
            rate(VariantKey::OrderSwap),
            rate(VariantKey::NoArticle),
            rate(VariantKey::NoModifier),
            rate(VariantKey::NoNumeral),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimuli::{generate_corruptions, ConstructionVariant, SlotGroups};

    fn record(item: &str, key: VariantKey, lps: &[f64], tag: &str) -> LogProbRecord {
        LogProbRecord {
            item_id: item.into(),
            variant_key: key,
            tokens: (0..lps.len()).map(|i| format!("t{i}")).collect(),
            token_logprobs: lps.to_vec(),
            tokenizer_tag: tag.into(),
        }
    }

    fn scored(values: [f64; 5]) -> ScoreRecord {
        ScoreRecord {
            item_id: "x".into(),
            mode: ScoreMode::Slor,
            scores: VariantKey::ALL
                .into_iter()
                .zip(values)
                .map(|(k, v)| {
                    (
                        k,
                        VariantScore {
                            score: v,
                            logprob_model: v,
                            logprob_unigram: None,
                            length: 1,
                        },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn slor_arithmetic() {
        assert_eq!(slor(-3.0, -3.0, 2).unwrap(), 0.0);
        let value = slor((0.5f64 * 0.25).ln(), (0.1f64 * 0.2).ln(), 2).unwrap();
        assert!((value - 0.9163).abs() < 1e-4);
        let doubled = slor(2.0 * (0.125f64).ln(), 2.0 * (0.02f64).ln(), 4).unwrap();
        assert!((value - doubled).abs() < 1e-12);
        assert!(slor(-1.0, -2.0, 0).is_err());
    }

    #[test]
    fn strict_decisions() {
        let report = evaluate_accuracy(&[scored([1.0, 0.9, 0.2, -0.1, 0.0])], Comparison::Strict).unwrap();
        assert_eq!(report.correct, 1);
        let tie = evaluate_accuracy(&[scored([1.0, 1.0, 0.2, -0.1, 0.0])], Comparison::Strict).unwrap();
        assert_eq!(tie.correct, 0);
        assert_eq!(tie.win_rates[&VariantKey::OrderSwap], 0.0);
        assert_eq!(tie.win_rates[&VariantKey::NoArticle], 1.0);
    }

    #[test]
    fn literal_ratio_inverts_for_negative_scores() {
        let record = scored([-1.0, -2.0, -3.0, -4.0, -5.0]);
        assert!(item_correct(&record, Comparison::Strict).unwrap());
        assert!(!item_correct(&record, Comparison::LiteralRatio).unwrap());
    }

    #[test]
    fn empty_or_incomplete_records_rejected() {
        assert!(evaluate_accuracy(&[], Comparison::Strict).is_err());
        let mut partial = scored([1.0, 0.0, 0.0, 0.0, 0.0]);
        partial.scores.remove(&VariantKey::NoNumeral);
        assert!(evaluate_accuracy(&[partial], Comparison::Strict).is_err());
    }

    #[test]
    fn import_handles_duplicates_and_errors() {
        let lines: Vec<String> = VariantKey::ALL
            .iter()
            .map(|&k| serde_json::to_string(&record("i", k, &[-1.0], "t")).unwrap())
            .collect();
        let source = import_external_logprobs(lines.join("\n").as_bytes()).unwrap();
        assert_eq!(source.len(), 5);
        assert!(source.warnings.is_empty());

        let mut dup = lines[..4].to_vec();
        dup.push(serde_json::to_string(&record("i", VariantKey::NoArticle, &[-7.0], "t")).unwrap());
        let source = import_external_logprobs(dup.join("\n").as_bytes()).unwrap();
        assert_eq!(source.len(), 4);
        assert_eq!(source.warnings.len(), 1);
        assert_eq!(source.get("i", VariantKey::NoArticle).unwrap().total(), -7.0);

        let bad = r#"{"item_id":"i","variant_key":"wellformed","tokens":["a","b"],"token_logprobs":[-1.0],"tokenizer_tag":"t"}"#;
        match import_external_logprobs(format!("{}\n{bad}\n", lines[0]).as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn item(id: &str) -> StimulusItem {
        generate_corruptions(&StimulusItem {
            id: id.into(),
            prefix: String::new(),
            construction: SlotGroups::new("a", "whopping", "ninety", "LMs"),
            suffix: None,
            variant: ConstructionVariant::Aann,
            rating: None,
            corruptions: BTreeMap::new(),
        })
        .unwrap()
    }

    #[test]
    fn score_suite_matches_hand_values() {
        let unigram = UnigramModel::train(["t0", "t1"], 0.0, "t").unwrap();
        let mut records = vec![record("i", VariantKey::Wellformed, &[(0.5f64).ln(), (0.25f64).ln()], "t")];
        for key in VariantKey::CORRUPTIONS {
            records.push(record("i", key, &[-5.0], "t"));
        }
        let source = LogProbSource::from_records(records);
        let scores = score_suite(&[item("i")], &source, Some(&unigram), ScoreMode::Slor).unwrap();
        let expected = slor((0.125f64).ln(), (0.25f64).ln(), 2).unwrap();
        assert!((scores[0].score(VariantKey::Wellformed).unwrap() - expected).abs() < 1e-12);
        assert!(score_suite(&[], &source, Some(&unigram), ScoreMode::Slor).unwrap().is_empty());
    }

    #[test]
    fn missing_and_mismatched_records() {
        let unigram = UnigramModel::train(["t0"], 1.0, "t").unwrap();
        let records: Vec<LogProbRecord> = VariantKey::ALL[..4]
            .iter()
            .map(|&k| record("i", k, &[-1.0], "t"))
            .collect();
        let source = LogProbSource::from_records(records.clone());
        match score_suite(&[item("i")], &source, Some(&unigram), ScoreMode::Slor) {
            Err(Error::MissingLogProbs(keys)) => assert_eq!(keys, vec![("i".into(), "no_numeral".into())]),
            other => panic!("unexpected {other:?}"),
        }

        let mut all = records;
        all.push(record("i", VariantKey::NoNumeral, &[-1.0], "other"));
        let source = LogProbSource::from_records(all);
        assert!(matches!(
            score_suite(&[item("i")], &source, Some(&unigram), ScoreMode::Slor),
            Err(Error::TokenizerMismatch { .. })
        ));
        assert!(score_suite(&[item("i")], &source, None, ScoreMode::LogProb).is_ok());
    }

    #[test]
    fn tsv_has_one_row_per_report() {
        let report = evaluate_accuracy(&[scored([1.0, 0.0, 0.0, 0.0, 0.0])], Comparison::Strict).unwrap();
        let tsv = report_tsv(&[ReportRow {
            condition: "no-aann".into(),
            model: "4gram".into(),
            report,
        }]);
        assert_eq!(tsv.lines().count(), 2);
        assert!(tsv.lines().nth(1).unwrap().starts_with("no-aann\t4gram\tslor\t1\t1\t1\t"));
    }
}
