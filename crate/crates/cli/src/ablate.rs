use aann_core::ablation::{
    balance_article_modifiers, random_control_removal, remove_matches, replace_with_counterfactual,
    split_by_variability, upsample_to_parity, AblationManifest, CounterfactualVariant,
};
use aann_core::corpus::{AnnotatedSentence, Corpus};
use aann_core::detector::{detect, detect_all, ConstructionMatch, PhenomenonKind};
use anyhow::Result;

use crate::config::{AblationSettings, Condition};
use crate::UsageError;

/// Phenomena whose utterances are never used to refill the corpus.
pub const HYPOTHESIS_KINDS: [PhenomenonKind; 5] = [
    PhenomenonKind::Aann,
    PhenomenonKind::DtAnn,
    PhenomenonKind::IndefPluralNp,
    PhenomenonKind::MeasureSingular,
    PhenomenonKind::ArticleAdjFollower,
];

fn bears_phenomenon(sentence: &AnnotatedSentence) -> bool {
    HYPOTHESIS_KINDS.iter().any(|&k| !detect(sentence, k).is_empty())
}

fn removal_kinds(settings: &AblationSettings) -> Result<Vec<PhenomenonKind>> {
    let kinds = match settings.condition {
        Condition::NoDtAnn => vec![PhenomenonKind::DtAnn],
        Condition::NoIndefPlural => vec![PhenomenonKind::IndefPluralNp],
        Condition::NoMeasureSingular => vec![PhenomenonKind::MeasureSingular],
        Condition::Custom if settings.kinds.is_empty() => {
            return Err(UsageError("condition `custom` needs --kinds".into()).into())
        }
        Condition::Custom => settings.kinds.clone(),
        _ => Vec::new(),
    };
    Ok(kinds)
}

/// Drops AANN matches (including indefinite DT_ANN ones) when AANNs stay.
fn without_aann(matches: Vec<ConstructionMatch>) -> Vec<ConstructionMatch> {
    matches
        .into_iter()
        .filter(|m| m.kind != PhenomenonKind::Aann && !m.also_aann)
        .collect()
}

fn strip_aann(corpus: &Corpus, settings: &AblationSettings) -> Result<(Corpus, AblationManifest)> {
    if settings.keep_aann {
        return Ok((corpus.clone(), AblationManifest::new(settings.seed, corpus)));
    }
    let aann = detect_all(corpus, &[PhenomenonKind::Aann]);
    Ok(remove_matches(corpus, &aann)?)
}

/// Applies the condition, then refills the corpus to its original size with
/// copies of phenomenon-free utterances.
pub fn run(corpus: &Corpus, settings: &AblationSettings) -> Result<(Corpus, AblationManifest)> {
    if settings.keep_aann && !settings.condition.allows_keep_aann() {
        return Err(UsageError(format!(
            "--keep-aann has no meaning for condition `{:?}`",
            settings.condition
        ))
        .into());
    }
    let seed = settings.seed;
    let target = corpus.token_total();
    let aann = || detect_all(corpus, &[PhenomenonKind::Aann]);

    let (stage, manifest) = match settings.condition {
        Condition::NoAann => remove_matches(corpus, &aann())?,
        Condition::Anan => replace_with_counterfactual(corpus, &aann(), CounterfactualVariant::Anan)?,
        Condition::Naan => replace_with_counterfactual(corpus, &aann(), CounterfactualVariant::Naan)?,
        Condition::NoDtAnn | Condition::NoIndefPlural | Condition::NoMeasureSingular | Condition::Custom => {
            let mut kinds = removal_kinds(settings)?;
            if settings.keep_aann {
                kinds.retain(|&k| k != PhenomenonKind::Aann);
                let matches = without_aann(detect_all(corpus, &kinds));
                remove_matches(corpus, &matches)?
            } else {
                kinds.push(PhenomenonKind::Aann);
                remove_matches(corpus, &detect_all(corpus, &kinds))?
            }
        }
        Condition::Balance => {
            let (stripped, first) = strip_aann(corpus, settings)?;
            let (balanced, second) = balance_article_modifiers(&stripped, seed)?;
            (balanced, first.then(second))
        }
        Condition::Control => {
            let (stripped, first) = strip_aann(corpus, settings)?;
            let budget = match settings.control_tokens {
                Some(tokens) => tokens,
                None => {
                    let (_, balance) = balance_article_modifiers(&stripped, seed)?;
                    balance.source_token_total - balance.result_token_total
                }
            };
            let protected = detect_all(&stripped, &HYPOTHESIS_KINDS);
            let (controlled, second) = random_control_removal(&stripped, &protected, budget, seed)?;
            (controlled, first.then(second))
        }
        Condition::VariabilityHigh | Condition::VariabilityLow => {
            let matches = aann();
            let split = split_by_variability(corpus, &matches, seed)?;
            let drop = if settings.condition == Condition::VariabilityHigh {
                &split.low
            } else {
                &split.high
            };
            let dropped: Vec<ConstructionMatch> = matches
                .into_iter()
                .filter(|m| drop.contains(&m.sentence_id))
                .collect();
            let (kept, mut manifest) = remove_matches(corpus, &dropped)?;
            manifest.stats.insert("high_utterances".into(), split.triple_stats.high.utterances as i64);
            manifest.stats.insert("low_utterances".into(), split.triple_stats.low.utterances as i64);
            manifest.stats.insert("high_distinct_triples".into(), split.triple_stats.high.distinct_triples as i64);
            manifest.stats.insert("low_distinct_triples".into(), split.triple_stats.low.distinct_triples as i64);
            (kept, manifest)
        }
    };

    let (refilled, upsample) = upsample_to_parity(&stage, bears_phenomenon, target, seed)?;
    let mut manifest = manifest.then(upsample);
    manifest.seed = seed;
    Ok((refilled, manifest))
}
