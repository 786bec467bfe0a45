//! Acceptability test items: loading, rating filter, training-overlap
//! removal, and the four minimal corruptions of each construction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{fold, Corpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConstructionVariant {
    #[default]
    Aann,
    Anan,
    Naan,
}

/// Positions of the four slot groups in a construction's well-formed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Article,
    Adjective,
    Numeral,
    Noun,
}

impl ConstructionVariant {
    pub const ALL: [ConstructionVariant; 3] = [
        ConstructionVariant::Aann,
        ConstructionVariant::Anan,
        ConstructionVariant::Naan,
    ];

    fn order(self) -> [Part; 4] {
        match self {
            ConstructionVariant::Aann => [Part::Article, Part::Adjective, Part::Numeral, Part::Noun],
            ConstructionVariant::Anan => [Part::Article, Part::Numeral, Part::Adjective, Part::Noun],
            ConstructionVariant::Naan => [Part::Numeral, Part::Adjective, Part::Article, Part::Noun],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConstructionVariant::Aann => "AANN",
            ConstructionVariant::Anan => "ANAN",
            ConstructionVariant::Naan => "NAAN",
        }
    }
}

impl fmt::Display for ConstructionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstructionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AANN" => Ok(ConstructionVariant::Aann),
            "ANAN" => Ok(ConstructionVariant::Anan),
            "NAAN" => Ok(ConstructionVariant::Naan),
            _ => Err(Error::InvalidArgument(format!("unknown construction variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    OrderSwap,
    NoArticle,
    NoModifier,
    NoNumeral,
}

impl Corruption {
    pub const ALL: [Corruption; 4] = [
        Corruption::OrderSwap,
        Corruption::NoArticle,
        Corruption::NoModifier,
        Corruption::NoNumeral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Corruption::OrderSwap => "order_swap",
            Corruption::NoArticle => "no_article",
            Corruption::NoModifier => "no_modifier",
            Corruption::NoNumeral => "no_numeral",
        }
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Surfaces of the four slot groups; each may span several words.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SlotGroups {
    pub article: String,
    pub adjective: String,
    pub numeral: String,
    pub noun: String,
}

impl SlotGroups {
    pub fn new(article: &str, adjective: &str, numeral: &str, noun: &str) -> Self {
        SlotGroups {
            article: article.to_string(),
            adjective: adjective.to_string(),
            numeral: numeral.to_string(),
            noun: noun.to_string(),
        }
    }

    fn part(&self, part: Part) -> &str {
        match part {
            Part::Article => &self.article,
            Part::Adjective => &self.adjective,
            Part::Numeral => &self.numeral,
            Part::Noun => &self.noun,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusItem {
    pub id: String,
    pub prefix: String,
    pub construction: SlotGroups,
    pub suffix: Option<String>,
    pub variant: ConstructionVariant,
    pub rating: Option<f64>,
    pub corruptions: BTreeMap<Corruption, Vec<String>>,
}

impl StimulusItem {
    fn check_slots(&self) -> Result<()> {
        for (name, part) in [
            ("article", Part::Article),
            ("adjective", Part::Adjective),
            ("numeral", Part::Numeral),
            ("noun", Part::Noun),
        ] {
            if self.construction.part(part).trim().is_empty() {
                return Err(Error::Stimulus {
                    item: self.id.clone(),
                    message: format!("empty {name} slot"),
                });
            }
        }
        Ok(())
    }

    fn sequence(&self, parts: &[Part]) -> Vec<String> {
        parts
            .iter()
            .flat_map(|&p| self.construction.part(p).split_whitespace())
            .map(str::to_string)
            .collect()
    }

    /// Construction tokens in the variant's well-formed order.
    pub fn well_formed(&self) -> Vec<String> {
        self.sequence(&self.variant.order())
    }

    pub fn prefix_tokens(&self) -> Vec<String> {
        self.prefix.split_whitespace().map(str::to_string).collect()
    }

    pub fn corruption(&self, corruption: Corruption) -> Option<&[String]> {
        self.corruptions.get(&corruption).map(Vec::as_slice)
    }

    pub fn has_all_corruptions(&self) -> bool {
        Corruption::ALL
            .iter()
            .all(|c| self.corruptions.get(c).is_some_and(|seq| !seq.is_empty()))
    }
}

/// Fills all four corruptions from the item's slots and variant.
///
/// `order_swap` exchanges the adjective and numeral groups within the
/// well-formed order; each deletion drops one slot group (the modifier is the
/// adjective group).
pub fn generate_corruptions(item: &StimulusItem) -> Result<StimulusItem> {
    item.check_slots()?;
    let order = item.variant.order();
    let mut swapped = order;
    let adj = order.iter().position(|&p| p == Part::Adjective).expect("slot");
    let num = order.iter().position(|&p| p == Part::Numeral).expect("slot");
    swapped.swap(adj, num);
    let without = |part: Part| -> Vec<Part> { order.iter().copied().filter(|&p| p != part).collect() };

    let mut out = item.clone();
    out.corruptions = BTreeMap::from([
        (Corruption::OrderSwap, item.sequence(&swapped)),
        (Corruption::NoArticle, item.sequence(&without(Part::Article))),
        (Corruption::NoModifier, item.sequence(&without(Part::Adjective))),
        (Corruption::NoNumeral, item.sequence(&without(Part::Numeral))),
    ]);
    Ok(out)
}

/// The same item realized in another word order, corruptions regenerated.
pub fn derive_variant(item: &StimulusItem, variant: ConstructionVariant) -> Result<StimulusItem> {
    let mut derived = item.clone();
    if variant != item.variant {
        derived.id = format!("{}:{}", item.id, variant.as_str().to_ascii_lowercase());
    }
    derived.variant = variant;
    generate_corruptions(&derived)
}

/// Keeps rated items whose rating is strictly greater than `threshold`.
pub fn filter_acceptable(items: &[StimulusItem], threshold: f64) -> Vec<StimulusItem> {
    items
        .iter()
        .filter(|item| item.rating.is_some_and(|r| r > threshold))
        .cloned()
        .collect()
}

/// Drops items whose well-formed construction occurs verbatim (case-folded,
/// contiguous) in the corpus.
pub fn remove_training_overlap(items: &[StimulusItem], corpus: &Corpus) -> Vec<StimulusItem> {
    let needles: Vec<Vec<String>> = items
        .iter()
        .map(|item| item.well_formed().iter().map(|w| fold(w)).collect())
        .collect();
    let mut by_first: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, needle) in needles.iter().enumerate() {
        if let Some(first) = needle.first() {
            by_first.entry(first.as_str()).or_default().push(i);
        }
    }

    let mut found: HashSet<usize> = HashSet::new();
    for sentence in corpus.sentences() {
        let words: Vec<String> = sentence.tokens.iter().map(|t| t.folded()).collect();
        for start in 0..words.len() {
            let Some(candidates) = by_first.get(words[start].as_str()) else {
                continue;
            };
            for &c in candidates {
                let needle = &needles[c];
                if words.len() - start >= needle.len() && words[start..start + needle.len()] == needle[..] {
                    found.insert(c);
                }
            }
        }
    }

    items
        .iter()
        .enumerate()
        .filter(|(i, _)| !found.contains(i))
        .map(|(_, item)| item.clone())
        .collect()
}

/// Flat record shared by the CSV and JSONL stimulus formats.
#[derive(Debug, Default, Deserialize)]
struct RawStimulus {
    id: Option<String>,
    #[serde(default)]
    prefix: Option<String>,
    article: Option<String>,
    adjective: Option<String>,
    numeral: Option<String>,
    noun: Option<String>,
    #[serde(default)]
    suffix: Option<String>,
    #[serde(default)]
    variant: Option<String>,
    #[serde(default)]
    rating: Option<String>,
    #[serde(default)]
    order_swap: Option<String>,
    #[serde(default)]
    no_article: Option<String>,
    #[serde(default)]
    no_modifier: Option<String>,
    #[serde(default)]
    no_numeral: Option<String>,
}

fn nonempty(value: Option<String>) -> Option<String> {
    value.filter(|v| !v.trim().is_empty())
}

impl RawStimulus {
    fn into_item(self, record: usize) -> Result<StimulusItem> {
        let required = |value: Option<String>, name: &str| {
            nonempty(value).ok_or_else(|| Error::Record {
                record,
                message: format!("missing required field `{name}`"),
            })
        };
        let id = required(self.id, "id")?;
        let construction = SlotGroups {
            article: required(self.article, "article")?,
            adjective: required(self.adjective, "adjective")?,
            numeral: required(self.numeral, "numeral")?,
            noun: required(self.noun, "noun")?,
        };
        let variant = match nonempty(self.variant) {
            Some(v) => v.parse().map_err(|e: Error| Error::Record {
                record,
                message: e.to_string(),
            })?,
            None => ConstructionVariant::Aann,
        };
        let rating = match nonempty(self.rating) {
            Some(r) => {
                let value: f64 = r.trim().parse().map_err(|_| Error::Record {
                    record,
                    message: format!("rating `{r}` is not a number"),
                })?;
                if !(1.0..=10.0).contains(&value) {
                    return Err(Error::Record {
                        record,
                        message: format!("rating {value} outside [1, 10]"),
                    });
                }
                Some(value)
            }
            None => None,
        };
        let mut corruptions = BTreeMap::new();
        for (key, value) in [
            (Corruption::OrderSwap, self.order_swap),
            (Corruption::NoArticle, self.no_article),
            (Corruption::NoModifier, self.no_modifier),
            (Corruption::NoNumeral, self.no_numeral),
        ] {
            if let Some(text) = nonempty(value) {
                corruptions.insert(key, text.split_whitespace().map(str::to_string).collect());
            }
        }
        Ok(StimulusItem {
            id,
            prefix: self.prefix.unwrap_or_default(),
            construction,
            suffix: nonempty(self.suffix),
            variant,
            rating,
            corruptions,
        })
    }
}

/// Accepts ratings written either as JSON numbers or strings.
fn json_to_raw(value: serde_json::Value) -> std::result::Result<RawStimulus, String> {
    let serde_json::Value::Object(mut map) = value else {
        return Err("record is not a JSON object".to_string());
    };
    let mut text = |key: &str| -> Option<String> {
        match map.remove(key)? {
            serde_json::Value::Null => None,
            serde_json::Value::String(s) => Some(s),
            serde_json::Value::Array(items) => Some(
                items
                    .iter()
                    .map(|v| v.as_str().map_or_else(|| v.to_string(), str::to_string))
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
            other => Some(other.to_string()),
        }
    };
    Ok(RawStimulus {
        id: text("id"),
        prefix: text("prefix"),
        article: text("article"),
        adjective: text("adjective"),
        numeral: text("numeral"),
        noun: text("noun"),
        suffix: text("suffix"),
        variant: text("variant"),
        rating: text("rating"),
        order_swap: text("order_swap"),
        no_article: text("no_article"),
        no_modifier: text("no_modifier"),
        no_numeral: text("no_numeral"),
    })
}

/// One JSON object per line. Record numbers in errors are 1-based line numbers.
pub fn load_stimuli_jsonl<R: BufRead>(reader: R) -> Result<Vec<StimulusItem>> {
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Record {
            record: i + 1,
            message: e.to_string(),
        })?;
        let raw = json_to_raw(value).map_err(|message| Error::Record { record: i + 1, message })?;
        items.push(raw.into_item(i + 1)?);
    }
    Ok(items)
}

/// CSV with a header row. Record numbers in errors count data rows from 1.
pub fn load_stimuli_csv<R: Read>(reader: R) -> Result<Vec<StimulusItem>> {
    let mut csv_reader = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let mut items = Vec::new();
    for (i, row) in csv_reader.deserialize::<RawStimulus>().enumerate() {
        let raw = row.map_err(|e| Error::Record {
            record: i + 1,
            message: e.to_string(),
        })?;
        items.push(raw.into_item(i + 1)?);
    }
    Ok(items)
}

/// One line of an emitted evaluation suite: the item's slots plus all five
/// construction token sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteLine {
    pub item_id: String,
    pub variant: ConstructionVariant,
    pub prefix: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suffix: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<f64>,
    pub article: String,
    pub adjective: String,
    pub numeral: String,
    pub noun: String,
    pub wellformed: Vec<String>,
    pub order_swap: Vec<String>,
    pub no_article: Vec<String>,
    pub no_modifier: Vec<String>,
    pub no_numeral: Vec<String>,
}

pub fn write_suite_jsonl(items: &[StimulusItem]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        let item = if item.has_all_corruptions() {
            item.clone()
        } else {
            generate_corruptions(item)?
        };
        let get = |c: Corruption| item.corruptions[&c].clone();
        let line = SuiteLine {
            item_id: item.id.clone(),
            variant: item.variant,
            prefix: item.prefix.clone(),
            suffix: item.suffix.clone(),
            rating: item.rating,
            article: item.construction.article.clone(),
            adjective: item.construction.adjective.clone(),
            numeral: item.construction.numeral.clone(),
            noun: item.construction.noun.clone(),
            wellformed: item.well_formed(),
            order_swap: get(Corruption::OrderSwap),
            no_article: get(Corruption::NoArticle),
            no_modifier: get(Corruption::NoModifier),
            no_numeral: get(Corruption::NoNumeral),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_suite_jsonl<R: BufRead>(reader: R) -> Result<Vec<StimulusItem>> {
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SuiteLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        items.push(StimulusItem {
            id: parsed.item_id,
            prefix: parsed.prefix,
            construction: SlotGroups {
                article: parsed.article,
                adjective: parsed.adjective,
                numeral: parsed.numeral,
                noun: parsed.noun,
            },
            suffix: parsed.suffix,
            variant: parsed.variant,
            rating: parsed.rating,
            corruptions: BTreeMap::from([
                (Corruption::OrderSwap, parsed.order_swap),
                (Corruption::NoArticle, parsed.no_article),
                (Corruption::NoModifier, parsed.no_modifier),
                (Corruption::NoNumeral, parsed.no_numeral),
            ]),
        });
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AnnotatedSentence;

    fn whopping(variant: ConstructionVariant) -> StimulusItem {
        StimulusItem {
            id: "w".into(),
            prefix: "we trained".into(),
            construction: SlotGroups::new("a", "whopping", "ninety", "LMs"),
            suffix: None,
            variant,
            rating: Some(8.0),
            corruptions: BTreeMap::new(),
        }
    }

    fn joined(item: &StimulusItem, c: Corruption) -> String {
        item.corruption(c).unwrap().join(" ")
    }

    #[test]
    fn aann_corruptions() {
        let item = generate_corruptions(&whopping(ConstructionVariant::Aann)).unwrap();
        assert_eq!(item.well_formed().join(" "), "a whopping ninety LMs");
        assert_eq!(joined(&item, Corruption::OrderSwap), "a ninety whopping LMs");
        assert_eq!(joined(&item, Corruption::NoArticle), "whopping ninety LMs");
        assert_eq!(joined(&item, Corruption::NoModifier), "a ninety LMs");
        assert_eq!(joined(&item, Corruption::NoNumeral), "a whopping LMs");
    }

    #[test]
    fn naan_order_swap() {
        let item = generate_corruptions(&whopping(ConstructionVariant::Naan)).unwrap();
        assert_eq!(item.well_formed().join(" "), "ninety whopping a LMs");
        assert_eq!(joined(&item, Corruption::OrderSwap), "whopping ninety a LMs");
    }

    #[test]
    fn empty_slot_is_an_error() {
        let mut item = whopping(ConstructionVariant::Aann);
        item.construction.adjective = " ".into();
        assert!(generate_corruptions(&item).is_err());
    }

    #[test]
    fn generation_is_idempotent() {
        let once = generate_corruptions(&whopping(ConstructionVariant::Anan)).unwrap();
        let twice = generate_corruptions(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn multiword_slots_split_into_tokens() {
        let mut item = whopping(ConstructionVariant::Aann);
        item.construction.numeral = "three to five".into();
        let item = generate_corruptions(&item).unwrap();
        assert_eq!(item.well_formed().len(), 6);
        assert_eq!(item.corruption(Corruption::NoNumeral).unwrap().len(), 3);
    }

    #[test]
    fn threshold_is_strict() {
        let items: Vec<StimulusItem> = [Some(7.0), Some(7.1), Some(9.0), None]
            .into_iter()
            .map(|rating| StimulusItem {
                rating,
                ..whopping(ConstructionVariant::Aann)
            })
            .collect();
        assert_eq!(filter_acceptable(&items, 7.0).len(), 2);
        assert!(filter_acceptable(&[], 7.0).is_empty());
    }

    #[test]
    fn overlap_removal_is_case_folded() {
        let mut items = Vec::new();
        for (id, adj) in [("i1", "whopping"), ("i2", "lovely"), ("i3", "measly")] {
            let mut item = whopping(ConstructionVariant::Aann);
            item.id = id.into();
            item.construction.adjective = adj.into();
            items.push(item);
        }
        let corpus = Corpus::from_sentences(vec![AnnotatedSentence::from_tagged(
            "c",
            "They/PRP built/VBD A/DT Lovely/JJ ninety/CD lms/NNS",
        )
        .unwrap()]);
        let kept = remove_training_overlap(&items, &corpus);
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|i| i.id != "i2"));

        let disjoint = Corpus::from_sentences(vec![AnnotatedSentence::from_tagged("d", "hi/UH").unwrap()]);
        assert_eq!(remove_training_overlap(&items, &disjoint), items);
    }

    #[test]
    fn load_jsonl_and_csv() {
        let jsonl = r#"{"id":"1","prefix":"I spent","article":"a","adjective":"lovely","numeral":"five","noun":"days","rating":8.5}
{"id":"2","prefix":"","article":"an","adjective":"awful","numeral":"three","noun":"weeks","variant":"AANN"}
"#;
        let items = load_stimuli_jsonl(jsonl.as_bytes()).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].rating, Some(8.5));
        assert!(items[1].corruptions.is_empty());

        let csv = "id,prefix,article,adjective,numeral,noun,suffix,variant,rating\n\
                   1,I spent,a,lovely,five,days,,AANN,8.5\n\
                   2,,an,awful,three,weeks,here,,\n";
        let items = load_stimuli_csv(csv.as_bytes()).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[1].suffix.as_deref(), Some("here"));
        assert_eq!(items[1].rating, None);
    }

    #[test]
    fn missing_noun_reports_record() {
        let jsonl = r#"{"id":"1","article":"a","adjective":"lovely","numeral":"five","noun":"days"}
{"id":"2","article":"a","adjective":"lovely","numeral":"five"}
"#;
        match load_stimuli_jsonl(jsonl.as_bytes()) {
            Err(Error::Record { record, message }) => {
                assert_eq!(record, 2);
                assert!(message.contains("noun"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_rating_rejected() {
        let jsonl = r#"{"id":"1","article":"a","adjective":"x","numeral":"five","noun":"days","rating":11}"#;
        assert!(load_stimuli_jsonl(jsonl.as_bytes()).is_err());
    }

    #[test]
    fn suite_round_trip() {
        let items: Vec<StimulusItem> = ConstructionVariant::ALL
            .iter()
            .map(|&v| derive_variant(&whopping(ConstructionVariant::Aann), v).unwrap())
            .collect();
        let text = write_suite_jsonl(&items).unwrap();
        assert_eq!(text.lines().count(), 3);
        let back = read_suite_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, items);
        assert_eq!(back[1].id, "w:anan");
    }
}
