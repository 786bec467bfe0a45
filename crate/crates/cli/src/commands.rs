use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use aann_core::corpus::{ingest_conllu, write_conllu, Corpus};
use aann_core::detector::{count_article_modifier_followers, detect_all, matches_to_jsonl, PhenomenonKind};
use aann_core::ngram::{tokenize, NGramModel, UnigramModel, TOKENIZER_TAG};
use aann_core::scoring::{
    evaluate_accuracy, import_external_logprobs, model_logprob_records, report_tsv, score_suite, Comparison,
    LogProbSource, ReportRow, ScoreMode, ScoreRecord,
};
use aann_core::stimuli::{
    derive_variant, filter_acceptable, load_stimuli_csv, load_stimuli_jsonl, read_suite_jsonl,
    remove_training_overlap, write_suite_jsonl,
};
use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::{write_echo, AblationSettings, Condition, PipelineConfig};
use crate::{ablate as pipeline, AblateArgs, CorruptArgs, DetectArgs, EvaluateArgs, ReportArgs, ScoreArgs, TrainArgs};
use crate::UsageError;

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn write(out_dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = out_dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn prepare(out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))
}

fn source_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string())
}

fn load_corpus(paths: &[PathBuf]) -> Result<Corpus> {
    let mut corpus = Corpus::new();
    for path in paths {
        let part = ingest_conllu(open(path)?, &source_name(path)).with_context(|| format!("reading {}", path.display()))?;
        corpus = corpus.concat(part);
    }
    Ok(corpus)
}

#[derive(Serialize)]
struct DetectSummary {
    sentences: usize,
    tokens: u64,
    matches: BTreeMap<PhenomenonKind, usize>,
    article_adj_followers: u64,
    article_num_followers: u64,
}

pub fn detect(args: &DetectArgs) -> Result<()> {
    let corpus = load_corpus(&args.inputs)?;
    let kinds = if args.kinds.is_empty() {
        PhenomenonKind::ALL.to_vec()
    } else {
        args.kinds.clone()
    };
    let matches = detect_all(&corpus, &kinds);
    let mut counts: BTreeMap<PhenomenonKind, usize> = kinds.iter().map(|&k| (k, 0)).collect();
    for m in &matches {
        *counts.entry(m.kind).or_insert(0) += 1;
    }
    let (adj, num) = count_article_modifier_followers(&corpus);
    let summary = DetectSummary {
        sentences: corpus.len(),
        tokens: corpus.token_total(),
        matches: counts,
        article_adj_followers: adj,
        article_num_followers: num,
    };

    prepare(&args.out_dir)?;
    write(&args.out_dir, "matches.jsonl", &matches_to_jsonl(&corpus, &matches)?)?;
    let summary_json = serde_json::to_string_pretty(&summary)? + "\n";
    write(&args.out_dir, "summary.json", &summary_json)?;
    write_echo(&args.out_dir, "detect", args)?;
    print!("{summary_json}");
    Ok(())
}

fn resolve(args: &AblateArgs) -> Result<AblationSettings> {
    let file = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let inputs = if args.inputs.is_empty() { file.inputs } else { args.inputs.clone() };
    if inputs.is_empty() {
        return Err(UsageError("no input corpus given (--input or `inputs` in config)".into()).into());
    }
    let condition = args
        .condition
        .or(file.condition)
        .ok_or_else(|| UsageError("no condition given (--condition or `condition` in config)".into()))?;
    let out_dir = args
        .out_dir
        .clone()
        .or(file.out_dir)
        .ok_or_else(|| UsageError("no output directory given (--out-dir or `out_dir` in config)".into()))?;
    Ok(AblationSettings {
        inputs,
        condition,
        kinds: if args.kinds.is_empty() { file.kinds } else { args.kinds.clone() },
        seed: args.seed.or(file.seed).unwrap_or(0),
        out_dir,
        keep_aann: args.keep_aann || file.keep_aann.unwrap_or(false),
        control_tokens: args.control_tokens.or(file.control_tokens),
    })
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let settings = resolve(args)?;
    if settings.condition != Condition::Custom && !settings.kinds.is_empty() {
        return Err(UsageError("--kinds only applies to the `custom` condition".into()).into());
    }
    let corpus = load_corpus(&settings.inputs)?;
    let (result, manifest) = pipeline::run(&corpus, &settings)?;

    prepare(&settings.out_dir)?;
    write(&settings.out_dir, "corpus.txt", &result.to_plain_text())?;
    write(&settings.out_dir, "corpus.conllu", &write_conllu(&result))?;
    write(&settings.out_dir, "manifest.jsonl", &manifest.to_jsonl()?)?;
    write_echo(&settings.out_dir, "ablate", &settings)?;
    println!(
        "{}: {} -> {} tokens, {} operations",
        serde_json::to_value(settings.condition)?.as_str().unwrap_or("condition"),
        manifest.source_token_total,
        manifest.result_token_total,
        manifest.operations.len()
    );
    for (key, value) in &manifest.stats {
        println!("  {key}: {value}");
    }
    Ok(())
}

pub fn corrupt(args: &CorruptArgs) -> Result<()> {
    let path = &args.stimuli;
    let items = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => load_stimuli_csv(open(path)?)?,
        Some("jsonl") | Some("json") => load_stimuli_jsonl(open(path)?)?,
        _ => return Err(UsageError(format!("stimuli {} must end in .csv or .jsonl", path.display())).into()),
    };
    let loaded = items.len();
    let items = match args.threshold {
        Some(threshold) => filter_acceptable(&items, threshold),
        None => items,
    };
    let rated = items.len();
    let items = if args.overlap_corpus.is_empty() {
        items
    } else {
        remove_training_overlap(&items, &load_corpus(&args.overlap_corpus)?)
    };
    let kept = items.len();

    let mut suite = Vec::with_capacity(items.len() * args.variants.len());
    for &variant in &args.variants {
        for item in &items {
            suite.push(derive_variant(item, variant)?);
        }
    }
    prepare(&args.out_dir)?;
    write(&args.out_dir, "suite.jsonl", &write_suite_jsonl(&suite)?)?;
    write_echo(&args.out_dir, "corrupt", args)?;
    println!("loaded {loaded}, above threshold {rated}, without overlap {kept}, suite lines {}", suite.len());
    Ok(())
}

fn read_utterances(paths: &[PathBuf], pretokenized: bool) -> Result<Vec<Vec<String>>> {
    let split = |line: &str| -> Vec<String> {
        if pretokenized {
            line.split_whitespace().map(str::to_string).collect()
        } else {
            tokenize(line)
        }
    };
    let mut utterances = Vec::new();
    for path in paths {
        if path.extension().is_some_and(|e| e == "conllu") {
            for sentence in load_corpus(std::slice::from_ref(path))?.sentences() {
                utterances.push(split(&sentence.text()));
            }
        } else {
            for line in open(path)?.lines() {
                let tokens = split(&line?);
                if !tokens.is_empty() {
                    utterances.push(tokens);
                }
            }
        }
    }
    Ok(utterances)
}

pub fn train_ngram(args: &TrainArgs) -> Result<()> {
    let tag = args.tokenizer_tag.as_deref().unwrap_or(TOKENIZER_TAG);
    let utterances = read_utterances(&args.inputs, args.pretokenized)?;
    prepare(&args.out_dir)?;
    if args.order == 1 {
        let model = UnigramModel::train(utterances.iter().flatten(), args.alpha, tag)?;
        write(&args.out_dir, "unigram.tsv", &model.to_tsv())?;
        println!("unigram: {} types, {} tokens, alpha {}", model.vocab_size(), model.total, model.alpha);
    } else {
        let model = NGramModel::train(&utterances, args.order as usize, tag)?;
        write(&args.out_dir, "model.arpa", &model.to_arpa())?;
        println!("{}-gram model", model.order());
        for (k, d) in model.discounts().iter().enumerate() {
            println!(
                "  order {}: {} n-grams, discounts {:.4} {:.4} {:.4}{}",
                k + 1,
                model.ngram_count(k + 1),
                d.d1,
                d.d2,
                d.d3,
                if d.fallback { " (fallback)" } else { "" }
            );
        }
    }
    write_echo(&args.out_dir, "train-ngram", args)?;
    Ok(())
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let suite = read_suite_jsonl(open(&args.suite)?)?;
    let mode: ScoreMode = args.mode.into();
    let unigram = match &args.unigram {
        Some(path) => Some(UnigramModel::from_tsv(open(path)?)?),
        None if mode == ScoreMode::Slor => {
            return Err(UsageError("SLOR scoring needs --unigram (or use --mode logprob)".into()).into())
        }
        None => None,
    };
    prepare(&args.out_dir)?;
    let source = match (&args.logprobs, &args.model) {
        (Some(path), _) => {
            let source = import_external_logprobs(open(path)?)?;
            for warning in &source.warnings {
                eprintln!("warning: {warning}");
            }
            source
        }
        (None, Some(path)) => {
            let model = NGramModel::from_arpa(open(path)?)?;
            let source = LogProbSource::from_records(model_logprob_records(&suite, &model, tokenize)?);
            write(&args.out_dir, "logprobs.jsonl", &source.to_jsonl()?)?;
            source
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let scores = score_suite(&suite, &source, unigram.as_ref(), mode)?;
    let mut out = String::new();
    for record in &scores {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    write(&args.out_dir, "scores.jsonl", &out)?;
    write_echo(&args.out_dir, "score", args)?;
    println!("scored {} items", scores.len());
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut records: Vec<ScoreRecord> = Vec::new();
    for (i, line) in open(&args.scores)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", args.scores.display(), i + 1))?);
    }
    let comparison = if args.literal_ratio {
        Comparison::LiteralRatio
    } else {
        Comparison::Strict
    };
    let report = evaluate_accuracy(&records, comparison)?;
    let row = ReportRow {
        condition: args.condition.clone(),
        model: args.model.clone(),
        report,
    };
    prepare(&args.out_dir)?;
    let text = serde_json::to_string_pretty(&row)? + "\n";
    write(&args.out_dir, "report.json", &text)?;
    write_echo(&args.out_dir, "evaluate", args)?;
    println!(
        "{} / {}: accuracy {:.4} ({} of {}), mean well-formed score {:.4}",
        row.condition, row.model, row.report.accuracy, row.report.correct, row.report.n_items, row.report.mean_wellformed_score
    );
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let mut rows = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let row: ReportRow = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        rows.push(row);
    }
    let table = report_tsv(&rows);
    prepare(&args.out_dir)?;
    write(&args.out_dir, "report.tsv", &table)?;
    write_echo(&args.out_dir, "report", args)?;
    print!("{table}");
    Ok(())
}
