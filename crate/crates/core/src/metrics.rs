//! Evaluation: close-answer decoding, accuracy, sentence BLEU and
//! externally computed scores.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{InstructionDatum, Relation, TaskKind};
use crate::text::{tokenize, word_overlap};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("label {label} is out of range for {options} options")]
    LabelOutOfRange { label: char, options: usize },
    #[error("between 2 and 8 options are required, got {0}")]
    OptionCount(usize),
    #[error("no records to evaluate")]
    EmptyInput,
    #[error("record `{0}` has no options or its gold answer is not among them")]
    NoGoldIndex(String),
    #[error("score ids do not match records; missing: {missing:?}, extra: {extra:?}")]
    IdMismatch { missing: Vec<String>, extra: Vec<String> },
}

/// Which branch of the decoder produced the answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeBranch {
    LeadingLabel,
    Pattern,
    Overlap,
}

fn answer_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)the(?: correct)? (?:option|answer) is[\s:]+([A-H])\b").unwrap())
}

fn label_index(label: char, n: usize) -> Result<usize, MetricsError> {
    let idx = (label.to_ascii_uppercase() as u8 - b'A') as usize;
    if idx < n {
        Ok(idx)
    } else {
        Err(MetricsError::LabelOutOfRange {
            label: label.to_ascii_uppercase(),
            options: n,
        })
    }
}

fn leading_label(prediction: &str) -> Option<char> {
    let mut chars = prediction.chars();
    let first = chars.next().filter(|c| ('A'..='H').contains(c))?;
    match chars.next() {
        None => Some(first),
        Some(c) if c == '.' || c == ':' || c == ')' || c.is_whitespace() => Some(first),
        _ => None,
    }
}

/// Map a free-form prediction onto one of `options`: a leading label
/// letter wins, then an "the (correct) option/answer is X" phrase, then
/// the option with the highest word overlap (lowest index on ties).
pub fn decode_close(prediction: &str, options: &[String]) -> Result<(usize, DecodeBranch), MetricsError> {
    if !(2..=8).contains(&options.len()) {
        return Err(MetricsError::OptionCount(options.len()));
    }
    let trimmed = prediction.trim();
    if let Some(label) = leading_label(trimmed) {
        return Ok((label_index(label, options.len())?, DecodeBranch::LeadingLabel));
    }
    if let Some(caps) = answer_pattern().captures(trimmed) {
        let label = caps[1].chars().next().expect("one letter captured");
        return Ok((label_index(label, options.len())?, DecodeBranch::Pattern));
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, o) in options.iter().enumerate() {
        let s = word_overlap(o, trimmed);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    Ok((best, DecodeBranch::Overlap))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub prediction: String,
    pub gold_answer: String,
    pub options: Option<Vec<String>>,
    /// Decoded option label, present iff options are.
    pub decoded: Option<char>,
    pub scores: BTreeMap<String, f64>,
}

impl EvalRecord {
    pub fn gold_index(&self) -> Option<usize> {
        self.options.as_ref()?.iter().position(|o| *o == self.gold_answer)
    }

    pub fn decoded_index(&self) -> Option<usize> {
        self.decoded.map(|c| (c as u8 - b'A') as usize)
    }
}

/// Percentage of records whose decoded label matches the gold option.
pub fn accuracy(records: &[EvalRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut correct = 0usize;
    for r in records {
        let gold = r.gold_index().ok_or_else(|| MetricsError::NoGoldIndex(r.id.clone()))?;
        if r.decoded_index() == Some(gold) {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / records.len() as f64)
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Clipped n-gram matches and the number of prediction n-grams.
fn modified_precision(pred: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let p = ngrams(pred, n);
    let r = ngrams(reference, n);
    let matched = p.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, pred.len().saturating_sub(n - 1))
}

/// Sentence BLEU up to order `n` with uniform weights and brevity
/// penalty. A zero precision at order > 1 is replaced by 1/(2c), where c
/// is the prediction length.
pub fn bleu_n(prediction: &str, reference: &str, n: usize) -> f64 {
    let pred = tokenize(prediction);
    let refr = tokenize(reference);
    let c = pred.len();
    if c == 0 || n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (m, total) = modified_precision(&pred, &refr, k);
        let p = if m > 0 {
            m as f64 / total as f64
        } else if k == 1 {
            return 0.0;
        } else {
            1.0 / (2.0 * c as f64)
        };
        log_sum += p.ln();
    }
    let r = refr.len();
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * (log_sum / n as f64).exp()
}

/// Mean sentence score scaled to 0-100.
pub fn corpus_bleu(pairs: &[(String, String)], n: usize) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    100.0 * pairs.iter().map(|(p, r)| bleu_n(p, r, n)).sum::<f64>() / pairs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScore {
    pub id: String,
    pub score: f64,
}

/// Attach per-record scores under `metric`. Every record needs exactly
/// one score and every score must name a record.
pub fn attach_scores(records: &mut [EvalRecord], scores: &[ExternalScore], metric: &str) -> Result<(), MetricsError> {
    let by_id: HashMap<&str, f64> = scores.iter().map(|s| (s.id.as_str(), s.score)).collect();
    let record_ids: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let missing: Vec<String> = record_ids
        .iter()
        .filter(|id| !by_id.contains_key(*id))
        .map(|s| s.to_string())
        .collect();
    let mut extra: Vec<String> = by_id
        .keys()
        .filter(|id| !record_ids.contains(*id))
        .map(|s| s.to_string())
        .collect();
    extra.sort();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(MetricsError::IdMismatch { missing, extra });
    }
    for r in records.iter_mut() {
        r.scores.insert(metric.to_string(), by_id[r.id.as_str()]);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Acc,
    Bleu1,
    Bleu2,
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "acc" => Ok(Metric::Acc),
            "bleu1" => Ok(Metric::Bleu1),
            "bleu2" => Ok(Metric::Bleu2),
            other => Err(format!("unknown metric `{other}` (expected acc, bleu1, bleu2)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Accuracy in percent over choice rows; BLEU as 100 x mean sentence score
    /// over open rows; external metrics as plain means.
    pub metrics: BTreeMap<String, MetricSummary>,
    pub per_relation: BTreeMap<String, BTreeMap<String, MetricSummary>>,
    pub decode_branches: BTreeMap<String, usize>,
    pub bleu_variant: String,
    pub records: Vec<EvalRecord>,
}

/// A prediction line: `{"id", "prediction"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: String,
}

fn summarize(values: &[f64]) -> MetricSummary {
    MetricSummary {
        count: values.len(),
        mean: if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        },
    }
}

/// Score predictions against gold dataset rows. Choice rows are decoded
/// and scored for accuracy, open rows for BLEU. Predictions without a gold
/// row are an error; gold rows without a prediction are skipped.
pub fn evaluate(
    predictions: &[Prediction],
    gold: &[InstructionDatum],
    metrics: &[Metric],
    external: &[(String, Vec<ExternalScore>)],
) -> Result<EvalReport, MetricsError> {
    let gold_by_id: HashMap<&str, &InstructionDatum> = gold.iter().map(|d| (d.id.as_str(), d)).collect();
    let unknown: Vec<String> = predictions
        .iter()
        .filter(|p| !gold_by_id.contains_key(p.id.as_str()))
        .map(|p| p.id.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(MetricsError::IdMismatch {
            missing: Vec::new(),
            extra: unknown,
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }

    let mut report = EvalReport {
        bleu_variant: "sentence-level, epsilon-smoothed (1/2c), mean x 100".into(),
        ..Default::default()
    };
    let mut per_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut per_rel: BTreeMap<(Relation, String), Vec<f64>> = BTreeMap::new();

    let mut records = Vec::with_capacity(predictions.len());
    for p in predictions {
        let d = gold_by_id[p.id.as_str()];
        let mut rec = EvalRecord {
            id: p.id.clone(),
            prediction: p.prediction.clone(),
            gold_answer: d.answer.clone(),
            options: d.options.clone(),
            decoded: None,
            scores: BTreeMap::new(),
        };
        match (d.task, &d.options) {
            (TaskKind::Choice, Some(opts)) => {
                let (idx, branch) = decode_close(&p.prediction, opts)?;
                rec.decoded = Some(crate::encapsulate::option_label(idx));
                *report
                    .decode_branches
                    .entry(format!("{branch:?}").to_lowercase())
                    .or_default() += 1;
                if metrics.contains(&Metric::Acc) {
                    let hit = if Some(idx) == rec.gold_index() { 100.0 } else { 0.0 };
                    rec.scores.insert("acc".into(), hit);
                }
            }
            _ => {
                for (m, n) in [(Metric::Bleu1, 1), (Metric::Bleu2, 2)] {
                    if metrics.contains(&m) {
                        let name = format!("bleu{n}");
                        rec.scores.insert(name, 100.0 * bleu_n(&p.prediction, &d.answer, n));
                    }
                }
            }
        }
        records.push(rec);
    }

    for (name, scores) in external {
        attach_scores(&mut records, scores, name)?;
    }

    for rec in &records {
        let rel = gold_by_id[rec.id.as_str()].relation;
        for (name, v) in &rec.scores {
            per_metric.entry(name.clone()).or_default().push(*v);
            per_rel.entry((rel, name.clone())).or_default().push(*v);
        }
    }
    report.metrics = per_metric.iter().map(|(k, v)| (k.clone(), summarize(v))).collect();
    for ((rel, name), v) in per_rel {
        report
            .per_relation
            .entry(rel.to_string())
            .or_default()
            .insert(name, summarize(&v));
    }
    report.records = records;
    Ok(report)
}
