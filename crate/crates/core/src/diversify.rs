//! Event diversification: tag each event with a trigger verb and keep at
//! most `cap_k` events per trigger.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Event;
use crate::rng::scoped_rng;
use crate::text::tokenize;

static VERBS_TXT: &str = include_str!("../data/verbs.txt");

/// Bucket for events whose trigger cannot be determined.
pub const NO_TRIGGER: &str = "_notrigger";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiversifyError {
    #[error("event `{0}` has no tokens")]
    EmptyText(String),
    #[error("cap_k must be at least 1")]
    ZeroCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tagger {
    /// Lexicon and suffix rules over the event text.
    Heuristic,
    /// Triggers are precomputed in the input file.
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiversifyConfig {
    pub cap_k: usize,
    pub rng_seed: u64,
    pub tagger: Tagger,
}

impl Default for DiversifyConfig {
    fn default() -> Self {
        DiversifyConfig {
            cap_k: 20,
            rng_seed: 0,
            tagger: Tagger::Heuristic,
        }
    }
}

fn lexicon() -> &'static BTreeSet<&'static str> {
    static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        VERBS_TXT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn in_lexicon(word: &str) -> bool {
    lexicon().contains(word)
}

/// Candidate stems for an inflected form ending in -ed, -ing or -s.
fn stems(word: &str) -> Vec<String> {
    let mut out = Vec::new();
    let undouble = |s: &str| -> Option<String> {
        let b = s.as_bytes();
        (b.len() >= 2 && b[b.len() - 1] == b[b.len() - 2]).then(|| s[..s.len() - 1].to_string())
    };
    if let Some(s) = word.strip_suffix("ied") {
        out.push(format!("{s}y"));
    }
    if let Some(s) = word.strip_suffix("ed") {
        out.push(s.to_string());
        out.push(format!("{s}e"));
        out.extend(undouble(s));
    }
    if let Some(s) = word.strip_suffix("ing") {
        out.push(s.to_string());
        out.push(format!("{s}e"));
        out.extend(undouble(s));
    }
    if let Some(s) = word.strip_suffix("ies") {
        out.push(format!("{s}y"));
    }
    if let Some(s) = word.strip_suffix("es") {
        out.push(s.to_string());
    }
    if let Some(s) = word.strip_suffix('s') {
        out.push(s.to_string());
    }
    out.retain(|s| s.len() >= 2);
    out
}

fn is_inflected_verb(word: &str) -> bool {
    stems(word).iter().any(|s| in_lexicon(s))
}

/// Main verb of an event. A preset trigger is returned unchanged;
/// otherwise the first token that is a lexicon verb or an inflection of
/// one is chosen, falling back to the second token (or the only one).
pub fn extract_trigger(event: &Event) -> Result<String, DiversifyError> {
    if let Some(t) = &event.trigger {
        return Ok(t.clone());
    }
    let tokens = tokenize(&event.text);
    if tokens.is_empty() {
        return Err(DiversifyError::EmptyText(event.id.clone()));
    }
    if let Some(t) = tokens.iter().find(|t| in_lexicon(t) || is_inflected_verb(t)) {
        return Ok(t.clone());
    }
    Ok(tokens.get(1).unwrap_or(&tokens[0]).clone())
}

fn trigger_for(event: &Event, tagger: Tagger) -> String {
    match tagger {
        Tagger::Heuristic => extract_trigger(event).unwrap_or_else(|_| NO_TRIGGER.to_string()),
        Tagger::External => event
            .trigger
            .clone()
            .filter(|t| !t.trim().is_empty())
            .unwrap_or_else(|| NO_TRIGGER.to_string()),
    }
}

/// Balanced seed set: every event tagged, at most `cap_k` per trigger,
/// sorted by trigger then id.
pub fn diversify(events: &[Event], cfg: &DiversifyConfig) -> Result<Vec<Event>, DiversifyError> {
    if cfg.cap_k == 0 {
        return Err(DiversifyError::ZeroCap);
    }
    let mut groups: BTreeMap<String, Vec<Event>> = BTreeMap::new();
    for e in events {
        let trigger = trigger_for(e, cfg.tagger);
        let mut tagged = e.clone();
        tagged.trigger = Some(trigger.clone());
        groups.entry(trigger).or_default().push(tagged);
    }

    let mut out = Vec::new();
    for (trigger, mut group) in groups {
        // Sort first so the sample does not depend on corpus order.
        group.sort_by(|a, b| a.id.cmp(&b.id));
        if group.len() > cfg.cap_k {
            let mut rng = scoped_rng(cfg.rng_seed, &["diversify", &trigger]);
            group.shuffle(&mut rng);
            group.truncate(cfg.cap_k);
            group.sort_by(|a, b| a.id.cmp(&b.id));
        }
        out.extend(group);
    }
    Ok(out)
}

/// Trigger frequency summary, used for the before/after report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerHistogram {
    pub total: usize,
    pub distinct: usize,
    pub max_count: usize,
    pub max_share: f64,
    /// Most frequent first, ties by trigger.
    pub counts: Vec<(String, usize)>,
}

impl TriggerHistogram {
    pub fn from_triggers<'a>(triggers: impl IntoIterator<Item = &'a str>) -> Self {
        let mut map: BTreeMap<&str, usize> = BTreeMap::new();
        for t in triggers {
            *map.entry(t).or_default() += 1;
        }
        let total: usize = map.values().sum();
        let mut counts: Vec<(String, usize)> = map.into_iter().map(|(t, c)| (t.to_string(), c)).collect();
        counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let max_count = counts.first().map(|c| c.1).unwrap_or(0);
        TriggerHistogram {
            total,
            distinct: counts.len(),
            max_count,
            max_share: if total == 0 {
                0.0
            } else {
                max_count as f64 / total as f64
            },
            counts,
        }
    }

    /// Histogram of an event list, tagging untagged events with `tagger`.
    pub fn of_events(events: &[Event], tagger: Tagger) -> Self {
        let triggers: Vec<String> = events.iter().map(|e| trigger_for(e, tagger)).collect();
        Self::from_triggers(triggers.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversifyReport {
    pub cap_k: usize,
    pub before: TriggerHistogram,
    pub after: TriggerHistogram,
}
