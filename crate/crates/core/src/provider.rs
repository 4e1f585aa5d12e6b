//! Event generator abstraction.
//!
//! The evolution loop asks a [`Provider`] for candidate events that stand
//! in given relations to a parent event. [`HttpProvider`] talks to a
//! chat-completions style endpoint; [`MockProvider`] synthesizes scenario
//! sentences from a word-bank ontology so that whole pipelines run offline
//! and reproducibly.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use log::{debug, warn};
use rand::Rng as _;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Relation, TaskKind};

static DEFAULT_ONTOLOGY: &str = include_str!("../data/ontology.json");

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider unavailable after {attempts} attempt(s): {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("no parseable candidates in provider response")]
    ParseFailure,
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingApiKey(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid provider config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolveRequest {
    pub parent_text: String,
    /// Image caption; only sent when expanding the seed itself.
    pub caption: Option<String>,
    pub relations: Vec<Relation>,
    pub n_per_relation: usize,
}

impl EvolveRequest {
    pub fn validate(&self) -> Result<(), ProviderError> {
        let Some(first) = self.relations.first() else {
            return Err(ProviderError::InvalidRequest("no relations".into()));
        };
        if self.relations.iter().any(|r| r.direction() != first.direction()) {
            return Err(ProviderError::InvalidRequest("relations span both directions".into()));
        }
        if self.n_per_relation == 0 {
            return Err(ProviderError::InvalidRequest("n_per_relation is 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolveResponse {
    pub candidates: Vec<Candidate>,
    /// Unparsed provider output, kept for trace logs.
    pub raw: String,
}

/// Request for paraphrased instruction templates of one bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRequest {
    pub relation: Relation,
    pub with_text: bool,
    pub format: TaskKind,
    pub n: usize,
}

pub trait Provider: Send + Sync {
    fn evolve(&self, req: &EvolveRequest) -> Result<EvolveResponse, ProviderError>;

    /// Raw template bodies; callers validate placeholders.
    fn templates(&self, req: &TemplateRequest) -> Result<Vec<String>, ProviderError>;

    /// Upper bound on concurrent calls callers should issue.
    fn max_parallel(&self) -> usize {
        1
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn evolve(&self, req: &EvolveRequest) -> Result<EvolveResponse, ProviderError> {
        (**self).evolve(req)
    }
    fn templates(&self, req: &TemplateRequest) -> Result<Vec<String>, ProviderError> {
        (**self).templates(req)
    }
    fn max_parallel(&self) -> usize {
        (**self).max_parallel()
    }
}

/// Caps the number of in-flight calls to the wrapped provider across all
/// threads at its `max_parallel()`.
pub struct Bounded<P> {
    inner: P,
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<P: Provider> Bounded<P> {
    pub fn new(inner: P) -> Self {
        let limit = inner.max_parallel().max(1);
        Bounded {
            inner,
            limit,
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn with_slot<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.limit {
                n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
        }
        let out = f();
        *self.in_flight.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.freed.notify_one();
        out
    }
}

impl<P: Provider> Provider for Bounded<P> {
    fn evolve(&self, req: &EvolveRequest) -> Result<EvolveResponse, ProviderError> {
        self.with_slot(|| self.inner.evolve(req))
    }
    fn templates(&self, req: &TemplateRequest) -> Result<Vec<String>, ProviderError> {
        self.with_slot(|| self.inner.templates(req))
    }
    fn max_parallel(&self) -> usize {
        self.limit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model_name: String,
    pub api_key_env: String,
    pub max_retries: u32,
    pub timeout_ms: u64,
    pub max_parallel: usize,
    /// Base delay of the exponential backoff between retries.
    pub backoff_ms: u64,
    /// Word-bank file for the mock; the bundled ontology when absent.
    pub ontology: Option<String>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-3.5-turbo".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_retries: 3,
            timeout_ms: 60_000,
            max_parallel: 4,
            backoff_ms: 500,
            ontology: None,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.max_parallel == 0 {
            return Err(ProviderError::Config("max_parallel must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn build_provider(cfg: &ProviderConfig) -> Result<Box<dyn Provider>, ProviderError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        ProviderKind::Mock => {
            let ontology = match &cfg.ontology {
                Some(path) => Ontology::load(Path::new(path))?,
                None => Ontology::bundled(),
            };
            Box::new(Bounded::new(
                MockProvider::new(ontology).with_max_parallel(cfg.max_parallel),
            ))
        }
        ProviderKind::Http => Box::new(Bounded::new(HttpProvider::new(cfg.clone())?)),
    })
}

fn relation_gloss(r: Relation) -> &'static str {
    match r {
        Relation::Result => "an event that happens as a result of it",
        Relation::After => "an event that happens after it",
        Relation::HasIntention => "an event that the people involved intend to achieve by it",
        Relation::Cause => "an event that causes it",
        Relation::Before => "an event that happens before it",
        Relation::IsIntention => "an event whose participants intended it to happen",
    }
}

/// Prompt asking the generator to evolve `req.parent_text`.
pub fn render_evolve_prompt(req: &EvolveRequest) -> String {
    let total = req.relations.len() * req.n_per_relation;
    let mut p = String::new();
    let _ = writeln!(p, "You are an expert in event evolution and commonsense reasoning.");
    let _ = writeln!(p, "Given the event: \"{}\"", req.parent_text.trim());
    if let Some(caption) = &req.caption {
        let _ = writeln!(
            p,
            "The event is depicted in an image described as: \"{}\"",
            caption.trim()
        );
    }
    let _ = writeln!(
        p,
        "Generate {} plausible events for each of these relations:",
        req.n_per_relation
    );
    for r in &req.relations {
        let _ = writeln!(p, "- {}: {}", r, relation_gloss(*r));
    }
    let _ = writeln!(
        p,
        "Each event is one short declarative sentence. Answer with exactly {total} numbered lines \
         in the form \"<number>. <RELATION>: <event>\", for example \"1. {}: ...\", and nothing else.",
        req.relations[0]
    );
    p
}

fn line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:[-*]\s*)?(?:\d+\s*[.):]\s*)?\**([A-Za-z]+)\**\s*:\s*(.+?)\s*$").unwrap())
}

/// Parse numbered `REL: text` lines, dropping malformed lines and
/// relations the request did not ask for.
pub fn parse_evolve_response(raw: &str, req: &EvolveRequest) -> Vec<Candidate> {
    raw.lines()
        .filter_map(|line| {
            let caps = line_re().captures(line)?;
            let label = caps.get(1)?.as_str();
            let relation = Relation::ALL
                .into_iter()
                .find(|r| r.as_str().eq_ignore_ascii_case(label))?;
            if !req.relations.contains(&relation) {
                return None;
            }
            let text = caps.get(2)?.as_str().trim().trim_matches('"').trim();
            (!text.is_empty()).then(|| Candidate {
                text: text.to_string(),
                relation,
            })
        })
        .collect()
}

/// Meta-prompt asking for paraphrased instruction templates.
pub fn render_template_prompt(req: &TemplateRequest) -> String {
    let mut p = String::new();
    let _ = writeln!(
        p,
        "Write {} diverse instruction templates that ask a model to infer {} for the event shown in an image.",
        req.n,
        relation_gloss(req.relation)
    );
    let _ = writeln!(p, "Use the placeholder {{caption}} for the image caption.");
    if req.with_text {
        let _ = writeln!(
            p,
            "Use the placeholder {{event}} for the textual description of the event."
        );
    } else {
        let _ = writeln!(
            p,
            "Do not mention any textual event description; only the image is given."
        );
    }
    if req.format == TaskKind::Choice {
        let _ = writeln!(
            p,
            "The model must pick one of several candidate events; use the placeholder {{options}} for the candidates \
             and ask for the label of the correct option."
        );
    }
    let _ = writeln!(p, "Return one template per line, numbered, with no other text.");
    p
}

pub fn parse_template_lines(raw: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^\s*(?:[-*]\s*)?(?:\d+\s*[.)]\s*)?(.+?)\s*$").unwrap());
    raw.lines()
        .filter_map(|l| re.captures(l))
        .filter_map(|c| c.get(1).map(|m| m.as_str().trim_matches('"').to_string()))
        .filter(|s| !s.is_empty())
        .collect()
}

/// Word banks the mock provider builds sentences from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub subjects: Vec<String>,
    pub verbs: Vec<String>,
    pub objects: Vec<String>,
    #[serde(default)]
    pub settings: Vec<String>,
}

impl Ontology {
    pub fn bundled() -> Self {
        serde_json::from_str(DEFAULT_ONTOLOGY).expect("bundled ontology is valid JSON")
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        let o: Ontology =
            serde_json::from_str(&text).map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        if o.subjects.is_empty() || o.verbs.is_empty() || o.objects.is_empty() {
            return Err(ProviderError::Config(format!(
                "{}: every word bank must be non-empty",
                path.display()
            )));
        }
        Ok(o)
    }
}

/// Fixed salt mixed into every mock hash.
const MOCK_SALT: &str = "mock-v1";

fn mock_hash(parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(MOCK_SALT.as_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().into()
}

fn pick<'a>(bank: &'a [String], bytes: &[u8]) -> &'a str {
    let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    &bank[n % bank.len()]
}

/// Deterministic offline generator.
#[derive(Debug, Clone)]
pub struct MockProvider {
    ontology: Ontology,
    max_parallel: usize,
}

impl Default for MockProvider {
    fn default() -> Self {
        MockProvider::new(Ontology::bundled())
    }
}

impl MockProvider {
    pub fn new(ontology: Ontology) -> Self {
        MockProvider {
            ontology,
            max_parallel: 4,
        }
    }

    pub fn with_max_parallel(mut self, n: usize) -> Self {
        self.max_parallel = n.max(1);
        self
    }

    fn sentence(&self, req: &EvolveRequest, rel: Relation, index: usize) -> String {
        let idx = index.to_string();
        let caption = req.caption.as_deref().unwrap_or("");
        let h = mock_hash(&[&req.parent_text, caption, rel.as_str(), &idx]);
        let o = &self.ontology;
        let mut s = format!(
            "{} {} {}",
            pick(&o.subjects, &h[0..4]),
            pick(&o.verbs, &h[4..8]),
            pick(&o.objects, &h[8..12])
        );
        if !o.settings.is_empty() {
            s.push(' ');
            s.push_str(pick(&o.settings, &h[12..16]));
        }
        let mut chars = s.chars();
        let first = chars
            .next()
            .map(|c| c.to_uppercase().collect::<String>())
            .unwrap_or_default();
        format!("{first}{}.", chars.as_str())
    }
}

const MOCK_LEADS: [&str; 6] = [
    "Look at the image described as {caption}.",
    "Here is an image: {caption}.",
    "The picture shows {caption}.",
    "Consider this image ({caption}).",
    "Image description: {caption}.",
    "You are given an image of {caption}.",
];

fn template_question(r: Relation) -> &'static str {
    match r {
        Relation::Result => "What is likely to happen as a result",
        Relation::After => "What would happen after this",
        Relation::HasIntention => "What do the people involved intend to achieve",
        Relation::Cause => "What could have caused this",
        Relation::Before => "What happened before this",
        Relation::IsIntention => "Which earlier event was carried out with this as its goal",
    }
}

impl Provider for MockProvider {
    fn evolve(&self, req: &EvolveRequest) -> Result<EvolveResponse, ProviderError> {
        req.validate()?;
        let mut candidates = Vec::with_capacity(req.relations.len() * req.n_per_relation);
        let mut raw = String::new();
        for rel in &req.relations {
            for i in 0..req.n_per_relation {
                let text = self.sentence(req, *rel, i);
                let _ = writeln!(raw, "{}. {}: {}", candidates.len() + 1, rel, text);
                candidates.push(Candidate { text, relation: *rel });
            }
        }
        Ok(EvolveResponse { candidates, raw })
    }

    fn templates(&self, req: &TemplateRequest) -> Result<Vec<String>, ProviderError> {
        let question = template_question(req.relation);
        Ok((0..req.n)
            .map(|i| {
                let mut body = MOCK_LEADS[i % MOCK_LEADS.len()].to_string();
                if req.with_text {
                    body.push_str(" The event is: {event}.");
                }
                body.push(' ');
                body.push_str(question);
                body.push('?');
                if req.format == TaskKind::Choice {
                    body.push_str(" Options: {options} Answer with the option label.");
                }
                body
            })
            .collect())
    }

    fn max_parallel(&self) -> usize {
        self.max_parallel
    }
}

/// Chat-completions client with bounded retries.
pub struct HttpProvider {
    cfg: ProviderConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let api_key =
            std::env::var(&cfg.api_key_env).map_err(|_| ProviderError::MissingApiKey(cfg.api_key_env.clone()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(HttpProvider { cfg, api_key, client })
    }

    /// Send one user prompt and return the assistant's text.
    pub fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let body = serde_json::json!({
            "model": self.cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut last = String::new();
        let attempts = self.cfg.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                let base = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                let jitter = rand::thread_rng().gen_range(0..=base / 2);
                std::thread::sleep(Duration::from_millis(base + jitter));
            }
            let sent = self
                .client
                .post(&self.cfg.endpoint)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send();
            match sent {
                Ok(resp) if resp.status().is_server_error() => {
                    last = format!("HTTP {}", resp.status());
                    warn!("provider returned {last} (attempt {})", attempt + 1);
                }
                Ok(resp) if !resp.status().is_success() => {
                    return Err(ProviderError::Unavailable {
                        attempts: attempt + 1,
                        last: format!("HTTP {}", resp.status()),
                    });
                }
                Ok(resp) => {
                    let text = resp.text().map_err(|e| ProviderError::Unavailable {
                        attempts: attempt + 1,
                        last: e.to_string(),
                    })?;
                    return Ok(extract_content(&text));
                }
                Err(e) => {
                    last = e.to_string();
                    debug!("transport error (attempt {}): {last}", attempt + 1);
                }
            }
        }
        Err(ProviderError::Unavailable { attempts, last })
    }
}

/// Message content of a chat-completions body; non-JSON bodies are
/// returned as-is.
fn extract_content(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| {
            v.pointer("/choices/0/message/content")
                .and_then(|c| c.as_str())
                .map(str::to_string)
        })
        .unwrap_or_else(|| body.to_string())
}

impl Provider for HttpProvider {
    fn evolve(&self, req: &EvolveRequest) -> Result<EvolveResponse, ProviderError> {
        req.validate()?;
        let raw = self.complete(&render_evolve_prompt(req))?;
        let candidates = parse_evolve_response(&raw, req);
        if candidates.is_empty() {
            return Err(ProviderError::ParseFailure);
        }
        Ok(EvolveResponse { candidates, raw })
    }

    fn templates(&self, req: &TemplateRequest) -> Result<Vec<String>, ProviderError> {
        let raw = self.complete(&render_template_prompt(req))?;
        Ok(parse_template_lines(&raw))
    }

    fn max_parallel(&self) -> usize {
        self.cfg.max_parallel
    }
}
