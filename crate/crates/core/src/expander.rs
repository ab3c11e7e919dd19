//! Dialect expansion through a chat-completion endpoint, and review sheets
//! for manual spot checks of the results.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_text, DialectTag, Sample};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

const DIALECT: &str = "{dialect}";
const SENTENCE: &str = "{sentence}";

/// The Arabic instruction: "You are an expert in Arabic dialects. Translate
/// the following sentence to the {dialect} dialect without changing the
/// meaning: {sentence}".
pub const DEFAULT_TEMPLATE: &str =
    "أنت خبير في اللهجات العربية. ترجم الجملة التالية إلى اللهجة {dialect} بدون تغيير المعنى:{sentence}";

/// How `{dialect}` is spelled in a rendered prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialectNaming {
    /// المصرية, الخليجية, ...
    Arabic,
    /// Egyptian, Gulf, ...
    English,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    template: String,
    naming: DialectNaming,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            template: DEFAULT_TEMPLATE.to_owned(),
            naming: DialectNaming::Arabic,
        }
    }
}

impl PromptTemplate {
    /// A custom template; dialects are rendered with their English names.
    pub fn new(template: &str) -> Result<Self> {
        Self::with_naming(template, DialectNaming::English)
    }

    pub fn with_naming(template: &str, naming: DialectNaming) -> Result<Self> {
        for placeholder in [DIALECT, SENTENCE] {
            let count = template.matches(placeholder).count();
            if count != 1 {
                return Err(Error::Config(format!(
                    "prompt template must contain {placeholder} exactly once, found {count}"
                )));
            }
        }
        Ok(PromptTemplate {
            template: template.to_owned(),
            naming,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.template
    }

    pub fn naming(&self) -> DialectNaming {
        self.naming
    }
}

/// Substitutes both placeholders in one pass over the template, so
/// placeholder-like text inside the sentence is left alone.
pub fn render_prompt(tpl: &PromptTemplate, dialect: DialectTag, sentence: &str) -> Result<String> {
    if dialect == DialectTag::Msa {
        return Err(Error::InvalidArgument("cannot translate into MSA".into()));
    }
    if sentence.trim().is_empty() {
        return Err(Error::InvalidArgument("sentence is empty".into()));
    }
    let name = match tpl.naming {
        DialectNaming::Arabic => dialect.arabic_name(),
        DialectNaming::English => dialect.english_name(),
    };
    let t = tpl.template.as_str();
    let d = t.find(DIALECT).ok_or_else(|| Error::Config("template lacks {dialect}".into()))?;
    let s = t.find(SENTENCE).ok_or_else(|| Error::Config("template lacks {sentence}".into()))?;
    let mut spans = [(d, DIALECT.len(), name), (s, SENTENCE.len(), sentence)];
    spans.sort_by_key(|span| span.0);
    let mut out = String::with_capacity(t.len() + name.len() + sentence.len());
    let mut pos = 0;
    for (at, len, value) in spans {
        out.push_str(&t[pos..at]);
        out.push_str(value);
        pos = at + len;
    }
    out.push_str(&t[pos..]);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the bearer token.
    pub api_key_env_var: String,
    pub max_retries: u32,
    /// Seconds; attempt `k` that fails transiently waits `backoff_base * 2^k`.
    pub backoff_base: f64,
    /// Per-request timeout in seconds.
    pub timeout: f64,
    pub temperature: f64,
    /// Upper bound on concurrent requests.
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model_name: "gpt-4o".into(),
            api_key_env_var: "GRAPHFUSE_API_KEY".into(),
            max_retries: 3,
            backoff_base: 1.0,
            timeout: 60.0,
            temperature: 0.0,
            max_in_flight: 4,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout > 0.0) || !self.timeout.is_finite() {
            return Err(Error::Config(format!("timeout must be positive, got {}", self.timeout)));
        }
        if !(self.backoff_base >= 0.0) || !self.backoff_base.is_finite() {
            return Err(Error::Config(format!("backoff_base must be >= 0, got {}", self.backoff_base)));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be >= 1".into()));
        }
        if self.base_url.is_empty() {
            return Err(Error::Config("base_url is empty".into()));
        }
        Ok(())
    }
}

/// Anything that can answer a prompt with a raw chat-completion body.
pub trait ChatBackend: Sync {
    fn send(&self, prompt: &str) -> Result<String>;
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
}

/// The assistant message at `choices[0].message.content`, trimmed.
pub fn extract_content(body: &str) -> Result<String> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| Error::Endpoint(format!("malformed response body: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(serde_json::Value::as_str)
        .map(|s| s.trim().to_owned())
        .ok_or_else(|| Error::Endpoint("response has no choices[0].message.content string".into()))
}

/// Blocking HTTP client with retry on timeouts, 429 and 5xx.
pub struct ChatClient {
    cfg: EndpointConfig,
    api_key: String,
    http: reqwest::blocking::Client,
}

enum Attempt {
    Done(String),
    Transient(String),
    Fatal(String),
}

impl ChatClient {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(cfg: EndpointConfig) -> Result<Self> {
        let key = std::env::var(&cfg.api_key_env_var)
            .map_err(|_| Error::Config(format!("environment variable {} is not set", cfg.api_key_env_var)))?;
        Self::with_key(cfg, key)
    }

    pub fn with_key(cfg: EndpointConfig, api_key: String) -> Result<Self> {
        cfg.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout))
            .build()
            .map_err(|e| Error::Endpoint(format!("cannot build HTTP client: {e}")))?;
        Ok(ChatClient { cfg, api_key, http })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn attempt(&self, body: &str) -> Attempt {
        let resp = self
            .http
            .post(&self.cfg.base_url)
            .bearer_auth(&self.api_key)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_owned())
            .send();
        let resp = match resp {
            Ok(r) => r,
            // timeouts and dropped connections are worth another try
            Err(e) => return Attempt::Transient(format!("request error: {e}")),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(format!("reading body: {e}")),
        };
        if status.is_success() {
            Attempt::Done(text)
        } else if status.as_u16() == 429 || status.is_server_error() {
            Attempt::Transient(format!("HTTP {status}"))
        } else {
            Attempt::Fatal(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()))
        }
    }
}

impl ChatBackend for ChatClient {
    fn send(&self, prompt: &str) -> Result<String> {
        let body = serde_json::to_string(&ChatRequest {
            model: &self.cfg.model_name,
            messages: [Message {
                role: "user",
                content: prompt,
            }],
            temperature: self.cfg.temperature,
        })?;
        let mut log = Vec::new();
        for attempt in 0..=self.cfg.max_retries {
            match self.attempt(&body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(msg) => {
                    log.push(format!("attempt {}: {msg}", attempt + 1));
                    return Err(Error::Endpoint(log.join("; ")));
                }
                Attempt::Transient(msg) => {
                    log.push(format!("attempt {}: {msg}", attempt + 1));
                    if attempt < self.cfg.max_retries {
                        let wait = self.cfg.backoff_base * 2f64.powi(attempt as i32);
                        std::thread::sleep(Duration::from_secs_f64(wait));
                    }
                }
            }
        }
        Err(Error::Endpoint(format!("retries exhausted: {}", log.join("; "))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslationStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub parent_id: String,
    pub dialect: DialectTag,
    pub prompt_sent: String,
    pub raw_response: String,
    pub extracted_text: String,
    pub status: TranslationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Expansion {
    /// Dialectal samples for the successful translations.
    pub samples: Vec<Sample>,
    /// One record per (input, dialect), ok or failed.
    pub records: Vec<TranslationRecord>,
}

impl Expansion {
    pub fn ok_count(&self) -> usize {
        self.records.iter().filter(|r| r.status == TranslationStatus::Ok).count()
    }

    pub fn failed_count(&self) -> usize {
        self.records.len() - self.ok_count()
    }
}

/// Id of the dialectal child of `parent` in `dialect`.
pub fn dialectal_id(parent: &str, dialect: DialectTag) -> String {
    format!("{parent}@{}", dialect.code())
}

fn translate_one(backend: &dyn ChatBackend, tpl: &PromptTemplate, sample: &Sample, dialect: DialectTag) -> TranslationRecord {
    let mut rec = TranslationRecord {
        parent_id: sample.id.clone(),
        dialect,
        prompt_sent: String::new(),
        raw_response: String::new(),
        extracted_text: String::new(),
        status: TranslationStatus::Failed,
        error: None,
    };
    let result = render_prompt(tpl, dialect, &sample.text).and_then(|prompt| {
        rec.prompt_sent = prompt;
        let raw = backend.send(&rec.prompt_sent)?;
        rec.raw_response = raw;
        extract_content(&rec.raw_response)
    });
    match result {
        Ok(text) if !normalize_text(&text).is_empty() => {
            rec.extracted_text = text;
            rec.status = TranslationStatus::Ok;
        }
        Ok(_) => rec.error = Some("empty translation".into()),
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// Translates every MSA sample into every requested dialect with at most
/// `max_in_flight` concurrent requests. Output order is input order, then
/// dialect order, whatever order the responses arrive in.
pub fn expand_dataset(
    samples: &[Sample],
    dialects: &[DialectTag],
    backend: &dyn ChatBackend,
    tpl: &PromptTemplate,
    max_in_flight: usize,
) -> Result<Expansion> {
    if let Some(s) = samples.iter().find(|s| s.dialect != DialectTag::Msa) {
        return Err(Error::InvalidArgument(format!("sample {:?} is not MSA", s.id)));
    }
    let dialects: Vec<DialectTag> = dialects.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if dialects.contains(&DialectTag::Msa) {
        return Err(Error::InvalidArgument("MSA is not an expansion target".into()));
    }
    let jobs: Vec<(usize, DialectTag)> = (0..samples.len())
        .flat_map(|i| dialects.iter().map(move |&d| (i, d)))
        .collect();
    let results: Mutex<HashMap<usize, TranslationRecord>> = Mutex::new(HashMap::with_capacity(jobs.len()));
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.max(1).min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(i, d)) = jobs.get(j) else { break };
                let rec = translate_one(backend, tpl, &samples[i], d);
                if let Some(e) = &rec.error {
                    log::warn!("{} -> {}: {e}", rec.parent_id, d.code());
                }
                results.lock().expect("no poisoned workers").insert(j, rec);
            });
        }
    });
    let mut results = results.into_inner().expect("no poisoned workers");
    let mut out = Expansion::default();
    for (j, &(i, d)) in jobs.iter().enumerate() {
        let rec = results.remove(&j).expect("every job produces a record");
        if rec.status == TranslationStatus::Ok {
            let parent = &samples[i];
            out.samples.push(Sample {
                id: dialectal_id(&parent.id, d),
                text: normalize_text(&rec.extracted_text),
                label: parent.label,
                dialect: d,
                source: parent.source,
                parent_id: Some(parent.id.clone()),
            });
        }
        out.records.push(rec);
    }
    Ok(out)
}

pub fn write_records(records: &[TranslationRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a manual review sheet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRow {
    pub parent_id: String,
    pub dialect: DialectTag,
    pub msa_text: String,
    pub dialect_text: String,
    pub verdict: String,
}

pub const DEFAULT_SPOT_CHECK: usize = 50;

/// Up to `n` rows per dialect present (MSA excluded), drawn without
/// replacement from a seeded stream per dialect and listed in input order.
pub fn spot_check_sample(samples: &[Sample], n: usize, seed: u64) -> Vec<ReviewRow> {
    let parents: HashMap<&str, &str> = samples
        .iter()
        .filter(|s| s.dialect == DialectTag::Msa)
        .map(|s| (s.id.as_str(), s.text.as_str()))
        .collect();
    let seeds = SeedStream::new(seed);
    let mut rows = Vec::new();
    for d in DialectTag::REGIONAL {
        let pool: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].dialect == d).collect();
        if pool.is_empty() {
            continue;
        }
        let mut rng = seeds.rng(&format!("spotcheck/{}", d.code()));
        let mut picked: Vec<usize> = pool.choose_multiple(&mut rng, n.min(pool.len())).copied().collect();
        picked.sort_unstable();
        for i in picked {
            let s = &samples[i];
            let parent_id = s.parent_id.clone().unwrap_or_default();
            rows.push(ReviewRow {
                msa_text: parents.get(parent_id.as_str()).copied().unwrap_or_default().to_owned(),
                parent_id,
                dialect: d,
                dialect_text: s.text.clone(),
                verdict: String::new(),
            });
        }
    }
    rows
}

pub fn write_review_sheet<W: Write>(rows: &[ReviewRow], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["parent_id", "dialect", "msa_text", "dialect_text", "verdict"])?;
    for r in rows {
        w.write_record([&r.parent_id, r.dialect.code(), &r.msa_text, &r.dialect_text, &r.verdict])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SourceTag;

    #[test]
    fn custom_template_uses_english_names() {
        let tpl = PromptTemplate::new("T:{dialect}|{sentence}").unwrap();
        assert_eq!(render_prompt(&tpl, DialectTag::Egyptian, "s").unwrap(), "T:Egyptian|s");
    }

    #[test]
    fn default_template_is_arabic_and_keeps_sentence() {
        let tpl = PromptTemplate::default();
        let p = render_prompt(&tpl, DialectTag::Gulf, "ذهب الولد إلى المدرسة").unwrap();
        assert_eq!(
            p,
            "أنت خبير في اللهجات العربية. ترجم الجملة التالية إلى اللهجة الخليجية بدون تغيير المعنى:ذهب الولد إلى المدرسة"
        );
        assert!(p.contains("بدون تغيير المعنى"));
    }

    #[test]
    fn placeholder_text_in_sentence_survives() {
        let tpl = PromptTemplate::new("{sentence} => {dialect}").unwrap();
        let p = render_prompt(&tpl, DialectTag::Levantine, "say {dialect} and {sentence}").unwrap();
        assert_eq!(p, "say {dialect} and {sentence} => Levantine");
    }

    #[test]
    fn template_validation() {
        assert!(PromptTemplate::new("{sentence}").is_err());
        assert!(PromptTemplate::new("{dialect} {dialect} {sentence}").is_err());
        let tpl = PromptTemplate::default();
        assert!(render_prompt(&tpl, DialectTag::Msa, "x").is_err());
        assert!(render_prompt(&tpl, DialectTag::Gulf, "  ").is_err());
    }

    #[test]
    fn content_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"  نص \n"}}]}"#;
        assert_eq!(extract_content(body).unwrap(), "نص");
        assert!(extract_content("{}").is_err());
        assert!(extract_content("not json").is_err());
        assert!(extract_content(r#"{"choices":[{"message":{"content":3}}]}"#).is_err());
    }

    struct Echo;

    impl ChatBackend for Echo {
        fn send(&self, prompt: &str) -> Result<String> {
            if prompt.contains("fail") {
                return Err(Error::Endpoint("boom".into()));
            }
            Ok(serde_json::json!({"choices":[{"message":{"content":"OK"}}]}).to_string())
        }
    }

    fn msa(id: &str, text: &str, label: u8) -> Sample {
        Sample {
            id: id.into(),
            text: text.into(),
            label,
            dialect: DialectTag::Msa,
            source: SourceTag::ArabicSense,
            parent_id: None,
        }
    }

    #[test]
    fn expansion_copies_labels_and_records_failures() {
        let input = [msa("a", "جملة", 0), msa("b", "fail", 1)];
        let out = expand_dataset(&input, &DialectTag::REGIONAL, &Echo, &PromptTemplate::default(), 3).unwrap();
        assert_eq!(out.records.len(), 8);
        assert_eq!(out.ok_count(), 4);
        assert_eq!(out.failed_count(), 4);
        for s in &out.samples {
            assert_eq!(s.text, "OK");
            assert_eq!(s.label, 0);
            assert_eq!(s.parent_id.as_deref(), Some("a"));
            s.validate().unwrap();
        }
        assert_eq!(out.samples[0].id, "a@egy");
        assert!(expand_dataset(&out.samples, &DialectTag::REGIONAL, &Echo, &PromptTemplate::default(), 1).is_err());
    }

    #[test]
    fn spot_check_clamps_and_is_deterministic() {
        let mut samples = vec![msa("p", "أصل", 1)];
        for i in 0..10 {
            samples.push(Sample {
                id: format!("p@egy{i}"),
                text: format!("نص {i}"),
                label: 1,
                dialect: DialectTag::Egyptian,
                source: SourceTag::ArabicSense,
                parent_id: Some("p".into()),
            });
        }
        let rows = spot_check_sample(&samples, 50, 1);
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|r| r.msa_text == "أصل" && r.verdict.is_empty()));
        let a = spot_check_sample(&samples, 4, 9);
        assert_eq!(a, spot_check_sample(&samples, 4, 9));
        assert_eq!(a.len(), 4);
        let mut buf = Vec::new();
        write_review_sheet(&a, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("parent_id,dialect,msa_text,dialect_text,verdict\n"));
    }
}
