//! Negative labels from a chat-completion endpoint.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{sanitize, NegativeCorpus, NegativeLabelSet, NegativeSource, NegativesError};
use crate::fsutil::write_atomic;

/// The single user message sent for `target`.
pub fn prompt_for(target: &str, k: usize) -> String {
    format!(
        "List exactly {k} object classes that could be visually confused with a '{target}'. \
         Respond only with a comma-separated list of class names."
    )
}

/// Anything that turns a prompt into the assistant's raw text.
pub trait CompletionBackend {
    fn complete(&self, prompt: &str) -> Result<String, NegativesError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Full URL of the chat-completions route.
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Minimum spacing between consecutive requests.
    pub min_interval_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            url: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            min_interval_ms: 500,
        }
    }
}

/// Blocking chat-completions client. Requests go out one at a time, spaced by
/// at least `min_interval_ms`; temperature is pinned to 0.
pub struct HttpChatClient {
    config: LlmConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    last_request: Mutex<Option<Instant>>,
}

impl HttpChatClient {
    pub fn new(config: LlmConfig) -> Result<Self, NegativesError> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!(
                "{} is not set; sending requests without credentials",
                config.api_key_env
            );
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| NegativesError::EndpointUnreachable(e.to_string()))?;
        Ok(Self {
            config,
            api_key,
            client,
            last_request: Mutex::new(None),
        })
    }

    pub fn request_body(&self, prompt: &str) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        })
    }
}

/// Pulls `choices[0].message.content` out of a chat-completions response.
pub fn parse_chat_response(body: &str) -> Result<String, NegativesError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| NegativesError::UnparseableResponse(format!("invalid json: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(String::from)
        .ok_or_else(|| NegativesError::UnparseableResponse("missing choices[0].message.content".into()))
}

impl CompletionBackend for HttpChatClient {
    fn complete(&self, prompt: &str) -> Result<String, NegativesError> {
        let mut last = self.last_request.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(t) = *last {
            let gap = Duration::from_millis(self.config.min_interval_ms);
            if let Some(wait) = gap.checked_sub(t.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        let mut req = self.client.post(&self.config.url).json(&self.request_body(prompt));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let result = req.send();
        *last = Some(Instant::now());
        let resp = result.map_err(|e| NegativesError::EndpointUnreachable(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| NegativesError::EndpointUnreachable(e.to_string()))?;
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(NegativesError::AuthFailure(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(NegativesError::EndpointUnreachable(format!("HTTP {status}: {body}")));
        }
        parse_chat_response(&body)
    }
}

/// One recorded exchange. A list of these is both the raw-response cache and
/// the replay fixture format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub target: String,
    pub k: usize,
    pub prompt: String,
    pub response: String,
    pub negatives: Vec<String>,
}

pub fn load_transcripts(path: impl AsRef<Path>) -> Result<Vec<Transcript>, NegativesError> {
    let path = path.as_ref();
    match fs::read_to_string(path) {
        Ok(text) => Ok(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(source) => Err(NegativesError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

pub fn save_transcripts(transcripts: &[Transcript], path: impl AsRef<Path>) -> Result<(), NegativesError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(transcripts)?;
    write_atomic(path, text.as_bytes()).map_err(|source| NegativesError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Replays recorded responses keyed by prompt.
#[derive(Debug, Default)]
pub struct FixtureBackend {
    responses: HashMap<String, Vec<String>>,
    cursor: Mutex<HashMap<String, usize>>,
}

impl FixtureBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a response for `prompt`. Several responses for the same
    /// prompt are replayed in order (the last one repeats).
    pub fn with_response(mut self, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        self.responses.entry(prompt.into()).or_default().push(response.into());
        self
    }

    pub fn from_transcripts(transcripts: &[Transcript]) -> Self {
        transcripts.iter().fold(Self::new(), |b, t| {
            b.with_response(t.prompt.clone(), t.response.clone())
        })
    }
}

impl CompletionBackend for FixtureBackend {
    fn complete(&self, prompt: &str) -> Result<String, NegativesError> {
        let list = self
            .responses
            .get(prompt)
            .ok_or_else(|| NegativesError::NoFixture(prompt.to_string()))?;
        let mut cursor = self.cursor.lock().unwrap_or_else(|e| e.into_inner());
        let i = cursor.entry(prompt.to_string()).or_default();
        let out = list[(*i).min(list.len() - 1)].clone();
        *i += 1;
        Ok(out)
    }
}

/// Asks the backend for `k` negatives of `target`, retrying once when the
/// answer cannot be parsed or sanitizes to nothing.
pub fn query_llm_negatives<B: CompletionBackend + ?Sized>(
    target: &str,
    k: usize,
    backend: &B,
) -> Result<(NegativeLabelSet, Transcript), NegativesError> {
    let k = k.max(1);
    let prompt = prompt_for(target, k);
    let mut last_err = None;
    for _ in 0..2 {
        let response = match backend.complete(&prompt) {
            Ok(r) => r,
            Err(e @ NegativesError::UnparseableResponse(_)) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let negatives = sanitize(&response, target, k);
        if negatives.is_empty() {
            last_err = Some(NegativesError::EmptyAfterSanitization(target.to_string()));
            continue;
        }
        if negatives.len() < k {
            log::warn!("{target:?}: {} of {k} negatives survived sanitization", negatives.len());
        }
        let set = NegativeLabelSet::new(target, negatives.clone(), k, NegativeSource::Llm)?;
        let transcript = Transcript {
            target: target.to_string(),
            k,
            prompt,
            response,
            negatives,
        };
        return Ok((set, transcript));
    }
    Err(last_err.expect("loop ran"))
}

/// Fills `corpus` with LLM negatives for every target it lacks (or holds with
/// fewer than `k` entries), appending each raw exchange to `transcripts`.
/// Requests go out one target at a time.
pub fn extend_corpus_with_llm<B: CompletionBackend + ?Sized>(
    corpus: &mut NegativeCorpus,
    transcripts: &mut Vec<Transcript>,
    targets: &[String],
    k: usize,
    backend: &B,
) -> Result<usize, NegativesError> {
    let mut added = 0;
    for target in targets {
        if corpus.entry(target).is_some_and(|s| s.len() >= k) {
            continue;
        }
        let (set, transcript) = query_llm_negatives(target, k, backend)?;
        corpus.insert(set);
        transcripts.retain(|t| !(t.target == transcript.target && t.k == transcript.k));
        transcripts.push(transcript);
        added += 1;
    }
    Ok(added)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PUG: &str = "French Bulldog, Boxer, Shih Tzu, Cavalier King Charles Spaniel, Boston Terrier, \
                       Bulldog, Bullmastiff, Staffordshire Bull Terrier, Lhasa Apso, Pekingese";

    #[test]
    fn prompt_text() {
        assert_eq!(
            prompt_for("Pug", 10),
            "List exactly 10 object classes that could be visually confused with a 'Pug'. \
             Respond only with a comma-separated list of class names."
        );
    }

    #[test]
    fn pug_fixture() {
        let backend = FixtureBackend::new().with_response(prompt_for("Pug", 10), PUG);
        let (set, transcript) = query_llm_negatives("Pug", 10, &backend).unwrap();
        assert_eq!(
            set.negatives(),
            &[
                "French Bulldog",
                "Boxer",
                "Shih Tzu",
                "Cavalier King Charles Spaniel",
                "Boston Terrier",
                "Bulldog",
                "Bullmastiff",
                "Staffordshire Bull Terrier",
                "Lhasa Apso",
                "Pekingese"
            ]
        );
        assert_eq!(set.source(), NegativeSource::Llm);
        assert_eq!(transcript.response, PUG);
    }

    #[test]
    fn target_in_response_is_removed() {
        let backend = FixtureBackend::new().with_response(prompt_for("cat", 3), "lynx, Cat, ocelot");
        let (set, _) = query_llm_negatives("cat", 3, &backend).unwrap();
        assert_eq!(set.negatives(), &["lynx", "ocelot"]);
    }

    #[test]
    fn retries_once_then_fails() {
        let backend = FixtureBackend::new()
            .with_response(prompt_for("cat", 3), "cat")
            .with_response(prompt_for("cat", 3), "lynx");
        assert_eq!(
            query_llm_negatives("cat", 3, &backend).unwrap().0.negatives(),
            &["lynx"]
        );

        let backend = FixtureBackend::new().with_response(prompt_for("cat", 3), " , cat");
        assert!(matches!(
            query_llm_negatives("cat", 3, &backend),
            Err(NegativesError::EmptyAfterSanitization(_))
        ));
        assert!(matches!(
            query_llm_negatives("dog", 3, &backend),
            Err(NegativesError::NoFixture(_))
        ));
    }

    #[test]
    fn unparseable_bodies() {
        assert!(parse_chat_response("not json").is_err());
        assert!(parse_chat_response(r#"{"choices": []}"#).is_err());
        assert_eq!(
            parse_chat_response(r#"{"choices":[{"message":{"role":"assistant","content":"a, b"}}]}"#).unwrap(),
            "a, b"
        );
    }

    struct AlwaysGarbled;
    impl CompletionBackend for AlwaysGarbled {
        fn complete(&self, _: &str) -> Result<String, NegativesError> {
            Err(NegativesError::UnparseableResponse("garbled".into()))
        }
    }

    #[test]
    fn unparseable_after_retry() {
        assert!(matches!(
            query_llm_negatives("cat", 3, &AlwaysGarbled),
            Err(NegativesError::UnparseableResponse(_))
        ));
    }

    #[test]
    fn extend_corpus_skips_cached_targets() {
        let mut corpus = NegativeCorpus::from_json_str(r#"{"cat": ["lynx","ocelot"]}"#).unwrap();
        let backend = FixtureBackend::new().with_response(prompt_for("Pug", 2), "Boxer, Bulldog");
        let mut transcripts = Vec::new();
        let targets = vec!["cat".to_string(), "Pug".to_string()];
        let added = extend_corpus_with_llm(&mut corpus, &mut transcripts, &targets, 2, &backend).unwrap();
        assert_eq!(added, 1);
        assert_eq!(corpus.get("Pug", 2).unwrap().negatives(), &["Boxer", "Bulldog"]);
        assert_eq!(transcripts.len(), 1);
    }

    #[test]
    fn transcripts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        assert!(load_transcripts(&path).unwrap().is_empty());
        let backend = FixtureBackend::new().with_response(prompt_for("Pug", 10), PUG);
        let (_, t) = query_llm_negatives("Pug", 10, &backend).unwrap();
        save_transcripts(std::slice::from_ref(&t), &path).unwrap();
        let back = load_transcripts(&path).unwrap();
        assert_eq!(back, vec![t]);
        let replay = FixtureBackend::from_transcripts(&back);
        assert_eq!(query_llm_negatives("Pug", 10, &replay).unwrap().0.len(), 10);
    }
}
