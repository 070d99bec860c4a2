//! Text generation backends for profiles and distilled explanations.
//!
//! The template backend is offline and deterministic. The external backend
//! posts `{model, prompt, max_words}` as JSON to `{base_url}/generate` and
//! expects `{text}` back.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::truncate_words;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Template,
    External,
}

/// Structured inputs of one generation call. The template backend works
/// from these; the external backend only sees the filled prompt.
#[derive(Clone, Debug, PartialEq)]
pub enum GenInput {
    Item {
        title: String,
        category: String,
        /// Remaining metadata, sorted by key.
        metadata: Vec<(String, String)>,
        reviews: Vec<String>,
    },
    User {
        item_profiles: Vec<String>,
    },
    Distill {
        review: String,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenRequest {
    pub input: GenInput,
    pub prompt: String,
    pub max_words: usize,
    pub seed: u64,
}

pub trait TextGenerator: Sync {
    fn generate(&self, request: &GenRequest) -> Result<String>;
    fn provenance(&self) -> Provenance;
}

/// Words dropped when extracting aspect keywords from a review.
const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by",
    "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her", "here", "his", "how", "i",
    "if", "in", "into", "is", "it", "its", "just", "me", "more", "most", "my", "no", "not", "of", "on", "one", "or",
    "our", "out", "over", "she", "so", "some", "than", "that", "the", "their", "them", "then", "there", "these",
    "they", "this", "to", "too", "up", "us", "very", "was", "we", "were", "what", "when", "which", "while", "who",
    "will", "with", "would", "you", "your",
];

/// Lowercased non-stopword words of `text`, deduplicated in order of first
/// appearance.
pub fn keywords(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for raw in text.split(|c: char| !c.is_alphanumeric() && c != '\'') {
        let w = raw.trim_matches('\'').to_lowercase();
        if w.is_empty() || STOPWORDS.contains(&w.as_str()) || out.contains(&w) {
            continue;
        }
        out.push(w);
    }
    out
}

fn join_list(words: &[String]) -> String {
    match words {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Leading clause of a profile, up to the first comma or semicolon.
fn headline(profile: &str) -> &str {
    profile.split([',', ';']).next().unwrap_or(profile).trim()
}

/// Fills a template deterministically from the structured fields.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TemplateBackend;

impl TextGenerator for TemplateBackend {
    fn generate(&self, request: &GenRequest) -> Result<String> {
        let text = match &request.input {
            GenInput::Item {
                title,
                category,
                metadata,
                ..
            } => {
                let mut s = format!("{title}, a {category} item");
                for (k, v) in metadata {
                    s.push_str(&format!("; {k}: {v}"));
                }
                s
            }
            GenInput::User { item_profiles } => {
                let heads: Vec<&str> = item_profiles.iter().map(|p| headline(p)).collect();
                format!("enjoys {}", heads.join("; "))
            }
            GenInput::Distill { review } => {
                let kw = keywords(review);
                if kw.is_empty() {
                    return Err(Error::Backend {
                        status: None,
                        message: "review has no content words".into(),
                    });
                }
                format!("the user values {}.", join_list(&kw))
            }
        };
        Ok(truncate_words(&text, request.max_words).to_string())
    }

    fn provenance(&self) -> Provenance {
        Provenance::Template
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalConfig {
    pub base_url: String,
    /// Name of the environment variable holding a bearer token, if any.
    pub auth_token_env: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub retries: usize,
    /// First backoff delay; doubled after every failed attempt.
    pub backoff_ms: u64,
    /// Answer with the template backend when the service keeps failing.
    pub fallback_to_template: bool,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            auth_token_env: None,
            model: "gpt-3.5-turbo".into(),
            timeout_secs: 30,
            retries: 3,
            backoff_ms: 500,
            fallback_to_template: false,
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_words: usize,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

pub struct ExternalBackend {
    config: ExternalConfig,
    agent: ureq::Agent,
}

impl ExternalBackend {
    pub fn new(config: ExternalConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn attempt(&self, request: &GenRequest) -> std::result::Result<String, (bool, Error)> {
        let url = format!("{}/generate", self.config.base_url.trim_end_matches('/'));
        let body = WireRequest {
            model: &self.config.model,
            prompt: &request.prompt,
            max_words: request.max_words,
        };
        let mut req = self.agent.post(&url);
        if let Some(var) = &self.config.auth_token_env {
            if let Ok(token) = std::env::var(var) {
                req = req.header("Authorization", &format!("Bearer {token}"));
            }
        }
        let mut resp = req.send_json(&body).map_err(|e| {
            (
                true,
                Error::Backend {
                    status: None,
                    message: e.to_string(),
                },
            )
        })?;
        let status = resp.status().as_u16();
        if status != 200 {
            let message = resp.body_mut().read_to_string().unwrap_or_default();
            // Client errors other than rate limiting will not improve on retry.
            let retry = status >= 500 || status == 429;
            return Err((
                retry,
                Error::Backend {
                    status: Some(status),
                    message,
                },
            ));
        }
        let parsed: WireResponse = resp.body_mut().read_json().map_err(|e| {
            (
                false,
                Error::Backend {
                    status: Some(status),
                    message: format!("malformed response: {e}"),
                },
            )
        })?;
        Ok(parsed.text)
    }
}

impl TextGenerator for ExternalBackend {
    fn generate(&self, request: &GenRequest) -> Result<String> {
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 0;
        let err = loop {
            match self.attempt(request) {
                Ok(text) => return Ok(truncate_words(text.trim(), request.max_words).to_string()),
                Err((retry, e)) => {
                    if !retry || attempt >= self.config.retries {
                        break e;
                    }
                    log::warn!("text generation attempt {} failed: {e}", attempt + 1);
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        };
        if self.config.fallback_to_template {
            log::warn!("falling back to the template backend: {err}");
            return TemplateBackend.generate(request);
        }
        Err(err)
    }

    fn provenance(&self) -> Provenance {
        Provenance::External
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Template,
    External,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub external: ExternalConfig,
}

impl BackendConfig {
    pub fn build(&self) -> Box<dyn TextGenerator> {
        match self.kind {
            BackendKind::Template => Box::new(TemplateBackend),
            BackendKind::External => Box::new(ExternalBackend::new(self.external.clone())),
        }
    }
}


#[cfg(test)]
mod tests {
    use std::sync::atomic::Ordering;

    use super::*;

    fn distill(review: &str, max_words: usize) -> GenRequest {
        GenRequest {
            input: GenInput::Distill { review: review.into() },
            prompt: review.into(),
            max_words,
            seed: 0,
        }
    }

    fn external(url: String) -> ExternalBackend {
        ExternalBackend::new(ExternalConfig {
            base_url: url,
            backoff_ms: 1,
            timeout_secs: 5,
            ..ExternalConfig::default()
        })
    }

    #[test]
    fn keywords_drop_stopwords_and_repeats() {
        assert_eq!(keywords("Loved the fast shipping and the plot. The plot!"), ["loved", "fast", "shipping", "plot"]);
    }

    #[test]
    fn template_distillation_lists_keywords() {
        let out = TemplateBackend.generate(&distill("Loved the fast shipping and the plot.", 50)).unwrap();
        assert_eq!(out, "the user values loved, fast, shipping and plot.");
    }

    #[test]
    fn canned_response_is_returned() {
        let (url, hits) = stub::serve(vec![(200, r#"{"text":"canned profile"}"#.into())]);
        assert_eq!(external(url).generate(&distill("x", 50)).unwrap(), "canned profile");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn server_errors_are_retried_then_reported() {
        let (url, hits) = stub::serve(vec![(503, "busy".into())]);
        match external(url).generate(&distill("x", 50)) {
            Err(Error::Backend { status, .. }) => assert_eq!(status, Some(503)),
            other => panic!("{other:?}"),
        }
        assert_eq!(hits.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn transient_failure_recovers() {
        let (url, _) = stub::serve(vec![(500, "".into()), (200, r#"{"text":"ok"}"#.into())]);
        assert_eq!(external(url).generate(&distill("x", 50)).unwrap(), "ok");
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, hits) = stub::serve(vec![(401, "no".into())]);
        assert!(external(url).generate(&distill("x", 50)).is_err());
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn fallback_uses_the_template() {
        let (url, _) = stub::serve(vec![(500, "".into())]);
        let b = ExternalBackend::new(ExternalConfig {
            base_url: url,
            backoff_ms: 1,
            retries: 0,
            fallback_to_template: true,
            ..ExternalConfig::default()
        });
        assert_eq!(b.generate(&distill("great plot", 50)).unwrap(), "the user values great and plot.");
    }

    #[test]
    fn long_response_is_capped() {
        let long = vec!["w"; 80].join(" ");
        let (url, _) = stub::serve(vec![(200, format!(r#"{{"text":"{long}"}}"#))]);
        let out = external(url).generate(&distill("x", 50)).unwrap();
        assert_eq!(crate::text::word_count(&out), 50);
    }
}
