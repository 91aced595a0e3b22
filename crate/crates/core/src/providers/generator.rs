//! Segment text generation: a deterministic stub and a chat-completion client.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{GenerationRequest, GeneratorAdapter};
use crate::error::ProviderError;
use crate::types::{Ad, Composition};

/// Deterministic generator used by the simulations.
///
/// Integrated segments are one sentence naming each winner with its link;
/// appended segments are a fixed base sentence followed by the ad documents.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubGenerator;

pub fn stub_generator() -> StubGenerator {
    StubGenerator
}

impl StubGenerator {
    pub fn base_sentence(query: &str) -> String {
        format!("Here is a short answer to \"{query}\".")
    }
}

fn mention(ad: &Ad) -> String {
    if ad.link.is_empty() {
        ad.id.clone()
    } else {
        format!("{} ({})", ad.id, ad.link)
    }
}

fn join_mentions(ads: &[&Ad]) -> String {
    let parts: Vec<String> = ads.iter().map(|a| mention(a)).collect();
    match parts.len() {
        0 => String::new(),
        1 => parts[0].clone(),
        n => format!("{} and {}", parts[..n - 1].join(", "), parts[n - 1]),
    }
}

impl GeneratorAdapter for StubGenerator {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, ProviderError> {
        let base = Self::base_sentence(request.query);
        Ok(match request.composition {
            Composition::Integrated if request.winners.is_empty() => base,
            Composition::Integrated => format!(
                "Readers asking \"{}\" may also enjoy what {} has to offer.",
                request.query,
                join_mentions(&request.winners)
            ),
            Composition::Append => {
                let mut text = base;
                for ad in &request.winners {
                    text.push(' ');
                    if ad.document.is_empty() {
                        text.push_str(&mention(ad));
                    } else {
                        text.push_str(&ad.document);
                    }
                }
                text
            }
        })
    }
}

/// The three prompt templates, with `{prompt}`, `{advertiser}`, `{ad}`,
/// `{previous_output}`, `{advertisers[i]}` and `{ads[i]}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub init: String,
    pub rest: String,
    pub multi: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplates {
    /// Templates shipped in `templates/`.
    pub fn builtin() -> Self {
        PromptTemplates {
            init: include_str!("../../templates/init_query.txt").to_string(),
            rest: include_str!("../../templates/rest_query.txt").to_string(),
            multi: include_str!("../../templates/multi_query.txt").to_string(),
        }
    }

    /// The query as it is quoted into `{prompt}`.
    fn quoted(query: &str) -> String {
        format!("\"{query}\"")
    }

    /// Opening prompt for a single winner.
    pub fn fill_init(&self, query: &str, ad: &Ad) -> String {
        self.init
            .replace("{prompt}", &Self::quoted(query))
            .replace("{advertiser}", &ad.id)
            .replace("{ad}", &ad.document)
    }

    /// Continuation prompt for a single winner after earlier output.
    pub fn fill_rest(&self, previous_output: &str, ad: &Ad) -> String {
        self.rest
            .replace("{previous_output}", previous_output)
            .replace("{advertiser}", &ad.id)
            .replace("{ad}", &ad.document)
    }

    /// Number of advertiser slots in the multi-ad template.
    pub fn multi_arity(&self) -> usize {
        (0..).take_while(|i| self.multi.contains(&format!("{{advertisers[{i}]}}"))).count()
    }

    /// Prompt placing several winners at once; the winner count must match
    /// the template's slots.
    pub fn fill_multi(&self, query: &str, ads: &[&Ad]) -> Result<String, ProviderError> {
        let arity = self.multi_arity();
        if arity != ads.len() {
            return Err(ProviderError::Template(format!(
                "multi-ad template has {arity} advertiser slots but {} winners were given",
                ads.len()
            )));
        }
        let mut text = self.multi.replace("{prompt}", &Self::quoted(query));
        for (i, ad) in ads.iter().enumerate() {
            text =
                text.replace(&format!("{{advertisers[{i}]}}"), &ad.id).replace(&format!("{{ads[{i}]}}"), &ad.document);
        }
        Ok(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }
}

/// Sends a conversation to a chat-completion service and returns the reply.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteGeneratorConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl RemoteGeneratorConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key_env: impl Into<String>) -> Self {
        RemoteGeneratorConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: api_key_env.into(),
            temperature: 1.0,
            max_tokens: 300,
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

/// OpenAI-style `chat/completions` client.
pub struct HttpChatTransport {
    agent: ureq::Agent,
    config: RemoteGeneratorConfig,
    api_key: String,
}

impl HttpChatTransport {
    pub fn new(config: RemoteGeneratorConfig) -> Result<Self, ProviderError> {
        let api_key =
            std::env::var(&config.api_key_env).map_err(|_| ProviderError::AuthMissing(config.api_key_env.clone()))?;
        let agent = ureq::Agent::config_builder().timeout_global(Some(config.timeout)).build().into();
        Ok(HttpChatTransport { agent, config, api_key })
    }
}

impl ChatTransport for HttpChatTransport {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        let fail =
            |e: &dyn std::fmt::Display| ProviderError::ServiceUnavailable { attempts: 1, message: e.to_string() };
        let body = ChatRequest {
            model: &self.config.model,
            messages,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let mut response = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| fail(&e))?;
        let parsed: ChatResponse = response.body_mut().read_json().map_err(|e| fail(&e))?;
        parsed.choices.into_iter().next().map(|c| c.message.content).ok_or_else(|| fail(&"empty choices"))
    }
}

/// Plays back canned replies in order and records the prompts it was sent.
#[derive(Debug, Default)]
pub struct RecordedChatTransport {
    replies: Mutex<VecDeque<String>>,
    prompts: Mutex<Vec<String>>,
}

impl RecordedChatTransport {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(replies: I) -> Self {
        RecordedChatTransport {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl ChatTransport for RecordedChatTransport {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        if let Some(last) = messages.last() {
            self.prompts.lock().unwrap().push(last.content.clone());
        }
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| ProviderError::ServiceUnavailable { attempts: 1, message: "recording exhausted".into() })
    }
}

/// LLM-backed generator filling the prompt templates.
pub struct RemoteGenerator<T> {
    transport: T,
    templates: PromptTemplates,
}

impl<T: ChatTransport> RemoteGenerator<T> {
    pub fn new(transport: T, templates: PromptTemplates) -> Self {
        RemoteGenerator { transport, templates }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    /// The prompt that `request` turns into.
    pub fn prompt(&self, request: &GenerationRequest<'_>) -> Result<String, ProviderError> {
        match (request.composition, request.winners.as_slice(), request.previous.last()) {
            (Composition::Append, _, _) | (_, [], _) => Ok(PromptTemplates::quoted(request.query)),
            (Composition::Integrated, [ad], None) => Ok(self.templates.fill_init(request.query, ad)),
            (Composition::Integrated, [ad], Some(previous)) => Ok(self.templates.fill_rest(previous, ad)),
            (Composition::Integrated, ads, _) => self.templates.fill_multi(request.query, ads),
        }
    }
}

impl<T: ChatTransport> GeneratorAdapter for RemoteGenerator<T> {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, ProviderError> {
        let prompt = self.prompt(request)?;
        let mut text = self.transport.complete(&[ChatMessage::user(prompt)])?;
        if request.composition == Composition::Append {
            for ad in &request.winners {
                text.push(' ');
                text.push_str(&ad.document);
            }
        }
        Ok(text)
    }
}

/// Generator backed by a live chat-completion endpoint. Fails with
/// `AuthMissing` before any network traffic when the credential is absent.
pub fn remote_generator(
    config: RemoteGeneratorConfig,
    templates: PromptTemplates,
) -> Result<RemoteGenerator<HttpChatTransport>, ProviderError> {
    Ok(RemoteGenerator::new(HttpChatTransport::new(config)?, templates))
}
