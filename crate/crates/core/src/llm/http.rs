use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DecodeParams, LabelLogits, LabelPair, LlmBackend, Prompt};
use crate::error::Result;
use crate::http_client::{HttpConfig, JsonClient, TOKEN_ENV};

#[derive(Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    seed: u64,
}

#[derive(Deserialize)]
struct CompleteResponse {
    text: String,
}

#[derive(Serialize)]
struct LabelRequest<'a> {
    prompt: &'a str,
    labels: [&'a str; 2],
}

#[derive(Deserialize)]
struct LabelResponse {
    logits: BTreeMap<String, f64>,
}

/// Remote LLM over the `/v1/complete` and `/v1/label_logits` JSON endpoints.
pub struct HttpLlm {
    client: JsonClient,
}

impl HttpLlm {
    /// The bearer token is read from `SYNTHRANK_LLM_TOKEN` if set.
    pub fn new(config: HttpConfig) -> Result<Self> {
        Self::with_token(config, std::env::var(TOKEN_ENV).ok())
    }

    pub fn with_token(config: HttpConfig, token: Option<String>) -> Result<Self> {
        Ok(Self { client: JsonClient::new(config, token)? })
    }
}

impl LlmBackend for HttpLlm {
    fn id(&self) -> &str {
        "http-llm-v1"
    }

    fn complete(&self, prompt: &Prompt, params: &DecodeParams) -> Result<String> {
        let body = CompleteRequest {
            prompt: &prompt.text,
            max_tokens: params.max_tokens,
            temperature: params.temperature,
            seed: params.rng_seed,
        };
        self.client.post::<_, CompleteResponse>("/v1/complete", &body, None).map(|r| r.text)
    }

    fn label_logits(&self, prompt: &Prompt, labels: &LabelPair) -> Result<LabelLogits> {
        let body = LabelRequest { prompt: &prompt.text, labels: [&labels.yes, &labels.no] };
        self.client
            .post::<_, LabelResponse>("/v1/label_logits", &body, Some("label-restricted logits"))
            .map(|r| LabelLogits { entries: r.logits })
    }
}
