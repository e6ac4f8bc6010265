//! LLM gateway: free-text completion and label-restricted logit scoring.
//!
//! The gateway never turns logits into probabilities; that happens in
//! [`crate::mining::relevance_probability`].

mod http;
mod mock;
mod template;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use http::HttpLlm;
pub use mock::{MockLlm, MOCK_LOGIT_SCALE};
pub use template::{render_prompt, FewShotExample, Prompt, PromptTemplate, EXAMPLES_PLACEHOLDER};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub max_tokens: usize,
    pub temperature: f64,
    pub rng_seed: u64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self { max_tokens: 64, temperature: 0.0, rng_seed: 0 }
    }
}

/// The two labels whose logits are requested, relevant label first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelPair {
    pub yes: String,
    pub no: String,
}

impl Default for LabelPair {
    fn default() -> Self {
        Self { yes: "Yes".into(), no: "No".into() }
    }
}

impl LabelPair {
    pub fn new(yes: &str, no: &str) -> Self {
        Self { yes: yes.into(), no: no.into() }
    }

    fn validate(&self) -> Result<()> {
        if self.yes.is_empty() || self.no.is_empty() {
            return Err(Error::Argument("labels must be non-empty".into()));
        }
        if self.yes == self.no {
            return Err(Error::Argument(format!("labels must be distinct, got `{}` twice", self.yes)));
        }
        Ok(())
    }
}

/// Raw logits keyed by label string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelLogits {
    pub entries: BTreeMap<String, f64>,
}

impl LabelLogits {
    pub fn get(&self, label: &str) -> Option<f64> {
        self.entries.get(label).copied()
    }

    fn validate(&self, labels: &LabelPair) -> Result<()> {
        if self.entries.len() != 2 || !self.entries.contains_key(&labels.yes) || !self.entries.contains_key(&labels.no)
        {
            let got: Vec<_> = self.entries.keys().collect();
            return Err(Error::Capability(format!(
                "backend returned logits for {got:?}, expected exactly [{:?}, {:?}]",
                labels.yes, labels.no
            )));
        }
        if let Some((k, v)) = self.entries.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Gateway { message: format!("non-finite logit {v} for `{k}`"), retryable: false });
        }
        Ok(())
    }
}

/// A language model reachable by the pipeline.
///
/// Implementations must be safe for concurrent use.
pub trait LlmBackend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, prompt: &Prompt, params: &DecodeParams) -> Result<String>;

    /// Logits for exactly the two requested labels as the next continuation.
    /// Backends that cannot restrict scoring to given labels return
    /// [`Error::Capability`].
    fn label_logits(&self, prompt: &Prompt, labels: &LabelPair) -> Result<LabelLogits>;
}

/// Completion with the gateway's pre- and post-conditions enforced.
pub fn complete(backend: &dyn LlmBackend, prompt: &Prompt, params: &DecodeParams) -> Result<String> {
    if prompt.text.trim().is_empty() {
        return Err(Error::Argument("prompt is empty".into()));
    }
    let text = backend.complete(prompt, params)?;
    if text.trim().is_empty() {
        return Err(Error::Generation(format!("backend `{}` produced an empty completion", backend.id())));
    }
    Ok(text)
}

/// Label scoring with the gateway's pre- and post-conditions enforced.
pub fn label_logits(backend: &dyn LlmBackend, prompt: &Prompt, labels: &LabelPair) -> Result<LabelLogits> {
    labels.validate()?;
    if prompt.text.trim().is_empty() {
        return Err(Error::Argument("prompt is empty".into()));
    }
    let logits = backend.label_logits(prompt, labels)?;
    logits.validate(labels)?;
    Ok(logits)
}
