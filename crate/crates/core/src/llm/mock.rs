use std::collections::{BTreeMap, HashSet};

use super::{DecodeParams, LabelLogits, LabelPair, LlmBackend, Prompt};
use crate::error::{Error, Result};
use crate::text;

/// Scale of the mock relevance rule `z_yes − z_no = α·(2·J − 1)`.
pub const MOCK_LOGIT_SCALE: f64 = 10.0;

/// Number of leading words of the first sentence used by the mock query rule.
const HEAD_TOKENS: usize = 6;

const LEADS: [&str; 4] = ["What is", "What are", "How does", "Why is"];

/// Deterministic offline LLM.
///
/// * completion: reads the `seed_document` binding (or the prompt text when
///   unbound) and answers `"<Lead> <first six words of its first sentence>?"`,
///   the lead picked by hashing `(prompt, rng_seed)`;
/// * label scoring: Jaccard overlap `J` of the word sets of the `query` and
///   `document` bindings gives `z_yes = α·(2J − 1)` and `z_no = 0`.
#[derive(Debug, Clone, Default)]
pub struct MockLlm;

impl MockLlm {
    pub fn new() -> Self {
        MockLlm
    }
}

/// Jaccard similarity of the lowercased word sets of `a` and `b`.
pub(crate) fn jaccard(a: &str, b: &str) -> f64 {
    let a: HashSet<String> = text::words(a).into_iter().collect();
    let b: HashSet<String> = text::words(b).into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

fn binding<'a>(prompt: &'a Prompt, name: &str) -> Result<&'a str> {
    prompt
        .bindings
        .get(name)
        .map(String::as_str)
        .ok_or_else(|| Error::Argument(format!("mock backend needs a `{{{name}}}` binding")))
}

impl LlmBackend for MockLlm {
    fn id(&self) -> &str {
        "mock-llm-v1"
    }

    fn complete(&self, prompt: &Prompt, params: &DecodeParams) -> Result<String> {
        let source = prompt.bindings.get("seed_document").map(String::as_str).unwrap_or(&prompt.text);
        let head: Vec<String> = text::words(text::first_sentence(source)).into_iter().take(HEAD_TOKENS).collect();
        if head.is_empty() {
            return Ok(String::new());
        }
        let lead = LEADS[(text::fnv1a(params.rng_seed, prompt.text.as_bytes()) % LEADS.len() as u64) as usize];
        Ok(format!("{lead} {}?", head.join(" ")))
    }

    fn label_logits(&self, prompt: &Prompt, labels: &LabelPair) -> Result<LabelLogits> {
        let j = jaccard(binding(prompt, "query")?, binding(prompt, "document")?);
        let mut entries = BTreeMap::new();
        entries.insert(labels.yes.clone(), MOCK_LOGIT_SCALE * (2.0 * j - 1.0));
        entries.insert(labels.no.clone(), 0.0);
        Ok(LabelLogits { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{complete, label_logits};

    fn prompt(pairs: &[(&str, &str)]) -> Prompt {
        Prompt {
            text: pairs.iter().map(|(_, v)| *v).collect::<Vec<_>>().join("\n"),
            bindings: pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    #[test]
    fn completion_is_deterministic_and_follows_rule() {
        let p = prompt(&[("seed_document", "Glaucoma damages the optic nerve slowly over years. Treat early.")]);
        let dp = DecodeParams { rng_seed: 11, ..Default::default() };
        let a = complete(&MockLlm, &p, &dp).unwrap();
        let b = complete(&MockLlm, &p, &dp).unwrap();
        assert_eq!(a, b);
        let lead = LEADS.iter().find(|l| a.starts_with(*l)).expect("known lead");
        assert_eq!(a, format!("{lead} glaucoma damages the optic nerve slowly?"));
    }

    #[test]
    fn disjoint_texts_score_negative() {
        let p = prompt(&[("query", "alpha beta"), ("document", "gamma delta")]);
        let l = label_logits(&MockLlm, &p, &LabelPair::default()).unwrap();
        assert_eq!(l.entries.len(), 2);
        assert!(l.get("Yes").unwrap() - l.get("No").unwrap() < 0.0);
        assert_eq!(l.get("Yes").unwrap(), -10.0);
    }

    #[test]
    fn logits_follow_jaccard_rule() {
        // {a,b,c} vs {b,c,d}: J = 2/4
        let p = prompt(&[("query", "a b c"), ("document", "B c d.")]);
        let l = label_logits(&MockLlm, &p, &LabelPair::default()).unwrap();
        assert_eq!(l.get("Yes").unwrap(), 0.0);
        let p = prompt(&[("query", "a b"), ("document", "a b")]);
        assert_eq!(label_logits(&MockLlm, &p, &LabelPair::default()).unwrap().get("Yes").unwrap(), 10.0);
    }

    #[test]
    fn custom_labels_are_keys() {
        let p = prompt(&[("query", "a"), ("document", "a")]);
        let l = label_logits(&MockLlm, &p, &LabelPair::new("true", "false")).unwrap();
        assert_eq!(l.entries.keys().collect::<Vec<_>>(), ["false", "true"]);
    }
}
