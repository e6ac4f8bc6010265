use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placeholder that receives the rendered few-shot block.
pub const EXAMPLES_PLACEHOLDER: &str = "examples";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub document: String,
    pub query: String,
}

/// Instruction text with `{name}` placeholders plus ordered few-shot pairs.
///
/// The few-shot block goes where `{examples}` appears, or ahead of the whole
/// instruction when the marker is absent. Either way it precedes every bound
/// placeholder; a template that puts `{examples}` after a content
/// placeholder is rejected. `{{` and `}}` render as literal braces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub instruction: String,
    #[serde(default)]
    pub few_shot_examples: Vec<FewShotExample>,
}

/// A rendered prompt together with the bindings that produced it.
///
/// Remote backends only see `text`; the bindings let the mock backends stay
/// pure functions of the bound query and document.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Prompt {
    pub text: String,
    pub bindings: BTreeMap<String, String>,
}

impl From<&str> for Prompt {
    fn from(text: &str) -> Self {
        Prompt { text: text.to_string(), bindings: BTreeMap::new() }
    }
}

enum Piece<'a> {
    Literal(std::borrow::Cow<'a, str>),
    Placeholder(&'a str),
}

fn parse(instruction: &str) -> Result<Vec<Piece<'_>>> {
    let mut pieces = Vec::new();
    let mut lit = String::new();
    let bytes = instruction.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                lit.push('{');
                i += 2;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                lit.push('}');
                i += 2;
            }
            b'{' => {
                let close = instruction[i..]
                    .find('}')
                    .map(|j| i + j)
                    .ok_or_else(|| Error::Template(format!("unclosed `{{` at byte {i}")))?;
                let name = &instruction[i + 1..close];
                if name.is_empty() || !name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
                    return Err(Error::Template(format!("invalid placeholder `{{{name}}}`")));
                }
                if !lit.is_empty() {
                    pieces.push(Piece::Literal(std::mem::take(&mut lit).into()));
                }
                pieces.push(Piece::Placeholder(name));
                i = close + 1;
            }
            _ => {
                let ch = instruction[i..].chars().next().expect("in bounds");
                lit.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    if !lit.is_empty() {
        pieces.push(Piece::Literal(lit.into()));
    }
    Ok(pieces)
}

impl PromptTemplate {
    pub fn new(id: &str, instruction: &str) -> Self {
        Self { id: id.to_string(), instruction: instruction.to_string(), few_shot_examples: Vec::new() }
    }

    pub fn with_examples(mut self, examples: Vec<FewShotExample>) -> Self {
        self.few_shot_examples = examples;
        self
    }

    /// Placeholder names referenced by the instruction, in order of first use.
    pub fn placeholders(&self) -> Result<Vec<String>> {
        let mut out: Vec<String> = Vec::new();
        for p in parse(&self.instruction)? {
            if let Piece::Placeholder(name) = p {
                if name != EXAMPLES_PLACEHOLDER && !out.iter().any(|n| n == name) {
                    out.push(name.to_string());
                }
            }
        }
        Ok(out)
    }

    fn examples_block(&self) -> String {
        let mut s = String::new();
        for (i, ex) in self.few_shot_examples.iter().enumerate() {
            s.push_str(&format!("Example {}\nPassage: {}\nQuery: {}\n\n", i + 1, ex.document, ex.query));
        }
        s
    }

    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<Prompt> {
        let pieces = parse(&self.instruction)?;
        let has_marker = pieces.iter().any(|p| matches!(p, Piece::Placeholder(n) if *n == EXAMPLES_PLACEHOLDER));
        let mut text = String::new();
        if !has_marker {
            text.push_str(&self.examples_block());
        }
        let mut seen_content = false;
        for p in pieces {
            match p {
                Piece::Literal(l) => text.push_str(&l),
                Piece::Placeholder(EXAMPLES_PLACEHOLDER) => {
                    if seen_content {
                        return Err(Error::Template(format!(
                            "template `{}`: {{examples}} must precede bound placeholders",
                            self.id
                        )));
                    }
                    text.push_str(&self.examples_block());
                }
                Piece::Placeholder(name) => {
                    let value = bindings
                        .get(name)
                        .ok_or_else(|| Error::Template(format!("missing binding for `{{{name}}}`")))?;
                    seen_content = true;
                    text.push_str(value);
                }
            }
        }
        Ok(Prompt { text, bindings: bindings.clone() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&raw).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })
    }

    /// Default few-shot query generation template.
    pub fn default_generation() -> Self {
        PromptTemplate::new(
            "querygen-default-v1",
            "You write the search query a user would type to find a passage.\n\
             Answer with the query only, on one line.\n\n\
             {examples}Passage: {seed_document}\nQuery:",
        )
        .with_examples(vec![
            FewShotExample {
                document: "Glaucoma is a group of eye diseases that damage the optic nerve, \
                           usually because of raised pressure inside the eye."
                    .into(),
                query: "what causes optic nerve damage in glaucoma".into(),
            },
            FewShotExample {
                document: "Iron deficiency anemia develops when the body lacks enough iron to \
                           produce hemoglobin for red blood cells."
                    .into(),
                query: "why does low iron cause anemia".into(),
            },
            FewShotExample {
                document: "Most cases of shingles clear up within three to five weeks, though \
                           nerve pain can persist for months in older adults."
                    .into(),
                query: "how long does shingles pain last".into(),
            },
        ])
    }

    /// Default yes/no relevance classification template.
    pub fn default_relevance() -> Self {
        PromptTemplate::new(
            "relevance-default-v1",
            "Decide whether the passage answers the query.\n\
             Query: {query}\nPassage: {document}\n\
             Is the passage relevant to the query? Answer Yes or No.\nAnswer:",
        )
    }
}

/// Render `template` with `bindings` into plain prompt text.
pub fn render_prompt(template: &PromptTemplate, bindings: &BTreeMap<String, String>) -> Result<String> {
    template.render(bindings).map(|p| p.text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn substitutes_without_examples() {
        let t = PromptTemplate::new("t", "Doc: {seed_document}!");
        assert_eq!(render_prompt(&t, &bind(&[("seed_document", "abc")])).unwrap(), "Doc: abc!");
    }

    #[test]
    fn examples_render_in_order_before_content() {
        let t = PromptTemplate::default_generation();
        let out = render_prompt(&t, &bind(&[("seed_document", "SEEDTEXT")])).unwrap();
        let positions: Vec<usize> =
            t.few_shot_examples.iter().map(|ex| out.find(&ex.query).expect("example present")).collect();
        assert_eq!(positions.len(), 3);
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(positions[2] < out.find("SEEDTEXT").unwrap());
    }

    #[test]
    fn examples_prepended_without_marker() {
        let t = PromptTemplate::new("t", "Write a query for: {seed_document}")
            .with_examples(vec![FewShotExample { document: "d".into(), query: "EXQ".into() }]);
        let out = render_prompt(&t, &bind(&[("seed_document", "S")])).unwrap();
        assert!(out.find("EXQ").unwrap() < out.find("Write a query").unwrap());
    }

    #[test]
    fn missing_binding_names_placeholder() {
        let t = PromptTemplate::default_generation();
        let err = render_prompt(&t, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::Template(ref m) if m.contains("seed_document")));
    }

    #[test]
    fn escapes_and_bad_placeholders() {
        let t = PromptTemplate::new("t", "{{literal}} {query}");
        assert_eq!(render_prompt(&t, &bind(&[("query", "q")])).unwrap(), "{literal} q");
        assert!(PromptTemplate::new("t", "{Bad Name}").placeholders().is_err());
        assert!(PromptTemplate::new("t", "open {query").placeholders().is_err());
        let late = PromptTemplate::new("t", "{query} {examples}");
        assert!(late.render(&bind(&[("query", "q")])).is_err());
    }

    #[test]
    fn template_toml_round_trip() {
        let t = PromptTemplate::default_generation();
        let s = toml::to_string(&t).unwrap();
        let back: PromptTemplate = toml::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
