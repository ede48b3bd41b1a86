use serde::{Deserialize, Serialize};

use super::{AttributeName, PromptError};

/// Categories are separated by periods in multi-category prompts.
pub const DEFAULT_JOINER: &str = ". ";

const OBJ: &str = "OBJ";
const ATTR_PREFIX: &str = "ATTR:";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Object,
    Attribute(String),
}

/// A phrase pattern with `[OBJ]` and `[ATTR:<name>]` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TemplateRepr", into = "TemplateRepr")]
pub struct PromptTemplate {
    pattern: String,
    joiner: String,
    segments: Vec<Segment>,
}

#[derive(Serialize, Deserialize)]
struct TemplateRepr {
    pattern: String,
    #[serde(default = "default_joiner")]
    joiner: String,
}

fn default_joiner() -> String {
    DEFAULT_JOINER.to_string()
}

impl TryFrom<TemplateRepr> for PromptTemplate {
    type Error = PromptError;

    fn try_from(r: TemplateRepr) -> Result<Self, Self::Error> {
        PromptTemplate::with_joiner(&r.pattern, &r.joiner)
    }
}

impl From<PromptTemplate> for TemplateRepr {
    fn from(t: PromptTemplate) -> Self {
        Self {
            pattern: t.pattern,
            joiner: t.joiner,
        }
    }
}

fn malformed(pattern: &str, reason: impl Into<String>) -> PromptError {
    PromptError::MalformedTemplate {
        pattern: pattern.to_string(),
        reason: reason.into(),
    }
}

fn parse(pattern: &str) -> Result<Vec<Segment>, PromptError> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut rest = pattern;
    while let Some(open) = rest.find(['[', ']']) {
        if rest[open..].starts_with(']') {
            return Err(malformed(pattern, "unbalanced ']'"));
        }
        literal.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find(['[', ']'])
            .filter(|&i| after[i..].starts_with(']'))
            .ok_or_else(|| malformed(pattern, "unbalanced '['"))?;
        let body = &after[..close];
        let seg = if body == OBJ {
            Segment::Object
        } else if let Some(name) = body.strip_prefix(ATTR_PREFIX) {
            super::check_attribute_name(name)
                .map_err(|_| malformed(pattern, format!("bad attribute name {name:?}")))?;
            Segment::Attribute(name.to_string())
        } else {
            return Err(malformed(pattern, format!("unknown placeholder [{body}]")));
        };
        if !literal.is_empty() {
            segments.push(Segment::Literal(std::mem::take(&mut literal)));
        }
        segments.push(seg);
        rest = &after[close + 1..];
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }

    let objects = segments.iter().filter(|s| **s == Segment::Object).count();
    if objects != 1 {
        return Err(malformed(
            pattern,
            format!("[OBJ] must appear exactly once, found {objects}"),
        ));
    }
    let mut names: Vec<&str> = segments
        .iter()
        .filter_map(|s| match s {
            Segment::Attribute(n) => Some(n.as_str()),
            _ => None,
        })
        .collect();
    let total = names.len();
    names.sort_unstable();
    names.dedup();
    if names.len() != total {
        return Err(malformed(pattern, "attribute placeholder repeated"));
    }
    Ok(segments)
}

impl PromptTemplate {
    pub fn new(pattern: &str) -> Result<Self, PromptError> {
        Self::with_joiner(pattern, DEFAULT_JOINER)
    }

    pub fn with_joiner(pattern: &str, joiner: &str) -> Result<Self, PromptError> {
        if joiner.contains(['[', ']']) {
            return Err(malformed(pattern, "joiner contains a bracket"));
        }
        Ok(Self {
            pattern: pattern.to_string(),
            joiner: joiner.to_string(),
            segments: parse(pattern)?,
        })
    }

    /// The default prompt: the bare category name.
    pub fn class_name() -> Self {
        Self::new("[OBJ]").expect("static pattern")
    }

    /// Descriptors before the object, comma separated, and the location
    /// after it: `[ATTR:shape], [ATTR:color] [OBJ] in [ATTR:location]`.
    pub fn attribute_list(attributes: &[AttributeName]) -> Self {
        let prefix: Vec<String> = attributes
            .iter()
            .filter(|a| !a.is_location())
            .map(|a| format!("[ATTR:{}]", a.name()))
            .collect();
        let mut pattern = prefix.join(", ");
        if !pattern.is_empty() {
            pattern.push(' ');
        }
        pattern.push_str("[OBJ]");
        for a in attributes.iter().filter(|a| a.is_location()) {
            pattern.push_str(&format!(" in [ATTR:{}]", a.name()));
        }
        Self::new(&pattern).expect("generated pattern is well formed")
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn joiner(&self) -> &str {
        &self.joiner
    }

    /// Attribute names in placeholder order.
    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Attribute(n) => Some(n.as_str()),
            _ => None,
        })
    }

    pub(crate) fn render<'v, F>(&self, object: &str, mut lookup: F) -> Result<String, PromptError>
    where
        F: FnMut(&str) -> Result<&'v str, PromptError>,
    {
        let mut out = String::with_capacity(self.pattern.len() + object.len());
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Object => out.push_str(object),
                Segment::Attribute(name) => out.push_str(lookup(name)?),
            }
        }
        Ok(out)
    }
}
