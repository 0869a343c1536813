//! Layered prompt templates.
//!
//! A template is an ordered list of layers (framework, content, style). Layer
//! bodies use `{name}` placeholders; `{{` and `}}` produce literal braces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template {0} has no layers")]
    NoLayers(String),
    #[error("template {template} declares layer {layer} twice")]
    DuplicateLayer { template: String, layer: LayerName },
    #[error("template {template}, layer {layer}: {detail}")]
    Malformed {
        template: String,
        layer: LayerName,
        detail: String,
    },
    #[error("missing value for placeholder {0}")]
    MissingPlaceholder(String),
    #[error("template {template} has no {layer} layer")]
    MissingLayer { template: String, layer: LayerName },
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("parsing templates: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerName {
    Framework,
    Content,
    Style,
}

impl fmt::Display for LayerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerName::Framework => "framework",
            LayerName::Content => "content",
            LayerName::Style => "style",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLayer {
    pub name: LayerName,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate", into = "RawTemplate")]
pub struct PromptTemplate {
    id: String,
    layers: Vec<PromptLayer>,
    compiled: Vec<Vec<Segment>>,
}

#[derive(Serialize, Deserialize)]
struct RawTemplate {
    id: String,
    layers: Vec<PromptLayer>,
}

impl TryFrom<RawTemplate> for PromptTemplate {
    type Error = PromptError;

    fn try_from(raw: RawTemplate) -> Result<Self, Self::Error> {
        PromptTemplate::new(raw.id, raw.layers)
    }
}

impl From<PromptTemplate> for RawTemplate {
    fn from(t: PromptTemplate) -> Self {
        RawTemplate {
            id: t.id,
            layers: t.layers,
        }
    }
}

fn compile(template: &str, layer: LayerName, body: &str) -> Result<Vec<Segment>, PromptError> {
    let malformed = |detail: String| PromptError::Malformed {
        template: template.to_string(),
        layer,
        detail,
    };
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut chars = body.char_indices().peekable();
    while let Some((pos, c)) = chars.next() {
        match c {
            '{' if matches!(chars.peek(), Some((_, '{'))) => {
                chars.next();
                literal.push('{');
            }
            '}' if matches!(chars.peek(), Some((_, '}'))) => {
                chars.next();
                literal.push('}');
            }
            '{' => {
                let mut name = String::new();
                let mut closed = false;
                for (_, c) in chars.by_ref() {
                    if c == '}' {
                        closed = true;
                        break;
                    }
                    name.push(c);
                }
                if !closed {
                    return Err(malformed(format!("unclosed placeholder at byte {pos}")));
                }
                if name.is_empty() {
                    return Err(malformed(format!("empty placeholder at byte {pos}")));
                }
                if !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(malformed(format!("invalid placeholder name {name:?}")));
                }
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Placeholder(name));
            }
            '}' => return Err(malformed(format!("unmatched '}}' at byte {pos}"))),
            c => literal.push(c),
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, layers: Vec<PromptLayer>) -> Result<Self, PromptError> {
        let id = id.into();
        if layers.is_empty() {
            return Err(PromptError::NoLayers(id));
        }
        let mut seen = BTreeSet::new();
        let mut compiled = Vec::with_capacity(layers.len());
        for layer in &layers {
            if !seen.insert(layer.name) {
                return Err(PromptError::DuplicateLayer {
                    template: id,
                    layer: layer.name,
                });
            }
            compiled.push(compile(&id, layer.name, &layer.body)?);
        }
        Ok(Self { id, layers, compiled })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn layers(&self) -> &[PromptLayer] {
        &self.layers
    }

    /// Every placeholder name used by any layer.
    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.compiled
            .iter()
            .flatten()
            .filter_map(|s| match s {
                Segment::Placeholder(p) => Some(p.as_str()),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    fn layer_index(&self, name: LayerName) -> Result<usize, PromptError> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| PromptError::MissingLayer {
                template: self.id.clone(),
                layer: name,
            })
    }
}

fn substitute(segments: &[Segment], params: &BTreeMap<String, String>, out: &mut String) -> Result<(), PromptError> {
    for segment in segments {
        match segment {
            Segment::Literal(text) => out.push_str(text),
            Segment::Placeholder(name) => match params.get(name) {
                Some(value) => out.push_str(value),
                None => return Err(PromptError::MissingPlaceholder(name.clone())),
            },
        }
    }
    Ok(())
}

fn log_unknown<'a>(template: &PromptTemplate, used: impl IntoIterator<Item = &'a str>, params: &BTreeMap<String, String>) {
    let used: BTreeSet<&str> = used.into_iter().collect();
    for key in params.keys() {
        if !used.contains(key.as_str()) {
            tracing::debug!(template = template.id(), param = %key, "ignoring unknown prompt parameter");
        }
    }
}

/// Renders every layer in declared order, separated by a blank line.
pub fn render_prompt(template: &PromptTemplate, params: &BTreeMap<String, String>) -> Result<String, PromptError> {
    let mut out = String::new();
    for (i, segments) in template.compiled.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        substitute(segments, params, &mut out)?;
    }
    log_unknown(template, template.placeholders(), params);
    Ok(out)
}

/// Renders a single layer; only that layer's placeholders must be supplied.
pub fn render_layer(
    template: &PromptTemplate,
    layer: LayerName,
    params: &BTreeMap<String, String>,
) -> Result<String, PromptError> {
    let idx = template.layer_index(layer)?;
    let mut out = String::new();
    substitute(&template.compiled[idx], params, &mut out)?;
    let used = template.compiled[idx].iter().filter_map(|s| match s {
        Segment::Placeholder(p) => Some(p.as_str()),
        Segment::Literal(_) => None,
    });
    log_unknown(template, used, params);
    Ok(out)
}

/// Convenience for building parameter maps inline.
pub fn params<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}

/// Templates keyed by id.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateSet {
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let list: Vec<PromptTemplate> = serde_json::from_str(text).map_err(|e| PromptError::Parse(e.to_string()))?;
        let mut templates = BTreeMap::new();
        for t in list {
            if templates.contains_key(t.id()) {
                return Err(PromptError::Parse(format!("duplicate template id {}", t.id())));
            }
            templates.insert(t.id().to_string(), t);
        }
        Ok(Self { templates })
    }

    pub fn seed() -> Self {
        Self::from_json(crate::kb::seed::PROMPTS).expect("embedded prompt templates are valid")
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(id)
            .ok_or_else(|| PromptError::UnknownTemplate(id.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layer(name: LayerName, body: &str) -> PromptLayer {
        PromptLayer {
            name,
            body: body.to_string(),
        }
    }

    #[test]
    fn substitutes_all_placeholders() {
        let t = PromptTemplate::new(
            "case",
            vec![layer(
                LayerName::Framework,
                "Generate a case framework for {disorder} at difficulty {d}",
            )],
        )
        .unwrap();
        let out = render_prompt(&t, &params([("disorder", "major depressive disorder"), ("d", "3")])).unwrap();
        assert_eq!(out, "Generate a case framework for major depressive disorder at difficulty 3");
        assert!(!out.contains('{') && !out.contains('}'));
    }

    #[test]
    fn layers_render_in_declared_order() {
        let t = PromptTemplate::new(
            "three",
            vec![
                layer(LayerName::Framework, "F:{a}"),
                layer(LayerName::Content, "C:{b}"),
                layer(LayerName::Style, "S"),
            ],
        )
        .unwrap();
        let out = render_prompt(&t, &params([("a", "1"), ("b", "2")])).unwrap();
        let f = out.find("F:1").unwrap();
        let c = out.find("C:2").unwrap();
        let s = out.find('S').unwrap();
        assert!(f < c && c < s);
        assert_eq!(out, "F:1\n\nC:2\n\nS");
    }

    #[test]
    fn missing_param_is_reported_by_name() {
        let t = PromptTemplate::new("x", vec![layer(LayerName::Framework, "{disorder} at {d}")]).unwrap();
        let err = render_prompt(&t, &params([("disorder", "MDD")])).unwrap_err();
        assert_eq!(err, PromptError::MissingPlaceholder("d".into()));
    }

    #[test]
    fn unknown_params_are_ignored() {
        let t = PromptTemplate::new("x", vec![layer(LayerName::Style, "plain")]).unwrap();
        assert_eq!(render_prompt(&t, &params([("extra", "1")])).unwrap(), "plain");
    }

    #[test]
    fn construction_rejects_bad_templates() {
        assert!(matches!(PromptTemplate::new("x", vec![]), Err(PromptError::NoLayers(_))));
        assert!(matches!(
            PromptTemplate::new("x", vec![layer(LayerName::Style, "a"), layer(LayerName::Style, "b")]),
            Err(PromptError::DuplicateLayer { .. })
        ));
        for body in ["{}", "{open", "close}", "{bad name}"] {
            assert!(
                matches!(PromptTemplate::new("x", vec![layer(LayerName::Content, body)]), Err(PromptError::Malformed { .. })),
                "{body}"
            );
        }
    }

    #[test]
    fn escaped_braces_and_values_with_braces() {
        let t = PromptTemplate::new("x", vec![layer(LayerName::Content, "{{literal}} {v}")]).unwrap();
        assert_eq!(render_prompt(&t, &params([("v", "{kept}")])).unwrap(), "{literal} {kept}");
    }

    #[test]
    fn single_layer_needs_only_its_params() {
        let set = TemplateSet::seed();
        let t = set.get("case_generation").unwrap();
        let out = render_layer(
            t,
            LayerName::Style,
            &params([("disorder_code", "MDD"), ("chief_complaint", "c"), ("mental_status", "m")]),
        )
        .unwrap();
        assert!(out.starts_with("[CASE STYLE]"));
        assert!(matches!(set.get("nope"), Err(PromptError::UnknownTemplate(_))));
    }

    proptest! {
        #[test]
        fn rendering_is_pure(a in "[a-z {}]{0,20}", b in "\\PC{0,20}") {
            let t = PromptTemplate::new("p", vec![
                layer(LayerName::Framework, "x {a} y"),
                layer(LayerName::Content, "{b}{a}"),
            ]).unwrap();
            let p = params([("a", a.clone()), ("b", b.clone())]);
            let first = render_prompt(&t, &p).unwrap();
            let second = render_prompt(&t, &p).unwrap();
            prop_assert_eq!(&first, &second);
            prop_assert_eq!(first, format!("x {a} y\n\n{b}{a}"));
        }
    }
}
