//! Query templates. `xx` is replaced by the edited node's label and `yy` by
//! its replacement.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::DatagenError;
use crate::graph::EditKind;

pub const OLD_SLOT: &str = "xx";
pub const NEW_SLOT: &str = "yy";

const INSERT: [&str; 10] = [
    "I want xx",
    "I prefer xx",
    "I like xx",
    "I would like to see xx",
    "Show me xx",
    "Give me xx",
    "I'm interested in xx",
    "I need xx",
    "Search for xx",
    "Return xx",
];

const DELETE: [&str; 10] = [
    "remove xx",
    "I do not want xx",
    "delete xx",
    "I do not like xx",
    "omit xx",
    "I do not need xx",
    "erase xx",
    "ignore xx",
    "discard xx",
    "drop xx",
];

const SUBSTITUTE: [&str; 10] = [
    "change xx to yy",
    "update xx to yy",
    "replace xx with yy",
    "substitute yy for xx",
    "I prefer yy to xx",
    "modify xx to yy",
    "I want yy rather than xx",
    "switch xx to yy",
    "convert xx to yy",
    "give me yy instead of xx",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub kind: EditKind,
    pub pattern: String,
}

impl Template {
    pub fn new(kind: EditKind, pattern: impl Into<String>) -> Result<Self, DatagenError> {
        let pattern = pattern.into();
        let words: Vec<&str> = pattern.split_whitespace().collect();
        let has = |slot: &str| words.contains(&slot);
        let ok = match kind {
            EditKind::Insert | EditKind::Delete => has(OLD_SLOT) && !has(NEW_SLOT),
            EditKind::Substitute => has(OLD_SLOT) && has(NEW_SLOT),
        };
        if !ok {
            return Err(DatagenError::BadTemplate(pattern));
        }
        Ok(Template { kind, pattern })
    }

    pub fn render(&self, old: &str, new: Option<&str>) -> String {
        self.pattern
            .split_whitespace()
            .map(|w| match w {
                OLD_SLOT => old,
                NEW_SLOT => new.unwrap_or(NEW_SLOT),
                other => other,
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn prefix(kind: EditKind) -> &'static str {
    match kind {
        EditKind::Insert => "ins",
        EditKind::Delete => "del",
        EditKind::Substitute => "sub",
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: Vec<Template>,
}

impl Default for TemplateSet {
    /// The ten stock templates for each edit kind.
    fn default() -> Self {
        let mut templates = Vec::new();
        for (kind, patterns) in [
            (EditKind::Insert, &INSERT),
            (EditKind::Delete, &DELETE),
            (EditKind::Substitute, &SUBSTITUTE),
        ] {
            templates.extend(patterns.iter().map(|p| Template { kind, pattern: p.to_string() }));
        }
        TemplateSet { templates }
    }
}

impl TemplateSet {
    pub fn new(templates: Vec<Template>) -> Self {
        TemplateSet { templates }
    }

    pub fn of_kind(&self, kind: EditKind) -> impl Iterator<Item = &Template> + '_ {
        self.templates.iter().filter(move |t| t.kind == kind)
    }

    pub fn all(&self) -> &[Template] {
        &self.templates
    }

    pub fn choose<R: Rng + ?Sized>(&self, kind: EditKind, rng: &mut R) -> Result<&Template, DatagenError> {
        let pool: Vec<&Template> = self.of_kind(kind).collect();
        pool.choose(rng).copied().ok_or(DatagenError::NoTemplate(kind))
    }

    /// Parses lines such as `del:remove xx`; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, DatagenError> {
        let mut templates = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (tag, pattern) = line
                .split_once(':')
                .ok_or_else(|| DatagenError::BadTemplate(line.to_string()))?;
            let kind = match tag.trim() {
                "ins" => EditKind::Insert,
                "del" => EditKind::Delete,
                "sub" => EditKind::Substitute,
                _ => return Err(DatagenError::BadTemplate(line.to_string())),
            };
            templates.push(Template::new(kind, pattern.trim())?);
        }
        Ok(TemplateSet { templates })
    }

    pub fn to_text(&self) -> String {
        self.templates
            .iter()
            .map(|t| format!("{}:{}\n", prefix(t.kind), t.pattern))
            .collect()
    }
}
