//! The label lexicon behind the bundled scene-graph sampler and similarity table.

use super::DatagenError;

pub const ATTRIBUTE_EDGE: &str = "attribute";

const BUILTIN: &str = include_str!("../../resources/lexicon.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    Object,
    Attribute,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGroup {
    pub kind: GroupKind,
    pub name: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    pub groups: Vec<LabelGroup>,
    pub relations: Vec<String>,
}

impl Lexicon {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("bundled lexicon parses")
    }

    pub fn parse(text: &str) -> Result<Self, DatagenError> {
        let mut groups = Vec::new();
        let mut relations = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let bad = || DatagenError::BadResource(line.to_string());
            let (head, body) = line.split_once(':').ok_or_else(bad)?;
            let labels: Vec<String> = body.split_whitespace().map(str::to_string).collect();
            let mut head = head.split_whitespace();
            match (head.next(), head.next()) {
                (Some("relation"), None) => relations.extend(labels),
                (Some(kind @ ("object" | "attribute")), Some(name)) => groups.push(LabelGroup {
                    kind: if kind == "object" { GroupKind::Object } else { GroupKind::Attribute },
                    name: name.to_string(),
                    labels,
                }),
                _ => return Err(bad()),
            }
        }
        Ok(Lexicon { groups, relations })
    }

    pub fn labels(&self, kind: GroupKind) -> impl Iterator<Item = &str> + '_ {
        self.groups
            .iter()
            .filter(move |g| g.kind == kind)
            .flat_map(|g| g.labels.iter().map(String::as_str))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn builtin_labels_are_unique() {
        let lex = Lexicon::builtin();
        let mut seen = HashSet::new();
        for g in &lex.groups {
            for l in &g.labels {
                assert!(seen.insert(l.clone()), "duplicate label {l}");
            }
        }
        assert!(seen.len() >= 180, "only {} labels", seen.len());
        assert!(lex.relations.len() >= 15);
        assert!(!seen.contains(ATTRIBUTE_EDGE));
    }
}
