//! Ranked substitution candidates per label.

use std::collections::BTreeMap;

use super::lexicon::Lexicon;
use super::DatagenError;

const BUILTIN: &str = include_str!("../../resources/similar.txt");

/// `label -> [most similar, ..., least similar]`; a label never lists itself.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimilarityTable {
    entries: BTreeMap<String, Vec<String>>,
}

impl SimilarityTable {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("bundled similarity table parses")
    }

    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: impl Into<String>, similar: Vec<String>) {
        let label = label.into();
        let similar = similar.into_iter().filter(|s| *s != label).collect();
        self.entries.insert(label, similar);
    }

    /// Every label's group mates, nearest position first.
    pub fn from_lexicon(lex: &Lexicon) -> Self {
        let mut table = SimilarityTable::new();
        for group in &lex.groups {
            for (i, label) in group.labels.iter().enumerate() {
                let mut others: Vec<(usize, usize)> = (0..group.labels.len())
                    .filter(|&j| j != i)
                    .map(|j| (i.abs_diff(j), j))
                    .collect();
                others.sort_unstable();
                table.insert(label.clone(), others.into_iter().map(|(_, j)| group.labels[j].clone()).collect());
            }
        }
        table
    }

    pub fn similar(&self, label: &str) -> &[String] {
        self.entries.get(label).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lines of the form `label: first second ...`.
    pub fn parse(text: &str) -> Result<Self, DatagenError> {
        let mut table = SimilarityTable::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (label, rest) = line
                .split_once(':')
                .ok_or_else(|| DatagenError::BadResource(line.to_string()))?;
            table.insert(label.trim(), rest.split_whitespace().map(str::to_string).collect());
        }
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(label, sims)| format!("{label}: {}\n", sims.join(" ")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_matches_lexicon() {
        let table = SimilarityTable::builtin();
        assert_eq!(table, SimilarityTable::from_lexicon(&Lexicon::builtin()));
        assert!(table.len() >= 180);
        assert_eq!(&table.similar("boy")[..2], ["woman", "girl"]);
    }

    #[test]
    fn never_lists_itself() {
        let mut t = SimilarityTable::new();
        t.insert("a", vec!["a".into(), "b".into()]);
        assert_eq!(t.similar("a"), ["b"]);
        assert!(t.similar("zzz").is_empty());
        for (label, sims) in &SimilarityTable::builtin().entries {
            assert!(!sims.contains(label));
        }
    }
}
