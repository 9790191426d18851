//! Token and label vocabularies.
//!
//! Ids are assigned specials first, then by descending frequency with a
//! lexicographic tie-break, so a vocabulary is a pure function of its corpus.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const CLS: usize = 4;
/// Edge vocabularies only: "no edge between this pair".
pub const NULL: usize = 5;

const TOKEN_SPECIALS: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<cls>"];
const EDGE_SPECIALS: [&str; 6] = ["<pad>", "<unk>", "<bos>", "<eos>", "<cls>", "<null>"];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocabulary file is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabKind {
    /// Node labels and query words.
    Tokens,
    /// Edge labels; reserves [`NULL`].
    Edges,
}

impl VocabKind {
    fn specials(self) -> &'static [&'static str] {
        match self {
            VocabKind::Tokens => &TOKEN_SPECIALS,
            VocabKind::Edges => &EDGE_SPECIALS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    kind: VocabKind,
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Keeps every item seen at least `min_count` times (`min_count` is clamped to 1).
    pub fn build<I, S>(kind: VocabKind, corpus: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let min_count = min_count.max(1);
        let mut counts: HashMap<String, usize> = HashMap::new();
        for item in corpus {
            *counts.entry(item.as_ref().to_string()).or_insert(0) += 1;
        }
        let specials = kind.specials();
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !specials.contains(&t.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = specials
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(kind, tokens)
    }

    fn from_tokens(kind: VocabKind, tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { kind, index, tokens }
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_specials(&self) -> usize {
        self.kind.specials().len()
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < self.num_specials()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(TOKEN_SPECIALS[UNK])
    }

    /// Lowercased whitespace tokenization.
    pub fn tokenize(text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_lowercase).collect()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        Self::tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    /// SHA-256 over the kind tag and the id-ordered token list.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update([self.kind as u8]);
        for t in &self.tokens {
            h.update((t.len() as u64).to_le_bytes());
            h.update(t.as_bytes());
        }
        h.finalize().into()
    }

    /// One token per line; line number minus one is the id.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from(kind: VocabKind, r: impl BufRead) -> Result<Self, VocabError> {
        let tokens = r.lines().collect::<Result<Vec<_>, _>>()?;
        Self::from_token_list(kind, tokens)
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_token_list(kind: VocabKind, tokens: Vec<String>) -> Result<Self, VocabError> {
        let specials = kind.specials();
        if tokens.len() < specials.len() || tokens.iter().zip(specials).any(|(t, s)| t != s) {
            return Err(VocabError::Malformed("special tokens missing or out of order".into()));
        }
        let v = Self::from_tokens(kind, tokens);
        if v.index.len() != v.tokens.len() {
            return Err(VocabError::Malformed("duplicate token".into()));
        }
        Ok(v)
    }
}
