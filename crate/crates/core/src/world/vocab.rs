//! Word-level vocabulary over the closed scene grammar.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scene::{COLORS, FILLERS, RELATIONS, SHAPES, SIZES};
use super::SCHEMA;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token string ↔ id maps. Ids 0..4 are `<pad>`, `<bos>`, `<eos>`, `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    schema: String,
    tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VocabError {
    #[error("vocab schema `{0}` is not supported")]
    Schema(String),
    #[error("vocab must start with the special tokens {SPECIALS:?}")]
    Specials,
    #[error("duplicate token `{0}`")]
    Duplicate(String),
    #[error("malformed vocab json: {0}")]
    Json(String),
}

impl Vocab {
    /// Builds a vocabulary from ordinary words; specials are prepended.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Result<Self, VocabError> {
        let tokens = SPECIALS
            .iter()
            .copied()
            .chain(words)
            .map(str::to_string)
            .collect();
        Self::from_tokens(tokens)
    }

    /// Rebuilds a vocabulary from its full token list, specials included.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, VocabError> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(VocabError::Specials);
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(VocabError::Duplicate(t.clone()));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Every word the scene grammar can emit, in a fixed order.
    pub fn synthetic() -> Self {
        let mut words: Vec<&str> = vec!["a"];
        words.extend(SIZES);
        words.extend(COLORS);
        words.extend(SHAPES);
        for rel in RELATIONS {
            words.extend(rel.iter().copied());
        }
        for filler in FILLERS {
            words.extend(filler.iter().copied());
        }
        let mut seen = std::collections::BTreeSet::new();
        words.retain(|w| seen.insert(*w));
        Self::from_words(words).expect("grammar words are unique")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Whitespace tokenization; unknown words map to `<unk>` and are
    /// returned alongside. `<bos>`/`<eos>` are added around the words.
    pub fn encode(&self, text: &str) -> (Vec<usize>, Vec<String>) {
        let mut unknown = Vec::new();
        let mut ids = vec![BOS];
        for w in text.split_whitespace() {
            let w = w.to_lowercase();
            match self.id(&w) {
                Some(i) if i > UNK => ids.push(i),
                _ => {
                    unknown.push(w);
                    ids.push(UNK);
                }
            }
        }
        ids.push(EOS);
        (ids, unknown)
    }

    /// Space-joined words, specials skipped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i >= UNK)
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&VocabFile {
            schema: SCHEMA.to_string(),
            tokens: self.tokens.clone(),
        })
        .expect("vocab serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, VocabError> {
        let file: VocabFile = serde_json::from_str(s).map_err(|e| VocabError::Json(e.to_string()))?;
        if file.schema != SCHEMA {
            return Err(VocabError::Schema(file.schema));
        }
        Self::from_tokens(file.tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Hex SHA-256 of the token list; identifies the vocabulary across
    /// checkpoints and datasets.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_vocab_is_bijective() {
        let v = Vocab::synthetic();
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i));
        }
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.id("<eos>"), Some(EOS));
    }

    #[test]
    fn encode_decode_and_unknowns() {
        let v = Vocab::synthetic();
        let (ids, unk) = v.encode("a red cube above a Blue zebra");
        assert_eq!(ids[0], BOS);
        assert_eq!(*ids.last().unwrap(), EOS);
        assert_eq!(unk, vec!["zebra".to_string()]);
        assert_eq!(v.decode(&ids), "a red cube above a blue <unk>");
    }

    #[test]
    fn json_round_trip_and_schema_check() {
        let v = Vocab::synthetic();
        let back = Vocab::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        let bad = v.to_json().replace(SCHEMA, "tgv0");
        assert_eq!(Vocab::from_json(&bad), Err(VocabError::Schema("tgv0".into())));
    }
}
