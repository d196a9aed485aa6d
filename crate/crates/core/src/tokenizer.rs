//! Whitespace tokenizer and word-level vocabulary.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Result, TslmError};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

const DETACHED: &[char] = &['.', ',', '?', '!', ';'];

/// Lowercases, splits on whitespace and detaches trailing `. , ? ! ;` as
/// separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_lowercase();
        let core = word.trim_end_matches(DETACHED);
        if !core.is_empty() {
            out.push(core.to_string());
        }
        out.extend(word[core.len()..].chars().map(String::from));
    }
    out
}

/// Bidirectional token/id map. Ids 0-3 are the reserved special tokens;
/// anything not in the map encodes as `[UNK]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, ids }
    }
}

impl Vocab {
    /// Assigns ids in first-seen order after the reserved ids.
    pub fn build<I, S>(corpus: I) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocab::default();
        for tok in corpus {
            vocab.insert(tok.as_ref());
        }
        vocab
    }

    fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let map: IndexMap<&str, usize> =
            self.tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        Ok(serde_json::to_string_pretty(&map)?)
    }

    /// Parses a `token -> id` JSON object. Ids must be exactly `0..n` with the
    /// reserved tokens in their fixed slots.
    pub fn from_json(text: &str) -> Result<Vocab> {
        let map: IndexMap<String, usize> = serde_json::from_str(text)?;
        let mut tokens = vec![None; map.len()];
        for (tok, &id) in &map {
            let slot = tokens.get_mut(id).ok_or_else(|| {
                TslmError::schema(format!("vocab.{tok}"), format!("id {id} outside 0..{}", map.len()))
            })?;
            if slot.is_some() {
                return Err(TslmError::schema(format!("vocab.{tok}"), format!("id {id} assigned twice")));
            }
            *slot = Some(tok.clone());
        }
        let tokens: Vec<String> = tokens.into_iter().map(|t| t.expect("ids form 0..n")).collect();
        for (id, name) in RESERVED.iter().enumerate() {
            if tokens.get(id).map(String::as_str) != Some(name) {
                return Err(TslmError::schema(
                    format!("vocab.{name}"),
                    format!("reserved token must have id {id}"),
                ));
            }
        }
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocab { tokens, ids })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| TslmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = fs::read_to_string(path).map_err(|e| TslmError::io(path, e))?;
        Vocab::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenizes_plain_sentence() {
        assert_eq!(
            tokenize("Roots absorb water from soil"),
            vec!["roots", "absorb", "water", "from", "soil"]
        );
    }

    #[test]
    fn empty_text_gives_no_tokens() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn splits_trailing_punctuation() {
        assert_eq!(tokenize("Where is water?"), vec!["where", "is", "water", "?"]);
        assert_eq!(
            tokenize("The water, light, and CO2 combine."),
            vec!["the", "water", ",", "light", ",", "and", "co2", "combine", "."]
        );
        assert_eq!(tokenize("what?!"), vec!["what", "?", "!"]);
    }

    #[test]
    fn first_seen_ids() {
        let v = Vocab::build(["a", "b", "a"]);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn empty_corpus_keeps_reserved() {
        let v = Vocab::build(Vec::<String>::new());
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("[CLS]"), CLS);
        assert_eq!(v.id("[SEP]"), SEP);
        assert_eq!(v.id("[PAD]"), PAD);
        assert_eq!(v.id("anything"), UNK);
    }

    #[test]
    fn json_round_trip() {
        let v = Vocab::build(["water", "leaf", "?", "soil"]);
        let back = Vocab::from_json(&v.to_json().unwrap()).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn rejects_gapped_ids() {
        let text = r#"{"[PAD]":0,"[UNK]":1,"[CLS]":2,"[SEP]":3,"x":5}"#;
        assert!(Vocab::from_json(text).is_err());
    }

    #[test]
    fn rejects_moved_reserved_token() {
        let text = r#"{"[PAD]":0,"[UNK]":1,"x":2,"[SEP]":3,"[CLS]":4}"#;
        assert!(Vocab::from_json(text).is_err());
    }

    proptest! {
        #[test]
        fn tokenize_idempotent(text in "[A-Za-z ,.?!;]{0,40}") {
            let once = tokenize(&text);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn decode_inverts_encode(words in prop::collection::vec("[a-z]{1,6}", 0..20)) {
            let v = Vocab::build(&words);
            prop_assert_eq!(v.decode(&v.encode(&words)), words);
        }
    }
}
