use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Dense token ids; the four specials occupy 0..4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Lowercase, split on whitespace, keep letters, digits and apostrophes.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric() || *c == '\'')
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

impl Vocabulary {
    /// Tokens seen at least `min_freq` times, most frequent first, ties alphabetical.
    pub fn build<S: AsRef<str>>(lines: &[S], min_freq: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in lines {
            for tok in tokenize(line.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq && !SPECIALS.contains(&t.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect::<Vec<_>>();
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= SPECIALS.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(SPECIALS[UNK], String::as_str)
    }

    /// Token ids with OOV mapped to UNK. May be empty.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Like [`encode`](Self::encode) but rejects lines with no known token.
    pub fn encode_strict(&self, text: &str) -> Result<Vec<usize>> {
        let ids = self.encode(text);
        if ids.iter().all(|&i| i == UNK) {
            return Err(CoreError::RejectedLine(format!("{text:?} has no in-vocabulary token")));
        }
        Ok(ids)
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_first_and_min_freq() {
        let v = Vocabulary::build(&["The sky, the SEA", "the sky glows"], 2);
        assert_eq!(v.token(0), "<pad>");
        assert_eq!(v.token(3), "<unk>");
        assert_eq!(v.token(4), "the");
        assert_eq!(v.token(5), "sky");
        assert_eq!(v.len(), 6);
        assert_eq!(v.encode("the sea"), vec![4, UNK]);
    }

    #[test]
    fn strict_rejects_all_unknown() {
        let v = Vocabulary::build(&["a a"], 2);
        assert!(v.encode_strict("zzz qqq").is_err());
        assert!(v.encode_strict("   ").is_err());
        assert_eq!(v.encode_strict("a zzz").unwrap(), vec![4, UNK]);
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocabulary::build(&["x y x y"], 1);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
    }
}
