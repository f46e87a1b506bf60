use std::collections::HashMap;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

/// Reserved id for out-of-vocabulary words.
pub const UNK_ID: u32 = 0;
/// Reserved id used to pad the start of every context.
pub const BOS_ID: u32 = 1;

const UNK_TOKEN: &str = "<unk>";
const BOS_TOKEN: &str = "<s>";

/// Splits raw text into lowercase word tokens, isolating every non-alphanumeric
/// character as its own token.
///
/// This is the single tokenizer shared by the language model, ROUGE/F1 and the
/// entity matcher.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                word.extend(c.to_lowercase());
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_lowercase().collect());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

fn is_punct(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if !c.is_alphanumeric())
}

/// Joins tokens back into readable text. Re-tokenizing the result yields the
/// same token list.
pub fn join_words<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for tok in tokens {
        let tok = tok.as_ref();
        let attach = matches!(tok, "." | "," | ";" | ":" | "!" | "?" | ")");
        if !out.is_empty() && !attach {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// An ordered sequence of token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<u32>);

impl TokenSeq {
    pub fn new(ids: Vec<u32>) -> Self {
        Self(ids)
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }
}

impl Deref for TokenSeq {
    type Target = [u32];

    fn deref(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for TokenSeq {
    fn from(ids: Vec<u32>) -> Self {
        Self(ids)
    }
}

/// Bidirectional token/id mapping. Ids 0 and 1 are reserved for `<unk>` and `<s>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(repr: VocabRepr) -> Self {
        // Skip the two reserved entries; `from_tokens` re-adds them.
        Vocab::from_tokens(repr.tokens.into_iter().skip(2))
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            tokens: v.id_to_token,
        }
    }
}

impl Vocab {
    /// Builds a vocabulary from tokens in the given order. Duplicates and the
    /// reserved spellings are ignored.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab {
            id_to_token: vec![UNK_TOKEN.to_string(), BOS_TOKEN.to_string()],
            token_to_id: HashMap::new(),
        };
        vocab.token_to_id.insert(UNK_TOKEN.to_string(), UNK_ID);
        vocab.token_to_id.insert(BOS_TOKEN.to_string(), BOS_ID);
        for tok in tokens {
            let tok = tok.into();
            if vocab.token_to_id.contains_key(&tok) {
                continue;
            }
            let id = vocab.id_to_token.len() as u32;
            vocab.token_to_id.insert(tok.clone(), id);
            vocab.id_to_token.push(tok);
        }
        vocab
    }

    /// Builds a vocabulary from a corpus. Words seen fewer than `min_count`
    /// times are left out (they tokenize to `<unk>`). Ids are assigned by
    /// descending frequency, ties broken alphabetically.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: u64, max_size: Option<usize>) -> Self {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for doc in corpus {
            for w in split_words(doc.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count.max(1) && w != UNK_TOKEN && w != BOS_TOKEN)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(max) = max_size {
            ranked.truncate(max.saturating_sub(2));
        }
        Self::from_tokens(ranked.into_iter().map(|(w, _)| w))
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Maps already-split words to ids, sending unknown words to `<unk>`.
    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> TokenSeq {
        TokenSeq(
            words
                .iter()
                .map(|w| self.id(w.as_ref()).unwrap_or(UNK_ID))
                .collect(),
        )
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        self.encode_words(&split_words(text))
    }

    /// Token strings for `ids`; ids outside the vocabulary render as `<unk>`.
    pub fn decode_tokens(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        join_words(&self.decode_tokens(ids))
    }

    /// True when `token` is a single non-alphanumeric character.
    pub fn is_punctuation(token: &str) -> bool {
        is_punct(token)
    }
}
