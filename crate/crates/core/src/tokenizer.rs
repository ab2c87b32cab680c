//! Offset-preserving word tokenization and vocabulary.
//!
//! Text is split on Unicode whitespace, and every non-alphanumeric character
//! inside a chunk becomes its own token, so `"a-hole"` yields `a`, `-`, `hole`.
//! Surfaces are lowercased; offsets always index the original text in code
//! points.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Post};
use crate::error::{Error, Result};
use crate::span::{CharSet, Span};

pub const UNK_ID: usize = 0;
pub const PAD_ID: usize = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";
pub const DEFAULT_MAX_LEN: usize = 256;
const VOCAB_HEADER: &str = "#spanmax-vocab\tv1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

impl Token {
    /// Tokens with at least one alphanumeric character count as words; the
    /// rest are punctuation or symbols.
    pub fn is_word(&self) -> bool {
        self.surface.chars().any(char::is_alphanumeric)
    }
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut word_start = 0;
    let flush = |word: &mut String, start: usize, end: usize, tokens: &mut Vec<Token>| {
        if !word.is_empty() {
            tokens.push(Token { surface: word.to_lowercase(), start, end });
            word.clear();
        }
    };
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        n = i + 1;
        if c.is_alphanumeric() {
            if word.is_empty() {
                word_start = i;
            }
            word.push(c);
            continue;
        }
        flush(&mut word, word_start, i, &mut tokens);
        if !c.is_whitespace() {
            tokens.push(Token { surface: c.to_lowercase().collect(), start: i, end: i + 1 });
        }
    }
    flush(&mut word, word_start, n, &mut tokens);
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_terms(terms: Vec<String>) -> Result<Self> {
        if terms.len() < 2 || terms[UNK_ID] != UNK_TOKEN || terms[PAD_ID] != PAD_TOKEN {
            return Err(Error::Data("vocabulary must start with <unk>, <pad>".into()));
        }
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary term `{t}`")));
            }
        }
        Ok(Vocab { terms, index })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> usize {
        self.index.get(term).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, term: &str) -> bool {
        self.index.contains_key(term)
    }

    pub fn term(&self, id: usize) -> Option<&str> {
        self.terms.get(id).map(String::as_str)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{VOCAB_HEADER}\tunk={UNK_ID}\tpad={PAD_ID}\n");
        for (i, t) in self.terms.iter().enumerate() {
            out.push_str(t);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(s: &str) -> Result<Self> {
        let mut lines = s.lines();
        let header = lines.next().unwrap_or_default();
        if !header.starts_with(VOCAB_HEADER) {
            return Err(Error::Parse {
                source_name: "vocab".into(),
                line: 1,
                message: format!("expected header `{VOCAB_HEADER}`"),
            });
        }
        let mut terms = Vec::new();
        for (i, line) in lines.enumerate() {
            let err = |m: String| Error::Parse { source_name: "vocab".into(), line: i + 2, message: m };
            let (t, id) = line.rsplit_once('\t').ok_or_else(|| err("expected term<TAB>id".into()))?;
            let id: usize = id.parse().map_err(|_| err(format!("bad id `{id}`")))?;
            if id != terms.len() {
                return Err(err(format!("ids must be dense; expected {}, found {id}", terms.len())));
            }
            terms.push(t.to_string());
        }
        Vocab::from_terms(terms)
    }

    /// SHA-256 of the TSV serialization, hex-encoded. Checkpoints record it so a
    /// model is never paired with a different vocabulary.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }
}

/// Vocabulary of surfaces seen at least `min_freq` times, ordered by
/// descending frequency then lexicographically, after the reserved ids.
pub fn build_vocab(corpus: &Corpus, min_freq: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::Empty("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for post in corpus.iter() {
        for t in tokenize(&post.text) {
            *freq.entry(t.surface).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && t != UNK_TOKEN && t != PAD_TOKEN)
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let terms = [UNK_TOKEN.to_string(), PAD_TOKEN.to_string()]
        .into_iter()
        .chain(entries.into_iter().map(|(t, _)| t))
        .collect();
    Vocab::from_terms(terms)
}

/// Truncates `tokens` to `max_len` in place and returns one id per kept token.
pub fn encode(tokens: &mut Vec<Token>, vocab: &Vocab, max_len: usize) -> Vec<usize> {
    tokens.truncate(max_len);
    tokens.iter().map(|t| vocab.id(&t.surface)).collect()
}

/// Per-token targets: 1.0 when the token overlaps any gold span, else 0.0.
pub fn align_span_labels(tokens: &[Token], gold: &[Span], text_len: usize) -> Result<Vec<f64>> {
    if let Some(s) = gold.iter().find(|s| s.end > text_len || s.start >= s.end) {
        return Err(Error::Data(format!(
            "gold span [{}, {}) outside text of length {text_len}",
            s.start, s.end
        )));
    }
    Ok(tokens
        .iter()
        .map(|t| {
            if gold.iter().any(|s| s.intersects(t.start, t.end)) {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

/// Union of the character ranges of the selected tokens.
pub fn tokens_to_char_set(tokens: &[Token], selected: impl IntoIterator<Item = usize>) -> CharSet {
    selected
        .into_iter()
        .flat_map(|i| tokens[i].start..tokens[i].end)
        .collect()
}

/// A post ready for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedPost {
    pub post_id: String,
    pub tokens: Vec<Token>,
    pub ids: Vec<usize>,
    /// Present when the post carries a span annotation.
    pub token_labels: Option<Vec<f64>>,
    pub label: f64,
}

impl TokenizedPost {
    pub fn from_post(post: &Post, vocab: &Vocab, max_len: usize) -> Result<Self> {
        let mut tokens = tokenize(&post.text);
        let ids = encode(&mut tokens, vocab, max_len);
        let token_labels = match &post.spans {
            Some(spans) if post.is_span_trainable() => {
                Some(align_span_labels(&tokens, spans, post.char_len())?)
            }
            _ => None,
        };
        Ok(TokenizedPost {
            post_id: post.id.clone(),
            tokens,
            ids,
            token_labels,
            label: post.label.as_f64(),
        })
    }
}
