//! Uncased WordPiece vocabulary, training and fixed-length encoding.

mod train;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub use train::train_wordpiece;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const CONTINUATION_PREFIX: &str = "##";
const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from tokens that follow the five specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens[..SPECIAL_TOKENS.len()]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(t, s)| t != s)
        {
            return Err(Error::Tokenizer(format!(
                "the first {} tokens must be {:?}",
                SPECIAL_TOKENS.len(),
                SPECIAL_TOKENS
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Tokenizer(format!("token {i} is empty or has whitespace")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Tokenizer(format!("duplicate token `{t}` at id {i}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    /// SHA-256 of the serialized vocabulary file.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }

    fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Self> {
        if raw.trim().is_empty() {
            return Err(Error::Tokenizer("vocabulary file is empty".into()));
        }
        let tokens: Vec<String> = raw.lines().map(str::to_string).collect();
        Self::from_tokens(tokens)
    }

    /// WordPiece pieces for `text` without specials or truncation.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in pretokenize(text) {
            self.encode_word(&word, &mut ids);
        }
        ids
    }

    pub fn tokenize_to_strings(&self, text: &str) -> Vec<String> {
        self.tokenize(text)
            .into_iter()
            .map(|id| self.tokens[id as usize].clone())
            .collect()
    }

    /// Greedy longest-match-first; a word with an unmatchable remainder becomes one UNK.
    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(UNK);
            return;
        }
        let mark = out.len();
        let mut start = 0;
        let mut candidate = String::new();
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION_PREFIX);
                }
                candidate.extend(&chars[start..end]);
                if let Some(id) = self.id(&candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.truncate(mark);
                    out.push(UNK);
                    return;
                }
            }
        }
    }
}

/// Lowercase + NFC, split on whitespace, punctuation as single-char words.
pub fn pretokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().flat_map(char::to_lowercase).collect();
    let mut words = Vec::new();
    let mut current = String::new();
    for c in normalized.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if is_punctuation(c) {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c, '\u{2000}'..='\u{206F}' | '\u{3000}'..='\u{303F}' | '«' | '»' | '¿' | '¡')
}

/// Fixed-length model input.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
}

impl TokenSequence {
    /// Number of non-PAD positions (a prefix of the sequence).
    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().filter(|m| **m == 1).count()
    }

    /// Drops the PAD tail. Masked attention makes this lossless for every unpadded position.
    pub fn trimmed(&self) -> TokenSequence {
        let n = self.active_len();
        TokenSequence {
            ids: self.ids[..n].to_vec(),
            attention_mask: self.attention_mask[..n].to_vec(),
        }
    }

    pub fn from_ids(ids: &[u32], max_seq_len: usize) -> Self {
        assert!(max_seq_len >= 2, "max_seq_len must leave room for CLS and SEP");
        let keep = ids.len().min(max_seq_len - 2);
        let mut out = Vec::with_capacity(max_seq_len);
        out.push(CLS);
        out.extend_from_slice(&ids[..keep]);
        out.push(SEP);
        let active = out.len();
        out.resize(max_seq_len, PAD);
        let mut mask = vec![1u8; active];
        mask.resize(max_seq_len, 0);
        TokenSequence {
            ids: out,
            attention_mask: mask,
        }
    }
}

pub fn encode(text: &str, vocab: &Vocab, max_seq_len: usize) -> TokenSequence {
    TokenSequence::from_ids(&vocab.tokenize(text), max_seq_len)
}

pub fn decode(ids: &[u32], vocab: &Vocab) -> Result<String> {
    let mut out = String::new();
    for &id in ids {
        let token = vocab.token(id).ok_or(Error::OutOfRange {
            what: "token id",
            index: id as usize,
            limit: vocab.len(),
        })?;
        if Vocab::is_special(id) {
            continue;
        }
        match token.strip_prefix(CONTINUATION_PREFIX) {
            Some(rest) => out.push_str(rest),
            None => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(token);
            }
        }
    }
    Ok(out)
}
