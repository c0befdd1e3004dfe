//! Byte-level BPE.
//!
//! Ids `0..256` are raw bytes, 256 is `PAD`, 257 is `EOR` (end of record) and
//! every later id is a merge of two earlier ids. Text is first split into
//! chunks (a letter run, digit run or punctuation run with at most one leading
//! space, or a whitespace run) and merges never cross a chunk boundary, so a
//! prompt that stops at a word boundary tokenizes exactly like the same prefix
//! of a full record.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD: u32 = 256;
pub const EOR: u32 = 257;
pub const BASE_SIZE: usize = 258;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("target vocabulary size {0} is below the {BASE_SIZE} base tokens")]
    TargetTooSmall(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("token id {0} is not in the vocabulary")]
    UnknownId(u32),
    #[error("malformed vocabulary: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        TokenSequence { ids }
    }
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<Vec<u8>>,
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.merges == other.merges
    }
}

fn chunk_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r" ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+").expect("static pattern"))
}

fn chunks(text: &str) -> impl Iterator<Item = &str> {
    chunk_pattern().find_iter(text).map(|m| m.as_str())
}

fn merge_pair(ids: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    let mut out = 0;
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == pair.0 && ids[i + 1] == pair.1 {
            ids[out] = new_id;
            i += 2;
        } else {
            ids[out] = ids[i];
            i += 1;
        }
        out += 1;
    }
    ids.truncate(out);
}

impl Vocabulary {
    /// The 256 byte tokens plus the two specials, no merges.
    pub fn bytes_only() -> Self {
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        tokens.push(Vec::new());
        tokens.push(Vec::new());
        Vocabulary { tokens, merges: Vec::new(), ranks: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn is_special(id: u32) -> bool {
        id == PAD || id == EOR
    }

    fn push_merge(&mut self, pair: (u32, u32)) -> u32 {
        let id = self.tokens.len() as u32;
        let mut bytes = self.tokens[pair.0 as usize].clone();
        bytes.extend_from_slice(&self.tokens[pair.1 as usize]);
        self.tokens.push(bytes);
        self.ranks.insert(pair, self.merges.len() as u32);
        self.merges.push(pair);
        id
    }

    fn encode_chunk(&self, chunk: &[u8], out: &mut Vec<u32>) {
        let mut ids: Vec<u32> = chunk.iter().map(|&b| u32::from(b)).collect();
        while ids.len() >= 2 {
            let best = ids.windows(2).filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1])))).min();
            let Some((rank, pair)) = best else { break };
            merge_pair(&mut ids, pair, BASE_SIZE as u32 + rank);
        }
        out.extend_from_slice(&ids);
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::with_capacity(text.len());
        for c in chunks(text) {
            self.encode_chunk(c.as_bytes(), &mut ids);
        }
        TokenSequence { ids }
    }

    /// Concatenated token bytes with specials dropped; invalid UTF-8 is replaced.
    pub fn detokenize(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in ids {
            let tok = self.tokens.get(id as usize).ok_or(TokenizerError::UnknownId(id))?;
            bytes.extend_from_slice(tok);
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(VocabFile::from(self)).expect("plain data")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, TokenizerError> {
        let file: VocabFile =
            serde_json::from_value(value.clone()).map_err(|e| TokenizerError::Malformed(e.to_string()))?;
        file.try_into()
    }
}

/// Greedy BPE training: repeatedly merges the most frequent adjacent pair
/// (ties go to the lexicographically smaller pair of byte strings) until the
/// vocabulary reaches `target_size` or no pair occurs at least twice.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Vocabulary, TokenizerError> {
    if target_size < BASE_SIZE {
        return Err(TokenizerError::TargetTooSmall(target_size));
    }
    if corpus.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for text in corpus {
        for c in chunks(text.as_ref()) {
            *freq.entry(c).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<u32>, usize)> =
        freq.into_iter().map(|(c, n)| (c.bytes().map(u32::from).collect(), n)).collect();
    let mut vocab = Vocabulary::bytes_only();
    while vocab.len() < target_size {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for (ids, n) in &words {
            for w in ids.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += n;
            }
        }
        let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let key = |p: &(u32, u32)| (&vocab.tokens[p.0 as usize], &vocab.tokens[p.1 as usize]);
                key(pb).cmp(&key(pa))
            })
        });
        let Some((pair, count)) = best else { break };
        if count < 2 {
            break;
        }
        let id = vocab.push_merge(pair);
        for (ids, _) in &mut words {
            merge_pair(ids, pair, id);
        }
    }
    Ok(vocab)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    tokens: Vec<String>,
    merges: Vec<[u32; 2]>,
    special: BTreeMap<String, u32>,
}

impl From<&Vocabulary> for VocabFile {
    fn from(v: &Vocabulary) -> Self {
        VocabFile {
            tokens: v.tokens.iter().map(|t| B64.encode(t)).collect(),
            merges: v.merges.iter().map(|&(l, r)| [l, r]).collect(),
            special: BTreeMap::from([("EOR".to_string(), EOR), ("PAD".to_string(), PAD)]),
        }
    }
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = TokenizerError;

    fn try_from(file: VocabFile) -> Result<Self, TokenizerError> {
        let bad = |m: &str| TokenizerError::Malformed(m.to_string());
        if file.special.get("PAD") != Some(&PAD) || file.special.get("EOR") != Some(&EOR) {
            return Err(bad("special ids"));
        }
        if file.tokens.len() != BASE_SIZE + file.merges.len() {
            return Err(bad("token count does not match merge count"));
        }
        let mut vocab = Vocabulary::bytes_only();
        for (k, [l, r]) in file.merges.into_iter().enumerate() {
            let id = (BASE_SIZE + k) as u32;
            if l >= id || r >= id || Vocabulary::is_special(l) || Vocabulary::is_special(r) {
                return Err(bad("merge references an undefined id"));
            }
            vocab.push_merge((l, r));
        }
        for (i, enc) in file.tokens.iter().enumerate() {
            let bytes = B64.decode(enc).map_err(|e| TokenizerError::Malformed(e.to_string()))?;
            if bytes != vocab.tokens[i] {
                return Err(bad("token bytes disagree with merges"));
            }
        }
        Ok(vocab)
    }
}
