//! Tokenization and the token↔id bijection, with reserved start/stop/unknown
//! symbols framing every encoded caption.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

pub const START_ID: usize = 0;
pub const STOP_ID: usize = 1;
pub const UNK_ID: usize = 2;

pub const START_TOKEN: &str = "<start>";
pub const STOP_TOKEN: &str = "<stop>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot build a vocabulary from an empty caption list")]
    EmptyCorpus,
    #[error("id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("vocabulary file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("vocabulary file line {line}: {reason}")]
    Format { line: usize, reason: String },
}

/// Lowercase, split on whitespace, strip leading/trailing ASCII punctuation
/// from each token. Empty tokens are dropped.
pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

/// Immutable token↔id bijection. Ids 0..=2 are reserved; real tokens start
/// at id 3, assigned by descending corpus frequency with lexicographic
/// tie-breaking.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    counts: Vec<u64>,
    min_count: u64,
}

impl Vocabulary {
    pub fn build(captions: &[String], min_count: u64) -> Result<Self, VocabError> {
        assert!(min_count >= 1, "min_count must be >= 1");
        if captions.is_empty() {
            return Err(VocabError::EmptyCorpus);
        }
        let mut freq: HashMap<String, u64> = HashMap::new();
        for c in captions {
            for t in tokenize(c) {
                *freq.entry(t).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(String, u64)> = freq
            .into_iter()
            .filter(|(_, n)| *n >= min_count)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut id_to_token = vec![
            START_TOKEN.to_string(),
            STOP_TOKEN.to_string(),
            UNK_TOKEN.to_string(),
        ];
        let mut counts = vec![0u64, 0, 0];
        for (tok, n) in kept {
            id_to_token.push(tok);
            counts.push(n);
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            counts,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Id for a token, if in-vocabulary.
    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Result<&str, VocabError> {
        self.id_to_token
            .get(id)
            .map(String::as_str)
            .ok_or(VocabError::IdOutOfRange {
                id,
                size: self.id_to_token.len(),
            })
    }

    /// [START] + per-token ids (UNK for OOV) + [STOP].
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(START_ID);
        for t in tokens {
            ids.push(self.id(t).unwrap_or(UNK_ID));
        }
        ids.push(STOP_ID);
        ids
    }

    /// Drops START/STOP, joins remaining tokens with single spaces.
    pub fn decode(&self, ids: &[usize]) -> Result<String, VocabError> {
        let mut words = Vec::new();
        for &id in ids {
            let tok = self.token(id)?;
            if id == START_ID || id == STOP_ID {
                continue;
            }
            words.push(tok);
        }
        Ok(words.join(" "))
    }

    /// Fraction of corpus token occurrences that are in-vocabulary.
    pub fn coverage(&self, captions: &[String]) -> f64 {
        let mut total = 0u64;
        let mut known = 0u64;
        for c in captions {
            for t in tokenize(c) {
                total += 1;
                if self.token_to_id.contains_key(&t) {
                    known += 1;
                }
            }
        }
        if total == 0 {
            1.0
        } else {
            known as f64 / total as f64
        }
    }

    /// One line per token: `<token>\t<id>\t<count>`, sorted by id.
    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (id, tok) in self.id_to_token.iter().enumerate() {
            writeln!(f, "{}\t{}\t{}", tok, id, self.counts[id])?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut id_to_token = Vec::new();
        let mut counts = Vec::new();
        for (lineno, line) in f.lines().enumerate() {
            let line = line?;
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(VocabError::Format {
                    line: lineno + 1,
                    reason: format!("expected 3 tab-separated fields, got {}", parts.len()),
                });
            }
            let id: usize = parts[1].parse().map_err(|_| VocabError::Format {
                line: lineno + 1,
                reason: format!("bad id {:?}", parts[1]),
            })?;
            if id != lineno {
                return Err(VocabError::Format {
                    line: lineno + 1,
                    reason: format!("ids must be dense and sorted; expected {lineno}, got {id}"),
                });
            }
            let count: u64 = parts[2].parse().map_err(|_| VocabError::Format {
                line: lineno + 1,
                reason: format!("bad count {:?}", parts[2]),
            })?;
            id_to_token.push(parts[0].to_string());
            counts.push(count);
        }
        if id_to_token.len() < 3
            || id_to_token[START_ID] != START_TOKEN
            || id_to_token[STOP_ID] != STOP_TOKEN
            || id_to_token[UNK_ID] != UNK_TOKEN
        {
            return Err(VocabError::Format {
                line: 1,
                reason: "missing or misplaced reserved symbols".into(),
            });
        }
        let mut token_to_id = HashMap::new();
        for (i, t) in id_to_token.iter().enumerate() {
            if token_to_id.insert(t.clone(), i).is_some() {
                return Err(VocabError::Format {
                    line: i + 1,
                    reason: format!("duplicate token {t:?} breaks the bijection"),
                });
            }
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            counts,
            min_count: 1,
        })
    }

    /// SHA-256 over the canonical serialized form, used by checkpoints to
    /// refuse loading against a different vocabulary.
    pub fn hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (id, tok) in self.id_to_token.iter().enumerate() {
            h.update(tok.as_bytes());
            h.update(b"\t");
            h.update(id.to_string().as_bytes());
            h.update(b"\n");
        }
        h.finalize().into()
    }
}
