//! Subword tokenization with data-flow alignment.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;
use tokenizers::pre_tokenizers::byte_level::ByteLevel;
use tokenizers::Tokenizer;

use crate::dataflow::DataFlow;
use crate::error::{Error, Result};

pub const MAX_SEQ_LEN: usize = 512;
pub const DEFAULT_MAX_DFG_NODES: usize = 64;

/// Ids of the special tokens, RoBERTa layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub cls: u32,
    pub pad: u32,
    pub sep: u32,
    pub unk: u32,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        SpecialTokens {
            cls: 0,
            pad: 1,
            sep: 2,
            unk: 3,
        }
    }
}

/// Encoder-ready input for one snippet.
///
/// Positions index `token_ids`; position 0 is the classification token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedInput {
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    /// `(use position, definition position)`; positions are the first
    /// subword of each variable occurrence.
    pub dfg_edges: Vec<(usize, usize)>,
    /// Subword span of every variable occurrence that takes part in an edge,
    /// sorted by start position. Each becomes one graph node.
    pub nodes: Vec<Range<usize>>,
    pub truncated: bool,
    pub degraded_dfg: bool,
}

impl TokenizedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Node index for a position, if the position starts a node.
    pub fn node_at(&self, position: usize) -> Option<usize> {
        self.nodes
            .binary_search_by_key(&position, |r| r.start)
            .ok()
    }
}

/// Byte-level BPE tokenizer (RoBERTa vocabulary, or raw bytes when no
/// vocabulary is available).
#[derive(Clone)]
pub struct CodeTokenizer {
    inner: Tokenizer,
    special: SpecialTokens,
    kind: TokenizerKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    /// One token per byte; 4 specials + 256 byte symbols.
    ByteLevel,
    /// `vocab.json` + `merges.txt`.
    Bpe,
}

impl FromStr for TokenizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "byte_level" => Ok(TokenizerKind::ByteLevel),
            "bpe" => Ok(TokenizerKind::Bpe),
            _ => Err(Error::InvalidArgument(format!("unknown tokenizer kind {s:?}"))),
        }
    }
}

impl std::fmt::Debug for CodeTokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CodeTokenizer")
            .field("kind", &self.kind)
            .field("vocab_size", &self.vocab_size())
            .finish()
    }
}

fn tk_err(e: impl std::fmt::Display) -> Error {
    Error::Tokenizer(e.to_string())
}

impl CodeTokenizer {
    pub fn byte_level() -> Self {
        let mut alphabet: Vec<char> = ByteLevel::alphabet().into_iter().collect();
        alphabet.sort_unstable();
        let mut vocab = BTreeMap::new();
        for (i, tok) in ["<s>", "<pad>", "</s>", "<unk>"].iter().enumerate() {
            vocab.insert(tok.to_string(), i as u32);
        }
        for (i, c) in alphabet.iter().enumerate() {
            vocab.insert(c.to_string(), 4 + i as u32);
        }
        let spec = json!({
            "version": "1.0",
            "truncation": null,
            "padding": null,
            "added_tokens": [],
            "normalizer": null,
            "pre_tokenizer": {"type": "ByteLevel", "add_prefix_space": false, "trim_offsets": true, "use_regex": true},
            "post_processor": null,
            "decoder": {"type": "ByteLevel", "add_prefix_space": false, "trim_offsets": true, "use_regex": true},
            "model": {"type": "BPE", "dropout": null, "unk_token": "<unk>", "continuing_subword_prefix": null,
                      "end_of_word_suffix": null, "fuse_unk": false, "byte_fallback": false,
                      "vocab": vocab, "merges": []}
        });
        let inner = Tokenizer::from_str(&spec.to_string()).expect("byte-level spec is valid");
        CodeTokenizer {
            inner,
            special: SpecialTokens::default(),
            kind: TokenizerKind::ByteLevel,
        }
    }

    /// Loads `vocab.json` and `merges.txt` from a directory.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let vocab = dir.join("vocab.json");
        let merges = dir.join("merges.txt");
        let bpe = tokenizers::models::bpe::BPE::from_file(
            &vocab.to_string_lossy(),
            &merges.to_string_lossy(),
        )
        .unk_token("<unk>".into())
        .build()
        .map_err(tk_err)?;
        let mut inner = Tokenizer::new(bpe);
        inner.with_pre_tokenizer(Some(
            ByteLevel::default()
                .add_prefix_space(false)
                .trim_offsets(true),
        ));
        inner.with_decoder(Some(ByteLevel::default()));
        let id = |t: &str| {
            inner
                .token_to_id(t)
                .ok_or_else(|| Error::Tokenizer(format!("vocabulary lacks {t}")))
        };
        let special = SpecialTokens {
            cls: id("<s>")?,
            pad: id("<pad>")?,
            sep: id("</s>")?,
            unk: id("<unk>")?,
        };
        Ok(CodeTokenizer {
            inner,
            special,
            kind: TokenizerKind::Bpe,
        })
    }

    pub fn kind(&self) -> TokenizerKind {
        self.kind
    }

    pub fn special(&self) -> SpecialTokens {
        self.special
    }

    pub fn vocab_size(&self) -> usize {
        self.inner.get_vocab_size(true)
    }

    /// Copies the vocabulary files into `dir` (no-op for byte level).
    pub fn save(&self, source_dir: Option<&Path>, dir: &Path) -> Result<()> {
        if let (TokenizerKind::Bpe, Some(src)) = (self.kind, source_dir) {
            for f in ["vocab.json", "merges.txt"] {
                std::fs::copy(src.join(f), dir.join(f)).map_err(|e| Error::io(dir.join(f), e))?;
            }
        }
        Ok(())
    }

    /// Subword ids with byte offsets into `source`.
    pub fn encode_raw(&self, source: &str) -> Result<(Vec<u32>, Vec<(usize, usize)>)> {
        let enc = self.inner.encode(source, false).map_err(tk_err)?;
        Ok((enc.get_ids().to_vec(), enc.get_offsets().to_vec()))
    }

    /// Tokenizes `source`, keeping at most `max_len` positions including the
    /// two special tokens, and aligns data-flow edges to subword positions.
    pub fn tokenize(
        &self,
        source: &str,
        flow: &DataFlow,
        max_len: usize,
        max_nodes: usize,
    ) -> Result<TokenizedInput> {
        if max_len < 2 {
            return Err(Error::InvalidArgument(format!(
                "max_len must leave room for special tokens, got {max_len}"
            )));
        }
        let (ids, offsets) = self.encode_raw(source)?;
        let budget = max_len - 2;
        let truncated = ids.len() > budget;
        let kept = ids.len().min(budget);

        let mut token_ids = Vec::with_capacity(kept + 2);
        token_ids.push(self.special.cls);
        token_ids.extend_from_slice(&ids[..kept]);
        token_ids.push(self.special.sep);

        // Subword span (sequence positions) for each variable occurrence.
        let spans: Vec<Option<Range<usize>>> = flow
            .variables
            .iter()
            .map(|v| {
                let mut hit = offsets[..kept]
                    .iter()
                    .enumerate()
                    .filter(|(_, &(s, e))| s < v.span.end && e > v.span.start)
                    .map(|(i, _)| i + 1);
                let first = hit.next()?;
                let last = hit.last().unwrap_or(first);
                let fully_kept = offsets[..kept]
                    .last()
                    .is_some_and(|&(_, e)| e >= v.span.end);
                fully_kept.then_some(first..last + 1)
            })
            .collect();

        let mut edges: Vec<(usize, usize)> = flow
            .edges
            .iter()
            .filter_map(|e| match (&spans[e.from], &spans[e.to]) {
                (Some(u), Some(d)) if u.start != d.start => Some((u.start, d.start)),
                _ => None,
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();

        let mut node_starts: BTreeSet<usize> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
        while node_starts.len() > max_nodes {
            node_starts.pop_last();
        }
        edges.retain(|(a, b)| node_starts.contains(a) && node_starts.contains(b));
        let by_start: BTreeMap<usize, Range<usize>> = spans
            .into_iter()
            .flatten()
            .map(|r| (r.start, r))
            .collect();
        let nodes = node_starts.iter().map(|s| by_start[s].clone()).collect();

        Ok(TokenizedInput {
            attention_mask: vec![1; token_ids.len()],
            token_ids,
            dfg_edges: edges,
            nodes,
            truncated,
            degraded_dfg: flow.degraded,
        })
    }
}
