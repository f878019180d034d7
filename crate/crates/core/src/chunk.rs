//! Budgeted document windowing for the extraction passes.
//!
//! Token counts are estimated as whitespace-delimited words times 1.3 (integer
//! arithmetic, rounded up) — a deliberate model-free stand-in for a real
//! tokenizer so chunk boundaries are identical on every platform. Chunks
//! overlap by a configured token allowance so facts straddling a boundary are
//! seen by at least one whole window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub index: usize,
    pub text: String,
    /// Byte span of `text` within the source document.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingOptions {
    pub token_budget: usize,
    pub token_overlap: usize,
}

impl Default for ChunkingOptions {
    fn default() -> Self {
        ChunkingOptions { token_budget: 3000, token_overlap: 200 }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error("token budget must exceed the overlap (budget {budget}, overlap {overlap})")]
    BudgetTooSmall { budget: usize, overlap: usize },
}

/// ceil(words * 1.3) in exact integer math.
pub fn estimate_tokens(text: &str) -> usize {
    let words = text.split_whitespace().count();
    (words * 13).div_ceil(10)
}

/// Largest word count whose estimate stays within `budget` tokens.
fn words_within(budget: usize) -> usize {
    (budget * 10) / 13
}

/// Split `text` into overlapping windows that each fit the token budget.
/// Concatenating chunk 0 with every later chunk's post-overlap suffix
/// reproduces the document byte for byte.
pub fn chunk_text(text: &str, opts: &ChunkingOptions) -> Result<Vec<Chunk>, ChunkError> {
    let max_words = words_within(opts.token_budget);
    if max_words == 0 || opts.token_overlap >= opts.token_budget {
        return Err(ChunkError::BudgetTooSmall {
            budget: opts.token_budget,
            overlap: opts.token_overlap,
        });
    }
    let overlap_words = words_within(opts.token_overlap).min(max_words.saturating_sub(1));
    let stride = max_words - overlap_words;

    // Byte offset of each word start.
    let mut word_starts = Vec::new();
    let mut in_word = false;
    for (idx, c) in text.char_indices() {
        if c.is_whitespace() {
            in_word = false;
        } else if !in_word {
            in_word = true;
            word_starts.push(idx);
        }
    }
    let n = word_starts.len();
    if n <= max_words {
        return Ok(vec![Chunk { index: 0, text: text.to_string(), span: (0, text.len()) }]);
    }

    let mut chunks = Vec::new();
    let mut start_word = 0usize;
    loop {
        let end_word = start_word + max_words;
        let last = end_word >= n;
        let span_start = if chunks.is_empty() { 0 } else { word_starts[start_word] };
        let span_end = if last { text.len() } else { word_starts[end_word] };
        chunks.push(Chunk {
            index: chunks.len(),
            text: text[span_start..span_end].to_string(),
            span: (span_start, span_end),
        });
        if last {
            break;
        }
        start_word += stride;
    }
    Ok(chunks)
}

/// Suffix of a chunk's text that starts where the previous chunk ended.
/// Chunk 0 has no predecessor, so its suffix is the whole text.
pub fn non_overlap_suffix<'a>(chunks: &'a [Chunk], i: usize) -> &'a str {
    if i == 0 {
        return &chunks[0].text;
    }
    let prev_end = chunks[i - 1].span.1;
    let (start, _) = chunks[i].span;
    &chunks[i].text[prev_end - start..]
}
