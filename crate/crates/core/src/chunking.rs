//! Sentence-aware fixed-size chunking.

use alloc::string::String;
use alloc::vec::Vec;

pub const TARGET_CHARS: usize = 512;
pub const OVERLAP_CHARS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkParams {
    pub target: usize,
    pub overlap: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        ChunkParams {
            target: TARGET_CHARS,
            overlap: OVERLAP_CHARS,
        }
    }
}

/// Char offsets just past each sentence terminator (`.`, `!`, `?`) that is
/// followed by whitespace or the end of the text.
fn sentence_ends(chars: &[char]) -> Vec<usize> {
    chars
        .iter()
        .enumerate()
        .filter(|&(i, c)| {
            matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace())
        })
        .map(|(i, _)| i + 1)
        .collect()
}

/// Splits `text` into `[start, end)` char ranges.
///
/// While more than `target` chars remain, a chunk ends at the sentence end
/// closest to `start + target` (earlier one on ties) among those past
/// `start + overlap`; with no such sentence end it is cut at exactly
/// `start + target`. The next chunk starts `overlap` chars before the
/// previous end. The remainder becomes the last chunk.
pub fn chunk_spans(text: &str, params: ChunkParams) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let len = chars.len();
    if len == 0 {
        return Vec::new();
    }
    let target = params.target.max(1);
    let overlap = params.overlap.min(target / 2);
    let ends = sentence_ends(&chars);
    let mut spans = Vec::new();
    let mut start = 0;
    loop {
        if len - start <= target {
            spans.push((start, len));
            break;
        }
        let goal = start + target;
        let end = ends
            .iter()
            .copied()
            .filter(|&e| e > start + overlap && e < len)
            .min_by_key(|&e| (e.abs_diff(goal), e))
            .unwrap_or(goal);
        spans.push((start, end));
        start = end - overlap;
    }
    spans
}

pub fn chunk_text(text: &str, params: ChunkParams) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    chunk_spans(text, params)
        .into_iter()
        .map(|(s, e)| chars[s..e].iter().collect())
        .collect()
}
