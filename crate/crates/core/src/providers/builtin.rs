use std::hash::Hasher;

use fnv::FnvHasher;
use unicode_normalization::UnicodeNormalization;
use unicode_segmentation::UnicodeSegmentation;

use super::{Embedder, TextTransformer, TransformKind, Transformed, require_text, MIN_DIM};
use crate::domain::Embedding;
use crate::error::{Error, Result};

const NGRAM: usize = 3;

/// Feature-hashing embedder over character 3-grams.
///
/// Input is NFC-normalized, lowercased, whitespace-collapsed and padded with
/// one space on each side, so every non-empty input yields at least one
/// 3-gram. Each 3-gram adds 1.0 to bucket `fnv1a(gram) mod dim`; the bucket
/// vector is then L2-normalized. Image references are embedded the same way,
/// which puts queries and keyframe references in one space.
#[derive(Debug, Clone)]
pub struct BuiltinEmbedder {
    dim: usize,
}

impl BuiltinEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < MIN_DIM {
            return Err(Error::invalid(format!(
                "embedding dim must be at least {MIN_DIM}, got {dim}"
            )));
        }
        Ok(BuiltinEmbedder { dim })
    }

    fn embed_one(&self, text: &str) -> Result<Embedding> {
        require_text(text)?;
        let normalized: String = text.nfc().collect::<String>().to_lowercase().nfc().collect();
        let mut padded = String::with_capacity(normalized.len() + 2);
        padded.push(' ');
        for (i, word) in normalized.split_whitespace().enumerate() {
            if i > 0 {
                padded.push(' ');
            }
            padded.push_str(word);
        }
        padded.push(' ');

        let chars: Vec<char> = padded.chars().collect();
        let mut buckets = vec![0f32; self.dim];
        let mut gram = String::new();
        for window in chars.windows(NGRAM) {
            gram.clear();
            gram.extend(window);
            let mut hasher = FnvHasher::default();
            hasher.write(gram.as_bytes());
            buckets[(hasher.finish() % self.dim as u64) as usize] += 1.0;
        }
        Embedding::normalize(buckets)
    }
}

impl Embedder for BuiltinEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }

    fn embed_images(&self, image_refs: &[String]) -> Result<Vec<Embedding>> {
        image_refs.iter().map(|r| self.embed_one(r)).collect()
    }
}

/// Rule-based cleaning: whitespace (including tabs and newlines) becomes a
/// space, remaining control characters are dropped, the result is NFC
/// normalized, whitespace runs collapse to one space, and both ends are
/// trimmed. Idempotent.
pub fn clean_text(text: &str) -> String {
    let stripped: String = text
        .chars()
        .filter_map(|c| {
            if c.is_whitespace() {
                Some(' ')
            } else if c.is_control() {
                None
            } else {
                Some(c)
            }
        })
        .collect();
    let composed: String = stripped.nfc().collect();
    composed.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone)]
pub struct BuiltinTransformer {
    summary_sentences: usize,
}

impl BuiltinTransformer {
    pub fn new(summary_sentences: usize) -> Self {
        BuiltinTransformer {
            summary_sentences: summary_sentences.max(1),
        }
    }
}

impl Default for BuiltinTransformer {
    fn default() -> Self {
        BuiltinTransformer::new(3)
    }
}

impl TextTransformer for BuiltinTransformer {
    fn transform(&self, kind: TransformKind, text: &str) -> Result<Transformed> {
        require_text(text)?;
        let cleaned = clean_text(text);
        let text = match kind {
            TransformKind::Clean => cleaned,
            TransformKind::Summarize => cleaned
                .unicode_sentences()
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .take(self.summary_sentences)
                .collect::<Vec<_>>()
                .join(" "),
        };
        Ok(Transformed { text, tokens: None })
    }
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTransformer;

impl TextTransformer for IdentityTransformer {
    fn transform(&self, _kind: TransformKind, text: &str) -> Result<Transformed> {
        Ok(Transformed {
            text: text.to_owned(),
            tokens: None,
        })
    }
}
