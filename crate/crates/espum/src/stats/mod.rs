//! Empirical and model-predicted N-skipgram and positional-unigram
//! distributions.
//!
//! An N-skipgram at offsets `k = (k_1, …, k_{N-1})` is the joint distribution
//! of symbols at positions `(t, t+k_1, t+k_1+k_2, …)`, pooled over every
//! anchor `t` that fits inside a sequence, over the whole corpus. Counting
//! versions consume label sequences; "expected" versions consume stacks of
//! probability rows and are differentiable, which is how the generator's
//! output distribution is matched against text statistics.

mod positional;
mod skipgram;

pub use positional::{
    expected_positional_unigram, expected_positional_unigram_backward, positional_unigram,
    PositionalUnigram,
};
pub use skipgram::{
    expected_skipgram, expected_skipgram_backward, expected_skipgram_on_support,
    expected_skipgram_on_support_backward, skipgram_dist, topk_truncate, write_dist_text,
    SkipgramDist, SupportProbs,
};

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("invalid skip offsets: {0}")]
    InvalidOffsets(String),
    #[error("no sequence is long enough to host one skipgram at offsets {0:?}")]
    NoSupport(Vec<usize>),
    #[error("mismatched distributions: {0}")]
    Mismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// The set of skipgram orders and offsets to match during training.
///
/// Each entry is the offset tuple `(k_1, …, k_{N-1})` of one distribution;
/// the order N is implied by the tuple length plus one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipSizeSet {
    entries: Vec<Vec<usize>>,
}

impl SkipSizeSet {
    pub fn new(entries: Vec<Vec<usize>>) -> Result<Self, StatsError> {
        for e in &entries {
            if e.is_empty() {
                return Err(StatsError::InvalidOffsets(
                    "offset tuple is empty (order must be ≥ 2)".into(),
                ));
            }
            if e.iter().any(|&k| k == 0) {
                return Err(StatsError::InvalidOffsets(format!(
                    "offsets must be ≥ 1, got {e:?}"
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.clone()) {
                return Err(StatsError::InvalidOffsets(format!(
                    "duplicate offset tuple {e:?}"
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Bigrams at skips 1..=6 plus trigrams at uniform skips 1 and 2 — the
    /// configuration whose dense storage stays within `6·V² + 2·V³` entries.
    pub fn bi_tri_default() -> Self {
        let mut entries: Vec<Vec<usize>> = (1..=6).map(|k| vec![k]).collect();
        entries.push(vec![1, 1]);
        entries.push(vec![2, 2]);
        Self::new(entries).expect("static entries are valid")
    }

    /// Bigrams at skips `1..=max_skip` only.
    pub fn bigrams_up_to(max_skip: usize) -> Result<Self, StatsError> {
        Self::new((1..=max_skip).map(|k| vec![k]).collect())
    }

    pub fn entries(&self) -> &[Vec<usize>] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest order among the entries (0 when empty).
    pub fn max_order(&self) -> usize {
        self.entries.iter().map(|e| e.len() + 1).max().unwrap_or(0)
    }

    /// Longest span `Σk` any entry reaches past its anchor.
    pub fn max_span(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.iter().sum::<usize>())
            .max()
            .unwrap_or(0)
    }
}
