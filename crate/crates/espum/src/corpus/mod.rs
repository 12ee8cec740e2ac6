//! Corpora, boundary labels, and the synthetic cipher-corpus generator.
//!
//! Boundary convention used throughout: `flags[t] == true` means frame `t`
//! begins a new segment. Frame 0 is never flagged — the first segment starts
//! there implicitly — so an utterance has `1 + sum(flags[1..])` segments.

mod io;
mod synth;

pub use io::{
    load_boundary_labels, load_eval_set, load_phoneme_corpus, load_unit_corpus,
    save_boundary_labels, save_phoneme_corpus, save_unit_corpus,
};
pub use synth::{synth_cipher, CipherSpec, MarkovChain, SynthOutput, TrueMapping};

use std::collections::HashMap;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: value {value} outside [0,1]")]
    Range {
        path: PathBuf,
        line: usize,
        value: f64,
    },
    #[error("{path}:{line}: unknown symbol {symbol:?} (token {token})")]
    UnknownSymbol {
        path: PathBuf,
        line: usize,
        token: usize,
        symbol: String,
    },
    #[error("corpus file {path} contains no sequences")]
    EmptyCorpus { path: PathBuf },
    #[error("invalid vocab: {0}")]
    InvalidVocab(String),
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid cipher spec: {0}")]
    InvalidSpec(String),
    #[error("boundary labels do not match sequences: {0}")]
    BoundaryMismatch(String),
}

/// Ordered phoneme alphabet with a symbol-to-id index.
#[derive(Debug, Clone)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(symbols: Vec<String>) -> Result<Self, CorpusError> {
        if symbols.len() < 2 {
            return Err(CorpusError::InvalidVocab(format!(
                "need at least 2 symbols, got {}",
                symbols.len()
            )));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (id, sym) in symbols.iter().enumerate() {
            if sym.is_empty() || sym.chars().any(char::is_whitespace) {
                return Err(CorpusError::InvalidVocab(format!(
                    "symbol {sym:?} is empty or contains whitespace"
                )));
            }
            if index.insert(sym.clone(), id).is_some() {
                return Err(CorpusError::InvalidVocab(format!("duplicate symbol {sym:?}")));
            }
        }
        Ok(Self { symbols, index })
    }

    /// Vocab of `n` synthetic symbols `p00`, `p01`, ...
    pub fn synthetic(n: usize) -> Self {
        let symbols = (0..n).map(|i| format!("p{i:02}")).collect();
        Self::new(symbols).expect("synthetic symbols are unique")
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

/// One utterance of discrete unit ids, one per frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitSequence {
    units: Vec<usize>,
}

impl UnitSequence {
    pub fn new(units: Vec<usize>) -> Result<Self, CorpusError> {
        if units.is_empty() {
            return Err(CorpusError::InvalidSequence("empty unit sequence".into()));
        }
        Ok(Self { units })
    }

    pub fn units(&self) -> &[usize] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor rejects empty sequences
    }

    /// Largest unit id plus one; a lower bound on the unit inventory size.
    pub fn max_id(&self) -> usize {
        *self.units.iter().max().expect("non-empty")
    }
}

/// One phoneme label sequence over a [`Vocab`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeSequence {
    labels: Vec<usize>,
}

impl PhonemeSequence {
    pub fn new(labels: Vec<usize>, vocab_size: usize) -> Result<Self, CorpusError> {
        if labels.is_empty() {
            return Err(CorpusError::InvalidSequence("empty phoneme sequence".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= vocab_size) {
            return Err(CorpusError::InvalidSequence(format!(
                "label {bad} out of range for vocab of size {vocab_size}"
            )));
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Per-frame boundary indicators with confidence scores.
///
/// `flags[t]` marks frame `t` as the start of a new segment; `confidence[t]`
/// is a score in `[0,1]` used to select frames for the segmenter's BCE loss.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLabels {
    flags: Vec<bool>,
    confidence: Vec<f64>,
}

impl BoundaryLabels {
    pub fn new(flags: Vec<bool>, confidence: Vec<f64>) -> Result<Self, CorpusError> {
        if flags.len() != confidence.len() {
            return Err(CorpusError::InvalidSequence(format!(
                "{} flags vs {} confidence values",
                flags.len(),
                confidence.len()
            )));
        }
        if flags.is_empty() {
            return Err(CorpusError::InvalidSequence("empty boundary labels".into()));
        }
        if let Some(&bad) = confidence.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(CorpusError::InvalidSequence(format!(
                "confidence {bad} outside [0,1]"
            )));
        }
        Ok(Self { flags, confidence })
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn confidence(&self) -> &[f64] {
        &self.confidence
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    /// Segment count under the frame-0-implicit convention: flags at t >= 1
    /// each open a new segment.
    pub fn segment_count(&self) -> usize {
        1 + self.flags[1..].iter().filter(|&&f| f).count()
    }

    /// Boundary frame positions, excluding the conventional frame 0.
    pub fn positions(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .skip(1)
            .filter_map(|(t, &f)| f.then_some(t))
            .collect()
    }
}

/// Unpaired speech-side corpus: unit sequences plus optional boundary labels.
#[derive(Debug, Clone)]
pub struct UnitCorpus {
    sequences: Vec<UnitSequence>,
    boundaries: Option<Vec<BoundaryLabels>>,
}

impl UnitCorpus {
    pub fn new(sequences: Vec<UnitSequence>) -> Result<Self, CorpusError> {
        if sequences.is_empty() {
            return Err(CorpusError::InvalidSequence("empty unit corpus".into()));
        }
        Ok(Self {
            sequences,
            boundaries: None,
        })
    }

    pub fn with_boundaries(mut self, boundaries: Vec<BoundaryLabels>) -> Result<Self, CorpusError> {
        if boundaries.len() != self.sequences.len() {
            return Err(CorpusError::BoundaryMismatch(format!(
                "{} label rows for {} sequences",
                boundaries.len(),
                self.sequences.len()
            )));
        }
        for (i, (seq, lab)) in self.sequences.iter().zip(&boundaries).enumerate() {
            if seq.len() != lab.len() {
                return Err(CorpusError::BoundaryMismatch(format!(
                    "sequence {i} has {} frames but {} labels",
                    seq.len(),
                    lab.len()
                )));
            }
        }
        self.boundaries = Some(boundaries);
        Ok(self)
    }

    pub fn sequences(&self) -> &[UnitSequence] {
        &self.sequences
    }

    pub fn boundaries(&self) -> Option<&[BoundaryLabels]> {
        self.boundaries.as_deref()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Smallest inventory size that covers every unit id in the corpus.
    pub fn min_inventory(&self) -> usize {
        self.sequences.iter().map(|s| s.max_id() + 1).max().unwrap_or(0)
    }
}

/// Unpaired text-side corpus of phoneme sequences.
#[derive(Debug, Clone)]
pub struct PhonemeCorpus {
    sequences: Vec<PhonemeSequence>,
}

impl PhonemeCorpus {
    pub fn new(sequences: Vec<PhonemeSequence>) -> Result<Self, CorpusError> {
        if sequences.is_empty() {
            return Err(CorpusError::InvalidSequence("empty phoneme corpus".into()));
        }
        Ok(Self { sequences })
    }

    pub fn sequences(&self) -> &[PhonemeSequence] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// One held-out paired example: units, reference phonemes, true boundaries.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub units: UnitSequence,
    pub phonemes: PhonemeSequence,
    pub boundaries: BoundaryLabels,
}

/// Paired evaluation set with ground-truth transcripts and boundaries.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub items: Vec<EvalItem>,
}

impl EvalSet {
    pub fn new(items: Vec<EvalItem>) -> Result<Self, CorpusError> {
        for (i, item) in items.iter().enumerate() {
            if item.units.len() != item.boundaries.len() {
                return Err(CorpusError::BoundaryMismatch(format!(
                    "eval item {i}: {} frames vs {} boundary labels",
                    item.units.len(),
                    item.boundaries.len()
                )));
            }
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}
