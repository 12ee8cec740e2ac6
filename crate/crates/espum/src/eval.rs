//! Decoding and metrics: phone error rate plus boundary precision, recall,
//! F1, and R-value in lenient and harsh matching modes.
//!
//! Decoding replaces the soft alignment with hard mean pooling inside the
//! predicted boundaries. Corpus scores pool counts across utterances before
//! any rate is formed, so long utterances weigh more than short ones.

use crate::corpus::{BoundaryLabels, CorpusError, EvalSet, PhonemeSequence, UnitSequence};
use crate::diffnet::Tensor;
use crate::model::{binarize_boundaries, hard_pool, Generator, ModelError, Segmenter};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty reference")]
    EmptyRef,
    #[error("invalid boundary positions: {0}")]
    InvalidPositions(String),
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Edit-distance counts against a reference transcription.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerResult {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_length: usize,
    pub per: f64,
}

impl PerResult {
    fn from_counts(s: usize, d: usize, i: usize, ref_length: usize) -> Self {
        Self {
            substitutions: s,
            deletions: d,
            insertions: i,
            ref_length,
            per: (s + d + i) as f64 / ref_length as f64,
        }
    }

    pub fn distance(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// How hypothesis boundaries are credited against reference boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    /// A boundary is a hit if any counterpart lies within tolerance; one
    /// reference boundary may be claimed by several hypotheses.
    Lenient,
    /// Maximum one-to-one matching within tolerance — no double counting.
    Harsh,
}

impl std::fmt::Display for MatchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MatchMode::Lenient => "lenient",
            MatchMode::Harsh => "harsh",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub r_value: f64,
    pub mode: MatchMode,
    pub tolerance_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub merge_duplicates: bool,
    pub binarize_threshold: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            merge_duplicates: true,
            binarize_threshold: 0.5,
        }
    }
}

/// Per-segment argmax of pooled probability rows (ties to the lowest id),
/// optionally merging adjacent identical labels.
pub fn argmax_labels(pooled: &Tensor, merge_duplicates: bool) -> Vec<usize> {
    let mut labels = Vec::with_capacity(pooled.rows());
    for l in 0..pooled.rows() {
        let row = pooled.row(l);
        let mut best = 0;
        for (v, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = v;
            }
        }
        if merge_duplicates && labels.last() == Some(&best) {
            continue;
        }
        labels.push(best);
    }
    labels
}

/// Binarized segmentation plus hard-pooled transcription for one utterance.
pub fn decode_with_boundaries(
    segmenter: &Segmenter,
    generator: &Generator,
    units: &UnitSequence,
    opts: &DecodeOptions,
) -> Result<(PhonemeSequence, BoundaryLabels), EvalError> {
    let (b, _) = segmenter.forward(units)?;
    let labels = binarize_boundaries(&b, opts.binarize_threshold);
    let (frames, _) = generator.forward(units)?;
    let pooled = hard_pool(&labels, &frames)?;
    let phonemes = PhonemeSequence::new(
        argmax_labels(&pooled, opts.merge_duplicates),
        generator.vocab_size(),
    )?;
    Ok((phonemes, labels))
}

pub fn decode(
    segmenter: &Segmenter,
    generator: &Generator,
    units: &UnitSequence,
    opts: &DecodeOptions,
) -> Result<PhonemeSequence, EvalError> {
    decode_with_boundaries(segmenter, generator, units, opts).map(|(p, _)| p)
}

/// Levenshtein counts between reference and hypothesis. Among optimal
/// alignments the backtrace prefers substitution over insertion over
/// deletion.
pub fn per(reference: &PhonemeSequence, hypothesis: &PhonemeSequence) -> Result<PerResult, EvalError> {
    let (s, d, i) = edit_counts(reference.labels(), hypothesis.labels())?;
    Ok(PerResult::from_counts(s, d, i, reference.len()))
}

fn edit_counts(r: &[usize], h: &[usize]) -> Result<(usize, usize, usize), EvalError> {
    if r.is_empty() {
        return Err(EvalError::EmptyRef);
    }
    let (n, m) = (r.len(), h.len());
    let mut d = vec![0usize; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        d[idx(i, 0)] = i;
    }
    for j in 0..=m {
        d[idx(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[idx(i - 1, j - 1)] + usize::from(r[i - 1] != h[j - 1]);
            let ins = d[idx(i, j - 1)] + 1;
            let del = d[idx(i - 1, j)] + 1;
            d[idx(i, j)] = sub.min(ins).min(del);
        }
    }
    let (mut i, mut j) = (n, m);
    let (mut subs, mut dels, mut inss) = (0, 0, 0);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let cost = usize::from(r[i - 1] != h[j - 1]);
            if d[idx(i, j)] == d[idx(i - 1, j - 1)] + cost {
                subs += cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[idx(i, j)] == d[idx(i, j - 1)] + 1 {
            inss += 1;
            j -= 1;
        } else {
            dels += 1;
            i -= 1;
        }
    }
    Ok((subs, dels, inss))
}

/// Raw hit counts of one utterance's boundary sets under a matching mode.
/// Returns (precision hits, hyp count, recall hits, ref count).
fn boundary_hits(
    reference: &[usize],
    hypothesis: &[usize],
    tolerance: usize,
    mode: MatchMode,
) -> Result<(usize, usize, usize, usize), EvalError> {
    for (name, pos) in [("reference", reference), ("hypothesis", hypothesis)] {
        if pos.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::InvalidPositions(format!(
                "{name} positions are not strictly increasing"
            )));
        }
    }
    let within = |a: usize, b: usize| a.abs_diff(b) <= tolerance;
    match mode {
        MatchMode::Lenient => {
            let p_hits = hypothesis
                .iter()
                .filter(|&&h| reference.iter().any(|&r| within(h, r)))
                .count();
            let r_hits = reference
                .iter()
                .filter(|&&r| hypothesis.iter().any(|&h| within(h, r)))
                .count();
            Ok((p_hits, hypothesis.len(), r_hits, reference.len()))
        }
        MatchMode::Harsh => {
            // Greedy left-to-right on sorted positions is a maximum
            // one-to-one matching for intervals on a line.
            let (mut i, mut j, mut hits) = (0, 0, 0);
            while i < reference.len() && j < hypothesis.len() {
                if within(reference[i], hypothesis[j]) {
                    hits += 1;
                    i += 1;
                    j += 1;
                } else if reference[i] < hypothesis[j] {
                    i += 1;
                } else {
                    j += 1;
                }
            }
            Ok((hits, hypothesis.len(), hits, reference.len()))
        }
    }
}

/// Segmentation R-value. An empty side scores rate 0 (both empty: 1), and
/// an undefined over-segmentation ratio (precision 0) is taken as 0.
fn metrics_from_counts(
    p_hits: usize,
    hyp_n: usize,
    r_hits: usize,
    ref_n: usize,
    mode: MatchMode,
    tolerance_frames: usize,
) -> BoundaryMetrics {
    let rate = |hits: usize, n: usize| {
        if n > 0 {
            hits as f64 / n as f64
        } else if ref_n == 0 && hyp_n == 0 {
            1.0
        } else {
            0.0
        }
    };
    let precision = rate(p_hits, hyp_n);
    let recall = rate(r_hits, ref_n);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let os = if precision > 0.0 {
        recall / precision - 1.0
    } else {
        0.0
    };
    let r1 = ((1.0 - recall).powi(2) + os * os).sqrt();
    let r2 = (-os + recall - 1.0) / 2.0f64.sqrt();
    BoundaryMetrics {
        precision,
        recall,
        f1,
        r_value: 1.0 - (r1.abs() + r2.abs()) / 2.0,
        mode,
        tolerance_frames,
    }
}

pub fn boundary_metrics(
    reference: &[usize],
    hypothesis: &[usize],
    tolerance: usize,
    mode: MatchMode,
) -> Result<BoundaryMetrics, EvalError> {
    let (ph, hn, rh, rn) = boundary_hits(reference, hypothesis, tolerance, mode)?;
    Ok(metrics_from_counts(ph, hn, rh, rn, mode, tolerance))
}

/// PER over a corpus: error and reference counts pooled before the rate.
pub fn pooled_per(
    references: &[PhonemeSequence],
    hypotheses: &[PhonemeSequence],
) -> Result<PerResult, EvalError> {
    if references.len() != hypotheses.len() {
        return Err(EvalError::Mismatch(format!(
            "{} references vs {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    if references.is_empty() {
        return Err(EvalError::EmptyRef);
    }
    let (mut s, mut d, mut i, mut n) = (0, 0, 0, 0);
    for (r, h) in references.iter().zip(hypotheses) {
        let (cs, cd, ci) = edit_counts(r.labels(), h.labels())?;
        s += cs;
        d += cd;
        i += ci;
        n += r.len();
    }
    Ok(PerResult::from_counts(s, d, i, n))
}

/// Boundary metrics over a corpus: hit and boundary counts pooled across
/// utterances before any rate is formed.
pub fn pooled_boundary_metrics(
    references: &[Vec<usize>],
    hypotheses: &[Vec<usize>],
    tolerance: usize,
    mode: MatchMode,
) -> Result<BoundaryMetrics, EvalError> {
    if references.len() != hypotheses.len() {
        return Err(EvalError::Mismatch(format!(
            "{} references vs {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    let (mut ph, mut hn, mut rh, mut rn) = (0, 0, 0, 0);
    for (r, h) in references.iter().zip(hypotheses) {
        let (a, b, c, d) = boundary_hits(r, h, tolerance, mode)?;
        ph += a;
        hn += b;
        rh += c;
        rn += d;
    }
    Ok(metrics_from_counts(ph, hn, rh, rn, mode, tolerance))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub decode: DecodeOptions,
    pub tolerance_frames: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            decode: DecodeOptions::default(),
            // One frame: synthetic frames carry no duration, so this is the
            // analogue of the usual 20 ms window on real features.
            tolerance_frames: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEval {
    pub per: PerResult,
    pub lenient: BoundaryMetrics,
    pub harsh: BoundaryMetrics,
}

/// Decode and score a whole evaluation set with pooled counts.
pub fn corpus_eval(
    segmenter: &Segmenter,
    generator: &Generator,
    eval_set: &EvalSet,
    opts: &EvalOptions,
) -> Result<CorpusEval, EvalError> {
    let mut hyp_phonemes = Vec::with_capacity(eval_set.len());
    let mut ref_phonemes = Vec::with_capacity(eval_set.len());
    let mut hyp_bounds = Vec::with_capacity(eval_set.len());
    let mut ref_bounds = Vec::with_capacity(eval_set.len());
    for item in &eval_set.items {
        let (phonemes, labels) =
            decode_with_boundaries(segmenter, generator, &item.units, &opts.decode)?;
        hyp_phonemes.push(phonemes);
        ref_phonemes.push(item.phonemes.clone());
        hyp_bounds.push(labels.positions());
        ref_bounds.push(item.boundaries.positions());
    }
    Ok(CorpusEval {
        per: pooled_per(&ref_phonemes, &hyp_phonemes)?,
        lenient: pooled_boundary_metrics(
            &ref_bounds,
            &hyp_bounds,
            opts.tolerance_frames,
            MatchMode::Lenient,
        )?,
        harsh: pooled_boundary_metrics(
            &ref_bounds,
            &hyp_bounds,
            opts.tolerance_frames,
            MatchMode::Harsh,
        )?,
    })
}
