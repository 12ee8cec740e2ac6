//! The four training losses and their weighted combination.
//!
//! Matching losses compare batch statistics of pooled segment rows against
//! fixed text-corpus targets; both return the per-row gradients the trainer
//! feeds back through pooling and the networks. Sub-distribution L1 terms use
//! the subgradient convention `sign(0) = 0`.

use crate::corpus::BoundaryLabels;
use crate::diffnet::Tensor;
use crate::stats::{
    expected_positional_unigram, expected_positional_unigram_backward, expected_skipgram,
    expected_skipgram_backward, expected_skipgram_on_support,
    expected_skipgram_on_support_backward, PositionalUnigram, SkipgramDist, StatsError,
};

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
    #[error("non-finite {0} loss")]
    NonFinite(&'static str),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Relative weights of the loss parts; unigram and skipgram are fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_smooth: f64,
    pub lambda_segment: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_smooth: 16.0,
            lambda_segment: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.lambda_smooth < 0.0 || self.lambda_segment < 0.0 {
            return Err(LossError::Mismatch(format!(
                "negative loss weight: smooth {}, segment {}",
                self.lambda_smooth, self.lambda_segment
            )));
        }
        Ok(())
    }
}

/// Weighted-BCE settings for the segmenter loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BceConfig {
    pub pos_weight: f64,
    pub confidence_threshold: f64,
}

impl Default for BceConfig {
    fn default() -> Self {
        Self {
            pos_weight: 1.1,
            confidence_threshold: 0.6,
        }
    }
}

impl BceConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.pos_weight <= 0.0 {
            return Err(LossError::Mismatch(format!(
                "pos_weight must be > 0, got {}",
                self.pos_weight
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(LossError::Mismatch(format!(
                "confidence threshold {} outside [0,1]",
                self.confidence_threshold
            )));
        }
        Ok(())
    }
}

/// Unweighted values of the four loss parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub unigram: f64,
    pub skipgram: f64,
    pub segment: f64,
    pub smooth: f64,
}

/// `unigram + skipgram + λ_segment·segment + λ_smooth·smooth`.
pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> Result<f64, LossError> {
    for (value, name) in [
        (parts.unigram, "unigram"),
        (parts.skipgram, "skipgram"),
        (parts.segment, "segment"),
        (parts.smooth, "smooth"),
    ] {
        if !value.is_finite() {
            return Err(LossError::NonFinite(name));
        }
    }
    Ok(parts.unigram
        + parts.skipgram
        + weights.lambda_segment * parts.segment
        + weights.lambda_smooth * parts.smooth)
}

/// Value-level Eq.-5 sum: `Σ_k ‖target_k − pred_k‖₁` over paired
/// distributions. The differentiable batch version is
/// [`skipgram_match_loss`].
pub fn skipgram_loss(pred: &[SkipgramDist], target: &[SkipgramDist]) -> Result<f64, LossError> {
    if pred.len() != target.len() {
        return Err(LossError::Mismatch(format!(
            "{} predicted distributions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    let mut sum = 0.0;
    for (p, t) in pred.iter().zip(target) {
        if p.offsets() != t.offsets() {
            return Err(LossError::Mismatch(format!(
                "offsets {:?} paired with target offsets {:?}",
                p.offsets(),
                t.offsets()
            )));
        }
        sum += p.l1(t)?;
    }
    Ok(sum)
}

/// Skipgram matching loss of a batch of probability-row stacks against fixed
/// targets, with gradients w.r.t. every row.
///
/// Untruncated targets of order ≤ 3 go through the dense table; otherwise the
/// predicted distribution is evaluated on the target's support only, and the
/// remaining predicted mass enters as one aggregate term — equal to the full
/// union-support L1 because off-support targets are zero.
pub fn skipgram_match_loss(
    batch: &[Tensor],
    targets: &[SkipgramDist],
) -> Result<(f64, Vec<Tensor>), LossError> {
    let mut loss = 0.0;
    let mut grads: Vec<Tensor> = batch.iter().map(|s| Tensor::zeros(s.shape())).collect();
    for target in targets {
        let offsets = target.offsets();
        // A batch whose rows are all too short to host these offsets carries
        // no evidence about them: contribute nothing rather than fail, so
        // training survives batches of short pooled sequences.
        let span: usize = offsets.iter().sum();
        if batch.iter().all(|s| s.rows() <= span) {
            continue;
        }
        if let (false, Some(t_table)) = (target.is_truncated(), target.dense()) {
            let pred = expected_skipgram(batch, offsets)?;
            let p_table = pred.dense().expect("order ≤ 3 predictions are dense");
            let mut grad_table = vec![0.0; p_table.len()];
            for ((g, &p), &t) in grad_table.iter_mut().zip(p_table).zip(t_table) {
                loss += (p - t).abs();
                *g = signum0(p - t);
            }
            let row_grads = expected_skipgram_backward(batch, offsets, &grad_table)?;
            accumulate(&mut grads, row_grads);
        } else {
            let support_entries = target.support();
            let support: Vec<Vec<u16>> =
                support_entries.iter().map(|(t, _)| t.clone()).collect();
            let sp = expected_skipgram_on_support(batch, offsets, &support)?;
            let mut grad_probs = vec![0.0; support.len()];
            let mut on_support = 0.0;
            for (i, ((_, t), &p)) in support_entries.iter().zip(&sp.probs).enumerate() {
                loss += (p - t).abs();
                on_support += p;
                // The off-support mass (total − Σ p_i) also depends on p_i.
                grad_probs[i] = signum0(p - *t) - 1.0;
            }
            let off_mass = sp.total_mass - on_support;
            loss += off_mass.abs();
            let row_grads = expected_skipgram_on_support_backward(
                batch,
                offsets,
                &support,
                &grad_probs,
                1.0,
            )?;
            accumulate(&mut grads, row_grads);
        }
    }
    Ok((loss, grads))
}

/// Value-level mass-aware positional L1: per position,
/// `min(m_t, m_p)·‖t̂ − p̂‖₁ + |m_t − m_p|` with mass-normalized rows (a
/// position missing on one side contributes exactly the other's mass).
/// Positions and vocab must match; [`unigram_match_loss`] zero-extends.
pub fn unigram_loss(
    pred: &PositionalUnigram,
    target: &PositionalUnigram,
) -> Result<f64, LossError> {
    if pred.vocab() != target.vocab() || pred.l_max() != target.l_max() {
        return Err(LossError::Mismatch(format!(
            "{} positions × vocab {} vs {} positions × vocab {}",
            pred.l_max(),
            pred.vocab(),
            target.l_max(),
            target.vocab()
        )));
    }
    let mut sum = 0.0;
    for l in 0..pred.l_max() {
        sum += positional_term(pred.row(l), pred.mass(l), target.row(l), target.mass(l)).0;
    }
    Ok(sum)
}

/// One position of the mass-aware L1 plus its gradient w.r.t. the
/// unnormalized predicted row.
fn positional_term(p_row: &[f64], mp: f64, t_row: &[f64], mt: f64) -> (f64, Vec<f64>) {
    let dim = p_row.len();
    if mp <= 0.0 || mt <= 0.0 {
        // One side absent: the term is the other's mass. d|mt − mp|/dp_v = −sign(mt − mp).
        let g = -signum0(mt - mp);
        return ((mt - mp).abs(), vec![g; dim]);
    }
    let w = mp.min(mt);
    let mut l1_norm = 0.0;
    let mut s_dot_phat = 0.0;
    let mut signs = vec![0.0; dim];
    for (v, (&p, &t)) in p_row.iter().zip(t_row).enumerate() {
        let phat = p / mp;
        let that = t / mt;
        let s = signum0(that - phat);
        signs[v] = s;
        l1_norm += (that - phat).abs();
        s_dot_phat += s * phat;
    }
    let term = w * l1_norm + (mt - mp).abs();
    // d term/dp_v via mp = Σ p: the min-weight, the normalized rows, and the
    // mass-difference all move with p_v.
    let dw_dmp = if mp < mt { 1.0 } else { 0.0 };
    let dmass_diff = -signum0(mt - mp);
    let mut grad = vec![0.0; dim];
    for (g, &s) in grad.iter_mut().zip(&signs) {
        // dl1/dp_v = (−s_v + Σ_u s_u·p̂_u)/mp
        let dl1 = (-s + s_dot_phat) / mp;
        *g = dw_dmp * l1_norm + w * dl1 + dmass_diff;
    }
    (term, grad)
}

/// Mass-aware positional unigram loss of a batch against a fixed target,
/// with gradients w.r.t. every row. Positions are compared up to the longer
/// of the two sides; the shorter side reads as zero mass there.
pub fn unigram_match_loss(
    batch: &[Tensor],
    target: &PositionalUnigram,
) -> Result<(f64, Vec<Tensor>), LossError> {
    let longest = batch.iter().map(Tensor::rows).max().unwrap_or(0);
    let l_max = target.l_max().max(longest).max(1);
    let pred = expected_positional_unigram(batch, l_max)?;
    let vocab = pred.vocab();
    if vocab != target.vocab() {
        return Err(LossError::Mismatch(format!(
            "batch rows have {vocab} symbols, target has {}",
            target.vocab()
        )));
    }
    let zeros = vec![0.0; vocab];
    let mut loss = 0.0;
    let mut grad_table = vec![0.0; l_max * vocab];
    for l in 0..l_max {
        let (t_row, mt) = if l < target.l_max() {
            (target.row(l), target.mass(l))
        } else {
            (zeros.as_slice(), 0.0)
        };
        let (term, grad) = positional_term(pred.row(l), pred.mass(l), t_row, mt);
        loss += term;
        grad_table[l * vocab..(l + 1) * vocab].copy_from_slice(&grad);
    }
    let grads = expected_positional_unigram_backward(batch, l_max, &grad_table)?;
    Ok((loss, grads))
}

/// `Σ_t ‖row_{t+1} − row_t‖₂²` over one utterance's frame-level rows, with
/// its gradient. A single frame scores 0.
pub fn smoothness_loss(frame_probs: &Tensor) -> (f64, Tensor) {
    let t_len = frame_probs.rows();
    let dim = frame_probs.cols();
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(frame_probs.shape());
    for t in 0..t_len.saturating_sub(1) {
        for d in 0..dim {
            let diff = frame_probs.row(t + 1)[d] - frame_probs.row(t)[d];
            loss += diff * diff;
            grad.row_mut(t + 1)[d] += 2.0 * diff;
            grad.row_mut(t)[d] -= 2.0 * diff;
        }
    }
    (loss, grad)
}

/// Unreduced weighted BCE over frames whose label confidence exceeds the
/// threshold (frame 0 is never scored: its boundary is fixed by convention).
/// Returns the summed loss, the number of scored frames, and the gradient of
/// the sum — callers pick the mean's denominator, e.g. pooling frame counts
/// across a batch.
pub fn segment_bce_sum(
    pred: &[f64],
    labels: &BoundaryLabels,
    cfg: &BceConfig,
) -> Result<(f64, usize, Vec<f64>), LossError> {
    if pred.len() != labels.len() {
        return Err(LossError::Mismatch(format!(
            "{} predictions vs {} labels",
            pred.len(),
            labels.len()
        )));
    }
    let mut grad = vec![0.0; pred.len()];
    let mut sum = 0.0;
    let mut count = 0;
    for t in 1..pred.len() {
        if labels.confidence()[t] <= cfg.confidence_threshold {
            continue;
        }
        count += 1;
        let p = pred[t].clamp(1e-12, 1.0 - 1e-12);
        if labels.flags()[t] {
            sum -= cfg.pos_weight * p.ln();
            grad[t] = -cfg.pos_weight / p;
        } else {
            sum -= (1.0 - p).ln();
            grad[t] = 1.0 / (1.0 - p);
        }
    }
    Ok((sum, count, grad))
}

/// [`segment_bce_sum`] with mean reduction over the utterance's own scored
/// frames; empty selection scores 0.
pub fn segment_bce_loss(
    pred: &[f64],
    labels: &BoundaryLabels,
    cfg: &BceConfig,
) -> Result<(f64, Vec<f64>), LossError> {
    let (sum, count, mut grad) = segment_bce_sum(pred, labels, cfg)?;
    if count == 0 {
        return Ok((0.0, grad));
    }
    let n = count as f64;
    for g in &mut grad {
        *g /= n;
    }
    Ok((sum / n, grad))
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(into: &mut [Tensor], from: Vec<Tensor>) {
    for (a, b) in into.iter_mut().zip(from) {
        a.add_assign(&b).expect("matching shapes");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PhonemeCorpus, PhonemeSequence};
    use crate::stats::{positional_unigram, skipgram_dist, topk_truncate};

    fn corpus(seqs: &[&[usize]], vocab: usize) -> PhonemeCorpus {
        let seqs = seqs
            .iter()
            .map(|s| PhonemeSequence::new(s.to_vec(), vocab).unwrap())
            .collect();
        PhonemeCorpus::new(seqs).unwrap()
    }

    #[test]
    fn skipgram_loss_examples() {
        let c = corpus(&[&[0, 1, 0, 1]], 2);
        let d1 = skipgram_dist(&c, 2, &[1]).unwrap();
        let d2 = skipgram_dist(&c, 2, &[2]).unwrap();
        assert_eq!(
            skipgram_loss(&[d1.clone(), d2.clone()], &[d1.clone(), d2.clone()]).unwrap(),
            0.0
        );
        // Two offsets, each with L1 0.6 against a shifted version.
        let shifted = SkipgramDist::from_support(
            &[1],
            2,
            &[(vec![0, 1], 2.0 / 3.0 - 0.3), (vec![1, 0], 1.0 / 3.0 + 0.3)],
            false,
        )
        .unwrap();
        let shifted2 = SkipgramDist::from_support(
            &[2],
            2,
            &[(vec![0, 0], 0.2), (vec![1, 1], 0.8)],
            false,
        )
        .unwrap();
        let total = skipgram_loss(&[d1.clone(), d2.clone()], &[shifted, shifted2]).unwrap();
        assert!((total - 1.2).abs() < 1e-12);
        // Pairing distributions with different offsets is a key mismatch.
        assert!(skipgram_loss(&[d1.clone()], &[d2]).is_err());
        assert!(skipgram_loss(&[d1], &[]).is_err());
    }

    #[test]
    fn skipgram_match_gradient_has_sign_structure() {
        // Single anchor: pred(a,b) = r0[a]·r1[b]; target puts all mass on
        // (0,1), so every other pair's gradient sign is +1.
        let rows = Tensor::from_vec(&[2, 2], vec![0.7, 0.3, 0.4, 0.6]).unwrap();
        let target =
            SkipgramDist::from_support(&[1], 2, &[(vec![0, 1], 1.0)], false).unwrap();
        // Build the dense target so the dense path is exercised.
        let dense_target = skipgram_dist(&corpus(&[&[0, 1]], 2), 2, &[1]).unwrap();
        assert_eq!(dense_target.prob(&[0, 1]), 1.0);
        let (loss, grads) = skipgram_match_loss(&[rows], &[dense_target]).unwrap();
        assert!((loss - (0.28 + 0.58 + 0.12 + 0.18)).abs() < 1e-12);
        let g = grads[0].values();
        // dL/dr0 = sign ⊙ r1 summed over b; dL/dr1 symmetric over a.
        assert!((g[0] - (0.4 - 0.6)).abs() < 1e-12);
        assert!((g[1] - (0.4 + 0.6)).abs() < 1e-12);
        assert!((g[2] - (0.7 + 0.3)).abs() < 1e-12);
        assert!((g[3] - (-0.7 + 0.3)).abs() < 1e-12);
        let _ = target;
    }

    #[test]
    fn truncated_target_path_equals_full_union_l1() {
        let rows = Tensor::from_vec(
            &[4, 3],
            vec![
                0.5, 0.3, 0.2, //
                0.1, 0.6, 0.3, //
                0.25, 0.25, 0.5, //
                0.4, 0.4, 0.2,
            ],
        )
        .unwrap();
        let text = corpus(&[&[0, 1, 2, 0, 1, 0, 2, 1]], 3);
        let full_target = skipgram_dist(&text, 3, &[1]).unwrap();
        let truncated = topk_truncate(&full_target, 3);
        let (loss, _) = skipgram_match_loss(&[rows.clone()], &[truncated.clone()]).unwrap();
        let pred = expected_skipgram(&[rows], &[1]).unwrap();
        let brute = pred.l1(&truncated).unwrap();
        assert!((loss - brute).abs() < 1e-12, "{loss} vs {brute}");
    }

    #[test]
    fn batch_too_short_for_offsets_contributes_nothing() {
        // Single-segment pooled rows cannot host a bigram: the tuple is
        // skipped instead of failing, with zero loss and zero gradient.
        let short = Tensor::from_vec(&[1, 2], vec![0.7, 0.3]).unwrap();
        let text = corpus(&[&[0, 1, 0, 1]], 2);
        let target = skipgram_dist(&text, 2, &[1]).unwrap();
        let (loss, grads) = skipgram_match_loss(&[short.clone()], &[target.clone()]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads[0].values().iter().all(|&g| g == 0.0));

        // A hosting row alongside the short one restores the normal loss.
        let long = Tensor::from_vec(&[2, 2], vec![0.7, 0.3, 0.4, 0.6]).unwrap();
        let (mixed, _) = skipgram_match_loss(&[short, long.clone()], &[target.clone()]).unwrap();
        let (alone, _) = skipgram_match_loss(&[long], &[target]).unwrap();
        assert!((mixed - alone).abs() < 1e-12, "{mixed} vs {alone}");
    }

    #[test]
    fn skipgram_match_gradient_passes_finite_differences() {
        let base = vec![0.5, 0.3, 0.2, 0.1, 0.6, 0.3, 0.25, 0.25, 0.5];
        let make = |v: &[f64]| Tensor::from_vec(&[3, 3], v.to_vec()).unwrap();
        let text = corpus(&[&[0, 1, 2, 0, 2, 1, 0]], 3);
        let targets = vec![
            skipgram_dist(&text, 3, &[1]).unwrap(),
            skipgram_dist(&text, 3, &[2]).unwrap(),
            topk_truncate(&skipgram_dist(&text, 3, &[1, 1]).unwrap(), 2),
        ];
        let (_, grads) = skipgram_match_loss(&[make(&base)], &targets).unwrap();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let lp = skipgram_match_loss(&[make(&plus)], &targets).unwrap().0;
            let lm = skipgram_match_loss(&[make(&minus)], &targets).unwrap().0;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads[0].values()[i];
            assert!(
                (numeric - analytic).abs() < 1e-6,
                "coord {i}: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn unigram_loss_examples() {
        let a = positional_unigram(&corpus(&[&[0, 1], &[0, 0]], 2), 2, 2).unwrap();
        assert_eq!(unigram_loss(&a, &a).unwrap(), 0.0);
        // Single position, disjoint unit masses.
        let x = positional_unigram(&corpus(&[&[0]], 2), 2, 1).unwrap();
        let y = positional_unigram(&corpus(&[&[1]], 2), 2, 1).unwrap();
        assert_eq!(unigram_loss(&x, &y).unwrap(), 2.0);
        // Additivity across positions: 0.4 + 0.2.
        let p = positional_unigram(&corpus(&[&[0, 0], &[0, 0], &[0, 0], &[0, 1], &[1, 1]], 2), 2, 2).unwrap();
        let q = positional_unigram(&corpus(&[&[0, 0], &[0, 0], &[0, 0], &[0, 0], &[0, 1]], 2), 2, 2).unwrap();
        // position 0: p=[0.8,0.2] q=[1,0] → 0.4; position 1: p=[0.6,0.4] q=[0.8,0.2] → 0.4
        let d = unigram_loss(&p, &q).unwrap();
        assert!((d - 0.8).abs() < 1e-12);
        let short = positional_unigram(&corpus(&[&[0]], 2), 2, 1).unwrap();
        assert!(unigram_loss(&a, &short).is_err());
    }

    #[test]
    fn unigram_min_mass_weighting() {
        // Target: 1 sequence reaching position 0 with symbol 0 (mass 1).
        // Pred: two rows, only one reaching position 1 → batch of 2 with one
        // 1-frame item gives position-1 mass 0.5.
        let t = positional_unigram(&corpus(&[&[0, 0]], 2), 2, 2).unwrap();
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let (loss, _) = unigram_match_loss(&[a, b], &t).unwrap();
        // position 0: masses 1/1, rows equal → 0.
        // position 1: mp=0.5 row [0,0.5] → normalized [0,1]; target [1,0];
        // min-mass 0.5 · 2 + |1−0.5| = 1.5.
        assert!((loss - 1.5).abs() < 1e-12, "loss = {loss}");
    }

    #[test]
    fn unigram_match_gradient_passes_finite_differences() {
        // Rows deliberately not summing to 1 so the normalization gradient
        // (masses moving with entries) is exercised.
        let base = vec![0.5, 0.4, 0.2, 0.6, 0.3, 0.3];
        let make = |v: &[f64]| Tensor::from_vec(&[3, 2], v.to_vec()).unwrap();
        let target = positional_unigram(&corpus(&[&[0, 1], &[1, 1], &[0, 0, 1]], 2), 2, 3).unwrap();
        let (_, grads) = unigram_match_loss(&[make(&base)], &target).unwrap();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let lp = unigram_match_loss(&[make(&plus)], &target).unwrap().0;
            let lm = unigram_match_loss(&[make(&minus)], &target).unwrap().0;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads[0].values()[i];
            assert!(
                (numeric - analytic).abs() < 1e-6,
                "coord {i}: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn smoothness_examples_and_gradient() {
        let constant = Tensor::from_vec(&[3, 2], vec![0.4, 0.6, 0.4, 0.6, 0.4, 0.6]).unwrap();
        assert_eq!(smoothness_loss(&constant).0, 0.0);
        let flip = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(smoothness_loss(&flip).0, 2.0);
        let single = Tensor::from_vec(&[1, 4], vec![0.25; 4]).unwrap();
        assert_eq!(smoothness_loss(&single).0, 0.0);

        let base = vec![0.2, 0.8, 0.5, 0.5, 0.9, 0.1];
        let make = |v: &[f64]| Tensor::from_vec(&[3, 2], v.to_vec()).unwrap();
        let (_, grad) = smoothness_loss(&make(&base));
        let h = 1e-6;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let numeric = (smoothness_loss(&make(&plus)).0 - smoothness_loss(&make(&minus)).0)
                / (2.0 * h);
            assert!((numeric - grad.values()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn bce_examples() {
        let cfg = BceConfig::default();
        // All-zero labels at p = 0.5 → ln 2 per scored frame.
        let labels = BoundaryLabels::new(vec![false; 4], vec![1.0; 4]).unwrap();
        let (loss, _) = segment_bce_loss(&[0.5; 4], &labels, &cfg).unwrap();
        assert!((loss - (2.0f64).ln()).abs() < 1e-12);
        // Nothing above the confidence threshold → 0.
        let low = BoundaryLabels::new(vec![false; 4], vec![0.6; 4]).unwrap();
        assert_eq!(segment_bce_loss(&[0.5; 4], &low, &cfg).unwrap().0, 0.0);
        // Single scored frame with y = 1 at p = 0.5 → pos_weight · ln 2.
        let one = BoundaryLabels::new(vec![false, true], vec![0.0, 1.0]).unwrap();
        let (loss, _) = segment_bce_loss(&[0.9, 0.5], &one, &cfg).unwrap();
        assert!((loss - 1.1 * (2.0f64).ln()).abs() < 1e-12);
        // Length mismatch errors.
        assert!(segment_bce_loss(&[0.5], &one, &cfg).is_err());
    }

    #[test]
    fn bce_decreases_as_predictions_approach_labels() {
        let cfg = BceConfig::default();
        let labels =
            BoundaryLabels::new(vec![false, true, false], vec![1.0, 1.0, 1.0]).unwrap();
        let mut prev = f64::INFINITY;
        for step in 1..6 {
            let q = 0.5 + 0.09 * step as f64;
            let (loss, _) = segment_bce_loss(&[0.5, q, 1.0 - q], &labels, &cfg).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
    }

    #[test]
    fn bce_gradient_passes_finite_differences() {
        let cfg = BceConfig::default();
        let labels = BoundaryLabels::new(
            vec![false, true, false, true],
            vec![1.0, 0.9, 0.3, 0.8],
        )
        .unwrap();
        let base = vec![0.2, 0.7, 0.4, 0.3];
        let (_, grad) = segment_bce_loss(&base, &labels, &cfg).unwrap();
        assert_eq!(grad[0], 0.0); // frame 0 never scored
        assert_eq!(grad[2], 0.0); // below confidence threshold
        let h = 1e-7;
        for t in 0..base.len() {
            let mut plus = base.clone();
            plus[t] += h;
            let mut minus = base.clone();
            minus[t] -= h;
            let lp = segment_bce_loss(&plus, &labels, &cfg).unwrap().0;
            let lm = segment_bce_loss(&minus, &labels, &cfg).unwrap().0;
            let numeric = (lp - lm) / (2.0 * h);
            assert!((numeric - grad[t]).abs() < 1e-5, "t={t}");
        }
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert_eq!(total_loss(&LossParts::default(), &w).unwrap(), 0.0);
        let parts = LossParts {
            unigram: 1.0,
            skipgram: 1.0,
            segment: 1.0,
            smooth: 1.0,
        };
        assert_eq!(total_loss(&parts, &w).unwrap(), 19.0);
        let bad = LossParts {
            skipgram: f64::NAN,
            ..LossParts::default()
        };
        let err = total_loss(&bad, &w).unwrap_err();
        assert!(err.to_string().contains("skipgram"));
    }

    #[test]
    fn matching_losses_are_bounded_by_two_per_term() {
        let rows = Tensor::from_vec(&[5, 2], vec![0.5; 10]).unwrap();
        let text = corpus(&[&[0, 0, 0, 0, 0, 0]], 2);
        let targets = vec![
            skipgram_dist(&text, 2, &[1]).unwrap(),
            skipgram_dist(&text, 2, &[2]).unwrap(),
            skipgram_dist(&text, 2, &[3]).unwrap(),
        ];
        let (loss, _) = skipgram_match_loss(&[rows.clone()], &targets).unwrap();
        assert!(loss <= 2.0 * targets.len() as f64 + 1e-12);
        let t = positional_unigram(&text, 2, 5).unwrap();
        let (u, _) = unigram_match_loss(&[rows], &t).unwrap();
        assert!(u <= 2.0 * 5.0 + 1e-12);
    }
}
