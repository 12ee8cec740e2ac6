//! Soft monotonic alignment, segment pooling, and boundary binarization.

use super::ModelError;
use crate::corpus::BoundaryLabels;
use crate::diffnet::Tensor;

/// Soft assignment of T frames to L segments.
///
/// Row `l` is a distribution over frames; monotone by construction because
/// every frame's soft segment index `s_t` is a running sum of non-negative
/// boundary probabilities.
#[derive(Debug, Clone)]
pub struct AlignmentMatrix {
    weights: Tensor,
    s: Vec<f64>,
    /// Rows whose triangular support was empty; they received a deterministic
    /// one-frame fallback and pass no gradient.
    fallback: Vec<bool>,
}

impl AlignmentMatrix {
    pub fn segments(&self) -> usize {
        self.weights.rows()
    }

    pub fn frames(&self) -> usize {
        self.weights.cols()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.weights
    }

    pub fn row(&self, l: usize) -> &[f64] {
        self.weights.row(l)
    }

    /// Soft segment index per frame (`s_0 = 0`, then cumulative boundary
    /// probability).
    pub fn soft_indices(&self) -> &[f64] {
        &self.s
    }

    pub fn is_fallback_row(&self, l: usize) -> bool {
        self.fallback[l]
    }

    /// `Σ_t t · A[l][t]`, the row's center of mass.
    pub fn center_of_mass(&self, l: usize) -> f64 {
        self.row(l)
            .iter()
            .enumerate()
            .map(|(t, &a)| t as f64 * a)
            .sum()
    }
}

/// Build the soft alignment for boundary probabilities `b` (frame 0's value
/// is ignored) and segment count `l_count`.
///
/// Construction: `s_t = Σ_{t'=1..t} b_{t'}`; raw weight
/// `max(0, 1 − |s_t − l|)`; rows normalized to sum 1. A row whose raw sum is
/// zero falls back to full weight on the frame whose `s_t` is nearest to `l`
/// (first frame on ties) and is excluded from gradients. For 0/1-valued `b`
/// the matrix reduces exactly to mean pooling within the flagged segments.
pub fn soft_alignment(b: &[f64], l_count: usize) -> AlignmentMatrix {
    assert!(!b.is_empty(), "need at least one frame");
    assert!(l_count >= 1, "need at least one segment");
    let t_len = b.len();
    let mut s = Vec::with_capacity(t_len);
    s.push(0.0);
    let mut acc = 0.0;
    for &bt in &b[1..] {
        acc += bt;
        s.push(acc);
    }
    let mut weights = Tensor::zeros(&[l_count, t_len]);
    let mut fallback = vec![false; l_count];
    for l in 0..l_count {
        let lf = l as f64;
        let row = weights.row_mut(l);
        let mut sum = 0.0;
        for (t, &st) in s.iter().enumerate() {
            let w = (1.0 - (st - lf).abs()).max(0.0);
            row[t] = w;
            sum += w;
        }
        if sum > 0.0 {
            for w in row.iter_mut() {
                *w /= sum;
            }
        } else {
            let nearest = s
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (*a - lf).abs().total_cmp(&(*b - lf).abs())
                })
                .map(|(t, _)| t)
                .expect("non-empty");
            row.iter_mut().for_each(|w| *w = 0.0);
            row[nearest] = 1.0;
            fallback[l] = true;
        }
    }
    AlignmentMatrix {
        weights,
        s,
        fallback,
    }
}

/// Gradient of [`soft_alignment`]: given `dL/dA`, returns `dL/db` (entry 0 is
/// always zero; fallback rows contribute nothing).
pub fn soft_alignment_backward(align: &AlignmentMatrix, grad_a: &Tensor) -> Vec<f64> {
    let l_count = align.segments();
    let t_len = align.frames();
    debug_assert_eq!(grad_a.shape(), &[l_count, t_len]);
    let s = &align.s;
    let mut ds = vec![0.0; t_len];
    for l in 0..l_count {
        if align.fallback[l] {
            continue;
        }
        let lf = l as f64;
        let a_row = align.weights.row(l);
        let g_row = grad_a.row(l);
        let raw_sum: f64 = s.iter().map(|&st| (1.0 - (st - lf).abs()).max(0.0)).sum();
        let g_dot_a: f64 = g_row.iter().zip(a_row).map(|(g, a)| g * a).sum();
        for (t, &st) in s.iter().enumerate() {
            let raw = (1.0 - (st - lf).abs()).max(0.0);
            if raw <= 0.0 {
                continue;
            }
            let d_raw = (g_row[t] - g_dot_a) / raw_sum;
            // d raw / d s_t = -sign(s_t - l); sign(0) = 0 at the kink.
            let diff = st - lf;
            if diff != 0.0 {
                ds[t] -= d_raw * diff.signum();
            }
        }
    }
    // s_t sums b_1..=b_t, so db_t collects every ds at or after t.
    let mut grad_b = vec![0.0; t_len];
    let mut suffix = 0.0;
    for t in (1..t_len).rev() {
        suffix += ds[t];
        grad_b[t] = suffix;
    }
    grad_b
}

/// `X̄ = A · X`: pool T frame rows into L segment rows.
pub fn pool_segments(align: &AlignmentMatrix, frames: &Tensor) -> Result<Tensor, ModelError> {
    if frames.shape().len() != 2 || frames.rows() != align.frames() {
        return Err(ModelError::Shape(format!(
            "alignment covers {} frames but features are {:?}",
            align.frames(),
            frames.shape()
        )));
    }
    let l_count = align.segments();
    let dim = frames.cols();
    let mut out = Tensor::zeros(&[l_count, dim]);
    for l in 0..l_count {
        let a_row = align.row(l);
        let out_row = out.row_mut(l);
        for (t, &a) in a_row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, &x) in out_row.iter_mut().zip(frames.row(t)) {
                *o += a * x;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`pool_segments`] w.r.t. the alignment and the frames.
pub fn pool_segments_backward(
    align: &AlignmentMatrix,
    frames: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor) {
    let l_count = align.segments();
    let t_len = align.frames();
    let dim = frames.cols();
    debug_assert_eq!(grad_out.shape(), &[l_count, dim]);
    let mut grad_a = Tensor::zeros(&[l_count, t_len]);
    let mut grad_frames = Tensor::zeros(frames.shape());
    for l in 0..l_count {
        let g_row = grad_out.row(l);
        let a_row = align.row(l);
        for t in 0..t_len {
            let x_row = frames.row(t);
            let dot: f64 = g_row.iter().zip(x_row).map(|(g, x)| g * x).sum();
            grad_a.row_mut(l)[t] = dot;
            let a = a_row[t];
            if a != 0.0 {
                for (gf, &g) in grad_frames.row_mut(t).iter_mut().zip(g_row) {
                    *gf += a * g;
                }
            }
        }
    }
    (grad_a, grad_frames)
}

/// Mean-pool frames within each run delimited by boundary flags (frame 0
/// opens the first segment regardless of its flag).
pub fn hard_pool(labels: &BoundaryLabels, frames: &Tensor) -> Result<Tensor, ModelError> {
    if frames.shape().len() != 2 || frames.rows() != labels.len() {
        return Err(ModelError::Shape(format!(
            "{} boundary labels but features are {:?}",
            labels.len(),
            frames.shape()
        )));
    }
    let dim = frames.cols();
    let flags = labels.flags();
    let mut out = Tensor::zeros(&[labels.segment_count(), dim]);
    let mut seg = 0usize;
    let mut count = 0.0;
    for t in 0..frames.rows() {
        if t > 0 && flags[t] {
            for v in out.row_mut(seg) {
                *v /= count;
            }
            seg += 1;
            count = 0.0;
        }
        for (o, &x) in out.row_mut(seg).iter_mut().zip(frames.row(t)) {
            *o += x;
        }
        count += 1.0;
    }
    for v in out.row_mut(seg) {
        *v /= count;
    }
    Ok(out)
}

/// Threshold boundary probabilities into labels: `flag[t] = b[t] ≥ threshold`
/// for `t ≥ 1`, frame 0 never flagged; confidence is `max(b, 1−b)`.
pub fn binarize_boundaries(b: &[f64], threshold: f64) -> BoundaryLabels {
    assert!(!b.is_empty(), "need at least one frame");
    let flags: Vec<bool> = b
        .iter()
        .enumerate()
        .map(|(t, &p)| t > 0 && p >= threshold)
        .collect();
    let confidence: Vec<f64> = b.iter().map(|&p| p.max(1.0 - p).clamp(0.0, 1.0)).collect();
    BoundaryLabels::new(flags, confidence).expect("lengths match and confidence is clamped")
}
