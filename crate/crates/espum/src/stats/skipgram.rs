//! N-skipgram distributions: counting, differentiable expectation, top-K.

use super::StatsError;
use crate::corpus::{PhonemeCorpus, Vocab};
use crate::diffnet::Tensor;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

/// Largest dense table we are willing to allocate (`vocab^order` entries).
const DENSE_LIMIT: usize = 1 << 22;

#[derive(Debug, Clone)]
enum Storage {
    /// Row-major table of `vocab^order` probabilities.
    Dense(Vec<f64>),
    /// Probability per tuple; BTreeMap keeps iteration lexicographic.
    Sparse(BTreeMap<Vec<u16>, f64>),
}

/// Joint distribution of `order` symbols at fixed offsets, pooled over all
/// valid anchor positions of a corpus or batch.
#[derive(Debug, Clone)]
pub struct SkipgramDist {
    offsets: Vec<usize>,
    vocab: usize,
    storage: Storage,
    total_mass: f64,
    truncated: bool,
}

impl SkipgramDist {
    /// Build from explicit support entries (e.g. a truncated target read back
    /// from disk). Entries must be in-range, non-negative, and unique.
    pub fn from_support(
        offsets: &[usize],
        vocab: usize,
        entries: &[(Vec<u16>, f64)],
        truncated: bool,
    ) -> Result<Self, StatsError> {
        validate_offsets(offsets)?;
        let order = offsets.len() + 1;
        let mut map = BTreeMap::new();
        let mut total = 0.0;
        for (tuple, p) in entries {
            if tuple.len() != order {
                return Err(StatsError::InvalidInput(format!(
                    "tuple {tuple:?} has {} symbols, order is {order}",
                    tuple.len()
                )));
            }
            if tuple.iter().any(|&v| v as usize >= vocab) {
                return Err(StatsError::InvalidInput(format!(
                    "tuple {tuple:?} outside vocab of size {vocab}"
                )));
            }
            if !(*p >= 0.0) || !p.is_finite() {
                return Err(StatsError::InvalidInput(format!(
                    "probability {p} for tuple {tuple:?}"
                )));
            }
            if map.insert(tuple.clone(), *p).is_some() {
                return Err(StatsError::InvalidInput(format!(
                    "duplicate tuple {tuple:?}"
                )));
            }
            total += p;
        }
        Ok(Self {
            offsets: offsets.to_vec(),
            vocab,
            storage: Storage::Sparse(map),
            total_mass: total,
            truncated,
        })
    }

    pub fn order(&self) -> usize {
        self.offsets.len() + 1
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub fn prob(&self, tuple: &[u16]) -> f64 {
        debug_assert_eq!(tuple.len(), self.order());
        match &self.storage {
            Storage::Dense(v) => v[tuple_index(tuple, self.vocab)],
            Storage::Sparse(m) => m.get(tuple).copied().unwrap_or(0.0),
        }
    }

    /// Number of stored table entries (dense) or map entries (sparse): the
    /// quantity the memory bound of the default configuration is stated over.
    pub fn allocated_entries(&self) -> usize {
        match &self.storage {
            Storage::Dense(v) => v.len(),
            Storage::Sparse(m) => m.len(),
        }
    }

    /// Nonzero entries in lexicographic tuple order.
    pub fn support(&self) -> Vec<(Vec<u16>, f64)> {
        match &self.storage {
            Storage::Dense(v) => v
                .iter()
                .enumerate()
                .filter(|(_, &p)| p != 0.0)
                .map(|(i, &p)| (index_tuple(i, self.vocab, self.order()), p))
                .collect(),
            Storage::Sparse(m) => m.iter().map(|(t, &p)| (t.clone(), p)).collect(),
        }
    }

    /// Support sorted by descending probability, ties by lexicographic tuple.
    pub fn entries_sorted(&self) -> Vec<(Vec<u16>, f64)> {
        let mut entries = self.support();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries
    }

    /// Direct view of the dense table, when this distribution is dense.
    pub(crate) fn dense(&self) -> Option<&[f64]> {
        match &self.storage {
            Storage::Dense(v) => Some(v),
            Storage::Sparse(_) => None,
        }
    }

    /// L1 distance over the union of supports, missing entries read as 0.
    pub fn l1(&self, other: &Self) -> Result<f64, StatsError> {
        if self.offsets != other.offsets || self.vocab != other.vocab {
            return Err(StatsError::Mismatch(format!(
                "offsets {:?} vocab {} vs offsets {:?} vocab {}",
                self.offsets, self.vocab, other.offsets, other.vocab
            )));
        }
        if let (Storage::Dense(a), Storage::Dense(b)) = (&self.storage, &other.storage) {
            return Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum());
        }
        let mut keys: BTreeSet<Vec<u16>> = BTreeSet::new();
        keys.extend(self.support().into_iter().map(|(t, _)| t));
        keys.extend(other.support().into_iter().map(|(t, _)| t));
        Ok(keys
            .iter()
            .map(|t| (self.prob(t) - other.prob(t)).abs())
            .sum())
    }
}

fn validate_offsets(offsets: &[usize]) -> Result<(), StatsError> {
    if offsets.is_empty() {
        return Err(StatsError::InvalidOffsets(
            "offset tuple is empty (order must be ≥ 2)".into(),
        ));
    }
    if offsets.iter().any(|&k| k == 0) {
        return Err(StatsError::InvalidOffsets(format!(
            "offsets must be ≥ 1, got {offsets:?}"
        )));
    }
    Ok(())
}

/// Symbol positions relative to the anchor: `(0, k_1, k_1+k_2, …)`.
fn slot_positions(offsets: &[usize]) -> Vec<usize> {
    let mut pos = Vec::with_capacity(offsets.len() + 1);
    pos.push(0);
    let mut acc = 0;
    for &k in offsets {
        acc += k;
        pos.push(acc);
    }
    pos
}

fn tuple_index(tuple: &[u16], vocab: usize) -> usize {
    tuple.iter().fold(0, |acc, &v| acc * vocab + v as usize)
}

fn index_tuple(mut index: usize, vocab: usize, order: usize) -> Vec<u16> {
    let mut tuple = vec![0u16; order];
    for slot in (0..order).rev() {
        tuple[slot] = (index % vocab) as u16;
        index /= vocab;
    }
    tuple
}

fn dense_capacity(vocab: usize, order: usize) -> Option<usize> {
    if order > 3 {
        return None;
    }
    let mut cap: usize = 1;
    for _ in 0..order {
        cap = cap.checked_mul(vocab)?;
        if cap > DENSE_LIMIT {
            return None;
        }
    }
    Some(cap)
}

/// Count the skipgram distribution of a label corpus at the given offsets.
/// Every anchor `t` with `t + Σk` inside its sequence contributes one count;
/// counts are pooled over the corpus and normalized by their total.
pub fn skipgram_dist(
    corpus: &PhonemeCorpus,
    vocab: usize,
    offsets: &[usize],
) -> Result<SkipgramDist, StatsError> {
    validate_offsets(offsets)?;
    let pos = slot_positions(offsets);
    let span = *pos.last().expect("non-empty");
    let order = pos.len();
    let mut storage = match dense_capacity(vocab, order) {
        Some(cap) => Storage::Dense(vec![0.0; cap]),
        None => Storage::Sparse(BTreeMap::new()),
    };
    let mut anchors: u64 = 0;
    for seq in corpus.sequences() {
        let labels = seq.labels();
        if let Some(&bad) = labels.iter().find(|&&l| l >= vocab) {
            return Err(StatsError::InvalidInput(format!(
                "label {bad} outside vocab of size {vocab}"
            )));
        }
        if labels.len() <= span {
            continue;
        }
        for t in 0..labels.len() - span {
            anchors += 1;
            match &mut storage {
                Storage::Dense(table) => {
                    let idx = pos
                        .iter()
                        .fold(0, |acc, &p| acc * vocab + labels[t + p]);
                    table[idx] += 1.0;
                }
                Storage::Sparse(map) => {
                    let tuple: Vec<u16> = pos.iter().map(|&p| labels[t + p] as u16).collect();
                    *map.entry(tuple).or_insert(0.0) += 1.0;
                }
            }
        }
    }
    if anchors == 0 {
        return Err(StatsError::NoSupport(offsets.to_vec()));
    }
    let norm = anchors as f64;
    let mut total = 0.0;
    match &mut storage {
        Storage::Dense(table) => {
            for v in table.iter_mut() {
                *v /= norm;
                total += *v;
            }
        }
        Storage::Sparse(map) => {
            for v in map.values_mut() {
                *v /= norm;
                total += *v;
            }
        }
    }
    Ok(SkipgramDist {
        offsets: offsets.to_vec(),
        vocab,
        storage,
        total_mass: total,
        truncated: false,
    })
}

/// Keep the K most probable tuples (ties: lexicographically smaller tuple
/// wins), without renormalizing. Total mass becomes the kept mass.
pub fn topk_truncate(dist: &SkipgramDist, k: usize) -> SkipgramDist {
    let entries = dist.entries_sorted();
    let dropped = entries.len().saturating_sub(k);
    let kept: BTreeMap<Vec<u16>, f64> = entries.into_iter().take(k).collect();
    let total = kept.values().sum();
    SkipgramDist {
        offsets: dist.offsets.clone(),
        vocab: dist.vocab,
        storage: Storage::Sparse(kept),
        total_mass: total,
        truncated: dist.truncated || dropped > 0,
    }
}

fn check_batch(batch: &[Tensor]) -> Result<usize, StatsError> {
    let Some(first) = batch.first() else {
        return Err(StatsError::InvalidInput("empty batch".into()));
    };
    if first.shape().len() != 2 {
        return Err(StatsError::InvalidInput(format!(
            "probability stacks must be 2-D, got {:?}",
            first.shape()
        )));
    }
    let vocab = first.cols();
    for t in batch {
        if t.shape().len() != 2 || t.cols() != vocab {
            return Err(StatsError::InvalidInput(format!(
                "inconsistent row width: {:?} vs {vocab} columns",
                t.shape()
            )));
        }
    }
    Ok(vocab)
}

/// Expected skipgram distribution of probability-row stacks: for every valid
/// anchor the N-way outer product of the rows at the slot positions,
/// normalized by the number of anchors. Differentiable in every row; see
/// [`expected_skipgram_backward`].
pub fn expected_skipgram(batch: &[Tensor], offsets: &[usize]) -> Result<SkipgramDist, StatsError> {
    validate_offsets(offsets)?;
    let vocab = check_batch(batch)?;
    let pos = slot_positions(offsets);
    let span = *pos.last().expect("non-empty");
    let order = pos.len();
    let mut storage = match dense_capacity(vocab, order) {
        Some(cap) => Storage::Dense(vec![0.0; cap]),
        None => Storage::Sparse(BTreeMap::new()),
    };
    let mut anchors: u64 = 0;
    let mut tuple = vec![0u16; order];
    for seq in batch {
        let len = seq.rows();
        if len <= span {
            continue;
        }
        for t in 0..len - span {
            anchors += 1;
            let rows: Vec<&[f64]> = pos.iter().map(|&p| seq.row(t + p)).collect();
            accumulate_outer(&rows, vocab, &mut tuple, 0, 0, 1.0, &mut storage);
        }
    }
    if anchors == 0 {
        return Err(StatsError::NoSupport(offsets.to_vec()));
    }
    let norm = anchors as f64;
    let mut total = 0.0;
    match &mut storage {
        Storage::Dense(table) => {
            for v in table.iter_mut() {
                *v /= norm;
                total += *v;
            }
        }
        Storage::Sparse(map) => {
            for v in map.values_mut() {
                *v /= norm;
                total += *v;
            }
        }
    }
    Ok(SkipgramDist {
        offsets: offsets.to_vec(),
        vocab,
        storage,
        total_mass: total,
        truncated: false,
    })
}

/// Add the outer product of `rows` into `storage`, one slot per recursion
/// level. `index` is the dense prefix index, `product` the prefix product.
fn accumulate_outer(
    rows: &[&[f64]],
    vocab: usize,
    tuple: &mut [u16],
    slot: usize,
    index: usize,
    product: f64,
    storage: &mut Storage,
) {
    if slot == rows.len() {
        match storage {
            Storage::Dense(table) => table[index] += product,
            Storage::Sparse(map) => *map.entry(tuple.to_vec()).or_insert(0.0) += product,
        }
        return;
    }
    for (v, &p) in rows[slot].iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        tuple[slot] = v as u16;
        accumulate_outer(rows, vocab, tuple, slot + 1, index * vocab + v, product * p, storage);
    }
}

/// Gradient of [`expected_skipgram`] (dense path): given `dL/dD` as a dense
/// table over tuples, returns `dL/d row` stacks shaped like `batch`.
pub fn expected_skipgram_backward(
    batch: &[Tensor],
    offsets: &[usize],
    grad_table: &[f64],
) -> Result<Vec<Tensor>, StatsError> {
    validate_offsets(offsets)?;
    let vocab = check_batch(batch)?;
    let pos = slot_positions(offsets);
    let span = *pos.last().expect("non-empty");
    let order = pos.len();
    let cap = dense_capacity(vocab, order).ok_or_else(|| {
        StatsError::InvalidInput("dense gradient path needs a dense-capacity table".into())
    })?;
    if grad_table.len() != cap {
        return Err(StatsError::Mismatch(format!(
            "gradient table has {} entries, expected {cap}",
            grad_table.len()
        )));
    }
    let anchors: u64 = batch
        .iter()
        .map(|s| s.rows().saturating_sub(span) as u64)
        .sum();
    if anchors == 0 {
        return Err(StatsError::NoSupport(offsets.to_vec()));
    }
    let norm = anchors as f64;
    let mut grads: Vec<Tensor> = batch.iter().map(|s| Tensor::zeros(s.shape())).collect();
    let mut probs = vec![0.0; order];
    let mut digits = vec![0usize; order];
    for (seq, grad) in batch.iter().zip(&mut grads) {
        let len = seq.rows();
        if len <= span {
            continue;
        }
        for t in 0..len - span {
            let rows: Vec<&[f64]> = pos.iter().map(|&p| seq.row(t + p)).collect();
            // Walk every tuple; for each slot add g/A times the product of
            // the other slots' probabilities.
            digits.iter_mut().for_each(|d| *d = 0);
            'tuples: loop {
                let mut index = 0;
                for s in 0..order {
                    probs[s] = rows[s][digits[s]];
                    index = index * vocab + digits[s];
                }
                let g = grad_table[index];
                if g != 0.0 {
                    for s in 0..order {
                        let mut others = 1.0;
                        for (m, &p) in probs.iter().enumerate() {
                            if m != s {
                                others *= p;
                            }
                        }
                        if others != 0.0 {
                            grad.row_mut(t + pos[s])[digits[s]] += g * others / norm;
                        }
                    }
                }
                // Odometer increment over the tuple digits.
                let mut s = order;
                loop {
                    if s == 0 {
                        break 'tuples;
                    }
                    s -= 1;
                    digits[s] += 1;
                    if digits[s] < vocab {
                        break;
                    }
                    digits[s] = 0;
                }
            }
        }
    }
    Ok(grads)
}

/// Expected probabilities restricted to an explicit tuple support, plus the
/// honest total mass (product of row sums per anchor, normalized). The
/// off-support mass is `total_mass - probs.sum()`; with fully truncated
/// targets this is all the loss needs, at O(|support|) per anchor.
#[derive(Debug, Clone)]
pub struct SupportProbs {
    pub probs: Vec<f64>,
    pub total_mass: f64,
}

pub fn expected_skipgram_on_support(
    batch: &[Tensor],
    offsets: &[usize],
    support: &[Vec<u16>],
) -> Result<SupportProbs, StatsError> {
    validate_offsets(offsets)?;
    let vocab = check_batch(batch)?;
    let pos = slot_positions(offsets);
    let span = *pos.last().expect("non-empty");
    let order = pos.len();
    for tuple in support {
        if tuple.len() != order || tuple.iter().any(|&v| v as usize >= vocab) {
            return Err(StatsError::InvalidInput(format!(
                "support tuple {tuple:?} invalid for order {order}, vocab {vocab}"
            )));
        }
    }
    let mut probs = vec![0.0; support.len()];
    let mut total = 0.0;
    let mut anchors: u64 = 0;
    for seq in batch {
        let len = seq.rows();
        if len <= span {
            continue;
        }
        let row_sums: Vec<f64> = (0..len).map(|t| seq.row(t).iter().sum()).collect();
        for t in 0..len - span {
            anchors += 1;
            let rows: Vec<&[f64]> = pos.iter().map(|&p| seq.row(t + p)).collect();
            for (i, tuple) in support.iter().enumerate() {
                let mut p = 1.0;
                for (s, &v) in tuple.iter().enumerate() {
                    p *= rows[s][v as usize];
                }
                probs[i] += p;
            }
            total += pos.iter().map(|&p| row_sums[t + p]).product::<f64>();
        }
    }
    if anchors == 0 {
        return Err(StatsError::NoSupport(offsets.to_vec()));
    }
    let norm = anchors as f64;
    for p in &mut probs {
        *p /= norm;
    }
    Ok(SupportProbs {
        probs,
        total_mass: total / norm,
    })
}

/// Gradient of [`expected_skipgram_on_support`]: `grad_probs[i]` is
/// `dL/d probs[i]`, `grad_total` is `dL/d total_mass`.
pub fn expected_skipgram_on_support_backward(
    batch: &[Tensor],
    offsets: &[usize],
    support: &[Vec<u16>],
    grad_probs: &[f64],
    grad_total: f64,
) -> Result<Vec<Tensor>, StatsError> {
    validate_offsets(offsets)?;
    check_batch(batch)?;
    let pos = slot_positions(offsets);
    let span = *pos.last().expect("non-empty");
    let order = pos.len();
    if grad_probs.len() != support.len() {
        return Err(StatsError::Mismatch(format!(
            "{} gradients for {} support tuples",
            grad_probs.len(),
            support.len()
        )));
    }
    let anchors: u64 = batch
        .iter()
        .map(|s| s.rows().saturating_sub(span) as u64)
        .sum();
    if anchors == 0 {
        return Err(StatsError::NoSupport(offsets.to_vec()));
    }
    let norm = anchors as f64;
    let mut grads: Vec<Tensor> = batch.iter().map(|s| Tensor::zeros(s.shape())).collect();
    let mut slot_probs = vec![0.0; order];
    let mut prefix = vec![0.0; order + 1];
    let mut suffix = vec![0.0; order + 1];
    for (seq, grad) in batch.iter().zip(&mut grads) {
        let len = seq.rows();
        if len <= span {
            continue;
        }
        let row_sums: Vec<f64> = (0..len).map(|t| seq.row(t).iter().sum()).collect();
        for t in 0..len - span {
            for (i, tuple) in support.iter().enumerate() {
                let g = grad_probs[i];
                if g == 0.0 {
                    continue;
                }
                for (s, &v) in tuple.iter().enumerate() {
                    slot_probs[s] = seq.row(t + pos[s])[v as usize];
                }
                prefix[0] = 1.0;
                for s in 0..order {
                    prefix[s + 1] = prefix[s] * slot_probs[s];
                }
                suffix[order] = 1.0;
                for s in (0..order).rev() {
                    suffix[s] = suffix[s + 1] * slot_probs[s];
                }
                for (s, &v) in tuple.iter().enumerate() {
                    let others = prefix[s] * suffix[s + 1];
                    if others != 0.0 {
                        grad.row_mut(t + pos[s])[v as usize] += g * others / norm;
                    }
                }
            }
            if grad_total != 0.0 {
                // total mass term: d(Π row sums)/d row[t+pos_s][v] is the
                // product of the other slots' row sums, for every v.
                prefix[0] = 1.0;
                for s in 0..order {
                    prefix[s + 1] = prefix[s] * row_sums[t + pos[s]];
                }
                suffix[order] = 1.0;
                for s in (0..order).rev() {
                    suffix[s] = suffix[s + 1] * row_sums[t + pos[s]];
                }
                for s in 0..order {
                    let others = prefix[s] * suffix[s + 1];
                    if others != 0.0 {
                        let add = grad_total * others / norm;
                        for gv in grad.row_mut(t + pos[s]) {
                            *gv += add;
                        }
                    }
                }
            }
        }
    }
    Ok(grads)
}

/// Write a distribution as `symbols<TAB>probability` lines, sorted by
/// descending probability then lexicographic tuple order.
pub fn write_dist_text(
    dist: &SkipgramDist,
    vocab: &Vocab,
    w: &mut impl Write,
) -> std::io::Result<()> {
    for (tuple, p) in dist.entries_sorted() {
        let syms: Vec<&str> = tuple.iter().map(|&v| vocab.symbol(v as usize)).collect();
        writeln!(w, "{}\t{p}", syms.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PhonemeSequence;

    fn corpus(seqs: &[&[usize]], vocab: usize) -> PhonemeCorpus {
        let seqs = seqs
            .iter()
            .map(|s| PhonemeSequence::new(s.to_vec(), vocab).unwrap())
            .collect();
        PhonemeCorpus::new(seqs).unwrap()
    }

    #[test]
    fn abab_bigram_skip_one() {
        let c = corpus(&[&[0, 1, 0, 1]], 2);
        let d = skipgram_dist(&c, 2, &[1]).unwrap();
        assert!((d.prob(&[0, 1]) - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.prob(&[1, 0]) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.prob(&[0, 0]), 0.0);
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn abab_bigram_skip_two() {
        let c = corpus(&[&[0, 1, 0, 1]], 2);
        let d = skipgram_dist(&c, 2, &[2]).unwrap();
        assert!((d.prob(&[0, 0]) - 0.5).abs() < 1e-15);
        assert!((d.prob(&[1, 1]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn abab_trigram() {
        let c = corpus(&[&[0, 1, 0, 1]], 2);
        let d = skipgram_dist(&c, 2, &[1, 1]).unwrap();
        assert!((d.prob(&[0, 1, 0]) - 0.5).abs() < 1e-15);
        assert!((d.prob(&[1, 0, 1]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn too_short_corpus_has_no_support() {
        let c = corpus(&[&[0], &[1]], 2);
        assert!(matches!(
            skipgram_dist(&c, 2, &[1]),
            Err(StatsError::NoSupport(_))
        ));
    }

    #[test]
    fn topk_keeps_highest_without_renormalizing() {
        let d = SkipgramDist::from_support(
            &[1],
            2,
            &[
                (vec![0, 0], 0.5),
                (vec![0, 1], 0.3),
                (vec![1, 0], 0.2),
            ],
            false,
        )
        .unwrap();
        let t = topk_truncate(&d, 2);
        assert_eq!(t.prob(&[0, 0]), 0.5);
        assert_eq!(t.prob(&[0, 1]), 0.3);
        assert_eq!(t.prob(&[1, 0]), 0.0);
        assert!((t.total_mass() - 0.8).abs() < 1e-15);
        assert!(t.is_truncated());
    }

    #[test]
    fn topk_with_k_at_support_size_is_identity() {
        let d = SkipgramDist::from_support(
            &[1],
            2,
            &[(vec![0, 0], 0.5), (vec![0, 1], 0.3), (vec![1, 0], 0.2)],
            false,
        )
        .unwrap();
        let t = topk_truncate(&d, 3);
        assert_eq!(t.l1(&d).unwrap(), 0.0);
        assert!(!t.is_truncated());
    }

    #[test]
    fn topk_tie_keeps_lexicographically_smaller() {
        let d = SkipgramDist::from_support(
            &[1],
            2,
            &[(vec![0, 1], 0.3), (vec![1, 0], 0.3), (vec![0, 0], 0.4)],
            false,
        )
        .unwrap();
        let t = topk_truncate(&d, 2);
        assert_eq!(t.prob(&[0, 0]), 0.4);
        assert_eq!(t.prob(&[0, 1]), 0.3);
        assert_eq!(t.prob(&[1, 0]), 0.0);
    }

    #[test]
    fn expected_on_one_hot_equals_counting() {
        let c = corpus(&[&[0, 1, 0, 1]], 2);
        let counted = skipgram_dist(&c, 2, &[1]).unwrap();
        let rows = Tensor::one_hot(&[0, 1, 0, 1], 2).unwrap();
        let expected = expected_skipgram(&[rows], &[1]).unwrap();
        assert!(expected.l1(&counted).unwrap() < 1e-15);
    }

    #[test]
    fn uniform_rows_give_uniform_pairs() {
        let rows = Tensor::from_vec(&[3, 2], vec![0.5; 6]).unwrap();
        let d = expected_skipgram(&[rows], &[1]).unwrap();
        for a in 0..2u16 {
            for b in 0..2u16 {
                assert!((d.prob(&[a, b]) - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_outer_product_by_hand() {
        let rows = Tensor::from_vec(&[2, 2], vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        let d = expected_skipgram(&[rows], &[1]).unwrap();
        assert!((d.prob(&[0, 0]) - 0.18).abs() < 1e-15);
        assert!((d.prob(&[0, 1]) - 0.72).abs() < 1e-15);
        assert!((d.prob(&[1, 0]) - 0.02).abs() < 1e-15);
        assert!((d.prob(&[1, 1]) - 0.08).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Scalar head: L = sum(w ⊙ D(rows)) with fixed random-ish weights.
        let base = vec![0.3, 0.2, 0.1, 0.4, 0.25, 0.35, 0.15, 0.25];
        let make = |vals: &[f64]| Tensor::from_vec(&[4, 2], vals.to_vec()).unwrap();
        let weights: Vec<f64> = vec![0.7, -1.3, 0.4, 2.1];
        let loss = |vals: &[f64]| -> f64 {
            let d = expected_skipgram(&[make(vals)], &[2]).unwrap();
            d.dense()
                .unwrap()
                .iter()
                .zip(&weights)
                .map(|(p, w)| p * w)
                .sum()
        };
        let grads =
            expected_skipgram_backward(&[make(&base)], &[2], &weights).unwrap();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let analytic = grads[0].values()[i];
            assert!(
                (numeric - analytic).abs() < 1e-8,
                "coord {i}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn on_support_matches_dense_and_its_gradient() {
        let base = vec![0.5, 0.5, 0.9, 0.1, 0.3, 0.7];
        let make = |vals: &[f64]| Tensor::from_vec(&[3, 2], vals.to_vec()).unwrap();
        let support: Vec<Vec<u16>> = vec![vec![0, 1], vec![1, 1]];
        let sp = expected_skipgram_on_support(&[make(&base)], &[1], &support).unwrap();
        let dense = expected_skipgram(&[make(&base)], &[1]).unwrap();
        assert!((sp.probs[0] - dense.prob(&[0, 1])).abs() < 1e-15);
        assert!((sp.probs[1] - dense.prob(&[1, 1])).abs() < 1e-15);
        assert!((sp.total_mass - 1.0).abs() < 1e-12);

        // L = 2*probs[0] - probs[1] + 0.5*total_mass, checked by differences.
        let loss = |vals: &[f64]| -> f64 {
            let sp = expected_skipgram_on_support(&[make(vals)], &[1], &support).unwrap();
            2.0 * sp.probs[0] - sp.probs[1] + 0.5 * sp.total_mass
        };
        let grads = expected_skipgram_on_support_backward(
            &[make(&base)],
            &[1],
            &support,
            &[2.0, -1.0],
            0.5,
        )
        .unwrap();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let analytic = grads[0].values()[i];
            assert!(
                (numeric - analytic).abs() < 1e-8,
                "coord {i}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn l1_examples() {
        let a = SkipgramDist::from_support(&[1], 2, &[(vec![0, 0], 1.0)], false).unwrap();
        let b = SkipgramDist::from_support(&[1], 2, &[(vec![1, 1], 1.0)], false).unwrap();
        assert_eq!(a.l1(&a).unwrap(), 0.0);
        assert_eq!(a.l1(&b).unwrap(), 2.0);
        let c = SkipgramDist::from_support(
            &[1],
            2,
            &[(vec![0, 0], 0.5), (vec![0, 1], 0.5)],
            false,
        )
        .unwrap();
        let d = SkipgramDist::from_support(
            &[1],
            2,
            &[(vec![0, 0], 0.8), (vec![0, 1], 0.2)],
            false,
        )
        .unwrap();
        assert!((c.l1(&d).unwrap() - 0.6).abs() < 1e-15);
        let wrong = SkipgramDist::from_support(&[2], 2, &[(vec![0, 0], 1.0)], false).unwrap();
        assert!(a.l1(&wrong).is_err());
    }

    #[test]
    fn dist_text_is_sorted_desc_then_lex() {
        let d = SkipgramDist::from_support(
            &[1],
            3,
            &[(vec![0, 1], 0.3), (vec![2, 0], 0.4), (vec![1, 2], 0.3)],
            false,
        )
        .unwrap();
        let vocab = Vocab::synthetic(3);
        let mut out = Vec::new();
        write_dist_text(&d, &vocab, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "p02 p00\t0.4\np00 p01\t0.3\np01 p02\t0.3\n");
    }

    #[test]
    fn sparse_storage_for_order_four() {
        let c = corpus(&[&[0, 1, 0, 1, 0, 1]], 2);
        let d = skipgram_dist(&c, 2, &[1, 1, 1]).unwrap();
        assert!(d.dense().is_none());
        assert!((d.prob(&[0, 1, 0, 1]) - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.prob(&[1, 0, 1, 0]) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.allocated_entries(), 2);
    }
}
