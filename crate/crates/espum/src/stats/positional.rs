//! Positional unigram distributions over the first L sequence positions.

use super::StatsError;
use crate::corpus::PhonemeCorpus;
use crate::diffnet::Tensor;

/// Per-position symbol distribution. Row `l` sums to `mass[l]`, the fraction
/// of sequences that reach position `l`; rows are deliberately NOT
/// renormalized so that plain L1 between two of these is mass-aware.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalUnigram {
    /// Flat `l_max × vocab` row-major table.
    probs: Vec<f64>,
    mass: Vec<f64>,
    vocab: usize,
}

impl PositionalUnigram {
    pub fn l_max(&self) -> usize {
        self.mass.len()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.probs[l * self.vocab..(l + 1) * self.vocab]
    }

    pub fn mass(&self, l: usize) -> f64 {
        self.mass[l]
    }

    pub fn allocated_entries(&self) -> usize {
        self.probs.len()
    }

    #[cfg(test)]
    pub(crate) fn table(&self) -> &[f64] {
        &self.probs
    }

    /// L1 distance summed over all positions; positions and vocab must match.
    pub fn l1(&self, other: &Self) -> Result<f64, StatsError> {
        if self.vocab != other.vocab || self.mass.len() != other.mass.len() {
            return Err(StatsError::Mismatch(format!(
                "{} positions × vocab {} vs {} positions × vocab {}",
                self.mass.len(),
                self.vocab,
                other.mass.len(),
                other.vocab
            )));
        }
        Ok(self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }
}

/// Count per-position symbol frequencies: row `l` is the distribution of the
/// `(l+1)`-th symbol over sequences of length > `l`, normalized by the TOTAL
/// sequence count, so short sequences leave mass deficits rather than being
/// padded.
pub fn positional_unigram(
    corpus: &PhonemeCorpus,
    vocab: usize,
    l_max: usize,
) -> Result<PositionalUnigram, StatsError> {
    if l_max == 0 {
        return Err(StatsError::InvalidInput("l_max must be ≥ 1".into()));
    }
    let mut probs = vec![0.0; l_max * vocab];
    let mut mass = vec![0.0; l_max];
    let n = corpus.len() as f64;
    for seq in corpus.sequences() {
        let labels = seq.labels();
        if let Some(&bad) = labels.iter().find(|&&l| l >= vocab) {
            return Err(StatsError::InvalidInput(format!(
                "label {bad} outside vocab of size {vocab}"
            )));
        }
        for (l, &v) in labels.iter().take(l_max).enumerate() {
            probs[l * vocab + v] += 1.0;
            mass[l] += 1.0;
        }
    }
    for p in &mut probs {
        *p /= n;
    }
    for m in &mut mass {
        *m /= n;
    }
    Ok(PositionalUnigram { probs, mass, vocab })
}

/// Expected positional unigram of probability-row stacks: row `l` is the mean
/// of the batch's rows at position `l` over ALL batch members, with absent
/// positions contributing zero.
pub fn expected_positional_unigram(
    batch: &[Tensor],
    l_max: usize,
) -> Result<PositionalUnigram, StatsError> {
    if l_max == 0 {
        return Err(StatsError::InvalidInput("l_max must be ≥ 1".into()));
    }
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
    let mut probs = vec![0.0; l_max * vocab];
    let n = batch.len() as f64;
    for seq in batch {
        if seq.shape().len() != 2 || seq.cols() != vocab {
            return Err(StatsError::InvalidInput(format!(
                "inconsistent row width: {:?} vs {vocab} columns",
                seq.shape()
            )));
        }
        for l in 0..seq.rows().min(l_max) {
            for (p, &v) in probs[l * vocab..(l + 1) * vocab].iter_mut().zip(seq.row(l)) {
                *p += v;
            }
        }
    }
    for p in &mut probs {
        *p /= n;
    }
    let mass = (0..l_max)
        .map(|l| probs[l * vocab..(l + 1) * vocab].iter().sum())
        .collect();
    Ok(PositionalUnigram { probs, mass, vocab })
}

/// Gradient of [`expected_positional_unigram`]: `grad_table` is `dL/d probs`
/// as a flat `l_max × vocab` table; returns `dL/d row` stacks like `batch`.
pub fn expected_positional_unigram_backward(
    batch: &[Tensor],
    l_max: usize,
    grad_table: &[f64],
) -> Result<Vec<Tensor>, StatsError> {
    let Some(first) = batch.first() else {
        return Err(StatsError::InvalidInput("empty batch".into()));
    };
    let vocab = first.cols();
    if grad_table.len() != l_max * vocab {
        return Err(StatsError::Mismatch(format!(
            "gradient table has {} entries, expected {}",
            grad_table.len(),
            l_max * vocab
        )));
    }
    let n = batch.len() as f64;
    let mut grads: Vec<Tensor> = batch.iter().map(|s| Tensor::zeros(s.shape())).collect();
    for (seq, grad) in batch.iter().zip(&mut grads) {
        for l in 0..seq.rows().min(l_max) {
            for (g, &gt) in grad
                .row_mut(l)
                .iter_mut()
                .zip(&grad_table[l * vocab..(l + 1) * vocab])
            {
                *g = gt / n;
            }
        }
    }
    Ok(grads)
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
    fn two_sequences_split_position_two() {
        // {[a,b],[a,c]}: position 0 is all a, position 1 splits b/c.
        let c = corpus(&[&[0, 1], &[0, 2]], 3);
        let u = positional_unigram(&c, 3, 2).unwrap();
        assert_eq!(u.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(u.row(1), &[0.0, 0.5, 0.5]);
        assert_eq!(u.mass(0), 1.0);
        assert_eq!(u.mass(1), 1.0);
    }

    #[test]
    fn positions_beyond_length_have_zero_mass() {
        let c = corpus(&[&[0]], 2);
        let u = positional_unigram(&c, 2, 2).unwrap();
        assert_eq!(u.mass(1), 0.0);
        assert_eq!(u.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn identical_sequences_concentrate() {
        let c = corpus(&[&[0, 0], &[0, 0]], 2);
        let u = positional_unigram(&c, 2, 2).unwrap();
        assert_eq!(u.row(0), &[1.0, 0.0]);
        assert_eq!(u.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn expected_on_one_hot_equals_counting() {
        let c = corpus(&[&[0, 1], &[0, 2], &[1]], 3);
        let counted = positional_unigram(&c, 3, 2).unwrap();
        let batch: Vec<Tensor> = c
            .sequences()
            .iter()
            .map(|s| Tensor::one_hot(s.labels(), 3).unwrap())
            .collect();
        let expected = expected_positional_unigram(&batch, 2).unwrap();
        assert!(expected.l1(&counted).unwrap() < 1e-15);
    }

    #[test]
    fn single_and_averaged_rows() {
        let one = Tensor::from_vec(&[1, 2], vec![0.6, 0.4]).unwrap();
        let u = expected_positional_unigram(&[one], 1).unwrap();
        assert_eq!(u.row(0), &[0.6, 0.4]);

        let a = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap();
        let u = expected_positional_unigram(&[a, b], 1).unwrap();
        assert_eq!(u.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let base = vec![0.3, 0.7, 0.9, 0.1];
        let make = |vals: &[f64]| Tensor::from_vec(&[2, 2], vals.to_vec()).unwrap();
        let weights = [1.5, -0.5, 0.25, 2.0];
        let loss = |vals: &[f64]| -> f64 {
            let u = expected_positional_unigram(&[make(vals)], 2).unwrap();
            u.table().iter().zip(weights).map(|(p, w)| p * w).sum()
        };
        let grads = expected_positional_unigram_backward(&[make(&base)], 2, &weights).unwrap();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((numeric - grads[0].values()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn l1_requires_matching_shapes() {
        let c = corpus(&[&[0, 1]], 2);
        let a = positional_unigram(&c, 2, 2).unwrap();
        let b = positional_unigram(&c, 2, 3).unwrap();
        assert!(a.l1(&b).is_err());
        assert_eq!(a.l1(&a).unwrap(), 0.0);
    }
}
