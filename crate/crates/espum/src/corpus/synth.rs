//! Synthetic cipher corpora: paired-by-construction unit/phoneme data with
//! known ground truth, split into unpaired halves for training.
//!
//! Phoneme sequences are sampled from a seeded Markov chain; each phoneme
//! occurrence emits one of its assigned units, repeated for a jittered
//! duration. Speech-side and text-side corpora come from the same chain but
//! disjoint draws, so the two empirical distributions match by construction
//! while no pairing information survives.

use super::{
    BoundaryLabels, CorpusError, EvalItem, EvalSet, PhonemeCorpus, PhonemeSequence, UnitCorpus,
    UnitSequence, Vocab,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Parameters of the synthetic cipher task.
#[derive(Debug, Clone)]
pub struct CipherSpec {
    pub vocab_size: usize,
    pub unit_inventory: usize,
    pub units_per_phoneme: usize,
    pub mean_duration: usize,
    pub duration_jitter: usize,
    /// 0 = independent draws from the stationary vector, 1 = first-order chain.
    pub markov_order: u8,
    pub transition_seed: u64,
    pub label_noise_rate: f64,
    pub boundary_noise_rate: f64,
    /// Mean phonemes per sequence.
    pub seq_len: usize,
    pub seq_len_jitter: usize,
}

impl Default for CipherSpec {
    fn default() -> Self {
        Self {
            vocab_size: 20,
            unit_inventory: 20,
            units_per_phoneme: 1,
            mean_duration: 3,
            duration_jitter: 0,
            markov_order: 1,
            transition_seed: 7,
            label_noise_rate: 0.0,
            boundary_noise_rate: 0.0,
            seq_len: 12,
            seq_len_jitter: 4,
        }
    }
}

impl CipherSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.vocab_size < 2 {
            return Err(CorpusError::InvalidSpec("vocab_size must be >= 2".into()));
        }
        if self.units_per_phoneme < 1 {
            return Err(CorpusError::InvalidSpec("units_per_phoneme must be >= 1".into()));
        }
        if self.unit_inventory < self.vocab_size * self.units_per_phoneme {
            return Err(CorpusError::InvalidSpec(format!(
                "injective mapping impossible: {} units for {} phonemes x {} units each",
                self.unit_inventory, self.vocab_size, self.units_per_phoneme
            )));
        }
        if self.mean_duration < 1 {
            return Err(CorpusError::InvalidSpec("mean_duration must be >= 1".into()));
        }
        if self.markov_order > 1 {
            return Err(CorpusError::InvalidSpec("markov_order must be 0 or 1".into()));
        }
        for (name, rate) in [
            ("label_noise_rate", self.label_noise_rate),
            ("boundary_noise_rate", self.boundary_noise_rate),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(CorpusError::InvalidSpec(format!("{name} must be in [0,1)")));
            }
        }
        if self.seq_len < 1 {
            return Err(CorpusError::InvalidSpec("seq_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// Phoneme-sequence distribution of a cipher task: transition matrix,
/// initial-symbol distribution, and the stationary vector. The diagonal is
/// zero — adjacent duplicate phonemes are indistinguishable from one long
/// segment, so the sampler never emits them.
///
/// Rows are heavily skewed (a few likely successors per symbol, like
/// natural-language phonotactics) so that pairwise statistics identify the
/// cipher from modest samples, yet assembled from rank-weighted derangements,
/// which makes the matrix doubly stochastic: the stationary distribution is
/// uniform, so every symbol accumulates evidence at the same rate. The
/// initial distribution is skewed and deliberately non-stationary, mirroring
/// sentence-initial symbol bias: it gives positional unigrams genuine
/// position-dependent content.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    transition: Vec<Vec<f64>>,
    initial: Vec<f64>,
    stationary: Vec<f64>,
}

/// Mass ratio between successive ranks in a transition row. 0.15 means the
/// favourite successor carries ~5/6 of the row, the runner-up ~1/8, and so
/// on — concentrated enough that a small batch's empirical statistics sit
/// close to the corpus statistics, branching enough to keep sequences diverse.
const RANK_RATIO: f64 = 0.15;

/// How many ranked successors each row gets before the floor takes over.
const RANKS: usize = 8;

/// One probability row with geometrically decaying mass over a shuffled
/// symbol order; the floor keeps every symbol reachable.
fn geometric_row(rng: &mut ChaCha8Rng, n: usize, ratio: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut row = vec![0.0; n];
    for (rank, &j) in order.iter().enumerate() {
        row[j] = ratio.powi(rank as i32) + 1e-4;
    }
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= sum);
    row
}

/// A uniformly random permutation of `0..n` with no fixed point; the first
/// one doubles as the chain's connectivity backbone, so it is a single
/// `n`-cycle.
fn random_derangement(rng: &mut ChaCha8Rng, n: usize, cycle: bool) -> Vec<usize> {
    if cycle {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut p = vec![0usize; n];
        for i in 0..n {
            p[order[i]] = order[(i + 1) % n];
        }
        return p;
    }
    loop {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &v)| i != v) {
            return p;
        }
    }
}

impl MarkovChain {
    pub fn from_spec(spec: &CipherSpec) -> Self {
        let v = spec.vocab_size;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.transition_seed);
        if spec.markov_order == 0 {
            // Shared row = i.i.d. symbols; only the no-repeat rule (zero
            // diagonal) differs per row.
            let base = geometric_row(&mut rng, v, RANK_RATIO);
            let transition: Vec<Vec<f64>> = (0..v)
                .map(|i| {
                    let mut row = base.clone();
                    row[i] = 0.0;
                    let sum: f64 = row.iter().sum();
                    row.iter_mut().for_each(|p| *p /= sum);
                    row
                })
                .collect();
            let stationary = stationary_of(&transition);
            return Self {
                transition,
                initial: base,
                stationary,
            };
        }
        let transition: Vec<Vec<f64>> = {
            // Sum of rank-weighted derangements: every symbol is some row's
            // rank-k successor for each k, so rows are concentrated while the
            // stationary distribution stays uniform — no symbol is starved of
            // evidence. The zero diagonal (no self-transitions) comes free.
            let mut rows = vec![vec![0.0f64; v]; v];
            for k in 0..RANKS.min(v.saturating_sub(1)) {
                let p = random_derangement(&mut rng, v, k == 0);
                let w = RANK_RATIO.powi(k as i32);
                for i in 0..v {
                    rows[i][p[i]] += w;
                }
            }
            for (i, row) in rows.iter_mut().enumerate() {
                for (j, x) in row.iter_mut().enumerate() {
                    if i != j {
                        *x += 1e-4;
                    }
                }
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= sum);
            }
            rows
        };
        let initial = geometric_row(&mut rng, v, RANK_RATIO);
        let stationary = stationary_of(&transition);
        Self {
            transition,
            initial,
            stationary,
        }
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Exact joint distribution of an adjacent symbol pair in steady state:
    /// `P(i, j) = pi_i * T_ij`.
    pub fn stationary_bigram(&self) -> Vec<Vec<f64>> {
        self.stationary
            .iter()
            .enumerate()
            .map(|(i, &pi)| self.transition[i].iter().map(|&t| pi * t).collect())
            .collect()
    }

    fn sample_sequence(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut seq = Vec::with_capacity(len);
        let first = sample_categorical(&self.initial, rng);
        seq.push(first);
        for _ in 1..len {
            let prev = *seq.last().expect("non-empty");
            seq.push(sample_categorical(&self.transition[prev], rng));
        }
        seq
    }
}

/// Damped power iteration; the damping keeps 2-state no-self-loop chains
/// (which are periodic) convergent.
fn stationary_of(transition: &[Vec<f64>]) -> Vec<f64> {
    let v = transition.len();
    let mut pi = vec![1.0 / v as f64; v];
    for _ in 0..100_000 {
        let mut next = vec![0.0; v];
        for (i, row) in transition.iter().enumerate() {
            for (j, &t) in row.iter().enumerate() {
                next[j] += pi[i] * t;
            }
        }
        let mut delta = 0.0;
        for j in 0..v {
            next[j] = 0.5 * pi[j] + 0.5 * next[j];
            delta += (next[j] - pi[j]).abs();
        }
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    pi
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut u = rng.random::<f64>();
    for (i, &p) in probs.iter().enumerate() {
        u -= p;
        if u < 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

/// Ground-truth unit-to-phoneme assignment of a cipher task.
#[derive(Debug, Clone)]
pub struct TrueMapping {
    unit_to_phoneme: Vec<Option<usize>>,
}

impl TrueMapping {
    pub fn phoneme_of(&self, unit: usize) -> Option<usize> {
        self.unit_to_phoneme.get(unit).copied().flatten()
    }

    pub fn unit_inventory(&self) -> usize {
        self.unit_to_phoneme.len()
    }

    pub fn save(&self, path: &std::path::Path, vocab: &Vocab) -> Result<(), CorpusError> {
        use std::fmt::Write as _;
        let mut out = String::new();
        for (unit, phone) in self.unit_to_phoneme.iter().enumerate() {
            let sym = phone.map_or("-", |p| vocab.symbol(p));
            writeln!(out, "{unit}\t{sym}").expect("string write");
        }
        std::fs::write(path, out).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Everything `synth_cipher` produces.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub vocab: Vocab,
    /// Unit sequences with noisy teacher boundary labels attached.
    pub speech: UnitCorpus,
    pub text: PhonemeCorpus,
    pub eval: EvalSet,
    pub mapping: TrueMapping,
}

/// Generate a cipher corpus: `n_train_speech` unit sequences (with noisy
/// boundary labels), `n_train_text` unpaired phoneme sequences from the same
/// chain, and `n_eval` paired evaluation items with clean ground truth.
pub fn synth_cipher(
    spec: &CipherSpec,
    n_train_speech: usize,
    n_train_text: usize,
    n_eval: usize,
    seed: u64,
) -> Result<SynthOutput, CorpusError> {
    spec.validate()?;
    if n_train_speech < 1 || n_train_text < 1 || n_eval < 1 {
        return Err(CorpusError::InvalidSpec("sequence counts must be >= 1".into()));
    }

    let vocab = Vocab::synthetic(spec.vocab_size);
    let chain = MarkovChain::from_spec(spec);

    // Unit assignment is a seeded permutation so unit ids carry no accidental
    // structure the model could exploit.
    let mut structure_rng = ChaCha8Rng::seed_from_u64(spec.transition_seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut perm: Vec<usize> = (0..spec.unit_inventory).collect();
    perm.shuffle(&mut structure_rng);
    let mut unit_to_phoneme = vec![None; spec.unit_inventory];
    let mut phoneme_units: Vec<Vec<usize>> = vec![Vec::new(); spec.vocab_size];
    for p in 0..spec.vocab_size {
        for u in 0..spec.units_per_phoneme {
            let unit = perm[p * spec.units_per_phoneme + u];
            unit_to_phoneme[unit] = Some(p);
            phoneme_units[p].push(unit);
        }
    }
    let mapping = TrueMapping { unit_to_phoneme };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_item = |rng: &mut ChaCha8Rng| -> (UnitSequence, PhonemeSequence, Vec<bool>) {
        let jitter = spec.seq_len_jitter as i64;
        let delta = if jitter > 0 { rng.random_range(-jitter..=jitter) } else { 0 };
        let len = (spec.seq_len as i64 + delta).max(1) as usize;
        let phonemes = chain.sample_sequence(len, rng);

        let mut units = Vec::new();
        let mut true_flags = Vec::new();
        for &p in &phonemes {
            let dj = spec.duration_jitter as i64;
            let dd = if dj > 0 { rng.random_range(-dj..=dj) } else { 0 };
            let duration = (spec.mean_duration as i64 + dd).max(1) as usize;
            let unit = phoneme_units[p][rng.random_range(0..spec.units_per_phoneme)];
            for d in 0..duration {
                let emitted = if spec.label_noise_rate > 0.0
                    && rng.random::<f64>() < spec.label_noise_rate
                {
                    rng.random_range(0..spec.unit_inventory)
                } else {
                    unit
                };
                units.push(emitted);
                // frame 0 starts segment 1 implicitly and is never flagged
                true_flags.push(d == 0 && units.len() > 1);
            }
        }

        (
            UnitSequence::new(units).expect("non-empty"),
            PhonemeSequence::new(phonemes, spec.vocab_size).expect("non-empty"),
            true_flags,
        )
    };

    let noisy_labels = |flags: &[bool], rng: &mut ChaCha8Rng| -> BoundaryLabels {
        let mut noisy = Vec::with_capacity(flags.len());
        let mut conf = Vec::with_capacity(flags.len());
        for (t, &f) in flags.iter().enumerate() {
            let flipped =
                t >= 1 && spec.boundary_noise_rate > 0.0 && rng.random::<f64>() < spec.boundary_noise_rate;
            noisy.push(f != flipped);
            conf.push(if flipped { 0.0 } else { 1.0 });
        }
        BoundaryLabels::new(noisy, conf).expect("lengths match")
    };

    let mut speech_seqs = Vec::with_capacity(n_train_speech);
    let mut speech_bounds = Vec::with_capacity(n_train_speech);
    for _ in 0..n_train_speech {
        let (units, _, true_flags) = draw_item(&mut rng);
        speech_bounds.push(noisy_labels(&true_flags, &mut rng));
        speech_seqs.push(units);
    }
    let speech = UnitCorpus::new(speech_seqs)?.with_boundaries(speech_bounds)?;

    let mut text_seqs = Vec::with_capacity(n_train_text);
    for _ in 0..n_train_text {
        let (_, phonemes, _) = draw_item(&mut rng);
        text_seqs.push(phonemes);
    }
    let text = PhonemeCorpus::new(text_seqs)?;

    let mut items = Vec::with_capacity(n_eval);
    for _ in 0..n_eval {
        let (units, phonemes, true_flags) = draw_item(&mut rng);
        let confidence = vec![1.0; true_flags.len()];
        items.push(EvalItem {
            units,
            phonemes,
            boundaries: BoundaryLabels::new(true_flags, confidence).expect("lengths match"),
        });
    }
    let eval = EvalSet::new(items)?;

    Ok(SynthOutput {
        vocab,
        speech,
        text,
        eval,
        mapping,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_jitter_spec() -> CipherSpec {
        CipherSpec {
            vocab_size: 20,
            unit_inventory: 20,
            units_per_phoneme: 1,
            mean_duration: 3,
            duration_jitter: 0,
            seq_len: 10,
            seq_len_jitter: 0,
            ..CipherSpec::default()
        }
    }

    fn run_lengths(units: &[usize]) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut len = 1;
        for w in units.windows(2) {
            if w[0] == w[1] {
                len += 1;
            } else {
                runs.push(len);
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    #[test]
    fn zero_jitter_forces_run_length_three() {
        let out = synth_cipher(&no_jitter_spec(), 100, 1, 1, 11).unwrap();
        for seq in out.speech.sequences() {
            for run in run_lengths(seq.units()) {
                assert_eq!(run, 3);
            }
        }
        // eval boundaries sit exactly at run starts
        for item in &out.eval.items {
            let expect: Vec<usize> = (1..item.units.len())
                .filter(|&t| item.units.units()[t] != item.units.units()[t - 1])
                .collect();
            assert_eq!(item.boundaries.positions(), expect);
        }
    }

    #[test]
    fn equal_seeds_are_bit_identical() {
        let spec = no_jitter_spec();
        let a = synth_cipher(&spec, 20, 20, 5, 42).unwrap();
        let b = synth_cipher(&spec, 20, 20, 5, 42).unwrap();
        assert_eq!(a.speech.sequences(), b.speech.sequences());
        assert_eq!(a.speech.boundaries(), b.speech.boundaries());
        assert_eq!(a.text.sequences(), b.text.sequences());
        for (x, y) in a.eval.items.iter().zip(&b.eval.items) {
            assert_eq!(x.units, y.units);
            assert_eq!(x.phonemes, y.phonemes);
            assert_eq!(x.boundaries, y.boundaries);
        }
    }

    #[test]
    fn true_boundary_count_is_phoneme_count_minus_one() {
        let spec = CipherSpec {
            duration_jitter: 1,
            seq_len_jitter: 3,
            ..no_jitter_spec()
        };
        let out = synth_cipher(&spec, 1, 1, 30, 3).unwrap();
        for item in &out.eval.items {
            assert_eq!(item.boundaries.positions().len(), item.phonemes.len() - 1);
        }
    }

    #[test]
    fn mapping_is_injective_and_complete() {
        let spec = CipherSpec {
            vocab_size: 6,
            unit_inventory: 15,
            units_per_phoneme: 2,
            ..CipherSpec::default()
        };
        let out = synth_cipher(&spec, 5, 5, 2, 1).unwrap();
        let mut seen = vec![0usize; 6];
        for u in 0..15 {
            if let Some(p) = out.mapping.phoneme_of(u) {
                seen[p] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 2));
    }

    #[test]
    fn injectivity_violation_is_an_error() {
        let spec = CipherSpec {
            vocab_size: 20,
            unit_inventory: 19,
            ..CipherSpec::default()
        };
        assert!(matches!(
            synth_cipher(&spec, 1, 1, 1, 0),
            Err(CorpusError::InvalidSpec(_))
        ));
    }

    #[test]
    fn no_adjacent_duplicate_phonemes() {
        let out = synth_cipher(&CipherSpec::default(), 1, 50, 1, 9).unwrap();
        for seq in out.text.sequences() {
            for w in seq.labels().windows(2) {
                assert_ne!(w[0], w[1]);
            }
        }
    }

    #[test]
    fn initial_distribution_is_far_from_stationary() {
        // The sentence-initial bias is the positional signal the unigram
        // matching relies on; it must not degenerate to the stationary vector.
        let chain = MarkovChain::from_spec(&CipherSpec::default());
        let l1: f64 = chain
            .initial()
            .iter()
            .zip(chain.stationary())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(l1 > 0.3, "initial vs stationary L1 only {l1}");
        assert!((chain.initial().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_vector_is_a_fixed_point() {
        let chain = MarkovChain::from_spec(&CipherSpec::default());
        let pi = chain.stationary();
        let v = pi.len();
        let mut next = vec![0.0; v];
        for (i, row) in chain.transition().iter().enumerate() {
            for (j, &t) in row.iter().enumerate() {
                next[j] += pi[i] * t;
            }
        }
        let drift: f64 = next.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum();
        assert!(drift < 1e-12, "stationary drift {drift}");
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
