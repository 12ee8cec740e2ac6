//! End-to-end optimization: batching, the joint generator/segmenter update,
//! segment relabeling, checkpointing, and training history.
//!
//! Text-side target distributions are computed once per run — they depend
//! only on the text corpus. Each update samples a batch from a seeded
//! per-epoch permutation, pools generator frames through soft alignments
//! built from the *current* boundary labels, and steps both networks' Adam
//! states jointly. The batch schedule is a pure function of (seed, step), so
//! a reloaded checkpoint continues bit-exactly.

mod checkpoint;
pub use checkpoint::Checkpoint;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{BoundaryLabels, CorpusError, EvalSet, PhonemeCorpus, UnitCorpus};
use crate::diffnet::{
    AdamConfig, AdamState, DiffnetError, GradCheckConfig, GradCheckReport, Tensor,
};
use crate::eval::{corpus_eval, DecodeOptions, EvalError, EvalOptions};
use crate::losses::{
    segment_bce_sum, skipgram_match_loss, smoothness_loss, total_loss, unigram_match_loss,
    BceConfig, LossError, LossParts, LossWeights,
};
use crate::model::{
    binarize_boundaries, pool_segments, pool_segments_backward, soft_alignment,
    soft_alignment_backward, Generator, ModelError, Segmenter, SegmenterShape,
};
use crate::stats::{
    positional_unigram, skipgram_dist, topk_truncate, PositionalUnigram, SkipSizeSet,
    SkipgramDist, StatsError,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("speech corpus has no boundary labels")]
    MissingBoundaries,
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
    #[error("non-finite {part} loss at update {step} (batch utterances {batch:?})")]
    NonFinite {
        part: String,
        step: u64,
        batch: Vec<usize>,
    },
    #[error(
        "diverged at update {step}: total {total} exceeded 10× the initial {baseline} \
         for 100 consecutive updates"
    )]
    Diverged { step: u64, total: f64, baseline: f64 },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Net(#[from] DiffnetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Full training recipe. Defaults are desk scale (batch 32); the published
/// large-corpus settings are under [`TrainConfig::paper_scale`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub max_updates: u64,
    pub relabel_iters: usize,
    /// Extra updates after each relabeling pass.
    pub relabel_updates: u64,
    pub skip_set: SkipSizeSet,
    pub use_unigram: bool,
    /// Support size kept for targets of order ≥ 4 (lower orders stay dense).
    pub topk_high_order: usize,
    pub weights: LossWeights,
    pub bce: BceConfig,
    pub binarize_threshold: f64,
    /// 0 = infer from the speech corpus.
    pub unit_inventory: usize,
    /// 0 = infer from the text corpus.
    pub vocab_size: usize,
    pub gen_kernel: usize,
    pub seg_shape: SegmenterShape,
    /// Evaluate every this many updates when an eval set is supplied; 0 = off.
    pub eval_interval: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.004,
            beta1: 0.5,
            beta2: 0.98,
            batch_size: 32,
            max_updates: 5000,
            relabel_iters: 1,
            relabel_updates: 2000,
            skip_set: SkipSizeSet::bi_tri_default(),
            use_unigram: true,
            topk_high_order: 5000,
            weights: LossWeights::default(),
            bce: BceConfig::default(),
            binarize_threshold: 0.5,
            unit_inventory: 0,
            vocab_size: 0,
            gen_kernel: 4,
            seg_shape: SegmenterShape::default(),
            eval_interval: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The published large-corpus settings.
    pub fn paper_scale() -> Self {
        Self {
            batch_size: 640,
            max_updates: 20000,
            relabel_updates: 20000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive and finite, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0,1), got {b}"));
            }
        }
        if self.batch_size < 1 {
            return bad("batch_size must be ≥ 1".into());
        }
        if self.max_updates < 1 {
            return bad("max_updates must be ≥ 1".into());
        }
        if self.skip_set.is_empty() && !self.use_unigram {
            return bad("skip set is empty and the unigram loss is off".into());
        }
        if self.topk_high_order < 1 {
            return bad("topk_high_order must be ≥ 1".into());
        }
        if !(0.0..=1.0).contains(&self.binarize_threshold) {
            return bad(format!(
                "binarize_threshold {} outside [0,1]",
                self.binarize_threshold
            ));
        }
        if self.gen_kernel < 1 {
            return bad("gen_kernel must be ≥ 1".into());
        }
        if self.seg_shape.layers < 1 || self.seg_shape.channels < 1 || self.seg_shape.kernel < 1 {
            return bad("segmenter shape fields must be ≥ 1".into());
        }
        self.weights.validate()?;
        self.bce.validate()?;
        Ok(())
    }

    /// Canonical flat `key = value` rendering; [`parse_config`] inverts it.
    pub fn to_config_string(&self) -> String {
        let skips: Vec<String> = self
            .skip_set
            .entries()
            .iter()
            .map(|e| {
                e.iter()
                    .map(|k| k.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        format!(
            "lr = {}\nbeta1 = {}\nbeta2 = {}\nbatch_size = {}\nmax_updates = {}\n\
             relabel_iters = {}\nrelabel_updates = {}\nskipgrams = {}\nuse_unigram = {}\n\
             topk_high_order = {}\nlambda_smooth = {}\nlambda_segment = {}\npos_weight = {}\n\
             confidence_threshold = {}\nbinarize_threshold = {}\nunit_inventory = {}\n\
             vocab_size = {}\ngen_kernel = {}\nseg_layers = {}\nseg_channels = {}\n\
             seg_kernel = {}\neval_interval = {}\nseed = {}\n",
            self.lr,
            self.beta1,
            self.beta2,
            self.batch_size,
            self.max_updates,
            self.relabel_iters,
            self.relabel_updates,
            skips.join(" "),
            self.use_unigram,
            self.topk_high_order,
            self.weights.lambda_smooth,
            self.weights.lambda_segment,
            self.bce.pos_weight,
            self.bce.confidence_threshold,
            self.binarize_threshold,
            self.unit_inventory,
            self.vocab_size,
            self.gen_kernel,
            self.seg_shape.layers,
            self.seg_shape.channels,
            self.seg_shape.kernel,
            self.eval_interval,
            self.seed,
        )
    }

    /// Hash of the trajectory-defining fields. Stopping knobs (max_updates,
    /// relabel budgets, eval_interval) are deliberately excluded: a resumed
    /// run with a longer budget follows the same trajectory, so checkpoints
    /// stay compatible across them.
    pub fn hash64(&self) -> u64 {
        let skips: Vec<String> = self
            .skip_set
            .entries()
            .iter()
            .map(|e| {
                e.iter()
                    .map(|k| k.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        let canonical = format!(
            "{};{};{};{};{};{};{};{};{};{};{};{};{};{};{};{};{};{}",
            self.lr,
            self.beta1,
            self.beta2,
            self.batch_size,
            skips.join(" "),
            self.use_unigram,
            self.topk_high_order,
            self.weights.lambda_smooth,
            self.weights.lambda_segment,
            self.bce.pos_weight,
            self.bce.confidence_threshold,
            self.binarize_threshold,
            self.unit_inventory,
            self.vocab_size,
            self.gen_kernel,
            self.seg_shape.layers,
            self.seg_shape.channels,
            self.seg_shape.kernel,
        );
        let canonical = format!("{canonical};{}", self.seed);
        fnv1a(canonical.as_bytes())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Parse the flat `key = value` config format. Blank lines and `#` comments
/// are allowed; unknown and duplicate keys are rejected.
pub fn parse_config(text: &str) -> Result<TrainConfig, TrainError> {
    let mut cfg = TrainConfig::default();
    let mut seen = std::collections::BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            TrainError::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(TrainError::Config(format!("duplicate key `{key}`")));
        }
        let err = |what: &str| TrainError::Config(format!("bad {what} for `{key}`: `{value}`"));
        match key {
            "lr" => cfg.lr = value.parse().map_err(|_| err("float"))?,
            "beta1" => cfg.beta1 = value.parse().map_err(|_| err("float"))?,
            "beta2" => cfg.beta2 = value.parse().map_err(|_| err("float"))?,
            "batch_size" => cfg.batch_size = value.parse().map_err(|_| err("integer"))?,
            "max_updates" => cfg.max_updates = value.parse().map_err(|_| err("integer"))?,
            "relabel_iters" => cfg.relabel_iters = value.parse().map_err(|_| err("integer"))?,
            "relabel_updates" => {
                cfg.relabel_updates = value.parse().map_err(|_| err("integer"))?
            }
            "skipgrams" => {
                let mut entries = Vec::new();
                for tuple in value.split_whitespace() {
                    let offsets: Result<Vec<usize>, _> =
                        tuple.split(',').map(str::parse).collect();
                    entries.push(offsets.map_err(|_| err("offset tuple"))?);
                }
                cfg.skip_set = SkipSizeSet::new(entries)
                    .map_err(|e| TrainError::Config(format!("skipgrams: {e}")))?;
            }
            "use_unigram" => cfg.use_unigram = value.parse().map_err(|_| err("bool"))?,
            "topk_high_order" => {
                cfg.topk_high_order = value.parse().map_err(|_| err("integer"))?
            }
            "lambda_smooth" => {
                cfg.weights.lambda_smooth = value.parse().map_err(|_| err("float"))?
            }
            "lambda_segment" => {
                cfg.weights.lambda_segment = value.parse().map_err(|_| err("float"))?
            }
            "pos_weight" => cfg.bce.pos_weight = value.parse().map_err(|_| err("float"))?,
            "confidence_threshold" => {
                cfg.bce.confidence_threshold = value.parse().map_err(|_| err("float"))?
            }
            "binarize_threshold" => {
                cfg.binarize_threshold = value.parse().map_err(|_| err("float"))?
            }
            "unit_inventory" => cfg.unit_inventory = value.parse().map_err(|_| err("integer"))?,
            "vocab_size" => cfg.vocab_size = value.parse().map_err(|_| err("integer"))?,
            "gen_kernel" => cfg.gen_kernel = value.parse().map_err(|_| err("integer"))?,
            "seg_layers" => cfg.seg_shape.layers = value.parse().map_err(|_| err("integer"))?,
            "seg_channels" => {
                cfg.seg_shape.channels = value.parse().map_err(|_| err("integer"))?
            }
            "seg_kernel" => cfg.seg_shape.kernel = value.parse().map_err(|_| err("integer"))?,
            "eval_interval" => cfg.eval_interval = value.parse().map_err(|_| err("integer"))?,
            "seed" => cfg.seed = value.parse().map_err(|_| err("integer"))?,
            _ => return Err(TrainError::Config(format!("unknown key `{key}`"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub parts: LossParts,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    pub per: f64,
    pub lenient_f1: f64,
    pub harsh_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainHistory {
    pub fn extend(&mut self, other: TrainHistory) {
        self.steps.extend(other.steps);
        self.evals.extend(other.evals);
    }

    pub fn final_total(&self) -> Option<f64> {
        self.steps.last().map(|r| r.total)
    }

    pub fn write_loss_tsv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "step\tunigram\tskipgram\tsegment\tsmooth\ttotal")?;
        for r in &self.steps {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.step, r.parts.unigram, r.parts.skipgram, r.parts.segment, r.parts.smooth, r.total
            )?;
        }
        Ok(())
    }

    pub fn write_eval_tsv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "step\tper\tlenient_f1\tharsh_f1")?;
        for r in &self.evals {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                r.step, r.per, r.lenient_f1, r.harsh_f1
            )?;
        }
        Ok(())
    }
}

/// Text-side targets, fixed for the whole run.
struct Targets {
    unigram: Option<PositionalUnigram>,
    skipgrams: Vec<SkipgramDist>,
}

fn build_targets(
    cfg: &TrainConfig,
    text: &PhonemeCorpus,
    vocab: usize,
) -> Result<Targets, TrainError> {
    let unigram = if cfg.use_unigram {
        let l_max = text
            .sequences()
            .iter()
            .map(|s| s.len())
            .max()
            .expect("non-empty corpus");
        Some(positional_unigram(text, vocab, l_max)?)
    } else {
        None
    };
    let mut skipgrams = Vec::new();
    for offsets in cfg.skip_set.entries() {
        let dist = skipgram_dist(text, vocab, offsets)?;
        skipgrams.push(if dist.order() >= 4 {
            topk_truncate(&dist, cfg.topk_high_order)
        } else {
            dist
        });
    }
    Ok(Targets { unigram, skipgrams })
}

/// Seeded order for one epoch; every utterance appears exactly once.
fn epoch_permutation(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mix = seed ^ (epoch + 1).wrapping_mul(0x9E3779B97F4A7C15);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix));
    order
}

fn infer_sizes(
    cfg: &TrainConfig,
    speech: &UnitCorpus,
    text: &PhonemeCorpus,
) -> Result<(usize, usize), TrainError> {
    let units = if cfg.unit_inventory > 0 {
        cfg.unit_inventory
    } else {
        speech.min_inventory()
    };
    let vocab = if cfg.vocab_size > 0 {
        cfg.vocab_size
    } else {
        text.sequences()
            .iter()
            .flat_map(|s| s.labels())
            .copied()
            .max()
            .map_or(0, |m| m + 1)
    };
    if units < 1 || vocab < 2 {
        return Err(TrainError::Config(format!(
            "implausible sizes: {units} units, {vocab} phonemes"
        )));
    }
    Ok((units, vocab))
}

/// Fresh training run to `cfg.max_updates`.
pub fn train(
    cfg: &TrainConfig,
    speech: &UnitCorpus,
    text: &PhonemeCorpus,
    eval: Option<&EvalSet>,
) -> Result<(Checkpoint, TrainHistory), TrainError> {
    cfg.validate()?;
    let labels = speech
        .boundaries()
        .ok_or(TrainError::MissingBoundaries)?
        .to_vec();
    let (units, vocab) = infer_sizes(cfg, speech, text)?;
    let generator = Generator::with_kernel(units, vocab, cfg.gen_kernel, cfg.seed)?;
    // Different init stream from the generator's.
    let segmenter = Segmenter::new(units, cfg.seg_shape, cfg.seed ^ 0x5e67_2a9b)?;
    let adam = AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        ..AdamConfig::default()
    };
    let ckpt = Checkpoint {
        config_hash: cfg.hash64(),
        step: 0,
        labels_version: 0,
        guard_baseline: f64::NAN,
        guard_count: 0,
        gen_opt: AdamState::new(adam, generator.network()),
        seg_opt: AdamState::new(adam, segmenter.network()),
        generator,
        segmenter,
        labels,
    };
    train_from(cfg, ckpt, speech, text, eval)
}

/// Continue a checkpoint to `cfg.max_updates`. The config must hash to the
/// one the checkpoint was created under.
pub fn train_from(
    cfg: &TrainConfig,
    mut ckpt: Checkpoint,
    speech: &UnitCorpus,
    text: &PhonemeCorpus,
    eval: Option<&EvalSet>,
) -> Result<(Checkpoint, TrainHistory), TrainError> {
    cfg.validate()?;
    if ckpt.config_hash != cfg.hash64() {
        return Err(TrainError::Mismatch(
            "checkpoint was created under a different config".into(),
        ));
    }
    if ckpt.labels.len() != speech.len() {
        return Err(TrainError::Mismatch(format!(
            "checkpoint carries {} label sets, speech corpus has {} utterances",
            ckpt.labels.len(),
            speech.len()
        )));
    }
    for (i, (labels, units)) in ckpt.labels.iter().zip(speech.sequences()).enumerate() {
        if labels.len() != units.len() {
            return Err(TrainError::Mismatch(format!(
                "utterance {i}: {} frames vs {} boundary labels",
                units.len(),
                labels.len()
            )));
        }
    }
    let targets = build_targets(cfg, text, ckpt.generator.vocab_size())?;
    let n = speech.len();
    let updates_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let mut history = TrainHistory::default();
    let eval_opts = EvalOptions {
        decode: DecodeOptions {
            merge_duplicates: true,
            binarize_threshold: cfg.binarize_threshold,
        },
        ..EvalOptions::default()
    };
    while ckpt.step < cfg.max_updates {
        let epoch = ckpt.step / updates_per_epoch;
        let slot = (ckpt.step % updates_per_epoch) as usize;
        let order = epoch_permutation(cfg.seed, epoch, n);
        let batch = &order[slot * cfg.batch_size..n.min((slot + 1) * cfg.batch_size)];
        let (parts, total) = run_update(cfg, &mut ckpt, speech, &targets, batch)?;
        if ckpt.guard_baseline.is_nan() {
            ckpt.guard_baseline = total;
        } else if total > 10.0 * ckpt.guard_baseline {
            ckpt.guard_count += 1;
            if ckpt.guard_count >= 100 {
                return Err(TrainError::Diverged {
                    step: ckpt.step,
                    total,
                    baseline: ckpt.guard_baseline,
                });
            }
        } else {
            ckpt.guard_count = 0;
        }
        ckpt.step += 1;
        history.steps.push(StepRecord {
            step: ckpt.step,
            parts,
            total,
        });
        if cfg.eval_interval > 0 && ckpt.step % cfg.eval_interval == 0 {
            if let Some(eval_set) = eval {
                let scores =
                    corpus_eval(&ckpt.segmenter, &ckpt.generator, eval_set, &eval_opts)?;
                history.evals.push(EvalRecord {
                    step: ckpt.step,
                    per: scores.per.per,
                    lenient_f1: scores.lenient.f1,
                    harsh_f1: scores.harsh.f1,
                });
            }
        }
    }
    Ok((ckpt, history))
}

/// One joint update on a batch of utterance indices.
fn run_update(
    cfg: &TrainConfig,
    ckpt: &mut Checkpoint,
    speech: &UnitCorpus,
    targets: &Targets,
    batch: &[usize],
) -> Result<(LossParts, f64), TrainError> {
    let mut frames = Vec::with_capacity(batch.len());
    let mut gen_tapes = Vec::with_capacity(batch.len());
    let mut bounds = Vec::with_capacity(batch.len());
    let mut seg_tapes = Vec::with_capacity(batch.len());
    let mut aligns = Vec::with_capacity(batch.len());
    let mut pooled = Vec::with_capacity(batch.len());
    for &i in batch {
        let units = &speech.sequences()[i];
        let (f, gt) = ckpt.generator.forward(units)?;
        let (b, st) = ckpt.segmenter.forward(units)?;
        let align = soft_alignment(&b, ckpt.labels[i].segment_count());
        pooled.push(pool_segments(&align, &f)?);
        frames.push(f);
        gen_tapes.push(gt);
        bounds.push(b);
        seg_tapes.push(st);
        aligns.push(align);
    }

    let (unigram, uni_grads) = match &targets.unigram {
        Some(t) => {
            let (v, g) = unigram_match_loss(&pooled, t)?;
            (v, Some(g))
        }
        None => (0.0, None),
    };
    let (skipgram, skip_grads) = if targets.skipgrams.is_empty() {
        (0.0, None)
    } else {
        let (v, g) = skipgram_match_loss(&pooled, &targets.skipgrams)?;
        (v, Some(g))
    };
    let mut smooth_sum = 0.0;
    let mut smooth_pairs = 0usize;
    let mut smooth_grads = Vec::with_capacity(batch.len());
    for f in &frames {
        let (v, g) = smoothness_loss(f);
        smooth_sum += v;
        smooth_pairs += f.rows().saturating_sub(1);
        smooth_grads.push(g);
    }
    // Mean over every frame transition in the batch: keeps lambda_smooth on
    // the same scale as the matching losses regardless of batch size and
    // utterance length, which a raw sum would swamp.
    let smooth = if smooth_pairs > 0 {
        smooth_sum / smooth_pairs as f64
    } else {
        0.0
    };
    let mut bce_total = 0.0;
    let mut bce_count = 0usize;
    let mut bce_grads = Vec::with_capacity(batch.len());
    for (b, &i) in bounds.iter().zip(batch) {
        let (s, c, g) = segment_bce_sum(b, &ckpt.labels[i], &cfg.bce)?;
        bce_total += s;
        bce_count += c;
        bce_grads.push(g);
    }
    // Mean over every scored frame in the batch.
    let segment = if bce_count > 0 {
        bce_total / bce_count as f64
    } else {
        0.0
    };
    let parts = LossParts {
        unigram,
        skipgram,
        segment,
        smooth,
    };
    let total = total_loss(&parts, &cfg.weights).map_err(|e| match e {
        LossError::NonFinite(part) => TrainError::NonFinite {
            part: part.into(),
            step: ckpt.step,
            batch: batch.to_vec(),
        },
        other => other.into(),
    })?;

    for (idx, _) in batch.iter().enumerate() {
        let mut grad_pooled = Tensor::zeros(pooled[idx].shape());
        if let Some(g) = &uni_grads {
            grad_pooled.add_assign(&g[idx]).expect("matching shapes");
        }
        if let Some(g) = &skip_grads {
            grad_pooled.add_assign(&g[idx]).expect("matching shapes");
        }
        let (grad_a, mut grad_frames) =
            pool_segments_backward(&aligns[idx], &frames[idx], &grad_pooled);
        let grad_b_align = soft_alignment_backward(&aligns[idx], &grad_a);
        if smooth_pairs > 0 {
            let scale = cfg.weights.lambda_smooth / smooth_pairs as f64;
            for (gf, gs) in grad_frames
                .values_mut()
                .iter_mut()
                .zip(smooth_grads[idx].values())
            {
                *gf += scale * gs;
            }
        }
        ckpt.generator
            .network_mut()
            .backward(&gen_tapes[idx], &grad_frames)?;
        let mut grad_b = grad_b_align;
        if bce_count > 0 {
            let scale = cfg.weights.lambda_segment / bce_count as f64;
            for (gb, g) in grad_b.iter_mut().zip(&bce_grads[idx]) {
                *gb += scale * g;
            }
        }
        let t_len = grad_b.len();
        let grad_b = Tensor::from_vec(&[t_len, 1], grad_b)?;
        ckpt.segmenter
            .network_mut()
            .backward(&seg_tapes[idx], &grad_b)?;
    }
    ckpt.gen_opt.step(ckpt.generator.network_mut())?;
    ckpt.seg_opt.step(ckpt.segmenter.network_mut())?;
    Ok((parts, total))
}

/// Finite-difference check of the whole training objective through each
/// network in turn: the generator is perturbed with the segmenter frozen,
/// then vice versa, using freshly initialized models from `cfg.seed` and one
/// fixed batch. The constant parts of the loss (e.g. BCE while checking the
/// generator) cancel in the differences but keep the value honest.
pub fn grad_check_stack(
    cfg: &TrainConfig,
    speech: &UnitCorpus,
    text: &PhonemeCorpus,
    batch: &[usize],
    gc: &GradCheckConfig,
) -> Result<(GradCheckReport, GradCheckReport), TrainError> {
    cfg.validate()?;
    let labels = speech.boundaries().ok_or(TrainError::MissingBoundaries)?;
    if batch.is_empty() || batch.iter().any(|&i| i >= speech.len()) {
        return Err(TrainError::Mismatch(format!(
            "batch indices {batch:?} out of range for {} utterances",
            speech.len()
        )));
    }
    let (units_n, vocab) = infer_sizes(cfg, speech, text)?;
    let generator = Generator::with_kernel(units_n, vocab, cfg.gen_kernel, cfg.seed)?;
    let segmenter = Segmenter::new(units_n, cfg.seg_shape, cfg.seed ^ 0x5e67_2a9b)?;
    let targets = build_targets(cfg, text, vocab)?;
    let shape_err = |e: String| DiffnetError::Shape(e);

    let mut inputs = Vec::with_capacity(batch.len());
    let mut batch_labels = Vec::with_capacity(batch.len());
    let mut seg_counts = Vec::with_capacity(batch.len());
    for &i in batch {
        inputs.push(Tensor::one_hot(speech.sequences()[i].units(), units_n)?);
        batch_labels.push(&labels[i]);
        seg_counts.push(labels[i].segment_count());
    }
    let weights = cfg.weights;
    // Smoothness uses the same mean-over-transitions reduction as training.
    let smooth_pairs: usize = inputs.iter().map(|t| t.rows().saturating_sub(1)).sum();
    let smooth_scale = if smooth_pairs > 0 {
        weights.lambda_smooth / smooth_pairs as f64
    } else {
        0.0
    };

    // Matching + smoothness losses of pooled/frame rows, with gradients.
    let match_losses = |pooled: &[Tensor]| -> Result<(f64, Vec<Tensor>), DiffnetError> {
        let mut value = 0.0;
        let mut grads: Vec<Tensor> = pooled.iter().map(|p| Tensor::zeros(p.shape())).collect();
        if let Some(t) = &targets.unigram {
            let (v, g) = unigram_match_loss(pooled, t).map_err(|e| shape_err(e.to_string()))?;
            value += v;
            for (a, b) in grads.iter_mut().zip(&g) {
                a.add_assign(b).expect("matching shapes");
            }
        }
        if !targets.skipgrams.is_empty() {
            let (v, g) = skipgram_match_loss(pooled, &targets.skipgrams)
                .map_err(|e| shape_err(e.to_string()))?;
            value += v;
            for (a, b) in grads.iter_mut().zip(&g) {
                a.add_assign(b).expect("matching shapes");
            }
        }
        Ok((value, grads))
    };

    // Generator side: boundary outputs (hence alignments and the BCE part)
    // are frozen at the untrained segmenter's values.
    let mut fixed_aligns = Vec::with_capacity(batch.len());
    let mut fixed_bce = (0.0, 0usize);
    for (&i, input) in batch.iter().zip(&inputs) {
        let _ = input;
        let (b, _) = segmenter.forward(&speech.sequences()[i])?;
        fixed_aligns.push(soft_alignment(&b, labels[i].segment_count()));
        let (s, c, _) = segment_bce_sum(&b, &labels[i], &cfg.bce)?;
        fixed_bce.0 += s;
        fixed_bce.1 += c;
    }
    let bce_const = if fixed_bce.1 > 0 {
        fixed_bce.0 / fixed_bce.1 as f64
    } else {
        0.0
    };
    let mut gen_net = generator.network().clone();
    let gen_report = crate::diffnet::grad_check(
        &mut gen_net,
        |net| {
            let mut frames = Vec::with_capacity(inputs.len());
            let mut tapes = Vec::with_capacity(inputs.len());
            let mut pooled = Vec::with_capacity(inputs.len());
            for (input, align) in inputs.iter().zip(&fixed_aligns) {
                let (f, tape) = net.forward(input)?;
                pooled.push(pool_segments(align, &f).map_err(|e| shape_err(e.to_string()))?);
                frames.push(f);
                tapes.push(tape);
            }
            let (match_value, match_grads) = match_losses(&pooled)?;
            let mut total = match_value + weights.lambda_segment * bce_const;
            for ((align, frames_i), (tape, grad_pooled)) in fixed_aligns
                .iter()
                .zip(&frames)
                .zip(tapes.iter().zip(&match_grads))
            {
                let (smooth_v, smooth_g) = smoothness_loss(frames_i);
                total += smooth_scale * smooth_v;
                let (_, mut grad_frames) = pool_segments_backward(align, frames_i, grad_pooled);
                for (gf, gs) in grad_frames.values_mut().iter_mut().zip(smooth_g.values()) {
                    *gf += smooth_scale * gs;
                }
                net.backward(tape, &grad_frames)?;
            }
            Ok(total)
        },
        gc,
    )?;

    // Segmenter side: generator frame rows (hence the smoothness part) are
    // frozen; boundaries drive the alignments and the BCE.
    let mut fixed_frames = Vec::with_capacity(batch.len());
    let mut smooth_const = 0.0;
    for &i in batch {
        let (f, _) = generator.forward(&speech.sequences()[i])?;
        smooth_const += smoothness_loss(&f).0;
        fixed_frames.push(f);
    }
    let mut seg_net = segmenter.network().clone();
    let bce_cfg = cfg.bce;
    let seg_report = crate::diffnet::grad_check(
        &mut seg_net,
        |net| {
            let mut bs = Vec::with_capacity(inputs.len());
            let mut tapes = Vec::with_capacity(inputs.len());
            let mut aligns = Vec::with_capacity(inputs.len());
            let mut pooled = Vec::with_capacity(inputs.len());
            for ((input, frames_i), &l_count) in
                inputs.iter().zip(&fixed_frames).zip(&seg_counts)
            {
                let (b_out, tape) = net.forward(input)?;
                let b = b_out.values().to_vec();
                let align = soft_alignment(&b, l_count);
                pooled.push(pool_segments(&align, frames_i).map_err(|e| shape_err(e.to_string()))?);
                bs.push(b);
                tapes.push(tape);
                aligns.push(align);
            }
            let (match_value, match_grads) = match_losses(&pooled)?;
            let mut bce_sum = 0.0;
            let mut bce_count = 0usize;
            let mut bce_grads = Vec::with_capacity(bs.len());
            for (b, item_labels) in bs.iter().zip(&batch_labels) {
                let (s, c, g) =
                    segment_bce_sum(b, item_labels, &bce_cfg).map_err(|e| shape_err(e.to_string()))?;
                bce_sum += s;
                bce_count += c;
                bce_grads.push(g);
            }
            let segment = if bce_count > 0 {
                bce_sum / bce_count as f64
            } else {
                0.0
            };
            let total = match_value
                + weights.lambda_segment * segment
                + smooth_scale * smooth_const;
            for (idx, tape) in tapes.iter().enumerate() {
                let (grad_a, _) =
                    pool_segments_backward(&aligns[idx], &fixed_frames[idx], &match_grads[idx]);
                let mut grad_b = soft_alignment_backward(&aligns[idx], &grad_a);
                if bce_count > 0 {
                    let scale = weights.lambda_segment / bce_count as f64;
                    for (gb, g) in grad_b.iter_mut().zip(&bce_grads[idx]) {
                        *gb += scale * g;
                    }
                }
                let t_len = grad_b.len();
                net.backward(tape, &Tensor::from_vec(&[t_len, 1], grad_b)?)?;
            }
            Ok(total)
        },
        gc,
    )?;
    Ok((gen_report, seg_report))
}

/// Rebinarize the segmenter's current outputs into fresh boundary labels
/// (confidence = max(b, 1−b)); the caller installs them with
/// [`Checkpoint::replace_labels`].
pub fn relabel(
    ckpt: &Checkpoint,
    speech: &UnitCorpus,
    threshold: f64,
) -> Result<Vec<BoundaryLabels>, TrainError> {
    speech
        .sequences()
        .iter()
        .map(|units| {
            let (b, _) = ckpt.segmenter.forward(units)?;
            Ok(binarize_boundaries(&b, threshold))
        })
        .collect()
}

/// Initial training plus `relabel_iters` rounds of relabeling, each followed
/// by `relabel_updates` further updates.
pub fn train_with_relabel(
    cfg: &TrainConfig,
    speech: &UnitCorpus,
    text: &PhonemeCorpus,
    eval: Option<&EvalSet>,
) -> Result<(Checkpoint, TrainHistory), TrainError> {
    let (mut ckpt, mut history) = train(cfg, speech, text, eval)?;
    for _ in 0..cfg.relabel_iters {
        let labels = relabel(&ckpt, speech, cfg.binarize_threshold)?;
        ckpt.replace_labels(labels);
        let mut phase = cfg.clone();
        phase.max_updates = ckpt.step + cfg.relabel_updates;
        let (next, more) = train_from(&phase, ckpt, speech, text, eval)?;
        ckpt = next;
        history.extend(more);
    }
    Ok((ckpt, history))
}

/// One ablation grid row: a named statistics configuration.
#[derive(Debug, Clone)]
pub struct AblationSpec {
    pub name: String,
    pub skip_set: SkipSizeSet,
    pub use_unigram: bool,
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    pub per: f64,
    pub lenient_f1: f64,
    pub harsh_f1: f64,
    /// A failed row records its error and NaN metrics without stopping the grid.
    pub error: Option<String>,
}

/// Train each grid row under an otherwise identical config and score it.
pub fn run_ablation(
    base: &TrainConfig,
    grid: &[AblationSpec],
    speech: &UnitCorpus,
    text: &PhonemeCorpus,
    eval: &EvalSet,
) -> Vec<AblationRow> {
    grid.iter()
        .map(|spec| {
            let mut cfg = base.clone();
            cfg.skip_set = spec.skip_set.clone();
            cfg.use_unigram = spec.use_unigram;
            let outcome = train(&cfg, speech, text, None).and_then(|(ckpt, _)| {
                let opts = EvalOptions {
                    decode: DecodeOptions {
                        merge_duplicates: true,
                        binarize_threshold: cfg.binarize_threshold,
                    },
                    ..EvalOptions::default()
                };
                Ok(corpus_eval(&ckpt.segmenter, &ckpt.generator, eval, &opts)?)
            });
            match outcome {
                Ok(scores) => AblationRow {
                    name: spec.name.clone(),
                    per: scores.per.per,
                    lenient_f1: scores.lenient.f1,
                    harsh_f1: scores.harsh.f1,
                    error: None,
                },
                Err(e) => AblationRow {
                    name: spec.name.clone(),
                    per: f64::NAN,
                    lenient_f1: f64::NAN,
                    harsh_f1: f64::NAN,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

pub fn write_ablation_tsv(rows: &[AblationRow], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "name\tper\tlenient_f1\tharsh_f1\terror")?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            r.name,
            r.per,
            r.lenient_f1,
            r.harsh_f1,
            r.error.as_deref().unwrap_or("-")
        )?;
    }
    Ok(())
}
