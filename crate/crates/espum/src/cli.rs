//! Command-line entry point: one binary exposing the whole pipeline from
//! corpus synthesis through training to evaluation.
//!
//! Every subcommand draws all randomness from one seed, so identical
//! invocations produce identical outputs. Exit codes: 0 success, 1 runtime
//! error (message on stderr), 2 usage error.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::{
    load_boundary_labels, load_eval_set, load_phoneme_corpus, load_unit_corpus,
    save_boundary_labels, save_phoneme_corpus, save_unit_corpus, synth_cipher, CipherSpec,
    PhonemeCorpus, UnitCorpus, Vocab,
};
use crate::diffnet::GradCheckConfig;
use crate::eval::{
    decode, pooled_boundary_metrics, pooled_per, BoundaryMetrics, DecodeOptions, MatchMode,
};
use crate::model::binarize_boundaries;
use crate::stats::{positional_unigram, skipgram_dist, topk_truncate, write_dist_text, SkipSizeSet};
use crate::trainer::{
    grad_check_stack, parse_config, relabel, run_ablation, train, train_from, train_with_relabel,
    write_ablation_tsv, AblationSpec, Checkpoint, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "espum",
    version,
    about = "Unsupervised phoneme recognition from discrete speech units",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cipher corpus with ground-truth alignments.
    Synth(SynthArgs),
    /// Compute text-side skipgram and positional-unigram targets.
    Stats(StatsArgs),
    /// Train generator and segmenter from a config file.
    Train(TrainArgs),
    /// Rebinarize a checkpoint's segmenter outputs into new teacher labels.
    Relabel(RelabelArgs),
    /// Decode unit sequences into phoneme transcriptions.
    Decode(DecodeArgs),
    /// Score decoded output against reference transcriptions.
    EvalPer(EvalPerArgs),
    /// Score predicted boundaries against reference boundaries.
    EvalSeg(EvalSegArgs),
    /// Train one run per statistics configuration and tabulate the scores.
    Ablate(AblateArgs),
    /// Check training gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors exit 2; --help/--version exit 0.
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Train(args) => cmd_train(args),
        Command::Relabel(args) => cmd_relabel(args),
        Command::Decode(args) => cmd_decode(args),
        Command::EvalPer(args) => cmd_eval_per(args),
        Command::EvalSeg(args) => cmd_eval_seg(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Gradcheck(args) => return run_gradcheck(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Cipher spec file (flat `key = value`); defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for the corpus files.
    #[arg(long)]
    out: PathBuf,
    /// Sampling seed (overrides the spec file's `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Training unit sequences (overrides the spec file's `n_train_speech`).
    #[arg(long)]
    n_speech: Option<usize>,
    /// Training text sequences (overrides the spec file's `n_train_text`).
    #[arg(long)]
    n_text: Option<usize>,
    /// Paired evaluation items (overrides the spec file's `n_eval`).
    #[arg(long)]
    n_eval: Option<usize>,
}

/// Counts and seed accompanying a [`CipherSpec`] in a spec file.
struct SynthPlan {
    spec: CipherSpec,
    n_speech: usize,
    n_text: usize,
    n_eval: usize,
    seed: u64,
}

impl Default for SynthPlan {
    fn default() -> Self {
        Self {
            spec: CipherSpec::default(),
            n_speech: 200,
            n_text: 400,
            n_eval: 50,
            seed: 0,
        }
    }
}

fn parse_synth_plan(text: &str) -> Result<SynthPlan> {
    let mut plan = SynthPlan::default();
    let mut seen = std::collections::BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("line {}: expected `key = value`", lineno + 1))?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            bail!("duplicate key `{key}`");
        }
        let ctx = || format!("bad value for `{key}`: `{value}`");
        match key {
            "vocab_size" => plan.spec.vocab_size = value.parse().with_context(ctx)?,
            "unit_inventory" => plan.spec.unit_inventory = value.parse().with_context(ctx)?,
            "units_per_phoneme" => plan.spec.units_per_phoneme = value.parse().with_context(ctx)?,
            "mean_duration" => plan.spec.mean_duration = value.parse().with_context(ctx)?,
            "duration_jitter" => plan.spec.duration_jitter = value.parse().with_context(ctx)?,
            "markov_order" => plan.spec.markov_order = value.parse().with_context(ctx)?,
            "transition_seed" => plan.spec.transition_seed = value.parse().with_context(ctx)?,
            "label_noise_rate" => plan.spec.label_noise_rate = value.parse().with_context(ctx)?,
            "boundary_noise_rate" => {
                plan.spec.boundary_noise_rate = value.parse().with_context(ctx)?
            }
            "seq_len" => plan.spec.seq_len = value.parse().with_context(ctx)?,
            "seq_len_jitter" => plan.spec.seq_len_jitter = value.parse().with_context(ctx)?,
            "n_train_speech" => plan.n_speech = value.parse().with_context(ctx)?,
            "n_train_text" => plan.n_text = value.parse().with_context(ctx)?,
            "n_eval" => plan.n_eval = value.parse().with_context(ctx)?,
            "seed" => plan.seed = value.parse().with_context(ctx)?,
            _ => bail!("unknown key `{key}`"),
        }
    }
    Ok(plan)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut plan = match &args.spec {
        Some(path) => parse_synth_plan(
            &std::fs::read_to_string(path)
                .with_context(|| format!("reading spec {}", path.display()))?,
        )?,
        None => SynthPlan::default(),
    };
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    if let Some(n) = args.n_speech {
        plan.n_speech = n;
    }
    if let Some(n) = args.n_text {
        plan.n_text = n;
    }
    if let Some(n) = args.n_eval {
        plan.n_eval = n;
    }
    let out = synth_cipher(&plan.spec, plan.n_speech, plan.n_text, plan.n_eval, plan.seed)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let p = |name: &str| args.out.join(name);
    out.vocab.save(&p("vocab.txt"))?;
    save_unit_corpus(&p("train_units.txt"), &out.speech)?;
    save_boundary_labels(
        &p("train_boundaries.txt"),
        out.speech.boundaries().expect("synthetic labels"),
    )?;
    save_phoneme_corpus(&p("train_text.txt"), &out.text, &out.vocab)?;
    let eval_units = UnitCorpus::new(out.eval.items.iter().map(|i| i.units.clone()).collect())?;
    let eval_text =
        PhonemeCorpus::new(out.eval.items.iter().map(|i| i.phonemes.clone()).collect())?;
    let eval_bounds: Vec<_> = out.eval.items.iter().map(|i| i.boundaries.clone()).collect();
    save_unit_corpus(&p("eval_units.txt"), &eval_units)?;
    save_phoneme_corpus(&p("eval_text.txt"), &eval_text, &out.vocab)?;
    save_boundary_labels(&p("eval_boundaries.txt"), &eval_bounds)?;
    out.mapping.save(&p("unit_mapping.tsv"), &out.vocab)?;
    println!(
        "wrote {} train utterances, {} text sequences, {} eval items to {}",
        plan.n_speech,
        plan.n_text,
        plan.n_eval,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
struct StatsArgs {
    /// Phoneme text corpus.
    #[arg(long)]
    text: PathBuf,
    /// Vocabulary file (one symbol per line).
    #[arg(long)]
    vocab: PathBuf,
    /// Output directory for the target distributions.
    #[arg(long)]
    out: PathBuf,
    /// Offset tuples, e.g. "1 2 3" for bigrams or "1 2 1,1" with a trigram.
    #[arg(long, default_value = "1 2 3 4 5 6 1,1 2,2")]
    skipgrams: String,
    /// Keep only the top-K entries of each distribution (0 = keep all).
    #[arg(long, default_value_t = 0)]
    topk: usize,
    /// Positions for the positional unigram (0 = longest text sequence).
    #[arg(long, default_value_t = 0)]
    l_max: usize,
}

fn parse_skipgrams(text: &str) -> Result<SkipSizeSet> {
    let mut entries = Vec::new();
    for tuple in text.split_whitespace() {
        let offsets: std::result::Result<Vec<usize>, _> =
            tuple.split(',').map(str::parse).collect();
        entries.push(offsets.with_context(|| format!("bad offset tuple `{tuple}`"))?);
    }
    Ok(SkipSizeSet::new(entries)?)
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let vocab = Vocab::load(&args.vocab)?;
    let text = load_phoneme_corpus(&args.text, &vocab)?;
    let skip_set = parse_skipgrams(&args.skipgrams)?;
    std::fs::create_dir_all(&args.out)?;
    for offsets in skip_set.entries() {
        let mut dist = skipgram_dist(&text, vocab.size(), offsets)?;
        if args.topk > 0 {
            dist = topk_truncate(&dist, args.topk);
        }
        let name: Vec<String> = offsets.iter().map(|k| k.to_string()).collect();
        let path = args.out.join(format!("skipgram_{}.tsv", name.join("_")));
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        write_dist_text(&dist, &vocab, &mut w)?;
        println!(
            "skipgram offsets {:?}: {} entries, mass {:.6} -> {}",
            offsets,
            dist.allocated_entries(),
            dist.total_mass(),
            path.display()
        );
    }
    let l_max = if args.l_max > 0 {
        args.l_max
    } else {
        text.sequences().iter().map(|s| s.len()).max().unwrap_or(1)
    };
    let uni = positional_unigram(&text, vocab.size(), l_max)?;
    let path = args.out.join("positional_unigram.tsv");
    let mut out = String::from("position\tsymbol\tprob\tmass\n");
    for l in 0..uni.l_max() {
        for (v, &p) in uni.row(l).iter().enumerate() {
            if p > 0.0 {
                out.push_str(&format!("{l}\t{}\t{p}\t{}\n", vocab.symbol(v), uni.mass(l)));
            }
        }
    }
    std::fs::write(&path, out)?;
    println!("positional unigram over {l_max} positions -> {}", path.display());
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    /// Training config (flat `key = value`); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training unit sequences.
    #[arg(long)]
    units: PathBuf,
    /// Teacher boundary labels aligned with --units.
    #[arg(long)]
    boundaries: PathBuf,
    /// Unpaired phoneme text corpus.
    #[arg(long)]
    text: PathBuf,
    /// Vocabulary file.
    #[arg(long)]
    vocab: PathBuf,
    /// Output directory (checkpoint + history).
    #[arg(long)]
    out: PathBuf,
    /// Optional paired eval set for periodic scoring.
    #[arg(long)]
    eval_units: Option<PathBuf>,
    #[arg(long)]
    eval_text: Option<PathBuf>,
    #[arg(long)]
    eval_boundaries: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from an existing checkpoint instead of initializing.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Skip the relabeling iterations even if the config enables them.
    #[arg(long)]
    no_relabel: bool,
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_train_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => parse_config(
            &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_train_config(args.config.as_deref(), args.seed)?;
    let vocab = Vocab::load(&args.vocab)?;
    if cfg.vocab_size == 0 {
        cfg.vocab_size = vocab.size();
    }
    let units = load_unit_corpus(&args.units)?;
    let bounds = load_boundary_labels(&args.boundaries)?;
    let speech = units.with_boundaries(bounds)?;
    let text = load_phoneme_corpus(&args.text, &vocab)?;
    let eval = match (&args.eval_units, &args.eval_text, &args.eval_boundaries) {
        (Some(u), Some(t), Some(b)) => Some(load_eval_set(u, t, b, &vocab)?),
        (None, None, None) => None,
        _ => bail!("--eval-units, --eval-text, and --eval-boundaries must be given together"),
    };

    let (ckpt, history) = if let Some(resume) = &args.resume {
        let ckpt = load_checkpoint(resume)?;
        train_from(&cfg, ckpt, &speech, &text, eval.as_ref())?
    } else if args.no_relabel || cfg.relabel_iters == 0 {
        train(&cfg, &speech, &text, eval.as_ref())?
    } else {
        train_with_relabel(&cfg, &speech, &text, eval.as_ref())?
    };

    std::fs::create_dir_all(&args.out)?;
    ckpt.save(&args.out.join("checkpoint.espum"))?;
    let mut loss_w = std::io::BufWriter::new(std::fs::File::create(args.out.join("loss_history.tsv"))?);
    history.write_loss_tsv(&mut loss_w)?;
    if !history.evals.is_empty() {
        let mut eval_w =
            std::io::BufWriter::new(std::fs::File::create(args.out.join("eval_history.tsv"))?);
        history.write_eval_tsv(&mut eval_w)?;
    }
    std::fs::write(args.out.join("train.cfg"), cfg.to_config_string())?;
    println!(
        "trained to update {} (labels version {}); final total loss {}",
        ckpt.step,
        ckpt.labels_version,
        history.final_total().map_or("n/a".into(), |t| t.to_string())
    );
    if let Some(last) = history.evals.last() {
        println!(
            "last eval @ {}: PER {:.4}, lenient F1 {:.4}, harsh F1 {:.4}",
            last.step, last.per, last.lenient_f1, last.harsh_f1
        );
    }
    Ok(())
}

#[derive(Args)]
struct RelabelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Unit sequences to relabel (the training speech corpus).
    #[arg(long)]
    units: PathBuf,
    /// Where the updated checkpoint is written.
    #[arg(long)]
    out: PathBuf,
    /// Also write the new labels as a boundary file.
    #[arg(long)]
    boundaries_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

fn cmd_relabel(args: RelabelArgs) -> Result<()> {
    let mut ckpt = load_checkpoint(&args.checkpoint)?;
    let speech = load_unit_corpus(&args.units)?;
    let labels = relabel(&ckpt, &speech, args.threshold)?;
    if let Some(path) = &args.boundaries_out {
        save_boundary_labels(path, &labels)?;
    }
    let n_boundaries: usize = labels.iter().map(|l| l.positions().len()).sum();
    ckpt.replace_labels(labels);
    ckpt.save(&args.out)?;
    println!(
        "relabeled {} utterances ({} interior boundaries), labels version {} -> {}",
        speech.len(),
        n_boundaries,
        ckpt.labels_version,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    units: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Decoded transcriptions, one per line.
    #[arg(long)]
    out: PathBuf,
    /// Keep adjacent identical labels instead of collapsing them.
    #[arg(long)]
    no_merge_duplicates: bool,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

fn decode_options(no_merge: bool, threshold: f64) -> DecodeOptions {
    DecodeOptions {
        merge_duplicates: !no_merge,
        binarize_threshold: threshold,
    }
}

fn cmd_decode(args: DecodeArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let vocab = Vocab::load(&args.vocab)?;
    let units = load_unit_corpus(&args.units)?;
    let opts = decode_options(args.no_merge_duplicates, args.threshold);
    let decoded: Vec<_> = units
        .sequences()
        .iter()
        .map(|u| decode(&ckpt.segmenter, &ckpt.generator, u, &opts))
        .collect::<std::result::Result<_, _>>()?;
    let corpus = PhonemeCorpus::new(decoded)?;
    save_phoneme_corpus(&args.out, &corpus, &vocab)?;
    println!(
        "decoded {} utterances (merge_duplicates={}) -> {}",
        corpus.len(),
        !args.no_merge_duplicates,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
struct EvalPerArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    units: PathBuf,
    /// Reference transcriptions aligned with --units.
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    no_merge_duplicates: bool,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Also write the result as a TSV file.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

fn cmd_eval_per(args: EvalPerArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let vocab = Vocab::load(&args.vocab)?;
    let units = load_unit_corpus(&args.units)?;
    let refs = load_phoneme_corpus(&args.reference, &vocab)?;
    if units.len() != refs.len() {
        bail!(
            "{} unit sequences but {} reference transcriptions",
            units.len(),
            refs.len()
        );
    }
    let opts = decode_options(args.no_merge_duplicates, args.threshold);
    let hyps: Vec<_> = units
        .sequences()
        .iter()
        .map(|u| decode(&ckpt.segmenter, &ckpt.generator, u, &opts))
        .collect::<std::result::Result<_, _>>()?;
    let result = pooled_per(refs.sequences(), &hyps)?;
    println!(
        "PER {:.6} (S={} D={} I={} over {} reference phonemes; merge_duplicates={})",
        result.per,
        result.substitutions,
        result.deletions,
        result.insertions,
        result.ref_length,
        opts.merge_duplicates
    );
    if let Some(path) = &args.tsv {
        std::fs::write(
            path,
            format!(
                "per\tsubstitutions\tdeletions\tinsertions\tref_length\tmerge_duplicates\n\
                 {}\t{}\t{}\t{}\t{}\t{}\n",
                result.per,
                result.substitutions,
                result.deletions,
                result.insertions,
                result.ref_length,
                opts.merge_duplicates
            ),
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Lenient,
    Harsh,
    Both,
}

#[derive(Args)]
struct EvalSegArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    units: PathBuf,
    /// Reference boundary labels aligned with --units.
    #[arg(long)]
    ref_boundaries: PathBuf,
    #[arg(long, default_value_t = 1)]
    tolerance: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Also write the results as a TSV file.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

fn cmd_eval_seg(args: EvalSegArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let units = load_unit_corpus(&args.units)?;
    let refs = load_boundary_labels(&args.ref_boundaries)?;
    if units.len() != refs.len() {
        bail!(
            "{} unit sequences but {} reference boundary rows",
            units.len(),
            refs.len()
        );
    }
    let mut hyp_pos = Vec::with_capacity(units.len());
    for u in units.sequences() {
        let (b, _) = ckpt.segmenter.forward(u)?;
        hyp_pos.push(binarize_boundaries(&b, args.threshold).positions());
    }
    let ref_pos: Vec<_> = refs.iter().map(|r| r.positions()).collect();
    let modes: &[MatchMode] = match args.mode {
        ModeArg::Lenient => &[MatchMode::Lenient],
        ModeArg::Harsh => &[MatchMode::Harsh],
        ModeArg::Both => &[MatchMode::Lenient, MatchMode::Harsh],
    };
    let mut rows: Vec<BoundaryMetrics> = Vec::new();
    for &mode in modes {
        let m = pooled_boundary_metrics(&ref_pos, &hyp_pos, args.tolerance, mode)?;
        println!(
            "{mode}: P={:.4} R={:.4} F1={:.4} R-value={:.4} (tolerance {} frames)",
            m.precision, m.recall, m.f1, m.r_value, m.tolerance_frames
        );
        rows.push(m);
    }
    if let Some(path) = &args.tsv {
        let mut out = String::from("mode\tprecision\trecall\tf1\tr_value\ttolerance_frames\n");
        for m in &rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                m.mode, m.precision, m.recall, m.f1, m.r_value, m.tolerance_frames
            ));
        }
        std::fs::write(path, out)?;
    }
    Ok(())
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    units: PathBuf,
    #[arg(long)]
    boundaries: PathBuf,
    #[arg(long)]
    text: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    eval_units: PathBuf,
    #[arg(long)]
    eval_text: PathBuf,
    #[arg(long)]
    eval_boundaries: PathBuf,
    /// Results table destination.
    #[arg(long)]
    out: PathBuf,
    /// Grid row as `name:skipgrams:use_unigram`, e.g. `uni+bi:1 2 3:true`.
    /// Repeatable; the default grid is bigrams-only, uni+bi, uni+bi+tri.
    #[arg(long)]
    row: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

fn default_grid() -> Result<Vec<AblationSpec>> {
    Ok(vec![
        AblationSpec {
            name: "bigrams-only".into(),
            skip_set: SkipSizeSet::bigrams_up_to(6)?,
            use_unigram: false,
        },
        AblationSpec {
            name: "uni+bi".into(),
            skip_set: SkipSizeSet::bigrams_up_to(6)?,
            use_unigram: true,
        },
        AblationSpec {
            name: "uni+bi+tri".into(),
            skip_set: SkipSizeSet::bi_tri_default(),
            use_unigram: true,
        },
    ])
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let mut cfg = load_train_config(args.config.as_deref(), args.seed)?;
    let vocab = Vocab::load(&args.vocab)?;
    if cfg.vocab_size == 0 {
        cfg.vocab_size = vocab.size();
    }
    let units = load_unit_corpus(&args.units)?;
    let bounds = load_boundary_labels(&args.boundaries)?;
    let speech = units.with_boundaries(bounds)?;
    let text = load_phoneme_corpus(&args.text, &vocab)?;
    let eval = load_eval_set(&args.eval_units, &args.eval_text, &args.eval_boundaries, &vocab)?;
    let grid = if args.row.is_empty() {
        default_grid()?
    } else {
        args.row
            .iter()
            .map(|row| {
                let mut parts = row.splitn(3, ':');
                let (name, skips, uni) = (
                    parts.next().unwrap_or_default(),
                    parts.next().unwrap_or_default(),
                    parts.next().unwrap_or_default(),
                );
                if name.is_empty() || uni.is_empty() {
                    bail!("bad --row `{row}`: expected name:skipgrams:use_unigram");
                }
                Ok(AblationSpec {
                    name: name.to_string(),
                    skip_set: parse_skipgrams(skips)?,
                    use_unigram: uni
                        .parse()
                        .with_context(|| format!("bad use_unigram in `{row}`"))?,
                })
            })
            .collect::<Result<_>>()?
    };
    let rows = run_ablation(&cfg, &grid, &speech, &text, &eval);
    let mut w = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    write_ablation_tsv(&rows, &mut w)?;
    for r in &rows {
        match &r.error {
            None => println!(
                "{}: PER {:.4}, lenient F1 {:.4}, harsh F1 {:.4}",
                r.name, r.per, r.lenient_f1, r.harsh_f1
            ),
            Some(e) => println!("{}: failed ({e})", r.name),
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Args)]
struct GradcheckArgs {
    /// Training config supplying losses and shapes; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Utterances in the probe batch.
    #[arg(long, default_value_t = 4)]
    batch: usize,
    /// Cap on checked coordinates per network (0 = all).
    #[arg(long, default_value_t = 0)]
    max_coords: usize,
}

fn run_gradcheck(args: GradcheckArgs) -> i32 {
    match gradcheck_inner(args) {
        Ok(pass) => {
            if pass {
                0
            } else {
                eprintln!("error: gradient check failed");
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn gradcheck_inner(args: GradcheckArgs) -> Result<bool> {
    let mut cfg = load_train_config(args.config.as_deref(), Some(args.seed))?;
    cfg.unit_inventory = 0;
    cfg.vocab_size = 0;
    // A small self-contained probe task; data files are not needed because
    // only gradient consistency is being measured.
    // Long enough to host every default skipgram offset.
    let spec = CipherSpec {
        vocab_size: 4,
        unit_inventory: 4,
        mean_duration: 2,
        seq_len: 10,
        seq_len_jitter: 2,
        ..CipherSpec::default()
    };
    let probe = synth_cipher(&spec, args.batch.max(4), 40, 1, args.seed)?;
    let batch: Vec<usize> = (0..args.batch.max(1).min(probe.speech.len())).collect();
    let gc = GradCheckConfig {
        max_coords: (args.max_coords > 0).then_some(args.max_coords),
        seed: args.seed,
        ..GradCheckConfig::default()
    };
    let (gen, seg) = grad_check_stack(&cfg, &probe.speech, &probe.text, &batch, &gc)?;
    for (name, report) in [("generator", &gen), ("segmenter", &seg)] {
        let worst = report
            .worst_param
            .as_ref()
            .map_or("-".to_string(), |(p, i)| format!("{p}[{i}]"));
        println!(
            "{name}: checked {} coords ({} kinks skipped), max relative error {:.3e} at {} \
             (tolerance {:.0e}) -> {}",
            report.checked,
            report.skipped_kinks,
            report.max_rel_err,
            worst,
            report.tol,
            if report.pass { "pass" } else { "FAIL" }
        );
    }
    Ok(gen.pass && seg.pass)
}
