use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use segstream::harness::{
    annotate_cmd, decode_cmd, gen_corpus, sweep_cmd, train_cmd, AnnotateArgs, DecodeArgs,
    GenCorpusArgs, SweepArgs, SweepParam, TrainArgs,
};
use segstream::segmenter::SegmenterKind;

#[derive(Parser)]
#[command(
    name = "segstream",
    version,
    about = "Streaming transducer segmentation: corpus synthesis, <eos> annotation, training, decoding, sweeps"
)]
struct Cli {
    /// JSON file with defaults for any long flag of the chosen subcommand
    /// (explicit flags override the file).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for utterance-parallel commands (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic aligned corpus.
    GenCorpus(GenCorpusCli),
    /// Insert <eos> annotations into corpus transcripts.
    Annotate(AnnotateCli),
    /// Train stage 1 (wordpiece) or stage 2 (eos joint).
    Train(TrainCli),
    /// Decode a corpus with one segmenter and report metrics.
    Decode(DecodeCli),
    /// Repeat decode over a list of parameter values.
    Sweep(SweepCli),
}

/// Flag defaults loaded from `--config`; keys are the long flag names.
struct FileCfg(serde_json::Value);

impl FileCfg {
    fn load(path: Option<&PathBuf>) -> Result<FileCfg> {
        match path {
            None => Ok(FileCfg(serde_json::Value::Null)),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let v: serde_json::Value = serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                if !v.is_object() {
                    bail!("config {} must hold a JSON object", p.display());
                }
                Ok(FileCfg(v))
            }
        }
    }

    fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => Ok(Some(
                serde_json::from_value(v.clone())
                    .with_context(|| format!("config key {key:?} has the wrong type"))?,
            )),
        }
    }
}

/// flag > config file > default.
fn merge<T: DeserializeOwned>(cli: Option<T>, file: &FileCfg, key: &str, default: T) -> Result<T> {
    Ok(cli.or(file.get(key)?).unwrap_or(default))
}

fn require<T: DeserializeOwned>(cli: Option<T>, file: &FileCfg, key: &str) -> Result<T> {
    cli.or(file.get(key)?)
        .with_context(|| format!("missing required flag --{key} (not in --config either)"))
}

#[derive(Args)]
struct GenCorpusCli {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    num_utts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_dur_s: Option<f64>,
    #[arg(long)]
    max_dur_s: Option<f64>,
    #[arg(long)]
    hesitation_prob: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
}

fn run_gen_corpus(c: GenCorpusCli, f: &FileCfg) -> Result<()> {
    let mut args = GenCorpusArgs::new(
        require(c.out, f, "out")?,
        require(c.num_utts, f, "num-utts")?,
        merge(c.seed, f, "seed", 0)?,
    );
    args.min_dur_s = merge(c.min_dur_s, f, "min-dur-s", args.min_dur_s)?;
    args.max_dur_s = merge(c.max_dur_s, f, "max-dur-s", args.max_dur_s)?;
    args.hesitation_prob = c.hesitation_prob.or(f.get("hesitation-prob")?);
    args.noise_sigma = c.noise_sigma.or(f.get("noise-sigma")?);
    let s = gen_corpus(&args)?;
    println!(
        "wrote {} utterances ({:.3} h) to {}",
        s.utterances,
        s.total_hours,
        args.out.display()
    );
    println!("duration percentiles: 50th {:.1}s, 75th {:.1}s", s.dur_p50_s, s.dur_p75_s);
    Ok(())
}

#[derive(Args)]
struct AnnotateCli {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    silence_threshold: Option<f64>,
    #[arg(long)]
    lengthened_z: Option<f64>,
    /// Comma-separated filler words (default: the corpus lexicon).
    #[arg(long, value_delimiter = ',')]
    filler_lexicon: Option<Vec<String>>,
}

fn run_annotate(c: AnnotateCli, f: &FileCfg) -> Result<()> {
    let mut args = AnnotateArgs::new(require(c.corpus, f, "corpus")?, require(c.out, f, "out")?);
    args.silence_threshold_s =
        merge(c.silence_threshold, f, "silence-threshold", args.silence_threshold_s)?;
    args.lengthened_z = merge(c.lengthened_z, f, "lengthened-z", args.lengthened_z)?;
    args.filler_lexicon = c.filler_lexicon.or(f.get("filler-lexicon")?);
    let counts = annotate_cmd(&args)?;
    println!(
        "thresholds: silence {}s, lengthened z {}",
        args.silence_threshold_s, args.lengthened_z
    );
    println!(
        "inserted <eos>: rule1 (long silence) {}, rule2 (utterance end) {}",
        counts.rule1_inserted, counts.rule2_inserted
    );
    println!(
        "suppressed: lengthened-word {}, filler-word {}",
        counts.suppressed_lengthened, counts.suppressed_filler
    );
    Ok(())
}

#[derive(Args)]
struct TrainCli {
    #[arg(long)]
    stage: Option<u8>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    ckpt_in: Option<PathBuf>,
    #[arg(long)]
    ckpt_out: Option<PathBuf>,
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long)]
    fastemit_lambda: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    window_words: Option<usize>,
    #[arg(long)]
    enc_hidden: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    joint_hidden: Option<usize>,
    /// Stage 2: update all tensors instead of only the eos joint.
    #[arg(long)]
    stage2_update_all: bool,
    #[arg(long)]
    seed: Option<u64>,
}

fn run_train(c: TrainCli, f: &FileCfg) -> Result<()> {
    let mut args = TrainArgs::new(
        require(c.stage, f, "stage")?,
        require(c.corpus, f, "corpus")?,
        require(c.ckpt_out, f, "ckpt-out")?,
    );
    args.annotations = c.annotations.or(f.get("annotations")?);
    args.ckpt_in = c.ckpt_in.or(f.get("ckpt-in")?);
    args.loss_csv = c.loss_csv.or(f.get("loss-csv")?);
    args.fastemit_lambda = merge(c.fastemit_lambda, f, "fastemit-lambda", args.fastemit_lambda)?;
    args.learning_rate = merge(c.learning_rate, f, "learning-rate", args.learning_rate)?;
    args.steps = merge(c.steps, f, "steps", args.steps)?;
    args.batch_size = merge(c.batch_size, f, "batch-size", args.batch_size)?;
    args.window_words = merge(c.window_words, f, "window-words", args.window_words)?;
    args.enc_hidden = merge(c.enc_hidden, f, "enc-hidden", args.enc_hidden)?;
    args.embed_dim = merge(c.embed_dim, f, "embed-dim", args.embed_dim)?;
    args.joint_hidden = merge(c.joint_hidden, f, "joint-hidden", args.joint_hidden)?;
    args.stage2_update_all =
        c.stage2_update_all || f.get("stage2-update-all")?.unwrap_or(false);
    args.seed = merge(c.seed, f, "seed", args.seed)?;
    println!("stage {} training, fastemit lambda {}", args.stage, args.fastemit_lambda);
    let s = train_cmd(&args)?;
    println!(
        "{} steps; loss {:.4} -> {:.4}; checkpoint {}",
        s.steps,
        s.initial_loss,
        s.final_loss,
        args.ckpt_out.display()
    );
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum SegmenterChoice {
    Fixed,
    Vad,
    E2e,
}

impl From<SegmenterChoice> for SegmenterKind {
    fn from(c: SegmenterChoice) -> SegmenterKind {
        match c {
            SegmenterChoice::Fixed => SegmenterKind::Fixed,
            SegmenterChoice::Vad => SegmenterKind::Vad,
            SegmenterChoice::E2e => SegmenterKind::E2e,
        }
    }
}

#[derive(Args)]
struct DecodeCli {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    segmenter: Option<SegmenterChoice>,
    #[arg(long)]
    interval_s: Option<f64>,
    #[arg(long)]
    vad_silence_s: Option<f64>,
    #[arg(long)]
    eos_threshold: Option<f64>,
    #[arg(long)]
    max_segment_s: Option<f64>,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    prune_threshold: Option<f64>,
    #[arg(long)]
    max_expansion_depth: Option<usize>,
    #[arg(long)]
    expansion_prune: Option<f64>,
    /// Drop frames during long silences (VAD-controlled).
    #[arg(long)]
    frame_filter: bool,
    #[arg(long)]
    margin_s: Option<f64>,
    #[arg(long)]
    decode_out: Option<PathBuf>,
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long)]
    per_utt_out: Option<PathBuf>,
}

fn build_decode_args(c: DecodeCli, f: &FileCfg, jobs: Option<usize>) -> Result<DecodeArgs> {
    let kind: SegmenterKind = match c.segmenter {
        Some(ch) => ch.into(),
        None => match f.get::<String>("segmenter")?.as_deref() {
            Some("fixed") => SegmenterKind::Fixed,
            Some("vad") => SegmenterKind::Vad,
            Some("e2e") => SegmenterKind::E2e,
            Some(other) => bail!("unknown segmenter {other:?} in config"),
            None => bail!("missing required flag --segmenter"),
        },
    };
    let mut args = DecodeArgs::new(require(c.ckpt, f, "ckpt")?, require(c.corpus, f, "corpus")?, kind);
    args.interval_s = merge(c.interval_s, f, "interval-s", args.interval_s)?;
    args.vad_silence_s = merge(c.vad_silence_s, f, "vad-silence-s", args.vad_silence_s)?;
    args.eos_threshold = merge(c.eos_threshold, f, "eos-threshold", args.eos_threshold)?;
    args.max_segment_s = merge(c.max_segment_s, f, "max-segment-s", args.max_segment_s)?;
    args.beam_size = merge(c.beam_size, f, "beam-size", args.beam_size)?;
    args.prune_threshold = merge(c.prune_threshold, f, "prune-threshold", args.prune_threshold)?;
    args.max_expansion_depth =
        merge(c.max_expansion_depth, f, "max-expansion-depth", args.max_expansion_depth)?;
    args.expansion_prune = merge(c.expansion_prune, f, "expansion-prune", args.expansion_prune)?;
    args.frame_filter = c.frame_filter || f.get("frame-filter")?.unwrap_or(false);
    args.margin_s = merge(c.margin_s, f, "margin-s", args.margin_s)?;
    args.decode_out = c.decode_out.or(f.get("decode-out")?);
    args.report_out = c.report_out.or(f.get("report-out")?);
    args.per_utt_out = c.per_utt_out.or(f.get("per-utt-out")?);
    args.jobs = jobs;
    Ok(args)
}

fn print_report(r: &segstream::metrics::RunReport) {
    println!(
        "{} [{}]: WER {:.2}%, EOS50 {}, EOS75 {}, segments {:.1}, states {:.0}, excluded {}",
        r.segmenter,
        r.config,
        r.wer * 100.0,
        r.eos50_ms.map(|x| format!("{x:.0} ms")).unwrap_or_else(|| "-".into()),
        r.eos75_ms.map(|x| format!("{x:.0} ms")).unwrap_or_else(|| "-".into()),
        r.avg_segments,
        r.avg_states,
        r.excluded_latencies
    );
}

fn run_decode(c: DecodeCli, f: &FileCfg, jobs: Option<usize>) -> Result<()> {
    let args = build_decode_args(c, f, jobs)?;
    let report = decode_cmd(&args)?;
    print_report(&report);
    Ok(())
}

#[derive(Args)]
struct SweepCli {
    #[command(flatten)]
    decode: DecodeCli,
    /// Which parameter to sweep.
    #[arg(long, value_parser = ["eos-threshold", "margin"])]
    param: Option<String>,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    #[arg(long)]
    markdown_out: Option<PathBuf>,
}

fn run_sweep(c: SweepCli, f: &FileCfg, jobs: Option<usize>) -> Result<()> {
    let param_s: String = require(c.param, f, "param")?;
    let param = SweepParam::parse(&param_s)
        .with_context(|| format!("unknown sweep param {param_s:?}"))?;
    let values: Vec<f64> = require(c.values, f, "values")?;
    let mut base = build_decode_args(c.decode, f, jobs)?;
    let report_out = base.report_out.take();
    let args = SweepArgs {
        base,
        param,
        values,
        report_out,
        markdown_out: c.markdown_out.or(f.get("markdown-out")?),
    };
    let reports = sweep_cmd(&args)?;
    for r in &reports {
        print_report(r);
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let file = FileCfg::load(cli.config.as_ref())?;
    match cli.cmd {
        Cmd::GenCorpus(c) => run_gen_corpus(c, &file),
        Cmd::Annotate(c) => run_annotate(c, &file),
        Cmd::Train(c) => run_train(c, &file),
        Cmd::Decode(c) => run_decode(c, &file, cli.jobs),
        Cmd::Sweep(c) => run_sweep(c, &file, cli.jobs),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
