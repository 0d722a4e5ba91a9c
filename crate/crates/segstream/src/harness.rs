//! Command implementations behind the CLI: corpus generation, annotation,
//! two-stage training, decoding with any segmenter, and parameter sweeps.
//! `main.rs` only parses flags and forwards here, so tests can drive the
//! exact same code paths.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use crate::annotation::{
    annotate_with_counts, compute_phoneme_stats, load_annotations, save_annotations,
    AnnotatedTranscript, AnnotationConfig, AnnotationCounts,
};
use crate::corpus::{
    generate_corpus, load_corpus, save_corpus, synthesize_features, Corpus, CorpusConfig,
};
use crate::decoder::{decode_utterance, DecodeConfig, DecodeOutput};
use crate::metrics::{
    aggregate, markdown_table, nearest_rank, write_per_utterance_csv, write_report_csv, RunReport,
};
use crate::model::{
    load_checkpoint, save_checkpoint, train, ModelConfig, Stage, TrainOutcome,
};
use crate::segmenter::{
    vad_flags, Segmenter, SegmenterConfig, SegmenterKind, DEFAULT_VAD_ENERGY_THRESHOLD,
};

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .context("building worker pool")?)
}

/// Trim-trailing-zero float for labels: 10.0 -> "10", 0.2 -> "0.2".
fn fmt_num(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------------------
// gen-corpus

#[derive(Debug, Clone)]
pub struct GenCorpusArgs {
    pub out: PathBuf,
    pub num_utts: usize,
    pub seed: u64,
    pub min_dur_s: f64,
    pub max_dur_s: f64,
    pub hesitation_prob: Option<f64>,
    pub noise_sigma: Option<f64>,
}

impl GenCorpusArgs {
    pub fn new(out: PathBuf, num_utts: usize, seed: u64) -> GenCorpusArgs {
        let d = CorpusConfig::default();
        GenCorpusArgs {
            out,
            num_utts,
            seed,
            min_dur_s: d.duration_s.0,
            max_dur_s: d.duration_s.1,
            hesitation_prob: None,
            noise_sigma: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenCorpusSummary {
    pub utterances: usize,
    pub total_hours: f64,
    pub dur_p50_s: f64,
    pub dur_p75_s: f64,
}

pub fn gen_corpus(args: &GenCorpusArgs) -> Result<GenCorpusSummary> {
    let mut config = CorpusConfig { duration_s: (args.min_dur_s, args.max_dur_s), ..CorpusConfig::default() };
    if let Some(p) = args.hesitation_prob {
        config.hesitation_prob = p;
    }
    if let Some(s) = args.noise_sigma {
        config.noise_sigma = s;
    }
    let corpus = generate_corpus(&config, args.num_utts, args.seed)?;
    save_corpus(&args.out, &corpus).with_context(|| format!("writing {}", args.out.display()))?;

    let mut durations: Vec<f64> = corpus.utterances.iter().map(|u| u.duration_s).collect();
    durations.sort_by(|a, b| a.partial_cmp(b).expect("finite durations"));
    let total_s: f64 = durations.iter().sum();
    Ok(GenCorpusSummary {
        utterances: corpus.utterances.len(),
        total_hours: total_s / 3600.0,
        dur_p50_s: nearest_rank(&durations, 0.50),
        dur_p75_s: nearest_rank(&durations, 0.75),
    })
}

// ---------------------------------------------------------------------------
// annotate

#[derive(Debug, Clone)]
pub struct AnnotateArgs {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub silence_threshold_s: f64,
    pub lengthened_z: f64,
    pub filler_lexicon: Option<Vec<String>>,
}

impl AnnotateArgs {
    pub fn new(corpus: PathBuf, out: PathBuf) -> AnnotateArgs {
        let d = AnnotationConfig::default();
        AnnotateArgs {
            corpus,
            out,
            silence_threshold_s: d.silence_threshold_s,
            lengthened_z: d.lengthened_z,
            filler_lexicon: None,
        }
    }
}

pub fn annotate_cmd(args: &AnnotateArgs) -> Result<AnnotationCounts> {
    let corpus = load_corpus(&args.corpus).with_context(|| format!("reading {}", args.corpus.display()))?;
    let mut acfg = AnnotationConfig {
        silence_threshold_s: args.silence_threshold_s,
        lengthened_z: args.lengthened_z,
        ..AnnotationConfig::default()
    };
    acfg.filler_lexicon = match &args.filler_lexicon {
        Some(words) => words.iter().cloned().collect(),
        None => corpus.config.filler_lexicon.iter().cloned().collect(),
    };
    let stats = compute_phoneme_stats(&corpus)?;
    let mut transcripts = Vec::with_capacity(corpus.utterances.len());
    let mut totals = AnnotationCounts::default();
    for utt in &corpus.utterances {
        let (t, counts) = annotate_with_counts(utt, &stats, &acfg)?;
        totals.merge(&counts);
        transcripts.push(t);
    }
    save_annotations(&args.out, &transcripts)
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(totals)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub stage: u8,
    pub corpus: PathBuf,
    pub annotations: Option<PathBuf>,
    pub ckpt_in: Option<PathBuf>,
    pub ckpt_out: PathBuf,
    pub loss_csv: Option<PathBuf>,
    pub fastemit_lambda: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub window_words: usize,
    pub enc_hidden: usize,
    pub embed_dim: usize,
    pub joint_hidden: usize,
    pub stage2_update_all: bool,
    pub seed: u64,
}

impl TrainArgs {
    pub fn new(stage: u8, corpus: PathBuf, ckpt_out: PathBuf) -> TrainArgs {
        let d = ModelConfig::default();
        TrainArgs {
            stage,
            corpus,
            annotations: None,
            ckpt_in: None,
            ckpt_out,
            loss_csv: None,
            fastemit_lambda: d.fastemit_lambda,
            learning_rate: d.learning_rate,
            steps: d.steps,
            batch_size: d.batch_size,
            window_words: d.window_words,
            enc_hidden: d.enc_hidden,
            embed_dim: d.embed_dim,
            joint_hidden: d.joint_hidden,
            stage2_update_all: d.stage2_update_all,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub fn train_cmd(args: &TrainArgs) -> Result<TrainSummary> {
    let stage = Stage::from_number(args.stage)
        .with_context(|| format!("stage must be 1 or 2, got {}", args.stage))?;
    let corpus = load_corpus(&args.corpus).with_context(|| format!("reading {}", args.corpus.display()))?;
    let annotations: Vec<AnnotatedTranscript> = match &args.annotations {
        Some(path) => load_annotations(path).with_context(|| format!("reading {}", path.display()))?,
        None => Vec::new(),
    };
    if stage == Stage::EosJoint && annotations.is_empty() {
        bail!("stage 2 requires --annotations");
    }
    let init = match (&args.ckpt_in, stage) {
        (Some(stem), _) => Some(load_checkpoint(stem)?),
        (None, Stage::EosJoint) => bail!("stage 2 requires --ckpt-in"),
        (None, Stage::Wordpiece) => None,
    };
    let config = ModelConfig {
        vocab_size: corpus.config.model_vocab().len(),
        feat_dim: corpus.config.feature_dim + 1,
        enc_hidden: args.enc_hidden,
        embed_dim: args.embed_dim,
        joint_hidden: args.joint_hidden,
        fastemit_lambda: args.fastemit_lambda,
        learning_rate: args.learning_rate,
        steps: args.steps,
        batch_size: args.batch_size,
        window_words: args.window_words,
        stage2_update_all: args.stage2_update_all,
        seed: args.seed,
        ..ModelConfig::default()
    };
    let TrainOutcome { params, loss_log } = train(&config, &corpus, &annotations, stage, init)?;
    save_checkpoint(&params, &args.ckpt_out)
        .with_context(|| format!("writing checkpoint {}", args.ckpt_out.display()))?;
    if let Some(csv) = &args.loss_csv {
        let mut w = BufWriter::new(File::create(csv)?);
        writeln!(w, "step,loss")?;
        for (step, loss) in &loss_log {
            writeln!(w, "{step},{loss:.6}")?;
        }
        w.flush()?;
    }
    Ok(TrainSummary {
        steps: loss_log.len(),
        initial_loss: loss_log.first().map(|x| x.1).unwrap_or(f64::NAN),
        final_loss: loss_log.last().map(|x| x.1).unwrap_or(f64::NAN),
    })
}

// ---------------------------------------------------------------------------
// decode

#[derive(Debug, Clone)]
pub struct DecodeArgs {
    pub ckpt: PathBuf,
    pub corpus: PathBuf,
    pub segmenter: SegmenterKind,
    pub interval_s: f64,
    pub vad_silence_s: f64,
    pub eos_threshold: f64,
    pub max_segment_s: f64,
    pub beam_size: usize,
    pub prune_threshold: f64,
    pub max_expansion_depth: usize,
    pub expansion_prune: f64,
    pub frame_filter: bool,
    pub margin_s: f64,
    pub decode_out: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
    pub per_utt_out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl DecodeArgs {
    pub fn new(ckpt: PathBuf, corpus: PathBuf, segmenter: SegmenterKind) -> DecodeArgs {
        let s = SegmenterConfig::new(segmenter);
        let d = DecodeConfig::default();
        DecodeArgs {
            ckpt,
            corpus,
            segmenter,
            interval_s: s.interval_s,
            vad_silence_s: s.vad_silence_s,
            eos_threshold: s.eos_threshold,
            max_segment_s: s.max_segment_s,
            beam_size: d.beam_size,
            prune_threshold: d.prune_threshold,
            max_expansion_depth: d.max_expansion_depth,
            expansion_prune: d.expansion_prune,
            frame_filter: d.frame_filter_enabled,
            margin_s: d.filter_margin_s,
            decode_out: None,
            report_out: None,
            per_utt_out: None,
            jobs: None,
        }
    }

    fn segmenter_config(&self) -> SegmenterConfig {
        SegmenterConfig {
            kind: self.segmenter,
            interval_s: self.interval_s,
            vad_silence_s: self.vad_silence_s,
            eos_threshold: self.eos_threshold,
            max_segment_s: self.max_segment_s,
        }
    }

    fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            beam_size: self.beam_size,
            prune_threshold: self.prune_threshold,
            max_expansion_depth: self.max_expansion_depth,
            expansion_prune: self.expansion_prune,
            frame_filter_enabled: self.frame_filter,
            filter_base_s: DecodeConfig::default().filter_base_s,
            filter_margin_s: self.margin_s,
        }
    }

    /// Results-table run label, e.g. `Fixed-10s`, `VAD`, `E2E-2`, `E2E-0s`.
    pub fn label(&self) -> String {
        let base = match self.segmenter {
            SegmenterKind::Fixed => format!("Fixed-{}s", fmt_num(self.interval_s)),
            SegmenterKind::Vad => "VAD".to_string(),
            SegmenterKind::E2e => format!("E2E-{}", fmt_num(self.eos_threshold)),
        };
        if self.frame_filter {
            format!("{base}-{}s", fmt_num(self.margin_s))
        } else {
            base
        }
    }

    fn config_desc(&self) -> String {
        let seg = match self.segmenter {
            SegmenterKind::Fixed => format!("interval={}", fmt_num(self.interval_s)),
            SegmenterKind::Vad => format!("vad_silence={}", fmt_num(self.vad_silence_s)),
            SegmenterKind::E2e => format!("tau={}", fmt_num(self.eos_threshold)),
        };
        let filter = if self.frame_filter {
            format!("filter_margin={}", fmt_num(self.margin_s))
        } else {
            "filter=off".to_string()
        };
        format!("{seg};beam={};{filter}", self.beam_size)
    }
}

/// Decode every utterance of the corpus and aggregate the run report.
/// Utterances decode in parallel and merge in corpus order, so the output
/// is independent of the worker count.
pub fn decode_cmd(args: &DecodeArgs) -> Result<RunReport> {
    let params = load_checkpoint(&args.ckpt)?;
    let corpus = load_corpus(&args.corpus).with_context(|| format!("reading {}", args.corpus.display()))?;
    if params.vocab != corpus.config.model_vocab() {
        bail!("vocabulary mismatch between checkpoint and corpus");
    }
    let outputs = run_decodes(&params, &corpus, args)?;

    if let Some(path) = &args.decode_out {
        write_decode_jsonl(path, &outputs)?;
    }
    let report = aggregate(&args.label(), &args.config_desc(), &outputs, &corpus)?;
    if let Some(path) = &args.report_out {
        write_report_csv(path, std::slice::from_ref(&report))?;
    }
    if let Some(path) = &args.per_utt_out {
        write_per_utterance_csv(path, &report)?;
    }
    Ok(report)
}

fn run_decodes(
    params: &crate::model::ModelParams,
    corpus: &Corpus,
    args: &DecodeArgs,
) -> Result<Vec<DecodeOutput>> {
    let seg_cfg = args.segmenter_config();
    let dec_cfg = args.decode_config();
    let step = corpus.config.frame_step_s;
    let outputs: Result<Vec<DecodeOutput>, _> = pool(args.jobs)?.install(|| {
        corpus
            .utterances
            .par_iter()
            .map(|utt| {
                let frames = synthesize_features(utt, &corpus.config);
                let vad = vad_flags(&frames, DEFAULT_VAD_ENERGY_THRESHOLD);
                let mut segmenter = Segmenter::new(seg_cfg.clone(), step)?;
                let (segments, stats) =
                    decode_utterance(params, &frames, &vad, &mut segmenter, &dec_cfg)
                        .map_err(|e| anyhow::anyhow!("decoding {}: {e}", utt.id))?;
                Ok::<DecodeOutput, anyhow::Error>(DecodeOutput {
                    id: utt.id.clone(),
                    segments,
                    state_count: stats.state_count,
                    eos_state_count: stats.eos_state_count,
                })
            })
            .collect()
    });
    outputs
}

pub fn write_decode_jsonl(path: &Path, outputs: &[DecodeOutput]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for out in outputs {
        serde_json::to_writer(&mut w, out)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_decode_jsonl(path: &Path) -> Result<Vec<DecodeOutput>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}:{}: bad decode record", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    EosThreshold,
    Margin,
}

impl SweepParam {
    pub fn parse(s: &str) -> Option<SweepParam> {
        match s {
            "eos-threshold" => Some(SweepParam::EosThreshold),
            "margin" => Some(SweepParam::Margin),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub base: DecodeArgs,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub report_out: Option<PathBuf>,
    pub markdown_out: Option<PathBuf>,
}

/// One decode per value; a single report CSV with one row per value.
pub fn sweep_cmd(args: &SweepArgs) -> Result<Vec<RunReport>> {
    if args.values.is_empty() {
        bail!("sweep needs a non-empty value list");
    }
    let mut reports = Vec::with_capacity(args.values.len());
    for &v in &args.values {
        let mut one = args.base.clone();
        one.decode_out = None;
        one.report_out = None;
        one.per_utt_out = None;
        match args.param {
            SweepParam::EosThreshold => {
                one.eos_threshold = v;
            }
            SweepParam::Margin => {
                one.margin_s = v;
                one.frame_filter = true;
            }
        }
        reports.push(decode_cmd(&one)?);
    }
    if let Some(path) = &args.report_out {
        write_report_csv(path, &reports)?;
    }
    if let Some(path) = &args.markdown_out {
        std::fs::write(path, markdown_table(&reports))?;
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::REPORT_CSV_HEADER;

    fn dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    /// Tiny end-to-end pipeline shared by the harness tests.
    fn quick_pipeline(td: &Path) -> (PathBuf, PathBuf, PathBuf) {
        let corpus = td.join("corpus.jsonl");
        gen_corpus(&GenCorpusArgs {
            min_dur_s: 2.0,
            max_dur_s: 4.0,
            ..GenCorpusArgs::new(corpus.clone(), 4, 9)
        })
        .unwrap();
        let ann = td.join("ann.jsonl");
        annotate_cmd(&AnnotateArgs::new(corpus.clone(), ann.clone())).unwrap();
        let ckpt1 = td.join("stage1");
        let mut targs = TrainArgs::new(1, corpus.clone(), ckpt1.clone());
        targs.steps = 3;
        targs.batch_size = 2;
        targs.enc_hidden = 8;
        targs.embed_dim = 4;
        targs.joint_hidden = 8;
        train_cmd(&targs).unwrap();
        let ckpt2 = td.join("stage2");
        let mut targs2 = targs.clone();
        targs2.stage = 2;
        targs2.annotations = Some(ann.clone());
        targs2.ckpt_in = Some(ckpt1);
        targs2.ckpt_out = ckpt2.clone();
        train_cmd(&targs2).unwrap();
        (corpus, ann, ckpt2)
    }

    #[test]
    fn gen_corpus_summary_uses_nearest_rank_percentiles() {
        let td = dir();
        let out = td.path().join("c.jsonl");
        let s = gen_corpus(&GenCorpusArgs {
            min_dur_s: 2.0,
            max_dur_s: 4.0,
            ..GenCorpusArgs::new(out.clone(), 7, 3)
        })
        .unwrap();
        let corpus = load_corpus(&out).unwrap();
        let mut durs: Vec<f64> = corpus.utterances.iter().map(|u| u.duration_s).collect();
        durs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(s.utterances, 7);
        assert_eq!(s.dur_p50_s, durs[3]); // ceil(0.5*7) = 4th
        assert_eq!(s.dur_p75_s, durs[5]); // ceil(0.75*7) = 6th
        let total: f64 = durs.iter().sum();
        assert!((s.total_hours - total / 3600.0).abs() < 1e-12);
    }

    #[test]
    fn gen_corpus_rejects_zero_utterances() {
        let td = dir();
        let args = GenCorpusArgs::new(td.path().join("c.jsonl"), 0, 1);
        assert!(gen_corpus(&args).is_err());
        assert!(!td.path().join("c.jsonl").exists());
    }

    #[test]
    fn gen_corpus_is_byte_deterministic() {
        let td = dir();
        let a = td.path().join("a.jsonl");
        let b = td.path().join("b.jsonl");
        let mk = |p: &Path| GenCorpusArgs {
            min_dur_s: 2.0,
            max_dur_s: 4.0,
            ..GenCorpusArgs::new(p.to_path_buf(), 5, 11)
        };
        gen_corpus(&mk(&a)).unwrap();
        gen_corpus(&mk(&b)).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn huge_silence_threshold_leaves_only_final_eos() {
        let td = dir();
        let corpus = td.path().join("c.jsonl");
        gen_corpus(&GenCorpusArgs {
            min_dur_s: 4.0,
            max_dur_s: 8.0,
            ..GenCorpusArgs::new(corpus.clone(), 5, 13)
        })
        .unwrap();
        let out = td.path().join("ann.jsonl");
        let counts = annotate_cmd(&AnnotateArgs {
            silence_threshold_s: 1e9,
            ..AnnotateArgs::new(corpus, out.clone())
        })
        .unwrap();
        assert_eq!(counts.rule1_inserted, 0);
        assert_eq!(counts.rule2_inserted, 5);
        for t in load_annotations(&out).unwrap() {
            assert_eq!(t.eos_count(), 1);
            assert_eq!(t.tokens.last().unwrap(), "<eos>");
        }
    }

    #[test]
    fn annotation_counters_match_token_diff() {
        let td = dir();
        let corpus_path = td.path().join("c.jsonl");
        gen_corpus(&GenCorpusArgs {
            min_dur_s: 6.0,
            max_dur_s: 12.0,
            ..GenCorpusArgs::new(corpus_path.clone(), 20, 17)
        })
        .unwrap();
        let out = td.path().join("ann.jsonl");
        let counts = annotate_cmd(&AnnotateArgs::new(corpus_path.clone(), out.clone())).unwrap();
        let corpus = load_corpus(&corpus_path).unwrap();
        let anns = load_annotations(&out).unwrap();
        let words: usize = corpus.utterances.iter().map(|u| u.words.len()).sum();
        let tokens: usize = anns.iter().map(|a| a.tokens.len()).sum();
        assert_eq!(tokens - words, counts.rule1_inserted + counts.rule2_inserted);
        assert_eq!(counts.rule2_inserted, corpus.utterances.len());
        // The generator plants hesitations, so both exceptions fire.
        assert!(counts.suppressed_filler > 0);
        assert!(counts.suppressed_lengthened > 0);
    }

    #[test]
    fn pipeline_decode_and_sweep_share_results() {
        let td = dir();
        let (corpus, _ann, ckpt) = quick_pipeline(td.path());

        let mut dargs = DecodeArgs::new(ckpt.clone(), corpus.clone(), SegmenterKind::E2e);
        dargs.beam_size = 2;
        let report_csv = td.path().join("report.csv");
        dargs.report_out = Some(report_csv.clone());
        let decode_jsonl = td.path().join("decode.jsonl");
        dargs.decode_out = Some(decode_jsonl.clone());
        let report = decode_cmd(&dargs).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.segmenter, "E2E-2");

        // Output files exist and parse.
        let text = std::fs::read_to_string(&report_csv).unwrap();
        assert!(text.starts_with(REPORT_CSV_HEADER));
        let outputs = read_decode_jsonl(&decode_jsonl).unwrap();
        assert_eq!(outputs.len(), 4);
        assert!(outputs.iter().all(|o| !o.segments.is_empty()));

        // sweep over a single value equals decode with that value.
        let sweep = sweep_cmd(&SweepArgs {
            base: dargs.clone(),
            param: SweepParam::EosThreshold,
            values: vec![2.0],
            report_out: None,
            markdown_out: None,
        })
        .unwrap();
        assert_eq!(sweep.len(), 1);
        assert_eq!(sweep[0], report);

        // Decoding is independent of the worker count.
        let mut serial = dargs.clone();
        serial.jobs = Some(1);
        serial.report_out = None;
        serial.decode_out = None;
        let report_serial = decode_cmd(&serial).unwrap();
        assert_eq!(report_serial.rows, report.rows);
    }

    #[test]
    fn sweep_rejects_empty_values() {
        let td = dir();
        let (corpus, _ann, ckpt) = quick_pipeline(td.path());
        let args = SweepArgs {
            base: DecodeArgs::new(ckpt, corpus, SegmenterKind::E2e),
            param: SweepParam::Margin,
            values: vec![],
            report_out: None,
            markdown_out: None,
        };
        assert!(sweep_cmd(&args).is_err());
    }

    #[test]
    fn decode_rejects_vocab_mismatch() {
        let td = dir();
        let (_corpus, _ann, ckpt) = quick_pipeline(td.path());
        // A corpus with a different filler lexicon changes the vocabulary.
        let other = td.path().join("other.jsonl");
        let mut cfg = CorpusConfig { duration_s: (2.0, 4.0), ..CorpusConfig::default() };
        cfg.filler_lexicon.push("er".into());
        let corpus2 = generate_corpus(&cfg, 2, 1).unwrap();
        save_corpus(&other, &corpus2).unwrap();
        let args = DecodeArgs::new(ckpt, other, SegmenterKind::Vad);
        let err = decode_cmd(&args).unwrap_err();
        assert!(err.to_string().contains("vocabulary mismatch"));
    }
}
