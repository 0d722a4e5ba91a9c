//! Automatic `<eos>` annotation of training transcripts.
//!
//! A boundary marker is inserted after a word when a long silence follows
//! it, unless the word is lengthened or a filler (hesitation cues), and is
//! always appended at the end of the utterance.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AlignedUtterance, Corpus, WordAlignment};

/// The literal end-of-segment marker used in annotated transcripts.
pub const EOS_MARKER: &str = "<eos>";

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("utterance {0} has no words")]
    EmptyUtterance(String),
    #[error("unknown phoneme symbol {0:?}")]
    UnknownPhoneme(String),
    #[error("{path}:{line}: malformed annotation record: {msg}")]
    Malformed { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-symbol duration statistics over a corpus.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhonemeStats {
    stats: BTreeMap<String, SymbolStats>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolStats {
    pub mean_s: f64,
    pub sd_s: f64,
    pub count: usize,
}

impl PhonemeStats {
    pub fn get(&self, sym: &str) -> Option<&SymbolStats> {
        self.stats.get(sym)
    }

    pub fn insert(&mut self, sym: String, mean_s: f64, sd_s: f64, count: usize) {
        self.stats.insert(sym, SymbolStats { mean_s, sd_s, count });
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationConfig {
    /// Rule 1: a silence at least this long marks a segment boundary.
    pub silence_threshold_s: f64,
    /// Exception 1: a phoneme whose duration z-score strictly exceeds this
    /// marks the word as lengthened.
    pub lengthened_z: f64,
    /// Exception 2: words treated as fillers.
    pub filler_lexicon: BTreeSet<String>,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        AnnotationConfig {
            silence_threshold_s: 1.2,
            lengthened_z: 5.0,
            filler_lexicon: crate::corpus::DEFAULT_FILLERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Word tokens interleaved with `<eos>` markers; always ends with one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTranscript {
    pub id: String,
    pub tokens: Vec<String>,
}

impl AnnotatedTranscript {
    /// The transcript with `<eos>` markers removed.
    pub fn words(&self) -> Vec<String> {
        self.tokens.iter().filter(|t| *t != EOS_MARKER).cloned().collect()
    }

    pub fn eos_count(&self) -> usize {
        self.tokens.iter().filter(|t| *t == EOS_MARKER).count()
    }
}

/// Population mean and sd of every phoneme symbol in the corpus.
pub fn compute_phoneme_stats(corpus: &Corpus) -> Result<PhonemeStats, AnnotationError> {
    if corpus.utterances.is_empty() {
        return Err(AnnotationError::EmptyCorpus);
    }
    let mut acc: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for utt in &corpus.utterances {
        for w in &utt.words {
            for p in &w.phonemes {
                let e = acc.entry(p.sym.as_str()).or_insert((0.0, 0.0, 0));
                e.0 += p.dur_s;
                e.1 += p.dur_s * p.dur_s;
                e.2 += 1;
            }
        }
    }
    if acc.is_empty() {
        return Err(AnnotationError::EmptyCorpus);
    }
    let mut stats = PhonemeStats::default();
    for (sym, (sum, sumsq, count)) in acc {
        let n = count as f64;
        let mean = sum / n;
        let var = (sumsq / n - mean * mean).max(0.0);
        stats.insert(sym.to_string(), mean, var.sqrt(), count);
    }
    Ok(stats)
}

/// True iff any phoneme of the word has duration z-score strictly above the
/// configured threshold. Symbols with zero sd never count as lengthened.
pub fn is_lengthened(
    word: &WordAlignment,
    stats: &PhonemeStats,
    cfg: &AnnotationConfig,
) -> Result<bool, AnnotationError> {
    for p in &word.phonemes {
        let s = stats
            .get(&p.sym)
            .ok_or_else(|| AnnotationError::UnknownPhoneme(p.sym.clone()))?;
        if s.sd_s > 0.0 && (p.dur_s - s.mean_s) / s.sd_s > cfg.lengthened_z {
            return Ok(true);
        }
    }
    Ok(false)
}

/// True iff the word is in the filler lexicon or was flagged by the
/// generator.
pub fn is_filler(word: &WordAlignment, cfg: &AnnotationConfig) -> bool {
    word.is_filler || cfg.filler_lexicon.contains(&word.text)
}

/// Rule/exception tallies for one annotation pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnnotationCounts {
    /// `<eos>` inserted after a long inter-word silence.
    pub rule1_inserted: usize,
    /// `<eos>` appended at the end of the utterance.
    pub rule2_inserted: usize,
    /// Long silences skipped because the preceding word was lengthened.
    pub suppressed_lengthened: usize,
    /// Long silences skipped because the preceding word was a filler.
    pub suppressed_filler: usize,
}

impl AnnotationCounts {
    pub fn merge(&mut self, other: &AnnotationCounts) {
        self.rule1_inserted += other.rule1_inserted;
        self.rule2_inserted += other.rule2_inserted;
        self.suppressed_lengthened += other.suppressed_lengthened;
        self.suppressed_filler += other.suppressed_filler;
    }
}

pub fn annotate(
    utt: &AlignedUtterance,
    stats: &PhonemeStats,
    cfg: &AnnotationConfig,
) -> Result<AnnotatedTranscript, AnnotationError> {
    annotate_with_counts(utt, stats, cfg).map(|(t, _)| t)
}

pub fn annotate_with_counts(
    utt: &AlignedUtterance,
    stats: &PhonemeStats,
    cfg: &AnnotationConfig,
) -> Result<(AnnotatedTranscript, AnnotationCounts), AnnotationError> {
    if utt.words.is_empty() {
        return Err(AnnotationError::EmptyUtterance(utt.id.clone()));
    }
    let mut tokens = Vec::with_capacity(utt.words.len() + 4);
    let mut counts = AnnotationCounts::default();
    for (k, w) in utt.words.iter().enumerate() {
        tokens.push(w.text.clone());
        let Some(next) = utt.words.get(k + 1) else { break };
        let gap = next.start_s - w.end_s;
        if gap >= cfg.silence_threshold_s {
            if is_lengthened(w, stats, cfg)? {
                counts.suppressed_lengthened += 1;
            } else if is_filler(w, cfg) {
                counts.suppressed_filler += 1;
            } else {
                tokens.push(EOS_MARKER.to_string());
                counts.rule1_inserted += 1;
            }
        }
    }
    // Rule 2: the end of the utterance is always a boundary.
    tokens.push(EOS_MARKER.to_string());
    counts.rule2_inserted += 1;
    Ok((AnnotatedTranscript { id: utt.id.clone(), tokens }, counts))
}

pub fn save_annotations(
    path: &Path,
    transcripts: &[AnnotatedTranscript],
) -> Result<(), AnnotationError> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in transcripts {
        serde_json::to_writer(&mut w, t).map_err(|e| AnnotationError::Io(std::io::Error::other(e)))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotatedTranscript>, AnnotationError> {
    let reader = BufReader::new(File::open(path)?);
    let path_s = path.display().to_string();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: AnnotatedTranscript =
            serde_json::from_str(&line).map_err(|e| AnnotationError::Malformed {
                path: path_s.clone(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        out.push(t);
    }
    Ok(out)
}
