//! Evaluation metrics: WER, end-of-segment latency percentiles with
//! anomaly exclusion, run aggregation, and per-length WER-relative curves.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotation::EOS_MARKER;
use crate::corpus::Corpus;
use crate::decoder::DecodeOutput;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("utterance id mismatch: {0}")]
    IdMismatch(String),
    #[error("reports cover different utterance sets")]
    ReportMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Edit-distance error counts under unit costs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WerCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl WerCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WerResult {
    pub counts: WerCounts,
    /// `(S + I + D) / |ref|`; absent when the reference is empty.
    pub rate: Option<f64>,
}

fn strip_eos<S: AsRef<str>>(tokens: &[S]) -> Vec<&str> {
    tokens.iter().map(|t| t.as_ref()).filter(|t| *t != EOS_MARKER).collect()
}

/// Minimal edit-distance alignment between reference and hypothesis, with
/// `<eos>` markers stripped from both sides first.
pub fn wer<S: AsRef<str>, T: AsRef<str>>(ref_tokens: &[S], hyp_tokens: &[T]) -> WerResult {
    let r = strip_eos(ref_tokens);
    let h = strip_eos(hyp_tokens);
    let (n, m) = (r.len(), h.len());

    // dist[i][j]: edits aligning r[..i] with h[..j].
    let mut dist = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dist.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dist[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dist[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]);
            let del = dist[i - 1][j] + 1;
            let ins = dist[i][j - 1] + 1;
            dist[i][j] = sub.min(del).min(ins);
        }
    }

    // Backtrace with a fixed preference (match/sub, then deletion, then
    // insertion) for a deterministic count split.
    let mut counts = WerCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let sub_cost = usize::from(r[i - 1] != h[j - 1]);
            if dist[i][j] == dist[i - 1][j - 1] + sub_cost {
                counts.substitutions += sub_cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dist[i][j] == dist[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }

    let rate = if n == 0 { None } else { Some(counts.errors() as f64 / n as f64) };
    WerResult { counts, rate }
}

/// End-of-segment latency of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub id: String,
    /// Last boundary time minus the end of the last ground-truth word; may
    /// be negative.
    pub latency_s: f64,
}

/// Latencies outside `[-0.5 s, 2 s]` are anomalies and leave the
/// percentile computation.
pub const LATENCY_MIN_S: f64 = -0.5;
pub const LATENCY_MAX_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EosLatency {
    pub eos50_ms: Option<f64>,
    pub eos75_ms: Option<f64>,
    pub excluded: usize,
}

/// Nearest-rank percentile: the `ceil(p * n)`-th order statistic.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

pub fn eos_latency(samples: &[LatencySample]) -> EosLatency {
    let mut retained: Vec<f64> = samples
        .iter()
        .map(|s| s.latency_s)
        .filter(|&x| (LATENCY_MIN_S..=LATENCY_MAX_S).contains(&x))
        .collect();
    let excluded = samples.len() - retained.len();
    if retained.is_empty() {
        return EosLatency { eos50_ms: None, eos75_ms: None, excluded };
    }
    retained.sort_by(|a, b| a.partial_cmp(b).expect("finite latencies"));
    EosLatency {
        eos50_ms: Some(nearest_rank(&retained, 0.50) * 1000.0),
        eos75_ms: Some(nearest_rank(&retained, 0.75) * 1000.0),
        excluded,
    }
}

/// Per-utterance evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRow {
    pub id: String,
    pub ref_words: usize,
    pub errors: usize,
    pub wer: Option<f64>,
    pub latency_s: f64,
    pub segments: usize,
    pub state_count: u64,
    pub eos_state_count: u64,
}

/// One segmenter run over a corpus, in the shape of the results tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub segmenter: String,
    pub config: String,
    /// Corpus-level WER: total errors over total reference words.
    pub wer: f64,
    pub eos50_ms: Option<f64>,
    pub eos75_ms: Option<f64>,
    pub avg_segments: f64,
    pub avg_states: f64,
    pub excluded_latencies: usize,
    pub rows: Vec<UtteranceRow>,
}

/// Boundary time that counts for latency: the last segment carrying text.
/// Empty flush segments after it do not move the user-visible transcript.
fn last_meaningful_boundary(out: &DecodeOutput) -> f64 {
    out.segments
        .iter()
        .rev()
        .find(|s| !s.tokens.is_empty())
        .or_else(|| out.segments.last())
        .map(|s| s.boundary_s)
        .unwrap_or(0.0)
}

pub fn aggregate(
    segmenter: &str,
    config: &str,
    outputs: &[DecodeOutput],
    corpus: &Corpus,
) -> Result<RunReport, MetricsError> {
    let by_id: HashMap<&str, &crate::corpus::AlignedUtterance> =
        corpus.utterances.iter().map(|u| (u.id.as_str(), u)).collect();
    if outputs.len() != corpus.utterances.len() {
        return Err(MetricsError::IdMismatch(format!(
            "{} decode outputs for {} utterances",
            outputs.len(),
            corpus.utterances.len()
        )));
    }

    let mut rows = Vec::with_capacity(outputs.len());
    let mut total_errors = 0usize;
    let mut total_ref = 0usize;
    let mut samples = Vec::with_capacity(outputs.len());
    for out in outputs {
        let utt = by_id
            .get(out.id.as_str())
            .ok_or_else(|| MetricsError::IdMismatch(out.id.clone()))?;
        let reference = utt.tokens();
        let hypothesis: Vec<String> =
            out.segments.iter().flat_map(|s| s.tokens.iter().cloned()).collect();
        let w = wer(&reference, &hypothesis);
        total_errors += w.counts.errors();
        total_ref += reference.len();
        let latency_s = last_meaningful_boundary(out) - utt.last_word_end_s();
        samples.push(LatencySample { id: out.id.clone(), latency_s });
        rows.push(UtteranceRow {
            id: out.id.clone(),
            ref_words: reference.len(),
            errors: w.counts.errors(),
            wer: w.rate,
            latency_s,
            segments: out.segments.len(),
            state_count: out.state_count,
            eos_state_count: out.eos_state_count,
        });
    }

    let lat = eos_latency(&samples);
    let n = rows.len() as f64;
    Ok(RunReport {
        segmenter: segmenter.to_string(),
        config: config.to_string(),
        wer: if total_ref > 0 { total_errors as f64 / total_ref as f64 } else { 0.0 },
        eos50_ms: lat.eos50_ms,
        eos75_ms: lat.eos75_ms,
        avg_segments: rows.iter().map(|r| r.segments as f64).sum::<f64>() / n,
        avg_states: rows.iter().map(|r| r.state_count as f64).sum::<f64>() / n,
        excluded_latencies: lat.excluded,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthBinRelative {
    /// Inclusive reference word-count range.
    pub lo: usize,
    pub hi: usize,
    pub utterances: usize,
    /// `(mean_wer_a - mean_wer_b) / mean_wer_b`; absent when the baseline
    /// WER in the bin is zero.
    pub relative: Option<f64>,
}

/// WER-relative of run `a` against baseline `b`, bucketed by reference
/// length in words. Empty bins are omitted.
pub fn per_length_relative(
    a: &RunReport,
    b: &RunReport,
    bins: &[(usize, usize)],
) -> Result<Vec<LengthBinRelative>, MetricsError> {
    let b_by_id: HashMap<&str, &UtteranceRow> =
        b.rows.iter().map(|r| (r.id.as_str(), r)).collect();
    if a.rows.len() != b.rows.len() {
        return Err(MetricsError::ReportMismatch);
    }
    let mut out = Vec::new();
    for &(lo, hi) in bins {
        let mut wa = Vec::new();
        let mut wb = Vec::new();
        for ra in &a.rows {
            if !(lo..=hi).contains(&ra.ref_words) {
                continue;
            }
            let rb = b_by_id.get(ra.id.as_str()).ok_or(MetricsError::ReportMismatch)?;
            if let (Some(x), Some(y)) = (ra.wer, rb.wer) {
                wa.push(x);
                wb.push(y);
            }
        }
        if wa.is_empty() {
            continue;
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&wa), mean(&wb));
        let relative = if mb > 0.0 { Some((ma - mb) / mb) } else { None };
        out.push(LengthBinRelative { lo, hi, utterances: wa.len(), relative });
    }
    Ok(out)
}

fn fmt_opt_ms(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_default()
}

pub const REPORT_CSV_HEADER: &str =
    "segmenter,config,wer,eos50_ms,eos75_ms,avg_segments,avg_states,excluded_latencies";

pub fn report_csv_row(r: &RunReport) -> String {
    format!(
        "{},{},{:.6},{},{},{:.4},{:.1},{}",
        r.segmenter,
        r.config,
        r.wer,
        fmt_opt_ms(r.eos50_ms),
        fmt_opt_ms(r.eos75_ms),
        r.avg_segments,
        r.avg_states,
        r.excluded_latencies
    )
}

/// Write one CSV with a row per run.
pub fn write_report_csv(path: &Path, reports: &[RunReport]) -> Result<(), MetricsError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{REPORT_CSV_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", report_csv_row(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Per-utterance rows of a single run.
pub fn write_per_utterance_csv(path: &Path, report: &RunReport) -> Result<(), MetricsError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "id,ref_words,errors,wer,latency_s,segments,states,eos_states")?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{:.4},{},{},{}",
            r.id,
            r.ref_words,
            r.errors,
            r.wer.map(|x| format!("{x:.6}")).unwrap_or_default(),
            r.latency_s,
            r.segments,
            r.state_count,
            r.eos_state_count
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Results-table style markdown rendering of one or more runs.
pub fn markdown_table(reports: &[RunReport]) -> String {
    let mut s = String::new();
    s.push_str("| Segmenter | WER | EOS50 | EOS75 | # Seg. | # State |\n");
    s.push_str("|---|---|---|---|---|---|\n");
    for r in reports {
        s.push_str(&format!(
            "| {} ({}) | {:.2}% | {} | {} | {:.1} | {:.0} |\n",
            r.segmenter,
            r.config,
            r.wer * 100.0,
            r.eos50_ms.map(|x| format!("{x:.0} ms")).unwrap_or_else(|| "-".into()),
            r.eos75_ms.map(|x| format!("{x:.0} ms")).unwrap_or_else(|| "-".into()),
            r.avg_segments,
            r.avg_states
        ));
    }
    s
}
