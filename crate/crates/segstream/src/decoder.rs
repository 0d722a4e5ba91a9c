//! Frame-synchronous beam search with segment-finalization semantics.
//!
//! Each frame runs a breadth-first expansion over non-blank tokens (bounded
//! depth), closes every hypothesis with the blank transition, merges equal
//! token sequences keeping the best alignment, and prunes to the beam. On a
//! boundary signal the top hypothesis is finalized: the beam collapses, the
//! encoder state zeroes, and only the decoder context survives into the
//! next segment.

use std::collections::HashMap;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::corpus::FrameSequence;
use crate::model::{
    encoder_step, joint_eos, joint_wordpiece, prediction_vec, DecoderContext, EncoderState,
    ModelError, ModelParams,
};
use crate::segmenter::{BoundaryReason, FrameObservation, Segmenter, SegmenterError, SegmenterKind};

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("frames and vad flags differ in length: {frames} vs {vad}")]
    LengthMismatch { frames: usize, vad: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Segmenter(#[from] SegmenterError),
}

/// Decoded token prefix with its score and per-token emission frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub ctx: DecoderContext,
    /// Cumulative negative log posterior; nondecreasing as the hypothesis
    /// extends.
    pub nll: f64,
    pub emit_frames: Vec<usize>,
}

/// Search state shared by all hypotheses of one segment.
#[derive(Debug, Clone)]
pub struct Beam {
    /// Sorted by `(nll, tokens)` ascending; token sequences are unique.
    pub hyps: Vec<Hypothesis>,
    pub enc_state: EncoderState,
    /// Wordpiece-joint forward passes so far (the # State metric).
    pub state_count: u64,
    /// Frame index stamped onto emissions by `expand_frame`.
    pub current_frame: usize,
    /// `state_count` value when the current segment started.
    segment_start_states: u64,
}

impl Beam {
    pub fn new(params: &ModelParams) -> Beam {
        let ctx = DecoderContext::start(params.config.ctx_len, params.config.start_id());
        Beam {
            hyps: vec![Hypothesis { tokens: Vec::new(), ctx, nll: 0.0, emit_frames: Vec::new() }],
            enc_state: EncoderState::zeros(params),
            state_count: 0,
            current_frame: 0,
            segment_start_states: 0,
        }
    }

    pub fn top(&self) -> &Hypothesis {
        &self.hyps[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Hypotheses worse than the best by more than this are dropped.
    pub prune_threshold: f64,
    /// Non-blank expansions per frame.
    pub max_expansion_depth: usize,
    /// Within-frame expansion pruning margin, relative to the best
    /// hypothesis seen this frame.
    pub expansion_prune: f64,
    pub frame_filter_enabled: bool,
    /// Silence processed before filtering starts dropping frames.
    pub filter_base_s: f64,
    /// Extra silence beyond the base before dropping starts.
    pub filter_margin_s: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 8,
            prune_threshold: 5.0,
            max_expansion_depth: 10,
            expansion_prune: 5.0,
            frame_filter_enabled: false,
            filter_base_s: 0.2,
            filter_margin_s: 0.0,
        }
    }
}

/// A finalized segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub tokens: Vec<String>,
    pub boundary_frame: u64,
    pub boundary_s: f64,
    pub reason: BoundaryReason,
    /// Joint evaluations spent on this segment; accounting only, not part
    /// of the wire format.
    #[serde(skip_serializing, default)]
    pub state_count: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecodeStats {
    pub state_count: u64,
    pub eos_state_count: u64,
}

/// Per-utterance decode result in the output wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOutput {
    pub id: String,
    pub segments: Vec<SegmentRecord>,
    pub state_count: u64,
    pub eos_state_count: u64,
}

/// Memo of prediction vectors per decoder context; contexts recur heavily
/// from frame to frame.
#[derive(Default)]
pub struct PredCache {
    map: HashMap<DecoderContext, Array1<f64>>,
}

impl PredCache {
    fn ensure(&mut self, params: &ModelParams, ctx: &DecoderContext) -> Result<(), ModelError> {
        if !self.map.contains_key(ctx) {
            let v = prediction_vec(params, ctx)?;
            self.map.insert(ctx.clone(), v);
        }
        Ok(())
    }

    fn peek(&self, ctx: &DecoderContext) -> &Array1<f64> {
        self.map.get(ctx).expect("ensured")
    }
}

fn hyp_order(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    a.nll
        .partial_cmp(&b.nll)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Merge hypotheses with identical token sequences, keeping the better
/// alignment.
fn dedupe(hyps: Vec<Hypothesis>) -> Vec<Hypothesis> {
    let mut by_tokens: HashMap<Vec<u32>, Hypothesis> = HashMap::with_capacity(hyps.len());
    for h in hyps {
        match by_tokens.get_mut(&h.tokens) {
            None => {
                by_tokens.insert(h.tokens.clone(), h);
            }
            Some(existing) => {
                let better = h.nll < existing.nll
                    || (h.nll == existing.nll && h.emit_frames < existing.emit_frames);
                if better {
                    *existing = h;
                }
            }
        }
    }
    by_tokens.into_values().collect()
}

/// One frame of breadth-first expansion followed by the blank transition.
/// `state_count` grows by one per wordpiece-joint evaluation.
pub fn expand_frame(
    beam: &mut Beam,
    enc_vec: ArrayView1<f64>,
    params: &ModelParams,
    cfg: &DecodeConfig,
) -> Result<(), ModelError> {
    let mut cache = PredCache::default();
    expand_frame_cached(beam, enc_vec, params, cfg, &mut cache)
}

pub fn expand_frame_cached(
    beam: &mut Beam,
    enc_vec: ArrayView1<f64>,
    params: &ModelParams,
    cfg: &DecodeConfig,
    cache: &mut PredCache,
) -> Result<(), ModelError> {
    let frame_idx = beam.current_frame;
    let vocab_size = params.config.vocab_size as u32;
    let mut live = std::mem::take(&mut beam.hyps);
    let mut closed: Vec<Hypothesis> = Vec::new();

    for depth in 0..=cfg.max_expansion_depth {
        if live.is_empty() {
            break;
        }
        // Reference score for expansion pruning: best hypothesis seen this
        // frame, closed or still expanding.
        let best = live
            .iter()
            .map(|h| h.nll)
            .chain(closed.iter().map(|h| h.nll))
            .fold(f64::INFINITY, f64::min);

        let mut next_live: Vec<Hypothesis> = Vec::new();
        for hyp in &live {
            cache.ensure(params, &hyp.ctx)?;
            let post = joint_wordpiece(params, enc_vec.view(), cache.peek(&hyp.ctx).view());
            beam.state_count += 1;

            closed.push(Hypothesis {
                tokens: hyp.tokens.clone(),
                ctx: hyp.ctx.clone(),
                nll: hyp.nll - post.log_blank,
                emit_frames: hyp.emit_frames.clone(),
            });

            if depth < cfg.max_expansion_depth {
                for v in 0..vocab_size {
                    let nll = hyp.nll - post.log_tokens[v as usize];
                    if nll > best + cfg.expansion_prune {
                        continue;
                    }
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(v);
                    let mut emit_frames = hyp.emit_frames.clone();
                    emit_frames.push(frame_idx);
                    next_live.push(Hypothesis { tokens, ctx: hyp.ctx.push(v), nll, emit_frames });
                }
            }
        }
        live = dedupe(next_live);
        live.sort_unstable_by(hyp_order);
    }

    let mut merged = dedupe(closed);
    merged.sort_unstable_by(hyp_order);
    merged.truncate(cfg.beam_size);
    let best = merged[0].nll;
    merged.retain(|h| h.nll <= best + cfg.prune_threshold);
    beam.hyps = merged;
    Ok(())
}

/// Commit the top hypothesis as a segment. The surviving beam holds one
/// empty hypothesis that inherits the top's decoder context; the encoder
/// state is zeroed.
pub fn finalize(
    beam: &mut Beam,
    frame_idx: usize,
    reason: BoundaryReason,
    frame_step_s: f64,
    vocab: &[String],
) -> SegmentRecord {
    let top = beam.hyps[0].clone();
    let record = SegmentRecord {
        tokens: top.tokens.iter().map(|&t| vocab[t as usize].clone()).collect(),
        boundary_frame: frame_idx as u64,
        boundary_s: (frame_idx as f64 + 1.0) * frame_step_s,
        reason,
        state_count: beam.state_count - beam.segment_start_states,
    };
    beam.segment_start_states = beam.state_count;
    beam.hyps = vec![Hypothesis {
        tokens: Vec::new(),
        ctx: top.ctx,
        nll: 0.0,
        emit_frames: Vec::new(),
    }];
    beam.enc_state.reset();
    record
}

/// Per-frame keep/drop mask for VAD-controlled frame filtering. Dropping
/// begins once a silence run exceeds `base + margin` and ends at the next
/// speech frame.
pub fn frame_gate(vad: &[bool], cfg: &DecodeConfig, frame_step_s: f64) -> Vec<bool> {
    if !cfg.frame_filter_enabled {
        return vec![true; vad.len()];
    }
    let keep_frames =
        (((cfg.filter_base_s + cfg.filter_margin_s) / frame_step_s) - 1e-9).ceil().max(0.0) as usize;
    let mut keep = vec![true; vad.len()];
    let mut run = 0usize;
    for (i, &speech) in vad.iter().enumerate() {
        if speech {
            run = 0;
        } else {
            run += 1;
            if run > keep_frames {
                keep[i] = false;
            }
        }
    }
    keep
}

/// Stream one utterance through the decoder with the given segmenter.
/// Dropped frames advance time (and the duration guard) but are never
/// encoded or expanded.
pub fn decode_utterance(
    params: &ModelParams,
    frames: &FrameSequence,
    vad: &[bool],
    segmenter: &mut Segmenter,
    cfg: &DecodeConfig,
) -> Result<(Vec<SegmentRecord>, DecodeStats), DecodeError> {
    let t_len = frames.num_frames();
    if vad.len() != t_len {
        return Err(DecodeError::LengthMismatch { frames: t_len, vad: vad.len() });
    }
    let step = frames.frame_step_s;
    let inputs = frames.model_inputs();
    let keep = frame_gate(vad, cfg, step);
    let is_e2e = segmenter.kind() == SegmenterKind::E2e;

    let mut beam = Beam::new(params);
    let mut cache = PredCache::default();
    let mut segments = Vec::new();
    let mut eos_state_count = 0u64;
    let mut prev_top_tokens: Vec<u32> = Vec::new();

    for t in 0..t_len {
        let mut eos_nll = None;
        if keep[t] {
            let (next_state, enc_vec) = encoder_step(params, &beam.enc_state, inputs.row(t))?;
            beam.enc_state = next_state;
            beam.current_frame = t;
            expand_frame_cached(&mut beam, enc_vec.view(), params, cfg, &mut cache)?;
            if is_e2e {
                let top_ctx = beam.top().ctx.clone();
                cache.ensure(params, &top_ctx)?;
                let post = joint_eos(params, enc_vec.view(), cache.peek(&top_ctx).view());
                eos_state_count += 1;
                eos_nll = Some(post.eos_nll());
            }
        }
        if beam.top().tokens != prev_top_tokens {
            segmenter.notify_beam_changed();
        }
        prev_top_tokens = beam.top().tokens.clone();

        let obs = FrameObservation {
            index: t,
            time_s: t as f64 * step,
            vad_is_speech: vad[t],
            eos_nll,
        };
        if let Some(signal) = segmenter.on_frame(&obs)? {
            segments.push(finalize(&mut beam, signal.frame, signal.reason, step, &params.vocab));
            prev_top_tokens.clear();
            segmenter.notify_beam_changed();
        }
    }

    // End of audio always closes the last segment.
    let last = t_len.saturating_sub(1);
    segments.push(finalize(&mut beam, last, BoundaryReason::FinalFlush, step, &params.vocab));

    let stats = DecodeStats { state_count: beam.state_count, eos_state_count };
    Ok((segments, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams};
    use crate::segmenter::SegmenterConfig;
    use ndarray::{Array1, Array2};

    fn tiny_params(vocab_size: usize, seed: u64) -> ModelParams {
        let cfg = ModelConfig {
            vocab_size,
            feat_dim: 3,
            enc_hidden: 4,
            ctx_len: 2,
            embed_dim: 3,
            joint_hidden: 4,
            seed,
            ..ModelConfig::default()
        };
        let vocab = (0..vocab_size).map(|i| format!("w{i}")).collect();
        ModelParams::init(&cfg, vocab).unwrap()
    }

    /// All-zero weights with a fixed blank bias: every joint call yields
    /// P(blank) = sigmoid(bias) and splits the rest uniformly.
    fn constant_params(vocab_size: usize, blank_bias: f64) -> ModelParams {
        let mut p = tiny_params(vocab_size, 0);
        p.visit_mut(|_, data| data.fill(0.0));
        p.joint_wp.b_blank[0] = blank_bias;
        p.joint_eos.b_blank[0] = blank_bias;
        p
    }

    fn frame_seq(t: usize) -> FrameSequence {
        FrameSequence {
            frames: Array2::zeros((t, 2)),
            energy: Array1::ones(t),
            frame_step_s: 0.010,
        }
    }

    fn never_segmenter() -> Segmenter {
        let cfg = SegmenterConfig {
            interval_s: 1e9,
            max_segment_s: 1e9,
            ..SegmenterConfig::new(SegmenterKind::Fixed)
        };
        Segmenter::new(cfg, 0.010).unwrap()
    }

    #[test]
    fn blank_dominant_model_emits_nothing_and_counts_frames() {
        let p = constant_params(3, 30.0);
        let fs = frame_seq(40);
        let vad = vec![true; 40];
        let mut seg = never_segmenter();
        let cfg = DecodeConfig { beam_size: 1, ..DecodeConfig::default() };
        let (segments, stats) = decode_utterance(&p, &fs, &vad, &mut seg, &cfg).unwrap();
        assert_eq!(segments.len(), 1);
        assert!(segments[0].tokens.is_empty());
        assert_eq!(stats.state_count, 40);
        assert_eq!(segments[0].reason, BoundaryReason::FinalFlush);
    }

    #[test]
    fn expansion_depth_costs_one_joint_eval_per_level() {
        // P(blank) = 0.01 and one token carrying the rest. Expansions stay
        // cheap enough to survive pruning, so every frame explores all
        // max_expansion_depth + 1 levels: 11 joint evals per frame. With
        // node distributions constant, extra emissions only lower a path's
        // probability, so the kept hypothesis still has no tokens.
        let p = constant_params(1, -(99.0f64).ln());
        let fs = frame_seq(3);
        let vad = vec![true; 3];
        let mut seg = never_segmenter();
        let cfg = DecodeConfig { beam_size: 1, ..DecodeConfig::default() };
        let (segments, stats) = decode_utterance(&p, &fs, &vad, &mut seg, &cfg).unwrap();
        assert_eq!(stats.state_count, 33);
        assert!(segments[0].tokens.is_empty());
    }

    #[test]
    fn depth_zero_never_emits() {
        let p = constant_params(1, -(99.0f64).ln());
        let fs = frame_seq(5);
        let vad = vec![true; 5];
        let mut seg = never_segmenter();
        let cfg = DecodeConfig { max_expansion_depth: 0, ..DecodeConfig::default() };
        let (segments, stats) = decode_utterance(&p, &fs, &vad, &mut seg, &cfg).unwrap();
        assert!(segments[0].tokens.is_empty());
        assert_eq!(stats.state_count, 5);
    }

    #[test]
    fn finalize_collapses_beam_and_carries_context() {
        let p = tiny_params(3, 5);
        let mut beam = Beam::new(&p);
        beam.hyps = vec![
            Hypothesis {
                tokens: vec![1, 2],
                ctx: DecoderContext::from_tokens(vec![1, 2]),
                nll: 0.5,
                emit_frames: vec![0, 1],
            },
            Hypothesis {
                tokens: vec![1],
                ctx: DecoderContext::from_tokens(vec![3, 1]),
                nll: 0.9,
                emit_frames: vec![0],
            },
            Hypothesis {
                tokens: vec![2],
                ctx: DecoderContext::from_tokens(vec![3, 2]),
                nll: 1.4,
                emit_frames: vec![1],
            },
        ];
        beam.state_count = 17;
        let rec = finalize(&mut beam, 9, BoundaryReason::Vad, 0.010, &p.vocab);
        assert_eq!(rec.tokens, vec!["w1", "w2"]);
        assert_eq!(rec.boundary_frame, 9);
        assert!((rec.boundary_s - 0.10).abs() < 1e-12);
        assert_eq!(rec.state_count, 17);
        assert_eq!(beam.hyps.len(), 1);
        assert!(beam.top().tokens.is_empty());
        assert_eq!(beam.top().ctx, DecoderContext::from_tokens(vec![1, 2]));
        assert!(beam.enc_state.h.iter().all(|h| h.iter().all(|&x| x == 0.0)));
        // A second finalize right away yields an empty segment.
        let rec2 = finalize(&mut beam, 10, BoundaryReason::Vad, 0.010, &p.vocab);
        assert!(rec2.tokens.is_empty());
        assert_eq!(rec2.state_count, 0);
    }

    #[test]
    fn frame_gate_drops_after_base_plus_margin() {
        let step = 0.010;
        // 0.5 s speech then 1.0 s silence then speech again.
        let mut vad = vec![true; 50];
        vad.extend(vec![false; 100]);
        vad.extend(vec![true; 10]);

        let cfg = DecodeConfig {
            frame_filter_enabled: true,
            filter_margin_s: 0.0,
            ..DecodeConfig::default()
        };
        let keep = frame_gate(&vad, &cfg, step);
        assert!(keep[..70].iter().all(|&k| k)); // speech + first 0.2 s
        assert!(keep[70..150].iter().all(|&k| !k));
        assert!(keep[150..].iter().all(|&k| k));

        let cfg = DecodeConfig { filter_margin_s: 1.0, ..cfg };
        let keep = frame_gate(&vad, &cfg, step);
        // 1.2 s of the run is kept; the run is only 1.0 s, so nothing drops.
        assert!(keep.iter().all(|&k| k));

        let cfg = DecodeConfig { frame_filter_enabled: false, ..cfg };
        assert!(frame_gate(&vad, &cfg, step).iter().all(|&k| k));
    }

    #[test]
    fn guard_splits_long_streams_at_sixty_five_seconds() {
        let p = constant_params(2, 30.0);
        let t = 13_000; // 130 s
        let fs = frame_seq(t);
        let vad = vec![true; t];
        let cfg_seg = SegmenterConfig {
            eos_threshold: 0.0,
            ..SegmenterConfig::new(SegmenterKind::E2e)
        };
        let mut seg = Segmenter::new(cfg_seg, 0.010).unwrap();
        let (segments, _) = decode_utterance(&p, &fs, &vad, &mut seg, &DecodeConfig::default()).unwrap();
        assert_eq!(segments.len(), 3);
        assert_eq!(segments[0].reason, BoundaryReason::MaxDuration);
        assert_eq!(segments[0].boundary_frame, 6499);
        assert_eq!(segments[1].boundary_frame, 12999);
        assert_eq!(segments[2].reason, BoundaryReason::FinalFlush);
        assert_eq!(segments[2].boundary_frame, 12999);
    }

    #[test]
    fn tau_zero_never_triggers_eos() {
        let p = constant_params(2, 0.0);
        let fs = frame_seq(200);
        let vad = vec![true; 200];
        let cfg_seg = SegmenterConfig { eos_threshold: 0.0, ..SegmenterConfig::new(SegmenterKind::E2e) };
        let mut seg = Segmenter::new(cfg_seg, 0.010).unwrap();
        let (segments, stats) = decode_utterance(&p, &fs, &vad, &mut seg, &DecodeConfig::default()).unwrap();
        assert_eq!(segments.len(), 1);
        assert_eq!(segments[0].reason, BoundaryReason::FinalFlush);
        assert_eq!(stats.eos_state_count, 200);
    }

    #[test]
    fn beam_invariants_hold_during_decode() {
        let p = tiny_params(3, 11);
        let cfg = DecodeConfig { beam_size: 4, ..DecodeConfig::default() };
        let frames = Array2::from_shape_fn((30, 2), |(i, j)| ((i * 2 + j) as f64 * 0.37).sin());
        let fs = FrameSequence {
            frames,
            energy: Array1::ones(30),
            frame_step_s: 0.010,
        };
        let inputs = fs.model_inputs();
        let mut beam = Beam::new(&p);
        let mut cache = PredCache::default();
        for t in 0..30 {
            let (next, enc) = encoder_step(&p, &beam.enc_state, inputs.row(t)).unwrap();
            beam.enc_state = next;
            expand_frame_cached(&mut beam, enc.view(), &p, &cfg, &mut cache).unwrap();
            assert!(beam.hyps.len() <= 4);
            let best = beam.top().nll;
            for h in &beam.hyps {
                assert!(h.nll >= best);
                assert!(h.nll <= best + cfg.prune_threshold + 1e-12);
                assert_eq!(h.emit_frames.len(), h.tokens.len());
            }
            for pair in beam.hyps.windows(2) {
                assert!(hyp_order(&pair[0], &pair[1]) != std::cmp::Ordering::Greater);
                assert_ne!(pair[0].tokens, pair[1].tokens);
            }
        }
    }

    #[test]
    fn decode_without_boundaries_equals_plain_beam_search() {
        let p = tiny_params(3, 13);
        let frames = Array2::from_shape_fn((25, 2), |(i, j)| ((i + 3 * j) as f64 * 0.29).cos());
        let fs = FrameSequence { frames, energy: Array1::ones(25), frame_step_s: 0.010 };
        let vad = vec![true; 25];
        let cfg = DecodeConfig::default();

        let mut seg = never_segmenter();
        let (segments, stats) = decode_utterance(&p, &fs, &vad, &mut seg, &cfg).unwrap();
        assert_eq!(segments.len(), 1);

        // Plain frame loop with no segmentation machinery.
        let inputs = fs.model_inputs();
        let mut beam = Beam::new(&p);
        let mut cache = PredCache::default();
        for t in 0..25 {
            let (next, enc) = encoder_step(&p, &beam.enc_state, inputs.row(t)).unwrap();
            beam.enc_state = next;
            beam.current_frame = t;
            expand_frame_cached(&mut beam, enc.view(), &p, &cfg, &mut cache).unwrap();
        }
        let plain: Vec<String> =
            beam.top().tokens.iter().map(|&v| p.vocab[v as usize].clone()).collect();
        assert_eq!(segments[0].tokens, plain);
        assert_eq!(stats.state_count, beam.state_count);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let p = tiny_params(2, 1);
        let fs = frame_seq(10);
        let vad = vec![true; 9];
        let mut seg = never_segmenter();
        assert!(matches!(
            decode_utterance(&p, &fs, &vad, &mut seg, &DecodeConfig::default()),
            Err(DecodeError::LengthMismatch { .. })
        ));
    }
}
