//! Seeded two-stage training. Stage 1 learns wordpiece transduction through
//! the wordpiece joint; stage 2 copies it into the eos joint and fine-tunes
//! on `<eos>`-augmented targets (only the eos joint updates by default).
//!
//! Long utterances are sliced into word windows (plus the silence that
//! follows them) so lattice sizes stay small; batches are drawn with a
//! seeded RNG and reduced in a fixed order, so training is deterministic.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::annotation::{AnnotatedTranscript, EOS_MARKER};
use crate::corpus::{frame_count, synthesize_features_range, Corpus};

use super::loss::{rnnt_loss_scoped, GradScope, JointKind};
use super::{init_eos_joint, ModelConfig, ModelError, ModelGrads, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Stage 1: encoder + prediction + wordpiece joint from scratch.
    Wordpiece,
    /// Stage 2: eos joint fine-tune from a stage-1 checkpoint.
    EosJoint,
}

impl Stage {
    pub fn from_number(n: u8) -> Option<Stage> {
        match n {
            1 => Some(Stage::Wordpiece),
            2 => Some(Stage::EosJoint),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Stage::Wordpiece => 1,
            Stage::EosJoint => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// `(step, batch mean loss)` per optimizer step.
    pub loss_log: Vec<(usize, f64)>,
}

/// Per-utterance training view: token ids, eos flags, and window frames.
struct UttView {
    word_ids: Vec<u32>,
    /// True when the annotation places `<eos>` right after this word.
    eos_after: Vec<bool>,
    word_start_frame: Vec<usize>,
    /// End frame of a window that stops at this word: up to the next word's
    /// onset, or the end of audio for the last word.
    window_end_frame: Vec<usize>,
    /// End frame of the word itself (used to bound lead-in silence).
    word_end_frame: Vec<usize>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Adam {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, flat: &mut [f64], grads: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..flat.len() {
            let g = grads[i];
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            flat[i] -= self.lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}

fn build_views(
    corpus: &Corpus,
    annotations: &[AnnotatedTranscript],
    stage: Stage,
    vocab_ids: &HashMap<&str, u32>,
) -> Result<Vec<UttView>, ModelError> {
    let by_id: HashMap<&str, &AnnotatedTranscript> =
        annotations.iter().map(|a| (a.id.as_str(), a)).collect();
    let step = corpus.config.frame_step_s;
    let mut views = Vec::with_capacity(corpus.utterances.len());
    for utt in &corpus.utterances {
        let n = utt.words.len();
        let mut word_ids = Vec::with_capacity(n);
        for w in &utt.words {
            let id = vocab_ids
                .get(w.text.as_str())
                .ok_or_else(|| ModelError::VocabMismatch(format!("word {:?} not in vocabulary", w.text)))?;
            word_ids.push(*id);
        }
        let mut eos_after = vec![false; n];
        if stage == Stage::EosJoint {
            let ann = by_id
                .get(utt.id.as_str())
                .ok_or_else(|| ModelError::TranscriptMismatch(utt.id.clone()))?;
            let mut pos = 0usize;
            for tok in &ann.tokens {
                if tok == EOS_MARKER {
                    if pos == 0 {
                        return Err(ModelError::TranscriptMismatch(utt.id.clone()));
                    }
                    eos_after[pos - 1] = true;
                } else {
                    if pos >= n || *tok != utt.words[pos].text {
                        return Err(ModelError::TranscriptMismatch(utt.id.clone()));
                    }
                    pos += 1;
                }
            }
            if pos != n {
                return Err(ModelError::TranscriptMismatch(utt.id.clone()));
            }
        }
        let total = frame_count(utt, &corpus.config);
        let mut word_start_frame = Vec::with_capacity(n);
        let mut window_end_frame = Vec::with_capacity(n);
        let mut word_end_frame = Vec::with_capacity(n);
        for (j, w) in utt.words.iter().enumerate() {
            word_start_frame.push(((w.start_s / step) as usize).min(total));
            word_end_frame.push(((w.end_s / step).ceil() as usize).min(total));
            let end = if j + 1 < n {
                ((utt.words[j + 1].start_s / step) as usize).min(total)
            } else {
                total
            };
            window_end_frame.push(end);
        }
        views.push(UttView { word_ids, eos_after, word_start_frame, window_end_frame, word_end_frame });
    }
    Ok(views)
}

/// Up to 120 ms of silence ahead of the first window word, mimicking an
/// encoder that was just reset mid-stream.
const WINDOW_LEAD_FRAMES: usize = 12;

/// Stage 1 trims the silence after the window's last word so the alignment
/// posterior stays concentrated on speech; stage 2 keeps the whole gap
/// because the `<eos>` evidence lives in that silence.
fn gap_cap_frames(stage: Stage, frame_step_s: f64) -> usize {
    let cap_s = match stage {
        Stage::Wordpiece => 0.5,
        Stage::EosJoint => f64::INFINITY,
    };
    if cap_s.is_infinite() {
        usize::MAX
    } else {
        (cap_s / frame_step_s).ceil() as usize
    }
}

fn window_example(
    corpus: &Corpus,
    views: &[UttView],
    stage: Stage,
    eos_id: u32,
    ctx_len: usize,
    start_id: u32,
    utt_idx: usize,
    word_start: usize,
    window_words: usize,
) -> (ndarray::Array2<f64>, Vec<u32>, Vec<u32>) {
    let utt = &corpus.utterances[utt_idx];
    let view = &views[utt_idx];
    let n = view.word_ids.len();
    let ws = word_start.min(n - 1);
    let we = (ws + window_words).min(n);
    let floor = if ws > 0 { view.word_end_frame[ws - 1] } else { 0 };
    let f0 = view.word_start_frame[ws].saturating_sub(WINDOW_LEAD_FRAMES).max(floor);
    let cap = gap_cap_frames(stage, corpus.config.frame_step_s);
    let f1 = view.window_end_frame[we - 1]
        .min(view.word_end_frame[we - 1].saturating_add(cap))
        .max(f0 + 1);
    let frames = synthesize_features_range(utt, &corpus.config, f0, f1).model_inputs();
    let mut targets = Vec::with_capacity(we - ws + 4);
    for j in ws..we {
        targets.push(view.word_ids[j]);
        if stage == Stage::EosJoint && view.eos_after[j] {
            targets.push(eos_id);
        }
    }
    // Warm-start the decoder context with the words spoken just before the
    // window, exactly what a mid-stream decoder would carry.
    let mut init_ctx = vec![start_id; ctx_len];
    for (slot, j) in (0..ws).rev().take(ctx_len).enumerate() {
        init_ctx[ctx_len - 1 - slot] = view.word_ids[j];
    }
    (frames, targets, init_ctx)
}

/// Run one training stage over the corpus. Stage 2 requires the stage-1
/// checkpoint in `init`; its architecture wins over `config`, which still
/// supplies the training schedule.
pub fn train(
    config: &ModelConfig,
    corpus: &Corpus,
    annotations: &[AnnotatedTranscript],
    stage: Stage,
    init: Option<ModelParams>,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    let vocab = corpus.config.model_vocab();
    let mut params = match stage {
        Stage::Wordpiece => {
            if config.vocab_size != vocab.len() {
                return Err(ModelError::VocabMismatch(format!(
                    "config vocab_size {} != corpus vocabulary {}",
                    config.vocab_size,
                    vocab.len()
                )));
            }
            ModelParams::init(config, vocab.clone())?
        }
        Stage::EosJoint => {
            let loaded = init.ok_or(ModelError::MissingCheckpoint)?;
            if loaded.vocab != vocab {
                return Err(ModelError::VocabMismatch(
                    "checkpoint vocabulary differs from corpus".into(),
                ));
            }
            let mut p = init_eos_joint(loaded);
            // Architecture comes from the checkpoint; the schedule from here.
            p.config.fastemit_lambda = config.fastemit_lambda;
            p.config.learning_rate = config.learning_rate;
            p.config.steps = config.steps;
            p.config.batch_size = config.batch_size;
            p.config.window_words = config.window_words;
            p.config.stage2_update_all = config.stage2_update_all;
            p.config.seed = config.seed;
            p
        }
    };
    if params.config.feat_dim != corpus.config.feature_dim + 1 {
        return Err(ModelError::DimMismatch(format!(
            "model feat_dim {} != corpus feature_dim {} + energy",
            params.config.feat_dim, corpus.config.feature_dim
        )));
    }
    if corpus.utterances.is_empty() {
        return Err(ModelError::InvalidConfig("corpus is empty".into()));
    }

    let vocab_ids: HashMap<&str, u32> =
        vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i as u32)).collect();
    let views = build_views(corpus, annotations, stage, &vocab_ids)?;

    let (kind, scope) = match stage {
        Stage::Wordpiece => (JointKind::Wordpiece, GradScope::All),
        Stage::EosJoint => (
            JointKind::Eos,
            if params.config.stage2_update_all { GradScope::All } else { GradScope::JointOnly },
        ),
    };

    let cfg = params.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x7472_61696e << stage.number()));
    let mut adam = Adam::new(params.flatten().len(), cfg.learning_rate);
    let mut loss_log = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch: Vec<(usize, usize)> = (0..cfg.batch_size)
            .map(|_| {
                let ui = rng.random_range(0..corpus.utterances.len());
                let ws = rng.random_range(0..views[ui].word_ids.len());
                (ui, ws)
            })
            .collect();
        let lambda = cfg.fastemit_lambda;
        let eos_id = params.config.eos_id();
        let start_id = params.config.start_id();
        let ctx_len = params.config.ctx_len;
        let results: Result<Vec<(f64, ModelGrads)>, ModelError> = batch
            .par_iter()
            .map(|&(ui, ws)| {
                let (frames, targets, init_ctx) = window_example(
                    corpus, &views, stage, eos_id, ctx_len, start_id, ui, ws, cfg.window_words,
                );
                rnnt_loss_scoped(&params, &frames, &targets, kind, lambda, scope, &init_ctx)
            })
            .collect();
        let results = results?;

        let inv = 1.0 / cfg.batch_size as f64;
        let mut mean_loss = 0.0;
        let mut mean_grads = ModelGrads { flat: vec![0.0; adam.m.len()] };
        for (loss, grads) in &results {
            mean_loss += loss * inv;
            mean_grads.add_scaled(grads, inv);
        }

        let mut flat = params.flatten();
        adam.step(&mut flat, &mean_grads.flat);
        params.load_flat(&flat);
        loss_log.push((step, mean_loss));
    }

    Ok(TrainOutcome { params, loss_log })
}
