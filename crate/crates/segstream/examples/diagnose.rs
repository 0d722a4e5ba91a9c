//! Scratch training diagnostics; not part of the build.

use std::time::Instant;

use ndarray::Array2;
use segstream::corpus::{generate_corpus, synthesize_features_range, frame_count, CorpusConfig};
use segstream::decoder::{Beam, DecodeConfig, expand_frame_cached, PredCache};
use segstream::model::{encoder_step, train, EncoderState, JointKind, ModelConfig, Stage, rnnt_loss_value};
use segstream::model::prediction_vec;
use segstream::model::DecoderContext;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let window: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);
    let hidden: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(32);

    let cfg = CorpusConfig { duration_s: (10.0, 30.0), ..CorpusConfig::default() };
    let corpus = generate_corpus(&cfg, 400, 42).unwrap();

    let mcfg = ModelConfig {
        vocab_size: cfg.model_vocab().len(),
        feat_dim: cfg.feature_dim + 1,
        enc_hidden: hidden,
        embed_dim: 16,
        joint_hidden: hidden,
        learning_rate: lr,
        steps,
        batch_size: 4,
        window_words: window,
        seed: 7,
        ..ModelConfig::default()
    };
    let t0 = Instant::now();
    let out = train(&mcfg, &corpus, &[], Stage::Wordpiece, None).unwrap();
    let losses: Vec<f64> = out.loss_log.iter().map(|x| x.1).collect();
    let k = losses.len() / 8;
    let curve: Vec<String> = (0..8).map(|i| format!("{:.1}", losses[i * k])).collect();
    println!(
        "train {:?} steps={} lr={} window={} hidden={}: loss {} final {:.2}",
        t0.elapsed(), steps, lr, window, hidden, curve.join(" "), losses.last().unwrap()
    );
    let params = out.params;

    // Greedy-ish decode of the first utterance's first 12 words.
    let vocab = cfg.model_vocab();
    let utt = &corpus.utterances[0];
    let total = frame_count(utt, &cfg);
    let end_word = utt.words.len().min(12);
    let f1 = if end_word < utt.words.len() {
        (utt.words[end_word].start_s / cfg.frame_step_s) as usize
    } else {
        total
    };
    let frames = synthesize_features_range(utt, &cfg, 0, f1).model_inputs();
    let reference: Vec<&str> = utt.words[..end_word].iter().map(|w| w.text.as_str()).collect();

    let mut beam = Beam::new(&params);
    let mut cache = PredCache::default();
    let dcfg = DecodeConfig::default();
    for t in 0..frames.nrows() {
        let (next, enc) = encoder_step(&params, &beam.enc_state, frames.row(t)).unwrap();
        beam.enc_state = next;
        beam.current_frame = t;
        expand_frame_cached(&mut beam, enc.view(), &params, &dcfg, &mut cache).unwrap();
    }
    let hyp: Vec<&str> = beam.top().tokens.iter().map(|&v| vocab[v as usize].as_str()).collect();
    println!("ref: {}", reference.join(" "));
    println!("hyp: {}", hyp.join(" "));

    // Posterior snapshot along the window: P(blank) and P(correct word)
    // at each word's midpoint and at a silence frame.
    let word_ids: Vec<u32> = utt.words[..end_word]
        .iter()
        .map(|w| vocab.iter().position(|v| v == &w.text).unwrap() as u32)
        .collect();
    let mut state = EncoderState::zeros(&params);
    let mut enc_at = Vec::new();
    for t in 0..frames.nrows() {
        let (next, enc) = encoder_step(&params, &state, frames.row(t)).unwrap();
        state = next;
        enc_at.push(enc);
    }
    let ctx0 = DecoderContext::start(2, params.config.start_id());
    let mut ctx = ctx0.clone();
    for (i, w) in utt.words[..end_word].iter().enumerate() {
        let mid = (((w.start_s + w.end_s) / 2.0) / cfg.frame_step_s) as usize;
        let late = ((w.end_s - 0.02) / cfg.frame_step_s) as usize;
        let pred = prediction_vec(&params, &ctx).unwrap();
        let post_mid = segstream::model::joint_wordpiece(&params, enc_at[mid].view(), pred.view());
        let post_late = segstream::model::joint_wordpiece(&params, enc_at[late.min(enc_at.len()-1)].view(), pred.view());
        let correct = word_ids[i] as usize;
        let best_mid = post_mid
            .log_tokens
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        println!(
            "word {:>6} mid: P(b)={:.2} P(y)={:.3} best={} {:.3} | late: P(b)={:.2} P(y)={:.3}",
            w.text,
            post_mid.log_blank.exp(),
            post_mid.log_tokens[correct].exp(),
            vocab[best_mid.0],
            best_mid.1.exp(),
            post_late.log_blank.exp(),
            post_late.log_tokens[correct].exp(),
        );
        ctx = ctx.push(word_ids[i]);
    }

    // Whole-window loss of the reference for scale.
    let loss = rnnt_loss_value(&params, &frames, &word_ids, JointKind::Wordpiece).unwrap();
    println!("reference window loss: {loss:.2} over {} frames {} words", frames.nrows(), end_word);
    let _ = Array2::<f64>::zeros((1, 1));
}
