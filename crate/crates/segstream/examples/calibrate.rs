//! Scratch calibration for the seeded experiment; not part of the build.

use std::time::Instant;

use segstream::annotation::{annotate, compute_phoneme_stats, AnnotationConfig};
use segstream::corpus::{generate_corpus, synthesize_features, CorpusConfig};
use segstream::decoder::{decode_utterance, DecodeConfig};
use segstream::metrics::aggregate;
use segstream::model::{train, ModelConfig, Stage};
use segstream::segmenter::{vad_flags, Segmenter, SegmenterConfig, SegmenterKind, DEFAULT_VAD_ENERGY_THRESHOLD};
use segstream::decoder::DecodeOutput;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps1: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let steps2: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let n_train: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(400);
    let n_eval: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(8);
    let lr: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(2e-3);

    let t0 = Instant::now();
    let train_cfg = CorpusConfig { duration_s: (10.0, 30.0), ..CorpusConfig::default() };
    let eval_cfg = CorpusConfig { duration_s: (60.0, 180.0), ..CorpusConfig::default() };
    let train_corpus = generate_corpus(&train_cfg, n_train, 42).unwrap();
    let eval_corpus = generate_corpus(&eval_cfg, n_eval, 4242).unwrap();
    println!("[{:6.1?}] corpora built", t0.elapsed());

    let stats = compute_phoneme_stats(&train_corpus).unwrap();
    let acfg = AnnotationConfig::default();
    let anns: Vec<_> = train_corpus
        .utterances
        .iter()
        .map(|u| annotate(u, &stats, &acfg).unwrap())
        .collect();
    let eos_total: usize = anns.iter().map(|a| a.eos_count()).sum();
    println!("[{:6.1?}] annotations: {} <eos> total", t0.elapsed(), eos_total);

    let mcfg = ModelConfig {
        vocab_size: train_cfg.model_vocab().len(),
        feat_dim: train_cfg.feature_dim + 1,
        enc_hidden: 32,
        embed_dim: 16,
        joint_hidden: 32,
        learning_rate: lr,
        steps: steps1,
        batch_size: 4,
        window_words: 2,
        seed: 7,
        ..ModelConfig::default()
    };
    let t1 = Instant::now();
    let out1 = train(&mcfg, &train_corpus, &[], Stage::Wordpiece, None).unwrap();
    let dt1 = t1.elapsed();
    let losses: Vec<f64> = out1.loss_log.iter().map(|x| x.1).collect();
    let show = |v: &[f64]| {
        let k = v.len() / 10;
        (0..10).map(|i| format!("{:.1}", v[i * k])).collect::<Vec<_>>().join(" ")
    };
    println!(
        "[{:6.1?}] stage1 {} steps in {:.1?} ({:.0} ms/step); loss: {}  final {:.2}",
        t0.elapsed(),
        steps1,
        dt1,
        dt1.as_millis() as f64 / steps1 as f64,
        show(&losses),
        losses.last().unwrap()
    );

    let mcfg2 = ModelConfig { steps: steps2, window_words: 4, ..mcfg.clone() };
    let t2 = Instant::now();
    let out2 = train(&mcfg2, &train_corpus, &anns, Stage::EosJoint, Some(out1.params.clone())).unwrap();
    let losses2: Vec<f64> = out2.loss_log.iter().map(|x| x.1).collect();
    println!(
        "[{:6.1?}] stage2 {} steps in {:.1?}; loss: {} last {:.2}",
        t0.elapsed(),
        steps2,
        t2.elapsed(),
        show(&losses2),
        losses2.last().unwrap()
    );

    // eos_nll trace around the first sentence boundary of the first eval
    // utterance: how fast does confidence build during silence?
    {
        use segstream::model::{encoder_step, joint_eos, prediction_vec, DecoderContext, EncoderState};
        let params = &out2.params;
        let utt = &eval_corpus.utterances[0];
        // first gap >= 1.2 s
        let mut boundary = None;
        for k in 0..utt.words.len() - 1 {
            if utt.words[k + 1].start_s - utt.words[k].end_s >= 1.2 {
                boundary = Some(k);
                break;
            }
        }
        if let Some(k) = boundary {
            let end = utt.words[k].end_s;
            let fs = synthesize_features(utt, &eval_cfg);
            let inputs = fs.model_inputs();
            let vocab = eval_cfg.model_vocab();
            let mut state = EncoderState::zeros(params);
            let mut ctx = DecoderContext::start(2, params.config.start_id());
            let mut trace = Vec::new();
            let end_frame = (end / eval_cfg.frame_step_s) as usize;
            for t in 0..(end_frame + 60).min(fs.num_frames()) {
                let (next, enc) = encoder_step(params, &state, inputs.row(t)).unwrap();
                state = next;
                // greedy ctx update for the probe
                let pred = prediction_vec(params, &ctx).unwrap();
                let wp = segstream::model::joint_wordpiece(params, enc.view(), pred.view());
                let (best, lp) = wp
                    .log_tokens
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap();
                if *lp > wp.log_blank {
                    ctx = ctx.push(best as u32);
                    let _ = &vocab[best];
                }
                if t + 45 >= end_frame {
                    let eos = joint_eos(params, enc.view(), pred.view());
                    trace.push((t as f64 * 0.01 - end, eos.eos_nll()));
                }
            }
            let line: Vec<String> = trace
                .iter()
                .step_by(3)
                .map(|(dt, nll)| format!("{dt:+.2}:{nll:.1}"))
                .collect();
            println!("[{:6.1?}] eos_nll around boundary (dt:nll): {}", t0.elapsed(), line.join(" "));
        }
    }

    // Decode the eval corpus with each segmenter.
    let params = out2.params;
    for (name, kind) in [("fixed", SegmenterKind::Fixed), ("vad", SegmenterKind::Vad), ("e2e", SegmenterKind::E2e)] {
        let t3 = Instant::now();
        let seg_cfg = SegmenterConfig::new(kind);
        let dcfg = DecodeConfig::default();
        let outputs: Vec<DecodeOutput> = eval_corpus
            .utterances
            .iter()
            .map(|utt| {
                let frames = synthesize_features(utt, &eval_cfg);
                let vad = vad_flags(&frames, DEFAULT_VAD_ENERGY_THRESHOLD);
                let mut seg = Segmenter::new(seg_cfg.clone(), eval_cfg.frame_step_s).unwrap();
                let (segments, stats) = decode_utterance(&params, &frames, &vad, &mut seg, &dcfg).unwrap();
                DecodeOutput { id: utt.id.clone(), segments, state_count: stats.state_count, eos_state_count: stats.eos_state_count }
            })
            .collect();
        let rep = aggregate(name, "", &outputs, &eval_corpus).unwrap();
        println!(
            "[{:6.1?}] {name}: WER {:.2}% EOS50 {:?} EOS75 {:?} seg {:.1} states {:.0} excl {} (decode {:.1?})",
            t0.elapsed(),
            rep.wer * 100.0,
            rep.eos50_ms,
            rep.eos75_ms,
            rep.avg_segments,
            rep.avg_states,
            rep.excluded_latencies,
            t3.elapsed()
        );
    }
}
