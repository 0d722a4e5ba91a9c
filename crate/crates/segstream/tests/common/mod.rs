//! Independent oracles shared by the integration suites. Everything here
//! goes through the public model API (per-step encoder, prediction vectors,
//! joint posteriors) and enumerates alignments directly, so it never touches
//! the lattice or beam implementations it is used to check.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segstream::model::{
    encoder_step, joint_eos, joint_wordpiece, prediction_vec, DecoderContext, EncoderState,
    JointKind, ModelConfig, ModelParams,
};

pub fn tiny_config(vocab_size: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size,
        feat_dim: 3,
        enc_hidden: 4,
        ctx_len: 2,
        embed_dim: 3,
        joint_hidden: 4,
        seed,
        ..ModelConfig::default()
    }
}

pub fn tiny_params(vocab_size: usize, seed: u64) -> ModelParams {
    let vocab = (0..vocab_size).map(|i| format!("w{i}")).collect();
    ModelParams::init(&tiny_config(vocab_size, seed), vocab).unwrap()
}

pub fn random_frames(t_len: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((t_len, dim), |_| rng.random::<f64>() * 2.0 - 1.0)
}

/// Encoder outputs for every frame, via the public streaming step.
pub fn encode_all(params: &ModelParams, frames: &Array2<f64>) -> Vec<Array1<f64>> {
    let mut state = EncoderState::zeros(params);
    let mut out = Vec::with_capacity(frames.nrows());
    for t in 0..frames.nrows() {
        let (next, enc) = encoder_step(params, &state, frames.row(t)).unwrap();
        state = next;
        out.push(enc);
    }
    out
}

fn logadd(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Transducer loss by brute-force path enumeration: the log-sum over every
/// monotonic blank/label alignment of `targets` to the frames.
pub fn enumeration_loss(
    params: &ModelParams,
    frames: &Array2<f64>,
    targets: &[u32],
    kind: JointKind,
) -> f64 {
    let t_len = frames.nrows();
    let u_len = targets.len();
    let enc = encode_all(params, frames);

    // Contexts per prefix; <eos> labels stay out of the context.
    let k = params.config.ctx_len;
    let eos = params.config.eos_id();
    let mut ctxs = Vec::with_capacity(u_len + 1);
    let mut cur = DecoderContext::start(k, params.config.start_id());
    ctxs.push(cur.clone());
    for &tok in targets {
        if tok != eos {
            cur = cur.push(tok);
        }
        ctxs.push(cur.clone());
    }
    let preds: Vec<Array1<f64>> =
        ctxs.iter().map(|c| prediction_vec(params, c).unwrap()).collect();

    let post = |t: usize, u: usize| match kind {
        JointKind::Wordpiece => joint_wordpiece(params, enc[t].view(), preds[u].view()),
        JointKind::Eos => joint_eos(params, enc[t].view(), preds[u].view()),
    };

    // Depth-first walk over all paths, summing complete-path log probs.
    fn walk(
        t: usize,
        u: usize,
        acc: f64,
        t_len: usize,
        u_len: usize,
        targets: &[u32],
        post: &dyn Fn(usize, usize) -> segstream::model::JointPosteriors,
        total: &mut f64,
    ) {
        let p = post(t, u);
        if u < u_len {
            let lab = acc + p.log_tokens[targets[u] as usize];
            walk(t, u + 1, lab, t_len, u_len, targets, post, total);
        }
        let blank = acc + p.log_blank;
        if t + 1 < t_len {
            walk(t + 1, u, blank, t_len, u_len, targets, post, total);
        } else if u == u_len {
            *total = logadd(*total, blank);
        }
    }

    let mut total = f64::NEG_INFINITY;
    walk(0, 0, 0.0, t_len, u_len, targets, &post, &mut total);
    -total
}

/// Best decode by exhaustive search: every way of emitting up to `depth`
/// tokens per frame, scored with the same public joint API the beam uses.
/// Ties break like the decoder: lowest nll, then lexicographic tokens.
pub fn exhaustive_best_decode(
    params: &ModelParams,
    enc: &[Array1<f64>],
    depth: usize,
) -> (Vec<u32>, f64) {
    struct Walker<'a> {
        params: &'a ModelParams,
        enc: &'a [Array1<f64>],
        depth: usize,
        best: Option<(f64, Vec<u32>)>,
    }

    impl Walker<'_> {
        fn go(&mut self, t: usize, emitted_here: usize, tokens: &mut Vec<u32>, ctx: DecoderContext, nll: f64) {
            if t == self.enc.len() {
                let cand = (nll, tokens.clone());
                let better = match &self.best {
                    None => true,
                    Some(b) => cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1),
                };
                if better {
                    self.best = Some(cand);
                }
                return;
            }
            let pred = prediction_vec(self.params, &ctx).unwrap();
            let post = joint_wordpiece(self.params, self.enc[t].view(), pred.view());
            // Blank: close this frame.
            self.go(t + 1, 0, tokens, ctx.clone(), nll - post.log_blank);
            if emitted_here < self.depth {
                for v in 0..self.params.config.vocab_size as u32 {
                    tokens.push(v);
                    self.go(t, emitted_here + 1, tokens, ctx.push(v), nll - post.log_tokens[v as usize]);
                    tokens.pop();
                }
            }
        }
    }

    let mut w = Walker { params, enc, depth, best: None };
    let ctx = DecoderContext::start(params.config.ctx_len, params.config.start_id());
    w.go(0, 0, &mut Vec::new(), ctx, 0.0);
    let (nll, tokens) = w.best.expect("at least the all-blank path");
    (tokens, nll)
}
