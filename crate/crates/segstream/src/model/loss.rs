//! Transducer loss over the `T x (U+1)` alignment lattice, in log space,
//! with exact gradients for every parameter.
//!
//! The label-emission component of each node's gradient is scaled by
//! `(1 + lambda)`; blank components are left alone, so `lambda = 0`
//! recovers the exact loss gradient.

use ndarray::{Array1, Array2, Axis};

use super::encoder::{encoder_backward, encoder_forward};
use super::joint::{logsumexp, softplus};
use super::prediction::embed_concat;
use super::{JointParams, ModelError, ModelGrads, ModelParams};

/// Which joint layer the lattice reads its posteriors from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Wordpiece,
    Eos,
}

/// How far gradients propagate. `JointOnly` stops at the joint layer inputs
/// (used when fine-tuning the eos joint with everything else frozen).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    All,
    JointOnly,
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

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct LatticeForward {
    t_len: usize,
    u_len: usize,
    /// Contexts per target prefix, each of length K.
    ctxs: Vec<Vec<u32>>,
    enc_trace: super::encoder::EncoderTrace,
    concats: Array2<f64>,
    pred_mat: Array2<f64>,
    hidden: Array2<f64>,
    tok_logits: Array2<f64>,
    blank_logits: Array1<f64>,
    lse: Array1<f64>,
    log_pb: Array1<f64>,
    log_py: Array1<f64>,
    alpha: Array2<f64>,
    beta: Array2<f64>,
    loss: f64,
}

fn select_joint<'a>(params: &'a ModelParams, kind: JointKind) -> &'a JointParams {
    match kind {
        JointKind::Wordpiece => &params.joint_wp,
        JointKind::Eos => &params.joint_eos,
    }
}

fn validate_targets(params: &ModelParams, targets: &[u32], kind: JointKind) -> Result<(), ModelError> {
    let max = match kind {
        JointKind::Wordpiece => params.config.vocab_size as u32 - 1,
        JointKind::Eos => params.config.vocab_size as u32,
    };
    for &t in targets {
        if t > max {
            return Err(ModelError::TokenOutOfRange { id: t, max });
        }
    }
    Ok(())
}

/// Context token lists for every target prefix, seeded with `init_ctx`
/// (the tokens emitted before these frames). `<eos>` labels never enter
/// the context, matching inference where the eos joint is probe-only.
fn build_contexts(params: &ModelParams, targets: &[u32], init_ctx: &[u32]) -> Vec<Vec<u32>> {
    let k = params.config.ctx_len;
    let eos = params.config.eos_id();
    let mut ctxs = Vec::with_capacity(targets.len() + 1);
    let mut cur = init_ctx.to_vec();
    ctxs.push(cur.clone());
    for &tok in targets {
        if tok != eos {
            cur.rotate_left(1);
            cur[k - 1] = tok;
        }
        ctxs.push(cur.clone());
    }
    ctxs
}

fn lattice_forward(
    params: &ModelParams,
    frames: &Array2<f64>,
    targets: &[u32],
    kind: JointKind,
    init_ctx: &[u32],
) -> Result<LatticeForward, ModelError> {
    let t_len = frames.nrows();
    if t_len == 0 {
        return Err(ModelError::EmptyFrames);
    }
    if frames.ncols() != params.config.feat_dim {
        return Err(ModelError::DimMismatch(format!(
            "frame dim {} != feat_dim {}",
            frames.ncols(),
            params.config.feat_dim
        )));
    }
    if init_ctx.len() != params.config.ctx_len {
        return Err(ModelError::DimMismatch(format!(
            "initial context length {} != K {}",
            init_ctx.len(),
            params.config.ctx_len
        )));
    }
    validate_targets(params, targets, kind)?;
    let joint = select_joint(params, kind);
    let u_len = targets.len();
    let rows = u_len + 1;
    let n_nodes = t_len * rows;

    let enc_trace = encoder_forward(params, frames);

    let ctxs = build_contexts(params, targets, init_ctx);
    let k_e = params.config.ctx_len * params.config.embed_dim;
    let mut concats = Array2::zeros((rows, k_e));
    for (u, ctx) in ctxs.iter().enumerate() {
        concats.row_mut(u).assign(&embed_concat(params, ctx)?);
    }
    let pred_mat = concats.dot(&params.pred.proj.t()) + &params.pred.bias;

    let pre_enc = enc_trace.output.dot(&joint.w_enc.t());
    let pre_pred = pred_mat.dot(&joint.w_pred.t());

    let j_dim = params.config.joint_hidden;
    let mut hidden = Array2::zeros((n_nodes, j_dim));
    for t in 0..t_len {
        for u in 0..rows {
            let n = t * rows + u;
            for j in 0..j_dim {
                hidden[[n, j]] = (pre_enc[[t, j]] + pre_pred[[u, j]] + joint.b_hidden[j]).tanh();
            }
        }
    }

    let tok_logits = hidden.dot(&joint.w_tok.t()) + &joint.b_tok;
    let blank_logits = hidden.dot(&joint.w_blank) + joint.b_blank[0];

    let mut lse = Array1::zeros(n_nodes);
    let mut log_pb = Array1::zeros(n_nodes);
    let mut log_py = Array1::from_elem(n_nodes, f64::NEG_INFINITY);
    for n in 0..n_nodes {
        lse[n] = logsumexp(tok_logits.row(n));
        log_pb[n] = -softplus(-blank_logits[n]);
        let u = n % rows;
        if u < u_len {
            let y = targets[u] as usize;
            log_py[n] = -softplus(blank_logits[n]) + tok_logits[[n, y]] - lse[n];
        }
    }

    // Forward variable over the lattice.
    let mut alpha = Array2::from_elem((t_len, rows), f64::NEG_INFINITY);
    alpha[[0, 0]] = 0.0;
    for t in 0..t_len {
        for u in 0..rows {
            if t == 0 && u == 0 {
                continue;
            }
            let mut v = f64::NEG_INFINITY;
            if t > 0 {
                v = logadd(v, alpha[[t - 1, u]] + log_pb[(t - 1) * rows + u]);
            }
            if u > 0 {
                v = logadd(v, alpha[[t, u - 1]] + log_py[t * rows + u - 1]);
            }
            alpha[[t, u]] = v;
        }
    }
    let loss = -(alpha[[t_len - 1, u_len]] + log_pb[(t_len - 1) * rows + u_len]);

    // Backward variable.
    let mut beta = Array2::from_elem((t_len, rows), f64::NEG_INFINITY);
    beta[[t_len - 1, u_len]] = log_pb[(t_len - 1) * rows + u_len];
    for t in (0..t_len).rev() {
        for u in (0..rows).rev() {
            if t == t_len - 1 && u == u_len {
                continue;
            }
            let mut v = f64::NEG_INFINITY;
            if t + 1 < t_len {
                v = logadd(v, log_pb[t * rows + u] + beta[[t + 1, u]]);
            }
            if u < u_len {
                v = logadd(v, log_py[t * rows + u] + beta[[t, u + 1]]);
            }
            beta[[t, u]] = v;
        }
    }

    Ok(LatticeForward {
        t_len,
        u_len,
        ctxs,
        enc_trace,
        concats,
        pred_mat,
        hidden,
        tok_logits,
        blank_logits,
        lse,
        log_pb,
        log_py,
        alpha,
        beta,
        loss,
    })
}

/// Negative log marginal probability of `targets` given `frames`, summed
/// over all monotonic blank/label alignments. Gradients cover every tensor;
/// FastEmit scales the label components by `(1 + lambda)`.
pub fn rnnt_loss(
    params: &ModelParams,
    frames: &Array2<f64>,
    targets: &[u32],
    kind: JointKind,
    lambda: f64,
) -> Result<(f64, ModelGrads), ModelError> {
    let start = start_ctx(params);
    rnnt_loss_scoped(params, frames, targets, kind, lambda, GradScope::All, &start)
}

fn start_ctx(params: &ModelParams) -> Vec<u32> {
    vec![params.config.start_id(); params.config.ctx_len]
}

/// Loss only; skips all gradient work.
pub fn rnnt_loss_value(
    params: &ModelParams,
    frames: &Array2<f64>,
    targets: &[u32],
    kind: JointKind,
) -> Result<f64, ModelError> {
    Ok(lattice_forward(params, frames, targets, kind, &start_ctx(params))?.loss)
}

pub fn rnnt_loss_scoped(
    params: &ModelParams,
    frames: &Array2<f64>,
    targets: &[u32],
    kind: JointKind,
    lambda: f64,
    scope: GradScope,
    init_ctx: &[u32],
) -> Result<(f64, ModelGrads), ModelError> {
    let fwd = lattice_forward(params, frames, targets, kind, init_ctx)?;
    let joint = select_joint(params, kind);
    let t_len = fwd.t_len;
    let u_len = fwd.u_len;
    let rows = u_len + 1;
    let n_nodes = t_len * rows;
    let n_tok = joint.w_tok.nrows();
    let log_z = -fwd.loss;

    // Transition posteriors and their chain into the HAT logits.
    let mut d_tok = Array2::zeros((n_nodes, n_tok));
    let mut d_blank = Array1::zeros(n_nodes);
    for t in 0..t_len {
        for u in 0..rows {
            let n = t * rows + u;
            let g_b = if u == u_len && t == t_len - 1 {
                (fwd.alpha[[t, u]] + fwd.log_pb[n] - log_z).exp()
            } else if t + 1 < t_len {
                (fwd.alpha[[t, u]] + fwd.log_pb[n] + fwd.beta[[t + 1, u]] - log_z).exp()
            } else {
                0.0
            };
            let g_y = if u < u_len {
                (fwd.alpha[[t, u]] + fwd.log_py[n] + fwd.beta[[t, u + 1]] - log_z).exp()
            } else {
                0.0
            };
            let dlpb = -g_b;
            let dlpy = -(1.0 + lambda) * g_y;

            let sb = sigmoid(fwd.blank_logits[n]);
            d_blank[n] = dlpb * (1.0 - sb) - dlpy * sb;
            if u < u_len {
                let y = targets[u] as usize;
                // d log P(y) / d logit_j = delta_{jy} - softmax_j
                let lse = fwd.lse[n];
                for j in 0..n_tok {
                    let sm = (fwd.tok_logits[[n, j]] - lse).exp();
                    d_tok[[n, j]] = -dlpy * sm;
                }
                d_tok[[n, y]] += dlpy;
            }
        }
    }

    // Joint-layer gradients.
    let mut gp = params.clone();
    gp.visit_mut(|_, data| data.fill(0.0));
    {
        let gj = match kind {
            JointKind::Wordpiece => &mut gp.joint_wp,
            JointKind::Eos => &mut gp.joint_eos,
        };
        gj.w_tok += &d_tok.t().dot(&fwd.hidden);
        gj.b_tok += &d_tok.sum_axis(Axis(0));
        gj.w_blank += &fwd.hidden.t().dot(&d_blank);
        gj.b_blank[0] += d_blank.sum();

        let mut d_hidden = d_tok.dot(&joint.w_tok);
        for n in 0..n_nodes {
            for j in 0..joint.w_blank.len() {
                d_hidden[[n, j]] += d_blank[n] * joint.w_blank[j];
                // tanh'
                let h = fwd.hidden[[n, j]];
                d_hidden[[n, j]] *= 1.0 - h * h;
            }
        }

        // Split node gradients back onto the time and label axes.
        let j_dim = params.config.joint_hidden;
        let mut d_pre_enc = Array2::zeros((t_len, j_dim));
        let mut d_pre_pred = Array2::zeros((rows, j_dim));
        for t in 0..t_len {
            for u in 0..rows {
                let n = t * rows + u;
                for j in 0..j_dim {
                    let v = d_hidden[[n, j]];
                    d_pre_enc[[t, j]] += v;
                    d_pre_pred[[u, j]] += v;
                }
            }
        }
        gj.b_hidden += &d_pre_enc.sum_axis(Axis(0));
        gj.w_enc += &d_pre_enc.t().dot(&fwd.enc_trace.output);
        gj.w_pred += &d_pre_pred.t().dot(&fwd.pred_mat);

        if scope == GradScope::All {
            // Through the prediction network.
            let d_pred = d_pre_pred.dot(&joint.w_pred);
            gp.pred.proj += &d_pred.t().dot(&fwd.concats);
            gp.pred.bias += &d_pred.sum_axis(Axis(0));
            let d_concat = d_pred.dot(&params.pred.proj);
            let e = params.config.embed_dim;
            for (u, ctx) in fwd.ctxs.iter().enumerate() {
                for (k, &tok) in ctx.iter().enumerate() {
                    for j in 0..e {
                        gp.pred.embed[[tok as usize, j]] += d_concat[[u, k * e + j]];
                    }
                }
            }

            // Through the encoder.
            let d_enc = d_pre_enc.dot(&joint.w_enc);
            let enc_grads = encoder_backward(params, frames, &fwd.enc_trace, &d_enc);
            for (li, (d_wx, d_wh, d_b)) in enc_grads.layers.into_iter().enumerate() {
                gp.enc[li].wx += &d_wx;
                gp.enc[li].wh += &d_wh;
                gp.enc[li].b += &d_b;
            }
        }
    }

    Ok((fwd.loss, ModelGrads { flat: gp.flatten() }))
}

/// Expected emission frame of each target label under the alignment
/// posterior; used to verify the FastEmit direction.
pub fn label_expected_frames(
    params: &ModelParams,
    frames: &Array2<f64>,
    targets: &[u32],
    kind: JointKind,
) -> Result<Vec<f64>, ModelError> {
    let fwd = lattice_forward(params, frames, targets, kind, &start_ctx(params))?;
    let rows = fwd.u_len + 1;
    let log_z = -fwd.loss;
    let mut out = Vec::with_capacity(fwd.u_len);
    for u in 0..fwd.u_len {
        let mut num = 0.0;
        let mut den = 0.0;
        for t in 0..fwd.t_len {
            let n = t * rows + u;
            let g = (fwd.alpha[[t, u]] + fwd.log_py[n] + fwd.beta[[t, u + 1]] - log_z).exp();
            num += t as f64 * g;
            den += g;
        }
        out.push(if den > 0.0 { num / den } else { f64::NAN });
    }
    Ok(out)
}
