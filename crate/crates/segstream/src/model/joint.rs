//! Joint layers with HAT blank factorization: a sigmoid gate carries the
//! blank probability and the token softmax shares the remaining mass.

use ndarray::{Array1, ArrayView1};

use super::{JointParams, ModelParams};

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn logsumexp(xs: ArrayView1<f64>) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-probabilities of one joint evaluation. For the eos joint the last
/// token entry is `<eos>`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPosteriors {
    pub log_blank: f64,
    pub log_tokens: Array1<f64>,
}

impl JointPosteriors {
    /// `-ln P(<eos>)`; only meaningful for the eos joint.
    pub fn eos_nll(&self) -> f64 {
        -*self.log_tokens.last().expect("non-empty token set")
    }
}

pub(crate) fn joint_forward(
    joint: &JointParams,
    enc_vec: ArrayView1<f64>,
    pred_vec: ArrayView1<f64>,
) -> JointPosteriors {
    let mut hidden = joint.w_enc.dot(&enc_vec) + joint.w_pred.dot(&pred_vec) + &joint.b_hidden;
    hidden.mapv_inplace(f64::tanh);
    let blank_logit = joint.w_blank.dot(&hidden) + joint.b_blank[0];
    let tok_logits = joint.w_tok.dot(&hidden) + &joint.b_tok;
    let lse = logsumexp(tok_logits.view());
    let log_blank = -softplus(-blank_logit);
    let log_nonblank = -softplus(blank_logit);
    JointPosteriors { log_blank, log_tokens: tok_logits.mapv(|x| log_nonblank + x - lse) }
}

/// Wordpiece joint: log distribution over `{blank} ∪ vocab`.
pub fn joint_wordpiece(
    params: &ModelParams,
    enc_vec: ArrayView1<f64>,
    pred_vec: ArrayView1<f64>,
) -> JointPosteriors {
    joint_forward(&params.joint_wp, enc_vec, pred_vec)
}

/// End-of-segment joint: log distribution over `{blank} ∪ vocab ∪ {<eos>}`.
pub fn joint_eos(
    params: &ModelParams,
    enc_vec: ArrayView1<f64>,
    pred_vec: ArrayView1<f64>,
) -> JointPosteriors {
    joint_forward(&params.joint_eos, enc_vec, pred_vec)
}
