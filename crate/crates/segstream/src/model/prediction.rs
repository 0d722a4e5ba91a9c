//! Stateless prediction network: embeds the last `K` emitted tokens and
//! projects their concatenation.

use ndarray::Array1;

use super::{ModelError, ModelParams};

/// The last `K` non-blank tokens, newest last, padded at the front with the
/// start symbol.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DecoderContext {
    tokens: Vec<u32>,
}

impl DecoderContext {
    pub fn start(ctx_len: usize, start_id: u32) -> DecoderContext {
        DecoderContext { tokens: vec![start_id; ctx_len] }
    }

    pub fn from_tokens(tokens: Vec<u32>) -> DecoderContext {
        DecoderContext { tokens }
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Shift in a newly emitted token.
    pub fn push(&self, token: u32) -> DecoderContext {
        let mut tokens = self.tokens.clone();
        tokens.rotate_left(1);
        *tokens.last_mut().expect("non-empty context") = token;
        DecoderContext { tokens }
    }
}

/// Concatenated context embeddings projected to the joint input dim.
/// Depends only on the last `K` tokens.
pub fn prediction_vec(params: &ModelParams, ctx: &DecoderContext) -> Result<Array1<f64>, ModelError> {
    let k = params.config.ctx_len;
    if ctx.tokens().len() != k {
        return Err(ModelError::DimMismatch(format!(
            "context length {} != K {}",
            ctx.tokens().len(),
            k
        )));
    }
    let concat = embed_concat(params, ctx.tokens())?;
    Ok(params.pred.proj.dot(&concat) + &params.pred.bias)
}

pub(crate) fn embed_concat(params: &ModelParams, tokens: &[u32]) -> Result<Array1<f64>, ModelError> {
    let e = params.config.embed_dim;
    let rows = params.pred.embed.nrows() as u32;
    let mut concat = Array1::zeros(tokens.len() * e);
    for (i, &tok) in tokens.iter().enumerate() {
        if tok >= rows {
            return Err(ModelError::TokenOutOfRange { id: tok, max: rows - 1 });
        }
        let row = params.pred.embed.row(tok as usize);
        for j in 0..e {
            concat[i * e + j] = row[j];
        }
    }
    Ok(concat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny_params() -> ModelParams {
        let cfg = ModelConfig {
            vocab_size: 3,
            feat_dim: 3,
            enc_hidden: 4,
            ctx_len: 2,
            embed_dim: 3,
            joint_hidden: 4,
            seed: 11,
            ..ModelConfig::default()
        };
        ModelParams::init(&cfg, vec!["a".into(), "b".into(), "c".into()]).unwrap()
    }

    #[test]
    fn same_suffix_gives_same_vector() {
        let p = tiny_params();
        // Histories "a b" and "c a b" share the last-2 suffix [a, b].
        let ctx1 = DecoderContext::start(2, p.config.start_id()).push(0).push(1);
        let ctx2 = DecoderContext::start(2, p.config.start_id()).push(2).push(0).push(1);
        assert_eq!(ctx1, ctx2);
        assert_eq!(prediction_vec(&p, &ctx1).unwrap(), prediction_vec(&p, &ctx2).unwrap());
    }

    #[test]
    fn start_padded_context_is_valid_and_finite() {
        let p = tiny_params();
        let ctx = DecoderContext::start(2, p.config.start_id());
        let v = prediction_vec(&p, &ctx).unwrap();
        assert!(v.iter().all(|x| x.is_finite()));
        for tok in 0..=p.config.vocab_size as u32 {
            let v = prediction_vec(&p, &ctx.push(tok)).unwrap();
            assert!(v.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn out_of_range_token_is_rejected() {
        let p = tiny_params();
        let ctx = DecoderContext::from_tokens(vec![0, 99]);
        assert!(matches!(
            prediction_vec(&p, &ctx),
            Err(ModelError::TokenOutOfRange { id: 99, .. })
        ));
    }
}
