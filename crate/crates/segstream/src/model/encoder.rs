//! Two-layer gated recurrent encoder with manual backprop through time.

use ndarray::{Array1, Array2, ArrayView1};

use super::{GruLayer, ModelError, ModelParams};

/// Per-layer recurrent hidden vectors; `reset` is the all-zero state.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub h: Vec<Array1<f64>>,
}

impl EncoderState {
    pub fn zeros(params: &ModelParams) -> EncoderState {
        EncoderState { h: vec![Array1::zeros(params.config.enc_hidden); params.enc.len()] }
    }

    pub fn reset(&mut self) {
        for h in &mut self.h {
            h.fill(0.0);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One GRU cell step. Returns the new hidden state; when `trace` is given,
/// the gate activations needed for backprop are appended to it.
fn gru_cell(
    layer: &GruLayer,
    x: ArrayView1<f64>,
    h_prev: &Array1<f64>,
    trace: Option<&mut LayerTrace>,
) -> Array1<f64> {
    let hd = h_prev.len();
    let a = layer.wx.dot(&x) + &layer.b;
    let g = layer.wh.dot(h_prev);
    let mut z = Array1::zeros(hd);
    let mut r = Array1::zeros(hd);
    let mut n = Array1::zeros(hd);
    let mut g_n = Array1::zeros(hd);
    for i in 0..hd {
        z[i] = sigmoid(a[i] + g[i]);
        r[i] = sigmoid(a[hd + i] + g[hd + i]);
        g_n[i] = g[2 * hd + i];
        n[i] = (a[2 * hd + i] + r[i] * g_n[i]).tanh();
    }
    let mut h = Array1::zeros(hd);
    for i in 0..hd {
        h[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
    }
    if let Some(t) = trace {
        t.z.push(z);
        t.r.push(r);
        t.n.push(n);
        t.g_n.push(g_n);
        t.h.push(h.clone());
    }
    h
}

/// Strictly causal single-frame step: the output depends only on the frame
/// and the carried state.
pub fn encoder_step(
    params: &ModelParams,
    state: &EncoderState,
    frame: ArrayView1<f64>,
) -> Result<(EncoderState, Array1<f64>), ModelError> {
    if frame.len() != params.config.feat_dim {
        return Err(ModelError::DimMismatch(format!(
            "frame dim {} != feat_dim {}",
            frame.len(),
            params.config.feat_dim
        )));
    }
    let mut new_state = state.clone();
    let mut input = frame.to_owned();
    for (li, layer) in params.enc.iter().enumerate() {
        let h = gru_cell(layer, input.view(), &state.h[li], None);
        input = h.clone();
        new_state.h[li] = h;
    }
    Ok((new_state, input))
}

/// Activations of one layer over a whole sequence, for backprop.
#[derive(Debug, Default)]
pub(crate) struct LayerTrace {
    pub z: Vec<Array1<f64>>,
    pub r: Vec<Array1<f64>>,
    pub n: Vec<Array1<f64>>,
    pub g_n: Vec<Array1<f64>>,
    pub h: Vec<Array1<f64>>,
}

#[derive(Debug)]
pub(crate) struct EncoderTrace {
    pub layers: Vec<LayerTrace>,
    /// `[T, enc_hidden]` outputs of the top layer.
    pub output: Array2<f64>,
}

/// Run the encoder over all frames from the zero state, recording
/// activations.
pub(crate) fn encoder_forward(params: &ModelParams, frames: &Array2<f64>) -> EncoderTrace {
    let t_len = frames.nrows();
    let hd = params.config.enc_hidden;
    let mut layers: Vec<LayerTrace> = params.enc.iter().map(|_| LayerTrace::default()).collect();
    let mut output = Array2::zeros((t_len, hd));
    let mut h_states: Vec<Array1<f64>> = vec![Array1::zeros(hd); params.enc.len()];
    for t in 0..t_len {
        let mut input = frames.row(t).to_owned();
        for (li, layer) in params.enc.iter().enumerate() {
            let h = gru_cell(layer, input.view(), &h_states[li], Some(&mut layers[li]));
            input = h.clone();
            h_states[li] = h;
        }
        output.row_mut(t).assign(&input);
    }
    EncoderTrace { layers, output }
}

pub(crate) struct EncoderGrads {
    pub layers: Vec<(Array2<f64>, Array2<f64>, Array1<f64>)>, // (d_wx, d_wh, d_b)
}

/// Backprop through time. `d_output` is the loss gradient of the top-layer
/// outputs, `[T, enc_hidden]`.
pub(crate) fn encoder_backward(
    params: &ModelParams,
    frames: &Array2<f64>,
    trace: &EncoderTrace,
    d_output: &Array2<f64>,
) -> EncoderGrads {
    let t_len = frames.nrows();
    let hd = params.config.enc_hidden;
    let n_layers = params.enc.len();

    let mut grads: Vec<(Array2<f64>, Array2<f64>, Array1<f64>)> = params
        .enc
        .iter()
        .map(|l| {
            (
                Array2::zeros(l.wx.raw_dim()),
                Array2::zeros(l.wh.raw_dim()),
                Array1::zeros(l.b.raw_dim()),
            )
        })
        .collect();

    // Upper layer first; d_input of layer li feeds d_output of layer li-1.
    let mut d_out_cur = d_output.clone();
    for li in (0..n_layers).rev() {
        let layer = &params.enc[li];
        let tr = &trace.layers[li];
        let in_dim = layer.wx.ncols();

        // Input sequence of this layer.
        let input_at = |t: usize| -> ArrayView1<f64> {
            if li == 0 {
                frames.row(t)
            } else {
                trace.layers[li - 1].h[t].view()
            }
        };

        let mut da_all = Array2::zeros((t_len, 3 * hd));
        let mut dg_all = Array2::zeros((t_len, 3 * hd));
        let mut carry = Array1::zeros(hd);
        for t in (0..t_len).rev() {
            let z = &tr.z[t];
            let r = &tr.r[t];
            let n = &tr.n[t];
            let g_n = &tr.g_n[t];
            let h_prev: Array1<f64> = if t == 0 { Array1::zeros(hd) } else { tr.h[t - 1].clone() };

            let mut dh = carry.clone();
            dh += &d_out_cur.row(t);

            let mut da = da_all.row_mut(t);
            let mut dg = dg_all.row_mut(t);
            for i in 0..hd {
                let dz = dh[i] * (h_prev[i] - n[i]);
                let dn = dh[i] * (1.0 - z[i]);
                let dpre_n = dn * (1.0 - n[i] * n[i]);
                let dr = dpre_n * g_n[i];
                let dg_n = dpre_n * r[i];
                let dpre_z = dz * z[i] * (1.0 - z[i]);
                let dpre_r = dr * r[i] * (1.0 - r[i]);
                da[i] = dpre_z;
                da[hd + i] = dpre_r;
                da[2 * hd + i] = dpre_n;
                dg[i] = dpre_z;
                dg[hd + i] = dpre_r;
                dg[2 * hd + i] = dg_n;
            }
            // Recurrent gradient into h_{t-1}.
            let dg_vec = dg_all.row(t).to_owned();
            let rec = layer.wh.t().dot(&dg_vec);
            for i in 0..hd {
                carry[i] = dh[i] * z[i] + rec[i];
            }
        }

        // Batched weight and input gradients.
        let mut inputs = Array2::zeros((t_len, in_dim));
        let mut h_prevs = Array2::zeros((t_len, hd));
        for t in 0..t_len {
            inputs.row_mut(t).assign(&input_at(t));
            if t > 0 {
                h_prevs.row_mut(t).assign(&tr.h[t - 1]);
            }
        }
        grads[li].0 += &da_all.t().dot(&inputs);
        grads[li].1 += &dg_all.t().dot(&h_prevs);
        grads[li].2 += &da_all.sum_axis(ndarray::Axis(0));

        if li > 0 {
            d_out_cur = da_all.dot(&layer.wx);
        }
    }

    EncoderGrads { layers: grads }
}
