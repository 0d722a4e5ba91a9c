//! Toy streaming transducer with two joint layers.
//!
//! The encoder is a 2-layer gated recurrent net stepped frame by frame; the
//! prediction network is stateless over the last `K` emitted tokens. Token
//! posteriors come from a wordpiece joint layer; a structurally identical
//! end-of-segment joint layer adds one `<eos>` output row and is probed at
//! inference without touching hypothesis scores.

mod encoder;
mod joint;
mod loss;
mod prediction;
mod train;

pub use encoder::{encoder_step, EncoderState};
pub use joint::{joint_eos, joint_wordpiece, JointPosteriors};
pub use loss::{label_expected_frames, rnnt_loss, rnnt_loss_value, GradScope, JointKind};
pub use prediction::{prediction_vec, DecoderContext};
pub use train::{train, Stage, TrainOutcome};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("token id {id} out of range (max {max})")]
    TokenOutOfRange { id: u32, max: u32 },
    #[error("frames are empty")]
    EmptyFrames,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("stage 2 requires a stage-1 checkpoint")]
    MissingCheckpoint,
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("transcript mismatch for utterance {0}")]
    TranscriptMismatch(String),
    #[error("bad checkpoint: {0}")]
    CheckpointFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Hyperparameters of the toy transducer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of word tokens (excludes blank, start padding, and `<eos>`).
    pub vocab_size: usize,
    /// Encoder input width (feature dim + energy channel).
    pub feat_dim: usize,
    /// Hidden size of each of the two recurrent encoder layers.
    pub enc_hidden: usize,
    /// Number of previous tokens the stateless prediction network sees.
    pub ctx_len: usize,
    pub embed_dim: usize,
    pub joint_hidden: usize,
    pub fastemit_lambda: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Words per training window; long utterances are sliced into windows
    /// (with their trailing silences) before batching.
    pub window_words: usize,
    /// When false (default), stage 2 updates only the eos joint layer.
    pub stage2_update_all: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: crate::corpus::DEFAULT_VOCAB.len(),
            feat_dim: 9,
            enc_hidden: 64,
            ctx_len: 2,
            embed_dim: 32,
            joint_hidden: 64,
            fastemit_lambda: 5e-3,
            learning_rate: 1e-3,
            steps: 2000,
            batch_size: 4,
            window_words: 14,
            stage2_update_all: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("feat_dim", self.feat_dim),
            ("enc_hidden", self.enc_hidden),
            ("ctx_len", self.ctx_len),
            ("embed_dim", self.embed_dim),
            ("joint_hidden", self.joint_hidden),
            ("batch_size", self.batch_size),
            ("window_words", self.window_words),
        ] {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.fastemit_lambda < 0.0 {
            return Err(ModelError::InvalidConfig("fastemit_lambda must be >= 0".into()));
        }
        Ok(())
    }

    /// Embedding row used to pad empty decoder context.
    pub fn start_id(&self) -> u32 {
        self.vocab_size as u32
    }

    /// Label id of `<eos>` in the eos joint's token logits.
    pub fn eos_id(&self) -> u32 {
        self.vocab_size as u32
    }
}

/// One gated recurrent layer; gate order in rows is update, reset,
/// candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    pub wx: Array2<f64>,
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionParams {
    /// `[vocab_size + 1, embed_dim]`; the last row embeds the start symbol.
    pub embed: Array2<f64>,
    /// `[embed_dim, ctx_len * embed_dim]`
    pub proj: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointParams {
    pub w_enc: Array2<f64>,
    pub w_pred: Array2<f64>,
    pub b_hidden: Array1<f64>,
    pub w_blank: Array1<f64>,
    /// Scalar blank bias, kept as a length-1 tensor for uniform plumbing.
    pub b_blank: Array1<f64>,
    /// `[n_tokens, joint_hidden]`; the eos joint has one extra row.
    pub w_tok: Array2<f64>,
    pub b_tok: Array1<f64>,
}

/// All trainable tensors plus the config and vocabulary they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub enc: Vec<GruLayer>,
    pub pred: PredictionParams,
    pub joint_wp: JointParams,
    pub joint_eos: JointParams,
}

fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    let normal = rand_distr::StandardNormal;
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(normal) * scale)
}

impl ModelParams {
    /// Seeded random initialization. The blank bias starts positive so early
    /// training favors blank on the mostly-blank lattice.
    pub fn init(config: &ModelConfig, vocab: Vec<String>) -> Result<ModelParams, ModelError> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(ModelError::VocabMismatch(format!(
                "config says {} tokens, vocabulary has {}",
                config.vocab_size,
                vocab.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6d6f_64656c_696e69);
        let h = config.enc_hidden;
        let e = config.embed_dim;
        let j = config.joint_hidden;
        let v = config.vocab_size;
        let mut enc = Vec::with_capacity(2);
        for layer in 0..2 {
            let input = if layer == 0 { config.feat_dim } else { h };
            // Positive update-gate bias so the fresh cell retains state over
            // word-length spans instead of halving it every frame.
            let mut b = Array1::zeros(3 * h);
            for i in 0..h {
                b[i] = 1.0;
            }
            enc.push(GruLayer {
                wx: init_matrix(&mut rng, 3 * h, input, 1.0 / (input as f64).sqrt()),
                wh: init_matrix(&mut rng, 3 * h, h, 1.0 / (h as f64).sqrt()),
                b,
            });
        }
        let pred = PredictionParams {
            embed: init_matrix(&mut rng, v + 1, e, 1.0),
            proj: init_matrix(&mut rng, e, config.ctx_len * e, 1.0 / ((config.ctx_len * e) as f64).sqrt()),
            bias: Array1::zeros(e),
        };
        let mut make_joint = |n_tok: usize| JointParams {
            w_enc: init_matrix(&mut rng, j, h, 1.0 / (h as f64).sqrt()),
            w_pred: init_matrix(&mut rng, j, e, 1.0 / (e as f64).sqrt()),
            b_hidden: Array1::zeros(j),
            w_blank: init_matrix(&mut rng, 1, j, 1.0 / (j as f64).sqrt()).row(0).to_owned(),
            b_blank: Array1::from_elem(1, 1.0),
            w_tok: init_matrix(&mut rng, n_tok, j, 1.0 / (j as f64).sqrt()),
            b_tok: Array1::zeros(n_tok),
        };
        let joint_wp = make_joint(v);
        let joint_eos = make_joint(v + 1);
        Ok(ModelParams { config: config.clone(), vocab, enc, pred, joint_wp, joint_eos })
    }

    /// Canonical tensor order used by the optimizer, the flat view, and the
    /// checkpoint format.
    pub fn visit(&self, mut f: impl FnMut(&'static str, Vec<usize>, &[f64])) {
        macro_rules! emit {
            ($name:expr, $a:expr) => {
                f($name, $a.shape().to_vec(), $a.as_slice().expect("standard layout"))
            };
        }
        emit!("enc.0.wx", &self.enc[0].wx);
        emit!("enc.0.wh", &self.enc[0].wh);
        emit!("enc.0.b", &self.enc[0].b);
        emit!("enc.1.wx", &self.enc[1].wx);
        emit!("enc.1.wh", &self.enc[1].wh);
        emit!("enc.1.b", &self.enc[1].b);
        emit!("pred.embed", &self.pred.embed);
        emit!("pred.proj", &self.pred.proj);
        emit!("pred.bias", &self.pred.bias);
        emit!("joint_wp.w_enc", &self.joint_wp.w_enc);
        emit!("joint_wp.w_pred", &self.joint_wp.w_pred);
        emit!("joint_wp.b_hidden", &self.joint_wp.b_hidden);
        emit!("joint_wp.w_blank", &self.joint_wp.w_blank);
        emit!("joint_wp.b_blank", &self.joint_wp.b_blank);
        emit!("joint_wp.w_tok", &self.joint_wp.w_tok);
        emit!("joint_wp.b_tok", &self.joint_wp.b_tok);
        emit!("joint_eos.w_enc", &self.joint_eos.w_enc);
        emit!("joint_eos.w_pred", &self.joint_eos.w_pred);
        emit!("joint_eos.b_hidden", &self.joint_eos.b_hidden);
        emit!("joint_eos.w_blank", &self.joint_eos.w_blank);
        emit!("joint_eos.b_blank", &self.joint_eos.b_blank);
        emit!("joint_eos.w_tok", &self.joint_eos.w_tok);
        emit!("joint_eos.b_tok", &self.joint_eos.b_tok);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&'static str, &mut [f64])) {
        f("enc.0.wx", self.enc[0].wx.as_slice_mut().expect("standard layout"));
        f("enc.0.wh", self.enc[0].wh.as_slice_mut().expect("standard layout"));
        f("enc.0.b", self.enc[0].b.as_slice_mut().expect("standard layout"));
        f("enc.1.wx", self.enc[1].wx.as_slice_mut().expect("standard layout"));
        f("enc.1.wh", self.enc[1].wh.as_slice_mut().expect("standard layout"));
        f("enc.1.b", self.enc[1].b.as_slice_mut().expect("standard layout"));
        f("pred.embed", self.pred.embed.as_slice_mut().expect("standard layout"));
        f("pred.proj", self.pred.proj.as_slice_mut().expect("standard layout"));
        f("pred.bias", self.pred.bias.as_slice_mut().expect("standard layout"));
        f("joint_wp.w_enc", self.joint_wp.w_enc.as_slice_mut().expect("standard layout"));
        f("joint_wp.w_pred", self.joint_wp.w_pred.as_slice_mut().expect("standard layout"));
        f("joint_wp.b_hidden", self.joint_wp.b_hidden.as_slice_mut().expect("standard layout"));
        f("joint_wp.w_blank", self.joint_wp.w_blank.as_slice_mut().expect("standard layout"));
        f("joint_wp.b_blank", self.joint_wp.b_blank.as_slice_mut().expect("standard layout"));
        f("joint_wp.w_tok", self.joint_wp.w_tok.as_slice_mut().expect("standard layout"));
        f("joint_wp.b_tok", self.joint_wp.b_tok.as_slice_mut().expect("standard layout"));
        f("joint_eos.w_enc", self.joint_eos.w_enc.as_slice_mut().expect("standard layout"));
        f("joint_eos.w_pred", self.joint_eos.w_pred.as_slice_mut().expect("standard layout"));
        f("joint_eos.b_hidden", self.joint_eos.b_hidden.as_slice_mut().expect("standard layout"));
        f("joint_eos.w_blank", self.joint_eos.w_blank.as_slice_mut().expect("standard layout"));
        f("joint_eos.b_blank", self.joint_eos.b_blank.as_slice_mut().expect("standard layout"));
        f("joint_eos.w_tok", self.joint_eos.w_tok.as_slice_mut().expect("standard layout"));
        f("joint_eos.b_tok", self.joint_eos.b_tok.as_slice_mut().expect("standard layout"));
    }

    /// All parameters concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(|_, _, data| out.extend_from_slice(data));
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.visit_mut(|_, data| {
            data.copy_from_slice(&flat[off..off + data.len()]);
            off += data.len();
        });
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }

    /// Byte ranges of each named tensor in the flat view.
    pub fn tensor_ranges(&self) -> Vec<(&'static str, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        let mut off = 0;
        self.visit(|name, _, data| {
            out.push((name, off..off + data.len()));
            off += data.len();
        });
        out
    }
}

/// Copy the trained wordpiece joint into the eos joint; the extra `<eos>`
/// output row starts at zero.
pub fn init_eos_joint(mut params: ModelParams) -> ModelParams {
    let v = params.config.vocab_size;
    let src = &params.joint_wp;
    let dst = &mut params.joint_eos;
    dst.w_enc.assign(&src.w_enc);
    dst.w_pred.assign(&src.w_pred);
    dst.b_hidden.assign(&src.b_hidden);
    dst.w_blank.assign(&src.w_blank);
    dst.b_blank.assign(&src.b_blank);
    for r in 0..v {
        for c in 0..src.w_tok.ncols() {
            dst.w_tok[[r, c]] = src.w_tok[[r, c]];
        }
        dst.b_tok[r] = src.b_tok[r];
    }
    for c in 0..dst.w_tok.ncols() {
        dst.w_tok[[v, c]] = 0.0;
    }
    dst.b_tok[v] = 0.0;
    params
}

const CKPT_FORMAT: &str = "segstream-ckpt";
const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset_bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct CkptManifest {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    blob: String,
    tensors: Vec<TensorEntry>,
}

/// Paths derived from a checkpoint stem: `<stem>.json` + `<stem>.bin`.
pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let mut json = stem.as_os_str().to_owned();
    json.push(".json");
    let mut bin = stem.as_os_str().to_owned();
    bin.push(".bin");
    (PathBuf::from(json), PathBuf::from(bin))
}

/// Write a manifest + little-endian f32 blob pair. Values are rounded to
/// f32; reload gives the exact rounded model.
pub fn save_checkpoint(params: &ModelParams, stem: &Path) -> Result<(), ModelError> {
    let (json_path, bin_path) = checkpoint_paths(stem);
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    params.visit(|name, shape, data| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape,
            dtype: "f32".to_string(),
            offset_bytes: blob.len() as u64,
        });
        for &x in data {
            blob.extend_from_slice(&(x as f32).to_le_bytes());
        }
    });
    let manifest = CkptManifest {
        format: CKPT_FORMAT.to_string(),
        version: CKPT_VERSION,
        config: params.config.clone(),
        vocab: params.vocab.clone(),
        blob: bin_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        tensors,
    };
    let mut w = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| ModelError::CheckpointFormat(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    let mut b = BufWriter::new(File::create(&bin_path)?);
    b.write_all(&blob)?;
    b.flush()?;
    Ok(())
}

pub fn load_checkpoint(stem: &Path) -> Result<ModelParams, ModelError> {
    let (json_path, bin_path) = checkpoint_paths(stem);
    if !json_path.exists() {
        return Err(ModelError::MissingCheckpoint);
    }
    let manifest: CkptManifest = serde_json::from_reader(BufReader::new(File::open(&json_path)?))
        .map_err(|e| ModelError::CheckpointFormat(e.to_string()))?;
    if manifest.format != CKPT_FORMAT || manifest.version != CKPT_VERSION {
        return Err(ModelError::CheckpointFormat(format!(
            "unexpected format {}/{}",
            manifest.format, manifest.version
        )));
    }
    let mut blob = Vec::new();
    BufReader::new(File::open(&bin_path)?).read_to_end(&mut blob)?;

    let mut params = ModelParams::init(&manifest.config, manifest.vocab.clone())?;
    let mut entries = manifest.tensors.iter();
    let mut ok = true;
    params.visit_mut(|name, data| {
        let Some(entry) = entries.next() else {
            ok = false;
            return;
        };
        if entry.name != name || entry.dtype != "f32" {
            ok = false;
            return;
        }
        let start = entry.offset_bytes as usize;
        let end = start + data.len() * 4;
        if end > blob.len() {
            ok = false;
            return;
        }
        for (i, x) in data.iter_mut().enumerate() {
            let o = start + i * 4;
            let bytes = [blob[o], blob[o + 1], blob[o + 2], blob[o + 3]];
            *x = f32::from_le_bytes(bytes) as f64;
        }
    });
    if !ok || entries.next().is_some() {
        return Err(ModelError::CheckpointFormat("tensor list mismatch".into()));
    }
    Ok(params)
}

/// Gradient accumulator shaped like the parameters' flat view.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub flat: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> ModelGrads {
        ModelGrads { flat: vec![0.0; params.flatten().len()] }
    }

    pub fn add_scaled(&mut self, other: &ModelGrads, scale: f64) {
        for (a, b) in self.flat.iter_mut().zip(other.flat.iter()) {
            *a += b * scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 3,
            feat_dim: 3,
            enc_hidden: 4,
            ctx_len: 2,
            embed_dim: 3,
            joint_hidden: 4,
            seed: 7,
            ..ModelConfig::default()
        }
    }

    fn tiny_vocab() -> Vec<String> {
        vec!["a".into(), "b".into(), "c".into()]
    }

    #[test]
    fn flat_round_trip() {
        let p = ModelParams::init(&tiny_config(), tiny_vocab()).unwrap();
        let flat = p.flatten();
        let mut q = ModelParams::init(&ModelConfig { seed: 8, ..tiny_config() }, tiny_vocab()).unwrap();
        assert_ne!(p.flatten(), q.flatten());
        q.load_flat(&flat);
        assert_eq!(q.flatten(), flat);
        assert_eq!(p.enc, q.enc);
        assert_eq!(p.pred, q.pred);
        assert_eq!(p.joint_wp, q.joint_wp);
        assert_eq!(p.joint_eos, q.joint_eos);
    }

    #[test]
    fn eos_joint_copy_shares_logits_and_zeroes_eos_row() {
        let p = ModelParams::init(&tiny_config(), tiny_vocab()).unwrap();
        let before_wp = p.joint_wp.clone();
        let p = init_eos_joint(p);
        assert_eq!(p.joint_wp, before_wp);
        assert_eq!(p.joint_eos.w_enc, p.joint_wp.w_enc);
        assert_eq!(p.joint_eos.b_blank, p.joint_wp.b_blank);
        let v = p.config.vocab_size;
        for r in 0..v {
            for c in 0..p.joint_wp.w_tok.ncols() {
                assert_eq!(p.joint_eos.w_tok[[r, c]], p.joint_wp.w_tok[[r, c]]);
            }
        }
        assert!(p.joint_eos.w_tok.row(v).iter().all(|&x| x == 0.0));
        assert_eq!(p.joint_eos.b_tok[v], 0.0);
    }

    #[test]
    fn checkpoint_round_trip_is_f32_exact() {
        let p = ModelParams::init(&tiny_config(), tiny_vocab()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        save_checkpoint(&p, &stem).unwrap();
        let q = load_checkpoint(&stem).unwrap();
        assert_eq!(q.config, p.config);
        assert_eq!(q.vocab, p.vocab);
        // Loaded values equal the f32 rounding of the originals.
        let orig = p.flatten();
        let loaded = q.flatten();
        for (a, b) in orig.iter().zip(loaded.iter()) {
            assert_eq!(*a as f32 as f64, *b);
        }
        // Saving the loaded model reproduces identical bytes.
        let stem2 = dir.path().join("model2");
        save_checkpoint(&q, &stem2).unwrap();
        let b1 = std::fs::read(checkpoint_paths(&stem).1).unwrap();
        let b2 = std::fs::read(checkpoint_paths(&stem2).1).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn missing_checkpoint_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        match load_checkpoint(&dir.path().join("nope")) {
            Err(ModelError::MissingCheckpoint) => {}
            other => panic!("expected MissingCheckpoint, got {other:?}"),
        }
    }
}
