//! End-to-end speech segmentation at desk scale: a toy streaming
//! transducer with a dedicated end-of-segment joint layer, automatic
//! `<eos>` transcript annotation, pluggable segmenters (fixed-interval,
//! VAD, E2E), a frame-synchronous beam search with segment finalization,
//! and a metrics harness (WER, EOS latency, segment and state counts).
//!
//! The corpus is synthetic: aligned utterances over a closed vocabulary
//! with per-phoneme timings, planted hesitations (fillers and lengthened
//! words), and deterministic features, so every stage of the pipeline is
//! reproducible from a seed.

pub mod annotation;
pub mod corpus;
pub mod decoder;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod segmenter;
