//! Streaming segmentation policies: fixed-interval, VAD silence, and E2E
//! `<eos>`-threshold, all guarded by a maximum segment duration.

use serde::{Deserialize, Serialize};

use crate::corpus::FrameSequence;

/// Energy level separating speech from silence for the toy VAD.
pub const DEFAULT_VAD_ENERGY_THRESHOLD: f64 = 0.5;

/// Per-frame speech flags from the energy channel.
pub fn vad_flags(frames: &FrameSequence, energy_threshold: f64) -> Vec<bool> {
    frames.energy.iter().map(|&e| e > energy_threshold).collect()
}

/// What the segmenter sees each frame. `eos_nll` is `-ln P(<eos>)` of the
/// current top hypothesis and is present only when an E2E model is attached
/// and the frame was actually decoded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameObservation {
    pub index: usize,
    pub time_s: f64,
    pub vad_is_speech: bool,
    pub eos_nll: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryReason {
    Fixed,
    Vad,
    Eos,
    MaxDuration,
    /// End-of-audio flush; produced by the decoder, never by `on_frame`.
    FinalFlush,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundarySignal {
    pub frame: usize,
    pub reason: BoundaryReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterKind {
    Fixed,
    Vad,
    E2e,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub kind: SegmenterKind,
    /// Fixed-interval period.
    pub interval_s: f64,
    /// Continued silence required before a VAD boundary.
    pub vad_silence_s: f64,
    /// E2E boundary when `eos_nll` falls strictly below this.
    pub eos_threshold: f64,
    /// Unconditional guard; takes precedence over every other trigger.
    pub max_segment_s: f64,
}

impl SegmenterConfig {
    pub fn new(kind: SegmenterKind) -> SegmenterConfig {
        SegmenterConfig {
            kind,
            interval_s: 10.0,
            vad_silence_s: 0.2,
            eos_threshold: 2.0,
            max_segment_s: 65.0,
        }
    }

    pub fn validate(&self) -> Result<(), SegmenterError> {
        if self.interval_s <= 0.0 || self.vad_silence_s <= 0.0 || self.max_segment_s <= 0.0 {
            return Err(SegmenterError::InvalidConfig("durations must be > 0".into()));
        }
        if self.eos_threshold < 0.0 {
            return Err(SegmenterError::InvalidConfig("eos_threshold must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SegmenterError {
    #[error("invalid segmenter config: {0}")]
    InvalidConfig(String),
    #[error("out-of-order frame {got} after {last}")]
    OutOfOrderFrame { got: usize, last: usize },
}

/// Whole frames covering at least `dur_s` at the given step.
fn frames_for(dur_s: f64, step_s: f64) -> usize {
    ((dur_s / step_s) - 1e-9).ceil().max(1.0) as usize
}

/// One segmenter instance per utterance stream.
#[derive(Debug, Clone)]
pub struct Segmenter {
    cfg: SegmenterConfig,
    interval_frames: usize,
    vad_silence_frames: usize,
    max_frames: usize,
    last_frame: Option<usize>,
    /// Frame of the previous boundary; -1 means "start of stream".
    last_boundary: i64,
    silence_run: usize,
    vad_armed: bool,
    eos_armed: bool,
}

impl Segmenter {
    pub fn new(cfg: SegmenterConfig, frame_step_s: f64) -> Result<Segmenter, SegmenterError> {
        cfg.validate()?;
        if frame_step_s <= 0.0 {
            return Err(SegmenterError::InvalidConfig("frame_step_s must be > 0".into()));
        }
        Ok(Segmenter {
            interval_frames: frames_for(cfg.interval_s, frame_step_s),
            vad_silence_frames: frames_for(cfg.vad_silence_s, frame_step_s),
            max_frames: frames_for(cfg.max_segment_s, frame_step_s),
            cfg,
            last_frame: None,
            last_boundary: -1,
            silence_run: 0,
            vad_armed: true,
            eos_armed: true,
        })
    }

    pub fn kind(&self) -> SegmenterKind {
        self.cfg.kind
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.cfg
    }

    /// Back to the initial state; behavior afterwards is identical to a
    /// fresh segmenter.
    pub fn reset(&mut self) {
        self.last_frame = None;
        self.last_boundary = -1;
        self.silence_run = 0;
        self.vad_armed = true;
        self.eos_armed = true;
    }

    /// The E2E re-arm hook: called by the decoder when the top hypothesis
    /// changes or a non-blank token is emitted.
    pub fn notify_beam_changed(&mut self) {
        self.eos_armed = true;
    }

    /// Feed one frame; returns a boundary signal when this frame closes a
    /// segment. Boundary bookkeeping (guard clock, trigger re-arm) is
    /// committed internally before returning.
    pub fn on_frame(&mut self, obs: &FrameObservation) -> Result<Option<BoundarySignal>, SegmenterError> {
        if let Some(last) = self.last_frame {
            if obs.index <= last {
                return Err(SegmenterError::OutOfOrderFrame { got: obs.index, last });
            }
        }
        self.last_frame = Some(obs.index);

        if obs.vad_is_speech {
            self.silence_run = 0;
            self.vad_armed = true;
        } else {
            self.silence_run += 1;
        }

        let since_boundary = (obs.index as i64 - self.last_boundary) as usize;
        if since_boundary >= self.max_frames {
            return Ok(Some(self.commit(obs.index, BoundaryReason::MaxDuration)));
        }

        match self.cfg.kind {
            SegmenterKind::Fixed => {
                if since_boundary >= self.interval_frames {
                    return Ok(Some(self.commit(obs.index, BoundaryReason::Fixed)));
                }
            }
            SegmenterKind::Vad => {
                if self.vad_armed && self.silence_run >= self.vad_silence_frames {
                    self.vad_armed = false;
                    return Ok(Some(self.commit(obs.index, BoundaryReason::Vad)));
                }
            }
            SegmenterKind::E2e => {
                if let Some(nll) = obs.eos_nll {
                    if self.eos_armed && nll < self.cfg.eos_threshold {
                        self.eos_armed = false;
                        return Ok(Some(self.commit(obs.index, BoundaryReason::Eos)));
                    }
                }
            }
        }
        Ok(None)
    }

    fn commit(&mut self, frame: usize, reason: BoundaryReason) -> BoundarySignal {
        self.last_boundary = frame as i64;
        BoundarySignal { frame, reason }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const STEP: f64 = 0.010;

    fn run(seg: &mut Segmenter, obs: &[FrameObservation]) -> Vec<BoundarySignal> {
        obs.iter().filter_map(|o| seg.on_frame(o).unwrap()).collect()
    }

    fn silence_stream(n: usize, speech: impl Fn(usize) -> bool) -> Vec<FrameObservation> {
        (0..n)
            .map(|i| FrameObservation {
                index: i,
                time_s: i as f64 * STEP,
                vad_is_speech: speech(i),
                eos_nll: None,
            })
            .collect()
    }

    #[test]
    fn vad_fires_once_when_silence_reaches_threshold() {
        let mut seg = Segmenter::new(SegmenterConfig::new(SegmenterKind::Vad), STEP).unwrap();
        // Speech for 50 frames, then 25 frames (0.25 s) of silence.
        let obs = silence_stream(75, |i| i < 50);
        let signals = run(&mut seg, &obs);
        assert_eq!(signals.len(), 1);
        // 20th silence frame: indices 50..69, signal on 69.
        assert_eq!(signals[0].frame, 69);
        assert_eq!(signals[0].reason, BoundaryReason::Vad);
    }

    #[test]
    fn vad_rearms_after_speech() {
        let mut seg = Segmenter::new(SegmenterConfig::new(SegmenterKind::Vad), STEP).unwrap();
        // silence run, speech, silence run again
        let obs = silence_stream(200, |i| (60..100).contains(&i));
        let signals = run(&mut seg, &obs);
        assert_eq!(signals.len(), 2);
        assert_eq!(signals[0].frame, 19);
        assert_eq!(signals[1].frame, 119);
    }

    #[test]
    fn e2e_fires_when_nll_crosses_threshold() {
        let mut seg = Segmenter::new(SegmenterConfig::new(SegmenterKind::E2e), STEP).unwrap();
        let nlls = [3.1, 2.4, 1.9];
        let obs: Vec<FrameObservation> = nlls
            .iter()
            .enumerate()
            .map(|(i, &nll)| FrameObservation {
                index: i,
                time_s: i as f64 * STEP,
                vad_is_speech: true,
                eos_nll: Some(nll),
            })
            .collect();
        let signals = run(&mut seg, &obs);
        assert_eq!(signals.len(), 1);
        assert_eq!(signals[0].frame, 2);
        assert_eq!(signals[0].reason, BoundaryReason::Eos);
    }

    #[test]
    fn e2e_stays_suppressed_until_rearmed() {
        let mut seg = Segmenter::new(SegmenterConfig::new(SegmenterKind::E2e), STEP).unwrap();
        let mk = |i: usize, nll: f64| FrameObservation {
            index: i,
            time_s: i as f64 * STEP,
            vad_is_speech: true,
            eos_nll: Some(nll),
        };
        assert!(seg.on_frame(&mk(0, 0.5)).unwrap().is_some());
        assert!(seg.on_frame(&mk(1, 0.5)).unwrap().is_none());
        assert!(seg.on_frame(&mk(2, 0.5)).unwrap().is_none());
        seg.notify_beam_changed();
        assert!(seg.on_frame(&mk(3, 0.5)).unwrap().is_some());
    }

    #[test]
    fn e2e_infinite_nll_never_fires() {
        let mut seg = Segmenter::new(SegmenterConfig::new(SegmenterKind::E2e), STEP).unwrap();
        for i in 0..1000 {
            let obs = FrameObservation {
                index: i,
                time_s: i as f64 * STEP,
                vad_is_speech: true,
                eos_nll: Some(f64::INFINITY),
            };
            assert!(seg.on_frame(&obs).unwrap().is_none());
        }
    }

    #[test]
    fn fixed_interval_fires_on_schedule() {
        let mut seg = Segmenter::new(SegmenterConfig::new(SegmenterKind::Fixed), STEP).unwrap();
        let obs = silence_stream(2500, |_| true); // 25 s
        let signals = run(&mut seg, &obs);
        assert_eq!(signals.len(), 2);
        assert_eq!(signals[0].frame, 999); // 10.0 s
        assert_eq!(signals[1].frame, 1999); // 20.0 s
        assert!(signals.iter().all(|s| s.reason == BoundaryReason::Fixed));
    }

    #[test]
    fn guard_fires_at_sixty_five_seconds() {
        for kind in [SegmenterKind::Fixed, SegmenterKind::Vad, SegmenterKind::E2e] {
            let cfg = SegmenterConfig { interval_s: 1e9, ..SegmenterConfig::new(kind) };
            let mut seg = Segmenter::new(cfg, STEP).unwrap();
            let obs = silence_stream(7000, |_| true); // speech: no vad trigger
            let signals = run(&mut seg, &obs);
            assert_eq!(signals.len(), 1, "{kind:?}");
            assert_eq!(signals[0].frame, 6499);
            assert_eq!(signals[0].reason, BoundaryReason::MaxDuration);
        }
    }

    #[test]
    fn reset_restores_fresh_behavior() {
        let cfg = SegmenterConfig::new(SegmenterKind::Vad);
        let obs = silence_stream(120, |i| i < 60);
        let mut a = Segmenter::new(cfg.clone(), STEP).unwrap();
        let first = run(&mut a, &obs);
        a.reset();
        let second = run(&mut a, &obs);
        assert_eq!(first, second);
        let mut fresh = Segmenter::new(cfg, STEP).unwrap();
        assert_eq!(run(&mut fresh, &obs), first);
    }

    #[test]
    fn out_of_order_frames_are_rejected() {
        let mut seg = Segmenter::new(SegmenterConfig::new(SegmenterKind::Vad), STEP).unwrap();
        let a = FrameObservation { index: 5, time_s: 0.05, vad_is_speech: true, eos_nll: None };
        seg.on_frame(&a).unwrap();
        assert!(matches!(
            seg.on_frame(&a),
            Err(SegmenterError::OutOfOrderFrame { got: 5, last: 5 })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// With re-arm events held fixed, raising the threshold never
        /// decreases the number of eos signals.
        #[test]
        fn raising_threshold_is_monotone(
            nlls in proptest::collection::vec(0.0f64..5.0, 1..80),
            rearms in proptest::collection::vec(any::<bool>(), 80),
            tau_lo in 0.0f64..4.0,
            extra in 0.0f64..2.0,
        ) {
            let tau_hi = tau_lo + extra;
            let count = |tau: f64| {
                let cfg = SegmenterConfig {
                    eos_threshold: tau,
                    max_segment_s: 1e9,
                    ..SegmenterConfig::new(SegmenterKind::E2e)
                };
                let mut seg = Segmenter::new(cfg, STEP).unwrap();
                let mut n = 0;
                for (i, &nll) in nlls.iter().enumerate() {
                    if rearms[i] {
                        seg.notify_beam_changed();
                    }
                    let obs = FrameObservation {
                        index: i,
                        time_s: i as f64 * STEP,
                        vad_is_speech: true,
                        eos_nll: Some(nll),
                    };
                    if seg.on_frame(&obs).unwrap().is_some() {
                        n += 1;
                    }
                }
                n
            };
            prop_assert!(count(tau_hi) >= count(tau_lo));
        }

        /// Signals never repeat a frame and never come out of order.
        #[test]
        fn signal_frames_strictly_increase(speech in proptest::collection::vec(any::<bool>(), 1..400)) {
            let mut seg = Segmenter::new(SegmenterConfig::new(SegmenterKind::Vad), STEP).unwrap();
            let mut last: Option<usize> = None;
            for (i, &sp) in speech.iter().enumerate() {
                let obs = FrameObservation {
                    index: i,
                    time_s: i as f64 * STEP,
                    vad_is_speech: sp,
                    eos_nll: None,
                };
                if let Some(sig) = seg.on_frame(&obs).unwrap() {
                    if let Some(l) = last {
                        prop_assert!(sig.frame > l);
                    }
                    last = Some(sig.frame);
                }
            }
        }
    }
}
