//! End-to-end streaming detector: early vision, background estimation and the
//! small-target correlator wired together for one video.

use crate::config::ModelConfig;
use crate::early_vision::{ChannelSet, EarlyVisionOutput, EarlyVisionState};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::lptc::{calibrate_tuning, BackgroundEstimator, BackgroundMotion, TuningTable};
use crate::stmd::{stmd_step, FeedbackRegistry, StmdOutput, StmdState};
use crate::synthgen::generate_calibration;

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub index: usize,
    /// Set while filter histories still contain the zero fill; such frames
    /// are excluded from evaluation.
    pub warmup: bool,
    pub early: EarlyVisionOutput,
    pub stmd: StmdOutput,
    /// Present when the pipeline has a tuning table.
    pub background: Option<BackgroundMotion>,
}

impl StepOutput {
    /// Detector output `Q`.
    pub fn response(&self) -> &Frame {
        &self.stmd.response
    }
}

#[derive(Debug)]
pub struct Pipeline {
    config: ModelConfig,
    early: EarlyVisionState,
    stmd: StmdState,
    background: Option<BackgroundEstimator>,
    warmup: usize,
    frames_seen: usize,
}

impl Pipeline {
    /// Builds a pipeline for `width × height` frames. A tuning table enables
    /// background estimation and is required by feedback strategies that
    /// shift along the background trajectory.
    pub fn new(
        config: &ModelConfig,
        width: usize,
        height: usize,
        tuning: Option<TuningTable>,
    ) -> Result<Self> {
        Self::with_registry(config, width, height, tuning, &FeedbackRegistry::builtin())
    }

    pub fn with_registry(
        config: &ModelConfig,
        width: usize,
        height: usize,
        tuning: Option<TuningTable>,
        registry: &FeedbackRegistry,
    ) -> Result<Self> {
        config.validate()?;
        let stmd = StmdState::with_registry(&config.stmd, config.dt(), width, height, registry)?;
        if stmd.needs_shifts() && tuning.is_none() {
            return Err(Error::InvalidState(format!(
                "feedback mode {} needs a tuning table",
                stmd.mode()
            )));
        }
        let channels = if tuning.is_some() {
            ChannelSet::ALL
        } else {
            ChannelSet::STMD
        };
        let early = EarlyVisionState::new(&config.early_vision, channels, width, height)?;
        let background = tuning
            .map(|table| {
                BackgroundEstimator::new(
                    config.lptc.clone(),
                    table,
                    stmd.feedback_filter().support_len(),
                    config.dt(),
                )
            })
            .transpose()?;
        // same warm-up for every mode and channel selection, so evaluations
        // of different modes cover the same frames
        let delays = early
            .stmd_delay_filter()
            .support_len()
            .max(early.lptc_delay_filter().support_len());
        let warmup = early.lmc_filter().support_len() + delays + stmd.warmup_frames();
        Ok(Self {
            config: config.clone(),
            early,
            stmd,
            background,
            warmup,
            frames_seen: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn warmup_frames(&self) -> usize {
        self.warmup
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    pub fn step(&mut self, frame: &Frame) -> Result<StepOutput> {
        let gain = self.config.input_gain;
        let scaled;
        let input = if gain == 1.0 {
            frame
        } else {
            scaled = frame.map(|v| v * gain);
            &scaled
        };
        let early = self.early.step(input)?;
        let shifts = match &self.background {
            Some(est) if self.stmd.needs_shifts() => Some(est.shifts()?),
            _ => None,
        };
        let stmd = stmd_step(&mut self.stmd, &early.medulla, shifts.as_ref())?;
        let background = match &mut self.background {
            Some(est) => Some(est.observe(&early.medulla)?),
            None => None,
        };
        let index = self.frames_seen;
        self.frames_seen += 1;
        Ok(StepOutput {
            index,
            warmup: index < self.warmup,
            early,
            stmd,
            background,
        })
    }
}

/// Measures the tuning table with the configured calibration stimulus.
pub fn calibrate(config: &ModelConfig) -> Result<TuningTable> {
    config.validate()?;
    let gain = config.input_gain;
    let stimulus = &config.calibration;
    let frames = |v: f64| {
        generate_calibration(v, 0.0, stimulus)
            .expect("calibration stimulus validated")
            .map(move |f| if gain == 1.0 { f } else { f.map(|x| x * gain) })
    };
    // surface stimulus errors before the sweep instead of panicking in it
    stimulus.scene(0.0, 0.0).validate()?;
    calibrate_tuning(&config.early_vision, &config.lptc, frames)
}
