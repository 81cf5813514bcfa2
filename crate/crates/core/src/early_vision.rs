//! Retina, lamina and medulla layers.
//!
//! Per frame: the retina blurs the input with a Gaussian, the lamina
//! band-passes every pixel in time, and the medulla splits the result into
//! ON (`tm3`) and OFF (`tm2`) half-waves plus Gamma-delayed copies of them.
//! Two OFF delays are kept because the small-target correlator and the
//! wide-field correlators read the OFF channel through different kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::kernels::{
    convolve2d_fast, gaussian_radius, make_gaussian, make_lmc_filter, sample_gamma,
    temporal_convolve_into, FrameRing, GammaSpec, SpatialKernel, TemporalFilter,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyVisionConfig {
    /// Retina blur (pixels).
    pub sigma1: f64,
    /// Fast component of the lamina band-pass.
    pub lmc_fast: GammaSpec,
    /// Slow component of the lamina band-pass.
    pub lmc_slow: GammaSpec,
    /// Delay of the OFF channel feeding the small-target correlator.
    pub stmd_delay: GammaSpec,
    /// Delay of both channels feeding the wide-field correlators.
    pub lptc_delay: GammaSpec,
    /// Simulation step in ms (1000 / fps).
    pub dt: f64,
}

impl Default for EarlyVisionConfig {
    fn default() -> Self {
        Self {
            sigma1: 1.0,
            lmc_fast: GammaSpec {
                order: 2,
                time_constant: 3.0,
            },
            lmc_slow: GammaSpec {
                order: 6,
                time_constant: 9.0,
            },
            stmd_delay: GammaSpec {
                order: 5,
                time_constant: 25.0,
            },
            lptc_delay: GammaSpec {
                order: 25,
                time_constant: 30.0,
            },
            dt: 1.0,
        }
    }
}

impl EarlyVisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma1.is_finite()) {
            return Err(Error::param(format!(
                "sigma1 must be positive, got {}",
                self.sigma1
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        for spec in [
            &self.lmc_fast,
            &self.lmc_slow,
            &self.stmd_delay,
            &self.lptc_delay,
        ] {
            spec.validate()?;
        }
        Ok(())
    }
}

/// Which delayed medulla channels to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelSet {
    pub stmd: bool,
    pub lptc: bool,
}

impl ChannelSet {
    pub const ALL: ChannelSet = ChannelSet {
        stmd: true,
        lptc: true,
    };
    pub const STMD: ChannelSet = ChannelSet {
        stmd: true,
        lptc: false,
    };
    pub const LPTC: ChannelSet = ChannelSet {
        stmd: false,
        lptc: true,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedullaOutputs {
    /// ON half-wave, `max(L, 0)`.
    pub tm3: Frame,
    /// OFF half-wave, `max(-L, 0)`.
    pub tm2: Frame,
    /// OFF delayed for the small-target correlator.
    pub tm1_stmd: Option<Frame>,
    /// OFF delayed for the wide-field correlators.
    pub tm1_lptc: Option<Frame>,
    /// ON delayed for the wide-field correlators.
    pub mi1_lptc: Option<Frame>,
}

impl MedullaOutputs {
    fn channel<'a>(f: &'a Option<Frame>, name: &str) -> Result<&'a Frame> {
        f.as_ref()
            .ok_or_else(|| Error::InvalidState(format!("medulla channel {name} was not computed")))
    }

    pub fn tm1_stmd(&self) -> Result<&Frame> {
        Self::channel(&self.tm1_stmd, "tm1_stmd")
    }

    pub fn tm1_lptc(&self) -> Result<&Frame> {
        Self::channel(&self.tm1_lptc, "tm1_lptc")
    }

    pub fn mi1_lptc(&self) -> Result<&Frame> {
        Self::channel(&self.mi1_lptc, "mi1_lptc")
    }
}

/// Everything the early layers produce for one frame.
#[derive(Debug, Clone)]
pub struct EarlyVisionOutput {
    pub photoreceptor: Frame,
    pub lmc: Frame,
    pub medulla: MedullaOutputs,
}

/// Streaming state for one video: filters plus zero-initialized histories.
#[derive(Debug, Clone)]
pub struct EarlyVisionState {
    channels: ChannelSet,
    width: usize,
    height: usize,
    retina_kernel: SpatialKernel,
    lmc: TemporalFilter,
    stmd_delay: TemporalFilter,
    lptc_delay: TemporalFilter,
    photo_history: FrameRing,
    /// LMC output; the rectified channels are derived from it on the fly.
    lmc_history: FrameRing,
    frames_seen: usize,
}

impl EarlyVisionState {
    pub fn new(
        config: &EarlyVisionConfig,
        channels: ChannelSet,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        config.validate()?;
        if width == 0 || height == 0 {
            return Err(Error::param("frame dimensions must be positive"));
        }
        let retina_kernel = make_gaussian(config.sigma1, gaussian_radius(config.sigma1))?;
        let lmc = make_lmc_filter(config.lmc_fast, config.lmc_slow, config.dt)?;
        let stmd_delay = sample_gamma(config.stmd_delay, config.dt)?;
        let lptc_delay = sample_gamma(config.lptc_delay, config.dt)?;
        let mut delay_len = 1;
        if channels.stmd {
            delay_len = delay_len.max(stmd_delay.support_len());
        }
        if channels.lptc {
            delay_len = delay_len.max(lptc_delay.support_len());
        }
        Ok(Self {
            channels,
            width,
            height,
            retina_kernel,
            photo_history: FrameRing::new(lmc.support_len(), width, height),
            lmc_history: FrameRing::new(delay_len, width, height),
            lmc,
            stmd_delay,
            lptc_delay,
            frames_seen: 0,
        })
    }

    pub fn channels(&self) -> ChannelSet {
        self.channels
    }

    pub fn lmc_filter(&self) -> &TemporalFilter {
        &self.lmc
    }

    pub fn stmd_delay_filter(&self) -> &TemporalFilter {
        &self.stmd_delay
    }

    pub fn lptc_delay_filter(&self) -> &TemporalFilter {
        &self.lptc_delay
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Frames after which every computed channel is a full (untruncated)
    /// convolution of the input stream.
    pub fn warmup_frames(&self) -> usize {
        let mut delay = 0;
        if self.channels.stmd {
            delay = delay.max(self.stmd_delay.support_len());
        }
        if self.channels.lptc {
            delay = delay.max(self.lptc_delay.support_len());
        }
        self.lmc.support_len() + delay
    }

    pub fn is_warm(&self) -> bool {
        self.frames_seen >= self.warmup_frames()
    }

    /// Runs all three layers on one input frame.
    pub fn step(&mut self, input: &Frame) -> Result<EarlyVisionOutput> {
        if input.width() != self.width || input.height() != self.height {
            return Err(Error::InvalidInput(format!(
                "expected {}x{} frame, got {}x{}",
                self.width,
                self.height,
                input.width(),
                input.height()
            )));
        }
        let photoreceptor = retina_step(input, &self.retina_kernel);
        let lmc = lamina_step(self, &photoreceptor);
        let medulla = medulla_step(self, &lmc);
        self.frames_seen += 1;
        Ok(EarlyVisionOutput {
            photoreceptor,
            lmc,
            medulla,
        })
    }
}

/// Retina: Gaussian blur of the raw frame.
pub fn retina_step(input: &Frame, kernel: &SpatialKernel) -> Frame {
    convolve2d_fast(input, kernel)
}

/// Lamina: band-pass each pixel's history. Positive output marks a
/// luminance increase, negative a decrease.
pub fn lamina_step(state: &mut EarlyVisionState, photoreceptor: &Frame) -> Frame {
    let mut out = state.photo_history.push(photoreceptor.clone());
    temporal_convolve_into(&state.photo_history, &state.lmc, &mut out);
    out
}

/// Medulla: half-wave rectification into ON/OFF plus Gamma-delayed copies.
pub fn medulla_step(state: &mut EarlyVisionState, lmc: &Frame) -> MedullaOutputs {
    let tm3 = lmc.map(|v| v.max(0.0));
    let tm2 = lmc.map(|v| (-v).max(0.0));
    let mut recycled = Some(state.lmc_history.push(lmc.clone()));
    let stmd = state.channels.stmd.then_some(&state.stmd_delay);
    let lptc = state.channels.lptc.then_some(&state.lptc_delay);
    let mut frame = || match recycled.take() {
        Some(f) => f,
        None => Frame::zeros(state.width, state.height),
    };
    let mut tm1_stmd = stmd.map(|_| frame());
    let mut tm1_lptc = lptc.map(|_| frame());
    let mut mi1_lptc = lptc.map(|_| frame());
    delay_rectified(
        &state.lmc_history,
        stmd,
        lptc,
        tm1_stmd.as_mut(),
        tm1_lptc.as_mut(),
        mi1_lptc.as_mut(),
    );
    MedullaOutputs {
        tm3,
        tm2,
        tm1_stmd,
        tm1_lptc,
        mi1_lptc,
    }
}

/// Delays the rectified channels of an LMC history in one pass: the OFF
/// channel through `stmd` and both channels through `lptc`. Each output is
/// exactly the temporal convolution of the rectified history, taps in
/// ascending lag order.
fn delay_rectified(
    history: &FrameRing,
    stmd: Option<&TemporalFilter>,
    lptc: Option<&TemporalFilter>,
    mut off_stmd: Option<&mut Frame>,
    mut off_lptc: Option<&mut Frame>,
    mut on_lptc: Option<&mut Frame>,
) {
    const CHUNK: usize = 2048;
    for out in [
        off_stmd.as_deref_mut(),
        off_lptc.as_deref_mut(),
        on_lptc.as_deref_mut(),
    ]
    .into_iter()
    .flatten()
    {
        out.fill(0.0);
    }
    let tap = |f: Option<&TemporalFilter>, k: usize| -> f64 {
        f.filter(|f| k >= f.first_nonzero() && k < f.support_len())
            .map_or(0.0, |f| f.taps()[k])
    };
    let lags = stmd
        .map_or(0, |f| f.support_len())
        .max(lptc.map_or(0, |f| f.support_len()));
    let len = history.get(0).len();
    for start in (0..len).step_by(CHUNK) {
        let end = (start + CHUNK).min(len);
        for k in 0..lags {
            let src = &history.get(k).data()[start..end];
            let w3 = tap(stmd, k);
            if w3 != 0.0 {
                if let Some(out) = off_stmd.as_deref_mut() {
                    for (o, &l) in out.data_mut()[start..end].iter_mut().zip(src) {
                        *o += w3 * (-l).max(0.0);
                    }
                }
            }
            let w5 = tap(lptc, k);
            if w5 != 0.0 {
                if let (Some(off), Some(on)) = (off_lptc.as_deref_mut(), on_lptc.as_deref_mut()) {
                    let off = &mut off.data_mut()[start..end];
                    let on = &mut on.data_mut()[start..end];
                    for ((f, n), &l) in off.iter_mut().zip(on.iter_mut()).zip(src) {
                        *f += w5 * (-l).max(0.0);
                        *n += w5 * l.max(0.0);
                    }
                }
            }
        }
    }
}
