//! Small-target correlator with recurrent feedback and lateral inhibition.
//!
//! At each pixel the undelayed ON channel and the delayed OFF channel are
//! each reduced by a feedback signal `F` and multiplied. `F` is a Gamma
//! weighted sum of past `D + E` maps (correlator output plus its Gaussian
//! surround), optionally displaced along the background trajectory. How `F`
//! is formed is a [`FeedbackStrategy`], chosen by name from a
//! [`FeedbackRegistry`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::early_vision::MedullaOutputs;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::kernels::{
    convolve2d, convolve2d_fast, gaussian_radius, make_gaussian, make_inhibition_kernel,
    sample_gamma, FrameRing, GammaSpec, InhibitionParams, SpatialKernel, TemporalFilter,
};
use crate::lptc::ShiftTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    None,
    TimeDelay,
    SpatioTemporal,
}

impl FeedbackMode {
    pub const ALL: [FeedbackMode; 3] = [
        FeedbackMode::None,
        FeedbackMode::TimeDelay,
        FeedbackMode::SpatioTemporal,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FeedbackMode::None => "none",
            FeedbackMode::TimeDelay => "time-delay",
            FeedbackMode::SpatioTemporal => "spatio-temporal",
        }
    }
}

impl fmt::Display for FeedbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeedbackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeedbackMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::param(format!(
                    "unknown feedback mode {s:?}; expected none, time-delay or spatio-temporal"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StmdConfig {
    /// Feedback gain.
    pub alpha: f64,
    /// Gamma kernel weighting past `D + E` in the feedback.
    pub feedback_delay: GammaSpec,
    /// Width of the surround weighting for `E` (pixels).
    pub eta: f64,
    pub inhibition: InhibitionParams,
    pub mode: FeedbackMode,
}

impl Default for StmdConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            feedback_delay: GammaSpec {
                order: 6,
                time_constant: 12.0,
            },
            eta: 1.5,
            inhibition: InhibitionParams::default(),
            mode: FeedbackMode::SpatioTemporal,
        }
    }
}

impl StmdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::param(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        self.feedback_delay.validate()?;
        if self.feedback_delay.order < 2 {
            // Γ(0) must vanish for the loop to stay causal
            return Err(Error::param("feedback delay order must be >= 2"));
        }
        self.inhibition.validate()
    }
}

/// One way of turning the `D + E` history into the feedback signal.
pub trait FeedbackStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether the strategy consumes background shift tables.
    fn needs_shifts(&self) -> bool {
        false
    }

    /// Feedback for the current frame. `history.get(k - 1)` is the `D + E`
    /// map from `k` frames ago.
    fn feedback(
        &self,
        history: &FrameRing,
        filter: &TemporalFilter,
        alpha: f64,
        shifts: Option<&ShiftTable>,
    ) -> Result<Frame>;
}

/// Feedback disabled.
#[derive(Debug, Default)]
pub struct NoFeedback;

impl FeedbackStrategy for NoFeedback {
    fn name(&self) -> &'static str {
        "none"
    }

    fn feedback(
        &self,
        history: &FrameRing,
        _filter: &TemporalFilter,
        _alpha: f64,
        _shifts: Option<&ShiftTable>,
    ) -> Result<Frame> {
        let f = history.get(0);
        Ok(Frame::zeros(f.width(), f.height()))
    }
}

/// Past responses fed back in place.
#[derive(Debug, Default)]
pub struct TimeDelayFeedback;

impl FeedbackStrategy for TimeDelayFeedback {
    fn name(&self) -> &'static str {
        "time-delay"
    }

    fn feedback(
        &self,
        history: &FrameRing,
        filter: &TemporalFilter,
        alpha: f64,
        _shifts: Option<&ShiftTable>,
    ) -> Result<Frame> {
        Ok(shifted_feedback(history, filter, alpha, None))
    }
}

/// Past responses displaced along the estimated background trajectory.
#[derive(Debug, Default)]
pub struct SpatioTemporalFeedback;

impl FeedbackStrategy for SpatioTemporalFeedback {
    fn name(&self) -> &'static str {
        "spatio-temporal"
    }

    fn needs_shifts(&self) -> bool {
        true
    }

    fn feedback(
        &self,
        history: &FrameRing,
        filter: &TemporalFilter,
        alpha: f64,
        shifts: Option<&ShiftTable>,
    ) -> Result<Frame> {
        let shifts = shifts.ok_or_else(|| {
            Error::InvalidState("spatio-temporal feedback needs a shift table".into())
        })?;
        if shifts.len() < filter.support_len() {
            return Err(Error::InvalidState(format!(
                "shift table covers {} lags, feedback kernel needs {}",
                shifts.len(),
                filter.support_len()
            )));
        }
        Ok(shifted_feedback(history, filter, alpha, Some(shifts)))
    }
}

/// `F(x,y) = α Σ_k Γ[k] · H_k(x − round φ_k, y − round ψ_k)`, with `H_k`
/// the `D + E` map of `k` frames ago and out-of-frame reads counting zero.
fn shifted_feedback(
    history: &FrameRing,
    filter: &TemporalFilter,
    alpha: f64,
    shifts: Option<&ShiftTable>,
) -> Frame {
    let (w, h) = (history.get(0).width(), history.get(0).height());
    let mut out = Frame::zeros(w, h);
    if alpha == 0.0 {
        return out;
    }
    let taps = filter.taps();
    let data = out.data_mut();
    for k in filter.first_nonzero().max(1)..taps.len() {
        let wk = taps[k];
        if wk == 0.0 {
            continue;
        }
        let past = history.get(k - 1);
        let (sx, sy) = match shifts {
            Some(s) => {
                let (phi, psi) = s.get(k);
                (phi.round() as isize, psi.round() as isize)
            }
            None => (0, 0),
        };
        // out(x, y) reads past(x - sx, y - sy)
        let x_lo = sx.clamp(0, w as isize) as usize;
        let x_hi = (w as isize + sx).clamp(0, w as isize) as usize;
        if x_lo >= x_hi {
            continue;
        }
        for y in 0..h {
            let py = y as isize - sy;
            if py < 0 || py >= h as isize {
                continue;
            }
            let src = past.row(py as usize);
            let dst = &mut data[y * w..(y + 1) * w];
            let src_lo = (x_lo as isize - sx) as usize;
            let src = &src[src_lo..src_lo + (x_hi - x_lo)];
            for (o, s) in dst[x_lo..x_hi].iter_mut().zip(src) {
                *o += wk * s;
            }
        }
    }
    if alpha != 1.0 {
        data.iter_mut().for_each(|v| *v *= alpha);
    }
    out
}

type StrategyFactory = fn() -> Box<dyn FeedbackStrategy>;

/// Feedback strategies by name.
#[derive(Clone)]
pub struct FeedbackRegistry {
    factories: BTreeMap<&'static str, StrategyFactory>,
}

impl FeedbackRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// The three built-in strategies.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("none", || Box::new(NoFeedback));
        r.register("time-delay", || Box::new(TimeDelayFeedback));
        r.register("spatio-temporal", || Box::new(SpatioTemporalFeedback));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: StrategyFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn FeedbackStrategy>> {
        self.factories
            .get(name)
            .map(|f| f())
            .ok_or_else(|| Error::param(format!("no feedback strategy named {name:?}")))
    }
}

impl fmt::Debug for FeedbackRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

/// Surround term: Gaussian-weighted sum of the local ON × delayed-OFF product.
pub fn compute_surround_e(tm3: &Frame, tm1_stmd: &Frame, kernel: &SpatialKernel) -> Frame {
    convolve2d_fast(&tm3.zip_map(tm1_stmd, |a, b| a * b), kernel)
}

/// Free-standing feedback evaluation: `None` gives zeros, `TimeDelay`
/// ignores shifts, `SpatioTemporal` requires them.
pub fn compute_feedback(
    history: &FrameRing,
    filter: &TemporalFilter,
    alpha: f64,
    mode: FeedbackMode,
    shifts: Option<&ShiftTable>,
) -> Result<Frame> {
    FeedbackRegistry::builtin()
        .create(mode.as_str())?
        .feedback(history, filter, alpha, shifts)
}

/// `D = (tm3 − F) · (tm1 − F)` pointwise. May be negative.
pub fn stmd_correlate(tm3: &Frame, tm1_stmd: &Frame, feedback: &Frame) -> Frame {
    assert!(tm3.same_shape(tm1_stmd) && tm3.same_shape(feedback));
    let mut out = Frame::zeros(tm3.width(), tm3.height());
    for (((o, &a), &b), &f) in out
        .data_mut()
        .iter_mut()
        .zip(tm3.data())
        .zip(tm1_stmd.data())
        .zip(feedback.data())
    {
        *o = (a - f) * (b - f);
    }
    out
}

pub fn lateral_inhibit(correlation: &Frame, kernel: &SpatialKernel) -> Frame {
    convolve2d(correlation, kernel)
}

/// Intermediate maps of one step.
#[derive(Debug, Clone)]
pub struct StmdOutput {
    pub surround: Frame,
    pub feedback: Frame,
    pub correlation: Frame,
    /// Final detector map after lateral inhibition.
    pub response: Frame,
}

pub struct StmdState {
    alpha: f64,
    mode: FeedbackMode,
    strategy: Box<dyn FeedbackStrategy>,
    feedback_filter: TemporalFilter,
    surround_kernel: SpatialKernel,
    inhibition_kernel: SpatialKernel,
    /// Past `D + E`, lag 0 = previous frame.
    history: FrameRing,
    frames_seen: usize,
}

impl fmt::Debug for StmdState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StmdState")
            .field("alpha", &self.alpha)
            .field("strategy", &self.strategy.name())
            .field("frames_seen", &self.frames_seen)
            .finish()
    }
}

impl StmdState {
    pub fn new(config: &StmdConfig, dt: f64, width: usize, height: usize) -> Result<Self> {
        Self::with_registry(config, dt, width, height, &FeedbackRegistry::builtin())
    }

    pub fn with_registry(
        config: &StmdConfig,
        dt: f64,
        width: usize,
        height: usize,
        registry: &FeedbackRegistry,
    ) -> Result<Self> {
        config.validate()?;
        let feedback_filter = sample_gamma(config.feedback_delay, dt)?;
        Ok(Self {
            alpha: config.alpha,
            mode: config.mode,
            strategy: registry.create(config.mode.as_str())?,
            surround_kernel: make_gaussian(config.eta, gaussian_radius(config.eta))?,
            inhibition_kernel: make_inhibition_kernel(
                &config.inhibition,
                config.inhibition.min_radius(),
            )?,
            history: FrameRing::new(feedback_filter.support_len(), width, height),
            feedback_filter,
            frames_seen: 0,
        })
    }

    pub fn mode(&self) -> FeedbackMode {
        self.mode
    }

    pub fn needs_shifts(&self) -> bool {
        self.strategy.needs_shifts()
    }

    pub fn feedback_filter(&self) -> &TemporalFilter {
        &self.feedback_filter
    }

    pub fn inhibition_kernel(&self) -> &SpatialKernel {
        &self.inhibition_kernel
    }

    pub fn surround_kernel(&self) -> &SpatialKernel {
        &self.surround_kernel
    }

    /// Frames needed before the feedback history is fully populated.
    pub fn warmup_frames(&self) -> usize {
        self.feedback_filter.support_len()
    }

    pub fn history(&self) -> &FrameRing {
        &self.history
    }
}

/// One frame of the detector: `E`, then `F` from past frames only, then `D`,
/// then `D + E` is pushed for future feedback and `D` is laterally inhibited.
pub fn stmd_step(
    state: &mut StmdState,
    medulla: &MedullaOutputs,
    shifts: Option<&ShiftTable>,
) -> Result<StmdOutput> {
    let tm3 = &medulla.tm3;
    let tm1 = medulla.tm1_stmd()?;
    let surround = compute_surround_e(tm3, tm1, &state.surround_kernel);
    let feedback =
        state
            .strategy
            .feedback(&state.history, &state.feedback_filter, state.alpha, shifts)?;
    let correlation = stmd_correlate(tm3, tm1, &feedback);
    if correlation.data().iter().any(|v| !v.is_finite()) {
        // (tm3 − F)(tm1 − F) grows like F² once F exceeds both channels
        return Err(Error::InvalidState(format!(
            "feedback loop diverged at frame {}; reduce alpha or the input gain",
            state.frames_seen
        )));
    }
    state
        .history
        .push(correlation.zip_map(&surround, |d, e| d + e));
    let response = lateral_inhibit(&correlation, &state.inhibition_kernel);
    state.frames_seen += 1;
    Ok(StmdOutput {
        surround,
        feedback,
        correlation,
        response,
    })
}
