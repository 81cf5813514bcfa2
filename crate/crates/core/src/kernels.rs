//! Temporal and spatial kernels, plus the two convolution primitives every
//! layer is built from.
//!
//! Temporal kernels are Gamma densities sampled at the simulation step and
//! truncated to a window holding at least 99.9% of the continuous area, then
//! renormalized so the taps sum to one. Spatial Gaussians are truncated at
//! `ceil(3σ)` and renormalized. All spatial convolutions use replicate padding.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Probability mass dropped from each tail when truncating a Gamma kernel.
const GAMMA_TAIL_MASS: f64 = 5.0e-4;

/// Order and time constant (ms) of a Gamma kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSpec {
    pub order: u32,
    pub time_constant: f64,
}

impl GammaSpec {
    pub fn new(order: u32, time_constant: f64) -> Result<Self> {
        let spec = Self {
            order,
            time_constant,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::param(format!(
                "gamma order must be >= 1, got {}",
                self.order
            )));
        }
        if !(self.time_constant > 0.0 && self.time_constant.is_finite()) {
            return Err(Error::param(format!(
                "gamma time constant must be positive, got {}",
                self.time_constant
            )));
        }
        Ok(())
    }

    /// Continuous kernel `(n t)^n exp(-n t / τ) / ((n-1)! τ^(n+1))`, zero for `t <= 0`.
    pub fn density(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let n = f64::from(self.order);
        let tau = self.time_constant;
        let log = n * (n * t).ln() - n * t / tau - ln_gamma(n) - (n + 1.0) * tau.ln();
        log.exp()
    }

    /// Area of the continuous kernel over `[0, t]`. The kernel is a Gamma
    /// density with shape `n + 1` and rate `n / τ`.
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let n = f64::from(self.order);
        gamma_lr(n + 1.0, n * t / self.time_constant)
    }
}

/// Causal FIR filter; `taps[k]` weights the sample `k` steps in the past.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalFilter {
    taps: Vec<f64>,
    dt: f64,
    first: usize,
}

impl TemporalFilter {
    pub fn from_taps(taps: Vec<f64>, dt: f64) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::param("temporal filter needs at least one tap"));
        }
        if !(dt > 0.0) {
            return Err(Error::param(format!("dt must be positive, got {dt}")));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::param("temporal filter taps must be finite"));
        }
        let first = taps.iter().position(|&t| t != 0.0).unwrap_or(taps.len());
        Ok(Self { taps, dt, first })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of taps, i.e. the history length needed to evaluate the filter.
    pub fn support_len(&self) -> usize {
        self.taps.len()
    }

    /// Lag of the first non-zero tap.
    pub fn first_nonzero(&self) -> usize {
        self.first
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// Lag of the largest tap (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &t) in self.taps.iter().enumerate() {
            if t > self.taps[best] {
                best = k;
            }
        }
        best
    }
}

/// Samples `Γ_{n,τ}` every `dt` ms over a window holding at least 99.9% of its
/// area and rescales the taps to sum to one.
pub fn sample_gamma(spec: GammaSpec, dt: f64) -> Result<TemporalFilter> {
    spec.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param(format!("dt must be positive, got {dt}")));
    }

    // lo: last lag whose left tail is still within budget.
    // hi: first lag whose right tail is within budget.
    let mut lo = 0usize;
    let mut k = 0usize;
    loop {
        let c = spec.cdf(k as f64 * dt);
        if c <= GAMMA_TAIL_MASS {
            lo = k;
        }
        if 1.0 - c <= GAMMA_TAIL_MASS {
            break;
        }
        k += 1;
        if k > 1_000_000 {
            return Err(Error::param("gamma kernel support exceeds 1e6 taps"));
        }
    }
    let hi = k;

    let mut taps = vec![0.0; hi + 1];
    for (j, tap) in taps.iter_mut().enumerate().take(hi + 1).skip(lo) {
        *tap = spec.density(j as f64 * dt);
    }
    let total: f64 = taps.iter().sum();
    if !(total > 0.0) {
        return Err(Error::param(format!(
            "dt={dt} is too coarse to sample a gamma kernel with τ={}",
            spec.time_constant
        )));
    }
    taps.iter_mut().for_each(|t| *t /= total);
    TemporalFilter::from_taps(taps, dt)
}

/// Band-pass filter: fast minus slow unit-sum Gamma kernels.
pub fn make_lmc_filter(fast: GammaSpec, slow: GammaSpec, dt: f64) -> Result<TemporalFilter> {
    let a = sample_gamma(fast, dt)?;
    let b = sample_gamma(slow, dt)?;
    let len = a.support_len().max(b.support_len());
    let taps = (0..len)
        .map(|k| a.taps.get(k).copied().unwrap_or(0.0) - b.taps.get(k).copied().unwrap_or(0.0))
        .collect();
    TemporalFilter::from_taps(taps, dt)
}

/// Square kernel of odd side `2 * radius + 1`, anchored at its center.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialKernel {
    radius: usize,
    weights: Vec<f64>,
    /// 1-D taps `f` with `weights[dy][dx] = f[dy]·f[dx]` up to rounding,
    /// when the kernel is separable.
    factor: Option<Vec<f64>>,
}

impl SpatialKernel {
    pub fn new(radius: usize, weights: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if weights.len() != side * side {
            return Err(Error::param(format!(
                "kernel of radius {radius} needs {} weights, got {}",
                side * side,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::param("kernel weights must be finite"));
        }
        Ok(Self {
            radius,
            weights,
            factor: None,
        })
    }

    pub fn identity() -> Self {
        Self {
            radius: 0,
            weights: vec![1.0],
            factor: Some(vec![1.0]),
        }
    }

    fn from_fn(radius: usize, f: impl Fn(isize, isize) -> f64) -> Self {
        let r = radius as isize;
        let mut weights = Vec::with_capacity((2 * radius + 1).pow(2));
        for dy in -r..=r {
            for dx in -r..=r {
                weights.push(f(dx, dy));
            }
        }
        Self {
            radius,
            weights,
            factor: None,
        }
    }

    pub fn is_separable(&self) -> bool {
        self.factor.is_some()
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dx, dy)` from the center.
    pub fn weight(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        assert!(dx.abs() <= r && dy.abs() <= r, "offset outside kernel");
        self.weights[((dy + r) as usize) * self.side() + (dx + r) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Smallest radius accepted for a Gaussian of width `sigma`.
pub fn gaussian_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Isotropic 2D Gaussian density.
pub fn gaussian_density(sigma: f64, dx: f64, dy: f64) -> f64 {
    let s2 = sigma * sigma;
    (-(dx * dx + dy * dy) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2)
}

/// Normalized Gaussian kernel truncated at `radius`.
pub fn make_gaussian(sigma: f64, radius: usize) -> Result<SpatialKernel> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    let min = gaussian_radius(sigma);
    if radius < min {
        return Err(Error::param(format!(
            "radius {radius} too small for sigma {sigma}; need at least {min}"
        )));
    }
    let mut k = SpatialKernel::from_fn(radius, |dx, dy| {
        gaussian_density(sigma, dx as f64, dy as f64)
    });
    let total = k.sum();
    k.weights.iter_mut().for_each(|w| *w /= total);
    let r = radius as isize;
    let mut f: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let f_total: f64 = f.iter().sum();
    f.iter_mut().for_each(|w| *w /= f_total);
    k.factor = Some(f);
    Ok(k)
}

/// Constants of the centre-surround inhibition kernel
/// `W = A·[g]⁺ + B·[g]⁻`, `g = G_{σ2} − e·G_{σ3} − ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InhibitionParams {
    pub a: f64,
    pub b: f64,
    pub e: f64,
    pub rho: f64,
    pub sigma2: f64,
    pub sigma3: f64,
}

impl Default for InhibitionParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 3.0,
            e: 1.0,
            rho: 0.0,
            sigma2: 1.5,
            sigma3: 3.0,
        }
    }
}

impl InhibitionParams {
    pub fn min_radius(&self) -> usize {
        gaussian_radius(self.sigma2.max(self.sigma3))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("sigma2", self.sigma2), ("sigma3", self.sigma3)] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {s}")));
            }
        }
        for (name, v) in [
            ("A", self.a),
            ("B", self.b),
            ("e", self.e),
            ("rho", self.rho),
        ] {
            if !v.is_finite() {
                return Err(Error::param(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Lateral inhibition kernel. Not renormalized: the balance between the
/// positive centre and the weighted negative surround sets its behaviour.
pub fn make_inhibition_kernel(p: &InhibitionParams, radius: usize) -> Result<SpatialKernel> {
    p.validate()?;
    let min = p.min_radius();
    if radius < min {
        return Err(Error::param(format!(
            "inhibition radius {radius} too small; need at least {min}"
        )));
    }
    Ok(SpatialKernel::from_fn(radius, |dx, dy| {
        let (x, y) = (dx as f64, dy as f64);
        let g = gaussian_density(p.sigma2, x, y) - p.e * gaussian_density(p.sigma3, x, y) - p.rho;
        p.a * g.max(0.0) + p.b * g.min(0.0)
    }))
}

/// Same-size 2D convolution with replicate padding:
/// `out(x, y) = Σ_{dy} Σ_{dx} w(dx, dy) · in(x − dx, y − dy)`.
pub fn convolve2d(frame: &Frame, kernel: &SpatialKernel) -> Frame {
    let mut out = Frame::zeros(frame.width(), frame.height());
    convolve2d_into(frame, kernel, &mut out);
    out
}

pub fn convolve2d_into(frame: &Frame, kernel: &SpatialKernel, out: &mut Frame) {
    assert!(frame.same_shape(out), "output frame shape mismatch");
    let (w, h) = (frame.width(), frame.height());
    let r = kernel.radius;
    let pw = w + 2 * r;
    let ph = h + 2 * r;

    // replicate-padded copy
    let mut pad = vec![0.0; pw * ph];
    for py in 0..ph {
        let sy = py.saturating_sub(r).min(h - 1);
        let src = frame.row(sy);
        let dst = &mut pad[py * pw..(py + 1) * pw];
        dst[..r].fill(src[0]);
        dst[r..r + w].copy_from_slice(src);
        dst[r + w..].fill(src[w - 1]);
    }

    let side = kernel.side();
    let data = out.data_mut();
    data.fill(0.0);
    for y in 0..h {
        let out_row = &mut data[y * w..(y + 1) * w];
        for ky in 0..side {
            // ky indexes dy = ky - r; source row is y - dy + r = y + 2r - ky
            let prow = &pad[(y + 2 * r - ky) * pw..(y + 2 * r - ky + 1) * pw];
            for kx in 0..side {
                let wgt = kernel.weights[ky * side + kx];
                if wgt == 0.0 {
                    continue;
                }
                let off = 2 * r - kx;
                let src = &prow[off..off + w];
                for (o, s) in out_row.iter_mut().zip(src) {
                    *o += wgt * s;
                }
            }
        }
    }
}

/// Same as [`convolve2d`] up to rounding, using two 1-D passes when the
/// kernel is separable.
pub fn convolve2d_fast(frame: &Frame, kernel: &SpatialKernel) -> Frame {
    let Some(f) = &kernel.factor else {
        return convolve2d(frame, kernel);
    };
    let (w, h) = (frame.width(), frame.height());
    let r = kernel.radius;
    let side = f.len();

    // horizontal pass over replicate-padded rows
    let mut tmp = Frame::zeros(w, h);
    let mut padded = vec![0.0; w + 2 * r];
    for y in 0..h {
        let src = frame.row(y);
        padded[..r].fill(src[0]);
        padded[r..r + w].copy_from_slice(src);
        padded[r + w..].fill(src[w - 1]);
        let out = &mut tmp.data_mut()[y * w..(y + 1) * w];
        for (kx, &wgt) in f.iter().enumerate() {
            let off = side - 1 - kx;
            for (o, s) in out.iter_mut().zip(&padded[off..off + w]) {
                *o += wgt * s;
            }
        }
    }

    // vertical pass with clamped row indices
    let mut out = Frame::zeros(w, h);
    for y in 0..h {
        let dst = &mut out.data_mut()[y * w..(y + 1) * w];
        for (ky, &wgt) in f.iter().enumerate() {
            let sy = (y as isize + r as isize - ky as isize).clamp(0, h as isize - 1) as usize;
            for (o, s) in dst.iter_mut().zip(tmp.row(sy)) {
                *o += wgt * s;
            }
        }
    }
    out
}

/// Fixed-capacity history of frames, newest at lag 0. Starts zero-filled so
/// that a stream behaves as if preceded by silence.
#[derive(Debug, Clone)]
pub struct FrameRing {
    frames: Vec<Frame>,
    newest: usize,
}

impl FrameRing {
    pub fn new(capacity: usize, width: usize, height: usize) -> Self {
        assert!(capacity >= 1, "ring capacity must be positive");
        Self {
            frames: vec![Frame::zeros(width, height); capacity],
            newest: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.frames.len()
    }

    /// Inserts `frame` as lag 0 and returns the evicted oldest frame.
    pub fn push(&mut self, frame: Frame) -> Frame {
        assert!(frame.same_shape(&self.frames[0]), "frame shape mismatch");
        let n = self.frames.len();
        self.newest = (self.newest + 1) % n;
        std::mem::replace(&mut self.frames[self.newest], frame)
    }

    /// Frame `lag` steps in the past (0 = most recent push).
    pub fn get(&self, lag: usize) -> &Frame {
        let n = self.frames.len();
        assert!(lag < n, "lag {lag} beyond ring capacity {n}");
        &self.frames[(self.newest + n - lag) % n]
    }
}

/// Per-pixel causal FIR over the ring: `out = Σ_k taps[k] · history[lag k]`.
pub fn temporal_convolve(history: &FrameRing, filter: &TemporalFilter) -> Frame {
    let f = history.get(0);
    let mut out = Frame::zeros(f.width(), f.height());
    temporal_convolve_into(history, filter, &mut out);
    out
}

pub fn temporal_convolve_into(history: &FrameRing, filter: &TemporalFilter, out: &mut Frame) {
    assert!(
        history.capacity() >= filter.support_len(),
        "history of {} frames cannot hold a {}-tap filter",
        history.capacity(),
        filter.support_len()
    );
    const CHUNK: usize = 2048;
    let data = out.data_mut();
    data.fill(0.0);
    // pixel blocks keep the accumulator in cache; per-pixel tap order is
    // unchanged, so results do not depend on the block size
    for start in (0..data.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(data.len());
        let acc = &mut data[start..end];
        for k in filter.first..filter.taps.len() {
            let w = filter.taps[k];
            if w == 0.0 {
                continue;
            }
            for (o, s) in acc.iter_mut().zip(&history.get(k).data()[start..end]) {
                *o += w * s;
            }
        }
    }
}
