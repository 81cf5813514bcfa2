//! Wide-field motion correlators and population decoding of background
//! velocity.
//!
//! Each correlator multiplies the undelayed ON/OFF channels at a pixel with
//! the delayed ON/OFF channels of a partner pixel `β` pixels upstream along
//! its preferred direction `θ`. Pooling a correlator over the frame gives a
//! firing rate. On dense texture the rectified channels correlate even at
//! unmatched speeds, so by default the rate is taken after subtracting the
//! mirror-image correlator, which cancels that speed-independent floor. A
//! bank over several `β` encodes speed, decoded by matching the rate vector
//! against calibrated tuning curves. Integrating decoded
//! velocity over past frames yields the per-lag background displacement used
//! by the spatio-temporal feedback.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::early_vision::{ChannelSet, EarlyVisionConfig, EarlyVisionState, MedullaOutputs};
use crate::error::{Error, Result};
use crate::frame::Frame;

/// Pooling window for the firing rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Region {
    Full,
    Window {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
}

impl Region {
    /// Clipped `(x0, y0, x1, y1)` bounds (exclusive end) inside a frame.
    fn bounds(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        match *self {
            Region::Full => (0, 0, width, height),
            Region::Window {
                x,
                y,
                width: w,
                height: h,
            } => (
                x.min(width),
                y.min(height),
                (x + w).min(width),
                (y + h).min(height),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LptcBankConfig {
    /// Correlation distances in pixels, strictly increasing.
    pub betas: Vec<f64>,
    /// Preferred directions in radians, distinct, in `[0, 2π)`.
    pub directions: Vec<f64>,
    pub region: Region,
    /// Spacing of the tuning-table velocity grid (px/s).
    pub velocity_step: f64,
    /// Upper end of the tuning-table velocity grid (px/s).
    pub velocity_max: f64,
    /// Subtract the mirror-image correlator (direction `θ + π`) before
    /// pooling into a firing rate, and clip the difference at zero.
    pub opponent: bool,
}

impl Default for LptcBankConfig {
    fn default() -> Self {
        Self {
            betas: (1..=9).map(|i| 2.0 * i as f64).collect(),
            directions: (0..8)
                .map(|i| i as f64 * std::f64::consts::FRAC_PI_4)
                .collect(),
            region: Region::Full,
            velocity_step: 25.0,
            velocity_max: 1000.0,
            opponent: true,
        }
    }
}

impl LptcBankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() {
            return Err(Error::param(
                "at least one correlation distance is required",
            ));
        }
        if self.betas.iter().any(|&b| !(b >= 1.0 && b.is_finite())) {
            return Err(Error::param("correlation distances must be >= 1 pixel"));
        }
        if self.betas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param(
                "correlation distances must be strictly increasing",
            ));
        }
        if self.directions.is_empty() {
            return Err(Error::param("at least one direction is required"));
        }
        let two_pi = std::f64::consts::TAU;
        if self.directions.iter().any(|&d| !(0.0..two_pi).contains(&d)) {
            return Err(Error::param("directions must lie in [0, 2π)"));
        }
        for (i, a) in self.directions.iter().enumerate() {
            if self.directions[i + 1..].contains(a) {
                return Err(Error::param("directions must be distinct"));
            }
        }
        if !(self.velocity_step > 0.0 && self.velocity_max >= self.velocity_step) {
            return Err(Error::param("velocity grid needs step > 0 and max >= step"));
        }
        Ok(())
    }

    /// `0, step, 2·step, …, max`.
    pub fn velocity_grid(&self) -> Vec<f64> {
        let n = (self.velocity_max / self.velocity_step + 1e-9).floor() as usize;
        (0..=n).map(|i| i as f64 * self.velocity_step).collect()
    }
}

/// Partner pixel offset for a correlator: `β` pixels upstream of `θ`.
pub fn partner_offset(beta: f64, theta: f64) -> (isize, isize) {
    (
        -(beta * theta.cos()).round() as isize,
        -(beta * theta.sin()).round() as isize,
    )
}

/// Correlator output map
/// `R(x,y) = tm3(x,y)·mi1(x',y') + tm2(x,y)·tm1(x',y')` where `(x', y')` is
/// the partner pixel. Partners outside the frame contribute zero.
pub fn lptc_response(medulla: &MedullaOutputs, beta: f64, theta: f64) -> Result<Frame> {
    let (tm3, tm2) = (&medulla.tm3, &medulla.tm2);
    let (mi1, tm1) = (medulla.mi1_lptc()?, medulla.tm1_lptc()?);
    let (ox, oy) = partner_offset(beta, theta);
    Ok(Frame::from_fn(tm3.width(), tm3.height(), |x, y| {
        let (px, py) = (x as isize + ox, y as isize + oy);
        match (mi1.get_checked(px, py), tm1.get_checked(px, py)) {
            (Some(on_d), Some(off_d)) => tm3.get(x, y) * on_d + tm2.get(x, y) * off_d,
            _ => 0.0,
        }
    }))
}

/// Sum of `lptc_response` over `region`, without materializing the map.
fn pooled_response(
    medulla: &MedullaOutputs,
    mi1: &Frame,
    tm1: &Frame,
    beta: f64,
    theta: f64,
    region: &Region,
) -> f64 {
    let (w, h) = (medulla.tm3.width(), medulla.tm3.height());
    let (x0, y0, x1, y1) = region.bounds(w, h);
    let (ox, oy) = partner_offset(beta, theta);
    // x range whose partner stays inside the frame
    let xa = x0.max((-ox).max(0) as usize);
    let xb = x1.min((w as isize - ox.max(0)).max(0) as usize);
    if xa >= xb {
        return 0.0;
    }
    let mut total = 0.0;
    for y in y0..y1 {
        let py = y as isize + oy;
        if py < 0 || py >= h as isize {
            continue;
        }
        let on = &medulla.tm3.row(y)[xa..xb];
        let off = &medulla.tm2.row(y)[xa..xb];
        let pxa = (xa as isize + ox) as usize;
        let pxb = (xb as isize + ox) as usize;
        let on_d = &mi1.row(py as usize)[pxa..pxb];
        let off_d = &tm1.row(py as usize)[pxa..pxb];
        let mut lanes = [0.0; 4];
        let n = on.len() / 4 * 4;
        for i in (0..n).step_by(4) {
            for l in 0..4 {
                lanes[l] += on[i + l] * on_d[i + l] + off[i + l] * off_d[i + l];
            }
        }
        for i in n..on.len() {
            lanes[0] += on[i] * on_d[i] + off[i] * off_d[i];
        }
        total += (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    }
    total
}

fn region_area(region: &Region, width: usize, height: usize) -> f64 {
    let (x0, y0, x1, y1) = region.bounds(width, height);
    ((x1 - x0) * (y1 - y0)).max(1) as f64
}

/// Mean correlator response over the region for one `(β, θ)`.
pub fn mean_response(
    medulla: &MedullaOutputs,
    beta: f64,
    theta: f64,
    region: &Region,
) -> Result<f64> {
    let (mi1, tm1) = (medulla.mi1_lptc()?, medulla.tm1_lptc()?);
    let area = region_area(region, medulla.tm3.width(), medulla.tm3.height());
    Ok(pooled_response(medulla, mi1, tm1, beta, theta, region) / area)
}

/// Firing-rate vector of the bank at its strongest direction.
#[derive(Debug, Clone, PartialEq)]
pub struct FiringRates {
    /// Mean pooled response per `β`, in raw (uncalibrated) units.
    pub rates: Vec<f64>,
    pub direction_index: usize,
    pub direction: f64,
}

/// Firing rate of one correlator in the bank: the pooled response, or with
/// `opponent` set, the pooled response minus its mirror image, clipped at 0.
pub fn bank_rate(
    medulla: &MedullaOutputs,
    config: &LptcBankConfig,
    beta: f64,
    theta: f64,
) -> Result<f64> {
    let preferred = mean_response(medulla, beta, theta, &config.region)?;
    if !config.opponent {
        return Ok(preferred);
    }
    let null = mean_response(medulla, beta, theta + std::f64::consts::PI, &config.region)?;
    Ok((preferred - null).max(0.0))
}

fn opposite_index(directions: &[f64], i: usize) -> Option<usize> {
    let target = (directions[i] + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU);
    directions.iter().position(|&d| {
        let diff = (d - target).abs();
        diff < 1e-9 || (std::f64::consts::TAU - diff) < 1e-9
    })
}

/// Picks the direction with the largest response summed over all `β`
/// (first direction on ties) and reports the per-`β` rates there.
pub fn firing_rates(medulla: &MedullaOutputs, config: &LptcBankConfig) -> Result<FiringRates> {
    let (mi1, tm1) = (medulla.mi1_lptc()?, medulla.tm1_lptc()?);
    let area = region_area(&config.region, medulla.tm3.width(), medulla.tm3.height());
    let pooled = |theta: f64| -> Vec<f64> {
        config
            .betas
            .iter()
            .map(|&b| pooled_response(medulla, mi1, tm1, b, theta, &config.region) / area)
            .collect()
    };
    let raw: Vec<Vec<f64>> = config.directions.iter().map(|&t| pooled(t)).collect();
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for (di, &theta) in config.directions.iter().enumerate() {
        let rates: Vec<f64> = if config.opponent {
            let null = match opposite_index(&config.directions, di) {
                Some(oi) => raw[oi].clone(),
                None => pooled(theta + std::f64::consts::PI),
            };
            raw[di].iter().zip(&null).map(|(p, n)| p - n).collect()
        } else {
            raw[di].clone()
        };
        let total: f64 = rates.iter().sum();
        if best.as_ref().map_or(true, |(_, t, _)| total > *t) {
            best = Some((di, total, rates));
        }
    }
    let (direction_index, _, rates) = best.expect("directions validated non-empty");
    Ok(FiringRates {
        rates: rates.into_iter().map(|r| r.max(0.0)).collect(),
        direction_index,
        direction: config.directions[direction_index],
    })
}

/// Calibrated responses `f(v, β)`, normalized by the bank-wide maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningTable {
    betas: Vec<f64>,
    velocities: Vec<f64>,
    raw: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    scale: f64,
}

impl TuningTable {
    /// Builds a table from raw mean rates `raw[β][v]` and checks that every
    /// row has a single peak and that peaks move to higher speeds with `β`.
    pub fn from_raw(betas: Vec<f64>, velocities: Vec<f64>, raw: Vec<Vec<f64>>) -> Result<Self> {
        if betas.is_empty() || velocities.is_empty() {
            return Err(Error::InvalidInput("empty tuning table".into()));
        }
        if raw.len() != betas.len() || raw.iter().any(|r| r.len() != velocities.len()) {
            return Err(Error::InvalidInput(
                "tuning table is not rectangular".into(),
            ));
        }
        if velocities.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "tuning velocities must be strictly increasing".into(),
            ));
        }
        if raw.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "tuning responses must be finite and non-negative".into(),
            ));
        }
        let scale = raw.iter().flatten().copied().fold(0.0, f64::max);
        if scale <= 0.0 {
            return Err(Error::InvalidInput("tuning table is all zero".into()));
        }
        let values = raw
            .iter()
            .map(|row| row.iter().map(|v| v / scale).collect())
            .collect();
        let table = Self {
            betas,
            velocities,
            raw,
            values,
            scale,
        };
        table.check_monotone_peaks()?;
        Ok(table)
    }

    fn check_monotone_peaks(&self) -> Result<()> {
        let mut peaks = Vec::with_capacity(self.betas.len());
        for (i, row) in self.values.iter().enumerate() {
            let max = row.iter().copied().fold(f64::MIN, f64::max);
            let hits = row.iter().filter(|&&v| v == max).count();
            if hits != 1 {
                return Err(Error::Calibration {
                    beta_low: self.betas[i],
                    beta_high: self.betas[i],
                    velocity_low: self.velocities[self.peak_index(i)],
                    velocity_high: self.velocities[self.peak_index(i)],
                });
            }
            peaks.push(self.peak_index(i));
        }
        for i in 1..peaks.len() {
            if peaks[i] <= peaks[i - 1] {
                return Err(Error::Calibration {
                    beta_low: self.betas[i - 1],
                    beta_high: self.betas[i],
                    velocity_low: self.velocities[peaks[i - 1]],
                    velocity_high: self.velocities[peaks[i]],
                });
            }
        }
        Ok(())
    }

    fn peak_index(&self, beta_index: usize) -> usize {
        let row = &self.values[beta_index];
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        best
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    /// Normalized responses, indexed `[β][velocity]`.
    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Un-normalized responses as measured.
    pub fn raw(&self) -> &[Vec<f64>] {
        &self.raw
    }

    /// Bank-wide normalization constant (largest raw response).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Velocity of the strongest response for each `β`.
    pub fn optimal_velocities(&self) -> Vec<f64> {
        (0..self.betas.len())
            .map(|i| self.velocities[self.peak_index(i)])
            .collect()
    }

    /// Normalized responses of the whole bank at velocity index `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[j]).collect()
    }

    /// Raw rates expressed in table units.
    pub fn normalize(&self, rates: &[f64]) -> Vec<f64> {
        rates.iter().map(|r| r / self.scale).collect()
    }

    /// CSV with header `beta,velocity,response`, one row per sample. The
    /// stored responses are the raw rates; loading renormalizes them.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "beta,velocity,response").map_err(io)?;
        for (i, &beta) in self.betas.iter().enumerate() {
            for (j, &v) in self.velocities.iter().enumerate() {
                writeln!(out, "{},{},{}", beta, v, fmt_real(self.raw[i][j])).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            beta: f64,
            velocity: f64,
            response: f64,
        }
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["beta", "velocity", "response"] {
            return Err(Error::InvalidInput(format!(
                "{}: expected header beta,velocity,response",
                path.display()
            )));
        }
        let mut betas: Vec<f64> = Vec::new();
        let mut velocities: Vec<f64> = Vec::new();
        let mut raw: Vec<Vec<f64>> = Vec::new();
        for row in reader.deserialize() {
            let row: Row = row?;
            if betas.last() != Some(&row.beta) {
                betas.push(row.beta);
                raw.push(Vec::new());
            }
            let r = raw.last_mut().expect("pushed above");
            if betas.len() == 1 {
                velocities.push(row.velocity);
            } else if velocities.get(r.len()) != Some(&row.velocity) {
                return Err(Error::InvalidInput(format!(
                    "{}: velocity grid differs between β rows",
                    path.display()
                )));
            }
            r.push(row.response);
        }
        Self::from_raw(betas, velocities, raw)
    }
}

/// Formats a real with 17 significant digits, enough to round-trip.
pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Measures the tuning table. `stimulus(v)` must yield a target-free texture
/// translating at `v` px/s along `θ = 0`; the steady-state response (frames
/// after the early-vision warm-up, averaged) is recorded for every `β`.
pub fn calibrate_tuning<I>(
    early: &EarlyVisionConfig,
    bank: &LptcBankConfig,
    stimulus: impl Fn(f64) -> I,
) -> Result<TuningTable>
where
    I: Iterator<Item = Frame>,
{
    early.validate()?;
    bank.validate()?;
    let velocities = bank.velocity_grid();
    let mut raw = vec![vec![0.0; velocities.len()]; bank.betas.len()];
    for (j, &v) in velocities.iter().enumerate() {
        let mut frames = stimulus(v).peekable();
        let first = frames
            .peek()
            .ok_or_else(|| Error::InvalidInput("calibration stimulus is empty".into()))?;
        let mut ev = EarlyVisionState::new(early, ChannelSet::LPTC, first.width(), first.height())?;
        let warm = ev.warmup_frames();
        let mut sums = vec![0.0; bank.betas.len()];
        let mut counted = 0usize;
        for frame in frames {
            let out = ev.step(&frame)?;
            if ev.frames_seen() > warm {
                for (s, &b) in sums.iter_mut().zip(&bank.betas) {
                    *s += bank_rate(&out.medulla, bank, b, 0.0)?;
                }
                counted += 1;
            }
        }
        if counted == 0 {
            return Err(Error::InvalidInput(format!(
                "calibration stimulus shorter than the {warm}-frame warm-up"
            )));
        }
        for (i, s) in sums.iter().enumerate() {
            raw[i][j] = s / counted as f64;
        }
    }
    TuningTable::from_raw(bank.betas.clone(), velocities, raw)
}

/// Grid velocity whose tuning column is closest to the normalized rates.
/// Maximizing `Π exp(−(r_i − f_i(v))²)` is minimizing the squared residual;
/// ties resolve to the smaller velocity.
pub fn decode_velocity(rates: &[f64], table: &TuningTable) -> f64 {
    assert_eq!(
        rates.len(),
        table.betas.len(),
        "rate vector length mismatch"
    );
    let mut best = (0usize, f64::INFINITY);
    for j in 0..table.velocities.len() {
        let residual: f64 = rates
            .iter()
            .zip(&table.values)
            .map(|(r, row)| (r - row[j]).powi(2))
            .sum();
        if residual < best.1 {
            best = (j, residual);
        }
    }
    table.velocities[best.0]
}

/// Decoded background motion for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundMotion {
    /// Speed in px/s.
    pub velocity: f64,
    /// Direction in radians.
    pub direction: f64,
    pub direction_index: usize,
    /// Normalized firing rates per `β`.
    pub rates: Vec<f64>,
}

/// Per-lag background displacement `(φ_k, ψ_k)` in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftTable {
    shifts: Vec<(f64, f64)>,
}

impl ShiftTable {
    pub fn zeros(lags: usize) -> Self {
        Self {
            shifts: vec![(0.0, 0.0); lags],
        }
    }

    pub fn from_shifts(shifts: Vec<(f64, f64)>) -> Result<Self> {
        if shifts.first().is_some_and(|&s| s != (0.0, 0.0)) {
            return Err(Error::InvalidInput("lag-0 shift must be zero".into()));
        }
        if shifts.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidInput("shifts must be finite".into()));
        }
        Ok(Self { shifts })
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn get(&self, lag: usize) -> (f64, f64) {
        self.shifts[lag]
    }

    pub fn as_slice(&self) -> &[(f64, f64)] {
        &self.shifts
    }
}

/// Integrates velocity over past frames:
/// `φ_k = Σ_{j=1..k} ν(t−j)·cos θ(t−j)·dt`, `ψ_k` likewise with `sin`.
///
/// `history[j - 1]` holds `(ν, θ)` of frame `t − j` (most recent first);
/// velocities are px/s and `dt_ms` is the frame step in ms. Produces
/// `lags` entries (`k = 0..lags`).
pub fn accumulate_shifts(history: &[(f64, f64)], lags: usize, dt_ms: f64) -> Result<ShiftTable> {
    if lags == 0 {
        return Ok(ShiftTable { shifts: vec![] });
    }
    if history.len() < lags - 1 {
        return Err(Error::InvalidState(format!(
            "{} frames of motion history cannot cover {} lags",
            history.len(),
            lags
        )));
    }
    let dt = dt_ms / 1000.0;
    let mut shifts = Vec::with_capacity(lags);
    let (mut phi, mut psi) = (0.0, 0.0);
    shifts.push((phi, psi));
    for &(v, theta) in &history[..lags - 1] {
        phi += v * theta.cos() * dt;
        psi += v * theta.sin() * dt;
        shifts.push((phi, psi));
    }
    Ok(ShiftTable { shifts })
}

/// Runtime side of the bank: decodes each frame's background motion and
/// keeps the short history needed for the shift table. The history starts
/// filled with zero motion so shift tables are defined from the first frame.
#[derive(Debug, Clone)]
pub struct BackgroundEstimator {
    bank: LptcBankConfig,
    table: TuningTable,
    history: VecDeque<(f64, f64)>,
    lags: usize,
    dt_ms: f64,
}

impl BackgroundEstimator {
    pub fn new(bank: LptcBankConfig, table: TuningTable, lags: usize, dt_ms: f64) -> Result<Self> {
        bank.validate()?;
        if table.betas() != bank.betas.as_slice() {
            return Err(Error::InvalidInput(format!(
                "tuning table β set {:?} does not match bank {:?}",
                table.betas(),
                bank.betas
            )));
        }
        let cap = lags.saturating_sub(1);
        Ok(Self {
            bank,
            table,
            history: std::iter::repeat((0.0, 0.0)).take(cap).collect(),
            lags,
            dt_ms,
        })
    }

    pub fn table(&self) -> &TuningTable {
        &self.table
    }

    /// Shift table built from the frames before the current one.
    pub fn shifts(&self) -> Result<ShiftTable> {
        let hist: Vec<(f64, f64)> = self.history.iter().copied().collect();
        accumulate_shifts(&hist, self.lags, self.dt_ms)
    }

    /// Decodes the current frame and appends it to the motion history.
    pub fn observe(&mut self, medulla: &MedullaOutputs) -> Result<BackgroundMotion> {
        let fr = firing_rates(medulla, &self.bank)?;
        let rates = self.table.normalize(&fr.rates);
        let velocity = decode_velocity(&rates, &self.table);
        if !self.history.is_empty() {
            self.history.pop_back();
            self.history.push_front((velocity, fr.direction));
        }
        Ok(BackgroundMotion {
            velocity,
            direction: fr.direction,
            direction_index: fr.direction_index,
            rates,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn medulla_from(tm3: Frame, tm2: Frame, mi1: Frame, tm1: Frame) -> MedullaOutputs {
        MedullaOutputs {
            tm3,
            tm2,
            tm1_stmd: None,
            tm1_lptc: Some(tm1),
            mi1_lptc: Some(mi1),
        }
    }

    #[test]
    fn partner_is_upstream_of_preferred_direction() {
        assert_eq!(partner_offset(4.0, 0.0), (-4, 0));
        assert_eq!(partner_offset(4.0, std::f64::consts::PI), (4, 0));
        assert_eq!(partner_offset(4.0, std::f64::consts::FRAC_PI_2), (0, -4));
        assert_eq!(partner_offset(4.0, std::f64::consts::FRAC_PI_4), (-3, -3));
    }

    #[test]
    fn response_reads_partner_pixel() {
        let mut tm3 = Frame::zeros(10, 3);
        tm3.set(6, 1, 2.0);
        let mut mi1 = Frame::zeros(10, 3);
        mi1.set(2, 1, 5.0);
        let m = medulla_from(tm3, Frame::zeros(10, 3), mi1, Frame::zeros(10, 3));
        let r = lptc_response(&m, 4.0, 0.0).unwrap();
        assert_eq!(r.get(6, 1), 10.0);
        assert_eq!(r.sum(), 10.0);
        // off-frame partners contribute nothing
        let r = lptc_response(&m, 4.0, std::f64::consts::PI).unwrap();
        assert_eq!(r.sum(), 0.0);
    }

    #[test]
    fn pooled_sum_matches_response_map() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut f = || Frame::from_fn(13, 11, |_, _| rng.gen_range(0.0..1.0));
        let m = medulla_from(f(), f(), f(), f());
        let region = Region::Full;
        for &b in &[1.0, 2.0, 6.0, 18.0] {
            for i in 0..8 {
                let theta = i as f64 * std::f64::consts::FRAC_PI_4;
                let map = lptc_response(&m, b, theta).unwrap().sum();
                let pooled = mean_response(&m, b, theta, &region).unwrap() * 143.0;
                assert_abs_diff_eq!(map, pooled, epsilon = 1e-9);
            }
        }
        let win = Region::Window {
            x: 2,
            y: 3,
            width: 5,
            height: 4,
        };
        let map = lptc_response(&m, 2.0, 0.0).unwrap();
        let mut expect = 0.0;
        for y in 3..7 {
            for x in 2..7 {
                expect += map.get(x, y);
            }
        }
        assert_abs_diff_eq!(
            mean_response(&m, 2.0, 0.0, &win).unwrap() * 20.0,
            expect,
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_input_rates_pick_first_direction() {
        let z = || Frame::zeros(8, 8);
        let m = medulla_from(z(), z(), z(), z());
        let fr = firing_rates(&m, &LptcBankConfig::default()).unwrap();
        assert!(fr.rates.iter().all(|&r| r == 0.0));
        assert_eq!(fr.direction_index, 0);
    }

    #[test]
    fn opponent_rate_cancels_symmetric_correlation() {
        let one = || Frame::filled(40, 40, 1.0);
        let m = medulla_from(one(), one(), one(), one());
        let mut plain = LptcBankConfig::default();
        plain.opponent = false;
        let fr = firing_rates(&m, &plain).unwrap();
        assert!(fr.rates.iter().all(|&r| r > 0.0));
        let fr = firing_rates(&m, &LptcBankConfig::default()).unwrap();
        assert!(fr.rates.iter().all(|&r| r == 0.0));
        assert_eq!(
            bank_rate(&m, &LptcBankConfig::default(), 4.0, 0.0).unwrap(),
            0.0
        );
        // a lone direction with no mirror in the set still gets its null
        let mut lone = LptcBankConfig::default();
        lone.directions = vec![0.0];
        assert!(firing_rates(&m, &lone)
            .unwrap()
            .rates
            .iter()
            .all(|&r| r == 0.0));
    }

    fn toy_table() -> TuningTable {
        TuningTable::from_raw(
            vec![2.0, 4.0],
            vec![0.0, 100.0, 200.0, 300.0],
            vec![vec![0.0, 4.0, 2.0, 1.0], vec![0.0, 1.0, 2.0, 8.0]],
        )
        .unwrap()
    }

    #[test]
    fn table_normalizes_by_global_max() {
        let t = toy_table();
        assert_eq!(t.scale(), 8.0);
        assert_eq!(t.values()[1][3], 1.0);
        assert_eq!(t.values()[0][1], 0.5);
        assert_eq!(t.optimal_velocities(), vec![100.0, 300.0]);
    }

    #[test]
    fn non_monotone_peaks_fail_calibration() {
        let err = TuningTable::from_raw(
            vec![2.0, 4.0],
            vec![0.0, 100.0, 200.0],
            vec![vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 1.0]],
        )
        .unwrap_err();
        match err {
            Error::Calibration {
                beta_low,
                beta_high,
                ..
            } => assert_eq!((beta_low, beta_high), (2.0, 4.0)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn decode_exact_column_and_zero() {
        let t = toy_table();
        assert_eq!(decode_velocity(&t.column(3), &t), 300.0);
        assert_eq!(decode_velocity(&t.column(1), &t), 100.0);
        // zero rates decode to the column with least norm (v = 0 here)
        assert_eq!(decode_velocity(&[0.0, 0.0], &t), 0.0);
    }

    #[test]
    fn decode_ties_go_to_smaller_velocity() {
        let t = TuningTable::from_raw(vec![1.0], vec![10.0, 20.0, 30.0], vec![vec![0.0, 1.0, 0.5]])
            .unwrap();
        // 0.25 is equidistant from 0.0 and 0.5
        assert_eq!(decode_velocity(&[0.25], &t), 10.0);
    }

    #[test]
    fn shift_accumulation_examples() {
        let hist = vec![(100.0, 0.0); 60];
        let s = accumulate_shifts(&hist, 51, 1.0).unwrap();
        assert_eq!(s.get(0), (0.0, 0.0));
        assert_abs_diff_eq!(s.get(50).0, 5.0, epsilon = 1e-12);
        assert_eq!(s.get(50).1, 0.0);

        let hist = vec![(100.0, std::f64::consts::FRAC_PI_2); 20];
        let s = accumulate_shifts(&hist, 21, 1.0).unwrap();
        assert!(s.as_slice().iter().all(|(phi, _)| phi.abs() < 1e-12));
        assert_abs_diff_eq!(s.get(20).1, 2.0, epsilon = 1e-12);

        assert!(matches!(
            accumulate_shifts(&hist, 30, 1.0),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn shift_accumulation_matches_direct_sum() {
        let hist: Vec<(f64, f64)> = (0..40)
            .map(|j| (if j < 15 { 300.0 } else { 120.0 }, 0.3 * j as f64))
            .collect();
        let s = accumulate_shifts(&hist, 41, 2.0).unwrap();
        for k in 0..41 {
            let (mut p, mut q) = (0.0, 0.0);
            for &(v, th) in &hist[..k] {
                p += v * th.cos() * 0.002;
                q += v * th.sin() * 0.002;
            }
            assert_abs_diff_eq!(s.get(k).0, p, epsilon = 1e-12);
            assert_abs_diff_eq!(s.get(k).1, q, epsilon = 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = TuningTable::from_raw(
            vec![2.0, 4.0],
            vec![0.0, 25.0, 50.0],
            vec![
                vec![0.0, 1.0 / 3.0, 0.123456789123],
                vec![0.0, 0.1, std::f64::consts::PI],
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tuning.csv");
        t.write_csv(&p).unwrap();
        let back = TuningTable::read_csv(&p).unwrap();
        assert_eq!(back, t);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("beta,velocity,response\n"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn bank_config_validation() {
        assert!(LptcBankConfig::default().validate().is_ok());
        let mut c = LptcBankConfig::default();
        c.betas = vec![4.0, 2.0];
        assert!(c.validate().is_err());
        let mut c = LptcBankConfig::default();
        c.directions = vec![0.0, 7.0];
        assert!(c.validate().is_err());
        let grid = LptcBankConfig::default().velocity_grid();
        assert_eq!(grid.len(), 41);
        assert_eq!(grid[1], 25.0);
        assert_eq!(*grid.last().unwrap(), 1000.0);
    }
}
