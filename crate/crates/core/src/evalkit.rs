//! Turning response maps into scored detections: peak extraction with
//! non-maximum suppression, one-to-one matching against ground truth,
//! detection and false-alarm rates, and threshold sweeps.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::lptc::fmt_real;
use crate::synthgen::{GroundTruth, TruthEntry};

/// A detection counts as a hit when it lies within this Euclidean distance
/// (inclusive) of an unmatched ground-truth centre.
pub const MATCH_RADIUS: f64 = 5.0;
pub const DEFAULT_NMS_RADIUS: usize = 5;
pub const DEFAULT_ROC_STEPS: usize = 100;
/// Lowest sweep threshold relative to the highest.
pub const ROC_DYNAMIC_RANGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub x: usize,
    pub y: usize,
    pub score: f64,
}

/// Highest score first, then row-major position.
fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.y.cmp(&b.y))
        .then(a.x.cmp(&b.x))
}

/// Detections of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame: usize,
    pub detections: Vec<Detection>,
}

/// Pixels strictly greater than each of their in-frame 8-neighbours and at
/// least `threshold`, in row-major order.
pub fn local_maxima(q: &Frame, threshold: f64) -> Vec<Detection> {
    let (w, h) = (q.width(), q.height());
    let mut out = Vec::new();
    for y in 0..h {
        let row = q.row(y);
        for x in 0..w {
            let v = row[x];
            if v < threshold {
                continue;
            }
            let mut is_max = true;
            'scan: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                let nrow = q.row(ny);
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    if (nx, ny) != (x, y) && nrow[nx] >= v {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                out.push(Detection { x, y, score: v });
            }
        }
    }
    out
}

/// Greedy suppression: candidates are visited best first and kept unless a
/// kept one lies within `radius` in Chebyshev distance. Output is ranked.
pub fn non_max_suppression(mut candidates: Vec<Detection>, radius: usize) -> Vec<Detection> {
    candidates.sort_by(rank);
    let mut kept: Vec<Detection> = Vec::new();
    for c in candidates {
        let suppressed = kept
            .iter()
            .any(|k| k.x.abs_diff(c.x) <= radius && k.y.abs_diff(c.y) <= radius);
        if !suppressed {
            kept.push(c);
        }
    }
    kept
}

pub fn extract_detections(q: &Frame, threshold: f64, nms_radius: usize) -> Result<Vec<Detection>> {
    if nms_radius < 1 {
        return Err(Error::param("NMS radius must be at least 1"));
    }
    Ok(non_max_suppression(local_maxima(q, threshold), nms_radius))
}

/// Counts behind the detection and false-alarm rates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Metrics {
    pub true_positives: usize,
    pub actual_targets: usize,
    pub false_positives: usize,
    pub frames: usize,
}

impl Metrics {
    /// `N_t / N_a`, 0 when there are no targets.
    pub fn detection_rate(&self) -> f64 {
        if self.actual_targets == 0 {
            0.0
        } else {
            self.true_positives as f64 / self.actual_targets as f64
        }
    }

    /// False positives per frame, 0 for an empty evaluation.
    pub fn false_alarm_rate(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.false_positives as f64 / self.frames as f64
        }
    }

    fn add(&mut self, other: Metrics) {
        self.true_positives += other.true_positives;
        self.actual_targets += other.actual_targets;
        self.false_positives += other.false_positives;
        self.frames += other.frames;
    }
}

/// Matches one frame. Detections are taken in rank order, whatever order
/// they arrive in; each claims the nearest unmatched truth within
/// [`MATCH_RADIUS`] (lowest index on distance ties).
pub fn match_frame(detections: &[Detection], truth: &[TruthEntry]) -> Metrics {
    let mut order: Vec<&Detection> = detections.iter().collect();
    order.sort_by(|a, b| rank(a, b));
    let mut taken = vec![false; truth.len()];
    let mut tp = 0;
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (i, t) in truth.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let dist = (d.x as f64 - t.x).hypot(d.y as f64 - t.y);
            if dist <= MATCH_RADIUS && best.map_or(true, |(_, bd)| dist < bd) {
                best = Some((i, dist));
            }
        }
        if let Some((i, _)) = best {
            taken[i] = true;
            tp += 1;
        }
    }
    Metrics {
        true_positives: tp,
        actual_targets: truth.len(),
        false_positives: detections.len() - tp,
        frames: 1,
    }
}

/// Scores every listed frame against its ground-truth entries. Frames absent
/// from `detections` are not evaluated, which is how warm-up is excluded.
pub fn match_and_score(detections: &[FrameDetections], truth: &GroundTruth) -> Result<Metrics> {
    let mut total = Metrics::default();
    for fd in detections {
        let entries = truth.frames.get(fd.frame).ok_or_else(|| {
            Error::InvalidInput(format!(
                "detections reference frame {} but ground truth covers {} frames",
                fd.frame,
                truth.frames.len()
            ))
        })?;
        total.add(match_frame(&fd.detections, entries));
    }
    Ok(total)
}

/// CSV `frame,x,y,score`, frames in the given order, detections ranked.
pub fn write_detections_csv(path: &Path, detections: &[FrameDetections]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "frame,x,y,score").map_err(io)?;
    for fd in detections {
        for d in &fd.detections {
            writeln!(out, "{},{},{},{}", fd.frame, d.x, d.y, fmt_real(d.score)).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Reads a detections CSV back. Only frames with at least one row appear,
/// so pass `frames` to restore empty frames in `frames` order.
pub fn read_detections_csv(path: &Path, frames: &[usize]) -> Result<Vec<FrameDetections>> {
    #[derive(Deserialize)]
    struct Row {
        frame: usize,
        x: usize,
        y: usize,
        score: f64,
    }
    let mut out: Vec<FrameDetections> = frames
        .iter()
        .map(|&frame| FrameDetections {
            frame,
            detections: vec![],
        })
        .collect();
    let mut reader = csv::Reader::from_path(path)?;
    for row in reader.deserialize() {
        let r: Row = row?;
        let slot = out.iter_mut().find(|f| f.frame == r.frame).ok_or_else(|| {
            Error::InvalidInput(format!(
                "{}: frame {} is not in the evaluated range",
                path.display(),
                r.frame
            ))
        })?;
        slot.detections.push(Detection {
            x: r.x,
            y: r.y,
            score: r.score,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub detection_rate: f64,
    pub false_alarm_rate: f64,
    pub metrics: Metrics,
}

/// Threshold sweep, thresholds strictly decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Detection rate at a false-alarm level, interpolating linearly along
    /// the curve from an implicit origin. Past the end of the curve the last
    /// detection rate holds.
    pub fn dr_at_fa(&self, fa: f64) -> f64 {
        let mut prev = (0.0, 0.0);
        for p in &self.points {
            let cur = (p.false_alarm_rate, p.detection_rate);
            if cur.0 > fa {
                if cur.0 == prev.0 {
                    return prev.1;
                }
                return prev.1 + (cur.1 - prev.1) * (fa - prev.0) / (cur.0 - prev.0);
            }
            prev = cur;
        }
        prev.1
    }

    /// Best detection rate among swept points with false-alarm rate ≤ `fa`.
    pub fn max_dr_within_fa(&self, fa: f64) -> f64 {
        self.points
            .iter()
            .filter(|p| p.false_alarm_rate <= fa)
            .map(|p| p.detection_rate)
            .fold(0.0, f64::max)
    }

    /// CSV `threshold,detection_rate,false_alarm_rate`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "threshold,detection_rate,false_alarm_rate").map_err(io)?;
        for p in &self.points {
            writeln!(
                out,
                "{},{},{}",
                fmt_real(p.threshold),
                fmt_real(p.detection_rate),
                fmt_real(p.false_alarm_rate)
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// `steps` thresholds from `max` down to `max · ROC_DYNAMIC_RANGE`, evenly
/// spaced in log scale.
pub fn roc_thresholds(max: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|i| max * ROC_DYNAMIC_RANGE.powf(i as f64 / (steps - 1) as f64))
        .collect()
}

/// Streaming threshold sweep. Each pushed map is reduced once to its
/// suppressed peak list; because greedy suppression only looks at stronger
/// peaks, the detections at any threshold are exactly the stored peaks
/// scoring at or above it.
#[derive(Debug, Clone)]
pub struct RocAccumulator {
    nms_radius: usize,
    frames: Vec<FrameDetections>,
    max: f64,
}

impl RocAccumulator {
    pub fn new(nms_radius: usize) -> Result<Self> {
        if nms_radius < 1 {
            return Err(Error::param("NMS radius must be at least 1"));
        }
        Ok(Self {
            nms_radius,
            frames: vec![],
            max: 0.0,
        })
    }

    pub fn push(&mut self, frame: usize, q: &Frame) {
        let peaks = non_max_suppression(local_maxima(q, f64::MIN_POSITIVE), self.nms_radius);
        if let Some(top) = peaks.first() {
            self.max = self.max.max(top.score);
        }
        // anything under the final lowest threshold can never be reported,
        // and the running maximum only grows
        let floor = self.max * ROC_DYNAMIC_RANGE;
        self.frames.push(FrameDetections {
            frame,
            detections: peaks.into_iter().filter(|d| d.score >= floor).collect(),
        });
    }

    pub fn max_score(&self) -> f64 {
        self.max
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Detections at `threshold`, one entry per pushed frame.
    pub fn detections_at(&self, threshold: f64) -> Vec<FrameDetections> {
        self.frames
            .iter()
            .map(|fd| FrameDetections {
                frame: fd.frame,
                detections: fd
                    .detections
                    .iter()
                    .take_while(|d| d.score >= threshold)
                    .copied()
                    .collect(),
            })
            .collect()
    }

    /// Sweeps `steps` thresholds. A map sequence with no positive response
    /// gives a single point at threshold 0 with both rates 0.
    pub fn finish(&self, truth: &GroundTruth, steps: usize) -> Result<RocCurve> {
        if steps < 2 {
            return Err(Error::param("a ROC sweep needs at least 2 thresholds"));
        }
        if self.max <= 0.0 {
            let metrics = match_and_score(&self.detections_at(f64::INFINITY), truth)?;
            return Ok(RocCurve {
                points: vec![RocPoint {
                    threshold: 0.0,
                    detection_rate: 0.0,
                    false_alarm_rate: 0.0,
                    metrics,
                }],
            });
        }
        roc_thresholds(self.max, steps)
            .into_iter()
            .map(|threshold| {
                let metrics = match_and_score(&self.detections_at(threshold), truth)?;
                Ok(RocPoint {
                    threshold,
                    detection_rate: metrics.detection_rate(),
                    false_alarm_rate: metrics.false_alarm_rate(),
                    metrics,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(|points| RocCurve { points })
    }
}

/// Batch sweep over maps whose indices are `first_frame..`.
pub fn roc_sweep(
    maps: &[Frame],
    first_frame: usize,
    truth: &GroundTruth,
    steps: usize,
    nms_radius: usize,
) -> Result<RocCurve> {
    let mut acc = RocAccumulator::new(nms_radius)?;
    for (i, q) in maps.iter().enumerate() {
        acc.push(first_frame + i, q);
    }
    acc.finish(truth, steps)
}
