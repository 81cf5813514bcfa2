//! Deterministic synthetic stimuli: a textured background translating with
//! wrap-around, small solid rectangles moving over it, and per-frame ground
//! truth of the rectangle centres.
//!
//! Positions are tracked in real numbers and rendered at the nearest integer
//! pixel. Frame `i` shows time `i · 1000 / fps` ms; a scene of duration `T`
//! has `round(T · fps / 1000) + 1` frames, covering both endpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::lptc::fmt_real;
use crate::pgm;

/// Source of the background texture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BackgroundSpec {
    /// Uniform `[0, 255]` noise blurred with a periodic Gaussian and
    /// quantized to 8 bits. `contrast` optionally rescales the result to
    /// that standard deviation about its mean.
    Noise {
        #[serde(default = "default_blur")]
        blur_sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        contrast: Option<f64>,
    },
    /// 8-bit grayscale PGM, tiled with wrap-around.
    Image { path: PathBuf },
    /// Flat gray level.
    Uniform { level: f64 },
}

fn default_blur() -> f64 {
    2.0
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        BackgroundSpec::Noise {
            blur_sigma: default_blur(),
            contrast: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    /// `(width, height)` in pixels.
    pub size: (usize, usize),
    /// Gray level in `[0, 255]`.
    pub luminance: f64,
    /// px/s.
    pub velocity: f64,
    /// Radians; 0 is rightward, π/2 is down the image.
    pub direction: f64,
    /// Centre at `start_time`, in pixels.
    pub start_position: (f64, f64),
    /// ms; the target is absent before this.
    #[serde(default)]
    pub start_time: f64,
}

impl TargetSpec {
    fn validate(&self) -> Result<()> {
        let (w, h) = self.size;
        if !(1..=50).contains(&w) || !(1..=50).contains(&h) {
            return Err(Error::param(format!(
                "target size must be within 1..=50, got {w}x{h}"
            )));
        }
        if !(0.0..=255.0).contains(&self.luminance) {
            return Err(Error::param(format!(
                "target luminance must be within [0, 255], got {}",
                self.luminance
            )));
        }
        if !self.velocity.is_finite() || !self.direction.is_finite() {
            return Err(Error::param("target velocity and direction must be finite"));
        }
        Ok(())
    }

    /// Centre at `t_ms`, or `None` before the target appears.
    pub fn center_at(&self, t_ms: f64) -> Option<(f64, f64)> {
        if t_ms < self.start_time {
            return None;
        }
        let d = self.velocity * (t_ms - self.start_time) / 1000.0;
        Some((
            self.start_position.0 + d * self.direction.cos(),
            self.start_position.1 + d * self.direction.sin(),
        ))
    }

    /// Top-left pixel of the rendered rectangle for a centre.
    fn top_left(&self, center: (f64, f64)) -> (i64, i64) {
        let (w, h) = self.size;
        (
            (center.0 - (w as f64 - 1.0) / 2.0).round() as i64,
            (center.1 - (h as f64 - 1.0) / 2.0).round() as i64,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    /// ms.
    pub duration: f64,
    #[serde(default)]
    pub background: BackgroundSpec,
    /// px/s at the start of the scene.
    #[serde(default)]
    pub bg_velocity: f64,
    /// Radians.
    #[serde(default)]
    pub bg_direction: f64,
    /// When set, background speed ramps linearly to this value (px/s) at the
    /// end of the scene.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bg_velocity_end: Option<f64>,
    /// ms at which the ramp starts; the speed holds at `bg_velocity` before.
    #[serde(default)]
    pub bg_ramp_start: f64,
    #[serde(default)]
    pub targets: Vec<TargetSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::param("scene dimensions must be positive"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::param(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        if !(self.duration >= 1000.0 / self.fps) {
            return Err(Error::param("duration must cover at least one frame"));
        }
        if !self.bg_velocity.is_finite() || !self.bg_direction.is_finite() {
            return Err(Error::param("background velocity must be finite"));
        }
        if self.bg_velocity_end.is_some_and(|v| !v.is_finite()) {
            return Err(Error::param("background end velocity must be finite"));
        }
        if !(self.bg_ramp_start >= 0.0 && self.bg_ramp_start < self.duration) {
            return Err(Error::param(format!(
                "ramp start {} ms must lie in [0, duration)",
                self.bg_ramp_start
            )));
        }
        for t in &self.targets {
            t.validate()?;
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps / 1000.0).round() as usize + 1
    }

    pub fn dt_ms(&self) -> f64 {
        1000.0 / self.fps
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Background displacement in pixels at `t_ms`.
    pub fn background_offset(&self, t_ms: f64) -> (f64, f64) {
        let t = t_ms / 1000.0;
        let dist = match self.bg_velocity_end {
            Some(v1) => {
                let ramp = (t_ms - self.bg_ramp_start).max(0.0) / 1000.0;
                let span = (self.duration - self.bg_ramp_start) / 1000.0;
                self.bg_velocity * t + (v1 - self.bg_velocity) * ramp * ramp / (2.0 * span)
            }
            None => self.bg_velocity * t,
        };
        (
            dist * self.bg_direction.cos(),
            dist * self.bg_direction.sin(),
        )
    }

    /// Background speed at `t_ms`.
    pub fn background_velocity(&self, t_ms: f64) -> f64 {
        match self.bg_velocity_end {
            Some(v1) => {
                let frac =
                    (t_ms - self.bg_ramp_start).max(0.0) / (self.duration - self.bg_ramp_start);
                self.bg_velocity + (v1 - self.bg_velocity) * frac
            }
            None => self.bg_velocity,
        }
    }
}

/// Ground-truth centre of one target in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub target_id: usize,
    pub x: f64,
    pub y: f64,
}

/// Per-frame target centres, indexed by frame number.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub frames: Vec<Vec<TruthEntry>>,
}

impl GroundTruth {
    pub fn total(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    /// CSV `frame,target_id,x,y`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "frame,target_id,x,y").map_err(io)?;
        for (i, entries) in self.frames.iter().enumerate() {
            for e in entries {
                writeln!(
                    out,
                    "{},{},{},{}",
                    i,
                    e.target_id,
                    fmt_real(e.x),
                    fmt_real(e.y)
                )
                .map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    /// Reads the CSV; frames without rows are empty up to `frame_count`.
    pub fn read_csv(path: &Path, frame_count: usize) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            frame: usize,
            target_id: usize,
            x: f64,
            y: f64,
        }
        let mut frames = vec![Vec::new(); frame_count];
        let mut reader = csv::Reader::from_path(path)?;
        for row in reader.deserialize() {
            let r: Row = row?;
            if r.frame >= frame_count {
                return Err(Error::InvalidInput(format!(
                    "{}: ground truth references frame {} beyond {} frames",
                    path.display(),
                    r.frame,
                    frame_count
                )));
            }
            frames[r.frame].push(TruthEntry {
                target_id: r.target_id,
                x: r.x,
                y: r.y,
            });
        }
        Ok(Self { frames })
    }
}

/// Scene ready to render: validated spec plus its background texture.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: SceneSpec,
    texture: Frame,
}

impl Scene {
    /// Validates the spec, builds the texture and checks every target stays
    /// inside the frame for the whole scene.
    pub fn new(spec: SceneSpec) -> Result<Self> {
        spec.validate()?;
        let texture = match &spec.background {
            BackgroundSpec::Noise {
                blur_sigma,
                contrast,
            } => noise_texture(spec.width, spec.height, *blur_sigma, *contrast, spec.seed)?,
            BackgroundSpec::Image { path } => pgm::read_pgm(path)?,
            BackgroundSpec::Uniform { level } => {
                if !(0.0..=255.0).contains(level) {
                    return Err(Error::param("uniform level must be within [0, 255]"));
                }
                Frame::filled(spec.width, spec.height, *level)
            }
        };
        let scene = Self { spec, texture };
        for i in 0..scene.frame_count() {
            let t = scene.time_ms(i);
            for (id, target) in scene.spec.targets.iter().enumerate() {
                if let Some(c) = target.center_at(t) {
                    let (x0, y0) = target.top_left(c);
                    let (w, h) = target.size;
                    if x0 < 0
                        || y0 < 0
                        || x0 + w as i64 > scene.spec.width as i64
                        || y0 + h as i64 > scene.spec.height as i64
                    {
                        return Err(Error::Generation {
                            frame: i,
                            reason: format!(
                                "target {id} leaves the frame at ({:.1}, {:.1})",
                                c.0, c.1
                            ),
                        });
                    }
                }
            }
        }
        Ok(scene)
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn texture(&self) -> &Frame {
        &self.texture
    }

    pub fn frame_count(&self) -> usize {
        self.spec.frame_count()
    }

    pub fn time_ms(&self, index: usize) -> f64 {
        index as f64 * self.spec.dt_ms()
    }

    pub fn render(&self, index: usize) -> Frame {
        let t = self.time_ms(index);
        let (dx, dy) = self.spec.background_offset(t);
        let (ox, oy) = (dx.round() as i64, dy.round() as i64);
        let (tw, th) = (self.texture.width() as i64, self.texture.height() as i64);
        let mut frame = Frame::from_fn(self.spec.width, self.spec.height, |x, y| {
            let sx = (x as i64 - ox).rem_euclid(tw) as usize;
            let sy = (y as i64 - oy).rem_euclid(th) as usize;
            self.texture.get(sx, sy)
        });
        for target in &self.spec.targets {
            if let Some(c) = target.center_at(t) {
                let (x0, y0) = target.top_left(c);
                let (w, h) = target.size;
                for y in y0..y0 + h as i64 {
                    for x in x0..x0 + w as i64 {
                        frame.set(x as usize, y as usize, target.luminance);
                    }
                }
            }
        }
        frame
    }

    pub fn truth(&self, index: usize) -> Vec<TruthEntry> {
        let t = self.time_ms(index);
        self.spec
            .targets
            .iter()
            .enumerate()
            .filter_map(|(id, target)| {
                target.center_at(t).map(|(x, y)| TruthEntry {
                    target_id: id,
                    x,
                    y,
                })
            })
            .collect()
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            frames: (0..self.frame_count()).map(|i| self.truth(i)).collect(),
        }
    }

    /// Streams rendered frames in order.
    pub fn frames(&self) -> impl Iterator<Item = Frame> + '_ {
        (0..self.frame_count()).map(|i| self.render(i))
    }

    /// Writes `frame_000000.pgm …` and `truth.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for i in 0..self.frame_count() {
            pgm::write_pgm(&dir.join(pgm::frame_file_name(i)), &self.render(i))?;
        }
        self.ground_truth().write_csv(&dir.join("truth.csv"))
    }
}

/// Renders a whole scene in memory.
pub fn generate(spec: &SceneSpec) -> Result<(Vec<Frame>, GroundTruth)> {
    let scene = Scene::new(spec.clone())?;
    Ok((scene.frames().collect(), scene.ground_truth()))
}

/// Band-limited value noise with exact wrap-around, quantized to 8 bits.
pub fn noise_texture(
    width: usize,
    height: usize,
    blur_sigma: f64,
    contrast: Option<f64>,
    seed: u64,
) -> Result<Frame> {
    if !(blur_sigma >= 0.0 && blur_sigma.is_finite()) || contrast.is_some_and(|c| !(c >= 0.0)) {
        return Err(Error::param("invalid noise texture parameters"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<f64> = (0..width * height)
        .map(|_| rng.gen_range(0.0..255.0))
        .collect();
    if blur_sigma > 0.0 {
        data = periodic_blur(&data, width, height, blur_sigma);
    }
    if let Some(target) = contrast {
        let n = data.len() as f64;
        let mu = data.iter().sum::<f64>() / n;
        let sd = (data.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
        let scale = if sd > 0.0 { target / sd } else { 0.0 };
        data.iter_mut().for_each(|v| *v = (*v - mu) * scale + mu);
    }
    let data = data
        .into_iter()
        .map(|v| v.clamp(0.0, 255.0).round())
        .collect();
    Frame::from_vec(width, height, data)
}

/// Separable Gaussian blur on a torus.
fn periodic_blur(data: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    let (w, h) = (width as i64, height as i64);
    let mut tmp = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, wk) in k.iter().enumerate() {
                let sx = (x + i as i64 - r).rem_euclid(w);
                acc += wk * data[(y * w + sx) as usize];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, wk) in k.iter().enumerate() {
                let sy = (y + i as i64 - r).rem_euclid(h);
                acc += wk * tmp[(sy * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

/// Target-free stimulus used to measure tuning curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationStimulus {
    pub width: usize,
    pub height: usize,
    /// ms.
    pub duration: f64,
    pub fps: f64,
    pub seed: u64,
    pub background: BackgroundSpec,
}

impl Default for CalibrationStimulus {
    fn default() -> Self {
        Self {
            width: 250,
            height: 250,
            duration: 500.0,
            fps: 1000.0,
            seed: 1,
            background: BackgroundSpec::default(),
        }
    }
}

impl CalibrationStimulus {
    pub fn scene(&self, velocity: f64, direction: f64) -> SceneSpec {
        SceneSpec {
            width: self.width,
            height: self.height,
            fps: self.fps,
            duration: self.duration,
            background: self.background.clone(),
            bg_velocity: velocity,
            bg_direction: direction,
            bg_velocity_end: None,
            bg_ramp_start: 0.0,
            targets: vec![],
            seed: self.seed,
        }
    }
}

/// Streams the calibration texture translating at `velocity` px/s.
pub fn generate_calibration(
    velocity: f64,
    direction: f64,
    config: &CalibrationStimulus,
) -> Result<impl Iterator<Item = Frame>> {
    if !(velocity >= 0.0) {
        return Err(Error::param("calibration velocity must be non-negative"));
    }
    let scene = Scene::new(config.scene(velocity, direction))?;
    Ok((0..scene.frame_count()).map(move |i| scene.render(i)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SceneSpec {
        SceneSpec {
            width: 64,
            height: 48,
            fps: 1000.0,
            duration: 100.0,
            background: BackgroundSpec::default(),
            bg_velocity: 0.0,
            bg_direction: 0.0,
            bg_velocity_end: None,
            bg_ramp_start: 0.0,
            targets: vec![],
            seed: 3,
        }
    }

    #[test]
    fn static_background_without_targets_is_constant() {
        let (frames, truth) = generate(&spec()).unwrap();
        assert_eq!(frames.len(), 101);
        assert!(frames.iter().all(|f| f == &frames[0]));
        assert_eq!(truth.total(), 0);
    }

    #[test]
    fn target_position_after_200ms() {
        let mut s = spec();
        s.width = 120;
        s.duration = 200.0;
        s.targets.push(TargetSpec {
            size: (5, 5),
            luminance: 25.0,
            velocity: 100.0,
            direction: 0.0,
            start_position: (50.0, 20.0),
            start_time: 0.0,
        });
        let scene = Scene::new(s).unwrap();
        let last = scene.truth(scene.frame_count() - 1);
        assert!((last[0].x - 70.0).abs() < 1e-9);
        assert_eq!(last[0].y, 20.0);
        let f = scene.render(scene.frame_count() - 1);
        for y in 18..23 {
            for x in 68..73 {
                assert_eq!(f.get(x, y), 25.0);
            }
        }
    }

    #[test]
    fn target_leaving_frame_names_the_frame() {
        let mut s = spec();
        s.targets.push(TargetSpec {
            size: (5, 5),
            luminance: 25.0,
            velocity: 300.0,
            direction: 0.0,
            start_position: (40.0, 20.0),
            start_time: 0.0,
        });
        // right edge 42 + 0.3 px/frame reaches 64 after ~72 frames
        match Scene::new(s) {
            Err(Error::Generation { frame, .. }) => assert!((70..=75).contains(&frame)),
            other => panic!("expected generation error, got {other:?}"),
        }
    }

    #[test]
    fn calibration_stimulus_is_deterministic_and_rigid() {
        let cfg = CalibrationStimulus {
            width: 40,
            height: 30,
            duration: 20.0,
            ..Default::default()
        };
        let a: Vec<Frame> = generate_calibration(300.0, 0.0, &cfg).unwrap().collect();
        let b: Vec<Frame> = generate_calibration(300.0, 0.0, &cfg).unwrap().collect();
        assert_eq!(a, b);
        let still: Vec<Frame> = generate_calibration(0.0, 0.0, &cfg).unwrap().collect();
        assert!(still.iter().all(|f| f == &still[0]));

        let s300 = cfg.scene(300.0, 0.0);
        let s600 = cfg.scene(600.0, 0.0);
        for t in [1.0, 7.0, 20.0] {
            let (a, _) = s300.background_offset(t);
            let (b, _) = s600.background_offset(t);
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn noise_texture_statistics() {
        let stats = |t: &Frame| {
            let mean = t.mean();
            let sd =
                (t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.len() as f64).sqrt();
            (mean, sd)
        };
        // blurring uniform noise of variance 255²/12 by a unit-sum Gaussian
        // divides the variance by roughly 4πσ²
        let t = noise_texture(128, 128, 2.0, None, 1).unwrap();
        let (mean, sd) = stats(&t);
        let expected = 255.0 / 12f64.sqrt() / (4.0 * std::f64::consts::PI * 4.0).sqrt();
        assert!((mean - 127.5).abs() < 1.0);
        assert!((sd - expected).abs() < 1.0, "sd {sd} vs {expected}");
        assert!(t
            .data()
            .iter()
            .all(|v| v.fract() == 0.0 && (0.0..=255.0).contains(v)));

        let t = noise_texture(128, 128, 2.0, Some(30.0), 1).unwrap();
        let (mean, sd) = stats(&t);
        assert!((mean - 127.5).abs() < 1.0);
        assert!((sd - 30.0).abs() < 1.0);
    }

    #[test]
    fn velocity_ramp_integrates_linearly() {
        let mut s = spec();
        s.bg_velocity = 150.0;
        s.bg_velocity_end = Some(600.0);
        s.duration = 1000.0;
        assert_eq!(s.background_velocity(0.0), 150.0);
        assert_eq!(s.background_velocity(1000.0), 600.0);
        // mean speed 375 px/s over 1 s
        assert!((s.background_offset(1000.0).0 - 375.0).abs() < 1e-9);

        s.bg_ramp_start = 200.0;
        assert_eq!(s.background_velocity(150.0), 150.0);
        assert_eq!(s.background_velocity(600.0), 375.0);
        // 0.2 s at 150, then 0.8 s averaging 375
        assert!((s.background_offset(1000.0).0 - 330.0).abs() < 1e-9);
        s.bg_ramp_start = 1000.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn scene_spec_json_round_trip() {
        let mut s = spec();
        s.targets.push(TargetSpec {
            size: (3, 4),
            luminance: 10.0,
            velocity: 250.0,
            direction: std::f64::consts::PI,
            start_position: (30.0, 20.0),
            start_time: 5.0,
        });
        let text = serde_json::to_string_pretty(&s).unwrap();
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let minimal: SceneSpec =
            serde_json::from_str(r#"{"width": 10, "height": 10, "fps": 1000, "duration": 5}"#)
                .unwrap();
        assert_eq!(minimal.background, BackgroundSpec::default());
    }
}
