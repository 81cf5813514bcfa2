//! Named parameter sweeps over synthetic single-target videos. Every sweep
//! point is rendered once and evaluated under each requested feedback mode;
//! the output is one ROC CSV per (point, mode) and a summary of detection
//! rates at a fixed false-alarm level.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::evalkit::{RocAccumulator, RocCurve, DEFAULT_NMS_RADIUS, DEFAULT_ROC_STEPS};
use crate::lptc::{fmt_real, TuningTable};
use crate::pipeline::Pipeline;
use crate::stmd::FeedbackMode;
use crate::synthgen::{BackgroundSpec, Scene, SceneSpec, TargetSpec};

/// False-alarm level at which sweeps are summarized.
pub const SUMMARY_FALSE_ALARMS: f64 = 5.0;

const LEFT: f64 = PI;
const RIGHT: f64 = 0.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    /// Longest scene, ms. Fast targets get shorter scenes so they stay in
    /// view.
    pub duration: f64,
    pub nms_radius: usize,
    pub roc_steps: usize,
    pub modes: Vec<FeedbackMode>,
    pub background: BackgroundSpec,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            seed: 1,
            width: 320,
            height: 240,
            fps: 1000.0,
            duration: 600.0,
            nms_radius: DEFAULT_NMS_RADIUS,
            roc_steps: DEFAULT_ROC_STEPS,
            modes: FeedbackMode::ALL.to_vec(),
            background: BackgroundSpec::default(),
        }
    }
}

/// Knobs of a single-target video. Defaults are the reference video: a
/// 5×5 dark target at 250 px/s over a background at 250 px/s, both leftward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VideoParams {
    pub target_size: usize,
    pub target_luminance: f64,
    pub target_velocity: f64,
    pub target_direction: f64,
    pub bg_velocity: f64,
    pub bg_direction: f64,
}

impl Default for VideoParams {
    fn default() -> Self {
        Self {
            target_size: 5,
            target_luminance: 25.0,
            target_velocity: 250.0,
            target_direction: LEFT,
            bg_velocity: 250.0,
            bg_direction: LEFT,
        }
    }
}

impl VideoParams {
    /// Scene for these parameters. The target crosses the frame horizontally
    /// through the middle row, starting near the edge it moves away from.
    pub fn scene(&self, settings: &ExperimentSettings) -> SceneSpec {
        let margin = 5.0 + self.target_size as f64 / 2.0;
        let travel = settings.width as f64 - 2.0 * margin - 1.0;
        let dx = self.target_direction.cos();
        let start_x = if dx < 0.0 {
            settings.width as f64 - 1.0 - margin
        } else {
            margin
        };
        let speed_x = (self.target_velocity * dx).abs();
        let duration = if speed_x > 0.0 {
            let fit = (travel / speed_x * 1000.0).floor();
            settings.duration.min(fit)
        } else {
            settings.duration
        };
        SceneSpec {
            width: settings.width,
            height: settings.height,
            fps: settings.fps,
            duration,
            background: settings.background.clone(),
            bg_velocity: self.bg_velocity,
            bg_direction: self.bg_direction,
            bg_velocity_end: None,
            bg_ramp_start: 0.0,
            targets: vec![TargetSpec {
                size: (self.target_size, self.target_size),
                luminance: self.target_luminance,
                velocity: self.target_velocity,
                direction: self.target_direction,
                start_position: (start_x, (settings.height as f64 - 1.0) / 2.0),
                start_time: 0.0,
            }],
            seed: settings.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// File-name-safe identifier, unique within the experiment.
    pub label: String,
    /// Swept quantity.
    pub value: f64,
    pub scene: SceneSpec,
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn points(&self, settings: &ExperimentSettings) -> Vec<SweepPoint>;
}

fn sweep(
    settings: &ExperimentSettings,
    values: impl IntoIterator<Item = f64>,
    label: impl Fn(f64) -> String,
    apply: impl Fn(&mut VideoParams, f64),
) -> Vec<SweepPoint> {
    values
        .into_iter()
        .map(|v| {
            let mut params = VideoParams::default();
            apply(&mut params, v);
            SweepPoint {
                label: label(v),
                value: v,
                scene: params.scene(settings),
            }
        })
        .collect()
}

pub struct SizeSweep;

impl Experiment for SizeSweep {
    fn name(&self) -> &'static str {
        "size-sweep"
    }
    fn description(&self) -> &'static str {
        "square target side from 1 to 25 px"
    }
    fn points(&self, settings: &ExperimentSettings) -> Vec<SweepPoint> {
        let sides = [1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25];
        sweep(
            settings,
            sides.map(f64::from),
            |v| format!("size_{:02}", v as usize),
            |p, v| p.target_size = v as usize,
        )
    }
}

pub struct LuminanceSweep;

impl Experiment for LuminanceSweep {
    fn name(&self) -> &'static str {
        "luminance-sweep"
    }
    fn description(&self) -> &'static str {
        "target gray level from 0 to 100"
    }
    fn points(&self, settings: &ExperimentSettings) -> Vec<SweepPoint> {
        sweep(
            settings,
            (0..=10).map(|i| 10.0 * i as f64),
            |v| format!("luminance_{:03}", v as usize),
            |p, v| p.target_luminance = v,
        )
    }
}

pub struct TargetVelocitySweep;

impl Experiment for TargetVelocitySweep {
    fn name(&self) -> &'static str {
        "target-velocity-sweep"
    }
    fn description(&self) -> &'static str {
        "leftward target speed from 100 to 800 px/s"
    }
    fn points(&self, settings: &ExperimentSettings) -> Vec<SweepPoint> {
        sweep(
            settings,
            (1..=8).map(|i| 100.0 * i as f64),
            |v| format!("target_velocity_{:04}", v as usize),
            |p, v| p.target_velocity = v,
        )
    }
}

pub struct BackgroundVelocitySweep;

impl Experiment for BackgroundVelocitySweep {
    fn name(&self) -> &'static str {
        "bg-velocity-sweep"
    }
    fn description(&self) -> &'static str {
        "background speed from 100 to 800 px/s, leftward then rightward"
    }
    fn points(&self, settings: &ExperimentSettings) -> Vec<SweepPoint> {
        let speeds: Vec<f64> = (1..=8).map(|i| 100.0 * i as f64).collect();
        let mut points = sweep(
            settings,
            speeds.iter().copied(),
            |v| format!("bg_left_{:04}", v as usize),
            |p, v| p.bg_velocity = v,
        );
        points.extend(sweep(
            settings,
            speeds.iter().copied(),
            |v| format!("bg_right_{:04}", v as usize),
            |p, v| {
                p.bg_velocity = v;
                p.bg_direction = RIGHT;
            },
        ));
        points
    }
}

/// A slow target over a faster background moving the same way, where
/// delay-only feedback cannot separate the two.
pub struct Ablation;

impl Ablation {
    pub fn params() -> VideoParams {
        VideoParams {
            target_velocity: 350.0,
            bg_velocity: 450.0,
            ..VideoParams::default()
        }
    }
}

impl Experiment for Ablation {
    fn name(&self) -> &'static str {
        "ablation"
    }
    fn description(&self) -> &'static str {
        "350 px/s target over a 450 px/s background, all feedback modes"
    }
    fn points(&self, settings: &ExperimentSettings) -> Vec<SweepPoint> {
        vec![SweepPoint {
            label: "target_0350_bg_0450".into(),
            value: 350.0,
            scene: Self::params().scene(settings),
        }]
    }
}

pub struct ExperimentRegistry {
    experiments: BTreeMap<&'static str, Box<dyn Experiment>>,
}

impl ExperimentRegistry {
    pub fn empty() -> Self {
        Self {
            experiments: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(SizeSweep));
        r.register(Box::new(LuminanceSweep));
        r.register(Box::new(TargetVelocitySweep));
        r.register(Box::new(BackgroundVelocitySweep));
        r.register(Box::new(Ablation));
        r
    }

    pub fn register(&mut self, experiment: Box<dyn Experiment>) {
        self.experiments.insert(experiment.name(), experiment);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.experiments.keys().copied()
    }

    pub fn get(&self, name: &str) -> Result<&dyn Experiment> {
        self.experiments
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown experiment {name:?}; expected one of: {}",
                    self.names().collect::<Vec<_>>().join(", ")
                ))
            })
    }
}

/// Runs one scene under `mode` and sweeps thresholds over the post-warm-up
/// frames. A tuning table is required for modes that shift along the
/// background trajectory and ignored otherwise.
pub fn evaluate_scene(
    config: &ModelConfig,
    scene: &Scene,
    mode: FeedbackMode,
    tuning: Option<&TuningTable>,
    nms_radius: usize,
    roc_steps: usize,
) -> Result<RocCurve> {
    let mut config = config.clone();
    config.stmd.mode = mode;
    let spec = scene.spec();
    let needs_table = mode == FeedbackMode::SpatioTemporal;
    let table = if needs_table { tuning.cloned() } else { None };
    let mut pipeline = Pipeline::new(&config, spec.width, spec.height, table)?;
    if scene.frame_count() <= pipeline.warmup_frames() {
        return Err(Error::InvalidInput(format!(
            "scene has {} frames, not more than the {}-frame warm-up",
            scene.frame_count(),
            pipeline.warmup_frames()
        )));
    }
    let mut acc = RocAccumulator::new(nms_radius)?;
    for (i, frame) in scene.frames().enumerate() {
        let out = pipeline.step(&frame)?;
        if !out.warmup {
            acc.push(i, out.response());
        }
    }
    acc.finish(&scene.ground_truth(), roc_steps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub value: f64,
    pub mode: FeedbackMode,
    pub dr_at_fa: f64,
    pub curve: RocCurve,
}

/// Runs every point and mode of `experiment`, writing
/// `<label>_<mode>.csv` ROC files and `summary.csv` into `out_dir`.
pub fn run_experiment(
    experiment: &dyn Experiment,
    config: &ModelConfig,
    tuning: Option<&TuningTable>,
    settings: &ExperimentSettings,
    out_dir: &Path,
) -> Result<Vec<SummaryRow>> {
    config.validate()?;
    if settings.modes.contains(&FeedbackMode::SpatioTemporal) && tuning.is_none() {
        return Err(Error::InvalidState(
            "spatio-temporal feedback needs a tuning table".into(),
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = Vec::new();
    for point in experiment.points(settings) {
        let scene = Scene::new(point.scene.clone())?;
        for &mode in &settings.modes {
            let curve = evaluate_scene(
                config,
                &scene,
                mode,
                tuning,
                settings.nms_radius,
                settings.roc_steps,
            )?;
            curve.write_csv(&out_dir.join(format!("{}_{}.csv", point.label, mode)))?;
            rows.push(SummaryRow {
                label: point.label.clone(),
                value: point.value,
                mode,
                dr_at_fa: curve.dr_at_fa(SUMMARY_FALSE_ALARMS),
                curve,
            });
        }
    }
    write_summary(&out_dir.join("summary.csv"), &rows)?;
    Ok(rows)
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "point,value,mode,dr_at_fa5").map_err(io)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.label,
            r.value,
            r.mode,
            fmt_real(r.dr_at_fa)
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}
