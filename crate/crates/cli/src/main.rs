use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stmd_core::evalkit::{
    extract_detections, write_detections_csv, FrameDetections, RocAccumulator, DEFAULT_NMS_RADIUS,
    DEFAULT_ROC_STEPS,
};
use stmd_core::experiments::{
    run_experiment, ExperimentRegistry, ExperimentSettings, SUMMARY_FALSE_ALARMS,
};
use stmd_core::lptc::TuningTable;
use stmd_core::pgm::{frame_file_name, list_frames, read_pgm, write_response_map};
use stmd_core::pipeline::{calibrate, StepOutput};
use stmd_core::synthgen::{GroundTruth, Scene, SceneSpec};
use stmd_core::{FeedbackMode, Frame, ModelConfig, Pipeline};

/// Default detection threshold on the detector output for `run`.
const DEFAULT_THRESHOLD: f64 = 0.3;

#[derive(Parser, Debug)]
#[command(
    name = "stmd",
    version,
    about = "Small moving target detection with background-motion feedback"
)]
struct Cli {
    /// Model configuration JSON. Missing fields take the built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration value, e.g. `--set stmd.alpha=0.2`.
    /// May be repeated; applied after `--config`.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    overrides: Vec<String>,

    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    dump_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Detect targets in a frame directory or a generated scene.
    Run(RunArgs),
    /// Measure the velocity tuning table.
    Calibrate(CalibrateArgs),
    /// Run a named parameter sweep and write ROC curves.
    Experiment(ExperimentArgs),
    /// Render a scene description to PGM frames plus ground truth.
    Generate(GenerateArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Directory of grayscale PGM frames, read in file-name order.
    #[arg(long, value_name = "DIR", conflicts_with = "scene")]
    input: Option<PathBuf>,

    /// Scene description JSON rendered on the fly.
    #[arg(long, value_name = "FILE")]
    scene: Option<PathBuf>,

    /// Ground truth CSV (`frame,target_id,x,y`). Defaults to `truth.csv`
    /// inside the input directory when present.
    #[arg(long, value_name = "FILE")]
    truth: Option<PathBuf>,

    /// Feedback strategy: none, time-delay or spatio-temporal.
    #[arg(long, value_name = "MODE")]
    feedback: Option<String>,

    /// Tuning table CSV. Calibrated on the fly when a strategy needs one.
    #[arg(long, value_name = "FILE")]
    tuning: Option<PathBuf>,

    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Minimum detector response reported in detections.csv.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,

    #[arg(long, default_value_t = DEFAULT_NMS_RADIUS)]
    nms_radius: usize,

    #[arg(long, default_value_t = DEFAULT_ROC_STEPS)]
    roc_steps: usize,

    /// Write every intermediate map of every frame as rescaled PGM.
    #[arg(long)]
    dump_layers: bool,

    /// Replaces the seed of a `--scene` description.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Output CSV.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    /// Seed of the calibration texture.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// size-sweep, luminance-sweep, target-velocity-sweep, bg-velocity-sweep
    /// or ablation.
    name: Option<String>,

    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Tuning table CSV. Calibrated on the fly when omitted.
    #[arg(long, value_name = "FILE")]
    tuning: Option<PathBuf>,

    /// Only evaluate this feedback strategy instead of all three.
    #[arg(long, value_name = "MODE")]
    feedback: Option<String>,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    #[arg(long, default_value_t = DEFAULT_NMS_RADIUS)]
    nms_radius: usize,

    #[arg(long, default_value_t = DEFAULT_ROC_STEPS)]
    roc_steps: usize,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Scene description JSON.
    #[arg(long, value_name = "FILE")]
    scene: Option<PathBuf>,

    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(stmd_core::Error),
}

impl From<stmd_core::Error> for Failure {
    fn from(e: stmd_core::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        use stmd_core::Error as E;
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(e) => match e {
                E::Io { .. } | E::InvalidInput(_) | E::Json(_) | E::Csv(_) => 2,
                E::InvalidParameter(_) | E::InvalidState(_) | E::Generation { .. } => 3,
                E::Calibration { .. } => 4,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(msg) => f.write_str(msg),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    let mut config = base_config(cli)?;
    match &cli.command {
        None if cli.dump_config => dump(&config),
        None => Err(usage("no subcommand given; try `stmd --help`")),
        Some(Command::Run(args)) => {
            if let Some(mode) = &args.feedback {
                config.stmd.mode = parse_mode(mode)?;
            }
            if cli.dump_config {
                return dump(&config);
            }
            cmd_run(&config, args)
        }
        Some(Command::Calibrate(args)) => {
            if let Some(seed) = args.seed {
                config.calibration.seed = seed;
            }
            if cli.dump_config {
                return dump(&config);
            }
            cmd_calibrate(&config, args)
        }
        Some(Command::Experiment(args)) => {
            if cli.dump_config {
                return dump(&config);
            }
            cmd_experiment(&config, args)
        }
        Some(Command::Generate(args)) => {
            if cli.dump_config {
                return dump(&config);
            }
            cmd_generate(args)
        }
    }
}

fn dump(config: &ModelConfig) -> CliResult {
    println!("{}", config.to_json());
    Ok(())
}

fn base_config(cli: &Cli) -> CliResult<ModelConfig> {
    let mut config = match &cli.config {
        Some(path) => ModelConfig::load(path)?,
        None => ModelConfig::default(),
    };
    for item in &cli.overrides {
        config = apply_override(&config, item)?;
    }
    Ok(config)
}

/// `a.b.c=value`, where value is JSON or else taken as a plain string.
fn apply_override(config: &ModelConfig, item: &str) -> CliResult<ModelConfig> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| usage(format!("--set expects PATH=VALUE, got {item:?}")))?;
    let mut root = serde_json::to_value(config).expect("config serializes");
    let mut slot = &mut root;
    for key in path.split('.') {
        slot = slot
            .get_mut(key)
            .ok_or_else(|| usage(format!("unknown configuration key {path:?}")))?;
    }
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_owned()));
    let updated: ModelConfig =
        serde_json::from_value(root).map_err(|e| usage(format!("bad value for {path}: {e}")))?;
    updated.validate()?;
    Ok(updated)
}

fn parse_mode(name: &str) -> CliResult<FeedbackMode> {
    name.parse()
        .map_err(|e: stmd_core::Error| usage(e.to_string()))
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| usage(format!("missing required flag {flag}")))
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| {
        Failure::Core(stmd_core::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| {
        Failure::Core(stmd_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

/// Loads `path` or calibrates, saving a fresh table as `out_dir/tuning.csv`.
fn obtain_tuning(
    config: &ModelConfig,
    path: Option<&PathBuf>,
    out_dir: &Path,
) -> CliResult<TuningTable> {
    match path {
        Some(p) => Ok(TuningTable::read_csv(p)?),
        None => {
            eprintln!("calibrating velocity tuning (this takes a few minutes)");
            let table = calibrate(config)?;
            table.write_csv(&out_dir.join("tuning.csv"))?;
            Ok(table)
        }
    }
}

enum Source {
    Directory(Vec<PathBuf>),
    Scene(Scene),
}

impl Source {
    fn len(&self) -> usize {
        match self {
            Source::Directory(files) => files.len(),
            Source::Scene(scene) => scene.frame_count(),
        }
    }

    fn frame(&self, i: usize) -> CliResult<Frame> {
        match self {
            Source::Directory(files) => Ok(read_pgm(&files[i])?),
            Source::Scene(scene) => Ok(scene.render(i)),
        }
    }
}

fn cmd_run(config: &ModelConfig, args: &RunArgs) -> CliResult {
    let out = required(&args.out, "--out")?;
    let (source, truth) = match (&args.input, &args.scene) {
        (Some(dir), None) => {
            let files = list_frames(dir)?;
            let truth_path = args.truth.clone().or_else(|| {
                let p = dir.join("truth.csv");
                p.is_file().then_some(p)
            });
            let truth = truth_path
                .map(|p| GroundTruth::read_csv(&p, files.len()))
                .transpose()?;
            (Source::Directory(files), truth)
        }
        (None, Some(path)) => {
            let mut spec = SceneSpec::from_json_file(path)?;
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            let scene = Scene::new(spec)?;
            let truth = match &args.truth {
                Some(p) => GroundTruth::read_csv(p, scene.frame_count())?,
                None => scene.ground_truth(),
            };
            (Source::Scene(scene), Some(truth))
        }
        _ => return Err(usage("exactly one of --input or --scene is required")),
    };
    if !(args.threshold >= 0.0) {
        return Err(usage("--threshold must be non-negative"));
    }
    create_dir(out)?;

    let first = source.frame(0)?;
    let (width, height) = (first.width(), first.height());
    let registry = stmd_core::stmd::FeedbackRegistry::builtin();
    let needs_table = registry.create(config.stmd.mode.as_str())?.needs_shifts();
    let tuning = if needs_table || args.tuning.is_some() {
        Some(obtain_tuning(config, args.tuning.as_ref(), out)?)
    } else {
        None
    };
    let mut pipeline = Pipeline::new(config, width, height, tuning)?;
    write_text(&out.join("config.json"), &(config.to_json() + "\n"))?;

    let mut accumulator = RocAccumulator::new(args.nms_radius)?;
    let mut detections = Vec::new();
    let mut background = String::from("frame,velocity,direction\n");
    for i in 0..source.len() {
        let frame = if i == 0 {
            first.clone()
        } else {
            source.frame(i)?
        };
        if frame.width() != width || frame.height() != height {
            return Err(usage(format!(
                "frame {i} is {}x{}, expected {width}x{height}",
                frame.width(),
                frame.height()
            )));
        }
        let step = pipeline.step(&frame)?;
        if let Some(bg) = &step.background {
            background += &format!("{i},{},{}\n", bg.velocity, bg.direction);
        }
        if args.dump_layers {
            dump_layers(out, i, &step)?;
        }
        if step.warmup {
            continue;
        }
        let q = step.response();
        detections.push(FrameDetections {
            frame: i,
            detections: extract_detections(q, args.threshold, args.nms_radius)?,
        });
        accumulator.push(i, q);
    }
    write_detections_csv(&out.join("detections.csv"), &detections)?;
    if pipeline.config().stmd.mode == FeedbackMode::SpatioTemporal || args.tuning.is_some() {
        write_text(&out.join("background.csv"), &background)?;
    }

    let evaluated = detections.len();
    let reported: usize = detections.iter().map(|d| d.detections.len()).sum();
    println!(
        "frames: {} (warm-up {}), detections: {reported}",
        source.len(),
        pipeline.warmup_frames()
    );
    if let Some(truth) = truth {
        if evaluated == 0 {
            return Err(usage(format!(
                "input has {} frames, all inside the {}-frame warm-up",
                source.len(),
                pipeline.warmup_frames()
            )));
        }
        let curve = accumulator.finish(&truth, args.roc_steps)?;
        curve.write_csv(&out.join("roc.csv"))?;
        println!(
            "detection rate at {} false alarms/frame: {:.4}",
            SUMMARY_FALSE_ALARMS,
            curve.dr_at_fa(SUMMARY_FALSE_ALARMS)
        );
    }
    Ok(())
}

fn dump_layers(out: &Path, index: usize, step: &StepOutput) -> CliResult {
    let medulla = &step.early.medulla;
    let mut layers: Vec<(&str, &Frame)> = vec![
        ("photoreceptor", &step.early.photoreceptor),
        ("lmc", &step.early.lmc),
        ("tm3", &medulla.tm3),
        ("tm2", &medulla.tm2),
    ];
    if let Ok(tm1) = medulla.tm1_stmd() {
        layers.push(("tm1", tm1));
    }
    layers.extend([
        ("feedback", &step.stmd.feedback),
        ("correlation", &step.stmd.correlation),
        ("response", &step.stmd.response),
    ]);
    for (name, map) in layers {
        let dir = out.join("layers").join(name);
        if index == 0 {
            create_dir(&dir)?;
        }
        write_response_map(&dir.join(frame_file_name(index)), map)?;
    }
    Ok(())
}

fn cmd_calibrate(config: &ModelConfig, args: &CalibrateArgs) -> CliResult {
    let out = required(&args.out, "--out")?;
    let table = calibrate(config)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    table.write_csv(out)?;
    let optimal: Vec<String> = table
        .betas()
        .iter()
        .zip(table.optimal_velocities())
        .map(|(b, v)| format!("β={b}: {v}"))
        .collect();
    println!("optimal velocities (px/s): {}", optimal.join(", "));
    Ok(())
}

fn cmd_experiment(config: &ModelConfig, args: &ExperimentArgs) -> CliResult {
    let registry = ExperimentRegistry::builtin();
    let name = required(&args.name, "<NAME>")?;
    let experiment = registry.get(name)?;
    let out = required(&args.out, "--out")?;
    let modes = match &args.feedback {
        Some(m) => vec![parse_mode(m)?],
        None => FeedbackMode::ALL.to_vec(),
    };
    let settings = ExperimentSettings {
        seed: args.seed,
        nms_radius: args.nms_radius,
        roc_steps: args.roc_steps,
        modes,
        ..ExperimentSettings::default()
    };
    create_dir(out)?;
    let tuning = if settings.modes.contains(&FeedbackMode::SpatioTemporal) {
        Some(obtain_tuning(config, args.tuning.as_ref(), out)?)
    } else {
        None
    };
    write_text(&out.join("config.json"), &(config.to_json() + "\n"))?;
    let rows = run_experiment(experiment, config, tuning.as_ref(), &settings, out)?;
    println!("{:<24} {:>16} {:>10}", "point", "mode", "DR@FA=5");
    for r in rows {
        println!(
            "{:<24} {:>16} {:>10.4}",
            r.label,
            r.mode.as_str(),
            r.dr_at_fa
        );
    }
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> CliResult {
    let path = required(&args.scene, "--scene")?;
    let out = required(&args.out, "--out")?;
    let mut spec = SceneSpec::from_json_file(path)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let scene = Scene::new(spec)?;
    create_dir(out)?;
    scene.write_to_dir(out)?;
    println!("wrote {} frames to {}", scene.frame_count(), out.display());
    Ok(())
}
