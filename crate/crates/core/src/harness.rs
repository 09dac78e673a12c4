//! Experiment configuration, batch runs and the files they leave behind.
//!
//! A config is TOML with five sections:
//!
//! ```toml
//! [world]
//! track = "oval.track"        # relative to the config file
//!
//! [mppi]                      # any MppiParams field, defaults otherwise
//! lambda = 1.0
//!
//! [dynamics]
//! model = "bicycle"           # or "table", which needs `table = "<path>"`
//! [dynamics.bicycle]
//! wheelbase = 0.57
//!
//! [camera.mount]
//! height = 0.3
//! [camera.intrinsics]
//! focal_length = 100.0
//!
//! [experiment]
//! episodes = 20
//! direction = "both"          # cw | ccw | both
//! seed_base = 0
//! out_dir = "runs/oval"
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmap::{process_activations, ActivationTensor, CostmapImage};
use crate::dynamics::{BicycleModel, BicycleParams, Model, TableModel, VehicleState};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraMount};
use crate::mppi::{GaussianNoise, MppiParams};
use crate::simworld::{run_episode_with, EpisodeResult, EpisodeSettings, FrameView, Termination, TrackWorld};

pub const METRICS_HEADER: &str = "# airl-mppi metrics v1";
pub const DIAGNOSTICS_HEADER: &str = "# airl-mppi diagnostics v1";

pub const METRICS_COLUMNS: &str = "seed,direction,distance,progress,laps,crashed,steps,mean_speed,termination";
pub const DIAGNOSTICS_COLUMNS: &str =
    "seed,direction,step,min_cost,mean_cost,ess,degenerate,non_finite,throttle,steering,x,y,yaw,v_x";

/// Activation maps are upsampled to this size before use.
pub const COSTMAP_WIDTH: usize = 160;
pub const COSTMAP_HEIGHT: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Cw,
    Ccw,
    Both,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Cw => "cw",
            Direction::Ccw => "ccw",
            Direction::Both => "both",
        }
    }

    /// Directions actually driven, in output order.
    pub fn expand(self) -> &'static [Direction] {
        match self {
            Direction::Cw => &[Direction::Cw],
            Direction::Ccw => &[Direction::Ccw],
            Direction::Both => &[Direction::Ccw, Direction::Cw],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bicycle,
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub track: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub model: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    pub bicycle: BicycleParams,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Bicycle,
            table: None,
            bicycle: BicycleParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub mount: CameraMount,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub episodes: usize,
    pub direction: Direction,
    pub seed_base: u64,
    pub out_dir: PathBuf,
    pub blur: bool,
    pub max_steps: usize,
    pub lap_target: f64,
    /// Per-step PGM dumps of the costmap with the planned trajectory.
    pub dump_frames: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let settings = EpisodeSettings::default();
        Self {
            episodes: 20,
            direction: Direction::Both,
            seed_base: 0,
            out_dir: PathBuf::from("out"),
            blur: settings.blur,
            max_steps: settings.max_steps,
            lap_target: settings.lap_target,
            dump_frames: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    #[serde(default)]
    pub mppi: MppiParams,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses and validates; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.mppi.validate()?;
        self.dynamics.bicycle.validate()?;
        self.camera.mount.validate()?;
        self.camera.intrinsics.validate()?;
        let e = &self.experiment;
        if e.episodes == 0 {
            return Err(Error::invalid("experiment.episodes", 0));
        }
        if e.max_steps == 0 {
            return Err(Error::invalid("experiment.max_steps", 0));
        }
        if !(e.lap_target > 0.0 && e.lap_target.is_finite()) {
            return Err(Error::invalid("experiment.lap_target", e.lap_target));
        }
        if e.out_dir.as_os_str().is_empty() {
            return Err(Error::invalid("experiment.out_dir", "\"\""));
        }
        require_file(&self.resolve(&self.world.track))?;
        match (self.dynamics.model, &self.dynamics.table) {
            (ModelKind::Table, None) => return Err(Error::invalid("dynamics.table", "missing for model = \"table\"")),
            (ModelKind::Table, Some(path)) => require_file(&self.resolve(path))?,
            (ModelKind::Bicycle, _) => {}
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.experiment.out_dir)
    }

    pub fn settings(&self) -> EpisodeSettings {
        EpisodeSettings {
            mount: self.camera.mount,
            intrinsics: self.camera.intrinsics,
            max_steps: self.experiment.max_steps,
            lap_target: self.experiment.lap_target,
            blur: self.experiment.blur,
        }
    }

    pub fn load_world(&self) -> Result<TrackWorld> {
        TrackWorld::load(&self.resolve(&self.world.track))
    }

    pub fn load_model(&self) -> Result<Model> {
        match (self.dynamics.model, &self.dynamics.table) {
            (ModelKind::Table, Some(path)) => Ok(Model::Table(TableModel::load(&self.resolve(path))?)),
            (ModelKind::Table, None) => Err(Error::invalid("dynamics.table", "missing for model = \"table\"")),
            (ModelKind::Bicycle, _) => Ok(Model::Bicycle(BicycleModel::new(self.dynamics.bicycle)?)),
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

/// The world as driven in `direction`. Loops are oriented geometrically;
/// open courses run in file order for `ccw` and reversed for `cw`.
pub fn oriented(world: &TrackWorld, direction: Direction) -> TrackWorld {
    let clockwise = if world.is_closed() {
        world.signed_area() > 0.0
    } else {
        false
    };
    match (direction, clockwise) {
        (Direction::Cw, false) | (Direction::Ccw, true) => world.reversed(),
        _ => world.clone(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub seed: u64,
    pub direction: Direction,
    pub result: EpisodeResult,
}

impl EpisodeMetrics {
    pub fn completed(&self) -> bool {
        matches!(self.result.termination, Termination::LapTarget | Termination::CourseEnd)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub episodes: usize,
    pub mean_distance: f64,
    /// Population standard deviation.
    pub stddev_distance: f64,
    pub completion_rate: f64,
    pub crashes: usize,
}

/// Episode rows in output order (direction, then seed).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub episodes: Vec<EpisodeMetrics>,
}

impl MetricsRecord {
    pub fn summary(&self) -> Summary {
        let n = self.episodes.len();
        let distances: Vec<f64> = self.episodes.iter().map(|e| e.result.distance_traveled).collect();
        let mean = distances.iter().sum::<f64>() / n as f64;
        let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        Summary {
            episodes: n,
            mean_distance: mean,
            stddev_distance: var.sqrt(),
            completion_rate: self.episodes.iter().filter(|e| e.completed()).count() as f64 / n as f64,
            crashes: self.episodes.iter().filter(|e| e.result.crashed).count(),
        }
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n{METRICS_COLUMNS}\n");
        for e in &self.episodes {
            let r = &e.result;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                e.seed,
                e.direction.name(),
                r.distance_traveled,
                r.progress,
                r.laps_completed,
                r.crashed,
                r.steps,
                r.mean_speed,
                r.termination.name()
            );
        }
        out
    }

    pub fn diagnostics_csv(&self) -> String {
        let mut out = format!("{DIAGNOSTICS_HEADER}\n{DIAGNOSTICS_COLUMNS}\n");
        for e in &self.episodes {
            for rec in &e.result.step_log {
                let d = &rec.diagnostics;
                let s = &rec.state;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    e.seed,
                    e.direction.name(),
                    rec.step,
                    d.min_cost,
                    d.mean_cost,
                    d.effective_sample_size,
                    d.degenerate,
                    d.non_finite_samples,
                    d.first_control.throttle,
                    d.first_control.steering,
                    s.x,
                    s.y,
                    s.yaw,
                    s.v_x
                );
            }
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let s = self.summary();
        let mut out = String::new();
        let _ = writeln!(out, "episodes = {}", s.episodes);
        let _ = writeln!(out, "mean_distance = {}", s.mean_distance);
        let _ = writeln!(out, "stddev_distance = {}", s.stddev_distance);
        let _ = writeln!(out, "completion_rate = {}", s.completion_rate);
        let _ = writeln!(out, "crashes = {}", s.crashes);
        out
    }
}

/// Runs every `(direction, seed)` pair, writes `metrics.csv`,
/// `diagnostics.csv` and `summary.txt` under the output directory and
/// returns the rows.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsRecord> {
    config.validate()?;
    let world = config.load_world()?;
    let model = config.load_model()?;
    let settings = config.settings();
    let out_dir = config.out_dir();
    create_dir(&out_dir)?;

    let jobs: Vec<(Direction, u64)> = config
        .experiment
        .direction
        .expand()
        .iter()
        .flat_map(|&d| (0..config.experiment.episodes as u64).map(move |i| (d, config.experiment.seed_base + i)))
        .collect();
    let worlds: Vec<(Direction, TrackWorld)> = config
        .experiment
        .direction
        .expand()
        .iter()
        .map(|&d| (d, oriented(&world, d)))
        .collect();

    let episodes = jobs
        .par_iter()
        .map(|&(direction, seed)| {
            let world = &worlds.iter().find(|(d, _)| *d == direction).expect("every direction has a world").1;
            let start = world.start_state();
            let result = if config.experiment.dump_frames {
                let dir = out_dir.join("frames").join(format!("{}-{seed}", direction.name()));
                create_dir(&dir)?;
                let mut failure = None;
                let mut observer = |view: &FrameView<'_>| {
                    if failure.is_none() {
                        let path = dir.join(format!("step_{:05}.pgm", view.step));
                        if let Err(e) = fs::write(&path, frame_pgm(view)) {
                            failure = Some(Error::io(path, e));
                        }
                    }
                };
                let result = run_episode_with(
                    world,
                    &start,
                    &config.mppi,
                    &model,
                    seed,
                    &settings,
                    &GaussianNoise,
                    Some(&mut observer),
                )?;
                if let Some(e) = failure {
                    return Err(e);
                }
                result
            } else {
                run_episode_with(world, &start, &config.mppi, &model, seed, &settings, &GaussianNoise, None)?
            };
            Ok(EpisodeMetrics {
                seed,
                direction,
                result,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let record = MetricsRecord { episodes };
    write_file(&out_dir.join("metrics.csv"), record.metrics_csv().as_bytes())?;
    write_file(&out_dir.join("diagnostics.csv"), record.diagnostics_csv().as_bytes())?;
    write_file(&out_dir.join("summary.txt"), record.summary_text().as_bytes())?;
    Ok(record)
}

/// Costmap as grey levels with the planned trajectory drawn at half
/// intensity over free pixels.
pub fn frame_pgm(view: &FrameView<'_>) -> Vec<u8> {
    let map = view.costmap;
    let (w, h) = (map.width(), map.height());
    let mut pixels: Vec<u8> = map.values().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    for p in view.planned_pixels.iter().filter(|p| p.in_frame()) {
        let (col, row) = (p.film_x.round(), p.film_y.round());
        if col >= 0.0 && row >= 0.0 && (col as usize) < w && (row as usize) < h {
            let i = row as usize * w + col as usize;
            if pixels[i] < 128 {
                pixels[i] = 128;
            }
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    out
}

/// Runs an activation file through aggregate, binary, resize to 160x128 and
/// optional blur, and writes the result as a PGM next to the input.
pub fn process_activation_file(path: &Path, blur: bool) -> Result<CostmapImage> {
    process_activation_file_to(path, blur, &path.with_extension("pgm"))
}

pub fn process_activation_file_to(path: &Path, blur: bool, pgm: &Path) -> Result<CostmapImage> {
    let tensor = ActivationTensor::load(path)?;
    let map = process_activations(&tensor, 0.0, COSTMAP_WIDTH, COSTMAP_HEIGHT, blur)?;
    map.save_pgm(pgm)?;
    Ok(map)
}

/// Renders the configured world from `state` and writes it to `pgm`.
pub fn render_state(config: &ExperimentConfig, state: &VehicleState, pgm: &Path) -> Result<CostmapImage> {
    let world = config.load_world()?;
    let map = crate::simworld::render_costmap(state, &world, &config.camera.mount, &config.camera.intrinsics);
    map.save_pgm(pgm)?;
    Ok(map)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}
