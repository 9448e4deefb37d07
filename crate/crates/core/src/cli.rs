//! Command-line front end: run configuration and the subcommands behind
//! the `radfield` binary.
//!
//! Settings come from built-in defaults, then an optional TOML file
//! (`--config`), then command-line flags; later sources win. The data root
//! is taken from `--data-root`, else `RADFIELD_DATA_ROOT`, else
//! `[paths] data_root` in the file.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{rotation_from_pose, CameraPose, Intrinsics};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::data::{self, DataError, SceneDataset, Split, SyntheticSpec};
use crate::field::FieldConfig;
use crate::mesh::{self, ColorConfig, GridSpec, MeshError};
use crate::metrics::{self, EvalReport, MetricsError, ViewMetrics};
use crate::optim::{self, InferConfig, Observation, OptimError, TrainConfig};
use crate::render::{self, Image, LearnedSource, RenderConfig, RenderError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CliError {
    /// Stable machine-readable category printed as `error[<kind>]`.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Data(_) => "data",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Optim(_) => "optim",
            CliError::Render(_) => "render",
            CliError::Mesh(_) => "mesh",
            CliError::Metrics(_) => "metrics",
        }
    }

    /// One line: `error[kind]: message`.
    pub fn report(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error[{}]: {}", self.kind(), msg)
    }
}

impl From<crate::camera::CameraError> for CliError {
    fn from(e: crate::camera::CameraError) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Rendering options not stored in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderOptions {
    pub chunk_size: usize,
    pub seed: u64,
    /// Overrides the checkpoint's samples per ray.
    pub n_samples: Option<usize>,
    pub importance_samples: Option<usize>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            chunk_size: 4096,
            seed: 0,
            n_samples: None,
            importance_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshOptions {
    pub resolution: usize,
    /// The grid spans `[-half_extent, half_extent]^3`.
    pub half_extent: f64,
    /// Fixed iso level; Otsu's split of the grid values when absent.
    pub iso: Option<f64>,
    pub color: ColorConfig,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self {
            resolution: 64,
            half_extent: 1.0,
            iso: None,
            color: ColorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_root: Option<PathBuf>,
}

/// Everything a command can be configured with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: SyntheticSpec,
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub render: RenderOptions,
    pub mesh: MeshOptions,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.field.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate()?;
        self.infer.validate()?;
        if self.render.chunk_size == 0 {
            return Err(CliError::Config("render.chunk_size must be >= 1".into()));
        }
        self.mesh_grid().validate()?;
        Ok(())
    }

    pub fn mesh_grid(&self) -> GridSpec {
        GridSpec::cube(self.mesh.resolution, self.mesh.half_extent)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "radfield",
    version,
    about = "Latent-conditioned radiance fields: train, render, invert, mesh"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Base directory for relative dataset paths.
    #[arg(long, global = true, env = "RADFIELD_DATA_ROOT")]
    pub data_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        action: DatasetCommand,
    },
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Render one view of a latent code pair.
    Render(RenderArgs),
    /// Recover codes and camera pose from a single image.
    Invert(InvertArgs),
    /// Render a sweep between two objects' shape or texture codes.
    Edit(EditArgs),
    /// Extract a colored mesh.
    Mesh(MeshArgs),
    /// Score a model against a dataset.
    Eval(EvalArgs),
}

#[derive(Subcommand, Debug)]
pub enum DatasetCommand {
    /// Generate a synthetic dataset in SRN layout.
    Gen(GenArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    /// Image width and height in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Index of the first object; use the training count to get unseen objects.
    #[arg(long)]
    pub first_object: Option<usize>,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory (SRN layout).
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the checkpoint.
    #[arg(short, long, default_value = "model.ckpt")]
    pub out: PathBuf,
    /// Continue from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// JSON-lines training log (default: `<out>.log.jsonl`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rays: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
}

/// Which latent codes to use.
#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct CodeArgs {
    /// Codes of a training object in the checkpoint.
    #[arg(long)]
    pub object: Option<String>,
    /// JSON file with `shape_code` and `texture_code` (an `invert` result works).
    #[arg(long)]
    pub codes: Option<PathBuf>,
}

/// Camera and image geometry.
#[derive(Args, Debug, Clone)]
pub struct ViewArgs {
    /// JSON file with `phi`, `theta` (radians) and `rho`, or an `invert` result.
    #[arg(long, conflicts_with = "angles")]
    pub pose: Option<PathBuf>,
    /// `azimuth_deg,elevation_deg,distance`.
    #[arg(long, allow_hyphen_values = true)]
    pub angles: Option<String>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Focal length in pixels (default: focal factor times width).
    #[arg(long)]
    pub focal: Option<f64>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub codes: CodeArgs,
    #[command(flatten)]
    pub view: ViewArgs,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also write the unquantized image as a float container.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct InvertArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Observed PNG image.
    #[arg(long)]
    pub image: PathBuf,
    /// Initial pose (JSON) or angles; defaults to azimuth 0, mid elevation.
    #[command(flatten)]
    pub view: ViewArgs,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Comma-separated snapshot iterations; the final one is always added.
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Option<Vec<usize>>,
    /// Keep the pose fixed and fit codes only.
    #[arg(long)]
    pub fixed_pose: bool,
    #[arg(short, long)]
    pub out_dir: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeKind {
    Shape,
    Texture,
}

#[derive(Args, Debug)]
pub struct EditArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Source object; its other code is held fixed.
    #[arg(long)]
    pub from: String,
    #[arg(long)]
    pub to: String,
    #[arg(long, value_enum)]
    pub code: CodeKind,
    /// Number of evenly spaced blend weights from 0 to 1.
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    #[command(flatten)]
    pub view: ViewArgs,
    #[arg(short, long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct MeshArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub codes: CodeArgs,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub iso: Option<f64>,
    #[arg(long)]
    pub ply: Option<PathBuf>,
    #[arg(long)]
    pub obj: Option<PathBuf>,
    /// Skip per-vertex coloring.
    #[arg(long)]
    pub no_color: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Render at the dataset poses.
    GtPose,
    /// Recover each view's pose from a perturbed start, then score it.
    Invert,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "gt-pose")]
    pub mode: EvalMode,
    /// Azimuth error of the starting pose in `invert` mode, in degrees.
    #[arg(long, default_value_t = 40.0, allow_hyphen_values = true)]
    pub azimuth_offset_deg: f64,
    /// Evaluate at most this many views per object.
    #[arg(long)]
    pub max_views: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Parsed command plus the merged configuration it runs with.
pub struct Context {
    pub config: RunConfig,
    pub data_root: Option<PathBuf>,
}

impl Context {
    pub fn new(cli: &Cli) -> Result<Self> {
        let config = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let data_root = cli.data_root.clone().or_else(|| config.paths.data_root.clone());
        Ok(Self { config, data_root })
    }

    /// Relative dataset paths are taken from the data root when one is set.
    pub fn data_path(&self, p: &Path) -> PathBuf {
        match &self.data_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Dataset {
            action: DatasetCommand::Gen(a),
        } => cmd_dataset(&ctx, a, out),
        Command::Train(a) => cmd_train(&ctx, a, out),
        Command::Render(a) => cmd_render(&ctx, a, out),
        Command::Invert(a) => cmd_invert(&ctx, a, out),
        Command::Edit(a) => cmd_edit(&ctx, a, out),
        Command::Mesh(a) => cmd_mesh(&ctx, a, out),
        Command::Eval(a) => cmd_eval(&ctx, a, out),
    }
}

fn emit(out: &mut dyn Write, value: serde_json::Value) -> Result<()> {
    writeln!(out, "{value}").map_err(io_err(Path::new("<stdout>")))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

pub fn cmd_dataset(ctx: &Context, a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let mut spec = ctx.config.data.clone();
    spec.n_objects = a.objects.unwrap_or(spec.n_objects);
    spec.n_views = a.views.unwrap_or(spec.n_views);
    spec.image_size = a.size.unwrap_or(spec.image_size);
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.first_object = a.first_object.unwrap_or(spec.first_object);
    let ds = data::generate_dataset(&spec, a.split.into())?;
    let dir = ctx.data_path(&a.out);
    data::export_srn(&ds, &dir)?;
    emit(
        out,
        serde_json::json!({
            "dataset": dir.display().to_string(),
            "objects": ds.objects.len(),
            "views": ds.total_views(),
        }),
    )
}

/// Per-view PSNR and SSIM of renders at the dataset poses. Objects absent
/// from the checkpoint get codes fitted to their first view at its known
/// pose.
pub fn evaluate_gt_pose(
    model: &Checkpoint,
    ds: &SceneDataset,
    opts: &RenderOptions,
    infer: &InferConfig,
) -> Result<EvalReport> {
    let cfg = render_config(model, opts);
    let mut views = Vec::new();
    for obj in &ds.objects {
        let (zs, zt) = match model.object_index(&obj.id) {
            Ok(i) => model.codes(i),
            Err(_) => {
                let first = obj
                    .views
                    .first()
                    .ok_or_else(|| CliError::Usage(format!("object {} has no views", obj.id)))?;
                let fit = InferConfig {
                    optimize_pose: false,
                    snapshots: Vec::new(),
                    ..infer.clone()
                };
                let obs = [Observation {
                    image: first.image.clone(),
                    intrinsics: first.intrinsics,
                    init_pose: CameraPose::from_center(&first.camera.center)?,
                }];
                let r = optim::invert(model, &obs, None, &fit)?;
                (r.shape_code, r.texture_code)
            }
        };
        let src = LearnedSource {
            params: &model.field,
            shape_code: zs,
            texture_code: zt,
        };
        for (vi, v) in obj.views.iter().enumerate() {
            let img = render::render_image(&src, &v.camera, &v.intrinsics, &cfg, opts.chunk_size, opts.seed)?;
            views.push(ViewMetrics {
                object: obj.id.clone(),
                view: vi,
                psnr: metrics::psnr(&img, &v.image)?,
                ssim: metrics::ssim(&img, &v.image).ok(),
                pose: None,
            });
        }
    }
    Ok(EvalReport::new(views))
}

fn render_config(model: &Checkpoint, opts: &RenderOptions) -> RenderConfig {
    RenderConfig {
        n_samples: opts.n_samples.unwrap_or(model.render.n_samples),
        importance_samples: opts.importance_samples.unwrap_or(model.render.importance_samples),
        ..model.render.clone()
    }
}

pub fn cmd_train(ctx: &Context, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = ctx.config.train.clone();
    cfg.iterations = a.iterations.unwrap_or(cfg.iterations);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.rays_per_batch = a.rays.unwrap_or(cfg.rays_per_batch);
    cfg.n_samples = a.samples.unwrap_or(cfg.n_samples);
    cfg.validate()?;
    let ds = data::load_srn_dataset(&ctx.data_path(&a.data))?;
    let ids: Vec<String> = ds.objects.iter().map(|o| o.id.clone()).collect();
    let mut model = match &a.resume {
        Some(p) => Checkpoint::load(p)?,
        None => Checkpoint::init(&ctx.config.field, ids, ds.render_config(cfg.n_samples), cfg.seed)?,
    };
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".log.jsonl");
        PathBuf::from(s)
    });
    let file = fs::File::create(&log_path).map_err(io_err(&log_path))?;
    let mut log = BufWriter::new(file);
    let start_step = model.step;
    let trained = optim::train(&ds, &mut model, &cfg, Some(&mut log));
    log.flush().map_err(io_err(&log_path))?;
    match trained {
        Ok(_) => {}
        Err(OptimError::Diverged {
            iteration,
            reason,
            snapshot,
        }) => {
            let mut s = a.out.clone().into_os_string();
            s.push(".diverged");
            let p = PathBuf::from(s);
            snapshot.save(&p)?;
            return Err(OptimError::Diverged {
                iteration,
                reason: format!("{reason}; last good state saved to {}", p.display()),
                snapshot,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    }
    model.save(&a.out)?;
    let report = evaluate_gt_pose(&model, &ds, &ctx.config.render, &ctx.config.infer)?;
    emit(
        out,
        serde_json::json!({
            "checkpoint": a.out.display().to_string(),
            "start_step": start_step,
            "step": model.step,
            "train_psnr": report.mean_psnr,
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodesFile {
    pub shape_code: Vec<f64>,
    pub texture_code: Vec<f64>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("malformed {what} in {}: {e}", path.display())))
}

fn select_codes(model: &Checkpoint, c: &CodeArgs) -> Result<(Vec<f64>, Vec<f64>)> {
    let (zs, zt) = match (&c.object, &c.codes) {
        (Some(id), _) => model.codes(model.object_index(id)?),
        (None, Some(p)) => {
            let f: CodesFile = read_json(p, "codes JSON")?;
            (f.shape_code, f.texture_code)
        }
        (None, None) => return Err(CliError::Usage("one of --object or --codes is required".into())),
    };
    let dim = model.field.config.latent_dim;
    if zs.len() != dim || zt.len() != dim {
        return Err(CliError::Usage(format!(
            "codes have lengths {} and {}, the model uses {dim}",
            zs.len(),
            zt.len()
        )));
    }
    Ok((zs, zt))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PoseFile {
    Nested { pose: CameraPose },
    Flat(CameraPose),
}

fn parse_angles(s: &str) -> Result<CameraPose> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("--angles {s:?}: {e}")))?;
    if v.len() != 3 {
        return Err(CliError::Usage(format!(
            "--angles needs azimuth,elevation,distance, got {s:?}"
        )));
    }
    Ok(CameraPose::new(v[0].to_radians(), v[1].to_radians(), v[2])?)
}

fn select_pose(ctx: &Context, v: &ViewArgs) -> Result<CameraPose> {
    if let Some(p) = &v.pose {
        let pose = match read_json::<PoseFile>(p, "pose JSON")? {
            PoseFile::Nested { pose } | PoseFile::Flat(pose) => pose,
        };
        pose.validate()?;
        return Ok(pose);
    }
    if let Some(s) = &v.angles {
        return parse_angles(s);
    }
    let d = &ctx.config.data;
    Ok(CameraPose::new(
        0.0,
        0.5 * (d.theta_min_deg + d.theta_max_deg).to_radians(),
        d.rho,
    )?)
}

fn intrinsics(ctx: &Context, v: &ViewArgs, width: Option<usize>, height: Option<usize>) -> Result<Intrinsics> {
    let w = width.or(v.size).unwrap_or(ctx.config.data.image_size);
    let h = height.or(v.size).unwrap_or(ctx.config.data.image_size);
    let f = v.focal.unwrap_or(ctx.config.data.focal_factor * w as f64);
    Ok(Intrinsics::centered(f, w, h)?)
}

pub fn cmd_render(ctx: &Context, a: &RenderArgs, out: &mut dyn Write) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?;
    let (zs, zt) = select_codes(&model, &a.codes)?;
    let pose = select_pose(ctx, &a.view)?;
    let k = intrinsics(ctx, &a.view, None, None)?;
    let opts = &ctx.config.render;
    let src = LearnedSource {
        params: &model.field,
        shape_code: zs,
        texture_code: zt,
    };
    let cfg = render_config(&model, opts);
    let img = render::render_image(
        &src,
        &rotation_from_pose(&pose),
        &k,
        &cfg,
        opts.chunk_size,
        a.seed.unwrap_or(opts.seed),
    )?;
    img.save_png(&a.out)?;
    if let Some(p) = &a.dump {
        img.to_container().save(p).map_err(RenderError::from)?;
    }
    emit(
        out,
        serde_json::json!({ "image": a.out.display().to_string(), "pose": pose }),
    )
}

/// Written by `invert`; readable by `render --codes/--pose` and `mesh --codes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionReport {
    pub shape_code: Vec<f64>,
    pub texture_code: Vec<f64>,
    pub pose: CameraPose,
    pub init_pose: CameraPose,
    pub losses: Vec<f64>,
    pub snapshot_iterations: Vec<usize>,
    pub diverged: bool,
}

/// Snapshot iterations requested from `invert` when none are given.
pub const DEFAULT_SNAPSHOTS: [usize; 4] = [0, 5, 10, 50];

pub fn cmd_invert(ctx: &Context, a: &InvertArgs, out: &mut dyn Write) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?;
    let image = Image::load_png(&a.image)?;
    let k = intrinsics(ctx, &a.view, Some(image.width), Some(image.height))?;
    let init_pose = select_pose(ctx, &a.view)?;
    let mut cfg = ctx.config.infer.clone();
    cfg.iterations = a.iterations.unwrap_or(cfg.iterations);
    cfg.optimize_pose = !a.fixed_pose;
    let mut snaps: Vec<usize> = a.snapshots.clone().unwrap_or_else(|| DEFAULT_SNAPSHOTS.to_vec());
    if let Some(&s) = snaps.iter().find(|&&s| s > cfg.iterations) {
        return Err(CliError::Usage(format!(
            "snapshot {s} is past the last iteration {}",
            cfg.iterations
        )));
    }
    snaps.push(cfg.iterations);
    snaps.sort_unstable();
    snaps.dedup();
    cfg.snapshots = snaps;
    let obs = [Observation {
        image,
        intrinsics: k,
        init_pose,
    }];
    let r = optim::invert(&model, &obs, None, &cfg)?;
    create_dir(&a.out_dir)?;
    let mut frames = Vec::new();
    for s in &r.snapshots {
        let img = &s.renders[0];
        img.save_png(&a.out_dir.join(format!("iter_{:04}.png", s.iteration)))?;
        frames.push(img.clone());
    }
    frames.push(obs[0].image.clone());
    Image::hstack(&frames)?.save_png(&a.out_dir.join("strip.png"))?;
    let report = InversionReport {
        shape_code: r.shape_code,
        texture_code: r.texture_code,
        pose: r.poses[0],
        init_pose,
        losses: r.losses,
        snapshot_iterations: r.snapshots.iter().map(|s| s.iteration).collect(),
        diverged: r.diverged,
    };
    let path = a.out_dir.join("result.json");
    write_json(&path, &report)?;
    emit(
        out,
        serde_json::json!({
            "result": path.display().to_string(),
            "pose": report.pose,
            "final_loss": report.losses.last(),
            "snapshots": report.snapshot_iterations,
            "diverged": report.diverged,
        }),
    )
}

/// Blend weights `0, 1/(n-1), ..., 1`.
pub fn alpha_grid(steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(CliError::Usage("--steps must be >= 2".into()));
    }
    Ok((0..steps)
        .map(|i| {
            if i + 1 == steps {
                1.0
            } else {
                i as f64 / (steps - 1) as f64
            }
        })
        .collect())
}

pub fn cmd_edit(ctx: &Context, a: &EditArgs, out: &mut dyn Write) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?;
    let (zs_a, zt_a) = model.codes(model.object_index(&a.from)?);
    let (zs_b, zt_b) = model.codes(model.object_index(&a.to)?);
    let pose = select_pose(ctx, &a.view)?;
    let k = intrinsics(ctx, &a.view, None, None)?;
    let opts = &ctx.config.render;
    let cfg = render_config(&model, opts);
    let camera = rotation_from_pose(&pose);
    let alphas = alpha_grid(a.steps)?;
    create_dir(&a.out_dir)?;
    let mut frames = Vec::new();
    for (i, &alpha) in alphas.iter().enumerate() {
        let (zs, zt) = match a.code {
            CodeKind::Shape => (optim::interpolate_codes(&zs_a, &zs_b, alpha)?, zt_a.clone()),
            CodeKind::Texture => (zs_a.clone(), optim::interpolate_codes(&zt_a, &zt_b, alpha)?),
        };
        let src = LearnedSource {
            params: &model.field,
            shape_code: zs,
            texture_code: zt,
        };
        let img = render::render_image(&src, &camera, &k, &cfg, opts.chunk_size, opts.seed)?;
        img.save_png(&a.out_dir.join(format!("frame_{i:02}.png")))?;
        frames.push(img);
    }
    let strip = a.out_dir.join("strip.png");
    Image::hstack(&frames)?.save_png(&strip)?;
    emit(
        out,
        serde_json::json!({ "strip": strip.display().to_string(), "alphas": alphas }),
    )
}

pub fn cmd_mesh(ctx: &Context, a: &MeshArgs, out: &mut dyn Write) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?;
    let (zs, zt) = select_codes(&model, &a.codes)?;
    let mut opts = ctx.config.mesh.clone();
    opts.resolution = a.resolution.unwrap_or(opts.resolution);
    opts.iso = a.iso.or(opts.iso);
    let spec = GridSpec::cube(opts.resolution, opts.half_extent);
    let src = LearnedSource {
        params: &model.field,
        shape_code: zs,
        texture_code: zt,
    };
    let grid = mesh::sample_grid(&src, &spec)?;
    let iso = match opts.iso {
        Some(v) => v,
        None => mesh::otsu_threshold(&grid.values).unwrap_or(0.0),
    };
    let mut m = mesh::marching_cubes(&grid, iso);
    if !a.no_color {
        let color = ColorConfig {
            white_background: model.render.white_background,
            ..opts.color.clone()
        };
        m = mesh::color_vertices(&m, &src, &spec, &color)?;
    }
    if let Some(p) = &a.ply {
        m.save_ply(p)?;
    }
    if let Some(p) = &a.obj {
        m.save_obj(p)?;
    }
    emit(
        out,
        serde_json::json!({
            "iso": iso,
            "vertices": m.vertices.len(),
            "faces": m.faces.len(),
            "watertight": m.is_watertight(),
        }),
    )
}

pub fn cmd_eval(ctx: &Context, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?;
    let mut ds = data::load_srn_dataset(&ctx.data_path(&a.data))?;
    if let Some(n) = a.max_views {
        for o in &mut ds.objects {
            o.views.truncate(n);
        }
    }
    let mut infer = ctx.config.infer.clone();
    infer.iterations = a.iterations.unwrap_or(infer.iterations);
    let report = match a.mode {
        EvalMode::GtPose => evaluate_gt_pose(&model, &ds, &ctx.config.render, &infer)?,
        EvalMode::Invert => evaluate_inversion(
            &model,
            &ds,
            &ctx.config.render,
            &infer,
            a.azimuth_offset_deg.to_radians(),
        )?,
    };
    fs::write(&a.out, report.to_json() + "\n").map_err(io_err(&a.out))?;
    if let Some(p) = &a.csv {
        fs::write(p, report.to_csv()).map_err(io_err(p))?;
    }
    emit(
        out,
        serde_json::json!({
            "report": a.out.display().to_string(),
            "views": report.views.len(),
            "mean_psnr": report.mean_psnr,
            "mean_ssim": report.mean_ssim,
            "pose_summary": report.pose_summary,
        }),
    )
}

/// Inverts every view from its ground-truth pose rotated by
/// `azimuth_offset` and scores the recovered pose and render.
pub fn evaluate_inversion(
    model: &Checkpoint,
    ds: &SceneDataset,
    opts: &RenderOptions,
    infer: &InferConfig,
    azimuth_offset: f64,
) -> Result<EvalReport> {
    let cfg = render_config(model, opts);
    let infer = InferConfig {
        snapshots: Vec::new(),
        ..infer.clone()
    };
    let mut views = Vec::new();
    for obj in &ds.objects {
        for (vi, v) in obj.views.iter().enumerate() {
            let gt = CameraPose::from_center(&v.camera.center)?;
            let init = CameraPose::new(gt.phi + azimuth_offset, gt.theta, gt.rho)?;
            let obs = [Observation {
                image: v.image.clone(),
                intrinsics: v.intrinsics,
                init_pose: init,
            }];
            let r = optim::invert(model, &obs, None, &infer)?;
            let est = rotation_from_pose(&r.poses[0]);
            let src = LearnedSource {
                params: &model.field,
                shape_code: r.shape_code,
                texture_code: r.texture_code,
            };
            let img = render::render_image(&src, &est, &v.intrinsics, &cfg, opts.chunk_size, opts.seed)?;
            views.push(ViewMetrics {
                object: obj.id.clone(),
                view: vi,
                psnr: metrics::psnr(&img, &v.image)?,
                ssim: metrics::ssim(&img, &v.image).ok(),
                pose: Some(metrics::pose_error(&est, &v.camera)),
            });
        }
    }
    Ok(EvalReport::new(views))
}
