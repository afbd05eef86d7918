use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use p2rgbd::datastore::{split, Dataset};
use p2rgbd::model::{bench, checkpoint, evaluate, train, Model, ModelConfig, TrainOptions};
use p2rgbd::numerics::AdamWConfig;
use p2rgbd::pose::{InputMode, PoseBounds};
use p2rgbd::scene::capture::{simulate_capture, CapturePlan};
use p2rgbd::scene::{build_scene, generate_dataset, lawn_mower, CameraIntrinsics, LawnMower};
use p2rgbd::sync::capture::CaptureDir;
use p2rgbd::sync::pipeline::{scale_depth, sync_capture, SyncOptions};
use p2rgbd_cli::render::{render, RenderRequest};
use serde_json::json;

#[derive(Parser)]
#[command(name = "p2rgbd", version, about = "Pose-conditioned RGBD generation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render an oracle dataset from a lawn-mower flight over a box scene.
    GenScene(GenScene),
    /// Simulate a raw video + GPS capture of a circular flight.
    GenCapture(GenCapture),
    /// Align a capture's GPS log with its video and write a dataset.
    Sync(SyncCmd),
    /// Recover metric depth scale for a synchronized dataset.
    ScaleDepth(ScaleDepthCmd),
    Train(TrainCmd),
    /// Print RGB and depth errors of a checkpoint on a dataset.
    Eval(EvalCmd),
    /// Time inference at several batch sizes.
    Bench(BenchCmd),
    /// Render one pose to PNG files.
    Render(RenderCmd),
    /// Serve GET /meta and POST /render for a checkpoint.
    Serve(ServeCmd),
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    boxes: usize,
    /// Side length of the square world in meters.
    #[arg(long, default_value_t = 40.0)]
    world: f64,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    /// Horizontal and vertical field of view in degrees.
    #[arg(long, default_value_t = 60.0)]
    fov: f64,
}

impl SceneArgs {
    fn intrinsics(&self) -> Result<CameraIntrinsics> {
        Ok(CameraIntrinsics::new(self.fov.to_radians(), self.resolution)?)
    }
}

#[derive(Args)]
struct GenScene {
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value_t = 64)]
    frames: usize,
    #[arg(long, default_value_t = 30.0)]
    altitude: f64,
    /// Half-width of the square area the flight covers.
    #[arg(long, default_value_t = 10.0)]
    extent: f64,
    /// Attitude jitter in radians.
    #[arg(long, default_value_t = 0.05)]
    jitter: f64,
    #[arg(long, default_value = "oracle")]
    name: String,
}

#[derive(Args)]
struct GenCapture {
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value_t = 72)]
    frames: usize,
    #[arg(long, default_value_t = 10.0)]
    fps: f64,
    #[arg(long, default_value_t = 20.0)]
    gps_rate: f64,
    /// Video frames of GPS logged before the video starts.
    #[arg(long, default_value_t = 7)]
    gps_lead: usize,
    /// True meters per unscaled unit.
    #[arg(long, default_value_t = 4.2)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    flight_seed: u64,
    /// Also write the full ground truth as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct SyncCmd {
    #[arg(long)]
    capture: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "synced")]
    name: String,
    #[arg(long, default_value_t = 30)]
    max_offset: usize,
    #[arg(long, default_value_t = 8)]
    block: usize,
    #[arg(long, default_value_t = 4)]
    search: usize,
    /// Score lags on frames START:END only.
    #[arg(long, value_parser = parse_range)]
    range: Option<(usize, usize)>,
}

#[derive(Args)]
struct ScaleDepthCmd {
    #[arg(long)]
    capture: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "scaled")]
    name: String,
    /// Scale each frame by its own motion instead of the global median.
    #[arg(long)]
    per_frame: bool,
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint path.
    #[arg(long, default_value = "model.p2rgbd")]
    out: PathBuf,
    /// TrainReport JSON path; printed to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Depth slices; 0 trains the Base model.
    #[arg(long, default_value_t = 10)]
    slices: usize,
    #[arg(long, default_value_t = 128)]
    channels: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Hold out frames for validation; the value is the training fraction.
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Use roll, pitch, yaw instead of the quaternion as rotation input.
    #[arg(long)]
    euler: bool,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct BenchCmd {
    /// Checkpoint to time; a freshly initialized model otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    slices: usize,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long, default_value_t = 128)]
    channels: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,10")]
    batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    runs: usize,
}

#[derive(Args)]
struct RenderCmd {
    #[arg(long)]
    model: PathBuf,
    /// x,y,z,qw,qx,qy,qz
    #[arg(long, allow_hyphen_values = true)]
    pose: String,
    /// Output prefix: writes PREFIX_rgb.png, PREFIX_depth.png, PREFIX_confidence.png.
    #[arg(long)]
    out: String,
}

#[derive(Args)]
struct ServeCmd {
    #[arg(long)]
    model: PathBuf,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected START:END")?;
    let a = a.parse::<usize>().map_err(|e| e.to_string())?;
    let b = b.parse::<usize>().map_err(|e| e.to_string())?;
    Ok((a, b))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn open_dataset(path: &Path) -> Result<Dataset> {
    Dataset::open(path).with_context(|| format!("opening dataset {}", path.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn gen_scene(a: GenScene) -> Result<()> {
    let scene = build_scene(a.scene.seed, a.scene.boxes, a.scene.world)?;
    let traj = lawn_mower(&LawnMower {
        min_xy: [-a.extent, -a.extent],
        max_xy: [a.extent, a.extent],
        altitude: a.altitude,
        frames: a.frames,
        jitter: a.jitter,
        seed: a.scene.seed,
    })?;
    let ds = generate_dataset(&scene, &traj, &a.scene.intrinsics()?, &a.out, &a.name)?;
    print_json(&json!({
        "frames": ds.len(),
        "bounds": ds.manifest.bounds,
        "depth_range": ds.manifest.depth_range,
        "content_hash": ds.content_hash()?,
    }))
}

fn gen_capture(a: GenCapture) -> Result<()> {
    if a.scale.is_nan() || a.scale <= 0.0 {
        bail!("--scale must be positive");
    }
    let scene = build_scene(a.scene.seed, a.scene.boxes, a.scene.world)?;
    let plan = CapturePlan {
        frames: a.frames,
        fps: a.fps,
        gps_rate: a.gps_rate,
        gps_lead_frames: a.gps_lead,
        unscaled_per_meter: 1.0 / a.scale,
        seed: a.flight_seed,
        ..CapturePlan::default()
    };
    let (_, truth) = simulate_capture(&scene, &plan, &a.scene.intrinsics()?, &a.out)?;
    if let Some(path) = &a.truth {
        std::fs::write(path, serde_json::to_vec_pretty(&truth)?).with_context(|| format!("writing {}", path.display()))?;
    }
    print_json(&json!({
        "frames": truth.poses.len(),
        "offset": truth.offset,
        "scale": truth.scale,
        "depth_range": truth.depth_range,
    }))
}

fn sync(a: SyncCmd) -> Result<()> {
    let capture = CaptureDir::open(&a.capture)?;
    let opts = SyncOptions {
        block: a.block,
        search: a.search,
        max_offset: a.max_offset,
        range: a.range,
    };
    let (ds, r) = sync_capture(&capture, &a.out, &a.name, &opts)?;
    print_json(&json!({
        "offset": r.offset,
        "peak": r.peak,
        "start": r.start,
        "end": r.end,
        "frames": ds.len(),
    }))
}

fn scale(a: ScaleDepthCmd) -> Result<()> {
    let capture = CaptureDir::open(&a.capture)?;
    let ds = open_dataset(&a.dataset)?;
    let (out, est) = scale_depth(&capture, &ds, &a.out, &a.name, a.per_frame)?;
    print_json(&json!({
        "global_scale": est.global,
        "measured_frames": est.measured.iter().filter(|&&m| m).count(),
        "frames": out.len(),
        "depth_range": out.manifest.depth_range,
    }))
}

fn train_cmd(a: TrainCmd) -> Result<()> {
    let ds = open_dataset(&a.dataset)?;
    let m = &ds.manifest;
    let mut config = ModelConfig::slice(m.resolution, a.channels, a.slices);
    if a.slices == 0 {
        config = ModelConfig::base(m.resolution, a.channels);
    }
    if a.euler {
        config.input_mode = InputMode::Euler;
    }
    let (train_set, val_set) = match a.train_fraction {
        Some(f) => {
            let (tr, val) = split(m, f, a.seed)?;
            let load = |mf| Dataset::with_manifest(ds.root(), mf).samples();
            (load(tr)?, Some(load(val)?))
        }
        None => (ds.samples()?, None),
    };
    let mut model = Model::build(config, m.bounds, m.depth_range, a.seed)?;
    let opts = TrainOptions {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        max_steps: a.max_steps,
        optimizer: AdamWConfig {
            lr: a.lr,
            ..AdamWConfig::default()
        },
    };
    let report = train(&mut model, &train_set, val_set.as_deref(), &opts)?;
    checkpoint::save(&model, &a.out)?;
    log::info!("checkpoint written to {}", a.out.display());
    match &a.report {
        Some(path) => std::fs::write(path, serde_json::to_vec_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?,
        None => print_json(&report)?,
    }
    Ok(())
}

fn eval(a: EvalCmd) -> Result<()> {
    let ds = open_dataset(&a.dataset)?;
    let model = load_model(&a.model)?;
    print_json(&evaluate(&model, &ds.samples()?)?)
}

fn bench_cmd(a: BenchCmd) -> Result<()> {
    let model = match &a.model {
        Some(p) => load_model(p)?,
        None => {
            let config = if a.slices == 0 {
                ModelConfig::base(a.resolution, a.channels)
            } else {
                ModelConfig::slice(a.resolution, a.channels, a.slices)
            };
            let bounds = PoseBounds::new([-1.0; 3], [1.0; 3])?;
            let range = p2rgbd::model::DepthRange::new(1.0, 2.0, p2rgbd::model::DepthUnit::Meters)?;
            Model::build(config, bounds, range, 0)?
        }
    };
    for row in bench(&model, &a.batch_sizes, a.runs)? {
        println!("{}", serde_json::to_string(&row)?);
    }
    Ok(())
}

fn render_cmd(a: RenderCmd) -> Result<()> {
    let model = load_model(&a.model)?;
    let req = RenderRequest::parse(&a.pose)?;
    let out = render(&model, &req)?;
    let mut files = vec![(format!("{}_rgb.png", a.out), &out.rgb), (format!("{}_depth.png", a.out), &out.depth)];
    if let Some(c) = &out.confidence {
        files.push((format!("{}_confidence.png", a.out), c));
    }
    for (path, bytes) in &files {
        std::fs::write(path, bytes).with_context(|| format!("writing {path}"))?;
    }
    print_json(&json!({
        "files": files.iter().map(|f| &f.0).collect::<Vec<_>>(),
        "clamped": out.clamped,
        "pose": out.pose,
        "render_ms": out.render_ms,
    }))
}

fn serve(a: ServeCmd) -> Result<()> {
    let model = Arc::new(load_model(&a.model)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::Write::flush(&mut std::io::stdout())?;
        p2rgbd_cli::server::serve(listener, model).await?;
        Ok(())
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    p2rgbd_cli::configure_threads()?;
    match Cli::parse().command {
        Command::GenScene(a) => gen_scene(a),
        Command::GenCapture(a) => gen_capture(a),
        Command::Sync(a) => sync(a),
        Command::ScaleDepth(a) => scale(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Serve(a) => serve(a),
    }
}
