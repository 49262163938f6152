use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use detailnet::apps::{self, BokehParams};
use detailnet::gradcheck::{self, SuiteOptions};
use detailnet::io::{self, RgbImage, RgbdSample, RunConfig, SynthSceneConfig};
use detailnet::metrics::{self, MetricsReport};
use detailnet::net::{Network, NetworkConfig, Preset};
use detailnet::nn::ParamStore;
use detailnet::tensor::{exec, ops};
use detailnet::train::{Checkpoint, Trainer};
use detailnet::{Error, Result, Tensor};

/// Monocular depth estimation: training, evaluation, and depth applications.
#[derive(Debug, Parser)]
#[command(name = "detailnet", version, arg_required_else_help = true)]
struct Cli {
    /// Run configuration (key=value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded, bitwise-reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Overrides the configured network preset.
    #[arg(long, global = true, value_parser = ["toy", "full"])]
    preset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network and write a checkpoint plus a loss CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Predict a depth map (16-bit millimetre PGM) for one image.
    Predict(PredictArgs),
    /// Back-project a depth map into a coloured PLY point cloud.
    Pointcloud(PointcloudArgs),
    /// Render synthetic depth of field from an image and its depth.
    Bokeh(BokehArgs),
    /// Write a synthetic RGB-D dataset.
    Synth(SynthArgs),
    /// Finite-difference gradient checks of every primitive and block.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory (defaults to the configured train_dir).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to write (defaults to the configured checkpoint).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Total step budget, overriding epochs.
    #[arg(long)]
    steps: Option<u64>,
    /// Continue from the checkpoint if it exists.
    #[arg(long)]
    resume: bool,
    /// Per-step loss log (defaults to <checkpoint>.loss.csv).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Also write the report as a CSV header and row.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Input image (binary PPM).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output depth PGM.
    #[arg(long)]
    out: PathBuf,
    /// Upsample the prediction to the input resolution.
    #[arg(long)]
    resize: bool,
    /// Also write a colour-mapped PPM.
    #[arg(long)]
    color: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PointcloudArgs {
    /// Colour image (PPM).
    #[arg(long)]
    input: PathBuf,
    /// Depth map (16-bit millimetre PGM).
    #[arg(long)]
    depth: PathBuf,
    /// Intrinsics of the colour image.
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BokehArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    depth: PathBuf,
    /// In-focus depth, metres.
    #[arg(long, allow_negative_numbers = true)]
    focus: f64,
    /// Blur gain.
    #[arg(long, default_value_t = 8.0)]
    aperture: f64,
    /// Largest blur radius, pixels.
    #[arg(long, default_value_t = 12.0)]
    max_radius: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    instances: usize,
    /// Coordinates sampled per tensor.
    #[arg(long, default_value_t = 12)]
    coords: usize,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => io::parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &cli.preset {
        cfg.network = NetworkConfig::preset(p.parse::<Preset>()?);
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(flag: Option<&'a PathBuf>, configured: Option<&'a PathBuf>, what: &str) -> Result<&'a Path> {
    flag.or(configured)
        .map(PathBuf::as_path)
        .ok_or_else(|| Error::Usage(format!("no {what} given (flag or config key)")))
}

fn load_network(cfg: &RunConfig, checkpoint: &Path) -> Result<(Network, ParamStore<f32>)> {
    let net = Network::new(cfg.network.clone())?;
    let mut store = net.init_params::<f32>(cfg.train.seed, cfg.train.freeze_first_two_stages)?;
    Checkpoint::<f32>::load(checkpoint)?.restore_params(&mut store)?;
    Ok((net, store))
}

fn train(cli: &Cli, cfg: &mut RunConfig, args: &TrainArgs) -> Result<()> {
    if let Some(steps) = args.steps {
        cfg.train.max_steps = Some(steps);
    }
    let data_dir = required(args.data.as_ref(), cfg.paths.train_dir.as_ref(), "dataset directory")?;
    let ckpt_path = required(
        args.checkpoint.as_ref(),
        cfg.paths.checkpoint.as_ref(),
        "checkpoint path",
    )?
    .to_path_buf();
    let dataset = io::load_dataset(data_dir, cfg.nyu_preprocess)?;
    let net = Network::new(cfg.network.clone())?;
    let store = net.init_params::<f32>(cfg.train.seed, cfg.train.freeze_first_two_stages)?;
    let resuming = args.resume && ckpt_path.exists();
    let mut trainer = if resuming {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        Trainer::resume(&net, store, cfg.train.clone(), cfg.augment, dataset.len(), &ckpt)?
    } else {
        Trainer::new(&net, store, cfg.train.clone(), cfg.augment, dataset.len())?
    }
    .with_checkpoint_path(&ckpt_path);

    let csv_path = args
        .loss_csv
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", ckpt_path.display())));
    let mut csv = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resuming)
        .truncate(!resuming)
        .open(&csv_path)
        .map_err(|e| Error::File {
            path: csv_path.clone(),
            source: e,
        })?;
    if !resuming {
        writeln!(csv, "step,loss,lr_dfe,lr_dmg")?;
    }
    let total = cfg.train.total_steps_for(dataset.len());
    let every = (total / 20).max(1);
    let losses = trainer.run(&dataset, total, |r| {
        writeln!(csv, "{},{},{},{}", r.step, r.loss, r.lr_dfe, r.lr_dmg)?;
        if r.step % every == 0 || r.step == total {
            eprintln!("step {:>6}/{total}  loss {:.5}", r.step, r.loss);
        }
        Ok(())
    })?;
    println!(
        "trained {} steps (now at step {}) on {} samples{}; checkpoint {}",
        losses.len(),
        trainer.step(),
        dataset.len(),
        if cli.deterministic { ", deterministic" } else { "" },
        ckpt_path.display()
    );
    if let Some(last) = losses.last() {
        println!("final loss {last}");
    }
    Ok(())
}

fn eval(cfg: &RunConfig, args: &EvalArgs) -> Result<()> {
    let data_dir = required(args.data.as_ref(), cfg.paths.eval_dir.as_ref(), "dataset directory")?;
    let ckpt = required(args.checkpoint.as_ref(), cfg.paths.checkpoint.as_ref(), "checkpoint")?;
    let (net, store) = load_network(cfg, ckpt)?;
    let dataset = io::load_dataset(data_dir, cfg.nyu_preprocess)?;
    let report = metrics::evaluate_dataset(&net, &store, &dataset, cfg.aggregation)?;
    print!("{report}");
    if let Some(path) = &args.csv {
        let text = format!("{}\n{}\n", MetricsReport::CSV_HEADER, report.to_csv_row());
        fs::write(path, text).map_err(|e| Error::File {
            path: path.clone(),
            source: e,
        })?;
    }
    Ok(())
}

fn predict(cfg: &RunConfig, args: &PredictArgs) -> Result<()> {
    let ckpt = required(args.checkpoint.as_ref(), cfg.paths.checkpoint.as_ref(), "checkpoint")?;
    let (net, store) = load_network(cfg, ckpt)?;
    let rgb = RgbImage::read_ppm(&args.input)?;
    let depth = net.predict(&store, &rgb.to_tensor(), args.resize)?;
    let (_, _, h, w) = depth.nchw()?;
    let depth = depth.reshape([h, w])?;
    io::write_depth_pgm(&args.out, &depth, None)?;
    if let Some(path) = &args.color {
        apps::colorize_depth(&depth, w, h).write_ppm(path)?;
    }
    println!("wrote {}x{} depth map to {}", w, h, args.out.display());
    Ok(())
}

/// Brings `rgb` to the depth map's resolution, scaling intrinsics to match.
fn rgb_at_depth_resolution(rgb: RgbImage, depth: &Tensor<f32>) -> Result<RgbImage> {
    let (h, w) = (depth.dims()[0], depth.dims()[1]);
    if (rgb.height, rgb.width) == (h, w) {
        Ok(rgb)
    } else {
        rgb.resized(w, h)
    }
}

fn pointcloud(args: &PointcloudArgs) -> Result<()> {
    let meta = io::read_meta(&args.meta)?;
    let rgb = RgbImage::read_ppm(&args.input)?;
    let (depth, mask) = io::read_depth_pgm(&args.depth, meta.depth_unit)?;
    let (sx, sy) = (
        depth.dims()[1] as f64 / rgb.width as f64,
        depth.dims()[0] as f64 / rgb.height as f64,
    );
    let k = meta.intrinsics.resized_and_cropped(sx, sy, 0.0, 0.0);
    let rgb = rgb_at_depth_resolution(rgb, &depth)?;
    let cloud = apps::backproject(&depth, &rgb, &mask, &k)?;
    apps::write_ply(&cloud, &args.out)?;
    println!("wrote {} points to {}", cloud.len(), args.out.display());
    Ok(())
}

fn bokeh(args: &BokehArgs) -> Result<()> {
    let params = BokehParams {
        focus_depth: args.focus,
        aperture: args.aperture,
        max_radius: args.max_radius,
    };
    params.validate()?;
    let rgb = RgbImage::read_ppm(&args.input)?;
    let (depth, mask) = io::read_depth_pgm(&args.depth, io::DEFAULT_DEPTH_UNIT)?;
    // Holes stay sharp: they take the focus depth.
    let filled = Tensor::new(
        depth.dims().to_vec(),
        depth
            .data()
            .iter()
            .zip(&mask)
            .map(|(&d, &m)| if m { d } else { args.focus as f32 })
            .collect(),
    )?;
    let (dh, dw) = (filled.dims()[0], filled.dims()[1]);
    let depth = if (dh, dw) == (rgb.height, rgb.width) {
        filled
    } else {
        let up = ops::resize_bilinear(&filled.reshape([1, 1, dh, dw])?, rgb.height, rgb.width)?;
        up.reshape([rgb.height, rgb.width])?
    };
    apps::render_bokeh(&rgb, &depth, &params)?.write_ppm(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn synth(cfg: &RunConfig, args: &SynthArgs) -> Result<()> {
    let scene = SynthSceneConfig {
        seed: cfg.train.seed,
        height: args.height,
        width: args.width,
        ..SynthSceneConfig::default()
    };
    let samples: Vec<RgbdSample> = io::generate_synthetic(&scene, args.count)?;
    for s in &samples {
        io::save_sample(s, &args.out)?;
    }
    println!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(())
}

fn gradcheck(cfg: &RunConfig, args: &GradcheckArgs) -> Result<()> {
    let opts = SuiteOptions {
        seed: cfg.train.seed,
        instances: args.instances,
        coords: args.coords,
    };
    let mut failed = Vec::new();
    for family in gradcheck::FAMILIES {
        let row = gradcheck::check_family(family, &opts)?;
        println!("{row}");
        if !row.passed() {
            failed.push(format!("{}: {}", row.name, row.worst));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!("gradient checks failed: {}", failed.join("; "))))
    }
}

fn run(cli: &Cli) -> Result<()> {
    exec::init_threads_from_env();
    exec::set_deterministic(cli.deterministic);
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Train(a) => train(cli, &mut cfg, a),
        Command::Eval(a) => eval(&cfg, a),
        Command::Predict(a) => predict(&cfg, a),
        Command::Pointcloud(a) => pointcloud(a),
        Command::Bokeh(a) => bokeh(a),
        Command::Synth(a) => synth(&cfg, a),
        Command::Gradcheck(a) => gradcheck(&cfg, a),
    }
}

/// Exit code 1 for invalid invocations or configuration, 2 for failures while running.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Usage(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
