use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nanoct::aligner::{apply_plan, build_plan, crop_stack, AlignMode, ShiftFill};
use nanoct::fbp_recon::{ortho_slices, reconstruct_rows, Filter, Interpolation, ReconParams};
use nanoct::phantom_lab::{bead_dataset, BeadSpec};
use nanoct::ref_locator::{track_reference, LocatorOptions, Method, RefTrack};
use nanoct::stack_io::{load_stack, save_stack, save_volume};
use nanoct::trail_roi::{suggest_roi, trail_product};
use nanoct::{ProjectionStack, Roi};
use nanoct_cli::parse::{parse_fill, parse_roi, parse_rows};
use nanoct_cli::pipeline::{dry_run, run_pipeline, PipelineConfig, Stage};
use nanoct_cli::render::{write_png, Normalize};

#[derive(Parser)]
#[command(name = "nanoct", version, about = "Fiducial-bead alignment and FBP reconstruction of projection stacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic bead dataset with its ground truth.
    Phantom(PhantomArgs),
    /// Trail map and the ROI it suggests.
    Trail(TrailArgs),
    /// Locate the bead in every frame and write track.csv.
    Detect(DetectArgs),
    /// Build the alignment plan and write the aligned, cropped stack.
    Align(AlignArgs),
    /// Reconstruct a (usually aligned) stack into a volume.
    Reconstruct(ReconArgs),
    /// Run every stage in one go.
    Pipeline(PipelineArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, default_value = "phantom")]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 161)]
    frames: usize,
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[arg(long, default_value_t = 6.0)]
    radius: f64,
    #[arg(long, default_value_t = 40.0)]
    offset: f64,
    #[arg(long, default_value_t = 6.0)]
    jitter: f64,
    #[arg(long, default_value_t = 5.0)]
    noise: f64,
    /// Draw sub-pixel jitter instead of whole pixels.
    #[arg(long)]
    continuous_jitter: bool,
}

#[derive(Args)]
struct StackArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct TrailArgs {
    #[command(flatten)]
    stack: StackArgs,
    #[arg(long, default_value_t = 40.0)]
    delta: f32,
    #[arg(long, default_value_t = 4)]
    margin: usize,
}

#[derive(Args)]
struct LocateArgs {
    /// x,y,w,h; defaults to the trail's bounding box.
    #[arg(long, value_parser = parse_roi)]
    roi: Option<Roi>,
    #[arg(long, default_value = "gvb", value_parser = parse_method)]
    method: Method,
    /// Nested threshold passes (GVB).
    #[arg(long, default_value_t = 1)]
    passes: usize,
    #[arg(long, default_value_t = 40.0)]
    delta: f32,
    #[arg(long, default_value_t = 4)]
    margin: usize,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    stack: StackArgs,
    #[command(flatten)]
    locate: LocateArgs,
}

#[derive(Args)]
struct AlignArgs {
    #[command(flatten)]
    stack: StackArgs,
    #[command(flatten)]
    locate: LocateArgs,
    /// Use this track instead of detecting.
    #[arg(long)]
    track: Option<PathBuf>,
    #[arg(long, default_value = "cosine", value_parser = parse_mode)]
    mode: AlignMode,
    /// border, edge, or a gray value.
    #[arg(long, default_value = "border", value_parser = parse_fill)]
    fill: ShiftFill,
}

#[derive(Args)]
struct ReconOpts {
    #[arg(long, default_value = "ram-lak", value_parser = parse_filter)]
    filter: Filter,
    #[arg(long, default_value = "linear", value_parser = parse_interp)]
    interp: Interpolation,
    /// Inclusive rows a:b.
    #[arg(long, value_parser = parse_rows)]
    rows: Option<(usize, usize)>,
    /// Slice edge length; defaults to the inscribed square of the detector.
    #[arg(long)]
    size: Option<usize>,
    /// Reconstruct raw intensities instead of -ln(I / full scale).
    #[arg(long)]
    intensity: bool,
}

#[derive(Args)]
struct ReconArgs {
    #[command(flatten)]
    stack: StackArgs,
    #[command(flatten)]
    recon: ReconOpts,
    /// First projection angle, degrees; defaults to the manifest's.
    #[arg(long)]
    angle_start: Option<f64>,
    #[arg(long)]
    angle_stop: Option<f64>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Dataset manifest; omit with --phantom.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Generate the seeded bead phantom into <out>/phantom and run on it.
    #[arg(long)]
    phantom: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// JSON config; command-line flags given explicitly override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_roi)]
    roi: Option<Roi>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<AlignMode>,
    #[arg(long, value_parser = parse_fill)]
    fill: Option<ShiftFill>,
    #[arg(long, value_parser = parse_filter)]
    filter: Option<Filter>,
    #[arg(long, value_parser = parse_interp)]
    interp: Option<Interpolation>,
    #[arg(long, value_parser = parse_rows)]
    rows: Option<(usize, usize)>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    track: Option<PathBuf>,
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Stages to skip, comma separated (e.g. apply,crop).
    #[arg(long, value_delimiter = ',', value_parser = parse_stage)]
    skip: Vec<Stage>,
    /// Print the resolved stages and exit without writing anything.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: nanoct::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<AlignMode, String> {
    s.parse().map_err(|e: nanoct::Error| e.to_string())
}

fn parse_filter(s: &str) -> Result<Filter, String> {
    s.parse().map_err(|e: nanoct::Error| e.to_string())
}

fn parse_interp(s: &str) -> Result<Interpolation, String> {
    s.parse().map_err(|e: nanoct::Error| e.to_string())
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse()
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Trail(a) => trail(a),
        Command::Detect(a) => detect(a),
        Command::Align(a) => align(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Serve(a) => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(nanoct_cli::server::serve(SocketAddr::new(a.host, a.port)))?;
            Ok(())
        }
    }
}

fn load(args: &StackArgs) -> Result<ProjectionStack> {
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    load_stack(&args.manifest).with_context(|| format!("loading {}", args.manifest.display()))
}

fn write_phantom(out: &Path, spec: &BeadSpec) -> Result<PathBuf> {
    let (stack, truth) = bead_dataset(spec)?;
    std::fs::create_dir_all(out)?;
    let manifest = save_stack(&stack, out, "phantom")?;
    std::fs::write(out.join("truth.json"), serde_json::to_string_pretty(&truth)?)?;
    std::fs::write(out.join("spec.json"), serde_json::to_string_pretty(spec)?)?;
    Ok(manifest)
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let spec = BeadSpec {
        frames: a.frames,
        size: a.size,
        bead_radius: a.radius,
        bead_offset: a.offset,
        jitter_max: a.jitter,
        noise_sigma: a.noise,
        seed: a.seed,
        continuous_jitter: a.continuous_jitter,
        ..BeadSpec::default()
    };
    let manifest = write_phantom(&a.out, &spec)?;
    println!("{}", manifest.display());
    Ok(())
}

fn roi_for(stack: &ProjectionStack, l: &LocateArgs, out: &Path) -> Result<Roi> {
    if let Some(r) = l.roi {
        r.check_within(stack.width(), stack.height())?;
        return Ok(r);
    }
    let trail = trail_product(stack, l.delta);
    write_png(&trail.mask.to_image(), Normalize::MinMax, &out.join("trail.png"))?;
    Ok(suggest_roi(&trail, l.margin)?)
}

fn locate(stack: &ProjectionStack, l: &LocateArgs, out: &Path) -> Result<RefTrack> {
    let roi = roi_for(stack, l, out)?;
    let opts = LocatorOptions {
        threshold_passes: l.passes,
        ..LocatorOptions::default()
    };
    let track = track_reference(stack, &roi, l.method, &opts)?;
    std::fs::write(out.join("track.csv"), track.to_csv())?;
    eprintln!(
        "roi {},{},{},{}: {}/{} frames located",
        roi.x0,
        roi.y0,
        roi.width,
        roi.height,
        track.hits(),
        track.len()
    );
    Ok(track)
}

fn trail(a: TrailArgs) -> Result<()> {
    let stack = load(&a.stack)?;
    let trail = trail_product(&stack, a.delta);
    write_png(&trail.mask.to_image(), Normalize::MinMax, &a.stack.out.join("trail.png"))?;
    let roi = suggest_roi(&trail, a.margin)?;
    std::fs::write(a.stack.out.join("roi.json"), serde_json::to_string_pretty(&roi)?)?;
    println!("{},{},{},{}", roi.x0, roi.y0, roi.width, roi.height);
    Ok(())
}

fn detect(a: DetectArgs) -> Result<()> {
    let stack = load(&a.stack)?;
    locate(&stack, &a.locate, &a.stack.out)?;
    println!("{}", a.stack.out.join("track.csv").display());
    Ok(())
}

fn align(a: AlignArgs) -> Result<()> {
    let stack = load(&a.stack)?;
    let track = match &a.track {
        Some(p) => RefTrack::from_csv(&std::fs::read_to_string(p)?)?,
        None => locate(&stack, &a.locate, &a.stack.out)?,
    };
    let plan = build_plan(&track, stack.width(), stack.height(), a.mode)?;
    std::fs::write(a.stack.out.join("plan.json"), plan.to_json())?;
    let aligned = crop_stack(&apply_plan(&stack, &plan, a.fill)?, &plan.crop)?;
    let manifest = save_stack(&aligned, &a.stack.out, "aligned")?;
    let flagged = plan.flagged();
    if !flagged.is_empty() {
        eprintln!("frames without a detection (left unshifted): {flagged:?}");
    }
    println!("{}", manifest.display());
    Ok(())
}

fn reconstruct(a: ReconArgs) -> Result<()> {
    let stack = load(&a.stack)?;
    let params = ReconParams {
        filter: a.recon.filter,
        interpolation: a.recon.interp,
        angle_start: a.angle_start.unwrap_or(stack.angle_start()),
        angle_stop: a.angle_stop.unwrap_or(stack.angle_stop()),
        output_size: a.recon.size,
        row_range: a.recon.rows,
        attenuation: !a.recon.intensity,
    };
    let vol = reconstruct_rows(&stack, &params)?;
    let path = a.stack.out.join("volume.f32");
    save_volume(&vol, &path)?;
    let (nx, ny, nz) = vol.dims();
    let views = ortho_slices(&vol, nx / 2, ny / 2, nz / 2)?;
    write_png(&views.axial, Normalize::MinMax, &a.stack.out.join("axial.png"))?;
    write_png(&views.coronal, Normalize::MinMax, &a.stack.out.join("coronal.png"))?;
    write_png(&views.sagittal, Normalize::MinMax, &a.stack.out.join("sagittal.png"))?;
    println!("{} ({nx}x{ny}x{nz})", path.display());
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => PipelineConfig::default(),
    };
    cfg.out = a.out.clone();
    match (&a.manifest, a.phantom) {
        (Some(m), false) => cfg.manifest = m.clone(),
        (None, true) => {
            let spec = BeadSpec {
                seed: a.seed,
                ..BeadSpec::default()
            };
            if a.dry_run {
                bail!("--dry-run needs an existing --manifest");
            }
            cfg.manifest = write_phantom(&a.out.join("phantom"), &spec)?;
        }
        (Some(_), true) => bail!("--manifest and --phantom are exclusive"),
        (None, false) if a.config.is_some() => {}
        (None, false) => bail!("pass --manifest, --phantom or --config"),
    }
    if a.roi.is_some() {
        cfg.roi = a.roi;
    }
    if let Some(m) = a.method {
        cfg.method = m;
    }
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(f) = a.fill {
        cfg.fill = f;
    }
    if let Some(f) = a.filter {
        cfg.filter = f;
    }
    if let Some(i) = a.interp {
        cfg.interpolation = i;
    }
    if a.rows.is_some() {
        cfg.rows = a.rows;
    }
    if a.size.is_some() {
        cfg.output_size = a.size;
    }
    if a.track.is_some() {
        cfg.track_file = a.track.clone();
    }
    if a.plan.is_some() {
        cfg.plan_file = a.plan.clone();
    }
    cfg.skip.extend(a.skip.iter().copied());

    if a.dry_run {
        print!("{}", dry_run(&cfg)?);
        return Ok(());
    }
    let out = run_pipeline(&cfg, &|line| eprintln!("{line}"))?;
    print!("{}", out.report.summary());
    Ok(())
}
