//! `palis` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 format error, 3 invariant
//! violation, 4 missing input file.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use palis::codec::{encode_graph_detailed, GraphError, GridError, PatchGrid, DEFAULT_PATCH_SIZE};
use palis::fitter::{
    fit_palis, fit_vector_supervised, initialize_from_mask, initialize_segments, FitConfig, FitError, InitStrategy, Optimizer,
    VectorMode,
};
use palis::formats::{
    read_graph_file, read_grid_file, read_mask_file, render_svg, write_float_raster, write_graph, write_grid,
    write_pgm, ByteMask, FloatRaster, FormatError, GraphFile,
};
use palis::metrics::{apls_detailed, topo, AplsParams, Matching, MetricError, TopoParams};
use palis::raster::{compose_soft_mask, compose_soft_mask_checked, RasterError, RasterParams};
use palis::reconstruct::{reconstruct_detailed, Diagnostic, ReconstructError, ReconstructParams};
use palis::synth::{centerline_mask, generate, Scene};
use palis::{RoadGraph, SoftMask};

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\ngraph format 1\ngrid format 1\nfloat raster PLSF 1\nbyte mask PGM P5"
);

#[derive(Parser)]
#[command(name = "palis", version = VERSION, about = "Patched line segment road graphs")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a graph file into a patch grid file.
    Encode(EncodeArgs),
    /// Render a grid into a float raster and an 8-bit preview.
    Rasterize(RasterizeArgs),
    /// Fit grid segments to a target mask or to vector labels.
    Fit(FitArgs),
    /// Rebuild a graph from a grid file.
    Reconstruct(ReconstructArgs),
    /// Score a proposal graph against a ground-truth graph.
    Eval(EvalArgs),
    /// Encode, fit, reconstruct and score in one run.
    Pipeline(PipelineArgs),
    /// Generate a synthetic scene.
    Synth(SynthArgs),
}

#[derive(Args)]
struct EncodeArgs {
    graph: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// Image width; defaults to the graph file's.
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    patch_size: u32,
}

#[derive(Args, Clone, Copy)]
struct RasterFlags {
    #[arg(long, default_value_t = 8.0)]
    tau_inv: f64,
    #[arg(long, default_value_t = 10.0)]
    t_out: f64,
    #[arg(long, default_value_t = 1.0)]
    t_in: f64,
}

impl RasterFlags {
    fn params(&self) -> Result<RasterParams, Failure> {
        RasterParams::new(self.tau_inv, self.t_out, self.t_in).map_err(Failure::usage)
    }
}

#[derive(Args)]
struct RasterizeArgs {
    grid: PathBuf,
    /// Float raster output.
    #[arg(short, long)]
    out: PathBuf,
    /// 8-bit PGM preview output.
    #[arg(long)]
    preview: Option<PathBuf>,
    #[command(flatten)]
    raster: RasterFlags,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Supervision {
    Mask,
    Sorted,
    Unsorted,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Init {
    /// Start from the grid file's segments.
    Keep,
    Centered,
    Jittered,
    /// Principal axis of the target mass in each cell.
    Moments,
}

#[derive(Args, Clone, Copy)]
struct FitFlags {
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long)]
    momentum: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Jitter amplitude in pixels for `--init jittered`.
    #[arg(long, default_value_t = 1.0)]
    jitter: f64,
}

impl FitFlags {
    fn config(&self, raster: RasterParams) -> FitConfig {
        FitConfig {
            learning_rate: self.lr,
            max_iters: self.iters,
            tol: self.tol,
            optimizer: if self.momentum { Optimizer::Momentum } else { Optimizer::GradientDescent },
            raster,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    grid: PathBuf,
    /// Target mask (PLSF raster or PGM) for mask supervision.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Label grid for sorted or unsorted vector supervision.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Supervision::Mask)]
    supervision: Supervision,
    #[arg(long, value_enum, default_value_t = Init::Keep)]
    init: Init,
    #[arg(short, long)]
    out: PathBuf,
    /// Loss log output, one `iteration loss` line per step.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    fit: FitFlags,
    #[command(flatten)]
    raster: RasterFlags,
}

#[derive(Args, Clone, Copy)]
struct ReconstructFlags {
    #[arg(long, default_value_t = 2.0)]
    tau_d: f64,
    #[arg(long, default_value_t = 15.0)]
    tau_a: f64,
    #[arg(long, default_value_t = 1)]
    neighbor_radius: usize,
}

impl ReconstructFlags {
    fn params(&self) -> ReconstructParams {
        ReconstructParams { tau_d: self.tau_d, tau_a: self.tau_a, neighbor_radius: self.neighbor_radius }
    }
}

#[derive(Args)]
struct ReconstructArgs {
    grid: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
    #[command(flatten)]
    params: ReconstructFlags,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    Apls,
    Topo,
    All,
}

#[derive(Args, Clone, Copy)]
struct MetricFlags {
    #[arg(long, default_value_t = 16.0)]
    control_point_spacing: f64,
    #[arg(long, default_value_t = 8.0)]
    snap_radius: f64,
    #[arg(long, default_value_t = 16.0)]
    seed_interval: f64,
    #[arg(long, default_value_t = 8.0)]
    match_radius: f64,
    #[arg(long, default_value_t = 300.0)]
    propagation_radius: f64,
    #[arg(long, default_value_t = 5.0)]
    marble_interval: f64,
    /// Use maximum-cardinality marble matching instead of greedy.
    #[arg(long)]
    max_matching: bool,
}

impl MetricFlags {
    fn apls(&self) -> AplsParams {
        AplsParams { control_point_spacing: self.control_point_spacing, snap_radius: self.snap_radius }
    }

    fn topo(&self) -> TopoParams {
        TopoParams {
            seed_interval: self.seed_interval,
            match_radius: self.match_radius,
            propagation_radius: self.propagation_radius,
            marble_interval: self.marble_interval,
            matching: if self.max_matching { Matching::Maximum } else { Matching::Greedy },
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    gt: PathBuf,
    prop: PathBuf,
    #[arg(long, value_enum, default_value_t = Metric::All)]
    metric: Metric,
    /// Score record output; printed to stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    params: MetricFlags,
}

#[derive(Args)]
struct PipelineArgs {
    /// Ground-truth graph; its encoding supplies patch classes and the
    /// default target.
    #[arg(long, conflicts_with = "grid")]
    graph: Option<PathBuf>,
    /// Grid supplying patch classes when no graph is given.
    #[arg(long, requires = "target")]
    grid: Option<PathBuf>,
    /// Target mask; defaults to the soft mask of the encoded graph.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    patch_size: u32,
    #[arg(long, value_enum, default_value_t = Init::Moments)]
    init: Init,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    fit: FitFlags,
    #[command(flatten)]
    raster: RasterFlags,
    #[command(flatten)]
    reconstruct: ReconstructFlags,
    #[command(flatten)]
    metrics: MetricFlags,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_scene)]
    scene: Scene,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
    /// Binary centerline mask output (PGM).
    #[arg(long)]
    mask: Option<PathBuf>,
}

fn parse_scene(s: &str) -> Result<Scene, String> {
    s.parse().map_err(|e: palis::synth::UnknownScene| e.to_string())
}

/// A failed command and its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Format(String),
    Invariant(String),
    Missing(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Format(_) => 2,
            Failure::Invariant(_) => 3,
            Failure::Missing(_) => 4,
        }
    }

    fn usage(e: impl fmt::Display) -> Self {
        Failure::Usage(e.to_string())
    }

    fn invariant(e: impl fmt::Display) -> Self {
        Failure::Invariant(e.to_string())
    }

    fn io(path: &Path, e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::NotFound {
            Failure::Missing(format!("{}: file not found", path.display()))
        } else {
            Failure::Format(format!("{}: {e}", path.display()))
        }
    }

    fn read(path: &Path, e: FormatError) -> Self {
        let msg = format!("{}: {e}", path.display());
        match e {
            FormatError::Io(io) => Failure::io(path, io),
            FormatError::IndexOutOfRange { .. } | FormatError::Invariant { .. } => Failure::Invariant(msg),
            _ => Failure::Format(msg),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Format(m) | Failure::Invariant(m) | Failure::Missing(m) => f.write_str(m),
        }
    }
}

impl From<GridError> for Failure {
    fn from(e: GridError) -> Self {
        Failure::invariant(e)
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        Failure::invariant(e)
    }
}

impl From<RasterError> for Failure {
    fn from(e: RasterError) -> Self {
        match e {
            RasterError::InvalidParams(_) => Failure::usage(e),
            _ => Failure::invariant(e),
        }
    }
}

impl From<FitError> for Failure {
    fn from(e: FitError) -> Self {
        match e {
            FitError::InvalidConfig(_) => Failure::usage(e),
            FitError::Raster(r) => r.into(),
            _ => Failure::invariant(e),
        }
    }
}

impl From<ReconstructError> for Failure {
    fn from(e: ReconstructError) -> Self {
        Failure::usage(e)
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::InvalidParams(_) => Failure::usage(e),
            MetricError::EmptyGroundTruth => Failure::invariant(e),
        }
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Format(format!("{}: cannot write: {e}", path.display())))
}

fn load_graph(path: &Path) -> Result<GraphFile, Failure> {
    read_graph_file(path).map_err(|e| Failure::read(path, e))
}

fn load_grid(path: &Path) -> Result<PatchGrid, Failure> {
    read_grid_file(path).map_err(|e| Failure::read(path, e))
}

fn load_mask(path: &Path) -> Result<SoftMask, Failure> {
    read_mask_file(path).map_err(|e| Failure::read(path, e))
}

fn encode(args: &EncodeArgs) -> Result<(), Failure> {
    let file = load_graph(&args.graph)?;
    let width = args.width.unwrap_or(file.width);
    let height = args.height.unwrap_or(file.height);
    let enc = encode_graph_detailed(&file.graph, width, height, args.patch_size)?;
    for c in &enc.curved {
        eprintln!(
            "warning: cell ({}, {}) chord deviates {:.2} px from the road",
            c.row, c.col, c.max_deviation
        );
    }
    write_file(&args.out, write_grid(&enc.grid))
}

fn rasterize(args: &RasterizeArgs) -> Result<(), Failure> {
    let grid = load_grid(&args.grid)?;
    let mask = compose_soft_mask_checked(&grid, grid.width(), grid.height(), &args.raster.params()?)?;
    write_file(&args.out, write_float_raster(&FloatRaster::from_mask(&mask)))?;
    if let Some(preview) = &args.preview {
        write_file(preview, write_pgm(&ByteMask::from_mask(&mask)))?;
    }
    Ok(())
}

fn initial_grid(grid: &PatchGrid, init: Init, flags: &FitFlags, target: Option<&SoftMask>) -> Result<PatchGrid, Failure> {
    Ok(match init {
        Init::Keep => grid.clone(),
        Init::Centered => initialize_segments(grid, InitStrategy::Centered, flags.seed),
        Init::Jittered => initialize_segments(grid, InitStrategy::Jittered { amplitude: flags.jitter }, flags.seed),
        Init::Moments => {
            let target = target.ok_or_else(|| Failure::usage("--init moments needs a target mask"))?;
            initialize_from_mask(grid, target)?
        }
    })
}

fn fit(args: &FitArgs) -> Result<(), Failure> {
    let grid = load_grid(&args.grid)?;
    let target = args.target.as_deref().map(load_mask).transpose()?;
    let start = initial_grid(&grid, args.init, &args.fit, target.as_ref())?;
    let cfg = args.fit.config(args.raster.params()?);
    let (fitted, report) = match args.supervision {
        Supervision::Mask => {
            let target = target.as_ref().ok_or_else(|| Failure::usage("--target is required for mask supervision"))?;
            fit_palis(&start, target, &cfg)?
        }
        Supervision::Sorted | Supervision::Unsorted => {
            let path = args.labels.as_ref().ok_or_else(|| Failure::usage("--labels is required for vector supervision"))?;
            let mode = if args.supervision == Supervision::Sorted { VectorMode::Sorted } else { VectorMode::Unsorted };
            fit_vector_supervised(&start, &load_grid(path)?, mode, &cfg)?
        }
    };
    write_file(&args.out, write_grid(&fitted))?;
    if let Some(log) = &args.log {
        write_file(log, report.to_log())?;
    }
    Ok(())
}

fn report_diagnostics(diagnostics: &[Diagnostic]) {
    for d in diagnostics {
        match d {
            Diagnostic::XSkipped { row, col, neighbors } => {
                eprintln!("warning: X cell ({row}, {col}) has {neighbors} I neighbor(s); skipped")
            }
            Diagnostic::XFallback { row, col } => {
                eprintln!("warning: X cell ({row}, {col}) has no inner intersection; used endpoint centroid")
            }
        }
    }
}

fn reconstruct(args: &ReconstructArgs) -> Result<(), Failure> {
    let grid = load_grid(&args.grid)?;
    let r = reconstruct_detailed(&grid, &args.params.params())?;
    report_diagnostics(&r.diagnostics);
    let file = GraphFile { width: grid.width(), height: grid.height(), graph: r.graph };
    write_file(&args.out, write_graph(&file))?;
    if let Some(svg) = &args.svg {
        write_file(svg, render_svg(&file.graph, file.width, file.height, Some(&grid), None))?;
    }
    Ok(())
}

fn score_record(gt: &RoadGraph, prop: &RoadGraph, metric: Metric, flags: &MetricFlags) -> Result<String, Failure> {
    let mut out = String::new();
    if matches!(metric, Metric::Apls | Metric::All) {
        let p = flags.apls();
        let a = apls_detailed(gt, prop, &p)?;
        let params = format!("control_point_spacing={} snap_radius={}", p.control_point_spacing, p.snap_radius);
        out.push_str(&format!("apls {:.12} {params}\n", a.score));
        out.push_str(&format!("apls_gt_to_prop {:.12} {params}\n", a.gt_to_prop));
        out.push_str(&format!("apls_prop_to_gt {:.12} {params}\n", a.prop_to_gt));
    }
    if matches!(metric, Metric::Topo | Metric::All) {
        let p = flags.topo();
        let t = topo(gt, prop, &p)?;
        let params = format!(
            "seed_interval={} match_radius={} propagation_radius={} marble_interval={} matching={}",
            p.seed_interval,
            p.match_radius,
            p.propagation_radius,
            p.marble_interval,
            if p.matching == Matching::Maximum { "maximum" } else { "greedy" }
        );
        out.push_str(&format!("topo_precision {:.12} {params}\n", t.precision));
        out.push_str(&format!("topo_recall {:.12} {params}\n", t.recall));
        out.push_str(&format!("topo_f1 {:.12} {params}\n", t.f1));
    }
    Ok(out)
}

fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let gt = load_graph(&args.gt)?;
    let prop = load_graph(&args.prop)?;
    let record = score_record(&gt.graph, &prop.graph, args.metric, &args.params)?;
    match &args.out {
        Some(path) => write_file(path, record),
        None => {
            print!("{record}");
            Ok(())
        }
    }
}

fn pipeline(args: &PipelineArgs) -> Result<(), Failure> {
    let raster = args.raster.params()?;
    let (gt, grid) = match (&args.graph, &args.grid) {
        (Some(path), _) => {
            let file = load_graph(path)?;
            let grid = encode_graph_detailed(&file.graph, file.width, file.height, args.patch_size)?.grid;
            (Some(file.graph), grid)
        }
        (None, Some(path)) => (None, load_grid(path)?),
        (None, None) => return Err(Failure::usage("either --graph or --grid is required")),
    };
    let target = match &args.target {
        Some(path) => load_mask(path)?,
        None => compose_soft_mask(&grid, &raster),
    };
    let start = initial_grid(&grid, args.init, &args.fit, Some(&target))?;
    let (fitted, report) = fit_palis(&start, &target, &args.fit.config(raster))?;
    let r = reconstruct_detailed(&fitted, &args.reconstruct.params())?;
    report_diagnostics(&r.diagnostics);

    fs::create_dir_all(&args.out_dir).map_err(|e| Failure::io(&args.out_dir, e))?;
    let dir = &args.out_dir;
    write_file(&dir.join("fitted_grid.json"), write_grid(&fitted))?;
    write_file(&dir.join("fit.log"), report.to_log())?;
    let file = GraphFile { width: grid.width(), height: grid.height(), graph: r.graph };
    write_file(&dir.join("graph.json"), write_graph(&file))?;
    write_file(&dir.join("overlay.svg"), render_svg(&file.graph, file.width, file.height, Some(&fitted), Some(&target)))?;
    if let Some(gt) = gt {
        let mut record = score_record(&gt, &file.graph, Metric::All, &args.metrics)?;
        record.push_str(&format!("mean_endpoint_error {:.12}\n", palis::fitter::mean_endpoint_error(&fitted, &grid)));
        write_file(&dir.join("scores.txt"), record)?;
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), Failure> {
    let s = generate(args.scene, args.seed);
    write_file(&args.out, write_graph(&GraphFile { width: s.width, height: s.height, graph: s.graph.clone() }))?;
    if let Some(mask) = &args.mask {
        let m = centerline_mask(&s.graph, s.width, s.height);
        write_file(mask, write_pgm(&ByteMask::from_mask(&m)))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(Failure::usage)?;
    }
    match &cli.command {
        Command::Encode(a) => encode(a),
        Command::Rasterize(a) => rasterize(a),
        Command::Fit(a) => fit(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
