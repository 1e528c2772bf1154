use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use altrec::bench::{corrupt, normalize_mesh, run_benchmark, BenchSettings, CorruptionSpec};
use altrec::features::{sharpness_field, write_sharpness_csv, Threshold, VcmParams};
use altrec::geometry::{sample_mesh_uniform, PointCloud, TriangleMesh};
use altrec::io::{read_mesh, read_points, write_mesh, write_points, Format};
use altrec::ipsr::{run_ipsr, IpsrConfig};
use altrec::metrics::{evaluate, Shape, EVAL_CSV_HEADER};
use altrec::pipeline::{run_pipeline, GroundTruth, LambdaMode, PipelineConfig};
use altrec::Error;

#[derive(Parser)]
#[command(name = "altrec", version, about = "Denoise unoriented point clouds by alternating reconstruction and projection")]
struct Cli {
    /// Log level (error, warn, info, debug, trace). RUST_LOG takes precedence.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    /// Write PLY outputs in binary little endian.
    #[arg(long, global = true)]
    binary: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full denoising pipeline.
    Denoise(DenoiseArgs),
    /// Single iPSR run at a fixed depth.
    Ipsr(IpsrArgs),
    /// Compare a prediction with ground truth; prints one CSV row.
    Eval(EvalArgs),
    /// Sample and corrupt a mesh.
    Synth(SynthArgs),
    /// Per-point sharpness ratios and coefficients as CSV.
    Vcm(VcmArgs),
    /// Corrupt, denoise and evaluate a list of meshes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Final reconstructed surface.
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Per-iteration CSV report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Ground-truth mesh; adds RMSD to the report.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, default_value_t = 6)]
    dmin: u32,
    #[arg(long, default_value_t = 8)]
    dmax: u32,
    #[arg(long, default_value_t = 5)]
    iters: usize,
    #[arg(long, default_value_t = 8)]
    dsharp: u32,
    #[arg(long, default_value_t = 1.0)]
    point_weight: f64,
    #[arg(long, default_value_t = 0.5)]
    early_lambda: f64,
    /// `auto` picks the threshold from the ratio distribution.
    #[arg(long, default_value = "auto")]
    lambda_c: String,
    /// Width of the coefficient law; required with a numeric --lambda-c.
    #[arg(long)]
    lambda_sigma: Option<f64>,
    /// Ratio percentile used by `--lambda-c auto`.
    #[arg(long, default_value_t = 0.9)]
    lambda_percentile: f64,
    /// Same coefficient for every point instead of feature weighting.
    #[arg(long, conflicts_with_all = ["lambda_sigma"])]
    lambda_uniform: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig, Error> {
        let lambda_mode = if let Some(v) = self.lambda_uniform {
            LambdaMode::Uniform(v)
        } else if self.lambda_c == "auto" {
            LambdaMode::Percentile(self.lambda_percentile)
        } else {
            let c: f64 = self
                .lambda_c
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("--lambda-c: '{}' is neither auto nor a number", self.lambda_c)))?;
            let sigma = self
                .lambda_sigma
                .ok_or_else(|| Error::InvalidParameter("--lambda-sigma is required with a numeric --lambda-c".into()))?;
            LambdaMode::Fixed { c, sigma }
        };
        let config = PipelineConfig {
            d_min: self.dmin,
            d_max: self.dmax,
            outer_iters: self.iters,
            d_sharp: self.dsharp,
            point_weight: self.point_weight,
            early_lambda: self.early_lambda,
            lambda_mode,
            seed: self.seed,
            ..Default::default()
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct IpsrArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    depth: u32,
    /// Reconstructed mesh.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input points with the estimated normals.
    #[arg(long)]
    normals_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    point_weight: f64,
    #[arg(long, default_value_t = 30)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Mesh or point set.
    #[arg(long)]
    pred: PathBuf,
    /// Mesh or point set.
    #[arg(long)]
    gt: PathBuf,
    /// Samples drawn from each mesh argument.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 5e-3)]
    tau: f64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CorruptionArgs {
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 0)]
    outliers: usize,
    #[arg(long, default_value_t = 1.0)]
    density_ratio: f64,
    /// Axis (0, 1, 2) whose positive half is thinned by --density-ratio.
    #[arg(long, default_value_t = 0)]
    split_axis: usize,
}

impl CorruptionArgs {
    fn spec(&self, seed: u64) -> CorruptionSpec {
        CorruptionSpec {
            gaussian_std: self.noise_std,
            outlier_count: self.outliers,
            density_ratio: self.density_ratio,
            split_axis: self.split_axis,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Source mesh; normalized to the unit box before sampling.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: usize,
    #[command(flatten)]
    corruption: CorruptionArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VcmArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to 5% of the bounding diagonal.
    #[arg(long)]
    offset_r: Option<f64>,
    /// Defaults to 5% of the bounding diagonal.
    #[arg(long)]
    conv_r: Option<f64>,
    #[arg(long, default_value_t = 500)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0.9)]
    percentile: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Mesh files, one CSV row each.
    #[arg(long, num_args = 1.., required = true)]
    shapes: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    samples: usize,
    #[arg(long, default_value_t = 100_000)]
    gt_samples: usize,
    #[arg(long, default_value_t = 5e-3)]
    tau: f64,
    #[command(flatten)]
    corruption: CorruptionArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("UsageError", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn report_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "message": message }));
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Denoise(a) => denoise(a, cli.binary),
        Command::Ipsr(a) => ipsr(a, cli.binary),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a, cli.binary),
        Command::Vcm(a) => vcm(a),
        Command::Bench(a) => bench(a),
    }
}

fn output_format(path: &Path, binary: bool) -> Result<Format, Error> {
    Ok(match Format::from_path(path)? {
        Format::Ply if binary => Format::PlyBinary,
        f => f,
    })
}

fn load_points(path: &Path) -> Result<PointCloud, Error> {
    read_points(path, Format::from_path(path)?)
}

fn load_mesh(path: &Path) -> Result<TriangleMesh, Error> {
    read_mesh(path, Format::from_path(path)?)
}

fn save_points(path: &Path, cloud: &PointCloud, binary: bool) -> Result<(), Error> {
    write_points(path, output_format(path, binary)?, cloud)
}

fn save_mesh(path: &Path, mesh: &TriangleMesh, binary: bool) -> Result<(), Error> {
    write_mesh(path, output_format(path, binary)?, mesh)
}

/// A mesh when the file has faces, otherwise its points.
fn load_shape(path: &Path) -> Result<Shape, Error> {
    let format = Format::from_path(path)?;
    if format != Format::Xyz {
        let mesh = read_mesh(path, format)?;
        if !mesh.faces.is_empty() {
            return Ok(Shape::Mesh(mesh));
        }
    }
    Ok(Shape::Points(read_points(path, format)?))
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn denoise(a: &DenoiseArgs, binary: bool) -> Result<(), Error> {
    let config = a.pipeline.config()?;
    let cloud = load_points(&a.input)?;
    let gt = a.gt.as_deref().map(load_mesh).transpose()?.map(GroundTruth::Mesh);
    let out = run_pipeline(&cloud, &config, gt.as_ref())?;
    save_points(&a.out, &out.denoised, binary)?;
    if let Some(path) = &a.mesh {
        save_mesh(path, &out.mesh, binary)?;
    }
    if let Some(path) = &a.report {
        let mut w = create(path)?;
        out.report.write_csv(&mut w)?;
        w.flush()?;
    }
    let r = &out.report;
    println!(
        "{}",
        json!({
            "points": out.denoised.len(),
            "d0": r.d0,
            "schedule": r.schedule,
            "rmsd_input": r.rmsd_input,
            "rmsd_final": r.records.last().and_then(|x| x.rmsd),
            "max_relative_residual": r.max_relative_residual(),
        })
    );
    Ok(())
}

fn ipsr(a: &IpsrArgs, binary: bool) -> Result<(), Error> {
    let cloud = load_points(&a.input)?.without_normals();
    let config = IpsrConfig {
        depth: a.depth,
        point_weight: a.point_weight,
        max_iters: a.max_iters,
        seed: a.seed,
        ..Default::default()
    };
    config.validate()?;
    let res = run_ipsr(&cloud, &config, None)?;
    if let Some(path) = &a.out {
        save_mesh(path, &res.mesh, binary)?;
    }
    if let Some(path) = &a.normals_out {
        let (points, _) = cloud.into_parts();
        save_points(path, &PointCloud::with_normals(points, res.normals.clone())?, binary)?;
    }
    println!(
        "{}",
        json!({
            "iterations": res.iterations,
            "converged": res.converged,
            "final_v": res.final_variation(),
            "variation_history": res.variation_history,
            "vertices": res.mesh.vertices.len(),
            "faces": res.mesh.faces.len(),
        })
    );
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<(), Error> {
    let report = evaluate(&load_shape(&a.pred)?, &load_shape(&a.gt)?, a.samples, a.tau)?;
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            report.write_csv(&mut w)?;
            w.flush()?;
        }
        None => {
            println!("{EVAL_CSV_HEADER}");
            println!("{}", report.csv_row());
        }
    }
    Ok(())
}

fn synth(a: &SynthArgs, binary: bool) -> Result<(), Error> {
    let mesh = normalize_mesh(&load_mesh(&a.input)?)?;
    let clean = sample_mesh_uniform(&mesh, a.n, a.seed)?;
    let noisy = corrupt(&clean, &a.corruption.spec(a.seed))?;
    save_points(&a.out, &noisy, binary)
}

fn vcm(a: &VcmArgs) -> Result<(), Error> {
    let cloud = load_points(&a.input)?;
    let defaults = VcmParams::for_cloud(&cloud);
    let params = VcmParams {
        offset_radius: a.offset_r.unwrap_or(defaults.offset_radius),
        convolution_radius: a.conv_r.unwrap_or(defaults.convolution_radius),
        integration_samples: a.mc_samples,
        seed: a.seed,
    };
    let field = sharpness_field(&cloud, &params, Threshold::Percentile(a.percentile))?;
    let mut w = create(&a.out)?;
    write_sharpness_csv(&mut w, cloud.points(), &field)?;
    w.flush()?;
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<(), Error> {
    let config = a.pipeline.config()?;
    let settings = BenchSettings {
        samples: a.samples,
        gt_samples: a.gt_samples,
        tau: a.tau,
        ..Default::default()
    };
    let mut w = create(&a.out)?;
    let rows = run_benchmark(&a.shapes, &a.corruption.spec(a.pipeline.seed), &config, &settings, &mut w)?;
    w.flush()?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!("{}", json!({ "shapes": rows.len(), "failed": failed }));
    Ok(())
}
