//! The outer denoising loop: pick a starting depth, then alternate
//! λ-projection onto the current surface with iPSR on the moved points while
//! the depth follows a fixed schedule.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::features::{sharpness_field, LambdaField, Threshold, VcmParams};
use crate::geometry::{sample_mesh_uniform, PointCloud, TriangleMesh};
use crate::ipsr::{run_ipsr, IpsrConfig, IpsrResult};
use crate::metrics;
use crate::projection::{lambda_project, uniform_lambda};

/// Schedule cap used by [`depth_schedule`].
pub const DEFAULT_D_MAX: u32 = 8;
pub const DEFAULT_OUTER_ITERS: usize = 5;
/// Seed for sampling a ground-truth mesh into a dense reference cloud.
pub const GT_SEED: u64 = 0x67_7473;

/// How per-point coefficients are chosen once the surface depth reaches `d_sharp`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    /// Threshold at this percentile of the sharpness ratios, width half of it.
    Percentile(f64),
    Fixed { c: f64, sigma: f64 },
    /// Same coefficient everywhere (no feature weighting).
    Uniform(f64),
}

impl fmt::Display for LambdaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaMode::Percentile(p) => write!(f, "percentile({p})"),
            LambdaMode::Fixed { c, sigma } => write!(f, "fixed(c={c},sigma={sigma})"),
            LambdaMode::Uniform(v) => write!(f, "uniform({v})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub d_min: u32,
    pub d_max: u32,
    pub outer_iters: usize,
    pub d_sharp: u32,
    pub point_weight: f64,
    pub early_lambda: f64,
    pub lambda_mode: LambdaMode,
    /// A depth also counts as converging well when the mean of its last five
    /// variation values is below this.
    pub last_five_threshold: f64,
    /// Inner loop settings; depth, point weight and seed are set per call.
    pub ipsr: IpsrConfig,
    /// `None` scales the defaults to the input cloud.
    pub vcm: Option<VcmParams>,
    pub seed: u64,
    /// Samples drawn when ground truth is supplied as a mesh.
    pub gt_samples: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            d_min: 6,
            d_max: DEFAULT_D_MAX,
            outer_iters: DEFAULT_OUTER_ITERS,
            d_sharp: 8,
            point_weight: 1.0,
            early_lambda: 0.5,
            lambda_mode: LambdaMode::Percentile(0.9),
            last_five_threshold: 0.7,
            ipsr: IpsrConfig::default(),
            vcm: None,
            seed: 0,
            gt_samples: metrics::DEFAULT_MESH_SAMPLES,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_min > self.d_max {
            return Err(Error::InvalidParameter(format!(
                "d_min {} exceeds d_max {}",
                self.d_min, self.d_max
            )));
        }
        if self.outer_iters < 1 {
            return Err(Error::InvalidParameter("outer_iters must be at least 1".into()));
        }
        uniform_lambda(0, self.early_lambda)?;
        match self.lambda_mode {
            LambdaMode::Percentile(p) if !(p > 0.0 && p < 1.0) => {
                return Err(Error::OutOfRange {
                    name: "percentile",
                    value: p,
                    expected: "(0, 1)",
                })
            }
            LambdaMode::Fixed { sigma, .. } if !(sigma > 0.0) => {
                return Err(Error::OutOfRange {
                    name: "sigma",
                    value: sigma,
                    expected: "> 0",
                })
            }
            LambdaMode::Uniform(v) => {
                uniform_lambda(0, v)?;
            }
            _ => {}
        }
        for d in [self.d_min, self.d_max] {
            self.ipsr_at(d).validate()?;
        }
        Ok(())
    }

    fn ipsr_at(&self, depth: u32) -> IpsrConfig {
        IpsrConfig {
            depth,
            point_weight: self.point_weight,
            seed: self.seed,
            ..self.ipsr
        }
    }
}

/// Outcome of trying one depth during initial depth selection.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthTrial {
    pub depth: u32,
    pub iterations: usize,
    pub last_five_mean: f64,
    pub converges_well: bool,
}

fn last_five_mean(history: &[f64]) -> f64 {
    let tail = &history[history.len().saturating_sub(5)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Try iPSR from `d_max` down to `d_min` and keep the first depth that
/// converges well; falls back to `d_min`.
pub fn select_initial_depth(points: &PointCloud, config: &PipelineConfig) -> Result<(u32, IpsrResult)> {
    select_initial_surface(points, config).map(|s| (s.d0, s.ipsr))
}

/// The surface the outer loop starts from, with the depth trials behind it.
#[derive(Debug, Clone)]
pub struct InitialSurface {
    pub d0: u32,
    pub ipsr: IpsrResult,
    pub trials: Vec<DepthTrial>,
}

/// Like [`select_initial_depth`], keeping every trial. The result can seed
/// several [`run_pipeline_from`] calls that differ only after depth selection.
pub fn select_initial_surface(points: &PointCloud, config: &PipelineConfig) -> Result<InitialSurface> {
    config.validate()?;
    let points = points.without_normals();
    let points = &points;
    if points.len() < 4 {
        return Err(Error::TooFewPoints {
            needed: 4,
            got: points.len(),
        });
    }
    let mut trials = Vec::new();
    let mut last = None;
    for depth in (config.d_min..=config.d_max).rev() {
        let res = run_ipsr(points, &config.ipsr_at(depth), None)?;
        let mean5 = last_five_mean(&res.variation_history);
        let well = res.converged || mean5 < config.last_five_threshold;
        log::info!(
            "depth {depth}: {} ipsr iterations, last-five mean {mean5:.3}, {}",
            res.iterations,
            if well { "accepted" } else { "rejected" }
        );
        trials.push(DepthTrial {
            depth,
            iterations: res.iterations,
            last_five_mean: mean5,
            converges_well: well,
        });
        if well {
            return Ok(InitialSurface {
                d0: depth,
                ipsr: res,
                trials,
            });
        }
        last = Some((depth, res));
    }
    let (d0, ipsr) = last.expect("depth range is nonempty");
    Ok(InitialSurface { d0, ipsr, trials })
}

/// Depth sequence for the outer loop with the default cap and length.
pub fn depth_schedule(d0: u32) -> Vec<u32> {
    depth_schedule_with(d0, DEFAULT_D_MAX.max(d0), DEFAULT_OUTER_ITERS)
}

/// `d0` twice, then one level deeper every two iterations, capped at `d_max`.
pub fn depth_schedule_with(d0: u32, d_max: u32, len: usize) -> Vec<u32> {
    let cap = d_max.max(d0);
    (0..len).map(|k| (d0 + (k / 2) as u32).min(cap)).collect()
}

/// Reference geometry for per-iteration RMSD.
#[derive(Debug, Clone)]
pub enum GroundTruth {
    Mesh(TriangleMesh),
    /// Already a dense sample of the true surface.
    Dense(PointCloud),
}

impl GroundTruth {
    pub fn dense(&self, samples: usize) -> Result<PointCloud> {
        match self {
            GroundTruth::Mesh(m) => sample_mesh_uniform(m, samples, GT_SEED),
            GroundTruth::Dense(c) => Ok(c.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based outer iteration.
    pub iter: usize,
    /// Depth of the surface reconstructed in this iteration.
    pub depth: u32,
    /// Depth of the surface the points were projected onto.
    pub projection_depth: u32,
    pub ipsr_iters: usize,
    pub final_v: f64,
    pub mean_disp: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Threshold and width used for feature weighting, when applied.
    pub threshold: Option<(f64, f64)>,
    pub rmsd: Option<f64>,
    pub max_relative_residual: f64,
    pub time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineReport {
    pub d0: u32,
    pub schedule: Vec<u32>,
    pub depth_trials: Vec<DepthTrial>,
    pub initial_ipsr_iters: usize,
    pub initial_max_relative_residual: f64,
    /// RMSD of the input cloud when ground truth is supplied.
    pub rmsd_input: Option<f64>,
    pub records: Vec<IterationRecord>,
}

pub const REPORT_CSV_HEADER: &str = "iter,depth,ipsr_iters,final_v,mean_disp,rmsd,time_ms";

impl PipelineReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{REPORT_CSV_HEADER}")?;
        for r in &self.records {
            let rmsd = r.rmsd.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{:.3}",
                r.iter, r.depth, r.ipsr_iters, r.final_v, r.mean_disp, rmsd, r.time_ms
            )?;
        }
        Ok(())
    }

    /// Largest solver residual over every reconstruction in the run.
    pub fn max_relative_residual(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.max_relative_residual)
            .fold(self.initial_max_relative_residual, f64::max)
    }

    /// Same report with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> PipelineReport {
        let mut r = self.clone();
        for rec in &mut r.records {
            rec.time_ms = 0.0;
        }
        r
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// The final projected cloud, carrying the normals of the surface it was projected onto.
    pub denoised: PointCloud,
    /// Surface reconstructed from the final cloud.
    pub mesh: TriangleMesh,
    /// Surface the final cloud was projected onto.
    pub projection_mesh: TriangleMesh,
    pub report: PipelineReport,
}

/// A failed run with the records completed before the failure.
#[derive(Debug)]
pub struct PipelineError {
    pub error: Error,
    pub report: PipelineReport,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} outer iterations)", self.error, self.report.records.len())
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<PipelineError> for Error {
    fn from(e: PipelineError) -> Self {
        e.error
    }
}

/// Denoise `points`. Ground truth, when given, only feeds the report.
pub fn run_pipeline(
    points: &PointCloud,
    config: &PipelineConfig,
    ground_truth: Option<&GroundTruth>,
) -> std::result::Result<PipelineOutput, PipelineError> {
    match select_initial_surface(points, config) {
        Ok(initial) => run_pipeline_from(points, config, ground_truth, &initial),
        Err(error) => Err(PipelineError {
            error,
            report: PipelineReport::default(),
        }),
    }
}

/// Run the outer loop from an already selected initial surface, which must
/// come from [`select_initial_surface`] on the same points and a config with
/// the same depth range and inner settings.
pub fn run_pipeline_from(
    points: &PointCloud,
    config: &PipelineConfig,
    ground_truth: Option<&GroundTruth>,
    initial: &InitialSurface,
) -> std::result::Result<PipelineOutput, PipelineError> {
    let mut report = PipelineReport::default();
    let result = if initial.ipsr.normals.len() == points.len() {
        run_inner(points, config, ground_truth, initial, &mut report)
    } else {
        Err(Error::LengthMismatch {
            expected: points.len(),
            actual: initial.ipsr.normals.len(),
        })
    };
    match result {
        Ok((denoised, mesh, projection_mesh)) => Ok(PipelineOutput {
            denoised,
            mesh,
            projection_mesh,
            report,
        }),
        Err(error) => Err(PipelineError { error, report }),
    }
}

fn run_inner(
    points: &PointCloud,
    config: &PipelineConfig,
    ground_truth: Option<&GroundTruth>,
    initial: &InitialSurface,
    report: &mut PipelineReport,
) -> Result<(PointCloud, TriangleMesh, TriangleMesh)> {
    config.validate()?;
    let input = points.without_normals();
    let gt_dense = ground_truth.map(|g| g.dense(config.gt_samples)).transpose()?;
    if let Some(gt) = &gt_dense {
        report.rmsd_input = Some(metrics::rmsd(&input, gt)?);
    }
    let vcm = config.vcm.unwrap_or_else(|| VcmParams {
        seed: config.seed,
        ..VcmParams::for_cloud(&input)
    });

    let (d0, s0) = (initial.d0, &initial.ipsr);
    let schedule = depth_schedule_with(d0, config.d_max, config.outer_iters);
    report.d0 = d0;
    report.schedule = schedule.clone();
    report.depth_trials = initial.trials.clone();
    report.initial_ipsr_iters = s0.iterations;
    report.initial_max_relative_residual = s0.max_relative_residual;
    log::info!("initial depth {d0}, schedule {schedule:?}");

    let mut cloud = input;
    let mut surface = s0.mesh.clone();
    let mut surface_depth = d0;
    let mut previous = surface.clone();
    for (k, &depth) in schedule.iter().enumerate() {
        let started = Instant::now();
        let (lambdas, threshold) = lambdas_for(&cloud, surface_depth, config, &vcm)?;
        let lambda_min = lambdas.lambdas.iter().copied().fold(f64::INFINITY, f64::min);
        let lambda_max = lambdas.lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let projected = lambda_project(&cloud, &surface, &lambdas)?;
        let mean_disp = projected.mean_displacement();
        let carried = projected.points.require_normals()?.to_vec();
        let ipsr = run_ipsr(&projected.points, &config.ipsr_at(depth), Some(&carried))?;
        let rmsd = gt_dense
            .as_ref()
            .map(|gt| metrics::rmsd(&projected.points, gt))
            .transpose()?;
        report.records.push(IterationRecord {
            iter: k + 1,
            depth,
            projection_depth: surface_depth,
            ipsr_iters: ipsr.iterations,
            final_v: ipsr.final_variation(),
            mean_disp,
            lambda_min,
            lambda_max,
            threshold,
            rmsd,
            max_relative_residual: ipsr.max_relative_residual,
            time_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        log::info!(
            "outer iteration {}: depth {depth}, {} ipsr iterations, mean displacement {mean_disp:.3e}",
            k + 1,
            ipsr.iterations
        );
        cloud = projected.points;
        previous = std::mem::replace(&mut surface, ipsr.mesh);
        surface_depth = depth;
    }
    Ok((cloud, surface, previous))
}

fn lambdas_for(
    cloud: &PointCloud,
    surface_depth: u32,
    config: &PipelineConfig,
    vcm: &VcmParams,
) -> Result<(LambdaField, Option<(f64, f64)>)> {
    if surface_depth < config.d_sharp {
        return Ok((uniform_lambda(cloud.len(), config.early_lambda)?, None));
    }
    let threshold = match config.lambda_mode {
        LambdaMode::Uniform(v) => return Ok((uniform_lambda(cloud.len(), v)?, None)),
        LambdaMode::Percentile(p) => Threshold::Percentile(p),
        LambdaMode::Fixed { c, sigma } => Threshold::Fixed { c, sigma },
    };
    let field = sharpness_field(cloud, vcm, threshold)?;
    Ok((field.lambdas(), Some((field.c, field.sigma))))
}
