//! Synthetic corruptions and a batch runner over mesh files.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{normalize_to_unit, sample_mesh_uniform, Aabb, Point3, PointCloud, TriangleMesh, Vector3};
use crate::io::{read_mesh, Format};
use crate::metrics::{evaluate_points, MetricReport, DEFAULT_TAU};
use crate::pipeline::{run_pipeline, GroundTruth, PipelineConfig, GT_SEED};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    pub gaussian_std: f64,
    pub outlier_count: usize,
    /// Outliers are drawn uniformly here; `None` uses the unit cube.
    pub outlier_box: Option<Aabb>,
    /// Keep probability for points on the positive side of the split plane.
    pub density_ratio: f64,
    pub split_axis: usize,
    /// Experimental: rigid offset applied to every other point.
    pub misalignment: Option<Vector3>,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            gaussian_std: 0.0,
            outlier_count: 0,
            outlier_box: None,
            density_ratio: 1.0,
            split_axis: 0,
            misalignment: None,
            seed: 0,
        }
    }
}

// Independent streams so changing one corruption leaves the others' draws intact.
const NOISE_STREAM: u64 = 1;
const OUTLIER_STREAM: u64 = 2;
const DENSITY_STREAM: u64 = 3;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-coordinate zero-mean Gaussian noise. Normals are dropped.
pub fn add_gaussian_noise(cloud: &PointCloud, std: f64, seed: u64) -> Result<PointCloud> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::OutOfRange {
            name: "gaussian_std",
            value: std,
            expected: ">= 0",
        });
    }
    let mut rng = rng_for(seed, NOISE_STREAM);
    let pts = cloud
        .points()
        .iter()
        .map(|p| {
            let d = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            p + d * std
        })
        .collect();
    PointCloud::new(pts)
}

/// Append `count` points uniform in `bbox`. Normals are dropped when any are added.
pub fn add_outliers(cloud: &PointCloud, count: usize, bbox: &Aabb, seed: u64) -> Result<PointCloud> {
    if count == 0 {
        return Ok(cloud.clone());
    }
    let mut rng = rng_for(seed, OUTLIER_STREAM);
    let mut pts = cloud.points().to_vec();
    let ext = bbox.extent();
    pts.extend((0..count).map(|_| {
        let u = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
        bbox.min + ext.component_mul(&u)
    }));
    PointCloud::new(pts)
}

/// Thin the half above the median plane along `axis`, keeping each point
/// there with probability `ratio`.
pub fn vary_density(cloud: &PointCloud, ratio: f64, axis: usize, seed: u64) -> Result<PointCloud> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::OutOfRange {
            name: "density_ratio",
            value: ratio,
            expected: "(0, 1]",
        });
    }
    if axis > 2 {
        return Err(Error::InvalidParameter(format!("axis {axis} is not 0, 1 or 2")));
    }
    if ratio == 1.0 {
        return Ok(cloud.clone());
    }
    let mut coords: Vec<f64> = cloud.points().iter().map(|p| p[axis]).collect();
    let mid = coords.len() / 2;
    let (_, &mut median, _) = coords.select_nth_unstable_by(mid, f64::total_cmp);
    let mut rng = rng_for(seed, DENSITY_STREAM);
    let normals = cloud.normals();
    let mut pts = Vec::new();
    let mut ns = Vec::new();
    for (i, p) in cloud.points().iter().enumerate() {
        // Draw for every point so the pattern does not depend on the split.
        let keep_draw = rng.random::<f64>();
        if p[axis] > median && keep_draw >= ratio {
            continue;
        }
        pts.push(*p);
        if let Some(n) = normals {
            ns.push(n[i]);
        }
    }
    if normals.is_some() {
        PointCloud::with_normals(pts, ns)
    } else {
        PointCloud::new(pts)
    }
}

/// Experimental structured noise: every odd-indexed point is shifted by `offset`.
pub fn add_misalignment(cloud: &PointCloud, offset: &Vector3) -> Result<PointCloud> {
    let pts = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| if i % 2 == 1 { p + offset } else { *p })
        .collect();
    PointCloud::new(pts)
}

/// Apply density variation, misalignment, noise, then outliers.
pub fn corrupt(cloud: &PointCloud, spec: &CorruptionSpec) -> Result<PointCloud> {
    let mut out = vary_density(cloud, spec.density_ratio, spec.split_axis, spec.seed)?;
    if let Some(offset) = &spec.misalignment {
        out = add_misalignment(&out, offset)?;
    }
    out = add_gaussian_noise(&out, spec.gaussian_std, spec.seed)?;
    let bbox = spec
        .outlier_box
        .unwrap_or_else(|| Aabb::new(Point3::origin(), Point3::new(1.0, 1.0, 1.0)));
    add_outliers(&out, spec.outlier_count, &bbox, spec.seed)
}

/// Scale a mesh so its bounding box has unit max side with min corner at the origin.
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<TriangleMesh> {
    let verts = PointCloud::new(mesh.vertices.clone())?;
    let (norm, _, _) = normalize_to_unit(&verts)?;
    let (vertices, _) = norm.into_parts();
    Ok(TriangleMesh {
        vertices,
        faces: mesh.faces.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSettings {
    /// Clean samples drawn per shape before corruption.
    pub samples: usize,
    /// Dense ground-truth samples per shape.
    pub gt_samples: usize,
    pub tau: f64,
    pub sample_seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            samples: 50_000,
            gt_samples: 100_000,
            tau: DEFAULT_TAU,
            sample_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub shape: String,
    pub n_points: usize,
    pub before: Option<MetricReport>,
    pub after: Option<MetricReport>,
    pub d0: Option<u32>,
    pub error: Option<String>,
}

pub const BENCH_CSV_VERSION: &str = "# altrec-bench v1";
pub const BENCH_CSV_HEADER: &str = "shape,n_points,status,d0,rmsd_before,mads_before,chamfer_before,f_score_before,\
rmsd_after,mads_after,chamfer_after,nc_after,f_score_after,error";

impl BenchRow {
    pub fn csv_row(&self) -> String {
        let metric = |m: &Option<MetricReport>, f: fn(&MetricReport) -> Option<f64>| {
            m.as_ref().and_then(f).map(|v| v.to_string()).unwrap_or_default()
        };
        let status = if self.error.is_some() { "error" } else { "ok" };
        let clean = |s: &str| s.replace([',', '\n', '\r'], " ");
        [
            clean(&self.shape),
            self.n_points.to_string(),
            status.to_string(),
            self.d0.map(|d| d.to_string()).unwrap_or_default(),
            metric(&self.before, |m| Some(m.rmsd)),
            metric(&self.before, |m| Some(m.mads)),
            metric(&self.before, |m| Some(m.chamfer_l1)),
            metric(&self.before, |m| Some(m.f_score)),
            metric(&self.after, |m| Some(m.rmsd)),
            metric(&self.after, |m| Some(m.mads)),
            metric(&self.after, |m| Some(m.chamfer_l1)),
            metric(&self.after, |m| m.normal_consistency),
            metric(&self.after, |m| Some(m.f_score)),
            self.error.as_deref().map(clean).unwrap_or_default(),
        ]
        .join(",")
    }
}

/// Benchmark one already-loaded mesh.
pub fn bench_mesh(
    name: &str,
    mesh: &TriangleMesh,
    corruption: &CorruptionSpec,
    config: &PipelineConfig,
    settings: &BenchSettings,
) -> BenchRow {
    let mut row = BenchRow {
        shape: name.to_string(),
        n_points: 0,
        before: None,
        after: None,
        d0: None,
        error: None,
    };
    let result = (|| -> Result<()> {
        let mesh = normalize_mesh(mesh)?;
        let clean = sample_mesh_uniform(&mesh, settings.samples, settings.sample_seed)?;
        let noisy = corrupt(&clean, corruption)?;
        row.n_points = noisy.len();
        let gt = sample_mesh_uniform(&mesh, settings.gt_samples, GT_SEED)?;
        row.before = Some(evaluate_points(&noisy, &gt, settings.tau)?);
        let out = run_pipeline(&noisy, config, Some(&GroundTruth::Dense(gt.clone())));
        let out = match out {
            Ok(o) => o,
            Err(e) => {
                row.d0 = Some(e.report.d0).filter(|&d| d > 0);
                return Err(e.error);
            }
        };
        row.d0 = Some(out.report.d0);
        row.after = Some(evaluate_points(&out.denoised, &gt, settings.tau)?);
        Ok(())
    })();
    if let Err(e) = result {
        log::warn!("{name}: {e}");
        row.error = Some(format!("{}: {e}", e.kind()));
    }
    row
}

/// Run every shape in order, writing the versioned CSV to `out`. Per-shape
/// failures are recorded in their rows.
pub fn run_benchmark<W: Write>(
    shapes: &[PathBuf],
    corruption: &CorruptionSpec,
    config: &PipelineConfig,
    settings: &BenchSettings,
    out: &mut W,
) -> Result<Vec<BenchRow>> {
    writeln!(out, "{BENCH_CSV_VERSION}")?;
    writeln!(out, "{BENCH_CSV_HEADER}")?;
    let mut rows = Vec::with_capacity(shapes.len());
    for path in shapes {
        let name = path.display().to_string();
        let row = match load_mesh(path) {
            Ok(mesh) => bench_mesh(&name, &mesh, corruption, config, settings),
            Err(e) => BenchRow {
                shape: name,
                n_points: 0,
                before: None,
                after: None,
                d0: None,
                error: Some(format!("{}: {e}", e.kind())),
            },
        };
        writeln!(out, "{}", row.csv_row())?;
        out.flush()?;
        rows.push(row);
    }
    Ok(rows)
}

fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    read_mesh(path, Format::from_path(path)?)
}
