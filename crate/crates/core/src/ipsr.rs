//! Iterative Poisson surface reconstruction: alternate a screened Poisson
//! solve with re-estimating every sample normal from the resulting mesh until
//! the largest normal changes settle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, TriangleMesh, UnitVector3, Vector3};
use crate::poisson::{reconstruct_full, Boundary, PoissonParams, ScalarGrid};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpsrConfig {
    pub depth: u32,
    pub max_iters: usize,
    /// Stop once the mean of the top 0.1% normal changes (radians) drops below this.
    pub v_threshold: f64,
    /// Nearest samples each face hands its normal to when re-estimating normals.
    pub k: usize,
    pub point_weight: f64,
    pub seed: u64,
    pub cg_tolerance: f64,
    pub cg_max_iters: usize,
    /// Dirichlet by default: with a Neumann boundary, sheets separating
    /// oppositely oriented patches can end on the domain boundary and
    /// linger for many iterations on flat-sided shapes.
    pub boundary: Boundary,
}

impl Default for IpsrConfig {
    fn default() -> Self {
        Self {
            depth: 8,
            max_iters: 30,
            v_threshold: 0.175,
            k: 10,
            point_weight: 1.0,
            seed: 0,
            cg_tolerance: 1e-6,
            cg_max_iters: 2000,
            boundary: Boundary::Dirichlet,
        }
    }
}

impl IpsrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.v_threshold > 0.0) {
            return Err(Error::OutOfRange {
                name: "v_threshold",
                value: self.v_threshold,
                expected: "> 0",
            });
        }
        if self.k < 1 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        self.poisson().validate()
    }

    pub fn poisson(&self) -> PoissonParams {
        PoissonParams {
            depth: self.depth,
            point_weight: self.point_weight,
            cg_tolerance: self.cg_tolerance,
            cg_max_iters: self.cg_max_iters,
            boundary: self.boundary,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IpsrResult {
    pub mesh: TriangleMesh,
    pub normals: Vec<UnitVector3>,
    pub iterations: usize,
    pub variation_history: Vec<f64>,
    pub converged: bool,
    /// Largest relative residual reported by any inner solve.
    pub max_relative_residual: f64,
}

impl IpsrResult {
    pub fn final_variation(&self) -> f64 {
        self.variation_history.last().copied().unwrap_or(f64::NAN)
    }
}

/// `n` directions drawn uniformly on the unit sphere.
pub fn init_normals_random(n: usize, seed: u64) -> Vec<UnitVector3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| loop {
            let v = Vector3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            if v.norm() > 1e-12 {
                break UnitVector3::new_normalize(v);
            }
        })
        .collect()
}

/// Re-estimate normals from `mesh`: every face hands its area-weighted
/// normal to the `k` samples nearest its centroid and each sample normalizes
/// what it received. Samples that receive nothing (or a cancelling sum) keep
/// their current normal, or +z when the cloud has none.
///
/// Letting faces pick samples rather than samples pick faces means every
/// face votes, so regions with flipped input normals cannot hide behind
/// faces that no sample happens to select.
pub fn update_normals_from_mesh(points: &PointCloud, mesh: &TriangleMesh, k: usize) -> Result<Vec<UnitVector3>> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let faces: Vec<usize> = mesh.nondegenerate_faces().collect();
    if faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let tree = KdTree::new(points.points());
    let nearest: Vec<Vec<usize>> = faces
        .par_iter()
        .map(|&f| tree.k_nearest(&mesh.face_centroid(f), k).iter().map(|nb| nb.index).collect())
        .collect();
    // Sequential accumulation keeps the sums independent of the thread count.
    let mut sums = vec![Vector3::zeros(); points.len()];
    for (&f, near) in faces.iter().zip(&nearest) {
        // Area-weighted unit normal = half the face cross product.
        let w = mesh.face_cross(f) * 0.5;
        for &i in near {
            sums[i] += w;
        }
    }
    let previous = points.normals();
    let fallback = UnitVector3::new_normalize(Vector3::z());
    Ok(sums
        .iter()
        .enumerate()
        .map(|(i, sum)| {
            let norm = sum.norm();
            if norm >= 1e-12 && norm.is_finite() {
                UnitVector3::new_unchecked(sum / norm)
            } else {
                previous.map_or(fallback, |ns| ns[i])
            }
        })
        .collect())
}

/// Angle in radians, accurate near 0 and pi unlike `acos` of the dot product.
pub fn angle_between(a: &UnitVector3, b: &UnitVector3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Mean angle (radians) over the `ceil(n / 1000)` largest per-sample changes.
pub fn convergence_value(old: &[UnitVector3], new: &[UnitVector3]) -> Result<f64> {
    if old.len() != new.len() {
        return Err(Error::LengthMismatch {
            expected: old.len(),
            actual: new.len(),
        });
    }
    if old.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut angles: Vec<f64> = old
        .iter()
        .zip(new)
        .map(|(a, b)| angle_between(a, b))
        .collect();
    let m = old.len().div_ceil(1000);
    let n = angles.len();
    if m < n {
        angles.select_nth_unstable_by(n - m, f64::total_cmp);
    }
    let mut top = angles[n - m..].to_vec();
    top.sort_by(f64::total_cmp);
    Ok(top.iter().sum::<f64>() / m as f64)
}

/// Run the reconstruct / re-estimate loop. Without `initial_normals` the loop
/// starts from random directions drawn with `config.seed`.
pub fn run_ipsr(
    points: &PointCloud,
    config: &IpsrConfig,
    initial_normals: Option<&[UnitVector3]>,
) -> Result<IpsrResult> {
    config.validate()?;
    if points.len() < 4 {
        return Err(Error::TooFewPoints {
            needed: 4,
            got: points.len(),
        });
    }
    let mut normals = match initial_normals {
        Some(ns) if ns.len() != points.len() => {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                actual: ns.len(),
            })
        }
        Some(ns) => ns.to_vec(),
        None => init_normals_random(points.len(), config.seed),
    };
    let params = config.poisson();
    let mut cloud = points.without_normals();
    let mut warm: Option<ScalarGrid> = None;
    let mut history = Vec::new();
    let mut max_res = 0.0f64;
    let mut mesh = TriangleMesh::default();
    for iter in 1..=config.max_iters {
        cloud.set_normals(normals.clone())?;
        let rec = reconstruct_full(&cloud, &params, warm.as_ref()).map_err(|e| match e {
            Error::SolverDiverged {
                residual,
                iterations,
                ..
            } => Error::SolverDiverged {
                residual,
                iterations,
                ipsr_iteration: Some(iter),
            },
            other => other,
        })?;
        max_res = max_res.max(rec.stats.relative_residual);
        let updated = update_normals_from_mesh(&cloud, &rec.mesh, config.k)?;
        let v = convergence_value(&normals, &updated)?;
        log::debug!("ipsr iteration {iter}: v = {v:.4}, {} faces", rec.mesh.faces.len());
        history.push(v);
        normals = updated;
        mesh = rec.mesh;
        warm = Some(rec.grid);
        if v < config.v_threshold {
            break;
        }
    }
    let iterations = history.len();
    let converged = history.last().is_some_and(|&v| v < config.v_threshold);
    Ok(IpsrResult {
        mesh,
        normals,
        iterations,
        variation_history: history,
        converged,
        max_relative_residual: max_res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_mesh_uniform, Point3};
    use crate::shapes::icosphere;
    use nalgebra::Rotation3;

    #[test]
    fn random_normals_are_unit_deterministic_and_isotropic() {
        let one = init_normals_random(1, 9);
        assert!((one[0].norm() - 1.0).abs() < 1e-9);
        let a = init_normals_random(100_000, 3);
        let b = init_normals_random(100_000, 3);
        assert_eq!(a, b);
        let mean: Vector3 = a.iter().map(|n| n.into_inner()).sum::<Vector3>() / a.len() as f64;
        assert!(mean.norm() < 0.02);
    }

    #[test]
    fn single_face_normal() {
        let mesh = TriangleMesh::new(
            vec![Point3::new(0., 0., 0.), Point3::new(1., 0., 0.), Point3::new(0., 1., 0.)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let cloud = PointCloud::new(vec![mesh.face_centroid(0)]).unwrap();
        let ns = update_normals_from_mesh(&cloud, &mesh, 1).unwrap();
        assert!((ns[0].into_inner() - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn cancelling_faces_keep_previous_normal() {
        // Two equal triangles with opposite winding at equal distance from the query.
        let mesh = TriangleMesh::new(
            vec![
                Point3::new(-1., 0., 1.),
                Point3::new(1., 0., 1.),
                Point3::new(0., 1., 1.),
                Point3::new(-1., 0., -1.),
                Point3::new(1., 0., -1.),
                Point3::new(0., 1., -1.),
            ],
            vec![[0, 1, 2], [3, 5, 4]],
        )
        .unwrap();
        let prev = UnitVector3::new_normalize(Vector3::new(0.3, 0.4, 0.5));
        let cloud = PointCloud::with_normals(vec![Point3::new(0., 1. / 3., 0.)], vec![prev]).unwrap();
        let ns = update_normals_from_mesh(&cloud, &mesh, 2).unwrap();
        assert_eq!(ns[0], prev);
    }

    #[test]
    fn unreached_sample_keeps_previous_normal() {
        let mesh = TriangleMesh::new(
            vec![Point3::new(0., 0., 0.), Point3::new(1., 0., 0.), Point3::new(0., 1., 0.)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let prev = UnitVector3::new_normalize(Vector3::new(1.0, 2.0, 3.0));
        let pts = vec![mesh.face_centroid(0), Point3::new(10., 10., 10.)];
        let cloud = PointCloud::with_normals(pts, vec![prev; 2]).unwrap();
        let ns = update_normals_from_mesh(&cloud, &mesh, 1).unwrap();
        assert!((ns[0].into_inner() - Vector3::z()).norm() < 1e-15);
        assert_eq!(ns[1], prev);
        let bare = update_normals_from_mesh(&cloud.without_normals(), &mesh, 1).unwrap();
        assert_eq!(bare[1].into_inner(), Vector3::z());
    }

    #[test]
    fn sphere_normals_from_mesh() {
        let mesh = icosphere(4, 0.5, Point3::origin());
        let cloud = sample_mesh_uniform(&mesh, 2000, 5).unwrap().without_normals();
        let ns = update_normals_from_mesh(&cloud, &mesh, 10).unwrap();
        for (p, n) in cloud.points().iter().zip(&ns) {
            let truth = p.coords.normalize();
            assert!(n.dot(&truth).clamp(-1.0, 1.0).acos() < 25f64.to_radians());
        }
        assert!(matches!(
            update_normals_from_mesh(&cloud, &TriangleMesh::default(), 10),
            Err(Error::EmptyMesh)
        ));
    }

    #[test]
    fn convergence_value_examples() {
        let base = init_normals_random(2000, 1);
        assert_eq!(convergence_value(&base, &base).unwrap(), 0.0);

        let axis = |n: &UnitVector3| {
            let other = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            nalgebra::Unit::new_normalize(n.cross(&other))
        };
        let rotate = |n: &UnitVector3, angle: f64| Rotation3::from_axis_angle(&axis(n), angle) * *n;

        let mut one = base[..1000].to_vec();
        one[17] = rotate(&one[17], 1.0);
        let v = convergence_value(&base[..1000], &one).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{v}");

        let mut two = base.clone();
        two[3] = rotate(&two[3], 0.4);
        two[1500] = rotate(&two[1500], 0.2);
        let v = convergence_value(&base, &two).unwrap();
        assert!((v - 0.3).abs() < 1e-9, "{v}");

        assert!(matches!(
            convergence_value(&base[..3], &base[..4]),
            Err(Error::LengthMismatch { expected: 3, actual: 4 })
        ));
    }

    #[test]
    fn single_iteration_run() {
        let mesh = icosphere(3, 0.4, Point3::new(0.5, 0.5, 0.5));
        let cloud = sample_mesh_uniform(&mesh, 2000, 2).unwrap().without_normals();
        let cfg = IpsrConfig {
            depth: 4,
            max_iters: 1,
            ..Default::default()
        };
        let res = run_ipsr(&cloud, &cfg, None).unwrap();
        assert_eq!(res.iterations, 1);
        assert_eq!(res.variation_history.len(), 1);
        assert_eq!(res.converged, res.variation_history[0] < cfg.v_threshold);
        assert!(res.normals.iter().all(|n| (n.norm() - 1.0).abs() < 1e-6));
    }

    #[test]
    fn too_few_points() {
        let cloud = PointCloud::new(vec![Point3::origin(); 3]).unwrap();
        assert!(matches!(
            run_ipsr(&cloud, &IpsrConfig::default(), None),
            Err(Error::TooFewPoints { .. })
        ));
    }
}
