//! Screened Poisson surface reconstruction on a dense node lattice.
//!
//! Implicit functions produced here grow along the sample normals, so they
//! are negative inside a consistently outward-oriented surface. Extracted
//! meshes are wound so face normals point toward increasing values, which
//! keeps them outward and consistent with the input normals.

mod grid;
mod marching_cubes;
mod solver;

pub use grid::{splat_vector_field, Lattice, ScalarGrid, VectorGrid, MAX_DEPTH};
pub use marching_cubes::extract_isosurface;
pub use solver::{Boundary, SolveStats};

use crate::error::{Error, Result};
use crate::geometry::{bounding_cube, PointCloud, TriangleMesh};

/// Fraction of the bounding box added on each side of the reconstruction cube.
pub const DOMAIN_PADDING: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonParams {
    pub depth: u32,
    /// Screening weight; 0 disables the data term.
    pub point_weight: f64,
    pub cg_tolerance: f64,
    pub cg_max_iters: usize,
    pub boundary: Boundary,
}

impl PoissonParams {
    pub fn new(depth: u32, point_weight: f64) -> Self {
        Self {
            depth,
            point_weight,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_DEPTH).contains(&self.depth) {
            return Err(Error::OutOfRange {
                name: "depth",
                value: self.depth as f64,
                expected: "1..=10",
            });
        }
        if !(self.point_weight >= 0.0) || !self.point_weight.is_finite() {
            return Err(Error::OutOfRange {
                name: "point_weight",
                value: self.point_weight,
                expected: ">= 0",
            });
        }
        if !(self.cg_tolerance > 0.0) {
            return Err(Error::OutOfRange {
                name: "cg_tolerance",
                value: self.cg_tolerance,
                expected: "> 0",
            });
        }
        Ok(())
    }
}

impl Default for PoissonParams {
    fn default() -> Self {
        Self {
            depth: 8,
            point_weight: 1.0,
            cg_tolerance: 1e-6,
            cg_max_iters: 2000,
            boundary: Boundary::Neumann,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub grid: ScalarGrid,
    pub stats: SolveStats,
}

/// Minimize the screened Poisson energy for `field`, anchoring the function
/// to zero at `samples` with weight `params.point_weight`.
pub fn solve_screened_poisson(
    field: &VectorGrid,
    samples: &PointCloud,
    params: &PoissonParams,
) -> Result<PoissonSolution> {
    solve_screened_poisson_from(field, samples, params, None)
}

/// As [`solve_screened_poisson`], warm-started from `initial` when its lattice
/// matches.
pub fn solve_screened_poisson_from(
    field: &VectorGrid,
    samples: &PointCloud,
    params: &PoissonParams,
    initial: Option<&ScalarGrid>,
) -> Result<PoissonSolution> {
    params.validate()?;
    if field.lattice.depth != params.depth {
        return Err(Error::InvalidParameter(format!(
            "field depth {} does not match requested depth {}",
            field.lattice.depth, params.depth
        )));
    }
    let (grid, stats) = solver::solve(
        field,
        samples,
        params.point_weight,
        params.cg_tolerance,
        params.cg_max_iters,
        params.boundary,
        initial,
    )?;
    Ok(PoissonSolution { grid, stats })
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub mesh: TriangleMesh,
    pub grid: ScalarGrid,
    pub iso: f64,
    pub stats: SolveStats,
}

/// Oriented points to a watertight-where-possible mesh at `params.depth`.
pub fn reconstruct(cloud: &PointCloud, params: &PoissonParams) -> Result<TriangleMesh> {
    reconstruct_full(cloud, params, None).map(|r| r.mesh)
}

/// Full reconstruction output; `warm` seeds the solver.
pub fn reconstruct_full(
    cloud: &PointCloud,
    params: &PoissonParams,
    warm: Option<&ScalarGrid>,
) -> Result<Reconstruction> {
    params.validate()?;
    cloud.require_normals()?;
    if cloud.len() < 4 {
        return Err(Error::TooFewPoints {
            needed: 4,
            got: cloud.len(),
        });
    }
    let domain = bounding_cube(cloud, DOMAIN_PADDING)?;
    let field = splat_vector_field(cloud, &domain, params.depth)?;
    let PoissonSolution { grid, stats } = solve_screened_poisson_from(&field, cloud, params, warm)?;
    let iso = cloud
        .points()
        .iter()
        .map(|p| grid.sample(p).expect("samples lie inside the domain"))
        .sum::<f64>()
        / cloud.len() as f64;
    let mesh = extract_isosurface(&grid, iso)?;
    log::debug!(
        "poisson depth {}: {} cg iterations, residual {:.2e}, {} faces",
        params.depth,
        stats.iterations,
        stats.relative_residual,
        mesh.faces.len()
    );
    Ok(Reconstruction {
        mesh,
        grid,
        iso,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_mesh_uniform, Aabb, Point3, UnitVector3, Vector3};
    use crate::shapes::icosphere;

    fn sphere_samples(n: usize, seed: u64) -> PointCloud {
        let mesh = icosphere(5, 0.4, Point3::new(0.5, 0.5, 0.5));
        let cloud = sample_mesh_uniform(&mesh, n, seed).unwrap();
        // Project onto the exact sphere with radial normals.
        let c = Point3::new(0.5, 0.5, 0.5);
        let pts: Vec<Point3> = cloud.points().iter().map(|p| c + (p - c).normalize() * 0.4).collect();
        let ns = pts.iter().map(|p| UnitVector3::new_normalize(p - c)).collect();
        PointCloud::with_normals(pts, ns).unwrap()
    }

    #[test]
    fn zero_field_gives_zero_function() {
        let samples = sphere_samples(500, 1);
        let lat = Lattice::new(Aabb::new(Point3::origin(), Point3::new(1., 1., 1.)), 4).unwrap();
        let field = VectorGrid {
            lattice: lat,
            values: vec![Vector3::zeros(); lat.node_count()],
        };
        let sol = solve_screened_poisson(&field, &samples, &PoissonParams::new(4, 1.0)).unwrap();
        assert!(sol.grid.values.iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn solve_is_linear_and_meets_residual() {
        let samples = sphere_samples(5000, 2);
        let domain = bounding_cube(&samples, DOMAIN_PADDING).unwrap();
        let params = PoissonParams::new(6, 1.0);
        let field = splat_vector_field(&samples, &domain, 6).unwrap();
        let a = solve_screened_poisson(&field, &samples, &params).unwrap();
        assert!(a.stats.relative_residual <= 1e-6);
        let neg = VectorGrid {
            lattice: field.lattice,
            values: field.values.iter().map(|v| -v).collect(),
        };
        let b = solve_screened_poisson(&neg, &samples, &params).unwrap();
        let scale = a.grid.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.grid.values.iter().zip(&b.grid.values) {
            assert!((x + y).abs() <= 2.0 * params.cg_tolerance * scale.max(1.0));
        }
        // Function grows along the normals: inside negative relative to the surface.
        let iso_center = a.grid.sample(&Point3::new(0.5, 0.5, 0.5)).unwrap();
        let iso_surface = a.grid.sample(&Point3::new(0.9, 0.5, 0.5)).unwrap();
        assert!(iso_center < iso_surface);
    }

    #[test]
    fn warm_start_converges_immediately() {
        let samples = sphere_samples(3000, 3);
        let domain = bounding_cube(&samples, DOMAIN_PADDING).unwrap();
        let params = PoissonParams::new(5, 1.0);
        let field = splat_vector_field(&samples, &domain, 5).unwrap();
        let a = solve_screened_poisson(&field, &samples, &params).unwrap();
        let b = solve_screened_poisson_from(&field, &samples, &params, Some(&a.grid)).unwrap();
        assert!(b.stats.iterations <= 1);
    }

    #[test]
    fn sphere_reconstruction_is_accurate_and_outward() {
        let samples = sphere_samples(20_000, 4);
        let rec = reconstruct_full(&samples, &PoissonParams::new(6, 1.0), None).unwrap();
        let h = rec.grid.lattice.h();
        let c = Point3::new(0.5, 0.5, 0.5);
        let mesh = &rec.mesh;
        assert!(mesh.is_closed_edge_manifold());
        let euler = mesh.vertices.len() as i64 - (mesh.faces.len() as i64 * 3 / 2) + mesh.faces.len() as i64;
        assert_eq!(euler, 2);
        let mean_err: f64 = mesh.vertices.iter().map(|v| ((v - c).norm() - 0.4).abs()).sum::<f64>()
            / mesh.vertices.len() as f64;
        assert!(mean_err < 2.0 * h, "mean error {mean_err}, h {h}");
        let outward = (0..mesh.faces.len())
            .filter_map(|f| mesh.face_normal(f).map(|n| n.dot(&(mesh.face_centroid(f) - c)) > 0.0))
            .all(|b| b);
        assert!(outward);

        let (pts, ns) = samples.clone().into_parts();
        let flipped = PointCloud::with_normals(pts, ns.unwrap().into_iter().map(|n| -n).collect()).unwrap();
        let rev = reconstruct(&flipped, &PoissonParams::new(6, 1.0)).unwrap();
        assert_eq!(rev.faces.len(), mesh.faces.len());
        let inward = (0..rev.faces.len())
            .filter_map(|f| rev.face_normal(f).map(|n| n.dot(&(rev.face_centroid(f) - c)) < 0.0))
            .all(|b| b);
        assert!(inward);
        let mean_rev: f64 = rev.vertices.iter().map(|v| ((v - c).norm() - 0.4).abs()).sum::<f64>()
            / rev.vertices.len() as f64;
        assert!((mean_rev - mean_err).abs() < 1e-6);
    }

    #[test]
    fn too_few_points_rejected() {
        let pts = vec![Point3::new(0., 0., 0.), Point3::new(1., 0., 0.), Point3::new(0., 1., 0.)];
        let ns = vec![UnitVector3::new_normalize(Vector3::z()); 3];
        let cloud = PointCloud::with_normals(pts, ns).unwrap();
        assert!(matches!(
            reconstruct(&cloud, &PoissonParams::new(4, 1.0)),
            Err(Error::TooFewPoints { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn params_validation() {
        assert!(PoissonParams::new(0, 1.0).validate().is_err());
        assert!(PoissonParams::new(11, 1.0).validate().is_err());
        assert!(PoissonParams::new(6, -1.0).validate().is_err());
        assert!(PoissonParams::new(6, 0.0).validate().is_ok());
    }
}
