//! Blend points toward their closest surface points and carry face normals.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{LambdaField, LAMBDA_FLOOR};
use crate::geometry::{Point3, PointCloud, TriangleMesh};
use crate::spatial::MeshIndex;

#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub points: PointCloud,
    /// `|p' - p|` per point.
    pub displacements: Vec<f64>,
    /// Closest surface point per input point.
    pub feet: Vec<Point3>,
}

impl ProjectionResult {
    pub fn mean_displacement(&self) -> f64 {
        self.displacements.iter().sum::<f64>() / self.displacements.len() as f64
    }
}

/// `p' = (1 - lambda) p + lambda q` with `q` the closest point on `mesh`;
/// the output normal is the geometric normal of the face holding `q`.
pub fn lambda_project(cloud: &PointCloud, mesh: &TriangleMesh, lambdas: &LambdaField) -> Result<ProjectionResult> {
    if lambdas.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            expected: cloud.len(),
            actual: lambdas.len(),
        });
    }
    let index = MeshIndex::new(mesh)?;
    project_with_index(cloud, &index, lambdas)
}

pub fn project_with_index(cloud: &PointCloud, index: &MeshIndex, lambdas: &LambdaField) -> Result<ProjectionResult> {
    if lambdas.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            expected: cloud.len(),
            actual: lambdas.len(),
        });
    }
    let hits: Vec<_> = cloud.points().par_iter().map(|p| index.closest_point(p)).collect();
    let mut points = Vec::with_capacity(cloud.len());
    let mut normals = Vec::with_capacity(cloud.len());
    let mut displacements = Vec::with_capacity(cloud.len());
    let mut feet = Vec::with_capacity(cloud.len());
    for ((p, hit), &lambda) in cloud.points().iter().zip(&hits).zip(&lambdas.lambdas) {
        let moved = if lambda == 1.0 { hit.point } else { p + (hit.point - p) * lambda };
        points.push(moved);
        normals.push(hit.normal);
        displacements.push((moved - p).norm());
        feet.push(hit.point);
    }
    Ok(ProjectionResult {
        points: PointCloud::with_normals(points, normals)?,
        displacements,
        feet,
    })
}

/// `n` copies of `value`, which must lie in (0.1, 1].
pub fn uniform_lambda(n: usize, value: f64) -> Result<LambdaField> {
    if !(value > LAMBDA_FLOOR && value <= 1.0) {
        return Err(Error::OutOfRange {
            name: "lambda",
            value,
            expected: "(0.1, 1.0]",
        });
    }
    Ok(LambdaField { lambdas: vec![value; n] })
}
