//! Voronoi covariance sharpness and the per-point projection coefficient.

use std::io::Write;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, Vector3};
use crate::spatial::KdTree;

/// Floor of every projection coefficient; never attained.
pub const LAMBDA_FLOOR: f64 = 0.1;
/// Smallest admissible percentile threshold, used for all-flat inputs.
pub const MIN_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VcmParams {
    /// Offset radius R of the Voronoi cell truncation.
    pub offset_radius: f64,
    /// Convolution radius r.
    pub convolution_radius: f64,
    pub integration_samples: usize,
    pub seed: u64,
}

impl VcmParams {
    /// Defaults scaled to the cloud: R = r = 5% of the bounding diagonal.
    pub fn for_cloud(cloud: &PointCloud) -> Self {
        let d = cloud.bounds().diagonal();
        Self {
            offset_radius: 0.05 * d,
            convolution_radius: 0.05 * d,
            integration_samples: 500,
            seed: 0,
        }
    }
}

/// Monte Carlo estimate of each point's convolved Voronoi covariance.
pub fn compute_vcm(points: &PointCloud, params: &VcmParams) -> Result<Vec<Matrix3<f64>>> {
    if points.len() < 4 {
        return Err(Error::TooFewPoints {
            needed: 4,
            got: points.len(),
        });
    }
    let big_r = params.offset_radius;
    if !(big_r > 0.0) || !big_r.is_finite() {
        return Err(Error::OutOfRange {
            name: "offset_radius",
            value: big_r,
            expected: "> 0",
        });
    }
    if !(params.convolution_radius >= 0.0) {
        return Err(Error::OutOfRange {
            name: "convolution_radius",
            value: params.convolution_radius,
            expected: ">= 0",
        });
    }
    if params.integration_samples == 0 {
        return Err(Error::InvalidParameter("integration_samples must be positive".into()));
    }
    let pts = points.points();
    let tree = KdTree::new(pts);
    let cell_volume = 4.0 / 3.0 * std::f64::consts::PI * big_r.powi(3) / params.integration_samples as f64;
    let raw: Vec<Matrix3<f64>> = pts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(i as u64);
            let mut cov = Matrix3::zeros();
            for _ in 0..params.integration_samples {
                let o = sample_ball(&mut rng, big_r);
                let x = p + o;
                if !tree.any_closer_than(&x, o.norm_squared(), i) {
                    cov += o * o.transpose();
                }
            }
            cov * cell_volume
        })
        .collect();
    if params.convolution_radius == 0.0 {
        return Ok(raw);
    }
    Ok(pts
        .par_iter()
        .map(|p| {
            tree.within_radius(p, params.convolution_radius)
                .iter()
                .fold(Matrix3::zeros(), |acc, &j| acc + raw[j])
        })
        .collect())
}

fn sample_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vector3 {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

/// Middle eigenvalue over the trace; 0 for a vanishing trace.
pub fn sharpness_ratio(cov: &Matrix3<f64>) -> Result<f64> {
    let scale = cov.abs().max().max(f64::MIN_POSITIVE);
    if (cov - cov.transpose()).abs().max() > 1e-9 * scale {
        return Err(Error::NotSymmetric);
    }
    let trace = cov.trace();
    if trace < 1e-18 {
        return Ok(0.0);
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(*cov).eigenvalues.iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = ev.iter().sum();
    if total < 1e-18 {
        return Ok(0.0);
    }
    Ok((ev[1] / total).clamp(0.0, 0.5))
}

/// Threshold `c` at the given percentile of the ratios and `sigma = c / 2`.
pub fn select_threshold_percentile(ratios: &[f64], percentile: f64) -> Result<(f64, f64)> {
    if ratios.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(Error::OutOfRange {
            name: "percentile",
            value: percentile,
            expected: "(0, 1)",
        });
    }
    // The epsilon keeps exact products such as 0.9 * 10 from rounding down.
    let idx = ((percentile * (ratios.len() - 1) as f64 + 1e-9).floor() as usize).min(ratios.len() - 1);
    let mut buf = ratios.to_vec();
    let (_, &mut c, _) = buf.select_nth_unstable_by(idx, f64::total_cmp);
    let c = c.max(MIN_THRESHOLD);
    Ok((c, c / 2.0))
}

/// `0.1 + 0.9 exp(-(max(r - c, 0) / sigma)^2)`, kept strictly above 0.1.
pub fn lambda_coefficient(r: f64, c: f64, sigma: f64) -> f64 {
    let excess = (r - c).max(0.0);
    let g = excess * excess / (sigma * sigma);
    (LAMBDA_FLOOR + (1.0 - LAMBDA_FLOOR) * (-g).exp()).max(LAMBDA_FLOOR.next_up())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessField {
    pub ratios: Vec<f64>,
    pub c: f64,
    pub sigma: f64,
}

impl SharpnessField {
    pub fn lambdas(&self) -> LambdaField {
        LambdaField {
            lambdas: self.ratios.iter().map(|&r| lambda_coefficient(r, self.c, self.sigma)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaField {
    pub lambdas: Vec<f64>,
}

impl LambdaField {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// How the threshold and width of the coefficient law are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Percentile(f64),
    Fixed { c: f64, sigma: f64 },
}

/// Per-point sharpness ratios with the threshold resolved.
pub fn sharpness_field(points: &PointCloud, params: &VcmParams, threshold: Threshold) -> Result<SharpnessField> {
    let covs = compute_vcm(points, params)?;
    let ratios = covs.iter().map(sharpness_ratio).collect::<Result<Vec<f64>>>()?;
    let (c, sigma) = match threshold {
        Threshold::Percentile(p) => select_threshold_percentile(&ratios, p)?,
        Threshold::Fixed { c, sigma } => {
            if !(sigma > 0.0) {
                return Err(Error::OutOfRange {
                    name: "sigma",
                    value: sigma,
                    expected: "> 0",
                });
            }
            (c.max(MIN_THRESHOLD), sigma)
        }
    };
    Ok(SharpnessField { ratios, c, sigma })
}

/// CSV with columns `index,x,y,z,ratio,lambda`.
pub fn write_sharpness_csv<W: Write>(w: &mut W, points: &[Point3], field: &SharpnessField) -> std::io::Result<()> {
    writeln!(w, "index,x,y,z,ratio,lambda")?;
    let lambdas = field.lambdas();
    for (i, (p, (r, l))) in points.iter().zip(field.ratios.iter().zip(&lambdas.lambdas)).enumerate() {
        writeln!(w, "{i},{},{},{},{r},{l}", p.x, p.y, p.z)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn grid_plane(n: usize, spacing: f64) -> PointCloud {
        let mut pts = Vec::new();
        for j in 0..n {
            for i in 0..n {
                pts.push(Point3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
            }
        }
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn flat_grid_covariance_points_along_normal() {
        let cloud = grid_plane(50, 0.02);
        let params = VcmParams {
            offset_radius: 0.06,
            convolution_radius: 0.05,
            integration_samples: 300,
            seed: 3,
        };
        let covs = compute_vcm(&cloud, &params).unwrap();
        for j in 10..40 {
            for i in 10..40 {
                let eig = SymmetricEigen::new(covs[j * 50 + i]);
                let top = eig.eigenvalues.imax();
                let axis = eig.eigenvectors.column(top);
                assert!(axis[2].abs() > 10f64.to_radians().cos());
            }
        }
        for c in &covs {
            assert!((c - c.transpose()).abs().max() < 1e-15);
            assert!(SymmetricEigen::new(*c).eigenvalues.min() >= -1e-12);
        }
    }

    #[test]
    fn nearby_planes_truncate_capture_regions() {
        let mut pts = grid_plane(20, 0.02).points().to_vec();
        let upper: Vec<Point3> = pts.iter().map(|p| p + Vector3::new(0.0, 0.0, 0.04)).collect();
        pts.extend(upper);
        let cloud = PointCloud::new(pts).unwrap();
        let params = VcmParams {
            offset_radius: 0.05,
            convolution_radius: 0.0,
            integration_samples: 400,
            seed: 1,
        };
        let full_ball = 4.0 / 3.0 * std::f64::consts::PI * 0.05f64.powi(3);
        // Isolated site for comparison: trace equals the full-ball second moment.
        let covs = compute_vcm(&cloud, &params).unwrap();
        let full_second_moment = full_ball * 0.05 * 0.05 * 3.0 / 5.0;
        for c in &covs {
            assert!(c.trace() < full_second_moment);
        }
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(sharpness_ratio(&Matrix3::from_diagonal(&Vector3::new(1., 0., 0.))).unwrap(), 0.0);
        assert!((sharpness_ratio(&Matrix3::from_diagonal(&Vector3::new(1., 1., 0.))).unwrap() - 0.5).abs() < 1e-15);
        assert!((sharpness_ratio(&Matrix3::from_diagonal(&Vector3::new(3., 1., 1.))).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(sharpness_ratio(&Matrix3::zeros()).unwrap(), 0.0);
        let mut asym = Matrix3::identity();
        asym[(0, 1)] = 0.5;
        assert!(matches!(sharpness_ratio(&asym), Err(Error::NotSymmetric)));
    }

    #[test]
    fn ratio_rotation_invariant() {
        let c = Matrix3::from_diagonal(&Vector3::new(3.0, 1.5, 0.2));
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let rc = r.matrix() * c * r.matrix().transpose();
        let rc = (rc + rc.transpose()) * 0.5;
        assert!((sharpness_ratio(&c).unwrap() - sharpness_ratio(&rc).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn percentile_examples() {
        let ratios: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(select_threshold_percentile(&ratios, 0.9).unwrap(), (0.9, 0.45));
        assert_eq!(select_threshold_percentile(&[0.3; 7], 0.9).unwrap(), (0.3, 0.15));
        assert_eq!(select_threshold_percentile(&[0.0; 7], 0.9).unwrap().0, MIN_THRESHOLD);
        assert!(matches!(select_threshold_percentile(&[], 0.9), Err(Error::EmptyInput)));
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_coefficient(0.05, 0.11, 0.05), 1.0);
        let e1 = 0.1 + 0.9 / std::f64::consts::E;
        assert!((lambda_coefficient(0.3, 0.2, 0.1) - e1).abs() < 1e-12);
        assert!((lambda_coefficient(0.4, 0.2, 0.1) - (0.1 + 0.9 * (-4f64).exp())).abs() < 1e-12);
        assert!(lambda_coefficient(1e6, 0.0, 1e-3) > LAMBDA_FLOOR);
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let field = SharpnessField {
            ratios: vec![0.0, 0.4],
            c: 0.1,
            sigma: 0.05,
        };
        let mut out = Vec::new();
        write_sharpness_csv(&mut out, &[Point3::origin(), Point3::new(1., 2., 3.)], &field).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,x,y,z,ratio,lambda");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,0,0,0,0,1"));
    }
}
