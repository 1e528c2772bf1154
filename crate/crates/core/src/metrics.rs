//! Distance and normal metrics between point sets.
//!
//! Nearest neighbours come from a kd-tree; per-point distances are summed in
//! index order so results match a plain double loop exactly.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{sample_mesh_uniform, PointCloud, TriangleMesh};
use crate::spatial::KdTree;

/// Default F-score distance threshold.
pub const DEFAULT_TAU: f64 = 5e-3;
/// Default sample count when a mesh stands in for a point set.
pub const DEFAULT_MESH_SAMPLES: usize = 100_000;
/// Seeds used to sample predicted and ground-truth meshes.
pub const PRED_SAMPLE_SEED: u64 = 0x5eed_0001;
pub const GT_SAMPLE_SEED: u64 = 0x5eed_0002;

fn check_nonempty(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Distance from each point of `from` to its nearest point in `to`.
pub fn nearest_distances(from: &PointCloud, to: &PointCloud) -> Vec<f64> {
    let tree = KdTree::new(to.points());
    nearest_with_tree(from, &tree)
}

fn nearest_with_tree(from: &PointCloud, tree: &KdTree) -> Vec<f64> {
    from.points()
        .par_iter()
        .map(|p| tree.nearest(p).expect("target is nonempty").distance_squared.sqrt())
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn root_mean_square(values: &[f64]) -> f64 {
    (values.iter().map(|d| d * d).sum::<f64>() / values.len() as f64).sqrt()
}

/// Root mean square distance from `p` to its nearest points in `gt_dense`.
pub fn rmsd(p: &PointCloud, gt_dense: &PointCloud) -> Result<f64> {
    check_nonempty(p, gt_dense)?;
    Ok(root_mean_square(&nearest_distances(p, gt_dense)))
}

/// Mean absolute distance from `p` to its nearest points in `gt_dense`.
pub fn mads(p: &PointCloud, gt_dense: &PointCloud) -> Result<f64> {
    check_nonempty(p, gt_dense)?;
    Ok(mean(&nearest_distances(p, gt_dense)))
}

/// Symmetric sum of mean nearest distances.
pub fn chamfer_l1(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(mean(&nearest_distances(a, b)) + mean(&nearest_distances(b, a)))
}

/// Mean `|n_gt . n_pred|` over ground-truth samples matched to their nearest prediction.
pub fn normal_consistency(pred: &PointCloud, gt: &PointCloud) -> Result<f64> {
    check_nonempty(pred, gt)?;
    let pn = pred.require_normals()?;
    let gn = gt.require_normals()?;
    let tree = KdTree::new(pred.points());
    let dots: Vec<f64> = gt
        .points()
        .par_iter()
        .zip(gn.par_iter())
        .map(|(p, n)| {
            let j = tree.nearest(p).expect("nonempty").index;
            n.dot(&pn[j]).abs().min(1.0)
        })
        .collect();
    Ok(mean(&dots))
}

/// Harmonic mean of precision (fraction of `pred` within `tau` of `gt`) and
/// recall (fraction of `gt` within `tau` of `pred`).
pub fn f_score(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<f64> {
    check_nonempty(pred, gt)?;
    if !(tau > 0.0) {
        return Err(Error::OutOfRange {
            name: "tau",
            value: tau,
            expected: "> 0",
        });
    }
    let frac = |d: Vec<f64>| d.iter().filter(|&&x| x <= tau).count() as f64 / d.len() as f64;
    let precision = frac(nearest_distances(pred, gt));
    let recall = frac(nearest_distances(gt, pred));
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rmsd: f64,
    pub mads: f64,
    pub chamfer_l1: f64,
    /// Absent when either side lacks normals.
    pub normal_consistency: Option<f64>,
    pub f_score: f64,
    pub n_pred: usize,
    pub n_gt: usize,
    pub tau: f64,
}

pub const EVAL_CSV_HEADER: &str = "rmsd,mads,chamfer_l1,nc,f_score,n_pred,n_gt,tau";

impl MetricReport {
    pub fn csv_row(&self) -> String {
        let nc = self.normal_consistency.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.rmsd, self.mads, self.chamfer_l1, nc, self.f_score, self.n_pred, self.n_gt, self.tau
        )
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{EVAL_CSV_HEADER}")?;
        writeln!(w, "{}", self.csv_row())
    }
}

/// All metrics of `pred` against `gt`.
pub fn evaluate_points(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<MetricReport> {
    check_nonempty(pred, gt)?;
    if !(tau > 0.0) {
        return Err(Error::OutOfRange {
            name: "tau",
            value: tau,
            expected: "> 0",
        });
    }
    let gt_tree = KdTree::new(gt.points());
    let pred_tree = KdTree::new(pred.points());
    let forward = nearest_with_tree(pred, &gt_tree);
    let backward = nearest_with_tree(gt, &pred_tree);
    let within = |d: &[f64]| d.iter().filter(|&&x| x <= tau).count() as f64 / d.len() as f64;
    let (precision, recall) = (within(&forward), within(&backward));
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let nc = if pred.has_normals() && gt.has_normals() {
        Some(normal_consistency(pred, gt)?)
    } else {
        None
    };
    Ok(MetricReport {
        rmsd: root_mean_square(&forward),
        mads: mean(&forward),
        chamfer_l1: mean(&forward) + mean(&backward),
        normal_consistency: nc,
        f_score: f,
        n_pred: pred.len(),
        n_gt: gt.len(),
        tau,
    })
}

/// Either a point set or a mesh to be sampled.
#[derive(Debug, Clone)]
pub enum Shape {
    Points(PointCloud),
    Mesh(TriangleMesh),
}

impl Shape {
    pub fn to_samples(&self, samples: usize, seed: u64) -> Result<PointCloud> {
        match self {
            Shape::Points(c) => Ok(c.clone()),
            Shape::Mesh(m) => sample_mesh_uniform(m, samples, seed),
        }
    }
}

/// Evaluate shapes, sampling meshes with `samples` points each.
pub fn evaluate(pred: &Shape, gt: &Shape, samples: usize, tau: f64) -> Result<MetricReport> {
    let p = pred.to_samples(samples, PRED_SAMPLE_SEED)?;
    let g = gt.to_samples(samples, GT_SAMPLE_SEED)?;
    evaluate_points(&p, &g, tau)
}
