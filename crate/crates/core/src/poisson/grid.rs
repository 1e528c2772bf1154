//! Node lattices over a cubic domain and trilinear splatting.

use std::io::Write;

use byteorder::{LittleEndian, WriteBytesExt};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Point3, PointCloud, Vector3};

/// Upper bound on lattice depth; 2^10 + 1 nodes per axis.
pub const MAX_DEPTH: u32 = 10;

/// The `(2^d + 1)^3` node lattice of a cube at depth `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub domain: Aabb,
    pub depth: u32,
}

impl Lattice {
    pub fn new(domain: Aabb, depth: u32) -> Result<Self> {
        if !(1..=MAX_DEPTH).contains(&depth) {
            return Err(Error::OutOfRange {
                name: "depth",
                value: depth as f64,
                expected: "1..=10",
            });
        }
        if !(domain.max_extent() > 0.0) {
            return Err(Error::DegenerateExtent);
        }
        Ok(Self { domain, depth })
    }

    /// Cells per axis.
    pub fn cells(&self) -> usize {
        1 << self.depth
    }

    /// Nodes per axis.
    pub fn n(&self) -> usize {
        self.cells() + 1
    }

    pub fn node_count(&self) -> usize {
        self.n().pow(3)
    }

    pub fn side(&self) -> f64 {
        self.domain.max_extent()
    }

    /// Node spacing.
    pub fn h(&self) -> f64 {
        self.side() / self.cells() as f64
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.n();
        i + n * (j + n * k)
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Point3 {
        let h = self.h();
        self.domain.min + Vector3::new(i as f64 * h, j as f64 * h, k as f64 * h)
    }

    /// The 8 lattice nodes of the cell containing `p` and their trilinear
    /// weights. Corner `c` has offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
    /// Returns `None` when `p` lies outside the domain.
    pub fn cell_weights(&self, p: &Point3) -> Option<([usize; 8], [f64; 8])> {
        if !self.domain.contains(p) {
            return None;
        }
        let cells = self.cells();
        let h = self.h();
        let mut base = [0usize; 3];
        let mut t = [0f64; 3];
        for a in 0..3 {
            let u = (p[a] - self.domain.min[a]) / h;
            let c = (u.floor().max(0.0) as usize).min(cells - 1);
            base[a] = c;
            t[a] = (u - c as f64).clamp(0.0, 1.0);
        }
        let mut nodes = [0usize; 8];
        let mut weights = [0f64; 8];
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            nodes[c] = self.index(base[0] + dx, base[1] + dy, base[2] + dz);
            let wx = if dx == 1 { t[0] } else { 1.0 - t[0] };
            let wy = if dy == 1 { t[1] } else { 1.0 - t[1] };
            let wz = if dz == 1 { t[2] } else { 1.0 - t[2] };
            weights[c] = wx * wy * wz;
        }
        Some((nodes, weights))
    }
}

/// Implicit function sampled at lattice nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub lattice: Lattice,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn zeros(lattice: Lattice) -> Self {
        Self {
            values: vec![0.0; lattice.node_count()],
            lattice,
        }
    }

    /// Sample `f` at every node.
    pub fn from_fn(lattice: Lattice, f: impl Fn(&Point3) -> f64) -> Self {
        let n = lattice.n();
        let mut values = Vec::with_capacity(lattice.node_count());
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    values.push(f(&lattice.node_position(i, j, k)));
                }
            }
        }
        Self { lattice, values }
    }

    pub fn depth(&self) -> u32 {
        self.lattice.depth
    }

    /// Trilinear interpolation; `None` outside the domain.
    pub fn sample(&self, p: &Point3) -> Option<f64> {
        let (nodes, weights) = self.lattice.cell_weights(p)?;
        Some(nodes.iter().zip(&weights).map(|(&n, &w)| w * self.values[n]).sum())
    }

    pub fn negated(&self) -> ScalarGrid {
        ScalarGrid {
            lattice: self.lattice,
            values: self.values.iter().map(|v| -v).collect(),
        }
    }

    /// Raw little-endian dump: depth (u32), domain min/max (6 x f64), then
    /// the node values as f32 in x-fastest order.
    pub fn write_raw<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_u32::<LittleEndian>(self.lattice.depth)?;
        for p in [self.lattice.domain.min, self.lattice.domain.max] {
            for a in 0..3 {
                w.write_f64::<LittleEndian>(p[a])?;
            }
        }
        for &v in &self.values {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        Ok(())
    }
}

/// Splatted normal field at lattice nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    pub lattice: Lattice,
    pub values: Vec<Vector3>,
}

/// Distribute each sample normal to the 8 nodes of its cell with trilinear
/// weights, then divide the field by the sample count.
pub fn splat_vector_field(cloud: &PointCloud, domain: &Aabb, depth: u32) -> Result<VectorGrid> {
    let normals = cloud.require_normals()?;
    let lattice = Lattice::new(*domain, depth)?;
    let mut values = vec![Vector3::zeros(); lattice.node_count()];
    let inv_n = 1.0 / cloud.len() as f64;
    for (i, (p, n)) in cloud.points().iter().zip(normals).enumerate() {
        let (nodes, weights) = lattice.cell_weights(p).ok_or(Error::PointOutsideDomain(i))?;
        for (&node, &w) in nodes.iter().zip(&weights) {
            values[node] += n.into_inner() * (w * inv_n);
        }
    }
    Ok(VectorGrid { lattice, values })
}
