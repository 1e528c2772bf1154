//! Geometric value types shared by every stage of the pipeline.
//!
//! Positions are stored as `f64` internally. Normals are unit vectors and
//! meshes are indexed triangle lists with counterclockwise winding.

use nalgebra::Unit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;
pub type UnitVector3 = Unit<Vector3>;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y && min.z <= max.z);
        Self { min, max }
    }

    /// Tight box around a non-empty set of points.
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = *iter.next()?;
        let (min, max) = iter.fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        });
        Some(Self { min, max })
    }

    pub fn extent(&self) -> Vector3 {
        self.max - self.min
    }

    pub fn max_extent(&self) -> f64 {
        self.extent().max()
    }

    pub fn center(&self) -> Point3 {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Squared distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: &Point3) -> f64 {
        let mut d2 = 0.0;
        for a in 0..3 {
            let v = p[a];
            if v < self.min[a] {
                d2 += (self.min[a] - v).powi(2);
            } else if v > self.max[a] {
                d2 += (v - self.max[a]).powi(2);
            }
        }
        d2
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn translated(&self, t: &Vector3) -> Aabb {
        Aabb {
            min: self.min + t,
            max: self.max + t,
        }
    }
}

/// An ordered set of samples with optional per-sample unit normals.
///
/// Index order is stable across every operation that moves points, so point
/// `i` of one outer iteration is point `i` of the next.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    normals: Option<Vec<UnitVector3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            points,
            normals: None,
        })
    }

    pub fn with_normals(points: Vec<Point3>, normals: Vec<UnitVector3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if normals.len() != points.len() {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                actual: normals.len(),
            });
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[UnitVector3]> {
        self.normals.as_deref()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    /// Normals, or [`Error::MissingNormals`].
    pub fn require_normals(&self) -> Result<&[UnitVector3]> {
        self.normals().ok_or(Error::MissingNormals)
    }

    /// Same positions, replaced normals.
    pub fn set_normals(&mut self, normals: Vec<UnitVector3>) -> Result<()> {
        if normals.len() != self.points.len() {
            return Err(Error::LengthMismatch {
                expected: self.points.len(),
                actual: normals.len(),
            });
        }
        self.normals = Some(normals);
        Ok(())
    }

    pub fn without_normals(&self) -> PointCloud {
        PointCloud {
            points: self.points.clone(),
            normals: None,
        }
    }

    pub fn into_parts(self) -> (Vec<Point3>, Option<Vec<UnitVector3>>) {
        (self.points, self.normals)
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.points).expect("point cloud is never empty")
    }
}

/// Indexed triangle surface. Face normals follow counterclockwise winding.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    /// Validates face indices and rejects faces that repeat a vertex.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= n) {
                return Err(Error::InvalidParameter(format!(
                    "face {fi} references a vertex outside 0..{n}"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidParameter(format!(
                    "face {fi} repeats a vertex index"
                )));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn triangle(&self, face: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Cross product of the two leading edges; its norm is twice the area.
    pub fn face_cross(&self, face: usize) -> Vector3 {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    pub fn face_normal(&self, face: usize) -> Option<UnitVector3> {
        Unit::try_new(self.face_cross(face), 0.0)
    }

    pub fn face_centroid(&self, face: usize) -> Point3 {
        let [a, b, c] = self.triangle(face);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Faces whose area is strictly positive.
    pub fn nondegenerate_faces(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.faces.len()).filter(move |&f| self.face_cross(f).norm_squared() > 0.0)
    }

    pub fn translated(&self, t: &Vector3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| v + t).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Counts of edges bordered by exactly one face and by more than two.
    pub fn edge_manifold_defects(&self) -> (usize, usize) {
        use std::collections::HashMap;
        let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let boundary = counts.values().filter(|&&c| c == 1).count();
        let nonmanifold = counts.values().filter(|&&c| c > 2).count();
        (boundary, nonmanifold)
    }

    /// True when every edge borders exactly two faces.
    pub fn is_closed_edge_manifold(&self) -> bool {
        !self.faces.is_empty() && self.edge_manifold_defects() == (0, 0)
    }
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Point3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Rescales the cloud so that its largest bounding-box side is exactly 1.
///
/// Returns the normalized cloud together with `(scale, offset)`, where
/// `normalized = (p - offset) * scale` and `offset` is the original box min.
pub fn normalize_to_unit(cloud: &PointCloud) -> Result<(PointCloud, f64, Point3)> {
    let bounds = cloud.bounds();
    let extent = bounds.max_extent();
    if !(extent > 0.0) {
        return Err(Error::DegenerateExtent);
    }
    let scale = 1.0 / extent;
    let offset = bounds.min;
    let points = cloud
        .points()
        .iter()
        .map(|p| Point3::from((p - offset) * scale))
        .collect();
    let normalized = PointCloud {
        points,
        normals: cloud.normals.clone(),
    };
    Ok((normalized, scale, offset))
}

/// Undo [`normalize_to_unit`].
pub fn denormalize(cloud: &PointCloud, scale: f64, offset: &Point3) -> PointCloud {
    PointCloud {
        points: cloud
            .points()
            .iter()
            .map(|p| offset + p.coords / scale)
            .collect(),
        normals: cloud.normals.clone(),
    }
}

/// Cube centred on the cloud's bounding box with side `(1 + pad) * max_extent`.
pub fn bounding_cube(cloud: &PointCloud, pad_fraction: f64) -> Result<Aabb> {
    bounding_cube_of(&cloud.bounds(), pad_fraction)
}

pub fn bounding_cube_of(bounds: &Aabb, pad_fraction: f64) -> Result<Aabb> {
    if !(pad_fraction >= 0.0) {
        return Err(Error::OutOfRange {
            name: "pad_fraction",
            value: pad_fraction,
            expected: ">= 0",
        });
    }
    let extent = bounds.max_extent();
    if !(extent > 0.0) {
        return Err(Error::DegenerateExtent);
    }
    let half = 0.5 * (1.0 + pad_fraction) * extent;
    let c = bounds.center();
    let h = Vector3::repeat(half);
    let mut cube = Aabb::new(c - h, c + h);
    // Rounding in `c ± half` may clip an extreme point by an ulp.
    cube.min = cube.min.inf(&bounds.min);
    cube.max = cube.max.sup(&bounds.max);
    Ok(cube)
}

/// Area-proportional uniform sampling; every sample carries its face normal.
pub fn sample_mesh_uniform(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    sample_mesh_uniform_with_faces(mesh, n, seed).map(|(cloud, _)| cloud)
}

/// Like [`sample_mesh_uniform`], also returning the source face of each sample.
pub fn sample_mesh_uniform_with_faces(
    mesh: &TriangleMesh,
    n: usize,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be >= 1".into()));
    }
    let mut faces = Vec::new();
    let mut cumulative = Vec::new();
    let mut total = 0.0;
    for f in mesh.nondegenerate_faces() {
        total += mesh.face_area(f);
        faces.push(f);
        cumulative.push(total);
    }
    if faces.is_empty() || !(total > 0.0) {
        return Err(Error::EmptyMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut source = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random::<f64>() * total;
        let slot = cumulative.partition_point(|&c| c <= u).min(faces.len() - 1);
        let f = faces[slot];
        let [a, b, c] = mesh.triangle(f);
        let s = rng.random::<f64>().sqrt();
        let t = rng.random::<f64>();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - t), s * t);
        points.push(Point3::from(a.coords * wa + b.coords * wb + c.coords * wc));
        normals.push(mesh.face_normal(f).expect("non-degenerate face"));
        source.push(f);
    }
    Ok((PointCloud::with_normals(points, normals)?, source))
}
