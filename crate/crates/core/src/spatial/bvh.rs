//! Bounding volume hierarchy over mesh triangles for closest-point queries.

use crate::error::{Error, Result};
use crate::geometry::{closest_point_on_triangle, Aabb, Point3, TriangleMesh, UnitVector3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Triangle {
    a: Point3,
    b: Point3,
    c: Point3,
    normal: UnitVector3,
    face: u32,
}

#[derive(Debug, Clone)]
struct BvhNode {
    bounds: Aabb,
    /// Leaf: `count > 0`, triangles `first..first + count`.
    /// Inner: `count == 0`, children `first` and `first + 1`.
    first: u32,
    count: u32,
}

/// Result of a closest-point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub point: Point3,
    pub face: usize,
    pub normal: UnitVector3,
    pub distance: f64,
}

/// Immutable closest-point index over the non-degenerate faces of a mesh.
#[derive(Debug, Clone)]
pub struct MeshIndex {
    triangles: Vec<Triangle>,
    nodes: Vec<BvhNode>,
}

/// Build a [`MeshIndex`]; zero-area faces are skipped.
pub fn build_mesh_index(mesh: &TriangleMesh) -> Result<MeshIndex> {
    MeshIndex::new(mesh)
}

impl MeshIndex {
    pub fn new(mesh: &TriangleMesh) -> Result<Self> {
        let mut triangles: Vec<Triangle> = mesh
            .nondegenerate_faces()
            .filter_map(|f| {
                let [a, b, c] = mesh.triangle(f);
                mesh.face_normal(f).map(|normal| Triangle {
                    a,
                    b,
                    c,
                    normal,
                    face: f as u32,
                })
            })
            .collect();
        if triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let mut nodes = Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 2);
        nodes.push(BvhNode {
            bounds: tri_bounds(&triangles[0]),
            first: 0,
            count: 0,
        });
        let n = triangles.len();
        subdivide(&mut triangles, &mut nodes, 0, 0, n);
        Ok(Self { triangles, nodes })
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Closest surface point to `p`; ties resolve to the lowest face index.
    pub fn closest_point(&self, p: &Point3) -> ClosestPoint {
        let mut best_d2 = f64::INFINITY;
        let mut best: Option<(Point3, usize)> = None;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            if node.bounds.distance_squared(p) > best_d2 {
                continue;
            }
            if node.count > 0 {
                let start = node.first as usize;
                for (slot, tri) in self.triangles[start..start + node.count as usize]
                    .iter()
                    .enumerate()
                {
                    let q = closest_point_on_triangle(p, &tri.a, &tri.b, &tri.c);
                    let d2 = (q - p).norm_squared();
                    let better = match best {
                        None => true,
                        Some((_, bslot)) => {
                            d2 < best_d2
                                || (d2 == best_d2 && tri.face < self.triangles[bslot].face)
                        }
                    };
                    if better {
                        best_d2 = d2;
                        best = Some((q, start + slot));
                    }
                }
            } else {
                let l = node.first;
                let r = node.first + 1;
                let dl = self.nodes[l as usize].bounds.distance_squared(p);
                let dr = self.nodes[r as usize].bounds.distance_squared(p);
                // Push the farther child first so the nearer one is visited first.
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        let (point, slot) = best.expect("index holds at least one triangle");
        let tri = &self.triangles[slot];
        ClosestPoint {
            point,
            face: tri.face as usize,
            normal: tri.normal,
            distance: best_d2.sqrt(),
        }
    }
}

/// Convenience wrapper mirroring [`MeshIndex::closest_point`].
pub fn closest_point_on_mesh(index: &MeshIndex, p: &Point3) -> ClosestPoint {
    index.closest_point(p)
}

fn tri_bounds(t: &Triangle) -> Aabb {
    Aabb::new(t.a.inf(&t.b).inf(&t.c), t.a.sup(&t.b).sup(&t.c))
}

fn centroid(t: &Triangle, axis: usize) -> f64 {
    (t.a[axis] + t.b[axis] + t.c[axis]) / 3.0
}

fn subdivide(tris: &mut [Triangle], nodes: &mut Vec<BvhNode>, id: usize, start: usize, end: usize) {
    let mut bounds = tri_bounds(&tris[start]);
    let mut cmin = [f64::INFINITY; 3];
    let mut cmax = [f64::NEG_INFINITY; 3];
    for t in &tris[start..end] {
        bounds = bounds.union(&tri_bounds(t));
        for a in 0..3 {
            let c = centroid(t, a);
            cmin[a] = cmin[a].min(c);
            cmax[a] = cmax[a].max(c);
        }
    }
    nodes[id].bounds = bounds;
    let count = end - start;
    if count <= LEAF_SIZE {
        nodes[id].first = start as u32;
        nodes[id].count = count as u32;
        return;
    }
    let axis = (0..3)
        .max_by(|&a, &b| (cmax[a] - cmin[a]).total_cmp(&(cmax[b] - cmin[b])))
        .unwrap();
    let mid = count / 2;
    tris[start..end].select_nth_unstable_by(mid, |x, y| {
        centroid(x, axis)
            .total_cmp(&centroid(y, axis))
            .then(x.face.cmp(&y.face))
    });
    let left = nodes.len();
    let placeholder = BvhNode {
        bounds,
        first: 0,
        count: 0,
    };
    nodes.push(placeholder.clone());
    nodes.push(placeholder);
    nodes[id].first = left as u32;
    nodes[id].count = 0;
    subdivide(tris, nodes, left, start, start + mid);
    subdivide(tris, nodes, left + 1, start + mid, end);
}
