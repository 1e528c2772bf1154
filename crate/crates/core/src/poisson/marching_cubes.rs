//! Iso-surface extraction.
//!
//! The case table is derived at start-up from the cube faces instead of being
//! hard-coded: each face contributes oriented segments between its crossed
//! edges, the segments chain into loops, and every loop is fan-triangulated.
//! Faces with four crossings separate the diagonal pair holding the face's
//! lowest cube corner, a rule both cubes sharing the face agree on.

use std::sync::LazyLock;

use crate::error::{Error, Result};
use crate::geometry::{Point3, TriangleMesh, Vector3};

use super::grid::ScalarGrid;

/// Corner pairs of the 12 cube edges: 4 along x, then y, then z.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

fn corner_offset(c: usize) -> Vector3 {
    Vector3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64)
}

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|&(p, q)| (p == a && q == b) || (p == b && q == a))
        .expect("corners share an edge")
}

/// Corners of each cube face, counter-clockwise seen from outside.
fn cube_faces() -> Vec<[usize; 4]> {
    let mut faces = Vec::with_capacity(6);
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let corner = |du: usize, dv: usize| (side << axis) | (du << u) | (dv << v);
            let mut quad = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
            let p: Vec<Vector3> = quad.iter().map(|&c| corner_offset(c)).collect();
            let normal = (p[1] - p[0]).cross(&(p[2] - p[1]));
            let outward = if side == 1 { 1.0 } else { -1.0 };
            if normal[axis] * outward < 0.0 {
                quad.reverse();
            }
            faces.push(quad);
        }
    }
    faces
}

/// Oriented segments (edge -> edge) contributed by one face.
fn face_segments(quad: &[usize; 4], inside: &[bool; 8], out: &mut Vec<(usize, usize)>) {
    let ins: [bool; 4] = std::array::from_fn(|k| inside[quad[k]]);
    // Edge k joins quad[k] and quad[k + 1].
    let edge = |k: usize| edge_between(quad[k % 4], quad[(k + 1) % 4]);
    let crossings = (0..4).filter(|&k| ins[k] != ins[(k + 1) % 4]).count();
    match crossings {
        2 => {
            let a = (0..4).find(|&k| ins[k] && !ins[(k + 3) % 4]).unwrap();
            let b = (0..4).find(|&k| ins[k] && !ins[(k + 1) % 4]).unwrap();
            out.push((edge(a + 3), edge(b)));
        }
        4 => {
            let low = (0..4).min_by_key(|&k| quad[k]).unwrap();
            let separate_inside = ins[low];
            for k in 0..4 {
                if ins[k] == separate_inside {
                    if separate_inside {
                        out.push((edge(k + 3), edge(k)));
                    } else {
                        out.push((edge(k), edge(k + 3)));
                    }
                }
            }
        }
        _ => {}
    }
}

fn triangulate_case(config: usize, faces: &[[usize; 4]], flip: bool) -> Vec<[u8; 3]> {
    let inside: [bool; 8] = std::array::from_fn(|c| config >> c & 1 == 1);
    let mut segments = Vec::new();
    for quad in faces {
        face_segments(quad, &inside, &mut segments);
    }
    let mut next = [usize::MAX; 12];
    for &(a, b) in &segments {
        debug_assert_eq!(next[a], usize::MAX);
        next[a] = b;
    }
    let mut used = [false; 12];
    let mut tris = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || used[start] {
            continue;
        }
        // Starting at the smallest unused edge makes the loop start at its minimum.
        let mut lp = vec![start];
        used[start] = true;
        let mut e = next[start];
        while e != start {
            used[e] = true;
            lp.push(e);
            e = next[e];
        }
        for i in 1..lp.len() - 1 {
            let t = [lp[0] as u8, lp[i] as u8, lp[i + 1] as u8];
            tris.push(if flip { [t[0], t[2], t[1]] } else { t });
        }
    }
    tris
}

static CASES: LazyLock<Vec<Vec<[u8; 3]>>> = LazyLock::new(|| {
    let faces = cube_faces();
    // Orientation: with only corner 0 inside the function grows away from it,
    // so the lone triangle must face (1, 1, 1).
    let probe = triangulate_case(1, &faces, false);
    let mid = |e: u8| {
        let (a, b) = EDGES[e as usize];
        (corner_offset(a) + corner_offset(b)) * 0.5
    };
    let [a, b, c] = probe[0].map(mid);
    let flip = (b - a).cross(&(c - a)).dot(&Vector3::new(1., 1., 1.)) < 0.0;
    (0..256).map(|cfg| triangulate_case(cfg, &faces, flip)).collect()
});

/// Extract the `iso` level set of `grid` as a triangle mesh whose faces are
/// wound so that normals point toward increasing values.
pub fn extract_isosurface(grid: &ScalarGrid, iso: f64) -> Result<TriangleMesh> {
    let lat = &grid.lattice;
    let n = lat.n();
    let h = lat.h();
    let origin = lat.domain.min;
    let vals = &grid.values;
    let at = |i: usize, j: usize, k: usize| vals[i + n * (j + n * k)];
    let pos = |i: usize, j: usize, k: usize| origin + Vector3::new(i as f64, j as f64, k as f64) * h;

    let mut vertices: Vec<Point3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let none = u32::MAX;

    let mut push_vertex = |vertices: &mut Vec<Point3>, pa: Point3, pb: Point3, va: f64, vb: f64| -> u32 {
        let t = (iso - va) / (vb - va);
        vertices.push(pa + (pb - pa) * t);
        (vertices.len() - 1) as u32
    };

    // Per plane: ids of x- and y-edge vertices at (i, j); per layer: z-edges.
    let plane_edges = |vertices: &mut Vec<Point3>, k: usize, xs: &mut Vec<u32>, ys: &mut Vec<u32>,
                       push: &mut dyn FnMut(&mut Vec<Point3>, Point3, Point3, f64, f64) -> u32| {
        xs.iter_mut().for_each(|v| *v = none);
        ys.iter_mut().for_each(|v| *v = none);
        for j in 0..n {
            for i in 0..n {
                let v0 = at(i, j, k);
                if i + 1 < n {
                    let v1 = at(i + 1, j, k);
                    if (v0 < iso) != (v1 < iso) {
                        xs[i + n * j] = push(vertices, pos(i, j, k), pos(i + 1, j, k), v0, v1);
                    }
                }
                if j + 1 < n {
                    let v1 = at(i, j + 1, k);
                    if (v0 < iso) != (v1 < iso) {
                        ys[i + n * j] = push(vertices, pos(i, j, k), pos(i, j + 1, k), v0, v1);
                    }
                }
            }
        }
    };

    let mut xs = [vec![none; n * n], vec![none; n * n]];
    let mut ys = [vec![none; n * n], vec![none; n * n]];
    let mut zs = vec![none; n * n];
    {
        let [x0, _] = &mut xs;
        let [y0, _] = &mut ys;
        plane_edges(&mut vertices, 0, x0, y0, &mut push_vertex);
    }
    let cases = &*CASES;
    for k in 0..n - 1 {
        let (lo, hi) = (k % 2, (k + 1) % 2);
        zs.iter_mut().for_each(|v| *v = none);
        for j in 0..n {
            for i in 0..n {
                let (v0, v1) = (at(i, j, k), at(i, j, k + 1));
                if (v0 < iso) != (v1 < iso) {
                    zs[i + n * j] = push_vertex(&mut vertices, pos(i, j, k), pos(i, j, k + 1), v0, v1);
                }
            }
        }
        {
            let (xa, xb) = xs.split_at_mut(1);
            let (ya, yb) = ys.split_at_mut(1);
            let (xh, yh) = if hi == 0 { (&mut xa[0], &mut ya[0]) } else { (&mut xb[0], &mut yb[0]) };
            plane_edges(&mut vertices, k + 1, xh, yh, &mut push_vertex);
        }
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let mut config = 0usize;
                for c in 0..8 {
                    if at(i + (c & 1), j + (c >> 1 & 1), k + (c >> 2 & 1)) < iso {
                        config |= 1 << c;
                    }
                }
                let tris = &cases[config];
                if tris.is_empty() {
                    continue;
                }
                let id = |e: u8| -> u32 {
                    let (a, _) = EDGES[e as usize];
                    let (dx, dy, dz) = (a & 1, a >> 1 & 1, a >> 2 & 1);
                    let plane = if dz == 1 { hi } else { lo };
                    match e {
                        0..=3 => xs[plane][i + n * (j + dy)],
                        4..=7 => ys[plane][i + dx + n * j],
                        _ => zs[i + dx + n * (j + dy)],
                    }
                };
                for t in tris {
                    faces.push(t.map(id));
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptySurface);
    }
    debug_assert!(faces.iter().flatten().all(|&v| v != none));
    Ok(TriangleMesh { vertices, faces })
}
