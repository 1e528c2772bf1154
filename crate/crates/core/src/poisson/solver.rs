//! Screened Poisson solve on the node lattice.
//!
//! The discrete energy sums, over every lattice edge `e = (a, a + axis)`,
//! `h * (chi_b - chi_a - g_e)^2` where `g_e = h * V_e` is the splatted normal
//! density integrated along the edge, plus `(alpha / N) * sum_i chi(p_i)^2`.
//! After dividing by `h` the normal equations read `(L + s M) chi = rhs` with
//! `L` the graph Laplacian, `M` the trilinear sample stamp and
//! `s = alpha / (N h)`. With a Neumann boundary `L` has no edges leaving the
//! lattice; a Dirichlet boundary adds edges to a ghost layer held at zero one
//! cell outside, so every node has degree 6. The system is solved with conjugate
//! gradients preconditioned by a geometric multigrid V-cycle.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

use super::grid::{Lattice, ScalarGrid, VectorGrid};

const CHUNK: usize = 1 << 14;
const SMOOTHING_STEPS: usize = 2;
const COARSE_SWEEPS: usize = 40;
/// Depth of the coarsest multigrid level.
const COARSEST_DEPTH: u32 = 2;

/// Boundary condition on the lattice faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Zero normal derivative.
    #[default]
    Neumann,
    /// Zero value on a ghost layer one cell outside the lattice.
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// `|b - A x| / |b|` of the returned solution (0 for a zero right-hand side).
    pub relative_residual: f64,
}

/// Trilinear sample stamps of the screening term.
struct Screening {
    scale: f64,
    /// Per sample: local slot of each corner in `touched`.
    local: Vec<[u32; 8]>,
    weights: Vec<[f64; 8]>,
    /// Distinct lattice nodes touched by any sample, ascending.
    touched: Vec<u32>,
}

impl Screening {
    fn new(lattice: &Lattice, samples: &PointCloud, point_weight: f64) -> Result<Self> {
        let n_samples = samples.len();
        let mut stamps = Vec::with_capacity(n_samples);
        for (i, p) in samples.points().iter().enumerate() {
            let stamp = lattice.cell_weights(p).ok_or(Error::PointOutsideDomain(i))?;
            stamps.push(stamp);
        }
        let mut touched: Vec<u32> = stamps
            .iter()
            .flat_map(|(nodes, _)| nodes.iter().map(|&n| n as u32))
            .collect();
        touched.sort_unstable();
        touched.dedup();
        let local = stamps
            .iter()
            .map(|(nodes, _)| {
                let mut l = [0u32; 8];
                for c in 0..8 {
                    l[c] = touched.binary_search(&(nodes[c] as u32)).unwrap() as u32;
                }
                l
            })
            .collect();
        let weights = stamps.iter().map(|(_, w)| *w).collect();
        Ok(Self {
            scale: point_weight / (n_samples as f64 * lattice.h()),
            local,
            weights,
            touched,
        })
    }

    fn is_active(&self) -> bool {
        self.scale > 0.0
    }

    /// Scaled diagonal of `M`, accumulated into a dense lattice vector.
    fn add_diagonal(&self, mass: &mut [f64]) {
        for (l, w) in self.local.iter().zip(&self.weights) {
            for c in 0..8 {
                mass[self.touched[l[c] as usize] as usize] += self.scale * w[c] * w[c];
            }
        }
    }

    /// Scaled row sums of `M`.
    fn add_lumped(&self, mass: &mut [f64]) {
        for (l, w) in self.local.iter().zip(&self.weights) {
            for c in 0..8 {
                mass[self.touched[l[c] as usize] as usize] += self.scale * w[c];
            }
        }
    }

    /// `s * M_offdiag * x` on the touched nodes.
    fn offdiag_product(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.touched.len(), 0.0);
        for (l, w) in self.local.iter().zip(&self.weights) {
            let vals: [f64; 8] = std::array::from_fn(|c| x[self.touched[l[c] as usize] as usize]);
            let interp: f64 = (0..8).map(|c| w[c] * vals[c]).sum();
            for c in 0..8 {
                out[l[c] as usize] += self.scale * w[c] * (interp - w[c] * vals[c]);
            }
        }
    }
}

/// One multigrid level: operator `scale * L + diag(mass)`.
struct Level {
    n: usize,
    scale: f64,
    dirichlet: bool,
    mass: Vec<f64>,
    b: Vec<f64>,
    x: Vec<f64>,
    tmp: Vec<f64>,
}

impl Level {
    fn new(n: usize, scale: f64, dirichlet: bool, mass: Vec<f64>) -> Self {
        let len = n * n * n;
        Self {
            n,
            scale,
            dirichlet,
            mass,
            b: vec![0.0; len],
            x: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }
}

pub(crate) struct PoissonSystem {
    levels: Vec<Level>,
    screening: Screening,
    scratch: Vec<f64>,
}

impl PoissonSystem {
    fn new(lattice: &Lattice, samples: &PointCloud, point_weight: f64, boundary: Boundary) -> Result<Self> {
        let dirichlet = boundary == Boundary::Dirichlet;
        let screening = Screening::new(lattice, samples, point_weight)?;
        let n = lattice.n();
        let mut fine_mass = vec![0.0; n * n * n];
        screening.add_diagonal(&mut fine_mass);
        let mut lumped = vec![0.0; n * n * n];
        screening.add_lumped(&mut lumped);

        let mut levels = vec![Level {
            n,
            scale: 1.0,
            dirichlet,
            mass: fine_mass,
            b: Vec::new(),
            x: Vec::new(),
            tmp: vec![0.0; n * n * n],
        }];
        let mut depth = lattice.depth;
        let mut scale = 1.0;
        let mut nf = n;
        while depth > COARSEST_DEPTH.min(lattice.depth) {
            depth -= 1;
            scale *= 2.0;
            let nc = (1 << depth) + 1;
            let mut coarse_lumped = vec![0.0; nc * nc * nc];
            restrict(&lumped, nf, &mut coarse_lumped, nc);
            levels.push(Level::new(nc, scale, dirichlet, coarse_lumped.clone()));
            lumped = coarse_lumped;
            nf = nc;
        }
        Ok(Self {
            levels,
            screening,
            scratch: Vec::new(),
        })
    }

    fn len(&self) -> usize {
        self.levels[0].n.pow(3)
    }

    /// `y = A x`.
    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        let lvl = &self.levels[0];
        apply_level(x, y, lvl);
        if self.screening.is_active() {
            self.screening.offdiag_product(x, &mut self.scratch);
            for (slot, &node) in self.screening.touched.iter().enumerate() {
                y[node as usize] += self.scratch[slot];
            }
        }
    }

    /// `z = B r` for the symmetric V-cycle preconditioner `B`.
    fn precondition(&mut self, r: &[f64], z: &mut [f64]) {
        let screening = if self.screening.is_active() {
            Some(&self.screening)
        } else {
            None
        };
        vcycle(&mut self.levels, screening, &mut self.scratch, r, z);
    }
}

fn gs_half_sweep_fine(
    lvl: &Level,
    screening: Option<&Screening>,
    scratch: &mut Vec<f64>,
    b: &[f64],
    x: &mut [f64],
    color: usize,
) {
    // Jacobi-within-colour on the screening coupling: use x before the sweep.
    if let Some(s) = screening {
        s.offdiag_product(x, scratch);
    }
    gs_half_sweep(x, b, lvl, color);
    if let Some(s) = screening {
        let n = lvl.n;
        for (slot, &node) in s.touched.iter().enumerate() {
            let node = node as usize;
            let (i, j, k) = (node % n, (node / n) % n, node / (n * n));
            if (i + j + k) % 2 == color {
                let d = lvl.scale * degree(i, j, k, n, lvl.dirichlet) + lvl.mass[node];
                x[node] -= scratch[slot] / d;
            }
        }
    }
}

fn vcycle(
    levels: &mut [Level],
    screening: Option<&Screening>,
    scratch: &mut Vec<f64>,
    b: &[f64],
    x: &mut [f64],
) {
    x.iter_mut().for_each(|v| *v = 0.0);
    let (head, rest) = levels.split_at_mut(1);
    let lvl = &mut head[0];
    if rest.is_empty() {
        for _ in 0..COARSE_SWEEPS {
            gs_half_sweep_fine(lvl, screening, scratch, b, x, 0);
            gs_half_sweep_fine(lvl, screening, scratch, b, x, 1);
        }
        for _ in 0..COARSE_SWEEPS {
            gs_half_sweep_fine(lvl, screening, scratch, b, x, 1);
            gs_half_sweep_fine(lvl, screening, scratch, b, x, 0);
        }
        return;
    }
    for _ in 0..SMOOTHING_STEPS {
        gs_half_sweep_fine(lvl, screening, scratch, b, x, 0);
        gs_half_sweep_fine(lvl, screening, scratch, b, x, 1);
    }
    let mut r = std::mem::take(&mut lvl.tmp);
    apply_level(x, &mut r, lvl);
    if let Some(s) = screening {
        s.offdiag_product(x, scratch);
        for (slot, &node) in s.touched.iter().enumerate() {
            r[node as usize] += scratch[slot];
        }
    }
    r.par_iter_mut().zip(b.par_iter()).for_each(|(ri, bi)| *ri = bi - *ri);

    let coarse = &mut rest[0];
    let mut cb = std::mem::take(&mut coarse.b);
    let mut cx = std::mem::take(&mut coarse.x);
    restrict(&r, lvl.n, &mut cb, coarse.n);
    lvl.tmp = r;
    vcycle(rest, None, scratch, &cb, &mut cx);
    prolong_add(&cx, rest[0].n, x, lvl.n);
    rest[0].b = cb;
    rest[0].x = cx;

    for _ in 0..SMOOTHING_STEPS {
        gs_half_sweep_fine(lvl, screening, scratch, b, x, 1);
        gs_half_sweep_fine(lvl, screening, scratch, b, x, 0);
    }
}

fn degree(i: usize, j: usize, k: usize, n: usize, dirichlet: bool) -> f64 {
    if dirichlet {
        return 6.0;
    }
    let m = n - 1;
    ((i > 0) as u32 + (i < m) as u32 + (j > 0) as u32 + (j < m) as u32 + (k > 0) as u32 + (k < m) as u32)
        as f64
}

/// `y = scale * L x + mass .* x`, parallel over z-slabs.
fn apply_level(x: &[f64], y: &mut [f64], lvl: &Level) {
    let (n, scale, mass, dirichlet) = (lvl.n, lvl.scale, &lvl.mass, lvl.dirichlet);
    let plane = n * n;
    y.par_chunks_mut(plane).enumerate().for_each(|(k, slab)| {
        for j in 0..n {
            let base = (k * n + j) * n;
            let out = &mut slab[j * n..(j + 1) * n];
            let row = &x[base..base + n];
            let mut ext = 0.0;
            out.iter_mut().for_each(|v| *v = 0.0);
            let mut sub = |nb: &[f64]| {
                for (o, v) in out.iter_mut().zip(nb) {
                    *o -= v;
                }
            };
            if j > 0 {
                sub(&x[base - n..base]);
                ext += 1.0;
            }
            if j + 1 < n {
                sub(&x[base + n..base + 2 * n]);
                ext += 1.0;
            }
            if k > 0 {
                sub(&x[base - plane..base - plane + n]);
                ext += 1.0;
            }
            if k + 1 < n {
                sub(&x[base + plane..base + plane + n]);
                ext += 1.0;
            }
            out[0] += (ext + 1.0) * row[0] - row[1];
            for i in 1..n - 1 {
                out[i] += (ext + 2.0) * row[i] - row[i - 1] - row[i + 1];
            }
            out[n - 1] += (ext + 1.0) * row[n - 1] - row[n - 2];
            if dirichlet {
                // Edges to the zero ghost layer.
                out.iter_mut().zip(row).for_each(|(o, r)| *o += (4.0 - ext) * r);
                out[0] += row[0];
                out[n - 1] += row[n - 1];
            }
            let m = &mass[base..base + n];
            for i in 0..n {
                out[i] = scale * out[i] + m[i] * row[i];
            }
        }
    });
}

/// Gauss-Seidel update of all nodes with `(i + j + k) % 2 == color`.
fn gs_half_sweep(x: &mut [f64], b: &[f64], lvl: &Level, color: usize) {
    let (n, scale, mass, dirichlet) = (lvl.n, lvl.scale, &lvl.mass[..], lvl.dirichlet);
    let plane = n * n;
    let len = x.len();
    assert!(b.len() == len && mass.len() == len && len == n * plane);
    let update = |x: &mut [f64], i: usize, j: usize, k: usize| {
        let node = (k * n + j) * n + i;
        let mut nb = 0.0;
        let mut deg = 0.0;
        for (ok, off) in [
            (i > 0, node.wrapping_sub(1)),
            (i + 1 < n, node + 1),
            (j > 0, node.wrapping_sub(n)),
            (j + 1 < n, node + n),
            (k > 0, node.wrapping_sub(plane)),
            (k + 1 < n, node + plane),
        ] {
            if ok {
                nb += x[off];
                deg += 1.0;
            }
        }
        if dirichlet {
            deg = 6.0;
        }
        let diag = scale * deg + mass[node];
        if diag > 0.0 {
            let ax = scale * (deg * x[node] - nb) + mass[node] * x[node];
            x[node] += (b[node] - ax) / diag;
        }
    };
    let six = 6.0 * scale;
    for k in 0..n {
        for j in 0..n {
            let start = (color + j + k) % 2;
            if j == 0 || k == 0 || j + 1 == n || k + 1 == n || n < 3 {
                for i in (start..n).step_by(2) {
                    update(x, i, j, k);
                }
                continue;
            }
            let base = (k * n + j) * n;
            if start == 0 {
                update(x, 0, j, k);
            }
            let first = if start == 0 { 2 } else { 1 };
            let mut i = first;
            while i + 1 < n {
                let node = base + i;
                // SAFETY: 0 < i < n - 1 and 0 < j, k < n - 1, so all six
                // neighbours lie inside the n^3 lattice checked above.
                unsafe {
                    let nb = x.get_unchecked(node - 1)
                        + x.get_unchecked(node + 1)
                        + x.get_unchecked(node - n)
                        + x.get_unchecked(node + n)
                        + x.get_unchecked(node - plane)
                        + x.get_unchecked(node + plane);
                    let m = *mass.get_unchecked(node);
                    let xi = *x.get_unchecked(node);
                    let diag = six + m;
                    let ax = six * xi - scale * nb + m * xi;
                    *x.get_unchecked_mut(node) = xi + (b.get_unchecked(node) - ax) / diag;
                }
                i += 2;
            }
            if i == n - 1 {
                update(x, i, j, k);
            }
        }
    }
}

/// Transpose of trilinear prolongation: fine (`nf` per axis) to coarse.
fn restrict(fine: &[f64], nf: usize, coarse: &mut [f64], nc: usize) {
    debug_assert_eq!(nf, 2 * nc - 1);
    let fplane = nf * nf;
    coarse.par_chunks_mut(nc * nc).enumerate().for_each(|(kc, slab)| {
        let mut comb = vec![0.0; nf];
        for jc in 0..nc {
            comb.iter_mut().for_each(|v| *v = 0.0);
            for dk in -1i64..=1 {
                let kf = 2 * kc as i64 + dk;
                if kf < 0 || kf >= nf as i64 {
                    continue;
                }
                let wk = if dk == 0 { 1.0 } else { 0.5 };
                for dj in -1i64..=1 {
                    let jf = 2 * jc as i64 + dj;
                    if jf < 0 || jf >= nf as i64 {
                        continue;
                    }
                    let w = wk * if dj == 0 { 1.0 } else { 0.5 };
                    let base = kf as usize * fplane + jf as usize * nf;
                    for (c, v) in comb.iter_mut().zip(&fine[base..base + nf]) {
                        *c += w * v;
                    }
                }
            }
            let out = &mut slab[jc * nc..(jc + 1) * nc];
            for (ic, o) in out.iter_mut().enumerate() {
                let f = 2 * ic;
                let mut v = comb[f];
                if f > 0 {
                    v += 0.5 * comb[f - 1];
                }
                if f + 1 < nf {
                    v += 0.5 * comb[f + 1];
                }
                *o = v;
            }
        }
    });
}

/// Add the trilinear interpolation of `coarse` to `fine`.
fn prolong_add(coarse: &[f64], nc: usize, fine: &mut [f64], nf: usize) {
    debug_assert_eq!(nf, 2 * nc - 1);
    let cplane = nc * nc;
    let taps = |f: usize| -> [(usize, f64); 2] {
        if f % 2 == 0 {
            [(f / 2, 1.0), (f / 2, 0.0)]
        } else {
            [((f - 1) / 2, 0.5), ((f + 1) / 2, 0.5)]
        }
    };
    fine.par_chunks_mut(nf * nf).enumerate().for_each(|(kf, slab)| {
        let mut line = vec![0.0; nc];
        for jf in 0..nf {
            line.iter_mut().for_each(|v| *v = 0.0);
            for (kc, wk) in taps(kf) {
                if wk == 0.0 {
                    continue;
                }
                for (jc, wj) in taps(jf) {
                    if wj == 0.0 {
                        continue;
                    }
                    let base = kc * cplane + jc * nc;
                    let w = wk * wj;
                    for (l, v) in line.iter_mut().zip(&coarse[base..base + nc]) {
                        *l += w * v;
                    }
                }
            }
            let out = &mut slab[jf * nf..(jf + 1) * nf];
            for ic in 0..nc {
                out[2 * ic] += line[ic];
                if ic + 1 < nc {
                    out[2 * ic + 1] += 0.5 * (line[ic] + line[ic + 1]);
                }
            }
        }
    });
}

/// Deterministic parallel dot product (fixed chunking, sequential combine).
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partials: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partials.iter().sum()
}

/// Divergence right-hand side: for each edge `a -> a + axis`,
/// `g = (V_a + V_b)[axis] / (2 h^2)` is subtracted at `a` and added at `b`.
fn divergence(field: &VectorGrid) -> Vec<f64> {
    let lat = &field.lattice;
    let n = lat.n();
    let h = lat.h();
    let coef = 1.0 / (2.0 * h * h);
    let plane = n * n;
    let v = &field.values;
    let mut rhs = vec![0.0; n * n * n];
    rhs.par_chunks_mut(plane).enumerate().for_each(|(k, slab)| {
        for j in 0..n {
            for i in 0..n {
                let a = i + n * (j + n * k);
                let mut acc = 0.0;
                // Edges leaving `a` in +x, +y, +z.
                if i + 1 < n {
                    acc -= (v[a].x + v[a + 1].x) * coef;
                }
                if j + 1 < n {
                    acc -= (v[a].y + v[a + n].y) * coef;
                }
                if k + 1 < n {
                    acc -= (v[a].z + v[a + plane].z) * coef;
                }
                // Edges arriving at `a`.
                if i > 0 {
                    acc += (v[a].x + v[a - 1].x) * coef;
                }
                if j > 0 {
                    acc += (v[a].y + v[a - n].y) * coef;
                }
                if k > 0 {
                    acc += (v[a].z + v[a - plane].z) * coef;
                }
                slab[j * n + i] = acc;
            }
        }
    });
    rhs
}

/// Solve the screened Poisson system for `field` with screening at `samples`.
///
/// `initial` (same lattice) warm-starts the iteration.
pub(crate) fn solve(
    field: &VectorGrid,
    samples: &PointCloud,
    point_weight: f64,
    tolerance: f64,
    max_iters: usize,
    boundary: Boundary,
    initial: Option<&ScalarGrid>,
) -> Result<(ScalarGrid, SolveStats)> {
    let lattice = field.lattice;
    let b = divergence(field);
    let mut system = PoissonSystem::new(&lattice, samples, point_weight, boundary)?;
    let len = system.len();

    let b_norm = dot(&b, &b).sqrt();
    if b_norm == 0.0 {
        return Ok((
            ScalarGrid::zeros(lattice),
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }

    let mut x = match initial {
        Some(g) if g.lattice == lattice => g.values.clone(),
        _ => vec![0.0; len],
    };
    let mut r = vec![0.0; len];
    let mut z = vec![0.0; len];
    let mut p = vec![0.0; len];
    let mut q = vec![0.0; len];

    let mut iterations = 0;
    let mut rel;
    // Outer loop restarts from the true residual if the recurrence drifted.
    loop {
        system.apply(&x, &mut r);
        r.par_iter_mut().zip(b.par_iter()).for_each(|(ri, bi)| *ri = bi - *ri);
        rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= tolerance || iterations >= max_iters {
            break;
        }
        system.precondition(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < max_iters {
            system.apply(&p, &mut q);
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                break;
            }
            let alpha = rz / pq;
            x.par_iter_mut().zip(p.par_iter()).for_each(|(xi, pi)| *xi += alpha * pi);
            r.par_iter_mut().zip(q.par_iter()).for_each(|(ri, qi)| *ri -= alpha * qi);
            iterations += 1;
            let rr = dot(&r, &r).sqrt() / b_norm;
            log::trace!("cg iteration {iterations}: relative residual {rr:.3e}");
            if rr <= tolerance {
                break;
            }
            system.precondition(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.par_iter_mut().zip(z.par_iter()).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        }
        if !(rz > 0.0) {
            // Preconditioned residual vanished without meeting the tolerance.
            system.apply(&x, &mut r);
            r.par_iter_mut().zip(b.par_iter()).for_each(|(ri, bi)| *ri = bi - *ri);
            rel = dot(&r, &r).sqrt() / b_norm;
            break;
        }
    }
    if !(rel <= tolerance) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverDiverged {
            residual: rel,
            iterations,
            ipsr_iteration: None,
        });
    }
    Ok((
        ScalarGrid { lattice, values: x },
        SolveStats {
            iterations,
            relative_residual: rel,
        },
    ))
}
