//! Static 3-d tree over a fixed point set.
//!
//! Ties between equidistant points resolve to the lowest original index so
//! every query result is independent of how the tree happened to be split.

use crate::geometry::Point3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Inner { axis: u8, split: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    /// Points in leaf order.
    points: Vec<Point3>,
    /// Original index of each entry of `points`.
    indices: Vec<u32>,
    nodes: Vec<Node>,
}

/// A query hit: original point index and squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance_squared: f64,
}

impl Neighbor {
    fn before(&self, other: &Neighbor) -> bool {
        self.distance_squared < other.distance_squared
            || (self.distance_squared == other.distance_squared && self.index < other.index)
    }
}

impl KdTree {
    pub fn new(points: &[Point3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        if !points.is_empty() {
            build(points, &mut order, 0, &mut nodes);
        }
        let sorted = order.iter().map(|&i| points[i as usize]).collect();
        Self {
            points: sorted,
            indices: order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point to `q`, or `None` for an empty tree.
    pub fn nearest(&self, q: &Point3) -> Option<Neighbor> {
        if self.is_empty() {
            return None;
        }
        let mut best = Neighbor {
            index: usize::MAX,
            distance_squared: f64::INFINITY,
        };
        self.nearest_rec(0, q, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, node: usize, q: &Point3, best: &mut Neighbor) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start as usize..end as usize {
                    let cand = Neighbor {
                        index: self.indices[slot] as usize,
                        distance_squared: (self.points[slot] - q).norm_squared(),
                    };
                    if cand.before(best) {
                        *best = cand;
                    }
                }
            }
            Node::Inner { axis, split, left, right } => {
                let diff = q[axis as usize] - split;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near as usize, q, best);
                if diff * diff <= best.distance_squared {
                    self.nearest_rec(far as usize, q, best);
                }
            }
        }
    }

    /// The `k` nearest points sorted by (distance, index).
    pub fn k_nearest(&self, q: &Point3, k: usize) -> Vec<Neighbor> {
        let mut out = Vec::with_capacity(k + 1);
        if k > 0 && !self.is_empty() {
            self.knn_rec(0, q, k, &mut out);
        }
        out
    }

    fn knn_rec(&self, node: usize, q: &Point3, k: usize, out: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start as usize..end as usize {
                    let cand = Neighbor {
                        index: self.indices[slot] as usize,
                        distance_squared: (self.points[slot] - q).norm_squared(),
                    };
                    if out.len() == k && !cand.before(&out[k - 1]) {
                        continue;
                    }
                    let pos = out.partition_point(|n| n.before(&cand));
                    out.insert(pos, cand);
                    out.truncate(k);
                }
            }
            Node::Inner { axis, split, left, right } => {
                let diff = q[axis as usize] - split;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near as usize, q, k, out);
                if out.len() < k || diff * diff <= out[k - 1].distance_squared {
                    self.knn_rec(far as usize, q, k, out);
                }
            }
        }
    }

    /// Indices of all points with `|p - q| <= radius`, ascending.
    pub fn within_radius(&self, q: &Point3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.is_empty() {
            self.radius_rec(0, q, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, node: usize, q: &Point3, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start as usize..end as usize {
                    if (self.points[slot] - q).norm_squared() <= r2 {
                        out.push(self.indices[slot] as usize);
                    }
                }
            }
            Node::Inner { axis, split, left, right } => {
                let diff = q[axis as usize] - split;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.radius_rec(left as usize, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.radius_rec(right as usize, q, r2, out);
                }
            }
        }
    }

    /// True if some point other than `exclude` lies strictly closer than
    /// `sqrt(r2)` to `q`.
    pub fn any_closer_than(&self, q: &Point3, r2: f64, exclude: usize) -> bool {
        !self.is_empty() && self.any_rec(0, q, r2, exclude as u32)
    }

    fn any_rec(&self, node: usize, q: &Point3, r2: f64, exclude: u32) -> bool {
        match self.nodes[node] {
            Node::Leaf { start, end } => (start as usize..end as usize).any(|slot| {
                self.indices[slot] != exclude && (self.points[slot] - q).norm_squared() < r2
            }),
            Node::Inner { axis, split, left, right } => {
                let diff = q[axis as usize] - split;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.any_rec(near as usize, q, r2, exclude)
                    || (diff * diff < r2 && self.any_rec(far as usize, q, r2, exclude))
            }
        }
    }
}

fn build(points: &[Point3], order: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + order.len()) as u32,
        });
        return id;
    }
    let mut lo = points[order[0] as usize];
    let mut hi = lo;
    for &i in order.iter() {
        let p = &points[i as usize];
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let spread = hi - lo;
    let axis = spread.imax();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    let split = points[order[mid] as usize][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (l, r) = order.split_at_mut(mid);
    let left = build(points, l, offset, nodes);
    let right = build(points, r, offset + mid, nodes);
    nodes[id as usize] = Node::Inner {
        axis: axis as u8,
        split,
        left,
        right,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    fn brute_sorted(points: &[Point3], q: &Point3) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .iter()
            .enumerate()
            .map(|(index, p)| Neighbor {
                index,
                distance_squared: (p - q).norm_squared(),
            })
            .collect();
        all.sort_by(|a, b| {
            a.distance_squared
                .total_cmp(&b.distance_squared)
                .then(a.index.cmp(&b.index))
        });
        all
    }

    #[test]
    fn queries_match_brute_force() {
        let pts = random_points(2000, 1);
        let tree = KdTree::new(&pts);
        for q in random_points(200, 2) {
            let brute = brute_sorted(&pts, &q);
            assert_eq!(tree.nearest(&q).unwrap(), brute[0]);
            assert_eq!(tree.k_nearest(&q, 7), brute[..7].to_vec());
            let r = 0.08;
            let mut expect: Vec<usize> = brute
                .iter()
                .filter(|n| n.distance_squared <= r * r)
                .map(|n| n.index)
                .collect();
            expect.sort_unstable();
            assert_eq!(tree.within_radius(&q, r), expect);
            let excl = brute[0].index;
            let r2 = brute[1].distance_squared;
            assert!(!tree.any_closer_than(&q, r2, excl));
            assert!(tree.any_closer_than(&q, r2 * 1.0001 + 1e-300, excl));
        }
    }

    #[test]
    fn duplicate_points_break_ties_by_index() {
        let pts = vec![Point3::new(1., 1., 1.); 40];
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&Point3::origin()).unwrap().index, 0);
        let knn: Vec<usize> = tree.k_nearest(&Point3::origin(), 3).iter().map(|n| n.index).collect();
        assert_eq!(knn, vec![0, 1, 2]);
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(&[]);
        assert!(tree.nearest(&Point3::origin()).is_none());
        assert!(tree.k_nearest(&Point3::origin(), 3).is_empty());
    }
}
