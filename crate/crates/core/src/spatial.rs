//! Exact k-nearest-neighbour search over 3D points.
//!
//! An implicit, balanced kd-tree: points are permuted so that the median of
//! every range `[lo, hi)` sits at `(lo + hi) / 2`, with the split axis stored
//! alongside. Queries are exact and ties are broken by original index, so
//! results never depend on build or query order.

use crate::geometry::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    ids: Vec<u32>,
    axes: Vec<u8>,
}

/// A neighbour: squared distance and index into the build slice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub dist2: f64,
    pub index: usize,
}

impl Neighbor {
    fn before(&self, other: &Neighbor) -> bool {
        self.dist2 < other.dist2 || (self.dist2 == other.dist2 && self.index < other.index)
    }
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut items: Vec<(Vec3, u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (*p, i as u32))
            .collect();
        let mut axes = vec![0u8; items.len()];
        build_range(&mut items, &mut axes);
        let (points, ids) = items.into_iter().unzip();
        Self { points, ids, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn nearest(&self, query: &Vec3) -> Option<Neighbor> {
        let mut out = Vec::with_capacity(1);
        self.knn(query, 1, f64::INFINITY, &mut out);
        out.first().copied()
    }

    /// The `k` nearest points with squared distance `<= max_dist2`, sorted by
    /// distance then index. `out` is cleared first.
    pub fn knn(&self, query: &Vec3, k: usize, max_dist2: f64, out: &mut Vec<Neighbor>) {
        out.clear();
        if k == 0 || self.points.is_empty() {
            return;
        }
        self.search(query, k, max_dist2, 0, self.points.len(), out);
    }

    fn search(
        &self,
        q: &Vec3,
        k: usize,
        max_dist2: f64,
        lo: usize,
        hi: usize,
        out: &mut Vec<Neighbor>,
    ) {
        if hi - lo <= LEAF_SIZE {
            for i in lo..hi {
                self.offer(q, i, k, max_dist2, out);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - self.points[mid][axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, k, max_dist2, near.0, near.1, out);
        self.offer(q, mid, k, max_dist2, out);
        let bound = if out.len() == k {
            out[k - 1].dist2
        } else {
            max_dist2
        };
        if diff * diff <= bound {
            self.search(q, k, max_dist2, far.0, far.1, out);
        }
    }

    #[inline]
    fn offer(&self, q: &Vec3, slot: usize, k: usize, max_dist2: f64, out: &mut Vec<Neighbor>) {
        let dist2 = (self.points[slot] - q).norm_squared();
        if dist2 > max_dist2 {
            return;
        }
        let cand = Neighbor {
            dist2,
            index: self.ids[slot] as usize,
        };
        if out.len() == k && !cand.before(&out[k - 1]) {
            return;
        }
        let pos = out.partition_point(|n| n.before(&cand));
        if out.len() == k {
            out.pop();
        }
        out.insert(pos, cand);
    }
}

fn build_range(items: &mut [(Vec3, u32)], axes: &mut [u8]) {
    let n = items.len();
    if n <= LEAF_SIZE {
        return;
    }
    let (mut min, mut max) = (items[0].0, items[0].0);
    for (p, _) in items.iter() {
        min = min.inf(p);
        max = max.sup(p);
    }
    let extent = max - min;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let mid = n / 2;
    items.select_nth_unstable_by(mid, |a, b| {
        a.0[axis]
            .partial_cmp(&b.0[axis])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    axes[mid] = axis as u8;
    let (left, rest) = items.split_at_mut(mid);
    let (left_axes, rest_axes) = axes.split_at_mut(mid);
    build_range(left, left_axes);
    build_range(&mut rest[1..], &mut rest_axes[1..]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(points: &[Vec3], q: &Vec3, k: usize, max_dist2: f64) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .iter()
            .enumerate()
            .map(|(index, p)| Neighbor { dist2: (p - q).norm_squared(), index })
            .filter(|n| n.dist2 <= max_dist2)
            .collect();
        all.sort_by(|a, b| a.dist2.partial_cmp(&b.dist2).unwrap().then(a.index.cmp(&b.index)));
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let points: Vec<Vec3> = (0..2000)
            .map(|_| Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)))
            .collect();
        let tree = KdTree::build(&points);
        let mut out = Vec::new();
        for _ in 0..200 {
            let q = Vec3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-2.0..2.0));
            for (k, r2) in [(1, f64::INFINITY), (20, f64::INFINITY), (20, 0.25)] {
                tree.knn(&q, k, r2, &mut out);
                assert_eq!(out, brute_knn(&points, &q, k, r2));
            }
        }
    }

    #[test]
    fn duplicate_points_break_ties_by_index() {
        let points = vec![Vec3::new(1.0, 0.0, 0.0); 30];
        let tree = KdTree::build(&points);
        let mut out = Vec::new();
        tree.knn(&Vec3::zeros(), 5, f64::INFINITY, &mut out);
        let idx: Vec<usize> = out.iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::build(&[]);
        assert!(tree.nearest(&Vec3::zeros()).is_none());
    }
}
