//! Exact k-nearest-neighbor search under squared Euclidean distance.

use crate::data::Dataset;
use crate::{exec, Error, Result};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Insertion index of the point in the index.
    pub index: usize,
    pub dist2: f64,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Immutable kd-tree over a point set. Queries are exact; ties in distance
/// go to the lower insertion index.
#[derive(Debug, Clone)]
pub struct NnIndex {
    dim: usize,
    points: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl NnIndex {
    /// Build from row-major `points` of dimension `dim`.
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || !points.len().is_multiple_of(dim) {
            return Err(Error::config("point buffer does not match the dimension"));
        }
        if points.is_empty() {
            return Err(Error::data("cannot build a nearest-neighbor index over no points"));
        }
        let n = points.len() / dim;
        let mut index = Self {
            dim,
            points,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        index.build(0, n);
        Ok(index)
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        Self::new(ds.dim(), ds.coords().to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let (dim, pts) = (self.dim, &self.points);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a * dim + axis].total_cmp(&pts[b * dim + axis])
        });
        let value = pts[self.order[mid] * dim + axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for axis in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.points[i * self.dim + axis];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best.1 {
                best = (axis, hi - lo);
            }
        }
        best.0
    }

    /// The `k` nearest points to `q`, ascending by `(dist2, index)`.
    pub fn knn(&self, q: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        if q.len() != self.dim {
            return Err(Error::config(format!(
                "query dimension {} does not match index dimension {}",
                q.len(),
                self.dim
            )));
        }
        if k == 0 || k > self.len() {
            return Err(Error::config(format!("k = {k} must lie in 1..={}", self.len())));
        }
        let mut best = Vec::with_capacity(k + 1);
        self.search(0, q, k, &mut best);
        Ok(best)
    }

    /// Distance to the single nearest point.
    pub fn nearest_dist2(&self, q: &[f64]) -> Result<f64> {
        Ok(self.knn(q, 1)?[0].dist2)
    }

    /// `knn` for every row of `queries`, evaluated in parallel.
    pub fn knn_batch(&self, queries: &[f64], k: usize) -> Result<Vec<Vec<Neighbor>>> {
        if !queries.len().is_multiple_of(self.dim) {
            return Err(Error::config("query buffer does not match the index dimension"));
        }
        let n = queries.len() / self.dim;
        exec::map_range(n, |i| self.knn(&queries[i * self.dim..(i + 1) * self.dim], k))
            .into_iter()
            .collect()
    }

    fn search(&self, node: usize, q: &[f64], k: usize, best: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2: f64 = self
                        .point(i)
                        .iter()
                        .zip(q)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    insert(best, k, Neighbor { index: i, dist2: d2 });
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, best);
                // Points equal to `value` can sit on either side, so only a
                // strictly farther plane is safe to skip.
                if best.len() < k || diff * diff <= best[k - 1].dist2 {
                    self.search(far, q, k, best);
                }
            }
        }
    }
}

fn precedes(a: &Neighbor, b: &Neighbor) -> bool {
    a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index)
}

fn insert(best: &mut Vec<Neighbor>, k: usize, cand: Neighbor) {
    if best.len() == k && !precedes(&cand, &best[k - 1]) {
        return;
    }
    let pos = best.partition_point(|b| precedes(b, &cand));
    best.insert(pos, cand);
    best.truncate(k);
}

/// One index per class label, built from the same-class subset of a dataset.
#[derive(Debug, Clone)]
pub struct ClassIndex {
    per_class: Vec<Option<NnIndex>>,
}

impl ClassIndex {
    pub fn new(real: &Dataset) -> Result<Self> {
        let per_class = (0..real.num_classes())
            .map(|c| {
                let sub = real.class_subset(c);
                if sub.is_empty() {
                    Ok(None)
                } else {
                    NnIndex::from_dataset(&sub).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { per_class })
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn class(&self, c: usize) -> Result<&NnIndex> {
        self.per_class
            .get(c)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::data(format!("no real points for class {c}")))
    }
}
