//! Neighbor structures (ball query and kNN) that define the graph edges.

use alloc::collections::BTreeMap;
use alloc::rc::Rc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

/// Per-node neighbor indices in compressed row form.
///
/// Lists are ordered nearest-first and never contain the node itself.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    cap: usize,
}

impl NeighborList {
    /// Builds a list from explicit per-node neighbors, checking the invariants.
    pub fn from_lists(lists: &[Vec<usize>], cap: usize) -> Result<Self> {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for (i, list) in lists.iter().enumerate() {
            if list.len() > cap {
                return Err(Error::InvalidArgument(alloc::format!("node {i} has {} neighbors, cap {cap}", list.len())));
            }
            for &k in list {
                if k == i || k >= n {
                    return Err(Error::InvalidArgument(alloc::format!("invalid neighbor {k} for node {i}")));
                }
                indices.push(k);
            }
            offsets.push(indices.len());
        }
        Ok(Self { offsets, indices, cap })
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn edge_count(&self) -> usize {
        self.indices.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn to_lists(&self) -> Vec<Vec<usize>> {
        (0..self.node_count()).map(|i| self.neighbors(i).to_vec()).collect()
    }

    /// Flattened edge arrays `(center, neighbor)` in node-major order.
    pub fn edges(&self) -> EdgeIndex {
        let mut centers = Vec::with_capacity(self.indices.len());
        for i in 0..self.node_count() {
            centers.extend(core::iter::repeat_n(i, self.degree(i)));
        }
        EdgeIndex {
            centers: centers.into(),
            neighbors: self.indices.clone().into(),
            inv_degree: (0..self.node_count())
                .map(|i| if self.degree(i) == 0 { 0.0 } else { 1.0 / self.degree(i) as f64 })
                .collect(),
        }
    }
}

/// Edge endpoints shared between tape operations without copying.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub centers: Rc<[usize]>,
    pub neighbors: Rc<[usize]>,
    pub inv_degree: Vec<f64>,
}

fn sort_candidates(c: &mut [(f64, usize)]) {
    c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
}

fn nearest_other(points: &[Vec3], i: usize) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for (k, &p) in points.iter().enumerate() {
        if k == i {
            continue;
        }
        let d = (p - points[i]).norm_squared();
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

/// Up to `max_neighbors` points within `radius` of each node, nearest first.
/// A node with nothing in range is linked to its single nearest neighbor.
pub fn build_ball_query(pc: &PointCloud, radius: f64, max_neighbors: usize) -> Result<NeighborList> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!("ball radius must be positive, got {radius}")));
    }
    if max_neighbors == 0 {
        return Err(Error::InvalidArgument("max_neighbors must be at least 1".into()));
    }
    let points = pc.points();
    if points.len() < 2 {
        return Err(Error::InvalidArgument("graph construction needs at least two points".into()));
    }
    let key = |p: Vec3| {
        (
            libm::floor(p.x / radius) as i64,
            libm::floor(p.y / radius) as i64,
            libm::floor(p.z / radius) as i64,
        )
    };
    let mut grid: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, &p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let r2 = radius * radius;
    let mut lists = Vec::with_capacity(points.len());
    let mut cand: Vec<(f64, usize)> = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        cand.clear();
        let (cx, cy, cz) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(cell) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &k in cell {
                            if k == i {
                                continue;
                            }
                            let d = (points[k] - p).norm_squared();
                            if d <= r2 {
                                cand.push((d, k));
                            }
                        }
                    }
                }
            }
        }
        if cand.is_empty() {
            lists.push(alloc::vec![nearest_other(points, i)]);
            continue;
        }
        sort_candidates(&mut cand);
        lists.push(cand.iter().take(max_neighbors).map(|c| c.1).collect());
    }
    NeighborList::from_lists(&lists, max_neighbors)
}

/// The `k` nearest neighbors of every node, distance-ascending with index
/// tie-break.
pub fn build_knn(pc: &PointCloud, k: usize) -> Result<NeighborList> {
    let points = pc.points();
    if k == 0 || k >= points.len() {
        return Err(Error::InvalidArgument(alloc::format!("k = {k} must lie in [1, {})", points.len())));
    }
    let mut lists = Vec::with_capacity(points.len());
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(points.len());
    for (i, &p) in points.iter().enumerate() {
        cand.clear();
        cand.extend(points.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, &q)| ((q - p).norm_squared(), j)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        cand.select_nth_unstable_by(k - 1, cmp);
        let head = &mut cand[..k];
        head.sort_by(cmp);
        lists.push(head.iter().map(|c| c.1).collect());
    }
    NeighborList::from_lists(&lists, k)
}
