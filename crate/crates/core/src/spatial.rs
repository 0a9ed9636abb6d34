//! Point indices backed by bulk-loaded R*-trees, keyed by point index.

use rstar::primitives::GeomWithData;
use rstar::RTree;

use crate::geom::Point3;

type Entry3 = GeomWithData<[f64; 3], usize>;
type Entry2 = GeomWithData<[f64; 2], usize>;

pub struct Index3 {
    tree: RTree<Entry3>,
}

impl Index3 {
    pub fn new(points: &[Point3<f64>]) -> Self {
        let entries = points
            .iter()
            .enumerate()
            .map(|(i, p)| Entry3::new([p.x, p.y, p.z], i))
            .collect();
        Self {
            tree: RTree::bulk_load(entries),
        }
    }

    /// Distances (not squared) to the `k` nearest points, nearest first.
    pub fn knn_distances(&self, p: &Point3<f64>, k: usize) -> Vec<(usize, f64)> {
        self.tree
            .nearest_neighbor_iter_with_distance_2(&[p.x, p.y, p.z])
            .take(k)
            .map(|(e, d2)| (e.data, d2.sqrt()))
            .collect()
    }

    /// Indices within `radius` of `p`, ascending.
    pub fn within(&self, p: &Point3<f64>, radius: f64) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .tree
            .locate_within_distance([p.x, p.y, p.z], radius * radius)
            .map(|e| e.data)
            .collect();
        out.sort_unstable();
        out
    }
}

/// Planimetric (XY) index.
pub struct Index2 {
    tree: RTree<Entry2>,
}

impl Index2 {
    pub fn new(points: &[Point3<f64>]) -> Self {
        let entries = points
            .iter()
            .enumerate()
            .map(|(i, p)| Entry2::new([p.x, p.y], i))
            .collect();
        Self {
            tree: RTree::bulk_load(entries),
        }
    }

    pub fn within(&self, x: f64, y: f64, radius: f64) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .tree
            .locate_within_distance([x, y], radius * radius)
            .map(|e| e.data)
            .collect();
        out.sort_unstable();
        out
    }
}
