//! Density clustering with a uniform grid for ε-neighbour lookups.

use rustc_hash::FxHashMap;

use super::voxel::neighbourhood;
use crate::model::{cell_of, Cell, Vec3};

struct Grid<'a> {
    points: &'a [Vec3],
    eps: f64,
    cells: FxHashMap<Cell, Vec<u32>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [Vec3], eps: f64) -> Self {
        let mut cells: FxHashMap<Cell, Vec<u32>> = FxHashMap::default();
        for (i, &p) in points.iter().enumerate() {
            cells.entry(cell_of(p, eps)).or_default().push(i as u32);
        }
        Self { points, eps, cells }
    }

    /// ε-neighbours of point `i`, itself included.
    fn neighbours(&self, i: usize, out: &mut Vec<u32>) {
        out.clear();
        let p = self.points[i];
        let eps2 = self.eps * self.eps;
        for c in neighbourhood(cell_of(p, self.eps)) {
            if let Some(members) = self.cells.get(&c) {
                for &j in members {
                    let d = self.points[j as usize] - p;
                    if d.dot(d) <= eps2 {
                        out.push(j);
                    }
                }
            }
        }
    }
}

/// Standard DBSCAN. Returns one label per point: `Some(cluster)` or `None`
/// for noise. Clusters are numbered in order of discovery by point index.
pub fn dbscan_clusters(points: &[Vec3], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    assert!(eps > 0.0 && min_pts >= 1, "eps > 0 and min_pts >= 1 required");
    let grid = Grid::new(points, eps);
    let mut labels: Vec<Option<usize>> = vec![None; points.len()];
    let mut visited = vec![false; points.len()];
    let mut next_cluster = 0;
    let mut nbrs = Vec::new();
    let mut frontier: Vec<u32> = Vec::new();

    for i in 0..points.len() {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        grid.neighbours(i, &mut nbrs);
        if nbrs.len() < min_pts {
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[i] = Some(cluster);
        frontier.clear();
        frontier.extend_from_slice(&nbrs);
        while let Some(j) = frontier.pop() {
            let j = j as usize;
            if labels[j].is_none() {
                labels[j] = Some(cluster);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            grid.neighbours(j, &mut nbrs);
            if nbrs.len() >= min_pts {
                frontier.extend(
                    nbrs.iter()
                        .copied()
                        .filter(|&k| labels[k as usize].is_none() || !visited[k as usize]),
                );
            }
        }
    }
    labels
}

/// Keeps only the largest DBSCAN cluster, in input order. Ties go to the
/// cluster whose lowest point index is smallest. All-noise input yields an
/// empty set.
pub fn dbscan_filter(points: &[Vec3], eps: f64, min_pts: usize) -> Vec<Vec3> {
    let labels = dbscan_clusters(points, eps, min_pts);
    let mut sizes: Vec<(usize, usize)> = Vec::new(); // (count, first index)
    for (i, label) in labels.iter().enumerate() {
        if let Some(c) = *label {
            if c >= sizes.len() {
                sizes.resize(c + 1, (0, usize::MAX));
            }
            sizes[c].0 += 1;
            sizes[c].1 = sizes[c].1.min(i);
        }
    }
    let Some(best) = (0..sizes.len()).max_by(|&a, &b| sizes[a].0.cmp(&sizes[b].0).then(sizes[b].1.cmp(&sizes[a].1)))
    else {
        return Vec::new();
    };
    points
        .iter()
        .zip(&labels)
        .filter(|(_, l)| **l == Some(best))
        .map(|(p, _)| *p)
        .collect()
}
