//! Static 2D kd-tree over the xy plane for square region queries.

use crate::model::Vec3;

const LEAF_SIZE: usize = 16;

/// Read-only index over a cloud snapshot. Built once, queried many times.
#[derive(Debug, Clone)]
pub struct BoxIndex {
    xy: Vec<[f64; 2]>,
    // Permutation of point indices laid out as an implicit balanced tree.
    order: Vec<u32>,
}

impl BoxIndex {
    pub fn build(points: &[Vec3]) -> Self {
        let xy: Vec<[f64; 2]> = points.iter().map(|p| [p.x, p.y]).collect();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        split(&xy, &mut order, 0);
        Self { xy, order }
    }

    pub fn len(&self) -> usize {
        self.xy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xy.is_empty()
    }

    /// Indices of points with `|p.x - c.x| <= n/2` and `|p.y - c.y| <= n/2`,
    /// ascending.
    pub fn query(&self, center: Vec3, side: f64) -> Vec<usize> {
        let half = side / 2.0;
        // Pruning bounds are padded so rounding never hides a boundary point.
        let pad = |v: f64| 1e-9 * (1.0 + v.abs());
        let lo = [
            center.x - half - pad(center.x - half),
            center.y - half - pad(center.y - half),
        ];
        let hi = [
            center.x + half + pad(center.x + half),
            center.y + half + pad(center.y + half),
        ];
        let mut out = Vec::new();
        self.visit(&self.order, 0, &lo, &hi, center, half, &mut out);
        out.sort_unstable();
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn visit(
        &self,
        slice: &[u32],
        depth: usize,
        lo: &[f64; 2],
        hi: &[f64; 2],
        center: Vec3,
        half: f64,
        out: &mut Vec<usize>,
    ) {
        if slice.len() <= LEAF_SIZE {
            for &i in slice {
                let p = self.xy[i as usize];
                // Same predicate as the documented contract, not the bounds.
                if (p[0] - center.x).abs() <= half && (p[1] - center.y).abs() <= half {
                    out.push(i as usize);
                }
            }
            return;
        }
        let axis = depth % 2;
        let mid = slice.len() / 2;
        let split_value = self.xy[slice[mid] as usize][axis];
        if lo[axis] <= split_value {
            self.visit(&slice[..mid], depth + 1, lo, hi, center, half, out);
        }
        let p = self.xy[slice[mid] as usize];
        if (p[0] - center.x).abs() <= half && (p[1] - center.y).abs() <= half {
            out.push(slice[mid] as usize);
        }
        if hi[axis] >= split_value {
            self.visit(&slice[mid + 1..], depth + 1, lo, hi, center, half, out);
        }
    }

    /// Points inside the square region, in input order.
    pub fn extract(&self, cloud: &[Vec3], center: Vec3, side: f64) -> Vec<Vec3> {
        debug_assert_eq!(cloud.len(), self.len());
        self.query(center, side).into_iter().map(|i| cloud[i]).collect()
    }
}

fn split(xy: &[[f64; 2]], order: &mut [u32], depth: usize) {
    if order.len() <= LEAF_SIZE {
        return;
    }
    let axis = depth % 2;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| xy[a as usize][axis].total_cmp(&xy[b as usize][axis]));
    let (left, right) = order.split_at_mut(mid);
    split(xy, left, depth + 1);
    split(xy, &mut right[1..], depth + 1);
}

/// Square xy region of side `side` around `center`, z unbounded.
pub fn extract_box_region(cloud: &[Vec3], center: Vec3, side: f64) -> Vec<Vec3> {
    assert!(side > 0.0, "region side must be positive");
    BoxIndex::build(cloud).extract(cloud, center, side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(cloud: &[Vec3], c: Vec3, n: f64) -> Vec<Vec3> {
        cloud
            .iter()
            .copied()
            .filter(|p| (p.x - c.x).abs() <= n / 2.0 && (p.y - c.y).abs() <= n / 2.0)
            .collect()
    }

    #[test]
    fn excludes_points_past_half_side() {
        let cloud = [Vec3::ZERO, Vec3::new(6.0, 0.0, 0.0)];
        assert_eq!(extract_box_region(&cloud, Vec3::ZERO, 10.0), vec![Vec3::ZERO]);
    }

    #[test]
    fn huge_box_returns_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud: Vec<Vec3> = (0..300)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random(),
                )
            })
            .collect();
        assert_eq!(extract_box_region(&cloud, Vec3::ZERO, 1e9), cloud);
    }

    #[test]
    fn uniform_cloud_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud: Vec<Vec3> = (0..1000)
            .map(|_| {
                Vec3::new(
                    rng.random_range(0.0..10.0),
                    rng.random_range(0.0..10.0),
                    rng.random_range(-1.0..3.0),
                )
            })
            .collect();
        let c = Vec3::new(5.0, 5.0, 0.0);
        let got = extract_box_region(&cloud, c, 2.0);
        assert!(!got.is_empty());
        assert_eq!(got, brute(&cloud, c, 2.0));
    }

    #[test]
    fn z_is_unbounded() {
        let cloud = [Vec3::new(0.0, 0.0, 1e6), Vec3::new(0.0, 0.0, -1e6)];
        assert_eq!(extract_box_region(&cloud, Vec3::ZERO, 1.0).len(), 2);
    }

    #[test]
    fn boundary_is_inclusive_with_duplicates() {
        let cloud: Vec<Vec3> = (0..100).map(|i| Vec3::new((i % 3) as f64, 1.0, 0.0)).collect();
        let got = extract_box_region(&cloud, Vec3::new(0.0, 0.0, 0.0), 2.0);
        assert_eq!(got, brute(&cloud, Vec3::ZERO, 2.0));
    }

    proptest! {
        #[test]
        fn equals_brute_force(
            pts in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 0..400),
            cx in -20.0f64..20.0, cy in -20.0f64..20.0, n in 0.1f64..30.0,
        ) {
            let cloud: Vec<Vec3> = pts.into_iter().map(|(x, y)| Vec3::new(x, y, 0.0)).collect();
            let c = Vec3::new(cx, cy, 0.0);
            let index = BoxIndex::build(&cloud);
            prop_assert_eq!(index.extract(&cloud, c, n), brute(&cloud, c, n));
        }
    }
}
