use crate::model::{cell_of, Cell, Vec3, VoxelSet};

pub fn voxelize(points: &[Vec3], voxel_size: f64) -> VoxelSet {
    assert!(voxel_size > 0.0, "voxel size must be positive");
    let mut set = VoxelSet::empty(voxel_size);
    set.cells.reserve(points.len() / 2);
    for &p in points {
        set.cells.insert(cell_of(p, voxel_size));
    }
    set
}

/// xy footprint of a point set, with every cell flattened to z = 0.
pub fn footprint(points: &[Vec3], voxel_size: f64) -> VoxelSet {
    let mut set = VoxelSet::empty(voxel_size);
    for &p in points {
        let c = cell_of(p, voxel_size);
        set.cells.insert([c[0], c[1], 0]);
    }
    set
}

/// `|a ∩ b| / min(|a|, |b|)`; zero if either set is empty.
///
/// # Panics
/// If the two sets use different voxel sizes.
pub fn voxel_overlap(a: &VoxelSet, b: &VoxelSet) -> f64 {
    assert_eq!(a.voxel_size, b.voxel_size, "voxel sets must share a voxel size");
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if small.is_empty() {
        return 0.0;
    }
    let shared = small.cells.iter().filter(|c| large.cells.contains(*c)).count();
    shared as f64 / small.len() as f64
}

/// True when some cell of `a` lies in the 26-neighbourhood of (or on) a cell
/// of `b`.
pub fn contact(a: &VoxelSet, b: &VoxelSet) -> bool {
    assert_eq!(a.voxel_size, b.voxel_size, "voxel sets must share a voxel size");
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .cells
        .iter()
        .any(|c| neighbourhood(*c).any(|n| large.cells.contains(&n)))
}

pub(crate) fn neighbourhood(c: Cell) -> impl Iterator<Item = Cell> {
    (-1..=1).flat_map(move |dx| (-1..=1).flat_map(move |dy| (-1..=1).map(move |dz| [c[0] + dx, c[1] + dy, c[2] + dz])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn set(cells: &[Cell]) -> VoxelSet {
        let mut s = VoxelSet::empty(0.1);
        s.cells.extend(cells.iter().copied());
        s
    }

    #[test]
    fn single_point_cell() {
        let v = voxelize(&[Vec3::new(0.05, 0.05, 0.05)], 0.1);
        assert_eq!(v.sorted_cells(), vec![[0, 0, 0]]);
    }

    #[test]
    fn same_cell_deduplicates() {
        let v = voxelize(&[Vec3::new(0.05, 0.05, 0.05), Vec3::new(0.06, 0.06, 0.06)], 0.1);
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn cube_corners_hit_eight_cells() {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push(Vec3::new(x, y, z));
                }
            }
        }
        // floor(corner / 0.5) enumerates {0, 2}^3.
        let expected: BTreeSet<Cell> = pts
            .iter()
            .map(|p| {
                [
                    (p.x / 0.5).floor() as i32,
                    (p.y / 0.5).floor() as i32,
                    (p.z / 0.5).floor() as i32,
                ]
            })
            .collect();
        assert_eq!(expected.len(), 8);
        let v = voxelize(&pts, 0.5);
        assert_eq!(v.sorted_cells(), expected.into_iter().collect::<Vec<_>>());
    }

    #[test]
    fn negative_coordinates_floor() {
        let v = voxelize(&[Vec3::new(-0.05, -0.15, 0.0)], 0.1);
        assert_eq!(v.sorted_cells(), vec![[-1, -2, 0]]);
    }

    #[test]
    fn overlap_examples() {
        let a = set(&[[0, 0, 0], [1, 0, 0], [2, 0, 0]]);
        assert_eq!(voxel_overlap(&a, &a), 1.0);
        let b = set(&[[5, 5, 5]]);
        assert_eq!(voxel_overlap(&a, &b), 0.0);
        assert_eq!(voxel_overlap(&a, &VoxelSet::empty(0.1)), 0.0);

        let big: Vec<Cell> = (0..10).map(|i| [i, 0, 0]).collect();
        let small = [[8, 0, 0], [9, 0, 0], [10, 0, 0], [11, 0, 0]];
        let shared = small.iter().filter(|c| big.contains(c)).count();
        assert_eq!(shared, 2);
        assert_eq!(voxel_overlap(&set(&big), &set(&small)), 0.5);
    }

    #[test]
    fn contact_is_chebyshev_one() {
        let a = set(&[[0, 0, 0]]);
        assert!(contact(&a, &set(&[[1, 1, 1]])));
        assert!(!contact(&a, &set(&[[2, 0, 0]])));
        assert!(contact(&a, &a));
    }

    #[test]
    fn footprint_flattens_z() {
        let f = footprint(&[Vec3::new(0.05, 0.05, 3.0), Vec3::new(0.05, 0.05, 0.0)], 0.1);
        assert_eq!(f.sorted_cells(), vec![[0, 0, 0]]);
    }

    fn arb_cells() -> impl Strategy<Value = Vec<Cell>> {
        prop::collection::vec(prop::array::uniform3(-4i32..4), 0..40)
    }

    proptest! {
        #[test]
        fn overlap_symmetric_and_bounded(a in arb_cells(), b in arb_cells()) {
            let (a, b) = (set(&a), set(&b));
            let ab = voxel_overlap(&a, &b);
            prop_assert_eq!(ab, voxel_overlap(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            if !a.is_empty() {
                prop_assert_eq!(voxel_overlap(&a, &a), 1.0);
            }
        }

        #[test]
        fn voxelize_idempotent(pts in prop::collection::vec(prop::array::uniform3(-3.0f64..3.0), 0..60)) {
            let pts: Vec<Vec3> = pts.into_iter().map(Vec3::from_array).collect();
            prop_assert_eq!(voxelize(&pts, 0.25), voxelize(&pts, 0.25));
        }
    }
}
