//! Spatial primitives: box extraction, bounding boxes, voxel sets, plane
//! normals, density filtering and pinhole back-projection.

mod camera;
mod dbscan;
mod kdtree;
mod pca;
mod voxel;

pub use camera::{project_mask, DepthImage, Pixel};
pub use dbscan::{dbscan_clusters, dbscan_filter};
pub use kdtree::{extract_box_region, BoxIndex};
pub use pca::{pca_normal, symmetric_eigen3, PlaneFit};
pub(crate) use voxel::neighbourhood;
pub use voxel::{contact, footprint, voxel_overlap, voxelize};

pub use crate::model::{Aabb, Cell, VoxelSet};

use crate::error::{Error, Result};
use crate::model::Vec3;

/// Componentwise min/max of a non-empty point set.
pub fn compute_aabb(points: &[Vec3]) -> Result<Aabb> {
    let (first, rest) = points.split_first().ok_or(Error::Empty("aabb of no points"))?;
    let mut bbox = Aabb::point(*first);
    for &p in rest {
        bbox.expand(p);
    }
    Ok(bbox)
}
