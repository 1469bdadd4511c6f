use std::fmt;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::geometry::voxelize;
use crate::model::{NodeRef, SceneGraph};

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation(pub String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Checks the structural invariants of a graph. An empty report means the
/// graph is valid; each broken or missing edge yields one entry.
pub fn validate(g: &SceneGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut report = |s: String| out.push(Violation(s));

    let mut room_ids = FxHashSet::default();
    for r in &g.rooms {
        if !room_ids.insert(r.id) {
            report(format!("duplicate room id {}", r.id));
        }
    }
    let mut instance_ids = FxHashSet::default();
    for i in &g.instances {
        if !instance_ids.insert(i.id) {
            report(format!("duplicate instance id {}", i.id));
        }
    }

    let exists = |n: NodeRef| match n {
        NodeRef::Building(id) => id == g.building.id,
        NodeRef::Room(id) => room_ids.contains(&id),
        NodeRef::Instance(id) => instance_ids.contains(&id),
    };
    let mut parents: FxHashMap<NodeRef, usize> = FxHashMap::default();
    for e in &g.edges {
        let level_ok = matches!(
            (e.child, e.parent),
            (NodeRef::Instance(_), NodeRef::Room(_)) | (NodeRef::Room(_), NodeRef::Building(_))
        );
        if !level_ok {
            report(format!("edge {} -> {} skips or inverts a level", e.child, e.parent));
            continue;
        }
        if !exists(e.child) || !exists(e.parent) {
            report(format!("dangling edge {} -> {}", e.child, e.parent));
            continue;
        }
        *parents.entry(e.child).or_default() += 1;
    }
    for r in &g.rooms {
        match parents.get(&NodeRef::Room(r.id)).copied().unwrap_or(0) {
            0 => report(format!("room {} has no belongs-to edge", r.id)),
            1 => {}
            n => report(format!("room {} has {n} belongs-to edges", r.id)),
        }
    }
    for i in &g.instances {
        match parents.get(&NodeRef::Instance(i.id)).copied().unwrap_or(0) {
            0 => report(format!("instance {} has no belongs-to edge", i.id)),
            1 => {}
            n => report(format!("instance {} has {n} belongs-to edges", i.id)),
        }
    }

    for i in &g.instances {
        if i.embedding.dim() != g.dim {
            report(format!(
                "instance {} embedding has dimension {}",
                i.id,
                i.embedding.dim()
            ));
        }
        if (i.embedding.norm() - 1.0).abs() > NORM_TOLERANCE {
            report(format!("instance {} embedding is not unit length", i.id));
        }
        if i.weight != i.points.len() as u64 {
            report(format!(
                "instance {} weight {} != {} points",
                i.id,
                i.weight,
                i.points.len()
            ));
        }
        if i.voxels != voxelize(&i.points, g.voxel_size) {
            report(format!("instance {} voxels do not match its points", i.id));
        }
    }
    for r in &g.rooms {
        if let Some(f) = &r.feature {
            if (f.norm() - 1.0).abs() > NORM_TOLERANCE || f.dim() != g.dim {
                report(format!("room {} feature is malformed", r.id));
            }
        }
        let slack = g.voxel_size;
        let outside = r
            .wall_segments
            .iter()
            .chain(&r.horizontal_segments)
            .flat_map(|s| &s.points)
            .any(|p| {
                p.x < r.bbox.min.x - slack
                    || p.x > r.bbox.max.x + slack
                    || p.y < r.bbox.min.y - slack
                    || p.y > r.bbox.max.y + slack
            });
        if outside {
            report(format!("room {} box does not contain its segments", r.id));
        }
    }
    out
}
