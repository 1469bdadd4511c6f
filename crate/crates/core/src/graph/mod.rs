//! Three-level scene graph: building, rooms, instances.

mod io;
mod validate;

pub use io::{deserialize, graph_paths, load, save, serialize, SerializedGraph};
pub use validate::{validate, Violation};

use log::warn;

use crate::error::{Error, Result};
use crate::model::{BuildingNode, Edge, Instance, NodeRef, SceneGraph};
use crate::roomseg::RoomSet;
use crate::semantics::{aggregate_room_feature, classify_room, PrototypeSet};

/// Label given to rooms without instances.
pub const UNKNOWN_ROOM: &str = "unknown";

/// Attaches every instance to a room, labels the rooms from their instances
/// and links everything under a single building node.
///
/// An instance goes to the room whose box overlaps its own the most in xy; if
/// it overlaps none, it stays in the room it was fused in. Instance
/// `room_id`s are updated to the chosen room.
pub fn build_graph(
    rooms: &RoomSet,
    mut instances: Vec<Instance>,
    prototypes: &PrototypeSet,
    voxel_size: f64,
) -> Result<SceneGraph> {
    let dim = prototypes.dim();
    for inst in &instances {
        if inst.embedding.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: inst.embedding.dim(),
            });
        }
    }
    let mut rooms_out = rooms.rooms.clone();
    for inst in &mut instances {
        inst.room_id = attach(inst, &rooms_out);
    }
    for room in &mut rooms_out {
        let members: Vec<Instance> = instances.iter().filter(|i| i.room_id == room.id).cloned().collect();
        if members.is_empty() {
            room.label = Some(UNKNOWN_ROOM.to_string());
            room.feature = None;
            continue;
        }
        let feature = aggregate_room_feature(&members)?;
        room.label = Some(classify_room(&feature, prototypes)?.to_string());
        room.feature = Some(feature);
    }

    let building = BuildingNode {
        id: 0,
        name: "building".into(),
    };
    let mut edges: Vec<Edge> = rooms_out
        .iter()
        .map(|r| Edge {
            child: NodeRef::Room(r.id),
            parent: NodeRef::Building(building.id),
        })
        .collect();
    edges.extend(instances.iter().map(|i| Edge {
        child: NodeRef::Instance(i.id),
        parent: NodeRef::Room(i.room_id),
    }));
    Ok(SceneGraph {
        voxel_size,
        dim,
        building,
        rooms: rooms_out,
        instances,
        edges,
    })
}

fn attach(inst: &Instance, rooms: &[crate::model::Room]) -> u32 {
    if inst.points.is_empty() {
        warn!(
            "instance {} has no points; keeping fusion room {}",
            inst.id, inst.room_id
        );
        return inst.room_id;
    }
    let mut best: Option<(f64, u32)> = None;
    for r in rooms {
        let a = r.bbox.overlap_area_xy(&inst.bbox);
        if a > 0.0 && best.is_none_or(|(b, _)| a > b) {
            best = Some((a, r.id));
        }
    }
    best.map_or(inst.room_id, |(_, id)| id)
}
