//! Mask-query instance fusion, partitioned by room.
//!
//! Each observation is matched against an indexed memory of instances of its
//! room. Rooms are independent, so their queues are fused concurrently.

use std::fmt;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::geometry::{voxel_overlap, voxelize};
use crate::model::{mean, Aabb, Cell, Config, Instance, MaskObservation, VoxelSet};
use crate::roomseg::{assign_room, RoomSet};
use crate::semantics::{dot, EmbeddingSum};

/// Observations of one room, in frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomWorkQueue {
    pub room_id: u32,
    pub observations: Vec<MaskObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// Rooms fused concurrently on `workers` threads.
    Parallel,
    /// Rooms fused one after another on the calling thread.
    SerialRooms,
    /// One global queue in frame order, rooms ignored.
    SerialGlobal,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Parallel, FusionMode::SerialRooms, FusionMode::SerialGlobal];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Parallel => "parallel",
            FusionMode::SerialRooms => "serial_rooms",
            FusionMode::SerialGlobal => "serial_global",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown fusion mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Merge,
    Reject,
}

/// Outcome of the geometric and semantic tests for one instance/observation
/// pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualScore {
    /// Voxel overlap.
    pub geometric: f64,
    /// Cosine similarity.
    pub semantic: f64,
    pub decision: Decision,
}

fn score(geometric: f64, semantic: f64, cfg: &Config) -> DualScore {
    let pass = geometric >= cfg.geometric_threshold && semantic >= cfg.semantic_threshold;
    DualScore {
        geometric,
        semantic,
        decision: if pass { Decision::Merge } else { Decision::Reject },
    }
}

/// Both thresholds inclusive.
pub fn dual_criteria(inst: &Instance, obs: &MaskObservation, cfg: &Config) -> DualScore {
    let vox = voxelize(&obs.points, inst.voxels.voxel_size);
    score(
        voxel_overlap(&inst.voxels, &vox),
        dot(inst.embedding.values(), obs.fused.values()),
        cfg,
    )
}

/// One line of the fusion log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionEvent {
    pub frame_id: u32,
    pub mask_id: u32,
    /// Candidate instance, `None` when a new instance is created.
    pub candidate: Option<u32>,
    pub geometric: f64,
    pub semantic: f64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Best passing candidate; the observation was merged into it.
    Merge,
    /// Passed both tests but another candidate scored higher.
    Pass,
    Reject,
    /// No candidate passed; a new instance was created.
    New,
}

impl fmt::Display for FusionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let outcome = match self.outcome {
            Outcome::Merge => "merge",
            Outcome::Pass => "pass",
            Outcome::Reject => "reject",
            Outcome::New => "new",
        };
        match self.candidate {
            Some(c) => write!(
                f,
                "{} {} {} {:.6} {:.6} {}",
                self.frame_id, self.mask_id, c, self.geometric, self.semantic, outcome
            ),
            None => write!(f, "{} {} - - - {}", self.frame_id, self.mask_id, outcome),
        }
    }
}

/// Instances of one room plus the voxel index used to find candidates.
#[derive(Debug, Clone)]
pub struct InstanceMemory {
    pub instances: Vec<Instance>,
    sums: Vec<EmbeddingSum>,
    voxel_index: FxHashMap<Cell, Vec<u32>>,
    voxel_size: f64,
    pub log: Vec<FusionEvent>,
}

impl InstanceMemory {
    pub fn new(voxel_size: f64) -> Self {
        Self {
            instances: Vec::new(),
            sums: Vec::new(),
            voxel_index: FxHashMap::default(),
            voxel_size,
            log: Vec::new(),
        }
    }

    /// Instances sharing at least one voxel with `vox`, ascending.
    pub fn candidates(&self, vox: &VoxelSet) -> Vec<u32> {
        let mut ids: Vec<u32> = vox
            .cells
            .iter()
            .filter_map(|c| self.voxel_index.get(c))
            .flatten()
            .copied()
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Matches one observation against the memory and merges or inserts it.
    pub fn insert(&mut self, obs: &MaskObservation, room_id: u32, cfg: &Config) {
        let vox = voxelize(&obs.points, self.voxel_size);
        let mut best: Option<(f64, u32)> = None;
        let first_event = self.log.len();
        for id in self.candidates(&vox) {
            let inst = &self.instances[id as usize];
            let s = score(
                voxel_overlap(&inst.voxels, &vox),
                dot(inst.embedding.values(), obs.fused.values()),
                cfg,
            );
            let outcome = if s.decision == Decision::Merge {
                let product = s.geometric * s.semantic;
                if best.is_none_or(|(b, _)| product > b) {
                    best = Some((product, id));
                }
                Outcome::Pass
            } else {
                Outcome::Reject
            };
            self.log.push(FusionEvent {
                frame_id: obs.frame_id,
                mask_id: obs.mask_id,
                candidate: Some(id),
                geometric: s.geometric,
                semantic: s.semantic,
                outcome,
            });
        }
        match best {
            Some((_, id)) => {
                for e in &mut self.log[first_event..] {
                    if e.candidate == Some(id) {
                        e.outcome = Outcome::Merge;
                    }
                }
                self.merge(id, obs, vox);
            }
            None => {
                self.log.push(FusionEvent {
                    frame_id: obs.frame_id,
                    mask_id: obs.mask_id,
                    candidate: None,
                    geometric: 0.0,
                    semantic: 0.0,
                    outcome: Outcome::New,
                });
                self.create(obs, room_id, vox);
            }
        }
    }

    fn merge(&mut self, id: u32, obs: &MaskObservation, vox: VoxelSet) {
        let inst = &mut self.instances[id as usize];
        for c in vox.cells {
            if inst.voxels.cells.insert(c) {
                self.voxel_index.entry(c).or_default().push(id);
            }
        }
        for &p in &obs.points {
            inst.bbox.expand(p);
        }
        inst.points.extend_from_slice(&obs.points);
        let n = obs.points.len() as u64;
        inst.weight += n;
        let sum = &mut self.sums[id as usize];
        sum.add(&obs.fused, n);
        if let Some(e) = sum.embedding() {
            inst.embedding = e;
        }
        inst.observations.push(obs.key());
    }

    fn create(&mut self, obs: &MaskObservation, room_id: u32, vox: VoxelSet) {
        let id = self.instances.len() as u32;
        for c in &vox.cells {
            self.voxel_index.entry(*c).or_default().push(id);
        }
        let mut bbox = Aabb::point(obs.points.first().copied().unwrap_or_default());
        for &p in &obs.points {
            bbox.expand(p);
        }
        let n = obs.points.len() as u64;
        self.sums.push(EmbeddingSum::new(&obs.fused, n));
        self.instances.push(Instance {
            id,
            points: obs.points.clone(),
            voxels: vox,
            embedding: obs.fused.clone(),
            weight: n,
            room_id: obs.room_id.unwrap_or(room_id),
            bbox,
            observations: vec![obs.key()],
        });
    }

    /// True when the voxel index is exactly the inverse of the instances'
    /// voxel sets.
    pub fn index_is_consistent(&self) -> bool {
        let mut expected: FxHashMap<Cell, Vec<u32>> = FxHashMap::default();
        for inst in &self.instances {
            for c in &inst.voxels.cells {
                expected.entry(*c).or_default().push(inst.id);
            }
        }
        if expected.len() != self.voxel_index.len() {
            return false;
        }
        expected.into_iter().all(|(c, mut ids)| {
            let Some(got) = self.voxel_index.get(&c) else {
                return false;
            };
            let mut got = got.clone();
            ids.sort_unstable();
            got.sort_unstable();
            ids == got
        })
    }
}

/// Assigns each observation to a room by its centroid and groups them into
/// per-room queues in frame order. Only non-empty queues are returned,
/// ordered by room id.
pub fn partition_observations(obs: Vec<MaskObservation>, rooms: &RoomSet) -> Result<Vec<RoomWorkQueue>> {
    if rooms.is_empty() {
        return Err(Error::NoRooms);
    }
    let mut by_room: Vec<Vec<MaskObservation>> = vec![Vec::new(); rooms.len()];
    for mut o in obs {
        let c = mean(&o.points).ok_or(Error::Empty("observation without points"))?;
        let room = assign_room(c, rooms)?;
        o.room_id = Some(room);
        by_room[room as usize].push(o);
    }
    Ok(by_room
        .into_iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(room_id, mut observations)| {
            observations.sort_by_key(|o| o.key());
            RoomWorkQueue {
                room_id: room_id as u32,
                observations,
            }
        })
        .collect())
}

/// Fuses one room's observations in order.
pub fn fuse_room(queue: &RoomWorkQueue, cfg: &Config) -> InstanceMemory {
    let mut mem = InstanceMemory::new(cfg.voxel_size);
    for o in &queue.observations {
        mem.insert(o, queue.room_id, cfg);
    }
    mem
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// Ordered by room, then by creation within the room; ids are indices.
    pub instances: Vec<Instance>,
    pub log: Vec<FusionEvent>,
}

/// Fuses all queues in the given mode. Instance ids in the output depend only
/// on room and creation order, never on scheduling.
pub fn fuse_all(queues: &[RoomWorkQueue], cfg: &Config, mode: FusionMode) -> Result<FusionOutput> {
    let memories: Vec<InstanceMemory> = match mode {
        FusionMode::Parallel => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
            pool.install(|| queues.par_iter().map(|q| fuse_room(q, cfg)).collect())
        }
        FusionMode::SerialRooms => queues.iter().map(|q| fuse_room(q, cfg)).collect(),
        FusionMode::SerialGlobal => {
            let mut all: Vec<MaskObservation> = queues.iter().flat_map(|q| q.observations.iter().cloned()).collect();
            all.sort_by_key(|o| o.key());
            let global = RoomWorkQueue {
                room_id: queues.first().map_or(0, |q| q.room_id),
                observations: all,
            };
            vec![fuse_room(&global, cfg)]
        }
    };
    Ok(renumber(memories))
}

/// Concatenates memories, orders instances by room (stable, so creation order
/// is kept within a room) and rewrites ids in instances and logs.
fn renumber(memories: Vec<InstanceMemory>) -> FusionOutput {
    let mut tagged: Vec<(usize, Instance)> = Vec::new();
    let mut logs: Vec<(usize, Vec<FusionEvent>)> = Vec::new();
    for (m, mem) in memories.into_iter().enumerate() {
        tagged.extend(mem.instances.into_iter().map(|i| (m, i)));
        logs.push((m, mem.log));
    }
    tagged.sort_by_key(|(_, i)| i.room_id);
    let mut new_id: FxHashMap<(usize, u32), u32> = FxHashMap::default();
    let instances: Vec<Instance> = tagged
        .into_iter()
        .enumerate()
        .map(|(k, (m, mut inst))| {
            new_id.insert((m, inst.id), k as u32);
            inst.id = k as u32;
            inst
        })
        .collect();
    let mut log = Vec::new();
    for (m, events) in logs {
        log.extend(events.into_iter().map(|mut e| {
            e.candidate = e.candidate.map(|c| new_id[&(m, c)]);
            e
        }));
    }
    FusionOutput { instances, log }
}

/// Instances as sets of observation keys, sorted; equal partitions compare
/// equal regardless of ids.
pub fn observation_partition(instances: &[Instance]) -> Vec<Vec<crate::model::ObsKey>> {
    let mut p: Vec<Vec<crate::model::ObsKey>> = instances
        .iter()
        .map(|i| {
            let mut k = i.observations.clone();
            k.sort_unstable();
            k
        })
        .collect();
    p.sort();
    p
}
