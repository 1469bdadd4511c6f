//! Room segmentation: structural segments are merged into rooms batch by
//! batch, each batch being the structure visible in one square region around
//! a scan position.

use log::{debug, info};
use rustc_hash::{FxHashMap, FxHashSet};

use crate::error::{Error, Result};
use crate::geometry::{contact, footprint, voxel_overlap, voxelize, PlaneFit};
use crate::model::{Aabb, Cell, Config, Room, StructClass, StructuralSegment, Vec3, VoxelSet};

/// Per-voxel planarity limit for region-growing seeds.
const MAX_VOXEL_CURVATURE: f64 = 0.05;
/// Minimum |cos| between a neighbour voxel normal and its region's seed.
const GROW_ALIGNMENT: f64 = 0.95;
/// Minimum in-plane standard deviation of a region, in voxels.
const MIN_REGION_SPREAD: f64 = 0.3;

/// Identifies one input segment: its batch and position within the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegmentKey {
    pub batch: u32,
    pub index: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoomSet {
    pub rooms: Vec<Room>,
    /// Horizontal segments that never found a room.
    pub unmerged: Vec<StructuralSegment>,
}

impl RoomSet {
    pub fn len(&self) -> usize {
        self.rooms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rooms.is_empty()
    }

    pub fn room(&self, id: u32) -> Option<&Room> {
        self.rooms.get(id as usize).filter(|r| r.id == id)
    }
}

// ---------------------------------------------------------------------------
// Splitting labelled points into planar segments

/// Splits one batch of labelled structure points into planar segments.
///
/// Per class, voxels are fitted with a local plane and grown into regions of
/// consistent orientation over the 26-neighbourhood. Points in non-planar
/// voxels (corners, sparse borders) join the adjacent region whose plane is
/// within half a voxel, otherwise they are dropped. Classes are emitted in
/// `StructClass::ALL` order.
pub fn split_batch(points: &[Vec3], classes: &[StructClass], voxel_size: f64) -> Vec<StructuralSegment> {
    assert_eq!(points.len(), classes.len(), "one class per point");
    let mut out = Vec::new();
    for class in StructClass::ALL {
        let idx: Vec<usize> = (0..points.len()).filter(|&i| classes[i] == class).collect();
        if idx.len() < 3 {
            continue;
        }
        let pts: Vec<Vec3> = idx.iter().map(|&i| points[i]).collect();
        for seg_points in grow_planar_regions(&pts, voxel_size) {
            if let Ok(fit) = PlaneFit::fit(&seg_points) {
                let seg = StructuralSegment::new(class, seg_points, fit.centroid, fit.normal)
                    .expect("fit satisfies segment invariants");
                out.push(seg);
            }
        }
    }
    out
}

struct VoxelPlane {
    normal: Vec3,
    curvature: f64,
}

fn grow_planar_regions(points: &[Vec3], voxel_size: f64) -> Vec<Vec<Vec3>> {
    let mut by_cell: FxHashMap<Cell, Vec<usize>> = FxHashMap::default();
    for (i, &p) in points.iter().enumerate() {
        by_cell.entry(crate::model::cell_of(p, voxel_size)).or_default().push(i);
    }
    let mut cells: Vec<Cell> = by_cell.keys().copied().collect();
    cells.sort_unstable();

    let mut planes: FxHashMap<Cell, VoxelPlane> = FxHashMap::default();
    for c in &cells {
        let members = &by_cell[c];
        if members.len() < 3 {
            continue;
        }
        let pts: Vec<Vec3> = members.iter().map(|&i| points[i]).collect();
        if let Ok(fit) = PlaneFit::fit(&pts) {
            let curvature = fit.curvature();
            if curvature <= MAX_VOXEL_CURVATURE {
                planes.insert(
                    *c,
                    VoxelPlane {
                        normal: fit.normal,
                        curvature,
                    },
                );
            }
        }
    }

    // Flattest voxels seed first; cell order breaks ties.
    let mut seeds: Vec<Cell> = cells.iter().copied().filter(|c| planes.contains_key(c)).collect();
    seeds.sort_by_key(|c| ((planes[c].curvature * 1e9).round() as u64, *c));

    let mut region_of: FxHashMap<Cell, usize> = FxHashMap::default();
    let mut regions: Vec<Vec<Cell>> = Vec::new();
    for seed in seeds {
        if region_of.contains_key(&seed) {
            continue;
        }
        let id = regions.len();
        let seed_normal = planes[&seed].normal;
        let mut members = vec![seed];
        region_of.insert(seed, id);
        let mut head = 0;
        while head < members.len() {
            let c = members[head];
            head += 1;
            for n in crate::geometry::neighbourhood(c) {
                if region_of.contains_key(&n) {
                    continue;
                }
                if let Some(plane) = planes.get(&n) {
                    if plane.normal.dot(seed_normal).abs() >= GROW_ALIGNMENT {
                        region_of.insert(n, id);
                        members.push(n);
                    }
                }
            }
        }
        regions.push(members);
    }

    // Plane of each region from its planar voxels only. Slivers narrower
    // than about a voxel (e.g. a column of diagonal corner voxels) are not
    // surfaces; their points are handed to the neighbours below.
    let min_spread = (MIN_REGION_SPREAD * voxel_size).powi(2);
    let mut region_planes: Vec<(Vec3, Vec3)> = Vec::new();
    let mut kept: Vec<Vec<Cell>> = Vec::new();
    region_of.clear();
    for cells in regions {
        let pts: Vec<Vec3> = cells
            .iter()
            .flat_map(|c| by_cell[c].iter().map(|&i| points[i]))
            .collect();
        if let Ok(fit) = PlaneFit::fit(&pts) {
            if fit.eigenvalues[1] >= min_spread {
                for c in &cells {
                    region_of.insert(*c, kept.len());
                }
                region_planes.push((fit.centroid, fit.normal));
                kept.push(cells);
            }
        }
    }
    let regions = kept;

    let mut owner: Vec<Option<usize>> = vec![None; points.len()];
    for (id, cells) in regions.iter().enumerate() {
        for c in cells {
            for &i in &by_cell[c] {
                owner[i] = Some(id);
            }
        }
    }
    let half = voxel_size / 2.0;
    for c in &cells {
        if region_of.contains_key(c) {
            continue;
        }
        let mut adjacent: Vec<usize> = crate::geometry::neighbourhood(*c)
            .filter_map(|n| region_of.get(&n).copied())
            .collect();
        adjacent.sort_unstable();
        adjacent.dedup();
        for &i in &by_cell[c] {
            let p = points[i];
            let mut best: Option<(f64, usize)> = None;
            for &r in &adjacent {
                let (centroid, normal) = region_planes[r];
                let d = (p - centroid).dot(normal).abs();
                if d <= half && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, r));
                }
            }
            owner[i] = best.map(|(_, r)| r);
        }
    }

    let mut out: Vec<Vec<Vec3>> = vec![Vec::new(); regions.len()];
    for (i, o) in owner.iter().enumerate() {
        if let Some(r) = o {
            out[*r].push(points[i]);
        }
    }
    out.retain(|r| r.len() >= 3);
    out
}

// ---------------------------------------------------------------------------
// Merge criteria

fn abs_cos(a: Vec3, b: Vec3) -> f64 {
    a.dot(b).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum WallMatch {
    /// Aligned and overlapping with `member`.
    Parallel { member: usize, same_class: bool },
    /// Perpendicular and touching.
    Corner,
}

fn match_wall(
    members: &[StructuralSegment],
    member_voxels: &[VoxelSet],
    seg: &StructuralSegment,
    seg_voxels: &VoxelSet,
    cfg: &Config,
) -> Option<WallMatch> {
    let mut parallel: Option<(usize, bool, f64)> = None;
    let mut corner = false;
    for (i, (m, mv)) in members.iter().zip(member_voxels).enumerate() {
        let cos = abs_cos(m.normal, seg.normal);
        if cos >= cfg.wall_alignment {
            let overlap = voxel_overlap(mv, seg_voxels);
            if overlap >= cfg.wall_overlap {
                let same = m.class == seg.class;
                // Prefer a same-class member, then the largest overlap.
                let better = match parallel {
                    None => true,
                    Some((_, best_same, best_overlap)) => {
                        (same && !best_same) || (same == best_same && overlap > best_overlap)
                    }
                };
                if better {
                    parallel = Some((i, same, overlap));
                }
            }
        } else if cfg.corner_rule && cos <= 1.0 - cfg.wall_alignment && !corner {
            corner = contact(mv, seg_voxels);
        }
    }
    match parallel {
        Some((member, same_class, _)) => Some(WallMatch::Parallel { member, same_class }),
        None if corner => Some(WallMatch::Corner),
        None => None,
    }
}

fn match_horizontal(
    members: &[StructuralSegment],
    member_footprints: &[VoxelSet],
    seg: &StructuralSegment,
    seg_footprint: &VoxelSet,
    cfg: &Config,
) -> Option<usize> {
    members.iter().zip(member_footprints).position(|(m, mf)| {
        m.class == seg.class
            && (m.centroid.z - seg.centroid.z).abs() <= cfg.height_tolerance
            && voxel_overlap(mf, seg_footprint) >= cfg.wall_overlap
    })
}

/// Absorbs `seg` into `room` if some member wall overlaps it by at least the
/// wall-overlap threshold with aligned normals or, with the corner rule
/// enabled, touches it at a right angle. Returns whether it was absorbed.
///
/// # Panics
/// If `seg` is not wall-like.
pub fn try_merge_wall(room: &mut Room, seg: &StructuralSegment, cfg: &Config) -> bool {
    assert!(
        seg.class.is_wall_like(),
        "wall merge needs a wall, door or window segment"
    );
    let member_voxels: Vec<VoxelSet> = room
        .wall_segments
        .iter()
        .map(|m| voxelize(&m.points, cfg.voxel_size))
        .collect();
    let seg_voxels = voxelize(&seg.points, cfg.voxel_size);
    match match_wall(&room.wall_segments, &member_voxels, seg, &seg_voxels, cfg) {
        Some(m) => {
            absorb_wall(&mut room.wall_segments, m, seg.clone());
            room.bbox = room_bbox(room);
            true
        }
        None => false,
    }
}

/// Absorbs a floor or ceiling piece if a member of the same class lies within
/// the height tolerance and their xy footprints overlap enough.
///
/// # Panics
/// If `seg` is not a floor or ceiling.
pub fn try_merge_horizontal(room: &mut Room, seg: &StructuralSegment, cfg: &Config) -> bool {
    assert!(
        seg.class.is_horizontal(),
        "horizontal merge needs a floor or ceiling segment"
    );
    let member_fp: Vec<VoxelSet> = room
        .horizontal_segments
        .iter()
        .map(|m| footprint(&m.points, cfg.voxel_size))
        .collect();
    let seg_fp = footprint(&seg.points, cfg.voxel_size);
    match match_horizontal(&room.horizontal_segments, &member_fp, seg, &seg_fp, cfg) {
        Some(i) => {
            fuse_into(&mut room.horizontal_segments[i], &seg.points);
            room.bbox = room_bbox(room);
            true
        }
        None => false,
    }
}

fn absorb_wall(walls: &mut Vec<StructuralSegment>, m: WallMatch, seg: StructuralSegment) -> Option<usize> {
    match m {
        WallMatch::Parallel {
            member,
            same_class: true,
        } => {
            fuse_into(&mut walls[member], &seg.points);
            Some(member)
        }
        _ => {
            walls.push(seg);
            None
        }
    }
}

fn point_key(p: &Vec3) -> [u64; 3] {
    [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
}

/// Adds the points of `incoming` not already present and refits the plane.
fn fuse_into(member: &mut StructuralSegment, incoming: &[Vec3]) {
    let mut seen: FxHashSet<[u64; 3]> = member.points.iter().map(point_key).collect();
    let before = member.points.len();
    for p in incoming {
        if seen.insert(point_key(p)) {
            member.points.push(*p);
        }
    }
    if member.points.len() == before {
        return;
    }
    if let Ok(fit) = PlaneFit::fit(&member.points) {
        member.centroid = fit.centroid;
        member.normal = fit.normal;
    } else {
        member.centroid = crate::model::mean(&member.points).expect("non-empty");
    }
}

/// Bounding box of a room: xy from its walls, z from floor and ceiling
/// centroids where present and from the wall points otherwise.
///
/// # Panics
/// If the room has no segments.
pub fn room_bbox(room: &Room) -> Aabb {
    let xy_source: &[StructuralSegment] = if room.wall_segments.is_empty() {
        &room.horizontal_segments
    } else {
        &room.wall_segments
    };
    let mut pts = xy_source.iter().flat_map(|s| s.points.iter().copied());
    let first = pts.next().expect("room has at least one segment");
    let mut bbox = Aabb::point(first);
    for p in pts {
        bbox.expand(p);
    }
    let floors = room
        .horizontal_segments
        .iter()
        .filter(|s| s.class == StructClass::Floor)
        .map(|s| s.centroid.z);
    let ceilings = room
        .horizontal_segments
        .iter()
        .filter(|s| s.class == StructClass::Ceiling)
        .map(|s| s.centroid.z);
    let zmin = floors.fold(None, |acc: Option<f64>, z| Some(acc.map_or(z, |a| a.min(z))));
    let zmax = ceilings.fold(None, |acc: Option<f64>, z| Some(acc.map_or(z, |a| a.max(z))));
    let mut lo = zmin.unwrap_or(bbox.min.z);
    let mut hi = zmax.unwrap_or(bbox.max.z);
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    bbox.min.z = lo;
    bbox.max.z = hi;
    bbox
}

/// Room whose xy box contains `p` (smallest volume wins), else the room with
/// the nearest xy box. Remaining ties go to the lower id.
pub fn assign_room(p: Vec3, rooms: &RoomSet) -> Result<u32> {
    assign_room_in(p, &rooms.rooms)
}

pub(crate) fn assign_room_in(p: Vec3, rooms: &[Room]) -> Result<u32> {
    if rooms.is_empty() {
        return Err(Error::NoRooms);
    }
    let containing = rooms
        .iter()
        .filter(|r| r.bbox.contains_xy(p))
        .min_by(|a, b| a.bbox.volume().total_cmp(&b.bbox.volume()).then(a.id.cmp(&b.id)));
    if let Some(r) = containing {
        return Ok(r.id);
    }
    let nearest = rooms
        .iter()
        .min_by(|a, b| {
            a.bbox
                .distance_xy(p)
                .total_cmp(&b.bbox.distance_xy(p))
                .then(a.id.cmp(&b.id))
        })
        .expect("non-empty");
    Ok(nearest.id)
}

// ---------------------------------------------------------------------------
// Incremental segmenter

#[derive(Debug, Clone)]
struct RoomState {
    room: Room,
    wall_voxels: Vec<VoxelSet>,
    footprints: Vec<VoxelSet>,
    keys: Vec<SegmentKey>,
}

impl RoomState {
    fn refresh_bbox(&mut self) {
        self.room.bbox = room_bbox(&self.room);
    }
}

/// Consumes segment batches one at a time and keeps the room set current.
#[derive(Debug, Clone)]
pub struct RoomSegmenter {
    cfg: Config,
    rooms: Vec<RoomState>,
    unmerged: Vec<(SegmentKey, StructuralSegment)>,
    next_batch: u32,
}

impl RoomSegmenter {
    pub fn new(cfg: &Config) -> Self {
        Self {
            cfg: cfg.clone(),
            rooms: Vec::new(),
            unmerged: Vec::new(),
            next_batch: 0,
        }
    }

    pub fn rooms(&self) -> impl Iterator<Item = &Room> {
        self.rooms.iter().map(|s| &s.room)
    }

    pub fn room_count(&self) -> usize {
        self.rooms.len()
    }

    /// Input segments grouped by the room that absorbed them, rooms in id
    /// order, keys sorted.
    pub fn partition(&self) -> Vec<Vec<SegmentKey>> {
        self.rooms
            .iter()
            .map(|s| {
                let mut k = s.keys.clone();
                k.sort_unstable();
                k
            })
            .collect()
    }

    pub fn unmerged_keys(&self) -> Vec<SegmentKey> {
        let mut k: Vec<SegmentKey> = self.unmerged.iter().map(|(k, _)| *k).collect();
        k.sort_unstable();
        k
    }

    /// Pushes a batch numbered by arrival order.
    pub fn push_batch(&mut self, batch: Vec<StructuralSegment>) {
        let id = self.next_batch;
        self.push_batch_as(id, batch);
    }

    /// Pushes a batch under an explicit batch number, which names its
    /// segments in [`partition`](Self::partition).
    pub fn push_batch_as(&mut self, batch_id: u32, batch: Vec<StructuralSegment>) {
        self.next_batch = self.next_batch.max(batch_id + 1);
        let keyed: Vec<(SegmentKey, StructuralSegment)> = batch
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                (
                    SegmentKey {
                        batch: batch_id,
                        index: i as u32,
                    },
                    s,
                )
            })
            .collect();
        let (walls, horizontals): (Vec<_>, Vec<_>) = keyed.into_iter().partition(|(_, s)| s.class.is_wall_like());
        for (key, seg) in walls {
            self.add_wall(key, seg);
        }
        for (key, seg) in horizontals {
            if let Err(back) = self.add_horizontal(key, seg) {
                self.unmerged.push(back);
            }
        }
        self.retry_unmerged();
    }

    fn add_wall(&mut self, key: SegmentKey, seg: StructuralSegment) {
        let vox = voxelize(&seg.points, self.cfg.voxel_size);
        let matched: Vec<usize> = self
            .rooms
            .iter()
            .enumerate()
            .filter(|(_, s)| match_wall(&s.room.wall_segments, &s.wall_voxels, &seg, &vox, &self.cfg).is_some())
            .map(|(i, _)| i)
            .collect();
        let Some(&target) = matched.first() else {
            let id = self.rooms.len() as u32;
            debug!("segment {}:{} seeds room {id}", key.batch, key.index);
            let room = Room {
                id,
                bbox: Aabb::point(seg.centroid),
                wall_segments: vec![seg],
                horizontal_segments: Vec::new(),
                label: None,
                feature: None,
            };
            let mut state = RoomState {
                room,
                wall_voxels: vec![vox],
                footprints: Vec::new(),
                keys: vec![key],
            };
            state.refresh_bbox();
            self.rooms.push(state);
            return;
        };
        if matched.len() > 1 {
            info!(
                "segment {}:{} joins rooms {:?}; merging them",
                key.batch, key.index, matched
            );
            self.merge_rooms(&matched);
        }
        let state = &mut self.rooms[target];
        let m = match_wall(&state.room.wall_segments, &state.wall_voxels, &seg, &vox, &self.cfg)
            .expect("matched before merging");
        match absorb_wall(&mut state.room.wall_segments, m, seg) {
            Some(member) => {
                state.wall_voxels[member] = voxelize(&state.room.wall_segments[member].points, self.cfg.voxel_size);
            }
            None => state.wall_voxels.push(vox),
        }
        state.keys.push(key);
        state.refresh_bbox();
    }

    /// Folds every room in `ids` (ascending) into the first and renumbers.
    fn merge_rooms(&mut self, ids: &[usize]) {
        let target = ids[0];
        for &i in ids[1..].iter().rev() {
            let src = self.rooms.remove(i);
            let dst = &mut self.rooms[target];
            dst.room.wall_segments.extend(src.room.wall_segments);
            dst.room.horizontal_segments.extend(src.room.horizontal_segments);
            dst.wall_voxels.extend(src.wall_voxels);
            dst.footprints.extend(src.footprints);
            dst.keys.extend(src.keys);
        }
        self.rooms[target].refresh_bbox();
        for (i, s) in self.rooms.iter_mut().enumerate() {
            s.room.id = i as u32;
        }
    }

    fn add_horizontal(
        &mut self,
        key: SegmentKey,
        seg: StructuralSegment,
    ) -> std::result::Result<(), (SegmentKey, StructuralSegment)> {
        let fp = footprint(&seg.points, self.cfg.voxel_size);
        for state in self.rooms.iter_mut() {
            if let Some(i) = match_horizontal(&state.room.horizontal_segments, &state.footprints, &seg, &fp, &self.cfg)
            {
                fuse_into(&mut state.room.horizontal_segments[i], &seg.points);
                state.footprints[i] = footprint(&state.room.horizontal_segments[i].points, self.cfg.voxel_size);
                state.keys.push(key);
                state.refresh_bbox();
                return Ok(());
            }
        }
        // No matching piece yet: attach to the tightest room containing it.
        let host = self
            .rooms
            .iter()
            .enumerate()
            .filter(|(_, s)| s.room.bbox.contains_xy(seg.centroid))
            .min_by(|(_, a), (_, b)| xy_area(&a.room.bbox).total_cmp(&xy_area(&b.room.bbox)))
            .map(|(i, _)| i);
        match host {
            Some(i) => {
                let state = &mut self.rooms[i];
                state.room.horizontal_segments.push(seg);
                state.footprints.push(fp);
                state.keys.push(key);
                state.refresh_bbox();
                Ok(())
            }
            None => Err((key, seg)),
        }
    }

    fn retry_unmerged(&mut self) {
        let pending = std::mem::take(&mut self.unmerged);
        for (key, seg) in pending {
            if let Err(back) = self.add_horizontal(key, seg) {
                self.unmerged.push(back);
            }
        }
    }

    pub fn finish(self) -> RoomSet {
        RoomSet {
            rooms: self.rooms.into_iter().map(|s| s.room).collect(),
            unmerged: self.unmerged.into_iter().map(|(_, s)| s).collect(),
        }
    }
}

fn xy_area(b: &Aabb) -> f64 {
    let e = b.extent();
    e.x * e.y
}

/// Runs the segmenter over a stream of batches.
pub fn segment_rooms<I>(batches: I, cfg: &Config) -> RoomSet
where
    I: IntoIterator<Item = Vec<StructuralSegment>>,
{
    let mut seg = RoomSegmenter::new(cfg);
    for batch in batches {
        seg.push_batch(batch);
    }
    seg.finish()
}
