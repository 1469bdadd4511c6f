//! End-to-end graph construction from a sequence: room segmentation, mask
//! lifting, room partitioning, fusion and graph assembly.

use std::fmt;
use std::time::{Duration, Instant};

use log::{debug, info};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::{fuse_all, partition_observations, FusionEvent, FusionMode};
use crate::geometry::{dbscan_filter, project_mask, BoxIndex};
use crate::graph::build_graph;
use crate::model::{Config, MaskObservation, SceneGraph, StructClass, Vec3};
use crate::roomseg::{split_batch, RoomSegmenter, RoomSet};
use crate::semantics::fuse_modalities;
use crate::sequence::Sequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Roomseg,
    Lift,
    Partition,
    Fusion,
    Graph,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Roomseg => "roomseg",
            Stage::Lift => "lift",
            Stage::Partition => "partition",
            Stage::Fusion => "fusion",
            Stage::Graph => "graph",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {error}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub error: Error,
}

fn at<T>(stage: Stage, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|error| StageError { stage, error })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings {
    pub roomseg: Duration,
    pub lift: Duration,
    pub partition: Duration,
    pub fusion: Duration,
    pub graph: Duration,
}

impl StageTimings {
    pub fn entries(&self) -> [(Stage, Duration); 5] {
        [
            (Stage::Roomseg, self.roomseg),
            (Stage::Lift, self.lift),
            (Stage::Partition, self.partition),
            (Stage::Fusion, self.fusion),
            (Stage::Graph, self.graph),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub graph: SceneGraph,
    pub rooms: RoomSet,
    pub log: Vec<FusionEvent>,
    pub timings: StageTimings,
    /// Observations that survived filtering.
    pub observations: usize,
    /// Masks dropped for having too few points after filtering.
    pub dropped_masks: usize,
}

/// Segments rooms from every frame carrying structure, one batch per frame,
/// each cut to the configured block around the camera.
pub fn segment_sequence(seq: &Sequence, cfg: &Config) -> Result<RoomSet> {
    let mut seg = RoomSegmenter::new(cfg);
    for f in seq.frames.iter().filter(|f| !f.structs.is_empty()) {
        let pts: Vec<Vec3> = f.structs.iter().map(|s| s.position).collect();
        let mut idx = BoxIndex::build(&pts).query(f.pose.translation(), cfg.block_size);
        idx.sort_unstable();
        let points: Vec<Vec3> = idx.iter().map(|&i| pts[i]).collect();
        let classes: Vec<StructClass> = idx.iter().map(|&i| f.structs[i].class).collect();
        let batch = split_batch(&points, &classes, cfg.voxel_size);
        debug!(
            "frame {}: {} structure points, {} segments",
            f.id,
            points.len(),
            batch.len()
        );
        seg.push_batch_as(f.id, batch);
    }
    let rooms = seg.finish();
    if rooms.is_empty() {
        return Err(Error::NoRooms);
    }
    Ok(rooms)
}

/// Lifts every mask to a filtered world-frame observation. Returns the
/// observations in (frame, mask) order and the number of masks dropped.
pub fn lift_observations(seq: &Sequence, cfg: &Config) -> Result<(Vec<MaskObservation>, usize)> {
    let lift_frame = |f: &crate::sequence::Frame| -> Result<Vec<Option<MaskObservation>>> {
        f.masks
            .iter()
            .map(|m| {
                let raw = project_mask(&f.depth, &m.pixels, &seq.intrinsics, &f.pose)?;
                let points = dbscan_filter(&raw, cfg.dbscan_eps, cfg.dbscan_min_pts);
                if points.len() < cfg.min_mask_points {
                    return Ok(None);
                }
                for e in &m.embeddings {
                    if e.dim() != seq.dim {
                        return Err(Error::DimensionMismatch {
                            expected: seq.dim,
                            found: e.dim(),
                        });
                    }
                }
                Ok(Some(MaskObservation {
                    frame_id: f.id,
                    mask_id: m.mask_id,
                    points,
                    fused: fuse_modalities(&m.embeddings, cfg.modality_weights)?,
                    embeddings: m.embeddings.clone(),
                    room_id: None,
                }))
            })
            .collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let per_frame: Vec<Vec<Option<MaskObservation>>> =
        pool.install(|| seq.frames.par_iter().map(lift_frame).collect::<Result<_>>())?;
    let total: usize = per_frame.iter().map(Vec::len).sum();
    let obs: Vec<MaskObservation> = per_frame.into_iter().flatten().flatten().collect();
    let dropped = total - obs.len();
    Ok((obs, dropped))
}

/// Runs every stage and assembles the graph.
pub fn build(seq: &Sequence, cfg: &Config, mode: FusionMode) -> std::result::Result<BuildOutput, StageError> {
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let rooms = at(Stage::Roomseg, segment_sequence(seq, cfg))?;
    timings.roomseg = t.elapsed();
    info!("{} rooms segmented", rooms.len());

    let t = Instant::now();
    let (obs, dropped_masks) = at(Stage::Lift, lift_observations(seq, cfg))?;
    timings.lift = t.elapsed();
    let observations = obs.len();
    info!("{observations} observations lifted, {dropped_masks} masks dropped");

    let t = Instant::now();
    let queues = at(Stage::Partition, partition_observations(obs, &rooms))?;
    timings.partition = t.elapsed();

    let t = Instant::now();
    let fused = at(Stage::Fusion, fuse_all(&queues, cfg, mode))?;
    timings.fusion = t.elapsed();
    info!("{} instances fused ({mode})", fused.instances.len());

    let t = Instant::now();
    let graph = at(
        Stage::Graph,
        build_graph(&rooms, fused.instances, &seq.room_prototypes, cfg.voxel_size),
    )?;
    timings.graph = t.elapsed();

    Ok(BuildOutput {
        graph,
        rooms,
        log: fused.log,
        timings,
        observations,
        dropped_masks,
    })
}
