//! Domain types shared by every pipeline stage.
//!
//! Types here carry their own invariants; constructors that can fail return
//! [`Error`]. Stages mutate values only while they own them and hand out
//! immutable snapshots afterwards.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::str::FromStr;

use rustc_hash::FxHashSet;

use crate::error::{Error, Result};

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn get(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis {axis} out of range"),
        }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    /// Rounds every component to the nearest `f32`. Point clouds are kept at
    /// single precision so they persist without loss.
    pub fn to_f32_precision(self) -> Vec3 {
        Vec3::new(self.x as f32 as f64, self.y as f32 as f64, self.z as f32 as f64)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Arithmetic mean of a point set; `None` when empty.
pub fn mean(points: &[Vec3]) -> Option<Vec3> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Vec3::ZERO, |acc, &p| acc + p);
    Some(sum / points.len() as f64)
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: [[f64; 3]; 3],
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: [[f64; 3]; 3], translation: Vec3) -> Result<Self> {
        let r = rotation;
        for (i, row) in r.iter().enumerate() {
            for (j, _) in row.iter().enumerate() {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if !dot.is_finite() || (dot - expect).abs() > UNIT_TOLERANCE {
                    return Err(Error::InvalidInput("pose rotation is not orthonormal".into()));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidInput("pose rotation must have determinant +1".into()));
        }
        if !translation.is_finite() {
            return Err(Error::InvalidInput("pose translation not finite".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: Vec3::ZERO,
        }
    }

    /// Builds a pose from the camera axes expressed in world coordinates.
    pub fn from_axes(right: Vec3, down: Vec3, forward: Vec3, origin: Vec3) -> Result<Self> {
        let rotation = [
            [right.x, down.x, forward.x],
            [right.y, down.y, forward.y],
            [right.z, down.z, forward.z],
        ];
        Pose::new(rotation, origin)
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    pub fn transform(&self, p: Vec3) -> Vec3 {
        self.rotate(p) + self.translation
    }

    /// World point into the camera frame.
    pub fn inverse_transform(&self, p: Vec3) -> Vec3 {
        let d = p - self.translation;
        let r = &self.rotation;
        Vec3::new(
            r[0][0] * d.x + r[1][0] * d.y + r[2][0] * d.z,
            r[0][1] * d.x + r[1][1] * d.y + r[2][1] * d.z,
            r[0][2] * d.x + r[1][2] * d.y + r[2][2] * d.z,
        )
    }

    /// Row-major rotation followed by translation.
    pub fn to_values(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = self.translation;
        [
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2], t.x, t.y, t.z,
        ]
    }

    pub fn from_values(v: &[f64; 12]) -> Result<Self> {
        Pose::new(
            [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]],
            Vec3::new(v[9], v[10], v[11]),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(Error::InvalidInput("principal point must lie inside the image".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }
}

/// Unit-norm feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values`; fails on empty, non-finite or zero vectors.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("embedding"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("embedding has non-finite values".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate("zero-length embedding"));
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Wraps values that are already unit length (e.g. read back from disk).
    /// Values are renormalized only if they drift past the tolerance.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() <= UNIT_TOLERANCE && values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Embedding::new(values)
        }
    }

    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StructClass {
    Wall,
    Door,
    Window,
    Ceiling,
    Floor,
}

impl StructClass {
    pub const ALL: [StructClass; 5] = [
        StructClass::Wall,
        StructClass::Door,
        StructClass::Window,
        StructClass::Ceiling,
        StructClass::Floor,
    ];

    pub fn id(self) -> u8 {
        match self {
            StructClass::Wall => 0,
            StructClass::Door => 1,
            StructClass::Window => 2,
            StructClass::Ceiling => 3,
            StructClass::Floor => 4,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StructClass::Wall => "wall",
            StructClass::Door => "door",
            StructClass::Window => "window",
            StructClass::Ceiling => "ceiling",
            StructClass::Floor => "floor",
        }
    }

    /// Doors and windows count as wall structure.
    pub fn is_wall_like(self) -> bool {
        matches!(self, StructClass::Wall | StructClass::Door | StructClass::Window)
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, StructClass::Ceiling | StructClass::Floor)
    }
}

impl fmt::Display for StructClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StructClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown structural class `{s}`")))
    }
}

/// A planar piece of building structure.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralSegment {
    pub class: StructClass,
    pub points: Vec<Vec3>,
    pub centroid: Vec3,
    pub normal: Vec3,
}

impl StructuralSegment {
    pub fn new(class: StructClass, points: Vec<Vec3>, centroid: Vec3, normal: Vec3) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidInput("structural segment needs at least 3 points".into()));
        }
        if (normal.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidInput("segment normal is not unit length".into()));
        }
        let m = mean(&points).expect("non-empty");
        let scale = 1.0 + m.norm();
        if (m - centroid).norm() > 1e-9 * scale {
            return Err(Error::InvalidInput(
                "segment centroid is not the mean of its points".into(),
            ));
        }
        Ok(Self {
            class,
            points,
            centroid,
            normal,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !(min.x <= max.x && min.y <= max.y && min.z <= max.z) {
            return Err(Error::InvalidInput("aabb min exceeds max".into()));
        }
        Ok(Self { min, max })
    }

    pub fn point(p: Vec3) -> Self {
        Self { min: p, max: p }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn expand(&mut self, p: Vec3) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: self.min.min(o.min),
            max: self.max.max(o.max),
        }
    }

    pub fn contains_xy(&self, p: Vec3) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Euclidean distance from `p` to the box footprint; zero inside.
    pub fn distance_xy(&self, p: Vec3) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        (dx * dx + dy * dy).sqrt()
    }

    pub fn overlap_area_xy(&self, o: &Aabb) -> f64 {
        let w = self.max.x.min(o.max.x) - self.min.x.max(o.min.x);
        let h = self.max.y.min(o.max.y) - self.min.y.max(o.min.y);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }
}

/// Integer voxel coordinate.
pub type Cell = [i32; 3];

/// Set of occupied voxel cells at a fixed voxel size.
#[derive(Debug, Clone)]
pub struct VoxelSet {
    pub voxel_size: f64,
    pub cells: FxHashSet<Cell>,
}

impl VoxelSet {
    pub fn empty(voxel_size: f64) -> Self {
        Self {
            voxel_size,
            cells: FxHashSet::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_of(&self, p: Vec3) -> Cell {
        cell_of(p, self.voxel_size)
    }

    pub fn sorted_cells(&self) -> Vec<Cell> {
        let mut cells: Vec<Cell> = self.cells.iter().copied().collect();
        cells.sort_unstable();
        cells
    }
}

impl PartialEq for VoxelSet {
    fn eq(&self, o: &Self) -> bool {
        self.voxel_size == o.voxel_size && self.cells == o.cells
    }
}

pub fn cell_of(p: Vec3, voxel_size: f64) -> Cell {
    [
        (p.x / voxel_size).floor() as i32,
        (p.y / voxel_size).floor() as i32,
        (p.z / voxel_size).floor() as i32,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Room {
    pub id: u32,
    pub wall_segments: Vec<StructuralSegment>,
    pub horizontal_segments: Vec<StructuralSegment>,
    pub bbox: Aabb,
    pub label: Option<String>,
    pub feature: Option<Embedding>,
}

/// Identifies one mask within the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObsKey {
    pub frame_id: u32,
    pub mask_id: u32,
}

impl fmt::Display for ObsKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.frame_id, self.mask_id)
    }
}

/// A 2D mask lifted into the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskObservation {
    pub frame_id: u32,
    pub mask_id: u32,
    pub points: Vec<Vec3>,
    pub embeddings: [Embedding; 3],
    pub fused: Embedding,
    pub room_id: Option<u32>,
}

impl MaskObservation {
    pub fn key(&self) -> ObsKey {
        ObsKey {
            frame_id: self.frame_id,
            mask_id: self.mask_id,
        }
    }
}

/// A fused object.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u32,
    pub points: Vec<Vec3>,
    pub voxels: VoxelSet,
    pub embedding: Embedding,
    /// Cumulative number of merged observation points.
    pub weight: u64,
    pub room_id: u32,
    pub bbox: Aabb,
    /// Observations merged into this instance, in merge order.
    pub observations: Vec<ObsKey>,
}

impl Instance {
    pub fn centroid(&self) -> Vec3 {
        mean(&self.points).unwrap_or(self.bbox.center())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildingNode {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    Building(u32),
    Room(u32),
    Instance(u32),
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Building(id) => write!(f, "building {id}"),
            NodeRef::Room(id) => write!(f, "room {id}"),
            NodeRef::Instance(id) => write!(f, "instance {id}"),
        }
    }
}

/// `child` belongs to `parent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub child: NodeRef,
    pub parent: NodeRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub voxel_size: f64,
    pub dim: usize,
    pub building: BuildingNode,
    pub rooms: Vec<Room>,
    pub instances: Vec<Instance>,
    pub edges: Vec<Edge>,
}

impl SceneGraph {
    pub fn room(&self, id: u32) -> Option<&Room> {
        self.rooms.iter().find(|r| r.id == id)
    }

    /// Room that `instance` belongs to, following its belongs-to edge.
    pub fn parent_room(&self, instance: u32) -> Option<u32> {
        self.edges.iter().find_map(|e| match (e.child, e.parent) {
            (NodeRef::Instance(i), NodeRef::Room(r)) if i == instance => Some(r),
            _ => None,
        })
    }
}

/// Pipeline parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Side length of the square region cut around each scan position (m).
    pub block_size: f64,
    /// Minimum voxel overlap for merging wall segments.
    pub wall_overlap: f64,
    /// Minimum |cos| between wall normals for a collinear merge.
    pub wall_alignment: f64,
    /// Maximum centroid height difference between floor/ceiling pieces (m).
    pub height_tolerance: f64,
    /// Minimum voxel overlap between an instance and an observation.
    pub geometric_threshold: f64,
    /// Minimum cosine similarity between an instance and an observation.
    pub semantic_threshold: f64,
    /// Weights of the masked-region, binary-mask and boundary features.
    pub modality_weights: [f64; 3],
    pub voxel_size: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub min_mask_points: usize,
    pub workers: usize,
    /// Admit perpendicular wall pieces that touch at a corner.
    pub corner_rule: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            block_size: 10.0,
            wall_overlap: 0.1,
            wall_alignment: 0.8,
            height_tolerance: 0.3,
            geometric_threshold: 0.3,
            semantic_threshold: 0.8,
            modality_weights: [0.5, 0.25, 0.25],
            voxel_size: 0.1,
            dbscan_eps: 0.15,
            dbscan_min_pts: 8,
            min_mask_points: 20,
            workers: 8,
            corner_rule: true,
        }
    }
}

/// Keys accepted in config files (and mirrored by CLI flags).
pub const CONFIG_KEYS: [&str; 15] = [
    "block_size",
    "tau1",
    "tau2",
    "tau3",
    "tau_g",
    "tau_s",
    "alpha1",
    "alpha2",
    "alpha3",
    "voxel_size",
    "dbscan_eps",
    "dbscan_min_pts",
    "min_mask_points",
    "workers",
    "corner_rule",
];

fn parse_value<T: FromStr>(field: &'static str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(field, format!("cannot parse `{value}`")))
}

fn parse_bool(field: &'static str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::config(field, format!("cannot parse `{other}` as bool"))),
    }
}

impl Config {
    /// Sets one field by its config-file key. Does not validate.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "block_size" => self.block_size = parse_value("block_size", value)?,
            "tau1" => self.wall_overlap = parse_value("tau1", value)?,
            "tau2" => self.wall_alignment = parse_value("tau2", value)?,
            "tau3" => self.height_tolerance = parse_value("tau3", value)?,
            "tau_g" => self.geometric_threshold = parse_value("tau_g", value)?,
            "tau_s" => self.semantic_threshold = parse_value("tau_s", value)?,
            "alpha1" => self.modality_weights[0] = parse_value("alpha1", value)?,
            "alpha2" => self.modality_weights[1] = parse_value("alpha2", value)?,
            "alpha3" => self.modality_weights[2] = parse_value("alpha3", value)?,
            "voxel_size" => self.voxel_size = parse_value("voxel_size", value)?,
            "dbscan_eps" => self.dbscan_eps = parse_value("dbscan_eps", value)?,
            "dbscan_min_pts" => self.dbscan_min_pts = parse_value("dbscan_min_pts", value)?,
            "min_mask_points" => self.min_mask_points = parse_value("min_mask_points", value)?,
            "workers" => self.workers = parse_value("workers", value)?,
            "corner_rule" => self.corner_rule = parse_bool("corner_rule", value)?,
            _ => {
                return Err(Error::InvalidInput(format!("unknown config key `{key}`")));
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("config line {}: expected `key = value`", lineno + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        validate_config(cfg)
    }

    pub fn to_text(&self) -> String {
        let a = self.modality_weights;
        format!(
            "block_size = {}\ntau1 = {}\ntau2 = {}\ntau3 = {}\ntau_g = {}\ntau_s = {}\n\
             alpha1 = {}\nalpha2 = {}\nalpha3 = {}\nvoxel_size = {}\ndbscan_eps = {}\n\
             dbscan_min_pts = {}\nmin_mask_points = {}\nworkers = {}\ncorner_rule = {}\n",
            self.block_size,
            self.wall_overlap,
            self.wall_alignment,
            self.height_tolerance,
            self.geometric_threshold,
            self.semantic_threshold,
            a[0],
            a[1],
            a[2],
            self.voxel_size,
            self.dbscan_eps,
            self.dbscan_min_pts,
            self.min_mask_points,
            self.workers,
            self.corner_rule,
        )
    }
}

fn unit_interval(field: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(field, format!("{v} is outside [0, 1]")))
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("{v} must be > 0")))
    }
}

/// Returns `cfg` unchanged if every constraint holds, else the first
/// violation by field name.
pub fn validate_config(cfg: Config) -> Result<Config> {
    positive("block_size", cfg.block_size)?;
    unit_interval("tau1", cfg.wall_overlap)?;
    unit_interval("tau2", cfg.wall_alignment)?;
    positive("tau3", cfg.height_tolerance)?;
    unit_interval("tau_g", cfg.geometric_threshold)?;
    unit_interval("tau_s", cfg.semantic_threshold)?;
    for (field, w) in ["alpha1", "alpha2", "alpha3"].into_iter().zip(cfg.modality_weights) {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::config(field, format!("{w} must be >= 0")));
        }
    }
    let sum: f64 = cfg.modality_weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config("alpha", "alpha weights must sum to 1"));
    }
    positive("voxel_size", cfg.voxel_size)?;
    positive("dbscan_eps", cfg.dbscan_eps)?;
    if cfg.dbscan_min_pts < 1 {
        return Err(Error::config("dbscan_min_pts", "must be >= 1"));
    }
    if cfg.workers < 1 {
        return Err(Error::config("workers", "must be >= 1"));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = validate_config(Config::default()).unwrap();
        assert_eq!(cfg.geometric_threshold, 0.3);
        assert_eq!(cfg.semantic_threshold, 0.8);
    }

    #[test]
    fn alpha_weights_checked() {
        let mut cfg = Config {
            modality_weights: [0.5, 0.3, 0.2],
            ..Config::default()
        };
        assert_eq!(validate_config(cfg.clone()).unwrap(), cfg);

        cfg.modality_weights = [1.0, 0.0, 0.0];
        assert!(validate_config(cfg.clone()).is_ok());

        cfg.modality_weights = [0.5, 0.5, 0.5];
        let err = validate_config(cfg).unwrap_err().to_string();
        assert!(err.contains("alpha weights must sum to 1"), "{err}");
    }

    #[test]
    fn first_violation_names_field() {
        let cfg = Config {
            geometric_threshold: 1.5,
            voxel_size: -1.0,
            ..Config::default()
        };
        let err = validate_config(cfg).unwrap_err().to_string();
        assert!(err.contains("tau_g"), "{err}");
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = Config {
            geometric_threshold: 0.25,
            corner_rule: false,
            workers: 3,
            ..Config::default()
        };
        let back = Config::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_text_partial_and_comments() {
        let cfg = Config::from_text("# thresholds\n tau_g = 0.4\n\nworkers=2 # inline\n").unwrap();
        assert_eq!(cfg.geometric_threshold, 0.4);
        assert_eq!(cfg.workers, 2);
        assert_eq!(cfg.semantic_threshold, 0.8);
        assert!(Config::from_text("bogus = 1").is_err());
        assert!(Config::from_text("tau_g").is_err());
    }

    #[test]
    fn embedding_normalizes() {
        let e = Embedding::new(vec![3.0, 4.0]).unwrap();
        assert!((e.norm() - 1.0).abs() < 1e-12);
        assert_eq!(e.values(), &[0.6, 0.8]);
        assert!(Embedding::new(vec![0.0, 0.0]).is_err());
        assert!(Embedding::new(vec![]).is_err());
    }

    #[test]
    fn pose_validation() {
        assert!(Pose::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]], Vec3::ZERO).is_err());
        assert!(Pose::new([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], Vec3::ZERO).is_err());
        let p = Pose::new(
            [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            Vec3::new(1.0, 2.0, 3.0),
        )
        .unwrap();
        let q = Vec3::new(0.3, -0.7, 2.0);
        let back = p.inverse_transform(p.transform(q));
        assert!((back - q).norm() < 1e-12);
        assert_eq!(Pose::from_values(&p.to_values()).unwrap(), p);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(100.0, 100.0, 80.0, 60.0, 160, 120).is_ok());
        assert!(CameraIntrinsics::new(0.0, 100.0, 80.0, 60.0, 160, 120).is_err());
        assert!(CameraIntrinsics::new(100.0, 100.0, 160.0, 60.0, 160, 120).is_err());
    }

    #[test]
    fn segment_invariants() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let c = mean(&pts).unwrap();
        let n = Vec3::new(0.0, 0.0, 1.0);
        assert!(StructuralSegment::new(StructClass::Floor, pts.clone(), c, n).is_ok());
        assert!(StructuralSegment::new(StructClass::Floor, pts[..2].to_vec(), c, n).is_err());
        assert!(StructuralSegment::new(StructClass::Floor, pts.clone(), Vec3::ZERO, n).is_err());
        assert!(StructuralSegment::new(StructClass::Floor, pts, c, n * 2.0).is_err());
    }

    #[test]
    fn struct_class_ids_round_trip() {
        for c in StructClass::ALL {
            assert_eq!(StructClass::from_id(c.id()), Some(c));
            assert_eq!(c.as_str().parse::<StructClass>().unwrap(), c);
        }
        assert_eq!(StructClass::from_id(9), None);
    }

    #[test]
    fn aabb_queries() {
        let b = Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 1.0, 3.0)).unwrap();
        assert_eq!(b.volume(), 6.0);
        assert!(b.contains_xy(Vec3::new(1.0, 0.5, 99.0)));
        assert_eq!(b.distance_xy(Vec3::new(5.0, 5.0, 0.0)), 5.0);
        let o = Aabb::new(Vec3::new(1.0, 0.5, 0.0), Vec3::new(4.0, 4.0, 1.0)).unwrap();
        assert_eq!(b.overlap_area_xy(&o), 0.5);
        assert!(Aabb::new(Vec3::new(1.0, 0.0, 0.0), Vec3::ZERO).is_err());
    }
}
