//! Deterministic synthetic buildings: a grid of rooms joined by doorways,
//! furnished with boxes and cylinders, observed by a camera circling each room
//! centre. Produces a full observation sequence plus its ground truth.

mod render;

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::geometry::{project_mask, Pixel};
use crate::model::{Aabb, CameraIntrinsics, Embedding, ObsKey, Pose, StructClass, Vec3};
use crate::semantics::{PrototypeSet, ROOM_LABELS};
use crate::sequence::{write_sequence, Frame, GroundTruth, GtInstance, GtRoom, MaskRecord, Sequence, StructPoint};

use render::{render, Shape, Solid};

/// Object classes per room type, in `ROOM_LABELS` order.
pub const ROOM_CLASSES: [[&str; 4]; 5] = [
    ["fridge", "oven", "sink", "kettle"],
    ["desk", "monitor", "tv", "bookshelf"],
    ["dining table", "chair", "sideboard", "vase"],
    ["bed", "wardrobe", "nightstand", "lamp"],
    ["toilet", "bathtub", "washbasin", "towel rack"],
];

pub const WALL_THICKNESS: f64 = 0.3;
pub const DOOR_HEIGHT: f64 = 2.0;
const WINDOW_SIZE: f64 = 1.0;
const WINDOW_SILL: f64 = 1.0;
/// Spacing of structural surface samples.
const SAMPLE_STEP: f64 = 0.05;
/// Offset of the sample grid from the origin; keeps samples off voxel
/// boundaries.
const SAMPLE_OFFSET: f64 = 0.0125;
const CAMERA_HEIGHT: f64 = 1.4;
const CAMERA_RADIUS: f64 = 0.5;
const CAMERA_PITCH_DEG: f64 = 35.0;
const WALL_MARGIN: f64 = 0.25;
const OBJECT_CLEARANCE: f64 = 0.3;
/// Objects keep this far from the room centre, where the camera circles.
const CENTER_KEEPOUT: f64 = 1.1;
const DOOR_KEEPOUT: f64 = 1.0;
const PLACEMENT_TRIES: usize = 2000;
/// Masks smaller than this are not reported.
const MIN_MASK_PIXELS: usize = 10;

/// Objects cut by the image border are not reported, like a detector that
/// only fires on whole objects.
fn touches_border(pixels: &[Pixel], intr: &CameraIntrinsics) -> bool {
    pixels
        .iter()
        .any(|p| p.u == 0 || p.v == 0 || p.u + 1 == intr.width || p.v + 1 == intr.height)
}
/// Ground-truth point clouds keep one point per cell of this size.
const GT_DEDUP: f64 = 0.025;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub rooms_x: u32,
    pub rooms_y: u32,
    pub room_size: f64,
    pub wall_height: f64,
    pub door_width: f64,
    pub objects_per_room: u32,
    pub dim: usize,
    /// Standard deviation of the per-observation embedding perturbation.
    pub noise_sigma: f64,
    pub frames_per_room: u32,
    /// Side of the square region whose structure each scan reports.
    pub block_size: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            rooms_x: 2,
            rooms_y: 2,
            room_size: 4.0,
            wall_height: 2.5,
            door_width: 1.0,
            objects_per_room: 3,
            dim: 32,
            noise_sigma: 0.0,
            frames_per_room: 16,
            block_size: 10.0,
            seed: 0,
        }
    }
}

pub const SPEC_KEYS: [&str; 11] = [
    "rooms_x",
    "rooms_y",
    "room_size",
    "wall_height",
    "door_width",
    "objects_per_room",
    "dim",
    "noise_sigma",
    "frames_per_room",
    "block_size",
    "seed",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("scene spec: cannot parse {key} = {value}")))
}

impl SceneSpec {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "rooms_x" => self.rooms_x = parse_value(key, value)?,
            "rooms_y" => self.rooms_y = parse_value(key, value)?,
            "room_size" => self.room_size = parse_value(key, value)?,
            "wall_height" => self.wall_height = parse_value(key, value)?,
            "door_width" => self.door_width = parse_value(key, value)?,
            "objects_per_room" => self.objects_per_room = parse_value(key, value)?,
            "dim" => self.dim = parse_value(key, value)?,
            "noise_sigma" => self.noise_sigma = parse_value(key, value)?,
            "frames_per_room" => self.frames_per_room = parse_value(key, value)?,
            "block_size" => self.block_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(Error::InvalidInput(format!("scene spec: unknown key `{key}`"))),
        }
        Ok(())
    }

    /// `key = value` lines over the defaults; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("scene spec: expected key = value, got `{line}`")))?;
            spec.set(k.trim(), v)?;
        }
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "rooms_x = {}", self.rooms_x);
        let _ = writeln!(s, "rooms_y = {}", self.rooms_y);
        let _ = writeln!(s, "room_size = {}", self.room_size);
        let _ = writeln!(s, "wall_height = {}", self.wall_height);
        let _ = writeln!(s, "door_width = {}", self.door_width);
        let _ = writeln!(s, "objects_per_room = {}", self.objects_per_room);
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "noise_sigma = {}", self.noise_sigma);
        let _ = writeln!(s, "frames_per_room = {}", self.frames_per_room);
        let _ = writeln!(s, "block_size = {}", self.block_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("scene spec: {m}")));
        let inner = self.room_size - WALL_THICKNESS;
        if self.rooms_x == 0 || self.rooms_y == 0 {
            return bad("the grid needs at least one room".into());
        }
        if !(self.room_size >= 2.5 && self.room_size.is_finite()) {
            return bad("room_size must be at least 2.5 m".into());
        }
        if !(self.wall_height > DOOR_HEIGHT + 0.2 && self.wall_height.is_finite()) {
            return bad(format!("wall_height must exceed {} m", DOOR_HEIGHT + 0.2));
        }
        if !(self.door_width > 0.0 && self.door_width <= inner - 1.0) {
            return bad("door_width must be positive and leave wall on both sides".into());
        }
        let needed = ROOM_LABELS.len() * 5;
        if self.dim < needed {
            return bad(format!("dim must be at least {needed}"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative".into());
        }
        if self.frames_per_room == 0 {
            return bad("frames_per_room must be at least 1".into());
        }
        if !(self.block_size > 0.0) {
            return bad("block_size must be positive".into());
        }
        Ok(())
    }

    pub fn room_count(&self) -> u32 {
        self.rooms_x * self.rooms_y
    }
}

/// Room-type prototypes plus the object vocabulary derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub room_prototypes: PrototypeSet,
    pub vocab: PrototypeSet,
}

/// Class embeddings are `0.5 * prototype + sqrt(0.75) * r` with every `r`
/// orthonormal to all prototypes and to each other: a class has cosine 0.5
/// with its room type, 0.25 with siblings and 0 with everything else.
pub fn catalog(dim: usize, seed: u64) -> Result<Catalog> {
    let n = ROOM_LABELS.len() * 5;
    if dim < n {
        return Err(Error::InvalidInput(format!("catalog needs dim >= {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00ca_7a10);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let protos: Vec<(String, Embedding)> = ROOM_LABELS
        .iter()
        .zip(&basis)
        .map(|(l, b)| Ok((l.to_string(), Embedding::new(b.clone())?)))
        .collect::<Result<_>>()?;
    let mut classes = Vec::new();
    for (t, labels) in ROOM_CLASSES.iter().enumerate() {
        for (k, label) in labels.iter().enumerate() {
            let r = &basis[ROOM_LABELS.len() + t * 4 + k];
            let v: Vec<f64> = basis[t]
                .iter()
                .zip(r)
                .map(|(p, r)| 0.5 * p + 0.75f64.sqrt() * r)
                .collect();
            classes.push((label.to_string(), Embedding::new(v)?));
        }
    }
    Ok(Catalog {
        room_prototypes: PrototypeSet::new(protos)?,
        vocab: PrototypeSet::new(classes)?,
    })
}

/// Perturbs `e` in its tangent space with isotropic Gaussian noise of total
/// standard deviation `sigma`, then renormalizes.
pub fn perturb(e: &Embedding, sigma: f64, rng: &mut impl Rng) -> Embedding {
    if sigma == 0.0 {
        return e.clone();
    }
    let d = e.dim();
    let normal = Normal::new(0.0, sigma / ((d - 1).max(1) as f64).sqrt()).expect("finite sigma");
    let mut g: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
    let along: f64 = g.iter().zip(e.values()).map(|(a, b)| a * b).sum();
    g.iter_mut().zip(e.values()).for_each(|(x, v)| *x -= along * v);
    Embedding::new(e.values().iter().zip(&g).map(|(v, x)| v + x).collect()).unwrap_or_else(|_| e.clone())
}

/// The camera used for every generated sequence.
pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(80.0, 80.0, 80.0, 60.0, 160, 120).expect("valid intrinsics")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedObject {
    pub id: u32,
    pub room_id: u32,
    pub class: usize,
    pub(crate) shape: Shape,
}

impl PlantedObject {
    pub fn center(&self) -> Vec3 {
        self.shape.center()
    }

    pub fn bounds(&self) -> Aabb {
        let (a, b) = self.shape.bounds();
        Aabb { min: a, max: b }
    }

    /// Ray parameter at which `origin + t dir` first enters the object,
    /// beyond the near plane.
    pub fn ray_hit(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        self.shape.hit(origin, dir)
    }
}

/// Room geometry helpers for a validated spec.
struct Layout<'a> {
    spec: &'a SceneSpec,
}

impl Layout<'_> {
    fn origin(&self, room: u32) -> (f64, f64) {
        let s = self.spec.room_size;
        (
            (room % self.spec.rooms_x) as f64 * s,
            (room / self.spec.rooms_x) as f64 * s,
        )
    }

    fn center(&self, room: u32) -> Vec3 {
        let (x0, y0) = self.origin(room);
        let h = self.spec.room_size / 2.0;
        Vec3::new(x0 + h, y0 + h, 0.0)
    }

    fn interior(&self, room: u32) -> Aabb {
        let (x0, y0) = self.origin(room);
        let t = WALL_THICKNESS / 2.0;
        let s = self.spec.room_size;
        Aabb {
            min: Vec3::new(x0 + t, y0 + t, 0.0),
            max: Vec3::new(x0 + s - t, y0 + s - t, self.spec.wall_height),
        }
    }

    /// Doorway centres (on the wall line, floor level) of a room.
    fn doorways(&self, room: u32) -> Vec<Vec3> {
        let (i, j) = (room % self.spec.rooms_x, room / self.spec.rooms_x);
        let c = self.center(room);
        let h = self.spec.room_size / 2.0;
        let mut out = Vec::new();
        if i > 0 {
            out.push(Vec3::new(c.x - h, c.y, 0.0));
        }
        if i + 1 < self.spec.rooms_x {
            out.push(Vec3::new(c.x + h, c.y, 0.0));
        }
        if j > 0 {
            out.push(Vec3::new(c.x, c.y - h, 0.0));
        }
        if j + 1 < self.spec.rooms_y {
            out.push(Vec3::new(c.x, c.y + h, 0.0));
        }
        out
    }

    /// Wall solids: one slab per grid line, cut at the doorways, with lintels.
    fn wall_solids(&self) -> Vec<Solid> {
        let sp = self.spec;
        let (s, t, hgt) = (sp.room_size, WALL_THICKNESS / 2.0, sp.wall_height);
        let mut out = Vec::new();
        for (axis, lines, cells) in [(0usize, sp.rooms_x, sp.rooms_y), (1, sp.rooms_y, sp.rooms_x)] {
            let span = cells as f64 * s;
            for line in 0..=lines {
                let at = line as f64 * s;
                let interior = line > 0 && line < lines;
                // Pieces along the line, as (from, to, z0).
                let mut pieces: Vec<(f64, f64, f64)> = Vec::new();
                let mut from = -t;
                if interior {
                    for c in 0..cells {
                        let mid = c as f64 * s + s / 2.0;
                        let (a, b) = (mid - sp.door_width / 2.0, mid + sp.door_width / 2.0);
                        pieces.push((from, a, 0.0));
                        pieces.push((a, b, DOOR_HEIGHT));
                        from = b;
                    }
                }
                pieces.push((from, span + t, 0.0));
                for (a, b, z0) in pieces {
                    let (min, max) = if axis == 0 {
                        (Vec3::new(at - t, a, z0), Vec3::new(at + t, b, hgt))
                    } else {
                        (Vec3::new(a, at - t, z0), Vec3::new(b, at + t, hgt))
                    };
                    out.push(Solid {
                        shape: Shape::Cuboid { min, max },
                        owner: None,
                    });
                }
            }
        }
        out
    }

    /// Labelled samples of every interior surface of a room.
    fn structure(&self, room: u32) -> Vec<StructPoint> {
        let sp = self.spec;
        let box_ = self.interior(room);
        let (i, j) = (room % sp.rooms_x, room / sp.rooms_x);
        let c = self.center(room);
        let mut out = Vec::new();
        let grid = |lo: f64, hi: f64| -> Vec<f64> {
            let k0 = ((lo - SAMPLE_OFFSET) / SAMPLE_STEP).ceil() as i64;
            let k1 = ((hi - SAMPLE_OFFSET) / SAMPLE_STEP).floor() as i64;
            (k0..=k1)
                .map(|k| k as f64 * SAMPLE_STEP + SAMPLE_OFFSET)
                .filter(|v| *v > lo && *v < hi)
                .collect()
        };
        let xs = grid(box_.min.x, box_.max.x);
        let ys = grid(box_.min.y, box_.max.y);
        let zs = grid(0.0, sp.wall_height);
        for &x in &xs {
            for &y in &ys {
                out.push(StructPoint {
                    position: Vec3::new(x, y, 0.0),
                    class: StructClass::Floor,
                });
                out.push(StructPoint {
                    position: Vec3::new(x, y, sp.wall_height),
                    class: StructClass::Ceiling,
                });
            }
        }
        // Window edges sit a little off the voxel grid so that window and
        // wall samples share boundary voxels.
        let win = |mid: f64| {
            let lo = ((mid - WINDOW_SIZE / 2.0) / 0.1).round() * 0.1 + 0.0375;
            (lo, lo + WINDOW_SIZE)
        };
        let win_z = (WINDOW_SILL + 0.0375, WINDOW_SILL + 0.0375 + WINDOW_SIZE);
        // (fixed axis, coordinate, shared with a neighbour)
        let faces = [
            (0usize, box_.min.x, i > 0),
            (0, box_.max.x, i + 1 < sp.rooms_x),
            (1, box_.min.y, j > 0),
            (1, box_.max.y, j + 1 < sp.rooms_y),
        ];
        for (axis, at, shared) in faces {
            let (along, mid) = if axis == 0 { (&ys, c.y) } else { (&xs, c.x) };
            let (wa, wb) = win(mid);
            for &a in along {
                for &z in &zs {
                    let in_door = shared && (a - mid).abs() < sp.door_width / 2.0 && z < DOOR_HEIGHT;
                    if in_door {
                        continue;
                    }
                    let in_window = !shared && a > wa && a < wb && z > win_z.0 && z < win_z.1;
                    let position = if axis == 0 {
                        Vec3::new(at, a, z)
                    } else {
                        Vec3::new(a, at, z)
                    };
                    out.push(StructPoint {
                        position,
                        class: if in_window {
                            StructClass::Window
                        } else {
                            StructClass::Wall
                        },
                    });
                }
            }
        }
        for p in &mut out {
            p.position = p.position.to_f32_precision();
        }
        out
    }

    /// Camera pose `k` of `n` on the circle around a room centre, looking
    /// outward and down.
    fn camera(&self, room: u32, k: u32, n: u32) -> Pose {
        let c = self.center(room);
        let theta = std::f64::consts::TAU * k as f64 / n as f64;
        let (s, co) = theta.sin_cos();
        let pitch = CAMERA_PITCH_DEG.to_radians();
        let origin = Vec3::new(c.x + CAMERA_RADIUS * co, c.y + CAMERA_RADIUS * s, CAMERA_HEIGHT);
        let forward = Vec3::new(co * pitch.cos(), s * pitch.cos(), -pitch.sin());
        let right = Vec3::new(s, -co, 0.0);
        let down = forward.cross(right);
        Pose::from_axes(right, down, forward, origin).expect("orthonormal camera axes")
    }
}

fn rect_distance(a: (Vec3, Vec3), b: (Vec3, Vec3)) -> f64 {
    let dx = (b.0.x - a.1.x).max(a.0.x - b.1.x).max(0.0);
    let dy = (b.0.y - a.1.y).max(a.0.y - b.1.y).max(0.0);
    dx.hypot(dy)
}

fn point_rect_distance(p: Vec3, r: (Vec3, Vec3)) -> f64 {
    rect_distance((p, p), r)
}

fn place_objects(spec: &SceneSpec, layout: &Layout, rng: &mut ChaCha8Rng) -> Result<Vec<PlantedObject>> {
    let mut out = Vec::new();
    for room in 0..spec.room_count() {
        let kind = room as usize % ROOM_LABELS.len();
        let start = rng.random_range(0..4usize);
        let inner = layout.interior(room);
        let center = layout.center(room);
        let doors = layout.doorways(room);
        let mut placed: Vec<(Vec3, Vec3)> = Vec::new();
        for k in 0..spec.objects_per_room as usize {
            let class = kind * 4 + (start + k) % 4;
            let mut shape = None;
            for _ in 0..PLACEMENT_TRIES {
                let height = rng.random_range(0.3..=1.0);
                let cylinder = rng.random_bool(0.5);
                let (hx, hy) = if cylinder {
                    let r = rng.random_range(0.15..=0.4);
                    (r, r)
                } else {
                    (rng.random_range(0.15..=0.4), rng.random_range(0.15..=0.4))
                };
                let lo = inner.min + Vec3::new(WALL_MARGIN + hx, WALL_MARGIN + hy, 0.0);
                let hi = inner.max - Vec3::new(WALL_MARGIN + hx, WALL_MARGIN + hy, 0.0);
                if lo.x >= hi.x || lo.y >= hi.y {
                    continue;
                }
                let (x, y) = (rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
                let fp = (Vec3::new(x - hx, y - hy, 0.0), Vec3::new(x + hx, y + hy, 0.0));
                let ok = point_rect_distance(center, fp) >= CENTER_KEEPOUT
                    && doors.iter().all(|d| point_rect_distance(*d, fp) >= DOOR_KEEPOUT)
                    && placed.iter().all(|q| rect_distance(*q, fp) >= OBJECT_CLEARANCE);
                if ok {
                    placed.push(fp);
                    shape = Some(if cylinder {
                        Shape::Cylinder {
                            cx: x,
                            cy: y,
                            radius: hx,
                            z0: 0.0,
                            z1: height,
                        }
                    } else {
                        Shape::Cuboid {
                            min: Vec3::new(x - hx, y - hy, 0.0),
                            max: Vec3::new(x + hx, y + hy, height),
                        }
                    });
                    break;
                }
            }
            let shape = shape.ok_or_else(|| {
                Error::SceneOverfull(format!("room {room} cannot hold {} objects", spec.objects_per_room))
            })?;
            out.push(PlantedObject {
                id: out.len() as u32,
                room_id: room,
                class,
                shape,
            });
        }
    }
    Ok(out)
}

/// A generated scene: the sequence, its ground truth and the planted objects.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub sequence: Sequence,
    pub truth: GroundTruth,
    pub objects: Vec<PlantedObject>,
}

/// Builds the scene and renders its sequence. The first frame of every room
/// is a scan frame carrying the labelled structure within the block around
/// the camera.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let layout = Layout { spec };
    let cat = catalog(spec.dim, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let objects = place_objects(spec, &layout, &mut rng)?;
    let class_emb: Vec<&Embedding> = cat.vocab.entries().iter().map(|(_, e)| e).collect();

    let mut solids = layout.wall_solids();
    solids.extend(objects.iter().map(|o| Solid {
        shape: o.shape,
        owner: Some(o.id),
    }));
    let structure: Vec<StructPoint> = (0..spec.room_count()).flat_map(|r| layout.structure(r)).collect();

    let intr = default_intrinsics();
    let mut frames = Vec::new();
    let mut gt_points: Vec<Vec<Vec3>> = vec![Vec::new(); objects.len()];
    let mut gt_seen: Vec<FxHashSet<[i64; 3]>> = vec![FxHashSet::default(); objects.len()];
    let mut masks_gt = Vec::new();
    for room in 0..spec.room_count() {
        for k in 0..spec.frames_per_room {
            let id = frames.len() as u32;
            let pose = layout.camera(room, k, spec.frames_per_room);
            let r = render(&solids, spec.wall_height, &intr, &pose);
            let mut masks = Vec::new();
            for (obj, pixels) in r.objects {
                if pixels.len() < MIN_MASK_PIXELS || touches_border(&pixels, &intr) {
                    continue;
                }
                let mask_id = masks.len() as u32;
                let base = class_emb[objects[obj as usize].class];
                let embeddings = [
                    perturb(base, spec.noise_sigma, &mut rng),
                    perturb(base, spec.noise_sigma, &mut rng),
                    perturb(base, spec.noise_sigma, &mut rng),
                ];
                for p in project_mask(&r.depth, &pixels, &intr, &pose)? {
                    let cell = [
                        (p.x / GT_DEDUP).floor() as i64,
                        (p.y / GT_DEDUP).floor() as i64,
                        (p.z / GT_DEDUP).floor() as i64,
                    ];
                    if gt_seen[obj as usize].insert(cell) {
                        gt_points[obj as usize].push(p);
                    }
                }
                masks_gt.push((ObsKey { frame_id: id, mask_id }, obj));
                masks.push(MaskRecord {
                    mask_id,
                    pixels,
                    embeddings,
                });
            }
            let structs = if k == 0 {
                let o = pose.translation();
                let half = spec.block_size / 2.0;
                structure
                    .iter()
                    .filter(|s| (s.position.x - o.x).abs() <= half && (s.position.y - o.y).abs() <= half)
                    .copied()
                    .collect()
            } else {
                Vec::new()
            };
            frames.push(Frame {
                id,
                pose,
                depth: r.depth,
                masks,
                structs,
            });
        }
    }
    masks_gt.sort_unstable();
    let truth = GroundTruth {
        rooms: (0..spec.room_count())
            .map(|r| GtRoom {
                id: r,
                label: ROOM_LABELS[r as usize % ROOM_LABELS.len()].to_string(),
                bbox: layout.interior(r),
            })
            .collect(),
        instances: objects
            .iter()
            .zip(gt_points)
            .map(|(o, points)| GtInstance {
                id: o.id,
                class: cat.vocab.entries()[o.class].0.clone(),
                room_id: o.room_id,
                centroid: o.center(),
                points,
            })
            .collect(),
        masks: masks_gt,
    };
    let sequence = Sequence {
        intrinsics: intr,
        dim: spec.dim,
        vocab: cat.vocab,
        room_prototypes: cat.room_prototypes,
        frames,
    };
    Ok(Scene {
        sequence,
        truth,
        objects,
    })
}

/// Writes a generated scene to `dir`; the ground-truth sidecar only when
/// `with_truth` is set.
pub fn emit_sequence(scene: &Scene, dir: &Path, with_truth: bool) -> Result<()> {
    write_sequence(&scene.sequence, with_truth.then_some(&scene.truth), dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::cosine;

    fn small(objects: u32) -> SceneSpec {
        SceneSpec {
            rooms_x: 1,
            rooms_y: 1,
            objects_per_room: objects,
            frames_per_room: 6,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn catalog_geometry() {
        let cat = catalog(32, 3).unwrap();
        assert_eq!(cat.vocab.len(), 20);
        let v = cat.vocab.entries();
        let p = cat.room_prototypes.entries();
        for (i, (_, a)) in v.iter().enumerate() {
            assert!((cosine(a, &p[i / 4].1).unwrap() - 0.5).abs() < 1e-12);
            for (j, (_, b)) in v.iter().enumerate().skip(i + 1) {
                let want = if i / 4 == j / 4 { 0.25 } else { 0.0 };
                assert!((cosine(a, b).unwrap() - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perturbation_keeps_unit_norm_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = Embedding::basis(32, 0);
        let mut dev = 0.0;
        for _ in 0..500 {
            let p = perturb(&e, 0.1, &mut rng);
            assert!((p.norm() - 1.0).abs() < 1e-12);
            dev += (1.0 - p.values()[0].powi(2)).max(0.0);
        }
        // Tangent noise of total std 0.1: sin^2 of the angle averages ~0.01.
        let mean = dev / 500.0;
        assert!((mean - 0.01).abs() < 0.003, "{mean}");
        assert_eq!(perturb(&e, 0.0, &mut rng), e);
    }

    #[test]
    fn empty_room_has_only_structure() {
        let scene = generate_scene(&small(0)).unwrap();
        assert_eq!(scene.truth.rooms.len(), 1);
        assert!(scene.truth.instances.is_empty());
        assert!(scene.sequence.frames.iter().all(|f| f.masks.is_empty()));
        let f0 = &scene.sequence.frames[0];
        assert!(!f0.structs.is_empty());
        assert!(scene.sequence.frames[1..].iter().all(|f| f.structs.is_empty()));
        assert!(f0.depth.data.iter().all(|d| *d > 0.0));
    }

    #[test]
    fn grid_counts() {
        let spec = SceneSpec {
            objects_per_room: 3,
            frames_per_room: 4,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        assert_eq!(scene.truth.rooms.len(), 4);
        assert_eq!(scene.truth.instances.len(), 12);
        for inst in &scene.truth.instances {
            assert!(scene.truth.rooms[inst.room_id as usize].bbox.contains_xy(inst.centroid));
        }
    }

    #[test]
    fn overfull_is_rejected() {
        match generate_scene(&small(40)) {
            Err(Error::SceneOverfull(_)) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_scene(&small(3)).unwrap();
        let b = generate_scene(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&SceneSpec { seed: 9, ..small(3) }).unwrap();
        assert_ne!(a.objects, c.objects);
    }

    #[test]
    fn depth_round_trips_through_projection() {
        let spec = small(3);
        let scene = generate_scene(&spec).unwrap();
        let layout = Layout { spec: &spec };
        let mut solids = layout.wall_solids();
        solids.extend(scene.objects.iter().map(|o| Solid {
            shape: o.shape,
            owner: Some(o.id),
        }));
        let intr = default_intrinsics();
        let mut checked = 0;
        for f in &scene.sequence.frames {
            for m in &f.masks {
                let pts = project_mask(&f.depth, &m.pixels, &intr, &f.pose).unwrap();
                for (px, p) in m.pixels.iter().zip(&pts) {
                    // Exact ray hit in double precision.
                    let d = f.pose.rotate(Vec3::new(
                        (px.u as f64 - intr.cx) / intr.fx,
                        (px.v as f64 - intr.cy) / intr.fy,
                        1.0,
                    ));
                    let t = solids
                        .iter()
                        .filter_map(|s| s.shape.hit(f.pose.translation(), d))
                        .fold(f64::INFINITY, f64::min);
                    let exact = f.pose.translation() + d * t;
                    assert!((exact - *p).norm() < 1e-4);
                    checked += 1;
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn spec_text_round_trip() {
        let spec = SceneSpec {
            rooms_x: 3,
            noise_sigma: 0.1,
            seed: 42,
            ..SceneSpec::default()
        };
        assert_eq!(SceneSpec::from_text(&spec.to_text()).unwrap(), spec);
        assert!(SceneSpec::from_text("rooms_x = two").is_err());
        assert!(SceneSpec::from_text("colour = red").is_err());
        assert!(SceneSpec { dim: 8, ..spec }.validate().is_err());
    }
}
