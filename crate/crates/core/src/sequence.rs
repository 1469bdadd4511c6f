//! Observation sequence directories and their ground-truth sidecar.
//!
//! Layout: `manifest.txt`, a vocabulary and a room-prototype file (named in
//! the manifest), then per frame `frame_NNNNNN.{pose,depth,masks,structs}`.
//! Depth rasters are little-endian `f32`; structural points are 13-byte
//! records (three `f32` coordinates and a class id byte).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{DepthImage, Pixel};
use crate::model::{Aabb, CameraIntrinsics, Embedding, ObsKey, Pose, StructClass, Vec3};
use crate::semantics::PrototypeSet;

pub const MANIFEST: &str = "manifest.txt";
pub const GT_TEXT: &str = "gt.txt";
pub const GT_BLOB: &str = "gt.bin";
const SEQ_HEADER: &str = "irs-sequence v1";
const GT_HEADER: &str = "irs-gt v1";
const GT_MAGIC: &[u8; 8] = b"IRSGT\x01\0\0";

#[derive(Debug, Clone, PartialEq)]
pub struct MaskRecord {
    pub mask_id: u32,
    pub pixels: Vec<Pixel>,
    pub embeddings: [Embedding; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructPoint {
    pub position: Vec3,
    pub class: StructClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: u32,
    pub pose: Pose,
    pub depth: DepthImage,
    pub masks: Vec<MaskRecord>,
    /// Labelled structural points in world coordinates; may be empty.
    pub structs: Vec<StructPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub intrinsics: CameraIntrinsics,
    pub dim: usize,
    /// Object class vocabulary.
    pub vocab: PrototypeSet,
    /// Room-type prototypes.
    pub room_prototypes: PrototypeSet,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtRoom {
    pub id: u32,
    pub label: String,
    pub bbox: Aabb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub id: u32,
    pub class: String,
    pub room_id: u32,
    pub centroid: Vec3,
    /// Every visible surface point of the object, deduplicated.
    pub points: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub rooms: Vec<GtRoom>,
    pub instances: Vec<GtInstance>,
    /// Which object each emitted mask shows, sorted by key.
    pub masks: Vec<(ObsKey, u32)>,
}

impl GroundTruth {
    pub fn instance_of(&self, key: ObsKey) -> Option<u32> {
        self.masks
            .binary_search_by(|(k, _)| k.cmp(&key))
            .ok()
            .map(|i| self.masks[i].1)
    }
}

pub fn frame_stem(id: u32) -> String {
    format!("frame_{id:06}")
}

fn reals_line(out: &mut String, key: &str, values: impl IntoIterator<Item = f64>) {
    out.push_str(key);
    for v in values {
        let _ = write!(out, " {v}");
    }
    out.push('\n');
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        offset: e.utf8_error().valid_up_to(),
        field: "text".into(),
        message: "invalid UTF-8".into(),
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Groups pixels into horizontal runs `(row, first column, length)`.
pub fn encode_runs(pixels: &[Pixel]) -> Vec<(u32, u32, u32)> {
    let mut px: Vec<Pixel> = pixels.to_vec();
    px.sort_by_key(|p| (p.v, p.u));
    px.dedup();
    let mut runs: Vec<(u32, u32, u32)> = Vec::new();
    for p in px {
        match runs.last_mut() {
            Some((v, u0, len)) if *v == p.v && *u0 + *len == p.u => *len += 1,
            _ => runs.push((p.v, p.u, 1)),
        }
    }
    runs
}

pub fn decode_runs(runs: &[(u32, u32, u32)]) -> Vec<Pixel> {
    runs.iter()
        .flat_map(|&(v, u0, len)| (u0..u0 + len).map(move |u| Pixel { u, v }))
        .collect()
}

fn masks_text(masks: &[MaskRecord]) -> String {
    let mut out = String::new();
    for m in masks {
        let runs = encode_runs(&m.pixels);
        let _ = writeln!(out, "mask {} {}", m.mask_id, runs.len());
        for (v, u0, len) in runs {
            let _ = writeln!(out, "{v} {u0} {len}");
        }
        for (key, e) in ["l1", "l2", "l3"].iter().zip(&m.embeddings) {
            reals_line(&mut out, key, e.values().iter().copied());
        }
    }
    out
}

fn f32_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

fn structs_bytes(points: &[StructPoint]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 13);
    for sp in points {
        for c in sp.position.to_array() {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        out.push(sp.class.id());
    }
    out
}

/// Writes a sequence directory, plus the ground-truth sidecar when given.
pub fn write_sequence(seq: &Sequence, gt: Option<&GroundTruth>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let i = &seq.intrinsics;
    let mut m = String::new();
    let _ = writeln!(m, "{SEQ_HEADER}");
    let _ = writeln!(
        m,
        "intrinsics {} {} {} {} {} {}",
        i.fx, i.fy, i.cx, i.cy, i.width, i.height
    );
    let _ = writeln!(m, "dim {}", seq.dim);
    let _ = writeln!(m, "frames {}", seq.frames.len());
    let _ = writeln!(m, "vocab vocab.txt");
    let _ = writeln!(m, "rooms rooms.txt");
    write_file(&dir.join(MANIFEST), m)?;
    write_file(&dir.join("vocab.txt"), seq.vocab.to_text())?;
    write_file(&dir.join("rooms.txt"), seq.room_prototypes.to_text())?;
    for (k, f) in seq.frames.iter().enumerate() {
        if f.id as usize != k {
            return Err(Error::InvalidInput(format!("frame {k} carries id {}", f.id)));
        }
        let stem = dir.join(frame_stem(f.id));
        let mut pose = String::new();
        reals_line(&mut pose, "pose", f.pose.to_values());
        write_file(&stem.with_extension("pose"), pose)?;
        write_file(&stem.with_extension("depth"), f32_bytes(f.depth.data.iter().copied()))?;
        write_file(&stem.with_extension("masks"), masks_text(&f.masks))?;
        write_file(&stem.with_extension("structs"), structs_bytes(&f.structs))?;
    }
    if let Some(gt) = gt {
        write_ground_truth(gt, dir)?;
    }
    Ok(())
}

pub fn write_ground_truth(gt: &GroundTruth, dir: &Path) -> Result<()> {
    let mut t = String::new();
    let mut blob = GT_MAGIC.to_vec();
    let _ = writeln!(t, "{GT_HEADER}");
    let _ = writeln!(t, "rooms {}", gt.rooms.len());
    for r in &gt.rooms {
        let _ = write!(t, "room {}", r.id);
        for v in r.bbox.min.to_array().into_iter().chain(r.bbox.max.to_array()) {
            let _ = write!(t, " {v}");
        }
        let _ = writeln!(t, " {}", r.label);
    }
    let _ = writeln!(t, "instances {}", gt.instances.len());
    for inst in &gt.instances {
        let c = inst.centroid;
        let _ = writeln!(
            t,
            "instance {} {} {} {} {} {} {}",
            inst.id,
            inst.room_id,
            inst.points.len(),
            c.x,
            c.y,
            c.z,
            inst.class
        );
        blob.extend_from_slice(&(inst.points.len() as u32).to_le_bytes());
        blob.extend(f32_bytes(
            inst.points.iter().flat_map(|p| p.to_array().map(|v| v as f32)),
        ));
    }
    let _ = writeln!(t, "masks {}", gt.masks.len());
    for (k, id) in &gt.masks {
        let _ = writeln!(t, "mask {} {} {id}", k.frame_id, k.mask_id);
    }
    t.push_str("end\n");
    write_file(&dir.join(GT_TEXT), t)?;
    write_file(&dir.join(GT_BLOB), blob)
}

/// Line cursor that reports errors with byte offsets.
struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    file: String,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, file: &Path) -> Self {
        Self {
            text,
            pos: 0,
            file: file.display().to_string(),
        }
    }

    fn err(&self, offset: usize, field: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            file: self.file.clone(),
            offset,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.text.len()
    }

    fn line(&mut self, field: &str) -> Result<(usize, &'a str)> {
        if self.at_end() {
            return Err(self.err(self.text.len(), field, "unexpected end of file"));
        }
        let rest = &self.text[self.pos..];
        let end = rest.find('\n').unwrap_or(rest.len());
        let start = self.pos;
        self.pos += (end + 1).min(rest.len());
        Ok((start, rest[..end].trim_end_matches('\r')))
    }

    /// Next line, which must begin with `key`; returns the remainder.
    fn keyed(&mut self, key: &str, field: &str) -> Result<(usize, &'a str)> {
        let (start, line) = self.line(field)?;
        let (k, rest) = line.split_once(' ').unwrap_or((line, ""));
        if k != key {
            return Err(self.err(start, field, format!("expected `{key}`, found `{k}`")));
        }
        Ok((start, rest))
    }

    fn num<T: FromStr>(&self, tok: &str, field: &str) -> Result<T> {
        let offset = tok.as_ptr() as usize - self.text.as_ptr() as usize;
        tok.parse()
            .map_err(|_| self.err(offset, field, format!("cannot parse `{tok}`")))
    }

    fn nums<T: FromStr>(&self, start: usize, rest: &str, n: usize, field: &str) -> Result<Vec<T>> {
        let toks: Vec<&str> = rest.split_whitespace().collect();
        if toks.len() != n {
            return Err(self.err(start, field, format!("expected {n} values, found {}", toks.len())));
        }
        toks.iter()
            .enumerate()
            .map(|(i, t)| self.num(t, &format!("{field}[{i}]")))
            .collect()
    }

    fn single<T: FromStr>(&mut self, key: &str, field: &str) -> Result<T> {
        let (start, rest) = self.keyed(key, field)?;
        Ok(self.nums(start, rest, 1, field)?.remove(0))
    }

    /// `n` numbers followed by a free-text label running to the end of line.
    fn nums_then_label(&self, start: usize, rest: &'a str, n: usize, field: &str) -> Result<(Vec<f64>, &'a str)> {
        let mut tail = rest;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (tok, more) = tail
                .split_once(' ')
                .ok_or_else(|| self.err(start, field, "line too short"))?;
            out.push(self.num(tok, &format!("{field}[{i}]"))?);
            tail = more;
        }
        if tail.is_empty() {
            return Err(self.err(start, field, "missing label"));
        }
        Ok((out, tail))
    }
}

fn read_manifest(dir: &Path) -> Result<(CameraIntrinsics, usize, usize, String, String)> {
    let path = dir.join(MANIFEST);
    let text = read_text(&path)?;
    let mut c = Cursor::new(&text, &path);
    let (start, line) = c.line("header")?;
    if line != SEQ_HEADER {
        return Err(c.err(start, "header", format!("expected `{SEQ_HEADER}`")));
    }
    let (start, rest) = c.keyed("intrinsics", "intrinsics")?;
    let v: Vec<f64> = c.nums(start, rest, 6, "intrinsics")?;
    if v[4].fract() != 0.0 || v[5].fract() != 0.0 || v[4] < 1.0 || v[5] < 1.0 {
        return Err(c.err(start, "intrinsics", "image size must be a positive integer"));
    }
    let intr = CameraIntrinsics::new(v[0], v[1], v[2], v[3], v[4] as u32, v[5] as u32)
        .map_err(|e| c.err(start, "intrinsics", e.to_string()))?;
    let dim: usize = c.single("dim", "dim")?;
    let frames: usize = c.single("frames", "frames")?;
    let vocab = c.keyed("vocab", "vocab")?.1.to_string();
    let rooms = c.keyed("rooms", "rooms")?.1.to_string();
    Ok((intr, dim, frames, vocab, rooms))
}

fn read_masks(path: &Path, dim: usize, intr: &CameraIntrinsics) -> Result<Vec<MaskRecord>> {
    let text = read_text(path)?;
    let mut c = Cursor::new(&text, path);
    let mut out = Vec::new();
    while !c.at_end() {
        let k = out.len();
        let field = format!("masks[{k}]");
        let (start, rest) = c.keyed("mask", &field)?;
        let head: Vec<u32> = c.nums(start, rest, 2, &field)?;
        let mut runs = Vec::with_capacity(head[1] as usize);
        for r in 0..head[1] {
            let rf = format!("{field}.runs[{r}]");
            let (start, line) = c.line(&rf)?;
            let v: Vec<u32> = c.nums(start, line, 3, &rf)?;
            if v[0] >= intr.height || v[1].checked_add(v[2]).is_none_or(|e| e > intr.width) {
                return Err(c.err(start, &rf, "run outside the image"));
            }
            runs.push((v[0], v[1], v[2]));
        }
        let mut emb = Vec::with_capacity(3);
        for key in ["l1", "l2", "l3"] {
            let ef = format!("{field}.{key}");
            let (start, rest) = c.keyed(key, &ef)?;
            let v: Vec<f64> = c.nums(start, rest, dim, &ef)?;
            emb.push(Embedding::from_unit(v).map_err(|e| c.err(start, &ef, e.to_string()))?);
        }
        let embeddings: [Embedding; 3] = emb.try_into().expect("three modalities");
        out.push(MaskRecord {
            mask_id: head[0],
            pixels: decode_runs(&runs),
            embeddings,
        });
    }
    Ok(out)
}

fn parse_f32s(bytes: &[u8]) -> impl Iterator<Item = f32> + '_ {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
}

fn read_structs(path: &Path) -> Result<Vec<StructPoint>> {
    let bytes = read_bytes(path)?;
    if bytes.len() % 13 != 0 {
        return Err(Error::Parse {
            file: path.display().to_string(),
            offset: bytes.len() - bytes.len() % 13,
            field: "structs".into(),
            message: "truncated record".into(),
        });
    }
    bytes
        .chunks_exact(13)
        .enumerate()
        .map(|(i, rec)| {
            let c: Vec<f64> = parse_f32s(&rec[..12]).map(f64::from).collect();
            let class = StructClass::from_id(rec[12]).ok_or_else(|| Error::Parse {
                file: path.display().to_string(),
                offset: i * 13 + 12,
                field: format!("structs[{i}].class"),
                message: format!("unknown class id {}", rec[12]),
            })?;
            Ok(StructPoint {
                position: Vec3::new(c[0], c[1], c[2]),
                class,
            })
        })
        .collect()
}

fn read_frame(dir: &Path, id: u32, dim: usize, intr: &CameraIntrinsics) -> Result<Frame> {
    let stem = dir.join(frame_stem(id));
    let pose_path = stem.with_extension("pose");
    let text = read_text(&pose_path)?;
    let mut c = Cursor::new(&text, &pose_path);
    let (start, rest) = c.keyed("pose", "pose")?;
    let v: Vec<f64> = c.nums(start, rest, 12, "pose")?;
    let pose = Pose::from_values(&v.try_into().expect("12 values")).map_err(|e| c.err(start, "pose", e.to_string()))?;

    let depth_path = stem.with_extension("depth");
    let bytes = read_bytes(&depth_path)?;
    let expected = intr.width as usize * intr.height as usize * 4;
    if bytes.len() != expected {
        return Err(Error::Parse {
            file: depth_path.display().to_string(),
            offset: bytes.len().min(expected),
            field: "depth".into(),
            message: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let depth = DepthImage::new(intr.width, intr.height, parse_f32s(&bytes).collect())?;
    Ok(Frame {
        id,
        pose,
        depth,
        masks: read_masks(&stem.with_extension("masks"), dim, intr)?,
        structs: read_structs(&stem.with_extension("structs"))?,
    })
}

pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let (intrinsics, dim, count, vocab_file, rooms_file) = read_manifest(dir)?;
    let vocab = PrototypeSet::load(&dir.join(vocab_file))?;
    let room_prototypes = PrototypeSet::load(&dir.join(rooms_file))?;
    for set in [&vocab, &room_prototypes] {
        if set.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: set.dim(),
            });
        }
    }
    let frames = (0..count as u32)
        .map(|id| read_frame(dir, id, dim, &intrinsics))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sequence {
        intrinsics,
        dim,
        vocab,
        room_prototypes,
        frames,
    })
}

pub fn read_ground_truth(dir: &Path) -> Result<GroundTruth> {
    let path = dir.join(GT_TEXT);
    let text = read_text(&path)?;
    let mut c = Cursor::new(&text, &path);
    let (start, line) = c.line("header")?;
    if line != GT_HEADER {
        return Err(c.err(start, "header", format!("expected `{GT_HEADER}`")));
    }
    let n: usize = c.single("rooms", "rooms")?;
    let mut rooms = Vec::with_capacity(n.min(1 << 16));
    for i in 0..n {
        let f = format!("rooms[{i}]");
        let (start, rest) = c.keyed("room", &f)?;
        let (v, label) = c.nums_then_label(start, rest, 7, &f)?;
        let bbox = Aabb::new(Vec3::new(v[1], v[2], v[3]), Vec3::new(v[4], v[5], v[6]))
            .map_err(|e| c.err(start, &f, e.to_string()))?;
        rooms.push(GtRoom {
            id: v[0] as u32,
            label: label.to_string(),
            bbox,
        });
    }
    let blob_path = dir.join(GT_BLOB);
    let blob = read_bytes(&blob_path)?;
    let blob_err = |offset: usize, field: String, message: &str| Error::Parse {
        file: blob_path.display().to_string(),
        offset,
        field,
        message: message.into(),
    };
    if blob.len() < 8 || &blob[..8] != GT_MAGIC {
        return Err(blob_err(0, "magic".into(), "not a ground-truth blob"));
    }
    let mut at = 8;
    let n: usize = c.single("instances", "instances")?;
    let mut instances = Vec::with_capacity(n.min(1 << 16));
    for i in 0..n {
        let f = format!("instances[{i}]");
        let (start, rest) = c.keyed("instance", &f)?;
        let (v, class) = c.nums_then_label(start, rest, 6, &f)?;
        let count = v[2] as usize;
        let pf = format!("{f}.points");
        if blob.len() < at + 4 {
            return Err(blob_err(at, pf, "unexpected end of blob"));
        }
        let stored = u32::from_le_bytes(blob[at..at + 4].try_into().expect("4 bytes")) as usize;
        if stored != count {
            return Err(blob_err(at, pf, "point count disagrees with gt.txt"));
        }
        at += 4;
        if blob.len() < at + count * 12 {
            return Err(blob_err(at, pf, "unexpected end of blob"));
        }
        let coords: Vec<f64> = parse_f32s(&blob[at..at + count * 12]).map(f64::from).collect();
        at += count * 12;
        instances.push(GtInstance {
            id: v[0] as u32,
            room_id: v[1] as u32,
            centroid: Vec3::new(v[3], v[4], v[5]),
            class: class.to_string(),
            points: coords.chunks_exact(3).map(|p| Vec3::new(p[0], p[1], p[2])).collect(),
        });
    }
    if at != blob.len() {
        return Err(blob_err(at, "end".into(), "trailing bytes"));
    }
    let n: usize = c.single("masks", "masks")?;
    let mut masks = Vec::with_capacity(n.min(1 << 20));
    for i in 0..n {
        let f = format!("masks[{i}]");
        let (start, rest) = c.keyed("mask", &f)?;
        let v: Vec<u32> = c.nums(start, rest, 3, &f)?;
        masks.push((
            ObsKey {
                frame_id: v[0],
                mask_id: v[1],
            },
            v[2],
        ));
    }
    c.keyed("end", "end")?;
    masks.sort_unstable();
    Ok(GroundTruth {
        rooms,
        instances,
        masks,
    })
}
