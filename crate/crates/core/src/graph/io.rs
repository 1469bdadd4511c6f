//! Graph persistence: a line-based structure manifest (`.sg`) plus a binary
//! point blob (`.sgp`) of little-endian `f32` triples in counted arrays.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::voxelize;
use crate::model::{
    Aabb, BuildingNode, Edge, Embedding, Instance, NodeRef, ObsKey, Room, SceneGraph, StructClass, StructuralSegment,
    Vec3,
};

const HEADER: &str = "IRSG v1";
const BLOB_MAGIC: &[u8; 8] = b"IRSGP\x01\0\0";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedGraph {
    pub manifest: String,
    pub blob: Vec<u8>,
}

fn push_reals(out: &mut String, values: impl IntoIterator<Item = f64>) {
    for v in values {
        // `Display` for f64 is the shortest exact round-trip form.
        let _ = write!(out, " {v}");
    }
}

fn push_points(blob: &mut Vec<u8>, pts: &[Vec3]) {
    blob.extend_from_slice(&(pts.len() as u32).to_le_bytes());
    for p in pts {
        for v in p.to_array() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

fn node_text(n: NodeRef) -> String {
    match n {
        NodeRef::Building(id) => format!("building {id}"),
        NodeRef::Room(id) => format!("room {id}"),
        NodeRef::Instance(id) => format!("instance {id}"),
    }
}

/// Canonical encoding: equal graphs produce identical bytes.
pub fn serialize(g: &SceneGraph) -> SerializedGraph {
    let mut m = String::new();
    let mut blob = BLOB_MAGIC.to_vec();
    let _ = writeln!(m, "{HEADER}");
    let _ = writeln!(m, "voxel_size {}", g.voxel_size);
    let _ = writeln!(m, "dim {}", g.dim);
    let _ = writeln!(m, "building {} {}", g.building.id, g.building.name);
    let _ = writeln!(m, "rooms {}", g.rooms.len());
    for r in &g.rooms {
        let _ = writeln!(m, "room {}", r.id);
        if let Some(label) = &r.label {
            let _ = writeln!(m, "label {label}");
        }
        if let Some(f) = &r.feature {
            m.push_str("feature");
            push_reals(&mut m, f.values().iter().copied());
            m.push('\n');
        }
        m.push_str("bbox");
        push_reals(&mut m, r.bbox.min.to_array().into_iter().chain(r.bbox.max.to_array()));
        m.push('\n');
        for (key, segs) in [("walls", &r.wall_segments), ("horizontals", &r.horizontal_segments)] {
            let _ = writeln!(m, "{key} {}", segs.len());
            for s in segs {
                let _ = write!(m, "segment {} {}", s.class, s.points.len());
                push_reals(&mut m, s.centroid.to_array().into_iter().chain(s.normal.to_array()));
                m.push('\n');
                push_points(&mut blob, &s.points);
            }
        }
    }
    let _ = writeln!(m, "instances {}", g.instances.len());
    for i in &g.instances {
        let _ = writeln!(m, "instance {}", i.id);
        let _ = writeln!(m, "room {}", i.room_id);
        let _ = writeln!(m, "weight {}", i.weight);
        let _ = writeln!(m, "points {}", i.points.len());
        m.push_str("embedding");
        push_reals(&mut m, i.embedding.values().iter().copied());
        m.push('\n');
        m.push_str("bbox");
        push_reals(&mut m, i.bbox.min.to_array().into_iter().chain(i.bbox.max.to_array()));
        m.push('\n');
        let _ = write!(m, "observations {}", i.observations.len());
        for k in &i.observations {
            let _ = write!(m, " {k}");
        }
        m.push('\n');
        push_points(&mut blob, &i.points);
    }
    let _ = writeln!(m, "edges {}", g.edges.len());
    for e in &g.edges {
        let _ = writeln!(m, "edge {} {}", node_text(e.child), node_text(e.parent));
    }
    m.push_str("end\n");
    SerializedGraph { manifest: m, blob }
}

struct Lines<'a> {
    text: &'a str,
    pos: usize,
    file: &'a str,
}

impl<'a> Lines<'a> {
    fn err(&self, offset: usize, field: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            file: self.file.to_string(),
            offset,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn offset_of(&self, s: &str) -> usize {
        s.as_ptr() as usize - self.text.as_ptr() as usize
    }

    fn peek(&self) -> Option<&'a str> {
        let rest = &self.text[self.pos..];
        let line = rest.split('\n').next()?;
        line.split(' ').next().filter(|_| !rest.is_empty())
    }

    /// Next line, which must start with `key`; returns the rest of it.
    fn keyed(&mut self, key: &str, field: &str) -> Result<(usize, &'a str)> {
        if self.pos >= self.text.len() {
            return Err(self.err(self.text.len(), field, "unexpected end of file"));
        }
        let rest = &self.text[self.pos..];
        let Some(end) = rest.find('\n') else {
            return Err(self.err(self.text.len(), field, "unterminated line"));
        };
        let start = self.pos;
        let line = &rest[..end];
        self.pos += end + 1;
        let (k, tail) = line.split_once(' ').unwrap_or((line, ""));
        if k != key {
            return Err(self.err(start, field, format!("expected `{key}`, found `{k}`")));
        }
        Ok((start, tail))
    }

    fn tokens(&self, tail: &'a str) -> Vec<&'a str> {
        if tail.is_empty() {
            Vec::new()
        } else {
            tail.split(' ').collect()
        }
    }

    fn num<T: FromStr>(&self, tok: &'a str, field: &str) -> Result<T> {
        tok.parse()
            .map_err(|_| self.err(self.offset_of(tok), field, format!("cannot parse `{tok}`")))
    }

    fn single<T: FromStr>(&mut self, key: &str, field: &str) -> Result<T> {
        let (start, tail) = self.keyed(key, field)?;
        let toks = self.tokens(tail);
        if toks.len() != 1 {
            return Err(self.err(start, field, format!("expected one value after `{key}`")));
        }
        self.num(toks[0], field)
    }

    fn reals(&mut self, key: &str, n: Option<usize>, field: &str) -> Result<(usize, Vec<f64>)> {
        let (start, tail) = self.keyed(key, field)?;
        let toks = self.tokens(tail);
        if let Some(n) = n {
            if toks.len() != n {
                return Err(self.err(start, field, format!("expected {n} values, found {}", toks.len())));
            }
        }
        let mut out = Vec::with_capacity(toks.len());
        for (i, t) in toks.iter().enumerate() {
            let v: f64 = self.num(t, &format!("{field}[{i}]"))?;
            if !v.is_finite() {
                return Err(self.err(self.offset_of(t), &format!("{field}[{i}]"), "non-finite value"));
            }
            out.push(v);
        }
        Ok((start, out))
    }

    fn bbox(&mut self, field: &str) -> Result<Aabb> {
        let (start, v) = self.reals("bbox", Some(6), field)?;
        Aabb::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
            .map_err(|e| self.err(start, field, e.to_string()))
    }
}

struct Blob<'a> {
    data: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl Blob<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            file: self.file.to_string(),
            offset: self.pos,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&[u8]> {
        if self.data.len() - self.pos < n {
            return Err(self.err(field, "unexpected end of blob"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn points(&mut self, expected: usize, field: &str) -> Result<Vec<Vec3>> {
        let n = u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")) as usize;
        if n != expected {
            self.pos -= 4;
            return Err(self.err(field, format!("blob holds {n} points, manifest says {expected}")));
        }
        let raw = self.take(n * 12, field)?;
        let f = |i: usize| f32::from_le_bytes(raw[i * 4..i * 4 + 4].try_into().expect("4 bytes")) as f64;
        Ok((0..n)
            .map(|k| Vec3::new(f(3 * k), f(3 * k + 1), f(3 * k + 2)))
            .collect())
    }
}

fn parse_node(kind: &str, id: u32) -> Option<NodeRef> {
    match kind {
        "building" => Some(NodeRef::Building(id)),
        "room" => Some(NodeRef::Room(id)),
        "instance" => Some(NodeRef::Instance(id)),
        _ => None,
    }
}

/// Parses a manifest and its blob. Nothing is returned unless both parse
/// completely.
pub fn deserialize(manifest: &str, blob: &[u8], names: (&str, &str)) -> Result<SceneGraph> {
    let mut ln = Lines {
        text: manifest,
        pos: 0,
        file: names.0,
    };
    let mut bl = Blob {
        data: blob,
        pos: 0,
        file: names.1,
    };
    let (start, tail) = ln.keyed("IRSG", "header")?;
    if tail != "v1" {
        return Err(ln.err(start, "header", format!("unsupported version `{tail}`")));
    }
    if bl.take(8, "magic")? != BLOB_MAGIC {
        bl.pos = 0;
        return Err(bl.err("magic", "not a point blob"));
    }
    let voxel_size: f64 = ln.single("voxel_size", "voxel_size")?;
    if !(voxel_size > 0.0) {
        return Err(ln.err(0, "voxel_size", "must be positive"));
    }
    let dim: usize = ln.single("dim", "dim")?;
    let (start, tail) = ln.keyed("building", "building")?;
    let (bid, bname) = tail
        .split_once(' ')
        .ok_or_else(|| ln.err(start, "building", "expected id and name"))?;
    let building = BuildingNode {
        id: ln.num(bid, "building.id")?,
        name: bname.to_string(),
    };

    let n_rooms: usize = ln.single("rooms", "rooms")?;
    let mut rooms = Vec::with_capacity(n_rooms.min(1 << 16));
    for r in 0..n_rooms {
        let path = format!("rooms[{r}]");
        let id: u32 = ln.single("room", &format!("{path}.id"))?;
        let label = if ln.peek() == Some("label") {
            Some(ln.keyed("label", &format!("{path}.label"))?.1.to_string())
        } else {
            None
        };
        let feature = if ln.peek() == Some("feature") {
            let fpath = format!("{path}.feature");
            let (start, v) = ln.reals("feature", Some(dim), &fpath)?;
            Some(Embedding::from_unit(v).map_err(|e| ln.err(start, &fpath, e.to_string()))?)
        } else {
            None
        };
        let bbox = ln.bbox(&format!("{path}.bbox"))?;
        let mut lists: [Vec<StructuralSegment>; 2] = [Vec::new(), Vec::new()];
        for (li, key) in ["walls", "horizontals"].into_iter().enumerate() {
            let n: usize = ln.single(key, &format!("{path}.{key}"))?;
            for s in 0..n {
                let spath = format!("{path}.{key}[{s}]");
                let (start, tail) = ln.keyed("segment", &spath)?;
                let toks = ln.tokens(tail);
                if toks.len() != 8 {
                    return Err(ln.err(start, &spath, "expected class, count, centroid and normal"));
                }
                let class: StructClass = toks[0]
                    .parse()
                    .map_err(|_| ln.err(ln.offset_of(toks[0]), &format!("{spath}.class"), "unknown class"))?;
                if class.is_wall_like() != (li == 0) {
                    return Err(ln.err(start, &format!("{spath}.class"), "class does not fit this list"));
                }
                let count: usize = ln.num(toks[1], &format!("{spath}.points"))?;
                let mut v = [0.0; 6];
                for k in 0..6 {
                    v[k] = ln.num(toks[2 + k], &format!("{spath}.geometry[{k}]"))?;
                }
                let points = bl.points(count, &format!("{spath}.points"))?;
                let seg =
                    StructuralSegment::new(class, points, Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
                        .map_err(|e| ln.err(start, &spath, e.to_string()))?;
                lists[li].push(seg);
            }
        }
        let [wall_segments, horizontal_segments] = lists;
        rooms.push(Room {
            id,
            wall_segments,
            horizontal_segments,
            bbox,
            label,
            feature,
        });
    }

    let n_inst: usize = ln.single("instances", "instances")?;
    let mut instances = Vec::with_capacity(n_inst.min(1 << 16));
    for i in 0..n_inst {
        let path = format!("instances[{i}]");
        let id: u32 = ln.single("instance", &format!("{path}.id"))?;
        let room_id: u32 = ln.single("room", &format!("{path}.room"))?;
        let weight: u64 = ln.single("weight", &format!("{path}.weight"))?;
        let count: usize = ln.single("points", &format!("{path}.points"))?;
        let epath = format!("{path}.embedding");
        let (start, v) = ln.reals("embedding", Some(dim), &epath)?;
        let embedding = Embedding::from_unit(v).map_err(|e| ln.err(start, &epath, e.to_string()))?;
        let bbox = ln.bbox(&format!("{path}.bbox"))?;
        let opath = format!("{path}.observations");
        let (start, tail) = ln.keyed("observations", &opath)?;
        let toks = ln.tokens(tail);
        let n: usize = match toks.first() {
            Some(t) => ln.num(t, &opath)?,
            None => return Err(ln.err(start, &opath, "missing count")),
        };
        if toks.len() != n + 1 {
            return Err(ln.err(start, &opath, format!("expected {n} keys")));
        }
        let mut observations = Vec::with_capacity(n);
        for (k, t) in toks[1..].iter().enumerate() {
            let kpath = format!("{opath}[{k}]");
            let (f, m) = t
                .split_once(':')
                .ok_or_else(|| ln.err(ln.offset_of(t), &kpath, "expected frame:mask"))?;
            observations.push(ObsKey {
                frame_id: ln.num(f, &kpath)?,
                mask_id: ln.num(m, &kpath)?,
            });
        }
        let points = bl.points(count, &format!("{path}.points"))?;
        instances.push(Instance {
            id,
            voxels: voxelize(&points, voxel_size),
            points,
            embedding,
            weight,
            room_id,
            bbox,
            observations,
        });
    }

    let n_edges: usize = ln.single("edges", "edges")?;
    let mut edges = Vec::with_capacity(n_edges.min(1 << 20));
    for e in 0..n_edges {
        let path = format!("edges[{e}]");
        let (start, tail) = ln.keyed("edge", &path)?;
        let toks = ln.tokens(tail);
        if toks.len() != 4 {
            return Err(ln.err(start, &path, "expected child and parent"));
        }
        let child = parse_node(toks[0], ln.num(toks[1], &format!("{path}.child"))?)
            .ok_or_else(|| ln.err(ln.offset_of(toks[0]), &format!("{path}.child"), "unknown node kind"))?;
        let parent = parse_node(toks[2], ln.num(toks[3], &format!("{path}.parent"))?)
            .ok_or_else(|| ln.err(ln.offset_of(toks[2]), &format!("{path}.parent"), "unknown node kind"))?;
        edges.push(Edge { child, parent });
    }
    let (start, tail) = ln.keyed("end", "end")?;
    if !tail.is_empty() || ln.pos != manifest.len() {
        return Err(ln.err(start, "end", "trailing content"));
    }
    if bl.pos != blob.len() {
        return Err(bl.err("end", "trailing bytes in blob"));
    }
    Ok(SceneGraph {
        voxel_size,
        dim,
        building,
        rooms,
        instances,
        edges,
    })
}

/// `(manifest, blob)` paths for a graph named by either its base path or its
/// `.sg` file.
pub fn graph_paths(path: &Path) -> (PathBuf, PathBuf) {
    let base = if path.extension().is_some_and(|e| e == "sg" || e == "sgp") {
        path.with_extension("")
    } else {
        path.to_path_buf()
    };
    let mut sg = base.clone().into_os_string();
    sg.push(".sg");
    let mut sgp = base.into_os_string();
    sgp.push(".sgp");
    (PathBuf::from(sg), PathBuf::from(sgp))
}

pub fn save(g: &SceneGraph, path: &Path) -> Result<(PathBuf, PathBuf)> {
    let (sg, sgp) = graph_paths(path);
    let s = serialize(g);
    std::fs::write(&sg, s.manifest).map_err(|e| Error::io(&sg, e))?;
    std::fs::write(&sgp, s.blob).map_err(|e| Error::io(&sgp, e))?;
    Ok((sg, sgp))
}

pub fn load(path: &Path) -> Result<SceneGraph> {
    let (sg, sgp) = graph_paths(path);
    let manifest = std::fs::read(&sg).map_err(|e| Error::io(&sg, e))?;
    let manifest = String::from_utf8(manifest).map_err(|e| Error::Parse {
        file: sg.display().to_string(),
        offset: e.utf8_error().valid_up_to(),
        field: "manifest".into(),
        message: "invalid UTF-8".into(),
    })?;
    let blob = std::fs::read(&sgp).map_err(|e| Error::io(&sgp, e))?;
    deserialize(
        &manifest,
        &blob,
        (&sg.display().to_string(), &sgp.display().to_string()),
    )
}
