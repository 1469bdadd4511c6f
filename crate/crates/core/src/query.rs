//! Structured retrieval over a built graph: optional room-type filter plus an
//! object embedding, ranked by cosine similarity.

use rustc_hash::{FxHashMap, FxHashSet};

use crate::error::{Error, Result};
use crate::model::{Embedding, NodeRef, SceneGraph, Vec3};
use crate::semantics::{dot, PrototypeSet};

pub const ROOM_NOT_FOUND: &str = "room not found";

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredQuery {
    pub room_label: Option<String>,
    pub object_embedding: Embedding,
    pub k: usize,
}

impl StructuredQuery {
    pub fn new(room_label: Option<String>, object_embedding: Embedding, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("query k must be at least 1".into()));
        }
        Ok(Self {
            room_label,
            object_embedding,
            k,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub instance_id: u32,
    pub room_id: u32,
    pub similarity: f64,
    /// Mean of the instance points: the navigation goal.
    pub centroid: Vec3,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryResult {
    pub ranked: Vec<Hit>,
    /// Why the result is empty, when that is not simply an empty graph.
    pub reason: Option<String>,
}

/// Ranks instances by cosine to the query embedding, most similar first; ties
/// go to the lower instance id.
pub fn query(g: &SceneGraph, q: &StructuredQuery) -> Result<QueryResult> {
    if q.object_embedding.dim() != g.dim {
        return Err(Error::DimensionMismatch {
            expected: g.dim,
            found: q.object_embedding.dim(),
        });
    }
    let mut parent: FxHashMap<u32, u32> = FxHashMap::default();
    for e in &g.edges {
        if let (NodeRef::Instance(i), NodeRef::Room(r)) = (e.child, e.parent) {
            parent.insert(i, r);
        }
    }
    let allowed: Option<FxHashSet<u32>> = match &q.room_label {
        None => None,
        Some(label) => {
            let ids: FxHashSet<u32> = g
                .rooms
                .iter()
                .filter(|r| r.label.as_deref() == Some(label.as_str()))
                .map(|r| r.id)
                .collect();
            if ids.is_empty() {
                return Ok(QueryResult {
                    ranked: Vec::new(),
                    reason: Some(ROOM_NOT_FOUND.into()),
                });
            }
            Some(ids)
        }
    };
    let mut hits: Vec<Hit> = g
        .instances
        .iter()
        .filter_map(|inst| {
            let room_id = parent.get(&inst.id).copied().unwrap_or(inst.room_id);
            if allowed.as_ref().is_some_and(|a| !a.contains(&room_id)) {
                return None;
            }
            Some(Hit {
                instance_id: inst.id,
                room_id,
                similarity: dot(inst.embedding.values(), q.object_embedding.values()),
                centroid: inst.centroid(),
            })
        })
        .collect();
    hits.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.instance_id.cmp(&b.instance_id))
    });
    hits.truncate(q.k);
    Ok(QueryResult {
        ranked: hits,
        reason: None,
    })
}

/// Parses one query line: `[room=<label>] k=<n> (label=<vocab label> | <D reals>)`.
/// Room labels may contain spaces; they run up to ` k=`.
pub fn parse_query(line: &str, vocab: &PrototypeSet) -> Result<StructuredQuery> {
    let bad = |m: &str| Error::InvalidInput(format!("query `{line}`: {m}"));
    let line = line.trim();
    let (room_label, rest) = if let Some(r) = line.strip_prefix("room=") {
        let at = r.find(" k=").ok_or_else(|| bad("expected `k=` after the room"))?;
        (Some(r[..at].trim().to_string()), r[at + 1..].trim_start())
    } else {
        (None, line)
    };
    let rest = rest.strip_prefix("k=").ok_or_else(|| bad("expected `k=`"))?;
    let (k_text, tail) = rest.split_once(' ').unwrap_or((rest, ""));
    let k: usize = k_text.parse().map_err(|_| bad("k is not an integer"))?;
    let tail = tail.trim();
    let embedding = if let Some(label) = tail.strip_prefix("label=") {
        vocab
            .get(label.trim())
            .cloned()
            .ok_or_else(|| bad("label is not in the vocabulary"))?
    } else {
        let values = tail
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad("expected reals")))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != vocab.dim() {
            return Err(Error::DimensionMismatch {
                expected: vocab.dim(),
                found: values.len(),
            });
        }
        Embedding::new(values)?
    };
    StructuredQuery::new(room_label, embedding, k)
}

/// Parses a query file; blank lines and `#` comments are skipped.
pub fn parse_queries(text: &str, vocab: &PrototypeSet) -> Result<Vec<StructuredQuery>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| parse_query(l, vocab))
        .collect()
}
