//! Embedding arithmetic: modality fusion, similarity, instance feature
//! accumulation and room labelling.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Embedding, Instance};

/// Room classes every room prototype set must provide.
pub const ROOM_LABELS: [&str; 5] = ["Kitchen", "Office", "Dining room", "Bedroom", "Bathroom"];

/// Labelled unit embeddings: room prototypes or an object vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    entries: Vec<(String, Embedding)>,
}

impl PrototypeSet {
    pub fn new(entries: Vec<(String, Embedding)>) -> Result<Self> {
        let Some(dim) = entries.first().map(|(_, e)| e.dim()) else {
            return Ok(Self { entries });
        };
        for (i, (label, e)) in entries.iter().enumerate() {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: e.dim(),
                });
            }
            if label.trim().is_empty() || label.trim() != label {
                return Err(Error::InvalidInput(format!("bad label `{label}`")));
            }
            if entries[..i].iter().any(|(l, _)| l == label) {
                return Err(Error::InvalidInput(format!("duplicate label `{label}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Embedding dimension, 0 for an empty set.
    pub fn dim(&self) -> usize {
        self.entries.first().map_or(0, |(_, e)| e.dim())
    }

    pub fn entries(&self) -> &[(String, Embedding)] {
        &self.entries
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(l, _)| l.as_str())
    }

    pub fn get(&self, label: &str) -> Option<&Embedding> {
        self.entries.iter().find(|(l, _)| l == label).map(|(_, e)| e)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.get(label).is_some()
    }

    /// Errors unless all five room classes are present.
    pub fn require_room_labels(&self) -> Result<()> {
        match ROOM_LABELS.iter().find(|l| !self.contains(l)) {
            Some(missing) => Err(Error::InvalidInput(format!(
                "prototype set lacks room label `{missing}`"
            ))),
            None => Ok(()),
        }
    }

    /// Parses one record per line: label words, then the embedding reals.
    /// The label ends at the first token that parses as a number. Blank
    /// lines and `#` comments are skipped.
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut dim: Option<usize> = None;
        let mut offset = 0;
        for (lineno, raw) in text.split_inclusive('\n').enumerate() {
            let line_offset = offset;
            offset += raw.len();
            let line = raw.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |field: String, message: String| Error::Parse {
                file: file.to_string(),
                offset: line_offset,
                field,
                message,
            };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let split = tokens
                .iter()
                .position(|t| t.parse::<f64>().is_ok())
                .unwrap_or(tokens.len());
            if split == 0 {
                return Err(err(format!("line {}.label", lineno + 1), "missing label".into()));
            }
            let label = tokens[..split].join(" ");
            let mut values = Vec::with_capacity(tokens.len() - split);
            for (k, t) in tokens[split..].iter().enumerate() {
                let v: f64 = t.parse().map_err(|_| {
                    err(
                        format!("line {}.values[{k}]", lineno + 1),
                        format!("`{t}` is not a number"),
                    )
                })?;
                values.push(v);
            }
            let d = *dim.get_or_insert(values.len());
            if values.len() != d {
                return Err(err(
                    format!("line {}.values", lineno + 1),
                    format!("expected {d} values, found {}", values.len()),
                ));
            }
            let e =
                Embedding::from_unit(values).map_err(|e| err(format!("line {}.values", lineno + 1), e.to_string()))?;
            entries.push((label, e));
        }
        Self::new(entries).map_err(|e| Error::Parse {
            file: file.to_string(),
            offset: 0,
            field: "entries".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (label, e) in &self.entries {
            out.push_str(label);
            for v in e.values() {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

fn check_dims(a: &Embedding, b: &Embedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// Weighted combination of the masked-region, binary-mask and boundary
/// features, renormalized.
pub fn fuse_modalities(features: &[Embedding; 3], weights: [f64; 3]) -> Result<Embedding> {
    check_dims(&features[0], &features[1])?;
    check_dims(&features[0], &features[2])?;
    if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::InvalidInput("alpha weights must sum to 1".into()));
    }
    let mut sum = vec![0.0; features[0].dim()];
    for (f, w) in features.iter().zip(weights) {
        for (s, v) in sum.iter_mut().zip(f.values()) {
            *s += w * v;
        }
    }
    Embedding::new(sum).map_err(|_| Error::Degenerate("degenerate fusion"))
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims(a, b)?;
    Ok(dot(a.values(), b.values()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Point-count-weighted sum of unit embeddings. Merging is plain vector
/// addition, so the normalized result does not depend on merge order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSum {
    sum: Vec<f64>,
    weight: u64,
}

impl EmbeddingSum {
    pub fn new(e: &Embedding, weight: u64) -> Self {
        Self {
            sum: e.values().iter().map(|v| v * weight as f64).collect(),
            weight,
        }
    }

    pub fn weight(&self) -> u64 {
        self.weight
    }

    pub fn add(&mut self, e: &Embedding, weight: u64) {
        debug_assert_eq!(e.dim(), self.sum.len());
        for (s, v) in self.sum.iter_mut().zip(e.values()) {
            *s += weight as f64 * v;
        }
        self.weight += weight;
    }

    pub fn merge(&mut self, o: &EmbeddingSum) {
        for (s, v) in self.sum.iter_mut().zip(&o.sum) {
            *s += v;
        }
        self.weight += o.weight;
    }

    /// Normalized mean direction; `None` if the contributions cancel.
    pub fn embedding(&self) -> Option<Embedding> {
        Embedding::new(self.sum.clone()).ok()
    }
}

/// `normalize(weight · current + incoming_weight · incoming)`.
///
/// Falls back to `current` if the two exactly cancel.
pub fn update_instance_embedding(
    current: &Embedding,
    weight: u64,
    incoming: &Embedding,
    incoming_weight: u64,
) -> Embedding {
    let mut acc = EmbeddingSum::new(current, weight);
    acc.add(incoming, incoming_weight);
    acc.embedding().unwrap_or_else(|| current.clone())
}

/// Room feature: instance embeddings weighted by bounding-box volume. If
/// every volume is zero the plain mean is used instead.
pub fn aggregate_room_feature(instances: &[Instance]) -> Result<Embedding> {
    let first = instances.first().ok_or(Error::Empty("room has no instances"))?;
    let dim = first.embedding.dim();
    let weighted = instances.iter().any(|i| i.bbox.volume() > 0.0);
    let mut sum = vec![0.0; dim];
    for inst in instances {
        check_dims(&first.embedding, &inst.embedding)?;
        let w = if weighted { inst.bbox.volume() } else { 1.0 };
        for (s, v) in sum.iter_mut().zip(inst.embedding.values()) {
            *s += w * v;
        }
    }
    Embedding::new(sum).map_err(|_| Error::Degenerate("room features cancel out"))
}

/// Label of the most similar prototype; the earlier entry wins ties.
pub fn classify_room<'a>(feature: &Embedding, prototypes: &'a PrototypeSet) -> Result<&'a str> {
    let mut best: Option<(f64, &str)> = None;
    for (label, proto) in prototypes.entries() {
        let s = cosine(feature, proto)?;
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, label));
        }
    }
    best.map(|(_, l)| l).ok_or(Error::Empty("prototype set"))
}

/// Labels sorted by descending similarity to `e`, list order on ties.
pub fn rank_labels<'a>(e: &Embedding, vocab: &'a PrototypeSet) -> Result<Vec<&'a str>> {
    let mut scored: Vec<(usize, f64, &str)> = Vec::with_capacity(vocab.len());
    for (i, (label, proto)) in vocab.entries().iter().enumerate() {
        scored.push((i, cosine(e, proto)?, label));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().map(|(_, _, l)| l).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Aabb, Vec3, VoxelSet};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if let Ok(e) = Embedding::new(v) {
                return e;
            }
        }
    }

    fn instance(e: Embedding, side: f64) -> Instance {
        Instance {
            id: 0,
            points: vec![],
            voxels: VoxelSet::empty(0.1),
            embedding: e,
            weight: 1,
            room_id: 0,
            bbox: Aabb::new(Vec3::ZERO, Vec3::new(side, side, side)).unwrap(),
            observations: vec![],
        }
    }

    #[test]
    fn fusion_examples() {
        let l1 = emb(&[1.0, 0.0]);
        let l2 = emb(&[0.0, 1.0]);
        assert_eq!(
            fuse_modalities(&[l1.clone(), l2.clone(), l2.clone()], [1.0, 0.0, 0.0]).unwrap(),
            l1
        );
        let e = emb(&[0.3, -0.4]);
        let same = fuse_modalities(&[e.clone(), e.clone(), e.clone()], [0.2, 0.5, 0.3]).unwrap();
        for (a, b) in same.values().iter().zip(e.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        // 0.5·(1,0) + 0.25·(0,1) + 0.25·(0,1) = (0.5, 0.5).
        let f = fuse_modalities(&[l1, l2.clone(), l2], [0.5, 0.25, 0.25]).unwrap();
        let h = 0.5 / (0.5f64 * 0.5 + 0.5 * 0.5).sqrt();
        assert!((f.values()[0] - h).abs() < 1e-12 && (f.values()[1] - h).abs() < 1e-12);
        assert!((h - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn antipodal_fusion_is_degenerate() {
        let a = emb(&[1.0, 0.0]);
        let b = emb(&[-1.0, 0.0]);
        let err = fuse_modalities(&[a.clone(), b, a], [0.5, 0.5, 0.0]).unwrap_err();
        assert_eq!(err.to_string(), "degenerate fusion");
    }

    #[test]
    fn cosine_examples() {
        let e = emb(&[0.2, 0.9, -0.1]);
        assert!((cosine(&e, &e).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&Embedding::basis(3, 0), &Embedding::basis(3, 1)).unwrap(), 0.0);
        let c = cosine(&emb(&[1.0, 1.0, 0.0]), &emb(&[1.0, 0.0, 0.0])).unwrap();
        assert!((c - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(cosine(&emb(&[1.0, 0.0]), &emb(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn update_examples() {
        let e = emb(&[0.6, 0.8]);
        assert_eq!(update_instance_embedding(&e, 5, &e, 7), e);
        let other = emb(&[1.0, 0.0]);
        let u = update_instance_embedding(&e, 10_000_000, &other, 1);
        for (a, b) in u.values().iter().zip(e.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn three_way_merge_order_independent() {
        let (a, b, c) = (emb(&[1.0, 0.0, 0.0]), emb(&[0.0, 1.0, 0.0]), emb(&[0.0, 0.3, 1.0]));
        let mut ab_c = EmbeddingSum::new(&a, 3);
        ab_c.add(&b, 5);
        ab_c.add(&c, 2);
        let mut bc = EmbeddingSum::new(&b, 5);
        bc.add(&c, 2);
        let mut a_bc = EmbeddingSum::new(&a, 3);
        a_bc.merge(&bc);
        // Direct weighted mean: (3a + 5b + 2c) / |·|.
        let direct = emb(&[3.0, 5.0 + 0.6 / 1.09f64.sqrt(), 2.0 / 1.09f64.sqrt()]);
        for r in [ab_c.embedding().unwrap(), a_bc.embedding().unwrap()] {
            for (x, y) in r.values().iter().zip(direct.values()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn room_feature_examples() {
        let e1 = Embedding::basis(4, 0);
        let e2 = Embedding::basis(4, 1);
        assert_eq!(aggregate_room_feature(&[instance(e1.clone(), 1.3)]).unwrap(), e1);

        let big = instance(e1.clone(), 2.0); // volume 8
        let small = instance(e2.clone(), 0.1); // volume 0.001
        let f = aggregate_room_feature(&[big, small]).unwrap();
        assert!(cosine(&f, &e1).unwrap().acos().to_degrees() < 2.0);

        let f = aggregate_room_feature(&[instance(e1.clone(), 1.0), instance(e2.clone(), 1.0)]).unwrap();
        let expected = emb(&[1.0, 1.0, 0.0, 0.0]);
        assert!((cosine(&f, &expected).unwrap() - 1.0).abs() < 1e-12);

        // Zero volumes fall back to the plain mean.
        let f = aggregate_room_feature(&[instance(e1, 0.0), instance(e2, 0.0)]).unwrap();
        assert!((cosine(&f, &expected).unwrap() - 1.0).abs() < 1e-12);
        assert!(aggregate_room_feature(&[]).is_err());
    }

    fn rooms(dim: usize, rng: &mut ChaCha8Rng) -> PrototypeSet {
        PrototypeSet::new(
            ROOM_LABELS
                .iter()
                .map(|l| (l.to_string(), random_unit(rng, dim)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn classify_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let protos = rooms(16, &mut rng);
        let office = protos.get("Office").unwrap().clone();
        assert_eq!(classify_room(&office, &protos).unwrap(), "Office");

        let tie = PrototypeSet::new(vec![
            ("Kitchen".into(), emb(&[1.0, 0.0])),
            ("Office".into(), emb(&[0.0, 1.0])),
        ])
        .unwrap();
        assert_eq!(classify_room(&emb(&[1.0, 1.0]), &tie).unwrap(), "Kitchen");
    }

    #[test]
    fn classify_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let protos = rooms(32, &mut rng);
        for _ in 0..200 {
            let f = random_unit(&mut rng, 32);
            let mut best = ("", f64::NEG_INFINITY);
            for (l, p) in protos.entries() {
                let s: f64 = f.values().iter().zip(p.values()).map(|(a, b)| a * b).sum();
                if s > best.1 {
                    best = (l, s);
                }
            }
            assert_eq!(classify_room(&f, &protos).unwrap(), best.0);
        }
    }

    #[test]
    fn prototype_file_round_trip() {
        let text = "# rooms\nDining room 0.6 0.8\nKitchen 1 0\n\nliving room tv -0.0 -1\n";
        let set = PrototypeSet::parse(text, "v.txt").unwrap();
        assert_eq!(
            set.labels().collect::<Vec<_>>(),
            ["Dining room", "Kitchen", "living room tv"]
        );
        assert_eq!(set.dim(), 2);
        assert_eq!(PrototypeSet::parse(&set.to_text(), "v.txt").unwrap(), set);
        assert!(set.require_room_labels().is_err());
    }

    #[test]
    fn prototype_parse_errors_carry_offsets() {
        let err = PrototypeSet::parse("Kitchen 1 0\nOffice 1 0 0\n", "v.txt").unwrap_err();
        match err {
            Error::Parse { offset, field, .. } => {
                assert_eq!(offset, 12);
                assert_eq!(field, "line 2.values");
            }
            other => panic!("unexpected {other}"),
        }
        assert!(PrototypeSet::parse("Kitchen 1 0\nKitchen 0 1\n", "v.txt").is_err());
        assert!(PrototypeSet::parse("1 0\n", "v.txt").is_err());
    }

    #[test]
    fn rank_labels_orders_by_similarity() {
        let vocab = PrototypeSet::new(vec![
            ("a".into(), emb(&[1.0, 0.0])),
            ("b".into(), emb(&[0.0, 1.0])),
            ("c".into(), emb(&[1.0, 1.0])),
        ])
        .unwrap();
        assert_eq!(rank_labels(&emb(&[1.0, 0.1]), &vocab).unwrap(), ["a", "c", "b"]);
    }

    fn arb_unit(dim: usize) -> impl Strategy<Value = Embedding> {
        prop::collection::vec(-1.0f64..1.0, dim).prop_filter_map("zero vector", |v| Embedding::new(v).ok())
    }

    proptest! {
        #[test]
        fn fused_norm_is_one(
            a in arb_unit(8), b in arb_unit(8), c in arb_unit(8),
            w1 in 0.0f64..1.0, w2 in 0.0f64..1.0,
        ) {
            let w2 = w2 * (1.0 - w1);
            let w = [w1, w2, 1.0 - w1 - w2];
            if let Ok(f) = fuse_modalities(&[a, b, c], w) {
                prop_assert!((f.norm() - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn classify_is_scale_invariant(f in arb_unit(6), s in 0.01f64..100.0, seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let protos = rooms(6, &mut rng);
            let scaled = Embedding::new(f.values().iter().map(|v| v * s).collect()).unwrap();
            prop_assert_eq!(classify_room(&f, &protos).unwrap(), classify_room(&scaled, &protos).unwrap());
        }

        #[test]
        fn room_feature_permutation_invariant(
            es in prop::collection::vec((arb_unit(5), 0.1f64..2.0), 1..8),
            seed in 0u64..100,
        ) {
            let insts: Vec<Instance> = es.into_iter().map(|(e, s)| instance(e, s)).collect();
            let mut shuffled = insts.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            if let (Ok(a), Ok(b)) = (aggregate_room_feature(&insts), aggregate_room_feature(&shuffled)) {
                for (x, y) in a.values().iter().zip(b.values()) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn merge_tree_invariance(
            leaves in prop::collection::vec((arb_unit(4), 1u64..500), 2..10),
            split in 1usize..9,
        ) {
            let split = split.min(leaves.len() - 1);
            // Left fold over all leaves.
            let mut chain = EmbeddingSum::new(&leaves[0].0, leaves[0].1);
            for (e, w) in &leaves[1..] {
                chain.add(e, *w);
            }
            // Two subtrees merged at the root, right one built in reverse.
            let mut left = EmbeddingSum::new(&leaves[0].0, leaves[0].1);
            for (e, w) in &leaves[1..split] {
                left.add(e, *w);
            }
            let last = leaves.len() - 1;
            let mut right = EmbeddingSum::new(&leaves[last].0, leaves[last].1);
            for (e, w) in leaves[split..last].iter().rev() {
                right.add(e, *w);
            }
            left.merge(&right);
            prop_assert_eq!(left.weight(), chain.weight());
            if let (Some(a), Some(b)) = (chain.embedding(), left.embedding()) {
                prop_assert!((a.norm() - 1.0).abs() < 1e-6);
                for (x, y) in a.values().iter().zip(b.values()) {
                    prop_assert!((x - y).abs() < 1e-6);
                }
            }
        }
    }
}
