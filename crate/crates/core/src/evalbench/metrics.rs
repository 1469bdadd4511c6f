use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::voxelize;
use crate::model::{Instance, VoxelSet};
use crate::semantics::{rank_labels, PrototypeSet};
use crate::sequence::GroundTruth;

pub const DEFAULT_IOU: f64 = 0.5;
const TOP_K: usize = 5;

/// Voxelized point IoU.
pub fn voxel_iou(a: &VoxelSet, b: &VoxelSet) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let inter = small.cells.iter().filter(|c| large.cells.contains(*c)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `(pred index, gt index, iou)` in matching order.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

impl Matching {
    pub fn gt_of(&self, pred: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == pred).map(|p| p.1)
    }
}

/// All pairs with positive IoU, as `(pred index, gt index, iou)`.
fn overlaps(pred: &[VoxelSet], gt: &[VoxelSet]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let iou = voxel_iou(p, g);
            if iou > 0.0 {
                out.push((i, j, iou));
            }
        }
    }
    out
}

/// Greedy one-to-one assignment over `(pred, gt, iou)` candidates, taken by
/// IoU descending, then prediction id, then ground-truth id.
fn greedy(
    mut cands: Vec<(usize, usize, f64)>,
    pred_ids: &[u32],
    gt_ids: &[u32],
    iou_thr: f64,
    pred_used: &mut [bool],
    gt_used: &mut [bool],
) -> Vec<(usize, usize, f64)> {
    cands.retain(|c| c.2 >= iou_thr);
    cands.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then(pred_ids[a.0].cmp(&pred_ids[b.0]))
            .then(gt_ids[a.1].cmp(&gt_ids[b.1]))
    });
    let mut out = Vec::new();
    for (i, j, iou) in cands {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            out.push((i, j, iou));
        }
    }
    out
}

fn gt_voxels(gt: &GroundTruth, voxel_size: f64) -> Vec<VoxelSet> {
    gt.instances.iter().map(|g| voxelize(&g.points, voxel_size)).collect()
}

fn pred_voxels(pred: &[Instance], voxel_size: f64) -> Vec<VoxelSet> {
    pred.iter().map(|p| voxelize(&p.points, voxel_size)).collect()
}

/// Greedy one-to-one matching of predicted to ground-truth instances by
/// voxel IoU; pairs below `iou_thr` stay unmatched.
pub fn match_instances(pred: &[Instance], gt: &GroundTruth, voxel_size: f64, iou_thr: f64) -> Matching {
    let pv = pred_voxels(pred, voxel_size);
    let gv = gt_voxels(gt, voxel_size);
    let pred_ids: Vec<u32> = pred.iter().map(|p| p.id).collect();
    let gt_ids: Vec<u32> = gt.instances.iter().map(|g| g.id).collect();
    let mut pu = vec![false; pred.len()];
    let mut gu = vec![false; gt.instances.len()];
    let pairs = greedy(overlaps(&pv, &gv), &pred_ids, &gt_ids, iou_thr, &mut pu, &mut gu);
    Matching {
        pairs,
        unmatched_pred: (0..pred.len()).filter(|&i| !pu[i]).collect(),
        unmatched_gt: (0..gt.instances.len()).filter(|&j| !gu[j]).collect(),
    }
}

fn check_vocab(pred: &[Instance], gt: &GroundTruth, vocab: &PrototypeSet) -> Result<()> {
    if let Some(p) = pred.iter().find(|p| p.embedding.dim() != vocab.dim()) {
        return Err(Error::DimensionMismatch {
            expected: vocab.dim(),
            found: p.embedding.dim(),
        });
    }
    if let Some(g) = gt.instances.iter().find(|g| !vocab.contains(&g.class)) {
        return Err(Error::InvalidInput(format!(
            "vocabulary lacks ground-truth class `{}`",
            g.class
        )));
    }
    Ok(())
}

fn top5_hit(inst: &Instance, class: &str, vocab: &PrototypeSet) -> Result<bool> {
    Ok(rank_labels(&inst.embedding, vocab)?
        .iter()
        .take(TOP_K)
        .any(|l| *l == class))
}

/// Percentage of ground-truth instances whose matched prediction ranks the
/// true class among its five most similar vocabulary labels. Unmatched
/// ground truth counts as a miss; `None` when there is no ground truth.
pub fn top5_accuracy(
    pred: &[Instance],
    gt: &GroundTruth,
    vocab: &PrototypeSet,
    voxel_size: f64,
    iou_thr: f64,
) -> Result<Option<f64>> {
    check_vocab(pred, gt, vocab)?;
    if gt.instances.is_empty() {
        return Ok(None);
    }
    let m = match_instances(pred, gt, voxel_size, iou_thr);
    let mut hits = 0;
    for &(i, j, _) in &m.pairs {
        if top5_hit(&pred[i], &gt.instances[j].class, vocab)? {
            hits += 1;
        }
    }
    Ok(Some(100.0 * hits as f64 / gt.instances.len() as f64))
}

/// Class-agnostic average precision with confidence = point-count weight.
///
/// Predictions are taken in descending confidence; those of equal
/// confidence form one step, matched among themselves by IoU so the result
/// does not depend on ids or list order. The precision envelope is
/// integrated over recall. `None` when there is no ground truth.
pub fn class_agnostic_ap(pred: &[Instance], gt: &GroundTruth, voxel_size: f64, iou_thr: f64) -> Option<f64> {
    let n_gt = gt.instances.len();
    if n_gt == 0 {
        return None;
    }
    let pv = pred_voxels(pred, voxel_size);
    let gv = gt_voxels(gt, voxel_size);
    let all = overlaps(&pv, &gv);
    let pred_ids: Vec<u32> = pred.iter().map(|p| p.id).collect();
    let gt_ids: Vec<u32> = gt.instances.iter().map(|g| g.id).collect();

    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].weight.cmp(&pred[a].weight));
    let mut pu = vec![false; pred.len()];
    let mut gu = vec![false; n_gt];
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut curve: Vec<(f64, f64)> = Vec::new();
    let mut k = 0;
    while k < order.len() {
        let w = pred[order[k]].weight;
        let mut end = k;
        while end < order.len() && pred[order[end]].weight == w {
            end += 1;
        }
        let group: Vec<usize> = order[k..end].to_vec();
        let cands: Vec<(usize, usize, f64)> = all.iter().copied().filter(|c| group.contains(&c.0)).collect();
        tp += greedy(cands, &pred_ids, &gt_ids, iou_thr, &mut pu, &mut gu).len();
        seen += group.len();
        curve.push((tp as f64 / n_gt as f64, tp as f64 / seen as f64));
        k = end;
    }
    // Interpolated precision: best precision at this recall or beyond.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..curve.len() {
        let (r, _) = curve[i];
        if r > prev_recall {
            let p = curve[i..].iter().map(|c| c.1).fold(0.0, f64::max);
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
    }
    Some(100.0 * ap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub label: String,
    pub gt: usize,
    pub matched: usize,
    pub top5_hits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub top5: Option<f64>,
    pub ap: Option<f64>,
    pub matched: usize,
    pub unmatched_pred: usize,
    pub unmatched_gt: usize,
    pub per_class: Vec<ClassStats>,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# AP confidence = instance point count; IoU threshold {}",
            self.iou_threshold
        );
        let _ = writeln!(s, "{:<12} {:>8}", "metric", "value");
        let _ = writeln!(s, "{:<12} {:>8}", "top5", pct(self.top5));
        let _ = writeln!(s, "{:<12} {:>8}", "ap", pct(self.ap));
        let _ = writeln!(s, "{:<12} {:>8}", "matched", self.matched);
        let _ = writeln!(s, "{:<12} {:>8}", "extra_pred", self.unmatched_pred);
        let _ = writeln!(s, "{:<12} {:>8}", "missed_gt", self.unmatched_gt);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<16} {:>4} {:>8} {:>6}", "class", "gt", "matched", "top5");
        for c in &self.per_class {
            let _ = writeln!(s, "{:<16} {:>4} {:>8} {:>6}", c.label, c.gt, c.matched, c.top5_hits);
        }
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "iou_threshold={}", self.iou_threshold);
        let _ = writeln!(s, "top5={}", pct(self.top5));
        let _ = writeln!(s, "ap={}", pct(self.ap));
        let _ = writeln!(s, "matched={}", self.matched);
        let _ = writeln!(s, "unmatched_pred={}", self.unmatched_pred);
        let _ = writeln!(s, "unmatched_gt={}", self.unmatched_gt);
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "class.{}={},{},{}",
                c.label.replace(' ', "_"),
                c.gt,
                c.matched,
                c.top5_hits
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,gt,matched,top5_hits\n");
        for c in &self.per_class {
            let _ = writeln!(s, "{},{},{},{}", c.label, c.gt, c.matched, c.top5_hits);
        }
        let _ = writeln!(
            s,
            "all,{},{},top5={};ap={}",
            self.matched + self.unmatched_gt,
            self.matched,
            pct(self.top5),
            pct(self.ap)
        );
        s
    }
}

pub fn evaluate(
    pred: &[Instance],
    gt: &GroundTruth,
    vocab: &PrototypeSet,
    voxel_size: f64,
    iou_thr: f64,
) -> Result<EvalReport> {
    let top5 = top5_accuracy(pred, gt, vocab, voxel_size, iou_thr)?;
    let ap = class_agnostic_ap(pred, gt, voxel_size, iou_thr);
    let m = match_instances(pred, gt, voxel_size, iou_thr);
    let mut per_class: Vec<ClassStats> = Vec::new();
    for g in &gt.instances {
        if !per_class.iter().any(|c| c.label == g.class) {
            per_class.push(ClassStats {
                label: g.class.clone(),
                gt: 0,
                matched: 0,
                top5_hits: 0,
            });
        }
        per_class.iter_mut().find(|c| c.label == g.class).expect("inserted").gt += 1;
    }
    for &(i, j, _) in &m.pairs {
        let class = &gt.instances[j].class;
        let hit = top5_hit(&pred[i], class, vocab)?;
        let c = per_class.iter_mut().find(|c| &c.label == class).expect("class listed");
        c.matched += 1;
        c.top5_hits += hit as usize;
    }
    per_class.sort_by(|a, b| a.label.cmp(&b.label));
    Ok(EvalReport {
        iou_threshold: iou_thr,
        top5,
        ap,
        matched: m.pairs.len(),
        unmatched_pred: m.unmatched_pred.len(),
        unmatched_gt: m.unmatched_gt.len(),
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Aabb, Embedding, Vec3};
    use crate::sequence::GtInstance;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const VOX: f64 = 0.1;

    /// Solid block of voxel centres `[x0, x0 + nx) x [0, ny) x [0, 2)`.
    fn block(x0: i64, nx: i64, ny: i64) -> Vec<Vec3> {
        let mut v = Vec::new();
        for i in x0..x0 + nx {
            for j in 0..ny {
                for k in 0..2 {
                    v.push(Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * VOX);
                }
            }
        }
        v
    }

    fn pred(id: u32, points: Vec<Vec3>, weight: u64, e: Embedding) -> Instance {
        Instance {
            id,
            voxels: voxelize(&points, VOX),
            bbox: Aabb::point(points[0]),
            points,
            embedding: e,
            weight,
            room_id: 0,
            observations: vec![],
        }
    }

    fn truth(blocks: &[(i64, i64, i64, &str)]) -> GroundTruth {
        GroundTruth {
            rooms: vec![],
            instances: blocks
                .iter()
                .enumerate()
                .map(|(k, &(x0, nx, ny, c))| GtInstance {
                    id: k as u32,
                    class: c.into(),
                    room_id: 0,
                    centroid: Vec3::ZERO,
                    points: block(x0, nx, ny),
                })
                .collect(),
            masks: vec![],
        }
    }

    fn vocab(n: usize) -> PrototypeSet {
        PrototypeSet::new((0..n).map(|k| (format!("c{k}"), Embedding::basis(n, k))).collect()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let gt = truth(&[(0, 4, 4, "c0"), (10, 3, 3, "c1")]);
        let p: Vec<Instance> = gt
            .instances
            .iter()
            .enumerate()
            .map(|(k, g)| pred(k as u32, g.points.clone(), 10 + k as u64, Embedding::basis(6, k)))
            .collect();
        let m = match_instances(&p, &gt, VOX, 0.5);
        assert_eq!(m.pairs.len(), 2);
        assert!(m.pairs.iter().all(|x| x.2 == 1.0));
        assert_eq!(class_agnostic_ap(&p, &gt, VOX, 0.5), Some(100.0));
        assert_eq!(top5_accuracy(&p, &gt, &vocab(6), VOX, 0.5).unwrap(), Some(100.0));
        assert!(match_instances(&[], &gt, VOX, 0.5).pairs.is_empty());
    }

    #[test]
    fn half_predicted_gives_half_ap() {
        let gt = truth(&[(0, 4, 4, "c0"), (10, 4, 4, "c1")]);
        let p = vec![pred(0, gt.instances[0].points.clone(), 5, Embedding::basis(6, 0))];
        assert_eq!(class_agnostic_ap(&p, &gt, VOX, 0.5), Some(50.0));
        assert_eq!(top5_accuracy(&p, &gt, &vocab(6), VOX, 0.5).unwrap(), Some(50.0));
    }

    #[test]
    fn below_threshold_is_zero() {
        let gt = truth(&[(0, 4, 4, "c0")]);
        // Overlaps a quarter of the truth: IoU 4/16 * ... below 0.5.
        let p = vec![pred(0, block(3, 4, 4), 5, Embedding::basis(6, 0))];
        assert!(voxel_iou(&p[0].voxels, &voxelize(&gt.instances[0].points, VOX)) < 0.5);
        assert_eq!(class_agnostic_ap(&p, &gt, VOX, 0.5), Some(0.0));
        assert_eq!(class_agnostic_ap(&p, &truth(&[]), VOX, 0.5), None);
    }

    #[test]
    fn hand_computed_pr_curve() {
        // Ranked: TP, FP, TP against three GT. Precision envelope: 1 up to
        // recall 1/3, then 2/3 up to recall 2/3.
        let gt = truth(&[(0, 4, 4, "c0"), (10, 4, 4, "c0"), (20, 4, 4, "c0")]);
        let p = vec![
            pred(0, gt.instances[0].points.clone(), 30, Embedding::basis(6, 0)),
            pred(1, block(40, 4, 4), 20, Embedding::basis(6, 0)),
            pred(2, gt.instances[1].points.clone(), 10, Embedding::basis(6, 0)),
        ];
        let ap = class_agnostic_ap(&p, &gt, VOX, 0.5).unwrap();
        assert!((ap - 100.0 * (1.0 / 3.0 + (1.0 / 3.0) * (2.0 / 3.0))).abs() < 1e-9);
    }

    #[test]
    fn sixth_rank_is_a_miss() {
        let gt = truth(&[(0, 4, 4, "c5")]);
        let v = vocab(8);
        // Closest to c0..c4, then c5.
        let mut e = vec![0.0; 8];
        for (k, x) in e.iter_mut().enumerate().take(6) {
            *x = 1.0 - 0.1 * k as f64;
        }
        let p = vec![pred(0, gt.instances[0].points.clone(), 5, Embedding::new(e).unwrap())];
        assert_eq!(top5_accuracy(&p, &gt, &v, VOX, 0.5).unwrap(), Some(0.0));
        assert!(top5_accuracy(&p, &gt, &vocab(3), VOX, 0.5).is_err());
    }

    /// Best total-IoU one-to-one assignment by exhaustive search.
    fn best_assignment(iou: &[Vec<f64>], thr: f64) -> f64 {
        fn go(i: usize, iou: &[Vec<f64>], used: &mut Vec<bool>, thr: f64) -> f64 {
            if i == iou.len() {
                return 0.0;
            }
            let mut best = go(i + 1, iou, used, thr);
            for j in 0..used.len() {
                if !used[j] && iou[i][j] >= thr {
                    used[j] = true;
                    best = best.max(iou[i][j] + go(i + 1, iou, used, thr));
                    used[j] = false;
                }
            }
            best
        }
        go(0, iou, &mut vec![false; iou[0].len()], thr)
    }

    #[test]
    fn greedy_equals_exhaustive_on_separated_scenes() {
        // With the 0.5 threshold each prediction can match at most one
        // ground truth, so greedy is optimal.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let gt = truth(&[(0, 4, 4, "c0"), (10, 4, 4, "c0"), (20, 4, 4, "c0"), (30, 4, 4, "c0")]);
            let p: Vec<Instance> = (0..5)
                .map(|k| {
                    let x0 = 10 * rng.random_range(0..4) + rng.random_range(-3..=3);
                    pred(
                        k,
                        block(x0, rng.random_range(2..6), 4),
                        1 + k as u64,
                        Embedding::basis(6, 0),
                    )
                })
                .collect();
            let pv = pred_voxels(&p, VOX);
            let gv = gt_voxels(&gt, VOX);
            let iou: Vec<Vec<f64>> = pv
                .iter()
                .map(|a| gv.iter().map(|b| voxel_iou(a, b)).collect())
                .collect();
            let m = match_instances(&p, &gt, VOX, 0.5);
            let total: f64 = m.pairs.iter().map(|x| x.2).sum();
            assert!((total - best_assignment(&iou, 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_ignore_ids_and_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gt = truth(&[(0, 4, 4, "c0"), (10, 4, 4, "c1"), (20, 4, 4, "c2")]);
        let mut p: Vec<Instance> = (0..6)
            .map(|k| {
                let x0 = 10 * rng.random_range(0..3) + rng.random_range(-2..=2);
                pred(
                    k,
                    block(x0, 4, 4),
                    rng.random_range(1..4),
                    Embedding::basis(6, rng.random_range(0..6)),
                )
            })
            .collect();
        let v = vocab(6);
        let ap = class_agnostic_ap(&p, &gt, VOX, 0.5);
        let t5 = top5_accuracy(&p, &gt, &v, VOX, 0.5).unwrap();
        for _ in 0..10 {
            p.shuffle(&mut rng);
            let mut ids: Vec<u32> = (0..6).collect();
            ids.shuffle(&mut rng);
            for (inst, id) in p.iter_mut().zip(ids) {
                inst.id = id + 100;
            }
            assert_eq!(class_agnostic_ap(&p, &gt, VOX, 0.5), ap);
            assert_eq!(top5_accuracy(&p, &gt, &v, VOX, 0.5).unwrap(), t5);
        }
    }

    #[test]
    fn random_embeddings_hit_a_quarter() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 20;
        let v = vocab(n);
        let gt = truth(&[(0, 2, 2, "c3")]);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let trials = 4000;
        let mut hits = 0;
        for _ in 0..trials {
            let e: Vec<f64> = (0..n)
                .map(|_| rand_distr::Distribution::sample(&normal, &mut rng))
                .collect();
            let p = vec![pred(0, gt.instances[0].points.clone(), 1, Embedding::new(e).unwrap())];
            if top5_accuracy(&p, &gt, &v, VOX, 0.5).unwrap() == Some(100.0) {
                hits += 1;
            }
        }
        let rate = hits as f64 / trials as f64;
        assert!((rate - 0.25).abs() < 0.03, "{rate}");
    }

    proptest::proptest! {
        #[test]
        fn percentages_stay_in_range(
            spots in proptest::collection::vec((0i64..40, 1i64..6, 1u64..5, 0usize..6), 0..8),
            thr in 0.05f64..1.0,
        ) {
            let gt = truth(&[(0, 4, 4, "c0"), (10, 4, 4, "c1"), (20, 4, 4, "c2")]);
            let p: Vec<Instance> = spots
                .iter()
                .enumerate()
                .map(|(k, &(x0, nx, w, c))| pred(k as u32, block(x0, nx, 4), w, Embedding::basis(6, c)))
                .collect();
            let ap = class_agnostic_ap(&p, &gt, VOX, thr).unwrap();
            let t5 = top5_accuracy(&p, &gt, &vocab(6), VOX, thr).unwrap().unwrap();
            proptest::prop_assert!((0.0..=100.0).contains(&ap));
            proptest::prop_assert!((0.0..=100.0).contains(&t5));
            let m = match_instances(&p, &gt, VOX, thr);
            proptest::prop_assert_eq!(m.pairs.len() + m.unmatched_pred.len(), p.len());
            proptest::prop_assert_eq!(m.pairs.len() + m.unmatched_gt.len(), 3);
        }
    }
}
