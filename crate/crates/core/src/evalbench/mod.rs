//! Instance matching, retrieval and detection metrics, and fusion timing.

mod bench;
mod metrics;

pub use bench::{bench_fusion, BenchReport, ModeTiming, MIN_RUNS};
pub use metrics::{
    class_agnostic_ap, evaluate, match_instances, top5_accuracy, voxel_iou, ClassStats, EvalReport, Matching,
    DEFAULT_IOU,
};
