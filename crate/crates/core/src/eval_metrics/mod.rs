//! Joint detection and grading evaluation: binning, greedy IoU matching,
//! AP and AVP at IoU > 0.1, bin accuracy and fold aggregation.

mod binning;
mod interchange;
mod matching;
mod precision;
mod report;

pub use binning::BinningScheme;
pub use interchange::{pair_by_scene, read_jsonl, write_jsonl, DetectionRecord, GtRecord};
pub use matching::{match_detections, GtObject, MatchResult, MatchedDetection, EVAL_IOU};
pub use precision::{average_precision, average_precision_ranked, bin_accuracy, TpKind};
pub use report::{aggregate_folds, evaluate_scenes, Aggregate, FoldMetrics, MetricsReport};

pub use crate::geometry::iou;
