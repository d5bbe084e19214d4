//! Test-time pipeline: mirror views, checkpoint ensembles, weighted box
//! clustering and stacking of per-slice detections along z.

mod clustering;
mod ensemble;
mod stacking;
mod views;

pub use clustering::{weighted_box_clustering, weighted_mean, ClusterConfig, SourcedDetection};
pub use ensemble::{run_ensemble, EnsembleConfig};
pub use stacking::{consolidate_2d_to_3d, SliceDetection, DEFAULT_Z_LINK_IOU};
pub use views::{mirror_views, ViewTransform};
