//! Scan-quality and dynamism metrics.
//!
//! Chamfer and EMD compare point clouds. LQI regresses the standard
//! deviation of Gaussian range noise present in a scan; DSR is the share
//! of valid cells a per-cell classifier labels dynamic.

mod dsr;
mod lqi;
mod metrics;

pub use dsr::{dsr, dsr_accuracy, dsr_from_mask, train_dsr_classifier, DsrConfig, DsrModel, DsrTrainConfig, DSR_CHECKPOINT_KIND};
pub use lqi::{add_range_noise, lqi, lqi_features, train_lqi, LqiConfig, LqiModel, LqiTrainConfig, LQI_CHECKPOINT_KIND};
pub use metrics::{chamfer, emd, emd_subsampled, hungarian, spearman};
