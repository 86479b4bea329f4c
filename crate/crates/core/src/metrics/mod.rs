//! Segmentation and classification metrics, per-sample metric tables, and
//! the statistical test battery.

mod classification;
mod segmentation;
pub mod stats;
mod table;

pub use classification::{classification_metrics, ClsMetrics};
pub use segmentation::{average_hausdorff, segmentation_metrics, squared_distance_transform, ssim, SegMetrics};
pub use stats::{
    bland_altman, independent_t, one_way_anova, paired_t, paired_tests, pearson, wilcoxon_signed_rank,
    AgreementPoint, StatReport,
};
pub use table::{MetricsRow, MetricsTable};
