//! Evaluation protocol: metrics, grouped cross-validation, operating
//! points, offset sweeps, baseline features and risk maps.

pub mod cv;
pub mod features;
pub mod metrics;
pub mod riskmap;

pub use cv::{
    grouped_cv_split, offset_evaluation, offset_months, predict_all, run_cv, run_splits, train_recipe, CvConfig,
    FoldResult, MetricsReport, Recipe, RunConfig, Split, Summary, Trained,
};
pub use features::{interval_stats, FeatureConfig, FeatureExtractor, IntervalStats, LogisticRegression};
pub use metrics::{accuracy, auprc, auroc, compute_metrics, mean_std, operating_point, Metrics, OperatingPoint, Target};
pub use riskmap::{risk_map, RiskMap, RiskRow};
