//! Train/test protocol, concordance, risk-group calibration and the
//! synthetic cohort generator.

mod calibration;
mod concordance;
mod split;
mod synthetic;

pub use calibration::{
    risk_group_calibration, write_calibration, RiskBin, RiskGroupReport, DEFAULT_EDGES,
};
pub use concordance::{concordance, harrell_c, subject_scores, Concordance, SubjectScore};
pub use split::{split_train_test, Partition, SplitAssignment};
pub use synthetic::{
    generate_synthetic, Baseline, Censoring, Correlation, Effect, InteractionEffect, Prevalence,
    Schedule, SyntheticCohort, SyntheticConfig, Truth,
};
