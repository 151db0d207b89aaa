//! Pilot estimation and statistical checks of estimator behaviour.

pub mod cost;
pub mod pilot;
pub mod study;

pub use cost::{complexity_scale, cost_scaling_study, CostRow, CostTable, Measurement};
pub use pilot::{estimate_c1, estimate_structural, estimate_v_inf, C1Estimate, PilotLevel, PilotReport, VInfEstimate};
pub use study::{clt_check, clt_check_study, ks_distance, slln_decay_check, study_statistics, summarize, CltReport, CltThresholds, SllnReport, SllnRow, StudyReport};
