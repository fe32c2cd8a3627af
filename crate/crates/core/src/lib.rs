//! Rank-based meta-analytic screening and evaluation of trial-level surrogate
//! markers across multiple studies.

pub mod data;
pub mod dist;
pub mod equivalence;
pub mod error;
pub mod meta;
pub mod metrics;
pub mod pipeline;
pub mod rank;
pub mod report;
pub mod signature;
pub mod sim;

pub use data::{ColumnMapping, Design, StudyDataset, SubjectRecord};
pub use equivalence::{bh_adjust, screen_markers, test_equivalence, tost_p, EquivalenceResult, TostP};
pub use error::{ErrorClass, Result, SurrError};
pub use meta::{pool_effects, MetaInput, MetaModel, PoolOptions, PooledResult};
pub use metrics::{bca_bootstrap_ci, ccc, icc21, r2_trial_wls, BcaInterval, EffectPairs, Statistic};
pub use rank::{estimate_study_marker, WithinStudyEstimate};
pub use signature::{evaluate_signature, signature_weights, EvaluateOptions, EvaluationReport, SignatureSpec};
pub use pipeline::{screen, EpsilonPolicy, ScreenOptions, ScreenReport};
pub use sim::{run_calibration, run_permutation_fpr, run_power, SimConfig, SimRow};
