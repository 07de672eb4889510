//! Backend for blinded mean-opinion-score studies of image versions.
//!
//! Raters first see anchored calibration exemplars, then score every
//! version of their assigned images in a shuffled order. Scores are appended
//! to a synced log before they are acknowledged, and the log is replayed on
//! start.

mod error;
pub mod http;
mod plan;
mod report;
mod study;

pub use error::{MosError, Result};
pub use plan::{CalibrationPlan, StudyPlan, DEFAULT_VERSIONS};
pub use report::{aggregate_mos, MosReport, VersionMos, Z_95};
pub use study::{
    rating_order, Acknowledgement, ItemView, NextView, Phase, Progress, RatingRecord, Session,
    SessionInfo, SessionItem, Study, MAX_SCORE, MIN_SCORE,
};
