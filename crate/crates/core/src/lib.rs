//! Transfer learning for penalised generalised linear models.
//!
//! Per-feature prior effects from external sources are calibrated to a
//! target data set (exponential or isotonic calibration), screened by a
//! one-sided signed-rank test and combined with directly estimated
//! elastic-net coefficients by stacked generalisation.

pub mod calibration;
pub mod cli;
pub mod error;
pub mod folds;
pub mod glm;
pub mod model_io;
pub mod numerics;
pub mod simulation;
pub mod solver;
pub mod stacking;

pub use error::{Error, Result};
pub use folds::FoldPlan;
pub use glm::{Dataset, Family};
pub use numerics::RngStream;
pub use solver::{cv_fit, fit_path, CvFit, PathFit, PenaltySpec};
