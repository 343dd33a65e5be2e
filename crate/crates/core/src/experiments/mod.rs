//! The three studies run over a series and its shuffled-returns surrogates:
//! the permutation estimate of Lambda, the lag sweep (macro decay), and the
//! logistic fit of bounce outcome on time since the previous bounce
//! (micro decay). Also the AR(1) control study.
//!
//! Replicates and lag points run on the ambient rayon pool; results are
//! collected in index order, so output does not depend on the worker count.

mod ar1;
mod decay;
mod logistic;
mod permutation;

pub use ar1::{ar1_study, Ar1StudyRow};
pub use decay::{macro_decay_sweep, DecayCurve, DecayPoint};
pub use logistic::{
    fit_logistic, logistic_fit, logistic_fit_with, significance_stars, FitError, LogisticFit,
};
pub use permutation::{
    median_stability, permutation_lambda, running_median, LambdaRow, LambdaTable,
    MedianStabilityTrace,
};

use thiserror::Error;

use crate::market_data::DataError;
use crate::sr_engine::EngineError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Invalid(String),
}

/// Run `f` on a dedicated pool of `workers` threads (0 = available parallelism).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(f)
}
