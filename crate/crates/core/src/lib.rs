//! Discovery and statistical evaluation of support/resistance levels in
//! intraday price series.
pub mod bayes;
pub mod cli;
pub mod experiments;
pub mod market_data;
pub mod report;
pub mod sr_engine;
