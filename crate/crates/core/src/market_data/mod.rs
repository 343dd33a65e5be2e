//! Price series: loading, validation, the level-width statistic, and the
//! surrogate generators (shuffled returns, AR(1), planted bands).

mod io;
mod planted;

pub use io::{load_series, save_series, ColumnMap, SeriesMeta};
pub use planted::{simulate_decaying_bands, simulate_planted_bands, DecayingBandSpec, PlantedBandSpec};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the generator behind every seeded draw, recorded in manifests.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9; seed_from_u64(seed), stream = replicate index)";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("series too short: need at least {needed} prices, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(i64),
    #[error("invalid AR(1) spec: {0}")]
    InvalidSpec(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// An ordered, cleaned price series. Time is the row index; `timestamps`
/// carries the source time stamps (minutes or epoch-minutes) when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub id: String,
    pub prices: Vec<f64>,
    pub timestamps: Option<Vec<i64>>,
}

impl PriceSeries {
    pub fn new(id: impl Into<String>, prices: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            prices,
            timestamps: None,
        }
    }

    pub fn with_timestamps(
        id: impl Into<String>,
        prices: Vec<f64>,
        timestamps: Vec<i64>,
    ) -> Result<Self, DataError> {
        if timestamps.len() != prices.len() {
            return Err(DataError::Parse {
                line: 0,
                message: format!(
                    "{} timestamps for {} prices",
                    timestamps.len(),
                    prices.len()
                ),
            });
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[1] <= w[0]) {
            return Err(DataError::DuplicateTimestamp(w[1]));
        }
        Ok(Self {
            id: id.into(),
            prices,
            timestamps: Some(timestamps),
        })
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn negated(&self) -> Self {
        Self {
            id: format!("{}-neg", self.id),
            prices: self.prices.iter().map(|p| -p).collect(),
            timestamps: self.timestamps.clone(),
        }
    }

    pub fn increments(&self) -> Vec<f64> {
        self.prices.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn meta(&self) -> Result<SeriesMeta, DataError> {
        Ok(SeriesMeta {
            id: self.id.clone(),
            rows: self.len(),
            delta: mean_abs_increment(self)?,
        })
    }

    pub(crate) fn require_len(&self, needed: usize) -> Result<(), DataError> {
        if self.len() < needed {
            Err(DataError::TooShort {
                needed,
                got: self.len(),
            })
        } else {
            Ok(())
        }
    }
}

/// Seed and replicate index of one shuffled-returns draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffleSpec {
    pub seed: u64,
    pub replicate_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Spec {
    pub rho: f64,
    pub length: usize,
    pub noise_sd: f64,
    pub initial_value: f64,
    pub seed: u64,
}

impl Ar1Spec {
    /// Unit-normal innovations starting from zero.
    pub fn standard(rho: f64, length: usize, seed: u64) -> Self {
        Self {
            rho,
            length,
            noise_sd: 1.0,
            initial_value: 0.0,
            seed,
        }
    }
}

/// Stream reserved for synthetic series, so a simulation and the shuffles of
/// it can share one seed without sharing random draws.
pub const SIMULATION_STREAM: u64 = u64::MAX;

/// Deterministic generator for replicate `stream` under `seed`.
pub fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mean absolute one-step increment over the whole series. This is the
/// default level half-width.
pub fn mean_abs_increment(series: &PriceSeries) -> Result<f64, DataError> {
    series.require_len(2)?;
    let total: f64 = series
        .prices
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .sum();
    Ok(total / (series.len() - 1) as f64)
}

/// Rebuild a price path from `start` by cumulatively adding `increments`.
pub fn reconstruct(start: f64, increments: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(increments.len() + 1);
    let mut level = start;
    out.push(level);
    for d in increments {
        level += d;
        out.push(level);
    }
    out
}

/// Apply an explicit permutation of the increments (`order[k]` is the
/// source increment placed at position k).
pub fn permute_returns(series: &PriceSeries, order: &[usize]) -> Result<PriceSeries, DataError> {
    series.require_len(2)?;
    let diffs = series.increments();
    if order.len() != diffs.len() {
        return Err(DataError::InvalidSpec(format!(
            "permutation of length {} for {} increments",
            order.len(),
            diffs.len()
        )));
    }
    let permuted: Vec<f64> = order.iter().map(|&i| diffs[i]).collect();
    Ok(PriceSeries {
        id: series.id.clone(),
        prices: reconstruct(series.prices[0], &permuted),
        timestamps: series.timestamps.clone(),
    })
}

/// Shuffled-returns surrogate: arithmetic first differences permuted
/// uniformly at random, re-accumulated from the original first price.
pub fn shuffle_returns(series: &PriceSeries, spec: ShuffleSpec) -> Result<PriceSeries, DataError> {
    series.require_len(2)?;
    let mut order: Vec<usize> = (0..series.len() - 1).collect();
    let mut rng = replicate_rng(spec.seed, spec.replicate_index);
    order.shuffle(&mut rng);
    let mut out = permute_returns(series, &order)?;
    out.id = format!("{}-shuffle{}", series.id, spec.replicate_index);
    Ok(out)
}

/// X_t = rho * X_{t-1} + eps_t with eps_t ~ N(0, noise_sd^2), X_0 = initial_value.
pub fn simulate_ar1(spec: &Ar1Spec) -> Result<PriceSeries, DataError> {
    if spec.length < 2 {
        return Err(DataError::InvalidSpec(format!(
            "length must be at least 2, got {}",
            spec.length
        )));
    }
    if !(spec.noise_sd >= 0.0) || !spec.noise_sd.is_finite() {
        return Err(DataError::InvalidSpec(format!(
            "noise_sd must be finite and non-negative, got {}",
            spec.noise_sd
        )));
    }
    if !spec.rho.is_finite() || !spec.initial_value.is_finite() {
        return Err(DataError::InvalidSpec("rho and initial_value must be finite".into()));
    }
    let mut rng = replicate_rng(spec.seed, SIMULATION_STREAM);
    let mut prices = Vec::with_capacity(spec.length);
    let mut x = spec.initial_value;
    prices.push(x);
    if spec.noise_sd == 0.0 {
        for _ in 1..spec.length {
            x *= spec.rho;
            prices.push(x);
        }
    } else {
        let noise = Normal::new(0.0, spec.noise_sd)
            .map_err(|e| DataError::InvalidSpec(e.to_string()))?;
        for _ in 1..spec.length {
            x = spec.rho * x + noise.sample(&mut rng);
            prices.push(x);
        }
    }
    Ok(PriceSeries::new(format!("ar1-rho{}-seed{}", spec.rho, spec.seed), prices))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(p: &[f64]) -> PriceSeries {
        PriceSeries::new("t", p.to_vec())
    }

    #[test]
    fn delta_small_cases() {
        assert_eq!(mean_abs_increment(&series(&[1.0, 2.0, 4.0])).unwrap(), 1.5);
        assert_eq!(mean_abs_increment(&series(&[5.0, 5.0, 5.0, 5.0])).unwrap(), 0.0);
        assert!(matches!(
            mean_abs_increment(&series(&[1.0])),
            Err(DataError::TooShort { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn delta_of_gaussian_walk() {
        // Oracle: average of |N(0,1)| samples drawn independently of the walk.
        let mut rng = replicate_rng(99, 7);
        let normal = Normal::<f64>::new(0.0, 1.0).unwrap();
        let oracle: f64 = (0..200_000).map(|_| normal.sample(&mut rng).abs()).sum::<f64>() / 200_000.0;
        assert!((oracle - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.005);

        let walk = simulate_ar1(&Ar1Spec::standard(1.0, 100_000, 11)).unwrap();
        let delta = mean_abs_increment(&walk).unwrap();
        assert!((delta - oracle).abs() < 0.01, "delta {delta} oracle {oracle}");
    }

    #[test]
    fn shuffle_three_points() {
        let s = series(&[1.0, 3.0, 2.0]);
        let mut seen = std::collections::BTreeSet::new();
        for r in 0..64 {
            let out = shuffle_returns(&s, ShuffleSpec { seed: 5, replicate_index: r }).unwrap();
            assert_eq!(out.prices[0], 1.0);
            assert!(out.prices == vec![1.0, 3.0, 2.0] || out.prices == vec![1.0, 0.0, 2.0]);
            seen.insert(out.prices[1] as i64);
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn identity_permutation_is_noop() {
        let s = series(&[1.5, 2.25, 0.75, 3.0, 3.0, -1.0]);
        let order: Vec<usize> = (0..s.len() - 1).collect();
        assert_eq!(permute_returns(&s, &order).unwrap().prices, s.prices);
    }

    #[test]
    fn shuffle_preserves_diff_multiset_exactly_on_dyadic_grid() {
        let mut rng = replicate_rng(3, 0);
        let steps = Normal::<f64>::new(0.0, 1.0).unwrap();
        let prices: Vec<f64> = reconstruct(
            100.0,
            &(0..9_999)
                .map(|_| (steps.sample(&mut rng) * 1024.0).round() / 1024.0)
                .collect::<Vec<_>>(),
        );
        let s = series(&prices);
        let out = shuffle_returns(&s, ShuffleSpec { seed: 1, replicate_index: 4 }).unwrap();
        assert_eq!(out.len(), s.len());
        let mut a = s.increments();
        let mut b = out.increments();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_seeds_give_distinct_permutations() {
        let s = simulate_ar1(&Ar1Spec::standard(1.0, 1_000, 8)).unwrap();
        for k in 0..10u64 {
            let a = shuffle_returns(&s, ShuffleSpec { seed: 2 * k, replicate_index: 0 }).unwrap();
            let b = shuffle_returns(&s, ShuffleSpec { seed: 2 * k + 1, replicate_index: 0 }).unwrap();
            assert_ne!(a.prices, b.prices);
        }
    }

    #[test]
    fn ar1_zero_noise_geometric_decay() {
        let spec = Ar1Spec {
            rho: 0.5,
            length: 4,
            noise_sd: 0.0,
            initial_value: 8.0,
            seed: 0,
        };
        assert_eq!(simulate_ar1(&spec).unwrap().prices, vec![8.0, 4.0, 2.0, 1.0]);
    }

    #[test]
    fn ar1_rejects_bad_specs() {
        assert!(simulate_ar1(&Ar1Spec::standard(1.0, 1, 0)).is_err());
        let mut spec = Ar1Spec::standard(1.0, 10, 0);
        spec.noise_sd = -1.0;
        assert!(simulate_ar1(&spec).is_err());
    }

    #[test]
    fn ar1_is_bitwise_deterministic() {
        let spec = Ar1Spec::standard(0.95, 5_000, 42);
        assert_eq!(simulate_ar1(&spec).unwrap(), simulate_ar1(&spec).unwrap());
    }

    #[test]
    fn random_walk_increment_moments() {
        let walk = simulate_ar1(&Ar1Spec::standard(1.0, 1_000_000, 2024)).unwrap();
        let d = walk.increments();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((sd - 1.0).abs() < 0.01, "sd {sd}");
    }

    #[test]
    fn stationary_ar1_variance() {
        let walk = simulate_ar1(&Ar1Spec::standard(0.9, 1_000_000, 77)).unwrap();
        let n = walk.len() as f64;
        let mean = walk.prices.iter().sum::<f64>() / n;
        let var = walk.prices.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 1.0 / (1.0 - 0.81);
        assert!((var / target - 1.0).abs() < 0.05, "var {var} target {target}");
    }
}
