//! Synthetic series with deliberately planted support/resistance behaviour,
//! used as positive controls for the permutation and decay studies.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{replicate_rng, DataError, PriceSeries, SIMULATION_STREAM};

/// Random walk with fixed bands centred on multiples of `spacing`. Inside a
/// band (|x - centre| <= half_width) the step direction reverses relative
/// to the previous step with probability `reversal_prob`; elsewhere the
/// direction is a fair coin. Step magnitudes are |N(0, step_sd^2)|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedBandSpec {
    pub length: usize,
    pub spacing: f64,
    pub half_width: f64,
    pub reversal_prob: f64,
    pub step_sd: f64,
    pub seed: u64,
}

impl PlantedBandSpec {
    /// Bands of half-width E|step| (the walk's own level width).
    pub fn with_defaults(length: usize, seed: u64) -> Self {
        Self {
            length,
            spacing: 4.0,
            half_width: (2.0 / std::f64::consts::PI).sqrt(),
            reversal_prob: 0.7,
            step_sd: 1.0,
            seed,
        }
    }

    pub fn band_centre(&self, price: f64) -> f64 {
        (price / self.spacing).round() * self.spacing
    }

    pub fn in_band(&self, price: f64) -> bool {
        (price - self.band_centre(price)).abs() <= self.half_width
    }

    fn validate(&self) -> Result<Normal<f64>, DataError> {
        if self.length < 2 {
            return Err(DataError::InvalidSpec("length must be at least 2".into()));
        }
        if !(self.spacing > 2.0 * self.half_width) || !(self.half_width > 0.0) {
            return Err(DataError::InvalidSpec(
                "bands must have positive width and must not touch".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.reversal_prob) {
            return Err(DataError::InvalidSpec("reversal_prob outside [0, 1]".into()));
        }
        Normal::new(0.0, self.step_sd).map_err(|e| DataError::InvalidSpec(e.to_string()))
    }
}

pub fn simulate_planted_bands(spec: &PlantedBandSpec) -> Result<PriceSeries, DataError> {
    let steps = spec.validate()?;
    let mut rng = replicate_rng(spec.seed, SIMULATION_STREAM);
    let mut prices = Vec::with_capacity(spec.length);
    let mut x = 0.0;
    let mut last_sign = 1.0;
    prices.push(x);
    for _ in 1..spec.length {
        let magnitude = steps.sample(&mut rng).abs();
        let sign = if spec.in_band(x) {
            if rng.random_bool(spec.reversal_prob) {
                -last_sign
            } else {
                last_sign
            }
        } else if rng.random_bool(0.5) {
            1.0
        } else {
            -1.0
        };
        x += sign * magnitude;
        last_sign = sign;
        prices.push(x);
    }
    Ok(PriceSeries::new(format!("planted-seed{}", spec.seed), prices))
}

/// Planted bands whose reversal effect only lasts `active_steps` after the
/// price last left that band; a band untouched for longer behaves like
/// the plain walk on the next visit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayingBandSpec {
    pub bands: PlantedBandSpec,
    pub active_steps: usize,
}

pub fn simulate_decaying_bands(spec: &DecayingBandSpec) -> Result<PriceSeries, DataError> {
    let bands = &spec.bands;
    let steps = bands.validate()?;
    let mut rng = replicate_rng(bands.seed, SIMULATION_STREAM);
    let mut prices = Vec::with_capacity(bands.length);
    let mut last_exit: HashMap<i64, usize> = HashMap::new();
    let mut current_band: Option<i64> = None;
    let mut x = 0.0;
    let mut last_sign = 1.0;
    prices.push(x);
    for t in 1..bands.length {
        let here = bands
            .in_band(x)
            .then(|| (x / bands.spacing).round() as i64);
        if let Some(prev) = current_band {
            if here != Some(prev) {
                last_exit.insert(prev, t - 1);
            }
        }
        current_band = here;

        let reinforced = here
            .and_then(|band| last_exit.get(&band))
            .is_some_and(|&exit| t - exit <= spec.active_steps);
        let magnitude = steps.sample(&mut rng).abs();
        let sign = if reinforced {
            if rng.random_bool(bands.reversal_prob) {
                -last_sign
            } else {
                last_sign
            }
        } else if rng.random_bool(0.5) {
            1.0
        } else {
            -1.0
        };
        x += sign * magnitude;
        last_sign = sign;
        prices.push(x);
    }
    Ok(PriceSeries::new(format!("decaying-seed{}", bands.seed), prices))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_is_deterministic() {
        let spec = PlantedBandSpec::with_defaults(5_000, 9);
        assert_eq!(simulate_planted_bands(&spec).unwrap(), simulate_planted_bands(&spec).unwrap());
    }

    #[test]
    fn no_reversal_bias_reduces_to_fair_walk() {
        let mut spec = PlantedBandSpec::with_defaults(200_000, 1);
        spec.reversal_prob = 0.5;
        let s = simulate_planted_bands(&spec).unwrap();
        let d = s.increments();
        let same_sign = d.windows(2).filter(|w| (w[0] > 0.0) == (w[1] > 0.0)).count();
        let frac = same_sign as f64 / (d.len() - 1) as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn rejects_overlapping_bands() {
        let mut spec = PlantedBandSpec::with_defaults(100, 1);
        spec.spacing = 1.0;
        assert!(simulate_planted_bands(&spec).is_err());
    }
}
