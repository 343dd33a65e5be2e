use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::bayes::{aggregate, CellKind, PosteriorTable};
use crate::market_data::PriceSeries;
use crate::sr_engine::{detect_events, DetectorConfig, EngineError, Gamma};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub lag: usize,
    pub mean: f64,
    pub sd: f64,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub kind: CellKind,
    pub b_prev: u32,
    pub points: Vec<DecayPoint>,
}

/// Posterior bounce probability per b_prev as a function of the lag window.
/// Lags are sorted and deduplicated; one curve per (kind, b_prev).
pub fn macro_decay_sweep(
    series: &PriceSeries,
    lags: &[usize],
    b_prevs: &[u32],
    gamma: Gamma,
) -> Result<Vec<DecayCurve>, ExperimentError> {
    let mut lags = lags.to_vec();
    lags.sort_unstable();
    lags.dedup();
    if lags.is_empty() || b_prevs.is_empty() {
        return Err(ExperimentError::Invalid("need at least one lag and one b_prev".into()));
    }
    if let Some(&lag) = lags.last() {
        if lag >= series.len() {
            return Err(EngineError::SeriesTooShort {
                len: series.len(),
                lag,
            }
            .into());
        }
    }
    let cap = DetectorConfig::default()
        .b_prev_cap
        .max(*b_prevs.iter().max().expect("non-empty"));
    let tables: Vec<PosteriorTable> = lags
        .par_iter()
        .map(|&lag| {
            let config = DetectorConfig {
                lag_window: lag,
                gamma,
                b_prev_cap: cap,
            };
            let run = detect_events(series, &config)?;
            Ok(aggregate(&run.events, cap))
        })
        .collect::<Result<_, ExperimentError>>()?;

    let mut b_sorted = b_prevs.to_vec();
    b_sorted.sort_unstable();
    b_sorted.dedup();
    let mut curves = Vec::new();
    for kind in CellKind::ALL {
        for &b_prev in &b_sorted {
            let points = lags
                .iter()
                .zip(&tables)
                .map(|(&lag, table)| {
                    let p = table.get(kind, b_prev).expect("cell");
                    DecayPoint {
                        lag,
                        mean: p.mean,
                        sd: p.sd(),
                        n: p.cell.total(),
                    }
                })
                .collect();
            curves.push(DecayCurve {
                kind,
                b_prev,
                points,
            });
        }
    }
    Ok(curves)
}
