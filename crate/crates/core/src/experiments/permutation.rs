use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::bayes::{aggregate, CellKind, PosteriorTable};
use crate::market_data::{shuffle_returns, PriceSeries, ShuffleSpec};
use crate::sr_engine::{detect_events, DetectorConfig, Gamma};

/// Win tally for one (kind, lag, b_prev) row. Replicates whose shuffled
/// cell is empty are excluded from the denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub kind: CellKind,
    pub lag: usize,
    pub b_prev: u32,
    pub wins: u64,
    pub replicate_count: u64,
    pub excluded: u64,
}

impl LambdaRow {
    pub fn lambda(&self) -> Option<f64> {
        (self.replicate_count > 0).then(|| self.wins as f64 / self.replicate_count as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTable {
    pub series_id: String,
    pub lag: usize,
    pub gamma: f64,
    pub replicates: u64,
    pub seed: u64,
    pub rows: Vec<LambdaRow>,
    pub original: PosteriorTable,
}

impl LambdaTable {
    pub fn row(&self, kind: CellKind, b_prev: u32) -> Option<&LambdaRow> {
        self.rows.iter().find(|r| r.kind == kind && r.b_prev == b_prev)
    }
}

/// Detector config with gamma pinned to the value resolved on `series`, so
/// surrogates are scanned with the same level width as the original.
fn pinned(series: &PriceSeries, config: &DetectorConfig) -> Result<(DetectorConfig, f64), ExperimentError> {
    let gamma = config.resolve_gamma(series)?;
    Ok((
        DetectorConfig {
            gamma: Gamma::Fixed(gamma),
            ..*config
        },
        gamma,
    ))
}

fn shuffled_table(
    series: &PriceSeries,
    config: &DetectorConfig,
    seed: u64,
    replicate: u64,
) -> Result<PosteriorTable, ExperimentError> {
    let surrogate = shuffle_returns(
        series,
        ShuffleSpec {
            seed,
            replicate_index: replicate,
        },
    )?;
    let run = detect_events(&surrogate, config)?;
    Ok(aggregate(&run.events, config.b_prev_cap))
}

/// Monte-Carlo estimate of Lambda: the fraction of shuffled-returns
/// replicates whose posterior mean bounce probability is strictly below
/// the original's, per (kind, b_prev).
pub fn permutation_lambda(
    series: &PriceSeries,
    config: &DetectorConfig,
    replicates: u64,
    seed: u64,
) -> Result<LambdaTable, ExperimentError> {
    if replicates == 0 {
        return Err(ExperimentError::Invalid("replicates must be at least 1".into()));
    }
    let (config, gamma) = pinned(series, config)?;
    let original_run = detect_events(series, &config)?;
    let original = aggregate(&original_run.events, config.b_prev_cap);

    let keys: Vec<(CellKind, u32)> = CellKind::ALL
        .iter()
        .flat_map(|&k| (0..=config.b_prev_cap).map(move |b| (k, b)))
        .collect();

    // One comparison vector per replicate, in replicate order.
    let comparisons: Vec<Vec<Option<bool>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let shuffled = shuffled_table(series, &config, seed, r)?;
            Ok(keys
                .iter()
                .map(|&(kind, b)| {
                    let s = shuffled.get(kind, b).expect("cell");
                    let o = original.get(kind, b).expect("cell");
                    (s.cell.total() > 0).then_some(o.mean > s.mean)
                })
                .collect())
        })
        .collect::<Result<_, ExperimentError>>()?;

    let rows = keys
        .iter()
        .enumerate()
        .map(|(i, &(kind, b_prev))| {
            let mut row = LambdaRow {
                kind,
                lag: config.lag_window,
                b_prev,
                wins: 0,
                replicate_count: 0,
                excluded: 0,
            };
            for cmp in &comparisons {
                match cmp[i] {
                    Some(win) => {
                        row.replicate_count += 1;
                        row.wins += u64::from(win);
                    }
                    None => row.excluded += 1,
                }
            }
            row
        })
        .collect();

    Ok(LambdaTable {
        series_id: series.id.clone(),
        lag: config.lag_window,
        gamma,
        replicates,
        seed,
        rows,
        original,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianStabilityTrace {
    pub target_b_prev: u32,
    /// (replicates drawn so far, running median of the usable shuffle-side
    /// posterior means; NaN until one is usable)
    pub points: Vec<(usize, f64)>,
    pub usable: usize,
}

impl MedianStabilityTrace {
    pub fn final_median(&self) -> Option<f64> {
        self.points.last().map(|p| p.1).filter(|m| m.is_finite())
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Running median over a sequence of optional values; `None` entries count
/// as drawn but do not enter the median.
pub fn running_median(values: &[Option<f64>]) -> Vec<(usize, f64)> {
    let mut sorted: Vec<f64> = Vec::with_capacity(values.len());
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if let Some(v) = v {
                let at = sorted.partition_point(|x| x < v);
                sorted.insert(at, *v);
            }
            (i + 1, median(&sorted))
        })
        .collect()
}

/// How the median of the shuffle-side estimate at `target_b_prev`
/// (combined levels) settles as replicates accumulate.
pub fn median_stability(
    series: &PriceSeries,
    config: &DetectorConfig,
    max_replicates: usize,
    target_b_prev: u32,
    seed: u64,
) -> Result<MedianStabilityTrace, ExperimentError> {
    if max_replicates < 2 {
        return Err(ExperimentError::Invalid("max_replicates must be at least 2".into()));
    }
    let mut config = pinned(series, config)?.0;
    config.b_prev_cap = config.b_prev_cap.max(target_b_prev);
    let values: Vec<Option<f64>> = (0..max_replicates as u64)
        .into_par_iter()
        .map(|r| {
            let table = shuffled_table(series, &config, seed, r)?;
            let cell = table.get(CellKind::Combined, target_b_prev).expect("cell");
            Ok((cell.cell.total() > 0).then_some(cell.mean))
        })
        .collect::<Result<_, ExperimentError>>()?;
    Ok(MedianStabilityTrace {
        target_b_prev,
        usable: values.iter().flatten().count(),
        points: running_median(&values),
    })
}
