use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::bayes::{aggregate, PosteriorTable};
use crate::market_data::{shuffle_returns, simulate_ar1, Ar1Spec, ShuffleSpec};
use crate::sr_engine::{detect_events, DetectorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1StudyRow {
    pub rho: f64,
    pub gamma: f64,
    pub original: PosteriorTable,
    pub shuffled: PosteriorTable,
}

/// Simulate one AR(1) path per rho and tabulate the posterior bounce
/// probabilities of the path and of one shuffled-returns surrogate.
///
/// Every rho uses the same seed, so the paths share their innovations and
/// differ only through rho. The surrogate is replicate 0 under the same seed.
pub fn ar1_study(
    rhos: &[f64],
    length: usize,
    config: &DetectorConfig,
    seed: u64,
) -> Result<Vec<Ar1StudyRow>, ExperimentError> {
    rhos.iter()
        .map(|&rho| {
            let series = simulate_ar1(&Ar1Spec::standard(rho, length, seed))?;
            let run = detect_events(&series, config)?;
            let surrogate = shuffle_returns(
                &series,
                ShuffleSpec {
                    seed,
                    replicate_index: 0,
                },
            )?;
            let shuffled_run = detect_events(&surrogate, config)?;
            Ok(Ar1StudyRow {
                rho,
                gamma: run.gamma,
                original: aggregate(&run.events, config.b_prev_cap),
                shuffled: aggregate(&shuffled_run.events, config.b_prev_cap),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::CellKind;

    #[test]
    fn mean_reversion_raises_bounce_rate() {
        let rows = ar1_study(&[1.0, 0.9], 200_000, &DetectorConfig::with_lag(60), 5).unwrap();
        assert_eq!(rows.len(), 2);
        for b in 1..=3 {
            let rw = rows[0].original.get(CellKind::Combined, b).unwrap().mean;
            let ar = rows[1].original.get(CellKind::Combined, b).unwrap().mean;
            assert!(ar > rw, "b_prev {b}: {ar} vs {rw}");
        }
        let rw = rows[0].original.pooled(CellKind::Combined);
        let sh = rows[0].shuffled.pooled(CellKind::Combined);
        let (p, q) = (rw.n as f64 / rw.total() as f64, sh.n as f64 / sh.total() as f64);
        assert!((p - q).abs() < 0.02, "{p} vs {q}");
    }

    #[test]
    fn invalid_rho_propagates() {
        assert!(ar1_study(&[f64::NAN], 1_000, &DetectorConfig::default(), 1).is_err());
    }
}
