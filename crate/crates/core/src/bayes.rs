//! Beta-binomial estimates of the conditional bounce probability
//! p(b | b_prev) under a uniform prior.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::sr_engine::{EntryEvent, LevelKind, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CellKind {
    Support,
    Resistance,
    Combined,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Support, CellKind::Resistance, CellKind::Combined];

    pub fn label(self) -> &'static str {
        match self {
            CellKind::Support => "Support",
            CellKind::Resistance => "Resistance",
            CellKind::Combined => "Combined",
        }
    }
}

impl From<LevelKind> for CellKind {
    fn from(kind: LevelKind) -> Self {
        match kind {
            LevelKind::Support => CellKind::Support,
            LevelKind::Resistance => CellKind::Resistance,
        }
    }
}

/// Bounce (`n`) and penetration (`k`) counts for one (kind, b_prev) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BounceCell {
    pub kind: CellKind,
    pub b_prev: u32,
    pub n: u64,
    pub k: u64,
}

impl BounceCell {
    pub fn new(kind: CellKind, b_prev: u32, n: u64, k: u64) -> Self {
        Self { kind, b_prev, n, k }
    }

    pub fn total(&self) -> u64 {
        self.n + self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BouncePosterior {
    pub cell: BounceCell,
    pub mean: f64,
    pub variance: f64,
}

impl BouncePosterior {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Posterior Beta(n + 1, N - n + 1): mean (n+1)/(N+2) and variance
/// (n+1)(N-n+1) / ((N+3)(N+2)^2). Numerators and denominators are formed
/// in integers so each moment is a single correctly rounded division.
pub fn posterior(cell: BounceCell) -> BouncePosterior {
    let n = cell.n as u128;
    let total = cell.total() as u128;
    let mean = (n + 1) as f64 / (total + 2) as f64;
    let var_num = (n + 1) * (total - n + 1);
    let var_den = (total + 3) * (total + 2) * (total + 2);
    BouncePosterior {
        cell,
        mean,
        variance: var_num as f64 / var_den as f64,
    }
}

/// Posterior table keyed by (kind, b_prev) for b_prev in 0..=cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTable {
    pub cap: u32,
    cells: BTreeMap<(CellKind, u32), BouncePosterior>,
}

impl PosteriorTable {
    pub fn get(&self, kind: CellKind, b_prev: u32) -> Option<&BouncePosterior> {
        self.cells.get(&(kind, b_prev))
    }

    pub fn iter(&self) -> impl Iterator<Item = &BouncePosterior> {
        self.cells.values()
    }

    pub fn pooled(&self, kind: CellKind) -> BounceCell {
        self.cells
            .values()
            .filter(|p| p.cell.kind == kind)
            .fold(BounceCell::new(kind, 0, 0, 0), |acc, p| BounceCell {
                n: acc.n + p.cell.n,
                k: acc.k + p.cell.k,
                ..acc
            })
    }
}

/// Count outcomes per (kind, b_prev) and attach posteriors. Events whose
/// b_prev exceeds `cap` are counted in the cap cell.
pub fn aggregate(events: &[EntryEvent], cap: u32) -> PosteriorTable {
    let mut counts: BTreeMap<(CellKind, u32), (u64, u64)> = BTreeMap::new();
    for kind in CellKind::ALL {
        for b in 0..=cap {
            counts.insert((kind, b), (0, 0));
        }
    }
    for e in events {
        let b = e.b_prev.min(cap);
        for kind in [CellKind::from(e.kind), CellKind::Combined] {
            let entry = counts.get_mut(&(kind, b)).expect("cell initialised");
            match e.outcome {
                Outcome::Bounce => entry.0 += 1,
                Outcome::Penetration => entry.1 += 1,
            }
        }
    }
    let cells = counts
        .into_iter()
        .map(|((kind, b), (n, k))| ((kind, b), posterior(BounceCell::new(kind, b, n, k))))
        .collect();
    PosteriorTable { cap, cells }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sr_engine::SrLevel;
    use proptest::prelude::*;
    use rand::Rng;

    fn event(kind: LevelKind, b_prev: u32, outcome: Outcome) -> EntryEvent {
        EntryEvent {
            kind,
            entry_index: 0,
            exit_index: 0,
            b_prev,
            outcome,
            time_since_prev_bounce: None,
            level: SrLevel::around(kind, 0.0, 1.0),
            clamped: false,
        }
    }

    #[test]
    fn posterior_examples() {
        let p = posterior(BounceCell::new(CellKind::Combined, 0, 0, 0));
        assert_eq!(p.mean, 0.5);
        assert_eq!(p.variance, 1.0 / 12.0);
        let p = posterior(BounceCell::new(CellKind::Combined, 0, 3, 1));
        assert_eq!(p.mean, 4.0 / 6.0);
        assert_eq!(p.variance, 8.0 / 252.0);
        assert!((p.variance - 0.03175).abs() < 1e-5);
        let p = posterior(BounceCell::new(CellKind::Combined, 0, 98, 2));
        assert_eq!(p.mean, 99.0 / 102.0);
    }

    #[test]
    fn aggregate_counts() {
        let mut events = vec![event(LevelKind::Support, 1, Outcome::Bounce); 3];
        events.push(event(LevelKind::Support, 1, Outcome::Penetration));
        let table = aggregate(&events, 8);
        let cell = table.get(CellKind::Support, 1).unwrap();
        assert_eq!((cell.cell.n, cell.cell.total()), (3, 4));
        assert_eq!(cell.mean, 2.0 / 3.0);
        assert_eq!(table.get(CellKind::Combined, 1).unwrap().cell.total(), 4);
        assert_eq!(table.get(CellKind::Resistance, 1).unwrap().cell.total(), 0);
    }

    #[test]
    fn empty_events_give_prior_everywhere() {
        let table = aggregate(&[], 8);
        assert_eq!(table.iter().count(), 27);
        for p in table.iter() {
            assert_eq!(p.cell.total(), 0);
            assert_eq!(p.mean, 0.5);
        }
    }

    #[test]
    fn bernoulli_recovery() {
        // Oracle: the generating probability itself.
        let mut rng = crate::market_data::replicate_rng(17, 0);
        let events: Vec<_> = (0..10_000)
            .map(|_| {
                let outcome = if rng.random_bool(0.7) { Outcome::Bounce } else { Outcome::Penetration };
                event(LevelKind::Resistance, 3, outcome)
            })
            .collect();
        let table = aggregate(&events, 8);
        let mean = table.get(CellKind::Resistance, 3).unwrap().mean;
        assert!((mean - 0.7).abs() < 0.02, "{mean}");
    }

    #[test]
    fn variance_tends_to_zero() {
        let mut last = f64::INFINITY;
        for total in [10u64, 100, 1_000, 10_000, 100_000] {
            let v = posterior(BounceCell::new(CellKind::Combined, 0, total * 3 / 10, total - total * 3 / 10)).variance;
            assert!(v < last);
            last = v;
        }
        assert!(last < 3e-6);
    }

    proptest! {
        #[test]
        fn posterior_properties(total in 0u64..5_000, frac in 0.0f64..=1.0) {
            let n = ((total as f64) * frac).floor() as u64;
            let p = posterior(BounceCell::new(CellKind::Combined, 0, n, total - n));
            let mirror = posterior(BounceCell::new(CellKind::Combined, 0, total - n, n));
            prop_assert!(p.mean > 0.0 && p.mean < 1.0);
            prop_assert!((p.mean + mirror.mean - 1.0).abs() < 1e-15);
            prop_assert!(p.variance <= 1.0 / 12.0);
            prop_assert!((p.variance - p.mean * (1.0 - p.mean) / (total + 3) as f64).abs() < 1e-15);
            if n < total {
                let up = posterior(BounceCell::new(CellKind::Combined, 0, n + 1, total - n - 1));
                prop_assert!(up.mean > p.mean);
            }
        }

        #[test]
        fn aggregate_partitions(
            raw in prop::collection::vec((any::<bool>(), 0u32..12, any::<bool>()), 0..400),
            cap in 1u32..10,
        ) {
            let events: Vec<_> = raw.iter().map(|&(s, b, bounce)| event(
                if s { LevelKind::Support } else { LevelKind::Resistance },
                b,
                if bounce { Outcome::Bounce } else { Outcome::Penetration },
            )).collect();
            let table = aggregate(&events, cap);
            for kind in [CellKind::Support, CellKind::Resistance] {
                let expected = raw.iter().filter(|r| r.0 == (kind == CellKind::Support)).count() as u64;
                prop_assert_eq!(table.pooled(kind).total(), expected);
            }
            for b in 0..=cap {
                let s = table.get(CellKind::Support, b).unwrap().cell;
                let r = table.get(CellKind::Resistance, b).unwrap().cell;
                let c = table.get(CellKind::Combined, b).unwrap().cell;
                prop_assert_eq!(c.n, s.n + r.n);
                prop_assert_eq!(c.k, s.k + r.k);
            }
        }
    }
}
