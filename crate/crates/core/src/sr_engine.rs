//! Rolling-window support/resistance discovery and the level-entry event log.
//!
//! At each step `t` the candidate levels come from the `lag_window` prices
//! that precede `t`: support is `[min - gamma, min + gamma]`, resistance is
//! `[max - gamma, max + gamma]`. When the price enters one of them from its
//! trend-facing side the level is frozen until the price leaves it again,
//! and the exit side decides bounce vs penetration.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{mean_abs_increment, DataError, PriceSeries};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("window too short: need at least 2 prices, got {0}")]
    WindowTooShort(usize),
    #[error("series of length {len} is too short for a lag window of {lag}")]
    SeriesTooShort { len: usize, lag: usize },
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LevelKind {
    Support,
    Resistance,
}

impl LevelKind {
    pub fn mirrored(self) -> Self {
        match self {
            LevelKind::Support => LevelKind::Resistance,
            LevelKind::Resistance => LevelKind::Support,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Bounce,
    Penetration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Bounce,
    Penetration,
    StillInside,
}

/// A level snapshot: the closed interval `[lower, upper]` around `anchor`
/// (window min for support, window max for resistance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrLevel {
    pub kind: LevelKind,
    pub lower: f64,
    pub upper: f64,
    pub anchor: f64,
    pub bounce_count: u32,
    pub last_bounce_offset: Option<usize>,
}

impl SrLevel {
    pub fn around(kind: LevelKind, anchor: f64, gamma: f64) -> Self {
        Self {
            kind,
            lower: anchor - gamma,
            upper: anchor + gamma,
            anchor,
            bounce_count: 0,
            last_bounce_offset: None,
        }
    }

    pub fn contains(&self, price: f64) -> bool {
        self.lower <= price && price <= self.upper
    }

    /// The boundary whose crossings are counted as bounces.
    pub fn entry_boundary(&self) -> f64 {
        match self.kind {
            LevelKind::Support => self.upper,
            LevelKind::Resistance => self.lower,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryEvent {
    pub kind: LevelKind,
    pub entry_index: usize,
    pub exit_index: usize,
    pub b_prev: u32,
    pub outcome: Outcome,
    pub time_since_prev_bounce: Option<usize>,
    pub level: SrLevel,
    /// The raw bounce count exceeded the cap and `b_prev` was clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gamma {
    Auto,
    Fixed(f64),
}

impl std::str::FromStr for Gamma {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Gamma::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Gamma::Fixed(v)),
            _ => Err(format!("expected `auto` or a positive number, got `{s}`")),
        }
    }
}

impl std::fmt::Display for Gamma {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Gamma::Auto => f.write_str("auto"),
            Gamma::Fixed(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub lag_window: usize,
    pub gamma: Gamma,
    pub b_prev_cap: u32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            lag_window: 60,
            gamma: Gamma::Auto,
            b_prev_cap: 8,
        }
    }
}

impl DetectorConfig {
    pub fn with_lag(lag_window: usize) -> Self {
        Self {
            lag_window,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.lag_window < 2 {
            return Err(EngineError::InvalidConfig(format!(
                "lag window must be at least 2, got {}",
                self.lag_window
            )));
        }
        if self.b_prev_cap == 0 {
            return Err(EngineError::InvalidConfig("b_prev cap must be positive".into()));
        }
        if let Gamma::Fixed(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(EngineError::InvalidConfig(format!("gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }

    /// Level half-width for `series`: the whole-series mean absolute
    /// increment when `Auto`.
    pub fn resolve_gamma(&self, series: &PriceSeries) -> Result<f64, EngineError> {
        let g = match self.gamma {
            Gamma::Auto => mean_abs_increment(series)?,
            Gamma::Fixed(g) => g,
        };
        if g > 0.0 && g.is_finite() {
            Ok(g)
        } else {
            Err(EngineError::InvalidConfig(format!(
                "resolved gamma must be positive, got {g}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Entries skipped because the support and resistance intervals intersected.
    pub overlap_skips: u64,
    /// Events whose raw bounce count exceeded the cap.
    pub cap_clamps: u64,
    /// Entries still inside their level when the series ended.
    pub unterminated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRun {
    pub series_id: String,
    pub config: DetectorConfig,
    pub gamma: f64,
    pub events: Vec<EntryEvent>,
    pub diagnostics: Diagnostics,
}

fn is_support_crossing(a: f64, b: f64, s_bar: f64) -> bool {
    (a <= s_bar && s_bar < b) || (b <= s_bar && s_bar < a)
}

fn is_resistance_crossing(a: f64, b: f64, r_lower: f64) -> bool {
    (a < r_lower && r_lower <= b) || (b < r_lower && r_lower <= a)
}

/// Number of support bounces in `window`: half the number of crossings of
/// the support's upper boundary `s_bar`, rounded down.
pub fn count_support_bounces(window: &[f64], s_bar: f64) -> Result<u32, EngineError> {
    if window.len() < 2 {
        return Err(EngineError::WindowTooShort(window.len()));
    }
    let crossings = window
        .windows(2)
        .filter(|w| is_support_crossing(w[0], w[1], s_bar))
        .count();
    Ok((crossings / 2) as u32)
}

/// Resistance mirror of [`count_support_bounces`] on the lower boundary.
pub fn count_resistance_bounces(window: &[f64], r_lower: f64) -> Result<u32, EngineError> {
    if window.len() < 2 {
        return Err(EngineError::WindowTooShort(window.len()));
    }
    let crossings = window
        .windows(2)
        .filter(|w| is_resistance_crossing(w[0], w[1], r_lower))
        .count();
    Ok((crossings / 2) as u32)
}

pub fn classify_exit(level: &SrLevel, exit_price: f64) -> ExitClass {
    if level.contains(exit_price) {
        return ExitClass::StillInside;
    }
    let above = exit_price > level.upper;
    match (level.kind, above) {
        (LevelKind::Support, true) | (LevelKind::Resistance, false) => ExitClass::Bounce,
        _ => ExitClass::Penetration,
    }
}

/// Min and max over each trailing window `prices[t - lag..t]`, for
/// `t = lag..=prices.len()`, via monotone deques.
pub fn rolling_extrema(prices: &[f64], lag: usize) -> Vec<(f64, f64)> {
    if lag == 0 || prices.len() < lag {
        return Vec::new();
    }
    let mut mins: VecDeque<usize> = VecDeque::new();
    let mut maxs: VecDeque<usize> = VecDeque::new();
    let mut out = Vec::with_capacity(prices.len() - lag + 1);
    for (i, &p) in prices.iter().enumerate() {
        while mins.back().is_some_and(|&j| prices[j] >= p) {
            mins.pop_back();
        }
        mins.push_back(i);
        while maxs.back().is_some_and(|&j| prices[j] <= p) {
            maxs.pop_back();
        }
        maxs.push_back(i);
        if i + 1 >= lag {
            let start = i + 1 - lag;
            while mins.front().is_some_and(|&j| j < start) {
                mins.pop_front();
            }
            while maxs.front().is_some_and(|&j| j < start) {
                maxs.pop_front();
            }
            out.push((prices[mins[0]], prices[maxs[0]]));
        }
    }
    out
}

/// Fill in bounce count and last-bounce offset for a level entered at
/// `entry_index`, from the window that starts at `window_start`.
fn snapshot(mut level: SrLevel, window: &[f64], window_start: usize, entry_index: usize) -> SrLevel {
    let boundary = level.entry_boundary();
    let crossing = match level.kind {
        LevelKind::Support => is_support_crossing,
        LevelKind::Resistance => is_resistance_crossing,
    };
    let mut count = 0usize;
    let mut last = None;
    for (k, w) in window.windows(2).enumerate() {
        if crossing(w[0], w[1], boundary) {
            count += 1;
            last = Some(window_start + k + 1);
        }
    }
    level.bounce_count = (count / 2) as u32;
    level.last_bounce_offset = if level.bounce_count > 0 {
        last.map(|idx| entry_index - idx)
    } else {
        None
    };
    level
}

/// Run the discovery state machine over `series` and log every level entry
/// together with its outcome.
pub fn detect_events(series: &PriceSeries, config: &DetectorConfig) -> Result<DetectionRun, EngineError> {
    config.validate()?;
    let lag = config.lag_window;
    let x = &series.prices;
    let n = x.len();
    if n <= lag {
        return Err(EngineError::SeriesTooShort { len: n, lag });
    }
    let gamma = config.resolve_gamma(series)?;
    let extrema = rolling_extrema(x, lag);

    let mut events = Vec::new();
    let mut diagnostics = Diagnostics::default();
    let mut t = lag;
    while t < n {
        let (lo, hi) = extrema[t - lag];
        let support = SrLevel::around(LevelKind::Support, lo, gamma);
        let resistance = SrLevel::around(LevelKind::Resistance, hi, gamma);
        let (prev, cur) = (x[t - 1], x[t]);

        let kind = if prev > support.upper && cur <= support.upper {
            LevelKind::Support
        } else if prev < resistance.lower && cur >= resistance.lower {
            LevelKind::Resistance
        } else {
            t += 1;
            continue;
        };
        if resistance.lower <= support.upper {
            diagnostics.overlap_skips += 1;
            t += 1;
            continue;
        }

        let base = match kind {
            LevelKind::Support => support,
            LevelKind::Resistance => resistance,
        };
        let level = snapshot(base, &x[t - lag..t], t - lag, t);
        let clamped = level.bounce_count > config.b_prev_cap;

        let exit_index = if level.contains(cur) {
            match (t + 1..n).find(|&j| !level.contains(x[j])) {
                Some(j) => j,
                None => {
                    diagnostics.unterminated += 1;
                    break;
                }
            }
        } else {
            // Stepped clean over the level in a single move.
            t
        };
        let outcome = match classify_exit(&level, x[exit_index]) {
            ExitClass::Bounce => Outcome::Bounce,
            ExitClass::Penetration => Outcome::Penetration,
            ExitClass::StillInside => unreachable!("exit index lies outside the level"),
        };
        if clamped {
            diagnostics.cap_clamps += 1;
        }
        events.push(EntryEvent {
            kind,
            entry_index: t,
            exit_index,
            b_prev: level.bounce_count.min(config.b_prev_cap),
            outcome,
            time_since_prev_bounce: level.last_bounce_offset,
            level,
            clamped,
        });
        t = if exit_index == t { t + 1 } else { exit_index };
    }

    Ok(DetectionRun {
        series_id: series.id.clone(),
        config: *config,
        gamma,
        events,
        diagnostics,
    })
}
