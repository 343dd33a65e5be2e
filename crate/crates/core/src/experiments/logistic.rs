use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::sr_engine::{EntryEvent, Outcome};

pub const MAX_ITERATIONS: usize = 50;
pub const TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum FitError {
    #[error("fewer than two observations")]
    TooFew,
    #[error("all outcomes fall in one class")]
    SingleClass,
    #[error("explanatory variable is constant; slope undefined")]
    ConstantX,
    #[error("outcomes are perfectly separated by the explanatory variable; estimates diverge")]
    PerfectSeparation,
}

impl FitError {
    pub fn status(&self) -> &'static str {
        match self {
            FitError::TooFew => "too_few",
            FitError::SingleClass => "single_class",
            FitError::ConstantX => "constant_x",
            FitError::PerfectSeparation => "perfect_separation",
        }
    }
}

/// Fit of log(Y/(1-Y)) = a + bX.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub b_prev: u32,
    pub a: f64,
    pub b: f64,
    pub se_a: f64,
    pub se_b: f64,
    pub p_a: f64,
    pub p_b: f64,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_likelihood(x: &[f64], y: &[bool], a: f64, b: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let eta = a + b * xi;
            if yi {
                -softplus(-eta)
            } else {
                -softplus(eta)
            }
        })
        .sum()
}

/// Gradient and information matrix [h00, h01, h11] at (a, b).
fn score_and_information(x: &[f64], y: &[bool], a: f64, b: f64) -> ([f64; 2], [f64; 3]) {
    let mut g = [0.0; 2];
    let mut h = [0.0; 3];
    for (&xi, &yi) in x.iter().zip(y) {
        let mu = sigmoid(a + b * xi);
        let r = f64::from(u8::from(yi)) - mu;
        let w = mu * (1.0 - mu);
        g[0] += r;
        g[1] += r * xi;
        h[0] += w;
        h[1] += w * xi;
        h[2] += w * xi * xi;
    }
    (g, h)
}

fn check(x: &[f64], y: &[bool]) -> Result<(), FitError> {
    if x.len() < 2 {
        return Err(FitError::TooFew);
    }
    let ones = y.iter().filter(|&&v| v).count();
    if ones == 0 || ones == y.len() {
        return Err(FitError::SingleClass);
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if lo == hi {
        return Err(FitError::ConstantX);
    }
    // With one regressor the MLE is finite iff the class ranges overlap
    // strictly; touching ranges are quasi-separated and diverge too.
    let range = |class: bool| {
        x.iter()
            .zip(y)
            .filter(|(_, &v)| v == class)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), (&v, _)| (l.min(v), h.max(v)))
    };
    let (lo1, hi1) = range(true);
    let (lo0, hi0) = range(false);
    if hi0 <= lo1 || hi1 <= lo0 {
        return Err(FitError::PerfectSeparation);
    }
    Ok(())
}

/// Maximum-likelihood logistic fit by iteratively reweighted least squares.
pub fn fit_logistic(x: &[f64], y: &[bool]) -> Result<LogisticFit, FitError> {
    assert_eq!(x.len(), y.len(), "x and y lengths differ");
    check(x, y)?;
    let (mut a, mut b) = (0.0, 0.0);
    let mut ll = log_likelihood(x, y, a, b);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (g, h) = score_and_information(x, y, a, b);
        let det = h[0] * h[2] - h[1] * h[1];
        if !(det > 0.0) {
            break;
        }
        let da = (h[2] * g[0] - h[1] * g[1]) / det;
        let db = (h[0] * g[1] - h[1] * g[0]) / det;
        let mut step = 1.0;
        let (mut na, mut nb, mut nll);
        loop {
            na = a + step * da;
            nb = b + step * db;
            nll = log_likelihood(x, y, na, nb);
            // Rounding noise can make an exact step look like a tiny loss.
            if nll >= ll - 1e-12 * ll.abs() || step < 1e-10 {
                break;
            }
            step *= 0.5;
        }
        let rel = (nll - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        a = na;
        b = nb;
        ll = nll;
        converged |= rel < TOLERANCE;
        // The likelihood flattens before the coefficients settle; once it
        // has, keep taking Newton steps until they stop moving anything.
        let moved = (step * da).abs().max((step * db).abs());
        if converged && moved <= 1e-13 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
    }

    let (_, h) = score_and_information(x, y, a, b);
    let det = h[0] * h[2] - h[1] * h[1];
    let se_a = (h[2] / det).sqrt();
    let se_b = (h[0] / det).sqrt();
    let normal = Normal::standard();
    let wald = |est: f64, se: f64| {
        let p = 2.0 * normal.sf((est / se).abs());
        if p.is_nan() {
            p
        } else {
            p.min(1.0)
        }
    };
    Ok(LogisticFit {
        b_prev: 0,
        a,
        b,
        se_a,
        se_b,
        p_a: wald(a, se_a),
        p_b: wald(b, se_b),
        n: x.len(),
        converged,
        iterations,
        log_likelihood: ll,
    })
}

/// Fit bounce (Y = 1) against a transform of the time since the level's
/// previous bounce, over events with the given `b_prev`.
pub fn logistic_fit_with(
    events: &[EntryEvent],
    b_prev: u32,
    transform: impl Fn(f64) -> f64,
) -> Result<LogisticFit, FitError> {
    let (x, y): (Vec<f64>, Vec<bool>) = events
        .iter()
        .filter(|e| e.b_prev == b_prev)
        .filter_map(|e| {
            e.time_since_prev_bounce
                .map(|t| (transform(t as f64), e.outcome == Outcome::Bounce))
        })
        .unzip();
    let mut fit = fit_logistic(&x, &y)?;
    fit.b_prev = b_prev;
    Ok(fit)
}

pub fn logistic_fit(events: &[EntryEvent], b_prev: u32) -> Result<LogisticFit, FitError> {
    logistic_fit_with(events, b_prev, |t| t)
}
