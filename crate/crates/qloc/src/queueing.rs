//! M/G/1 waiting-time formulas and the service-time variance model.
//!
//! A facility working at rate `mu` with Poisson arrivals `lambda` and
//! service-time variance `v(mu)` is an M/G/1 queue. By Pollaczek-Khinchine,
//! the expected time an individual customer spends in the system is
//!
//! ```text
//! WT_I(lambda, mu) = lambda (1 + v(mu) mu^2) / (2 mu (mu - lambda)) + 1/mu
//! ```
//!
//! and the total expected load is `WT_T = lambda * WT_I`. Both blow up as
//! `lambda -> mu`, which is what makes sizing interact with assignment.
//!
//! Variance follows a location-scale service model: service time is
//! `1/mu + sum_l (1/mu)^l delta_l eps_l` with unit-variance noises, so
//!
//! ```text
//! v(mu) = sum_{l=0..L} delta_l^2 mu^{-2l}
//! ```
//!
//! Division conventions: `a/0 = +inf` for `a > 0`, and `0/0 = 0`. They make
//! the formulas total: zero demand costs nothing even at `mu = 0`, and a
//! saturated facility (`lambda >= mu > 0`) has infinite waiting time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QueueingError {
    #[error("negative input: {0}")]
    Negative(&'static str),
}

/// Guarded quotient: `0/0 = 0`, `a/0 = +inf` for `a > 0`.
fn frac(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Total expected time in system per unit time at one facility:
/// `lambda * (lambda (1 + v mu^2) / (2 mu (mu - lambda)) + 1/mu)`.
///
/// Returns `+inf` when `lambda > 0` and `mu <= lambda` (no steady state),
/// `0` when `lambda = 0`.
pub fn wt_total(lambda: f64, mu: f64, v: f64) -> Result<f64, QueueingError> {
    check_inputs(lambda, mu, v)?;
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let congest = frac(lambda * (1.0 + v * mu * mu), 2.0 * mu * (mu - lambda));
    Ok(lambda * (congest + frac(1.0, mu)))
}

/// Expected time in system for one customer:
/// `lambda (1 + v mu^2) / (2 mu (mu - lambda)) + 1/mu`.
pub fn wt_individual(lambda: f64, mu: f64, v: f64) -> Result<f64, QueueingError> {
    check_inputs(lambda, mu, v)?;
    let congest = frac(lambda * (1.0 + v * mu * mu), 2.0 * mu * (mu - lambda));
    Ok(congest + frac(1.0, mu))
}

fn check_inputs(lambda: f64, mu: f64, v: f64) -> Result<(), QueueingError> {
    if lambda < 0.0 || lambda.is_nan() {
        return Err(QueueingError::Negative("lambda"));
    }
    if mu < 0.0 || mu.is_nan() {
        return Err(QueueingError::Negative("mu"));
    }
    if v < 0.0 || v.is_nan() {
        return Err(QueueingError::Negative("v"));
    }
    Ok(())
}

/// Coefficients `delta_l` of the location-scale variance model
/// `v(mu) = sum_l delta_l^2 mu^{-2l}`. `deltas[l]` is `delta_l`; the
/// polynomial order is `deltas.len() - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocationScaleSpec {
    pub deltas: Vec<f64>,
}

impl LocationScaleSpec {
    pub fn new(deltas: Vec<f64>) -> Result<Self, QueueingError> {
        if deltas.iter().any(|d| d.is_nan() || *d < 0.0) {
            return Err(QueueingError::Negative("delta"));
        }
        Ok(LocationScaleSpec { deltas })
    }

    /// Highest power `L` in the variance polynomial.
    pub fn order(&self) -> usize {
        self.deltas.len().saturating_sub(1)
    }

    /// `v(mu) = sum_l delta_l^2 mu^{-2l}`, with `mu^0 = 1` so the `l = 0`
    /// term survives even at `mu = 0`.
    pub fn variance_of(&self, mu: f64) -> f64 {
        let mut v = 0.0;
        for (l, d) in self.deltas.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let term = if l == 0 {
                d * d
            } else {
                frac(d * d, mu.powi(2 * l as i32))
            };
            v += term;
        }
        v
    }

    /// `g(mu) = mu^2 v(mu) = sum_l delta_l^2 mu^{2-2l}`. Convex in `mu > 0`.
    pub fn mu2_variance(&self, mu: f64) -> f64 {
        let mut g = 0.0;
        for (l, d) in self.deltas.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let p = 2 - 2 * l as i32;
            let term = match p {
                0 => d * d,
                p if p > 0 => d * d * mu.powi(p),
                p => frac(d * d, mu.powi(-p)),
            };
            g += term;
        }
        g
    }

    /// True when `v` is affine in `mu^{-2}`: only `delta_0`, `delta_1` present.
    pub fn is_affine(&self) -> bool {
        self.order() <= 1
    }

    /// True for `v(mu) = mu^{-2}` exactly (unit `delta_1`, nothing else).
    pub fn is_unit_reciprocal(&self) -> bool {
        self.deltas.iter().enumerate().all(|(l, d)| {
            if l == 1 {
                (*d - 1.0).abs() == 0.0
            } else {
                *d == 0.0
            }
        }) && self.deltas.len() >= 2
    }
}
