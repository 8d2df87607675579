//! Brute-force reference solver for small instances.
//!
//! Assignments are enumerated exhaustively; for each assignment the optimal
//! service rate of every used facility is a one-dimensional convex problem in
//! `mu`, solved by grid scan plus golden-section refinement. The result is an
//! independent ground truth the cone-based search is checked against.

use thiserror::Error;

use crate::instance::{FacilitySpec, Instance};
use crate::queueing::wt_total;

/// Enumeration caps. `4^8 = 65536` assignments with a 1-d solve per used
/// facility stays under a second; anything bigger belongs to the real solver.
pub const MAX_FACILITIES: usize = 4;
pub const MAX_ZONES: usize = 8;

/// Tolerance added to the closest-open-facility distance when filtering
/// assignments.
pub const CLOSEST_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large for exhaustive search: {ni} facilities x {nj} zones (caps {MAX_FACILITIES} x {MAX_ZONES})")]
    TooLarge { ni: usize, nj: usize },
    #[error("closest-assignment filtering needs the distance matrix d")]
    MissingDistances,
}

/// Optimal rate choice for one facility serving aggregate demand `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateChoice {
    pub rate: f64,
    /// `sc * rate + wc * WT_T(lambda, rate)`.
    pub cost: f64,
}

/// Minimize `sc mu + wc WT_T(lambda, mu)` over admissible rates
/// `mu in [max(m, lambda), M]`, `mu > lambda`. Returns `None` when no
/// admissible rate exists. The objective is convex in `mu`, so a coarse grid
/// scan followed by golden-section refinement finds the global minimum.
pub fn optimal_rate(lambda: f64, fac: &FacilitySpec) -> Option<RateChoice> {
    if fac.rate_min > fac.rate_max {
        return None;
    }
    if lambda == 0.0 {
        return Some(RateChoice {
            rate: fac.rate_min,
            cost: fac.sc * fac.rate_min,
        });
    }
    let eps = 1e-9 * lambda.max(1.0);
    let lo = fac.rate_min.max(lambda + eps);
    if lo > fac.rate_max {
        return None;
    }
    let v = &fac.variance;
    let cost = |mu: f64| fac.sc * mu + fac.wc * wt_total(lambda, mu, v.variance_of(mu)).unwrap();

    // Exponential service with no rate bounds: WT_T = lambda/(mu - lambda),
    // so sc*mu + wc*WT_T is stationary at mu = lambda + sqrt(wc*lambda/sc).
    if v.is_unit_reciprocal() && fac.rate_min == 0.0 && fac.rate_max.is_infinite() && fac.sc > 0.0
    {
        let rate = lambda + (fac.wc * lambda / fac.sc).sqrt();
        return Some(RateChoice { rate, cost: cost(rate) });
    }

    // Bracket the minimizer. With a finite cap the cap is the bracket; with
    // an unbounded rate, double until the cost stops improving.
    let hi = if fac.rate_max.is_finite() {
        fac.rate_max
    } else {
        let mut hi = (2.0 * lo).max(lo + 1.0);
        let mut best = cost(hi);
        loop {
            let next = hi * 2.0;
            let c = cost(next);
            if c >= best || next > 1e30 {
                break next;
            }
            best = c;
            hi = next;
        }
    };
    if hi <= lo {
        return Some(RateChoice { rate: lo, cost: cost(lo) });
    }

    // Coarse scan to localize the minimum cell.
    const GRID: usize = 256;
    let mut best_k = 0usize;
    let mut best_c = f64::INFINITY;
    for k in 0..=GRID {
        let mu = lo + (hi - lo) * k as f64 / GRID as f64;
        let c = cost(mu);
        if c < best_c {
            best_c = c;
            best_k = k;
        }
    }
    let cell = (hi - lo) / GRID as f64;
    let mut a = lo + cell * best_k.saturating_sub(1) as f64;
    let mut b = (lo + cell * (best_k + 1) as f64).min(hi);

    // Golden-section refinement inside the bracketing cell pair.
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = cost(x1);
    let mut f2 = cost(x2);
    for _ in 0..300 {
        if b - a <= 1e-10 * (1.0 + b.abs()) {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = cost(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = cost(x2);
        }
    }
    let mid = 0.5 * (a + b);
    let (rate, c_mid) = [(mid, cost(mid)), (lo, cost(lo)), (hi, cost(hi))]
        .into_iter()
        .min_by(|p, q| p.1.total_cmp(&q.1))
        .unwrap();
    Some(RateChoice { rate, cost: c_mid })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OracleSolution {
    pub cost: f64,
    /// `assignment[j]` is the facility serving zone `j`.
    pub assignment: Vec<usize>,
    pub open: Vec<bool>,
    /// Service rate per facility, zero when closed.
    #[serde(rename = "mu")]
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct OracleReport {
    pub best: Option<OracleSolution>,
    pub assignments_enumerated: usize,
    pub assignments_feasible: usize,
}

/// Exhaustive search over all zone-to-facility maps. Exactly the facilities
/// appearing in a map are opened; each open facility is sized optimally for
/// its aggregate demand. With `closest_assignment`, maps sending a zone to a
/// strictly farther facility than some open one are discarded.
pub fn solve_exhaustive(
    inst: &Instance,
    closest_assignment: bool,
) -> Result<OracleReport, OracleError> {
    let ni = inst.n_facilities();
    let nj = inst.n_zones();
    if ni > MAX_FACILITIES || nj > MAX_ZONES {
        return Err(OracleError::TooLarge { ni, nj });
    }
    let d = if closest_assignment {
        Some(inst.d.as_ref().ok_or(OracleError::MissingDistances)?)
    } else {
        None
    };

    let mut report = OracleReport {
        best: None,
        assignments_enumerated: 0,
        assignments_feasible: 0,
    };
    let mut map = vec![0usize; nj];
    'outer: loop {
        report.assignments_enumerated += 1;
        if let Some(sol) = evaluate_map(inst, &map, d) {
            report.assignments_feasible += 1;
            if report.best.as_ref().map_or(true, |b| sol.cost < b.cost) {
                report.best = Some(sol);
            }
        }
        // Odometer increment over base-ni digits.
        for digit in map.iter_mut() {
            *digit += 1;
            if *digit < ni {
                continue 'outer;
            }
            *digit = 0;
        }
        break;
    }
    Ok(report)
}

fn evaluate_map(
    inst: &Instance,
    map: &[usize],
    d: Option<&Vec<Vec<f64>>>,
) -> Option<OracleSolution> {
    let ni = inst.n_facilities();
    let mut agg = vec![0.0f64; ni];
    for (j, &i) in map.iter().enumerate() {
        agg[i] += inst.zones[j].lambda;
    }
    let open: Vec<bool> = agg.iter().map(|&a| a > 0.0).collect();
    if let Some(d) = d {
        for (j, &i) in map.iter().enumerate() {
            let nearest = (0..ni)
                .filter(|&k| open[k])
                .map(|k| d[k][j])
                .fold(f64::INFINITY, f64::min);
            if d[i][j] > nearest + CLOSEST_TOL {
                return None;
            }
        }
    }
    let mut cost = 0.0;
    let mut rates = vec![0.0f64; ni];
    for i in 0..ni {
        if !open[i] {
            continue;
        }
        let choice = optimal_rate(agg[i], &inst.facilities[i])?;
        rates[i] = choice.rate;
        cost += inst.facilities[i].ec + choice.cost;
    }
    for (j, &i) in map.iter().enumerate() {
        cost += inst.tc[i][j] * inst.zones[j].lambda;
    }
    Some(OracleSolution {
        cost,
        assignment: map.to_vec(),
        open,
        rates,
    })
}
