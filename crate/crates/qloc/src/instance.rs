//! Problem data: facilities, demand zones, cost matrices, document I/O,
//! validation, and the seeded random generator.
//!
//! A document is JSON with top-level keys `facilities`, `zones`, `tc`
//! (row-major, one row per facility), optional `d` (same shape), and optional
//! `weights`. The upper rate bound `M` may be the literal string `"inf"`.
//! Per-term objective weights are multiplied into the cost parameters while
//! loading, so the rest of the code never sees them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::queueing::LocationScaleSpec;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid instance: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("generator range for {0} is empty or not finite")]
    BadRange(&'static str),
    #[error("tail probability must lie in (0, 1), got {0}")]
    BadTail(f64),
    #[error("distribution parameter must be positive, got {0}")]
    BadParam(f64),
}

/// One candidate service facility.
///
/// `ec` is charged per time unit while established, `sc` per unit of service
/// rate, `wc` per customer-time unit of waiting. The admissible service rate
/// is `[rate_min, rate_max]`; an unbounded rate is `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilitySpec {
    pub id: usize,
    pub ec: f64,
    pub sc: f64,
    pub wc: f64,
    #[serde(rename = "m")]
    pub rate_min: f64,
    #[serde(rename = "M", with = "rate_upper")]
    pub rate_max: f64,
    #[serde(rename = "deltas")]
    pub variance: LocationScaleSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandZone {
    pub id: usize,
    pub lambda: f64,
}

/// Multipliers on the four objective terms, folded into the cost parameters
/// at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub establish: f64,
    pub serve: f64,
    pub wait: f64,
    pub travel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub facilities: Vec<FacilitySpec>,
    pub zones: Vec<DemandZone>,
    /// Transport cost per travel, `tc[i][j]`.
    pub tc: Vec<Vec<f64>>,
    /// Distances for closest-assignment constraints, `d[i][j]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Weights>,
}

/// `M`: a JSON number, or the string `"inf"` for an unbounded rate.
mod rate_upper {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum NumOrStr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match NumOrStr::deserialize(d)? {
            NumOrStr::Num(v) => Ok(v),
            NumOrStr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            NumOrStr::Str(s) => Err(D::Error::custom(format!(
                "expected a number or \"inf\", got \"{s}\""
            ))),
        }
    }
}

impl Instance {
    pub fn n_facilities(&self) -> usize {
        self.facilities.len()
    }

    pub fn n_zones(&self) -> usize {
        self.zones.len()
    }

    pub fn total_demand(&self) -> f64 {
        self.zones.iter().map(|z| z.lambda).sum()
    }

    pub fn min_lambda(&self) -> f64 {
        self.zones
            .iter()
            .map(|z| z.lambda)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Parse, fold weights into costs, validate. The error lists every failed
/// check, not just the first.
pub fn load_instance(source: &str) -> Result<Instance, InstanceError> {
    let mut inst: Instance = serde_json::from_str(source)
        .map_err(|e| InstanceError::Parse(e.to_string()))?;
    if let Some(w) = inst.weights.take() {
        for f in &mut inst.facilities {
            f.ec *= w.establish;
            f.sc *= w.serve;
            f.wc *= w.wait;
        }
        for row in &mut inst.tc {
            for v in row {
                *v *= w.travel;
            }
        }
    }
    let problems = validate(&inst);
    if problems.is_empty() {
        Ok(inst)
    } else {
        Err(InstanceError::Invalid(problems))
    }
}

pub fn save_instance(inst: &Instance) -> String {
    serde_json::to_string_pretty(inst).expect("instance serializes")
}

/// Every violated invariant and necessary feasibility condition, as
/// human-readable strings. Empty means the instance is usable.
pub fn validate(inst: &Instance) -> Vec<String> {
    let mut out = Vec::new();
    let n_i = inst.facilities.len();
    let n_j = inst.zones.len();
    if n_i == 0 {
        out.push("no facilities".to_string());
    }
    if n_j == 0 {
        out.push("no demand zones".to_string());
    }
    for (k, f) in inst.facilities.iter().enumerate() {
        if f.id != k {
            out.push(format!("facility at position {k} has id {}", f.id));
        }
        for (name, v) in [("ec", f.ec), ("sc", f.sc), ("wc", f.wc)] {
            if !v.is_finite() || v < 0.0 {
                out.push(format!("facility {}: {name} must be finite and >= 0", f.id));
            }
        }
        if !f.rate_min.is_finite() || f.rate_min < 0.0 {
            out.push(format!("facility {}: m must be finite and >= 0", f.id));
        }
        if f.rate_max.is_nan() || f.rate_min > f.rate_max {
            out.push(format!("facility {}: m <= M violated", f.id));
        }
        if f.variance.deltas.is_empty() {
            out.push(format!("facility {}: deltas must be nonempty", f.id));
        }
        if f.variance.deltas.iter().any(|d| !d.is_finite() || *d < 0.0) {
            out.push(format!("facility {}: deltas must be finite and >= 0", f.id));
        }
    }
    for (k, z) in inst.zones.iter().enumerate() {
        if z.id != k {
            out.push(format!("zone at position {k} has id {}", z.id));
        }
        if !(z.lambda > 0.0) || !z.lambda.is_finite() {
            out.push(format!("zone {}: lambda must be positive", z.id));
        }
    }
    let mut check_matrix = |name: &str, mat: &Vec<Vec<f64>>| {
        if mat.len() != n_i || mat.iter().any(|r| r.len() != n_j) {
            out.push(format!("{name} must be a {n_i} x {n_j} matrix"));
        } else if mat.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            out.push(format!("{name} entries must be finite and >= 0"));
        }
    };
    check_matrix("tc", &inst.tc);
    if let Some(d) = &inst.d {
        check_matrix("d", d);
    }
    // Necessary feasibility: capacity in aggregate and per zone.
    if out.is_empty() {
        let total: f64 = inst.total_demand();
        let cap: f64 = inst.facilities.iter().map(|f| f.rate_max).sum();
        if total > cap {
            out.push(format!(
                "aggregate demand {total} exceeds aggregate capacity {cap}"
            ));
        }
        for z in &inst.zones {
            if !inst.facilities.iter().any(|f| f.rate_max > z.lambda) {
                out.push(format!("no facility can host zone {}", z.id));
            }
        }
    }
    out
}

/// How service-time variance coefficients are produced by the generator.
#[derive(Debug, Clone)]
pub enum VarianceCfg {
    /// delta_0^2 ~ U(0, 1/sqrt(total demand)), delta_l^2 ~ U(0, 2) for
    /// l = 1..=l_max.
    Random { l_max: usize },
    /// The same fixed coefficient vector for every facility.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub ec: (f64, f64),
    pub lambda: (f64, f64),
    /// Transport cost = unit-square Euclidean distance x a factor from this
    /// range.
    pub tc_factor: (f64, f64),
    pub variance: VarianceCfg,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            ec: (500.0, 1500.0),
            lambda: (1.0, 10.0),
            tc_factor: (1.0, 5.0),
            variance: VarianceCfg::Random { l_max: 2 },
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, range: (f64, f64), what: &'static str) -> Result<f64, InstanceError> {
    if !range.0.is_finite() || !range.1.is_finite() || range.0 > range.1 {
        return Err(InstanceError::BadRange(what));
    }
    if range.0 == range.1 {
        return Ok(range.0);
    }
    Ok(rng.gen_range(range.0..range.1))
}

/// Deterministic function of `(seed, n_i, n_j, cfg)`. Facilities get
/// `sc ~ U[1,5]`, `wc ~ U[50,300]`, unbounded rates, and variance
/// coefficients per `cfg.variance`; sites and zones are placed uniformly in
/// the unit square and transport costs scale with distance.
pub fn generate_instance(
    seed: u64,
    n_i: usize,
    n_j: usize,
    cfg: &GeneratorConfig,
) -> Result<Instance, InstanceError> {
    assert!(n_i >= 1 && n_j >= 1, "need at least one facility and zone");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut zones = Vec::with_capacity(n_j);
    for id in 0..n_j {
        zones.push(DemandZone {
            id,
            lambda: draw(&mut rng, cfg.lambda, "lambda")?,
        });
    }
    let beta = zones.iter().map(|z| z.lambda).sum::<f64>().sqrt();

    let mut facilities = Vec::with_capacity(n_i);
    for id in 0..n_i {
        let ec = draw(&mut rng, cfg.ec, "ec")?;
        let sc = draw(&mut rng, (1.0, 5.0), "sc")?;
        let wc = draw(&mut rng, (50.0, 300.0), "wc")?;
        let deltas = match &cfg.variance {
            VarianceCfg::Random { l_max } => {
                let mut deltas = vec![draw(&mut rng, (0.0, 1.0 / beta), "delta0")?.sqrt()];
                for _ in 1..=*l_max {
                    deltas.push(draw(&mut rng, (0.0, 2.0), "delta")?.sqrt());
                }
                deltas
            }
            VarianceCfg::Fixed(d) => {
                if d.is_empty() {
                    return Err(InstanceError::BadRange("deltas"));
                }
                d.clone()
            }
        };
        facilities.push(FacilitySpec {
            id,
            ec,
            sc,
            wc,
            rate_min: 0.0,
            rate_max: f64::INFINITY,
            variance: LocationScaleSpec::new(deltas)
                .map_err(|_| InstanceError::BadRange("deltas"))?,
        });
    }

    let site: Vec<(f64, f64)> = (0..n_i)
        .map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
        .collect();
    let spot: Vec<(f64, f64)> = (0..n_j)
        .map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
        .collect();
    let mut tc = vec![vec![0.0; n_j]; n_i];
    let mut d = vec![vec![0.0; n_j]; n_i];
    for i in 0..n_i {
        for j in 0..n_j {
            let dist = ((site[i].0 - spot[j].0).powi(2) + (site[i].1 - spot[j].1).powi(2)).sqrt();
            d[i][j] = dist;
            tc[i][j] = dist * draw(&mut rng, cfg.tc_factor, "tc factor")?;
        }
    }

    Ok(Instance {
        facilities,
        zones,
        tc,
        d: Some(d),
        weights: None,
    })
}

/// Service-time distribution families for which the admissible rate interval
/// is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServiceFamily {
    Exponential,
    Gamma,
    /// Uniform noise of half-width `theta` around the mean service time.
    Uniform { theta: f64 },
    /// Normal noise with standard deviation `sigma`; nonnegativity holds only
    /// probabilistically, controlled by a tail bound.
    Normal { sigma: f64 },
}

/// The service-rate interval `(m, M)` keeping service times nonnegative:
/// families with essential infimum zero allow any rate; bounded supports cap
/// the rate outright; normal noise caps it so that P(S < 0) <= alpha.
pub fn derive_rate_bounds(
    family: ServiceFamily,
    alpha: Option<f64>,
) -> Result<(f64, f64), InstanceError> {
    match family {
        ServiceFamily::Exponential | ServiceFamily::Gamma => Ok((0.0, f64::INFINITY)),
        ServiceFamily::Uniform { theta } => {
            if !(theta > 0.0) {
                return Err(InstanceError::BadParam(theta));
            }
            Ok((0.0, 1.0 / theta))
        }
        ServiceFamily::Normal { sigma } => {
            if !(sigma > 0.0) {
                return Err(InstanceError::BadParam(sigma));
            }
            let a = alpha.ok_or(InstanceError::BadTail(f64::NAN))?;
            if !(a > 0.0 && a < 1.0) {
                return Err(InstanceError::BadTail(a));
            }
            let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - a);
            Ok((0.0, 1.0 / (z * sigma)))
        }
    }
}
