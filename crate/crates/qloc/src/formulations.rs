//! Conic models of the design problem, plus standalone waiting-time
//! convexifiers.
//!
//! Four interchangeable mixed-integer SOC formulations share the binary
//! skeleton (open flags `x_i`, assignment flags `y_ij`, one-facility-per-zone
//! rows, linkage) and differ in how the M/G/1 waiting time enters:
//!
//! - **General**: full lift for location-scale variance of any order. Per
//!   facility: utilization `rho` with `sum_j lambda_j y_ij^2 <= rho mu`,
//!   epigraph `t` with `rho^2 + (sum_j lambda_j u_ij)^2 <= 2(1-rho)t`, a
//!   standard-deviation lift `sigma >= sqrt(v(mu))` built from a reciprocal
//!   `z ~ 1/mu` and power towers, and big-M rows linearizing `u = sigma y`.
//!   The waiting cost is `wc (t + rho)`.
//! - **Affine**: variance `v = d0^2 + d1^2/mu^2` folds into one SOC row with
//!   coefficients `sqrt(1 + d1^2)` and `d0`; no sigma/u/z lift.
//! - **ConstantMM1**: exponential service, unbounded rates. The optimal rate
//!   is eliminated in closed form, leaving binaries plus one epigraph `r_i`
//!   per facility with `r_i >= 2 sqrt(sc wc sum_j lambda_j y_ij^2)`.
//! - **Alternative**: as General, but the epigraph row is split into two
//!   smaller SOC rows with epigraphs `r_i`, `s_i`; waiting cost
//!   `wc (r + s + rho)`.
//!
//! All four agree with the closed-form objective on integer points: for any
//! binary assignment the minimum of the relaxation over the remaining
//! variables equals [`objective_value`]. Fractional points under-estimate,
//! which is exactly what a branch-and-bound relaxation needs.

use thiserror::Error;

use crate::conic::{power_tower_witness, AffineExpr, ConeProgram, Rel, VarId};
use crate::instance::{FacilitySpec, Instance};
use crate::queueing::{wt_total, LocationScaleSpec};

#[derive(Debug, Error)]
pub enum FormulationError {
    #[error("invalid instance: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("facility {0} has variance order {1}; the affine formulation needs order <= 1")]
    NeedsAffine(usize, usize),
    #[error("facility {0} must have exponential service (deltas (0,1)), m = 0, unbounded M")]
    NeedsMM1(usize),
    #[error("closest-assignment rows need the distance matrix d")]
    MissingDistances,
    #[error("zone {zone} assigned to closed facility {facility}")]
    AssignedClosed { zone: usize, facility: usize },
    #[error("solution shape does not match the instance")]
    ShapeMismatch,
    #[error("continuous-demand mode needs {0}")]
    ContinuousMode(&'static str),
    #[error("tightening rows need the lifted flow variables of the general or split formulations")]
    NeedsLiftedFlows,
    #[error("decomposition needs 0 <= b <= 1, got {0}")]
    BadScaleTerm(f64),
    #[error(transparent)]
    Conic(#[from] crate::conic::ConicError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormulationKind {
    General,
    Affine,
    ConstantMM1,
    Alternative,
}

impl FormulationKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "general" => Some(FormulationKind::General),
            "affine" => Some(FormulationKind::Affine),
            "mm1" => Some(FormulationKind::ConstantMM1),
            "alt" => Some(FormulationKind::Alternative),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FormulationKind::General => "general",
            FormulationKind::Affine => "affine",
            FormulationKind::ConstantMM1 => "mm1",
            FormulationKind::Alternative => "alt",
        }
    }
}

/// One `zbar >= z^level` tower: the lifted power variable and the auxiliary
/// tree variables in creation order.
#[derive(Debug, Clone)]
pub struct TowerRef {
    pub level: usize,
    pub zbar: VarId,
    pub aux: Vec<VarId>,
}

/// A formulation instantiated on one instance: the cone program plus index
/// maps for every named variable family. Families a formulation does not use
/// are empty.
#[derive(Debug)]
pub struct BuiltModel {
    pub program: ConeProgram,
    pub kind: FormulationKind,
    pub inst: Instance,
    pub x: Vec<VarId>,
    pub y: Vec<Vec<VarId>>,
    pub mu: Vec<VarId>,
    pub rho: Vec<VarId>,
    pub sigma: Vec<VarId>,
    pub u: Vec<Vec<VarId>>,
    pub t: Vec<VarId>,
    pub z: Vec<VarId>,
    pub towers: Vec<Vec<TowerRef>>,
    /// Epigraph split: ConstantMM1 uses `r` alone, Alternative uses `r` + `s`.
    pub r: Vec<VarId>,
    pub s: Vec<VarId>,
    /// Big-M constant per facility, bounding `sigma_i`.
    pub q: Vec<f64>,
}

impl BuiltModel {
    /// The variable space cuts live in: every named model variable, in a
    /// fixed order, excluding the internal lifts (`z`, towers) whose values
    /// are not determined by the projected point.
    pub fn cut_space(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.x);
        for row in &self.y {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(&self.mu);
        out.extend_from_slice(&self.rho);
        out.extend_from_slice(&self.sigma);
        for row in &self.u {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(&self.t);
        out.extend_from_slice(&self.r);
        out.extend_from_slice(&self.s);
        out
    }

    /// Aggregate demand per facility under a zone-to-facility assignment.
    pub fn aggregate(&self, assignment: &[usize]) -> Vec<f64> {
        let mut agg = vec![0.0; self.inst.n_facilities()];
        for (j, &i) in assignment.iter().enumerate() {
            agg[i] += self.inst.zones[j].lambda;
        }
        agg
    }
}

/// Big-M bound for `sigma_i`. On any feasible point with demand,
/// `mu_i >= m' = max(min_j lambda_j, m_i)` and `v` is nonincreasing, so
/// `sigma_i = sqrt(v(mu_i)) <= sqrt(v(m'))`. The bound covers both `v` and
/// `sqrt(v)` (whichever is larger) with a 0.1% margin.
pub fn compute_q(fac: &FacilitySpec, inst: &Instance) -> f64 {
    let m_prime = inst.min_lambda().max(fac.rate_min);
    let v_sup = fac.variance.variance_of(m_prime);
    v_sup.max(v_sup.sqrt()) * 1.001
}

fn validate_checked(inst: &Instance) -> Result<(), FormulationError> {
    let problems = crate::instance::validate(inst);
    if problems.is_empty() {
        Ok(())
    } else {
        Err(FormulationError::Invalid(problems))
    }
}

/// Binary skeleton shared by all formulations: open flags, assignment flags,
/// one-facility-per-zone rows, linkage rows.
fn base_binaries(p: &mut ConeProgram, inst: &Instance) -> (Vec<VarId>, Vec<Vec<VarId>>) {
    let ni = inst.n_facilities();
    let nj = inst.n_zones();
    let x: Vec<VarId> = (0..ni).map(|i| p.add_binary(format!("x{i}"))).collect();
    let y: Vec<Vec<VarId>> = (0..ni)
        .map(|i| (0..nj).map(|j| p.add_binary(format!("y{i}_{j}"))).collect())
        .collect();
    for j in 0..nj {
        let mut row = AffineExpr::constant(-1.0);
        for yi in &y {
            row = row.plus_term(yi[j], 1.0);
        }
        p.add_lin(row, Rel::Eq, format!("assign/{j}"));
    }
    for i in 0..ni {
        for j in 0..nj {
            p.add_lin(
                AffineExpr::var(y[i][j]).minus(&AffineExpr::var(x[i])),
                Rel::Le,
                format!("link/{i}_{j}"),
            );
        }
    }
    (x, y)
}

fn travel_objective(inst: &Instance, y: &[Vec<VarId>], extra_y_coef: impl Fn(usize, usize) -> f64) -> AffineExpr {
    let mut obj = AffineExpr::constant(0.0);
    for (i, yi) in y.iter().enumerate() {
        for (j, &yij) in yi.iter().enumerate() {
            let lambda = inst.zones[j].lambda;
            obj = obj.plus_term(yij, inst.tc[i][j] * lambda + extra_y_coef(i, j) * lambda);
        }
    }
    obj
}

fn steady_state_row(p: &mut ConeProgram, inst: &Instance, y: &[Vec<VarId>], mu: VarId, i: usize) {
    let mut row = AffineExpr::constant(0.0);
    for (j, &yij) in y[i].iter().enumerate() {
        row = row.plus_term(yij, inst.zones[j].lambda);
    }
    row = row.minus(&AffineExpr::var(mu));
    p.add_lin(row, Rel::Le, format!("steady/{i}"));
}

fn rate_bound_rows(p: &mut ConeProgram, fac: &FacilitySpec, x: VarId, mu: VarId, i: usize) {
    if fac.rate_min > 0.0 {
        p.add_lin(
            AffineExpr::term(x, fac.rate_min).minus(&AffineExpr::var(mu)),
            Rel::Le,
            format!("rate_lo/{i}"),
        );
    }
    if fac.rate_max.is_finite() {
        p.add_lin(
            AffineExpr::var(mu).minus(&AffineExpr::term(x, fac.rate_max)),
            Rel::Le,
            format!("rate_hi/{i}"),
        );
    }
}

/// Row family `sum_j lambda_j y_ij^2 <= rho mu`: SOC with body
/// `(2 sqrt(lambda_j) y_ij ..., rho - mu)` and head `rho + mu`.
fn utilization_row(
    p: &mut ConeProgram,
    inst: &Instance,
    selectors: &[VarId],
    rho: VarId,
    mu: VarId,
    label: String,
) {
    let mut body: Vec<AffineExpr> = selectors
        .iter()
        .enumerate()
        .map(|(j, &yij)| AffineExpr::term(yij, 2.0 * inst.zones[j].lambda.sqrt()))
        .collect();
    body.push(AffineExpr::var(rho).minus(&AffineExpr::var(mu)));
    p.add_soc(body, AffineExpr::var(rho).plus(&AffineExpr::var(mu)), label);
}

/// Big-M rows tying `u_j = sigma * y_j` on binary points:
/// `sigma - (1 - y_j) Q <= u_j <= sigma` and `0 <= u_j <= Q y_j`.
fn bigm_rows(
    p: &mut ConeProgram,
    sigma: VarId,
    u: &[VarId],
    selectors: &[VarId],
    q_val: f64,
    i: usize,
) {
    for (j, (&uj, &yj)) in u.iter().zip(selectors).enumerate() {
        p.add_lin(
            AffineExpr::var(sigma)
                .minus(&AffineExpr::var(uj))
                .plus_term(yj, q_val)
                .plus_const(-q_val),
            Rel::Le,
            format!("u_floor/{i}_{j}"),
        );
        p.add_lin(
            AffineExpr::var(uj).minus(&AffineExpr::var(sigma)),
            Rel::Le,
            format!("u_cap/{i}_{j}"),
        );
        p.add_lin(
            AffineExpr::var(uj).plus_term(yj, -q_val),
            Rel::Le,
            format!("u_gate/{i}_{j}"),
        );
    }
}

/// The standard-deviation lift for general variance: reciprocal `z`, towers
/// `zbar_l >= z^l`, and the norm row `sigma >= ||(d0, d1 z, d_l zbar_l...)||`.
/// `gate` multiplies the reciprocal row's left side: `gate^2 <= z mu`. Open
/// facilities pass their `x` so the row vanishes when closed; standalone
/// blocks pass the constant 1.
fn sigma_lift(
    p: &mut ConeProgram,
    variance: &LocationScaleSpec,
    gate: AffineExpr,
    z: VarId,
    mu: VarId,
    sigma: VarId,
    i: usize,
) -> Result<Vec<TowerRef>, FormulationError> {
    p.add_hyperbolic(gate, AffineExpr::var(z), AffineExpr::var(mu), &format!("recip/{i}"))?;
    let mut towers = Vec::new();
    for l in 2..=variance.order() {
        let zbar = p.add_var(format!("zb{i}_{l}"), 0.0, f64::INFINITY);
        let before = p.num_vars();
        p.add_power_tower(z, zbar, l as u32)?;
        let aux = (before..p.num_vars()).map(VarId).collect();
        towers.push(TowerRef { level: l, zbar, aux });
    }
    let mut body = Vec::new();
    let deltas = &variance.deltas;
    if deltas[0] > 0.0 {
        body.push(AffineExpr::constant(deltas[0]));
    }
    if deltas.len() > 1 && deltas[1] > 0.0 {
        body.push(AffineExpr::term(z, deltas[1]));
    }
    for tower in &towers {
        let d = deltas[tower.level];
        if d > 0.0 {
            body.push(AffineExpr::term(tower.zbar, d));
        }
    }
    p.add_soc(body, AffineExpr::var(sigma), format!("norm/{i}"));
    Ok(towers)
}

pub fn build(inst: &Instance, kind: FormulationKind) -> Result<BuiltModel, FormulationError> {
    match kind {
        FormulationKind::General => build_general(inst),
        FormulationKind::Affine => build_affine(inst),
        FormulationKind::ConstantMM1 => build_constant_case(inst),
        FormulationKind::Alternative => build_alternative(inst),
    }
}

pub fn build_general(inst: &Instance) -> Result<BuiltModel, FormulationError> {
    build_lifted(inst, false)
}

/// Variant with the epigraph row split in two (`r` for the utilization part,
/// `s` for the flow part); same projection onto `(x, y, mu)` and the same
/// optimal value, at the price of two SOC rows per facility.
pub fn build_alternative(inst: &Instance) -> Result<BuiltModel, FormulationError> {
    build_lifted(inst, true)
}

fn build_lifted(inst: &Instance, split_epigraph: bool) -> Result<BuiltModel, FormulationError> {
    validate_checked(inst)?;
    let ni = inst.n_facilities();
    let mut p = ConeProgram::new();
    let (x, y) = base_binaries(&mut p, inst);

    let mut mu = Vec::with_capacity(ni);
    let mut rho = Vec::with_capacity(ni);
    let mut sigma = Vec::with_capacity(ni);
    let mut u = Vec::with_capacity(ni);
    let mut t = Vec::with_capacity(ni);
    let mut r = Vec::with_capacity(ni);
    let mut s = Vec::with_capacity(ni);
    let mut z = Vec::with_capacity(ni);
    let mut towers = Vec::with_capacity(ni);
    let mut q = Vec::with_capacity(ni);

    for (i, fac) in inst.facilities.iter().enumerate() {
        let q_val = compute_q(fac, inst);
        let mu_i = p.add_var(format!("mu{i}"), 0.0, fac.rate_max);
        let rho_i = p.add_var(format!("rho{i}"), 0.0, f64::INFINITY);
        let sigma_i = p.add_var(format!("sigma{i}"), 0.0, q_val);
        let u_i: Vec<VarId> = (0..inst.n_zones())
            .map(|j| p.add_var(format!("u{i}_{j}"), 0.0, f64::INFINITY))
            .collect();
        let z_i = p.add_var(format!("z{i}"), 0.0, f64::INFINITY);

        steady_state_row(&mut p, inst, &y, mu_i, i);
        rate_bound_rows(&mut p, fac, x[i], mu_i, i);
        bigm_rows(&mut p, sigma_i, &u_i, &y[i], q_val, i);
        utilization_row(&mut p, inst, &y[i], rho_i, mu_i, format!("load/{i}"));

        // Aggregate weighted flow sum_j lambda_j u_ij, shared by the
        // epigraph rows below.
        let mut flow = AffineExpr::constant(0.0);
        for (j, &uij) in u_i.iter().enumerate() {
            flow = flow.plus_term(uij, inst.zones[j].lambda);
        }

        if split_epigraph {
            let r_i = p.add_var(format!("r{i}"), 0.0, f64::INFINITY);
            let s_i = p.add_var(format!("s{i}"), 0.0, f64::INFINITY);
            // rho^2 <= 2(1-rho) r.
            let base = AffineExpr::constant(2.0).plus_term(rho_i, -2.0);
            p.add_soc(
                vec![
                    AffineExpr::term(rho_i, 2.0),
                    base.clone().plus_term(r_i, -1.0),
                ],
                base.clone().plus_term(r_i, 1.0),
                format!("wait_util/{i}"),
            );
            // (sum lambda u)^2 <= 2(1-rho) s.
            p.add_soc(
                vec![flow.scaled(2.0), base.clone().plus_term(s_i, -1.0)],
                base.plus_term(s_i, 1.0),
                format!("wait_flow/{i}"),
            );
            r.push(r_i);
            s.push(s_i);
        } else {
            let t_i = p.add_var(format!("t{i}"), 0.0, f64::INFINITY);
            // rho^2 + (sum lambda u)^2 <= 2(1-rho) t.
            let base = AffineExpr::constant(2.0).plus_term(rho_i, -2.0);
            p.add_soc(
                vec![
                    AffineExpr::term(rho_i, 2.0),
                    flow.scaled(2.0),
                    base.clone().plus_term(t_i, -1.0),
                ],
                base.plus_term(t_i, 1.0),
                format!("wait/{i}"),
            );
            t.push(t_i);
        }

        let tower_refs = sigma_lift(
            &mut p,
            &fac.variance,
            AffineExpr::var(x[i]),
            z_i,
            mu_i,
            sigma_i,
            i,
        )?;

        mu.push(mu_i);
        rho.push(rho_i);
        sigma.push(sigma_i);
        u.push(u_i);
        z.push(z_i);
        towers.push(tower_refs);
        q.push(q_val);
    }

    let mut obj = travel_objective(inst, &y, |_, _| 0.0);
    for (i, fac) in inst.facilities.iter().enumerate() {
        obj = obj.plus_term(x[i], fac.ec).plus_term(mu[i], fac.sc);
        obj = obj.plus_term(rho[i], fac.wc);
        if split_epigraph {
            obj = obj.plus_term(r[i], fac.wc).plus_term(s[i], fac.wc);
        } else {
            obj = obj.plus_term(t[i], fac.wc);
        }
    }
    p.objective = obj;

    Ok(BuiltModel {
        program: p,
        kind: if split_epigraph {
            FormulationKind::Alternative
        } else {
            FormulationKind::General
        },
        inst: inst.clone(),
        x,
        y,
        mu,
        rho,
        sigma,
        u,
        t,
        z,
        towers,
        r,
        s,
        q,
    })
}

pub fn build_affine(inst: &Instance) -> Result<BuiltModel, FormulationError> {
    validate_checked(inst)?;
    for fac in &inst.facilities {
        if fac.variance.order() > 1 {
            return Err(FormulationError::NeedsAffine(fac.id, fac.variance.order()));
        }
    }
    let ni = inst.n_facilities();
    let mut p = ConeProgram::new();
    let (x, y) = base_binaries(&mut p, inst);
    let mut mu = Vec::with_capacity(ni);
    let mut rho = Vec::with_capacity(ni);
    let mut t = Vec::with_capacity(ni);

    for (i, fac) in inst.facilities.iter().enumerate() {
        let mu_i = p.add_var(format!("mu{i}"), 0.0, fac.rate_max);
        let rho_i = p.add_var(format!("rho{i}"), 0.0, f64::INFINITY);
        let t_i = p.add_var(format!("t{i}"), 0.0, f64::INFINITY);

        steady_state_row(&mut p, inst, &y, mu_i, i);
        rate_bound_rows(&mut p, fac, x[i], mu_i, i);
        utilization_row(&mut p, inst, &y[i], rho_i, mu_i, format!("load/{i}"));

        // (1 + d1^2) rho^2 + d0^2 (sum lambda y)^2 <= 2(1-rho) t.
        let d0 = fac.variance.deltas[0];
        let d1 = fac.variance.deltas.get(1).copied().unwrap_or(0.0);
        let base = AffineExpr::constant(2.0).plus_term(rho_i, -2.0);
        let mut body = vec![AffineExpr::term(rho_i, 2.0 * (1.0 + d1 * d1).sqrt())];
        if d0 > 0.0 {
            let mut agg = AffineExpr::constant(0.0);
            for (j, &yij) in y[i].iter().enumerate() {
                agg = agg.plus_term(yij, inst.zones[j].lambda);
            }
            body.push(agg.scaled(2.0 * d0));
        }
        body.push(base.clone().plus_term(t_i, -1.0));
        p.add_soc(body, base.plus_term(t_i, 1.0), format!("wait/{i}"));

        mu.push(mu_i);
        rho.push(rho_i);
        t.push(t_i);
    }

    let mut obj = travel_objective(inst, &y, |_, _| 0.0);
    for (i, fac) in inst.facilities.iter().enumerate() {
        obj = obj
            .plus_term(x[i], fac.ec)
            .plus_term(mu[i], fac.sc)
            .plus_term(rho[i], fac.wc)
            .plus_term(t[i], fac.wc);
    }
    p.objective = obj;

    Ok(BuiltModel {
        program: p,
        kind: FormulationKind::Affine,
        inst: inst.clone(),
        x,
        y,
        mu,
        rho,
        sigma: Vec::new(),
        u: Vec::new(),
        t,
        z: Vec::new(),
        towers: Vec::new(),
        r: Vec::new(),
        s: Vec::new(),
        q: Vec::new(),
    })
}

/// Exponential service with free rates: the optimal `mu_i` is eliminated in
/// closed form, so the model is binaries plus one epigraph per facility. The
/// square-root term enters the objective with coefficient 2 because
/// substituting `mu* = lambda + sqrt(wc lambda / sc)` into
/// `sc mu + wc lambda/(mu - lambda)` gives `sc lambda + 2 sqrt(sc wc lambda)`.
pub fn build_constant_case(inst: &Instance) -> Result<BuiltModel, FormulationError> {
    validate_checked(inst)?;
    for fac in &inst.facilities {
        if !fac.variance.is_unit_reciprocal()
            || fac.rate_min != 0.0
            || fac.rate_max.is_finite()
        {
            return Err(FormulationError::NeedsMM1(fac.id));
        }
    }
    let ni = inst.n_facilities();
    let mut p = ConeProgram::new();
    let (x, y) = base_binaries(&mut p, inst);
    let mut r = Vec::with_capacity(ni);
    for (i, fac) in inst.facilities.iter().enumerate() {
        let r_i = p.add_var(format!("r{i}"), 0.0, f64::INFINITY);
        let a: Vec<f64> = inst
            .zones
            .iter()
            .map(|zone| 4.0 * fac.sc * fac.wc * zone.lambda)
            .collect();
        let b = vec![0.0; inst.n_zones()];
        p.add_sqrt_mixed(&a, &b, &y[i], r_i, &format!("serve/{i}"))?;
        r.push(r_i);
    }
    let mut obj = travel_objective(inst, &y, |i, _| inst.facilities[i].sc);
    for (i, fac) in inst.facilities.iter().enumerate() {
        obj = obj.plus_term(x[i], fac.ec).plus_term(r[i], 1.0);
    }
    p.objective = obj;

    Ok(BuiltModel {
        program: p,
        kind: FormulationKind::ConstantMM1,
        inst: inst.clone(),
        x,
        y,
        mu: Vec::new(),
        rho: Vec::new(),
        sigma: Vec::new(),
        u: Vec::new(),
        t: Vec::new(),
        z: Vec::new(),
        towers: Vec::new(),
        r,
        s: Vec::new(),
        q: Vec::new(),
    })
}

/// User-choice assignment: each zone must use the nearest open facility.
/// Per (facility, zone) pair: `sum_k d_kj y_kj + (D_j - d_ij) x_i <= D_j`
/// with `D_j = max_k d_kj`. When `x_i = 1` the row reads
/// `d_{assigned,j} <= d_ij`; when `x_i = 0` it is vacuous because no
/// assignment distance exceeds `D_j`.
pub fn add_closest_assignment(model: &mut BuiltModel) -> Result<(), FormulationError> {
    let inst = model.inst.clone();
    let d = inst.d.as_ref().ok_or(FormulationError::MissingDistances)?;
    let ni = inst.n_facilities();
    for j in 0..inst.n_zones() {
        let dj_max = (0..ni).map(|k| d[k][j]).fold(0.0, f64::max);
        for i in 0..ni {
            let mut row = AffineExpr::constant(-dj_max);
            for k in 0..ni {
                row = row.plus_term(model.y[k][j], d[k][j]);
            }
            row = row.plus_term(model.x[i], dj_max - d[i][j]);
            model.program.add_lin(row, Rel::Le, format!("ca/{i}_{j}"));
        }
    }
    Ok(())
}

/// Objective split into its four terms, all computed from the closed-form
/// M/G/1 expressions (never from relaxation variables).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CostBreakdown {
    pub establish: f64,
    pub serve: f64,
    pub wait: f64,
    pub travel: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.establish + self.serve + self.wait + self.travel
    }

    /// Percentages (establish, serve, wait, travel) of the total.
    pub fn percentages(&self) -> [f64; 4] {
        let t = self.total();
        if t == 0.0 || !t.is_finite() {
            return [0.0; 4];
        }
        [
            100.0 * self.establish / t,
            100.0 * self.serve / t,
            100.0 * self.wait / t,
            100.0 * self.travel / t,
        ]
    }
}

/// True cost of a concrete design: `open` flags, a full assignment, and a
/// service rate per open facility. Returns `+inf` inside the breakdown when
/// some open facility cannot cover its demand (`mu <= lambda`).
pub fn objective_value(
    inst: &Instance,
    open: &[bool],
    assignment: &[usize],
    rates: &[f64],
) -> Result<CostBreakdown, FormulationError> {
    let ni = inst.n_facilities();
    if open.len() != ni || rates.len() != ni || assignment.len() != inst.n_zones() {
        return Err(FormulationError::ShapeMismatch);
    }
    let mut agg = vec![0.0f64; ni];
    let mut travel = 0.0;
    for (j, &i) in assignment.iter().enumerate() {
        if i >= ni {
            return Err(FormulationError::ShapeMismatch);
        }
        if !open[i] {
            return Err(FormulationError::AssignedClosed { zone: j, facility: i });
        }
        agg[i] += inst.zones[j].lambda;
        travel += inst.tc[i][j] * inst.zones[j].lambda;
    }
    let mut establish = 0.0;
    let mut serve = 0.0;
    let mut wait = 0.0;
    for (i, fac) in inst.facilities.iter().enumerate() {
        if !open[i] {
            continue;
        }
        establish += fac.ec;
        serve += fac.sc * rates[i];
        let v = fac.variance.variance_of(rates[i]);
        wait += fac.wc * wt_total(agg[i], rates[i], v).map_err(|_| FormulationError::ShapeMismatch)?;
    }
    Ok(CostBreakdown {
        establish,
        serve,
        wait,
        travel,
    })
}

/// The canonical lifted point for an integer design: binaries from the
/// assignment, every auxiliary at the value that makes its defining rows
/// tight. Facilities outside the assignment's image are closed with an
/// all-zero block (`sigma = d0`). Rates must be admissible and strictly
/// above the aggregate demand.
pub fn canonical_lift(model: &BuiltModel, assignment: &[usize], rates: &[f64]) -> Vec<f64> {
    let inst = &model.inst;
    let ni = inst.n_facilities();
    let agg = model.aggregate(assignment);
    let mut point = vec![0.0; model.program.num_vars()];
    for (j, &i) in assignment.iter().enumerate() {
        point[model.y[i][j].0] = 1.0;
    }
    for i in 0..ni {
        let open = agg[i] > 0.0;
        if !open {
            // Closed block: everything zero except sigma = d0 in the lifted
            // formulations.
            if let Some(&sig) = model.sigma.get(i) {
                point[sig.0] = inst.facilities[i].variance.deltas[0];
            }
            continue;
        }
        point[model.x[i].0] = 1.0;
        let fac = &inst.facilities[i];
        match model.kind {
            FormulationKind::ConstantMM1 => {
                point[model.r[i].0] = 2.0 * (fac.sc * fac.wc * agg[i]).sqrt();
            }
            _ => {
                let mu = rates[i];
                assert!(mu > agg[i], "rate must clear aggregate demand");
                let rho = agg[i] / mu;
                let g = fac.variance.mu2_variance(mu);
                point[model.mu[i].0] = mu;
                point[model.rho[i].0] = rho;
                let t_val = rho * rho * (1.0 + g) / (2.0 * (1.0 - rho));
                match model.kind {
                    FormulationKind::Alternative => {
                        point[model.r[i].0] = rho * rho / (2.0 * (1.0 - rho));
                        point[model.s[i].0] = rho * rho * g / (2.0 * (1.0 - rho));
                    }
                    _ => point[model.t[i].0] = t_val,
                }
                if let Some(&sig) = model.sigma.get(i) {
                    let sigma_val = fac.variance.variance_of(mu).sqrt();
                    point[sig.0] = sigma_val;
                    for (j, &uij) in model.u[i].iter().enumerate() {
                        point[uij.0] = sigma_val * point[model.y[i][j].0];
                    }
                    let z_val = 1.0 / mu;
                    point[model.z[i].0] = z_val;
                    for tower in &model.towers[i] {
                        let zbar_val = z_val.powi(tower.level as i32);
                        point[tower.zbar.0] = zbar_val;
                        let witness = power_tower_witness(z_val, zbar_val, tower.level as u32);
                        for (&aux, w) in tower.aux.iter().zip(witness) {
                            point[aux.0] = w;
                        }
                    }
                }
            }
        }
    }
    point
}

/// How demand enters a standalone waiting-time block: either a fixed rate
/// per selectable customer class with binary pickers, or one continuous
/// aggregate-rate variable.
pub enum WtMode {
    BinarySelection { lambdas: Vec<f64>, w: Vec<VarId> },
    Continuous { lambda: VarId },
}

/// Variance model for standalone blocks: the two-coefficient scale form
/// `v(mu) = a + b/mu^2`, or a full location-scale spec.
pub enum WtVariance<'a> {
    Scale { a: f64, b: f64 },
    Full(&'a LocationScaleSpec),
}

fn standalone_q(variance: &LocationScaleSpec, lambdas: &[f64]) -> f64 {
    let m_prime = lambdas
        .iter()
        .copied()
        .filter(|l| *l > 0.0)
        .fold(f64::INFINITY, f64::min);
    let m_prime = if m_prime.is_finite() { m_prime } else { 1.0 };
    let v_sup = variance.variance_of(m_prime);
    v_sup.max(v_sup.sqrt()) * 1.001
}

/// Constrain the total expected time in system: `WT_T(lambda, mu) <= z`.
///
/// Binary-selection mode emits the same lift as the full models (utilization
/// and epigraph rows; for full variance also the sigma lift and big-M rows,
/// with an ungated reciprocal since the server is always on). Continuous
/// mode handles `v = b/mu^2` with constant `z = c` only, via
/// `lambda^2 (1+b)/2 <= q (mu - lambda)` and `q + lambda <= c mu`.
pub fn convexify_total_wt(
    p: &mut ConeProgram,
    mode: &WtMode,
    variance: &WtVariance,
    mu: VarId,
    z: &AffineExpr,
    tag: &str,
) -> Result<(), FormulationError> {
    match mode {
        WtMode::Continuous { lambda } => {
            let b = match variance {
                WtVariance::Scale { a, b } if *a == 0.0 => *b,
                WtVariance::Scale { .. } => {
                    return Err(FormulationError::ContinuousMode("a = 0"))
                }
                WtVariance::Full(spec) => {
                    if spec.deltas[0] != 0.0 || spec.order() > 1 {
                        return Err(FormulationError::ContinuousMode("v = b/mu^2"));
                    }
                    spec.deltas.get(1).map_or(0.0, |d| d * d)
                }
            };
            if !z.is_constant() {
                return Err(FormulationError::ContinuousMode("a constant bound"));
            }
            let c = z.constant;
            let q = p.add_var(format!("{tag}/q"), 0.0, f64::INFINITY);
            p.add_hyperbolic(
                AffineExpr::term(*lambda, ((1.0 + b) / 2.0).sqrt()),
                AffineExpr::var(q),
                AffineExpr::var(mu).minus(&AffineExpr::var(*lambda)),
                &format!("{tag}/congest"),
            )?;
            p.add_lin(
                AffineExpr::var(q)
                    .plus_term(*lambda, 1.0)
                    .plus_term(mu, -c),
                Rel::Le,
                format!("{tag}/bound"),
            );
            Ok(())
        }
        WtMode::BinarySelection { lambdas, w } => {
            let rho = p.add_var(format!("{tag}/rho"), 0.0, f64::INFINITY);
            let t = p.add_var(format!("{tag}/t"), 0.0, f64::INFINITY);
            let mut body: Vec<AffineExpr> = lambdas
                .iter()
                .zip(w)
                .map(|(&l, &wj)| AffineExpr::term(wj, 2.0 * l.sqrt()))
                .collect();
            body.push(AffineExpr::var(rho).minus(&AffineExpr::var(mu)));
            p.add_soc(
                body,
                AffineExpr::var(rho).plus(&AffineExpr::var(mu)),
                format!("{tag}/load"),
            );
            let mut agg = AffineExpr::constant(0.0);
            for (&l, &wj) in lambdas.iter().zip(w) {
                agg = agg.plus_term(wj, l);
            }
            let base = AffineExpr::constant(2.0).plus_term(rho, -2.0);
            match variance {
                WtVariance::Scale { a, b } => {
                    let mut body = vec![AffineExpr::term(rho, 2.0 * (1.0 + b).sqrt())];
                    if *a > 0.0 {
                        body.push(agg.scaled(2.0 * a.sqrt()));
                    }
                    body.push(base.clone().plus_term(t, -1.0));
                    p.add_soc(body, base.plus_term(t, 1.0), format!("{tag}/wait"));
                }
                WtVariance::Full(spec) => {
                    let q_val = standalone_q(spec, lambdas);
                    let sigma = p.add_var(format!("{tag}/sigma"), 0.0, q_val);
                    let u: Vec<VarId> = (0..w.len())
                        .map(|j| p.add_var(format!("{tag}/u{j}"), 0.0, f64::INFINITY))
                        .collect();
                    let zr = p.add_var(format!("{tag}/zr"), 0.0, f64::INFINITY);
                    bigm_rows(p, sigma, &u, w, q_val, 0);
                    let mut flow = AffineExpr::constant(0.0);
                    for (&l, &uj) in lambdas.iter().zip(&u) {
                        flow = flow.plus_term(uj, l);
                    }
                    p.add_soc(
                        vec![
                            AffineExpr::term(rho, 2.0),
                            flow.scaled(2.0),
                            base.clone().plus_term(t, -1.0),
                        ],
                        base.plus_term(t, 1.0),
                        format!("{tag}/wait"),
                    );
                    sigma_lift(p, spec, AffineExpr::constant(1.0), zr, mu, sigma, 0)?;
                }
            }
            p.add_lin(
                AffineExpr::var(t).plus_term(rho, 1.0).minus(z),
                Rel::Le,
                format!("{tag}/bound"),
            );
            Ok(())
        }
    }
}

/// Constrain the per-customer expected time in system: `WT_I <= z`, via the
/// decomposition
/// `(b+1)/(2(mu-lambda)) + a lambda/(2(1-rho)) + (1-b)/(2 mu) <= z`
/// which requires scale variance with `0 <= b <= 1`. Continuous mode needs
/// `a = 0` (then `z` may be any expression; the middle term vanishes).
pub fn convexify_individual_wt(
    p: &mut ConeProgram,
    mode: &WtMode,
    variance: &WtVariance,
    mu: VarId,
    z: &AffineExpr,
    tag: &str,
) -> Result<(), FormulationError> {
    let (a, b) = match variance {
        WtVariance::Scale { a, b } => (*a, *b),
        WtVariance::Full(spec) => {
            if spec.order() > 1 {
                return Err(FormulationError::NeedsAffine(0, spec.order()));
            }
            let d0 = spec.deltas[0];
            let d1 = spec.deltas.get(1).copied().unwrap_or(0.0);
            (d0 * d0, d1 * d1)
        }
    };
    if !(0.0..=1.0).contains(&b) {
        return Err(FormulationError::BadScaleTerm(b));
    }
    let lambda_expr = match mode {
        WtMode::Continuous { lambda } => {
            if a > 0.0 {
                return Err(FormulationError::ContinuousMode("a = 0"));
            }
            AffineExpr::var(*lambda)
        }
        WtMode::BinarySelection { lambdas, w } => {
            let mut agg = AffineExpr::constant(0.0);
            for (&l, &wj) in lambdas.iter().zip(w) {
                agg = agg.plus_term(wj, l);
            }
            agg
        }
    };

    let mut total = AffineExpr::constant(0.0);
    // (b+1)/2 <= q1 (mu - lambda).
    let q1 = p.add_var(format!("{tag}/q1"), 0.0, f64::INFINITY);
    p.add_hyperbolic(
        AffineExpr::constant(((b + 1.0) / 2.0).sqrt()),
        AffineExpr::var(q1),
        AffineExpr::var(mu).minus(&lambda_expr),
        &format!("{tag}/congest"),
    )?;
    total = total.plus_term(q1, 1.0);

    if a > 0.0 {
        // Binary mode only (checked above): a lambda / (2(1-rho)) <= q2 via
        // sum_j a lambda_j w_j^2 <= 2 q2 (1-rho), with rho from the
        // utilization row.
        let (lambdas, w) = match mode {
            WtMode::BinarySelection { lambdas, w } => (lambdas, w),
            WtMode::Continuous { .. } => unreachable!(),
        };
        let rho = p.add_var(format!("{tag}/rho"), 0.0, f64::INFINITY);
        let q2 = p.add_var(format!("{tag}/q2"), 0.0, f64::INFINITY);
        let mut body: Vec<AffineExpr> = lambdas
            .iter()
            .zip(w)
            .map(|(&l, &wj)| AffineExpr::term(wj, 2.0 * l.sqrt()))
            .collect();
        body.push(AffineExpr::var(rho).minus(&AffineExpr::var(mu)));
        p.add_soc(
            body,
            AffineExpr::var(rho).plus(&AffineExpr::var(mu)),
            format!("{tag}/load"),
        );
        let slack = AffineExpr::constant(1.0).plus_term(rho, -1.0);
        let mut body = Vec::with_capacity(w.len() + 1);
        for (&l, &wj) in lambdas.iter().zip(w) {
            if l > 0.0 {
                body.push(AffineExpr::term(wj, 2.0 * (a * l).sqrt()));
            }
        }
        body.push(AffineExpr::term(q2, 2.0).minus(&slack));
        p.add_soc(
            body,
            AffineExpr::term(q2, 2.0).plus(&slack),
            format!("{tag}/scale"),
        );
        total = total.plus_term(q2, 1.0);
    }

    if b < 1.0 {
        // (1-b)/2 <= q3 mu.
        let q3 = p.add_var(format!("{tag}/q3"), 0.0, f64::INFINITY);
        p.add_hyperbolic(
            AffineExpr::constant(((1.0 - b) / 2.0).sqrt()),
            AffineExpr::var(q3),
            AffineExpr::var(mu),
            &format!("{tag}/service"),
        )?;
        total = total.plus_term(q3, 1.0);
    }

    p.add_lin(total.minus(z), Rel::Le, format!("{tag}/bound"));
    Ok(())
}
