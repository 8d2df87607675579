//! Relaxation tightening.
//!
//! Two families. The first derives interval bounds on the scaled variance
//! curve `g(mu) = mu^2 v(mu)` and turns them into always-valid rows linking
//! utilization, weighted flow, and the waiting epigraph. The second
//! generates disjunctive projection cuts: project a fractional relaxation
//! point onto the convex hull of the branch disjunction (taken in a lifted
//! space) and cut along the projection direction.

use crate::conic::{AffineExpr, ConeProgram, Rel, VarId};
use crate::formulations::{BuiltModel, FormulationError, FormulationKind};
use crate::instance::{FacilitySpec, Instance};
use crate::queueing::LocationScaleSpec;
use crate::socp::{solve_program, SolverOptions, SolverStatus};

/// Extrema of `g(mu) = mu^2 v(mu)` over an interval of service rates.
/// `lo` is the minimum (an infimum when only approached at infinity), `hi`
/// the maximum (`+inf` when the curve is unbounded above). An empty
/// interval yields the vacuous `(0, +inf)` so every dependent row is
/// skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleCurveBounds {
    pub lo: f64,
    pub hi: f64,
}

/// `g` is a sum of `d_l^2 mu^{2-2l}` terms, hence convex on `mu > 0`: the
/// maximum sits at an endpoint and the minimum at the unique stationary
/// point when one exists inside the interval.
pub fn scale_curve_extrema(spec: &LocationScaleSpec, a: f64, b: f64) -> ScaleCurveBounds {
    if !(a <= b) || a < 0.0 {
        return ScaleCurveBounds { lo: 0.0, hi: f64::INFINITY };
    }
    let d = &spec.deltas;
    let d0 = d.first().copied().unwrap_or(0.0);
    let d1 = d.get(1).copied().unwrap_or(0.0);
    let has_decay = d.iter().skip(2).any(|&v| v > 0.0);
    let val = |mu: f64| -> f64 {
        if mu == 0.0 {
            return if has_decay { f64::INFINITY } else { d1 * d1 };
        }
        if mu.is_infinite() {
            return if d0 > 0.0 { f64::INFINITY } else { d1 * d1 };
        }
        spec.mu2_variance(mu)
    };
    // g'(mu); the constant d1 term drops out.
    let slope = |mu: f64| -> f64 {
        let mut s = 2.0 * d0 * d0 * mu;
        for (l, &dl) in d.iter().enumerate().skip(2) {
            s += (2.0 - 2.0 * l as f64) * dl * dl * mu.powi(1 - 2 * l as i32);
        }
        s
    };
    let hi = val(a).max(val(b));
    let lo = if d0 == 0.0 || !has_decay {
        // Monotone: decreasing when only decay terms, increasing when only
        // the growth term, constant otherwise.
        val(a).min(val(b))
    } else if a > 0.0 && slope(a) >= 0.0 {
        val(a)
    } else if b.is_finite() && slope(b) <= 0.0 {
        val(b)
    } else {
        // Stationary point inside: bracket (doubling out to the right when
        // unbounded) and bisect the nondecreasing slope.
        let mut lo_end = if a > 0.0 { a } else { 1e-12 };
        let mut hi_end = if b.is_finite() {
            b
        } else {
            let mut t = (2.0 * lo_end).max(1.0);
            while slope(t) < 0.0 && t < 1e300 {
                t *= 2.0;
            }
            t
        };
        for _ in 0..200 {
            let mid = 0.5 * (lo_end + hi_end);
            if slope(mid) < 0.0 {
                lo_end = mid;
            } else {
                hi_end = mid;
            }
            if hi_end - lo_end <= 1e-14 * hi_end.max(1.0) {
                break;
            }
        }
        val(0.5 * (lo_end + hi_end))
    };
    ScaleCurveBounds { lo, hi }
}

/// Row multipliers for one facility, `None` when the row is skipped:
/// the utilization row is redundant when the curve can reach zero, and the
/// flow rows need a finite (respectively positive and finite) upper bound.
#[derive(Debug, Clone, Copy)]
pub struct ViCoefficients {
    pub curve: ScaleCurveBounds,
    pub util: Option<f64>,
    pub flow: Option<f64>,
    pub flow_cap: Option<f64>,
}

pub fn vi_coefficients(fac: &FacilitySpec, inst: &Instance) -> ViCoefficients {
    let m_prime = inst.min_lambda().max(fac.rate_min);
    let curve = scale_curve_extrema(&fac.variance, m_prime, fac.rate_max);
    let util = (curve.lo > 0.0 && curve.lo.is_finite())
        .then(|| (2.0 * (1.0 + curve.lo)).sqrt());
    let flow = (curve.hi > 0.0 && curve.hi.is_finite())
        .then(|| (2.0 * (1.0 + curve.hi) / curve.hi).sqrt());
    let flow_cap = curve.hi.is_finite().then(|| curve.hi.sqrt());
    ViCoefficients { curve, util, flow, flow_cap }
}

/// Append the tightening rows to a built model. Validity rests on three
/// facts holding at every feasible binary point: the weighted flow equals
/// `sigma * mu * rho` for an open facility, `g(mu)` lies in the curve
/// bounds whenever the facility serves a zone, and the waiting epigraph row
/// gives `rho^2 + flow^2 <= 2 t (1 - rho)`. Returns the number of rows
/// added. Only the formulations carrying the lifted flow variables qualify.
pub fn add_valid_inequalities(model: &mut BuiltModel) -> Result<usize, FormulationError> {
    if !matches!(
        model.kind,
        FormulationKind::General | FormulationKind::Alternative
    ) {
        return Err(FormulationError::NeedsLiftedFlows);
    }
    let inst = model.inst.clone();
    let mut added = 0usize;
    for (i, fac) in inst.facilities.iter().enumerate() {
        let co = vi_coefficients(fac, &inst);
        let rho = model.rho[i];
        let t_expr = match model.kind {
            FormulationKind::Alternative => {
                AffineExpr::var(model.r[i]).plus(&AffineExpr::var(model.s[i]))
            }
            _ => AffineExpr::var(model.t[i]),
        };
        let mut flow = AffineExpr::constant(0.0);
        for (j, &uij) in model.u[i].iter().enumerate() {
            flow = flow.plus_term(uij, inst.zones[j].lambda);
        }
        let lhs_lo = AffineExpr::constant(1.0)
            .plus_term(rho, -1.0)
            .minus(&t_expr);
        let head = AffineExpr::constant(1.0)
            .plus_term(rho, -1.0)
            .plus(&t_expr);
        if let Some(alpha) = co.util {
            model.program.add_soc(
                vec![AffineExpr::term(rho, alpha), lhs_lo.clone()],
                head.clone(),
                format!("vi_util/{i}"),
            );
            added += 1;
        }
        if let Some(alpha) = co.flow {
            model.program.add_soc(
                vec![flow.clone().scaled(alpha), lhs_lo],
                head,
                format!("vi_flow/{i}"),
            );
            added += 1;
        }
        if let Some(cap) = co.flow_cap {
            model
                .program
                .add_lin(flow.plus_const(-cap), Rel::Le, format!("vi_cap/{i}"));
            added += 1;
        }
    }
    Ok(added)
}

// ---------------------------------------------------------------------------
// Projection cuts
// ---------------------------------------------------------------------------

/// A linear cut `sum coeffs . vars >= rhs` in the model's own variable
/// space, produced from one fractional relaxation point.
#[derive(Debug, Clone)]
pub struct Cut {
    pub coeffs: Vec<(VarId, f64)>,
    pub rhs: f64,
    /// Shortfall of the generating point, equal to the squared projection
    /// distance.
    pub violation: f64,
}

impl Cut {
    pub fn value_at(&self, point: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(v, c)| c * point[v.0]).sum()
    }

    pub fn add_to(&self, p: &mut ConeProgram, label: impl Into<String>) {
        let mut row = AffineExpr::constant(self.rhs);
        for &(v, c) in &self.coeffs {
            row = row.plus_term(v, -c);
        }
        p.add_lin(row, Rel::Le, label);
    }
}

/// Knobs for the root tightening loop.
#[derive(Debug, Clone)]
pub struct CutGenSettings {
    /// Number of binaries per disjunction; 0 disables projection cuts.
    pub branch_size: usize,
    pub use_vi: bool,
    pub max_rounds: usize,
    /// Minimum squared projection distance for a cut to count.
    pub violation_tol: f64,
    /// Candidate disjunctions examined per round.
    pub candidate_cap: usize,
}

impl Default for CutGenSettings {
    fn default() -> Self {
        CutGenSettings {
            branch_size: 1,
            use_vi: false,
            max_rounds: 10,
            violation_tol: 1e-6,
            candidate_cap: 8,
        }
    }
}

/// Fractional binaries at `point`, most fractional first (ties by id).
pub fn fractional_binaries(model: &BuiltModel, point: &[f64], tol: f64) -> Vec<(VarId, f64)> {
    let mut out: Vec<(VarId, f64)> = model
        .program
        .binary_vars()
        .into_iter()
        .map(|v| (v, point[v.0]))
        .filter(|&(_, f)| f.min(1.0 - f) > tol)
        .collect();
    out.sort_by(|a, b| {
        let da = (a.1 - 0.5).abs();
        let db = (b.1 - 0.5).abs();
        da.total_cmp(&db).then(a.0 .0.cmp(&b.0 .0))
    });
    out
}

/// Disjunction candidates: singletons over the most fractional binaries,
/// or consecutive pairs of them (falling back to singletons when fewer
/// than two are fractional).
pub fn candidate_branch_sets(
    model: &BuiltModel,
    point: &[f64],
    branch_size: usize,
    cap: usize,
) -> Vec<Vec<VarId>> {
    let fracs = fractional_binaries(model, point, 1e-6);
    match branch_size {
        0 => Vec::new(),
        2 if fracs.len() >= 2 => fracs
            .windows(2)
            .take(cap)
            .map(|w| vec![w[0].0, w[1].0])
            .collect(),
        _ => fracs.iter().take(cap).map(|&(v, _)| vec![v]).collect(),
    }
}

/// The lifted disjunction program for one branch set, ready to solve.
pub struct ProjectionProgram {
    pub program: ConeProgram,
    /// Convex-combination image of each cut-space variable, parallel to
    /// [`BuiltModel::cut_space`].
    pub aggregate: Vec<VarId>,
    pub weights: Vec<VarId>,
}

/// Rows whose label starts with this prefix get a tiny slack in each leaf:
/// a leaf whose weight tends to zero would otherwise render its scaled
/// capacity row infeasible at machine precision and fail the whole
/// projection solve spuriously.
const LEAF_SLACK_PREFIX: &str = "steady";
const LEAF_SLACK: f64 = 1e-7;

/// Build the projection program: one weighted copy of the whole relaxation
/// per sign pattern of the branch set, the anchored binaries pinned to
/// `pattern * weight`, weights summing to one, and the distance head over
/// the aggregated cut-space image against `zbar`.
pub fn build_projection_program(
    model: &BuiltModel,
    zbar: &[f64],
    branch: &[VarId],
) -> ProjectionProgram {
    assert!(branch.len() <= 8, "disjunction too large");
    let src = &model.program;
    let nv = src.num_vars();
    let leaves = 1usize << branch.len();
    let mut lp = ConeProgram::new();

    let weights: Vec<VarId> = (0..leaves)
        .map(|p| lp.add_var(format!("w{p}"), 0.0, 1.0))
        .collect();
    let mut copies: Vec<Vec<VarId>> = Vec::with_capacity(leaves);
    for (p, &w) in weights.iter().enumerate() {
        let mut leaf = Vec::with_capacity(nv);
        for v in &src.vars {
            // Bounds scale with the leaf weight; only the zero bound stays
            // a plain variable bound, the rest become rows.
            let lo = if v.lo == 0.0 { 0.0 } else { f64::NEG_INFINITY };
            let cv = lp.add_var(format!("{}@{p}", v.name), lo, f64::INFINITY);
            leaf.push(cv);
        }
        for (k, v) in src.vars.iter().enumerate() {
            if v.lo != 0.0 && v.lo.is_finite() {
                lp.add_lin(
                    AffineExpr::term(w, v.lo).plus_term(leaf[k], -1.0),
                    Rel::Le,
                    format!("lo/{}@{p}", v.name),
                );
            }
            if v.hi.is_finite() {
                lp.add_lin(
                    AffineExpr::term(leaf[k], 1.0).plus_term(w, -v.hi),
                    Rel::Le,
                    format!("hi/{}@{p}", v.name),
                );
            }
        }
        copies.push(leaf);
    }

    let remap = |expr: &AffineExpr, leaf: &[VarId], w: VarId| -> AffineExpr {
        let mut out = AffineExpr::constant(0.0);
        for (&v, &c) in &expr.terms {
            out = out.plus_term(leaf[v.0], c);
        }
        if expr.constant != 0.0 {
            out = out.plus_term(w, expr.constant);
        }
        out
    };

    for (p, &w) in weights.iter().enumerate() {
        let leaf = &copies[p];
        for row in &src.lin_rows {
            let mut expr = remap(&row.expr, leaf, w);
            if row.rel == Rel::Le && row.label.starts_with(LEAF_SLACK_PREFIX) {
                expr = expr.plus_term(w, -LEAF_SLACK);
            }
            lp.add_lin(expr, row.rel, format!("{}@{p}", row.label));
        }
        for row in &src.soc_rows {
            let body = row.body.iter().map(|e| remap(e, leaf, w)).collect();
            lp.add_soc(body, remap(&row.head, leaf, w), format!("{}@{p}", row.label));
        }
        for (k, &bv) in branch.iter().enumerate() {
            let bit = ((p >> k) & 1) as f64;
            lp.add_lin(
                AffineExpr::var(leaf[bv.0]).plus_term(w, -bit),
                Rel::Eq,
                format!("anchor{k}@{p}"),
            );
        }
    }

    let mut mix = AffineExpr::constant(-1.0);
    for &w in &weights {
        mix = mix.plus_term(w, 1.0);
    }
    lp.add_lin(mix, Rel::Eq, "mix");

    let cs = model.cut_space();
    let mut aggregate = Vec::with_capacity(cs.len());
    let mut dist_body = Vec::with_capacity(cs.len());
    for &v in &cs {
        let spec = &src.vars[v.0];
        let agg = lp.add_var(format!("agg_{}", spec.name), spec.lo, spec.hi);
        let mut row = AffineExpr::term(agg, -1.0);
        for leaf in &copies {
            row = row.plus_term(leaf[v.0], 1.0);
        }
        lp.add_lin(row, Rel::Eq, format!("agg_{}", spec.name));
        dist_body.push(AffineExpr::var(agg).plus_const(-zbar[v.0]));
        aggregate.push(agg);
    }
    let dist = lp.add_var("dist", 0.0, f64::INFINITY);
    lp.add_soc(dist_body, AffineExpr::var(dist), "dist");
    lp.objective = AffineExpr::var(dist);

    ProjectionProgram { program: lp, aggregate, weights }
}

/// Options for projection solves. Infeasible sign patterns force their
/// leaf weight to zero, which pins every copied cone in that leaf to the
/// origin; the dual set there is degenerate and the interior point method
/// bottoms out a shade above its default tolerance, so these solves run at
/// 1e-7.
pub fn projection_options() -> SolverOptions {
    SolverOptions { tol: 1e-7, ..SolverOptions::default() }
}

/// Project `zbar` onto the disjunction hull. Returns the cut-space image
/// and the distance, or `None` when the projection solve fails.
pub fn project(
    model: &BuiltModel,
    zbar: &[f64],
    branch: &[VarId],
    opts: &SolverOptions,
) -> Option<(Vec<f64>, f64)> {
    let pp = build_projection_program(model, zbar, branch);
    let res = solve_program(&pp.program, &[], opts).ok()?;
    if res.status != SolverStatus::Optimal {
        return None;
    }
    let image: Vec<f64> = pp.aggregate.iter().map(|a| res.x[a.0]).collect();
    let cs = model.cut_space();
    let dist = cs
        .iter()
        .zip(&image)
        .map(|(&v, &iv)| (iv - zbar[v.0]) * (iv - zbar[v.0]))
        .sum::<f64>()
        .sqrt();
    Some((image, dist))
}

/// One projection cut for `zbar`, or `None` when the point projects onto
/// the hull closer than the violation threshold (or the solve fails). The
/// cut direction is the projection residual: every hull point satisfies
/// `d . z >= d . zhat` while `zbar` falls short by exactly `||d||^2`.
pub fn generate_cut(
    model: &BuiltModel,
    zbar: &[f64],
    branch: &[VarId],
    opts: &SolverOptions,
    violation_tol: f64,
) -> Option<Cut> {
    let (image, _) = project(model, zbar, branch, opts)?;
    let cs = model.cut_space();
    let d: Vec<f64> = cs
        .iter()
        .zip(&image)
        .map(|(&v, &iv)| iv - zbar[v.0])
        .collect();
    let violation: f64 = d.iter().map(|v| v * v).sum();
    if violation < violation_tol {
        return None;
    }
    let rhs: f64 = image.iter().zip(&d).map(|(&z, &dv)| z * dv).sum();
    let coeffs: Vec<(VarId, f64)> = cs
        .iter()
        .zip(&d)
        .filter(|&(_, &dv)| dv != 0.0)
        .map(|(&v, &dv)| (v, dv))
        .collect();
    Some(Cut { coeffs, rhs, violation })
}
