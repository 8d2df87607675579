//! Interior-point engine for continuous second-order cone programs.
//!
//! [`to_standard_form`] converts a [`ConeProgram`] (integrality relaxed,
//! optional variable fixings substituted out) into the conic pair
//!
//! ```text
//! min c'x   s.t.  A x = b,   G x + s = h,   s in K
//! ```
//!
//! where `K` is a product of one nonnegative orthant block (variable bounds
//! and linear inequalities) followed by one second-order cone block per SOC
//! row, each of size `1 + body_len` (head stacked first). Presolve is limited
//! to substituting fixed variables, dropping empty rows, and dropping exact
//! duplicate rows; anything more aggressive interacts badly with the scaled
//! lifting programs built for cut separation.
//!
//! [`solve`] runs a primal-dual path-following method with Nesterov-Todd
//! scaling on the homogeneous self-dual embedding, so infeasibility comes out
//! as a certificate rather than a timeout. The iteration is deterministic:
//! identical inputs produce bit-identical traces.

mod dense;
mod ipm;

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::conic::{AffineExpr, ConeProgram, Rel, VarId};

#[derive(Debug, Error, PartialEq)]
pub enum StdFormError {
    #[error("variable {0} fixed at {1}, outside its bounds [{2}, {3}]")]
    FixingOutOfBounds(usize, f64, f64, f64),
    #[error("variable id {0} out of range")]
    UnknownVar(usize),
}

/// Sparse row-major matrix; each row holds `(column, coefficient)` pairs
/// sorted by column.
#[derive(Debug, Clone, Default)]
pub struct SparseMat {
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMat {
    pub fn new(ncols: usize) -> Self {
        SparseMat {
            ncols,
            rows: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    /// `out = self * x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (r, row) in self.rows.iter().enumerate() {
            let mut v = 0.0;
            for &(c, a) in row {
                v += a * x[c];
            }
            out[r] = v;
        }
    }

    /// `out += scale * self^T * y`
    pub fn mul_t_acc(&self, y: &[f64], scale: f64, out: &mut [f64]) {
        for (r, row) in self.rows.iter().enumerate() {
            let yv = scale * y[r];
            if yv == 0.0 {
                continue;
            }
            for &(c, a) in row {
                out[c] += a * yv;
            }
        }
    }
}

/// Cone layout entry for the slack vector `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeBlock {
    Orthant(usize),
    Soc(usize),
}

/// Where a standard-form column came from.
#[derive(Debug, Clone, Copy)]
pub struct ColOrigin {
    pub var: VarId,
}

#[derive(Debug, Clone)]
pub struct StandardForm {
    pub c: Vec<f64>,
    pub obj_const: f64,
    /// Equality rows `A x = b`.
    pub a: SparseMat,
    pub b: Vec<f64>,
    /// Cone rows `G x + s = h`.
    pub g: SparseMat,
    pub h: Vec<f64>,
    /// Layout of `s`; block sizes sum to `g.nrows()`.
    pub cones: Vec<ConeBlock>,
    /// Column -> original variable.
    pub cols: Vec<ColOrigin>,
    /// Variables substituted out, with their values.
    pub fixed: Vec<(VarId, f64)>,
    /// Variables aliased to an affine image of another: `(var, root, mul,
    /// add)` meaning `var = mul * root + add`. Roots are never aliased.
    pub aliased: Vec<(VarId, VarId, f64, f64)>,
    /// Total variable count of the source program.
    pub source_vars: usize,
    /// Set when presolve proves infeasibility outright.
    pub trivially_infeasible: Option<String>,
}

impl StandardForm {
    pub fn num_cols(&self) -> usize {
        self.c.len()
    }

    /// Scatter a standard-form point back to the source variable space.
    pub fn expand_point(&self, x: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.source_vars];
        for &(v, val) in &self.fixed {
            full[v.0] = val;
        }
        for (col, origin) in self.cols.iter().enumerate() {
            full[origin.var.0] = x[col];
        }
        for &(v, root, mul, add) in &self.aliased {
            full[v.0] = mul * full[root.0] + add;
        }
        full
    }
}

const TRIVIAL_TOL: f64 = 1e-9;

/// Relax integrality, substitute fixings, and stack the program into the
/// conic pair. Errors only on contradictory fixings; infeasibility detected
/// structurally (a constant row that cannot hold) is recorded on the result
/// so the solver can report it as `PrimalInfeasible`.
pub fn to_standard_form(
    p: &ConeProgram,
    fixings: &[(VarId, f64)],
) -> Result<StandardForm, StdFormError> {
    let nv = p.vars.len();
    let mut fixed_val: Vec<Option<f64>> = vec![None; nv];
    for &(v, val) in fixings {
        if v.0 >= nv {
            return Err(StdFormError::UnknownVar(v.0));
        }
        let var = &p.vars[v.0];
        if val < var.lo - TRIVIAL_TOL || val > var.hi + TRIVIAL_TOL {
            return Err(StdFormError::FixingOutOfBounds(v.0, val, var.lo, var.hi));
        }
        fixed_val[v.0] = Some(val);
    }
    // Bounds that pin a variable act like a fixing.
    for (i, var) in p.vars.iter().enumerate() {
        if fixed_val[i].is_none() && var.lo == var.hi {
            fixed_val[i] = Some(var.lo);
        }
    }

    let mut infeasible: Option<String> = None;
    let note_infeasible = |msg: String, slot: &mut Option<String>| {
        if slot.is_none() {
            *slot = Some(msg);
        }
    };

    // Presolve fixpoint over three reductions, iterated until quiet:
    //  - a row with one live variable tightens that variable's bounds, and a
    //    pinched interval becomes a fixing;
    //  - a two-variable equality aliases one variable to an affine image of
    //    the other, removing a column;
    //  - a pair of opposite inequalities is recognized as an equality first.
    // Fixing a selector collapses its whole gadget this way. Without the
    // aliasing, chains like `u <= sigma <= u` sit on a degenerate face whose
    // KKT system is singular and stalls the solver a hair above tolerance.
    let mut lo_w: Vec<f64> = p.vars.iter().map(|v| v.lo).collect();
    let mut hi_w: Vec<f64> = p.vars.iter().map(|v| v.hi).collect();
    let mut alias: Vec<Option<(usize, f64, f64)>> = vec![None; nv];

    fn resolve_alias(alias: &mut [Option<(usize, f64, f64)>], i: usize) -> (usize, f64, f64) {
        let (mut root, mut mul, mut add) = (i, 1.0f64, 0.0f64);
        while let Some((r, m, a)) = alias[root] {
            add += mul * a;
            mul *= m;
            root = r;
        }
        if root != i {
            alias[i] = Some((root, mul, add));
        }
        (root, mul, add)
    }

    /// Reduce an expression to live-root entries (sorted by variable) plus a
    /// constant, folding fixed and aliased variables.
    fn reduce_terms(
        expr: &AffineExpr,
        fixed_val: &[Option<f64>],
        alias: &mut [Option<(usize, f64, f64)>],
    ) -> (Vec<(usize, f64)>, f64) {
        let mut constant = expr.constant;
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (&v, &coef) in &expr.terms {
            if coef == 0.0 {
                continue;
            }
            if let Some(val) = fixed_val[v.0] {
                constant += coef * val;
                continue;
            }
            let (root, m, a) = resolve_alias(alias, v.0);
            if let Some(val) = fixed_val[root] {
                constant += coef * (m * val + a);
                continue;
            }
            constant += coef * a;
            *acc.entry(root).or_insert(0.0) += coef * m;
        }
        let entries: Vec<(usize, f64)> = acc.into_iter().filter(|&(_, c)| c != 0.0).collect();
        (entries, constant)
    }

    /// Contract `ca*ra + cb*rb + constant = 0` (entries sorted, both live)
    /// into the alias `rb = mul*ra + add`, folding rb's interval onto ra.
    /// Declines ratios that would amplify roundoff; those stay as rows.
    fn alias_pair(
        entries: &[(usize, f64)],
        constant: f64,
        alias: &mut [Option<(usize, f64, f64)>],
        lo_w: &mut [f64],
        hi_w: &mut [f64],
    ) -> bool {
        let (ra, ca) = entries[0];
        let (rb, cb) = entries[1];
        let mul = -ca / cb;
        let add = -constant / cb;
        if !mul.is_finite()
            || !add.is_finite()
            || mul == 0.0
            || mul.abs() > 1e8
            || mul.abs() < 1e-8
            || add.abs() > 1e12
        {
            return false;
        }
        let (mut map_lo, mut map_hi) = ((lo_w[rb] - add) / mul, (hi_w[rb] - add) / mul);
        if mul < 0.0 {
            std::mem::swap(&mut map_lo, &mut map_hi);
        }
        alias[rb] = Some((ra, mul, add));
        if map_lo > lo_w[ra] {
            lo_w[ra] = map_lo;
        }
        if map_hi < hi_w[ra] {
            hi_w[ra] = map_hi;
        }
        true
    }

    let norm0 = |v: f64| if v == 0.0 { 0.0 } else { v };
    loop {
        let mut changed = false;
        // Inequalities seen this pass, normalized to `e <= 0`, keyed for
        // opposite-pair lookup.
        let mut ineqs: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        let mut by_key: HashMap<(Vec<(usize, u64)>, u64), usize> = HashMap::new();

        let fix_at = |vi: usize,
                          target: f64,
                          label: &str,
                          lo_w: &mut [f64],
                          hi_w: &mut [f64],
                          fixed_val: &mut [Option<f64>],
                          infeasible: &mut Option<String>|
         -> bool {
            if fixed_val[vi].is_some() {
                return false;
            }
            if target < lo_w[vi] - TRIVIAL_TOL || target > hi_w[vi] + TRIVIAL_TOL {
                note_infeasible(
                    format!(
                        "row {}: forces variable {} to {}, outside [{}, {}]",
                        label, vi, target, lo_w[vi], hi_w[vi]
                    ),
                    infeasible,
                );
            }
            fixed_val[vi] = Some(target);
            true
        };

        for row in &p.lin_rows {
            let (entries, constant) = reduce_terms(&row.expr, &fixed_val, &mut alias);
            match row.rel {
                Rel::Eq => match entries.len() {
                    0 => {}
                    1 => {
                        let (vi, coef) = entries[0];
                        changed |= fix_at(
                            vi,
                            -constant / coef,
                            &row.label,
                            &mut lo_w,
                            &mut hi_w,
                            &mut fixed_val,
                            &mut infeasible,
                        );
                    }
                    2 => {
                        changed |= alias_pair(
                            &entries,
                            constant,
                            &mut alias,
                            &mut lo_w,
                            &mut hi_w,
                        );
                    }
                    _ => {}
                },
                Rel::Le | Rel::Ge => {
                    let sign = if row.rel == Rel::Le { 1.0 } else { -1.0 };
                    let entries: Vec<(usize, f64)> =
                        entries.into_iter().map(|(v, c)| (v, sign * c)).collect();
                    let constant = sign * constant;
                    match entries.len() {
                        0 => {}
                        1 => {
                            let (vi, coef) = entries[0];
                            let target = -constant / coef;
                            if coef > 0.0 {
                                if target < hi_w[vi] {
                                    hi_w[vi] = target;
                                }
                            } else if target > lo_w[vi] {
                                lo_w[vi] = target;
                            }
                        }
                        _ => {
                            // Match `e <= 0` against an earlier `-e <= 0`.
                            let own_key = (
                                entries
                                    .iter()
                                    .map(|&(v, c)| (v, norm0(c).to_bits()))
                                    .collect::<Vec<_>>(),
                                norm0(constant).to_bits(),
                            );
                            let neg_key = (
                                entries
                                    .iter()
                                    .map(|&(v, c)| (v, norm0(-c).to_bits()))
                                    .collect::<Vec<_>>(),
                                norm0(-constant).to_bits(),
                            );
                            if by_key.contains_key(&neg_key) && entries.len() == 2 {
                                changed |= alias_pair(
                                    &entries,
                                    constant,
                                    &mut alias,
                                    &mut lo_w,
                                    &mut hi_w,
                                );
                            } else {
                                let idx = ineqs.len();
                                ineqs.push((entries, constant));
                                by_key.entry(own_key).or_insert(idx);
                            }
                        }
                    }
                }
            }
        }
        for i in 0..nv {
            if fixed_val[i].is_some() || alias[i].is_some() {
                continue;
            }
            if lo_w[i] > hi_w[i] + TRIVIAL_TOL {
                note_infeasible(
                    format!(
                        "variable {}: tightened bounds are empty [{}, {}]",
                        i, lo_w[i], hi_w[i]
                    ),
                    &mut infeasible,
                );
                let anchor = if lo_w[i].is_finite() {
                    lo_w[i]
                } else if hi_w[i].is_finite() {
                    hi_w[i]
                } else {
                    0.0
                };
                fixed_val[i] = Some(anchor);
                changed = true;
            } else if lo_w[i] >= hi_w[i] {
                fixed_val[i] = Some(lo_w[i]);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    // Flatten alias chains so reduction below is single-hop.
    for i in 0..nv {
        resolve_alias(&mut alias, i);
    }
    let alias = alias;

    let mut cols = Vec::new();
    let mut col_of: Vec<Option<usize>> = vec![None; nv];
    for i in 0..nv {
        if fixed_val[i].is_none() && alias[i].is_none() {
            col_of[i] = Some(cols.len());
            cols.push(ColOrigin { var: VarId(i) });
        }
    }
    let n = cols.len();

    // expr -> (sparse cols, constant)
    let reduce = |expr: &AffineExpr| -> (Vec<(usize, f64)>, f64) {
        let mut constant = expr.constant;
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (&v, &coef) in &expr.terms {
            if coef == 0.0 {
                continue;
            }
            if let Some(val) = fixed_val[v.0] {
                constant += coef * val;
                continue;
            }
            let (root, m, a) = match alias[v.0] {
                Some(t) => t,
                None => (v.0, 1.0, 0.0),
            };
            if let Some(val) = fixed_val[root] {
                constant += coef * (m * val + a);
                continue;
            }
            constant += coef * a;
            *acc.entry(col_of[root].unwrap()).or_insert(0.0) += coef * m;
        }
        let entries: Vec<(usize, f64)> = acc.into_iter().filter(|&(_, c)| c != 0.0).collect();
        (entries, constant)
    };

    let mut g = SparseMat::new(n);
    let mut h = Vec::new();
    let mut a = SparseMat::new(n);
    let mut b = Vec::new();
    let mut seen_g: HashMap<(Vec<(usize, u64)>, u64), ()> = HashMap::new();
    let mut seen_a: HashMap<(Vec<(usize, u64)>, u64), ()> = HashMap::new();
    let signature = |entries: &[(usize, f64)], rhs: f64| {
        (
            entries
                .iter()
                .map(|&(c, v)| (c, v.to_bits()))
                .collect::<Vec<_>>(),
            rhs.to_bits(),
        )
    };

    // Bound rows, in variable order: lower then upper, from the tightened
    // intervals (live variables always have lo < hi here).
    for i in 0..nv {
        let Some(col) = col_of[i] else { continue };
        if lo_w[i].is_finite() {
            g.rows.push(vec![(col, -1.0)]);
            h.push(-lo_w[i]);
        }
        if hi_w[i].is_finite() {
            g.rows.push(vec![(col, 1.0)]);
            h.push(hi_w[i]);
        }
    }
    for (row, &rhs) in g.rows.iter().zip(&h) {
        seen_g.insert(signature(row, rhs), ());
    }

    // Linear rows. Inequalities are collected first: a pair that reads
    // `e <= 0` and `-e <= 0` is one equality, and emitting it as such keeps
    // its multiplier bounded.
    let mut pending: Vec<Option<(Vec<(usize, f64)>, f64)>> = Vec::new();
    for row in &p.lin_rows {
        let (entries, constant) = reduce(&row.expr);
        match row.rel {
            Rel::Eq => {
                if entries.is_empty() {
                    if constant.abs() > TRIVIAL_TOL {
                        note_infeasible(
                            format!("row {}: constant {} != 0", row.label, constant),
                            &mut infeasible,
                        );
                    }
                    continue;
                }
                let rhs = -constant;
                if seen_a.insert(signature(&entries, rhs), ()).is_none() {
                    a.rows.push(entries);
                    b.push(rhs);
                }
            }
            Rel::Le | Rel::Ge => {
                let sign = if row.rel == Rel::Le { 1.0 } else { -1.0 };
                let entries: Vec<(usize, f64)> =
                    entries.into_iter().map(|(c, v)| (c, sign * v)).collect();
                let constant = sign * constant;
                if entries.is_empty() {
                    if constant > TRIVIAL_TOL {
                        note_infeasible(
                            format!("row {}: constant {} > 0", row.label, constant),
                            &mut infeasible,
                        );
                    }
                    continue;
                }
                pending.push(Some((entries, -constant)));
            }
        }
    }
    let norm0 = |v: f64| if v == 0.0 { 0.0 } else { v };
    let negated = |entries: &[(usize, f64)], rhs: f64| {
        (
            entries
                .iter()
                .map(|&(c, v)| (c, norm0(-v).to_bits()))
                .collect::<Vec<_>>(),
            norm0(-rhs).to_bits(),
        )
    };
    let mut neg_index: HashMap<(Vec<(usize, u64)>, u64), usize> = HashMap::new();
    for (idx, slot) in pending.iter().enumerate() {
        let (entries, rhs) = slot.as_ref().unwrap();
        neg_index.entry(negated(entries, *rhs)).or_insert(idx);
    }
    for idx in 0..pending.len() {
        let Some((entries, rhs)) = pending[idx].clone() else {
            continue;
        };
        let key = (
            entries
                .iter()
                .map(|&(c, v)| (c, norm0(v).to_bits()))
                .collect::<Vec<_>>(),
            norm0(rhs).to_bits(),
        );
        let partner = neg_index.get(&key).copied().filter(|&j| j > idx);
        if let Some(j) = partner {
            if pending[j].is_some() {
                pending[j] = None;
                pending[idx] = None;
                if seen_a.insert(signature(&entries, rhs), ()).is_none() {
                    a.rows.push(entries);
                    b.push(rhs);
                }
                continue;
            }
        }
    }
    for slot in pending {
        let Some((entries, rhs)) = slot else { continue };
        if seen_g.insert(signature(&entries, rhs), ()).is_none() {
            g.rows.push(entries);
            h.push(rhs);
        }
    }
    // SOC rows, stacked head-first: s_block = (head(x), body(x)) in SOC.
    // Body coordinates that reduce to the constant zero are dropped: they
    // pin the block to a boundary face, which kills strict complementarity
    // and stalls the interior point late in the run. A block whose body
    // drops entirely degenerates to `head >= 0` and joins the orthant.
    let neg = |entries: Vec<(usize, f64)>| -> Vec<(usize, f64)> {
        entries.into_iter().map(|(c, v)| (c, -v)).collect()
    };
    let mut soc_out: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut soc_dims: Vec<usize> = Vec::new();
    for row in &p.soc_rows {
        let (head_entries, head_const) = reduce(&row.head);
        let bodies: Vec<(Vec<(usize, f64)>, f64)> = row.body.iter().map(&reduce).collect();
        let all_const = head_entries.is_empty() && bodies.iter().all(|(e, _)| e.is_empty());
        if all_const {
            let norm = bodies
                .iter()
                .map(|(_, c)| c * c)
                .sum::<f64>()
                .sqrt();
            if norm > head_const + TRIVIAL_TOL {
                note_infeasible(
                    format!("soc row {}: ||{norm}|| > {head_const}", row.label),
                    &mut infeasible,
                );
            }
            continue;
        }
        let kept: Vec<(Vec<(usize, f64)>, f64)> = bodies
            .into_iter()
            .filter(|(e, c)| !(e.is_empty() && *c == 0.0))
            .collect();
        if kept.is_empty() {
            let entries = neg(head_entries);
            if seen_g.insert(signature(&entries, head_const), ()).is_none() {
                g.rows.push(entries);
                h.push(head_const);
            }
            continue;
        }
        soc_dims.push(kept.len() + 1);
        soc_out.push((neg(head_entries), head_const));
        for (entries, constant) in kept {
            soc_out.push((neg(entries), constant));
        }
    }
    let orthant_len = g.nrows();
    let mut cones = Vec::new();
    if orthant_len > 0 {
        cones.push(ConeBlock::Orthant(orthant_len));
    }
    for (entries, rhs) in soc_out {
        g.rows.push(entries);
        h.push(rhs);
    }
    for d in soc_dims {
        cones.push(ConeBlock::Soc(d));
    }

    let (c, obj_const) = {
        let (entries, constant) = reduce(&p.objective);
        let mut c = vec![0.0; n];
        for (col, v) in entries {
            c[col] += v;
        }
        (c, constant)
    };

    let fixed: Vec<(VarId, f64)> = fixed_val
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|val| (VarId(i), val)))
        .collect();
    let aliased: Vec<(VarId, VarId, f64, f64)> = alias
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.map(|(r, m, a)| (VarId(i), VarId(r), m, a)))
        .collect();

    Ok(StandardForm {
        c,
        obj_const,
        a,
        b,
        g,
        h,
        cones,
        cols,
        fixed,
        aliased,
        source_vars: nv,
        trivially_infeasible: infeasible,
    })
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Termination tolerance on residuals and relative gap.
    pub tol: f64,
    pub max_iter: usize,
    /// Add Mehrotra's second-order correction to the combined step.
    pub mehrotra: bool,
    /// Record per-iteration diagnostics.
    pub keep_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 200,
            mehrotra: true,
            keep_trace: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    IterationLimit,
    NumericalFailure,
}

/// Infeasibility certificates, scaled so the defining linear functional
/// equals -1.
#[derive(Debug, Clone)]
pub enum Certificate {
    /// `A'y + G'z ~ 0`, `z in K`, `b'y + h'z = -1`.
    PrimalInfeasible { y: Vec<f64>, z: Vec<f64> },
    /// `A x ~ 0`, `G x + s ~ 0` for some `s in K`, `c'x = -1`.
    DualInfeasible { x: Vec<f64> },
}

#[derive(Debug, Clone, Copy)]
pub struct IterTrace {
    pub mu: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub step: f64,
    pub tau: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub status: SolverStatus,
    /// Point in the source program's variable space (fixings included).
    /// Meaningful for `Optimal` and best-effort for `IterationLimit`.
    pub x: Vec<f64>,
    /// `c'x` plus the objective constant.
    pub objective: f64,
    pub eq_duals: Vec<f64>,
    pub cone_duals: Vec<f64>,
    pub certificate: Option<Certificate>,
    pub iterations: usize,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Worst of the scaled KKT measures at the returned point:
    /// `max(primal res, dual res, min(abs gap, rel gap))`. Lets callers
    /// accept a near-converged point under a looser threshold than `tol`.
    pub composite_error: f64,
    pub trace: Vec<IterTrace>,
}

/// Solve the continuous conic pair. Deterministic; see module docs.
pub fn solve(sf: &StandardForm, opts: &SolverOptions) -> SolverResult {
    ipm::solve(sf, opts)
}

/// Convenience: relax-and-solve a program with fixings in one call.
pub fn solve_program(
    p: &ConeProgram,
    fixings: &[(VarId, f64)],
    opts: &SolverOptions,
) -> Result<SolverResult, StdFormError> {
    let sf = to_standard_form(p, fixings)?;
    Ok(solve(&sf, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{AffineExpr, ConeProgram};

    #[test]
    fn standard_form_counts() {
        let mut p = ConeProgram::new();
        let x = p.add_var("x", 0.0, 1.0);
        let y = p.add_var("y", 0.0, f64::INFINITY);
        let t = p.add_var("t", 0.0, f64::INFINITY);
        // Three terms so the row survives presolve as a genuine equality.
        p.add_lin(
            AffineExpr::var(x)
                .plus(&AffineExpr::var(y))
                .plus(&AffineExpr::term(t, 0.25))
                .plus_const(-1.0),
            Rel::Eq,
            "sum",
        );
        p.add_soc(
            vec![AffineExpr::var(x), AffineExpr::var(y), AffineExpr::constant(0.5)],
            AffineExpr::var(t),
            "ball",
        );
        let sf = to_standard_form(&p, &[]).unwrap();
        // Bounds: x lower+upper, y lower, t lower -> 4 orthant rows.
        assert_eq!(sf.cones[0], ConeBlock::Orthant(4));
        // Body length 3 -> one cone block of size 4 (head + body).
        assert_eq!(sf.cones[1], ConeBlock::Soc(4));
        assert_eq!(sf.g.nrows(), 8);
        assert_eq!(sf.a.nrows(), 1);
        assert_eq!(sf.num_cols(), 3);
    }

    #[test]
    fn presolve_aliases_two_var_equalities() {
        let mut p = ConeProgram::new();
        let x = p.add_var("x", 0.0, 1.0);
        let y = p.add_var("y", 0.0, f64::INFINITY);
        p.add_lin(
            AffineExpr::var(x).plus(&AffineExpr::var(y)).plus_const(-1.0),
            Rel::Eq,
            "sum",
        );
        p.objective = AffineExpr::term(x, 3.0).plus(&AffineExpr::var(y));
        let sf = to_standard_form(&p, &[]).unwrap();
        assert_eq!(sf.num_cols(), 1);
        assert_eq!(sf.a.nrows(), 0);
        assert_eq!(sf.aliased.len(), 1);
        let res = solve(&sf, &SolverOptions::default());
        assert_eq!(res.status, SolverStatus::Optimal);
        // min 3x + y = min 2x + 1 over x in [0,1].
        assert!((res.objective - 1.0).abs() < 1e-7);
        assert!(res.x[x.0].abs() < 1e-6);
        assert!((res.x[y.0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn presolve_folds_opposite_inequalities_into_an_alias() {
        let mut p = ConeProgram::new();
        let u = p.add_var("u", 0.0, f64::INFINITY);
        let w = p.add_var("w", 2.0, f64::INFINITY);
        let e = AffineExpr::var(u).minus(&AffineExpr::var(w));
        p.add_lin(e.clone(), Rel::Le, "cap");
        p.add_lin(e, Rel::Ge, "floor");
        p.objective = AffineExpr::var(u).plus(&AffineExpr::var(w));
        let sf = to_standard_form(&p, &[]).unwrap();
        assert_eq!(sf.num_cols(), 1);
        assert_eq!(sf.aliased.len(), 1);
        let res = solve(&sf, &SolverOptions::default());
        assert_eq!(res.status, SolverStatus::Optimal);
        // u tied to w, both floored at 2.
        assert!((res.objective - 4.0).abs() < 1e-6);
        assert!((res.x[u.0] - 2.0).abs() < 1e-6);
        assert!((res.x[w.0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn presolve_singleton_fixings_cascade() {
        let mut p = ConeProgram::new();
        let x = p.add_var("x", 0.0, 1.0);
        let y = p.add_var("y", 0.0, 5.0);
        let z = p.add_var("z", 1.0, 10.0);
        // x <= 0 pins x; then y <= 3x collapses to y <= 0 and pins y.
        p.add_lin(AffineExpr::var(x), Rel::Le, "shut");
        p.add_lin(
            AffineExpr::var(y).minus(&AffineExpr::term(x, 3.0)),
            Rel::Le,
            "link",
        );
        p.objective = AffineExpr::var(x)
            .plus(&AffineExpr::var(y))
            .plus(&AffineExpr::var(z));
        let sf = to_standard_form(&p, &[]).unwrap();
        assert_eq!(sf.num_cols(), 1);
        assert!(sf.fixed.contains(&(x, 0.0)));
        assert!(sf.fixed.contains(&(y, 0.0)));
        let res = solve(&sf, &SolverOptions::default());
        assert_eq!(res.status, SolverStatus::Optimal);
        assert!((res.objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn soc_bodies_drop_constant_zero_coordinates() {
        let mut p = ConeProgram::new();
        let t = p.add_var("t", 0.0, f64::INFINITY);
        let x = p.add_var("x", -5.0, 5.0);
        let gate = p.add_var("gate", 0.0, 1.0);
        p.add_soc(
            vec![AffineExpr::var(x), AffineExpr::var(gate)],
            AffineExpr::var(t),
            "ball",
        );
        p.add_soc(
            vec![AffineExpr::var(gate)],
            AffineExpr::var(t),
            "gate_only",
        );
        let sf = to_standard_form(&p, &[(gate, 0.0)]).unwrap();
        // First block loses the gate coordinate; the second degenerates to
        // t >= 0 and joins the orthant (already present as t's bound row).
        let socs: Vec<_> = sf
            .cones
            .iter()
            .filter(|b| matches!(b, ConeBlock::Soc(_)))
            .collect();
        assert_eq!(socs, vec![&ConeBlock::Soc(2)]);
    }

    #[test]
    fn fixings_substitute_and_validate() {
        let mut p = ConeProgram::new();
        let x = p.add_binary("x");
        let y = p.add_var("y", 0.0, 10.0);
        p.add_lin(
            AffineExpr::var(y).minus(&AffineExpr::term(x, 3.0)),
            Rel::Le,
            "link",
        );
        let sf = to_standard_form(&p, &[(x, 1.0)]).unwrap();
        assert_eq!(sf.num_cols(), 1);
        assert_eq!(sf.fixed, vec![(x, 1.0)]);
        // y - 3 <= 0 with rhs 3.
        assert!(sf.h.contains(&3.0));
        assert!(matches!(
            to_standard_form(&p, &[(x, 2.0)]),
            Err(StdFormError::FixingOutOfBounds(..))
        ));
    }

    #[test]
    fn constant_row_infeasibility_detected() {
        let mut p = ConeProgram::new();
        let x = p.add_binary("x");
        // x >= 0.5 with x fixed to 0 cannot hold.
        p.add_lin(AffineExpr::var(x).plus_const(-0.5), Rel::Ge, "half");
        let sf = to_standard_form(&p, &[(x, 0.0)]).unwrap();
        assert!(sf.trivially_infeasible.is_some());
    }

    #[test]
    fn duplicate_rows_dropped() {
        let mut p = ConeProgram::new();
        let x = p.add_var("x", 0.0, f64::INFINITY);
        for _ in 0..3 {
            p.add_lin(AffineExpr::var(x).plus_const(-2.0), Rel::Le, "dup");
        }
        let sf = to_standard_form(&p, &[]).unwrap();
        // One bound row + one kept copy.
        assert_eq!(sf.g.nrows(), 2);
    }

    fn run(p: &ConeProgram, fixings: &[(VarId, f64)]) -> SolverResult {
        solve_program(p, fixings, &SolverOptions::default()).unwrap()
    }

    #[test]
    fn minimize_over_single_bound() {
        let mut p = ConeProgram::new();
        let x = p.add_var("x", 2.0, f64::INFINITY);
        p.objective = AffineExpr::var(x);
        let r = run(&p, &[]);
        assert_eq!(r.status, SolverStatus::Optimal);
        assert!((r.objective - 2.0).abs() < 1e-7, "obj {}", r.objective);
        assert!((r.x[x.0] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn lp_with_coupling_row() {
        // min x + 2y  s.t.  x + y >= 1, both in [0, 1]; solution (1, 0).
        let mut p = ConeProgram::new();
        let x = p.add_var("x", 0.0, 1.0);
        let y = p.add_var("y", 0.0, 1.0);
        p.objective = AffineExpr::var(x).plus(&AffineExpr::term(y, 2.0));
        p.add_lin(
            AffineExpr::var(x).plus(&AffineExpr::var(y)).plus_const(-1.0),
            Rel::Ge,
            "cover",
        );
        let r = run(&p, &[]);
        assert_eq!(r.status, SolverStatus::Optimal);
        assert!((r.objective - 1.0).abs() < 1e-6);
        assert!((r.x[x.0] - 1.0).abs() < 1e-5);
        assert!(r.x[y.0].abs() < 1e-5);
    }

    #[test]
    fn norm_cone_with_equalities() {
        // min t  s.t.  ||(x, y)|| <= t, x = 1, y = 1. Optimum sqrt(2).
        let mut p = ConeProgram::new();
        let x = p.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        let y = p.add_var("y", f64::NEG_INFINITY, f64::INFINITY);
        let t = p.add_var("t", 0.0, f64::INFINITY);
        p.objective = AffineExpr::var(t);
        p.add_lin(AffineExpr::var(x).plus_const(-1.0), Rel::Eq, "fx");
        p.add_lin(AffineExpr::var(y).plus_const(-1.0), Rel::Eq, "fy");
        p.add_soc(
            vec![AffineExpr::var(x), AffineExpr::var(y)],
            AffineExpr::var(t),
            "norm",
        );
        let r = run(&p, &[]);
        assert_eq!(r.status, SolverStatus::Optimal);
        assert!((r.objective - 2f64.sqrt()).abs() < 1e-7, "obj {}", r.objective);
    }

    #[test]
    fn reciprocal_with_fixing() {
        // z mu >= 1 with mu pinned at 2: minimal z is 0.5.
        let mut p = ConeProgram::new();
        let z = p.add_var("z", 0.0, f64::INFINITY);
        let mu = p.add_var("mu", 0.0, 4.0);
        p.objective = AffineExpr::var(z);
        p.add_hyperbolic(
            AffineExpr::constant(1.0),
            AffineExpr::var(z),
            AffineExpr::var(mu),
            "recip",
        )
        .unwrap();
        let r = run(&p, &[(mu, 2.0)]);
        assert_eq!(r.status, SolverStatus::Optimal);
        assert!((r.x[z.0] - 0.5).abs() < 1e-7);
        assert!((r.x[mu.0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn product_lower_bound() {
        // min u + v  s.t.  u v >= 1, u, v >= 0. Optimum 2 at (1, 1).
        let mut p = ConeProgram::new();
        let u = p.add_var("u", 0.0, f64::INFINITY);
        let v = p.add_var("v", 0.0, f64::INFINITY);
        p.objective = AffineExpr::var(u).plus(&AffineExpr::var(v));
        p.add_hyperbolic(
            AffineExpr::constant(1.0),
            AffineExpr::var(u),
            AffineExpr::var(v),
            "prod",
        )
        .unwrap();
        let r = run(&p, &[]);
        assert_eq!(r.status, SolverStatus::Optimal);
        assert!((r.objective - 2.0).abs() < 1e-6);
    }

    #[test]
    fn contradictory_rows_yield_certificate() {
        let mut p = ConeProgram::new();
        let x = p.add_var("x", 0.0, f64::INFINITY);
        let w = p.add_var("w", 0.0, f64::INFINITY);
        p.objective = AffineExpr::var(x);
        // x + w >= 3 against x + w <= 1: neither row is a singleton nor an
        // exact negation of the other, so presolve leaves the contradiction
        // for the solver to certify.
        p.add_lin(
            AffineExpr::var(x).plus(&AffineExpr::var(w)).plus_const(-3.0),
            Rel::Ge,
            "ge3",
        );
        p.add_lin(
            AffineExpr::var(x).plus(&AffineExpr::var(w)).plus_const(-1.0),
            Rel::Le,
            "le1",
        );
        let sf = to_standard_form(&p, &[]).unwrap();
        assert!(sf.trivially_infeasible.is_none());
        let r = solve(&sf, &SolverOptions::default());
        assert_eq!(r.status, SolverStatus::PrimalInfeasible);
        let Some(Certificate::PrimalInfeasible { y, z }) = &r.certificate else {
            panic!("expected a Farkas certificate");
        };
        // Certificate: z in K*, b'y + h'z = -1, A'y + G'z ~ 0.
        for v in z {
            assert!(*v >= -1e-9);
        }
        let mut lin = vec![0.0; sf.num_cols()];
        sf.a.mul_t_acc(y, 1.0, &mut lin);
        sf.g.mul_t_acc(z, 1.0, &mut lin);
        assert!(lin.iter().all(|v| v.abs() < 1e-6), "A'y+G'z = {lin:?}");
        let mut obj = 0.0;
        for (i, v) in y.iter().enumerate() {
            obj += sf.b[i] * v;
        }
        for (i, v) in z.iter().enumerate() {
            obj += sf.h[i] * v;
        }
        assert!((obj + 1.0).abs() < 1e-6, "b'y + h'z = {obj}");
    }

    #[test]
    fn unbounded_direction_detected() {
        let mut p = ConeProgram::new();
        let x = p.add_var("x", 0.0, f64::INFINITY);
        p.objective = AffineExpr::term(x, -1.0);
        let r = run(&p, &[]);
        assert_eq!(r.status, SolverStatus::DualInfeasible);
        let Some(Certificate::DualInfeasible { x: ray }) = &r.certificate else {
            panic!("expected an unbounded ray");
        };
        assert!((ray[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn presolved_infeasibility_reported() {
        let mut p = ConeProgram::new();
        let x = p.add_binary("x");
        p.add_lin(AffineExpr::var(x).plus_const(-0.5), Rel::Ge, "half");
        let r = solve_program(&p, &[(x, 0.0)], &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolverStatus::PrimalInfeasible);
        assert!(r.certificate.is_none());
    }

    #[test]
    fn fully_fixed_program_is_evaluated() {
        let mut p = ConeProgram::new();
        let x = p.add_var("x", 3.0, 3.0);
        p.objective = AffineExpr::term(x, 2.0).plus_const(1.0);
        let r = run(&p, &[]);
        assert_eq!(r.status, SolverStatus::Optimal);
        assert_eq!(r.objective, 7.0);
        assert_eq!(r.x, vec![3.0]);
    }

    #[test]
    fn equality_only_program() {
        let mut p = ConeProgram::new();
        let x = p.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        p.objective = AffineExpr::var(x);
        p.add_lin(AffineExpr::var(x).plus_const(-3.0), Rel::Eq, "pin");
        let r = run(&p, &[]);
        assert_eq!(r.status, SolverStatus::Optimal);
        assert!((r.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn repeat_solves_are_bit_identical() {
        let mut p = ConeProgram::new();
        let x = p.add_var("x", 0.0, f64::INFINITY);
        let y = p.add_var("y", 0.0, f64::INFINITY);
        let t = p.add_var("t", 0.0, f64::INFINITY);
        p.objective = AffineExpr::var(t).plus(&AffineExpr::term(x, 0.1));
        p.add_lin(
            AffineExpr::var(x).plus(&AffineExpr::term(y, 2.0)).plus_const(-2.0),
            Rel::Ge,
            "mix",
        );
        p.add_soc(
            vec![AffineExpr::var(x), AffineExpr::var(y)],
            AffineExpr::var(t),
            "norm",
        );
        let a = run(&p, &[]);
        let b = run(&p, &[]);
        assert_eq!(a.trace.len(), b.trace.len());
        for (ta, tb) in a.trace.iter().zip(&b.trace) {
            assert_eq!(ta.mu.to_bits(), tb.mu.to_bits());
            assert_eq!(ta.gap.to_bits(), tb.gap.to_bits());
            assert_eq!(ta.step.to_bits(), tb.step.to_bits());
            assert_eq!(ta.tau.to_bits(), tb.tau.to_bits());
        }
        for (xa, xb) in a.x.iter().zip(&b.x) {
            assert_eq!(xa.to_bits(), xb.to_bits());
        }
    }
}
