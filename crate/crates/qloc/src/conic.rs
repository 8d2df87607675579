//! Intermediate representation for mixed-integer second-order cone programs.
//!
//! A [`ConeProgram`] holds variables with bounds and integrality flags,
//! linear rows (`expr <= 0`, `expr = 0`, `expr >= 0`), and second-order cone
//! rows `||body||_2 <= head` where every body entry and the head are affine.
//! Rows keep the head separate from the body; the exporter and the standard
//! form conversion do the stacking.
//!
//! Three gadget builders cover the nonlinear pieces the models need:
//! - [`ConeProgram::add_hyperbolic`]: `u^2 <= v w` as
//!   `||(2u, v - w)|| <= v + w` with `v, w >= 0`;
//! - [`ConeProgram::add_power_tower`]: `y^p <= t` as a binary tree of
//!   hyperbolic rows (2^l - 1 of them, l = ceil(log2 p));
//! - [`ConeProgram::add_sqrt_mixed`]: `sum_j a_j y_j^2 + (sum_j b_j y_j)^2
//!   <= r^2` as a single SOC row.
//!
//! [`ConeProgram::evaluate_point`] reports per-row signed residuals so tests
//! and the search can check candidate points against one shared notion of
//! feasibility. Default tolerance is 1e-8.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

/// Default feasibility tolerance for point evaluation.
pub const EVAL_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum ConicError {
    #[error("unknown variable id {0}")]
    UnknownVar(usize),
    #[error("negative quadratic weight a[{0}] = {1}")]
    NegativeWeight(usize, f64),
    #[error("power tower needs power >= 1")]
    ZeroPower,
    #[error("mismatched gadget arity: {0}")]
    Arity(&'static str),
    #[error("constant expression must be nonnegative, got {0}")]
    NegativeConstant(f64),
}

/// Index of a variable inside its program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub integer: bool,
}

/// Affine expression `sum_i coef_i x_i + constant`. Coefficients live in a
/// sorted map so iteration order (and therefore every downstream float
/// computation) is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub terms: BTreeMap<VarId, f64>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        AffineExpr {
            terms: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        Self::term(v, 1.0)
    }

    pub fn term(v: VarId, coef: f64) -> Self {
        let mut terms = BTreeMap::new();
        if coef != 0.0 {
            terms.insert(v, coef);
        }
        AffineExpr {
            terms,
            constant: 0.0,
        }
    }

    pub fn plus(mut self, other: &AffineExpr) -> Self {
        for (v, c) in &other.terms {
            let e = self.terms.entry(*v).or_insert(0.0);
            *e += c;
            if *e == 0.0 {
                self.terms.remove(v);
            }
        }
        self.constant += other.constant;
        self
    }

    pub fn minus(self, other: &AffineExpr) -> Self {
        self.plus(&other.clone().scaled(-1.0))
    }

    pub fn plus_term(mut self, v: VarId, coef: f64) -> Self {
        let e = self.terms.entry(v).or_insert(0.0);
        *e += coef;
        if *e == 0.0 {
            self.terms.remove(&v);
        }
        self
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        if s == 0.0 {
            return AffineExpr::constant(0.0);
        }
        for c in self.terms.values_mut() {
            *c *= s;
        }
        self.constant *= s;
        self
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn value(&self, point: &[f64]) -> f64 {
        let mut v = self.constant;
        for (var, c) in &self.terms {
            v += c * point[var.0];
        }
        v
    }
}

/// Sense of a linear row, always against zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    /// `expr <= 0`
    Le,
    /// `expr = 0`
    Eq,
    /// `expr >= 0`
    Ge,
}

#[derive(Debug, Clone)]
pub struct LinRow {
    pub expr: AffineExpr,
    pub rel: Rel,
    pub label: String,
}

/// `||body||_2 <= head`.
#[derive(Debug, Clone)]
pub struct SocRow {
    pub body: Vec<AffineExpr>,
    pub head: AffineExpr,
    pub label: String,
}

#[derive(Debug, Clone, Default)]
pub struct ConeProgram {
    pub vars: Vec<Variable>,
    pub lin_rows: Vec<LinRow>,
    pub soc_rows: Vec<SocRow>,
    /// Minimized.
    pub objective: AffineExpr,
}

impl ConeProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lo: f64, hi: f64) -> VarId {
        self.vars.push(Variable {
            name: name.into(),
            lo,
            hi,
            integer: false,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.vars.push(Variable {
            name: name.into(),
            lo: 0.0,
            hi: 1.0,
            integer: true,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn binary_vars(&self) -> Vec<VarId> {
        (0..self.vars.len())
            .filter(|i| self.vars[*i].integer)
            .map(VarId)
            .collect()
    }

    pub fn add_lin(&mut self, expr: AffineExpr, rel: Rel, label: impl Into<String>) -> usize {
        self.lin_rows.push(LinRow {
            expr,
            rel,
            label: label.into(),
        });
        self.lin_rows.len() - 1
    }

    pub fn add_soc(
        &mut self,
        body: Vec<AffineExpr>,
        head: AffineExpr,
        label: impl Into<String>,
    ) -> usize {
        self.soc_rows.push(SocRow {
            body,
            head,
            label: label.into(),
        });
        self.soc_rows.len() - 1
    }

    /// `u^2 <= v w` with `v, w >= 0`, encoded as `||(2u, v-w)|| <= v+w`.
    /// Returns the SOC row index. Nonnegativity rows are skipped for constant
    /// expressions (which must be nonnegative).
    pub fn add_hyperbolic(
        &mut self,
        u: AffineExpr,
        v: AffineExpr,
        w: AffineExpr,
        label: &str,
    ) -> Result<usize, ConicError> {
        for e in [&v, &w] {
            if e.is_constant() {
                if e.constant < 0.0 {
                    return Err(ConicError::NegativeConstant(e.constant));
                }
            } else {
                self.add_lin(
                    e.clone().scaled(-1.0),
                    Rel::Le,
                    format!("{label}/nonneg"),
                );
            }
        }
        let body = vec![u.scaled(2.0), v.clone().minus(&w)];
        let head = v.plus(&w);
        Ok(self.add_soc(body, head, label.to_string()))
    }

    /// `y^power <= t` for nonnegative `y`, `t`. `power = 1` is a single
    /// linear row; otherwise a balanced tree of `2^l - 1` hyperbolic rows
    /// with `l = ceil(log2 power)` realizes
    /// `y^{2^l} <= y^{2^l - power} * t * 1^{power-1}`.
    pub fn add_power_tower(
        &mut self,
        y: VarId,
        t: VarId,
        power: u32,
    ) -> Result<(), ConicError> {
        self.check_var(y)?;
        self.check_var(t)?;
        if power == 0 {
            return Err(ConicError::ZeroPower);
        }
        let yname = self.vars[y.0].name.clone();
        if power == 1 {
            self.add_lin(
                AffineExpr::var(y).minus(&AffineExpr::var(t)),
                Rel::Le,
                format!("pow/{yname}/1"),
            );
            return Ok(());
        }
        let mut l = 0u32;
        while (1u64 << l) < power as u64 {
            l += 1;
        }
        let copies = (1u64 << l) as usize - power as usize;
        let mut level: Vec<AffineExpr> = Vec::with_capacity(1 << l);
        for _ in 0..copies {
            level.push(AffineExpr::var(y));
        }
        level.push(AffineExpr::var(t));
        while level.len() < (1 << l) {
            level.push(AffineExpr::constant(1.0));
        }
        let mut depth = 0usize;
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len() / 2);
            for (i, pair) in level.chunks(2).enumerate() {
                let aux = self.add_var(
                    format!("pow/{yname}/{power}/d{depth}i{i}"),
                    0.0,
                    f64::INFINITY,
                );
                self.add_hyperbolic(
                    AffineExpr::var(aux),
                    pair[0].clone(),
                    pair[1].clone(),
                    &format!("pow/{yname}/{power}/d{depth}i{i}"),
                )?;
                next.push(AffineExpr::var(aux));
            }
            level = next;
            depth += 1;
        }
        self.add_lin(
            AffineExpr::var(y).minus(&level[0]),
            Rel::Le,
            format!("pow/{yname}/{power}/root"),
        );
        Ok(())
    }

    /// `sum_j a_j y_j^2 + (sum_j b_j y_j)^2 <= r^2` as one SOC row with body
    /// `(sqrt(a_j) y_j ..., sum_j b_j y_j)`. The linear-combination entry is
    /// dropped when every `b_j` is zero. `a_j` must be nonnegative.
    pub fn add_sqrt_mixed(
        &mut self,
        a: &[f64],
        b: &[f64],
        ys: &[VarId],
        r: VarId,
        label: &str,
    ) -> Result<usize, ConicError> {
        if a.len() != ys.len() || b.len() != ys.len() {
            return Err(ConicError::Arity("a, b, ys must have equal length"));
        }
        self.check_var(r)?;
        let mut body = Vec::with_capacity(ys.len() + 1);
        for (j, (&aj, y)) in a.iter().zip(ys).enumerate() {
            self.check_var(*y)?;
            if aj < 0.0 {
                return Err(ConicError::NegativeWeight(j, aj));
            }
            if aj > 0.0 {
                body.push(AffineExpr::term(*y, aj.sqrt()));
            }
        }
        if b.iter().any(|&bj| bj != 0.0) {
            let mut lin = AffineExpr::constant(0.0);
            for (&bj, y) in b.iter().zip(ys) {
                lin = lin.plus_term(*y, bj);
            }
            body.push(lin);
        }
        Ok(self.add_soc(body, AffineExpr::var(r), label.to_string()))
    }

    fn check_var(&self, v: VarId) -> Result<(), ConicError> {
        if v.0 >= self.vars.len() {
            return Err(ConicError::UnknownVar(v.0));
        }
        Ok(())
    }

    /// Evaluate `point` (indexed by variable id) against every row, bound,
    /// and integrality flag.
    pub fn evaluate_point(&self, point: &[f64]) -> PointReport {
        assert_eq!(point.len(), self.vars.len(), "point length mismatch");
        let mut rows = Vec::with_capacity(self.lin_rows.len() + self.soc_rows.len());
        for (i, row) in self.lin_rows.iter().enumerate() {
            let v = row.expr.value(point);
            let (residual, violation) = match row.rel {
                Rel::Le => (v, v.max(0.0)),
                Rel::Eq => (v, v.abs()),
                Rel::Ge => (-v, (-v).max(0.0)),
            };
            rows.push(RowResidual {
                kind: RowKind::Linear,
                index: i,
                residual,
                violation,
            });
        }
        for (i, row) in self.soc_rows.iter().enumerate() {
            let norm = row
                .body
                .iter()
                .map(|e| {
                    let x = e.value(point);
                    x * x
                })
                .sum::<f64>()
                .sqrt();
            let residual = norm - row.head.value(point);
            rows.push(RowResidual {
                kind: RowKind::Soc,
                index: i,
                residual,
                violation: residual.max(0.0),
            });
        }
        let mut bound_violation: f64 = 0.0;
        let mut integrality: f64 = 0.0;
        for (i, var) in self.vars.iter().enumerate() {
            let x = point[i];
            bound_violation = bound_violation.max(var.lo - x).max(x - var.hi);
            if var.integer {
                integrality = integrality.max((x - x.round()).abs());
            }
        }
        PointReport {
            rows,
            bound_violation: bound_violation.max(0.0),
            integrality_violation: integrality,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Linear,
    Soc,
}

#[derive(Debug, Clone)]
pub struct RowResidual {
    pub kind: RowKind,
    pub index: usize,
    /// Signed slack: positive means violated for inequality rows.
    pub residual: f64,
    /// Nonnegative infeasibility amount.
    pub violation: f64,
}

#[derive(Debug, Clone)]
pub struct PointReport {
    pub rows: Vec<RowResidual>,
    pub bound_violation: f64,
    pub integrality_violation: f64,
}

impl PointReport {
    /// Largest constraint or bound violation, ignoring integrality.
    pub fn max_violation(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.violation)
            .fold(self.bound_violation, f64::max)
    }

    pub fn feasible(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }
}

/// Values for the auxiliary variables [`ConeProgram::add_power_tower`]
/// creates, in creation order, that satisfy every tower row at the point
/// `(y, t)` whenever `y^power <= t` and `y, t >= 0`. Each internal node takes
/// the geometric mean of its children, which makes the hyperbolic rows tight
/// and leaves the root row `y <= root` with slack `t - y^power` spread
/// through the tree.
pub fn power_tower_witness(y: f64, t: f64, power: u32) -> Vec<f64> {
    assert!(power >= 1);
    if power == 1 {
        return Vec::new();
    }
    let mut l = 0u32;
    while (1u64 << l) < power as u64 {
        l += 1;
    }
    let copies = (1u64 << l) as usize - power as usize;
    let mut level: Vec<f64> = Vec::with_capacity(1 << l);
    level.extend(std::iter::repeat(y).take(copies));
    level.push(t);
    level.resize(1 << l, 1.0);
    let mut out = Vec::new();
    while level.len() > 1 {
        let next: Vec<f64> = level.chunks(2).map(|p| (p[0] * p[1]).sqrt()).collect();
        out.extend_from_slice(&next);
        level = next;
    }
    out
}

fn write_bound(out: &mut String, b: f64) {
    if b == f64::INFINITY {
        out.push_str("inf");
    } else if b == f64::NEG_INFINITY {
        out.push_str("-inf");
    } else {
        let _ = write!(out, "{b:?}");
    }
}

/// Serialize the continuous structure of a program to a conic benchmark
/// style text format. Sections in order: VER, OBJSENSE, VAR (count, then one
/// `lo hi` line per variable), INT (flagged variable indices), OBJ (sparse
/// objective), CON (linear rows as header `sense rhs nnz` plus `col coef`
/// triplet lines against rhs), CONE (per SOC row: dimension, then the stacked
/// variable indices, head first).
///
/// SOC rows are stacked: each head/body entry gets a fresh trailing variable
/// tied to its expression by an equality row, and cone blocks reference those
/// stacked indices.
pub fn export_conic(p: &ConeProgram) -> String {
    let n = p.vars.len();
    let stack_base = n;
    let mut stacked_rows: Vec<(AffineExpr, usize)> = Vec::new(); // expr - stackvar = 0
    let mut cones: Vec<Vec<usize>> = Vec::new();
    let mut next = stack_base;
    for row in &p.soc_rows {
        let mut block = Vec::with_capacity(row.body.len() + 1);
        stacked_rows.push((row.head.clone(), next));
        block.push(next);
        next += 1;
        for b in &row.body {
            stacked_rows.push((b.clone(), next));
            block.push(next);
            next += 1;
        }
        cones.push(block);
    }
    let total_vars = next;

    let mut out = String::new();
    out.push_str("VER\n1\nOBJSENSE\nMIN\n");
    let _ = writeln!(out, "VAR\n{total_vars}");
    for v in &p.vars {
        write_bound(&mut out, v.lo);
        out.push(' ');
        write_bound(&mut out, v.hi);
        out.push('\n');
    }
    for _ in n..total_vars {
        out.push_str("-inf inf\n");
    }
    let ints: Vec<usize> = (0..n).filter(|i| p.vars[*i].integer).collect();
    let _ = writeln!(out, "INT\n{}", ints.len());
    for i in ints {
        let _ = writeln!(out, "{i}");
    }
    let _ = writeln!(
        out,
        "OBJ\n{} {:?}",
        p.objective.terms.len(),
        p.objective.constant
    );
    for (v, c) in &p.objective.terms {
        let _ = writeln!(out, "{} {c:?}", v.0);
    }
    let nrows = p.lin_rows.len() + stacked_rows.len();
    let _ = writeln!(out, "CON\n{nrows}");
    for row in &p.lin_rows {
        let sense = match row.rel {
            Rel::Le => 'L',
            Rel::Eq => 'E',
            Rel::Ge => 'G',
        };
        let _ = writeln!(out, "{sense} {:?} {}", -row.expr.constant, row.expr.terms.len());
        for (v, c) in &row.expr.terms {
            let _ = writeln!(out, "{} {c:?}", v.0);
        }
    }
    for (expr, sv) in &stacked_rows {
        let _ = writeln!(out, "E {:?} {}", -expr.constant, expr.terms.len() + 1);
        for (v, c) in &expr.terms {
            let _ = writeln!(out, "{} {c:?}", v.0);
        }
        let _ = writeln!(out, "{sv} -1.0");
    }
    let _ = writeln!(out, "CONE\n{}", cones.len());
    for block in &cones {
        let _ = writeln!(out, "{}", block.len());
        for idx in block {
            let _ = writeln!(out, "{idx}");
        }
    }
    out
}
