//! Primal-dual path-following iteration on the homogeneous self-dual
//! embedding.
//!
//! The embedded system in `(u, y, z, s, tau, kappa)` is
//!
//! ```text
//! A'y + G'z + c tau = 0        s = h tau - G u
//! A u - b tau = 0              kappa = -c'u - b'y - h'z
//! s, z in K,  tau, kappa >= 0
//! ```
//!
//! A solution with `tau > 0` yields an optimal pair after division by `tau`;
//! one with `kappa > 0` yields a primal or dual infeasibility certificate.
//! Each iteration builds the Nesterov-Todd scaling `W` (so `W^{-1} s = W z =
//! lambda`), factors the condensed KKT matrix `G' W^{-2} G`, takes an affine
//! predictor step to pick the centering weight `sigma = (mu_aff/mu)^3`, and
//! then a combined step with step length 0.99 of the distance to the cone
//! boundary. The second-order Mehrotra correction is applied only when
//! `SolverOptions::mehrotra` is set.

use super::dense::{chol_solve, cholesky, SquareMat};
use super::{
    Certificate, ConeBlock, IterTrace, SolverOptions, SolverResult, SolverStatus, StandardForm,
};

/// Static regularization added to the condensed KKT diagonal.
const KKT_REG: f64 = 1e-11;
/// Step-length safeguard toward the cone boundary.
const STEP_FRACTION: f64 = 0.99;

// ---------------------------------------------------------------------------
// Cone arithmetic over the block layout
// ---------------------------------------------------------------------------

fn blocks(cones: &[ConeBlock]) -> impl Iterator<Item = (usize, ConeBlock)> + '_ {
    let mut off = 0usize;
    cones.iter().map(move |b| {
        let at = off;
        off += match b {
            ConeBlock::Orthant(k) => *k,
            ConeBlock::Soc(k) => *k,
        };
        (at, *b)
    })
}

fn cone_dim(cones: &[ConeBlock]) -> usize {
    cones
        .iter()
        .map(|b| match b {
            ConeBlock::Orthant(k) | ConeBlock::Soc(k) => *k,
        })
        .sum()
}

/// Barrier degree: each orthant entry counts 1, each SOC block counts 1.
fn cone_degree(cones: &[ConeBlock]) -> usize {
    cones
        .iter()
        .map(|b| match b {
            ConeBlock::Orthant(k) => *k,
            ConeBlock::Soc(_) => 1,
        })
        .sum()
}

/// Identity element of the cone product.
fn cone_identity(cones: &[ConeBlock], out: &mut [f64]) {
    out.fill(0.0);
    for (off, b) in blocks(cones) {
        match b {
            ConeBlock::Orthant(k) => {
                for v in &mut out[off..off + k] {
                    *v = 1.0;
                }
            }
            ConeBlock::Soc(_) => out[off] = 1.0,
        }
    }
}

/// Smallest interior margin of `v`: min over orthant entries and SOC
/// `v0 - ||v1||`.
fn cone_margin(cones: &[ConeBlock], v: &[f64]) -> f64 {
    let mut m = f64::INFINITY;
    for (off, b) in blocks(cones) {
        match b {
            ConeBlock::Orthant(k) => {
                for &x in &v[off..off + k] {
                    m = m.min(x);
                }
            }
            ConeBlock::Soc(k) => {
                let norm = v[off + 1..off + k].iter().map(|x| x * x).sum::<f64>().sqrt();
                m = m.min(v[off] - norm);
            }
        }
    }
    if m == f64::INFINITY {
        0.0
    } else {
        m
    }
}

/// Shift a candidate into the interior: `v` if already strictly inside,
/// otherwise `v + (1 + alpha) e` where `alpha` is the boundary distance.
fn to_interior(cones: &[ConeBlock], v: &mut [f64]) {
    let alpha = -cone_margin(cones, v);
    if alpha < 0.0 {
        return;
    }
    let mut e = vec![0.0; v.len()];
    cone_identity(cones, &mut e);
    for (x, ev) in v.iter_mut().zip(&e) {
        *x += (1.0 + alpha) * ev;
    }
}

/// Largest `alpha` with `v + alpha dv` still in the cone (can be infinite).
fn max_step(cones: &[ConeBlock], v: &[f64], dv: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (off, b) in blocks(cones) {
        match b {
            ConeBlock::Orthant(k) => {
                for i in off..off + k {
                    if dv[i] < 0.0 {
                        alpha = alpha.min(-v[i] / dv[i]);
                    }
                }
            }
            ConeBlock::Soc(k) => {
                let (v0, d0) = (v[off], dv[off]);
                let v1 = &v[off + 1..off + k];
                let d1 = &dv[off + 1..off + k];
                if d0 < 0.0 {
                    alpha = alpha.min(-v0 / d0);
                }
                let a = d0 * d0 - dot(d1, d1);
                let bq = 2.0 * (v0 * d0 - dot(v1, d1));
                let c = (v0 * v0 - dot(v1, v1)).max(0.0);
                let disc = bq * bq - 4.0 * a * c;
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    for root in quadratic_roots(a, bq, c, sq) {
                        if root > 1e-18 {
                            alpha = alpha.min(root);
                        }
                    }
                }
            }
        }
    }
    alpha
}

/// Positive roots of `a x^2 + b x + c = 0`, numerically stable form.
fn quadratic_roots(a: f64, b: f64, c: f64, sq: f64) -> Vec<f64> {
    if a.abs() < 1e-300 {
        if b < 0.0 {
            return vec![-c / b];
        }
        return vec![];
    }
    let q = -0.5 * (b + b.signum() * sq);
    let mut roots = Vec::with_capacity(2);
    if q != 0.0 {
        roots.push(q / a);
        roots.push(c / q);
    } else {
        roots.push(0.0);
    }
    roots.retain(|r| r.is_finite() && *r > 0.0);
    roots
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

// ---------------------------------------------------------------------------
// Nesterov-Todd scaling
// ---------------------------------------------------------------------------

struct SocScale {
    eta: f64,
    wbar: Vec<f64>,
}

struct Scaling {
    /// Per-entry `sqrt(s/z)` on orthant positions, 0 elsewhere.
    w_orth: Vec<f64>,
    socs: Vec<SocScale>,
    /// `lambda = W z = W^{-1} s`.
    lambda: Vec<f64>,
}

/// `M(wbar) v` for the unit-hyperboloid point `wbar`.
fn boost_apply(wbar: &[f64], v: &[f64], out: &mut [f64]) {
    let w0 = wbar[0];
    let w1 = &wbar[1..];
    let v0 = v[0];
    let v1 = &v[1..];
    let w1v1 = dot(w1, v1);
    out[0] = w0 * v0 + w1v1;
    let coef = v0 + w1v1 / (1.0 + w0);
    for i in 0..v1.len() {
        out[i + 1] = v1[i] + coef * w1[i];
    }
}

impl Scaling {
    fn compute(cones: &[ConeBlock], s: &[f64], z: &[f64]) -> Option<Scaling> {
        let m = s.len();
        let mut w_orth = vec![0.0; m];
        let mut socs = Vec::new();
        let mut lambda = vec![0.0; m];
        for (off, b) in blocks(cones) {
            match b {
                ConeBlock::Orthant(k) => {
                    for i in off..off + k {
                        if s[i] <= 0.0 || z[i] <= 0.0 {
                            return None;
                        }
                        w_orth[i] = (s[i] / z[i]).sqrt();
                        lambda[i] = (s[i] * z[i]).sqrt();
                    }
                }
                ConeBlock::Soc(k) => {
                    let sb = &s[off..off + k];
                    let zb = &z[off..off + k];
                    let ds = sb[0] * sb[0] - dot(&sb[1..], &sb[1..]);
                    let dz = zb[0] * zb[0] - dot(&zb[1..], &zb[1..]);
                    if ds <= 0.0 || dz <= 0.0 || sb[0] <= 0.0 || zb[0] <= 0.0 {
                        return None;
                    }
                    let (rds, rdz) = (ds.sqrt(), dz.sqrt());
                    let gamma =
                        (0.5 * (1.0 + dot(sb, zb) / (rds * rdz))).sqrt();
                    let mut wbar = vec![0.0; k];
                    wbar[0] = (sb[0] / rds + zb[0] / rdz) / (2.0 * gamma);
                    for i in 1..k {
                        wbar[i] = (sb[i] / rds - zb[i] / rdz) / (2.0 * gamma);
                    }
                    let eta = (ds / dz).sqrt().sqrt();
                    let mut lam = vec![0.0; k];
                    boost_apply(&wbar, zb, &mut lam);
                    for (li, l) in lam.iter().enumerate() {
                        lambda[off + li] = eta * l;
                    }
                    socs.push(SocScale { eta, wbar });
                }
            }
        }
        Some(Scaling {
            w_orth,
            socs,
            lambda,
        })
    }

    /// `out = W v`.
    fn apply_w(&self, cones: &[ConeBlock], v: &[f64], out: &mut [f64]) {
        let mut soc_idx = 0;
        for (off, b) in blocks(cones) {
            match b {
                ConeBlock::Orthant(k) => {
                    for i in off..off + k {
                        out[i] = self.w_orth[i] * v[i];
                    }
                }
                ConeBlock::Soc(k) => {
                    let sc = &self.socs[soc_idx];
                    soc_idx += 1;
                    boost_apply(&sc.wbar, &v[off..off + k], &mut out[off..off + k]);
                    for x in &mut out[off..off + k] {
                        *x *= sc.eta;
                    }
                }
            }
        }
    }

    /// `out = W^2 v` using `W^2 = eta^2 (2 wbar wbar' - J)`.
    fn apply_w2(&self, cones: &[ConeBlock], v: &[f64], out: &mut [f64]) {
        let mut soc_idx = 0;
        for (off, b) in blocks(cones) {
            match b {
                ConeBlock::Orthant(k) => {
                    for i in off..off + k {
                        out[i] = self.w_orth[i] * self.w_orth[i] * v[i];
                    }
                }
                ConeBlock::Soc(k) => {
                    let sc = &self.socs[soc_idx];
                    soc_idx += 1;
                    let vb = &v[off..off + k];
                    let e2 = sc.eta * sc.eta;
                    let q = 2.0 * dot(&sc.wbar, vb);
                    out[off] = e2 * (q * sc.wbar[0] - vb[0]);
                    for i in 1..k {
                        out[off + i] = e2 * (q * sc.wbar[i] + vb[i]);
                    }
                }
            }
        }
    }

    /// `out = W^{-2} v` using `W^{-2} = eta^{-2} (2 (J wbar)(J wbar)' - J)`.
    fn apply_winv2(&self, cones: &[ConeBlock], v: &[f64], out: &mut [f64]) {
        let mut soc_idx = 0;
        for (off, b) in blocks(cones) {
            match b {
                ConeBlock::Orthant(k) => {
                    for i in off..off + k {
                        out[i] = v[i] / (self.w_orth[i] * self.w_orth[i]);
                    }
                }
                ConeBlock::Soc(k) => {
                    let sc = &self.socs[soc_idx];
                    soc_idx += 1;
                    let vb = &v[off..off + k];
                    let e2 = 1.0 / (sc.eta * sc.eta);
                    // J wbar flips the tail sign.
                    let mut q = sc.wbar[0] * vb[0];
                    for i in 1..k {
                        q -= sc.wbar[i] * vb[i];
                    }
                    q *= 2.0;
                    out[off] = e2 * (q * sc.wbar[0] - vb[0]);
                    for i in 1..k {
                        out[off + i] = e2 * (-q * sc.wbar[i] + vb[i]);
                    }
                }
            }
        }
    }

    /// Solve `lambda o q = d` per block (Jordan division).
    fn lambda_div(&self, cones: &[ConeBlock], d: &[f64], out: &mut [f64]) {
        for (off, b) in blocks(cones) {
            match b {
                ConeBlock::Orthant(k) => {
                    for i in off..off + k {
                        out[i] = d[i] / self.lambda[i];
                    }
                }
                ConeBlock::Soc(k) => {
                    let lb = &self.lambda[off..off + k];
                    let db = &d[off..off + k];
                    let det = lb[0] * lb[0] - dot(&lb[1..], &lb[1..]);
                    let q0 = (lb[0] * db[0] - dot(&lb[1..], &db[1..])) / det;
                    out[off] = q0;
                    for i in 1..k {
                        out[off + i] = (db[i] - q0 * lb[i]) / lb[0];
                    }
                }
            }
        }
    }
}

/// Jordan product `a o b` per block.
fn jordan_prod(cones: &[ConeBlock], a: &[f64], b: &[f64], out: &mut [f64]) {
    for (off, blk) in blocks(cones) {
        match blk {
            ConeBlock::Orthant(k) => {
                for i in off..off + k {
                    out[i] = a[i] * b[i];
                }
            }
            ConeBlock::Soc(k) => {
                let ab = &a[off..off + k];
                let bb = &b[off..off + k];
                out[off] = dot(ab, bb);
                for i in 1..k {
                    out[off + i] = ab[0] * bb[i] + bb[0] * ab[i];
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Condensed KKT factorization
// ---------------------------------------------------------------------------

struct Kkt {
    m_chol: SquareMat,
    s_chol: Option<SquareMat>,
}

impl Kkt {
    /// Factor `M = G' W^{-2} G + reg I` and the Schur complement
    /// `A M^{-1} A'`.
    fn factor(sf: &StandardForm, scaling: &Scaling) -> Option<Kkt> {
        let n = sf.num_cols();
        let mut m = SquareMat::zeros(n);
        let mut scratch = vec![0.0; n];
        let mut support: Vec<usize> = Vec::new();
        let mut soc_idx = 0usize;
        for (off, b) in blocks(&sf.cones) {
            match b {
                ConeBlock::Orthant(k) => {
                    for r in off..off + k {
                        let d = 1.0 / (scaling.w_orth[r] * scaling.w_orth[r]);
                        let row = &sf.g.rows[r];
                        for &(ci, ai) in row {
                            let v = d * ai;
                            for &(cj, aj) in row {
                                m.add_at(ci, cj, v * aj);
                            }
                        }
                    }
                }
                ConeBlock::Soc(k) => {
                    let sc = &scaling.socs[soc_idx];
                    soc_idx += 1;
                    let e2 = 1.0 / (sc.eta * sc.eta);
                    // a = G_q' (J wbar); support collects touched columns.
                    support.clear();
                    for (i, r) in (off..off + k).enumerate() {
                        let wv = if i == 0 { sc.wbar[0] } else { -sc.wbar[i] };
                        for &(cj, aj) in &sf.g.rows[r] {
                            if scratch[cj] == 0.0 && !support.contains(&cj) {
                                support.push(cj);
                            }
                            scratch[cj] += wv * aj;
                        }
                    }
                    support.sort_unstable();
                    m.rank_one_update(2.0 * e2, &support, &scratch);
                    for &cj in &support {
                        scratch[cj] = 0.0;
                    }
                    // -J part: -g0 g0' + sum_{i>=1} gi gi'.
                    for (i, r) in (off..off + k).enumerate() {
                        let sign = if i == 0 { -e2 } else { e2 };
                        let row = &sf.g.rows[r];
                        for &(ci, ai) in row {
                            let v = sign * ai;
                            for &(cj, aj) in row {
                                m.add_at(ci, cj, v * aj);
                            }
                        }
                    }
                }
            }
        }
        let mut m_chol = m;
        cholesky(&mut m_chol, KKT_REG).ok()?;

        let p = sf.a.nrows();
        let s_chol = if p == 0 {
            None
        } else {
            let mut cols = Vec::with_capacity(p);
            for row in &sf.a.rows {
                let mut rhs = vec![0.0; n];
                for &(c, v) in row {
                    rhs[c] = v;
                }
                chol_solve(&m_chol, &mut rhs);
                cols.push(rhs);
            }
            let mut s = SquareMat::zeros(p);
            for (i, row) in sf.a.rows.iter().enumerate() {
                for j in 0..p {
                    let mut v = 0.0;
                    for &(c, a) in row {
                        v += a * cols[j][c];
                    }
                    s.data[i * p + j] = v;
                }
            }
            // Symmetrize against roundoff.
            for i in 0..p {
                for j in 0..i {
                    let v = 0.5 * (s.at(i, j) + s.at(j, i));
                    s.data[i * p + j] = v;
                    s.data[j * p + i] = v;
                }
            }
            cholesky(&mut s, KKT_REG).ok()?;
            Some(s)
        };
        Some(Kkt { m_chol, s_chol })
    }

    /// Solve the 3x3 system
    /// `A'dy + G'dz = r1`, `A du = r2`, `G du - W^2 dz = r3`
    /// with one step of iterative refinement.
    fn solve3(
        &self,
        sf: &StandardForm,
        scaling: &Scaling,
        r1: &[f64],
        r2: &[f64],
        r3: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (mut du, mut dy, mut dz) = self.solve3_raw(sf, scaling, r1, r2, r3);
        // Refinement on the full 3x3 residual. The factorization carries a
        // proximal shift, so treat it as a preconditioner: iterate while the
        // true residual keeps shrinking and return the best candidate seen.
        let scale = inf_norm(r1).max(inf_norm(r2)).max(inf_norm(r3)).max(1.0);
        let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
        const ROUNDS: usize = 30;
        for round in 0..ROUNDS {
            let n = sf.num_cols();
            let m = sf.g.nrows();
            let p = sf.a.nrows();
            let mut res1 = vec![0.0; n];
            sf.a.mul_t_acc(&dy, 1.0, &mut res1);
            sf.g.mul_t_acc(&dz, 1.0, &mut res1);
            for i in 0..n {
                res1[i] = r1[i] - res1[i];
            }
            let mut gdu = vec![0.0; m];
            sf.g.mul_vec(&du, &mut gdu);
            let mut w2dz = vec![0.0; m];
            scaling.apply_w2(&sf.cones, &dz, &mut w2dz);
            let mut res3 = vec![0.0; m];
            for i in 0..m {
                res3[i] = r3[i] - (gdu[i] - w2dz[i]);
            }
            let mut adu = vec![0.0; p];
            sf.a.mul_vec(&du, &mut adu);
            let mut res2 = vec![0.0; p];
            for i in 0..p {
                res2[i] = r2[i] - adu[i];
            }
            let worst = inf_norm(&res1).max(inf_norm(&res2)).max(inf_norm(&res3));
            // Slow contraction still pays off: the factorization is a
            // preconditioner whose rate degrades with the scaling spread,
            // so accept any strict decrease and cap the round count.
            let improved = best.as_ref().map_or(true, |(w, ..)| worst < 0.9 * *w);
            if improved {
                best = Some((worst, du.clone(), dy.clone(), dz.clone()));
            }
            if worst <= 1e-13 * scale || !improved || round == ROUNDS - 1 {
                break;
            }
            let (cu, cy, cz) = self.solve3_raw(sf, scaling, &res1, &res2, &res3);
            for (v, c) in du.iter_mut().zip(&cu) {
                *v += c;
            }
            for (v, c) in dy.iter_mut().zip(&cy) {
                *v += c;
            }
            for (v, c) in dz.iter_mut().zip(&cz) {
                *v += c;
            }
        }
        match best {
            Some((_, bu, by, bz)) => (bu, by, bz),
            None => (du, dy, dz),
        }
    }

    fn solve3_raw(
        &self,
        sf: &StandardForm,
        scaling: &Scaling,
        r1: &[f64],
        r2: &[f64],
        r3: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = sf.g.nrows();
        let p = sf.a.nrows();
        // t = r1 + G' W^{-2} r3
        let mut wi_r3 = vec![0.0; m];
        scaling.apply_winv2(&sf.cones, r3, &mut wi_r3);
        let mut t = r1.to_vec();
        sf.g.mul_t_acc(&wi_r3, 1.0, &mut t);

        let dy = if p > 0 {
            let mut w = t.clone();
            chol_solve(&self.m_chol, &mut w);
            let mut rhs_y = vec![0.0; p];
            sf.a.mul_vec(&w, &mut rhs_y);
            for i in 0..p {
                rhs_y[i] -= r2[i];
            }
            chol_solve(self.s_chol.as_ref().unwrap(), &mut rhs_y);
            rhs_y
        } else {
            Vec::new()
        };

        let mut du = t;
        sf.a.mul_t_acc(&dy, -1.0, &mut du);
        chol_solve(&self.m_chol, &mut du);

        let mut gdu = vec![0.0; m];
        sf.g.mul_vec(&du, &mut gdu);
        for i in 0..m {
            gdu[i] -= r3[i];
        }
        let mut dz = vec![0.0; m];
        scaling.apply_winv2(&sf.cones, &gdu, &mut dz);
        (du, dy, dz)
    }
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

struct Norms {
    b: f64,
    h: f64,
    c: f64,
    data: f64,
}

pub(super) fn solve(sf: &StandardForm, opts: &SolverOptions) -> SolverResult {
    if sf.trivially_infeasible.is_some() || sf.num_cols() == 0 {
        return solve_core(sf, opts);
    }
    // Ruiz equilibration: the Schur-complement solve squares the data's
    // conditioning, so balance row and column magnitudes first. Rows of one
    // second-order block share a single factor (cones are scale-invariant
    // only under uniform scaling).
    let (scaled, eq) = equilibrate(sf);
    let mut res = solve_core(&scaled, opts);
    eq.unscale(sf, &mut res);
    res
}

struct Equilibration {
    col: Vec<f64>,
    row_a: Vec<f64>,
    row_g: Vec<f64>,
    obj: f64,
}

fn equilibrate(sf: &StandardForm) -> (StandardForm, Equilibration) {
    let n = sf.num_cols();
    let p = sf.a.nrows();
    let m = sf.g.nrows();
    let mut out = sf.clone();
    let mut col = vec![1.0; n];
    let mut row_a = vec![1.0; p];
    let mut row_g = vec![1.0; m];
    for _ in 0..10 {
        let mut spread = 1.0f64;
        for (i, row) in out.a.rows.iter_mut().enumerate() {
            let mx = row.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
            if mx > 0.0 {
                let s = 1.0 / mx.sqrt();
                for e in row.iter_mut() {
                    e.1 *= s;
                }
                row_a[i] *= s;
                spread = spread.max(mx).max(1.0 / mx);
            }
        }
        let mut off = 0usize;
        for b in &out.cones {
            match b {
                ConeBlock::Orthant(k) => {
                    for r in off..off + k {
                        let mx = out.g.rows[r]
                            .iter()
                            .map(|(_, v)| v.abs())
                            .fold(0.0, f64::max);
                        if mx > 0.0 {
                            let s = 1.0 / mx.sqrt();
                            for e in out.g.rows[r].iter_mut() {
                                e.1 *= s;
                            }
                            row_g[r] *= s;
                            spread = spread.max(mx).max(1.0 / mx);
                        }
                    }
                    off += k;
                }
                ConeBlock::Soc(k) => {
                    let mut mx = 0.0f64;
                    for r in off..off + k {
                        for &(_, v) in &out.g.rows[r] {
                            mx = mx.max(v.abs());
                        }
                    }
                    if mx > 0.0 {
                        let s = 1.0 / mx.sqrt();
                        for r in off..off + k {
                            for e in out.g.rows[r].iter_mut() {
                                e.1 *= s;
                            }
                            row_g[r] *= s;
                        }
                        spread = spread.max(mx).max(1.0 / mx);
                    }
                    off += k;
                }
            }
        }
        let mut cmax = vec![0.0f64; n];
        for rows in [&out.a.rows, &out.g.rows] {
            for row in rows.iter() {
                for &(c, v) in row {
                    cmax[c] = cmax[c].max(v.abs());
                }
            }
        }
        for (j, &mx) in cmax.iter().enumerate() {
            if mx > 0.0 {
                col[j] /= mx.sqrt();
                spread = spread.max(mx).max(1.0 / mx);
            }
        }
        for rows in [&mut out.a.rows, &mut out.g.rows] {
            for row in rows.iter_mut() {
                for e in row.iter_mut() {
                    if cmax[e.0] > 0.0 {
                        e.1 /= cmax[e.0].sqrt();
                    }
                }
            }
        }
        if spread < 1.05 {
            break;
        }
    }
    for i in 0..p {
        out.b[i] *= row_a[i];
    }
    for i in 0..m {
        out.h[i] *= row_g[i];
    }
    for (j, v) in out.c.iter_mut().enumerate() {
        *v *= col[j];
    }
    let obj = 1.0 / out.c.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    for v in out.c.iter_mut() {
        *v *= obj;
    }
    out.obj_const = sf.obj_const * obj;
    (out, Equilibration { col, row_a, row_g, obj })
}

impl Equilibration {
    fn unscale(&self, sf: &StandardForm, res: &mut SolverResult) {
        if !res.x.is_empty() {
            for (j, origin) in sf.cols.iter().enumerate() {
                res.x[origin.var.0] *= self.col[j];
            }
            for &(v, root, mul, add) in &sf.aliased {
                res.x[v.0] = mul * res.x[root.0] + add;
            }
        }
        res.objective /= self.obj;
        for (i, v) in res.eq_duals.iter_mut().enumerate() {
            *v *= self.row_a[i] / self.obj;
        }
        for (i, v) in res.cone_duals.iter_mut().enumerate() {
            *v *= self.row_g[i] / self.obj;
        }
        match &mut res.certificate {
            Some(Certificate::PrimalInfeasible { y, z }) => {
                for (i, v) in y.iter_mut().enumerate() {
                    *v *= self.row_a[i];
                }
                for (i, v) in z.iter_mut().enumerate() {
                    *v *= self.row_g[i];
                }
            }
            Some(Certificate::DualInfeasible { x }) => {
                for (j, v) in x.iter_mut().enumerate() {
                    *v *= self.obj * self.col[j];
                }
            }
            None => {}
        }
    }
}

fn solve_core(sf: &StandardForm, opts: &SolverOptions) -> SolverResult {
    if let Some(_msg) = &sf.trivially_infeasible {
        return SolverResult {
            status: SolverStatus::PrimalInfeasible,
            x: Vec::new(),
            objective: f64::INFINITY,
            eq_duals: Vec::new(),
            cone_duals: Vec::new(),
            certificate: None,
            iterations: 0,
            gap: f64::NAN,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            composite_error: f64::NAN,
            trace: Vec::new(),
        };
    }
    let n = sf.num_cols();
    if n == 0 {
        return SolverResult {
            status: SolverStatus::Optimal,
            x: sf.expand_point(&[]),
            objective: sf.obj_const,
            eq_duals: vec![0.0; sf.a.nrows()],
            cone_duals: vec![0.0; sf.g.nrows()],
            certificate: None,
            iterations: 0,
            gap: 0.0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            composite_error: 0.0,
            trace: Vec::new(),
        };
    }
    debug_assert_eq!(cone_dim(&sf.cones), sf.g.nrows());
    let m = sf.g.nrows();
    let p = sf.a.nrows();
    if m == 0 {
        return solve_equality_only(sf, opts);
    }

    let norms = Norms {
        b: 1.0 + inf_norm(&sf.b),
        h: 1.0 + inf_norm(&sf.h),
        c: 1.0 + inf_norm(&sf.c),
        data: sf
            .g
            .rows
            .iter()
            .chain(sf.a.rows.iter())
            .flat_map(|r| r.iter().map(|(_, v)| v.abs()))
            .fold(1.0f64, f64::max),
    };
    let deg = cone_degree(&sf.cones) as f64 + 1.0;

    // Initial point: least-squares primal/dual solves with W = I, shifted
    // into the interior.
    let ident = Scaling {
        w_orth: {
            let mut w = vec![0.0; m];
            for (off, b) in blocks(&sf.cones) {
                if let ConeBlock::Orthant(k) = b {
                    for v in &mut w[off..off + k] {
                        *v = 1.0;
                    }
                }
            }
            w
        },
        socs: sf
            .cones
            .iter()
            .filter_map(|b| match b {
                ConeBlock::Soc(k) => Some(SocScale {
                    eta: 1.0,
                    wbar: {
                        let mut w = vec![0.0; *k];
                        w[0] = 1.0;
                        w
                    },
                }),
                _ => None,
            })
            .collect(),
        lambda: vec![0.0; m],
    };
    let Some(kkt0) = Kkt::factor(sf, &ident) else {
        return failure(sf, 0, Vec::new());
    };
    let zeros_n = vec![0.0; n];
    let zeros_p = vec![0.0; p];
    let zeros_m = vec![0.0; m];
    let (u0, _yp, zp) = kkt0.solve3(sf, &ident, &zeros_n, &sf.b, &sf.h);
    let mut s = vec![0.0; m];
    for i in 0..m {
        s[i] = -zp[i];
    }
    to_interior(&sf.cones, &mut s);
    let negc: Vec<f64> = sf.c.iter().map(|v| -v).collect();
    let (_ud, yd, zd) = kkt0.solve3(sf, &ident, &negc, &zeros_p, &zeros_m);
    let mut z = zd;
    to_interior(&sf.cones, &mut z);
    let mut u = u0;
    let mut y = yd;
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let mut trace = Vec::new();
    let mut tiny_steps = 0usize;
    // Best iterate seen so far, by worst scaled KKT error. Near degenerate
    // optimal faces the late iterates can drift (complementarity keeps
    // falling while the linear residuals grow from ill-conditioned KKT
    // solves); on any stall we answer from this snapshot instead of the
    // last point.
    let mut best: Option<Snapshot> = None;

    for iter in 0..opts.max_iter {
        // Residuals of the embedded system.
        let mut rx = vec![0.0; n];
        sf.a.mul_t_acc(&y, 1.0, &mut rx);
        sf.g.mul_t_acc(&z, 1.0, &mut rx);
        for i in 0..n {
            rx[i] += sf.c[i] * tau;
        }
        let mut ry = vec![0.0; p];
        sf.a.mul_vec(&u, &mut ry);
        for i in 0..p {
            ry[i] -= sf.b[i] * tau;
        }
        let mut gz = vec![0.0; m];
        sf.g.mul_vec(&u, &mut gz);
        let mut rz = vec![0.0; m];
        for i in 0..m {
            rz[i] = s[i] + gz[i] - sf.h[i] * tau;
        }
        let rtau = kappa + dot(&sf.c, &u) + dot(&sf.b, &y) + dot(&sf.h, &z);

        let sz = dot(&s, &z);
        let mu = (sz + tau * kappa) / deg;

        // Scaled convergence metrics.
        let pres = {
            let ry_n = inf_norm(&ry) / tau;
            let rz_n = inf_norm(&rz) / tau;
            (ry_n / norms.b).max(rz_n / norms.h)
        };
        let dres = inf_norm(&rx) / tau / norms.c;
        let pobj = dot(&sf.c, &u) / tau;
        let dobj = -(dot(&sf.b, &y) + dot(&sf.h, &z)) / tau;
        let gap_abs = sz / (tau * tau);
        let relgap = (pobj - dobj).abs() / pobj.abs().max(dobj.abs()).max(1.0);
        if opts.keep_trace {
            trace.push(IterTrace {
                mu,
                primal_residual: pres,
                dual_residual: dres,
                gap: gap_abs,
                step: 0.0,
                tau,
                kappa,
            });
        }
        let composite = pres.max(dres).max(gap_abs.min(relgap));
        if pres <= opts.tol && dres <= opts.tol && (gap_abs <= opts.tol || relgap <= opts.tol) {
            return finish_optimal(sf, &u, &y, &z, tau, iter, gap_abs, pres, dres, composite, trace);
        }
        if composite.is_finite() && tau > 1e-12 {
            let better = best.as_ref().map_or(true, |b| composite < b.err);
            if better {
                best = Some(Snapshot {
                    err: composite,
                    u: u.clone(),
                    y: y.clone(),
                    z: z.clone(),
                    tau,
                    gap: gap_abs,
                    pres,
                    dres,
                    iter,
                });
            }
        }
        if let Some(b) = &best {
            // Deep in convergence and drifting away: stop.
            if mu < 1e-9 && composite > 1e4 * b.err && iter > b.iter + 5 {
                return stall(sf, opts, iter, trace, best);
            }
        }
        // Farkas certificates (valid at any iterate once residuals allow).
        let ip = dot(&sf.b, &y) + dot(&sf.h, &z);
        if ip < -1e-10 {
            let scale = -ip;
            let mut atz = vec![0.0; n];
            sf.a.mul_t_acc(&y, 1.0, &mut atz);
            sf.g.mul_t_acc(&z, 1.0, &mut atz);
            if inf_norm(&atz) / scale <= opts.tol * norms.data {
                let ys: Vec<f64> = y.iter().map(|v| v / scale).collect();
                let zs: Vec<f64> = z.iter().map(|v| v / scale).collect();
                return SolverResult {
                    status: SolverStatus::PrimalInfeasible,
                    x: Vec::new(),
                    objective: f64::INFINITY,
                    eq_duals: Vec::new(),
                    cone_duals: Vec::new(),
                    certificate: Some(Certificate::PrimalInfeasible { y: ys, z: zs }),
                    iterations: iter,
                    gap: gap_abs,
                    primal_residual: pres,
                    dual_residual: dres,
                    composite_error: f64::NAN,
                    trace,
                };
            }
        }
        let cu = dot(&sf.c, &u);
        if cu < -1e-10 {
            let scale = -cu;
            let mut au = vec![0.0; p];
            sf.a.mul_vec(&u, &mut au);
            let mut gus = vec![0.0; m];
            sf.g.mul_vec(&u, &mut gus);
            for i in 0..m {
                gus[i] += s[i];
            }
            if inf_norm(&au).max(inf_norm(&gus)) / scale <= opts.tol * norms.data {
                let xs: Vec<f64> = u.iter().map(|v| v / scale).collect();
                return SolverResult {
                    status: SolverStatus::DualInfeasible,
                    x: Vec::new(),
                    objective: f64::NEG_INFINITY,
                    eq_duals: Vec::new(),
                    cone_duals: Vec::new(),
                    certificate: Some(Certificate::DualInfeasible { x: xs }),
                    iterations: iter,
                    gap: gap_abs,
                    primal_residual: pres,
                    dual_residual: dres,
                    composite_error: f64::NAN,
                    trace,
                };
            }
        }

        let Some(scaling) = Scaling::compute(&sf.cones, &s, &z) else {
            return stall(sf, opts, iter, trace, best);
        };
        let Some(kkt) = Kkt::factor(sf, &scaling) else {
            return stall(sf, opts, iter, trace, best);
        };

        // Constant-column solve, shared by both steps.
        let (u1, y1, z1) = kkt.solve3(sf, &scaling, &negc, &sf.b, &sf.h);
        let denom = dot(&sf.c, &u1) + dot(&sf.b, &y1) + dot(&sf.h, &z1) - kappa / tau;

        // Affine predictor: d_s = -lambda o lambda, d_tk = -tau kappa.
        let mut rhs3 = vec![0.0; m];
        for i in 0..m {
            rhs3[i] = -rz[i] + s[i];
        }
        let neg_rx: Vec<f64> = rx.iter().map(|v| -v).collect();
        let neg_ry: Vec<f64> = ry.iter().map(|v| -v).collect();
        let (u2, y2, z2) = kkt.solve3(sf, &scaling, &neg_rx, &neg_ry, &rhs3);
        let dtau_a = -(rtau - kappa + dot(&sf.c, &u2) + dot(&sf.b, &y2) + dot(&sf.h, &z2)) / denom;
        let mut dz_a = z2.clone();
        for (v, add) in dz_a.iter_mut().zip(&z1) {
            *v += dtau_a * add;
        }
        let mut ds_a = vec![0.0; m];
        scaling.apply_w2(&sf.cones, &dz_a, &mut ds_a);
        for i in 0..m {
            ds_a[i] = -s[i] - ds_a[i];
        }
        let dkappa_a = -kappa - (kappa / tau) * dtau_a;

        let mut alpha_a = max_step(&sf.cones, &s, &ds_a)
            .min(max_step(&sf.cones, &z, &dz_a));
        if dtau_a < 0.0 {
            alpha_a = alpha_a.min(-tau / dtau_a);
        }
        if dkappa_a < 0.0 {
            alpha_a = alpha_a.min(-kappa / dkappa_a);
        }
        let alpha_a = alpha_a.min(1.0);
        let mu_aff = {
            let mut acc = 0.0;
            for i in 0..m {
                acc += (s[i] + alpha_a * ds_a[i]) * (z[i] + alpha_a * dz_a[i]);
            }
            acc += (tau + alpha_a * dtau_a) * (kappa + alpha_a * dkappa_a);
            acc / deg
        };
        let sigma = ((mu_aff / mu).max(0.0).powi(3)).clamp(0.0, 0.999_999);

        // Combined step.
        let eta = 1.0 - sigma;
        let mut d_s = vec![0.0; m];
        jordan_prod(&sf.cones, &scaling.lambda, &scaling.lambda, &mut d_s);
        for v in d_s.iter_mut() {
            *v = -*v;
        }
        let mut e = vec![0.0; m];
        cone_identity(&sf.cones, &mut e);
        for i in 0..m {
            d_s[i] += sigma * mu * e[i];
        }
        let mut d_tk = -tau * kappa + sigma * mu;
        if opts.mehrotra {
            // Second-order term (W^{-1} ds_a) o (W dz_a).
            let mut wds = vec![0.0; m];
            // W^{-1} v = solve W x = v: use winv2 then w.
            let mut tmp = vec![0.0; m];
            scaling.apply_winv2(&sf.cones, &ds_a, &mut tmp);
            scaling.apply_w(&sf.cones, &tmp, &mut wds);
            let mut wdz = vec![0.0; m];
            scaling.apply_w(&sf.cones, &dz_a, &mut wdz);
            let mut corr = vec![0.0; m];
            jordan_prod(&sf.cones, &wds, &wdz, &mut corr);
            for i in 0..m {
                d_s[i] -= corr[i];
            }
            d_tk -= dtau_a * dkappa_a;
        }
        let mut q = vec![0.0; m];
        scaling.lambda_div(&sf.cones, &d_s, &mut q);
        let mut wq = vec![0.0; m];
        scaling.apply_w(&sf.cones, &q, &mut wq);
        let mut rhs3c = vec![0.0; m];
        for i in 0..m {
            rhs3c[i] = -eta * rz[i] - wq[i];
        }
        let r1c: Vec<f64> = rx.iter().map(|v| -eta * v).collect();
        let r2c: Vec<f64> = ry.iter().map(|v| -eta * v).collect();
        let (u2, y2, z2) = kkt.solve3(sf, &scaling, &r1c, &r2c, &rhs3c);
        let dtau = -(d_tk / tau
            + eta * rtau
            + dot(&sf.c, &u2)
            + dot(&sf.b, &y2)
            + dot(&sf.h, &z2))
            / denom;
        let mut du = u2;
        for (v, add) in du.iter_mut().zip(&u1) {
            *v += dtau * add;
        }
        let mut dy = y2;
        for (v, add) in dy.iter_mut().zip(&y1) {
            *v += dtau * add;
        }
        let mut dz = z2;
        for (v, add) in dz.iter_mut().zip(&z1) {
            *v += dtau * add;
        }
        let mut w2dz = vec![0.0; m];
        scaling.apply_w2(&sf.cones, &dz, &mut w2dz);
        let mut ds = vec![0.0; m];
        for i in 0..m {
            ds[i] = wq[i] - w2dz[i];
        }
        let dkappa = (d_tk - kappa * dtau) / tau;

        let mut alpha = max_step(&sf.cones, &s, &ds).min(max_step(&sf.cones, &z, &dz));
        if dtau < 0.0 {
            alpha = alpha.min(-tau / dtau);
        }
        if dkappa < 0.0 {
            alpha = alpha.min(-kappa / dkappa);
        }
        let alpha = (STEP_FRACTION * alpha).min(1.0);
        if opts.keep_trace {
            if let Some(last) = trace.last_mut() {
                last.step = alpha;
            }
        }
        if !alpha.is_finite() || alpha <= 1e-10 {
            tiny_steps += 1;
            if tiny_steps >= 3 {
                return stall(sf, opts, iter, trace, best);
            }
        } else {
            tiny_steps = 0;
        }

        for i in 0..n {
            u[i] += alpha * du[i];
        }
        for i in 0..p {
            y[i] += alpha * dy[i];
        }
        for i in 0..m {
            z[i] += alpha * dz[i];
            s[i] += alpha * ds[i];
        }
        tau += alpha * dtau;
        kappa += alpha * dkappa;
        if !tau.is_finite() || tau <= 0.0 || !kappa.is_finite() {
            return stall(sf, opts, iter, trace, best);
        }
    }

    // Iteration cap: answer from the best snapshot when one exists.
    if best.is_some() {
        return stall_with(sf, opts, opts.max_iter, trace, best, SolverStatus::IterationLimit);
    }
    let pobj = dot(&sf.c, &u) / tau;
    let x = sf.expand_point(&u.iter().map(|v| v / tau).collect::<Vec<_>>());
    SolverResult {
        status: SolverStatus::IterationLimit,
        x,
        objective: pobj + sf.obj_const,
        eq_duals: y.iter().map(|v| v / tau).collect(),
        cone_duals: z.iter().map(|v| v / tau).collect(),
        certificate: None,
        iterations: opts.max_iter,
        gap: dot(&s, &z) / (tau * tau),
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        composite_error: f64::NAN,
        trace,
    }
}

struct Snapshot {
    err: f64,
    u: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    tau: f64,
    gap: f64,
    pres: f64,
    dres: f64,
    iter: usize,
}

fn stall(
    sf: &StandardForm,
    opts: &SolverOptions,
    iterations: usize,
    trace: Vec<IterTrace>,
    best: Option<Snapshot>,
) -> SolverResult {
    stall_with(sf, opts, iterations, trace, best, SolverStatus::NumericalFailure)
}

/// Progress has stopped. If the best iterate already met the tolerance the
/// solve is a success; otherwise report `fallback` but still hand back the
/// best point and its honest residuals so callers can judge closeness.
fn stall_with(
    sf: &StandardForm,
    opts: &SolverOptions,
    iterations: usize,
    trace: Vec<IterTrace>,
    best: Option<Snapshot>,
    fallback: SolverStatus,
) -> SolverResult {
    let Some(b) = best else {
        return failure(sf, iterations, trace);
    };
    let mut out = finish_optimal(sf, &b.u, &b.y, &b.z, b.tau, iterations, b.gap, b.pres, b.dres, b.err, trace);
    if b.err > opts.tol {
        out.status = fallback;
    }
    out
}

fn finish_optimal(
    sf: &StandardForm,
    u: &[f64],
    y: &[f64],
    z: &[f64],
    tau: f64,
    iterations: usize,
    gap: f64,
    pres: f64,
    dres: f64,
    composite: f64,
    trace: Vec<IterTrace>,
) -> SolverResult {
    let xcols: Vec<f64> = u.iter().map(|v| v / tau).collect();
    let pobj = dot(&sf.c, &xcols);
    SolverResult {
        status: SolverStatus::Optimal,
        x: sf.expand_point(&xcols),
        objective: pobj + sf.obj_const,
        eq_duals: y.iter().map(|v| v / tau).collect(),
        cone_duals: z.iter().map(|v| v / tau).collect(),
        certificate: None,
        iterations,
        gap,
        primal_residual: pres,
        dual_residual: dres,
        composite_error: composite,
        trace,
    }
}

fn failure(sf: &StandardForm, iterations: usize, trace: Vec<IterTrace>) -> SolverResult {
    SolverResult {
        status: SolverStatus::NumericalFailure,
        x: vec![0.0; sf.source_vars],
        objective: f64::NAN,
        eq_duals: Vec::new(),
        cone_duals: Vec::new(),
        certificate: None,
        iterations,
        gap: f64::NAN,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        composite_error: f64::NAN,
        trace,
    }
}

/// Equality-constrained linear program (no cone rows): every feasible point
/// is optimal unless the objective has a component in the null space of `A`.
fn solve_equality_only(sf: &StandardForm, opts: &SolverOptions) -> SolverResult {
    let n = sf.num_cols();
    let p = sf.a.nrows();
    if p == 0 {
        // Unconstrained: optimal iff c = 0.
        if inf_norm(&sf.c) <= opts.tol {
            return finish_optimal(sf, &vec![0.0; n], &[], &[], 1.0, 0, 0.0, 0.0, 0.0, 0.0, Vec::new());
        }
        let x: Vec<f64> = sf.c.iter().map(|v| -v / dot(&sf.c, &sf.c)).collect();
        return SolverResult {
            status: SolverStatus::DualInfeasible,
            x: Vec::new(),
            objective: f64::NEG_INFINITY,
            eq_duals: Vec::new(),
            cone_duals: Vec::new(),
            certificate: Some(Certificate::DualInfeasible { x }),
            iterations: 0,
            gap: f64::NAN,
            primal_residual: 0.0,
            dual_residual: 0.0,
            composite_error: 0.0,
            trace: Vec::new(),
        };
    }
    // x0 = A'(AA')^{-1} b; w = (AA')^{-1} A c; residual r = c - A'w.
    let mut aat = SquareMat::zeros(p);
    for i in 0..p {
        for j in 0..p {
            let mut v = 0.0;
            for &(ci, a) in &sf.a.rows[i] {
                for &(cj, b) in &sf.a.rows[j] {
                    if ci == cj {
                        v += a * b;
                    }
                }
            }
            aat.data[i * p + j] = v;
        }
    }
    if cholesky(&mut aat, KKT_REG).is_err() {
        return failure(sf, 0, Vec::new());
    }
    let mut rhs = sf.b.clone();
    chol_solve(&aat, &mut rhs);
    let mut x0 = vec![0.0; n];
    sf.a.mul_t_acc(&rhs, 1.0, &mut x0);
    let mut ac = vec![0.0; p];
    sf.a.mul_vec(&sf.c, &mut ac);
    chol_solve(&aat, &mut ac);
    let mut resid = sf.c.clone();
    sf.a.mul_t_acc(&ac, -1.0, &mut resid);
    if inf_norm(&resid) > opts.tol {
        let nr = dot(&resid, &resid);
        let ray: Vec<f64> = resid.iter().map(|v| -v / nr).collect();
        return SolverResult {
            status: SolverStatus::DualInfeasible,
            x: Vec::new(),
            objective: f64::NEG_INFINITY,
            eq_duals: Vec::new(),
            cone_duals: Vec::new(),
            certificate: Some(Certificate::DualInfeasible { x: ray }),
            iterations: 0,
            gap: f64::NAN,
            primal_residual: 0.0,
            dual_residual: 0.0,
            composite_error: f64::NAN,
            trace: Vec::new(),
        };
    }
    let mut check = vec![0.0; p];
    sf.a.mul_vec(&x0, &mut check);
    let feas = check
        .iter()
        .zip(&sf.b)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if feas > opts.tol * (1.0 + inf_norm(&sf.b)) {
        return SolverResult {
            status: SolverStatus::PrimalInfeasible,
            x: Vec::new(),
            objective: f64::INFINITY,
            eq_duals: Vec::new(),
            cone_duals: Vec::new(),
            certificate: None,
            iterations: 0,
            gap: f64::NAN,
            primal_residual: feas,
            dual_residual: 0.0,
            composite_error: f64::NAN,
            trace: Vec::new(),
        };
    }
    finish_optimal(sf, &x0, &ac.iter().map(|v| -v).collect::<Vec<_>>(), &[], 1.0, 0, 0.0, 0.0, 0.0, 0.0, Vec::new())
}
