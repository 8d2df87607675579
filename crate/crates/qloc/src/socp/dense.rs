//! Minimal dense symmetric linear algebra for the interior-point engine.
//!
//! Matrices are row-major `Vec<f64>` squares. Only what the KKT solves need:
//! Cholesky factorization with diagonal regularization retries, and
//! forward/backward substitution. Everything is straight-line deterministic
//! code; problem sizes stay small enough that blocking is not worth it.

/// Row-major square matrix.
#[derive(Debug, Clone)]
pub struct SquareMat {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMat {
    pub fn zeros(n: usize) -> Self {
        SquareMat {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    /// Rank-one update `self += scale * v v^T` restricted to the listed
    /// support columns of `v` (both triangles).
    pub fn rank_one_update(&mut self, scale: f64, support: &[usize], v: &[f64]) {
        for &i in support {
            let vi = scale * v[i];
            if vi == 0.0 {
                continue;
            }
            let row = i * self.n;
            for &j in support {
                self.data[row + j] += vi * v[j];
            }
        }
    }
}

/// In-place lower Cholesky of a symmetric positive definite matrix. On a
/// nonpositive pivot the factorization restarts with a larger diagonal shift,
/// up to three retries. Returns the shift actually used.
pub fn cholesky(a: &mut SquareMat, base_shift: f64) -> Result<f64, ()> {
    let n = a.n;
    let orig = a.data.clone();
    let mut shift = base_shift;
    'retry: for attempt in 0..4 {
        if attempt > 0 {
            a.data.copy_from_slice(&orig);
            shift = if shift == 0.0 { 1e-12 } else { shift * 1e4 };
        }
        let scale: f64 = (0..n)
            .map(|i| orig[i * n + i].abs())
            .fold(0.0, f64::max)
            .max(1.0);
        for i in 0..n {
            a.data[i * n + i] += shift * scale;
        }
        for j in 0..n {
            let mut d = a.data[j * n + j];
            for k in 0..j {
                let l = a.data[j * n + k];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                continue 'retry;
            }
            let d = d.sqrt();
            a.data[j * n + j] = d;
            let inv = 1.0 / d;
            for i in (j + 1)..n {
                let mut v = a.data[i * n + j];
                let (ri, rj) = (i * n, j * n);
                for k in 0..j {
                    v -= a.data[ri + k] * a.data[rj + k];
                }
                a.data[ri + j] = v * inv;
            }
        }
        // Zero strict upper triangle so the factor is clean.
        for i in 0..n {
            for j in (i + 1)..n {
                a.data[i * n + j] = 0.0;
            }
        }
        return Ok(shift);
    }
    Err(())
}

/// Solve `L L^T x = rhs` in place given the lower factor.
pub fn chol_solve(l: &SquareMat, rhs: &mut [f64]) {
    let n = l.n;
    debug_assert_eq!(rhs.len(), n);
    for i in 0..n {
        let mut v = rhs[i];
        let row = i * n;
        for k in 0..i {
            v -= l.data[row + k] * rhs[k];
        }
        rhs[i] = v / l.data[row + i];
    }
    for i in (0..n).rev() {
        let mut v = rhs[i];
        for k in (i + 1)..n {
            v -= l.data[k * n + i] * rhs[k];
        }
        rhs[i] = v / l.data[i * n + i];
    }
}
