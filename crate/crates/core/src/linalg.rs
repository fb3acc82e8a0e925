//! Small dense symmetric solves for the per-interval normal equations.
//!
//! Matrices are row-major `p * p` slices. Columns that are (numerically)
//! linear combinations of earlier columns are flagged as aliased and get a
//! zero solution component instead of failing the whole solve.

/// Relative pivot tolerance below which a column is treated as aliased.
pub const ALIAS_TOL: f64 = 1e-10;

/// Cholesky factor of a symmetric positive semi-definite matrix with
/// aliased columns removed.
#[derive(Debug, Clone)]
pub struct SymFactor {
    p: usize,
    lower: Vec<f64>,
    aliased: Vec<bool>,
}

impl SymFactor {
    pub fn new(a: &[f64], p: usize) -> Self {
        assert_eq!(a.len(), p * p, "matrix size mismatch");
        let mut lower = vec![0.0; p * p];
        let mut aliased = vec![false; p];
        for j in 0..p {
            let ajj = a[j * p + j];
            let mut d = ajj;
            for k in 0..j {
                d -= lower[j * p + k] * lower[j * p + k];
            }
            // Negated so that NaN pivots count as aliased.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(ajj > 0.0) || !(d > ALIAS_TOL * ajj) {
                aliased[j] = true;
                continue;
            }
            let ljj = d.sqrt();
            lower[j * p + j] = ljj;
            for i in (j + 1)..p {
                let mut s = a[i * p + j];
                for k in 0..j {
                    s -= lower[i * p + k] * lower[j * p + k];
                }
                lower[i * p + j] = s / ljj;
            }
        }
        SymFactor { p, lower, aliased }
    }

    pub fn aliased(&self) -> &[bool] {
        &self.aliased
    }

    pub fn rank(&self) -> usize {
        self.aliased.iter().filter(|a| !**a).count()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let p = self.p;
        assert_eq!(b.len(), p);
        let mut y = vec![0.0; p];
        for i in 0..p {
            if self.aliased[i] {
                continue;
            }
            let s = b[i] - (0..i).map(|k| self.lower[i * p + k] * y[k]).sum::<f64>();
            y[i] = s / self.lower[i * p + i];
        }
        let mut x = vec![0.0; p];
        for i in (0..p).rev() {
            if self.aliased[i] {
                continue;
            }
            let s = y[i] - ((i + 1)..p).map(|k| self.lower[k * p + i] * x[k]).sum::<f64>();
            x[i] = s / self.lower[i * p + i];
        }
        x
    }

    /// Generalized inverse: the inverse on the non-aliased block, zero elsewhere.
    pub fn inverse(&self) -> Vec<f64> {
        let p = self.p;
        let mut inv = vec![0.0; p * p];
        let mut e = vec![0.0; p];
        for j in 0..p {
            if self.aliased[j] {
                continue;
            }
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..p {
                inv[i * p + j] = col[i];
            }
        }
        inv
    }
}

/// `out += w * x xᵀ` for a row-major `p * p` accumulator.
pub fn add_outer(out: &mut [f64], x: &[f64], w: f64) {
    let p = x.len();
    for i in 0..p {
        let wi = w * x[i];
        if wi == 0.0 {
            continue;
        }
        for j in 0..p {
            out[i * p + j] += wi * x[j];
        }
    }
}
