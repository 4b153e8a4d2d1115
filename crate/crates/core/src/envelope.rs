//! Symmetric positive definite matrices in variable-band (envelope) storage.
//!
//! Row `r` stores the lower-triangle columns `first[r]..=r`. The first
//! column is nondecreasing in `r`, so the envelope is closed under Cholesky
//! fill and the nonzero pattern of every factor column is a contiguous range.
//! That also makes the entries of the inverse inside the envelope computable
//! from the factor alone (Takahashi recurrences) without forming the inverse.

/// Relative pivot size below which the matrix is treated as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeMatrix {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeMatrix {
    /// Zero matrix. `first[r]` is raised to keep it nondecreasing and clipped to `r`.
    pub fn zeros(first: &[usize]) -> Self {
        let n = first.len();
        let mut f: Vec<usize> = first.iter().enumerate().map(|(r, &c)| c.min(r)).collect();
        for r in (0..n.saturating_sub(1)).rev() {
            f[r] = f[r].min(f[r + 1]);
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for (r, &c) in f.iter().enumerate() {
            start.push(acc);
            acc += r - c + 1;
        }
        start.push(acc);
        Self { first: f, start, data: vec![0.0; acc] }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Stored entries.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn first(&self, r: usize) -> usize {
        self.first[r]
    }

    /// Last row whose envelope reaches column `c`.
    fn last(&self, c: usize) -> usize {
        // first is nondecreasing, so rows reaching column c form a prefix of c..n
        let rows = &self.first[c..];
        c + rows.partition_point(|&f| f <= c) - 1
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        let (r, c) = if r >= c { (r, c) } else { (c, r) };
        c >= self.first[r]
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        debug_assert!(c <= r && c >= self.first[r]);
        self.start[r] + c - self.first[r]
    }

    /// Symmetric lookup; `None` outside the envelope.
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        let (r, c) = if r >= c { (r, c) } else { (c, r) };
        (c >= self.first[r]).then(|| self.data[self.idx(r, c)])
    }

    /// Add to a lower-triangle entry (`r >= c`) inside the envelope.
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let (r, c) = if r >= c { (r, c) } else { (c, r) };
        let i = self.idx(r, c);
        self.data[i] += v;
    }

    /// `a·self + b·other + c·third` for matrices sharing one envelope.
    pub fn combine(&self, parts: &[(f64, &EnvelopeMatrix)]) -> Self {
        let mut out = Self { first: self.first.clone(), start: self.start.clone(), data: vec![0.0; self.data.len()] };
        for (w, m) in parts {
            debug_assert_eq!(m.first, self.first);
            for (o, v) in out.data.iter_mut().zip(&m.data) {
                *o += w * v;
            }
        }
        out
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[self.start[r]..self.start[r + 1]]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = vec![0.0; n];
        for r in 0..n {
            let f = self.first[r];
            let row = self.row(r);
            for (k, &a) in row.iter().enumerate() {
                let c = f + k;
                y[r] += a * x[c];
                if c != r {
                    y[c] += a * x[r];
                }
            }
        }
        y
    }

    /// Cholesky factor `L` with `A = L Lᵀ`, stored in the same envelope.
    pub fn cholesky(&self) -> Result<EnvelopeCholesky, usize> {
        let n = self.dim();
        let mut l = self.clone();
        for r in 0..n {
            let fr = l.first[r];
            for c in fr..r {
                let fc = l.first[c];
                let lo = fr.max(fc);
                let (rs, cs) = (l.idx(r, lo), l.idx(c, lo));
                let len = c - lo;
                let mut s = 0.0;
                for t in 0..len {
                    s += l.data[rs + t] * l.data[cs + t];
                }
                let diag = l.data[l.idx(c, c)];
                let i = l.idx(r, c);
                l.data[i] = (l.data[i] - s) / diag;
            }
            let rs = l.idx(r, fr);
            let sq: f64 = l.data[rs..rs + (r - fr)].iter().map(|v| v * v).sum();
            let orig = self.data[self.idx(r, r)];
            let d = orig - sq;
            if !(orig > 0.0) || !(d > PIVOT_TOLERANCE * orig) {
                return Err(r);
            }
            let i = l.idx(r, r);
            l.data[i] = d.sqrt();
        }
        Ok(EnvelopeCholesky { l })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeCholesky {
    l: EnvelopeMatrix,
}

impl EnvelopeCholesky {
    pub fn dim(&self) -> usize {
        self.l.dim()
    }

    pub fn diag(&self, r: usize) -> f64 {
        self.l.data[self.l.idx(r, r)]
    }

    /// `(max Lᵢᵢ / min Lᵢᵢ)²`, a cheap lower bound on the 2-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        let (lo, hi) = (0..self.dim())
            .map(|r| self.diag(r))
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        (hi / lo).powi(2)
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let l = &self.l;
        let n = l.dim();
        for r in 0..n {
            let f = l.first[r];
            let row = l.row(r);
            let mut s = b[r];
            for (k, &v) in row[..r - f].iter().enumerate() {
                s -= v * b[f + k];
            }
            b[r] = s / row[r - f];
        }
        for r in (0..n).rev() {
            let f = l.first[r];
            let row = l.row(r);
            b[r] /= row[r - f];
            let br = b[r];
            for (k, &v) in row[..r - f].iter().enumerate() {
                b[f + k] -= v * br;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Entries of `A⁻¹` inside the envelope of `A`.
    pub fn selected_inverse(&self) -> EnvelopeMatrix {
        let l = &self.l;
        let n = l.dim();
        let mut z = EnvelopeMatrix { first: l.first.clone(), start: l.start.clone(), data: vec![0.0; l.data.len()] };
        for i in (0..n).rev() {
            let last = l.last(i);
            let lii = l.data[l.idx(i, i)];
            for j in (i + 1..=last).rev() {
                let mut s = 0.0;
                for k in i + 1..=last {
                    let zk = if k >= j { z.data[z.idx(k, j)] } else { z.data[z.idx(j, k)] };
                    s += l.data[l.idx(k, i)] * zk;
                }
                let at = z.idx(j, i);
                z.data[at] = -s / lii;
            }
            let mut s = 0.0;
            for k in i + 1..=last {
                s += l.data[l.idx(k, i)] * z.data[z.idx(k, i)];
            }
            let at = z.idx(i, i);
            z.data[at] = (1.0 / lii - s) / lii;
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn banded_spd(n: usize, first: &[usize], seed: u64) -> (EnvelopeMatrix, DMatrix<f64>) {
        let mut m = EnvelopeMatrix::zeros(first);
        let mut dense = DMatrix::zeros(n, n);
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for r in 0..n {
            for c in m.first(r)..r {
                let v = next();
                m.add(r, c, v);
                dense[(r, c)] = v;
                dense[(c, r)] = v;
            }
            let d = 2.0 + (r - m.first(r)) as f64;
            m.add(r, r, d);
            dense[(r, r)] = d;
        }
        (m, dense)
    }

    #[test]
    fn monotone_envelope() {
        let m = EnvelopeMatrix::zeros(&[0, 0, 2, 1, 4, 2]);
        let firsts: Vec<usize> = (0..6).map(|r| m.first(r)).collect();
        assert_eq!(firsts, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(m.last(1), 3);
        assert_eq!(m.last(2), 5);
        assert_eq!(m.last(5), 5);
    }

    #[test]
    fn factor_solve_and_inverse_match_dense() {
        let first = [0, 0, 0, 1, 3, 3, 3, 5, 5, 8, 8, 9];
        let n = first.len();
        let (m, dense) = banded_spd(n, &first, 11);
        let chol = m.cholesky().unwrap();
        let b: Vec<f64> = (0..n).map(|k| (k as f64).sin()).collect();
        let x = chol.solve(&b);
        let back = m.mul_vec(&x);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        let inv = dense.clone().try_inverse().unwrap();
        let sel = chol.selected_inverse();
        for r in 0..n {
            for c in 0..=r {
                if let Some(v) = sel.get(r, c) {
                    assert!((v - inv[(r, c)]).abs() < 1e-12, "({r},{c})");
                }
            }
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        // rank-one 3×3
        let mut m = EnvelopeMatrix::zeros(&[0, 0, 0]);
        for r in 0..3 {
            for c in 0..=r {
                m.add(r, c, 1.0);
            }
        }
        assert_eq!(m.cholesky().unwrap_err(), 1);
    }
}
