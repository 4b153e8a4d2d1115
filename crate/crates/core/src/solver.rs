//! Weighted least-squares solve and the statistics derived from it.
//!
//! The normal matrix `Bᵀ W B` is assembled in cohort order (boundary level of
//! a cohort followed by its C-trend cells), which keeps it variable-banded:
//! data rows couple one cohort, smoothing rows couple at most neighbouring
//! cohorts. The envelope factorization is exact; for small or dense problems
//! it degenerates to an ordinary Cholesky factorization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{check_lambda, DesignSystem};
use crate::domain::AnalysisDomain;
use crate::envelope::{EnvelopeCholesky, EnvelopeMatrix};
use crate::error::{DrmError, Result};
use crate::geometry::CellIndex;
use crate::sparse::SparseMatrix;

/// Condition estimate above which a solution carries a warning.
pub const ILL_CONDITIONED: f64 = 1e12;

/// Gram matrices of the three blocks in cohort order. Built once and reused
/// for every `(λ1, λ2)`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    /// `perm[q]` is the compact parameter at permuted position `q`.
    perm: Vec<usize>,
    /// Inverse of `perm`.
    pos: Vec<usize>,
    g0: EnvelopeMatrix,
    g1: EnvelopeMatrix,
    g2: EnvelopeMatrix,
    /// `B0ᵀ W0 x0` in compact order.
    rhs: Vec<f64>,
}

impl NormalEquations {
    pub fn new(sys: &DesignSystem, domain: &AnalysisDomain) -> Self {
        let n = domain.dim();
        let frame = domain.frame();
        let mut keyed: Vec<((usize, usize, usize), usize)> = Vec::with_capacity(n);
        let (i_l, i_r) = domain.v0_segment();
        for k in i_l..=i_r {
            keyed.push(((k, 0, 0), domain.v0_param(k).expect("segment slot")));
        }
        for c in domain.u_cells() {
            keyed.push(((frame.cohort_index(c), 1, c.i), domain.u_param(c).expect("included cell")));
        }
        keyed.sort_unstable();
        let perm: Vec<usize> = keyed.into_iter().map(|(_, p)| p).collect();
        let mut pos = vec![0; n];
        for (q, &p) in perm.iter().enumerate() {
            pos[p] = q;
        }

        let mut first: Vec<usize> = (0..n).collect();
        for block in [&sys.b0, &sys.b1, &sys.b2] {
            for row in block.rows() {
                let lo = row.iter().map(|&(c, _)| pos[c]).min().unwrap_or(0);
                for &(c, _) in row {
                    let q = pos[c];
                    first[q] = first[q].min(lo);
                }
            }
        }
        let template = EnvelopeMatrix::zeros(&first);
        let gram = |m: &SparseMatrix, w: Option<&[f64]>| {
            let mut g = template.clone();
            for (r, row) in m.rows().enumerate() {
                let wr = w.map_or(1.0, |w| w[r]);
                for &(ca, va) in row {
                    for &(cb, vb) in row {
                        let (qa, qb) = (pos[ca], pos[cb]);
                        if qa >= qb {
                            g.add(qa, qb, wr * va * vb);
                        }
                    }
                }
            }
            g
        };
        let g0 = gram(&sys.b0, Some(&sys.data_weights));
        let g1 = gram(&sys.b1, None);
        let g2 = gram(&sys.b2, None);
        let weighted: Vec<f64> = sys.x0.iter().zip(&sys.data_weights).map(|(x, w)| x * w).collect();
        let rhs = sys.b0.tr_mul_vec(&weighted);
        Self { perm, pos, g0, g1, g2, rhs }
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Stored entries of the normal-matrix envelope.
    pub fn envelope_size(&self) -> usize {
        self.g0.len()
    }

    pub fn factor(&self, lambda1: f64, lambda2: f64) -> Result<Factorization> {
        check_lambda("lambda1", lambda1)?;
        check_lambda("lambda2", lambda2)?;
        let n = self.g0.combine(&[(1.0, &self.g0), (lambda1, &self.g1), (lambda2, &self.g2)]);
        let chol = n
            .cholesky()
            .map_err(|q| DrmError::Singular { pivot: self.perm[q], dim: self.dim() })?;
        let inverse = chol.selected_inverse();
        Ok(Factorization { perm: self.perm.clone(), pos: self.pos.clone(), chol, inverse })
    }
}

/// Factor of `Bᵀ W B` plus the entries of its inverse inside the envelope.
#[derive(Debug, Clone)]
pub struct Factorization {
    perm: Vec<usize>,
    pos: Vec<usize>,
    chol: EnvelopeCholesky,
    inverse: EnvelopeMatrix,
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// `(Bᵀ W B)⁻¹ v` for a compact-order vector.
    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        let mut w: Vec<f64> = self.perm.iter().map(|&p| v[p]).collect();
        self.chol.solve_in_place(&mut w);
        let mut out = vec![0.0; v.len()];
        for (q, &p) in self.perm.iter().enumerate() {
            out[p] = w[q];
        }
        out
    }

    /// Entry `(a, b)` of `(Bᵀ W B)⁻¹`, compact indices.
    pub fn inverse_entry(&self, a: usize, b: usize) -> f64 {
        let (qa, qb) = (self.pos[a], self.pos[b]);
        match self.inverse.get(qa, qb) {
            Some(v) => v,
            None => {
                let mut e = vec![0.0; self.dim()];
                e[b] = 1.0;
                self.solve(&e)[a]
            }
        }
    }

    pub fn condition_estimate(&self) -> f64 {
        self.chol.condition_estimate()
    }

    /// Dense `(Bᵀ W B)⁻¹` in compact order.
    pub fn inverse_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for b in 0..n {
            e[b] = 1.0;
            let col = self.solve(&e);
            e[b] = 0.0;
            for a in 0..n {
                out[(a, b)] = col[a];
            }
        }
        // symmetrize rounding
        (&out + out.transpose()) * 0.5
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// Compact estimate `ẑ_a`.
    pub z_hat: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    /// `n0 + n1 + n2`.
    pub n_total: usize,
    pub dim: usize,
    /// `None` when `n_total <= dim`.
    pub sigma2_hat: Option<f64>,
    /// `None` when the data targets have no spread.
    pub r2: Option<f64>,
    pub condition_estimate: f64,
    pub warnings: Vec<String>,
    factor: Factorization,
}

impl Solution {
    pub fn objective(&self) -> f64 {
        self.s0 + self.lambda1 * self.s1 + self.lambda2 * self.s2
    }

    pub fn degrees_of_freedom(&self) -> i64 {
        self.n_total as i64 - self.dim as i64
    }

    pub fn factor(&self) -> &Factorization {
        &self.factor
    }

    /// Unscaled `(Bᵀ W B)⁻¹` entry.
    pub fn precision_inverse(&self, a: usize, b: usize) -> f64 {
        self.factor.inverse_entry(a, b)
    }

    /// `Cov(ẑ)_(a, b) = σ̂² (Bᵀ W B)⁻¹_(a, b)`.
    pub fn cov(&self, a: usize, b: usize) -> Option<f64> {
        Some(self.sigma2_hat? * self.factor.inverse_entry(a, b))
    }

    pub fn se(&self, a: usize) -> Option<f64> {
        self.cov(a, a).map(f64::sqrt)
    }

    /// Full compact covariance.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        Some(self.factor.inverse_dense() * self.sigma2_hat?)
    }

    /// Pearson correlation of two compact components (independent of σ̂²).
    pub fn corr(&self, a: usize, b: usize) -> Option<f64> {
        let (va, vb) = (self.precision_inverse(a, a), self.precision_inverse(b, b));
        if !(va > 0.0 && vb > 0.0) {
            return None;
        }
        Some(self.precision_inverse(a, b) / (va * vb).sqrt())
    }

    /// `ẑ` on the full scale; non-participating components are `None`.
    pub fn z_full(&self, domain: &AnalysisDomain) -> Vec<Option<f64>> {
        domain.index_map().scatter(&self.z_hat)
    }

    /// Full-scale correlation matrix; an entry is present only when both
    /// components participate.
    pub fn correlation_full(&self, domain: &AnalysisDomain) -> Vec<Vec<Option<f64>>> {
        let map = domain.index_map();
        let inv = self.factor.inverse_dense();
        let n = map.full_len();
        (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| {
                        let (a, b) = (map.to_compact(r)?, map.to_compact(c)?);
                        Some(inv[(a, b)] / (inv[(a, a)] * inv[(b, b)]).sqrt())
                    })
                    .collect()
            })
            .collect()
    }
}

/// Minimize `S0 + λ1 S1 + λ2 S2` for one pair of weights.
pub fn solve(sys: &DesignSystem, domain: &AnalysisDomain, lambda1: f64, lambda2: f64) -> Result<Solution> {
    let normal = NormalEquations::new(sys, domain);
    solve_prepared(sys, &normal, lambda1, lambda2)
}

/// [`solve`] with precomputed Gram matrices.
pub fn solve_prepared(sys: &DesignSystem, normal: &NormalEquations, lambda1: f64, lambda2: f64) -> Result<Solution> {
    if normal.dim() != sys.dim() {
        return Err(DrmError::Dimension(format!("normal equations {} vs system {}", normal.dim(), sys.dim())));
    }
    let factor = normal.factor(lambda1, lambda2)?;
    let z_hat = factor.solve(&normal.rhs);
    let (s0, s1, s2) = (sys.s0(&z_hat), sys.s1(&z_hat), sys.s2(&z_hat));
    let n_total = sys.total_rows();
    let dim = sys.dim();
    let objective = s0 + lambda1 * s1 + lambda2 * s2;
    let mut warnings = sys.warnings.clone();
    let sigma2_hat = match estimate_sigma2(objective, n_total, dim) {
        Ok(v) => Some(v),
        Err(e) => {
            warnings.push(e.to_string());
            None
        }
    };
    let condition_estimate = factor.condition_estimate();
    if condition_estimate > ILL_CONDITIONED {
        warnings.push(format!("ill-conditioned normal matrix (estimate {condition_estimate:.3e})"));
    }
    let r2 = r_squared(&sys.b0, &sys.x0, &z_hat);
    Ok(Solution {
        z_hat,
        lambda1,
        lambda2,
        s0,
        s1,
        s2,
        n_total,
        dim,
        sigma2_hat,
        r2,
        condition_estimate,
        warnings,
        factor,
    })
}

/// `S(ẑ) / (n - p)`.
pub fn estimate_sigma2(weighted_ss: f64, n_total: usize, dim: usize) -> Result<f64> {
    let df = n_total as i64 - dim as i64;
    if df <= 0 {
        return Err(DrmError::NoDegreesOfFreedom(df));
    }
    Ok(weighted_ss / df as f64)
}

/// `1 - |B0 ẑ - x0|² / Σ (x0 - mean)²`; `None` for fewer than two rows or
/// constant targets.
pub fn r_squared(b0: &SparseMatrix, x0: &[f64], z: &[f64]) -> Option<f64> {
    if x0.len() < 2 {
        return None;
    }
    let mean = x0.iter().sum::<f64>() / x0.len() as f64;
    let sst: f64 = x0.iter().map(|x| (x - mean).powi(2)).sum();
    if sst == 0.0 {
        return None;
    }
    let sse: f64 = b0.mul_vec(z).iter().zip(x0).map(|(f, x)| (f - x).powi(2)).sum();
    Some(1.0 - sse / sst)
}

/// How the boundary-level average is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelLinkDenominator {
    /// Number of averaged links.
    #[default]
    LinkCount,
    /// `i_r - i_l + 1`, one more than the number of links.
    SegmentLength,
}

/// Average correlations between adjacent estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    /// Mean over horizontal and vertical C-trend links.
    pub r_u: Option<f64>,
    /// Mean over consecutive boundary-level links.
    pub r_v: Option<f64>,
    pub u_links: usize,
    pub v_links: usize,
    /// Links skipped because a component has zero variance.
    pub skipped: usize,
}

pub fn adjacent_correlations(
    solution: &Solution,
    domain: &AnalysisDomain,
    denominator: LevelLinkDenominator,
) -> Smoothness {
    let frame = domain.frame();
    let mut skipped = 0;
    let mut sum_u = 0.0;
    let mut u_links = 0;
    for c in domain.u_cells() {
        let a = domain.u_param(c).expect("included");
        for nb in [CellIndex::new(c.i, c.j + 1), CellIndex::new(c.i + 1, c.j)] {
            if !frame.in_u(nb) {
                continue;
            }
            let Some(b) = domain.u_param(nb) else { continue };
            match solution.corr(a, b) {
                Some(r) => {
                    sum_u += r;
                    u_links += 1;
                }
                None => skipped += 1,
            }
        }
    }
    let (i_l, i_r) = domain.v0_segment();
    let mut sum_v = 0.0;
    let mut v_links = 0;
    for k in i_l..i_r {
        let (a, b) = (domain.v0_param(k).expect("slot"), domain.v0_param(k + 1).expect("slot"));
        match solution.corr(a, b) {
            Some(r) => {
                sum_v += r;
                v_links += 1;
            }
            None => skipped += 1,
        }
    }
    let r_u = (u_links > 0).then(|| sum_u / u_links as f64);
    let r_v = (v_links > 0).then(|| match denominator {
        LevelLinkDenominator::LinkCount => sum_v / v_links as f64,
        LevelLinkDenominator::SegmentLength => sum_v / (i_r - i_l + 1) as f64,
    });
    Smoothness { r_u, r_v, u_links, v_links, skipped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, DomainSelection};
    use crate::geometry::ObservationalFrame;
    use crate::ingest::CellStat;

    fn cells(rows: &[usize], cols: std::ops::Range<usize>) -> Vec<CellStat> {
        let mut out = Vec::new();
        for &i in rows {
            for j in cols.clone() {
                let y = i as f64 + 0.1 + 0.07 * (j % 5) as f64;
                out.push(CellStat {
                    cell: CellIndex::new(i, j),
                    x_mean: 24.0 + 0.1 * j as f64 + 0.05 * i as f64 + 0.3 * ((i * 7 + j * 3) % 5) as f64,
                    x_var: 1.0,
                    y_mean: y,
                    a_mean: j as f64,
                    n: 20,
                });
            }
        }
        out
    }

    fn problem() -> (DesignSystem, AnalysisDomain) {
        let f = ObservationalFrame::with_size(0, 0, 6, 7).unwrap();
        let cs = cells(&[0, 3, 6], 0..8);
        let d = build_domain(&f, &cs, DomainSelection::AllCohorts).unwrap();
        (DesignSystem::assemble(&cs, &d, false).unwrap(), d)
    }

    /// Dense normal equations written out directly.
    fn dense_oracle(sys: &DesignSystem, l1: f64, l2: f64) -> (DMatrix<f64>, Vec<f64>) {
        let p = sys.dim();
        let mut n = DMatrix::<f64>::zeros(p, p);
        let mut rhs = vec![0.0; p];
        let blocks = [(&sys.b0, 1.0), (&sys.b1, l1), (&sys.b2, l2)];
        for (b, w) in blocks {
            for (r, row) in b.to_dense().iter().enumerate() {
                for a in 0..p {
                    for c in 0..p {
                        n[(a, c)] += w * row[a] * row[c];
                    }
                    if w == 1.0 {
                        rhs[a] += row[a] * sys.x0[r];
                    }
                }
            }
        }
        let inv = n.try_inverse().unwrap();
        let z = (&inv * nalgebra::DVector::from_vec(rhs)).iter().copied().collect();
        (inv, z)
    }

    #[test]
    fn matches_dense_normal_equations() {
        let (sys, d) = problem();
        let sol = solve(&sys, &d, 0.7, 2.5).unwrap();
        let (inv, z) = dense_oracle(&sys, 0.7, 2.5);
        for (a, b) in sol.z_hat.iter().zip(&z) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
        }
        let cov = sol.covariance().unwrap();
        let s2 = sol.sigma2_hat.unwrap();
        for a in 0..sys.dim() {
            for b in 0..sys.dim() {
                assert!((cov[(a, b)] - s2 * inv[(a, b)]).abs() < 1e-9);
                assert!((sol.precision_inverse(a, b) - inv[(a, b)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let (sys, d) = problem();
        let sol = solve(&sys, &d, 1.0, 1.0).unwrap();
        let cov = sol.covariance().unwrap();
        assert_eq!(cov, cov.transpose());
        let eig = cov.clone().symmetric_eigen();
        let trace = cov.trace();
        assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-8 * trace));
    }

    #[test]
    fn objective_decomposes() {
        let (sys, d) = problem();
        let sol = solve(&sys, &d, 0.3, 4.0).unwrap();
        let stacked = sys.stack(0.3, 4.0).unwrap();
        let s = stacked.objective(&sol.z_hat);
        assert!((s - sol.objective()).abs() <= 1e-10 * s);
    }

    #[test]
    fn sigma2_examples() {
        assert_eq!(estimate_sigma2(0.0, 10, 4).unwrap(), 0.0);
        assert_eq!(estimate_sigma2(2.0, 6, 4).unwrap(), 1.0);
        assert_eq!(estimate_sigma2(2.0, 4, 4), Err(DrmError::NoDegreesOfFreedom(0)));
    }

    #[test]
    fn r_squared_examples() {
        let mut b0 = SparseMatrix::new(2);
        for k in 0..4 {
            b0.push_row(vec![(0, 1.0), (1, k as f64)]);
        }
        let x0 = vec![1.0, 3.0, 5.0, 7.0];
        assert_eq!(r_squared(&b0, &x0, &[1.0, 2.0]), Some(1.0));
        let centered = vec![-3.0, -1.0, 1.0, 3.0];
        assert_eq!(r_squared(&b0, &centered, &[0.0, 0.0]), Some(0.0));
        assert_eq!(r_squared(&b0, &[2.0; 4], &[0.0, 0.0]), None);
    }

    #[test]
    fn rbar_v_denominators() {
        let (sys, d) = problem();
        let sol = solve(&sys, &d, 1.0, 1.0).unwrap();
        let a = adjacent_correlations(&sol, &d, LevelLinkDenominator::LinkCount);
        let b = adjacent_correlations(&sol, &d, LevelLinkDenominator::SegmentLength);
        let links = a.v_links as f64;
        assert!((a.r_v.unwrap() * links / (links + 1.0) - b.r_v.unwrap()).abs() < 1e-14);
        assert_eq!(a.r_u, b.r_u);
    }

    #[test]
    fn stronger_smoothing_lowers_curvature() {
        let (sys, d) = problem();
        let mut prev = f64::INFINITY;
        for l1 in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let s1 = solve(&sys, &d, l1, 1.0).unwrap().s1;
            assert!(s1 <= prev * (1.0 + 1e-9));
            prev = s1;
        }
    }
}
