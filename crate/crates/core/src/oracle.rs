//! Dense reference fit for small problems.
//!
//! Rows are written out from the model definition on the full parameter
//! vector and only then restricted to the participating columns, so the
//! sparse assembly and the envelope solver are not on this path.

use nalgebra::{DMatrix, DVector};

use crate::domain::{build_domain, AnalysisDomain, DomainSelection};
use crate::error::{DrmError, Result};
use crate::geometry::{CellIndex, ObservationalFrame};
use crate::ingest::{aggregate, frame_from_data, CellStat, SurveyRecord};

/// Largest parameter count accepted.
pub const ORACLE_MAX_DIM: usize = 200;
/// Smallest-to-largest eigenvalue ratio treated as singular.
pub const ORACLE_RANK_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct OracleFit {
    /// Estimate over the participating components, ascending full index.
    pub z: Vec<f64>,
    /// Full index of each entry of `z`.
    pub columns: Vec<usize>,
    /// `(Bᵀ W B)⁻¹`.
    pub precision_inverse: DMatrix<f64>,
    pub sigma2: Option<f64>,
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
}

impl OracleFit {
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        Some(&self.precision_inverse * self.sigma2?)
    }
}

/// Fit records directly: frame from the data, no cell exclusion, all cohorts.
pub fn brute_force_fit(records: &[SurveyRecord], lambda1: f64, lambda2: f64) -> Result<OracleFit> {
    let frame = frame_from_data(records)?;
    let cells = aggregate(records, &frame, 0)?.cells;
    let domain = build_domain(&frame, &cells, DomainSelection::AllCohorts)?;
    brute_force_fit_cells(&cells, &domain, lambda1, lambda2, false)
}

fn full_u(frame: &ObservationalFrame, i: usize, j: usize) -> usize {
    frame.v0_len() + i * (frame.j_max_rel + 1) + j
}

pub fn brute_force_fit_cells(
    cells: &[CellStat],
    domain: &AnalysisDomain,
    lambda1: f64,
    lambda2: f64,
    weight_by_count: bool,
) -> Result<OracleFit> {
    let f = *domain.frame();
    let (big_i, big_j) = (f.i_max_rel, f.j_max_rel);
    let full = f.v0_len() + (big_i + 1) * (big_j + 1);
    let (i_l, i_r) = domain.v0_segment();
    let inside = |i: usize, j: usize| domain.contains_u(CellIndex::new(i, j));

    let mut columns: Vec<usize> = (i_l..=i_r).collect();
    for i in 0..=big_i {
        for j in 0..=big_j {
            if inside(i, j) {
                columns.push(full_u(&f, i, j));
            }
        }
    }
    let p = columns.len();
    if p > ORACLE_MAX_DIM {
        return Err(DrmError::InvalidParameter { name: "oracle size", reason: format!("{p} > {ORACLE_MAX_DIM}") });
    }
    let mut col_of = vec![None; full];
    for (c, &g) in columns.iter().enumerate() {
        col_of[g] = Some(c);
    }

    // data rows on the full vector
    let mut sorted: Vec<&CellStat> = cells.iter().collect();
    sorted.sort_by_key(|c| (c.cell.i, c.cell.j));
    let mut b0 = DMatrix::<f64>::zeros(sorted.len(), p);
    let mut x0 = DVector::<f64>::zeros(sorted.len());
    let mut w0 = DVector::<f64>::zeros(sorted.len());
    for (r, c) in sorted.iter().enumerate() {
        let (i, j) = (c.cell.i, c.cell.j);
        let mut row = vec![0.0; full];
        row[big_i + 1 + j - i] += 1.0;
        for m in 1..=i.min(j) {
            row[full_u(&f, i - m, j - m)] += 1.0;
        }
        row[full_u(&f, i, j)] += c.y_mean - (f.i_min + i as i64) as f64;
        for (g, &v) in row.iter().enumerate() {
            let at_own = g == full_u(&f, i, j);
            if v == 0.0 && !at_own {
                continue;
            }
            let col = col_of[g].ok_or(DrmError::CellNotInDomain(c.cell))?;
            b0[(r, col)] = v;
        }
        x0[r] = c.x_mean;
        w0[r] = if weight_by_count { c.n as f64 } else { 1.0 };
    }

    let mut b1_rows: Vec<Vec<(usize, f64)>> = Vec::new();
    for i in 0..=big_i {
        for j in 1..big_j {
            if inside(i, j - 1) && inside(i, j) && inside(i, j + 1) {
                b1_rows.push(vec![(full_u(&f, i, j - 1), 1.0), (full_u(&f, i, j), -2.0), (full_u(&f, i, j + 1), 1.0)]);
            }
        }
    }
    for j in 0..=big_j {
        for i in 1..big_i {
            if inside(i - 1, j) && inside(i, j) && inside(i + 1, j) {
                b1_rows.push(vec![(full_u(&f, i - 1, j), 1.0), (full_u(&f, i, j), -2.0), (full_u(&f, i + 1, j), 1.0)]);
            }
        }
    }
    let b2_rows: Vec<Vec<(usize, f64)>> =
        (i_l + 1..i_r).map(|k| vec![(k - 1, 1.0), (k, -2.0), (k + 1, 1.0)]).collect();
    let dense = |rows: &[Vec<(usize, f64)>]| {
        let mut m = DMatrix::<f64>::zeros(rows.len(), p);
        for (r, row) in rows.iter().enumerate() {
            for &(g, v) in row {
                m[(r, col_of[g].expect("included"))] = v;
            }
        }
        m
    };
    let b1 = dense(&b1_rows);
    let b2 = dense(&b2_rows);

    let w = DMatrix::from_diagonal(&w0);
    let normal = b0.transpose() * &w * &b0 + b1.transpose() * &b1 * lambda1 + b2.transpose() * &b2 * lambda2;
    let rhs = b0.transpose() * &w * &x0;

    let eig = normal.clone().symmetric_eigen();
    let hi = eig.eigenvalues.amax();
    let lo = eig.eigenvalues.min();
    if !(hi > 0.0) || lo <= ORACLE_RANK_TOLERANCE * hi {
        return Err(DrmError::Singular { pivot: eig.eigenvalues.imin(), dim: p });
    }
    let inv = normal.try_inverse().ok_or(DrmError::Singular { pivot: 0, dim: p })?;
    let inv = (&inv + inv.transpose()) * 0.5;
    let z = &inv * rhs;

    let r0 = &b0 * &z - &x0;
    let s0 = r0.component_mul(&r0).dot(&w0);
    let s1 = (&b1 * &z).norm_squared();
    let s2 = (&b2 * &z).norm_squared();
    let n = sorted.len() + b1_rows.len() + b2_rows.len();
    let sigma2 = (n > p).then(|| (s0 + lambda1 * s1 + lambda2 * s2) / (n - p) as f64);
    Ok(OracleFit { z: z.iter().copied().collect(), columns, precision_inverse: inv, sigma2, s0, s1, s2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::DesignSystem;
    use crate::solver::solve;

    fn stat(i: usize, j: usize, off: f64, x: f64) -> CellStat {
        CellStat { cell: CellIndex::new(i, j), x_mean: x, x_var: 0.0, y_mean: i as f64 + off, a_mean: j as f64, n: 10 }
    }

    #[test]
    fn agrees_with_sparse_solver() {
        let f = ObservationalFrame::with_size(0, 0, 4, 5).unwrap();
        let mut cells = Vec::new();
        for i in [0, 2, 4] {
            for j in 0..=5 {
                cells.push(stat(i, j, 0.1 + 0.03 * j as f64, 24.0 + 0.2 * j as f64 + 0.1 * ((i * j) % 3) as f64));
            }
        }
        let d = build_domain(&f, &cells, DomainSelection::AllCohorts).unwrap();
        let sys = DesignSystem::assemble(&cells, &d, true).unwrap();
        let sol = solve(&sys, &d, 0.5, 2.0).unwrap();
        let or = brute_force_fit_cells(&cells, &d, 0.5, 2.0, true).unwrap();
        let map = d.index_map();
        for (a, &g) in or.columns.iter().enumerate() {
            let c = map.to_compact(g).unwrap();
            assert!((sol.z_hat[c] - or.z[a]).abs() < 1e-9 * or.z[a].abs().max(1.0));
        }
        assert!((sol.sigma2_hat.unwrap() - or.sigma2.unwrap()).abs() < 1e-10);
    }

    #[test]
    fn too_few_points_is_singular() {
        let f = ObservationalFrame::with_size(0, 0, 2, 2).unwrap();
        let cells = [stat(1, 1, 0.5, 1.0)];
        let d = build_domain(&f, &cells, DomainSelection::AllCohorts).unwrap();
        assert!(matches!(brute_force_fit_cells(&cells, &d, 1.0, 1.0, false), Err(DrmError::Singular { .. })));
    }
}
