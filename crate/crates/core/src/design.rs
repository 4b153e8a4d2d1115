//! Stacked least-squares system.
//!
//! Three blocks share the compact parameter columns of an
//! [`AnalysisDomain`]:
//!
//! * `B0`: one row per data cell, `v0(k) + Σ_{m=1..δ} u(i-m, j-m) + (ȳ - i)·u(i, j)`;
//! * `B1`: second differences `(1, -2, 1)` of C-trends along rows, then along columns;
//! * `B2`: second differences of consecutive boundary levels.
//!
//! The weighted criterion is `S(z) = S0(z) + λ1·S1(z) + λ2·S2(z)` with
//! `Sk = |Bk z - xk|²` (zero targets for the smoothing blocks).

use std::io::{self, Write};

use crate::domain::AnalysisDomain;
use crate::error::{DrmError, Result};
use crate::geometry::CellIndex;
use crate::ingest::CellStat;
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSystem {
    pub b0: SparseMatrix,
    pub x0: Vec<f64>,
    /// Row weights of the data block (all ones unless weighting by cell count).
    pub data_weights: Vec<f64>,
    pub b1: SparseMatrix,
    pub b2: SparseMatrix,
    /// Cell behind each data row.
    pub data_cells: Vec<CellIndex>,
    pub warnings: Vec<String>,
}

/// Data block: one row per cell, in cell scan order.
pub fn assemble_b0(cells: &[CellStat], domain: &AnalysisDomain) -> Result<(SparseMatrix, Vec<f64>)> {
    let frame = domain.frame();
    let mut order: Vec<&CellStat> = cells.iter().collect();
    order.sort_by_key(|c| c.cell);
    let mut b0 = SparseMatrix::new(domain.dim());
    let mut x0 = Vec::with_capacity(cells.len());
    for stat in order {
        let cell = stat.cell;
        let here = domain.u_param(cell).ok_or(DrmError::CellNotInDomain(cell))?;
        let k = frame.cohort_index(cell);
        let slot = domain
            .v0_param(k)
            .ok_or(DrmError::PathOutsideDomain { cell, missing: frame.boundary_cell(k) })?;
        let mut row = Vec::with_capacity(cell.depth() + 2);
        row.push((slot, 1.0));
        for m in 1..=cell.depth() {
            let prev = CellIndex::new(cell.i - m, cell.j - m);
            let p = domain.u_param(prev).ok_or(DrmError::PathOutsideDomain { cell, missing: prev })?;
            row.push((p, 1.0));
        }
        // kept even when zero so the row pattern depends only on geometry
        row.push((here, frame.year_offset(cell, stat.y_mean)));
        b0.push_row(row);
        x0.push(stat.x_mean);
    }
    Ok((b0, x0))
}

/// C-trend curvature block: horizontal triples first, then vertical triples.
/// Triples touching a cell outside the domain are omitted.
pub fn assemble_b1(domain: &AnalysisDomain) -> SparseMatrix {
    let frame = domain.frame();
    let mut b1 = SparseMatrix::new(domain.dim());
    let triple = |cells: [CellIndex; 3]| -> Option<Vec<(usize, f64)>> {
        let mut row = Vec::with_capacity(3);
        for (c, w) in cells.into_iter().zip([1.0, -2.0, 1.0]) {
            row.push((domain.u_param(c)?, w));
        }
        Some(row)
    };
    for i in 0..=frame.i_max_rel {
        for j in 1..frame.j_max_rel {
            let cells = [CellIndex::new(i, j - 1), CellIndex::new(i, j), CellIndex::new(i, j + 1)];
            if let Some(row) = triple(cells) {
                b1.push_row(row);
            }
        }
    }
    for j in 0..=frame.j_max_rel {
        for i in 1..frame.i_max_rel {
            let cells = [CellIndex::new(i - 1, j), CellIndex::new(i, j), CellIndex::new(i + 1, j)];
            if let Some(row) = triple(cells) {
                b1.push_row(row);
            }
        }
    }
    b1
}

/// Boundary-level curvature block over the segment `i_l..=i_r`.
pub fn assemble_b2(domain: &AnalysisDomain) -> (SparseMatrix, Option<String>) {
    let (i_l, i_r) = domain.v0_segment();
    let mut b2 = SparseMatrix::new(domain.dim());
    if i_r < i_l + 2 {
        let warn = format!("boundary segment [{i_l}, {i_r}] has no interior points; no level smoothing");
        return (b2, Some(warn));
    }
    for k in i_l + 1..i_r {
        let p = |k| domain.v0_param(k).expect("segment slot");
        b2.push_row(vec![(p(k - 1), 1.0), (p(k), -2.0), (p(k + 1), 1.0)]);
    }
    (b2, None)
}

impl DesignSystem {
    pub fn assemble(cells: &[CellStat], domain: &AnalysisDomain, weight_by_count: bool) -> Result<Self> {
        let (b0, x0) = assemble_b0(cells, domain)?;
        let mut order: Vec<&CellStat> = cells.iter().collect();
        order.sort_by_key(|c| c.cell);
        let data_weights = if weight_by_count {
            order.iter().map(|c| c.n as f64).collect()
        } else {
            vec![1.0; order.len()]
        };
        let data_cells = order.iter().map(|c| c.cell).collect();
        let b1 = assemble_b1(domain);
        let (b2, warn) = assemble_b2(domain);
        Ok(Self { b0, x0, data_weights, b1, b2, data_cells, warnings: warn.into_iter().collect() })
    }

    pub fn dim(&self) -> usize {
        self.b0.ncols()
    }

    /// `n0 + n1 + n2`.
    pub fn total_rows(&self) -> usize {
        self.b0.nrows() + self.b1.nrows() + self.b2.nrows()
    }

    pub fn s0(&self, z: &[f64]) -> f64 {
        (0..self.b0.nrows())
            .map(|r| self.data_weights[r] * (self.b0.row_dot(r, z) - self.x0[r]).powi(2))
            .sum()
    }

    pub fn s1(&self, z: &[f64]) -> f64 {
        self.b1.mul_vec(z).iter().map(|v| v * v).sum()
    }

    pub fn s2(&self, z: &[f64]) -> f64 {
        self.b2.mul_vec(z).iter().map(|v| v * v).sum()
    }

    pub fn objective(&self, z: &[f64], lambda1: f64, lambda2: f64) -> f64 {
        self.s0(z) + lambda1 * self.s1(z) + lambda2 * self.s2(z)
    }

    /// Single weighted block `[√W0·B0; √λ1·B1; √λ2·B2]` with target `[√W0·x0; 0; 0]`.
    pub fn stack(&self, lambda1: f64, lambda2: f64) -> Result<StackedSystem> {
        check_lambda("lambda1", lambda1)?;
        check_lambda("lambda2", lambda2)?;
        let w0: Vec<f64> = self.data_weights.iter().map(|w| w.sqrt()).collect();
        let b = self
            .b0
            .scale_rows(&w0)
            .vstack(&self.b1.scale_rows(&vec![lambda1.sqrt(); self.b1.nrows()]))
            .vstack(&self.b2.scale_rows(&vec![lambda2.sqrt(); self.b2.nrows()]));
        let mut x: Vec<f64> = self.x0.iter().zip(&w0).map(|(x, w)| x * w).collect();
        x.resize(self.total_rows(), 0.0);
        Ok(StackedSystem { b, x })
    }

    /// Triplet dump of the unweighted blocks and the data targets.
    pub fn write_triplets<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "# columns {}", self.dim())?;
        writeln!(out, "# blocks B0 {} B1 {} B2 {}", self.b0.nrows(), self.b1.nrows(), self.b2.nrows())?;
        self.b0.write_triplets("B0", out)?;
        self.b1.write_triplets("B1", out)?;
        self.b2.write_triplets("B2", out)?;
        for (r, (x, w)) in self.x0.iter().zip(&self.data_weights).enumerate() {
            writeln!(out, "x0 {r} {x:e} {w:e}")?;
        }
        Ok(())
    }
}

pub(crate) fn check_lambda(name: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(DrmError::InvalidParameter { name, reason: format!("must be finite and nonnegative, got {v}") })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub b: SparseMatrix,
    pub x: Vec<f64>,
}

impl StackedSystem {
    pub fn objective(&self, z: &[f64]) -> f64 {
        self.b.mul_vec(z).iter().zip(&self.x).map(|(bz, x)| (bz - x).powi(2)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, DomainSelection};
    use crate::geometry::{predict_observation, ObservationalFrame, ZVector};

    fn stat(i: usize, j: usize, y_off: f64, x: f64) -> CellStat {
        CellStat { cell: CellIndex::new(i, j), x_mean: x, x_var: 0.0, y_mean: i as f64 + y_off, a_mean: j as f64, n: 8 }
    }

    #[test]
    fn b0_rows_by_hand() {
        let f = ObservationalFrame::with_size(0, 0, 3, 3).unwrap();
        let d = AnalysisDomain::full(f);
        let (b0, x0) = assemble_b0(&[stat(0, 0, 0.4, 24.0), stat(2, 2, 0.0, 25.0)], &d).unwrap();
        assert_eq!(x0, vec![24.0, 25.0]);
        let k = f.cohort_index(CellIndex::new(0, 0));
        let u = |i, j| d.u_param(CellIndex::new(i, j)).unwrap();
        assert_eq!(b0.row(0), &[(k, 1.0), (u(0, 0), 0.4)]);
        let mut expected = vec![(k, 1.0), (u(0, 0), 1.0), (u(1, 1), 1.0), (u(2, 2), 0.0)];
        expected.sort_by_key(|e| e.0);
        assert_eq!(b0.row(1), expected.as_slice());
    }

    #[test]
    fn b0_matches_forward_model() {
        let f = ObservationalFrame::with_size(0, 0, 4, 5).unwrap();
        let d = AnalysisDomain::full(f);
        let cells: Vec<CellStat> = (0..=4)
            .flat_map(|i| (0..=5).map(move |j| stat(i, j, 0.05 * ((i + 2 * j) % 9) as f64, 25.0)))
            .collect();
        let (b0, _) = assemble_b0(&cells, &d).unwrap();
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..100 {
            let v0 = (0..f.v0_len()).map(|_| 20.0 + next()).collect();
            let u = (0..f.u_len()).map(|_| next()).collect();
            let z = ZVector { v0, u };
            let flat = z.to_vec();
            for (r, c) in cells.iter().enumerate() {
                let a = c.cell.j as f64 + (c.y_mean - c.cell.i as f64);
                let pred = predict_observation(&z, &d, c.y_mean, a).unwrap();
                assert!((pred - b0.row_dot(r, &flat)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn b0_row_sums() {
        let f = ObservationalFrame::with_size(0, 0, 4, 4).unwrap();
        let cells = [stat(3, 2, 0.3, 1.0), stat(4, 4, 0.7, 1.0), stat(1, 3, 0.0, 1.0)];
        let d = build_domain(&f, &cells, DomainSelection::AllCohorts).unwrap();
        let (b0, _) = assemble_b0(&cells, &d).unwrap();
        let mut sorted = cells.to_vec();
        sorted.sort_by_key(|c| c.cell);
        for (r, c) in sorted.iter().enumerate() {
            let row = b0.row(r);
            let ones = row.iter().filter(|e| e.1 == 1.0).count();
            let frac = c.y_mean - c.cell.i as f64;
            assert_eq!(row.len(), 2 + c.cell.depth());
            assert!(ones > c.cell.depth());
            assert!((row.iter().map(|e| e.1).sum::<f64>() - (1.0 + c.cell.depth() as f64 + frac)).abs() < 1e-12);
        }
    }

    #[test]
    fn path_outside_domain_is_an_error() {
        let f = ObservationalFrame::with_size(0, 0, 3, 3).unwrap();
        let d = build_domain(&f, &[stat(1, 1, 0.0, 1.0)], DomainSelection::AllCohorts).unwrap();
        assert!(matches!(
            assemble_b0(&[stat(2, 2, 0.0, 1.0)], &d),
            Err(DrmError::CellNotInDomain(_))
        ));
    }

    #[test]
    fn b1_counts() {
        let f = ObservationalFrame::with_size(0, 0, 2, 2).unwrap();
        let d = AnalysisDomain::full(f);
        let b1 = assemble_b1(&d);
        assert_eq!(b1.nrows(), 6);
        let strip = AnalysisDomain::full(ObservationalFrame::with_size(0, 0, 0, 6).unwrap());
        let b1 = assemble_b1(&strip);
        assert_eq!(b1.nrows(), 5);
        let z: Vec<f64> = (0..strip.dim()).map(|p| if p < strip.v0_count() { p as f64 } else { 0.37 }).collect();
        assert!(b1.mul_vec(&z).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn b2_counts() {
        let f = ObservationalFrame::with_size(0, 0, 1, 1).unwrap();
        // segment of 5 slots
        let d = AnalysisDomain::full(f);
        assert_eq!(d.v0_count(), 5);
        let (b2, warn) = assemble_b2(&d);
        assert_eq!(b2.nrows(), 3);
        assert!(warn.is_none());
        let z: Vec<f64> = (0..d.dim()).map(|p| 3.0 - 0.25 * p as f64).collect();
        assert!(b2.mul_vec(&z).iter().all(|&v| v == 0.0));

        let f = ObservationalFrame::with_size(0, 0, 3, 3).unwrap();
        let cells = [stat(0, 1, 0.0, 1.0), stat(0, 2, 0.0, 1.0)];
        let d = build_domain(&f, &cells, DomainSelection::AllCohorts).unwrap();
        assert_eq!(d.v0_count(), 2);
        let (b2, warn) = assemble_b2(&d);
        assert_eq!(b2.nrows(), 0);
        assert!(warn.is_some());
    }

    #[test]
    fn stacking_rejects_negative_weights() {
        let f = ObservationalFrame::with_size(0, 0, 2, 2).unwrap();
        let sys = DesignSystem::assemble(&[stat(1, 1, 0.5, 25.0)], &AnalysisDomain::full(f), false).unwrap();
        assert!(sys.stack(-1.0, 1.0).is_err());
        assert!(sys.stack(1.0, f64::NAN).is_err());
        let z = vec![0.5; sys.dim()];
        assert_eq!(sys.stack(0.0, 0.0).unwrap().objective(&z), sys.s0(&z));
    }
}
