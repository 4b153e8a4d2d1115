//! Year × age grid geometry.
//!
//! The plane is tiled by unit parallelograms `P(i, j)`: calendar time `y` in
//! `[i, i + 1)` and age `a` in `((j - 1) + (y - i), j + (y - i)]`, so every
//! element follows a birth-cohort diagonal for one year. C-trends `u(i, j)`
//! are constant on an element; levels are linear in `y` inside it with slope
//! `u(i, j)`.
//!
//! After the frame is built all indices are relative: row `i` runs over
//! `0..=I` (calendar years) and column `j` over `0..=J` (ages) for C-trends,
//! and one further row and column for levels. Conversion back to calendar
//! years and ages happens only through [`ObservationalFrame::year_of`] and
//! [`ObservationalFrame::age_of`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::AnalysisDomain;
use crate::error::{DrmError, Result};

/// Absolute element containing `(y, a)`: `i = floor(y)`, `j = ceil(a - (y - i))`.
///
/// The left and upper boundaries of an element are excluded, so a point with
/// `a - (y - i)` exactly equal to `j - 1` belongs to element `j - 1`.
pub fn cell_of(y: f64, a: f64) -> (i64, i64) {
    let i = y.floor();
    let j = (a - (y - i)).ceil();
    (i as i64, j as i64)
}

/// Membership test for absolute element `(i, j)`, written directly from the
/// element definition. Used by tests and data validation.
pub fn in_cell(y: f64, a: f64, i: i64, j: i64) -> bool {
    let (fi, fj) = (i as f64, j as f64);
    if !(y >= fi && y < fi + 1.0) {
        return false;
    }
    let shift = y - fi;
    a > (fj - 1.0) + shift && a <= fj + shift
}

/// Relative grid cell. Row `i` is calendar time, column `j` is age.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub i: usize,
    pub j: usize,
}

impl CellIndex {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }

    /// Steps to the low-left boundary along the cohort diagonal.
    pub fn depth(self) -> usize {
        self.i.min(self.j)
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

/// Rectangular analysis window in calendar years and ages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationalFrame {
    pub y_min: f64,
    pub y_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    /// Absolute element of the `(y_min, a_min)` corner.
    pub i_min: i64,
    pub j_min: i64,
    /// `I = i_max - i_min`.
    pub i_max_rel: usize,
    /// `J = j_max - j_min`.
    pub j_max_rel: usize,
}

impl ObservationalFrame {
    pub fn new(y_min: f64, y_max: f64, a_min: f64, a_max: f64) -> Result<Self> {
        let finite = [y_min, y_max, a_min, a_max].iter().all(|v| v.is_finite());
        if !finite {
            return Err(DrmError::InvalidFrame("non-finite bound".into()));
        }
        if y_min >= y_max {
            return Err(DrmError::InvalidFrame(format!("y_min {y_min} >= y_max {y_max}")));
        }
        if a_min >= a_max {
            return Err(DrmError::InvalidFrame(format!("a_min {a_min} >= a_max {a_max}")));
        }
        let (i_min, j_min) = cell_of(y_min, a_min);
        let (i_max, j_max) = cell_of(y_max, a_max);
        if i_max < i_min || j_max < j_min {
            return Err(DrmError::InvalidFrame(format!(
                "corner cells ({i_min}, {j_min}) and ({i_max}, {j_max}) are not ordered"
            )));
        }
        Ok(Self {
            y_min,
            y_max,
            a_min,
            a_max,
            i_min,
            j_min,
            i_max_rel: (i_max - i_min) as usize,
            j_max_rel: (j_max - j_min) as usize,
        })
    }

    /// Frame whose relative grid is exactly `(I + 1) × (J + 1)` C-trend cells,
    /// anchored at calendar year `year0` and age `age0`.
    pub fn with_size(year0: i64, age0: i64, i_max_rel: usize, j_max_rel: usize) -> Result<Self> {
        // the far corner sits mid-element so zero-width grids stay valid
        let f = Self::new(
            year0 as f64,
            (year0 + i_max_rel as i64) as f64 + 0.5,
            age0 as f64,
            (age0 + j_max_rel as i64) as f64 + 0.5,
        )?;
        debug_assert_eq!((f.i_max_rel, f.j_max_rel), (i_max_rel, j_max_rel));
        Ok(f)
    }

    pub fn contains(&self, y: f64, a: f64) -> bool {
        y >= self.y_min && y <= self.y_max && a >= self.a_min && a <= self.a_max
    }

    /// Relative element containing `(y, a)`.
    pub fn cell_of(&self, y: f64, a: f64) -> Result<CellIndex> {
        if !self.contains(y, a) {
            return Err(DrmError::OutOfFrame { year: y, age: a });
        }
        let (i, j) = cell_of(y, a);
        let (ri, rj) = (i - self.i_min, j - self.j_min);
        if ri < 0 || rj < 0 || ri as usize > self.i_max_rel || rj as usize > self.j_max_rel {
            return Err(DrmError::OutOfFrame { year: y, age: a });
        }
        Ok(CellIndex::new(ri as usize, rj as usize))
    }

    /// Number of C-trend rows, `I + 1`.
    pub fn rows(&self) -> usize {
        self.i_max_rel + 1
    }

    /// Number of C-trend columns, `J + 1`.
    pub fn cols(&self) -> usize {
        self.j_max_rel + 1
    }

    pub fn u_len(&self) -> usize {
        self.rows() * self.cols()
    }

    /// `I + J + 3` boundary levels.
    pub fn v0_len(&self) -> usize {
        self.i_max_rel + self.j_max_rel + 3
    }

    pub fn z_len(&self) -> usize {
        self.v0_len() + self.u_len()
    }

    pub fn in_u(&self, c: CellIndex) -> bool {
        c.i <= self.i_max_rel && c.j <= self.j_max_rel
    }

    pub fn in_v(&self, c: CellIndex) -> bool {
        c.i <= self.i_max_rel + 1 && c.j <= self.j_max_rel + 1
    }

    /// Position of the cell's cohort in the boundary vector, `(I + 1) - i + j`.
    pub fn cohort_index(&self, c: CellIndex) -> usize {
        self.i_max_rel + 1 + c.j - c.i
    }

    /// Low-left boundary cell of cohort `k` (inverse of [`Self::cohort_index`]
    /// on the boundary).
    pub fn boundary_cell(&self, k: usize) -> CellIndex {
        let corner = self.i_max_rel + 1;
        if k <= corner {
            CellIndex::new(corner - k, 0)
        } else {
            CellIndex::new(0, k - corner)
        }
    }

    /// Row-major position of a C-trend cell inside the `u` block.
    pub fn u_offset(&self, c: CellIndex) -> usize {
        c.i * self.cols() + c.j
    }

    pub fn u_cell(&self, offset: usize) -> CellIndex {
        CellIndex::new(offset / self.cols(), offset % self.cols())
    }

    /// Calendar year at the start of row `i`.
    pub fn year_of(&self, i: usize) -> i64 {
        self.i_min + i as i64
    }

    /// Age label (full years) of column `j`.
    pub fn age_of(&self, j: usize) -> i64 {
        self.j_min + j as i64
    }

    /// Birth year of the cohort passing through cell `c`.
    pub fn birth_year(&self, c: CellIndex) -> i64 {
        self.year_of(c.i) - self.age_of(c.j)
    }

    /// Within-element time offset `y - i` for an absolute calendar time.
    pub fn year_offset(&self, c: CellIndex, y: f64) -> f64 {
        y - self.year_of(c.i) as f64
    }
}

/// Full-scale parameter vector: boundary levels followed by C-trends.
///
/// `v0` is ordered `v(I+1, 0), …, v(0, 0), …, v(0, J+1)` (left edge top-down,
/// then bottom edge left to right), so slot `k` is the cohort with
/// [`ObservationalFrame::cohort_index`] `k`. `u` is row-major over `0..=I` × `0..=J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZVector {
    pub v0: Vec<f64>,
    pub u: Vec<f64>,
}

impl ZVector {
    pub fn zeros(frame: &ObservationalFrame) -> Self {
        Self { v0: vec![0.0; frame.v0_len()], u: vec![0.0; frame.u_len()] }
    }

    pub fn from_fn(
        frame: &ObservationalFrame,
        v0: impl Fn(usize) -> f64,
        u: impl Fn(CellIndex) -> f64,
    ) -> Self {
        Self {
            v0: (0..frame.v0_len()).map(v0).collect(),
            u: (0..frame.u_len()).map(|o| u(frame.u_cell(o))).collect(),
        }
    }

    pub fn check(&self, frame: &ObservationalFrame) -> Result<()> {
        if self.v0.len() != frame.v0_len() || self.u.len() != frame.u_len() {
            return Err(DrmError::Dimension(format!(
                "z has ({}, {}) components, frame expects ({}, {})",
                self.v0.len(),
                self.u.len(),
                frame.v0_len(),
                frame.u_len()
            )));
        }
        Ok(())
    }

    /// Concatenated `(v0 | u)`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.v0.iter().chain(self.u.iter()).copied().collect()
    }

    pub fn u_at(&self, frame: &ObservationalFrame, c: CellIndex) -> f64 {
        self.u[frame.u_offset(c)]
    }
}

/// Level `v(i, j)` for a cell of the extended grid: boundary value of its
/// cohort plus the C-trends of every element passed on the way.
pub fn forward_level(
    z: &ZVector,
    domain: &AnalysisDomain,
    cell: CellIndex,
) -> Result<f64> {
    let frame = domain.frame();
    if !frame.in_v(cell) {
        return Err(DrmError::CellNotInDomain(cell));
    }
    let k = frame.cohort_index(cell);
    if !domain.contains_v0(k) {
        return Err(DrmError::CellNotInDomain(frame.boundary_cell(k)));
    }
    let mut level = z.v0[k];
    for m in 1..=cell.depth() {
        let prev = CellIndex::new(cell.i - m, cell.j - m);
        if !domain.contains_u(prev) {
            return Err(DrmError::PathOutsideDomain { cell, missing: prev });
        }
        level += z.u[frame.u_offset(prev)];
    }
    Ok(level)
}

/// Levels for a list of cells; fails on the first cell whose path leaves the domain.
pub fn forward_levels(
    z: &ZVector,
    domain: &AnalysisDomain,
    cells: &[CellIndex],
) -> Result<Vec<f64>> {
    z.check(domain.frame())?;
    cells.iter().map(|&c| forward_level(z, domain, c)).collect()
}

/// Level surface over the extended grid `0..=I+1` × `0..=J+1`, row-major;
/// `None` where the cohort path is not covered by the domain.
pub fn level_surface(z: &ZVector, domain: &AnalysisDomain) -> Vec<Option<f64>> {
    let frame = domain.frame();
    let (rows, cols) = (frame.i_max_rel + 2, frame.j_max_rel + 2);
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(forward_level(z, domain, CellIndex::new(i, j)).ok());
        }
    }
    out
}

/// Model value at an arbitrary point: `v(i, j) + (y - i) u(i, j)`.
pub fn predict_observation(z: &ZVector, domain: &AnalysisDomain, y: f64, a: f64) -> Result<f64> {
    let frame = domain.frame();
    let cell = frame.cell_of(y, a)?;
    if !domain.contains_u(cell) {
        return Err(DrmError::CellNotInDomain(cell));
    }
    let base = forward_level(z, domain, cell)?;
    Ok(base + frame.year_offset(cell, y) * z.u[frame.u_offset(cell)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(i: usize, j: usize) -> ObservationalFrame {
        ObservationalFrame::with_size(0, 0, i, j).unwrap()
    }

    #[test]
    fn cell_of_examples() {
        assert_eq!(cell_of(2.0, 3.0), (2, 3));
        assert_eq!(cell_of(2.5, 3.2), (2, 3));
        assert!(in_cell(2.5, 3.2, 2, 3));
        assert_eq!(cell_of(2.5, 2.5), (2, 2));
        assert!(in_cell(2.5, 2.5, 2, 2));
        assert!(!in_cell(2.5, 2.5, 2, 3));
    }

    #[test]
    fn frame_rejects_outside_points() {
        let f = frame(3, 3);
        assert_eq!(f.cell_of(-0.1, 1.0), Err(DrmError::OutOfFrame { year: -0.1, age: 1.0 }));
        assert!(f.cell_of(1.0, 3.5).is_err());
        assert!(ObservationalFrame::new(2.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn upper_edge_maps_to_last_row() {
        let f = ObservationalFrame::new(1972.0, 2003.0, 25.0, 75.0).unwrap();
        assert_eq!((f.i_max_rel, f.j_max_rel), (31, 50));
        assert_eq!(f.cell_of(2003.0, 75.0).unwrap(), CellIndex::new(31, 50));
        assert_eq!(f.cell_of(1972.3, 25.0).unwrap(), CellIndex::new(0, 0));
    }

    #[test]
    fn cohort_index_examples() {
        let f = frame(3, 3);
        assert_eq!(f.cohort_index(CellIndex::new(0, 0)), 4);
        assert_eq!(f.cohort_index(CellIndex::new(2, 2)), 4);
        // boundary order: v(4,0), v(3,0), v(2,0), v(1,0), v(0,0), ...
        assert_eq!(f.cohort_index(CellIndex::new(3, 0)), 1);
        for k in 0..f.v0_len() {
            assert_eq!(f.cohort_index(f.boundary_cell(k)), k);
        }
    }

    #[test]
    fn zvector_layout() {
        let f = frame(2, 3);
        let z = ZVector::zeros(&f);
        assert_eq!(z.v0.len(), 2 + 3 + 3);
        assert_eq!(z.u.len(), 3 * 4);
        assert_eq!(f.z_len(), 8 + 12);
        assert_eq!(f.u_cell(f.u_offset(CellIndex::new(1, 2))), CellIndex::new(1, 2));
    }

    #[test]
    fn stationary_levels() {
        let f = frame(4, 4);
        let d = AnalysisDomain::full(f);
        let z = ZVector::from_fn(&f, |_| 23.5, |_| 0.0);
        for v in level_surface(&z, &d) {
            assert_eq!(v, Some(23.5));
        }
    }

    #[test]
    fn constant_trend_level() {
        let f = frame(5, 5);
        let d = AnalysisDomain::full(f);
        let z = ZVector::from_fn(&f, |_| 20.0, |_| 0.2);
        let v = forward_level(&z, &d, CellIndex::new(4, 5)).unwrap();
        assert!((v - 20.8).abs() < 1e-12);
    }

    #[test]
    fn single_cohort_track() {
        let f = frame(3, 3);
        let d = AnalysisDomain::full(f);
        let mut z = ZVector::zeros(&f);
        let k = f.cohort_index(CellIndex::new(0, 0));
        z.v0[k] = 24.0;
        for (m, u) in [0.5, 0.3, -0.1].into_iter().enumerate() {
            z.u[f.u_offset(CellIndex::new(m, m))] = u;
        }
        let track: Vec<f64> = (0..4)
            .map(|m| forward_level(&z, &d, CellIndex::new(m, m)).unwrap())
            .collect();
        let expected = [24.0, 24.5, 24.8, 24.7];
        for (a, b) in track.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn path_outside_domain_names_missing_cell() {
        let f = frame(3, 3);
        let mut mask = vec![true; f.u_len()];
        mask[f.u_offset(CellIndex::new(1, 1))] = false;
        let d = AnalysisDomain::from_mask(f, mask).unwrap();
        let z = ZVector::zeros(&f);
        let err = forward_level(&z, &d, CellIndex::new(3, 3)).unwrap_err();
        assert_eq!(
            err,
            DrmError::PathOutsideDomain {
                cell: CellIndex::new(3, 3),
                missing: CellIndex::new(1, 1)
            }
        );
    }

    #[test]
    fn predict_observation_examples() {
        let f = frame(3, 3);
        let d = AnalysisDomain::full(f);
        let mut z = ZVector::from_fn(&f, |_| 25.0, |_| 0.0);
        let c = CellIndex::new(0, 2);
        z.u[f.u_offset(c)] = 0.4;
        assert_eq!(predict_observation(&z, &d, 0.0, 2.0).unwrap(), 25.0);
        assert!((predict_observation(&z, &d, 0.5, 2.0).unwrap() - 25.2).abs() < 1e-12);
        // same y, different a inside the element
        assert_eq!(
            predict_observation(&z, &d, 0.5, 1.6).unwrap(),
            predict_observation(&z, &d, 0.5, 2.4).unwrap()
        );
    }

    proptest! {
        #[test]
        fn cell_of_is_a_partition(y in 0.0f64..6.0, a in 0.0f64..6.0, snap in 0u8..4) {
            // include exact boundary values
            let (y, a) = match snap {
                0 => (y.floor(), a),
                1 => (y, a.floor() + (y - y.floor())),
                2 => (y.floor(), a.floor()),
                _ => (y, a),
            };
            let (i, j) = cell_of(y, a);
            prop_assert!(in_cell(y, a, i, j));
            let mut hits = 0;
            for di in -1..=1 {
                for dj in -2..=2 {
                    if in_cell(y, a, i + di, j + dj) {
                        hits += 1;
                    }
                }
            }
            prop_assert_eq!(hits, 1);
        }

        #[test]
        fn cohort_index_constant_on_diagonals(i in 0usize..6, j in 0usize..6, m in 0usize..4) {
            let f = frame(9, 9);
            let a = CellIndex::new(i, j);
            let b = CellIndex::new(i + m, j + m);
            prop_assert_eq!(f.cohort_index(a), f.cohort_index(b));
            let other = CellIndex::new(i, j + 1);
            prop_assert_ne!(f.cohort_index(a), f.cohort_index(other));
        }

        #[test]
        fn recursion_holds(seed in 0u64..500) {
            let f = frame(4, 5);
            let d = AnalysisDomain::full(f);
            let h = |x: u64| ((x.wrapping_mul(6364136223846793005).wrapping_add(seed)) % 1000) as f64 / 250.0 - 2.0;
            let z = ZVector::from_fn(&f, |k| 20.0 + h(k as u64), |c| h((c.i * 31 + c.j * 7 + 100) as u64));
            for i in 0..=f.i_max_rel {
                for j in 0..=f.j_max_rel {
                    let c = CellIndex::new(i, j);
                    let next = forward_level(&z, &d, CellIndex::new(i + 1, j + 1)).unwrap();
                    let here = forward_level(&z, &d, c).unwrap();
                    prop_assert!((next - (here + z.u_at(&f, c))).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn prediction_right_derivative_is_trend(y0 in 0.05f64..2.9, off in 0.0f64..0.99) {
            let f = frame(3, 4);
            let d = AnalysisDomain::full(f);
            let z = ZVector::from_fn(&f, |k| 22.0 + 0.3 * k as f64, |c| 0.1 * c.i as f64 - 0.05 * c.j as f64 + 0.3);
            let a = 2.0 + off;
            let (y1, a1) = (y0 + 1e-6, a + 1e-6);
            if f.cell_of(y0, a).unwrap() == f.cell_of(y1, a1).unwrap() {
                let c = f.cell_of(y0, a).unwrap();
                let slope = (predict_observation(&z, &d, y1, a1).unwrap()
                    - predict_observation(&z, &d, y0, a).unwrap()) / 1e-6;
                prop_assert!((slope - z.u_at(&f, c)).abs() < 1e-4);
            }
        }
    }
}
