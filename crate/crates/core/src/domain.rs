//! Analysis domain: which C-trend cells and which boundary levels are estimated.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{DrmError, Result};
use crate::geometry::{CellIndex, ObservationalFrame};
use crate::ingest::CellStat;

/// Cohort segment selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DomainSelection {
    /// Every cohort segment (`Domain=1`).
    #[default]
    AllCohorts,
    /// Only cohort segments carrying two or more data cells (`Domain=2`).
    MultiPoint,
}

impl DomainSelection {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Self::AllCohorts),
            2 => Ok(Self::MultiPoint),
            other => Err(DrmError::InvalidParameter {
                name: "domain",
                reason: format!("expected 1 or 2, got {other}"),
            }),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::AllCohorts => 1,
            Self::MultiPoint => 2,
        }
    }
}

/// Embedding of compact analysis parameters into the full `z` layout.
///
/// Compact order is the full order restricted to participating components:
/// boundary levels `i_l..=i_r`, then included C-trend cells row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexMap {
    full_to_compact: Vec<Option<usize>>,
    compact_to_full: Vec<usize>,
}

impl IndexMap {
    pub fn compact_len(&self) -> usize {
        self.compact_to_full.len()
    }

    pub fn full_len(&self) -> usize {
        self.full_to_compact.len()
    }

    pub fn to_compact(&self, full: usize) -> Option<usize> {
        self.full_to_compact[full]
    }

    pub fn to_full(&self, compact: usize) -> usize {
        self.compact_to_full[compact]
    }

    /// Scatter compact values to full scale; non-participating components are `None`.
    pub fn scatter(&self, compact: &[f64]) -> Vec<Option<f64>> {
        self.full_to_compact.iter().map(|c| c.map(|c| compact[c])).collect()
    }

    /// Gather participating components from a full-scale vector.
    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.compact_to_full.iter().map(|&f| full[f]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisDomain {
    frame: ObservationalFrame,
    u_mask: Vec<bool>,
    i_l: usize,
    i_r: usize,
    u_count: usize,
    map: IndexMap,
}

impl AnalysisDomain {
    /// Every C-trend cell and every boundary level.
    pub fn full(frame: ObservationalFrame) -> Self {
        let mask = vec![true; frame.u_len()];
        Self::with_segment(frame, mask, 0, frame.v0_len() - 1)
    }

    /// Domain from an explicit C-trend mask; the boundary segment spans the
    /// cohorts of the included cells.
    pub fn from_mask(frame: ObservationalFrame, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != frame.u_len() {
            return Err(DrmError::Dimension(format!(
                "mask has {} entries, frame has {} cells",
                mask.len(),
                frame.u_len()
            )));
        }
        let cohorts = mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(o, _)| frame.cohort_index(frame.u_cell(o)));
        let (lo, hi) = cohorts.fold((usize::MAX, 0), |(lo, hi), k| (lo.min(k), hi.max(k)));
        if lo == usize::MAX {
            return Err(DrmError::EmptyDomain);
        }
        Ok(Self::with_segment(frame, mask, lo, hi))
    }

    fn with_segment(frame: ObservationalFrame, mask: Vec<bool>, i_l: usize, i_r: usize) -> Self {
        let v0_len = frame.v0_len();
        let mut full_to_compact = vec![None; frame.z_len()];
        let mut compact_to_full = Vec::new();
        compact_to_full.extend(i_l..=i_r);
        for (c, &k) in compact_to_full.iter().enumerate() {
            full_to_compact[k] = Some(c);
        }
        for (o, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            full_to_compact[v0_len + o] = Some(compact_to_full.len());
            compact_to_full.push(v0_len + o);
        }
        let u_count = mask.iter().filter(|&&m| m).count();
        Self { frame, u_mask: mask, i_l, i_r, u_count, map: IndexMap { full_to_compact, compact_to_full } }
    }

    pub fn frame(&self) -> &ObservationalFrame {
        &self.frame
    }

    pub fn u_mask(&self) -> &[bool] {
        &self.u_mask
    }

    pub fn contains_u(&self, c: CellIndex) -> bool {
        self.frame.in_u(c) && self.u_mask[self.frame.u_offset(c)]
    }

    pub fn contains_v0(&self, k: usize) -> bool {
        k >= self.i_l && k <= self.i_r
    }

    /// First and last included boundary slots.
    pub fn v0_segment(&self) -> (usize, usize) {
        (self.i_l, self.i_r)
    }

    pub fn v0_count(&self) -> usize {
        self.i_r - self.i_l + 1
    }

    pub fn u_count(&self) -> usize {
        self.u_count
    }

    /// Number of estimated parameters.
    pub fn dim(&self) -> usize {
        self.u_count + self.v0_count()
    }

    pub fn index_map(&self) -> &IndexMap {
        &self.map
    }

    /// Compact position of boundary slot `k`.
    pub fn v0_param(&self, k: usize) -> Option<usize> {
        self.map.to_compact(k)
    }

    /// Compact position of C-trend cell `c`.
    pub fn u_param(&self, c: CellIndex) -> Option<usize> {
        if !self.frame.in_u(c) {
            return None;
        }
        self.map.to_compact(self.frame.v0_len() + self.frame.u_offset(c))
    }

    /// Included C-trend cells in row-major order.
    pub fn u_cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        self.u_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(o, _)| self.frame.u_cell(o))
    }

    pub fn dump(&self) -> DomainDump {
        let cols = self.frame.cols();
        DomainDump {
            first_year: self.frame.year_of(0),
            first_age: self.frame.age_of(0),
            rows: self.frame.rows(),
            cols,
            i_l: self.i_l,
            i_r: self.i_r,
            u_count: self.u_count,
            mask: self
                .u_mask
                .chunks(cols)
                .map(|row| row.iter().map(|&m| if m { '1' } else { '0' }).collect())
                .collect(),
        }
    }
}

/// Serializable snapshot of a domain (mask rows are strings of `0`/`1`, one per year).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDump {
    pub first_year: i64,
    pub first_age: i64,
    pub rows: usize,
    pub cols: usize,
    pub i_l: usize,
    pub i_r: usize,
    pub u_count: usize,
    pub mask: Vec<String>,
}

/// Build the analysis domain from the populated cells.
pub fn build_domain(
    frame: &ObservationalFrame,
    cells: &[CellStat],
    selection: DomainSelection,
) -> Result<AnalysisDomain> {
    if cells.is_empty() {
        return Err(DrmError::NoAnalyzableCells);
    }
    let mut per_cohort: BTreeMap<usize, Vec<CellIndex>> = BTreeMap::new();
    for c in cells {
        if !frame.in_u(c.cell) {
            return Err(DrmError::CellNotInDomain(c.cell));
        }
        per_cohort.entry(frame.cohort_index(c.cell)).or_default().push(c.cell);
    }
    let mut mask = vec![false; frame.u_len()];
    let mut kept = 0;
    for data in per_cohort.values() {
        if selection == DomainSelection::MultiPoint && data.len() < 2 {
            continue;
        }
        kept += 1;
        for &c in data {
            for m in 0..=c.depth() {
                mask[frame.u_offset(CellIndex::new(c.i - m, c.j - m))] = true;
            }
        }
    }
    if kept == 0 {
        return Err(DrmError::EmptyDomain);
    }
    fill_gaps(frame, &mut mask);
    AnalysisDomain::from_mask(*frame, mask)
}

/// Make every row and column run contiguous, alternating row and column
/// passes until nothing changes. Returns the number of cells added.
pub fn fill_gaps(frame: &ObservationalFrame, mask: &mut [bool]) -> usize {
    let (rows, cols) = (frame.rows(), frame.cols());
    let mut added = 0;
    loop {
        let mut changed = 0;
        for i in 0..rows {
            changed += fill_line(mask, (0..cols).map(|j| i * cols + j));
        }
        for j in 0..cols {
            changed += fill_line(mask, (0..rows).map(|i| i * cols + j));
        }
        if changed == 0 {
            return added;
        }
        added += changed;
    }
}

fn fill_line(mask: &mut [bool], line: impl Iterator<Item = usize>) -> usize {
    let line: Vec<usize> = line.collect();
    let (Some(first), Some(last)) =
        (line.iter().position(|&o| mask[o]), line.iter().rposition(|&o| mask[o]))
    else {
        return 0;
    };
    let mut changed = 0;
    for &o in &line[first..=last] {
        if !mask[o] {
            mask[o] = true;
            changed += 1;
        }
    }
    changed
}
