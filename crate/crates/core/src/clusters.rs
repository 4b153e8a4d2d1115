//! Mean C-trends over age × period blocks and pairwise F-tests between neighbours.

use serde::{Deserialize, Serialize};

use crate::domain::AnalysisDomain;
use crate::error::{DrmError, Result};
use crate::fdist::prob_f;
use crate::solver::Solution;

/// Normal quantile for two-sided 95% intervals.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub year_block: usize,
    pub age_block: usize,
    /// Calendar years and ages covered, inclusive.
    pub years: (i64, i64),
    pub ages: (i64, i64),
    /// Included C-trend cells averaged.
    pub cells: usize,
    /// `None` when the block has no included cells.
    pub mean: Option<f64>,
    pub se: Option<f64>,
    pub ci_half_width: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Neighbour {
    OlderAge,
    NextPeriod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Indices into [`ClusterReport::clusters`].
    pub from: usize,
    pub to: usize,
    pub neighbour: Neighbour,
    pub difference: f64,
    /// `None` when the variance of the difference is not positive.
    pub f: Option<f64>,
    pub p: Option<f64>,
}

impl Comparison {
    pub fn degenerate(&self) -> bool {
        self.f.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub delta_age: usize,
    pub delta_year: usize,
    pub year_blocks: usize,
    pub age_blocks: usize,
    /// Row-major over `(year_block, age_block)`.
    pub clusters: Vec<Cluster>,
    pub comparisons: Vec<Comparison>,
    /// Denominator degrees of freedom of the tests, `n0 + n1 + n2 - p`.
    pub df: i64,
    pub warnings: Vec<String>,
}

impl ClusterReport {
    pub fn cluster(&self, year_block: usize, age_block: usize) -> &Cluster {
        &self.clusters[year_block * self.age_blocks + age_block]
    }
}

/// `(u_i - u_j)² / (c_ii - 2 c_ij + c_jj)`; `None` for a nonpositive denominator.
pub fn f_statistic(u_i: f64, u_j: f64, c_ii: f64, c_jj: f64, c_ij: f64) -> Option<f64> {
    let d = u_i - u_j;
    let var = c_ii - 2.0 * c_ij + c_jj;
    (var > 0.0).then(|| d * (d / var))
}

pub fn cluster_compare(
    solution: &Solution,
    domain: &AnalysisDomain,
    delta_age: usize,
    delta_year: usize,
) -> Result<ClusterReport> {
    if delta_age == 0 || delta_year == 0 {
        return Err(DrmError::InvalidParameter { name: "cluster size", reason: "must be >= 1".into() });
    }
    let sigma2 = solution.sigma2_hat.ok_or(DrmError::NoDegreesOfFreedom(solution.degrees_of_freedom()))?;
    let df = solution.degrees_of_freedom();
    let frame = domain.frame();
    let year_blocks = frame.rows().div_ceil(delta_year);
    let age_blocks = frame.cols().div_ceil(delta_age);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); year_blocks * age_blocks];
    for c in domain.u_cells() {
        members[(c.i / delta_year) * age_blocks + c.j / delta_age].push(domain.u_param(c).expect("included"));
    }

    // averaging rows and (Bᵀ W B)⁻¹ times each of them
    let p = solution.dim;
    let mut weights: Vec<Option<Vec<f64>>> = Vec::with_capacity(members.len());
    let mut solved: Vec<Option<Vec<f64>>> = Vec::with_capacity(members.len());
    for m in &members {
        if m.is_empty() {
            weights.push(None);
            solved.push(None);
            continue;
        }
        let mut a = vec![0.0; p];
        for &q in m {
            a[q] = 1.0 / m.len() as f64;
        }
        solved.push(Some(solution.factor().solve(&a)));
        weights.push(Some(a));
    }
    let cov = |x: usize, y: usize| -> f64 {
        let (a, w) = (weights[x].as_ref().unwrap(), solved[y].as_ref().unwrap());
        sigma2 * a.iter().zip(w).map(|(a, w)| a * w).sum::<f64>()
    };

    let mut clusters = Vec::with_capacity(members.len());
    for yb in 0..year_blocks {
        for ab in 0..age_blocks {
            let idx = yb * age_blocks + ab;
            let i0 = yb * delta_year;
            let i1 = (i0 + delta_year - 1).min(frame.i_max_rel);
            let j0 = ab * delta_age;
            let j1 = (j0 + delta_age - 1).min(frame.j_max_rel);
            let (mean, se) = match &weights[idx] {
                Some(a) => {
                    let mean = a.iter().zip(&solution.z_hat).map(|(a, z)| a * z).sum::<f64>();
                    (Some(mean), Some(cov(idx, idx).max(0.0).sqrt()))
                }
                None => (None, None),
            };
            clusters.push(Cluster {
                year_block: yb,
                age_block: ab,
                years: (frame.year_of(i0), frame.year_of(i1)),
                ages: (frame.age_of(j0), frame.age_of(j1)),
                cells: members[idx].len(),
                mean,
                se,
                ci_half_width: se.map(|s| Z_95 * s),
            });
        }
    }

    let mut comparisons = Vec::new();
    let mut warnings = Vec::new();
    for yb in 0..year_blocks {
        for ab in 0..age_blocks {
            let from = yb * age_blocks + ab;
            let Some(u_from) = clusters[from].mean else { continue };
            let targets = [
                (ab + 1 < age_blocks).then(|| (from + 1, Neighbour::OlderAge)),
                (yb + 1 < year_blocks).then(|| (from + age_blocks, Neighbour::NextPeriod)),
            ];
            for (to, neighbour) in targets.into_iter().flatten() {
                let Some(u_to) = clusters[to].mean else { continue };
                let f = f_statistic(u_from, u_to, cov(from, from), cov(to, to), cov(from, to));
                let p = match (f, df) {
                    (Some(f), df) if df > 0 => Some(prob_f(f, 1, df as u32)?),
                    _ => None,
                };
                comparisons.push(Comparison { from, to, neighbour, difference: u_from - u_to, f, p });
            }
        }
    }
    if comparisons.is_empty() {
        warnings.push("no adjacent cluster pairs to compare".into());
    }
    Ok(ClusterReport { delta_age, delta_year, year_blocks, age_blocks, clusters, comparisons, df, warnings })
}
