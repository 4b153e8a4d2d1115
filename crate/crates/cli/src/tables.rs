//! Output tables of a fit. Every table carries absolute years and ages.

use anyhow::Context;
use drm_core::DrmError;
use drm_core::clusters::{ClusterReport, Neighbour, Z_95};
use drm_core::geometry::{forward_level, CellIndex, ZVector};
use drm_core::pipeline::FitResult;
use drm_core::solver::Solution;

/// Header plus rows of already formatted fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// CSV text preceded by a `# run <digest>` line.
    pub fn to_csv(&self, digest: &str) -> anyhow::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let body = String::from_utf8(w.into_inner().context("flushing csv")?)?;
        Ok(format!("# run {digest}\n{body}"))
    }
}

pub fn num(v: f64) -> String {
    v.to_string()
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Estimate and standard error of `cᵀẑ` for a sparse compact combination.
fn combination(sol: &Solution, terms: &[usize]) -> (f64, Option<f64>) {
    let value = terms.iter().map(|&a| sol.z_hat[a]).sum();
    let se = sol.sigma2_hat.map(|s2| {
        let mut c = vec![0.0; sol.dim];
        for &a in terms {
            c[a] += 1.0;
        }
        let x = sol.factor().solve(&c);
        (s2 * terms.iter().map(|&a| x[a]).sum::<f64>()).max(0.0).sqrt()
    });
    (value, se)
}

fn ci(value: f64, se: Option<f64>) -> [String; 2] {
    match se {
        Some(se) => [num(value - Z_95 * se), num(value + Z_95 * se)],
        None => [String::new(), String::new()],
    }
}

pub fn observed(res: &FitResult) -> Table {
    let f = res.frame;
    let mut t = Table::new(&["year", "age", "birth_year", "n", "mean", "sd", "ci_low", "ci_high", "status"]);
    let mut cells: Vec<_> = res
        .aggregation
        .cells
        .iter()
        .map(|c| (c, "used"))
        .chain(res.aggregation.excluded.iter().map(|c| (c, "excluded")))
        .collect();
    cells.sort_by_key(|(c, _)| (c.cell.i, c.cell.j));
    for (c, status) in cells {
        let sd = c.x_var.sqrt();
        let half = if c.n > 1 { Z_95 * sd / (c.n as f64).sqrt() } else { f64::NAN };
        let (lo, hi) = if half.is_finite() { (num(c.x_mean - half), num(c.x_mean + half)) } else { Default::default() };
        t.push(vec![
            f.year_of(c.cell.i).to_string(),
            f.age_of(c.cell.j).to_string(),
            f.birth_year(c.cell).to_string(),
            c.n.to_string(),
            num(c.x_mean),
            num(sd),
            lo,
            hi,
            status.into(),
        ]);
    }
    t
}

fn full_z(res: &FitResult) -> ZVector {
    let f = res.frame;
    let full: Vec<f64> = res.outcome.solution.z_full(&res.domain).into_iter().map(|v| v.unwrap_or(0.0)).collect();
    let (v0, u) = full.split_at(f.v0_len());
    ZVector { v0: v0.to_vec(), u: u.to_vec() }
}

/// Levels over the study period and age range each extended by one.
pub fn levels(res: &FitResult) -> Table {
    let f = res.frame;
    let z = full_z(res);
    let mut t = Table::new(&["year", "age", "birth_year", "v_hat"]);
    for i in 0..=f.i_max_rel + 1 {
        for j in 0..=f.j_max_rel + 1 {
            let c = CellIndex::new(i, j);
            let v = forward_level(&z, &res.domain, c).ok();
            t.push(vec![f.year_of(i).to_string(), f.age_of(j).to_string(), f.birth_year(c).to_string(), opt(v)]);
        }
    }
    t
}

pub fn ctrends(res: &FitResult) -> Table {
    let f = res.frame;
    let sol = &res.outcome.solution;
    let data: std::collections::BTreeSet<CellIndex> = res.aggregation.cells.iter().map(|c| c.cell).collect();
    let mut t = Table::new(&["year", "age", "birth_year", "data", "u_hat", "se", "ci_low", "ci_high"]);
    for i in 0..=f.i_max_rel {
        for j in 0..=f.j_max_rel {
            let c = CellIndex::new(i, j);
            let mut row = vec![f.year_of(i).to_string(), f.age_of(j).to_string(), f.birth_year(c).to_string()];
            row.push(u8::from(data.contains(&c)).to_string());
            match res.domain.u_param(c) {
                Some(a) => {
                    let se = sol.se(a);
                    let [lo, hi] = ci(sol.z_hat[a], se);
                    row.extend([num(sol.z_hat[a]), opt(se), lo, hi]);
                }
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
            t.push(row);
        }
    }
    t
}

pub fn clusters(report: &ClusterReport) -> Table {
    let mut t = Table::new(&[
        "year_block", "age_block", "year_from", "year_to", "age_from", "age_to", "cells", "mean", "se", "ci_low", "ci_high",
    ]);
    for c in &report.clusters {
        let (lo, hi) = match (c.mean, c.ci_half_width) {
            (Some(m), Some(h)) => (num(m - h), num(m + h)),
            _ => Default::default(),
        };
        t.push(vec![
            c.year_block.to_string(),
            c.age_block.to_string(),
            c.years.0.to_string(),
            c.years.1.to_string(),
            c.ages.0.to_string(),
            c.ages.1.to_string(),
            c.cells.to_string(),
            opt(c.mean),
            opt(c.se),
            lo,
            hi,
        ]);
    }
    t
}

fn label(c: &drm_core::clusters::Cluster) -> String {
    format!("{}-{}/{}-{}", c.years.0, c.years.1, c.ages.0, c.ages.1)
}

pub fn comparisons(report: &ClusterReport) -> Table {
    let mut t = Table::new(&[
        "from_year_block", "from_age_block", "to_year_block", "to_age_block", "from", "to", "neighbour", "difference", "f", "p",
    ]);
    for cmp in &report.comparisons {
        let (a, b) = (&report.clusters[cmp.from], &report.clusters[cmp.to]);
        let kind = match cmp.neighbour {
            Neighbour::OlderAge => "older-age",
            Neighbour::NextPeriod => "next-period",
        };
        t.push(vec![
            a.year_block.to_string(),
            a.age_block.to_string(),
            b.year_block.to_string(),
            b.age_block.to_string(),
            label(a),
            label(b),
            kind.into(),
            num(cmp.difference),
            opt(cmp.f),
            opt(cmp.p),
        ]);
    }
    t
}

/// Birth year of the cohort with the most data cells (earliest on ties).
pub fn default_cohort(res: &FitResult) -> i64 {
    let mut counts = std::collections::BTreeMap::<i64, usize>::new();
    for c in &res.aggregation.cells {
        *counts.entry(res.frame.birth_year(c.cell)).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    counts.into_iter().find(|&(_, n)| n == best).map_or(0, |(b, _)| b)
}

/// Data mean, level and C-trend with intervals along one cohort.
pub fn cohort(res: &FitResult, birth_year: i64) -> anyhow::Result<Table> {
    let f = res.frame;
    let sol = &res.outcome.solution;
    let mut t = Table::new(&[
        "birth_year", "year", "age", "n", "mean", "mean_ci_low", "mean_ci_high", "v_hat", "v_ci_low", "v_ci_high", "u_hat", "u_ci_low",
        "u_ci_high",
    ]);
    let data: std::collections::BTreeMap<CellIndex, _> = res.aggregation.cells.iter().map(|c| (c.cell, c)).collect();
    let mut start = None;
    for i in 0..=f.i_max_rel + 1 {
        let j = f.year_of(i) - birth_year - f.j_min;
        if (0..=f.j_max_rel as i64 + 1).contains(&j) {
            start = Some(CellIndex::new(i, j as usize));
            break;
        }
    }
    let Some(start) = start else {
        return Err(DrmError::Input(format!("cohort born {birth_year} does not cross the frame")).into());
    };
    let k = f.cohort_index(start);
    let Some(v0) = res.domain.v0_param(k) else {
        return Err(DrmError::Input(format!("cohort born {birth_year} is outside the analysis domain")).into());
    };
    let first = f.boundary_cell(k);
    let mut path = vec![v0];
    for m in 0.. {
        let c = CellIndex::new(first.i + m, first.j + m);
        if !f.in_v(c) {
            break;
        }
        // levels need every earlier element on the path
        if m > 0 && res.domain.u_param(CellIndex::new(c.i - 1, c.j - 1)).is_none() {
            break;
        }
        let (v, v_se) = combination(sol, &path);
        let mut row = vec![birth_year.to_string(), f.year_of(c.i).to_string(), f.age_of(c.j).to_string()];
        match data.get(&c) {
            Some(s) => {
                let half = (s.n > 1).then(|| Z_95 * (s.x_var / s.n as f64).sqrt());
                row.extend([s.n.to_string(), num(s.x_mean)]);
                row.extend(match half {
                    Some(h) => [num(s.x_mean - h), num(s.x_mean + h)],
                    None => Default::default(),
                });
            }
            None => row.extend(["0".into(), String::new(), String::new(), String::new()]),
        }
        row.push(num(v));
        row.extend(ci(v, v_se));
        match res.domain.u_param(c) {
            Some(a) => {
                let se = sol.se(a);
                row.push(num(sol.z_hat[a]));
                row.extend(ci(sol.z_hat[a], se));
                path.push(a);
            }
            None => row.extend(std::iter::repeat_n(String::new(), 3)),
        }
        t.push(row);
        if res.domain.u_param(c).is_none() {
            break;
        }
    }
    Ok(t)
}

pub fn trace(res: &FitResult) -> Table {
    let mut t = Table::new(&[
        "iteration", "lambda1", "lambda2", "r_u", "r_v", "log_ratio_u", "log_ratio_v", "s0", "s1", "s2", "r2", "damping", "note",
    ]);
    for r in &res.outcome.trace {
        t.push(vec![
            r.iteration.to_string(),
            num(r.lambda1),
            num(r.lambda2),
            opt(r.r_u),
            opt(r.r_v),
            opt(r.log_ratio_u),
            opt(r.log_ratio_v),
            num(r.s0),
            num(r.s1),
            num(r.s2),
            opt(r.r2),
            num(r.damping),
            r.note.clone().unwrap_or_default(),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use drm_core::pipeline::{fit, FitConfig};
    use drm_core::simulate::{simulate, Scenario};

    fn fitted() -> FitResult {
        let records = simulate(&Scenario::preset("linear-age").unwrap()).unwrap();
        fit(&records, &FitConfig::default()).unwrap()
    }

    #[test]
    fn grids_use_calendar_labels() {
        let res = fitted();
        let f = res.frame;
        let lv = levels(&res);
        assert_eq!(lv.rows.len(), (f.rows() + 1) * (f.cols() + 1));
        assert_eq!(lv.rows[0][0], f.i_min.to_string());
        assert_eq!(lv.rows[0][1], f.j_min.to_string());
        let last = lv.rows.last().unwrap();
        assert_eq!(last[0], (f.i_min + f.rows() as i64).to_string());
        let ct = ctrends(&res);
        assert_eq!(ct.rows.len(), f.u_len());
        let csv = ct.to_csv("abc").unwrap();
        assert!(csv.starts_with("# run abc\nyear,age,birth_year,data,u_hat"));
    }

    #[test]
    fn cohort_track_levels_match_surface() {
        let res = fitted();
        let b = default_cohort(&res);
        let track = cohort(&res, b).unwrap();
        assert!(track.rows.len() >= 2);
        let lv = levels(&res);
        for row in &track.rows {
            let hit = lv.rows.iter().find(|r| r[0] == row[1] && r[1] == row[2]).unwrap();
            let (a, b): (f64, f64) = (hit[3].parse().unwrap(), row[7].parse().unwrap());
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
            assert!(row[8].parse::<f64>().unwrap() <= b);
        }
        assert!(cohort(&res, 1500).is_err());
    }
}
