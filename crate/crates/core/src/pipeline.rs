//! Records in, fitted trends and cluster tests out.

use serde::{Deserialize, Serialize};

use crate::clusters::{cluster_compare, ClusterReport};
use crate::design::DesignSystem;
use crate::domain::{build_domain, AnalysisDomain, DomainSelection};
use crate::error::{DrmError, Result};
use crate::geometry::ObservationalFrame;
use crate::ingest::{aggregate, frame_from_data, Aggregation, IngestReport, SurveyRecord};
use crate::iteration::{run, IterationConfig, IterationOutcome};
use crate::simulate::FrameBounds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Cells with `n <= n_exc` records are dropped.
    pub n_exc: usize,
    pub domain: DomainSelection,
    /// Weight data rows by cell count instead of equally.
    pub weight_by_count: bool,
    /// Keep only records with this `sex` value.
    pub sex: Option<String>,
    /// Derived from the data when absent.
    pub frame: Option<FrameBounds>,
    pub iteration: IterationConfig,
    pub delta_age: usize,
    pub delta_year: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_exc: 5,
            domain: DomainSelection::AllCohorts,
            weight_by_count: false,
            sex: None,
            frame: None,
            iteration: IterationConfig::default(),
            delta_age: 5,
            delta_year: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub frame: ObservationalFrame,
    /// Records passed to aggregation (after the sex filter).
    pub records: usize,
    /// Records dropped by the sex filter.
    pub filtered_out: usize,
    pub aggregation: Aggregation,
    pub report: IngestReport,
    pub domain: AnalysisDomain,
    pub system: DesignSystem,
    pub outcome: IterationOutcome,
    /// `None` when there are no residual degrees of freedom.
    pub clusters: Option<ClusterReport>,
    pub warnings: Vec<String>,
}

pub fn fit(records: &[SurveyRecord], cfg: &FitConfig) -> Result<FitResult> {
    if records.is_empty() {
        return Err(DrmError::Input("no records".into()));
    }
    let kept: Vec<SurveyRecord> = match &cfg.sex {
        Some(sex) => records.iter().filter(|r| r.sex.as_deref() == Some(sex.as_str())).cloned().collect(),
        None => records.to_vec(),
    };
    let filtered_out = records.len() - kept.len();
    if kept.is_empty() {
        return Err(DrmError::Input(format!("no records with sex {:?}", cfg.sex.as_deref().unwrap_or(""))));
    }
    let frame = match cfg.frame {
        Some(fb) => ObservationalFrame::new(fb.y_min, fb.y_max, fb.a_min, fb.a_max)?,
        None => frame_from_data(&kept)?,
    };
    let aggregation = aggregate(&kept, &frame, cfg.n_exc)?;
    let report = IngestReport::new(&kept, &aggregation, &frame, cfg.n_exc);
    let domain = build_domain(&frame, &aggregation.cells, cfg.domain)?;
    let system = DesignSystem::assemble(&aggregation.cells, &domain, cfg.weight_by_count)?;
    let outcome = run(&system, &domain, &cfg.iteration)?;

    let mut warnings = aggregation.warnings.clone();
    warnings.extend(outcome.solution.warnings.iter().cloned());
    let clusters = match cluster_compare(&outcome.solution, &domain, cfg.delta_age, cfg.delta_year) {
        Ok(c) => {
            warnings.extend(c.warnings.iter().cloned());
            Some(c)
        }
        Err(e @ DrmError::NoDegreesOfFreedom(_)) => {
            warnings.push(format!("cluster comparisons skipped: {e}"));
            None
        }
        Err(e) => return Err(e),
    };
    Ok(FitResult {
        frame,
        records: kept.len(),
        filtered_out,
        aggregation,
        report,
        domain,
        system,
        outcome,
        clusters,
        warnings,
    })
}
