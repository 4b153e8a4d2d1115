//! Fixed-point tuning of the smoothing weights toward target adjacent correlations.

use serde::{Deserialize, Serialize};

use crate::design::DesignSystem;
use crate::domain::AnalysisDomain;
use crate::error::{DrmError, Result};
use crate::solver::{adjacent_correlations, solve_prepared, LevelLinkDenominator, NormalEquations, Smoothness, Solution};

/// Relative distance under which two weight pairs count as the same point.
const CYCLE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterationConfig {
    /// Target mean correlation between adjacent C-trend estimates.
    pub r_u: f64,
    /// Target mean correlation between adjacent boundary levels.
    pub r_v: f64,
    pub delta_u: f64,
    pub delta_v: f64,
    pub lambda1_init: f64,
    pub lambda2_init: f64,
    pub max_iter: usize,
    /// Exponent applied to the correction ratio; 1 is the plain update.
    pub damping: f64,
    pub denominator: LevelLinkDenominator,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            r_u: 0.9,
            r_v: 0.7,
            delta_u: 0.05,
            delta_v: 0.05,
            lambda1_init: 1.0,
            lambda2_init: 1.0,
            max_iter: 100,
            damping: 1.0,
            denominator: LevelLinkDenominator::LinkCount,
        }
    }
}

impl IterationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(DrmError::InvalidParameter { name, reason });
        for (name, r) in [("r_u", self.r_u), ("r_v", self.r_v)] {
            if !(r > -1.0 && r < 1.0) {
                return bad(name, format!("{r} must lie in (-1, 1)"));
            }
        }
        for (name, d) in [("delta_u", self.delta_u), ("delta_v", self.delta_v)] {
            if !(d > 0.0 && d.is_finite()) {
                return bad(name, format!("{d} must be positive"));
            }
        }
        for (name, l) in [("lambda1", self.lambda1_init), ("lambda2", self.lambda2_init)] {
            if !(l > 0.0 && l.is_finite()) {
                return bad(name, format!("{l} must be positive"));
            }
        }
        if self.max_iter == 0 {
            return bad("max_iter", "must be >= 1".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad("damping", format!("{} must lie in (0, 1]", self.damping));
        }
        Ok(())
    }
}

/// One half of the stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionCheck {
    /// `(1 - r̄²) / (1 - r²)`; `None` when `r̄` is undefined or `|r̄| >= 1`.
    pub ratio: Option<f64>,
    pub log_ratio: Option<f64>,
    pub satisfied: bool,
}

impl CriterionCheck {
    /// An undefined average (no links) imposes no condition; `|r̄| >= 1` fails.
    pub fn new(rbar: Option<f64>, target: f64, delta: f64) -> Self {
        let Some(rbar) = rbar else {
            return Self { ratio: None, log_ratio: None, satisfied: true };
        };
        let num = 1.0 - rbar * rbar;
        if !(num > 0.0) {
            return Self { ratio: None, log_ratio: None, satisfied: false };
        }
        let ratio = num / (1.0 - target * target);
        let log_ratio = ratio.ln();
        Self { ratio: Some(ratio), log_ratio: Some(log_ratio), satisfied: log_ratio.abs() <= delta }
    }

    /// Distance from the target in units of the tolerance.
    fn excess(&self, delta: f64) -> f64 {
        match self.log_ratio {
            Some(l) => l.abs() / delta,
            None if self.satisfied => 0.0,
            None => f64::INFINITY,
        }
    }
}

pub fn check_stop(smoothness: &Smoothness, cfg: &IterationConfig) -> (CriterionCheck, CriterionCheck) {
    (
        CriterionCheck::new(smoothness.r_u, cfg.r_u, cfg.delta_u),
        CriterionCheck::new(smoothness.r_v, cfg.r_v, cfg.delta_v),
    )
}

/// `λ · ratio^damping`; unchanged when the ratio is undefined.
pub fn update_lambda(lambda: f64, check: &CriterionCheck, damping: f64) -> f64 {
    check.ratio.map_or(lambda, |r| lambda * r.powf(damping))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub r_u: Option<f64>,
    pub r_v: Option<f64>,
    pub log_ratio_u: Option<f64>,
    pub log_ratio_v: Option<f64>,
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub r2: Option<f64>,
    pub damping: f64,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// An average correlation reached ±1, so the update is undefined.
    Degenerate,
}

#[derive(Debug, Clone)]
pub struct IterationOutcome {
    /// Final solution when converged, otherwise the one closest to the targets.
    pub solution: Solution,
    pub smoothness: Smoothness,
    pub iterations: usize,
    pub stop: StopReason,
    pub trace: Vec<IterationRecord>,
}

impl IterationOutcome {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }
}

fn close(a: (f64, f64), b: (f64, f64)) -> bool {
    let rel = |x: f64, y: f64| (x - y).abs() <= CYCLE_TOLERANCE * x.abs().max(y.abs());
    rel(a.0, b.0) && rel(a.1, b.1)
}

/// Iterate `λ ← λ · ratio^damping` until both log-ratios are within tolerance.
pub fn run(sys: &DesignSystem, domain: &AnalysisDomain, cfg: &IterationConfig) -> Result<IterationOutcome> {
    cfg.validate()?;
    let normal = NormalEquations::new(sys, domain);
    let mut lambda = (cfg.lambda1_init, cfg.lambda2_init);
    let mut damping = cfg.damping;
    let mut history: Vec<(f64, f64)> = Vec::new();
    let mut trace = Vec::new();
    let mut best: Option<(f64, Solution, Smoothness, usize)> = None;

    for iteration in 1..=cfg.max_iter {
        let solution = solve_prepared(sys, &normal, lambda.0, lambda.1)?;
        let smoothness = adjacent_correlations(&solution, domain, cfg.denominator);
        let (cu, cv) = check_stop(&smoothness, cfg);
        let mut record = IterationRecord {
            iteration,
            lambda1: lambda.0,
            lambda2: lambda.1,
            r_u: smoothness.r_u,
            r_v: smoothness.r_v,
            log_ratio_u: cu.log_ratio,
            log_ratio_v: cv.log_ratio,
            s0: solution.s0,
            s1: solution.s1,
            s2: solution.s2,
            r2: solution.r2,
            damping,
            note: None,
        };
        log::debug!("iteration {iteration}: λ = ({:.4e}, {:.4e}), r̄ = ({:?}, {:?})", lambda.0, lambda.1, smoothness.r_u, smoothness.r_v);

        if cu.satisfied && cv.satisfied {
            record.note = Some("converged".into());
            trace.push(record);
            return Ok(IterationOutcome { solution, smoothness, iterations: iteration, stop: StopReason::Converged, trace });
        }
        let excess = cu.excess(cfg.delta_u).max(cv.excess(cfg.delta_v));
        if best.as_ref().is_none_or(|b| excess < b.0) {
            best = Some((excess, solution, smoothness, iteration));
        }

        let degenerate = (smoothness.r_u.is_some() && cu.ratio.is_none()) || (smoothness.r_v.is_some() && cv.ratio.is_none());
        if degenerate {
            record.note = Some("average correlation reached ±1".into());
            trace.push(record);
            let (_, solution, smoothness, _) = best.expect("recorded above");
            return Ok(IterationOutcome { solution, smoothness, iterations: iteration, stop: StopReason::Degenerate, trace });
        }

        let mut next = (update_lambda(lambda.0, &cu, damping), update_lambda(lambda.1, &cv, damping));
        // a proposal returning to the previous point signals a two-cycle
        if let Some(&prev) = history.last() {
            if close(next, prev) && !close(lambda, prev) {
                damping *= 0.5;
                next = (update_lambda(lambda.0, &cu, damping), update_lambda(lambda.1, &cv, damping));
                record.note = Some(format!("oscillation, damping reduced to {damping}"));
            }
        }
        trace.push(record);
        history.push(lambda);
        lambda = next;
    }

    let (_, solution, smoothness, _) = best.expect("at least one iteration");
    Ok(IterationOutcome { solution, smoothness, iterations: cfg.max_iter, stop: StopReason::MaxIterations, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopping_rule_examples() {
        let ok = CriterionCheck::new(Some(0.7), 0.7, 0.05);
        assert!(ok.satisfied);
        assert_eq!(ok.log_ratio, Some(0.0));

        // 1 - 0.8² = 0.36 against 1 - 0.7² = 0.51
        let off = CriterionCheck::new(Some(0.8), 0.7, 0.05);
        assert!(!off.satisfied);
        assert!((off.ratio.unwrap() - 0.36 / 0.51).abs() < 1e-15);

        let perfect = CriterionCheck::new(Some(1.0), 0.7, 0.05);
        assert!(!perfect.satisfied);
        assert_eq!(perfect.ratio, None);

        assert!(CriterionCheck::new(None, 0.9, 0.05).satisfied);

        let c = CriterionCheck::new(Some(0.85), 0.9, 0.05);
        assert!(!c.satisfied);
        assert!((update_lambda(2.0, &c, 1.0) - 2.0 * 0.2775 / 0.19).abs() < 1e-12);
        assert!((update_lambda(2.0, &c, 0.5) - 2.0 * (0.2775f64 / 0.19).sqrt()).abs() < 1e-12);
        assert_eq!(update_lambda(2.0, &perfect, 1.0), 2.0);
    }

    #[test]
    fn config_validation() {
        assert!(IterationConfig::default().validate().is_ok());
        for cfg in [
            IterationConfig { r_u: 1.0, ..Default::default() },
            IterationConfig { delta_v: 0.0, ..Default::default() },
            IterationConfig { lambda1_init: -1.0, ..Default::default() },
            IterationConfig { max_iter: 0, ..Default::default() },
            IterationConfig { damping: 1.5, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn cycle_detection() {
        assert!(close((1.0, 2.0), (1.005, 2.01)));
        assert!(!close((1.0, 2.0), (1.05, 2.0)));
    }
}
