//! Synthetic survey data from a known boundary-level profile and C-trend field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::AnalysisDomain;
use crate::error::{DrmError, Result};
use crate::geometry::{predict_observation, ObservationalFrame, ZVector};
use crate::ingest::{AgeSpec, SurveyRecord};

/// kg of body weight per thousand kcal of energy balance, `1000 / 7716.2`
/// rounded; a balance in thousands of kcal per year gives kg per year.
pub const K_CONV: f64 = 0.1296;
/// Energy content of one kg of body fat.
pub const KCAL_PER_KG_FAT: f64 = 7716.2;

/// Exam dates are written with this many decimals of a year (about an hour).
const DATE_DECIMALS: i32 = 4;

/// Boundary levels as a quadratic in birth year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LevelProfile {
    pub level: f64,
    pub slope: f64,
    pub curvature: f64,
    pub reference_birth_year: f64,
}

impl Default for LevelProfile {
    fn default() -> Self {
        Self { level: 25.0, slope: 0.0, curvature: 0.0, reference_birth_year: 1950.0 }
    }
}

impl LevelProfile {
    pub fn at(&self, birth_year: f64) -> f64 {
        let d = birth_year - self.reference_birth_year;
        self.level + self.slope * d + self.curvature * d * d
    }
}

/// C-trend as a function of calendar year and age, in units per year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrendField {
    Constant {
        rate: f64,
    },
    Linear {
        base: f64,
        per_year: f64,
        per_age: f64,
        reference_year: f64,
        reference_age: f64,
    },
    /// Rising trends at young ages late in the period, small elsewhere.
    Paper,
}

impl TrendField {
    pub fn at(&self, year: f64, age: f64) -> f64 {
        match *self {
            Self::Constant { rate } => rate,
            Self::Linear { base, per_year, per_age, reference_year, reference_age } => {
                base + per_year * (year - reference_year) + per_age * (age - reference_age)
            }
            Self::Paper => {
                let s = ((year - 1972.0) / 30.0).clamp(0.0, 1.2);
                let young = (-(age - 25.0).max(0.0) / 20.0).exp();
                0.02 + 0.33 * s * young + 0.12 * (1.0 - (age - 25.0) / 45.0).max(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyDesign {
    pub year: i32,
    pub age_min: i32,
    pub age_max: i32,
    /// First and last month of fieldwork, 1-based and inclusive.
    pub start_month: u32,
    pub end_month: u32,
    /// Overrides [`Scenario::n_per_cell`].
    #[serde(default)]
    pub n_per_cell: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameBounds {
    pub y_min: f64,
    pub y_max: f64,
    pub a_min: f64,
    pub a_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub sigma: f64,
    pub n_per_cell: usize,
    #[serde(default)]
    pub sex: Option<String>,
    /// Derived from the survey schedule when absent.
    #[serde(default)]
    pub frame: Option<FrameBounds>,
    #[serde(default)]
    pub levels: LevelProfile,
    pub trend: TrendField,
    pub surveys: Vec<SurveyDesign>,
}

fn survey(year: i32, age_max: i32, start_month: u32, end_month: u32) -> SurveyDesign {
    SurveyDesign { year, age_min: 25, age_max, start_month, end_month, n_per_cell: None }
}

impl Scenario {
    pub const PRESETS: [&'static str; 3] = ["stationary", "linear-age", "paper"];

    pub fn preset(name: &str) -> Result<Self> {
        let five_yearly = |age_max| (0..5).map(|k| survey(1980 + 5 * k, age_max, 1, 3)).collect::<Vec<_>>();
        match name {
            "stationary" => Ok(Self {
                name: name.into(),
                seed: 1,
                sigma: 1.0,
                n_per_cell: 40,
                sex: None,
                frame: None,
                levels: LevelProfile::default(),
                trend: TrendField::Constant { rate: 0.0 },
                surveys: five_yearly(54),
            }),
            "linear-age" => Ok(Self {
                name: name.into(),
                seed: 2,
                sigma: 1.0,
                n_per_cell: 40,
                sex: None,
                frame: None,
                levels: LevelProfile { level: 25.0, slope: -0.02, ..Default::default() },
                trend: TrendField::Linear {
                    base: 0.2,
                    per_year: 0.0,
                    per_age: -0.004,
                    reference_year: 1980.0,
                    reference_age: 25.0,
                },
                surveys: five_yearly(54),
            }),
            "paper" => Ok(Self {
                name: name.into(),
                seed: 1972,
                sigma: 4.0,
                n_per_cell: 40,
                sex: Some("M".into()),
                frame: None,
                levels: LevelProfile { level: 24.3, slope: -0.06, curvature: 0.0016, reference_birth_year: 1947.0 },
                trend: TrendField::Paper,
                surveys: vec![
                    survey(1972, 59, 2, 9),
                    survey(1977, 64, 1, 4),
                    survey(1982, 64, 1, 4),
                    survey(1987, 64, 1, 4),
                    survey(1992, 64, 1, 4),
                    survey(1997, 74, 1, 6),
                    survey(2002, 74, 1, 4),
                ],
            }),
            other => Err(DrmError::InvalidParameter {
                name: "preset",
                reason: format!("unknown preset {other:?}; expected one of {:?}", Self::PRESETS),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(DrmError::InvalidParameter { name, reason });
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma", format!("{} must be >= 0", self.sigma));
        }
        if self.surveys.is_empty() {
            return bad("surveys", "at least one survey is required".into());
        }
        for s in &self.surveys {
            if s.age_min > s.age_max {
                return bad("age range", format!("{}: {} > {}", s.year, s.age_min, s.age_max));
            }
            if !(1..=12).contains(&s.start_month) || !(s.start_month..=12).contains(&s.end_month) {
                return bad("months", format!("{}: {}..{}", s.year, s.start_month, s.end_month));
            }
            if s.n_per_cell.unwrap_or(self.n_per_cell) == 0 {
                return bad("n_per_cell", format!("{}: must be >= 1", s.year));
            }
        }
        if let Some(fb) = self.frame {
            for s in &self.surveys {
                let (y0, y1) = (s.year as f64, s.year as f64 + s.end_month as f64 / 12.0);
                if y0 < fb.y_min || y1 > fb.y_max || (s.age_min as f64) < fb.a_min || s.age_max as f64 > fb.a_max {
                    return bad("surveys", format!("survey {} lies outside the frame", s.year));
                }
            }
        }
        Ok(())
    }

    /// Declared frame, or the smallest one holding every scheduled exam.
    pub fn frame(&self) -> Result<ObservationalFrame> {
        if let Some(fb) = self.frame {
            return ObservationalFrame::new(fb.y_min, fb.y_max, fb.a_min, fb.a_max);
        }
        let y_min = self.surveys.iter().map(|s| s.year).min().ok_or(DrmError::EmptyDomain)?;
        let y_max = self.surveys.iter().map(|s| s.year).max().unwrap_or(y_min) + 1;
        let a_min = self.surveys.iter().map(|s| s.age_min).min().unwrap_or(0);
        let mut a_max = self.surveys.iter().map(|s| s.age_max).max().unwrap_or(0);
        if a_max == a_min {
            a_max += 1;
        }
        ObservationalFrame::new(y_min as f64, y_max as f64, a_min as f64, a_max as f64)
    }

    /// True parameter vector on `frame`.
    pub fn truth(&self, frame: &ObservationalFrame) -> ZVector {
        ZVector::from_fn(
            frame,
            |k| {
                let c = frame.boundary_cell(k);
                self.levels.at(frame.birth_year(c) as f64)
            },
            |c| self.trend.at(frame.year_of(c.i) as f64, frame.age_of(c.j) as f64),
        )
    }
}

/// Per-cell stream so the draws do not depend on iteration order.
fn cell_rng(seed: u64, survey: usize, age: i32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((survey as u64) << 32) | age as u32 as u64);
    rng
}

/// Records drawn from `truth(frame) + N(0, σ²)`, grouped by survey then age.
pub fn simulate(scenario: &Scenario) -> Result<Vec<SurveyRecord>> {
    scenario.validate()?;
    let frame = scenario.frame()?;
    let domain = AnalysisDomain::full(frame);
    let z = scenario.truth(&frame);
    let scale = 10f64.powi(DATE_DECIMALS);
    let mut out = Vec::new();
    for (s, design) in scenario.surveys.iter().enumerate() {
        let n = design.n_per_cell.unwrap_or(scenario.n_per_cell);
        let (lo, hi) = ((design.start_month - 1) as f64 / 12.0, design.end_month as f64 / 12.0);
        for age in design.age_min..=design.age_max {
            let mut rng = cell_rng(scenario.seed, s, age);
            for m in 0..n {
                let frac: f64 = lo + (hi - lo) * rng.random::<f64>();
                let y = ((design.year as f64 + frac) * scale).floor() / scale;
                let noise: f64 = rng.sample(StandardNormal);
                let x = predict_observation(&z, &domain, y, age as f64)? + scenario.sigma * noise;
                out.push(SurveyRecord {
                    subject_id: Some(format!("{}-{}-{}", design.year, age, m + 1)),
                    survey: design.year.to_string(),
                    exam_date: Some(y),
                    age: Some(AgeSpec::FullYears(age)),
                    weight: None,
                    height: None,
                    bmi: Some(x),
                    sex: scenario.sex.clone(),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrend {
    /// kg per year.
    pub weight: f64,
    /// BMI units per year.
    pub bmi: f64,
}

/// Weight and BMI trends produced by a constant energy balance (thousands of kcal per year).
pub fn energy_balance_to_trend(balance: f64, height_m: f64) -> Result<EnergyTrend> {
    if !(height_m > 0.0) {
        return Err(DrmError::InvalidParameter { name: "height", reason: format!("{height_m} must be > 0") });
    }
    let weight = K_CONV * balance;
    Ok(EnergyTrend { weight, bmi: weight / (height_m * height_m) })
}
