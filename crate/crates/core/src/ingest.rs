//! Survey record ingestion and aggregation into unit year × age cells.
//!
//! Input is delimited text with a header. Recognised columns (any order):
//! `subject_id`, `survey`, `exam_date`, `age`, `birth_year`, `weight`,
//! `height`, `bmi`, `sex`. `exam_date` is either a decimal year or an ISO
//! date (`YYYY-MM-DD`, converted as `year + (day_of_year - 1) / 365.25`).
//! Empty fields, `.` and `NA` are missing values.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{DrmError, Result};
use crate::geometry::{CellIndex, ObservationalFrame};

/// Accepted range for decimal exam dates.
pub const EXAM_YEAR_WINDOW: (f64, f64) = (1900.0, 2100.0);
/// Open interval of plausible BMI values.
pub const BMI_RANGE: (f64, f64) = (10.0, 100.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AgeSpec {
    /// Age in full years at examination.
    FullYears(i32),
    BirthYear(i32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub subject_id: Option<String>,
    pub survey: String,
    pub exam_date: Option<f64>,
    pub age: Option<AgeSpec>,
    pub weight: Option<f64>,
    pub height: Option<f64>,
    pub bmi: Option<f64>,
    pub sex: Option<String>,
}

impl SurveyRecord {
    /// Age used for cell assignment. Full-year ages are taken as-is; with a
    /// birth year the age is `exam_date - birth_year`.
    pub fn age_years(&self) -> Option<f64> {
        match self.age? {
            AgeSpec::FullYears(a) => Some(a as f64),
            AgeSpec::BirthYear(b) => self.exam_date.map(|y| y - b as f64),
        }
    }

    /// BMI as given, otherwise derived from weight and height.
    pub fn state_value(&self) -> std::result::Result<f64, RecordFlag> {
        if let Some(bmi) = self.bmi {
            return Ok(bmi);
        }
        match (self.weight, self.height) {
            (Some(w), Some(h)) => derive_bmi(w, h).map_err(|_| RecordFlag::InvalidHeight),
            _ => Err(RecordFlag::MissingValue("bmi")),
        }
    }

    /// Validated `(x, y, a)` triple.
    pub fn observation(&self) -> std::result::Result<(f64, f64, f64), RecordFlag> {
        let y = self.exam_date.ok_or(RecordFlag::MissingValue("exam_date"))?;
        if !(y >= EXAM_YEAR_WINDOW.0 && y <= EXAM_YEAR_WINDOW.1) {
            return Err(RecordFlag::ExamDateOutOfRange);
        }
        let a = self.age_years().ok_or(RecordFlag::MissingValue("age"))?;
        let x = self.state_value()?;
        if !(x > BMI_RANGE.0 && x < BMI_RANGE.1) {
            return Err(RecordFlag::ValueOutOfRange);
        }
        Ok((x, y, a))
    }
}

/// `weight / height²` in kg/m².
pub fn derive_bmi(weight_kg: f64, height_m: f64) -> Result<f64> {
    if !(height_m > 0.0) || !height_m.is_finite() {
        return Err(DrmError::InvalidRecord(format!("height {height_m} m")));
    }
    Ok(weight_kg / (height_m * height_m))
}

/// Why a record did not enter the aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RecordFlag {
    MissingValue(&'static str),
    InvalidHeight,
    ExamDateOutOfRange,
    ValueOutOfRange,
    OutOfFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RecordStatus {
    Used,
    /// Landed in a cell with `n <= n_exc`.
    ExcludedCell,
    Flagged(RecordFlag),
}

/// Aggregated observations of one unit cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub cell: CellIndex,
    pub x_mean: f64,
    /// Sample variance of the contributing values (0 for a single record).
    pub x_var: f64,
    pub y_mean: f64,
    pub a_mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregation {
    /// Cells with `n > n_exc`, in row-major cell order.
    pub cells: Vec<CellStat>,
    pub excluded: Vec<CellStat>,
    /// One entry per input record, in input order.
    pub status: Vec<RecordStatus>,
    pub warnings: Vec<String>,
}

impl Aggregation {
    pub fn used(&self) -> usize {
        self.cells.iter().map(|c| c.n).sum()
    }

    pub fn excluded_records(&self) -> usize {
        self.excluded.iter().map(|c| c.n).sum()
    }

    pub fn flagged(&self) -> usize {
        self.status.iter().filter(|s| matches!(s, RecordStatus::Flagged(_))).count()
    }
}

/// Group records into unit cells and average them.
///
/// Cell statistics do not depend on record order: contributions are summed
/// in sorted order.
pub fn aggregate(records: &[SurveyRecord], frame: &ObservationalFrame, n_exc: usize) -> Result<Aggregation> {
    let mut out = Aggregation::default();
    if records.is_empty() {
        out.warnings.push("no input records".into());
        return Ok(out);
    }
    let mut buckets: BTreeMap<CellIndex, Vec<(f64, f64, f64, usize)>> = BTreeMap::new();
    out.status = vec![RecordStatus::Used; records.len()];
    for (idx, rec) in records.iter().enumerate() {
        let (x, y, a) = match rec.observation() {
            Ok(obs) => obs,
            Err(flag) => {
                out.status[idx] = RecordStatus::Flagged(flag);
                continue;
            }
        };
        match frame.cell_of(y, a) {
            Ok(cell) => buckets.entry(cell).or_default().push((x, y, a, idx)),
            Err(_) => out.status[idx] = RecordStatus::Flagged(RecordFlag::OutOfFrame),
        }
    }
    for (cell, mut obs) in buckets {
        obs.sort_by(|p, q| {
            p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)).then(p.2.total_cmp(&q.2))
        });
        let n = obs.len();
        let nf = n as f64;
        let x_mean = obs.iter().map(|o| o.0).sum::<f64>() / nf;
        let y_mean = obs.iter().map(|o| o.1).sum::<f64>() / nf;
        let a_mean = obs.iter().map(|o| o.2).sum::<f64>() / nf;
        let x_var = if n > 1 {
            obs.iter().map(|o| (o.0 - x_mean).powi(2)).sum::<f64>() / (nf - 1.0)
        } else {
            0.0
        };
        let stat = CellStat { cell, x_mean, x_var, y_mean, a_mean, n };
        if n <= n_exc {
            for o in &obs {
                out.status[o.3] = RecordStatus::ExcludedCell;
            }
            out.excluded.push(stat);
        } else {
            out.cells.push(stat);
        }
    }
    if out.cells.is_empty() {
        return Err(DrmError::NoAnalyzableCells);
    }
    Ok(out)
}

/// Frame spanning the valid records: floor of the minima, ceiling of the maxima.
pub fn frame_from_data(records: &[SurveyRecord]) -> Result<ObservationalFrame> {
    let mut bounds: Option<(f64, f64, f64, f64)> = None;
    for (_, y, a) in records.iter().filter_map(|r| r.observation().ok()) {
        bounds = Some(match bounds {
            None => (y, y, a, a),
            Some((y0, y1, a0, a1)) => (y0.min(y), y1.max(y), a0.min(a), a1.max(a)),
        });
    }
    let (y0, y1, a0, a1) = bounds.ok_or_else(|| DrmError::Input("no valid records".into()))?;
    let (y_min, a_min) = (y0.floor(), a0.floor());
    let (mut y_max, mut a_max) = (y1.ceil(), a1.ceil());
    // a single integer year or age would collapse the frame
    if y_max <= y_min {
        y_max = y_min + 1.0;
    }
    if a_max <= a_min {
        a_max = a_min + 1.0;
    }
    ObservationalFrame::new(y_min, y_max, a_min, a_max)
}

/// Decimal calendar year from a decimal string or an ISO date.
pub fn parse_exam_date(raw: &str) -> Result<f64> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<f64>() {
        return Ok(v);
    }
    let date = NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map_err(|e| DrmError::Input(format!("exam_date {raw:?}: {e}")))?;
    Ok(date.year() as f64 + (date.ordinal() - 1) as f64 / 365.25)
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim(), "" | "." | "NA")
}

fn parse_opt<T: std::str::FromStr>(field: Option<&str>, name: &str, line: u64) -> Result<Option<T>> {
    match field {
        None => Ok(None),
        Some(f) if is_missing(f) => Ok(None),
        Some(f) => f
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| DrmError::Input(format!("line {line}: bad {name} {f:?}"))),
    }
}

/// Read survey records from delimited text with a header row.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<SurveyRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DrmError::Input(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (survey, exam) = (col("survey"), col("exam_date"));
    let (age, birth) = (col("age"), col("birth_year"));
    if exam.is_none() {
        return Err(DrmError::Input("missing exam_date column".into()));
    }
    if age.is_none() && birth.is_none() {
        return Err(DrmError::Input("need an age or birth_year column".into()));
    }
    if col("bmi").is_none() && (col("weight").is_none() || col("height").is_none()) {
        return Err(DrmError::Input("need a bmi column or weight and height columns".into()));
    }
    let (id, weight, height, bmi, sex) =
        (col("subject_id"), col("weight"), col("height"), col("bmi"), col("sex"));

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| DrmError::Input(e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let get = |c: Option<usize>| c.and_then(|c| row.get(c));
        let text = |c: Option<usize>| get(c).filter(|f| !is_missing(f)).map(str::to_string);
        let exam_date = match get(exam) {
            Some(f) if !is_missing(f) => Some(parse_exam_date(f)?),
            _ => None,
        };
        let age_spec = match parse_opt::<i32>(get(age), "age", line)? {
            Some(a) => Some(AgeSpec::FullYears(a)),
            None => parse_opt::<i32>(get(birth), "birth_year", line)?.map(AgeSpec::BirthYear),
        };
        out.push(SurveyRecord {
            subject_id: text(id),
            survey: text(survey).unwrap_or_default(),
            exam_date,
            age: age_spec,
            weight: parse_opt(get(weight), "weight", line)?,
            height: parse_opt(get(height), "height", line)?,
            bmi: parse_opt(get(bmi), "bmi", line)?,
            sex: text(sex),
        });
    }
    Ok(out)
}

/// Write records in the format accepted by [`read_records`].
pub fn write_records<W: Write>(records: &[SurveyRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| DrmError::Input(e.to_string());
    w.write_record(["subject_id", "survey", "exam_date", "age", "birth_year", "weight", "height", "bmi", "sex"])
        .map_err(io)?;
    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in records {
        let (age, birth) = match r.age {
            Some(AgeSpec::FullYears(a)) => (a.to_string(), String::new()),
            Some(AgeSpec::BirthYear(b)) => (String::new(), b.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([
            r.subject_id.clone().unwrap_or_default(),
            r.survey.clone(),
            fmt(r.exam_date),
            age,
            birth,
            fmt(r.weight),
            fmt(r.height),
            fmt(r.bmi),
            r.sex.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| DrmError::Input(e.to_string()))
}

/// Per-survey ingestion summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySummary {
    pub survey: String,
    pub records: usize,
    pub missing: usize,
    pub missing_pct: f64,
    pub used: usize,
    pub excluded: usize,
    pub age_min: Option<f64>,
    pub age_max: Option<f64>,
    pub start: Option<f64>,
    pub finish: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub surveys: Vec<SurveySummary>,
    pub total_records: usize,
    pub used: usize,
    pub flagged: usize,
    pub excluded_records: usize,
    pub cells: usize,
    pub excluded_cells: Vec<ExcludedCell>,
    pub n_exc: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedCell {
    pub year: i64,
    pub age: i64,
    pub n: usize,
}

impl IngestReport {
    pub fn new(records: &[SurveyRecord], agg: &Aggregation, frame: &ObservationalFrame, n_exc: usize) -> Self {
        let mut by_survey: BTreeMap<&str, SurveySummary> = BTreeMap::new();
        for (rec, status) in records.iter().zip(&agg.status) {
            let s = by_survey.entry(rec.survey.as_str()).or_insert_with(|| SurveySummary {
                survey: rec.survey.clone(),
                records: 0,
                missing: 0,
                missing_pct: 0.0,
                used: 0,
                excluded: 0,
                age_min: None,
                age_max: None,
                start: None,
                finish: None,
            });
            s.records += 1;
            match status {
                RecordStatus::Used => s.used += 1,
                RecordStatus::ExcludedCell => s.excluded += 1,
                RecordStatus::Flagged(_) => s.missing += 1,
            }
            if let Ok((_, y, a)) = rec.observation() {
                s.age_min = Some(s.age_min.map_or(a, |m| m.min(a)));
                s.age_max = Some(s.age_max.map_or(a, |m| m.max(a)));
                s.start = Some(s.start.map_or(y, |m| m.min(y)));
                s.finish = Some(s.finish.map_or(y, |m| m.max(y)));
            }
        }
        let surveys = by_survey
            .into_values()
            .map(|mut s| {
                s.missing_pct = 100.0 * s.missing as f64 / s.records as f64;
                s
            })
            .collect();
        Self {
            surveys,
            total_records: records.len(),
            used: agg.used(),
            flagged: agg.flagged(),
            excluded_records: agg.excluded_records(),
            cells: agg.cells.len(),
            excluded_cells: agg
                .excluded
                .iter()
                .map(|c| ExcludedCell { year: frame.year_of(c.cell.i), age: frame.age_of(c.cell.j), n: c.n })
                .collect(),
            n_exc,
            warnings: agg.warnings.clone(),
        }
    }
}
