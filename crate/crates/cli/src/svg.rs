//! Self-contained SVG figures rendered from the output CSVs alone.

use std::collections::BTreeMap;
use std::fmt::Write;

use anyhow::{anyhow, Context};

/// Parsed output table: the run digest from the comment line, header and rows.
pub struct Csv {
    pub digest: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let digest = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# run "))
            .ok_or_else(|| anyhow!("missing '# run' line"))?
            .trim()
            .to_string();
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr.records().map(|r| r.map(|r| r.iter().map(str::to_string).collect())).collect::<Result<_, _>>()?;
        Ok(Self { digest, header, rows })
    }

    fn col(&self, name: &str) -> anyhow::Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| anyhow!("missing column {name}"))
    }

    fn f64s(&self, name: &str) -> anyhow::Result<Vec<Option<f64>>> {
        let c = self.col(name)?;
        self.rows
            .iter()
            .map(|r| {
                let s = r[c].as_str();
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>().map(Some).with_context(|| format!("{name}: {s:?}"))
                }
            })
            .collect()
    }

    fn ints(&self, name: &str) -> anyhow::Result<Vec<i64>> {
        let c = self.col(name)?;
        self.rows.iter().map(|r| r[c].parse::<i64>().with_context(|| format!("{name}: {:?}", r[c]))).collect()
    }

    fn strs(&self, name: &str) -> anyhow::Result<Vec<&str>> {
        let c = self.col(name)?;
        Ok(self.rows.iter().map(|r| r[c].as_str()).collect())
    }
}

const WIDTH: f64 = 760.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_T: f64 = 40.0;
const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

/// Categorical palette for cohorts.
const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

/// Sequential scale, dark to light.
const STOPS: [(f64, f64, f64); 5] =
    [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];

fn colour(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (STOPS.len() - 1) as f64;
    let k = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - k as f64;
    let (a, b) = (STOPS[k], STOPS[k + 1]);
    let mix = |p: f64, q: f64| (p + (q - p) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(out: &mut String, width: f64, height: f64, digest: &str, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(out, "<!-- run {digest} -->");
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(out, "<text x=\"{MARGIN_L}\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">{}</text>", escape(title));
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Format a tick value with a precision suited to the axis span.
fn tick(v: f64, span: f64) -> String {
    let digits = if span >= 10.0 { 0 } else if span >= 1.0 { 1 } else if span >= 0.1 { 2 } else { 3 };
    format!("{v:.digits$}")
}

struct Grid {
    years: (i64, i64),
    ages: (i64, i64),
    cell: f64,
}

impl Grid {
    fn new(years: &[i64], ages: &[i64], width: f64) -> Self {
        let years = (*years.iter().min().unwrap_or(&0), *years.iter().max().unwrap_or(&0));
        let ages = (*ages.iter().min().unwrap_or(&0), *ages.iter().max().unwrap_or(&0));
        let cols = (years.1 - years.0 + 1) as f64;
        let rows = (ages.1 - ages.0 + 1) as f64;
        let cell = ((width - MARGIN_L - 120.0) / cols).min(420.0 / rows).clamp(2.0, 24.0);
        Self { years, ages, cell }
    }

    fn width(&self) -> f64 {
        (self.years.1 - self.years.0 + 1) as f64 * self.cell
    }

    fn height(&self) -> f64 {
        (self.ages.1 - self.ages.0 + 1) as f64 * self.cell
    }

    fn x(&self, year: i64) -> f64 {
        MARGIN_L + (year - self.years.0) as f64 * self.cell
    }

    /// Older ages at the top.
    fn y(&self, age: i64) -> f64 {
        MARGIN_T + (self.ages.1 - age) as f64 * self.cell
    }

    fn axes(&self, out: &mut String) {
        let bottom = MARGIN_T + self.height();
        let _ = writeln!(
            out,
            "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#333\"/>",
            self.width(),
            self.height()
        );
        let step = |span: i64| if span > 40 { 10 } else { 5 };
        let ys = step(self.years.1 - self.years.0);
        for year in (self.years.0..=self.years.1).filter(|y| y % ys == 0) {
            let x = self.x(year) + self.cell / 2.0;
            let _ = writeln!(out, "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{year}</text>", bottom + 14.0);
        }
        let ags = step(self.ages.1 - self.ages.0);
        for age in (self.ages.0..=self.ages.1).filter(|a| a % ags == 0) {
            let y = self.y(age) + self.cell / 2.0 + 4.0;
            let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{y:.1}\" text-anchor=\"end\" {FONT}>{age}</text>", MARGIN_L - 4.0);
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>year</text>",
            MARGIN_L + self.width() / 2.0,
            bottom + 30.0
        );
        let _ = writeln!(
            out,
            "<text x=\"14\" y=\"{:.1}\" transform=\"rotate(-90 14 {:.1})\" text-anchor=\"middle\" {FONT}>age</text>",
            MARGIN_T + self.height() / 2.0,
            MARGIN_T + self.height() / 2.0
        );
    }

    fn colour_bar(&self, out: &mut String, lo: f64, hi: f64, label: &str) {
        let x = MARGIN_L + self.width() + 20.0;
        let h = self.height().max(60.0);
        let n = 32;
        for k in 0..n {
            let t = 1.0 - (k as f64 + 0.5) / n as f64;
            let _ = writeln!(
                out,
                "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"14\" height=\"{:.2}\" fill=\"{}\"/>",
                MARGIN_T + k as f64 * h / n as f64,
                h / n as f64 + 0.5,
                colour(t)
            );
        }
        let span = hi - lo;
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" {FONT}>{}</text>", x + 18.0, MARGIN_T + 8.0, tick(hi, span));
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" {FONT}>{}</text>", x + 18.0, MARGIN_T + h, tick(lo, span));
        let _ = writeln!(out, "<text x=\"{x:.1}\" y=\"{:.1}\" {FONT}>{}</text>", MARGIN_T - 6.0, escape(label));
    }
}

/// Heat map of one value column over the year × age grid.
pub fn heatmap(csv: &Csv, column: &str, title: &str) -> anyhow::Result<String> {
    let years = csv.ints("year")?;
    let ages = csv.ints("age")?;
    let values = csv.f64s(column)?;
    let grid = Grid::new(&years, &ages, WIDTH);
    let (lo, hi) = bounds(values.iter().flatten().copied());
    let mut out = String::new();
    open(&mut out, WIDTH, grid.height() + MARGIN_T + 50.0, &csv.digest, title);
    out.push_str("<g shape-rendering=\"crispEdges\">\n");
    for ((&y, &a), v) in years.iter().zip(&ages).zip(&values) {
        let Some(v) = v else { continue };
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"><title>{y} age {a}: {v}</title></rect>",
            grid.x(y),
            grid.y(a),
            grid.cell,
            grid.cell,
            colour((v - lo) / (hi - lo))
        );
    }
    out.push_str("</g>\n");
    grid.axes(&mut out);
    grid.colour_bar(&mut out, lo, hi, column);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Observed cell means; hue identifies the cohort, opacity the value.
pub fn observed(csv: &Csv) -> anyhow::Result<String> {
    let years = csv.ints("year")?;
    let ages = csv.ints("age")?;
    let births = csv.ints("birth_year")?;
    let means = csv.f64s("mean")?;
    let status = csv.strs("status")?;
    let grid = Grid::new(&years, &ages, WIDTH);
    let (lo, hi) = bounds(means.iter().flatten().copied());
    let mut out = String::new();
    open(&mut out, WIDTH, grid.height() + MARGIN_T + 50.0, &csv.digest, "Observed cell means by cohort");
    out.push_str("<g shape-rendering=\"crispEdges\">\n");
    for k in 0..years.len() {
        let (y, a, b) = (years[k], ages[k], births[k]);
        let Some(m) = means[k] else { continue };
        let (fill, opacity) = if status[k] == "excluded" {
            ("#bbbbbb", 0.6)
        } else {
            (PALETTE[b.rem_euclid(PALETTE.len() as i64) as usize], 0.35 + 0.65 * (m - lo) / (hi - lo))
        };
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\" fill-opacity=\"{opacity:.3}\"><title>{y} age {a} born {b}: {m} ({})</title></rect>",
            grid.x(y),
            grid.y(a),
            grid.cell,
            grid.cell,
            status[k]
        );
    }
    out.push_str("</g>\n");
    grid.axes(&mut out);
    let x = MARGIN_L + grid.width() + 20.0;
    let _ = writeln!(out, "<text x=\"{x:.1}\" y=\"{:.1}\" {FONT}>mean {} to {}</text>", MARGIN_T + 8.0, tick(lo, hi - lo), tick(hi, hi - lo));
    let _ = writeln!(out, "<text x=\"{x:.1}\" y=\"{:.1}\" {FONT}>hue: birth year mod 8</text>", MARGIN_T + 24.0);
    out.push_str("</svg>\n");
    Ok(out)
}

struct Axis {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Axis {
    fn map(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn value_axis(out: &mut String, ax: &Axis, x: f64, label: &str) {
    let span = ax.hi - ax.lo;
    for k in 0..=4 {
        let v = ax.lo + span * k as f64 / 4.0;
        let y = ax.map(v);
        let _ = writeln!(out, "<line x1=\"{x:.1}\" x2=\"{:.1}\" y1=\"{y:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>", WIDTH - 20.0);
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{}</text>", x - 4.0, y + 4.0, tick(v, span));
    }
    let mid = (ax.from + ax.to) / 2.0;
    let _ = writeln!(out, "<text x=\"14\" y=\"{mid:.1}\" transform=\"rotate(-90 14 {mid:.1})\" text-anchor=\"middle\" {FONT}>{}</text>", escape(label));
}

/// Cluster means with intervals; one series per period block, ages on the x axis.
pub fn cluster_ci(csv: &Csv) -> anyhow::Result<String> {
    let yb = csv.ints("year_block")?;
    let ab = csv.ints("age_block")?;
    let (y0, y1) = (csv.ints("year_from")?, csv.ints("year_to")?);
    let (a0, a1) = (csv.ints("age_from")?, csv.ints("age_to")?);
    let mean = csv.f64s("mean")?;
    let (lo, hi) = (csv.f64s("ci_low")?, csv.f64s("ci_high")?);
    let (vlo, vhi) = bounds(mean.iter().chain(&lo).chain(&hi).flatten().copied());
    let (vlo, vhi) = padded(vlo, vhi);
    let height = 420.0;
    let vy = Axis { lo: vlo, hi: vhi, from: height - 60.0, to: MARGIN_T };
    let n_age = ab.iter().max().map_or(1, |m| m + 1) as f64;
    let n_year = yb.iter().max().map_or(1, |m| m + 1) as f64;
    let slot = (WIDTH - MARGIN_L - 140.0) / n_age;
    let mut out = String::new();
    open(&mut out, WIDTH, height, &csv.digest, "Mean C-trend by age and period block, 95% intervals");
    value_axis(&mut out, &vy, MARGIN_L, "u");
    let zero = vy.map(0.0);
    if (vlo..=vhi).contains(&0.0) {
        let _ = writeln!(out, "<line x1=\"{MARGIN_L}\" x2=\"{:.1}\" y1=\"{zero:.1}\" y2=\"{zero:.1}\" stroke=\"#888\"/>", WIDTH - 140.0);
    }
    let mut age_labels = BTreeMap::new();
    for k in 0..yb.len() {
        age_labels.insert(ab[k], format!("{}-{}", a0[k], a1[k]));
        let Some(m) = mean[k] else { continue };
        let colour = PALETTE[yb[k] as usize % PALETTE.len()];
        let x = MARGIN_L + slot * (ab[k] as f64 + (yb[k] as f64 + 1.0) / (n_year + 1.0));
        if let (Some(l), Some(h)) = (lo[k], hi[k]) {
            let _ = writeln!(out, "<line x1=\"{x:.1}\" x2=\"{x:.1}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"{colour}\"/>", vy.map(l), vy.map(h));
        }
        let _ = writeln!(
            out,
            "<circle cx=\"{x:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{colour}\"><title>{}-{} age {}-{}: {m}</title></circle>",
            vy.map(m),
            y0[k],
            y1[k],
            a0[k],
            a1[k]
        );
    }
    for (b, text) in &age_labels {
        let x = MARGIN_L + slot * (*b as f64 + 0.5);
        let _ = writeln!(out, "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{text}</text>", height - 44.0);
    }
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>age block</text>", MARGIN_L + slot * n_age / 2.0, height - 26.0);
    let mut seen = BTreeMap::new();
    for k in 0..yb.len() {
        seen.entry(yb[k]).or_insert((y0[k], y1[k]));
    }
    for (row, (b, (from, to))) in seen.iter().enumerate() {
        let y = MARGIN_T + 14.0 * row as f64;
        let colour = PALETTE[*b as usize % PALETTE.len()];
        let _ = writeln!(out, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{colour}\"/>", WIDTH - 125.0, y - 4.0);
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{y:.1}\" {FONT}>{from}-{to}</text>", WIDTH - 115.0);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn p_colour(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.001 => "#67000d",
        Some(p) if p < 0.01 => "#cb181d",
        Some(p) if p < 0.05 => "#fb6a4a",
        Some(_) => "#bdbdbd",
        None => "#eeeeee",
    }
}

/// Neighbouring clusters linked by their test; darker links are more significant.
pub fn comparison_chart(csv: &Csv) -> anyhow::Result<String> {
    let (fy, fa) = (csv.ints("from_year_block")?, csv.ints("from_age_block")?);
    let (ty, ta) = (csv.ints("to_year_block")?, csv.ints("to_age_block")?);
    let from = csv.strs("from")?;
    let diff = csv.f64s("difference")?;
    let p = csv.f64s("p")?;
    let n_year = fy.iter().chain(&ty).max().map_or(1, |m| m + 1) as f64;
    let n_age = fa.iter().chain(&ta).max().map_or(1, |m| m + 1) as f64;
    let cell = ((WIDTH - MARGIN_L - 160.0) / n_year).min(440.0 / n_age).min(90.0);
    let height = MARGIN_T + cell * n_age + 40.0;
    let cx = |b: i64| MARGIN_L + (b as f64 + 0.5) * cell;
    let cy = |b: i64| MARGIN_T + (n_age - b as f64 - 0.5) * cell;
    let mut out = String::new();
    open(&mut out, WIDTH, height.max(200.0), &csv.digest, "Pairwise tests between neighbouring clusters");
    for k in 0..fy.len() {
        let (x1, y1, x2, y2) = (cx(fy[k]), cy(fa[k]), cx(ty[k]), cy(ta[k]));
        let text = p[k].map_or("n/a".to_string(), |p| format!("{p:.3}"));
        let _ = writeln!(
            out,
            "<line x1=\"{x1:.1}\" y1=\"{y1:.1}\" x2=\"{x2:.1}\" y2=\"{y2:.1}\" stroke=\"{}\" stroke-width=\"5\"><title>{}: difference {}, p {text}</title></line>",
            p_colour(p[k]),
            escape(from[k]),
            diff[k].map_or(String::new(), |d| d.to_string())
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"9\">{text}</text>",
            (x1 + x2) / 2.0 + if fa[k] != ta[k] { 16.0 } else { 0.0 },
            (y1 + y2) / 2.0 - 3.0
        );
    }
    let mut nodes = BTreeMap::new();
    for k in 0..fy.len() {
        nodes.insert((fy[k], fa[k]), from[k]);
        nodes.entry((ty[k], ta[k])).or_insert("");
    }
    for (&(y, a), label) in &nodes {
        let _ = writeln!(
            out,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"5\" fill=\"#333\"><title>{}</title></circle>",
            cx(y),
            cy(a),
            escape(label)
        );
    }
    let lx = WIDTH - 140.0;
    for (row, (text, colour)) in
        [("p < 0.001", "#67000d"), ("p < 0.01", "#cb181d"), ("p < 0.05", "#fb6a4a"), ("p >= 0.05", "#bdbdbd")].iter().enumerate()
    {
        let y = MARGIN_T + 16.0 * row as f64;
        let _ = writeln!(out, "<rect x=\"{lx:.1}\" y=\"{:.1}\" width=\"18\" height=\"6\" fill=\"{colour}\"/>", y - 6.0);
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{y:.1}\" {FONT}>{}</text>", lx + 24.0, escape(text));
    }
    let _ = writeln!(
        out,
        "<text x=\"{MARGIN_L}\" y=\"{:.1}\" {FONT}>period blocks left to right, age blocks bottom to top</text>",
        MARGIN_T + cell * n_age + 20.0
    );
    out.push_str("</svg>\n");
    Ok(out)
}

fn polyline(points: &[(f64, f64)], colour: &str, dash: bool) -> String {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
    let dash = if dash { " stroke-dasharray=\"4 3\"" } else { "" };
    format!("<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"{dash}/>\n", pts.join(" "))
}

fn band(upper: &[(f64, f64)], lower: &[(f64, f64)], colour: &str) -> String {
    let pts: Vec<String> = upper.iter().chain(lower.iter().rev()).map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
    format!("<polygon points=\"{}\" fill=\"{colour}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n", pts.join(" "))
}

/// Level and C-trend along one cohort, with the cell means it passes.
pub fn cohort_track(csv: &Csv) -> anyhow::Result<String> {
    let years = csv.ints("year")?;
    let ages = csv.ints("age")?;
    let birth = csv.ints("birth_year")?.first().copied().unwrap_or(0);
    let cols = ["mean", "mean_ci_low", "mean_ci_high", "v_hat", "v_ci_low", "v_ci_high", "u_hat", "u_ci_low", "u_ci_high"];
    let v: Vec<Vec<Option<f64>>> = cols.iter().map(|c| csv.f64s(c)).collect::<anyhow::Result<_>>()?;
    let (x_lo, x_hi) = bounds(years.iter().map(|&y| y as f64));
    let panel = 200.0;
    let height = MARGIN_T + 2.0 * panel + 80.0;
    let xa = Axis { lo: x_lo, hi: x_hi, from: MARGIN_L + 10.0, to: WIDTH - 30.0 };
    let (l_lo, l_hi) = bounds(v[..6].iter().flatten().flatten().copied());
    let (l_lo, l_hi) = padded(l_lo, l_hi);
    let top = Axis { lo: l_lo, hi: l_hi, from: MARGIN_T + panel, to: MARGIN_T };
    let (u_lo, u_hi) = bounds(v[6..].iter().flatten().flatten().copied());
    let (u_lo, u_hi) = padded(u_lo, u_hi);
    let bottom = Axis { lo: u_lo, hi: u_hi, from: MARGIN_T + 2.0 * panel + 30.0, to: MARGIN_T + panel + 30.0 };

    let mut out = String::new();
    open(&mut out, WIDTH, height, &csv.digest, &format!("Cohort born {birth}: level and C-trend"));
    value_axis(&mut out, &top, MARGIN_L, "level");
    value_axis(&mut out, &bottom, MARGIN_L, "u");
    let series = |k: usize, ax: &Axis| -> Vec<(f64, f64)> {
        years.iter().zip(&v[k]).filter_map(|(&y, val)| val.map(|val| (xa.map(y as f64), ax.map(val)))).collect()
    };
    out.push_str(&band(&series(5, &top), &series(4, &top), "#3182bd"));
    out.push_str(&polyline(&series(3, &top), "#3182bd", false));
    for k in 0..years.len() {
        let Some(m) = v[0][k] else { continue };
        let x = xa.map(years[k] as f64);
        if let (Some(l), Some(h)) = (v[1][k], v[2][k]) {
            let _ = writeln!(out, "<line x1=\"{x:.1}\" x2=\"{x:.1}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"#d95f02\"/>", top.map(l), top.map(h));
        }
        let _ = writeln!(
            out,
            "<circle cx=\"{x:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"#d95f02\"><title>{} age {}: {m}</title></circle>",
            top.map(m),
            years[k],
            ages[k]
        );
    }
    out.push_str(&band(&series(8, &bottom), &series(7, &bottom), "#31a354"));
    out.push_str(&polyline(&series(6, &bottom), "#31a354", false));
    if (u_lo..=u_hi).contains(&0.0) {
        let z = bottom.map(0.0);
        let _ = writeln!(out, "<line x1=\"{:.1}\" x2=\"{:.1}\" y1=\"{z:.1}\" y2=\"{z:.1}\" stroke=\"#888\"/>", xa.from, xa.to);
    }
    let span = x_hi - x_lo;
    let step = if span > 40.0 { 10 } else if span > 10.0 { 5 } else { 1 };
    for k in 0..years.len() {
        if years[k] % step == 0 {
            let x = xa.map(years[k] as f64);
            let _ = writeln!(
                out,
                "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{} ({})</text>",
                height - 30.0,
                years[k],
                ages[k]
            );
        }
    }
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>year (age)</text>", (xa.from + xa.to) / 2.0, height - 12.0);
    let lx = WIDTH - 200.0;
    let _ = writeln!(out, "<text x=\"{lx}\" y=\"{:.1}\" {FONT} fill=\"#d95f02\">cell mean, 95% interval</text>", MARGIN_T + 10.0);
    let _ = writeln!(out, "<text x=\"{lx}\" y=\"{:.1}\" {FONT} fill=\"#3182bd\">estimated level</text>", MARGIN_T + 24.0);
    let _ = writeln!(out, "<text x=\"{lx}\" y=\"{:.1}\" {FONT} fill=\"#31a354\">C-trend</text>", MARGIN_T + panel + 40.0);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Smoothing weights and average correlations per iteration.
pub fn trace(csv: &Csv) -> anyhow::Result<String> {
    let it = csv.ints("iteration")?;
    let l1 = csv.f64s("lambda1")?;
    let l2 = csv.f64s("lambda2")?;
    let ru = csv.f64s("r_u")?;
    let rv = csv.f64s("r_v")?;
    let panel = 180.0;
    let height = MARGIN_T + 2.0 * panel + 70.0;
    let (i_lo, i_hi) = bounds(it.iter().map(|&i| i as f64));
    let xa = Axis { lo: i_lo, hi: i_hi, from: MARGIN_L + 10.0, to: WIDTH - 30.0 };
    let logs = l1.iter().chain(&l2).flatten().filter(|v| **v > 0.0).map(|v| v.log10());
    let (a, b) = bounds(logs);
    let top = Axis { lo: a, hi: b, from: MARGIN_T + panel, to: MARGIN_T };
    let (c, d) = bounds(ru.iter().chain(&rv).flatten().copied());
    let (c, d) = padded(c, d);
    let bottom = Axis { lo: c, hi: d, from: MARGIN_T + 2.0 * panel + 30.0, to: MARGIN_T + panel + 30.0 };
    let mut out = String::new();
    open(&mut out, WIDTH, height, &csv.digest, "Iteration trace");
    value_axis(&mut out, &top, MARGIN_L, "log10 weight");
    value_axis(&mut out, &bottom, MARGIN_L, "mean correlation");
    let pts = |vals: &[Option<f64>], ax: &Axis, log: bool| -> Vec<(f64, f64)> {
        it.iter()
            .zip(vals)
            .filter_map(|(&i, v)| {
                let v = (*v)?;
                let v = if log { v.log10() } else { v };
                v.is_finite().then(|| (xa.map(i as f64), ax.map(v)))
            })
            .collect()
    };
    out.push_str(&polyline(&pts(&l1, &top, true), "#1b9e77", false));
    out.push_str(&polyline(&pts(&l2, &top, true), "#7570b3", true));
    out.push_str(&polyline(&pts(&ru, &bottom, false), "#1b9e77", false));
    out.push_str(&polyline(&pts(&rv, &bottom, false), "#7570b3", true));
    let lx = WIDTH - 160.0;
    let _ = writeln!(out, "<text x=\"{lx}\" y=\"{:.1}\" {FONT} fill=\"#1b9e77\">C-trend weight / r_u</text>", MARGIN_T + 10.0);
    let _ = writeln!(out, "<text x=\"{lx}\" y=\"{:.1}\" {FONT} fill=\"#7570b3\">level weight / r_v</text>", MARGIN_T + 24.0);
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>iteration</text>", (xa.from + xa.to) / 2.0, height - 12.0);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Side-by-side C-trend maps of several runs on a shared colour scale.
pub fn sheet(runs: &[(String, Csv)]) -> anyhow::Result<String> {
    let per_row = 2usize;
    let tile = (WIDTH - 40.0) / per_row as f64;
    let mut all = Vec::new();
    let mut parsed = Vec::new();
    for (label, csv) in runs {
        let years = csv.ints("year")?;
        let ages = csv.ints("age")?;
        let u = csv.f64s("u_hat")?;
        all.extend(u.iter().flatten().copied());
        parsed.push((label, years, ages, u));
    }
    let (lo, hi) = bounds(all.into_iter());
    let grid = parsed.first().map(|p| Grid::new(&p.1, &p.2, tile + MARGIN_L - 10.0));
    let tile_h = grid.as_ref().map_or(100.0, |g| g.height()) + 50.0;
    let rows = runs.len().div_ceil(per_row);
    let height = MARGIN_T + rows as f64 * tile_h + 40.0;
    let digests: Vec<&str> = runs.iter().map(|(_, c)| c.digest.as_str()).collect();
    let mut out = String::new();
    open(&mut out, WIDTH, height, &digests.join(" "), "C-trends for each pair of target correlations");
    if let Some(grid) = grid {
        for (n, (label, years, ages, u)) in parsed.iter().enumerate() {
            let (ox, oy) = ((n % per_row) as f64 * tile, (n / per_row) as f64 * tile_h);
            let _ = writeln!(out, "<g transform=\"translate({ox:.1} {oy:.1})\" shape-rendering=\"crispEdges\">");
            let _ = writeln!(out, "<text x=\"{MARGIN_L}\" y=\"{:.1}\" {FONT}>{}</text>", MARGIN_T - 4.0, escape(label));
            for ((&y, &a), v) in years.iter().zip(ages).zip(u) {
                let Some(v) = v else { continue };
                let _ = writeln!(
                    out,
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                    grid.x(y),
                    grid.y(a) + 6.0,
                    grid.cell,
                    grid.cell,
                    colour((v - lo) / (hi - lo))
                );
            }
            out.push_str("</g>\n");
        }
    }
    let _ = writeln!(
        out,
        "<text x=\"{MARGIN_L}\" y=\"{:.1}\" {FONT}>u from {} (dark) to {} (light); x year, y age</text>",
        height - 14.0,
        tick(lo, hi - lo),
        tick(hi, hi - lo)
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Figures derived from a known output table, keyed by file stem.
pub fn figures(stem: &str, text: &str) -> anyhow::Result<Vec<(String, String)>> {
    let csv = Csv::parse(text)?;
    let one = |svg: String| vec![(format!("{stem}.svg"), svg)];
    Ok(match stem {
        "observed" => one(observed(&csv)?),
        "levels" => one(heatmap(&csv, "v_hat", "Estimated levels")?),
        "ctrends" => vec![
            ("ctrends.svg".into(), heatmap(&csv, "u_hat", "Estimated C-trends (units per year)")?),
            ("ctrends_ci_low.svg".into(), heatmap(&csv, "ci_low", "C-trend lower 95% bound")?),
            ("ctrends_ci_high.svg".into(), heatmap(&csv, "ci_high", "C-trend upper 95% bound")?),
        ],
        "clusters" => one(cluster_ci(&csv)?),
        "comparisons" => one(comparison_chart(&csv)?),
        "cohort" => one(cohort_track(&csv)?),
        "trace" => one(trace(&csv)?),
        _ => Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = "# run d1\nyear,age,birth_year,v_hat\n2000,30,1970,1.5\n2000,31,1969,\n2001,30,1971,2.5\n2001,31,1970,2\n";

    #[test]
    fn heatmap_is_deterministic_and_tagged() {
        let csv = Csv::parse(GRID).unwrap();
        let a = heatmap(&csv, "v_hat", "t").unwrap();
        let b = heatmap(&Csv::parse(GRID).unwrap(), "v_hat", "t").unwrap();
        assert_eq!(a, b);
        assert!(a.contains("<!-- run d1 -->"));
        assert_eq!(a.matches("<rect x=").count(), 3 + 1 + 32);
        assert!(a.ends_with("</svg>\n"));
    }

    #[test]
    fn colour_scale_endpoints() {
        assert_eq!(colour(0.0), "#440154");
        assert_eq!(colour(1.0), "#fde725");
        assert_eq!(colour(f64::NAN), "#440154");
    }

    #[test]
    fn missing_digest_or_column_is_an_error() {
        assert!(Csv::parse("year,age\n1,2\n").is_err());
        let csv = Csv::parse(GRID).unwrap();
        assert!(heatmap(&csv, "u_hat", "t").is_err());
    }

    #[test]
    fn unknown_tables_have_no_figure() {
        assert!(figures("something", GRID).unwrap().is_empty());
        assert_eq!(figures("levels", GRID).unwrap()[0].0, "levels.svg");
    }
}
