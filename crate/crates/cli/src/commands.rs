//! Subcommand bodies. Each returns the process exit code on success.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use drm_core::domain::AnalysisDomain;
use drm_core::geometry::{level_surface, CellIndex};
use drm_core::ingest::{read_records, write_records};
use drm_core::iteration::StopReason;
use drm_core::pipeline::{fit, FitResult};
use drm_core::simulate::{simulate, Scenario};
use drm_core::verify::{run_verification, VerifyOptions};
use drm_core::DrmError;
use serde::Serialize;
use serde_json::json;

use crate::config::Config;
use crate::output::{sha256_hex, write_file_atomic, Staging};
use crate::svg::{self, Csv};
use crate::tables::{self, num, opt, Table};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;
pub const EXIT_SINGULAR: u8 = 4;

/// Tables written by a fit, in order; each also gets its figures.
const TABLES: [&str; 7] = ["observed", "levels", "ctrends", "clusters", "comparisons", "cohort", "trace"];

/// Exit code for an error anywhere in the chain.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<DrmError>() {
            return match e {
                DrmError::Singular { .. } => EXIT_SINGULAR,
                DrmError::InvalidFrame(_)
                | DrmError::OutOfFrame { .. }
                | DrmError::InvalidRecord(_)
                | DrmError::Input(_)
                | DrmError::NoAnalyzableCells
                | DrmError::EmptyDomain
                | DrmError::InvalidParameter { .. } => EXIT_INPUT,
                _ => EXIT_FAILURE,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<toml::de::Error>() || cause.is::<csv::Error>() {
            return EXIT_INPUT;
        }
    }
    EXIT_FAILURE
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub struct FitArgs {
    pub data: PathBuf,
    pub config: Config,
    pub out: PathBuf,
    pub batch: bool,
}

struct Input {
    path: PathBuf,
    bytes: Vec<u8>,
    records: Vec<drm_core::ingest::SurveyRecord>,
}

fn read_input(path: &Path) -> anyhow::Result<Input> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let records = read_records(bytes.as_slice()).with_context(|| format!("reading {}", path.display()))?;
    if records.is_empty() {
        return Err(DrmError::Input(format!("{} holds no records", path.display())).into());
    }
    Ok(Input { path: path.to_path_buf(), bytes, records })
}

/// Short run identifier over tool version, run kind, effective config and data.
fn run_digest(kind: &str, config: &Config, data: &[u8]) -> (String, String, String) {
    let config_digest = sha256_hex(config.canonical().as_bytes());
    let data_digest = sha256_hex(data);
    let run = sha256_hex(format!("{} {kind} {config_digest} {data_digest}", env!("CARGO_PKG_VERSION")).as_bytes());
    (run[..16].to_string(), config_digest, data_digest)
}

fn status_name(stop: StopReason) -> &'static str {
    match stop {
        StopReason::Converged => "converged",
        StopReason::MaxIterations => "max-iterations",
        StopReason::Degenerate => "degenerate",
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    run: &'a str,
    tool: &'static str,
    version: &'static str,
    config_digest: &'a str,
    input: serde_json::Value,
    config: &'a Config,
    frame: serde_json::Value,
    domain: serde_json::Value,
    targets: serde_json::Value,
    lambda1: f64,
    lambda2: f64,
    r_u: Option<f64>,
    r_v: Option<f64>,
    r2: Option<f64>,
    sigma2: Option<f64>,
    df: i64,
    df_rule: &'static str,
    iterations: usize,
    status: &'static str,
    cohort: i64,
    records: serde_json::Value,
    warnings: &'a [String],
    started: String,
    finished: String,
    files: Vec<String>,
}

/// Write the full bundle of one fit below `prefix` in the staging tree.
fn write_bundle(
    stage: &mut Staging,
    prefix: &str,
    input: &Input,
    config: &Config,
    res: &FitResult,
    started: String,
) -> anyhow::Result<()> {
    let (run, config_digest, data_digest) = run_digest("fit", config, &input.bytes);
    let cohort = match config.output.cohort {
        Some(b) => b,
        None => tables::default_cohort(res),
    };
    let empty = |name: &'static str| Table { header: vec![name], rows: Vec::new() };
    let mut tables: Vec<(&str, Table)> = vec![
        ("observed", tables::observed(res)),
        ("levels", tables::levels(res)),
        ("ctrends", tables::ctrends(res)),
    ];
    match &res.clusters {
        Some(c) => {
            tables.push(("clusters", tables::clusters(c)));
            tables.push(("comparisons", tables::comparisons(c)));
        }
        None => {
            tables.push(("clusters", empty("year_block")));
            tables.push(("comparisons", empty("from_year_block")));
        }
    }
    tables.push(("cohort", tables::cohort(res, cohort)?));
    tables.push(("trace", tables::trace(res)));
    debug_assert!(tables.iter().map(|t| t.0).eq(TABLES));

    let start_files = stage.files().len();
    for (stem, table) in &tables {
        let text = table.to_csv(&run)?;
        stage.write(&format!("{prefix}{stem}.csv"), text.as_bytes())?;
        if table.rows.is_empty() {
            continue;
        }
        for (name, figure) in svg::figures(stem, &text)? {
            stage.write(&format!("{prefix}{name}"), figure.as_bytes())?;
        }
    }

    let mut domain = serde_json::to_value(res.domain.dump())?;
    domain["run"] = json!(run);
    stage.write(&format!("{prefix}domain.json"), serde_json::to_string_pretty(&domain)?.as_bytes())?;
    let mut report = serde_json::to_value(&res.report)?;
    report["run"] = json!(run);
    report["filtered_out"] = json!(res.filtered_out);
    stage.write(&format!("{prefix}ingest_report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    if config.output.dump_system {
        let mut buf = format!("# run {run}\n").into_bytes();
        res.system.write_triplets(&mut buf)?;
        stage.write(&format!("{prefix}system.txt"), &buf)?;
    }

    let f = res.frame;
    let (i_l, i_r) = res.domain.v0_segment();
    let sol = &res.outcome.solution;
    let files = stage.files()[start_files..].iter().map(|p| p.strip_prefix(prefix).unwrap_or(p).to_string()).collect();
    let manifest = Manifest {
        run: &run,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_digest: &config_digest,
        input: json!({ "path": input.path.display().to_string(), "sha256": data_digest, "bytes": input.bytes.len() }),
        config,
        frame: json!({
            "y_min": f.y_min, "y_max": f.y_max, "a_min": f.a_min, "a_max": f.a_max,
            "first_year": f.year_of(0), "last_year": f.year_of(f.i_max_rel),
            "first_age": f.age_of(0), "last_age": f.age_of(f.j_max_rel),
        }),
        domain: json!({
            "u_cells": res.domain.u_count(),
            "boundary_levels": res.domain.v0_count(),
            "parameters": res.domain.dim(),
            "birth_years": [f.birth_year(f.boundary_cell(i_l)), f.birth_year(f.boundary_cell(i_r))],
            "data_cells": res.aggregation.cells.len(),
            "selection": config.ingest.domain,
        }),
        targets: json!({
            "r_v": config.iteration.r_v, "r_u": config.iteration.r_u,
            "delta_u": config.iteration.delta_u, "delta_v": config.iteration.delta_v,
        }),
        lambda1: sol.lambda1,
        lambda2: sol.lambda2,
        r_u: res.outcome.smoothness.r_u,
        r_v: res.outcome.smoothness.r_v,
        r2: sol.r2,
        sigma2: sol.sigma2_hat,
        df: sol.degrees_of_freedom(),
        df_rule: "data rows + smoothness rows - parameters",
        iterations: res.outcome.iterations,
        status: status_name(res.outcome.stop),
        cohort,
        records: json!({
            "total": res.records + res.filtered_out,
            "filtered_out": res.filtered_out,
            "used": res.report.used,
            "flagged": res.report.flagged,
            "excluded": res.report.excluded_records,
        }),
        warnings: &res.warnings,
        started,
        finished: now(),
        files,
    };
    stage.write(&format!("{prefix}manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(())
}

fn summary_line(label: &str, res: &FitResult) -> String {
    let sol = &res.outcome.solution;
    format!(
        "{label}: {} after {} iterations, lambda = ({:.4e}, {:.4e}), r_u = {}, r_v = {}, R2 = {}",
        status_name(res.outcome.stop),
        res.outcome.iterations,
        sol.lambda1,
        sol.lambda2,
        res.outcome.smoothness.r_u.map_or("-".into(), |r| format!("{r:.4}")),
        res.outcome.smoothness.r_v.map_or("-".into(), |r| format!("{r:.4}")),
        sol.r2.map_or("-".into(), |r| format!("{r:.4}")),
    )
}

pub fn cmd_fit(args: FitArgs) -> anyhow::Result<u8> {
    args.config.validate()?;
    let started = now();
    let input = read_input(&args.data)?;
    if !args.batch {
        let res = fit(&input.records, &args.config.fit_config()?)?;
        let mut stage = Staging::new(&args.out)?;
        write_bundle(&mut stage, "", &input, &args.config, &res, started)?;
        let dir = stage.commit()?;
        for w in &res.warnings {
            log::warn!("{w}");
        }
        println!("{}", summary_line("fit", &res));
        println!("outputs in {}", dir.display());
        return Ok(if res.outcome.converged() { EXIT_OK } else { EXIT_NOT_CONVERGED });
    }

    let configs: Vec<Config> = args
        .config
        .batch
        .iter()
        .map(|&[r_v, r_u]| {
            let mut c = args.config.clone();
            c.iteration.r_u = r_u;
            c.iteration.r_v = r_v;
            c
        })
        .collect();
    if configs.is_empty() {
        return Err(DrmError::InvalidParameter { name: "batch", reason: "no target pairs".into() }.into());
    }
    let results: Vec<anyhow::Result<FitResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| {
                let records = &input.records;
                s.spawn(move || -> anyhow::Result<FitResult> { Ok(fit(records, &c.fit_config()?)?) })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("batch run panicked")))).collect()
    });

    let mut stage = Staging::new(&args.out)?;
    let mut sheet = Table {
        header: vec![
            "r_v", "r_u", "status", "iterations", "lambda1", "lambda2", "r_u_bar", "r_v_bar", "r2", "sigma2", "run", "directory",
        ],
        rows: Vec::new(),
    };
    let mut maps = Vec::new();
    let mut all_converged = true;
    let mut runs = Vec::new();
    for (cfg, res) in configs.iter().zip(results) {
        let res = res?;
        let label = format!("R({}, {})", cfg.iteration.r_v, cfg.iteration.r_u);
        let dir = format!("r_v{}_r_u{}", cfg.iteration.r_v, cfg.iteration.r_u);
        write_bundle(&mut stage, &format!("{dir}/"), &input, cfg, &res, started.clone())?;
        let (run, _, _) = run_digest("fit", cfg, &input.bytes);
        let ctrends = fs::read_to_string(stage.path().join(&dir).join("ctrends.csv"))?;
        maps.push((label.clone(), Csv::parse(&ctrends)?));
        let sol = &res.outcome.solution;
        sheet.rows.push(vec![
            num(cfg.iteration.r_v),
            num(cfg.iteration.r_u),
            status_name(res.outcome.stop).into(),
            res.outcome.iterations.to_string(),
            num(sol.lambda1),
            num(sol.lambda2),
            opt(res.outcome.smoothness.r_u),
            opt(res.outcome.smoothness.r_v),
            opt(sol.r2),
            opt(sol.sigma2_hat),
            run.clone(),
            dir.clone(),
        ]);
        all_converged &= res.outcome.converged();
        println!("{}", summary_line(&label, &res));
        runs.push(json!({ "r_v": cfg.iteration.r_v, "r_u": cfg.iteration.r_u, "run": run, "directory": dir }));
    }
    let (batch_run, _, _) = run_digest("batch", &args.config, &input.bytes);
    stage.write("comparison.csv", sheet.to_csv(&batch_run)?.as_bytes())?;
    stage.write("comparison.svg", svg::sheet(&maps)?.as_bytes())?;
    let manifest = json!({
        "run": batch_run,
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "input": args.data.display().to_string(),
        "runs": runs,
        "started": started,
        "finished": now(),
    });
    stage.write("manifest.json", serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    let dir = stage.commit()?;
    println!("outputs in {}", dir.display());
    Ok(if all_converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

pub struct SimulateArgs {
    pub preset: Option<String>,
    pub scenario: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub output_dir: PathBuf,
}

pub fn load_scenario(preset: Option<&str>, file: Option<&Path>) -> anyhow::Result<Scenario> {
    match (preset, file) {
        (Some(_), Some(_)) => Err(DrmError::Input("give either a preset or a scenario file".into()).into()),
        (Some(name), None) => Ok(Scenario::preset(name)?),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        (None, None) => Err(DrmError::Input(format!("give a scenario file or one of the presets {:?}", Scenario::PRESETS)).into()),
    }
}

/// True C-trends and levels of a scenario over the extended grid.
fn truth_table(scenario: &Scenario) -> anyhow::Result<Table> {
    let frame = scenario.frame()?;
    let z = scenario.truth(&frame);
    let levels = level_surface(&z, &AnalysisDomain::full(frame));
    let mut t = Table { header: vec!["year", "age", "birth_year", "u_true", "v_true"], rows: Vec::new() };
    let cols = frame.j_max_rel + 2;
    for i in 0..=frame.i_max_rel + 1 {
        for j in 0..cols {
            let c = CellIndex::new(i, j);
            let u = frame.in_u(c).then(|| z.u_at(&frame, c));
            t.rows.push(vec![
                frame.year_of(i).to_string(),
                frame.age_of(j).to_string(),
                frame.birth_year(c).to_string(),
                opt(u),
                opt(levels[i * cols + j]),
            ]);
        }
    }
    Ok(t)
}

pub fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<u8> {
    let mut scenario = load_scenario(args.preset.as_deref(), args.scenario.as_deref())?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    scenario.validate()?;
    let records = simulate(&scenario)?;
    let mut buf = Vec::new();
    write_records(&records, &mut buf)?;
    let out = args.out.unwrap_or_else(|| args.output_dir.join(format!("{}.csv", scenario.name)));
    write_file_atomic(&out, &buf)?;
    if let Some(path) = args.truth {
        let digest = sha256_hex(&buf);
        write_file_atomic(&path, truth_table(&scenario)?.to_csv(&digest[..16])?.as_bytes())?;
    }
    println!("{} records from scenario {} (seed {}) written to {}", records.len(), scenario.name, scenario.seed, out.display());
    Ok(EXIT_OK)
}

pub fn cmd_verify(opts: VerifyOptions, as_json: bool) -> anyhow::Result<u8> {
    let report = run_verification(&opts)?;
    if as_json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        for c in &report.checks {
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        println!("max oracle deviation: z {:.3e}, covariance {:.3e}", report.max_oracle_z, report.max_oracle_cov);
    }
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
}

/// Re-render the figures of a fit or batch directory from its tables.
pub fn cmd_report(dir: &Path) -> anyhow::Result<u8> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: serde_json::Value = serde_json::from_str(&text).map_err(|e| DrmError::Input(format!("{}: {e}", manifest_path.display())))?;
    if let Some(runs) = manifest["runs"].as_array() {
        let mut maps = Vec::new();
        for run in runs {
            let sub = run["directory"].as_str().ok_or_else(|| DrmError::Input("batch entry without directory".into()))?;
            cmd_report(&dir.join(sub))?;
            let ctrends = fs::read_to_string(dir.join(sub).join("ctrends.csv"))?;
            maps.push((format!("R({}, {})", run["r_v"], run["r_u"]), Csv::parse(&ctrends)?));
        }
        write_file_atomic(&dir.join("comparison.svg"), svg::sheet(&maps)?.as_bytes())?;
        return Ok(EXIT_OK);
    }
    let mut rendered = 0;
    for stem in TABLES {
        let path = dir.join(format!("{stem}.csv"));
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path)?;
        if Csv::parse(&text).map(|c| c.digest) .ok().as_deref() != manifest["run"].as_str() {
            log::warn!("{} does not belong to run {}", path.display(), manifest["run"]);
        }
        for (name, figure) in svg::figures(stem, &text).with_context(|| format!("rendering {}", path.display()))? {
            write_file_atomic(&dir.join(name), figure.as_bytes())?;
            rendered += 1;
        }
    }
    let field = |k: &str| manifest[k].to_string();
    println!(
        "run {}: {} after {} iterations, lambda = ({}, {}), R2 = {}; {rendered} figures in {}",
        manifest["run"].as_str().unwrap_or("?"),
        manifest["status"].as_str().unwrap_or("?"),
        field("iterations"),
        field("lambda1"),
        field("lambda2"),
        field("r2"),
        dir.display()
    );
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let singular = anyhow::Error::from(DrmError::Singular { pivot: 1, dim: 2 });
        assert_eq!(exit_code(&singular), EXIT_SINGULAR);
        let input = anyhow::Error::from(DrmError::NoAnalyzableCells).context("fitting");
        assert_eq!(exit_code(&input), EXIT_INPUT);
        let io = anyhow::Error::from(std::io::Error::new(std::io::ErrorKind::NotFound, "x"));
        assert_eq!(exit_code(&io), EXIT_INPUT);
        assert_eq!(exit_code(&anyhow!("other")), EXIT_FAILURE);
    }

    #[test]
    fn scenario_source_must_be_unique() {
        assert!(load_scenario(None, None).is_err());
        assert!(load_scenario(Some("paper"), Some(Path::new("x.toml"))).is_err());
        assert!(load_scenario(Some("nope"), None).is_err());
        assert_eq!(load_scenario(Some("paper"), None).unwrap().name, "paper");
    }

    #[test]
    fn truth_table_covers_extended_grid() {
        let s = Scenario::preset("linear-age").unwrap();
        let f = s.frame().unwrap();
        let t = truth_table(&s).unwrap();
        assert_eq!(t.rows.len(), (f.rows() + 1) * (f.cols() + 1));
        assert!(t.rows.iter().all(|r| !r[4].is_empty()));
    }
}
