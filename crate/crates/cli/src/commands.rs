use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use statpriv::baseline::DpCalibrationMethod;
use statpriv::compose::{compose as run_compose, CompositionMode, CompositionReport, QueryPlan};
use statpriv::curve::{check_grid, DEFAULT_EPSILON_GRID};
use statpriv::oracle::{exact_mechanism_law, verify_matrix, McSettings, VerificationReport, DOMINATION_TOLERANCE};
use statpriv::partition::{PartitionLaw, TemplateFormat};
use statpriv::query::QueryDescriptor;
use statpriv::spc::{iid_property_d_hat, spc_general, spc_known_entries, EntryModel, Scenario, SpcMode};
use statpriv::tables::{check, compare_row, reproduce, CellCheck, CellField, TableRow, TableSpec};

use crate::output::{self, Format, OutputArgs};
use crate::scenario::ScenarioFile;
use crate::Status;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum DpMethodArg {
    #[default]
    NoiseFormula,
    OptimalCompositionGrid,
}

impl From<DpMethodArg> for DpCalibrationMethod {
    fn from(m: DpMethodArg) -> Self {
        match m {
            DpMethodArg::NoiseFormula => DpCalibrationMethod::NoiseFormula,
            DpMethodArg::OptimalCompositionGrid => DpCalibrationMethod::OptimalCompositionGrid,
        }
    }
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// Scenario file (JSON, schema_version 1).
    #[arg(long, value_name = "FILE", conflicts_with_all = ["n", "p", "known"])]
    scenario: Option<PathBuf>,
    /// Database size.
    #[arg(long)]
    n: Option<usize>,
    /// Occurrence probability of the property.
    #[arg(long)]
    p: Option<f64>,
    /// Sample size s (the critical entry is always sampled).
    #[arg(long)]
    sample_size: Option<usize>,
    /// Comma-separated ε values.
    #[arg(long = "eps", visible_alias = "eps-grid", value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Number of entries known to the adversary.
    #[arg(long)]
    known: Option<usize>,
    /// How many of the known entries are positive.
    #[arg(long, default_value_t = 0, requires = "known")]
    known_positive: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Serialize)]
struct CurveRow {
    epsilon: f64,
    delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    half_width: Option<f64>,
}

#[derive(Debug, Serialize)]
struct CurveOutput {
    points: Vec<CurveRow>,
}

fn check_eps(eps: &Option<Vec<f64>>) -> Result<()> {
    if let Some(e) = eps {
        check_grid(e)?;
    }
    Ok(())
}

/// Query used by `curve` on a scenario file: the plan's single query when
/// there is one, otherwise the property on attribute 0.
fn curve_query(file: &ScenarioFile) -> Result<QueryDescriptor> {
    match &file.plan {
        None => Ok(QueryDescriptor::property(0)),
        Some(QueryPlan::Nonadaptive { queries }) if queries.len() == 1 => Ok(queries[0]),
        Some(_) => bail!("curve needs a plan with exactly one nonadaptive query"),
    }
}

pub fn curve(args: CurveArgs) -> Result<Status> {
    check_eps(&args.eps)?;
    let (scenario, sample_size, epsilons, query, mode) = match &args.scenario {
        Some(path) => {
            let file = ScenarioFile::load(path)?;
            let sample_size = match (args.sample_size, &file.format) {
                (Some(s), _) => s,
                (None, Some(format)) if format.blocks() == 1 => format.sizes()[0],
                _ => bail!("--sample-size is required unless the scenario format has exactly one block"),
            };
            let epsilons = file.epsilons(args.eps.as_deref());
            (file.scenario()?, sample_size, epsilons, curve_query(&file)?, file.spc_mode())
        }
        None => {
            let n = args.n.context("--n is required without --scenario")?;
            let p = args.p.context("--p is required without --scenario")?;
            let s = args.sample_size.context("--sample-size is required")?;
            let scenario = match args.known {
                Some(v) => Scenario::known_entries(n, p, v, args.known_positive, 0)?,
                None => Scenario::iid(n, p, 0)?,
            };
            let eps = args.eps.clone().unwrap_or_else(|| DEFAULT_EPSILON_GRID.to_vec());
            (scenario, s, eps, QueryDescriptor::property(0), SpcMode::Enumerate)
        }
    };
    if sample_size == 0 || sample_size > scenario.n() {
        bail!("sample size {sample_size} must lie in 1..={}", scenario.n());
    }
    let attribute = query.attribute().context("curve needs a property query")?;
    let points = epsilons
        .iter()
        .map(|&eps| {
            let (delta, half_width) = match scenario.entries() {
                EntryModel::Iid { p } => (
                    iid_property_d_hat(sample_size as u64, *p.get(attribute).context("attribute out of range")?, eps)?,
                    None,
                ),
                EntryModel::KnownEntries { .. } => (spc_known_entries(&scenario, sample_size, eps)?, None),
                EntryModel::Explicit { .. } => {
                    let law = PartitionLaw::new(scenario.n(), TemplateFormat::new(vec![sample_size])?)?
                        .restricted(scenario.critical(), 0)?;
                    let est = spc_general(&scenario, &law, &query, eps, mode)?;
                    (est.value, est.half_width)
                }
            };
            Ok(CurveRow { epsilon: eps, delta, half_width })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = args.output.out.as_deref();
    match args.output.format {
        Format::Json => output::write_json(out, &CurveOutput { points })?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = points.iter().map(|p| vec![p.epsilon.to_string(), p.delta.to_string()]).collect();
            output::write_csv(out, &["epsilon", "delta"], &rows)?;
        }
    }
    Ok(Status::Ok)
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Compare δ and σ against the reference cells and exit 1 on mismatch.
    #[arg(long)]
    check: bool,
    /// With --check, also fail on DP query counts outside ±max(2, 50%).
    #[arg(long, requires = "check")]
    strict_dp: bool,
    /// How the DP query count is calibrated.
    #[arg(long, value_enum, default_value_t = DpMethodArg::NoiseFormula)]
    dp_method: DpMethodArg,
    #[command(flatten)]
    output: OutputArgs,
}

const TABLE_HEADER: [&str; 5] = ["m", "sigma", "eps", "delta_sp", "dp_queries"];

fn table_csv_rows(rows: &[TableRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![r.m.to_string(), r.sigma.to_string(), r.eps.to_string(), r.delta_sp.to_string(), r.dp_queries.to_string()]
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct TableOutput<'a> {
    table: &'a str,
    n: u64,
    p: f64,
    dp_method: DpCalibrationMethod,
    rows: &'a [TableRow],
    #[serde(skip_serializing_if = "Option::is_none")]
    checks: Option<&'a [CellCheck]>,
}

fn gated(c: &CellCheck, strict_dp: bool) -> bool {
    c.field != CellField::DpQueries || strict_dp
}

fn describe(c: &CellCheck) -> String {
    let field = match c.field {
        CellField::Delta => "delta",
        CellField::Sigma => "sigma",
        CellField::DpQueries => "dp_queries",
    };
    let mut line = format!(
        "m={} eps={} {field}: computed {} reference {} (tolerance {})",
        c.m, c.eps, c.actual, c.expected, c.tolerance
    );
    if let Some(note) = c.note {
        line.push_str(&format!("; {note}"));
    }
    line
}

pub fn table(spec: TableSpec, args: TableArgs) -> Result<Status> {
    let method = DpCalibrationMethod::from(args.dp_method);
    let rows = reproduce(&spec, method)?;
    let checks = args.check.then(|| check(&spec, &rows));
    let out = args.output.out.as_deref();
    match args.output.format {
        Format::Json => output::write_json(
            out,
            &TableOutput { table: spec.name, n: spec.n, p: spec.p, dp_method: method, rows: &rows, checks: checks.as_deref() },
        )?,
        Format::Csv => output::write_csv(out, &TABLE_HEADER, &table_csv_rows(&rows))?,
    }
    let Some(checks) = checks else {
        return Ok(Status::Ok);
    };
    let mut stderr = std::io::stderr().lock();
    for c in checks.iter().filter(|c| c.note.is_some()) {
        writeln!(stderr, "note: {}", describe(c))?;
    }
    for c in checks.iter().filter(|c| !c.ok && !gated(c, args.strict_dp)) {
        writeln!(stderr, "dp deviation: {}", describe(c))?;
    }
    let failures: Vec<&CellCheck> = checks.iter().filter(|c| !c.ok && gated(c, args.strict_dp)).collect();
    for c in &failures {
        writeln!(stderr, "mismatch: {}", describe(c))?;
    }
    let gated_count = checks.iter().filter(|c| gated(c, args.strict_dp)).count();
    writeln!(stderr, "{}: {}/{} checked cells within tolerance", spec.name, gated_count - failures.len(), gated_count)?;
    Ok(if failures.is_empty() { Status::Ok } else { Status::CheckFailed })
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// Scenario file (JSON, schema_version 1) with format and plan.
    #[arg(long, value_name = "FILE")]
    scenario: PathBuf,
    /// Comma-separated ε values, overriding the file.
    #[arg(long = "eps", value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Also compute the exact mechanism divergence and check that the bound
    /// dominates it (small instances only).
    #[arg(long)]
    verify: bool,
    /// Write to PATH instead of standard output.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct DominationCheck {
    epsilon: f64,
    exact: f64,
    bound: f64,
    margin: f64,
}

#[derive(Debug, Serialize)]
struct ComposeOutput {
    mode: CompositionMode,
    reports: Vec<CompositionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verification: Option<Vec<DominationCheck>>,
}

pub fn compose(args: ComposeArgs) -> Result<Status> {
    check_eps(&args.eps)?;
    let file = ScenarioFile::load(&args.scenario)?;
    let scenario = file.scenario()?;
    let spec = file.spec()?;
    let options = file.options();
    let reports = file
        .epsilons(args.eps.as_deref())
        .into_iter()
        .map(|eps| run_compose(&scenario, &spec, eps, options))
        .collect::<statpriv::Result<Vec<_>>>()?;
    let mode = reports.first().map(|r| r.mode).context("the ε grid is empty")?;
    let verification = if args.verify {
        let law = exact_mechanism_law(&scenario, &spec)?;
        Some(
            reports
                .iter()
                .map(|r| {
                    let exact = law.delta(r.epsilon)?;
                    Ok(DominationCheck { epsilon: r.epsilon, exact, bound: r.total_delta, margin: r.total_delta - exact })
                })
                .collect::<statpriv::Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let violated = verification
        .as_ref()
        .is_some_and(|v| v.iter().any(|c| c.margin < -DOMINATION_TOLERANCE));
    output::write_json(args.out.as_deref(), &ComposeOutput { mode, reports, verification })?;
    if violated {
        output::diagnostic("check failed", "the exact mechanism divergence exceeds the bound");
        return Ok(Status::CheckFailed);
    }
    Ok(Status::Ok)
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Master seed of the Monte-Carlo rows.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo trials per critical value; adds consistency rows.
    #[arg(long)]
    trials: Option<u64>,
    /// Emit the report as JSON.
    #[arg(long)]
    json: bool,
    /// Write to PATH instead of standard output.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

const DEFAULT_VERIFY_TRIALS: u64 = 100_000;

fn write_verify_text(out: Option<&std::path::Path>, report: &VerificationReport) -> Result<()> {
    let mut w = output::open(out)?;
    writeln!(w, "case,epsilon,mode,exact,bound,margin,ok")?;
    for r in &report.domination {
        let mode = serde_json::to_value(r.mode)?;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.case,
            r.epsilon,
            mode.as_str().unwrap_or_default(),
            r.exact,
            r.bound,
            r.margin,
            r.holds()
        )?;
    }
    if !report.consistency.is_empty() {
        writeln!(w)?;
        writeln!(w, "case,epsilon,exact,estimate,half_width,within")?;
        for r in &report.consistency {
            writeln!(w, "{},{},{},{},{},{}", r.case, r.epsilon, r.exact, r.estimate, r.half_width, r.within)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn verify(args: VerifyArgs) -> Result<Status> {
    let mc = (args.seed.is_some() || args.trials.is_some()).then(|| McSettings {
        trials: args.trials.unwrap_or(DEFAULT_VERIFY_TRIALS),
        seed: args.seed.unwrap_or(0),
    });
    let report = verify_matrix(mc)?;
    if args.json {
        #[derive(Serialize)]
        struct Out<'a> {
            passed: bool,
            #[serde(flatten)]
            report: &'a VerificationReport,
        }
        output::write_json(args.out.as_deref(), &Out { passed: report.passed(), report: &report })?;
    } else {
        write_verify_text(args.out.as_deref(), &report)?;
    }
    let failed_bounds = report.domination.iter().filter(|r| !r.holds()).count();
    let failed_mc = report.consistency.iter().filter(|r| !r.within).count();
    eprintln!(
        "verify: {} bound checks ({failed_bounds} failed), {} Monte-Carlo checks ({failed_mc} failed)",
        report.domination.len(),
        report.consistency.len()
    );
    Ok(if report.passed() { Status::Ok } else { Status::CheckFailed })
}

#[derive(Debug, Args)]
pub struct DpCompareArgs {
    /// Database size.
    #[arg(long)]
    n: u64,
    /// Occurrence probability of the property.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Comma-separated block counts; each must divide n.
    #[arg(long, value_delimiter = ',', required = true)]
    m: Vec<usize>,
    /// Comma-separated ε values.
    #[arg(long = "eps", value_delimiter = ',', required = true)]
    eps: Vec<f64>,
    /// How the DP query count is calibrated.
    #[arg(long, value_enum, default_value_t = DpMethodArg::NoiseFormula)]
    dp_method: DpMethodArg,
    #[command(flatten)]
    output: OutputArgs,
}

pub fn dp_compare(args: DpCompareArgs) -> Result<Status> {
    check_grid(&args.eps)?;
    let method = DpCalibrationMethod::from(args.dp_method);
    let mut rows = Vec::with_capacity(args.m.len() * args.eps.len());
    for &m in &args.m {
        for &eps in &args.eps {
            rows.push(compare_row(args.n, args.p, m, eps, method)?);
        }
    }
    let out = args.output.out.as_deref();
    match args.output.format {
        Format::Json => output::write_json(out, &rows)?,
        Format::Csv => output::write_csv(out, &TABLE_HEADER, &table_csv_rows(&rows))?,
    }
    Ok(Status::Ok)
}
