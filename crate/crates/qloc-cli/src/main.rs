//! Command-line front end: instance generation, branch-and-bound solves,
//! the exhaustive oracle, cross-checking, conic export, and cost reports.
//!
//! Exit codes: 0 success, 1 usage, 2 data problem, 3 infeasible instance,
//! 4 stopped at a limit with the gap still open.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use qloc::bnb::{self, BnbConfig, Setting, SolveReport, SolveStatus};
use qloc::conic::export_conic;
use qloc::cuts::add_valid_inequalities;
use qloc::formulations::{add_closest_assignment, build, FormulationKind};
use qloc::instance::{
    generate_instance, load_instance, save_instance, GeneratorConfig, VarianceCfg,
};
use qloc::oracle::solve_exhaustive;

const THREADS_ENV: &str = "QLOC_THREADS";

#[derive(Parser)]
#[command(name = "qloc", version, about = "Facility location and sizing under congestion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded random instance
    Generate(GenerateArgs),
    /// Solve an instance by branch and bound
    Solve(SolveArgs),
    /// Brute-force the exact optimum by enumerating assignments
    Oracle(OracleArgs),
    /// Solve and brute-force, then compare
    Verify(VerifyArgs),
    /// Write a formulation in the conic text format
    Export(ExportArgs),
    /// Render the cost breakdown of a solve report
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    facilities: usize,
    #[arg(long)]
    zones: usize,
    /// Establishment cost range, as lo,hi
    #[arg(long, value_parser = parse_range, default_value = "500,1500")]
    ec: (f64, f64),
    /// Arrival rate range, as lo,hi
    #[arg(long, value_parser = parse_range, default_value = "1,10")]
    lambda: (f64, f64),
    /// Travel cost factor range (scales unit-square distance), as lo,hi
    #[arg(long, value_parser = parse_range, default_value = "1,5")]
    tc_factor: (f64, f64),
    /// Fixed variance coefficients for every facility, as d0,d1,...
    #[arg(long, value_parser = parse_deltas, conflicts_with = "max_order")]
    deltas: Option<Deltas>,
    /// Randomize variance coefficients up to this order instead
    #[arg(long, default_value_t = 2)]
    max_order: usize,
    /// Output path (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    instance: PathBuf,
    #[arg(long, value_parser = parse_formulation, default_value = "general")]
    formulation: FormulationKind,
    #[arg(long, value_parser = parse_setting, default_value = "basic")]
    setting: Setting,
    /// Relative optimality gap to stop at
    #[arg(long, default_value_t = 1e-6)]
    gap: f64,
    /// Wall-clock limit in seconds
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    node_limit: Option<usize>,
    /// Force each zone to its nearest open facility
    #[arg(long)]
    closest_assignment: bool,
    /// Node solves in parallel (default: QLOC_THREADS or 1)
    #[arg(long)]
    threads: Option<usize>,
    /// Pretty-print the report document
    #[arg(long)]
    pretty: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    instance: PathBuf,
    #[arg(long)]
    closest_assignment: bool,
    #[arg(long)]
    pretty: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    instance: PathBuf,
    #[arg(long, value_parser = parse_formulation, default_value = "general")]
    formulation: FormulationKind,
    #[arg(long, value_parser = parse_setting, default_value = "basic")]
    setting: Setting,
    #[arg(long, default_value_t = 1e-6)]
    gap: f64,
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    closest_assignment: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Largest accepted relative difference against the oracle
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct ExportArgs {
    instance: PathBuf,
    #[arg(long, value_parser = parse_formulation, default_value = "general")]
    formulation: FormulationKind,
    #[arg(long)]
    closest_assignment: bool,
    /// Include the always-valid tightening rows
    #[arg(long)]
    vi: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    report: PathBuf,
    /// Render an aligned table instead of tab-separated columns
    #[arg(long)]
    pretty: bool,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected lo,hi, got '{s}'"))?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number '{a}'"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number '{b}'"))?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(format!("need finite lo <= hi, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

/// Wrapper so the list arrives as one comma-separated value.
#[derive(Clone)]
struct Deltas(Vec<f64>);

fn parse_deltas(s: &str) -> Result<Deltas, String> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad coefficient '{p}'"))
        })
        .collect::<Result<_, _>>()
        .map(Deltas)
}

fn parse_formulation(s: &str) -> Result<FormulationKind, String> {
    FormulationKind::parse(s).ok_or_else(|| format!("unknown formulation '{s}' (general|affine|mm1|alt)"))
}

fn parse_setting(s: &str) -> Result<Setting, String> {
    Setting::parse(s)
        .ok_or_else(|| format!("unknown setting '{s}' (basic|vi|cut1|vi-cut1|cut2|vi-cut2)"))
}

/// Outcome categories past usage parsing, each with its exit code.
enum Failure {
    Data(String),
    Infeasible(String),
    Limits(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Data(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Limits(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Data(m) | Failure::Infeasible(m) | Failure::Limits(m) => write!(f, "{m}"),
        }
    }
}

fn data<E: fmt::Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Write to `out`, or stdout when absent. Returns whether stdout was used.
fn write_doc(out: Option<&Path>, content: &str) -> Result<bool, Failure> {
    match out {
        Some(path) => {
            fs::write(path, content).map_err(|e| data(format!("{}: {e}", path.display())))?;
            Ok(false)
        }
        None => {
            println!("{content}");
            Ok(true)
        }
    }
}

fn thread_count(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(1)
    .max(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Export(a) => cmd_export(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    let cfg = GeneratorConfig {
        ec: a.ec,
        lambda: a.lambda,
        tc_factor: a.tc_factor,
        variance: match a.deltas {
            Some(d) => VarianceCfg::Fixed(d.0),
            None => VarianceCfg::Random { l_max: a.max_order },
        },
    };
    let inst = generate_instance(a.seed, a.facilities, a.zones, &cfg).map_err(data)?;
    write_doc(a.out.as_deref(), &save_instance(&inst))?;
    Ok(())
}

fn solve_config(
    formulation: FormulationKind,
    setting: Setting,
    gap: f64,
    time_limit: Option<f64>,
    node_limit: Option<usize>,
    closest_assignment: bool,
    threads: Option<usize>,
) -> BnbConfig {
    BnbConfig {
        kind: formulation,
        setting,
        closest_assignment,
        gap_tol: gap,
        time_limit,
        node_limit,
        threads: thread_count(threads),
    }
}

fn cmd_solve(a: SolveArgs) -> Result<(), Failure> {
    let inst = load_instance(&read_file(&a.instance)?).map_err(data)?;
    let cfg = solve_config(
        a.formulation,
        a.setting,
        a.gap,
        a.time_limit,
        a.node_limit,
        a.closest_assignment,
        a.threads,
    );
    let report = bnb::solve(&inst, &cfg).map_err(data)?;
    let doc = if a.pretty {
        serde_json::to_string_pretty(&report)
    } else {
        serde_json::to_string(&report)
    }
    .map_err(data)?;
    let to_stdout = write_doc(a.out.as_deref(), &doc)?;
    if !to_stdout {
        summarize(&report);
    }
    match report.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::Infeasible => Err(Failure::Infeasible("no feasible design".into())),
        SolveStatus::TimeLimit | SolveStatus::NodeLimit => Err(Failure::Limits(format!(
            "stopped at limit, gap {}",
            report
                .gap
                .map_or_else(|| "unknown".to_string(), |g| format!("{g:.3e}"))
        ))),
    }
}

fn summarize(report: &SolveReport) {
    match (report.objective, report.bound) {
        (Some(obj), _) => println!(
            "{}: objective {obj:.6}, bound {:.6}, {} nodes, {} cuts, {:.2}s",
            status_name(report.status),
            report.bound.unwrap_or(f64::NAN),
            report.nodes,
            report.cuts,
            report.wall_seconds
        ),
        (None, Some(bound)) => println!(
            "{}: no incumbent, bound {bound:.6}, {} nodes, {:.2}s",
            status_name(report.status),
            report.nodes,
            report.wall_seconds
        ),
        (None, None) => println!("{}: no incumbent", status_name(report.status)),
    }
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::TimeLimit => "time limit",
        SolveStatus::NodeLimit => "node limit",
    }
}

fn cmd_oracle(a: OracleArgs) -> Result<(), Failure> {
    let inst = load_instance(&read_file(&a.instance)?).map_err(data)?;
    let report = solve_exhaustive(&inst, a.closest_assignment).map_err(data)?;
    let doc = if a.pretty {
        serde_json::to_string_pretty(&report)
    } else {
        serde_json::to_string(&report)
    }
    .map_err(data)?;
    write_doc(a.out.as_deref(), &doc)?;
    if report.best.is_none() {
        return Err(Failure::Infeasible("no feasible assignment".into()));
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<(), Failure> {
    let inst = load_instance(&read_file(&a.instance)?).map_err(data)?;
    let cfg = solve_config(
        a.formulation,
        a.setting,
        a.gap,
        a.time_limit,
        None,
        a.closest_assignment,
        a.threads,
    );
    let report = bnb::solve(&inst, &cfg).map_err(data)?;
    let oracle = solve_exhaustive(&inst, a.closest_assignment).map_err(data)?;
    match (report.objective, &oracle.best) {
        (Some(obj), Some(best)) => {
            let diff = (obj - best.cost).abs() / best.cost.abs().max(1e-9);
            println!(
                "solver {obj:.9} oracle {:.9} rel-diff {diff:.3e} nodes {} cuts {}",
                best.cost, report.nodes, report.cuts
            );
            if matches!(report.status, SolveStatus::TimeLimit | SolveStatus::NodeLimit) {
                return Err(Failure::Limits(format!(
                    "stopped at limit, gap {}",
                    report
                        .gap
                        .map_or_else(|| "unknown".to_string(), |g| format!("{g:.3e}"))
                )));
            }
            if diff > a.tol {
                return Err(Failure::Data(format!(
                    "solver and oracle disagree: {diff:.3e} > {:.3e}",
                    a.tol
                )));
            }
            Ok(())
        }
        (None, None) => {
            println!("both report infeasible");
            Err(Failure::Infeasible("no feasible assignment".into()))
        }
        (got, _) => Err(Failure::Data(format!(
            "feasibility mismatch: solver {}, oracle {}",
            got.map_or("infeasible", |_| "feasible"),
            oracle.best.as_ref().map_or("infeasible", |_| "feasible"),
        ))),
    }
}

fn cmd_export(a: ExportArgs) -> Result<(), Failure> {
    let inst = load_instance(&read_file(&a.instance)?).map_err(data)?;
    let mut model = build(&inst, a.formulation).map_err(data)?;
    if a.closest_assignment {
        add_closest_assignment(&mut model).map_err(data)?;
    }
    if a.vi {
        add_valid_inequalities(&mut model).map_err(data)?;
    }
    write_doc(a.out.as_deref(), &export_conic(&model.program))?;
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), Failure> {
    let report: SolveReport =
        serde_json::from_str(&read_file(&a.report)?).map_err(data)?;
    let Some(breakdown) = &report.breakdown else {
        return Err(Failure::Data("report carries no solution breakdown".into()));
    };
    let total = breakdown.total();
    let pct = breakdown.percentages();
    let rows = [
        ("establish", breakdown.establish, pct[0]),
        ("serve", breakdown.serve, pct[1]),
        ("wait", breakdown.wait, pct[2]),
        ("travel", breakdown.travel, pct[3]),
    ];
    if a.pretty {
        println!("{:<10} {:>14} {:>7}", "term", "cost", "pct");
        for (name, value, p) in rows {
            println!("{name:<10} {value:>14.6} {p:>6.1}%");
        }
        println!("{:<10} {total:>14.6} {:>6.1}%", "total", 100.0);
    } else {
        for (name, value, p) in rows {
            println!("{name}\t{value}\t{p:.1}");
        }
        println!("total\t{total}\t100.0");
    }
    Ok(())
}
