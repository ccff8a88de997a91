//! Command-line front end: single solves, scheme comparisons, and equilibrium checks.

pub mod scenario;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use offload_core::{
    export_csv, export_trace, grid_search_spb, mno_utility, ne_bonus_only, ne_homogeneous,
    ne_iterative, ne_salary_only, ne_spb_suboptimal, ne_two_ap, optimal_bonus_only,
    optimal_homogeneous, optimal_price_salary_only, optimal_spb_suboptimal, run_comparison,
    verify_ne, Algorithm3Options, ApProfile, ComparisonOptions, ComparisonReport, CostRegime,
    EquilibriumReport, Error, GridOptions, IterativeOptions, MnoParams, MnoSolution, NeSolver,
    Offer, Result, SalaryOnlyOptions, Scheme, SuboptimalSearchOptions, TraceStatus, NE_TOLERANCE,
};
use serde::Serialize;

use crate::scenario::{parse_grid, parse_offer, OfferEntry, ScenarioFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_NOT_NE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "offload",
    version,
    about = "Salary and bonus incentives for WiFi data offloading"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find the operator's best offer for a scenario file, or the follower
    /// equilibrium at a fixed offer.
    Solve(SolveArgs),
    /// Monte-Carlo comparison of the three schemes on random scenarios.
    Compare(CompareArgs),
    /// Check whether an allocation is an equilibrium at a given offer.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverChoice {
    /// Closed form for identical APs, the two-AP cases for N = 2, the heuristic otherwise.
    Auto,
    Cases,
    Iterative,
    Algo3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSize {
    pub p: usize,
    pub b: usize,
}

fn grid_size(text: &str) -> std::result::Result<GridSize, String> {
    parse_grid(text).map(|(p, b)| GridSize { p, b })
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Scenario file (JSON).
    pub file: PathBuf,
    /// spb, salary or bonus; overrides the file.
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long, value_enum, default_value = "auto")]
    pub ne_solver: SolverChoice,
    /// Leader search grid, salary steps x bonus steps.
    #[arg(long, value_parser = grid_size, default_value = "101x101")]
    pub grid: GridSize,
    /// Convergence tolerance of the iterative solver.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// Fixed offer such as `p=2,B=10`; skips the leader search.
    #[arg(long, value_parser = parse_offer)]
    pub offer: Option<OfferEntry>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    /// Scan every salary candidate in the salary-only search.
    #[arg(long)]
    pub no_early_stop: bool,
    /// Skip the refinement pass of the grid search.
    #[arg(long)]
    pub no_refine: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// APs per scenario.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = offload_core::sim::DEFAULT_RUNS)]
    pub runs: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "low,high")]
    pub regimes: Vec<CostRegime>,
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50")]
    pub gains: Vec<f64>,
    #[arg(long, default_value = "comparison.csv")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write one JSON object per run and scheme to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Salary grid of the salary-plus-bonus leader search.
    #[arg(long, default_value_t = 101)]
    pub p_grid: usize,
    /// Print the summary as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Scenario file (JSON).
    pub file: PathBuf,
    /// Comma-separated offload per AP.
    #[arg(long, value_delimiter = ',', required = true)]
    pub allocation: Vec<f64>,
    /// Offer such as `p=2,B=10`; defaults to the file's offer.
    #[arg(long, value_parser = parse_offer)]
    pub offer: Option<OfferEntry>,
    #[arg(long)]
    pub scheme: Option<Scheme>,
    /// Largest unilateral gain still accepted.
    #[arg(long, default_value_t = NE_TOLERANCE)]
    pub tol: f64,
    /// Grid points per AP in the deviation scan.
    #[arg(long, default_value_t = 1000)]
    pub grid_points: usize,
}

/// Exit status for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NotConverged(_) => EXIT_NOT_CONVERGED,
        _ => EXIT_INPUT,
    }
}

/// Runs a parsed command, writing results to `out` and diagnostics to `err`.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(&args, out),
        Command::Compare(args) => cmd_compare(&args, out),
        Command::Verify(args) => cmd_verify(&args, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn io_error(e: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    scenario: ScenarioFile,
    solution: &'a MnoSolution,
}

pub fn cmd_solve(args: &SolveArgs, out: &mut dyn Write) -> Result<i32> {
    let file = ScenarioFile::load(&args.file)?;
    let profiles = file.profiles()?;
    let params = file.params()?;
    let scheme = args
        .scheme
        .or(file.scheme)
        .unwrap_or(Scheme::SalaryPlusBonus);
    let iterative = IterativeOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        ..IterativeOptions::default()
    };
    let fixed = match args.offer {
        Some(entry) => Some(entry.to_offer()?),
        None => file.offer()?,
    };

    let mut solution = match fixed {
        Some(offer) => {
            let report =
                follower_equilibrium(&file, &profiles, scheme, offer, args.ne_solver, &iterative)?;
            MnoSolution {
                utility: mno_utility(offer, &report.allocation, params, scheme),
                offer: offer.restricted_to(scheme),
                follower_report: report,
                search_trace: None,
            }
        }
        None => leader_solution(args, &file, &profiles, params, scheme, &iterative)?,
    };

    let skipped = solution.search_trace.as_ref().map_or(0, |t| {
        t.iter()
            .filter(|p| p.status == TraceStatus::Skipped)
            .count()
    });
    solution.search_trace = None;
    if args.json {
        let scenario = ScenarioFile {
            scheme: Some(scheme),
            offer: Some(solution.offer.into()),
            ..file
        };
        let text = serde_json::to_string_pretty(&SolveOutput {
            scenario,
            solution: &solution,
        })?;
        writeln!(out, "{text}").map_err(io_error)?;
    } else {
        print_solution(out, &profiles, &solution, fixed.is_some(), skipped).map_err(io_error)?;
    }
    Ok(if solution.follower_report.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn follower_equilibrium(
    file: &ScenarioFile,
    profiles: &[ApProfile],
    scheme: Scheme,
    offer: Offer,
    solver: SolverChoice,
    iterative: &IterativeOptions,
) -> Result<EquilibriumReport> {
    match scheme {
        Scheme::SalaryOnly => ne_salary_only(profiles, offer.salary_rate),
        Scheme::BonusOnly if solver == SolverChoice::Iterative => {
            ne_iterative(profiles, offer, scheme, iterative)
        }
        Scheme::BonusOnly => ne_bonus_only(profiles, offer.bonus),
        Scheme::SalaryPlusBonus => match solver {
            SolverChoice::Auto => match file.homogeneous() {
                Some((c, w, t)) => ne_homogeneous(profiles.len(), c, w, t, offer),
                None if profiles.len() == 2 => {
                    NeSolver::TwoApCases.solve(profiles, offer, iterative)
                }
                None => ne_spb_suboptimal(profiles, offer, Algorithm3Options::default()),
            },
            SolverChoice::Cases => {
                if profiles.len() != 2 {
                    return Err(Error::InvalidOption(format!(
                        "the two-AP solver needs exactly 2 access points, got {}",
                        profiles.len()
                    )));
                }
                match ne_two_ap(profiles, offer) {
                    Err(Error::EqualCosts(_)) => ne_iterative(profiles, offer, scheme, iterative),
                    other => other,
                }
            }
            SolverChoice::Iterative => ne_iterative(profiles, offer, scheme, iterative),
            SolverChoice::Algo3 => ne_spb_suboptimal(profiles, offer, Algorithm3Options::default()),
        },
    }
}

fn leader_solution(
    args: &SolveArgs,
    file: &ScenarioFile,
    profiles: &[ApProfile],
    params: MnoParams,
    scheme: Scheme,
    iterative: &IterativeOptions,
) -> Result<MnoSolution> {
    match scheme {
        Scheme::SalaryOnly => optimal_price_salary_only(
            profiles,
            params,
            SalaryOnlyOptions {
                early_stop: !args.no_early_stop,
            },
        ),
        Scheme::BonusOnly => optimal_bonus_only(profiles, params),
        Scheme::SalaryPlusBonus => {
            let grid = |solver| GridOptions {
                p_steps: args.grid.p,
                b_steps: args.grid.b,
                solver,
                refine: !args.no_refine,
                iterative: iterative.clone(),
            };
            let suboptimal = || {
                optimal_spb_suboptimal(
                    profiles,
                    params,
                    SuboptimalSearchOptions {
                        p_grid: args.grid.p,
                        ..Default::default()
                    },
                )
            };
            match args.ne_solver {
                SolverChoice::Auto => match file.homogeneous() {
                    Some((c, w, t)) => {
                        optimal_homogeneous(profiles.len(), c, w, t, params, args.grid.p)
                    }
                    None if profiles.len() == 2 => {
                        grid_search_spb(profiles, params, &grid(NeSolver::TwoApCases))
                    }
                    None => suboptimal(),
                },
                SolverChoice::Cases => {
                    grid_search_spb(profiles, params, &grid(NeSolver::TwoApCases))
                }
                SolverChoice::Iterative => {
                    grid_search_spb(profiles, params, &grid(NeSolver::Iterative))
                }
                SolverChoice::Algo3 => suboptimal(),
            }
        }
    }
}

fn print_solution(
    out: &mut dyn Write,
    profiles: &[ApProfile],
    solution: &MnoSolution,
    fixed_offer: bool,
    skipped: usize,
) -> std::io::Result<()> {
    let report = &solution.follower_report;
    writeln!(out, "scheme          {}", report.scheme)?;
    writeln!(out, "method          {}", report.method)?;
    let origin = if fixed_offer { " (fixed)" } else { "" };
    writeln!(
        out,
        "salary rate p   {:.4}{origin}",
        solution.offer.salary_rate
    )?;
    writeln!(out, "bonus B         {:.4}{origin}", solution.offer.bonus)?;
    writeln!(out, "MNO utility     {:.4}", solution.utility)?;
    writeln!(out, "total offload   {:.4}", report.allocation.total())?;
    let active: Vec<String> = report.active_set.iter().map(|i| i.to_string()).collect();
    writeln!(
        out,
        "active APs      {} of {}: {}",
        report.active_set.len(),
        profiles.len(),
        active.join(", ")
    )?;
    if report.iterations > 0 {
        writeln!(out, "iterations      {}", report.iterations)?;
    }
    if !report.converged {
        writeln!(out, "WARNING: the follower solver did not converge")?;
    }
    if skipped > 0 {
        writeln!(out, "skipped cells   {skipped} (no convergence)")?;
    }
    writeln!(out)?;
    writeln!(
        out,
        "{:>4} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "ap", "cost", "quality", "capacity", "offload", "utility"
    )?;
    for (ap, (d, u)) in profiles
        .iter()
        .zip(report.allocation.iter().zip(&report.per_ap_utility))
    {
        writeln!(
            out,
            "{:>4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            ap.id, ap.cost, ap.quality, ap.capacity, d, u
        )?;
    }
    Ok(())
}

pub fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> Result<i32> {
    let opts = ComparisonOptions {
        threads: args.threads,
        spb: SuboptimalSearchOptions {
            p_grid: args.p_grid,
            ..Default::default()
        },
        keep_runs: args.trace.is_some(),
    };
    let report = run_comparison(
        args.n,
        &args.regimes,
        &args.gains,
        args.runs,
        args.seed,
        &opts,
    )?;
    export_csv(&report, &args.out)?;
    if let Some(path) = &args.trace {
        export_trace(&report, path)?;
    }
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report.rows)?).map_err(io_error)?;
    } else {
        print_comparison(out, &report).map_err(io_error)?;
        writeln!(out, "\nwrote {}", args.out.display()).map_err(io_error)?;
    }
    Ok(EXIT_OK)
}

fn print_comparison(out: &mut dyn Write, report: &ComparisonReport) -> std::io::Result<()> {
    writeln!(
        out,
        "{} APs, {} runs per cell, seed {}",
        report.n, report.runs, report.master_seed
    )?;
    writeln!(
        out,
        "{:<18} {:<6} {:>6} {:>10} {:>12} {:>10} {:>10} {:>6}",
        "scheme", "costs", "gain", "active", "utility", "+/-", "offload", "skip"
    )?;
    for row in &report.rows {
        writeln!(
            out,
            "{:<18} {:<6} {:>6} {:>10.4} {:>12.4} {:>10.4} {:>10.4} {:>6}",
            row.scheme.name(),
            row.cost_regime.name(),
            row.gain_coefficient,
            row.mean_active_aps,
            row.mean_mno_utility,
            row.ci_halfwidth_utility,
            row.mean_offloaded_data,
            row.runs_skipped
        )?;
    }
    Ok(())
}

pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let file = ScenarioFile::load(&args.file)?;
    let profiles = file.profiles()?;
    let scheme = args
        .scheme
        .or(file.scheme)
        .unwrap_or(Scheme::SalaryPlusBonus);
    let offer = match args.offer {
        Some(entry) => entry.to_offer()?,
        None => file
            .offer()?
            .ok_or_else(|| Error::InvalidOffer("give --offer or an offer in the file".into()))?,
    };
    let check = verify_ne(&args.allocation, offer, &profiles, scheme, args.grid_points)?;
    let write = |out: &mut dyn Write| -> std::io::Result<i32> {
        if check.max_gain <= args.tol {
            writeln!(
                out,
                "equilibrium: yes (max unilateral gain {:.3e})",
                check.max_gain
            )?;
            Ok(EXIT_OK)
        } else {
            let worst = check.worst_ap.map_or("?".to_string(), |i| i.to_string());
            writeln!(
                out,
                "equilibrium: no (AP {worst} gains {:.4} by deviating)",
                check.max_gain
            )?;
            Ok(EXIT_NOT_NE)
        }
    };
    write(out).map_err(io_error)
}
