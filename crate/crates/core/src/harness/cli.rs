use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use super::kernels::builtin_kernels;
use super::pipeline::{
    load_machine, load_program, obtain_profile, prepare, run_all_modes, run_spec, HarnessError, ProfileSource, RunSpec,
    THETA_DEFAULT,
};
use super::report::{geomean_rows, to_csv, to_gnuplot, CsvRow};
use crate::daegen::RHO_DEFAULT;
use crate::dir::{print_function, print_program};
use crate::machsim::Mode;
use crate::profiler::{profile_run, top_stalls, write_profile, Workload};

#[derive(Parser, Debug)]
#[command(name = "daef", version, about = "Decoupled access/execute transformation and machine model")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Profile a kernel and write the profile as JSON.
    Profile(ProfileArgs),
    /// Print the generated access/execute functions as DIR text.
    Transform(RunArgs),
    /// Simulate one kernel in one mode against its baseline.
    Run(RunArgs),
    /// Simulate every builtin kernel in every mode.
    Suite(SuiteArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Emit {
    Csv,
    Json,
    Dir,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    /// Builtin kernel name or path to a DIR file.
    #[arg(long)]
    kernel: String,
    #[arg(long)]
    machine: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; defaults to `<kernel>.profile.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rows in the printed stall table.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    kernel: String,
    #[arg(long, default_value = "baseline", value_parser = parse_mode)]
    mode: Mode,
    #[arg(long)]
    machine: Option<PathBuf>,
    #[arg(long, default_value_t = THETA_DEFAULT)]
    theta: f64,
    #[arg(long, default_value_t = RHO_DEFAULT)]
    rho: f64,
    /// Fixed slice size instead of the footprint-derived one.
    #[arg(long)]
    slice: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accept a profile recorded for a different program text.
    #[arg(long)]
    allow_stale: bool,
    /// Extra time charged to the first dynamic slice, as a fraction of it.
    #[arg(long, default_value_t = 0.0)]
    profiling_overhead: f64,
    #[arg(long, value_enum, default_value_t = Emit::Csv)]
    emit: Emit,
    /// Profile written by `daef profile`.
    #[arg(long, conflicts_with = "auto_profile")]
    profile: Option<PathBuf>,
    /// Profile the kernel on the fly.
    #[arg(long)]
    auto_profile: bool,
}

#[derive(Args, Debug)]
struct SuiteArgs {
    #[arg(long)]
    machine: Option<PathBuf>,
    /// Directory for `suite.csv` and `suite.dat`.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = THETA_DEFAULT)]
    theta: f64,
    #[arg(long, default_value_t = RHO_DEFAULT)]
    rho: f64,
    #[arg(long)]
    slice: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    profiling_overhead: f64,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn check_fractions(theta: f64, rho: f64, slice: Option<u64>, overhead: f64) -> Result<(), HarnessError> {
    let usage = |m: &str| Err(HarnessError::Usage(m.to_string()));
    if !(0.0..=1.0).contains(&theta) {
        return usage("--theta must lie in [0, 1]");
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return usage("--rho must lie in (0, 1]");
    }
    if slice == Some(0) {
        return usage("--slice must be at least 1");
    }
    if !(overhead >= 0.0) {
        return usage("--profiling-overhead must be non-negative");
    }
    Ok(())
}

fn spec_from(a: &RunArgs) -> Result<RunSpec, HarnessError> {
    check_fractions(a.theta, a.rho, a.slice, a.profiling_overhead)?;
    let profile = match (&a.profile, a.auto_profile) {
        (Some(path), _) => Some(ProfileSource::File { path: path.clone(), allow_stale: a.allow_stale }),
        (None, true) => Some(ProfileSource::Auto),
        (None, false) => None,
    };
    if a.mode != Mode::Baseline && profile.is_none() {
        return Err(HarnessError::Usage(format!("mode {} needs --profile <file> or --auto-profile", a.mode)));
    }
    Ok(RunSpec {
        kernel: a.kernel.clone(),
        mode: a.mode,
        machine: load_machine(a.machine.as_deref())?,
        theta: a.theta,
        rho: a.rho,
        slice_override: a.slice,
        seed: a.seed,
        profiling_overhead: a.profiling_overhead,
        profile,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
        }
        None => {
            let _ = std::io::stdout().write_all(text.as_bytes());
            Ok(())
        }
    }
}

fn kernel_stem(kernel: &str) -> String {
    Path::new(kernel).file_stem().map_or_else(|| kernel.to_string(), |s| s.to_string_lossy().into_owned())
}

fn cmd_profile(a: &ProfileArgs) -> Result<(), HarnessError> {
    let p = load_program(&a.kernel)?;
    let m = load_machine(a.machine.as_deref())?;
    let r = profile_run(&p, &m, &Workload::for_program(&p, a.seed))?;
    let path = a.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.profile.json", kernel_stem(&a.kernel))));
    write_profile(&r, &path)?;
    println!("{:>8} {:>12} {:>10} {:>14} {:>8}", "load", "exec", "miss", "stall", "share");
    for s in top_stalls(&r, a.top) {
        println!("{:>8} {:>12} {:>10} {:>14} {:>8.4}", s.id.0, s.exec, s.miss, s.stall, r.stall_share(s.id));
    }
    println!("total stall cycles: {}", r.total_stall_cycles);
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_transform(a: &RunArgs) -> Result<(), HarnessError> {
    if a.mode == Mode::Baseline {
        return Err(HarnessError::Usage("transform needs --mode static_dae or dynamic_dae".into()));
    }
    let spec = spec_from(a)?;
    let p = load_program(&spec.kernel)?;
    let w = Workload::for_program(&p, spec.seed);
    let profile = obtain_profile(&p, &spec, &w)?;
    let prep = prepare(&p, &spec, profile)?;
    let plan = &prep.plan;
    let critical: Vec<String> = plan.targets.iter().map(|i| i.0.to_string()).collect();
    let mut text = format!(
        "# loop header={} slice={} critical=[{}]\n",
        plan.loop_info.header,
        plan.slice_size,
        critical.join(", ")
    );
    let mut funcs = vec![&plan.access, &plan.execute];
    if let Some(b) = &plan.base_access {
        funcs.push(b);
    }
    for f in funcs {
        text.push('\n');
        text.push_str(&print_function(f));
    }
    emit(a.out.as_deref(), &text)
}

fn cmd_run(a: &RunArgs) -> Result<(), HarnessError> {
    let spec = spec_from(a)?;
    let o = run_spec(&spec)?;
    let text = match a.emit {
        Emit::Csv => to_csv(&[CsvRow::from_outcome(&o)]),
        Emit::Json => {
            let v = serde_json::json!({
                "kernel": o.kernel,
                "mode": o.mode,
                "row": CsvRow::from_outcome(&o),
                "report": o.report,
                "baseline": o.baseline,
            });
            serde_json::to_string_pretty(&v).expect("report serialises") + "\n"
        }
        Emit::Dir => match &o.prepared {
            Some(prep) => print_program(&prep.plan.program(&load_program(&spec.kernel)?)),
            None => print_program(&load_program(&spec.kernel)?),
        },
    };
    emit(a.out.as_deref(), &text)
}

/// Runs every builtin kernel in every mode and returns the CSV rows,
/// kernel order first, followed by the per-mode summary rows.
pub fn suite_rows(spec: &RunSpec) -> Result<Vec<CsvRow>, HarnessError> {
    let kernels = builtin_kernels();
    let results: Vec<Result<Vec<CsvRow>, HarnessError>> = kernels
        .par_iter()
        .map(|k| {
            let s = RunSpec { kernel: k.name.clone(), ..spec.clone() };
            Ok(run_all_modes(&s)?.iter().map(CsvRow::from_outcome).collect())
        })
        .collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    let summary = geomean_rows(&rows);
    rows.extend(summary);
    Ok(rows)
}

fn cmd_suite(a: &SuiteArgs) -> Result<(), HarnessError> {
    check_fractions(a.theta, a.rho, a.slice, a.profiling_overhead)?;
    let spec = RunSpec {
        machine: load_machine(a.machine.as_deref())?,
        theta: a.theta,
        rho: a.rho,
        slice_override: a.slice,
        seed: a.seed,
        profiling_overhead: a.profiling_overhead,
        ..RunSpec::new("", Mode::Baseline)
    };
    let rows = suite_rows(&spec)?;
    let io = |path: &Path, source| HarnessError::Io { path: path.to_path_buf(), source };
    std::fs::create_dir_all(&a.out).map_err(|e| io(&a.out, e))?;
    let csv = to_csv(&rows);
    let csv_path = a.out.join("suite.csv");
    std::fs::write(&csv_path, &csv).map_err(|e| io(&csv_path, e))?;
    let dat_path = a.out.join("suite.dat");
    std::fs::write(&dat_path, to_gnuplot(&rows)).map_err(|e| io(&dat_path, e))?;
    print!("{csv}");
    Ok(())
}

/// Entry point for the `daef` binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.cmd {
        Cmd::Profile(a) => cmd_profile(a),
        Cmd::Transform(a) => cmd_transform(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Suite(a) => cmd_suite(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
