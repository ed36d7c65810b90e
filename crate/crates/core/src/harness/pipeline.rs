use std::path::{Path, PathBuf};

use crate::cfg::{find_loops, LoopInfo, SkippedLoop};
use crate::daegen::{choose_slice_size, plan_loop, DaeError, PhasePlan, RHO_DEFAULT, S_DEFAULT};
use crate::dir::{interpret_seeded, parse_program, Diagnostic, ExecError, ParseError, Program};
use crate::machsim::{
    build_schedule, count_slices, normalize, simulate, ConfigError, MachineConfig, Mode, SimError, SimReport,
};
use crate::profiler::{
    classify_critical, profile_run, read_profile, CriticalSet, ProfileError, ProfileReport, Workload,
};

use super::kernels::builtin_kernel;

pub const THETA_DEFAULT: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read `{path}`: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("program is invalid:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
    #[error("no qualifying loop:{}", .0.iter().map(|s| format!("\n  {}: {}", s.header, s.reason)).collect::<String>())]
    NoQualifyingLoop(Vec<SkippedLoop>),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Dae(#[from] DaeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Exec(ExecError),
    #[error("{mode} changes program behaviour:\n{detail}")]
    Equivalence { mode: Mode, detail: String },
}

impl From<ExecError> for HarnessError {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::Invalid(d) => HarnessError::Invalid(d),
            other => HarnessError::Exec(other),
        }
    }
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Equivalence { .. } => 3,
            HarnessError::Usage(_)
            | HarnessError::Parse(_)
            | HarnessError::Invalid(_)
            | HarnessError::NoQualifyingLoop(_)
            | HarnessError::Config(ConfigError::Invalid(_) | ConfigError::Parse(_))
            | HarnessError::Profile(
                ProfileError::Malformed { .. } | ProfileError::Version(_) | ProfileError::DigestMismatch { .. },
            )
            | HarnessError::Dae(_) => 2,
            HarnessError::Sim(SimError::Exec(ExecError::Invalid(_))) => 2,
            _ => 1,
        }
    }
}

/// Where the profile for the DAE modes comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSource {
    Auto,
    File { path: PathBuf, allow_stale: bool },
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub kernel: String,
    pub mode: Mode,
    pub machine: MachineConfig,
    pub theta: f64,
    pub rho: f64,
    pub slice_override: Option<u64>,
    pub seed: u64,
    pub profiling_overhead: f64,
    pub profile: Option<ProfileSource>,
}

impl RunSpec {
    pub fn new(kernel: &str, mode: Mode) -> Self {
        RunSpec {
            kernel: kernel.to_string(),
            mode,
            machine: MachineConfig::default(),
            theta: THETA_DEFAULT,
            rho: RHO_DEFAULT,
            slice_override: None,
            seed: 0,
            profiling_overhead: 0.0,
            profile: Some(ProfileSource::Auto),
        }
    }
}

/// A builtin kernel name or a path to a DIR file.
pub fn load_program(kernel: &str) -> Result<Program, HarnessError> {
    if let Some(k) = builtin_kernel(kernel) {
        return Ok(k.program());
    }
    let path = Path::new(kernel);
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    Ok(parse_program(&text)?)
}

pub fn load_machine(path: Option<&Path>) -> Result<MachineConfig, HarnessError> {
    match path {
        None => Ok(MachineConfig::default()),
        Some(p) => MachineConfig::load(p).map_err(|e| match e {
            ConfigError::Io(source) => HarnessError::Io { path: p.to_path_buf(), source },
            other => other.into(),
        }),
    }
}

/// Profile, critical set, chosen loop, and plans for one program.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub profile: ProfileReport,
    pub critical: CriticalSet,
    pub slice_size: u64,
    pub plan: PhasePlan,
}

pub fn obtain_profile(p: &Program, spec: &RunSpec, w: &Workload) -> Result<ProfileReport, HarnessError> {
    match &spec.profile {
        Some(ProfileSource::Auto) => Ok(profile_run(p, &spec.machine, w)?),
        Some(ProfileSource::File { path, allow_stale }) => Ok(read_profile(path, Some(p), *allow_stale)?),
        None => Err(HarnessError::Usage(format!("mode {} needs --profile <file> or --auto-profile", spec.mode))),
    }
}

fn stall_share(lp: &LoopInfo, f: &crate::dir::Function, r: &ProfileReport, c: &CriticalSet) -> u64 {
    lp.loads(f).into_iter().filter(|id| c.contains(*id)).filter_map(|id| r.load(id)).map(|s| s.stall).sum()
}

/// Picks the loop carrying the largest critical stall share (earliest on
/// ties) that can be planned, and builds its plan.
pub fn prepare(p: &Program, spec: &RunSpec, profile: ProfileReport) -> Result<Prepared, HarnessError> {
    let f = p.entry_function().ok_or_else(|| ExecError::MissingFunction(p.entry.clone()))?;
    let critical = classify_critical(&profile, spec.theta);
    let scan = find_loops(f);
    let mut order: Vec<&LoopInfo> = scan.loops.iter().collect();
    order.sort_by_key(|lp| std::cmp::Reverse(stall_share(lp, f, &profile, &critical)));
    let mut skipped = scan.skipped.clone();
    for lp in order {
        let s = spec
            .slice_override
            .unwrap_or_else(|| choose_slice_size(&profile, lp, &spec.machine, spec.rho, S_DEFAULT).slice_size);
        match plan_loop(p, lp, s, &critical.load_ids, spec.mode == Mode::DynamicDae) {
            Ok(plan) => return Ok(Prepared { profile, critical, slice_size: s, plan }),
            Err(DaeError::StoreHazard(h)) => skipped.push(SkippedLoop {
                header: h,
                reason: "stores in the loop while the access phase needs real loads".into(),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    Err(HarnessError::NoQualifyingLoop(skipped))
}

/// Runs one mode and returns its raw (unnormalised) report.
pub fn simulate_mode(
    p: &Program,
    mode: Mode,
    prepared: Option<&Prepared>,
    spec: &RunSpec,
    w: &Workload,
) -> Result<SimReport, HarnessError> {
    let m = &spec.machine;
    let report = match mode {
        Mode::Baseline => simulate(p, None, &build_schedule(mode, 0, m, 0.0), m, w)?,
        _ => {
            let prep = prepared.ok_or_else(|| HarnessError::Usage(format!("mode {mode} needs a plan")))?;
            let slices = count_slices(p, &prep.plan, w)?;
            let sched = build_schedule(mode, slices, m, spec.profiling_overhead);
            simulate(p, Some(&prep.plan), &sched, m, w)?
        }
    };
    Ok(report)
}

/// Outcome of one `run`: the normalised report for the requested mode and
/// the baseline it was normalised against.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub kernel: String,
    pub mode: Mode,
    pub report: SimReport,
    pub baseline: SimReport,
    pub prepared: Option<Prepared>,
}

fn check_equivalent(mode: Mode, expected: &crate::dir::ExecTrace, r: &SimReport) -> Result<(), HarnessError> {
    if r.output == expected.output && r.memory_digest == expected.memory_digest {
        return Ok(());
    }
    let first_diff = r.output.iter().zip(&expected.output).position(|(a, b)| a != b);
    let detail = format!(
        "  output length: expected {}, got {}\n  first differing output index: {:?}\n  memory digest: expected {}, got {}",
        expected.output.len(),
        r.output.len(),
        first_diff,
        expected.memory_digest,
        r.memory_digest
    );
    Err(HarnessError::Equivalence { mode, detail })
}

/// Baseline plus the requested mode, checked against plain interpretation
/// and normalised.
pub fn run_spec(spec: &RunSpec) -> Result<RunOutcome, HarnessError> {
    let p = load_program(&spec.kernel)?;
    spec.machine.validate()?;
    let w = Workload::for_program(&p, spec.seed);
    let expected = interpret_seeded(&p, w.mem_size, w.fuel, w.input_seed)?;
    let baseline = simulate_mode(&p, Mode::Baseline, None, spec, &w)?;
    check_equivalent(Mode::Baseline, &expected, &baseline)?;
    let baseline = normalize(&baseline, &baseline)?;
    let (report, prepared) = if spec.mode == Mode::Baseline {
        (baseline.clone(), None)
    } else {
        let profile = obtain_profile(&p, spec, &w)?;
        let prep = prepare(&p, spec, profile)?;
        let r = simulate_mode(&p, spec.mode, Some(&prep), spec, &w)?;
        check_equivalent(spec.mode, &expected, &r)?;
        (normalize(&r, &baseline)?, Some(prep))
    };
    Ok(RunOutcome { kernel: spec.kernel.clone(), mode: spec.mode, report, baseline, prepared })
}

/// All three modes for one kernel, sharing one profile and baseline.
pub fn run_all_modes(spec: &RunSpec) -> Result<Vec<RunOutcome>, HarnessError> {
    let p = load_program(&spec.kernel)?;
    spec.machine.validate()?;
    let w = Workload::for_program(&p, spec.seed);
    let expected = interpret_seeded(&p, w.mem_size, w.fuel, w.input_seed)?;
    let baseline = simulate_mode(&p, Mode::Baseline, None, spec, &w)?;
    check_equivalent(Mode::Baseline, &expected, &baseline)?;
    let baseline = normalize(&baseline, &baseline)?;
    let profile = obtain_profile(&p, spec, &w)?;
    let mut out = vec![RunOutcome {
        kernel: spec.kernel.clone(),
        mode: Mode::Baseline,
        report: baseline.clone(),
        baseline: baseline.clone(),
        prepared: None,
    }];
    for mode in [Mode::StaticDae, Mode::DynamicDae] {
        let s = RunSpec { mode, ..spec.clone() };
        let prep = prepare(&p, &s, profile.clone())?;
        let r = simulate_mode(&p, mode, Some(&prep), &s, &w)?;
        check_equivalent(mode, &expected, &r)?;
        out.push(RunOutcome {
            kernel: spec.kernel.clone(),
            mode,
            report: normalize(&r, &baseline)?,
            baseline: baseline.clone(),
            prepared: Some(prep),
        });
    }
    Ok(out)
}
