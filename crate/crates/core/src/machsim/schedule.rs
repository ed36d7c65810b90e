use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::MachineConfig;

/// Which experiment a schedule implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    StaticDae,
    DynamicDae,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::StaticDae, Mode::DynamicDae];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::StaticDae => "static_dae",
            Mode::DynamicDae => "dynamic_dae",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "static" | "static_dae" => Ok(Mode::StaticDae),
            "dynamic" | "dynamic_dae" => Ok(Mode::DynamicDae),
            _ => Err(format!("unknown mode `{s}` (expected baseline, static_dae, dynamic_dae)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTarget {
    /// The untransformed entry function, start to finish.
    Original,
    /// One run of the access function for the slice the execute phase is
    /// about to start.
    Access,
    /// Resume the execute function until it reaches the next slice or
    /// returns.
    Execute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Charge {
    /// One-time specialization cost, scaled by base-access size.
    Jit,
    /// The frequency change that precedes this run.
    DvfsSwitch,
    /// Extra time as a fraction of this run's wall time.
    Profiling(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseRun {
    pub target: PhaseTarget,
    /// GHz.
    pub frequency: f64,
    /// `None` for whole-program runs and for the execute prologue that
    /// runs up to the first slice.
    pub slice_index: Option<u64>,
    pub charges: Vec<Charge>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PhaseSchedule {
    pub runs: Vec<PhaseRun>,
}

impl PhaseSchedule {
    pub fn dvfs_switches(&self) -> usize {
        self.count(|c| matches!(c, Charge::DvfsSwitch))
    }

    pub fn jit_charges(&self) -> usize {
        self.count(|c| matches!(c, Charge::Jit))
    }

    fn count(&self, pred: impl Fn(&Charge) -> bool) -> usize {
        self.runs.iter().flat_map(|r| &r.charges).filter(|c| pred(c)).count()
    }
}

/// Number of slices for `trip` iterations of at most `s` each.
pub fn slice_count(trip: u64, s: u64) -> u64 {
    trip.div_ceil(s.max(1))
}

/// Builds the run sequence for a mode. `slices` is how many times the
/// execute function reaches its slice entry.
pub fn build_schedule(mode: Mode, slices: u64, m: &MachineConfig, profiling_overhead: f64) -> PhaseSchedule {
    let hi = m.f_max;
    let lo = m.f_min;
    let switch = |from: f64, to: f64| if ghz_differs(from, to) { vec![Charge::DvfsSwitch] } else { vec![] };
    let run = |target, frequency, slice_index, charges| PhaseRun { target, frequency, slice_index, charges };
    let mut runs = Vec::new();
    match mode {
        Mode::Baseline => runs.push(run(PhaseTarget::Original, hi, None, vec![])),
        Mode::StaticDae | Mode::DynamicDae => {
            runs.push(run(PhaseTarget::Execute, hi, None, vec![]));
            let first_access = if mode == Mode::DynamicDae && slices > 0 {
                let charges =
                    if profiling_overhead > 0.0 { vec![Charge::Profiling(profiling_overhead)] } else { vec![] };
                runs.push(run(PhaseTarget::Execute, hi, Some(0), charges));
                1
            } else {
                0
            };
            for k in first_access..slices {
                let mut charges = switch(hi, lo);
                if mode == Mode::DynamicDae && k == first_access {
                    charges.insert(0, Charge::Jit);
                }
                runs.push(run(PhaseTarget::Access, lo, Some(k), charges));
                runs.push(run(PhaseTarget::Execute, hi, Some(k), switch(lo, hi)));
            }
        }
    }
    PhaseSchedule { runs }
}

fn ghz_differs(a: f64, b: f64) -> bool {
    super::ghz_to_mhz(a) != super::ghz_to_mhz(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shapes() {
        let m = MachineConfig::default();
        let n = slice_count(1000, 250);
        assert_eq!(n, 4);
        let b = build_schedule(Mode::Baseline, n, &m, 0.0);
        assert_eq!(b.runs.len(), 1);
        assert_eq!(b.dvfs_switches(), 0);

        let s = build_schedule(Mode::StaticDae, n, &m, 0.0);
        let pairs = s.runs.iter().filter(|r| r.target == PhaseTarget::Access).count();
        assert_eq!(pairs, 4);
        assert_eq!(s.dvfs_switches(), 8);
        assert_eq!(s.jit_charges(), 0);

        let d = build_schedule(Mode::DynamicDae, n, &m, 0.0);
        let pairs = d.runs.iter().filter(|r| r.target == PhaseTarget::Access).count();
        assert_eq!(pairs, 3);
        assert_eq!(d.jit_charges(), 1);
        assert_eq!(d.dvfs_switches(), 6);
        assert_eq!(d.runs[1].slice_index, Some(0));
        assert_eq!(d.runs[1].target, PhaseTarget::Execute);
    }

    #[test]
    fn equal_frequencies_need_no_switch() {
        let m = MachineConfig { f_min: 3.4, ..Default::default() };
        assert_eq!(build_schedule(Mode::StaticDae, 3, &m, 0.0).dvfs_switches(), 0);
    }

    #[test]
    fn mode_names() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert_eq!("static".parse::<Mode>().unwrap(), Mode::StaticDae);
    }
}
