mod common;

use std::collections::VecDeque;

use common::*;
use daef::machsim::{
    build_schedule, power, simulate, Cache, Charge, MachineConfig, Mode, PhaseRun, PhaseSchedule, PhaseTarget, SimError,
};
use daef::profiler::{profile_run, Workload};
use proptest::prelude::*;

/// Sets of most-recently-used-first line lists.
struct LruModel {
    sets: Vec<VecDeque<u64>>,
    ways: usize,
}

impl LruModel {
    fn new(sets: usize, ways: usize) -> Self {
        LruModel { sets: vec![VecDeque::new(); sets], ways }
    }

    fn access(&mut self, line: u64) -> bool {
        let n = self.sets.len() as u64;
        let set = &mut self.sets[(line % n) as usize];
        if let Some(pos) = set.iter().position(|&l| l == line) {
            set.remove(pos);
            set.push_front(line);
            return true;
        }
        set.push_front(line);
        set.truncate(self.ways);
        false
    }
}

/// Direct transcription of the configured power law.
fn power_oracle(f: f64, ipc: f64, m: &MachineConfig) -> f64 {
    let p = &m.power;
    let v_ratio = |g: f64| {
        let r = p.v_of_f.v_min_ratio;
        r + (1.0 - r) * (g - m.f_min) / (m.f_max - m.f_min)
    };
    let v = v_ratio(f) / v_ratio(m.f_max);
    p.p_static + p.c_dyn * v * v * (f / m.f_max) * (p.alpha + p.beta * ipc / m.ipc_max)
}

fn small_kernel(seed: u64) -> daef::dir::Program {
    random_kernel(&mut rng(seed), KernelShape { max_trip: 200, ..KernelShape::default() })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cache_matches_lru_model(
        ways in 1u64..5,
        set_bits in 0u32..4,
        lines in proptest::collection::vec(0u64..64, 1..400),
    ) {
        let sets = 1u64 << set_bits;
        let mut c = Cache::new(sets * ways * 64, 64, ways);
        let mut model = LruModel::new(sets as usize, ways as usize);
        for (k, &l) in lines.iter().enumerate() {
            prop_assert_eq!(c.access(l), model.access(l), "access {} to line {}", k, l);
        }
        let resident: usize = model.sets.iter().map(VecDeque::len).sum();
        prop_assert_eq!(c.resident_lines(), resident);
    }

    #[test]
    fn power_follows_its_law(f_mhz in 1600u64..=3400, ipc in 0.0f64..=1.0) {
        let m = MachineConfig::default();
        let f = f_mhz as f64 / 1000.0;
        let got = power(f, ipc, &m).unwrap();
        prop_assert!((got - power_oracle(f, ipc, &m)).abs() < 1e-9);
        prop_assert!(power(f, (ipc + 0.01).min(m.ipc_max), &m).unwrap() >= got);
        prop_assert!(power((f + 0.1).min(m.f_max), ipc, &m).unwrap() >= got);
    }

    #[test]
    fn latency_rounds_up(mhz in 1u64..5000, ns in 1u32..200) {
        let m = MachineConfig { mem_latency_ns: ns as f64, ..MachineConfig::default() };
        let exact = ns as u64 * mhz;
        prop_assert_eq!(m.mem_latency_cycles(mhz), exact.div_ceil(1000));
    }

    #[test]
    fn accounting_adds_up(seed in any::<u64>(), mode_pick in 0usize..3) {
        let p = small_kernel(seed);
        let m = MachineConfig::default();
        let w = Workload::for_program(&p, 0);
        let mode = Mode::ALL[mode_pick];
        let mut spec = daef::harness::RunSpec::new("random", mode);
        spec.slice_override = Some(7);
        let prep = match mode {
            Mode::Baseline => None,
            _ => match daef::harness::prepare(&p, &spec, profile_run(&p, &m, &w).unwrap()) {
                Ok(prep) => Some(prep),
                Err(_) => return Ok(()),
            },
        };
        let r = daef::harness::simulate_mode(&p, mode, prep.as_ref(), &spec, &w).unwrap();
        let (mut ps, mut pj) = (0u64, 0u64);
        for run in &r.runs {
            let t = &run.run;
            prop_assert_eq!(t.wall_ps, (t.cycles as f64 * 1e6 / run.frequency_mhz as f64).round() as u64);
            let ipc = if t.cycles == 0 { 0.0 } else { t.instructions as f64 / t.cycles as f64 };
            let watts = power_oracle(run.frequency_mhz as f64 / 1000.0, ipc.min(m.ipc_max), &m);
            prop_assert_eq!(t.energy_pj, (watts * t.wall_ps as f64).round() as u64);
            ps += t.wall_ps + run.overhead.wall_ps;
            pj += t.energy_pj + run.overhead.energy_pj;
        }
        prop_assert_eq!(r.total.wall_ps, ps);
        prop_assert_eq!(r.total.energy_pj, pj);
        prop_assert_eq!(r.total.wall_ps, r.access.wall_ps + r.execute.wall_ps + r.overhead.wall_ps);
    }

    #[test]
    fn baseline_cycles_agree_with_profile(seed in any::<u64>()) {
        let p = small_kernel(seed);
        let m = MachineConfig::default();
        let w = Workload::for_program(&p, 1);
        let profile = profile_run(&p, &m, &w).unwrap();
        let r = simulate(&p, None, &build_schedule(Mode::Baseline, 0, &m, 0.0), &m, &w).unwrap();
        let hits: u64 = profile.loads.iter().map(|l| l.exec - l.miss).sum();
        let expected = r.total.instructions + hits * m.l1.hit_cycles + profile.total_stall_cycles;
        prop_assert_eq!(r.total.cycles, expected);
        let misses: u64 = profile.loads.iter().map(|l| l.miss).sum();
        prop_assert_eq!(r.runs[0].demand_misses, misses);
    }
}

#[test]
fn frequency_change_without_charge_is_rejected() {
    let p = small_kernel(3);
    let m = MachineConfig::default();
    let w = Workload::for_program(&p, 0);
    let run = |frequency, charges| PhaseRun { target: PhaseTarget::Original, frequency, slice_index: None, charges };
    let bad = PhaseSchedule { runs: vec![run(m.f_min, vec![])] };
    assert!(matches!(simulate(&p, None, &bad, &m, &w), Err(SimError::DvfsMismatch { run: 0 })));
    let spurious = PhaseSchedule { runs: vec![run(m.f_max, vec![Charge::DvfsSwitch])] };
    assert!(matches!(simulate(&p, None, &spurious, &m, &w), Err(SimError::DvfsMismatch { run: 0 })));
    let ok = PhaseSchedule { runs: vec![run(m.f_min, vec![Charge::DvfsSwitch])] };
    let r = simulate(&p, None, &ok, &m, &w).unwrap();
    assert_eq!(r.overhead.wall_ps, (m.dvfs_switch_ns * 1000.0).round() as u64);
    let off_grid = PhaseSchedule { runs: vec![run(5.0, vec![Charge::DvfsSwitch])] };
    assert!(matches!(simulate(&p, None, &off_grid, &m, &w), Err(SimError::Frequency { .. })));
}

#[test]
fn access_without_plan_is_rejected() {
    let p = small_kernel(4);
    let m = MachineConfig::default();
    let w = Workload::for_program(&p, 0);
    let sched = PhaseSchedule {
        runs: vec![PhaseRun { target: PhaseTarget::Access, frequency: m.f_max, slice_index: Some(0), charges: vec![] }],
    };
    assert!(matches!(simulate(&p, None, &sched, &m, &w), Err(SimError::MissingPlan(PhaseTarget::Access))));
}
