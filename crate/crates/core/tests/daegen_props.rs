mod common;

use std::collections::BTreeSet;

use common::*;
use daef::cfg::find_loops;
use daef::daegen::{
    make_access_phase, make_base_access, plan_loop, prefetch_tags, specialize_access, strip_mine, DaeError,
};
use daef::dir::{interpret, parse_program, structurally_equal, FunctionKind, IdGen, InstrId, Op, Program};
use daef::harness::{prepare, simulate_mode, RunSpec};
use daef::machsim::{count_slices, slice_count, MachineConfig, Mode};
use daef::profiler::{profile_run, Workload};
use proptest::prelude::*;
use rand::seq::IteratorRandom;
use rand::Rng;

fn loop_of(p: &Program) -> daef::cfg::LoopInfo {
    find_loops(&p.functions[0]).loops.into_iter().next().expect("generated kernel has a loop")
}

fn random_subset(r: &mut rand_chacha::ChaCha8Rng, ids: &[InstrId]) -> BTreeSet<InstrId> {
    let k = r.gen_range(0..=ids.len());
    ids.iter().copied().choose_multiple(r, k).into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn specialization_equals_direct_generation(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_kernel(&mut r, KernelShape::default());
        let f = &p.functions[0];
        let lp = loop_of(&p);
        let s = r.gen_range(1..64);
        let c = random_subset(&mut r, &lp.loads(f));
        let mut ids = IdGen::after_program(&p);
        let base = make_base_access(f, &lp, s, &mut ids).unwrap();
        let spec = specialize_access(&base, &c).unwrap();
        let direct = make_access_phase(f, &lp, s, &c, &mut IdGen::after_program(&p)).unwrap();
        prop_assert!(
            structurally_equal(&spec, &direct),
            "specialized:\n{}\ndirect:\n{}",
            daef::dir::print_function(&spec),
            daef::dir::print_function(&direct)
        );
    }

    #[test]
    fn strip_mining_preserves_behaviour(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_kernel(&mut r, KernelShape::default());
        let lp = loop_of(&p);
        let s = r.gen_range(1..50);
        let mut q = p.clone();
        q.functions[0] = strip_mine(&p.functions[0], &lp, s, &mut IdGen::after_program(&p)).unwrap();
        prop_assert!(daef::dir::validate_program(&q).is_empty());
        let a = interpret(&p, p.required_memory(), 1_000_000).unwrap();
        let b = interpret(&q, q.required_memory(), 1_000_000).unwrap();
        prop_assert_eq!(a.output, b.output);
        prop_assert_eq!(a.memory_digest, b.memory_digest);
    }

    #[test]
    fn access_phase_is_side_effect_free_and_tagged(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_kernel(&mut r, KernelShape::default());
        let f = &p.functions[0];
        let lp = loop_of(&p);
        let c = random_subset(&mut r, &lp.loads(f));
        let a = make_access_phase(f, &lp, r.gen_range(1..64), &c, &mut IdGen::after_program(&p)).unwrap();
        prop_assert_eq!(a.kind, FunctionKind::Access);
        for i in a.instructions() {
            let effect = matches!(i.op, Op::Store { .. } | Op::Out { .. });
            prop_assert!(!effect, "side effect in access phase");
            if i.op.is_prefetch() || i.op.is_load() {
                let tag = i.origin.expect("memory operations in the access phase are tagged");
                prop_assert!(lp.loads(f).contains(&tag.origin_load_id));
            }
        }
        let tags: BTreeSet<InstrId> = prefetch_tags(&a).values().map(|t| t.origin_load_id).collect();
        prop_assert!(tags.is_subset(&c));
        // Every parameter is actually read.
        let used: BTreeSet<_> = a.used_regs().into_iter().cloned().collect();
        for prm in &a.params {
            prop_assert!(used.contains(prm), "unused parameter {}", prm);
        }
    }

    #[test]
    fn full_critical_set_specializes_to_base(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_kernel(&mut r, KernelShape::default());
        let f = &p.functions[0];
        let lp = loop_of(&p);
        let base = make_base_access(f, &lp, 16, &mut IdGen::after_program(&p)).unwrap();
        let all: BTreeSet<InstrId> = lp.loads(f).into_iter().collect();
        let spec = specialize_access(&base, &all).unwrap();
        prop_assert!(structurally_equal(&spec, &base));
        let none = specialize_access(&base, &BTreeSet::new()).unwrap();
        prop_assert!(none.instructions().all(|i| !i.op.is_load() && !i.op.is_prefetch()));
    }

    #[test]
    fn decoupled_runs_match_interpretation(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_kernel(&mut r, KernelShape::default());
        let lp = loop_of(&p);
        let w = Workload::for_program(&p, r.gen_range(0..4));
        let expected = daef::dir::interpret_seeded(&p, w.mem_size, w.fuel, w.input_seed).unwrap();
        let m = MachineConfig::default();
        let profile = profile_run(&p, &m, &w).unwrap();
        for mode in [Mode::StaticDae, Mode::DynamicDae] {
            let mut spec = RunSpec::new("random", mode);
            spec.slice_override = Some(r.gen_range(1..20));
            spec.theta = r.gen_range(0.0..0.5);
            spec.profiling_overhead = r.gen_range(0.0..0.2);
            let prep = match prepare(&p, &spec, profile.clone()) {
                Ok(prep) => prep,
                Err(daef::harness::HarnessError::NoQualifyingLoop(_)) => {
                    prop_assert!(lp.has_stores(&p.functions[0]));
                    continue;
                }
                Err(e) => panic!("{e}"),
            };
            let trip = lp.induction.trip_count(lp.induction.init_const.unwrap(), lp.induction.bound_const.unwrap());
            prop_assert_eq!(count_slices(&p, &prep.plan, &w).unwrap(), slice_count(trip, prep.slice_size));
            let rep = simulate_mode(&p, mode, Some(&prep), &spec, &w).unwrap();
            prop_assert_eq!(&rep.output, &expected.output);
            prop_assert_eq!(&rep.memory_digest, &expected.memory_digest);
        }
    }
}

#[test]
fn store_hazard_is_reported() {
    let src = "
data @base=4096 prng(seed=3, len=4096)
entry @main

func @main() kind=original {
entry:
  %zero = const 0
  %one = const 1
  %three = const 3
  %n = const 64
  %base = const 4096
  br loop
loop:
  %i = phi [%zero, entry], [%i.next, body]
  %more = slt %i, %n
  brcond %more, body, done
body:
  %o = shl %i, %three
  %p = add %base, %o
  %idx = load %p, 0, 1
  %q = add %base, %idx
  %v = load %q, 0, 8
  store %p, 8, %v, 8
  %i.next = add %i, %one
  br loop
done:
  ret
}
";
    let p = parse_program(src).unwrap();
    let lp = loop_of(&p);
    let loads = lp.loads(&p.functions[0]);
    // Prefetching only the first load needs no real loads in the access phase.
    let first: BTreeSet<InstrId> = [loads[0]].into();
    assert!(plan_loop(&p, &lp, 8, &first, false).is_ok());
    // The dependent load needs the index loaded for real.
    let second: BTreeSet<InstrId> = [loads[1]].into();
    for via_base in [false, true] {
        assert_eq!(plan_loop(&p, &lp, 8, &second, via_base), Err(DaeError::StoreHazard("loop".into())));
    }
}

#[test]
fn bad_targets_and_slices_are_rejected() {
    let p = random_kernel(&mut rng(7), KernelShape { allow_stores: false, ..KernelShape::default() });
    let f = &p.functions[0];
    let lp = loop_of(&p);
    let mut ids = IdGen::after_program(&p);
    let not_load = lp.induction.next_id;
    assert_eq!(make_access_phase(f, &lp, 8, &[not_load].into(), &mut ids), Err(DaeError::NotALoad(not_load)));
    assert!(matches!(make_access_phase(f, &lp, 0, &BTreeSet::new(), &mut ids), Err(DaeError::InvalidSlice(0))));
    let base = make_base_access(f, &lp, 8, &mut ids).unwrap();
    let mut broken = base.clone();
    for b in &mut broken.blocks {
        for i in &mut b.body {
            if i.op.is_prefetch() {
                i.origin = None;
            }
        }
    }
    if base.instructions().any(|i| i.op.is_prefetch()) {
        assert!(matches!(specialize_access(&broken, &BTreeSet::new()), Err(DaeError::UntaggedPrefetch(_))));
    }
}
