mod common;

use geosched::baselines::{bfd_place, brute_force_optimum, search_space_log10, BruteForceLimits};
use geosched::fitness::{Evaluator, FitnessWeights};
use geosched::ga::{evolve, local_improvement, GaConfig};
use geosched::geotraces::PPueModel;
use geosched::model::{Action, CloudState, PmId, Schedule, VmId};
use geosched::Error;

fn energy_only() -> FitnessWeights {
    FitnessWeights::new(1.0, 0.0, 0.0, 0.0).unwrap()
}

/// 1 VM on pm0, 2 PMs, fw 2, pm1 at half the price of pm0.
fn toy() -> (geosched::model::Cloud, CloudState, geosched::geotraces::GeoTraceSet) {
    let cloud = common::cloud(&[(4, 4), (4, 4)], &[(2, 2)]);
    let state = common::state(2, &[(VmId(0), PmId(0))], &[]);
    let traces = common::traces(&[vec![0.2, 0.2], vec![0.1, 0.1]]);
    (cloud, state, traces)
}

#[test]
fn toy_oracle_migrates_to_cheaper_pm_at_first_step() {
    let (cloud, state, traces) = toy();
    let eval = Evaluator::new(
        &cloud,
        &state,
        &traces,
        &PPueModel::default(),
        &energy_only(),
        common::window(2),
    )
    .unwrap();
    let (best, fit) = brute_force_optimum(&eval, &BruteForceLimits::default()).unwrap();
    let expected = Schedule::from_actions(common::window(2), [(0, Action::new(VmId(0), PmId(1)))]).unwrap();
    assert_eq!(best, expected);

    // independent check: all 3 x 3 slot combinations
    let choices = [None, Some(PmId(0)), Some(PmId(1))];
    let mut min = f64::INFINITY;
    for a in choices {
        for b in choices {
            let mut s = Schedule::empty(common::window(2));
            if let Some(pm) = a {
                s.set(0, Action::new(VmId(0), pm));
            }
            if let Some(pm) = b {
                s.set(1, Action::new(VmId(0), pm));
            }
            min = min.min(eval.evaluate(&s).unwrap().total);
        }
    }
    assert_eq!(fit.total, min);
}

#[test]
fn toy_ga_finds_the_cheaper_pm() {
    let (cloud, state, traces) = toy();
    let eval = Evaluator::new(
        &cloud,
        &state,
        &traces,
        &PPueModel::default(),
        &energy_only(),
        common::window(2),
    )
    .unwrap();
    let config = GaConfig {
        population_size: 20,
        generations: 20,
        seed: 3,
        ..GaConfig::default()
    };
    let out = evolve(&eval, &config, None).unwrap();
    assert_eq!(out.best.action_for(0, VmId(0)), Some(Action::new(VmId(0), PmId(1))));
}

#[test]
fn ga_with_zero_generations_returns_improved_initial_best() {
    let (cloud, state, traces) = toy();
    let eval = Evaluator::new(
        &cloud,
        &state,
        &traces,
        &PPueModel::default(),
        &energy_only(),
        common::window(2),
    )
    .unwrap();
    let config = GaConfig {
        population_size: 4,
        generations: 0,
        init_action_prob: 0.0,
        ..GaConfig::default()
    };
    let out = evolve(&eval, &config, None).unwrap();
    assert_eq!(out.generations_run, 0);
    assert_eq!(out.best_per_generation.len(), 1);
    // all-empty initial population; the greedy pass performs the move
    assert_eq!(out.best.action_for(0, VmId(0)), Some(Action::new(VmId(0), PmId(1))));
}

#[test]
fn single_pm_single_step_keeps_empty_schedule() {
    let cloud = common::cloud(&[(4, 4)], &[(1, 1)]);
    let state = common::state(1, &[(VmId(0), PmId(0))], &[]);
    let traces = common::traces(&[vec![0.1]]);
    let eval = Evaluator::new(
        &cloud,
        &state,
        &traces,
        &PPueModel::default(),
        &FitnessWeights::default(),
        common::window(1),
    )
    .unwrap();
    let (best, _) = brute_force_optimum(&eval, &BruteForceLimits::default()).unwrap();
    assert!(best.is_empty());
}

#[test]
fn local_improvement_moves_off_expensive_pm_and_respects_capacity() {
    let (cloud, state, traces) = toy();
    let eval = Evaluator::new(
        &cloud,
        &state,
        &traces,
        &PPueModel::default(),
        &energy_only(),
        common::window(2),
    )
    .unwrap();
    let empty = Schedule::empty(common::window(2));
    let (improved, fit) = local_improvement(&eval, &empty).unwrap();
    assert_eq!(improved.action_for(0, VmId(0)), Some(Action::new(VmId(0), PmId(1))));
    assert!(fit.total < eval.evaluate(&empty).unwrap().total);
    let (again, fit2) = local_improvement(&eval, &improved).unwrap();
    assert_eq!(again, improved);
    assert_eq!(fit2, fit);

    // the cheap PM is too small for the VM
    let cloud = common::cloud(&[(4, 4), (1, 1)], &[(2, 2)]);
    let eval = Evaluator::new(
        &cloud,
        &state,
        &traces,
        &PPueModel::default(),
        &energy_only(),
        common::window(2),
    )
    .unwrap();
    let (kept, _) = local_improvement(&eval, &empty).unwrap();
    assert!(kept.is_empty());
}

#[test]
fn bfd_examples() {
    // nearly-full PM wins when the VM fits
    let cloud = common::cloud(&[(8, 8), (8, 8)], &[(6, 6), (2, 2)]);
    let state = common::state(2, &[(VmId(0), PmId(1))], &[VmId(1)]);
    let traces = common::traces(&[vec![0.1], vec![0.1]]);
    let placed = bfd_place(&cloud, &state, &traces, common::window(1)).unwrap();
    assert_eq!(placed.schedule.step(0), &[Action::new(VmId(1), PmId(1))]);
    assert!(placed.unplaced.is_empty());

    // decreasing order on unit-ish PMs: 0.6, 0.5, 0.4 of a 10-unit PM
    let cloud = common::cloud(&[(10, 10), (10, 10), (10, 10)], &[(4, 4), (6, 6), (5, 5)]);
    let state = common::state(3, &[], &[VmId(0), VmId(1), VmId(2)]);
    let traces = common::traces(&[vec![0.1], vec![0.1], vec![0.1]]);
    let placed = bfd_place(&cloud, &state, &traces, common::window(1)).unwrap();
    // 0.6 -> pm0, 0.5 cannot join it -> pm1, 0.4 fills pm0 to 1.0
    assert_eq!(
        placed.schedule.action_for(0, VmId(1)),
        Some(Action::new(VmId(1), PmId(0)))
    );
    assert_eq!(
        placed.schedule.action_for(0, VmId(2)),
        Some(Action::new(VmId(2), PmId(1)))
    );
    assert_eq!(
        placed.schedule.action_for(0, VmId(0)),
        Some(Action::new(VmId(0), PmId(0)))
    );

    // more demand than capacity
    let cloud = common::cloud(&[(4, 4)], &[(3, 3), (3, 3)]);
    let state = common::state(1, &[], &[VmId(0), VmId(1)]);
    let placed = bfd_place(&cloud, &state, &common::traces(&[vec![0.1]]), common::window(1)).unwrap();
    assert_eq!(placed.unplaced.len(), 1);
}

#[test]
fn bfd_never_overfills() {
    for seed in 0..200 {
        let inst = common::random_instance(seed, 6, 3, 1);
        let placed = bfd_place(&inst.cloud, &inst.state, &inst.traces, inst.window).unwrap();
        let mut after = inst.state.clone();
        let overfull_before: Vec<bool> = inst
            .cloud
            .pms()
            .iter()
            .map(|p| !inst.state.capacity_ok(&inst.cloud, p.id))
            .collect();
        for a in placed.schedule.step(0) {
            after.apply_in_place(*a).unwrap();
        }
        for (pm, was_over) in inst.cloud.pms().iter().zip(overfull_before) {
            if !was_over {
                assert!(after.capacity_ok(&inst.cloud, pm.id), "seed {seed}");
            }
        }
    }
}

#[test]
fn oracle_is_never_beaten() {
    for seed in 0..40 {
        let inst = common::random_instance(seed, 2, 3, 2);
        let eval = Evaluator::new(
            &inst.cloud,
            &inst.state,
            &inst.traces,
            &PPueModel::default(),
            &FitnessWeights::default(),
            inst.window,
        )
        .unwrap();
        let (_, oracle) = brute_force_optimum(&eval, &BruteForceLimits::default()).unwrap();
        let bfd = bfd_place(&inst.cloud, &inst.state, &inst.traces, inst.window).unwrap();
        assert!(oracle.total <= eval.evaluate(&bfd.schedule).unwrap().total + 1e-12);
        let ga = evolve(
            &eval,
            &GaConfig {
                population_size: 10,
                generations: 10,
                seed,
                ..GaConfig::default()
            },
            None,
        )
        .unwrap();
        assert!(oracle.total <= ga.fitness.total + 1e-12, "seed {seed}");
        assert_eq!(eval.evaluate(&ga.best).unwrap(), ga.fitness);
    }
}

#[test]
fn pruning_matches_plain_enumeration() {
    // a weight set where constraint violations dominate exercises the bound
    let weights = FitnessWeights::new(1.0, 0.1, 2.0, 50.0).unwrap();
    for seed in 100..130 {
        let inst = common::random_instance(seed, 2, 3, 2);
        let eval = Evaluator::new(
            &inst.cloud,
            &inst.state,
            &inst.traces,
            &PPueModel::default(),
            &weights,
            inst.window,
        )
        .unwrap();
        let (_, pruned) = brute_force_optimum(&eval, &BruteForceLimits::default()).unwrap();
        let mut min = f64::INFINITY;
        let n_pm = inst.cloud.pms().len();
        let vms: Vec<VmId> = inst.state.vm_ids();
        let slots = vms.len() * inst.window.length;
        let total = (n_pm + 1).pow(slots as u32);
        for code in 0..total {
            let mut s = Schedule::empty(inst.window);
            let mut c = code;
            for slot in 0..slots {
                let choice = c % (n_pm + 1);
                c /= n_pm + 1;
                if choice > 0 {
                    s.set(
                        slot / vms.len(),
                        Action::new(vms[slot % vms.len()], PmId(choice as u32 - 1)),
                    );
                }
            }
            min = min.min(eval.evaluate(&s).unwrap().total);
        }
        assert!(
            (pruned.total - min).abs() < 1e-12,
            "seed {seed}: {} vs {min}",
            pruned.total
        );
    }
}

#[test]
fn oversized_instance_is_rejected_with_its_size() {
    let cloud = common::cloud(&[(4, 4); 3], &[(1, 1), (1, 1), (1, 1)]);
    let state = common::state(3, &[(VmId(0), PmId(0)), (VmId(1), PmId(1)), (VmId(2), PmId(2))], &[]);
    let traces = common::traces(&vec![vec![0.1; 6]; 3]);
    let eval = Evaluator::new(
        &cloud,
        &state,
        &traces,
        &PPueModel::default(),
        &FitnessWeights::default(),
        common::window(6),
    )
    .unwrap();
    match brute_force_optimum(&eval, &BruteForceLimits::default()) {
        Err(Error::SearchSpaceTooLarge { log10_count, .. }) => {
            assert!((log10_count - search_space_log10(3, 3, 0, 6)).abs() < 1e-12);
        }
        other => panic!("expected a size error, got {other:?}"),
    }
}
