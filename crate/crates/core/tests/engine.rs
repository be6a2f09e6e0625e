mod common;

use common::{random_instance, random_params};

use pond::baselines::run_etc_trial;
use pond::dispatch::{run_pond_trial, PondParams, TrialRecord};
use pond::learners::{ArmStats, Learner};
use pond::matrix::Matrix;
use proptest::prelude::*;

fn assert_conservation(rec: &TrialRecord) {
    for (t, slot) in rec.slots.iter().enumerate() {
        for (i, &arrived) in slot.arrivals.iter().enumerate() {
            let sent: u64 = slot.allocation.row(i).iter().sum();
            assert_eq!(sent, arrived, "slot {t} type {i}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pond_conserves_jobs_and_keeps_queues_non_negative(seed in any::<u64>(), horizon in 1usize..150) {
        let inst = random_instance(seed);
        let rec = run_pond_trial(&inst, random_params(seed), horizon, seed).unwrap();
        prop_assert_eq!(rec.slots.len(), horizon);
        assert_conservation(&rec);
        for slot in &rec.slots {
            let q = slot.queues.as_ref().unwrap();
            prop_assert!(q.as_matrix().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn queues_dominate_the_cumulative_tightened_drift(seed in any::<u64>(), horizon in 1usize..150) {
        let inst = random_instance(seed);
        let params = random_params(seed);
        let rec = run_pond_trial(&inst, params, horizon, seed).unwrap();
        let (m, k_count) = (inst.n_servers, inst.n_constraints());
        let mut drift: Matrix<f64> = Matrix::zeros(m, k_count);
        for slot in &rec.slots {
            for k in 0..k_count {
                for j in 0..m {
                    let load: f64 = (0..inst.n_types)
                        .map(|i| slot.weights[k][(i, j)] * slot.allocation[(i, j)] as f64)
                        .sum();
                    drift[(j, k)] += load - slot.requirements[k][j] + params.epsilon;
                }
            }
            let q = slot.queues.as_ref().unwrap();
            for ((j, k), &d) in drift.indexed() {
                prop_assert!(q.get(j, k) >= d - 1e-9 * (1.0 + d.abs()), "Q {} < drift {}", q.get(j, k), d);
            }
        }
    }

    #[test]
    fn same_seed_same_record(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let params = random_params(seed);
        let a = run_pond_trial(&inst, params, 60, seed).unwrap();
        let b = run_pond_trial(&inst, params, 60, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let e1 = run_etc_trial(&inst, 60, seed).unwrap();
        let e2 = run_etc_trial(&inst, 60, seed).unwrap();
        prop_assert_eq!(&e1, &e2);
        assert_conservation(&e1);
    }

    #[test]
    fn batched_and_sequential_updates_agree(
        batches in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 0..20), 1..30)
    ) {
        let mut batched = ArmStats::new(1, 1);
        let mut sequential = ArmStats::new(1, 1);
        for rewards in &batches {
            batched.update(0, 0, rewards.len() as u64, rewards.iter().sum()).unwrap();
            for &r in rewards {
                sequential.update(0, 0, 1, r).unwrap();
            }
        }
        prop_assert_eq!(batched.pulls()[(0, 0)], sequential.pulls()[(0, 0)]);
        prop_assert!((batched.means()[(0, 0)] - sequential.means()[(0, 0)]).abs() <= 1e-6);
    }
}

#[test]
fn paired_streams_give_identical_arrivals_across_algorithms() {
    let inst = common::paper_instance();
    let params = PondParams {
        v: 100.0,
        epsilon: 0.01,
        learner: Learner::Ucb,
    };
    let pond = run_pond_trial(&inst, params, 300, 99).unwrap();
    let etc = run_etc_trial(&inst, 300, 99).unwrap();
    for (a, b) in pond.slots.iter().zip(&etc.slots) {
        assert_eq!(a.arrivals, b.arrivals);
        assert_eq!(a.requirements, b.requirements);
    }
}
