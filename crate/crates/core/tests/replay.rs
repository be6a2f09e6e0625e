mod common;

use pond::baselines::{Etc, UniformRandom};
use pond::dispatch::{Pond, PondParams};
use pond::harness::replay::run_replay;
use pond::harness::{
    load_dataset, replay_logged, synthesize_dataset, write_dataset, ExperimentConfig,
    HarnessError, LoggedDataset, LoggedRecord, LoggingPolicy,
};
use pond::learners::Learner;

fn tutoring() -> ExperimentConfig {
    ExperimentConfig::from_json(common::TUTORING_CONFIG).unwrap()
}

#[test]
fn tutoring_constraints_load_into_the_replay_config() {
    let inst = tutoring().build_instance().unwrap();
    let cap = &inst.constraints[0];
    let means: Vec<f64> = cap.requirements.iter().map(|d| d.mean().unwrap()).collect();
    assert_eq!(means, [1.0 / 3.0, 0.4, 1.0 / 3.0]);
    let res = &inst.constraints[2];
    let w: Vec<f64> = res.weights.iter().map(|d| d.mean().unwrap()).collect();
    assert_eq!(w, [1.0, 1.0, 1.5, 1.5, 1.0, 1.0]);
    let rho: Vec<f64> = res.requirements.iter().map(|d| d.mean().unwrap()).collect();
    assert_eq!(rho, [0.5, 0.35, 1.0 / 3.0]);
}

#[test]
fn dataset_errors() {
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("log.csv");
    std::fs::write(&path, "context_type,logged_arm,reward\n").unwrap();
    assert!(matches!(
        load_dataset(&path, 2, 3, LoggingPolicy::UniformOverArms),
        Err(HarnessError::Dataset(_))
    ));
    std::fs::write(&path, "type,arm,reward\n0,0,1\n").unwrap();
    assert!(matches!(
        load_dataset(&path, 2, 3, LoggingPolicy::UniformOverArms),
        Err(HarnessError::Csv { .. })
    ));
    std::fs::write(&path, "context_type,logged_arm,reward\n0,1,0.5\n").unwrap();
    assert!(load_dataset(&path, 2, 3, LoggingPolicy::NonUniform).is_err());
    assert!(load_dataset(&path, 2, 3, LoggingPolicy::UniformOverArms).is_ok());
    std::fs::write(&path, "context_type,logged_arm,reward\n0,1,1.5\n").unwrap();
    assert!(load_dataset(&path, 2, 3, LoggingPolicy::UniformOverArms).is_err());
}

#[test]
fn replay_is_deterministic() {
    let cfg = tutoring();
    let inst = cfg.build_instance().unwrap();
    let data = synthesize_dataset(&inst, 5_000, 11);
    let params = PondParams {
        v: 40.0,
        epsilon: 0.02,
        learner: Learner::Ucb,
    };
    let run = || {
        let policy = Pond::for_instance(params, 400, &inst).unwrap();
        replay_logged(&data, &inst, policy, 400, 3, 1000).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.accepted, 400);
    assert_eq!(a.record.slots.len(), 400);
    for slot in &a.record.slots {
        assert_eq!(slot.arrivals.iter().sum::<u64>(), 1);
    }
}

#[test]
fn a_policy_that_never_matches_hits_the_draw_cap() {
    let cfg = tutoring();
    let inst = cfg.build_instance().unwrap();
    let only_arm_one = vec![LoggedRecord {
        context_type: 0,
        logged_arm: 1,
        reward: 1.0,
    }];
    let never = LoggedDataset::new(only_arm_one, 2, 3, LoggingPolicy::UniformOverArms).unwrap();
    let out = replay_logged(&never, &inst, UniformRandom::new(2, 3), 50, 1, 1000).unwrap();
    assert_eq!(out.accepted, 50);

    struct Stubborn(pond::learners::ArmStats);
    impl pond::dispatch::DispatchPolicy for Stubborn {
        fn name(&self) -> String {
            "stubborn".into()
        }
        fn allocate(
            &self,
            arrivals: &[u64],
            _: &[pond::matrix::Matrix<f64>],
            _: &mut dyn rand::RngCore,
        ) -> pond::matrix::Matrix<u64> {
            pond::matrix::Matrix::from_fn(arrivals.len(), 3, |i, j| if j == 0 { arrivals[i] } else { 0 })
        }
        fn observe(
            &mut self,
            _: &pond::dispatch::SlotFeedback<'_>,
        ) -> Result<(), pond::dispatch::SimError> {
            Ok(())
        }
        fn arm_stats(&self) -> &pond::learners::ArmStats {
            &self.0
        }
    }
    let err = replay_logged(&never, &inst, Stubborn(pond::learners::ArmStats::new(2, 3)), 5, 1, 10)
        .unwrap_err();
    assert!(matches!(err, HarnessError::Dataset(_)));
}

#[test]
fn pond_earns_at_least_as_much_as_etc_on_synthetic_logs() {
    let cfg = tutoring();
    let inst = cfg.build_instance().unwrap();
    let data = synthesize_dataset(&inst, 20_000, 4);
    let horizon = 5_000;
    let params = PondParams {
        v: 2.0 * (horizon as f64).sqrt(),
        epsilon: 1.0 / (horizon as f64).sqrt(),
        learner: Learner::Ucb,
    };
    let (mut pond_sum, mut etc_sum) = (0.0, 0.0);
    let trials = 10;
    for seed in 0..trials {
        let pond = Pond::for_instance(params, horizon, &inst).unwrap();
        pond_sum += replay_logged(&data, &inst, pond, horizon, seed, 1000)
            .unwrap()
            .average_reward;
        let etc = Etc::for_instance(horizon, &inst);
        etc_sum += replay_logged(&data, &inst, etc, horizon, seed, 1000)
            .unwrap()
            .average_reward;
    }
    let (pond_avg, etc_avg) = (pond_sum / trials as f64, etc_sum / trials as f64);
    assert!(pond_avg >= etc_avg, "POND {pond_avg} < ETC {etc_avg}");
}

#[test]
fn uniform_replay_is_unbiased() {
    let cfg = tutoring();
    let inst = cfg.build_instance().unwrap();
    let data = synthesize_dataset(&inst, 20_000, 8);
    let out = replay_logged(&data, &inst, UniformRandom::new(2, 3), 6_000, 2, 1000).unwrap();
    assert!((out.average_reward - data.mean_reward()).abs() <= 3.0 * out.reward_sem);
    assert!((out.acceptance_rate - 1.0 / 3.0).abs() <= 3.0 * out.acceptance_sem);
}

#[test]
fn replay_writes_one_row_per_cell() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = tutoring();
    cfg.trials = 2;
    cfg.horizons = vec![200];
    cfg.output_dir = d.path().to_path_buf();
    let inst = cfg.build_instance().unwrap();
    let data = synthesize_dataset(&inst, 1_000, 1);
    let csv_path = d.path().join("log.csv");
    write_dataset(&csv_path, &data).unwrap();
    let data = load_dataset(&csv_path, 2, 3, LoggingPolicy::UniformOverArms).unwrap();
    let out = run_replay(&cfg, &data).unwrap();
    assert_eq!(out.outcomes.len(), 2);
    let text = std::fs::read_to_string(out.replay_csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",2,ok")));
}
