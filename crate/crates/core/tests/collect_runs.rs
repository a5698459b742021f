//! End-to-end collector behaviour on small seeded two-moons runs.

use std::collections::HashSet;

use autoens::collect::{
    decode_checkpoint, encode_checkpoint, load_dir, run_auto_ensemble, run_baseline, save_all,
    to_jsonl_string, DataSplits, Method, StepEvent, StopReason,
};
use autoens::diversity::gate_satisfied;
use autoens::harness::{DatasetSpec, ExperimentConfig};
use autoens::schedule::{replay, FixedSchedule, Phase, ScheduleEvents};
use autoens::Error;

fn small(seed: u64) -> (ExperimentConfig, DataSplits) {
    let mut cfg = ExperimentConfig::two_moons(seed);
    cfg.dataset = DatasetSpec::TwoMoons {
        n: 600,
        noise: 0.25,
    };
    let data = cfg.data().unwrap();
    (cfg, data)
}

#[test]
fn stops_after_max_checkpoints() {
    let (mut cfg, data) = small(42);
    cfg.stop.max_checkpoints = 3;
    cfg.stop.max_steps = 10_000;
    let run = run_auto_ensemble(&cfg.ae_config(), &data, 42).unwrap();
    assert_eq!(run.checkpoints.len(), 3);
    assert_eq!(run.stop_reason, StopReason::MaxCheckpoints);
    assert_eq!(run.ensemble_members, vec![0, 1, 2]);
    let last = run.log.last().unwrap();
    assert!(last.event.unwrap().is_collection());
}

#[test]
fn lr_ceiling_at_floor_halts_in_the_first_rise() {
    let (mut cfg, data) = small(42);
    cfg.stop.lr_ceiling = cfg.schedule.alpha2;
    let run = run_auto_ensemble(&cfg.ae_config(), &data, 42).unwrap();
    assert_eq!(run.stop_reason, StopReason::LrCeiling);
    assert_eq!(run.checkpoints.len(), 1);
    assert!(run
        .log
        .iter()
        .all(|r| !Phase::parse(&r.phase).unwrap().is_rise()));
}

#[test]
fn tiny_budget_without_convergence_is_a_collection_failure() {
    let (mut cfg, data) = small(1);
    cfg.stop.max_steps = 12;
    match run_auto_ensemble(&cfg.ae_config(), &data, 1) {
        Err(Error::CollectionFailure { log }) => assert_eq!(log.len(), 12),
        other => panic!("expected a collection failure, got {other:?}"),
    }
}

#[test]
fn logged_rates_replay_from_logged_events() {
    let (cfg, data) = small(42);
    let run = run_auto_ensemble(&cfg.ae_config(), &data, 42).unwrap();
    let events: Vec<ScheduleEvents> = run.log.iter().map(|r| r.schedule_events()).collect();
    let lrs = replay(&cfg.schedule, &events).unwrap();
    assert_eq!(lrs.len(), run.log.len());
    for (r, lr) in run.log.iter().zip(&lrs) {
        assert_eq!(r.lr.to_bits(), lr.to_bits(), "step {}", r.step);
    }
    for (i, r) in run.log.iter().enumerate() {
        assert_eq!(r.step, i);
    }
}

#[test]
fn every_later_cycle_end_passes_the_gate() {
    for seed in [3, 4, 5] {
        let (cfg, data) = small(seed);
        let run = run_auto_ensemble(&cfg.ae_config(), &data, seed).unwrap();
        let ends: Vec<_> = run
            .log
            .iter()
            .filter(|r| r.event == Some(StepEvent::CycleEnd))
            .collect();
        assert!(!ends.is_empty(), "seed {seed} never finished a cycle");
        for r in ends.iter().skip(1) {
            let (d1, d2) = (r.d1.unwrap(), r.d2.unwrap());
            assert!(d1 > 0.0);
            assert!(
                gate_satisfied(d1, d2, cfg.diversity.alpha_ratio),
                "seed {seed} step {}",
                r.step
            );
        }
        for r in &run.log {
            if r.event == Some(StepEvent::CycleEnd) {
                assert_eq!(r.phase, "rise_explore");
            }
            if matches!(
                r.event,
                Some(StepEvent::Checkpoint | StepEvent::ForcedCheckpoint)
            ) {
                assert!(r.phase == "decline" || r.phase == "floor");
            }
        }
    }
}

#[test]
fn convergence_collects_from_the_floor() {
    let (cfg, data) = small(42);
    let run = run_auto_ensemble(&cfg.ae_config(), &data, 42).unwrap();
    assert!(run
        .log
        .iter()
        .any(|r| r.phase == "floor" && r.event == Some(StepEvent::Checkpoint)));
    for (c, i) in run.checkpoints.iter().zip(0u64..) {
        assert_eq!(c.id, i);
        assert!(run.log[c.collected_at_step].event.unwrap().is_collection());
    }
}

#[test]
fn identical_seeds_give_identical_logs_and_checkpoints() {
    let (cfg, data) = small(7);
    let a = run_auto_ensemble(&cfg.ae_config(), &data, 7).unwrap();
    let b = run_auto_ensemble(&cfg.ae_config(), &data, 7).unwrap();
    assert_eq!(
        to_jsonl_string(&a.log).unwrap(),
        to_jsonl_string(&b.log).unwrap()
    );
    for (x, y) in a.checkpoints.iter().zip(&b.checkpoints) {
        assert_eq!(encode_checkpoint(x).unwrap(), encode_checkpoint(y).unwrap());
    }
    let c = run_auto_ensemble(&cfg.ae_config(), &data, 8).unwrap();
    assert_ne!(
        to_jsonl_string(&a.log).unwrap(),
        to_jsonl_string(&c.log).unwrap()
    );
}

#[test]
fn checkpoints_survive_a_directory_round_trip() {
    let (mut cfg, data) = small(42);
    cfg.stop.max_checkpoints = 3;
    let run = run_auto_ensemble(&cfg.ae_config(), &data, 42).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_all(&run.checkpoints, dir.path()).unwrap();
    assert_eq!(load_dir(dir.path()).unwrap(), run.checkpoints);
    let bytes = encode_checkpoint(&run.checkpoints[0]).unwrap();
    assert_eq!(decode_checkpoint(&bytes).unwrap(), run.checkpoints[0]);
    assert!(matches!(
        decode_checkpoint(&bytes[..bytes.len() / 2]),
        Err(Error::Corruption(_))
    ));
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(matches!(
        decode_checkpoint(&wrong_magic),
        Err(Error::Format(_))
    ));
}

#[test]
fn snapshot_ensembles_keep_their_last_members() {
    let (mut cfg, data) = small(2);
    cfg.baselines.sse.cycle_len = 6;
    let run = run_baseline(Method::Sse, &cfg.baselines, &cfg.train, &data, 2).unwrap();
    assert_eq!(run.checkpoints.len(), 10);
    assert_eq!(run.ensemble_members, vec![5, 6, 7, 8, 9]);
    assert_eq!(run.log.len(), 60);
    for c in &run.checkpoints {
        assert_eq!((c.collected_at_step + 1) % 6, 0);
    }
}

#[test]
fn independent_runs_differ_and_checkpoint_every_epoch_runs_do_not_skip() {
    let (mut cfg, data) = small(2);
    cfg.baselines.ind.epochs = 15;
    cfg.baselines.ind.schedule = FixedSchedule::StepDecay {
        base: 0.1,
        milestones: vec![10],
        factor: 0.1,
    };
    let rie = run_baseline(Method::Rie, &cfg.baselines, &cfg.train, &data, 2).unwrap();
    assert_eq!(rie.checkpoints.len(), 5);
    let probes: HashSet<Vec<u64>> = rie
        .checkpoints
        .iter()
        .map(|c| c.probe.iter().map(|v| v.to_bits()).collect())
        .collect();
    assert_eq!(probes.len(), 5);
    assert_eq!(rie.total_steps, 75);

    cfg.baselines.ce.epochs = 20;
    let ce = run_baseline(Method::Ce, &cfg.baselines, &cfg.train, &data, 2).unwrap();
    assert_eq!(ce.checkpoints.len(), 20);
    let steps: Vec<usize> = ce.checkpoints.iter().map(|c| c.collected_at_step).collect();
    assert_eq!(steps, (0..20).collect::<Vec<_>>());
}

#[test]
fn baselines_reject_the_adaptive_method() {
    let (cfg, data) = small(2);
    assert!(matches!(
        run_baseline(Method::Ae, &cfg.baselines, &cfg.train, &data, 2),
        Err(Error::Config(_))
    ));
}
