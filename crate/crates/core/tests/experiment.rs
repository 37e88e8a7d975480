use std::collections::HashSet;

use caal_core::data::{CsvSchema, SyntheticKind};
use caal_core::ensemble::EnsembleConfig;
use caal_core::experiment::{
    prepare, run_experiment, run_prepared, write_outputs, DataConfig, DataSource, ExperimentConfig, LoopConfig,
    CURVE_FILE, ENSEMBLE_FILE,
};
use caal_core::net::{NetConfig, TrainSchedule};
use caal_core::{Ensemble, Error, ObjectiveKind, StrategyKind};

fn tiny(strategy: StrategyKind, rounds: usize, batch: usize) -> ExperimentConfig {
    ExperimentConfig {
        data: DataConfig {
            source: DataSource::Synthetic {
                generator: SyntheticKind::HeteroSine1D,
            },
            seed: 2,
            group_size: 1,
            initial: 12,
            val: 10,
            test: 20,
            pool: Some(40),
        },
        model: EnsembleConfig {
            members: 2,
            net: NetConfig {
                input_dim: 1,
                hidden: 6,
                trunk_layers: 1,
                head_layers: 0,
            },
            schedule: TrainSchedule {
                max_epochs: 5,
                batch_size: 8,
                lr0: 1e-2,
                ..Default::default()
            },
        },
        objective: ObjectiveKind::default(),
        strategy,
        loop_: LoopConfig {
            rounds,
            batch,
            group_level: false,
            base_seed: 9,
            dump_scores: true,
        },
        output_dir: "out".into(),
    }
}

#[test]
fn zero_rounds_gives_only_the_initial_record() {
    let out = run_experiment(&tiny(StrategyKind::Random, 0, 5)).unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.records[0].n_labelled, 12);
    assert!(out.records[0].mean_epi_selected.is_nan());
    assert!(out.score_dumps.is_empty());
}

#[test]
fn records_grow_by_the_batch() {
    let out = run_experiment(&tiny(StrategyKind::Caal { beta: 1.0 }, 3, 5)).unwrap();
    let n: Vec<usize> = out.records.iter().map(|r| r.n_labelled).collect();
    assert_eq!(n, vec![12, 17, 22, 27]);
    assert!(out.records[1..].iter().all(|r| r.budget_used == 5));
    assert_eq!(out.total_trainable, 52);
}

#[test]
fn same_seed_gives_identical_records() {
    for s in [StrategyKind::Random, StrategyKind::Badge, StrategyKind::Coreset] {
        let a = run_experiment(&tiny(s, 2, 4)).unwrap();
        let b = run_experiment(&tiny(s, 2, 4)).unwrap();
        assert_eq!(format!("{:?}", a.records), format!("{:?}", b.records));
        assert_eq!(a.final_ensemble, b.final_ensemble);
    }
}

#[test]
fn dumps_are_consistent_with_records_and_sets_stay_disjoint() {
    for s in StrategyKind::ALL_NAMES {
        let cfg = tiny(StrategyKind::from_name(s).unwrap(), 3, 4);
        let out = run_experiment(&cfg).unwrap();
        let mut queried = HashSet::new();
        let mut pool_size = 40;
        for (dump, rec) in out.score_dumps.iter().zip(&out.records[1..]) {
            assert_eq!(dump.round, rec.round);
            assert_eq!(dump.rows.len(), pool_size, "{s}");
            let sel: Vec<_> = dump.rows.iter().filter(|r| r.selected).collect();
            assert_eq!(sel.len(), 4);
            for r in &sel {
                assert!(queried.insert(r.candidate_id), "{s}: sample queried twice");
            }
            let epi = sel.iter().map(|r| r.score.epi).sum::<f64>() / sel.len() as f64;
            let ale = sel.iter().map(|r| r.score.ale).sum::<f64>() / sel.len() as f64;
            assert!((epi - rec.mean_epi_selected).abs() < 1e-12);
            assert!((ale - rec.mean_ale_selected).abs() < 1e-12);
            pool_size -= 4;
            assert_eq!(rec.n_labelled + pool_size, 52);
        }
    }
}

#[test]
fn stops_when_the_pool_is_exhausted() {
    let out = run_experiment(&tiny(StrategyKind::Qbc, 10, 15)).unwrap();
    let n: Vec<usize> = out.records.iter().map(|r| r.n_labelled).collect();
    assert_eq!(n, vec![12, 27, 42, 52]);
    assert_eq!(out.records.last().unwrap().budget_used, 10);
}

#[test]
fn group_level_queries_whole_groups() {
    let mut cfg = tiny(StrategyKind::Caal { beta: 1.0 }, 2, 2);
    cfg.data.group_size = 5;
    cfg.loop_.group_level = true;
    let prepared = prepare(&cfg.data).unwrap();
    assert_eq!(prepared.initial.len(), 60);
    let out = run_prepared(&cfg, &prepared).unwrap();
    let n: Vec<usize> = out.records.iter().map(|r| r.n_labelled).collect();
    assert_eq!(n, vec![60, 70, 80]);
    for dump in &out.score_dumps {
        let groups: HashSet<usize> = dump.rows.iter().filter(|r| r.selected).map(|r| r.group_id).collect();
        assert_eq!(groups.len(), 2);
        for r in &dump.rows {
            assert_eq!(r.selected, groups.contains(&r.group_id));
        }
    }
}

#[test]
fn scenario_scale_budget_bookkeeping() {
    // 100 initial groups of 25, 30 groups per round for 20 rounds
    let mut cfg = tiny(StrategyKind::Random, 20, 30);
    cfg.data.group_size = 25;
    cfg.data.initial = 100;
    cfg.data.val = 4;
    cfg.data.test = 4;
    cfg.data.pool = Some(620);
    cfg.loop_.group_level = true;
    cfg.loop_.dump_scores = false;
    cfg.model.members = 1;
    cfg.model.net.hidden = 2;
    cfg.model.schedule.max_epochs = 1;
    cfg.model.schedule.batch_size = 512;
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.records.first().unwrap().n_labelled, 2_500);
    assert_eq!(out.records.last().unwrap().n_labelled, 17_500);
    assert_eq!(out.records.iter().map(|r| r.budget_used).sum::<usize>(), 600);
}

#[test]
fn csv_source_uses_stored_labels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let mut text = String::from("a,b,y,g\n");
    for i in 0..40 {
        let x = i as f64 / 10.0;
        text.push_str(&format!("{x},{},{},{}\n", x * x, 0.2 + 0.01 * i as f64, i / 2));
    }
    std::fs::write(&path, &text).unwrap();
    let mut cfg = tiny(StrategyKind::Random, 2, 2);
    cfg.data = DataConfig {
        source: DataSource::Csv {
            path: path.clone(),
            schema: CsvSchema {
                features: vec!["a".into(), "b".into()],
                target: "y".into(),
                group: Some("g".into()),
                transform: caal_core::TransformKind::LogitBounded,
            },
        },
        seed: 1,
        group_size: 1,
        initial: 4,
        val: 3,
        test: 3,
        pool: None,
    };
    cfg.model.net.input_dim = 2;
    cfg.loop_.group_level = true;
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.records.iter().map(|r| r.n_labelled).collect::<Vec<_>>(), vec![8, 12, 16]);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
}

#[test]
fn invalid_configs_fail_before_training() {
    let mut cfg = tiny(StrategyKind::Random, 1, 1);
    cfg.data.pool = Some(10_000_000_000);
    cfg.data.initial = 0;
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    let mut cfg = tiny(StrategyKind::Caal { beta: -1.0 }, 1, 1);
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    cfg.strategy = StrategyKind::Random;
    cfg.model.net.input_dim = 3;
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
}

#[test]
fn outputs_written_and_snapshot_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&tiny(StrategyKind::Bald, 2, 3)).unwrap();
    write_outputs(&out, dir.path()).unwrap();
    let curve = std::fs::read_to_string(dir.path().join(CURVE_FILE)).unwrap();
    assert_eq!(curve.lines().count(), 4);
    assert!(dir.path().join("scores_round_001.csv").exists());
    let e = Ensemble::load(&dir.path().join(ENSEMBLE_FILE)).unwrap();
    assert_eq!(e, out.final_ensemble);
}

#[test]
fn config_json_round_trip() {
    let cfg = tiny(StrategyKind::Caal { beta: 2.0 }, 3, 4);
    let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);
    let text = r#"{
        "data": {"source": "synthetic", "generator": "noise_band_2d", "initial": 5, "val": 5, "test": 5, "pool": 10},
        "model": {"net": {"input_dim": 2}},
        "objective": {"kind": "beta_nll"},
        "strategy": {"kind": "caal"},
        "loop": {"rounds": 1, "batch": 2}
    }"#;
    let cfg = ExperimentConfig::from_json(text).unwrap();
    assert_eq!(cfg.objective, ObjectiveKind::BetaNll { beta_nll: 0.5 });
    assert_eq!(cfg.strategy, StrategyKind::Caal { beta: 1.0 });
    assert_eq!(cfg.model.members, 5);
    cfg.validate().unwrap();
}
