use fedmkgc::dataset::{
    build_federated, synth_features, synth_graph, FederatedDataset, PartitionConfig, SynthFeatureConfig, SynthGraphConfig,
};
use fedmkgc::fedproto::{
    aggregate_structural, distribute, load_checkpoint, save_checkpoint, CheckpointManifest, Federation, PermutationMap,
    ProtoError, SplitKind, TrainingConfig, UploadKind,
};
use fedmkgc::hide::ImputerKind;
use fedmkgc::numcore::{Matrix, Rng};
use fedmkgc::objectives::ObjectiveKind;

fn data(clients: usize, seed: u64) -> FederatedDataset {
    let mut rng = Rng::new(seed);
    let mut kg = synth_graph(
        &SynthGraphConfig {
            entities: 40,
            relations: 6,
            triples: 300,
            groups: 4,
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    synth_features(
        &mut kg,
        &SynthFeatureConfig {
            visual_dim: 6,
            textual_dim: 5,
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    let cfg = PartitionConfig {
        num_clients: clients,
        ..Default::default()
    };
    build_federated(&kg, &cfg, &mut rng).unwrap()
}

fn small_cfg(objective: ObjectiveKind, imputer: ImputerKind) -> TrainingConfig {
    let mut cfg = TrainingConfig {
        rounds: 3,
        local_epochs: 1,
        batch_size: 64,
        negatives: 8,
        dim: 8,
        objective,
        ..Default::default()
    };
    cfg.imputer.kind = imputer;
    cfg.imputer.schedule.steps = 3;
    cfg
}

fn fede_cfg() -> TrainingConfig {
    small_cfg(ObjectiveKind::FedE, ImputerKind::None)
}

#[test]
fn distribution_gathers_rows_index_by_index() {
    let map = PermutationMap::new(vec![2, 0], 3).unwrap();
    let global = Matrix::from_vec(3, 2, vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0]).unwrap();
    let local = map.gather(&global).unwrap();
    assert_eq!(local.row(0), global.row(2));
    assert_eq!(local.row(1), global.row(0));
    assert_eq!(map.existence(), vec![true, false, true]);

    let fed = Federation::new(&data(3, 1), fede_cfg(), 1).unwrap();
    for c in &fed.clients {
        let ent = &c.model.local.entity.value;
        for (i, &g) in c.map.local_to_global().iter().enumerate() {
            assert_eq!(ent.row(i), fed.server.entity.row(g));
        }
        assert_eq!(c.model.local.visual.value, fed.server.visual);
        assert_eq!(c.model.local.textual.value, fed.server.textual);
    }
}

#[test]
fn maps_reject_duplicates_and_out_of_range_entities() {
    assert!(PermutationMap::new(vec![0, 0], 3).is_err());
    assert!(PermutationMap::new(vec![3], 3).is_err());
}

#[test]
fn single_client_distribute_then_aggregate_is_identity() {
    let d = data(1, 2);
    let mut fed = Federation::new(&d, fede_cfg(), 2).unwrap();
    let c = &fed.clients[0];
    if c.map.len() == c.map.global_count() {
        assert_eq!(c.model.local.entity.value.shape(), fed.server.entity.shape());
    }
    let before = fed.server.clone();
    let up = fed.clients[0].upload(UploadKind::Local).unwrap();
    fed.aggregate(&[up]).unwrap();
    assert_eq!(fed.server.entity, before.entity);
    assert_eq!(fed.server.visual, before.visual);
    assert_eq!(fed.server.textual, before.textual);
}

#[test]
fn identical_uploads_aggregate_to_either_upload() {
    let mut d = data(1, 3);
    let mut twin = d.clients[0].clone();
    twin.client_id = 1;
    d.clients.push(twin);
    let mut fed = Federation::new(&d, fede_cfg(), 3).unwrap();
    fed.clients[0].train_local(&fed.cfg.clone(), 1, &mut Rng::new(9)).unwrap();
    let a = fed.clients[0].upload(UploadKind::Local).unwrap();
    let mut b = a.clone();
    b.client_id = 1;
    fed.aggregate(&[a.clone(), b]).unwrap();
    assert_eq!(fed.clients[0].map.gather(&fed.server.entity).unwrap(), a.entity);
    assert_eq!(fed.server.visual, a.visual);
    assert_eq!(fed.server.textual, a.textual);
}

#[test]
fn uncovered_entities_keep_their_rows() {
    let map = PermutationMap::new(vec![1], 3).unwrap();
    let mut global = Matrix::from_vec(3, 1, vec![5.0, 6.0, 7.0]).unwrap();
    let up = Matrix::from_vec(1, 1, vec![-1.0]).unwrap();
    aggregate_structural(&mut global, &[(&map, &up)]).unwrap();
    assert_eq!(global.data(), &[5.0, -1.0, 7.0]);
}

#[test]
fn replica_objectives_upload_replicas_and_keep_relations_local() {
    let d = data(2, 4);
    let mut fed = Federation::new(&d, small_cfg(ObjectiveKind::FeD3, ImputerKind::Hide), 4).unwrap();
    let relations: Vec<Matrix> = fed.clients.iter().map(|c| c.model.relation.value.clone()).collect();
    let diags = fed.run_round().unwrap();
    assert_eq!(diags.len(), 2);
    for (c, before) in fed.clients.iter().zip(&relations) {
        assert!(c.model.replica.is_some());
        assert_ne!(&c.model.relation.value, before, "local relation table trains");
        let up = c.upload(UploadKind::Replica).unwrap();
        assert_eq!(up.entity.shape(), c.model.local.entity.value.shape());
    }
    // Without replicas a replica upload is refused.
    let fed = Federation::new(&d, fede_cfg(), 4).unwrap();
    assert!(fed.clients[0].upload(UploadKind::Replica).is_err());
}

#[test]
fn personal_locals_survive_distribution() {
    let d = data(2, 5);
    let mut fed = Federation::new(&d, small_cfg(ObjectiveKind::FedLu, ImputerKind::None), 5).unwrap();
    fed.run_round().unwrap();
    let locals = fed.clients[0].model.local.entity.value.clone();
    let server = fed.server.clone();
    distribute(&server, &mut fed.clients[0], true).unwrap();
    assert_eq!(fed.clients[0].model.local.entity.value, locals);
    let replica = fed.clients[0].model.replica.as_ref().unwrap().entity.value.clone();
    assert_eq!(replica, fed.clients[0].map.gather(&server.entity).unwrap());
    distribute(&server, &mut fed.clients[0], false).unwrap();
    assert_eq!(fed.clients[0].model.local.entity.value, replica);
}

fn log_keys(fed: &mut Federation) -> Vec<String> {
    fed.train_until_stop(|_| {}).unwrap().log.iter().map(|r| r.metrics_key()).collect()
}

#[test]
fn fixed_seed_gives_identical_logs_in_any_execution_mode() {
    let d = data(3, 6);
    let cfg = small_cfg(ObjectiveKind::FeD3, ImputerKind::Hide);
    let a = log_keys(&mut Federation::new(&d, cfg.clone(), 11).unwrap());
    let b = log_keys(&mut Federation::new(&d, cfg.clone(), 11).unwrap());
    let seq = log_keys(
        &mut Federation::new(
            &d,
            TrainingConfig {
                parallel: false,
                ..cfg.clone()
            },
            11,
        )
        .unwrap(),
    );
    assert_eq!(a, b);
    assert_eq!(a, seq);
    let other = log_keys(&mut Federation::new(&d, cfg, 12).unwrap());
    assert_ne!(a, other);
}

#[test]
fn frozen_run_stops_after_patience_stale_rounds() {
    let d = data(2, 7);
    for patience in [1, 2, 5] {
        let cfg = TrainingConfig {
            rounds: 50,
            patience,
            frozen: true,
            ..fede_cfg()
        };
        let mut fed = Federation::new(&d, cfg, 7).unwrap();
        let initial = fed.server.clone();
        let out = fed.train_until_stop(|_| {}).unwrap();
        assert_eq!(out.rounds_run, patience + 1);
        assert!(out.stopped_early);
        assert_eq!(out.best_round, Some(1));
        assert_eq!(fed.server.entity, initial.entity);
        let test_rows: Vec<_> = out.log.iter().filter(|r| r.split == "test").collect();
        assert_eq!(test_rows.len(), fed.clients.len() + 1);
        assert!(test_rows.iter().all(|r| r.round == 1));
    }
}

#[test]
fn short_run_ends_at_the_round_budget() {
    let cfg = TrainingConfig {
        rounds: 2,
        ..fede_cfg()
    };
    let mut fed = Federation::new(&data(2, 8), cfg, 8).unwrap();
    let out = fed.train_until_stop(|_| {}).unwrap();
    assert_eq!(out.rounds_run, 2);
    assert!(!out.stopped_early);
    let valid_rounds: Vec<_> = out.log.iter().filter(|r| r.split == "valid" && r.client == "aggregate").map(|r| r.round).collect();
    assert_eq!(valid_rounds, vec![1, 2]);
}

#[test]
fn warm_start_touches_only_structure_and_relations() {
    let d = data(2, 9);
    let cfg = small_cfg(ObjectiveKind::FedE, ImputerKind::Cra);
    let mut fed = Federation::new(&d, cfg, 9).unwrap();
    let before: Vec<Vec<Matrix>> = fed.clients.iter().map(|c| c.param_values()).collect();
    let server_before = fed.server.clone();

    fed.warmstart_structural(0).unwrap();
    let same: Vec<Vec<Matrix>> = fed.clients.iter().map(|c| c.param_values()).collect();
    assert_eq!(same, before);
    assert_eq!(fed.server, server_before);

    fed.warmstart_structural(2).unwrap();
    assert_ne!(fed.server.entity, server_before.entity);
    assert_eq!(fed.server.visual, server_before.visual);
    assert_eq!(fed.server.textual, server_before.textual);
    for (c, old) in fed.clients.iter().zip(&before) {
        let mut names = Vec::new();
        let entity = c.model.local.entity.value.clone();
        let relation = c.model.relation.value.clone();
        for (now, was) in c.param_values().iter().zip(old) {
            if now != was {
                names.push(if *now == entity {
                    "entity"
                } else if *now == relation {
                    "relation"
                } else {
                    "other"
                });
            }
        }
        assert_eq!(names, vec!["entity", "relation"]);
    }
}

#[test]
fn non_finite_loss_aborts_with_a_diagnostic() {
    let d = data(2, 10);
    let mut fed = Federation::new(&d, fede_cfg(), 10).unwrap();
    for v in fed.server.entity.data_mut().iter_mut() {
        *v = f64::NAN;
    }
    match fed.run_round() {
        Err(ProtoError::NonFinite { round, .. }) => assert_eq!(round, 1),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_reproduces_test_metrics() {
    let d = data(3, 11);
    let cfg = small_cfg(ObjectiveKind::FeD3, ImputerKind::Hide);
    let mut fed = Federation::new(&d, cfg.clone(), 13).unwrap();
    let out = fed.train_until_stop(|_| {}).unwrap();
    let rows = fed.metric_rows(SplitKind::Test, fed.server.round, 0.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = CheckpointManifest {
        round: fed.server.round,
        seed: fed.seed(),
        config_hash: "abc".into(),
        metric_log: out.log.clone(),
    };
    save_checkpoint(dir.path(), &fed, &manifest).unwrap();

    let mut fresh = Federation::new(&d, cfg, 13).unwrap();
    let loaded = load_checkpoint(dir.path(), &mut fresh).unwrap();
    assert_eq!(loaded, manifest);
    let again = fresh.metric_rows(SplitKind::Test, fresh.server.round, 0.0).unwrap();
    let keys = |rs: &[fedmkgc::fedproto::MetricRow]| rs.iter().map(|r| r.metrics_key()).collect::<Vec<_>>();
    assert_eq!(keys(&again), keys(&rows));
    assert_eq!(fresh.server, fed.server);

    // A checkpoint from another configuration is rejected.
    let mut other = Federation::new(&d, TrainingConfig { dim: 6, ..small_cfg(ObjectiveKind::FeD3, ImputerKind::Hide) }, 13).unwrap();
    assert!(load_checkpoint(dir.path(), &mut other).is_err());
}

#[test]
fn invalid_configurations_are_rejected() {
    let d = data(2, 12);
    for cfg in [
        TrainingConfig { dim: 7, ..fede_cfg() },
        TrainingConfig { batch_size: 0, ..fede_cfg() },
        TrainingConfig { client_fraction: 0.0, ..fede_cfg() },
        TrainingConfig { gamma: -1.0, ..fede_cfg() },
    ] {
        assert!(matches!(Federation::new(&d, cfg, 1), Err(ProtoError::Config(_))));
    }
}

#[test]
fn client_sampling_trains_a_subset() {
    let cfg = TrainingConfig {
        client_fraction: 0.34,
        ..fede_cfg()
    };
    let mut fed = Federation::new(&data(3, 13), cfg, 14).unwrap();
    let diags = fed.run_round().unwrap();
    assert_eq!(diags.len(), 2);
}
