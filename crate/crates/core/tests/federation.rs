use learn2pfed::datagen::{generate_setting, DataShard, SettingSpec};
use learn2pfed::federation::{
    build_federation, run_experiment, sample_participants, Learn2pFedConfig, MessageCounts, ParticipationPlan,
    RoundMessage,
};
use learn2pfed::unrolled::forward_network;
use learn2pfed::Error;

fn shards(clients: usize, seed: u64) -> Vec<DataShard> {
    generate_setting(&SettingSpec::new(1, clients, seed)).unwrap()
}

fn config(layers: usize, rounds: usize) -> Learn2pFedConfig {
    Learn2pFedConfig {
        layers,
        rounds,
        keep_transcript: true,
        ..Learn2pFedConfig::default()
    }
}

#[test]
fn single_client_message_counts() {
    let data = shards(2, 0);
    let mut fed = build_federation(&data[..1], &config(4, 1), 0).unwrap();
    fed.record_transcript();
    fed.run_round(&ParticipationPlan::full(1), 1, 1).unwrap();
    let counts = fed.transcript().unwrap().counts(1, 1);
    assert_eq!(counts, MessageCounts::expected(1, 4));
    assert_eq!((counts.client_vectors, counts.global_broadcasts), (4, 4));
}

#[test]
fn message_path_matches_direct_forward() {
    let data = shards(5, 3);
    let mut fed = build_federation(&data, &config(6, 1), 3).unwrap();
    fed.train = false;
    let initial = fed.state.clone();
    let active = vec![0, 2, 3];
    let direct = forward_network(&fed.data, &fed.params, &initial, &active, &fed.cfg).unwrap();
    let out = fed
        .run_round(&ParticipationPlan { active, seed: 0 }, 1, 1)
        .unwrap();
    assert_eq!(fed.state, direct.state);
    let want: f64 = direct
        .final_models()
        .iter()
        .map(|(i, v)| fed.data.clients[*i].loss(v).unwrap())
        .sum();
    assert_eq!(out.loss_sum, want);
}

#[test]
fn identical_clients_stay_identical() {
    let base = shards(2, 8).remove(0);
    let copies: Vec<DataShard> = (0..4)
        .map(|i| DataShard {
            client_id: i,
            ..base.clone()
        })
        .collect();
    let mut fed = build_federation(&copies, &config(3, 1), 1).unwrap();
    for i in 1..4 {
        fed.state.v[i] = fed.state.v[0].clone();
    }
    for round in 1..=3 {
        fed.run_round(&ParticipationPlan::full(4), round, 1).unwrap();
    }
    for i in 1..4 {
        assert_eq!(fed.state.v[i], fed.state.v[0]);
        assert_eq!(fed.state.alpha[i], fed.state.alpha[0]);
    }
}

#[test]
fn inactive_clients_are_untouched() {
    let data = shards(6, 2);
    let mut fed = build_federation(&data, &config(3, 1), 2).unwrap();
    fed.record_transcript();
    let before_state = fed.state.clone();
    let before_params = fed.params.clone();
    fed.run_round(&ParticipationPlan { active: vec![1, 4], seed: 0 }, 1, 1)
        .unwrap();
    for i in [0, 2, 3, 5] {
        assert_eq!(fed.state.v[i], before_state.v[i]);
        assert_eq!(fed.state.alpha[i], before_state.alpha[i]);
        for layer in 1..=3 {
            assert_eq!(fed.params.client_layer(layer, i), before_params.client_layer(layer, i));
            assert_eq!(fed.params.server_layer(layer, i), before_params.server_layer(layer, i));
        }
    }
    assert_ne!(fed.params, before_params);
    assert!(fed
        .transcript()
        .unwrap()
        .entries()
        .iter()
        .all(|e| e.message.client().is_none_or(|c| c == 1 || c == 4)));
}

#[test]
fn participation_sampling_examples() {
    assert_eq!(sample_participants(10, 0.5, 1).unwrap().active.len(), 5);
    assert_eq!(sample_participants(10, 0.05, 1).unwrap().active.len(), 1);
    assert_eq!(sample_participants(7, 0.5, 1).unwrap().active.len(), 4);
    assert_eq!(sample_participants(10, 1.0, 1).unwrap().active, (0..10).collect::<Vec<_>>());
    assert_eq!(sample_participants(10, 0.3, 9).unwrap(), sample_participants(10, 0.3, 9).unwrap());
    for bad in [0.0, -0.5, 1.5, f64::NAN] {
        assert!(matches!(sample_participants(10, bad, 0), Err(Error::Config(_))));
    }
}

#[test]
fn participation_is_uniform() {
    let mut hits = [0usize; 10];
    let draws = 10_000;
    for s in 0..draws {
        let plan = sample_participants(10, 0.5, s).unwrap();
        assert!(plan.active.windows(2).all(|w| w[0] < w[1]));
        for i in plan.active {
            hits[i] += 1;
        }
    }
    for h in hits {
        let rate = h as f64 / draws as f64;
        assert!((0.47..=0.53).contains(&rate), "{rate}");
    }
}

#[test]
fn invalid_plans_are_rejected() {
    let data = shards(3, 0);
    let mut fed = build_federation(&data, &config(2, 1), 0).unwrap();
    for active in [vec![], vec![1, 1], vec![2, 1], vec![3]] {
        assert!(fed.run_round(&ParticipationPlan { active, seed: 0 }, 1, 1).is_err());
    }
}

#[test]
fn zero_rounds_records_initial_evaluation() {
    let run = run_experiment(&shards(3, 0), &config(2, 0), 0).unwrap();
    assert_eq!(run.series.len(), 1);
    assert_eq!(run.series[0].round, 0);
    assert!(run.transcript.unwrap().is_empty());
}

#[test]
fn experiment_is_finite_and_reproducible() {
    let mut cfg = config(4, 6);
    cfg.participation = 0.5;
    let data = shards(6, 4);
    let a = run_experiment(&data, &cfg, 4).unwrap();
    let b = run_experiment(&data, &cfg, 4).unwrap();
    assert_eq!(a.series.len(), 7);
    assert!(a.series.iter().all(|m| !m.diverged && m.eval.is_finite()));
    assert!(a.params.is_finite());
    assert_eq!(a.params, b.params);
    let (ta, tb) = (a.transcript.unwrap(), b.transcript.unwrap());
    assert_eq!(ta.dump(), tb.dump());
    for round in 1..=6 {
        for epoch in 1..=2 {
            ta.check_counts(round, epoch, 3, 4).unwrap();
        }
    }
}

#[test]
fn transcript_dump_format() {
    let run = run_experiment(&shards(2, 0), &config(1, 1), 0).unwrap();
    let dump = run.transcript.unwrap().dump();
    let lines: Vec<&str> = dump.lines().collect();
    // per epoch: 2 uploads, 1 broadcast, 2 loss reports, 1 loss sum
    assert_eq!(lines.len(), 12);
    assert!(lines[0].starts_with("round=1 epoch=1 layer=1 kind="));
    assert!(lines[0].contains(" client=0 digest="));
    let last = lines[5];
    assert!(last.contains("layer=- ") && last.contains("client=- "), "{last}");
    let digest = last.rsplit("digest=").next().unwrap();
    assert_eq!(digest.len(), 16);
    assert!(digest.chars().all(|c| c.is_ascii_hexdigit()));
}

#[test]
fn digest_depends_on_payload() {
    let a = RoundMessage::LossSumBroadcast { value: 1.0 };
    let b = RoundMessage::LossSumBroadcast { value: 1.0 + 1e-15 };
    assert_eq!(a.digest(), a.clone().digest());
    assert_ne!(a.digest(), b.digest());
}
