use std::time::Instant;

use learn2pfed::learner::{
    backward, fd_gradient, gradcheck, objective, BoundaryPolicy, GradCheckInstance, ParamOptimizer,
    DEFAULT_FD_STEP,
};
use learn2pfed::params::{LearnableParams, ParamCoord, ParamKind, ParamLayout, ParamShape};
use learn2pfed::unrolled::{forward_network, DualStep, ForwardConfig, VUpdate};
use learn2pfed::Error;

fn assert_gradcheck(inst: &GradCheckInstance, label: &str) {
    let report = gradcheck(inst, DEFAULT_FD_STEP).unwrap();
    assert!(!report.checked.is_empty());
    let worst = report.worst().unwrap();
    assert!(
        worst.rel_err < 1e-5,
        "{label}: {} analytic {} numeric {} rel {}",
        worst.coord,
        worst.analytic,
        worst.numeric,
        worst.rel_err
    );
}

#[test]
fn exact_gradient_matches_finite_differences_on_50_seeds() {
    for seed in 0..50 {
        let m = 1 + (seed as usize % 3);
        let depth = 1 + (seed as usize / 3) % 3;
        let dim = 2 + (seed as usize % 3);
        let inst = GradCheckInstance::random(seed, m, depth, dim, 20).unwrap();
        assert_gradcheck(&inst, &format!("seed {seed}"));
    }
}

#[test]
fn gradient_modes_and_dual_steps_match_finite_differences() {
    for seed in 0..10 {
        let base = GradCheckInstance::random(100 + seed, 3, 3, 4, 20).unwrap();
        let scaled = base.clone().with_config(ForwardConfig::linear(3).with_dual_step(DualStep::Scaled));
        assert_gradcheck(&scaled, "scaled dual");

        let mut cfg = ForwardConfig::linear(3);
        cfg.v_update = VUpdate::Gradient {
            lr: 0.05,
            steps: 4,
            batch: Some(7),
        };
        cfg.batch_seed = seed;
        assert_gradcheck(&base.clone().with_config(cfg), "gradient v-step");
    }
}

#[test]
fn tied_parameters_accumulate_over_layers() {
    for seed in 0..5 {
        let mut inst = GradCheckInstance::random(200 + seed, 2, 3, 3, 15).unwrap();
        let untied = inst.params.clone();
        let mut tied = LearnableParams::zeros(ParamShape::new(2, 3, 3, true));
        for c in tied.coords() {
            tied.set(c, untied.get(c));
        }
        inst.params = tied;
        assert_gradcheck(&inst, "tied");
    }
}

#[test]
fn dead_rectifier_has_zero_gradient() {
    let mut inst = GradCheckInstance::random(3, 1, 1, 3, 10).unwrap();
    inst.params.lambda_raw = vec![-0.5, 1.0, -2.0];
    let out = forward_network(&inst.data, &inst.params, &inst.initial, &inst.active, &inst.cfg).unwrap();
    let g = backward(&out.tape, &inst.data, inst.params.shape(), BoundaryPolicy::Exact).unwrap();
    assert_eq!(g.lambda_raw[0], 0.0);
    assert_eq!(g.lambda_raw[2], 0.0);
}

#[test]
fn uniform_p_scaling_is_a_null_direction() {
    let inst = GradCheckInstance::random(11, 3, 3, 4, 20).unwrap();
    let out = forward_network(&inst.data, &inst.params, &inst.initial, &inst.active, &inst.cfg).unwrap();
    let g = backward(&out.tape, &inst.data, inst.params.shape(), BoundaryPolicy::Exact).unwrap();
    for slot in 0..3 {
        let directional: f64 = (0..3)
            .map(|i| {
                let c = ParamCoord {
                    kind: ParamKind::P,
                    slot,
                    client: i,
                    j: 0,
                };
                g.get(c) * inst.params.get(c)
            })
            .sum();
        let scale: f64 = (0..3).map(|i| g.p[slot * 3 + i].abs()).sum::<f64>().max(1.0);
        assert!(directional.abs() < 1e-12 * scale, "slot {slot}: {directional}");
    }
}

#[test]
fn single_client_gamma_has_no_influence() {
    let inst = GradCheckInstance::random(5, 1, 2, 3, 10).unwrap();
    let c = ParamCoord {
        kind: ParamKind::Gamma,
        slot: 1,
        client: 0,
        j: 0,
    };
    let fd = fd_gradient(&inst.data, &inst.params, &inst.initial, &inst.active, &inst.cfg, c, 1e-5).unwrap();
    assert!(fd.abs() < 1e-8, "{fd}");
}

#[test]
fn fd_rejects_bad_step() {
    let inst = GradCheckInstance::random(5, 1, 1, 2, 5).unwrap();
    let c = inst.params.coords()[0];
    assert!(fd_gradient(&inst.data, &inst.params, &inst.initial, &inst.active, &inst.cfg, c, 0.0).is_err());
}

#[test]
fn federated_local_equals_exact_for_one_client() {
    let inst = GradCheckInstance::random(21, 1, 3, 4, 20).unwrap();
    let out = forward_network(&inst.data, &inst.params, &inst.initial, &inst.active, &inst.cfg).unwrap();
    let shape = inst.params.shape();
    let exact = backward(&out.tape, &inst.data, shape, BoundaryPolicy::Exact).unwrap();
    let local = backward(&out.tape, &inst.data, shape, BoundaryPolicy::FederatedLocal).unwrap();
    assert_eq!(exact, local);
}

#[test]
fn federated_local_client_gradient_is_own_loss_derivative() {
    let inst = GradCheckInstance::random(22, 3, 3, 4, 20).unwrap();
    let shape = inst.params.shape();
    let out = forward_network(&inst.data, &inst.params, &inst.initial, &inst.active, &inst.cfg).unwrap();
    let local = backward(&out.tape, &inst.data, shape, BoundaryPolicy::FederatedLocal).unwrap();
    let exact = backward(&out.tape, &inst.data, shape, BoundaryPolicy::Exact).unwrap();
    // p and γ still see the whole loss sum.
    assert_eq!(local.p, exact.p);
    assert_eq!(local.gamma, exact.gamma);
    assert_ne!(local.lambda_raw, exact.lambda_raw);

    let own_loss = |params: &LearnableParams, client: usize| {
        let out = forward_network(&inst.data, params, &inst.initial, &inst.active, &inst.cfg).unwrap();
        inst.data.clients[client].loss(&out.state.v[client]).unwrap()
    };
    let h = 1e-5;
    for client in 0..3 {
        for coord in local.party_coords(client, true) {
            let mut probe = inst.params.clone();
            probe.set(coord, inst.params.get(coord) + h);
            let plus = own_loss(&probe, client);
            probe.set(coord, inst.params.get(coord) - h);
            let minus = own_loss(&probe, client);
            let fd = (plus - minus) / (2.0 * h);
            let a = local.get(coord);
            assert!((a - fd).abs() <= 1e-5 * a.abs().max(fd.abs()).max(1e-4), "{coord}: {a} vs {fd}");
        }
    }
}

#[test]
fn small_step_along_gradient_decreases_objective() {
    for seed in 0..5 {
        let inst = GradCheckInstance::random(300 + seed, 3, 3, 4, 20).unwrap();
        let out = forward_network(&inst.data, &inst.params, &inst.initial, &inst.active, &inst.cfg).unwrap();
        let shape = inst.params.shape();
        let g = backward(&out.tape, &inst.data, shape, BoundaryPolicy::Exact).unwrap();
        let mut params = inst.params.clone();
        let mut opt = ParamOptimizer::new("gd", 1e-4, &params).unwrap();
        opt.step_all(&mut params, &g).unwrap();
        let before = objective(&inst.data, &inst.params, &inst.initial, &inst.active, &inst.cfg).unwrap();
        let after = objective(&inst.data, &params, &inst.initial, &inst.active, &inst.cfg).unwrap();
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn tape_mismatch_is_reported() {
    let inst = GradCheckInstance::random(1, 2, 2, 3, 10).unwrap();
    let out = forward_network(&inst.data, &inst.params, &inst.initial, &inst.active, &inst.cfg).unwrap();
    let other = GradCheckInstance::random(1, 2, 2, 4, 10).unwrap();
    assert!(matches!(
        backward(&out.tape, &other.data, inst.params.shape(), BoundaryPolicy::Exact),
        Err(Error::TapeMismatch(_))
    ));
    assert!(matches!(
        backward(&out.tape, &inst.data, ParamShape::new(2, 3, 3, false), BoundaryPolicy::Exact),
        Err(Error::TapeMismatch(_))
    ));
}

#[test]
fn backward_cost_is_roughly_linear_in_depth() {
    let time = |depth: usize| {
        let inst = GradCheckInstance::random(9, 4, depth, 4, 50).unwrap();
        let out = forward_network(&inst.data, &inst.params, &inst.initial, &inst.active, &inst.cfg).unwrap();
        let start = Instant::now();
        for _ in 0..20 {
            backward(&out.tape, &inst.data, inst.params.shape(), BoundaryPolicy::Exact).unwrap();
        }
        start.elapsed().as_secs_f64()
    };
    let (short, long) = (time(20), time(40));
    assert!(long < 2.5 * short + 0.02, "{short} vs {long}");
}
