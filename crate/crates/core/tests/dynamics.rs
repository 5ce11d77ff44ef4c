use hopper_core::control::{pd_torques, retracted_pose};
use hopper_core::model::{Configuration, RobotModel};
use hopper_core::sim::{friction_forces, mass_matrix, mechanical_energy, SimParams, SimState, Simulator};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cfg(rng: &mut ChaCha8Rng) -> Configuration {
    Configuration::new(rng.random_range(-1.0..1.0), rng.random_range(-3.2..3.2), rng.random_range(-3.2..3.2))
}

#[test]
fn mass_matrix_symmetric_positive_definite() {
    let model = RobotModel::default();
    let params = SimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let m = mass_matrix(&model, &params, &random_cfg(&mut rng));
        assert_eq!((m - m.transpose()).amax(), 0.0);
        assert!(m.symmetric_eigenvalues().min() > 0.0);
        assert!(m[(1, 1)] >= params.hip_armature);
    }
}

/// Kinetic energy summed body by body from hand-written link velocities.
fn kinetic_energy_oracle(model: &RobotModel, params: &SimParams, q: [f64; 3], qd: [f64; 3]) -> f64 {
    let (s1, c1) = q[1].sin_cos();
    let (s12, c12) = (q[1] + q[2]).sin_cos();
    let w1 = qd[1];
    let w2 = qd[1] + qd[2];
    let v1 = [qd[0] + model.com1 * s1 * w1, -model.com1 * c1 * w1];
    let v2 = [
        qd[0] + model.l1 * s1 * w1 + model.com2 * s12 * w2,
        -model.l1 * c1 * w1 - model.com2 * c12 * w2,
    ];
    0.5 * model.m_base * qd[0] * qd[0]
        + 0.5 * model.m1 * (v1[0] * v1[0] + v1[1] * v1[1])
        + 0.5 * model.m2 * (v2[0] * v2[0] + v2[1] * v2[1])
        + 0.5 * params.iz1 * w1 * w1
        + 0.5 * params.iz2 * w2 * w2
        + 0.5 * params.hip_armature * qd[1] * qd[1]
        + 0.5 * params.knee_armature * qd[2] * qd[2]
}

#[test]
fn kinetic_energy_matches_per_body_sum() {
    let model = RobotModel {
        l1: 0.13,
        l2: 0.11,
        com1: 0.04,
        com2: 0.07,
        ..RobotModel::default()
    };
    let params = SimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let cfg = random_cfg(&mut rng);
        let qd = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let m = mass_matrix(&model, &params, &cfg);
        let ke = 0.5 * (qd.transpose() * m * qd)[0];
        let oracle = kinetic_energy_oracle(&model, &params, [cfg.x, cfg.q_hip, cfg.q_knee], [qd[0], qd[1], qd[2]]);
        assert!(((ke - oracle) / oracle).abs() < 1e-8, "{ke} vs {oracle}");
    }
}

#[test]
fn friction_is_dissipative() {
    let params = SimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let qd = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0) * 10f64.powi(rng.random_range(-6..1)));
        assert!(qd.dot(&friction_forces(&params, &qd, 1e-3)) >= 0.0);
    }
}

#[test]
fn contact_free_energy_drift_below_one_percent() {
    let model = RobotModel::default();
    let params = SimParams::default().frictionless();
    let sim = Simulator::new(model.clone(), params.clone());
    let mut state = SimState::at_rest(Configuration::new(10.0, 0.4, 0.8));
    state.qd = Vector3::new(0.5, 6.0, -9.0);
    let e0 = sim.energy(&state);
    let mut worst: f64 = 0.0;
    let mut ke_max: f64 = 0.0;
    for _ in 0..1000 {
        state = sim.step(&state, [0.0, 0.0], 1e-3).unwrap();
        assert!(!state.in_contact);
        worst = worst.max((sim.energy(&state) - e0).abs());
        ke_max = ke_max.max(sim.energy(&state) - mechanical_energy(&model, &params, &SimState::at_rest(state.configuration())));
    }
    assert!(worst / e0.abs() < 0.01, "drift {worst} of {e0}");
    // The ground reference inflates e0; the energy actually exchanged is the
    // kinetic energy gained in the fall.
    assert!(worst / ke_max < 0.01, "drift {worst} of kinetic {ke_max}");
}

#[test]
fn locked_base_swing_conserves_energy() {
    let model = RobotModel::default();
    let params = SimParams::default().frictionless();
    let sim = Simulator::new(model, params).with_options(hopper_core::sim::SimOptions {
        base_locked: true,
        ..Default::default()
    });
    let state0 = SimState::at_rest(Configuration::new(1.0, 1.2, 0.3));
    let e0 = sim.energy(&state0);
    let bottom = sim.energy(&SimState::at_rest(Configuration::new(1.0, 0.0, 0.0)));
    let mut state = state0;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        state = sim.step(&state, [0.0, 0.0], 1e-3).unwrap();
        worst = worst.max((sim.energy(&state) - e0).abs());
    }
    assert!(worst / (e0 - bottom) < 0.01, "drift {worst} of swing energy {}", e0 - bottom);
}

fn hold_pose(q: [f64; 2]) -> impl FnMut(&SimState) -> [f64; 2] {
    move |s: &SimState| {
        [
            150.0 * (q[0] - s.q[1]) - 0.5 * s.qd[1],
            80.0 * (q[1] - s.q[2]) - 0.2 * s.qd[2],
        ]
    }
}

#[test]
fn static_rest_carries_body_weight() {
    let model = RobotModel::default();
    let sim = Simulator::new(model.clone(), SimParams::default());
    let pose = retracted_pose(&model, 0.3);
    let x0 = model.standing_height(pose[0], pose[1]);
    let log = sim
        .run_episode(SimState::at_rest(Configuration::new(x0, pose[0], pose[1])), hold_pose(pose), 4.0, 1e-3, 1)
        .unwrap();
    let tail: Vec<f64> = log.rows.iter().filter(|r| r.t >= 3.0).map(|r| r.f_n).collect();
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let weight = (model.m_base + model.m1 + model.m2) * -model.gravity;
    assert!(((mean - weight) / weight).abs() < 0.02, "f_n {mean} vs weight {weight}");
    assert!(log.rows.iter().all(|r| r.f_n >= 0.0 && r.contact == (r.f_n > 0.0)));
}

#[test]
fn rigid_leg_falls_ballistically() {
    let model = RobotModel::default();
    let sim = Simulator::new(model.clone(), SimParams::default().frictionless());
    let x0 = 2.0;
    // Semi-implicit Euler lags the closed form by g t dt / 2, so a fine step.
    let log = sim
        .run_episode(SimState::at_rest(Configuration::new(x0, 0.3, 0.6)), hold_pose([0.3, 0.6]), 0.3, 1e-4, 1)
        .unwrap();
    let last = log.rows.last().unwrap();
    let expected = x0 + 0.5 * model.gravity * last.t * last.t;
    assert!((last.q[0] - expected).abs() < 1e-3, "{} vs {expected}", last.q[0]);
    assert!(log.rows.iter().all(|r| !r.contact));
}

#[test]
fn episodes_are_bitwise_repeatable() {
    let model = RobotModel::default();
    let sim = Simulator::new(model.clone(), SimParams::default());
    let pose = retracted_pose(&model, 0.3);
    let x0 = model.standing_height(pose[0], pose[1]) + 0.05;
    let run = || {
        let mut tick = 0u32;
        let log = sim
            .run_episode(
                SimState::at_rest(Configuration::new(x0, pose[0], pose[1])),
                |s| {
                    tick += 1;
                    let wiggle = [(tick as f64 * 0.05).sin(), (tick as f64 * 0.03).cos()];
                    let hold = pd_torques(pose, [s.q[1], s.q[2]], [s.qd[1], s.qd[2]], 30.0, 0.5);
                    [hold[0] + wiggle[0], hold[1] + 2.0 * wiggle[1]]
                },
                2.0,
                1.0 / 200.0,
                5,
            )
            .unwrap();
        let mut bytes = Vec::new();
        log.write_csv(&mut bytes).unwrap();
        bytes
    };
    assert_eq!(run(), run());
}

#[test]
fn log_has_one_row_per_control_tick() {
    let sim = Simulator::new(RobotModel::default(), SimParams::default());
    for (rate, substeps) in [(200.0, 5), (400.0, 10), (50.0, 1)] {
        let log = sim
            .run_episode(SimState::at_rest(Configuration::new(1.0, 0.0, 0.0)), |_| [0.0, 0.0], 1.0, 1.0 / rate, substeps)
            .unwrap();
        assert_eq!(log.len(), rate as usize + 1);
    }
}
