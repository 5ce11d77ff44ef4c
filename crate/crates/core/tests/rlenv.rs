use std::collections::VecDeque;

use hopper_core::model::RobotModel;
use hopper_core::rlenv::{
    apply_noise, build_observation, sample_delay_indices, Env, EnvConfig, JointSample, Normalization, OBS_DIM,
};
use hopper_core::sim::SimParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn delay_draws_keep_temporal_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut hits = [0usize; 10];
    for _ in 0..10_000 {
        let idx = sample_delay_indices(&mut rng, 10, 3);
        assert_eq!(idx.len(), 3);
        assert!(idx.windows(2).all(|w| w[0] < w[1]), "{idx:?}");
        for i in idx {
            hits[i] += 1;
        }
    }
    // Each slot is drawn with probability 3/10.
    for h in hits {
        assert!((h as f64 - 3000.0).abs() < 200.0, "{hits:?}");
    }
}

#[test]
fn delayed_observation_blocks_are_newest_first() {
    let model = RobotModel::default();
    let norm = Normalization::new(&model, 0.35);
    let buffer: VecDeque<JointSample> = (0..10)
        .map(|i| JointSample {
            q: [0.0, 0.0],
            qd: [i as f64, 0.0],
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut delayed = 0;
    for _ in 0..10_000 {
        let obs = build_observation(&buffer, 10, 0.3, &norm, &mut rng, 0.5);
        let t: Vec<f64> = (0..3).map(|b| (obs[b * 5 + 2] * model.qd_max[0]).round()).collect();
        assert!(t[0] > t[1] && t[1] > t[2], "{t:?}");
        if t != [9.0, 8.0, 7.0] {
            delayed += 1;
        }
    }
    // Delay fires half the time; one in 120 delayed draws is the newest triple.
    assert!((delayed as f64 - 5000.0 * 119.0 / 120.0).abs() < 250.0, "{delayed}");
}

#[test]
fn noise_mean_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (value, lambda, n) = (2.0, 0.15, 100_000);
    let sum: f64 = (0..n).map(|_| apply_noise(value, lambda, &mut rng) - value).sum();
    let mean = sum / n as f64;
    let sigma = lambda * value / 3f64.sqrt() / (n as f64).sqrt();
    assert!(mean.abs() < 3.0 * sigma, "mean {mean}, sigma {sigma}");
    assert_eq!(apply_noise(0.0, 0.5, &mut rng), 0.0);
    assert_eq!(apply_noise(1.25, 0.0, &mut rng), 1.25);
}

fn env() -> Env {
    Env::new(RobotModel::default(), SimParams::default(), EnvConfig::default()).unwrap()
}

#[test]
fn same_seed_same_stream() {
    let run = || {
        let mut e = env();
        let mut out = vec![e.reset(21, None).to_vec()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..300 {
            let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let s = e.step(a).unwrap();
            out.push(s.observation.to_vec());
            out.push(vec![s.reward.total, s.reward.g_e, s.info.base_height]);
        }
        out
    };
    let (a, b) = (run(), run());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn zero_action_from_standing() {
    let mut e = env();
    e.reset(4, Some(0.3));
    let w = EnvConfig::default().weights;
    for _ in 0..400 {
        let s = e.step([0.0, 0.0]).unwrap();
        assert_eq!(s.reward.p_h, 0.0);
        assert_eq!(s.reward.p_j, 0.0);
        assert_eq!(s.reward.p_jv, 0.0);
        // The unpowered leg folds, so g_e only reflects the slump.
        assert!(s.reward.g_e < 1.5, "{:?}", s.reward);
        assert!((s.reward.total - w.energy * s.reward.g_e).abs() <= w.joint_position * 2.0 + 1e-12);
    }
}

#[test]
fn observation_layout_and_range() {
    let mut e = env();
    let config = EnvConfig::default();
    let obs = e.reset(8, Some(0.35));
    assert_eq!(obs.len(), OBS_DIM);
    let model = RobotModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut recent = VecDeque::new();
    let mut checked = 0;
    for _ in 0..500 {
        let s = e.step([rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)]).unwrap();
        for b in 0..3 {
            assert_eq!(s.observation[b * 5 + 4], 1.0);
        }
        let st = e.state();
        let in_range = (0..2).all(|i| {
            (model.q_low[i]..=model.q_high[i]).contains(&st.q[i + 1]) && st.qd[i + 1].abs() <= model.qd_max[i]
        });
        recent.push_back(in_range);
        if recent.len() > config.buffer_len {
            recent.pop_front();
        }
        if recent.len() == config.buffer_len && recent.iter().all(|r| *r) {
            checked += 1;
            let limit = 1.0 + config.lambda_joint;
            assert!(s.observation.iter().all(|v| v.abs() <= limit + 1e-12), "{:?}", s.observation);
        }
    }
    assert!(checked > 20, "{checked}");
}

#[test]
fn observation_ignores_base_height() {
    // Identical joint histories at different carriage heights give the same
    // observation: the buffer only stores joints.
    let model = RobotModel::default();
    let norm = Normalization::new(&model, 0.35);
    let sample = JointSample {
        q: [0.2, 1.0],
        qd: [0.5, -0.5],
    };
    let buffer: VecDeque<JointSample> = std::iter::repeat_n(sample, 10).collect();
    let a = build_observation(&buffer, 10, 0.3, &norm, &mut ChaCha8Rng::seed_from_u64(0), 0.5);
    let b = build_observation(&buffer, 10, 0.3, &norm, &mut ChaCha8Rng::seed_from_u64(99), 0.5);
    assert_eq!(a, b);
}

#[test]
fn command_changes_only_in_evaluation() {
    let mut e = env();
    e.reset(0, None);
    assert!(e.set_desired_height(0.25).is_err());
    let config = EnvConfig {
        evaluation: true,
        ..EnvConfig::default()
    };
    let mut e = Env::new(RobotModel::default(), SimParams::default(), config).unwrap();
    e.reset(0, Some(0.3));
    e.set_desired_height(0.25).unwrap();
    assert_eq!(e.desired_height(), 0.25);
    assert!((e.step([0.0, 0.0]).unwrap().observation[4] - 0.25 / 0.35).abs() < 1e-15);
}
