use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wave_core::envs::*;
use wave_oracles::two_link_accelerations;

/// Mean random-policy return on nav2d over 100 episodes with seed 0, pinned
/// from the first verified run.
const NAV2D_RANDOM_BASELINE: f64 = -183.0955986962174;

fn random_action(env: &Env, rng: &mut ChaCha8Rng, slack: f64) -> Vec<f64> {
    let s = env.spec();
    s.action_low
        .iter()
        .zip(&s.action_high)
        .map(|(&l, &h)| rng.random_range(l - slack..=h + slack))
        .collect()
}

fn rollout(env: &Env, seed: u64, actions: &[Vec<f64>]) -> Vec<(EnvState, f64, bool, bool)> {
    let mut s = env.reset(seed);
    let mut out = Vec::new();
    for a in actions {
        let r = env.step(&s, a).unwrap();
        out.push((r.state.clone(), r.reward, r.done, r.truncated));
        if r.episode_over() {
            break;
        }
        s = r.state;
    }
    out
}

#[test]
fn reset_is_deterministic_and_starts_at_zero() {
    for kind in EnvKind::ALL {
        let env = Env::new(kind);
        for seed in [0, 1, 42, u64::MAX] {
            let (a, b) = (env.reset(seed), env.reset(seed));
            assert_eq!(a, b);
            assert_eq!(a.step, 0);
            assert_eq!(a.observation.len(), env.spec().observation_dim);
        }
        assert_ne!(env.reset(1), env.reset(2));
    }
}

#[test]
fn pendulum_reset_ranges() {
    let env = Env::new(EnvKind::Pendulum);
    for seed in 0..1000 {
        let Physics::Pendulum { theta, theta_dot } = env.reset(seed).physics else { panic!() };
        assert!((-PI..PI).contains(&theta));
        assert!((-1.0..=1.0).contains(&theta_dot));
    }
}

#[test]
fn nav2d_start_and_goal_are_apart() {
    let env = Env::new(EnvKind::Nav2d);
    for seed in 0..1000 {
        let s = env.reset(seed);
        let Physics::Nav2d { x, y, goal_x, goal_y, vx, vy } = s.physics else { panic!() };
        assert!((goal_x - x).hypot(goal_y - y) >= 0.5);
        assert_eq!((vx, vy), (0.0, 0.0));
        assert_eq!(&s.observation[4..], &[goal_x - x, goal_y - y]);
    }
}

#[test]
fn pendulum_upright_rest_is_an_equilibrium() {
    let env = Env::new(EnvKind::Pendulum);
    let mut s = EnvState {
        observation: vec![1.0, 0.0, 0.0],
        physics: Physics::Pendulum { theta: 0.0, theta_dot: 0.0 },
        step: 0,
    };
    for _ in 0..50 {
        let r = env.step(&s, &[0.0]).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.state.physics, Physics::Pendulum { theta: 0.0, theta_dot: 0.0 });
        s = r.state;
    }
}

#[test]
fn acrobot_reward_is_step_penalty_until_goal() {
    let env = Env::new(EnvKind::Acrobot);
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for seed in 0..20 {
        let actions: Vec<Vec<f64>> = (0..500).map(|_| random_action(&env, &mut rng, 0.0)).collect();
        for (state, reward, done, _) in rollout(&env, seed, &actions) {
            let Physics::Acrobot { theta1, theta2, .. } = state.physics else { panic!() };
            if done {
                assert_eq!(reward, 0.0);
                assert!(acrobot_tip_height(theta1, theta2) > 1.0);
            } else {
                assert_eq!(reward, -1.0);
            }
        }
    }
    // A state that swings over the threshold in one step ends the episode.
    let s = EnvState {
        observation: vec![0.0; 6],
        physics: Physics::Acrobot { theta1: PI - 0.2, theta2: 0.0, dtheta1: 0.0, dtheta2: 0.0 },
        step: 3,
    };
    let r = env.step(&s, &[0.0]).unwrap();
    assert!(r.done && !r.truncated);
    assert_eq!(r.reward, 0.0);
}

#[test]
fn acrobot_dynamics_match_lagrangian_oracle() {
    use wave_core::envs::acrobot::*;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let link = [LINK_MASS, LINK_MASS, LINK_LENGTH, LINK_COM, LINK_COM, LINK_MOI, LINK_MOI];
    for _ in 0..1000 {
        let q = [
            rng.random_range(-PI..PI),
            rng.random_range(-PI..PI),
            rng.random_range(-MAX_VEL_1..MAX_VEL_1),
            rng.random_range(-MAX_VEL_2..MAX_VEL_2),
        ];
        let tau = rng.random_range(-1.0..1.0);
        let (a1, a2) = acrobot_accelerations(q, tau);
        let (o1, o2) = two_link_accelerations(q, tau, link, GRAVITY);
        assert!((a1 - o1).abs() <= 1e-10 * (1.0 + o1.abs()), "{a1} vs {o1}");
        assert!((a2 - o2).abs() <= 1e-10 * (1.0 + o2.abs()), "{a2} vs {o2}");
    }
}

#[test]
fn nav2d_goal_step_pays_bonus() {
    let env = Env::new(EnvKind::Nav2d);
    let s = EnvState {
        observation: vec![4.0, 6.0, 0.0, 0.0, 0.0, 0.0],
        physics: Physics::Nav2d { x: 4.0, y: 6.0, vx: 0.0, vy: 0.0, goal_x: 4.0, goal_y: 6.0 },
        step: 0,
    };
    let r = env.step(&s, &[0.0, 0.0]).unwrap();
    assert!(r.done && !r.truncated);
    assert_eq!(r.reward, 10.0);
}

#[test]
fn nav2d_walls_clamp() {
    let env = Env::new(EnvKind::Nav2d);
    let mut s = EnvState {
        observation: vec![0.0; 6],
        physics: Physics::Nav2d { x: 0.05, y: 9.95, vx: -2.0, vy: 2.0, goal_x: 5.0, goal_y: 5.0 },
        step: 0,
    };
    for _ in 0..20 {
        s = env.step(&s, &[-1.0, 1.0]).unwrap().state;
        let Physics::Nav2d { x, y, .. } = s.physics else { panic!() };
        assert!((0.0..=10.0).contains(&x) && (0.0..=10.0).contains(&y));
    }
    let Physics::Nav2d { x, y, .. } = s.physics else { panic!() };
    assert_eq!((x, y), (0.0, 10.0));
}

#[test]
fn horizons_truncate_without_terminating() {
    for kind in [EnvKind::Pendulum, EnvKind::Nav2d, EnvKind::Acrobot] {
        let env = Env::new(kind);
        let zero = vec![0.0; env.spec().action_dim];
        let mut s = env.reset(5);
        let mut steps = 0;
        loop {
            let r = env.step(&s, &zero).unwrap();
            steps += 1;
            if r.episode_over() {
                if r.truncated {
                    assert!(!r.done);
                    assert_eq!(steps, env.spec().max_episode_steps);
                }
                break;
            }
            s = r.state;
        }
        assert!(steps <= env.spec().max_episode_steps);
    }
}

#[test]
fn trajectories_are_bit_identical_per_seed_and_actions() {
    for kind in EnvKind::ALL {
        let env = Env::new(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let actions: Vec<Vec<f64>> = (0..300).map(|_| random_action(&env, &mut rng, 0.5)).collect();
        let bits = |t: Vec<(EnvState, f64, bool, bool)>| -> Vec<u64> {
            t.iter()
                .flat_map(|(s, r, d, tr)| {
                    s.observation.iter().map(|v| v.to_bits()).chain([r.to_bits(), *d as u64, *tr as u64])
                })
                .collect()
        };
        assert_eq!(bits(rollout(&env, 9, &actions)), bits(rollout(&env, 9, &actions)));
    }
}

/// Semi-implicit Euler shows an `O(ω·dt)` energy oscillation (about 8% of the
/// potential span at dt = 0.05) but no secular drift. The guard measures the
/// energy with the velocity synchronized to the position, `v_n = (v_{n−½} +
/// v_{n+½})/2`, as for leapfrog, relative to the potential span `2·(3g/2l)`.
#[test]
fn pendulum_energy_does_not_drift() {
    use wave_core::envs::pendulum::*;
    let env = Env::new(EnvKind::Pendulum);
    let k = 3.0 * GRAVITY / (2.0 * LENGTH);
    for seed in 0..1000 {
        let mut s = env.reset(seed);
        let mut traj = Vec::new();
        for _ in 0..=200 {
            let Physics::Pendulum { theta, theta_dot } = s.physics else { panic!() };
            traj.push((theta, theta_dot));
            s = env.step(&s, &[0.0]).unwrap().state;
        }
        let energy: Vec<f64> = (1..200)
            .map(|n| {
                let v = 0.5 * (traj[n].1 + traj[n + 1].1);
                0.5 * v * v + k * traj[n].0.cos()
            })
            .collect();
        let drift = energy.iter().map(|e| (e - energy[0]).abs()).fold(0.0, f64::max);
        assert!(drift <= 0.01 * 2.0 * k, "seed {seed}: {drift}");
    }
}

#[test]
fn angles_stay_normalized_and_rewards_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let pend_floor = -(PI * PI + 0.1 * 64.0 + 0.001 * 4.0);
    let diag = 10.0 * 2f64.sqrt();
    for kind in EnvKind::ALL {
        let env = Env::new(kind);
        for seed in 0..30 {
            let mut s = env.reset(seed);
            loop {
                let a = random_action(&env, &mut rng, 1.0);
                let r = env.step(&s, &a).unwrap();
                assert!(r.reward.is_finite());
                match r.state.physics {
                    Physics::Pendulum { theta, theta_dot } => {
                        assert!((-PI..PI).contains(&theta) && theta_dot.abs() <= 8.0);
                        assert!(r.reward <= 0.0 && r.reward >= pend_floor);
                    }
                    Physics::Acrobot { theta1, theta2, .. } => {
                        assert!((-PI..PI).contains(&theta1) && (-PI..PI).contains(&theta2));
                        assert!(r.reward == -1.0 || (r.done && r.reward == 0.0));
                    }
                    Physics::Nav2d { .. } => assert!(r.reward >= -0.1 * diag - 0.01 * 2.0),
                }
                if r.episode_over() {
                    break;
                }
                s = r.state;
            }
        }
    }
}

#[test]
fn random_baselines() {
    let p = random_policy_baseline(&Env::new(EnvKind::Pendulum), 100, 0).unwrap();
    assert!(p < 0.0);
    let a = random_policy_baseline(&Env::new(EnvKind::Acrobot), 100, 0).unwrap();
    assert!(a >= -500.0);
    let n = random_policy_baseline(&Env::new(EnvKind::Nav2d), 100, 0).unwrap();
    assert!((n - NAV2D_RANDOM_BASELINE).abs() <= 1e-9, "{n}");
    assert_eq!(n, random_policy_baseline(&Env::new(EnvKind::Nav2d), 100, 0).unwrap());
    assert!(random_policy_baseline(&Env::new(EnvKind::Nav2d), 0, 0).is_err());
}

#[test]
fn trajectory_csv_layout() {
    let env = Env::new(EnvKind::Nav2d);
    let s = env.reset(0);
    let r = env.step(&s, &[0.5, -0.5]).unwrap();
    let rows = vec![TrajectoryRow {
        step: 1,
        observation: r.state.observation.clone(),
        action: vec![0.5, -0.5],
        reward: r.reward,
        done: r.done,
    }];
    let mut buf = Vec::new();
    write_trajectory_csv(env.spec(), &rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "step,obs0,obs1,obs2,obs3,obs4,obs5,act0,act1,reward,done");
    assert_eq!(lines.next().unwrap().split(',').count(), 11);
    assert!(lines.next().is_none());
}
