//! Deterministic continuous-control tasks: pendulum swing-up, a
//! continuous-torque acrobot, and a point mass navigating to a goal.
//!
//! Every environment is a plain value. [`Env::reset`] maps a seed to an
//! initial [`EnvState`] and [`Env::step`] is a pure function of the state and
//! action, so a seed plus an action sequence fixes the trajectory.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown environment '{0}' (expected pendulum, acrobot or nav2d)")]
    UnknownEnv(String),
    #[error("action has {got} components, expected {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("non-finite action component {0}")]
    NonFiniteAction(usize),
    #[error("state does not belong to environment {0}")]
    WrongState(&'static str),
    #[error("episodes must be at least 1")]
    NoEpisodes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvKind {
    Pendulum,
    Acrobot,
    Nav2d,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::Pendulum, EnvKind::Acrobot, EnvKind::Nav2d];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::Acrobot => "acrobot",
            EnvKind::Nav2d => "nav2d",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "acrobot" => Ok(EnvKind::Acrobot),
            "nav2d" => Ok(EnvKind::Nav2d),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub observation_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
}

impl EnvSpec {
    pub fn action_range(&self) -> Vec<f64> {
        self.action_low.iter().zip(&self.action_high).map(|(l, h)| h - l).collect()
    }
}

/// Physical state. Angles are kept in `[−π, π)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Physics {
    Pendulum { theta: f64, theta_dot: f64 },
    Acrobot { theta1: f64, theta2: f64, dtheta1: f64, dtheta2: f64 },
    Nav2d { x: f64, y: f64, vx: f64, vy: f64, goal_x: f64, goal_y: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub physics: Physics,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: EnvState,
    pub reward: f64,
    /// The task itself ended (goal reached).
    pub done: bool,
    /// The horizon ran out.
    pub truncated: bool,
    /// Some action component was outside the bounds and got clamped.
    pub clamped: bool,
}

impl StepResult {
    pub fn next_observation(&self) -> &[f64] {
        &self.state.observation
    }

    pub fn episode_over(&self) -> bool {
        self.done || self.truncated
    }
}

/// Maps an angle into `[−π, π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI);
    // rem_euclid can round up to exactly 2π for inputs just below a multiple.
    if r >= 2.0 * PI {
        -PI
    } else {
        r - PI
    }
}

pub mod pendulum {
    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const HORIZON: usize = 200;
}

pub mod acrobot {
    pub const LINK_LENGTH: f64 = 1.0;
    pub const LINK_MASS: f64 = 1.0;
    /// Position of each link's center of mass along the link.
    pub const LINK_COM: f64 = 0.5;
    pub const LINK_MOI: f64 = 1.0;
    pub const GRAVITY: f64 = 9.8;
    pub const DT: f64 = 0.2;
    pub const SUBSTEPS: usize = 4;
    pub const MAX_VEL_1: f64 = 4.0 * std::f64::consts::PI;
    pub const MAX_VEL_2: f64 = 9.0 * std::f64::consts::PI;
    pub const MAX_TORQUE: f64 = 1.0;
    pub const GOAL_HEIGHT: f64 = 1.0;
    pub const HORIZON: usize = 500;
}

pub mod nav2d {
    pub const ARENA: f64 = 10.0;
    pub const DT: f64 = 0.1;
    pub const MAX_SPEED: f64 = 2.0;
    pub const MAX_ACCEL: f64 = 1.0;
    pub const GOAL_RADIUS: f64 = 0.3;
    pub const GOAL_BONUS: f64 = 10.0;
    pub const MIN_START_GAP: f64 = 0.5;
    pub const HORIZON: usize = 300;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Env {
    kind: EnvKind,
    spec: EnvSpec,
}

impl Env {
    pub fn new(kind: EnvKind) -> Self {
        let spec = match kind {
            EnvKind::Pendulum => EnvSpec {
                name: "pendulum",
                observation_dim: 3,
                action_dim: 1,
                action_low: vec![-pendulum::MAX_TORQUE],
                action_high: vec![pendulum::MAX_TORQUE],
                max_episode_steps: pendulum::HORIZON,
            },
            EnvKind::Acrobot => EnvSpec {
                name: "acrobot",
                observation_dim: 6,
                action_dim: 1,
                action_low: vec![-acrobot::MAX_TORQUE],
                action_high: vec![acrobot::MAX_TORQUE],
                max_episode_steps: acrobot::HORIZON,
            },
            EnvKind::Nav2d => EnvSpec {
                name: "nav2d",
                observation_dim: 6,
                action_dim: 2,
                action_low: vec![-nav2d::MAX_ACCEL; 2],
                action_high: vec![nav2d::MAX_ACCEL; 2],
                max_episode_steps: nav2d::HORIZON,
            },
        };
        Self { kind, spec }
    }

    pub fn from_name(name: &str) -> Result<Self, EnvError> {
        Ok(Self::new(name.parse()?))
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn reset(&self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let physics = match self.kind {
            EnvKind::Pendulum => Physics::Pendulum {
                theta: normalize_angle(rng.random_range(-PI..PI)),
                theta_dot: rng.random_range(-1.0..=1.0),
            },
            EnvKind::Acrobot => Physics::Acrobot {
                theta1: rng.random_range(-0.1..=0.1),
                theta2: rng.random_range(-0.1..=0.1),
                dtheta1: rng.random_range(-0.1..=0.1),
                dtheta2: rng.random_range(-0.1..=0.1),
            },
            EnvKind::Nav2d => loop {
                let p: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..=nav2d::ARENA));
                if (p[0] - p[2]).hypot(p[1] - p[3]) >= nav2d::MIN_START_GAP {
                    break Physics::Nav2d {
                        x: p[0],
                        y: p[1],
                        vx: 0.0,
                        vy: 0.0,
                        goal_x: p[2],
                        goal_y: p[3],
                    };
                }
            },
        };
        EnvState {
            observation: observe(&physics),
            physics,
            step: 0,
        }
    }

    /// Advances one step. Out-of-bound actions are clamped (and reported in
    /// the result), non-finite ones are an error.
    pub fn step(&self, state: &EnvState, action: &[f64]) -> Result<StepResult, EnvError> {
        if action.len() != self.spec.action_dim {
            return Err(EnvError::ActionDim {
                expected: self.spec.action_dim,
                got: action.len(),
            });
        }
        if let Some(i) = action.iter().position(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction(i));
        }
        let mut clamped = false;
        let u: Vec<f64> = action
            .iter()
            .zip(self.spec.action_low.iter().zip(&self.spec.action_high))
            .map(|(&a, (&lo, &hi))| {
                let c = a.clamp(lo, hi);
                clamped |= c != a;
                c
            })
            .collect();
        if clamped {
            log::debug!("{}: action {action:?} clamped to {u:?}", self.spec.name);
        }
        let (physics, reward, done) = match (self.kind, state.physics) {
            (EnvKind::Pendulum, Physics::Pendulum { theta, theta_dot }) => step_pendulum(theta, theta_dot, u[0]),
            (EnvKind::Acrobot, Physics::Acrobot { theta1, theta2, dtheta1, dtheta2 }) => {
                step_acrobot([theta1, theta2, dtheta1, dtheta2], u[0])
            }
            (EnvKind::Nav2d, Physics::Nav2d { x, y, vx, vy, goal_x, goal_y }) => {
                step_nav2d([x, y, vx, vy], [goal_x, goal_y], [u[0], u[1]])
            }
            _ => return Err(EnvError::WrongState(self.spec.name)),
        };
        let step = state.step + 1;
        Ok(StepResult {
            state: EnvState {
                observation: observe(&physics),
                physics,
                step,
            },
            reward,
            done,
            truncated: !done && step >= self.spec.max_episode_steps,
            clamped,
        })
    }
}

fn observe(p: &Physics) -> Vec<f64> {
    match *p {
        Physics::Pendulum { theta, theta_dot } => vec![theta.cos(), theta.sin(), theta_dot],
        Physics::Acrobot { theta1, theta2, dtheta1, dtheta2 } => {
            vec![theta1.cos(), theta1.sin(), theta2.cos(), theta2.sin(), dtheta1, dtheta2]
        }
        Physics::Nav2d { x, y, vx, vy, goal_x, goal_y } => vec![x, y, vx, vy, goal_x - x, goal_y - y],
    }
}

/// `θ = 0` is upright. The cost is charged on the pre-step state.
fn step_pendulum(theta: f64, theta_dot: f64, u: f64) -> (Physics, f64, bool) {
    use pendulum::*;
    let reward = -(theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
    let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
    let theta_dot = (theta_dot + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
    let theta = normalize_angle(theta + theta_dot * DT);
    (Physics::Pendulum { theta, theta_dot }, reward, false)
}

/// Angular accelerations of the two-link arm, `θ = 0` hanging down.
pub fn acrobot_accelerations(s: [f64; 4], torque: f64) -> (f64, f64) {
    use acrobot::*;
    let [theta1, theta2, dtheta1, dtheta2] = s;
    let (m1, m2, l1, lc1, lc2, i1, i2, g) = (
        LINK_MASS, LINK_MASS, LINK_LENGTH, LINK_COM, LINK_COM, LINK_MOI, LINK_MOI, GRAVITY,
    );
    let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
    let phi2 = m2 * lc2 * g * (theta1 + theta2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
        - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
        + (m1 * lc1 + m2 * l1) * g * (theta1 - PI / 2.0).cos()
        + phi2;
    let ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    (ddtheta1, ddtheta2)
}

/// Height of the arm tip above the pivot, in link lengths.
pub fn acrobot_tip_height(theta1: f64, theta2: f64) -> f64 {
    -theta1.cos() - (theta1 + theta2).cos()
}

fn step_acrobot(mut s: [f64; 4], torque: f64) -> (Physics, f64, bool) {
    use acrobot::*;
    let h = DT / SUBSTEPS as f64;
    for _ in 0..SUBSTEPS {
        let (a1, a2) = acrobot_accelerations(s, torque);
        s[2] = (s[2] + h * a1).clamp(-MAX_VEL_1, MAX_VEL_1);
        s[3] = (s[3] + h * a2).clamp(-MAX_VEL_2, MAX_VEL_2);
        s[0] += h * s[2];
        s[1] += h * s[3];
    }
    let theta1 = normalize_angle(s[0]);
    let theta2 = normalize_angle(s[1]);
    let done = acrobot_tip_height(theta1, theta2) > GOAL_HEIGHT;
    let physics = Physics::Acrobot {
        theta1,
        theta2,
        dtheta1: s[2],
        dtheta2: s[3],
    };
    (physics, if done { 0.0 } else { -1.0 }, done)
}

fn step_nav2d(s: [f64; 4], goal: [f64; 2], a: [f64; 2]) -> (Physics, f64, bool) {
    use nav2d::*;
    let [mut x, mut y, mut vx, mut vy] = s;
    vx = (vx + a[0] * DT).clamp(-MAX_SPEED, MAX_SPEED);
    vy = (vy + a[1] * DT).clamp(-MAX_SPEED, MAX_SPEED);
    x += vx * DT;
    y += vy * DT;
    // Walls stop motion into them.
    if !(0.0..=ARENA).contains(&x) {
        x = x.clamp(0.0, ARENA);
        vx = 0.0;
    }
    if !(0.0..=ARENA).contains(&y) {
        y = y.clamp(0.0, ARENA);
        vy = 0.0;
    }
    let dist = (goal[0] - x).hypot(goal[1] - y);
    let done = dist <= GOAL_RADIUS;
    let mut reward = -0.1 * dist - 0.01 * (a[0] * a[0] + a[1] * a[1]);
    if done {
        reward += GOAL_BONUS;
    }
    let physics = Physics::Nav2d {
        x,
        y,
        vx,
        vy,
        goal_x: goal[0],
        goal_y: goal[1],
    };
    (physics, reward, done)
}

/// Seed of the `episode`-th reset in a run seeded by `seed`.
pub fn episode_seed(seed: u64, episode: u64) -> u64 {
    // SplitMix64 finalizer over the pair keeps neighbouring seeds unrelated.
    let mut z = seed ^ episode.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean undiscounted return of uniformly random actions.
pub fn random_policy_baseline(env: &Env, episodes: usize, seed: u64) -> Result<f64, EnvError> {
    if episodes == 0 {
        return Err(EnvError::NoEpisodes);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = env.spec();
    let mut total = 0.0;
    for ep in 0..episodes {
        let mut state = env.reset(episode_seed(seed, ep as u64));
        loop {
            let action: Vec<f64> = spec
                .action_low
                .iter()
                .zip(&spec.action_high)
                .map(|(&lo, &hi)| rng.random_range(lo..=hi))
                .collect();
            let r = env.step(&state, &action)?;
            total += r.reward;
            if r.episode_over() {
                break;
            }
            state = r.state;
        }
    }
    Ok(total / episodes as f64)
}

/// One row of a trajectory dump.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// CSV with columns `step, obs0.., act0.., reward, done`.
pub fn write_trajectory_csv<W: Write>(spec: &EnvSpec, rows: &[TrajectoryRow], mut w: W) -> std::io::Result<()> {
    let mut header = vec!["step".to_string()];
    header.extend((0..spec.observation_dim).map(|i| format!("obs{i}")));
    header.extend((0..spec.action_dim).map(|i| format!("act{i}")));
    header.push("reward".into());
    header.push("done".into());
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let mut fields = vec![r.step.to_string()];
        fields.extend(r.observation.iter().map(|v| v.to_string()));
        fields.extend(r.action.iter().map(|v| v.to_string()));
        fields.push(r.reward.to_string());
        fields.push(u8::from(r.done).to_string());
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}
