use std::io::Write;
use std::time::Instant;

use super::td3::{stream, stream_rng};
use super::{Agent, AgentError, LambdaSchedule, RThreshold, ReplayBuffer, Td3Config, Transition, WaveConfig};
use crate::envs::{episode_seed, random_policy_baseline, Env, EnvKind};

/// Column order of the per-episode log.
pub const EPISODE_CSV_HEADER: &str = "episode,env_steps,return,moving_avg_return,lambda,mean_td_loss,mean_w_term,mean_critic_grad_norm,mean_actor_loss,wall_ms";

/// Episodes and seed used for the automatic return threshold.
const THRESHOLD_EPISODES: usize = 100;
const THRESHOLD_SEED: u64 = 0;

/// Random-policy mean return plus a quarter of the gap to a per-task bound.
pub fn default_r_threshold(env: &Env) -> Result<f64, AgentError> {
    let bound = match env.kind() {
        EnvKind::Pendulum => -400.0,
        EnvKind::Acrobot => -350.0,
        EnvKind::Nav2d => -150.0,
    };
    let random = random_policy_baseline(env, THRESHOLD_EPISODES, THRESHOLD_SEED)?;
    Ok(random + 0.25 * (bound - random))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub episodes: usize,
    pub seed: u64,
    /// Stop after the first episode whose moving average reaches this.
    pub stop_at_moving_average: Option<f64>,
    /// Stop after the first episode that brings the critic update count here.
    pub stop_after_updates: Option<u64>,
    /// Fill `wall_ms`; off by default so that logs are byte-reproducible.
    pub record_wall_time: bool,
    /// Episodes between info log lines; 0 logs nothing.
    pub log_every: usize,
}

impl TrainOptions {
    pub fn new(episodes: usize, seed: u64) -> Self {
        Self {
            episodes,
            seed,
            stop_at_moving_average: None,
            stop_after_updates: None,
            record_wall_time: false,
            log_every: 0,
        }
    }
}

/// One row of the per-episode log. Means over an episode without updates
/// are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub env_steps: u64,
    pub ret: f64,
    pub moving_avg_return: f64,
    /// λ that weighted the penalty during this episode: λ_max for the first,
    /// then the value set from the previous row's `moving_avg_return`. Zero
    /// for plain TD3.
    pub lambda: f64,
    pub mean_td_loss: Option<f64>,
    pub mean_w_term: Option<f64>,
    pub mean_critic_grad_norm: Option<f64>,
    pub mean_actor_loss: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub log: Vec<EpisodeLog>,
    /// `‖Δθ^Q‖` of every critic update, in order.
    pub update_norms: Vec<f64>,
    pub r_threshold: Option<f64>,
    pub sinkhorn_not_converged: u64,
    pub agent: Agent,
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: u64,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn get(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// The full loop: act, store, one critic update per environment step after
/// warmup, an actor update every `policy_delay` critic updates, and a λ
/// update at each episode end. `wave = None` trains plain TD3.
pub fn train(env: &Env, td3: &Td3Config, wave: Option<&WaveConfig>, opts: &TrainOptions) -> Result<TrainOutput, AgentError> {
    let spec = env.spec().clone();
    let mut agent = Agent::new(&spec, td3.clone(), wave.cloned(), opts.seed)?;
    let mut buffer = ReplayBuffer::new(td3.buffer_capacity, stream_rng(opts.seed, stream::REPLAY))?;

    let r_threshold = match wave.map(|w| w.r_threshold) {
        Some(RThreshold::Fixed(v)) => Some(v),
        Some(RThreshold::Auto) => Some(default_r_threshold(env)?),
        None => None,
    };
    let mut schedule = match (wave, r_threshold) {
        (Some(w), Some(th)) => LambdaSchedule::new(w.lambda_max, w.lambda_min, w.alpha, th, w.window)?,
        // Plain TD3 keeps the moving average but never weights anything.
        _ => LambdaSchedule::new(0.0, 0.0, 1.0, 0.0, super::LambdaSchedule::DEFAULT_WINDOW)?,
    };

    let started = Instant::now();
    let mut log = Vec::with_capacity(opts.episodes);
    let mut update_norms = Vec::new();
    let mut not_converged = 0;
    let mut env_steps: u64 = 0;

    for episode in 0..opts.episodes {
        let lambda = schedule.current_lambda();
        let mut state = env.reset(episode_seed(opts.seed, episode as u64));
        let mut ret = 0.0;
        let (mut td, mut w, mut gn, mut al) = (Mean::default(), Mean::default(), Mean::default(), Mean::default());
        loop {
            let warmup = env_steps < td3.warmup_steps as u64;
            let action = agent.act(&state.observation, warmup)?;
            let step = env.step(&state, &action)?;
            ret += step.reward;
            buffer.push(Transition {
                state: state.observation.clone(),
                action,
                reward: step.reward,
                next_state: step.state.observation.clone(),
                done: step.done,
            })?;
            env_steps += 1;

            if env_steps >= td3.warmup_steps as u64 && buffer.len() >= td3.batch_size {
                let batch = buffer.sample(td3.batch_size)?;
                let m = agent.critic_update(&batch, &buffer, lambda)?;
                td.add(m.td_loss);
                gn.add(m.grad_norm);
                if let Some(v) = m.w_term {
                    w.add(v);
                }
                if m.sinkhorn_converged == Some(false) {
                    not_converged += 1;
                }
                update_norms.push(m.update_norm);
                if agent.actor_due() {
                    al.add(agent.actor_update(&batch)?.actor_loss);
                }
            }
            if step.episode_over() {
                break;
            }
            state = step.state;
        }
        let (r_bar, next_lambda) = schedule.record(ret);
        log.push(EpisodeLog {
            episode: episode + 1,
            env_steps,
            ret,
            moving_avg_return: r_bar,
            lambda,
            mean_td_loss: td.get(),
            mean_w_term: w.get(),
            mean_critic_grad_norm: gn.get(),
            mean_actor_loss: al.get(),
            wall_ms: if opts.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        });
        if opts.log_every > 0 && (episode + 1) % opts.log_every == 0 {
            log::info!(
                "seed {} episode {} return {ret:.2} avg {r_bar:.2} lambda {next_lambda:.4}",
                opts.seed,
                episode + 1
            );
        }
        if opts.stop_at_moving_average.is_some_and(|t| r_bar >= t)
            || opts.stop_after_updates.is_some_and(|u| agent.critic_updates() >= u)
        {
            break;
        }
    }
    if not_converged > 0 {
        log::warn!("seed {}: sinkhorn hit max_iter on {not_converged} updates", opts.seed);
    }
    Ok(TrainOutput {
        log,
        update_norms,
        r_threshold,
        sinkhorn_not_converged: not_converged,
        agent,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the log with [`EPISODE_CSV_HEADER`]; missing means are empty fields.
pub fn write_episode_csv<W: Write>(rows: &[EpisodeLog], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{EPISODE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.episode,
            r.env_steps,
            r.ret,
            r.moving_avg_return,
            r.lambda,
            opt(r.mean_td_loss),
            opt(r.mean_w_term),
            opt(r.mean_critic_grad_norm),
            opt(r.mean_actor_loss),
            r.wall_ms
        )?;
    }
    Ok(())
}
