use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{AgentError, Batch, ReplayBuffer, Td3Config, WaveConfig};
use crate::envs::EnvSpec;
use crate::nn::{adam_step, soft_update, AdamState, BoundMlp, Graph, Mlp, MlpSpec, ParameterSet, Tensor, Var};
use crate::sinkhorn::{envelope_gradient, sinkhorn_distance, EmpiricalDistribution, SinkhornConfig};

/// Independent random streams of one agent, all derived from the run seed.
pub(crate) mod stream {
    pub const INIT: u64 = 0;
    pub const REPLAY: u64 = 1;
    pub const EXPLORE: u64 = 2;
    pub const TARGET_NOISE: u64 = 3;
    pub const PROBE: u64 = 4;
}

pub(crate) fn stream_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActionMode {
    /// Uniform over the action box.
    Warmup,
    /// Actor output plus Gaussian noise with this many half ranges of spread.
    Policy { noise_scale: f64 },
}

pub fn select_action<R: Rng + ?Sized>(
    actor: &Mlp,
    spec: &EnvSpec,
    state: &[f64],
    mode: ActionMode,
    rng: &mut R,
) -> Result<Vec<f64>, AgentError> {
    let bounds = spec.action_low.iter().zip(&spec.action_high);
    match mode {
        ActionMode::Warmup => Ok(bounds.map(|(&lo, &hi)| rng.random_range(lo..=hi)).collect()),
        ActionMode::Policy { noise_scale } => {
            if !(noise_scale >= 0.0) {
                return Err(AgentError::Invalid(format!("noise scale must be non-negative, got {noise_scale}")));
            }
            let out = actor.forward(&Tensor::vector(state.to_vec())?)?.into_data();
            if noise_scale == 0.0 {
                return Ok(out);
            }
            Ok(out
                .iter()
                .zip(bounds)
                .map(|(&a, (&lo, &hi))| {
                    let z: f64 = rng.sample(StandardNormal);
                    (a + z * noise_scale * 0.5 * (hi - lo)).clamp(lo, hi)
                })
                .collect())
        }
    }
}

/// `y_i = r_i + γ (1 − done_i) min(Q1′, Q2′)(s′_i, ã_i)` with the smoothed
/// target action `ã = clamp(μ′(s′) + clip(σ·z, ±c), low, high)`, noise drawn
/// row by row, then per action component, in half action ranges.
pub fn compute_targets<R: Rng + ?Sized>(
    batch: &Batch,
    target_actor: &Mlp,
    target_critics: [&Mlp; 2],
    cfg: &Td3Config,
    spec: &EnvSpec,
    rng: &mut R,
) -> Result<Vec<f64>, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::Invalid("empty batch".into()));
    }
    let mut next_actions = target_actor.forward(&batch.next_states)?;
    let ad = next_actions.cols();
    if ad != spec.action_dim {
        return Err(AgentError::Invalid(format!("actor emits {ad} actions, env takes {}", spec.action_dim)));
    }
    for row in next_actions.data_mut().chunks_mut(ad) {
        for (j, a) in row.iter_mut().enumerate() {
            let (lo, hi) = (spec.action_low[j], spec.action_high[j]);
            let half = 0.5 * (hi - lo);
            let z: f64 = rng.sample(StandardNormal);
            let clip = cfg.target_noise_clip * half;
            let noise = (z * cfg.target_policy_noise * half).clamp(-clip, clip);
            *a = (*a + noise).clamp(lo, hi);
        }
    }
    let input = super::concat_rows(&batch.next_states, &next_actions);
    let q1 = target_critics[0].forward(&input)?;
    let q2 = target_critics[1].forward(&input)?;
    let y: Vec<f64> = (0..batch.len())
        .map(|i| {
            let not_done = if batch.dones[i] { 0.0 } else { 1.0 };
            batch.rewards[i] + cfg.gamma * not_done * q1.data()[i].min(q2.data()[i])
        })
        .collect();
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(AgentError::NonFinite(format!("TD target {i}")));
    }
    Ok(y)
}

/// Mean squared TD error of each critic against the detached targets `y`,
/// summed over both critics.
pub fn td_loss(g: &mut Graph, critics: [&BoundMlp; 2], input: Var, y: &[f64]) -> Result<Var, AgentError> {
    let target = g.constant(Tensor::new(vec![y.len(), 1], y.to_vec())?)?;
    let mut total = None;
    for critic in critics {
        let q = critic.apply(g, input)?;
        let d = g.sub(q, target)?;
        let sq = g.square(d)?;
        let m = g.mean(sq)?;
        total = Some(match total {
            Some(t) => g.add(t, m)?,
            None => m,
        });
    }
    Ok(total.expect("two critics"))
}

/// Critic-1 values on a probe batch, recorded with the parameters before a
/// critic step.
#[derive(Clone, Debug, PartialEq)]
pub struct QSnapshot {
    pub inputs: Tensor,
    pub values: Vec<f64>,
}

/// The penalty node and what went into it.
#[derive(Clone, Debug)]
pub struct RegTerm {
    /// Scalar node worth `λ·W_ε`, back-propagating `λ·∂W_ε/∂Q̂_k`.
    pub var: Var,
    pub distance: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `∂W_ε/∂Q̂_k` per probe row, before scaling by λ.
    pub gradient: Vec<f64>,
    pub current: Vec<f64>,
}

/// `λ·W_ε(Q̂_k, snapshot)` with `Q̂_k` the live critic on the snapshot's probe
/// inputs. The snapshot side is a constant. A non-converged Sinkhorn run is
/// logged and its last iterate used.
pub fn wave_regularization_term(
    g: &mut Graph,
    critic: &BoundMlp,
    snapshot: &QSnapshot,
    lambda: f64,
    cfg: &SinkhornConfig,
) -> Result<RegTerm, AgentError> {
    let x = g.constant(snapshot.inputs.clone())?;
    let q = critic.apply(g, x)?;
    let current = g.value(q).data().to_vec();
    if current.len() != snapshot.values.len() {
        return Err(AgentError::Invalid(format!(
            "probe batch of {} against a snapshot of {}",
            current.len(),
            snapshot.values.len()
        )));
    }
    let xs = EmpiricalDistribution::new(current.clone())?;
    let ys = EmpiricalDistribution::new(snapshot.values.clone())?;
    let result = sinkhorn_distance(&xs, &ys, cfg)?;
    if !result.converged {
        log::debug!(
            "sinkhorn stopped at violation {:e} after {} iterations; using the last iterate",
            result.max_violation,
            result.iterations
        );
    }
    let gradient = envelope_gradient(&result.plan, &xs, &ys)?;
    let scaled: Vec<f64> = gradient.iter().map(|v| lambda * v).collect();
    let var = g.injected(q, lambda * result.distance, scaled)?;
    Ok(RegTerm {
        var,
        distance: result.distance,
        converged: result.converged,
        iterations: result.iterations,
        gradient,
        current,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticMetrics {
    pub td_loss: f64,
    /// `W_ε(Q̂_k, Q̂_{k−1})`; `None` without regularizer or snapshot.
    pub w_term: Option<f64>,
    pub lambda: f64,
    /// Euclidean norm of the loss gradient over both critics.
    pub grad_norm: f64,
    /// Euclidean norm of the parameter change over both critics.
    pub update_norm: f64,
    pub sinkhorn_converged: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorMetrics {
    /// `−mean Q1(s, μ(s))`.
    pub actor_loss: f64,
}

/// Networks, targets, optimizers and random streams of one learner.
#[derive(Clone, Debug)]
pub struct Agent {
    pub env_spec: EnvSpec,
    pub td3: Td3Config,
    pub wave: Option<WaveConfig>,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critics: [Mlp; 2],
    pub critic_targets: [Mlp; 2],
    actor_opt: AdamState,
    critic_opt: [AdamState; 2],
    snapshot: Option<QSnapshot>,
    critic_updates: u64,
    explore_rng: ChaCha8Rng,
    target_rng: ChaCha8Rng,
    probe_rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(env_spec: &EnvSpec, td3: Td3Config, wave: Option<WaveConfig>, seed: u64) -> Result<Self, AgentError> {
        td3.validate()?;
        if let Some(w) = &wave {
            w.validate()?;
        }
        let mut init = stream_rng(seed, stream::INIT);
        let (od, ad) = (env_spec.observation_dim, env_spec.action_dim);
        let actor_spec = MlpSpec::actor(od, env_spec.action_low.clone(), env_spec.action_high.clone())
            .with_hidden(td3.hidden_dims.clone());
        let critic_spec = MlpSpec::critic(od + ad).with_hidden(td3.hidden_dims.clone());
        let actor = Mlp::new(actor_spec, &mut init)?;
        let critics = [Mlp::new(critic_spec.clone(), &mut init)?, Mlp::new(critic_spec, &mut init)?];
        Ok(Self {
            env_spec: env_spec.clone(),
            actor_opt: AdamState::new(&actor.params, td3.actor_lr),
            critic_opt: [
                AdamState::new(&critics[0].params, td3.critic_lr),
                AdamState::new(&critics[1].params, td3.critic_lr),
            ],
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            td3,
            wave,
            snapshot: None,
            critic_updates: 0,
            explore_rng: stream_rng(seed, stream::EXPLORE),
            target_rng: stream_rng(seed, stream::TARGET_NOISE),
            probe_rng: stream_rng(seed, stream::PROBE),
        })
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn snapshot(&self) -> Option<&QSnapshot> {
        self.snapshot.as_ref()
    }

    /// Acting with the agent's own exploration stream.
    pub fn act(&mut self, state: &[f64], warmup: bool) -> Result<Vec<f64>, AgentError> {
        let mode = if warmup {
            ActionMode::Warmup
        } else {
            ActionMode::Policy {
                noise_scale: self.td3.exploration_noise,
            }
        };
        select_action(&self.actor, &self.env_spec, state, mode, &mut self.explore_rng)
    }

    /// One Adam step on `L_TD + λ·W_ε` for both critics. With a regularizer
    /// configured, a fresh probe batch is drawn from `pool` and critic-1's
    /// pre-step values on it become the snapshot for the next update.
    pub fn critic_update(&mut self, batch: &Batch, pool: &ReplayBuffer, lambda: f64) -> Result<CriticMetrics, AgentError> {
        let y = compute_targets(
            batch,
            &self.actor_target,
            [&self.critic_targets[0], &self.critic_targets[1]],
            &self.td3,
            &self.env_spec,
            &mut self.target_rng,
        )?;
        let mut g = Graph::new();
        let c1 = self.critics[0].bind(&mut g, Some("q1."))?;
        let c2 = self.critics[1].bind(&mut g, Some("q2."))?;
        let input = g.constant(batch.state_actions())?;
        let td = td_loss(&mut g, [&c1, &c2], input, &y)?;
        let td_value = g.value(td).data()[0];

        let mut loss = td;
        let mut w_term = None;
        let mut converged = None;
        if let (Some(wave), Some(snap)) = (&self.wave, &self.snapshot) {
            let reg = wave_regularization_term(&mut g, &c1, snap, lambda, &wave.sinkhorn)?;
            loss = g.add(td, reg.var)?;
            w_term = Some(reg.distance);
            converged = Some(reg.converged);
        }
        let loss_value = g.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(AgentError::NonFinite(format!(
                "critic loss at update {} (td {td_value}, w {w_term:?}, λ {lambda})",
                self.critic_updates
            )));
        }
        let grads = g.backward(loss)?;
        let grad_norm = grads.l2_norm();

        let next_snapshot = match &self.wave {
            Some(wave) => {
                let probe = pool.sample_with(wave.probe_size, &mut self.probe_rng)?;
                let inputs = probe.state_actions();
                let values = self.critics[0].forward(&inputs)?.into_data();
                Some(QSnapshot { inputs, values })
            }
            None => None,
        };

        let mut sq = 0.0;
        for (k, prefix) in ["q1.", "q2."].into_iter().enumerate() {
            let before = self.critics[k].params.clone();
            adam_step(&mut self.critics[k].params, &grads.strip_prefix(prefix), &mut self.critic_opt[k])?;
            sq += squared_distance(&before, &self.critics[k].params);
        }
        if next_snapshot.is_some() {
            self.snapshot = next_snapshot;
        }
        self.critic_updates += 1;
        Ok(CriticMetrics {
            td_loss: td_value,
            w_term,
            lambda,
            grad_norm,
            update_norm: sq.sqrt(),
            sinkhorn_converged: converged,
        })
    }

    /// One Adam ascent step on `mean Q1(s, μ(s))`, then soft target updates.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<ActorMetrics, AgentError> {
        let mut g = Graph::new();
        let actor = self.actor.bind(&mut g, Some("pi."))?;
        let critic = self.critics[0].bind(&mut g, None)?;
        let states = g.constant(batch.states.clone())?;
        let actions = actor.apply(&mut g, states)?;
        let sa = g.concat_cols(states, actions)?;
        let q = critic.apply(&mut g, sa)?;
        let m = g.mean(q)?;
        let loss = g.scale(m, -1.0)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(AgentError::NonFinite("actor loss".into()));
        }
        let grads = g.backward(loss)?.strip_prefix("pi.");
        adam_step(&mut self.actor.params, &grads, &mut self.actor_opt)?;
        let tau = self.td3.tau;
        soft_update(&mut self.actor_target.params, &self.actor.params, tau)?;
        for k in 0..2 {
            soft_update(&mut self.critic_targets[k].params, &self.critics[k].params, tau)?;
        }
        Ok(ActorMetrics { actor_loss: value })
    }

    /// Whether the update just made should be followed by an actor update.
    pub fn actor_due(&self) -> bool {
        self.critic_updates > 0 && self.critic_updates % self.td3.policy_delay as u64 == 0
    }

    /// All trainable parameters, in a fixed order, for trajectory comparisons.
    pub fn parameter_fingerprint(&self) -> Vec<u64> {
        let sets: [&ParameterSet; 6] = [
            &self.actor.params,
            &self.critics[0].params,
            &self.critics[1].params,
            &self.actor_target.params,
            &self.critic_targets[0].params,
            &self.critic_targets[1].params,
        ];
        sets.iter().flat_map(|p| p.flatten()).map(f64::to_bits).collect()
    }
}

fn squared_distance(a: &ParameterSet, b: &ParameterSet) -> f64 {
    a.iter()
        .zip(b.iter())
        .flat_map(|((_, x), (_, y))| x.data().iter().zip(y.data()).map(|(p, q)| (p - q) * (p - q)))
        .sum()
}
