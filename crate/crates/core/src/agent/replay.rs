use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AgentError;
use crate::nn::Tensor;

/// One environment step. `done` marks termination only; a horizon cut is
/// not terminal and still bootstraps.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// A sampled minibatch laid out for the networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_states: Tensor,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self, AgentError> {
        let first = items.first().ok_or_else(|| AgentError::Invalid("empty batch".into()))?;
        let (sd, ad) = (first.state.len(), first.action.len());
        let mut states = Vec::with_capacity(items.len() * sd);
        let mut actions = Vec::with_capacity(items.len() * ad);
        let mut next = Vec::with_capacity(items.len() * sd);
        for t in items {
            if t.state.len() != sd || t.next_state.len() != sd || t.action.len() != ad {
                return Err(AgentError::Invalid("transitions of mixed dimensions".into()));
            }
            states.extend_from_slice(&t.state);
            actions.extend_from_slice(&t.action);
            next.extend_from_slice(&t.next_state);
        }
        let n = items.len();
        Ok(Self {
            states: Tensor::new(vec![n, sd], states)?,
            actions: Tensor::new(vec![n, ad], actions)?,
            rewards: items.iter().map(|t| t.reward).collect(),
            next_states: Tensor::new(vec![n, sd], next)?,
            dones: items.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Critic input `[state | action]` per row.
    pub fn state_actions(&self) -> Tensor {
        concat_rows(&self.states, &self.actions)
    }
}

/// Row-wise concatenation of two matrices with equal row counts.
pub fn concat_rows(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, ca, cb) = (a.rows(), a.cols(), b.cols());
    assert_eq!(n, b.rows(), "row counts differ");
    let mut data = Vec::with_capacity(n * (ca + cb));
    for i in 0..n {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Tensor::new(vec![n, ca + cb], data).expect("finite inputs stay finite")
}

/// Fixed-capacity ring buffer with uniform sampling with replacement.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 100_000;

    pub fn new(capacity: usize, rng: ChaCha8Rng) -> Result<Self, AgentError> {
        if capacity == 0 {
            return Err(AgentError::Invalid("replay capacity must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            rng,
        })
    }

    pub fn with_seed(capacity: usize, seed: u64) -> Result<Self, AgentError> {
        Self::new(capacity, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn push(&mut self, t: Transition) -> Result<(), AgentError> {
        if !t.reward.is_finite() {
            return Err(AgentError::NonFinite("transition reward".into()));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// `n` indices drawn uniformly with replacement from the buffer's own stream.
    pub fn sample_indices(&mut self, n: usize) -> Result<Vec<usize>, AgentError> {
        Self::draw(&self.items, n, &mut self.rng)
    }

    pub fn sample(&mut self, n: usize) -> Result<Batch, AgentError> {
        let idx = self.sample_indices(n)?;
        self.batch_of(&idx)
    }

    /// Like [`sample`](Self::sample) but drawing from a caller-owned stream.
    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch, AgentError> {
        let idx = Self::draw(&self.items, n, rng)?;
        self.batch_of(&idx)
    }

    fn draw<R: Rng + ?Sized>(items: &[Transition], n: usize, rng: &mut R) -> Result<Vec<usize>, AgentError> {
        if items.is_empty() {
            return Err(AgentError::Invalid("sampling from an empty replay buffer".into()));
        }
        Ok((0..n).map(|_| rng.random_range(0..items.len())).collect())
    }

    fn batch_of(&self, idx: &[usize]) -> Result<Batch, AgentError> {
        let picked: Vec<&Transition> = idx.iter().map(|&i| &self.items[i]).collect();
        Batch::from_transitions(&picked)
    }
}
