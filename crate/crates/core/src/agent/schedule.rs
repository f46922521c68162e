use std::collections::VecDeque;

use super::AgentError;

/// Mean of the last `min(m, len)` entries of `history`.
pub fn moving_average_reward(history: &[f64], m: usize) -> f64 {
    let take = m.max(1).min(history.len());
    if take == 0 {
        return 0.0;
    }
    history[history.len() - take..].iter().sum::<f64>() / take as f64
}

/// Adaptive regularization weight driven by the moving-average return:
/// `λ_max` up to the threshold, then exponential decay towards `λ_min`.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSchedule {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub alpha: f64,
    pub r_threshold: f64,
    pub window: usize,
    history: VecDeque<f64>,
    current: f64,
}

impl LambdaSchedule {
    pub const DEFAULT_LAMBDA_MAX: f64 = 2.0;
    pub const DEFAULT_LAMBDA_MIN: f64 = 0.3;
    pub const DEFAULT_ALPHA: f64 = 0.05;
    pub const DEFAULT_WINDOW: usize = 20;

    pub fn new(lambda_max: f64, lambda_min: f64, alpha: f64, r_threshold: f64, window: usize) -> Result<Self, AgentError> {
        if !(lambda_min >= 0.0 && lambda_min <= lambda_max && lambda_max.is_finite()) {
            return Err(AgentError::Invalid(format!(
                "need 0 ≤ lambda_min ≤ lambda_max, got {lambda_min} and {lambda_max}"
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(AgentError::Invalid(format!("alpha must be positive, got {alpha}")));
        }
        if !r_threshold.is_finite() {
            return Err(AgentError::Invalid("r_threshold must be finite".into()));
        }
        if window == 0 {
            return Err(AgentError::Invalid("window must be at least 1".into()));
        }
        Ok(Self {
            lambda_max,
            lambda_min,
            alpha,
            r_threshold,
            window,
            history: VecDeque::with_capacity(window),
            current: lambda_max,
        })
    }

    /// The schedule formula, without touching state.
    pub fn lambda_for(&self, r_bar: f64) -> f64 {
        if r_bar <= self.r_threshold {
            self.lambda_max
        } else {
            let l = self.lambda_min + (self.lambda_max - self.lambda_min) * (-self.alpha * (r_bar - self.r_threshold)).exp();
            l.clamp(self.lambda_min, self.lambda_max)
        }
    }

    /// Evaluates the formula at `r_bar` and makes it the current weight.
    pub fn update_lambda(&mut self, r_bar: f64) -> f64 {
        self.current = self.lambda_for(r_bar);
        self.current
    }

    /// Appends an episode return, then updates λ from the new moving average.
    /// Returns `(R̄, λ)`.
    pub fn record(&mut self, episode_return: f64) -> (f64, f64) {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(episode_return);
        let r_bar = self.moving_average();
        (r_bar, self.update_lambda(r_bar))
    }

    pub fn moving_average(&self) -> f64 {
        let (a, b) = self.history.as_slices();
        if b.is_empty() {
            moving_average_reward(a, self.window)
        } else {
            let all: Vec<f64> = self.history.iter().copied().collect();
            moving_average_reward(&all, self.window)
        }
    }

    pub fn current_lambda(&self) -> f64 {
        self.current
    }

    pub fn history(&self) -> impl Iterator<Item = f64> + '_ {
        self.history.iter().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average_reward(&[3.0; 7], 20), 3.0);
        assert_eq!(moving_average_reward(&[0.0, 10.0], 2), 5.0);
        assert_eq!(moving_average_reward(&[1.0, 2.0, 3.0], 2), 2.5);
    }

    #[test]
    fn record_keeps_window() {
        let mut s = LambdaSchedule::new(2.0, 0.3, 0.05, 0.0, 3).unwrap();
        for r in [1.0, 2.0, 3.0, 4.0] {
            s.record(r);
        }
        assert_eq!(s.history().collect::<Vec<_>>(), vec![2.0, 3.0, 4.0]);
        assert_eq!(s.moving_average(), 3.0);
    }

    #[test]
    fn rejects_bad_constants() {
        assert!(LambdaSchedule::new(0.3, 2.0, 0.05, 0.0, 20).is_err());
        assert!(LambdaSchedule::new(2.0, 0.3, 0.0, 0.0, 20).is_err());
        assert!(LambdaSchedule::new(2.0, 0.3, 0.05, 0.0, 0).is_err());
        assert!(LambdaSchedule::new(0.0, 0.0, 0.05, 0.0, 20).is_ok());
    }
}
