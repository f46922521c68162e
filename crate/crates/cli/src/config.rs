//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Every key has a default; an unknown key is an error.

use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;
use wave_core::agent::{LambdaSchedule, RThreshold, Td3Config, WaveConfig};
use wave_core::envs::EnvKind;
use wave_core::sinkhorn::SinkhornConfig;
use wave_core::theory::RateConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: cannot read `{value}` as {expected}")]
    Type { key: String, value: String, expected: &'static str },
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Settings of the theory checks run by `verify-theory`.
#[derive(Clone, Debug, PartialEq)]
pub struct TheorySettings {
    pub gamma: f64,
    pub n_states: usize,
    pub n_actions: usize,
    /// Random MDPs for the standard contraction check; the λ sweep uses the first.
    pub mdps: usize,
    pub trials: usize,
    pub lambdas: Vec<f64>,
    pub rate: RateConfig,
    /// The variance experiment trains networks and takes a long time.
    pub variance: bool,
    pub variance_window: (usize, usize),
}

impl Default for TheorySettings {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            n_states: 4,
            n_actions: 2,
            mdps: 5,
            trials: 1000,
            lambdas: vec![0.0, 0.01, 0.05, 0.1],
            rate: RateConfig::default(),
            variance: false,
            variance_window: (5000, 20000),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub td3: Td3Config,
    /// Without the regularizer a run is plain TD3.
    pub regularizer: bool,
    pub wave: WaveConfig,
    pub output_dir: PathBuf,
    /// Episodes between progress log lines.
    pub log_every: usize,
    pub record_wall_time: bool,
    pub stop_at_moving_average: Option<f64>,
    pub theory: TheorySettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Pendulum,
            episodes: 300,
            seeds: vec![0, 1, 2, 3, 4],
            td3: Td3Config::default(),
            regularizer: true,
            wave: WaveConfig::default(),
            output_dir: PathBuf::from("runs"),
            log_every: 10,
            record_wall_time: false,
            stop_at_moving_average: None,
            theory: TheorySettings::default(),
        }
    }
}

/// Every key, in the order [`ExperimentConfig::to_text`] writes them.
pub const KEYS: &[(&str, &str)] = &[
    ("env", "pendulum | acrobot | nav2d"),
    ("episodes", "episodes per seed"),
    ("seeds", "comma-separated run seeds"),
    ("gamma", "discount, in [0, 1)"),
    ("batch_size", "minibatch size"),
    ("tau", "soft target update rate, in (0, 1]"),
    ("policy_delay", "critic updates per actor update"),
    ("target_policy_noise", "target smoothing noise, half action ranges"),
    ("target_noise_clip", "clip of the smoothing noise, half action ranges"),
    ("exploration_noise", "exploration noise, half action ranges"),
    ("warmup_steps", "uniform-action steps before learning"),
    ("actor_lr", "actor Adam step size"),
    ("critic_lr", "critic Adam step size"),
    ("buffer_capacity", "replay capacity"),
    ("hidden_dims", "comma-separated hidden widths"),
    ("regularizer", "on | off"),
    ("lambda_max", "largest penalty weight"),
    ("lambda_min", "smallest penalty weight"),
    ("alpha", "decay rate of the weight above the threshold"),
    ("r_threshold", "auto | a return"),
    ("window", "episodes in the moving average"),
    ("probe_size", "probe batch rows for the empirical Q distributions"),
    ("sinkhorn_epsilon", "entropic regularization"),
    ("sinkhorn_max_iter", "Sinkhorn iteration cap"),
    ("sinkhorn_tol", "marginal tolerance"),
    ("output_dir", "output root (overridden by WAVE_OUT, then --out)"),
    ("log_every", "episodes between progress lines"),
    ("record_wall_time", "true | false"),
    ("stop_at_moving_average", "none | stop a seed once its moving average reaches this"),
    ("theory_gamma", "discount of the random MDPs"),
    ("theory_states", "states per random MDP"),
    ("theory_actions", "actions per random MDP"),
    ("theory_mdps", "random MDPs in the contraction check"),
    ("theory_trials", "random pairs per MDP"),
    ("theory_lambdas", "comma-separated λ sweep"),
    ("rate_a", "step-size constant a in a/k"),
    ("rate_m", "strong convexity m"),
    ("rate_radius", "projection radius"),
    ("rate_noise", "gradient noise norm"),
    ("rate_dim", "parameter dimension"),
    ("rate_k_max", "SGD steps"),
    ("rate_seeds", "seeds averaged"),
    ("rate_seed", "base seed"),
    ("rate_log_points", "logged steps"),
    ("theory_variance", "true | false: run the paired update-variance experiment"),
    ("variance_window", "first,end critic update of the variance window"),
];

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse<T: FromStr>(key: &str, raw: &str, expected: &'static str) -> Result<T, ConfigError> {
    raw.parse().map_err(|_| ConfigError::Type {
        key: key.into(),
        value: raw.into(),
        expected,
    })
}

fn parse_list<T: FromStr>(key: &str, raw: &str, expected: &'static str) -> Result<Vec<T>, ConfigError> {
    raw.split(',').map(|s| parse(key, s.trim(), expected)).collect()
}

fn parse_bool(key: &str, raw: &str) -> Result<bool, ConfigError> {
    match raw {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(ConfigError::Type {
            key: key.into(),
            value: raw.into(),
            expected: "a boolean (true/false, on/off)",
        }),
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn sinkhorn(&self) -> &SinkhornConfig {
        &self.wave.sinkhorn
    }

    /// The regularizer settings, or `None` for plain TD3.
    pub fn wave_arm(&self) -> Option<&WaveConfig> {
        self.regularizer.then_some(&self.wave)
    }

    pub fn get(&self, key: &str) -> Result<String, ConfigError> {
        let t = &self.td3;
        let w = &self.wave;
        let th = &self.theory;
        Ok(match key {
            "env" => self.env.name().into(),
            "episodes" => self.episodes.to_string(),
            "seeds" => list(&self.seeds),
            "gamma" => t.gamma.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "tau" => t.tau.to_string(),
            "policy_delay" => t.policy_delay.to_string(),
            "target_policy_noise" => t.target_policy_noise.to_string(),
            "target_noise_clip" => t.target_noise_clip.to_string(),
            "exploration_noise" => t.exploration_noise.to_string(),
            "warmup_steps" => t.warmup_steps.to_string(),
            "actor_lr" => t.actor_lr.to_string(),
            "critic_lr" => t.critic_lr.to_string(),
            "buffer_capacity" => t.buffer_capacity.to_string(),
            "hidden_dims" => list(&t.hidden_dims),
            "regularizer" => if self.regularizer { "on" } else { "off" }.into(),
            "lambda_max" => w.lambda_max.to_string(),
            "lambda_min" => w.lambda_min.to_string(),
            "alpha" => w.alpha.to_string(),
            "r_threshold" => match w.r_threshold {
                RThreshold::Auto => "auto".into(),
                RThreshold::Fixed(v) => v.to_string(),
            },
            "window" => w.window.to_string(),
            "probe_size" => w.probe_size.to_string(),
            "sinkhorn_epsilon" => w.sinkhorn.epsilon.to_string(),
            "sinkhorn_max_iter" => w.sinkhorn.max_iter.to_string(),
            "sinkhorn_tol" => w.sinkhorn.tol.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "log_every" => self.log_every.to_string(),
            "record_wall_time" => self.record_wall_time.to_string(),
            "stop_at_moving_average" => match self.stop_at_moving_average {
                None => "none".into(),
                Some(v) => v.to_string(),
            },
            "theory_gamma" => th.gamma.to_string(),
            "theory_states" => th.n_states.to_string(),
            "theory_actions" => th.n_actions.to_string(),
            "theory_mdps" => th.mdps.to_string(),
            "theory_trials" => th.trials.to_string(),
            "theory_lambdas" => list(&th.lambdas),
            "rate_a" => th.rate.a.to_string(),
            "rate_m" => th.rate.m.to_string(),
            "rate_radius" => th.rate.radius.to_string(),
            "rate_noise" => th.rate.noise.to_string(),
            "rate_dim" => th.rate.dim.to_string(),
            "rate_k_max" => th.rate.k_max.to_string(),
            "rate_seeds" => th.rate.seeds.to_string(),
            "rate_seed" => th.rate.seed.to_string(),
            "rate_log_points" => th.rate.log_points.to_string(),
            "theory_variance" => th.variance.to_string(),
            "variance_window" => format!("{},{}", th.variance_window.0, th.variance_window.1),
            other => return Err(ConfigError::UnknownKey(other.into())),
        })
    }

    /// Assigns one key from its text form. Range checks happen in
    /// [`validate`](Self::validate).
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        const F: &str = "a number";
        const U: &str = "a non-negative integer";
        let raw = raw.trim();
        let t = &mut self.td3;
        let w = &mut self.wave;
        let th = &mut self.theory;
        match key {
            "env" => self.env = raw.parse().map_err(|_| ConfigError::Type {
                key: key.into(),
                value: raw.into(),
                expected: "one of pendulum, acrobot, nav2d",
            })?,
            "episodes" => self.episodes = parse(key, raw, U)?,
            "seeds" => self.seeds = parse_list(key, raw, "a list of integer seeds")?,
            "gamma" => t.gamma = parse(key, raw, F)?,
            "batch_size" => t.batch_size = parse(key, raw, U)?,
            "tau" => t.tau = parse(key, raw, F)?,
            "policy_delay" => t.policy_delay = parse(key, raw, U)?,
            "target_policy_noise" => t.target_policy_noise = parse(key, raw, F)?,
            "target_noise_clip" => t.target_noise_clip = parse(key, raw, F)?,
            "exploration_noise" => t.exploration_noise = parse(key, raw, F)?,
            "warmup_steps" => t.warmup_steps = parse(key, raw, U)?,
            "actor_lr" => t.actor_lr = parse(key, raw, F)?,
            "critic_lr" => t.critic_lr = parse(key, raw, F)?,
            "buffer_capacity" => t.buffer_capacity = parse(key, raw, U)?,
            "hidden_dims" => t.hidden_dims = parse_list(key, raw, "a list of layer widths")?,
            "regularizer" => self.regularizer = parse_bool(key, raw)?,
            "lambda_max" => w.lambda_max = parse(key, raw, F)?,
            "lambda_min" => w.lambda_min = parse(key, raw, F)?,
            "alpha" => w.alpha = parse(key, raw, F)?,
            "r_threshold" => {
                w.r_threshold = if raw == "auto" {
                    RThreshold::Auto
                } else {
                    RThreshold::Fixed(parse(key, raw, "`auto` or a number")?)
                }
            }
            "window" => w.window = parse(key, raw, U)?,
            "probe_size" => w.probe_size = parse(key, raw, U)?,
            "sinkhorn_epsilon" => w.sinkhorn.epsilon = parse(key, raw, F)?,
            "sinkhorn_max_iter" => w.sinkhorn.max_iter = parse(key, raw, U)?,
            "sinkhorn_tol" => w.sinkhorn.tol = parse(key, raw, F)?,
            "output_dir" => self.output_dir = PathBuf::from(raw),
            "log_every" => self.log_every = parse(key, raw, U)?,
            "record_wall_time" => self.record_wall_time = parse_bool(key, raw)?,
            "stop_at_moving_average" => {
                self.stop_at_moving_average = if raw == "none" {
                    None
                } else {
                    Some(parse(key, raw, "`none` or a number")?)
                }
            }
            "theory_gamma" => th.gamma = parse(key, raw, F)?,
            "theory_states" => th.n_states = parse(key, raw, U)?,
            "theory_actions" => th.n_actions = parse(key, raw, U)?,
            "theory_mdps" => th.mdps = parse(key, raw, U)?,
            "theory_trials" => th.trials = parse(key, raw, U)?,
            "theory_lambdas" => th.lambdas = parse_list(key, raw, "a list of numbers")?,
            "rate_a" => th.rate.a = parse(key, raw, F)?,
            "rate_m" => th.rate.m = parse(key, raw, F)?,
            "rate_radius" => th.rate.radius = parse(key, raw, F)?,
            "rate_noise" => th.rate.noise = parse(key, raw, F)?,
            "rate_dim" => th.rate.dim = parse(key, raw, U)?,
            "rate_k_max" => th.rate.k_max = parse(key, raw, U)?,
            "rate_seeds" => th.rate.seeds = parse(key, raw, U)?,
            "rate_seed" => th.rate.seed = parse(key, raw, U)?,
            "rate_log_points" => th.rate.log_points = parse(key, raw, U)?,
            "theory_variance" => th.variance = parse_bool(key, raw)?,
            "variance_window" => {
                let v: Vec<usize> = parse_list(key, raw, "two update counts `start,end`")?;
                if v.len() != 2 {
                    return Err(invalid(key, "expected exactly two values `start,end`"));
                }
                th.variance_window = (v[0], v[1]);
            }
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Range and consistency checks, each naming the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.td3;
        let w = &self.wave;
        let th = &self.theory;
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("must be a positive number, got {v}")))
            }
        };
        let non_negative = |key: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("must be a non-negative number, got {v}")))
            }
        };
        let at_least_one = |key: &str, v: usize| {
            if v >= 1 {
                Ok(())
            } else {
                Err(invalid(key, "must be at least 1"))
            }
        };
        if !(0.0..1.0).contains(&t.gamma) {
            return Err(invalid("gamma", format!("must lie in [0, 1), got {}", t.gamma)));
        }
        if !(t.tau > 0.0 && t.tau <= 1.0) {
            return Err(invalid("tau", format!("must lie in (0, 1], got {}", t.tau)));
        }
        at_least_one("batch_size", t.batch_size)?;
        at_least_one("policy_delay", t.policy_delay)?;
        at_least_one("buffer_capacity", t.buffer_capacity)?;
        non_negative("target_policy_noise", t.target_policy_noise)?;
        non_negative("target_noise_clip", t.target_noise_clip)?;
        non_negative("exploration_noise", t.exploration_noise)?;
        positive("actor_lr", t.actor_lr)?;
        positive("critic_lr", t.critic_lr)?;
        if t.hidden_dims.is_empty() || t.hidden_dims.contains(&0) {
            return Err(invalid("hidden_dims", "needs at least one layer, each at least 1 wide"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "needs at least one seed"));
        }
        non_negative("lambda_min", w.lambda_min)?;
        non_negative("lambda_max", w.lambda_max)?;
        if w.lambda_min > w.lambda_max {
            return Err(invalid(
                "lambda_min",
                format!("must not exceed lambda_max ({} > {})", w.lambda_min, w.lambda_max),
            ));
        }
        positive("alpha", w.alpha)?;
        if let RThreshold::Fixed(v) = w.r_threshold {
            if !v.is_finite() {
                return Err(invalid("r_threshold", "must be `auto` or a finite number"));
            }
        }
        at_least_one("window", w.window)?;
        at_least_one("probe_size", w.probe_size)?;
        positive("sinkhorn_epsilon", w.sinkhorn.epsilon)?;
        at_least_one("sinkhorn_max_iter", w.sinkhorn.max_iter)?;
        positive("sinkhorn_tol", w.sinkhorn.tol)?;
        at_least_one("log_every", self.log_every)?;
        if let Some(v) = self.stop_at_moving_average {
            if !v.is_finite() {
                return Err(invalid("stop_at_moving_average", "must be `none` or a finite number"));
            }
        }
        if !(0.0..1.0).contains(&th.gamma) {
            return Err(invalid("theory_gamma", format!("must lie in [0, 1), got {}", th.gamma)));
        }
        at_least_one("theory_states", th.n_states)?;
        at_least_one("theory_actions", th.n_actions)?;
        at_least_one("theory_mdps", th.mdps)?;
        if th.trials < wave_core::theory::MIN_TRIALS {
            return Err(invalid("theory_trials", format!("must be at least {}", wave_core::theory::MIN_TRIALS)));
        }
        for &l in &th.lambdas {
            non_negative("theory_lambdas", l)?;
        }
        if !(th.rate.a * th.rate.m > 0.5) {
            return Err(invalid("rate_a", "rate_a · rate_m must exceed 1/2"));
        }
        positive("rate_m", th.rate.m)?;
        positive("rate_radius", th.rate.radius)?;
        non_negative("rate_noise", th.rate.noise)?;
        at_least_one("rate_dim", th.rate.dim)?;
        if th.rate.k_max < 10_000 {
            return Err(invalid("rate_k_max", "must be at least 10000"));
        }
        at_least_one("rate_seeds", th.rate.seeds)?;
        if th.rate.log_points < 2 {
            return Err(invalid("rate_log_points", "must be at least 2"));
        }
        if th.variance_window.0 >= th.variance_window.1 {
            return Err(invalid("variance_window", "start must be below end"));
        }
        // Whatever the per-key checks missed, the library will refuse.
        t.validate().map_err(|e| invalid("td3", e.to_string()))?;
        w.validate().map_err(|e| invalid("regularizer", e.to_string()))?;
        LambdaSchedule::new(w.lambda_max, w.lambda_min, w.alpha, 0.0, w.window)
            .map_err(|e| invalid("lambda_max", e.to_string()))?;
        Ok(())
    }

    /// Parses a document on top of the defaults, then validates.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: line.into(),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Defaults, then the file if any, then `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
                path: p.to_path_buf(),
                message: e.to_string(),
            })?;
            cfg.apply_str(&text)?;
        }
        for o in overrides {
            let (key, value) = o.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: 0,
                text: o.clone(),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its current value, one per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, help) in KEYS {
            let value = self.get(key).expect("every listed key is readable");
            let _ = writeln!(out, "# {help}\n{key} = {value}");
        }
        out
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .map(|(k, _)| (k.to_string(), self.get(k).expect("every listed key is readable")))
            .collect()
    }
}
